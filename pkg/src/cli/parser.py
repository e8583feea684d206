"""Argument parser for the emt command"""

import argparse
from pathlib import Path

from ..core.config import WindowSpec
from ..core.errors import ConfigError


def parse_resolution(text: str) -> tuple[int, int]:
    """"HxW" -> (h, w)"""
    try:
        spec = WindowSpec.parse(text)
    except ConfigError:
        raise argparse.ArgumentTypeError(f"invalid resolution {text!r} (expected HxW)") from None
    return spec.h, spec.w


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def scale_arg(text: str) -> int:
    value = int(text)
    if value not in (2, 3, 4):
        raise argparse.ArgumentTypeError(f"scale must be 2, 3 or 4, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emt",
        description="Efficient Mixed Transformer super-resolution toolkit",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: $EMT_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    # train
    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", type=Path, required=True, help="run config file")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.add_argument("--seed", type=int, help="override [training] seed")
    p.add_argument("--dataset", type=Path, help="override [data] root")
    p.add_argument("--out", type=Path, help="override [data] output_dir")
    p.add_argument("--workers", type=positive_int, help="data worker threads (default: $EMT_THREADS)")
    p.add_argument("--no-registry", action="store_true", help="do not record the run")

    # eval
    p = sub.add_parser("eval", help="PSNR/SSIM (Y channel) over a dataset directory")
    p.add_argument("--model", required=True, help="checkpoint path or 'bicubic'")
    p.add_argument("--dataset", type=Path, required=True, help="directory with HR/ (and optional LR/X{r}/)")
    p.add_argument("--scale", type=scale_arg, required=True)
    p.add_argument("--json", type=Path, help="also write the report as JSON")
    p.add_argument("--no-registry", action="store_true", help="do not record the results")

    # sr
    p = sub.add_parser("sr", help="super-resolve one PNG")
    p.add_argument("--model", required=True, help="checkpoint path or 'bicubic'")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--scale", type=scale_arg, help="must match the checkpoint")

    # analyze
    p = sub.add_parser("analyze", help="layer CKA heatmap or mean attention distance")
    p.add_argument("analysis", choices=["cka", "mad"])
    p.add_argument("--model", type=Path, required=True, help="checkpoint path")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--config", type=Path, help="run config whose [analysis] section is used")
    p.add_argument("--patch-size", type=positive_int)
    p.add_argument("--num-patches", type=positive_int)
    p.add_argument("--batch-size", type=positive_int)
    p.add_argument("--seed", type=int)

    # info
    p = sub.add_parser("info", help="parameter and FLOP accounting")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="run config file")
    src.add_argument("--preset", choices=["paper", "tiny"], help="built-in model preset")
    p.add_argument("--scale", type=scale_arg, help="scale for --preset (default: paper x4, tiny x2)")
    p.add_argument("--flops", type=parse_resolution, metavar="HxW", help="LR resolution for FLOP counting")
    p.add_argument("--ledger", action="store_true", help="print the per-component ledger")

    # runs
    p = sub.add_parser("runs", help="list recent training runs from the registry")
    p.add_argument("--limit", type=positive_int, default=10)

    return parser
