"""Command handlers for the emt CLI"""

from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import Optional

from ..core.accounting import count_flops, count_params, ledger, summarize
from ..core.config import AnalysisConfig, ModelConfig
from ..core.config_file import RunConfigFile
from ..core.errors import ConfigError, EmtError
from ..data.dataset import SrDataset
from ..data.images import load_png, save_png
from ..services.analysis import (
    AnalysisMetadata, cka_heatmap, cka_summary, mad_summary, mad_table, write_cka_csv, write_mad_csv,
)
from ..services.checkpoint import load_checkpoint
from ..services.evaluation import Upscaler, evaluate
from ..services.registry import RunRegistry
from ..services.training import Trainer

logger = logging.getLogger(__name__)


def cmd_train(args: argparse.Namespace) -> int:
    run_cfg = RunConfigFile.load(args.config)
    train_cfg = run_cfg.training
    if args.seed is not None:
        train_cfg = train_cfg.with_(seed=args.seed).validate()
    root = args.dataset or run_cfg.data.root
    if root is None:
        raise ConfigError("no dataset: set [data] root or pass --dataset")
    output_dir = args.out or run_cfg.data.output_dir

    dataset = SrDataset.from_directory(root, run_cfg.model.scale)
    if args.resume is not None:
        trainer = Trainer.resume(args.resume, dataset, output_dir, train_cfg, args.workers)
        if trainer.model.cfg != run_cfg.model:
            logger.warning("config [model] differs from the checkpoint; continuing with the checkpoint's model")
    else:
        trainer = Trainer.create(run_cfg.model, train_cfg, dataset, output_dir, args.workers)

    registry = None if args.no_registry else RunRegistry()
    run_id = None
    if registry is not None:
        run_id = registry.start_run(
            trainer.model.cfg, trainer.cfg, output_dir, root, args.config, trainer.iteration
        )
    try:
        result = trainer.run()
    except EmtError as e:
        if registry is not None:
            registry.fail_run(run_id, str(e), trainer.iteration)
        raise
    if registry is not None:
        registry.finish_run(run_id, result.final_iteration, result.final_loss)

    last = f"{result.final_loss:.6f}" if result.final_loss is not None else "n/a"
    print(f"trained iterations {result.start_iteration + 1}..{result.final_iteration}, final loss {last}")
    for path in result.checkpoints:
        print(f"checkpoint: {path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    upscaler = Upscaler.load(args.model, args.scale)
    dataset = SrDataset.from_directory(args.dataset, args.scale)
    report = evaluate(upscaler, dataset)
    print(report.format_table())
    if args.json is not None:
        report.write_json(args.json)
    if not args.no_registry:
        RunRegistry().record_evaluation(report)
    return 0


def cmd_sr(args: argparse.Namespace) -> int:
    upscaler = Upscaler.load(args.model, args.scale)
    lr = load_png(args.input)
    sr = upscaler.upscale(lr)
    save_png(sr, args.output)
    print(f"wrote {args.output} ({sr.width}x{sr.height})")
    return 0


def _analysis_config(args: argparse.Namespace) -> AnalysisConfig:
    cfg = RunConfigFile.load(args.config).analysis if args.config else AnalysisConfig()
    overrides = {
        "patch_size": args.patch_size,
        "num_patches": args.num_patches,
        "batch_size": args.batch_size,
        "seed": args.seed,
    }
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None}).validate()


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _analysis_config(args)
    model = load_checkpoint(args.model).build_model()
    dataset = SrDataset.from_directory(args.dataset, model.cfg.scale)
    patches = dataset.lr_patches(cfg.patch_size, cfg.num_patches, cfg.seed)
    out: Path = args.out

    if args.analysis == "cka":
        result = cka_heatmap(model, patches, cfg.batch_size)
        write_cka_csv(result, out / "cka.csv")
        summary = cka_summary(result)
        layer_ids = result.layer_ids
    else:
        rows = mad_table(model, patches, cfg.batch_size)
        write_mad_csv(rows, out / "mad.csv")
        summary = mad_summary(rows)
        layer_ids = list(dict.fromkeys(r.layer_id for r in rows))

    (out / "summary.txt").write_text(summary, encoding="utf-8")
    AnalysisMetadata.build(args.analysis, str(args.model), args.dataset, cfg, model, layer_ids).write(
        out / "metadata.json"
    )
    print(summary, end="")
    return 0


def _info_config(args: argparse.Namespace) -> ModelConfig:
    if args.config is not None:
        cfg = RunConfigFile.load(args.config).model
        if args.scale is not None and args.scale != cfg.scale:
            cfg = cfg.with_(scale=args.scale)
        return cfg.validate()
    if args.preset == "paper":
        return ModelConfig.paper(args.scale or 4)
    return ModelConfig.tiny(args.scale or 2)


def cmd_info(args: argparse.Namespace) -> int:
    cfg = _info_config(args)
    print(f"scale: x{cfg.scale}  channels: {cfg.channels}  MTBs: {cfg.num_mtb} x {cfg.layers_per_mtb} layers")
    print(f"layer schedule: {' '.join(cfg.layer_schedule())}")
    print(f"params: {count_params(cfg)}")
    h, w = args.flops if args.flops else (1, 1)
    rows = ledger(cfg, h, w)
    if args.flops:
        flops = count_flops(cfg, h, w)
        print(f"flops @ {h}x{w}: {flops} ({flops / 2:.0f} multiply-accumulates)")
    if args.ledger:
        print(f"{'component':<22} {'kind':<9} {'params':>10} {'flops':>16}")
        for row in rows:
            print(f"{row.component:<22} {row.kind:<9} {row.params:>10} {row.flops:>16}")
        for kind, (p, f) in summarize(rows).items():
            print(f"{'total ' + kind:<22} {kind:<9} {p:>10} {f:>16}")
    return 0


def cmd_runs(args: argparse.Namespace) -> int:
    runs = RunRegistry().recent_runs(args.limit)
    if not runs:
        print("no recorded runs")
        return 0
    for run in runs:
        loss = f"{run.final_loss:.6f}" if run.final_loss is not None else "-"
        print(f"{run.id:>4}  {run.status:<8}  x{run.scale}  seed {run.seed:<4}  iters {run.iterations:<8}  "
              f"loss {loss:<10}  {run.started_at:%Y-%m-%d %H:%M}  {run.output_dir}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sr": cmd_sr,
    "analyze": cmd_analyze,
    "info": cmd_info,
    "runs": cmd_runs,
}


def dispatch(args: argparse.Namespace) -> Optional[int]:
    return COMMANDS[args.command](args)
