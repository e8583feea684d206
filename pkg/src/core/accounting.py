"""Parameter and FLOP accounting for EMT

FLOP은 conv / linear / 어텐션 행렬곱의 multiply-accumulate 수 x 2 로 센다.
LayerNorm, GELU, softmax, 잔차 덧셈은 포함하지 않으며 Pixel Mixer는 0이다.
"""

import math
from dataclasses import dataclass

from .config import ModelConfig
from .errors import ConfigError
from .model import parameter_shapes


@dataclass(frozen=True)
class LedgerRow:
    """구성 요소별 파라미터/FLOP 한 줄"""
    component: str
    kind: str  # sfeu, gtl, ltl, pm, mtb_conv, recu
    params: int
    flops: int


def _padded(h: int, w: int, cfg: ModelConfig) -> tuple[int, int]:
    mh, mw = cfg.pad_multiple
    return math.ceil(h / mh) * mh, math.ceil(w / mw) * mw


def _params_with_prefix(shapes: dict[str, tuple[int, ...]], prefix: str) -> int:
    return sum(math.prod(s) for name, s in shapes.items() if name.startswith(prefix))


def ledger(cfg: ModelConfig, h: int = 1, w: int = 1) -> list[LedgerRow]:
    """LR 입력 h x w 기준 구성 요소별 장부"""
    cfg.validate()
    shapes = parameter_shapes(cfg)
    c, half, hid = cfg.channels, cfg.half_channels, cfg.hidden_channels
    hp, wp = _padded(h, w, cfg)
    lr_px, feat_px = h * w, hp * wp
    mlp_macs = feat_px * (c * hid + hid * c)

    rows = [LedgerRow("sfeu", "sfeu", _params_with_prefix(shapes, "sfeu."), 2 * lr_px * c * cfg.in_channels * 9)]
    for i in range(cfg.num_mtb):
        for j, kind in enumerate(cfg.layer_schedule()):
            name = f"mtb{i}.layer{j}"
            params = _params_with_prefix(shapes, name + ".")
            if kind == "gtl":
                macs = feat_px * 4 * half * half  # q/v 사영, 절반 2개
                if cfg.out_proj:
                    macs += feat_px * c * c
                for win in cfg.windows:
                    # 창마다 Q^T Q 와 A V: 2 * L^2 * d * heads = 2 * L * half (픽셀당)
                    macs += feat_px * 2 * win.area * half
                rows.append(LedgerRow(name, "gtl", params, 2 * (macs + mlp_macs)))
            else:
                if cfg.ltl_mixer == "pixel_mixer":
                    rows.append(LedgerRow(f"{name}.pm", "pm", 0, 0))
                rows.append(LedgerRow(name, "ltl", params, 2 * mlp_macs))
        if cfg.mtb_conv:
            rows.append(LedgerRow(
                f"mtb{i}.conv", "mtb_conv", _params_with_prefix(shapes, f"mtb{i}.conv."), 2 * feat_px * c * c * 9
            ))
    out = cfg.in_channels * cfg.scale * cfg.scale
    rows.append(LedgerRow("recu", "recu", _params_with_prefix(shapes, "recu."), 2 * feat_px * out * c * 9))
    return rows


def count_params(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for s in parameter_shapes(cfg.validate()).values())


def count_flops(cfg: ModelConfig, h: int, w: int) -> int:
    if h < 1 or w < 1:
        raise ConfigError(f"flops resolution must be positive, got {h}x{w}")
    return sum(row.flops for row in ledger(cfg, h, w))


def summarize(rows: list[LedgerRow]) -> dict[str, tuple[int, int]]:
    """kind 별 (params, flops) 합계"""
    out: dict[str, tuple[int, int]] = {}
    for row in rows:
        p, f = out.get(row.kind, (0, 0))
        out[row.kind] = (p + row.params, f + row.flops)
    return out
