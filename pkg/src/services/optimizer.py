"""Adam optimizer and cosine learning-rate schedule"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core.config import TrainConfig
from ..core.errors import ConfigError, GradientError, ShapeError
from ..core.model import EmtParameters


@dataclass
class OptimizerState:
    """파라미터별 1차/2차 모멘트와 스텝 카운터"""
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: EmtParameters) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )

    def check_against(self, params: EmtParameters) -> None:
        if self.t < 0:
            raise ShapeError(f"optimizer step counter must be >= 0, got {self.t}")
        for name, p in params.items():
            for label, moments in (("m", self.m), ("v", self.v)):
                if name not in moments:
                    raise ShapeError(f"optimizer state missing {label} for parameter {name}")
                if moments[name].shape != p.shape:
                    raise ShapeError(
                        f"optimizer {label} for {name} has shape {moments[name].shape}, parameter has {p.shape}"
                    )


def collect_grads(params: EmtParameters) -> dict[str, Optional[np.ndarray]]:
    return {name: p.grad for name, p in params.items()}


def adam_step(
    params: EmtParameters,
    grads: Mapping[str, Optional[np.ndarray]],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """bias 보정 Adam 한 스텝 (파라미터는 새 텐서로 교체)"""
    missing = [name for name in params if grads.get(name) is None]
    if missing:
        raise GradientError(f"parameter {missing[0]} has no gradient")

    state.t += 1
    t = state.t
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, p in list(params.items()):
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        params.replace(name, (p.data - update).astype(p.data.dtype, copy=False))


def cosine_lr(t: int, cfg: TrainConfig) -> float:
    """lr_min + (lr_init - lr_min) * (1 + cos(pi * t / T)) / 2"""
    if not 0 <= t <= cfg.total_iters:
        raise ConfigError(f"schedule step {t} outside 0..{cfg.total_iters}")
    cosine = 0.5 * (1.0 + math.cos(math.pi * t / cfg.total_iters))
    return cfg.lr_min + (cfg.lr_init - cfg.lr_min) * cosine
