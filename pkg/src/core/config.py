"""Configuration types for EMT"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError
from .tensor import DType

PM_GROUPS = 5


@dataclass(frozen=True)
class WindowSpec:
    """SWSA 줄무늬 창 크기 (픽셀)"""
    h: int
    w: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ConfigError(f"window extents must be >= 1, got {self.h}x{self.w}")

    @property
    def area(self) -> int:
        return self.h * self.w

    @property
    def diagonal(self) -> float:
        return math.hypot(self.h - 1, self.w - 1)

    def transposed(self) -> "WindowSpec":
        return WindowSpec(self.w, self.h)

    def __str__(self) -> str:
        return f"{self.h}x{self.w}"

    @classmethod
    def parse(cls, text: str) -> "WindowSpec":
        try:
            h, w = text.lower().split("x")
            return cls(int(h), int(w))
        except ValueError:
            raise ConfigError(f"invalid window {text!r} (expected HxW)") from None


@dataclass(frozen=True)
class ShiftRule:
    """Pixel Mixer 그룹별 순환 이동량"""
    dh: int
    dw: int

    def inverse(self) -> "ShiftRule":
        return ShiftRule(-self.dh, -self.dw)


# 그룹 0..4 순서: 위, 오른쪽, 왼쪽, 아래, 고정
BASE_SHIFT_RULES = (ShiftRule(-1, 0), ShiftRule(0, 1), ShiftRule(0, -1), ShiftRule(1, 0), ShiftRule(0, 0))


@dataclass(frozen=True)
class ModelConfig:
    """EMT 구조 하이퍼파라미터"""
    channels: int = 60
    num_mtb: int = 6
    layers_per_mtb: int = 6
    gtl_count: int = 2
    heads: int = 3
    windows: tuple[WindowSpec, WindowSpec] = (WindowSpec(32, 8), WindowSpec(8, 32))
    scale: int = 4
    mlp_ratio: Fraction = Fraction(2)
    shift_step: int = 1
    shift_fraction: Fraction = Fraction(1, 5)
    in_channels: int = 3
    mtb_conv: bool = True
    out_proj: bool = True
    ltl_mixer: str = "pixel_mixer"
    gtl_positions: Optional[tuple[int, ...]] = None
    norm_eps: float = 1e-5

    @classmethod
    def paper(cls, scale: int = 4) -> "ModelConfig":
        """논문 기본값 (블록 conv 없음, 파라미터 수 검증용)"""
        return cls(scale=scale, mtb_conv=False)

    @classmethod
    def tiny(cls, scale: int = 2) -> "ModelConfig":
        """데스크 규모 프로파일"""
        return cls(
            channels=20, num_mtb=2, heads=2,
            windows=(WindowSpec(8, 2), WindowSpec(2, 8)), scale=scale,
        )

    @property
    def half_channels(self) -> int:
        return self.channels // 2

    @property
    def head_dim(self) -> int:
        return self.half_channels // self.heads

    @property
    def hidden_channels(self) -> int:
        hidden = self.mlp_ratio * self.channels
        if hidden.denominator != 1:
            raise ConfigError(f"mlp_ratio {self.mlp_ratio} * channels {self.channels} is not integral")
        return int(hidden)

    @property
    def shift_rules(self) -> tuple[ShiftRule, ...]:
        n = self.shift_step
        return tuple(ShiftRule(r.dh * n, r.dw * n) for r in BASE_SHIFT_RULES)

    @property
    def pad_multiple(self) -> tuple[int, int]:
        """창 분할이 가능하도록 맞춰야 하는 (H, W) 배수"""
        return (
            math.lcm(*(w.h for w in self.windows)),
            math.lcm(*(w.w for w in self.windows)),
        )

    def layer_schedule(self) -> tuple[str, ...]:
        """MTB 내부 레이어 종류 ("gtl" / "ltl") 순서"""
        positions = set(self.resolved_gtl_positions())
        return tuple("gtl" if i in positions else "ltl" for i in range(self.layers_per_mtb))

    def resolved_gtl_positions(self) -> tuple[int, ...]:
        if self.gtl_positions is not None:
            return tuple(self.gtl_positions)
        n, g = self.layers_per_mtb, self.gtl_count
        return tuple(((2 * i + 1) * n) // (2 * g) for i in range(g))

    def validate(self) -> "ModelConfig":
        if min(self.channels, self.num_mtb, self.layers_per_mtb, self.heads, self.in_channels) < 1:
            raise ConfigError("channels, num_mtb, layers_per_mtb, heads, in_channels must be >= 1")
        if self.channels % PM_GROUPS:
            raise ConfigError(f"channels={self.channels} must be divisible by {PM_GROUPS} (pixel mixer groups)")
        if self.channels % 2:
            raise ConfigError(f"channels={self.channels} must be even (SWSA channel halves)")
        if self.half_channels % self.heads:
            raise ConfigError(f"channels/2={self.half_channels} must be divisible by heads={self.heads}")
        if not 0 <= self.gtl_count <= self.layers_per_mtb:
            raise ConfigError(f"gtl_count={self.gtl_count} must be within 0..{self.layers_per_mtb}")
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale={self.scale} must be one of 2, 3, 4")
        if len(self.windows) != 2:
            raise ConfigError("exactly two SWSA windows are required")
        if self.windows[1] != self.windows[0].transposed():
            raise ConfigError(f"windows {self.windows[0]} and {self.windows[1]} are not mutually perpendicular")
        if self.shift_fraction != Fraction(1, PM_GROUPS):
            raise ConfigError(f"shift_fraction must be 1/{PM_GROUPS}, got {self.shift_fraction}")
        if self.shift_step < 0:
            raise ConfigError("shift_step must be >= 0")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")
        _ = self.hidden_channels
        if self.ltl_mixer not in ("pixel_mixer", "identity"):
            raise ConfigError(f"ltl_mixer must be pixel_mixer or identity, got {self.ltl_mixer!r}")
        positions = self.resolved_gtl_positions()
        if len(positions) != self.gtl_count or len(set(positions)) != len(positions):
            raise ConfigError(f"gtl_positions {positions} must list {self.gtl_count} distinct layers")
        if any(not 0 <= p < self.layers_per_mtb for p in positions):
            raise ConfigError(f"gtl_positions {positions} out of range 0..{self.layers_per_mtb - 1}")
        return self

    def with_(self, **changes: Any) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        """직렬화용 평탄 딕셔너리 (모든 값이 문자열)"""
        return {
            "channels": str(self.channels),
            "num_mtb": str(self.num_mtb),
            "layers_per_mtb": str(self.layers_per_mtb),
            "gtl_count": str(self.gtl_count),
            "heads": str(self.heads),
            "windows": ", ".join(str(w) for w in self.windows),
            "scale": str(self.scale),
            "mlp_ratio": str(self.mlp_ratio),
            "shift_step": str(self.shift_step),
            "shift_fraction": str(self.shift_fraction),
            "in_channels": str(self.in_channels),
            "mtb_conv": "on" if self.mtb_conv else "off",
            "out_proj": "on" if self.out_proj else "off",
            "ltl_mixer": self.ltl_mixer,
            "gtl_positions": "auto" if self.gtl_positions is None
            else ", ".join(str(p) for p in self.gtl_positions),
            "norm_eps": repr(self.norm_eps),
        }


@dataclass(frozen=True)
class TrainConfig:
    """학습 하이퍼파라미터"""
    batch_size: int = 64
    patch_lr: int = 64
    total_iters: int = 1_000_000
    lr_init: float = 5e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 5000
    log_every: int = 100
    dtype: DType = DType.F32
    init_std: float = 0.02

    @classmethod
    def paper(cls) -> "TrainConfig":
        return cls()

    @classmethod
    def desk(cls) -> "TrainConfig":
        return cls(
            batch_size=8, patch_lr=32, total_iters=2000,
            lr_init=1e-3, checkpoint_every=500, log_every=50,
        )

    def validate(self) -> "TrainConfig":
        if min(self.batch_size, self.patch_lr, self.total_iters, self.checkpoint_every, self.log_every) < 1:
            raise ConfigError("batch_size, patch_lr, total_iters, checkpoint_every, log_every must be >= 1")
        if self.lr_init < 0 or self.lr_min < 0 or self.lr_min > self.lr_init:
            raise ConfigError(f"need 0 <= lr_min <= lr_init, got {self.lr_min} / {self.lr_init}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.eps_adam <= 0:
            raise ConfigError("eps_adam must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return self

    def with_(self, **changes: Any) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, str]:
        out = {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self).items()}
        out["dtype"] = self.dtype.value
        return out


@dataclass(frozen=True)
class DataConfig:
    """데이터셋 위치"""
    root: Optional[Path] = None
    output_dir: Path = Path("runs")


@dataclass(frozen=True)
class AnalysisConfig:
    """CKA / MAD 분석 설정"""
    patch_size: int = 64
    num_patches: int = 288
    batch_size: int = 8
    seed: int = 0

    def validate(self) -> "AnalysisConfig":
        if min(self.patch_size, self.num_patches, self.batch_size) < 1:
            raise ConfigError("analysis patch_size, num_patches, batch_size must be >= 1")
        if self.num_patches < 2:
            raise ConfigError("CKA needs at least 2 patches")
        if self.seed < 0:
            raise ConfigError("analysis seed must be a non-negative integer")
        return self


@dataclass
class RunConfig:
    """설정 파일 하나에 대응하는 전체 실행 설정"""
    model: ModelConfig = field(default_factory=ModelConfig.tiny)
    training: TrainConfig = field(default_factory=TrainConfig.desk)
    data: DataConfig = field(default_factory=DataConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    source: Optional[Path] = None
