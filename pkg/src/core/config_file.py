"""Run configuration file parser for EMT

형식:
    # 주석
    [model]
    preset = tiny
    channels = 20
    windows = 8x2, 2x8
    [training]
    lr_init = 1e-3

알 수 없는 섹션/키, 중복 키, 잘못된 값은 줄 번호와 함께 ConfigError.
경로 값은 설정 파일이 있는 디렉토리 기준으로 해석한다.
"""

import re
from dataclasses import replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Optional

from .config import (
    AnalysisConfig, DataConfig, ModelConfig, RunConfig, TrainConfig, WindowSpec
)
from .errors import ConfigError
from .tensor import DType


def parse_int(text: str) -> int:
    return int(text)


def parse_float(text: str) -> float:
    return float(text)


def parse_switch(text: str) -> bool:
    value = text.lower()
    if value in ("on", "true", "yes", "1"):
        return True
    if value in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def parse_fraction(text: str) -> Fraction:
    return Fraction(text)


def parse_windows(text: str) -> tuple[WindowSpec, ...]:
    return tuple(WindowSpec.parse(part.strip()) for part in text.split(",") if part.strip())


def parse_positions(text: str) -> Optional[tuple[int, ...]]:
    if text.lower() == "auto":
        return None
    return tuple(int(p) for p in text.split(",") if p.strip())


def parse_choice(*choices: str) -> Callable[[str], str]:
    def parser(text: str) -> str:
        if text not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}, got {text!r}")
        return text
    return parser


MODEL_KEYS: dict[str, Callable[[str], Any]] = {
    "preset": parse_choice("paper", "tiny"),
    "channels": parse_int,
    "num_mtb": parse_int,
    "layers_per_mtb": parse_int,
    "gtl_count": parse_int,
    "heads": parse_int,
    "windows": parse_windows,
    "scale": parse_int,
    "mlp_ratio": parse_fraction,
    "shift_step": parse_int,
    "shift_fraction": parse_fraction,
    "in_channels": parse_int,
    "mtb_conv": parse_switch,
    "out_proj": parse_switch,
    "ltl_mixer": parse_choice("pixel_mixer", "identity"),
    "gtl_positions": parse_positions,
    "norm_eps": parse_float,
}

TRAINING_KEYS: dict[str, Callable[[str], Any]] = {
    "preset": parse_choice("paper", "desk"),
    "batch_size": parse_int,
    "patch_lr": parse_int,
    "total_iters": parse_int,
    "lr_init": parse_float,
    "lr_min": parse_float,
    "beta1": parse_float,
    "beta2": parse_float,
    "eps_adam": parse_float,
    "seed": parse_int,
    "checkpoint_every": parse_int,
    "log_every": parse_int,
    "dtype": lambda text: DType(parse_choice("f32", "f64")(text)),
    "init_std": parse_float,
}

DATA_KEYS: dict[str, Callable[[str], Any]] = {
    "root": Path,
    "output_dir": Path,
}

ANALYSIS_KEYS: dict[str, Callable[[str], Any]] = {
    "patch_size": parse_int,
    "num_patches": parse_int,
    "batch_size": parse_int,
    "seed": parse_int,
}

SECTIONS = {
    "model": MODEL_KEYS,
    "training": TRAINING_KEYS,
    "data": DATA_KEYS,
    "analysis": ANALYSIS_KEYS,
}


def build_model_config(values: dict[str, Any]) -> ModelConfig:
    values = dict(values)
    preset = values.pop("preset", None)
    scale = values.get("scale", 4 if preset == "paper" else 2)
    base = ModelConfig.paper(scale) if preset == "paper" else ModelConfig.tiny(scale)
    return replace(base, **values).validate()


def build_train_config(values: dict[str, Any]) -> TrainConfig:
    values = dict(values)
    preset = values.pop("preset", None)
    base = TrainConfig.paper() if preset == "paper" else TrainConfig.desk()
    return replace(base, **values).validate()


class RunConfigFile:
    """key = value 설정 파일 로더"""

    SECTION_PATTERN = re.compile(r'^\[\s*([A-Za-z_]\w*)\s*\]$')
    ENTRY_PATTERN = re.compile(r'^([A-Za-z_]\w*)\s*=\s*(.*)$')

    def __init__(self, path: Path):
        self.path = Path(path)

    @classmethod
    def load(cls, path: Path) -> RunConfig:
        loader = cls(path)
        try:
            text = loader.path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {loader.path}: {e.strerror}") from None
        return loader.parse(text)

    def parse(self, text: str) -> RunConfig:
        """텍스트를 섹션별 값으로 파싱한 뒤 설정 객체 생성"""
        values: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
        section: Optional[str] = None

        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue

            match = self.SECTION_PATTERN.match(line)
            if match:
                section = match.group(1)
                if section not in SECTIONS:
                    raise ConfigError(f"unknown section [{section}]", line=lineno)
                continue

            match = self.ENTRY_PATTERN.match(line)
            if not match:
                raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
            if section is None:
                raise ConfigError("entry outside of a [section]", line=lineno)

            key, raw_value = match.group(1), match.group(2).strip()
            parsers = SECTIONS[section]
            if key not in parsers:
                raise ConfigError(f"unknown key '{key}' in [{section}]", line=lineno)
            if key in values[section]:
                raise ConfigError(f"duplicate key '{key}' in [{section}]", line=lineno)
            try:
                values[section][key] = parsers[key](raw_value)
            except (ValueError, ZeroDivisionError, ConfigError) as e:
                raise ConfigError(f"invalid value for '{key}': {e}", line=lineno) from None

        return self._build(values)

    def _build(self, values: dict[str, dict[str, Any]]) -> RunConfig:
        base_dir = self.path.parent
        data = {k: self._resolve(v, base_dir) for k, v in values["data"].items()}
        try:
            return RunConfig(
                model=build_model_config(values["model"]),
                training=build_train_config(values["training"]),
                data=DataConfig(**{"output_dir": (base_dir / "runs").resolve(), **data}),
                analysis=AnalysisConfig(**values["analysis"]).validate(),
                source=self.path,
            )
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @staticmethod
    def _resolve(path: Path, base_dir: Path) -> Path:
        return path if path.is_absolute() else (base_dir / path).resolve()
