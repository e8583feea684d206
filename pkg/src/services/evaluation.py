"""Evaluation and inference for EMT models"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import orjson

from ..core.errors import ConfigError, DatasetError
from ..core.model import EmtModel
from ..data.dataset import SrDataset
from ..data.images import ImageRGB, bicubic_resize, quantize
from .checkpoint import load_checkpoint
from .metrics import psnr_y, ssim_y

logger = logging.getLogger(__name__)

BICUBIC = "bicubic"


class Upscaler:
    """LR 이미지를 r배 확대하는 객체 (EMT 또는 bicubic 기준선)"""

    def __init__(self, scale: int, model: Optional[EmtModel] = None, name: str = BICUBIC):
        self.scale = scale
        self.model = model
        self.name = name

    @classmethod
    def load(cls, source: str | Path, scale: Optional[int] = None) -> "Upscaler":
        """source: 체크포인트 경로 또는 "bicubic" """
        if str(source) == BICUBIC:
            if scale is None:
                raise ConfigError("the bicubic baseline needs an explicit --scale")
            return cls(scale)
        model = load_checkpoint(Path(source)).build_model()
        if scale is not None and scale != model.cfg.scale:
            raise ConfigError(f"checkpoint {source} is a x{model.cfg.scale} model, --scale is x{scale}")
        return cls(model.cfg.scale, model, str(source))

    @property
    def params(self) -> int:
        return self.model.params.count() if self.model is not None else 0

    def upscale(self, lr: ImageRGB) -> ImageRGB:
        """출력은 8비트로 양자화한 값 (PNG로 저장되는 값과 같다)"""
        if self.model is None:
            out = bicubic_resize(lr, lr.height * self.scale, lr.width * self.scale)
        else:
            chw = self.model.super_resolve(lr.to_chw()[None])[0]
            out = ImageRGB.from_chw(chw)
        return ImageRGB(quantize(out).astype(np.float32) / 255.0)


@dataclass
class EvalRow:
    image: str
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    """이미지별 + 평균 PSNR/SSIM (Y, 테두리 r 제외)"""
    model: str
    dataset: str
    scale: int
    params: int
    rows: list[EvalRow] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr for r in self.rows])) if self.rows else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows])) if self.rows else math.nan

    def format_table(self) -> str:
        width = max([len("image"), len("mean"), *(len(r.image) for r in self.rows)])
        lines = [
            f"model: {self.model}  scale: x{self.scale}  params: {self.params}",
            f"{'image':<{width}}  {'psnr_y':>9}  {'ssim_y':>7}",
        ]
        for r in self.rows:
            lines.append(f"{r.image:<{width}}  {r.psnr:>9.4f}  {r.ssim:>7.5f}")
        lines.append(f"{'mean':<{width}}  {self.mean_psnr:>9.4f}  {self.mean_ssim:>7.5f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        def number(v: float):
            return "inf" if math.isinf(v) else v

        return {
            "model": self.model,
            "dataset": self.dataset,
            "scale": self.scale,
            "params": self.params,
            "rows": [{"image": r.image, "psnr_y": number(r.psnr), "ssim_y": r.ssim} for r in self.rows],
            "mean_psnr_y": number(self.mean_psnr),
            "mean_ssim_y": self.mean_ssim,
        }

    def write_json(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(orjson.dumps(self.to_dict(), option=orjson.OPT_INDENT_2))
        return path


def evaluate(upscaler: Upscaler, dataset: SrDataset) -> EvalReport:
    if dataset.scale != upscaler.scale:
        raise DatasetError(f"dataset is x{dataset.scale}, model is x{upscaler.scale}")
    report = EvalReport(
        model=upscaler.name, dataset=str(dataset.root or ""),
        scale=upscaler.scale, params=upscaler.params,
    )
    for pair in dataset.pairs:
        sr = upscaler.upscale(pair.lr)
        row = EvalRow(pair.name, psnr_y(sr, pair.hr, pair.scale), ssim_y(sr, pair.hr, pair.scale))
        report.rows.append(row)
        logger.debug("%s: psnr %.4f ssim %.5f", row.image, row.psnr, row.ssim)
    logger.info("evaluated %d images: mean psnr %.4f ssim %.5f", len(report.rows), report.mean_psnr, report.mean_ssim)
    return report
