"""Image I/O, bicubic resampling and luma conversion for EMT"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from skimage.color import rgb2ycbcr

from ..core.errors import ImageError

logger = logging.getLogger(__name__)

# 3차 합성곱 커널 계수
BICUBIC_A = -0.5


@dataclass(frozen=True)
class ImageRGB:
    """[H, W, 3] float32, 값 범위 [0, 1]"""
    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageError(f"expected an [H, W, 3] image, got shape {px.shape}")
        if px.dtype != np.float32:
            object.__setattr__(self, "pixels", px.astype(np.float32))
        if np.any(self.pixels < 0) or np.any(self.pixels > 1):
            raise ImageError("pixel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.pixels.transpose(2, 0, 1))

    @classmethod
    def from_chw(cls, chw: np.ndarray) -> "ImageRGB":
        """모델 출력 [3, H, W] -> [0, 1]로 잘라서 이미지화"""
        return cls(np.clip(chw.transpose(1, 2, 0), 0.0, 1.0).astype(np.float32))

    def crop(self, top: int, left: int, height: int, width: int) -> "ImageRGB":
        return ImageRGB(self.pixels[top:top + height, left:left + width].copy())


def _is_16bit(img: Image.Image) -> bool:
    """디코딩 전 tile rawmode로 16비트 PNG 여부 판별 (예: "RGB;16B")"""
    return any(isinstance(tile[3], str) and ";16" in tile[3] for tile in img.tile)


def load_png(path: Path) -> ImageRGB:
    """8/16비트 RGB(A) PNG 읽기, 알파 채널은 버린다"""
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise ImageError(f"{path}: not a PNG file ({img.format})")
            if img.mode not in ("RGB", "RGBA"):
                raise ImageError(f"{path}: unsupported color type {img.mode} (expected RGB/RGBA)")
            # Pillow는 16비트 RGB(A)를 상위 바이트만 남겨 RGB 모드로 연다
            if _is_16bit(img):
                logger.debug("%s: 16-bit PNG read at 8-bit precision", path)
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as e:
        raise ImageError(f"{path}: cannot read image ({e})") from None
    return ImageRGB(arr)


def quantize(img: ImageRGB) -> np.ndarray:
    """round-half-up 8비트 양자화"""
    return np.floor(img.pixels.astype(np.float64) * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def save_png(img: ImageRGB, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(quantize(img), mode="RGB").save(path, format="PNG")
    except OSError as e:
        raise ImageError(f"{path}: cannot write image ({e})") from None


def cubic_weight(x: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(in_size: int, out_size: int) -> np.ndarray:
    """1차원 bicubic 재표본화 행렬 [out, in]

    축소 시 커널을 1/scale 만큼 넓히고 가중치 합을 1로 정규화한다.
    범위 밖 표본은 가장자리 픽셀로 고정(clamp)한다.
    """
    scale = out_size / in_size
    kernel_scale = min(scale, 1.0)
    radius = 2.0 / kernel_scale
    mat = np.zeros((out_size, in_size), dtype=np.float64)
    for o in range(out_size):
        center = (o + 0.5) / scale - 0.5
        first = math.floor(center - radius) + 1
        taps = np.arange(first, first + int(math.ceil(2 * radius)) + 1)
        weights = cubic_weight((taps - center) * kernel_scale)
        weights /= weights.sum()
        np.add.at(mat[o], np.clip(taps, 0, in_size - 1), weights)
    return mat


def bicubic_resize(img: ImageRGB, out_h: int, out_w: int) -> ImageRGB:
    if out_h < 1 or out_w < 1:
        raise ImageError(f"resize target must be >= 1x1, got {out_h}x{out_w}")
    if (out_h, out_w) == (img.height, img.width):
        return ImageRGB(img.pixels.copy())
    rows = resize_matrix(img.height, out_h)
    cols = resize_matrix(img.width, out_w)
    px = img.pixels.astype(np.float64)
    out = np.einsum("oh,hwc,pw->opc", rows, px, cols)
    return ImageRGB(np.clip(out, 0.0, 1.0).astype(np.float32))


def rgb_to_y(img: ImageRGB | np.ndarray) -> np.ndarray:
    """BT.601 Y 평면 (float64, [16, 235]), [0, 1] RGB 입력"""
    px = img.pixels if isinstance(img, ImageRGB) else img
    return rgb2ycbcr(np.asarray(px, dtype=np.float64))[..., 0]

