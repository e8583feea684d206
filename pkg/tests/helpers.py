"""Test helpers: finite-difference gradient checks and synthetic images"""

import struct
import zlib
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from PIL import Image

from src.core import ops
from src.core.tensor import Tape, Tensor, backward


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    """sum(out * w): 대칭성 때문에 기울기가 0이 되는 것을 막는 스칼라화"""
    return ops.sum_all(ops.mul_elementwise(out, Tensor(weights, dtype="f64")))


def analytic_grads(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    tensors = [Tensor(a, requires_grad=True, dtype="f64") for a in arrays]
    with Tape():
        loss = fn(*tensors)
        backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def numeric_grad(
    fn: Callable[..., Tensor],
    arrays: Sequence[np.ndarray],
    which: int,
    indices: Optional[Sequence[tuple[int, ...]]] = None,
    eps: float = 1e-6,
) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """중심 차분: (f(x + eps) - f(x - eps)) / (2 eps)"""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    if indices is None:
        indices = list(np.ndindex(base[which].shape))
    values = []
    for idx in indices:
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[which][idx] += eps
        minus[which][idx] -= eps
        f_plus = fn(*(Tensor(a, dtype="f64") for a in plus)).item()
        f_minus = fn(*(Tensor(a, dtype="f64") for a in minus)).item()
        values.append((f_plus - f_minus) / (2 * eps))
    return list(indices), np.array(values)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(
    fn: Callable[..., Tensor],
    arrays: Sequence[np.ndarray],
    rtol: float = 1e-4,
    samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> None:
    grads = analytic_grads(fn, arrays)
    rng = rng or np.random.default_rng(0)
    for which, arr in enumerate(arrays):
        all_idx = list(np.ndindex(np.shape(arr)))
        if samples is not None and samples < len(all_idx):
            picks = rng.choice(len(all_idx), size=samples, replace=False)
            all_idx = [all_idx[i] for i in picks]
        indices, numeric = numeric_grad(fn, arrays, which, all_idx)
        analytic = np.array([grads[which][idx] for idx in indices])
        err = relative_error(analytic, numeric)
        assert err < rtol, f"input {which}: relative gradient error {err:.3e}"


def smooth_image(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """부드러운 그라디언트 + 약한 잡음의 uint8 RGB"""
    yy, xx = np.mgrid[0:height, 0:width]
    base = np.stack([
        0.5 + 0.4 * np.sin(xx / 5.0 + c) * np.cos(yy / 7.0 - c) for c in range(3)
    ], axis=-1)
    noisy = base + rng.normal(0, 0.03, base.shape)
    return (np.clip(noisy, 0, 1) * 255).round().astype(np.uint8)


def write_png(path: Path, pixels: np.ndarray, mode: str = "RGB") -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode=mode).save(path, format="PNG")
    return path


def _png_chunk(kind: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data))


def write_png16(path: Path, pixels: np.ndarray) -> Path:
    """16비트 RGB PNG 직접 작성 (Pillow는 16비트 RGB를 쓰지 못한다)"""
    height, width, _ = pixels.shape
    rows = b"".join(b"\x00" + row.astype(">u2").tobytes() for row in pixels)
    header = struct.pack(">IIBBBBB", width, height, 16, 2, 0, 0, 0)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(
        b"\x89PNG\r\n\x1a\n"
        + _png_chunk(b"IHDR", header)
        + _png_chunk(b"IDAT", zlib.compress(rows))
        + _png_chunk(b"IEND", b"")
    )
    return path
