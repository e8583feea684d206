"""Image quality metrics and representation-analysis statistics

PSNR/SSIM은 BT.601 Y 평면에서, 테두리 r 픽셀을 잘라낸 뒤 scikit-image로 계산한다.
"""

from __future__ import annotations

import math

import numpy as np
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from ..core.config import WindowSpec
from ..core.errors import MetricError
from ..data.images import ImageRGB, rgb_to_y

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _y_planes(sr: ImageRGB, hr: ImageRGB, border: int) -> tuple[np.ndarray, np.ndarray]:
    if (sr.height, sr.width) != (hr.height, hr.width):
        raise MetricError(f"image size mismatch: {sr.height}x{sr.width} vs {hr.height}x{hr.width}")
    if border < 0:
        raise MetricError(f"border must be >= 0, got {border}")
    a, b = rgb_to_y(sr), rgb_to_y(hr)
    if border:
        if sr.height <= 2 * border or sr.width <= 2 * border:
            raise MetricError(f"image {sr.height}x{sr.width} too small for a {border}-pixel border crop")
        a, b = a[border:-border, border:-border], b[border:-border, border:-border]
    return a, b


def psnr_plane(a: np.ndarray, b: np.ndarray, peak: float = PEAK) -> float:
    """동일 평면이면 math.inf"""
    if a.shape != b.shape:
        raise MetricError(f"plane shape mismatch: {a.shape} vs {b.shape}")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    if np.array_equal(a, b):
        return math.inf
    return float(peak_signal_noise_ratio(b, a, data_range=peak))


def psnr_y(sr: ImageRGB, hr: ImageRGB, border: int) -> float:
    return psnr_plane(*_y_planes(sr, hr, border))


def ssim_plane(a: np.ndarray, b: np.ndarray) -> float:
    """11x11 가우시안(sigma 1.5) 창, 모분산, valid 위치 평균"""
    if a.shape != b.shape:
        raise MetricError(f"plane shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise MetricError(f"plane {a.shape[0]}x{a.shape[1]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    if np.array_equal(a, b):
        return 1.0
    # truncate 3.5, sigma 1.5 -> 반경 5 (11탭)
    return float(structural_similarity(
        a, b,
        data_range=PEAK,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
    ))


def ssim_y(sr: ImageRGB, hr: ImageRGB, border: int) -> float:
    return ssim_plane(*_y_planes(sr, hr, border))


# --- CKA ---

def _centered_columns(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise MetricError(f"{name} must be a 2-D (examples x features) matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise MetricError(f"CKA needs at least 2 examples, got {x.shape[0]}")
    return x - x.mean(axis=0, keepdims=True)


def center_gram(k: np.ndarray) -> np.ndarray:
    """H K H,  H = I - 11^T / m"""
    k = np.asarray(k, dtype=np.float64)
    k = k - k.mean(axis=0, keepdims=True)
    return k - k.mean(axis=1, keepdims=True)


def cka_from_grams(k: np.ndarray, l: np.ndarray) -> float:
    """선형 커널 Gram 행렬에서 biased HSIC 기반 CKA"""
    if k.shape != l.shape or k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise MetricError(f"Gram matrices must be equal square shapes, got {k.shape} and {l.shape}")
    if k.shape[0] < 2:
        raise MetricError("CKA needs at least 2 examples")
    kc, lc = center_gram(k), center_gram(l)
    return _cka_ratio(float(np.sum(kc * lc)), float(np.sum(kc * kc)), float(np.sum(lc * lc)))


def _cka_ratio(cross: float, self_x: float, self_y: float) -> float:
    den = math.sqrt(self_x * self_y)
    if den == 0.0:
        raise MetricError("CKA undefined for a zero-variance representation")
    return min(max(cross / den, 0.0), 1.0)


def cka(x: np.ndarray, y: np.ndarray) -> float:
    """||Xc^T Yc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F)

    특징 수가 예제 수보다 크면 m x m Gram 형태로 계산한다 (값은 같다).
    """
    xc, yc = _centered_columns(x, "X"), _centered_columns(y, "Y")
    if xc.shape[0] != yc.shape[0]:
        raise MetricError(f"CKA inputs need the same number of examples, got {xc.shape[0]} and {yc.shape[0]}")
    m = xc.shape[0]
    if xc.shape[1] > m or yc.shape[1] > m:
        k, l = xc @ xc.T, yc @ yc.T
        return _cka_ratio(float(np.sum(k * l)), float(np.sum(k * k)), float(np.sum(l * l)))
    cross = np.linalg.norm(xc.T @ yc) ** 2
    return _cka_ratio(float(cross), float(np.linalg.norm(xc.T @ xc) ** 2), float(np.linalg.norm(yc.T @ yc) ** 2))


# --- mean attention distance ---

def window_distances(window: WindowSpec) -> np.ndarray:
    """창 내부 위치 쌍의 유클리드 거리 [L, L] (위치는 row-major)"""
    rows, cols = np.divmod(np.arange(window.area), window.w)
    return np.hypot(rows[:, None] - rows[None, :], cols[:, None] - cols[None, :])


def attention_distance_per_head(attn: np.ndarray, window: WindowSpec) -> tuple[np.ndarray, int]:
    """attn [B, heads, L, L] -> (head별 쿼리 거리 합, 쿼리 수)"""
    if attn.ndim != 4 or attn.shape[-1] != window.area or attn.shape[-2] != window.area:
        raise MetricError(f"attention shape {attn.shape} does not match window {window}")
    per_query = np.einsum("bhij,ij->bhi", attn.astype(np.float64), window_distances(window))
    return per_query.sum(axis=(0, 2)), attn.shape[0] * attn.shape[2]


def mean_attention_distance(attn: np.ndarray, window: WindowSpec) -> np.ndarray:
    """head별 sum_j A_ij * d(i, j) 의 쿼리/창 평균"""
    total, count = attention_distance_per_head(attn, window)
    return total / count
