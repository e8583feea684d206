"""Differentiable operators used by EMT

각 연산은 Function 서브클래스(forward/backward)와 입력 검증을 담당하는
소문자 함수 래퍼로 구성된다. 일반 브로드캐스팅은 지원하지 않으며,
허용되는 유일한 브로드캐스트는 add_channel_bias 뿐이다.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Function, Tensor

Scalar = Union[int, float]

# tanh 근사 GELU 상수
GELU_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _require_rank(op: str, x: Tensor, rank: int) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{op}: expected rank {rank}, got shape {x.shape}")


# --- elementwise ---

class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class ScalarMul(Function):
    def forward(self, a):
        return a * a.dtype.type(self.params["s"])

    def backward(self, grad):
        return (grad * grad.dtype.type(self.params["s"]),)


class AddChannelBias(Function):
    """x[N,C,...] + b[C] (채널 축 1 기준, 나머지 축으로 브로드캐스트)"""

    def forward(self, x, b):
        self.expand = (1, b.shape[0]) + (1,) * (x.ndim - 2)
        return x + b.reshape(self.expand)

    def backward(self, grad):
        axes = tuple(i for i in range(grad.ndim) if i != 1)
        return grad, grad.sum(axis=axes)


# --- linear algebra ---

class MatMul(Function):
    """[..., m, k] @ [..., k, n], 선행 축은 동일해야 함"""

    def forward(self, a, b):
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        da = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        db = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return da, db


class ChannelLinear(Function):
    """위치별 선형 사상: out[n,o,...] = sum_c w[o,c] x[n,c,...]"""

    def forward(self, x, w):
        self.x, self.w = x, w
        out = np.tensordot(w, x, axes=([1], [1]))  # [O, N, ...]
        return np.moveaxis(out, 0, 1)

    def backward(self, grad):
        g = np.moveaxis(grad, 1, 0)  # [O, N, ...]
        dx = np.moveaxis(np.tensordot(self.w, g, axes=([0], [0])), 0, 1)
        axes = [0] + list(range(2, self.x.ndim))
        dw = np.tensordot(grad, self.x, axes=(axes, axes))
        return dx, dw


class Conv2d3x3(Function):
    """3x3 합성곱, zero padding 1, stride 1 (im2col + GEMM)"""

    def forward(self, x, w, b):
        n, c, h, wd = x.shape
        o = w.shape[0]
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        cols = sliding_window_view(xp, (3, 3), axis=(2, 3))  # [N,C,H,W,3,3]
        self.cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * 9)
        self.wmat = w.reshape(o, c * 9)
        self.in_shape = x.shape
        out = self.cols @ self.wmat.T + b
        return np.ascontiguousarray(out.reshape(n, h, wd, o).transpose(0, 3, 1, 2))

    def backward(self, grad):
        n, c, h, wd = self.in_shape
        o = self.wmat.shape[0]
        g2 = grad.transpose(0, 2, 3, 1).reshape(n * h * wd, o)
        dw = (g2.T @ self.cols).reshape(o, c, 3, 3)
        db = g2.sum(axis=0)
        dcols = (g2 @ self.wmat).reshape(n, h, wd, c, 3, 3)
        dxp = np.zeros((n, c, h + 2, wd + 2), dtype=grad.dtype)
        for i in range(3):
            for j in range(3):
                dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, 1:-1, 1:-1], dw, db


# --- normalization / activations ---

class LayerNormChannels(Function):
    """각 (n, 공간 위치)의 채널 벡터를 정규화"""

    def forward(self, x, gamma, beta):
        eps = self.params["eps"]
        expand = (1, x.shape[1]) + (1,) * (x.ndim - 2)
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=1, keepdims=True)
        self.rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
        self.xhat = xc * self.rstd
        self.gamma = gamma.reshape(expand)
        return self.xhat * self.gamma + beta.reshape(expand)

    def backward(self, grad):
        axes = tuple(i for i in range(grad.ndim) if i != 1)
        dgamma = (grad * self.xhat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        dxhat = grad * self.gamma
        dx = self.rstd * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - self.xhat * (dxhat * self.xhat).mean(axis=1, keepdims=True)
        )
        return dx, dgamma, dbeta


class Gelu(Function):
    def forward(self, x):
        k = x.dtype.type(GELU_SQRT_2_OVER_PI)
        c = x.dtype.type(GELU_CUBIC)
        self.x = x
        self.t = np.tanh(k * (x + c * x * x * x))
        return 0.5 * x * (1 + self.t)

    def backward(self, grad):
        x, t = self.x, self.t
        k = x.dtype.type(GELU_SQRT_2_OVER_PI)
        c = x.dtype.type(GELU_CUBIC)
        dt = (1 - t * t) * k * (1 + 3 * c * x * x)
        return (grad * (0.5 * (1 + t) + 0.5 * x * dt),)


class SoftmaxLastDim(Function):
    def forward(self, x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        self.y = e / e.sum(axis=-1, keepdims=True)
        return self.y

    def backward(self, grad):
        y = self.y
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)


# --- rearrangements ---

class Roll2d(Function):
    def forward(self, x):
        return np.roll(x, (self.params["shift_h"], self.params["shift_w"]), axis=(2, 3))

    def backward(self, grad):
        return (np.roll(grad, (-self.params["shift_h"], -self.params["shift_w"]), axis=(2, 3)),)


class SliceChannels(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return x[:, self.params["start"]:self.params["stop"]]

    def backward(self, grad):
        dx = np.zeros(self.in_shape, dtype=grad.dtype)
        dx[:, self.params["start"]:self.params["stop"]] = grad
        return (dx,)


class ConcatChannels(Function):
    def forward(self, *xs):
        self.sizes = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1)

    def backward(self, grad):
        bounds = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, bounds, axis=1))


class WindowPartition(Function):
    """[N,C,H,W] -> [N*nWin, C, wh*ww] (창 순서는 row-major)"""

    def forward(self, x):
        wh, ww = self.params["wh"], self.params["ww"]
        n, c, h, w = x.shape
        self.in_shape = x.shape
        t = x.reshape(n, c, h // wh, wh, w // ww, ww).transpose(0, 2, 4, 1, 3, 5)
        return t.reshape(n * (h // wh) * (w // ww), c, wh * ww)

    def backward(self, grad):
        return (_merge_windows(grad, self.in_shape, self.params["wh"], self.params["ww"]),)


class WindowMerge(Function):
    def forward(self, x):
        return _merge_windows(x, self.params["out_shape"], self.params["wh"], self.params["ww"])

    def backward(self, grad):
        wh, ww = self.params["wh"], self.params["ww"]
        n, c, h, w = grad.shape
        t = grad.reshape(n, c, h // wh, wh, w // ww, ww).transpose(0, 2, 4, 1, 3, 5)
        return (t.reshape(n * (h // wh) * (w // ww), c, wh * ww),)


def _merge_windows(x: np.ndarray, out_shape: Sequence[int], wh: int, ww: int) -> np.ndarray:
    n, c, h, w = out_shape
    t = x.reshape(n, h // wh, w // ww, c, wh, ww).transpose(0, 3, 1, 4, 2, 5)
    return t.reshape(n, c, h, w)


class PixelShuffle(Function):
    """in[n, c*r*r + i*r + j, y, x] -> out[n, c, y*r + i, x*r + j]"""

    def forward(self, x):
        return _shuffle(x, self.params["r"])

    def backward(self, grad):
        return (_unshuffle(grad, self.params["r"]),)


class PixelUnshuffle(Function):
    def forward(self, x):
        return _unshuffle(x, self.params["r"])

    def backward(self, grad):
        return (_shuffle(grad, self.params["r"]),)


def _shuffle(x: np.ndarray, r: int) -> np.ndarray:
    n, crr, h, w = x.shape
    c = crr // (r * r)
    t = x.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return t.reshape(n, c, h * r, w * r)


def _unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    n, c, hr, wr = x.shape
    h, w = hr // r, wr // r
    t = x.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
    return t.reshape(n, c * r * r, h, w)


class Reshape(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return x.reshape(self.params["shape"])

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Permute(Function):
    def forward(self, x):
        return x.transpose(self.params["axes"])

    def backward(self, grad):
        return (grad.transpose(np.argsort(self.params["axes"])),)


class Gather2d(Function):
    """x[:, :, rows[i], cols[j]] 형태의 공간 인덱싱 (반사 패딩에 사용)"""

    def forward(self, x):
        self.in_shape = x.shape
        rows, cols = self.params["rows"], self.params["cols"]
        return x[:, :, rows[:, None], cols[None, :]]

    def backward(self, grad):
        n, c, h, w = self.in_shape
        rows, cols = self.params["rows"], self.params["cols"]
        acc = np.zeros((h, w, n, c), dtype=grad.dtype)
        np.add.at(acc, (rows[:, None], cols[None, :]), grad.transpose(2, 3, 0, 1))
        return (acc.transpose(2, 3, 0, 1),)


class Crop2d(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return x[:, :, :self.params["h"], :self.params["w"]]

    def backward(self, grad):
        dx = np.zeros(self.in_shape, dtype=grad.dtype)
        dx[:, :, :self.params["h"], :self.params["w"]] = grad
        return (dx,)


# --- reductions / losses ---

class SumAll(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype).reshape(1)

    def backward(self, grad):
        return (np.full(self.in_shape, grad[0], dtype=grad.dtype),)


class L1Loss(Function):
    """mean |pred - target|, sign(0) = 0"""

    def forward(self, pred, target):
        self.diff = pred - target
        return np.asarray(np.abs(self.diff).mean(), dtype=pred.dtype).reshape(1)

    def backward(self, grad):
        g = np.sign(self.diff) * (grad[0] / self.diff.size)
        return g, -g


# --- functional API ---

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return Sub.apply(a, b)


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul_elementwise", a, b)
    return Mul.apply(a, b)


def scalar_mul(a: Tensor, s: Scalar) -> Tensor:
    return ScalarMul.apply(a, s=float(s))


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """채널 bias 브로드캐스트 (유일하게 허용된 브로드캐스트 형태)"""
    if b.ndim != 1 or x.ndim < 2 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_channel_bias: bias {b.shape} does not match channels of {x.shape}")
    return AddChannelBias.apply(x, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return MatMul.apply(a, b)


def channel_linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """공간 위치마다 w[out,in]을 적용, b가 있으면 채널 bias를 더한다"""
    if w.ndim != 2 or x.ndim < 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"channel_linear: weight {w.shape} does not match input {x.shape}")
    out = ChannelLinear.apply(x, w)
    return add_channel_bias(out, b) if b is not None else out


def conv2d_3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    _require_rank("conv2d_3x3", x, 4)
    if w.ndim != 4 or w.shape[2:] != (3, 3) or w.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d_3x3: weight {w.shape} does not match input channels of {x.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d_3x3: bias {b.shape} does not match {w.shape[0]} output channels")
    return Conv2d3x3.apply(x, w, b)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if x.ndim < 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match channels of {x.shape}"
        )
    return LayerNormChannels.apply(x, gamma, beta, eps=eps)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def softmax_lastdim(x: Tensor) -> Tensor:
    return SoftmaxLastDim.apply(x)


def roll2d(x: Tensor, shift_h: int, shift_w: int) -> Tensor:
    _require_rank("roll2d", x, 4)
    return Roll2d.apply(x, shift_h=int(shift_h), shift_w=int(shift_w))


def split_channels(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if sum(sizes) != x.shape[1] or any(s < 1 for s in sizes):
        raise ShapeError(f"split_channels: sizes {list(sizes)} do not sum to {x.shape[1]} channels")
    out, start = [], 0
    for s in sizes:
        out.append(SliceChannels.apply(x, start=start, stop=start + s))
        start += s
    return out


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("concat_channels: empty input")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: cannot join {ref} and {x.shape}")
    return ConcatChannels.apply(*xs)


def window_partition(x: Tensor, wh: int, ww: int) -> Tensor:
    _require_rank("window_partition", x, 4)
    _, _, h, w = x.shape
    if h % wh or w % ww:
        raise ShapeError(f"window_partition: H={h}, W={w} not divisible by window ({wh}, {ww})")
    return WindowPartition.apply(x, wh=wh, ww=ww)


def window_merge(x: Tensor, out_shape: Sequence[int], wh: int, ww: int) -> Tensor:
    n, c, h, w = out_shape
    if h % wh or w % ww:
        raise ShapeError(f"window_merge: H={h}, W={w} not divisible by window ({wh}, {ww})")
    expected = (n * (h // wh) * (w // ww), c, wh * ww)
    if x.shape != expected:
        raise ShapeError(f"window_merge: got {x.shape}, expected {expected}")
    return WindowMerge.apply(x, out_shape=tuple(out_shape), wh=wh, ww=ww)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    _require_rank("pixel_shuffle", x, 4)
    if r < 1 or x.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle: {x.shape[1]} channels not divisible by r^2={r * r}")
    return PixelShuffle.apply(x, r=r)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    _require_rank("pixel_unshuffle", x, 4)
    if r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle: spatial {x.shape[2:]} not divisible by r={r}")
    return PixelUnshuffle.apply(x, r=r)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}")
    return Reshape.apply(x, shape=tuple(shape))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: axes {tuple(axes)} invalid for rank {x.ndim}")
    return Permute.apply(x, axes=tuple(axes))


def reflect_pad2d(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """아래/오른쪽 방향 반사 패딩"""
    _require_rank("reflect_pad2d", x, 4)
    if pad_h == 0 and pad_w == 0:
        return x
    _, _, h, w = x.shape
    rows = np.pad(np.arange(h), (0, pad_h), mode="reflect")
    cols = np.pad(np.arange(w), (0, pad_w), mode="reflect")
    return Gather2d.apply(x, rows=rows, cols=cols)


def crop2d(x: Tensor, h: int, w: int) -> Tensor:
    _require_rank("crop2d", x, 4)
    if h > x.shape[2] or w > x.shape[3]:
        raise ShapeError(f"crop2d: ({h}, {w}) exceeds {x.shape}")
    if (h, w) == x.shape[2:]:
        return x
    return Crop2d.apply(x, h=h, w=w)


def sum_all(x: Tensor) -> Tensor:
    return SumAll.apply(x)


def l1_mean(pred: Tensor, target: Tensor) -> Tensor:
    _require_same_shape("l1_loss", pred, target)
    return L1Loss.apply(pred, target)
