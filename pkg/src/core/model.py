"""EMT architecture: Pixel Mixer, SWSA, LTL/GTL, MTB and the SFEU-DFEU-RECU pipeline"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Mapping
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .config import PM_GROUPS, ModelConfig, ShiftRule, WindowSpec
from .errors import ShapeError
from .recorder import ForwardRecorder
from .tensor import DType, Tensor

logger = logging.getLogger(__name__)

_NULL = ForwardRecorder()


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """파라미터 이름 -> 형상 (이 순서가 체크포인트 순서)

    sfeu.{weight,bias}
    mtb{i}.layer{j}  GTL: norm1, attn.q0, attn.v0, attn.q1, attn.v1, [attn.proj], norm2, mlp.fc1, mlp.fc2
                     LTL: norm, mlp.fc1, mlp.fc2
    mtb{i}.conv.{weight,bias}  (mtb_conv 일 때)
    recu.{weight,bias}
    """
    c, half, hid = cfg.channels, cfg.half_channels, cfg.hidden_channels
    shapes: dict[str, tuple[int, ...]] = {
        "sfeu.weight": (c, cfg.in_channels, 3, 3),
        "sfeu.bias": (c,),
    }

    def mlp(prefix: str) -> None:
        shapes[f"{prefix}.mlp.fc1.weight"] = (hid, c)
        shapes[f"{prefix}.mlp.fc1.bias"] = (hid,)
        shapes[f"{prefix}.mlp.fc2.weight"] = (c, hid)
        shapes[f"{prefix}.mlp.fc2.bias"] = (c,)

    for i in range(cfg.num_mtb):
        for j, kind in enumerate(cfg.layer_schedule()):
            p = f"mtb{i}.layer{j}"
            if kind == "gtl":
                shapes[f"{p}.norm1.gamma"] = (c,)
                shapes[f"{p}.norm1.beta"] = (c,)
                for k in range(2):
                    shapes[f"{p}.attn.q{k}.weight"] = (half, half)
                    shapes[f"{p}.attn.v{k}.weight"] = (half, half)
                if cfg.out_proj:
                    shapes[f"{p}.attn.proj.weight"] = (c, c)
                    shapes[f"{p}.attn.proj.bias"] = (c,)
                shapes[f"{p}.norm2.gamma"] = (c,)
                shapes[f"{p}.norm2.beta"] = (c,)
            else:
                shapes[f"{p}.norm.gamma"] = (c,)
                shapes[f"{p}.norm.beta"] = (c,)
            mlp(p)
        if cfg.mtb_conv:
            shapes[f"mtb{i}.conv.weight"] = (c, c, 3, 3)
            shapes[f"mtb{i}.conv.bias"] = (c,)

    out = cfg.in_channels * cfg.scale * cfg.scale
    shapes["recu.weight"] = (out, c, 3, 3)
    shapes["recu.bias"] = (out,)
    return shapes


def _truncated_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    """[-2std, 2std] 밖의 값은 다시 뽑는다"""
    values = rng.standard_normal(shape)
    bad = np.abs(values) > 2.0
    while bad.any():
        values[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(values) > 2.0
    return values * std


class EmtParameters(Mapping[str, Tensor]):
    """이름순이 고정된 학습 파라미터 집합"""

    def __init__(self, tensors: Mapping[str, Tensor]):
        self._tensors: dict[str, Tensor] = dict(tensors)

    @classmethod
    def initialize(
        cls,
        cfg: ModelConfig,
        seed: int = 0,
        dtype: DType | str = DType.F32,
        std: float = 0.02,
    ) -> "EmtParameters":
        """weight: truncated normal(std), bias: 0, gamma: 1, beta: 0"""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in parameter_shapes(cfg).items():
            if name.endswith(".weight"):
                data = _truncated_normal(rng, shape, std)
            elif name.endswith(".gamma"):
                data = np.ones(shape)
            else:
                data = np.zeros(shape)
            tensors[name] = Tensor(data, requires_grad=True, dtype=dtype, name=name)
        return cls(tensors)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], dtype: DType | str | None = None) -> "EmtParameters":
        return cls({k: Tensor(v, requires_grad=True, dtype=dtype, name=k) for k, v in arrays.items()})

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def scope(self, prefix: str) -> "ParamScope":
        return ParamScope(self, prefix)

    def count(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def replace(self, name: str, data: np.ndarray) -> None:
        """한 파라미터 값을 교체 (학습 스텝 사이에서만 호출)"""
        old = self._tensors[name]
        if data.shape != old.shape:
            raise ShapeError(f"parameter {name}: new shape {data.shape} != {old.shape}")
        self._tensors[name] = Tensor(data, requires_grad=True, dtype=old.dtype, name=name)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._tensors.items()}

    def check_against(self, cfg: ModelConfig) -> None:
        """설정이 요구하는 이름/형상과 일치하는지 확인"""
        expected = parameter_shapes(cfg)
        for name, shape in expected.items():
            if name not in self._tensors:
                raise ShapeError(f"parameter {name} missing (expected shape {shape})")
            if self._tensors[name].shape != shape:
                raise ShapeError(
                    f"parameter {name} has shape {self._tensors[name].shape}, config expects {shape}"
                )
        extra = set(self._tensors) - set(expected)
        if extra:
            raise ShapeError(f"unexpected parameters for this config: {sorted(extra)[:3]}")


class ParamScope:
    """접두사 기준 파라미터 조회"""

    def __init__(self, params: Mapping[str, Tensor], prefix: str):
        self._params = params
        self.prefix = prefix

    def __getitem__(self, key: str) -> Tensor:
        return self._params[f"{self.prefix}.{key}"]

    def scope(self, sub: str) -> "ParamScope":
        return ParamScope(self._params, f"{self.prefix}.{sub}")


# --- token mixers ---

def pixel_mixer(x: Tensor, cfg: ModelConfig, rules: Optional[Sequence[ShiftRule]] = None) -> Tensor:
    """채널을 5개 그룹으로 나누어 그룹별로 순환 이동 (파라미터/연산량 0)"""
    c = x.shape[1]
    if c % PM_GROUPS:
        raise ShapeError(f"pixel_mixer: {c} channels not divisible by {PM_GROUPS}")
    rules = cfg.shift_rules if rules is None else rules
    groups = ops.split_channels(x, [c // PM_GROUPS] * PM_GROUPS)
    return ops.concat_channels([ops.roll2d(g, r.dh, r.dw) for g, r in zip(groups, rules)])


def window_attention(
    x: Tensor,
    wq: Tensor,
    wv: Tensor,
    window: WindowSpec,
    heads: int,
    observer: Optional[Callable[[np.ndarray], None]] = None,
) -> Tensor:
    """채널 절반 하나에 대한 창 단위 softmax(Q Q^T / sqrt(d)) V"""
    n, c, h, w = x.shape
    if c % heads:
        raise ShapeError(f"window_attention: {c} channels not divisible by {heads} heads")
    d, area = c // heads, window.area
    q = ops.window_partition(ops.channel_linear(x, wq), window.h, window.w)
    v = ops.window_partition(ops.channel_linear(x, wv), window.h, window.w)
    b = q.shape[0]

    qh = ops.reshape(q, (b, heads, d, area))
    vh = ops.reshape(v, (b, heads, d, area))
    qt = ops.permute(qh, (0, 1, 3, 2))
    logits = ops.scalar_mul(ops.matmul(qt, qh), 1.0 / math.sqrt(d))
    attn = ops.softmax_lastdim(logits)
    if observer is not None:
        observer(attn.data)

    out = ops.matmul(attn, ops.permute(vh, (0, 1, 3, 2)))
    out = ops.reshape(ops.permute(out, (0, 1, 3, 2)), (b, c, area))
    return ops.window_merge(out, (n, c, h, w), window.h, window.w)


def swsa(
    x: Tensor,
    params: ParamScope,
    cfg: ModelConfig,
    recorder: ForwardRecorder = _NULL,
) -> Tensor:
    """striped-window self-attention: 절반 k는 창 k에서 어텐션"""
    _, c, h, w = x.shape
    if c != cfg.channels:
        raise ShapeError(f"swsa: input has {c} channels, config expects {cfg.channels}")
    for win in cfg.windows:
        if h % win.h or w % win.w:
            raise ShapeError(f"swsa: H={h}, W={w} not divisible by window {win}")

    halves = ops.split_channels(x, [cfg.half_channels, cfg.half_channels])
    outs = []
    for k, (xk, win) in enumerate(zip(halves, cfg.windows)):
        observer = None
        if recorder.wants_attention:
            def observer(a, k=k, win=win):
                recorder.on_attention(params.prefix, k, win, a)
        outs.append(window_attention(
            xk, params[f"attn.q{k}.weight"], params[f"attn.v{k}.weight"], win, cfg.heads, observer
        ))
    y = ops.concat_channels(outs)
    if cfg.out_proj:
        y = ops.channel_linear(y, params["attn.proj.weight"], params["attn.proj.bias"])
    return y


# --- layers ---

def mlp(x: Tensor, params: ParamScope) -> Tensor:
    h = ops.gelu(ops.channel_linear(x, params["fc1.weight"], params["fc1.bias"]))
    return ops.channel_linear(h, params["fc2.weight"], params["fc2.bias"])


def ltl_forward(x: Tensor, params: ParamScope, cfg: ModelConfig) -> Tensor:
    """y1 = x + PM(x);  y = y1 + MLP(LN(y1))"""
    y1 = ops.add(x, pixel_mixer(x, cfg)) if cfg.ltl_mixer == "pixel_mixer" else x
    normed = ops.layer_norm(y1, params["norm.gamma"], params["norm.beta"], cfg.norm_eps)
    return ops.add(y1, mlp(normed, params.scope("mlp")))


def gtl_forward(
    x: Tensor,
    params: ParamScope,
    cfg: ModelConfig,
    recorder: ForwardRecorder = _NULL,
) -> Tensor:
    """y1 = x + SWSA(LN(x));  y = y1 + MLP(LN(y1))"""
    normed = ops.layer_norm(x, params["norm1.gamma"], params["norm1.beta"], cfg.norm_eps)
    y1 = ops.add(x, swsa(normed, params, cfg, recorder))
    normed = ops.layer_norm(y1, params["norm2.gamma"], params["norm2.beta"], cfg.norm_eps)
    return ops.add(y1, mlp(normed, params.scope("mlp")))


def mtb_forward(
    x: Tensor,
    params: ParamScope,
    cfg: ModelConfig,
    recorder: ForwardRecorder = _NULL,
) -> Tensor:
    out = x
    for j, kind in enumerate(cfg.layer_schedule()):
        layer = params.scope(f"layer{j}")
        if kind == "gtl":
            out = gtl_forward(out, layer, cfg, recorder)
        else:
            out = ltl_forward(out, layer, cfg)
        recorder.on_layer(layer.prefix, kind)
        recorder.on_activation(layer.prefix, out)
    if cfg.mtb_conv:
        out = ops.add(x, ops.conv2d_3x3(out, params["conv.weight"], params["conv.bias"]))
    return out


def emt_forward(
    lr: Tensor,
    params: Mapping[str, Tensor],
    cfg: ModelConfig,
    recorder: ForwardRecorder = _NULL,
) -> Tensor:
    """I_sr = RECU(F0 + DFEU(F0)),  F0 = SFEU(I_lr)"""
    if lr.ndim != 4 or lr.shape[1] != cfg.in_channels:
        raise ShapeError(f"emt_forward: expected [N, {cfg.in_channels}, H, W], got {lr.shape}")
    _, _, h, w = lr.shape

    f0 = ops.conv2d_3x3(lr, params["sfeu.weight"], params["sfeu.bias"])
    mh, mw = cfg.pad_multiple
    f0 = ops.reflect_pad2d(f0, (-h) % mh, (-w) % mw)
    recorder.on_activation("sfeu", f0)

    fd = f0
    for i in range(cfg.num_mtb):
        fd = mtb_forward(fd, ParamScope(params, f"mtb{i}"), cfg, recorder)

    feat = ops.add(f0, fd)
    recorder.on_activation("recu_in", feat)
    out = ops.pixel_shuffle(ops.conv2d_3x3(feat, params["recu.weight"], params["recu.bias"]), cfg.scale)
    return ops.crop2d(out, h * cfg.scale, w * cfg.scale)


class EmtModel:
    """설정 + 파라미터 묶음"""

    def __init__(self, cfg: ModelConfig, params: EmtParameters):
        self.cfg = cfg.validate()
        params.check_against(cfg)
        self.params = params

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int = 0, dtype: DType | str = DType.F32, std: float = 0.02) -> "EmtModel":
        model = cls(cfg, EmtParameters.initialize(cfg.validate(), seed, dtype, std))
        logger.info("created EMT x%d with %d parameters", cfg.scale, model.params.count())
        return model

    @property
    def dtype(self) -> DType:
        return next(iter(self.params.values())).dtype

    def forward(self, lr: Tensor, recorder: ForwardRecorder = _NULL) -> Tensor:
        return emt_forward(lr.astype(self.dtype), self.params, self.cfg, recorder)

    def super_resolve(self, lr: np.ndarray) -> np.ndarray:
        """[N,3,H,W] 배열 추론 (테이프 없음)"""
        return self.forward(Tensor(lr, dtype=self.dtype)).numpy()
