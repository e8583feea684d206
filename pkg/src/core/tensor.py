"""Dense tensors and the reverse-mode gradient tape for EMT"""

from __future__ import annotations

import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np

from .errors import GradientError, ShapeError

logger = logging.getLogger(__name__)


class DType(Enum):
    """지원 부동소수 타입"""
    F32 = "f32"
    F64 = "f64"

    @property
    def numpy(self) -> np.dtype:
        return np.dtype(np.float32) if self is DType.F32 else np.dtype(np.float64)

    @classmethod
    def of(cls, value: "DType | str | np.dtype") -> "DType":
        if isinstance(value, DType):
            return value
        if isinstance(value, str) and value in ("f32", "f64"):
            return cls(value)
        dt = np.dtype(value)
        if dt == np.float32:
            return cls.F32
        if dt == np.float64:
            return cls.F64
        raise ShapeError(f"unsupported dtype {value!r} (expected f32 or f64)")


class Tensor:
    """rank 1..4 밀집 텐서 (row-major, 생성 후 불변)"""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "_tape")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: "DType | str | None" = None,
        name: Optional[str] = None,
    ):
        arr = np.asarray(data)
        if dtype is not None:
            target = DType.of(dtype).numpy
        elif arr.dtype in (np.float32, np.float64):
            target = arr.dtype
        else:
            target = np.dtype(np.float64)
        # 호출자 배열과 메모리를 공유하지 않도록 항상 복사
        self._init(np.array(arr, dtype=target, order="C"), requires_grad, name)

    def _init(self, arr: np.ndarray, requires_grad: bool, name: Optional[str]) -> None:
        if arr.ndim < 1 or arr.ndim > 4:
            raise ShapeError(f"tensor rank must be 1..4, got shape {arr.shape}")
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.data.flags.writeable = False
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[Node] = None
        self._tape: Optional[Tape] = None

    @classmethod
    def wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """연산 결과 배열을 복사 없이 감싼다 (소유권 이전)"""
        out = cls.__new__(cls)
        out._init(arr, requires_grad, None)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> DType:
        return DType.of(self.data.dtype)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        """쓰기 가능한 복사본 반환"""
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype: "DType | str") -> "Tensor":
        return Tensor(self.data, requires_grad=self.requires_grad, dtype=dtype, name=self.name)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.value}{req}{nm})"


@dataclass
class Node:
    """테이프에 기록된 연산 하나"""
    fn: "Function"
    inputs: tuple[Tensor, ...]
    output: Tensor
    index: int


class Tape:
    """define-by-run 연산 기록 (한 스레드에서 forward+backward 동안만 사용)"""

    _local = threading.local()

    def __init__(self):
        self.nodes: list[Node] = []

    @classmethod
    def current(cls) -> Optional["Tape"]:
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def __enter__(self) -> "Tape":
        if not hasattr(self._local, "stack"):
            self._local.stack = []
        self._local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        self._local.stack.pop()

    def record(self, fn: "Function", inputs: tuple[Tensor, ...], output: Tensor) -> None:
        node = Node(fn=fn, inputs=inputs, output=output, index=len(self.nodes))
        self.nodes.append(node)
        output._node = node
        output._tape = self

    def __len__(self) -> int:
        return len(self.nodes)


class Function(ABC):
    """미분 가능한 연산의 기반 클래스"""

    def __init__(self, **params: Any):
        self.params = params

    @abstractmethod
    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        """출력 기울기로부터 입력별 기울기를 반환 (입력 순서)"""
        pass

    @classmethod
    def apply(cls, *tensors: Tensor, **params: Any) -> Tensor:
        fn = cls(**params)
        out = Tensor.wrap(fn.forward(*(t.data for t in tensors)))
        tape = Tape.current()
        if tape is not None and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            tape.record(fn, tuple(tensors), out)
        return out


def backward(loss: Tensor) -> None:
    """스칼라 loss에서 역전파하여 requires_grad 리프에 기울기를 누적"""
    if loss.data.size != 1:
        raise GradientError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._node is None or loss._tape is None:
        raise GradientError("loss is not recorded on a tape")

    tape = loss._tape
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    visited = 0
    for node in reversed(tape.nodes[: loss._node.index + 1]):
        grad = pending.pop(id(node.output), None)
        if grad is None:
            continue
        visited += 1
        input_grads = node.fn.backward(grad)
        for inp, g in zip(node.inputs, input_grads):
            if g is None or not inp.requires_grad:
                continue
            if g.shape != inp.shape:
                raise GradientError(
                    f"{type(node.fn).__name__} produced grad {g.shape} for input {inp.shape}"
                )
            g = g.astype(inp.data.dtype, copy=False)
            if inp.is_leaf:
                inp.grad = g.copy() if inp.grad is None else inp.grad + g
            else:
                prev = pending.get(id(inp))
                pending[id(inp)] = g if prev is None else prev + g
    logger.debug("backward visited %d of %d tape nodes", visited, len(tape))
