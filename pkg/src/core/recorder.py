"""Forward-pass recorders for EMT

forward 한 번 동안 한 스레드가 소유하는 관찰자. 레이어 실행, 활성값,
SWSA 어텐션 행렬을 받아 분석 도구(CKA, MAD)와 테스트에 넘긴다.
"""

from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .config import WindowSpec
from .tensor import Tensor


class ForwardRecorder:
    """기본 구현은 아무것도 하지 않는다"""

    def on_layer(self, layer_id: str, kind: str) -> None:
        pass

    def on_activation(self, layer_id: str, value: Tensor) -> None:
        pass

    def on_attention(self, layer_id: str, half: int, window: WindowSpec, attn: np.ndarray) -> None:
        """attn: [windows*N, heads, L, L] softmax 출력"""
        pass

    @property
    def wants_attention(self) -> bool:
        return False


class LayerCounter(ForwardRecorder):
    """실행된 레이어 종류별 횟수"""

    def __init__(self):
        self.counts: Counter[str] = Counter()
        self.order: list[str] = []

    def on_layer(self, layer_id: str, kind: str) -> None:
        self.counts[kind] += 1
        self.order.append(layer_id)


class ActivationRecorder(ForwardRecorder):
    """레이어 경계 활성값을 (패치, 특징) 행렬로 누적"""

    def __init__(self):
        self._chunks: dict[str, list[np.ndarray]] = defaultdict(list)
        self.layer_ids: list[str] = []

    def on_activation(self, layer_id: str, value: Tensor) -> None:
        if layer_id not in self._chunks:
            self.layer_ids.append(layer_id)
        arr = value.data
        self._chunks[layer_id].append(arr.reshape(arr.shape[0], -1).astype(np.float64))

    def matrix(self, layer_id: str) -> np.ndarray:
        return np.concatenate(self._chunks[layer_id], axis=0)


@dataclass
class AttentionRecord:
    """캡처된 어텐션 하나"""
    layer_id: str
    half: int
    window: WindowSpec
    attn: np.ndarray


class AttentionCapture(ForwardRecorder):
    """모든 SWSA 어텐션 행렬을 그대로 보관 (작은 입력 전용)"""

    def __init__(self):
        self.records: list[AttentionRecord] = []

    @property
    def wants_attention(self) -> bool:
        return True

    def on_attention(self, layer_id: str, half: int, window: WindowSpec, attn: np.ndarray) -> None:
        self.records.append(AttentionRecord(layer_id, half, window, np.array(attn)))
