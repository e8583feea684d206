"""Layer-similarity (CKA) and mean-attention-distance analyses

출력 파일 형식은 docs/formats.md 참고.
"""

from __future__ import annotations

import csv
import logging
import tempfile
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
import orjson

from ..core.config import AnalysisConfig, WindowSpec
from ..core.errors import MetricError
from ..core.model import EmtModel
from ..core.recorder import ForwardRecorder
from ..core.tensor import Tensor
from .metrics import attention_distance_per_head, center_gram

logger = logging.getLogger(__name__)

FEATURE_CHUNK = 65536


class GramRecorder(ForwardRecorder):
    """레이어별 활성값을 디스크(float32 memmap)에 쌓고 Gram 행렬을 만든다"""

    def __init__(self, num_examples: int, storage_dir: Path):
        self.num_examples = num_examples
        self.storage_dir = Path(storage_dir)
        self.layer_ids: list[str] = []
        self._stores: dict[str, np.memmap] = {}
        self._rows: dict[str, int] = defaultdict(int)

    def on_activation(self, layer_id: str, value: Tensor) -> None:
        arr = value.data.reshape(value.shape[0], -1)
        store = self._stores.get(layer_id)
        if store is None:
            self.layer_ids.append(layer_id)
            path = self.storage_dir / f"{len(self._stores):03d}.f32"
            store = np.memmap(path, dtype=np.float32, mode="w+", shape=(self.num_examples, arr.shape[1]))
            self._stores[layer_id] = store
        start = self._rows[layer_id]
        if start + arr.shape[0] > self.num_examples:
            raise MetricError(f"layer {layer_id}: more than {self.num_examples} examples recorded")
        store[start:start + arr.shape[0]] = arr
        self._rows[layer_id] = start + arr.shape[0]

    def gram(self, layer_id: str) -> np.ndarray:
        """K = X X^T (float64, 특징 축을 나누어 누적)"""
        store = self._stores[layer_id]
        if self._rows[layer_id] != self.num_examples:
            raise MetricError(f"layer {layer_id}: recorded {self._rows[layer_id]} of {self.num_examples} examples")
        k = np.zeros((self.num_examples, self.num_examples), dtype=np.float64)
        for start in range(0, store.shape[1], FEATURE_CHUNK):
            block = np.asarray(store[:, start:start + FEATURE_CHUNK], dtype=np.float64)
            k += block @ block.T
        return k

    def close(self) -> None:
        self._stores.clear()


@dataclass
class CkaResult:
    layer_ids: list[str]
    matrix: np.ndarray


def _forward_batches(model: EmtModel, patches: np.ndarray, batch_size: int, recorder: ForwardRecorder) -> None:
    for start in range(0, patches.shape[0], batch_size):
        chunk = patches[start:start + batch_size]
        model.forward(Tensor(chunk, dtype=model.dtype), recorder)
        logger.debug("analysis forward %d/%d", min(start + batch_size, patches.shape[0]), patches.shape[0])


def cka_heatmap(model: EmtModel, patches: np.ndarray, batch_size: int = 8) -> CkaResult:
    """SFEU 출력, 모든 MTB 레이어 출력, RECU 입력 사이의 pairwise 선형 CKA"""
    m = patches.shape[0]
    if m < 2:
        raise MetricError(f"CKA needs at least 2 patches, got {m}")
    with tempfile.TemporaryDirectory(prefix="emt-cka-") as tmp:
        recorder = GramRecorder(m, Path(tmp))
        _forward_batches(model, patches, batch_size, recorder)
        centered = [center_gram(recorder.gram(layer)) for layer in recorder.layer_ids]
        layer_ids = list(recorder.layer_ids)
        recorder.close()

    self_terms = [float(np.sum(k * k)) for k in centered]
    for layer, s in zip(layer_ids, self_terms):
        if s == 0.0:
            raise MetricError(f"layer {layer} has zero-variance activations; CKA undefined")
    n = len(layer_ids)
    matrix = np.eye(n, dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            value = float(np.sum(centered[i] * centered[j])) / np.sqrt(self_terms[i] * self_terms[j])
            matrix[i, j] = matrix[j, i] = min(max(value, 0.0), 1.0)
    return CkaResult(layer_ids, matrix)


@dataclass
class MadRow:
    """레이어/절반/head 하나의 평균 어텐션 거리"""
    layer_id: str
    half: int
    window: WindowSpec
    head: int
    mad: float


class MadRecorder(ForwardRecorder):
    """어텐션 행렬을 저장하지 않고 head별 거리 합만 누적"""

    def __init__(self):
        self._sums: dict[tuple[str, int], np.ndarray] = {}
        self._counts: dict[tuple[str, int], int] = defaultdict(int)
        self._windows: dict[tuple[str, int], WindowSpec] = {}

    @property
    def wants_attention(self) -> bool:
        return True

    def on_attention(self, layer_id: str, half: int, window: WindowSpec, attn: np.ndarray) -> None:
        total, count = attention_distance_per_head(attn, window)
        key = (layer_id, half)
        self._sums[key] = self._sums.get(key, 0.0) + total
        self._counts[key] += count
        self._windows[key] = window

    def rows(self) -> list[MadRow]:
        out = []
        for key, total in self._sums.items():
            mads = total / self._counts[key]
            for head, value in enumerate(mads):
                out.append(MadRow(key[0], key[1], self._windows[key], head, float(value)))
        return out


def mad_table(model: EmtModel, patches: np.ndarray, batch_size: int = 8) -> list[MadRow]:
    recorder = MadRecorder()
    _forward_batches(model, patches, batch_size, recorder)
    rows = recorder.rows()
    if not rows:
        logger.warning("model has no GTL layers; MAD table is empty")
    return rows


# --- 출력 ---

def write_cka_csv(result: CkaResult, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", *result.layer_ids])
        for layer, row in zip(result.layer_ids, result.matrix):
            writer.writerow([layer, *(f"{v:.12g}" for v in row)])
    return path


def write_mad_csv(rows: list[MadRow], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", "half", "window", "head", "mad"])
        for r in rows:
            writer.writerow([r.layer_id, r.half, str(r.window), r.head, f"{r.mad:.12g}"])
    return path


def cka_summary(result: CkaResult) -> str:
    n = len(result.layer_ids)
    off = result.matrix[~np.eye(n, dtype=bool)] if n > 1 else np.zeros(1)
    lines = [
        f"layers: {n}",
        f"mean off-diagonal CKA: {off.mean():.6f}",
        f"min off-diagonal CKA: {off.min():.6f}",
    ]
    for i in range(n - 1):
        lines.append(f"{result.layer_ids[i]} -> {result.layer_ids[i + 1]}: {result.matrix[i, i + 1]:.6f}")
    return "\n".join(lines) + "\n"


def mad_summary(rows: list[MadRow]) -> str:
    per_layer: dict[str, list[float]] = defaultdict(list)
    for r in rows:
        per_layer[r.layer_id].append(r.mad)
    lines = [f"{layer}: mean MAD {np.mean(v):.4f} px over {len(v)} heads" for layer, v in per_layer.items()]
    if rows:
        lines.append(f"overall: {np.mean([r.mad for r in rows]):.4f} px")
    return "\n".join(lines) + "\n"


@dataclass
class AnalysisMetadata:
    """analyze 실행 조건 기록"""
    analysis: str
    model: str
    dataset: str
    patch_size: int
    num_patches: int
    batch_size: int
    seed: int
    layer_ids: list[str] = field(default_factory=list)
    model_config: dict[str, str] = field(default_factory=dict)
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    @classmethod
    def build(
        cls, analysis: str, model_path: str, dataset: Path, cfg: AnalysisConfig,
        model: EmtModel, layer_ids: Optional[list[str]] = None,
    ) -> "AnalysisMetadata":
        return cls(
            analysis=analysis, model=model_path, dataset=str(dataset),
            patch_size=cfg.patch_size, num_patches=cfg.num_patches,
            batch_size=cfg.batch_size, seed=cfg.seed,
            layer_ids=layer_ids or [], model_config=model.cfg.to_dict(),
        )

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(orjson.dumps(self, option=orjson.OPT_INDENT_2))
        return path
