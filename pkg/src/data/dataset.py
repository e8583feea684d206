"""LR/HR pair datasets, patch sampling and augmentation for EMT"""

from __future__ import annotations

import logging
import os
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from ..core.errors import DatasetError, ImageError
from .images import ImageRGB, bicubic_resize, load_png

logger = logging.getLogger(__name__)

THREADS_ENV = "EMT_THREADS"


@dataclass(frozen=True)
class SamplePair:
    """LR 이미지와 r배 크기의 HR 이미지"""
    lr: ImageRGB
    hr: ImageRGB
    scale: int
    name: str = ""

    def __post_init__(self):
        if (self.hr.height, self.hr.width) != (self.lr.height * self.scale, self.lr.width * self.scale):
            raise DatasetError(
                f"{self.name or 'pair'}: HR {self.hr.height}x{self.hr.width} is not "
                f"{self.scale}x LR {self.lr.height}x{self.lr.width}"
            )


@dataclass(frozen=True)
class Batch:
    """NCHW float32 배치"""
    lr: np.ndarray
    hr: np.ndarray
    iteration: int


def modcrop(img: ImageRGB, scale: int) -> ImageRGB:
    h, w = img.height - img.height % scale, img.width - img.width % scale
    if h < 1 or w < 1:
        raise DatasetError(f"image {img.height}x{img.width} is smaller than scale {scale}")
    return img.crop(0, 0, h, w)


def degrade(hr: ImageRGB, scale: int, name: str = "") -> SamplePair:
    """HR을 r 배수로 자른 뒤 bicubic 축소로 LR 생성"""
    hr = modcrop(hr, scale)
    lr = bicubic_resize(hr, hr.height // scale, hr.width // scale)
    return SamplePair(lr, hr, scale, name)


def sample_patch(pair: SamplePair, patch_lr: int, rng: np.random.Generator) -> SamplePair:
    """정렬된 무작위 crop: HR 오프셋 = r x LR 오프셋"""
    lr, r = pair.lr, pair.scale
    if lr.height < patch_lr or lr.width < patch_lr:
        raise DatasetError(
            f"{pair.name or 'image'}: LR {lr.height}x{lr.width} smaller than patch {patch_lr}"
        )
    top = int(rng.integers(0, lr.height - patch_lr + 1))
    left = int(rng.integers(0, lr.width - patch_lr + 1))
    return SamplePair(
        lr.crop(top, left, patch_lr, patch_lr),
        pair.hr.crop(top * r, left * r, patch_lr * r, patch_lr * r),
        r,
        pair.name,
    )


def transform(pair: SamplePair, rotation: int, flip: bool) -> SamplePair:
    """rotation: 90도 단위 회전 횟수(반시계), flip: 좌우 반전 (회전 후 적용)"""
    k = rotation % 4
    if k % 2 and (pair.lr.height != pair.lr.width):
        raise ImageError(f"cannot rotate non-square patch {pair.lr.height}x{pair.lr.width} by {90 * k}")

    def apply(img: ImageRGB) -> ImageRGB:
        px = np.rot90(img.pixels, k=k, axes=(0, 1))
        if flip:
            px = px[:, ::-1]
        return ImageRGB(np.ascontiguousarray(px))

    return SamplePair(apply(pair.lr), apply(pair.hr), pair.scale, pair.name)


def augment(pair: SamplePair, rng: np.random.Generator) -> SamplePair:
    """회전 {0,90,180,270}과 좌우 반전을 독립적으로 균등 추출"""
    rotation = int(rng.integers(0, 4))
    flip = bool(rng.integers(0, 2))
    return transform(pair, rotation, flip)


class SrDataset:
    """<root>/HR/*.png (+ 선택적 <root>/LR/X{r}/*.png)"""

    def __init__(self, pairs: list[SamplePair], root: Optional[Path] = None):
        if not pairs:
            raise DatasetError(f"dataset {root or ''} contains no images".strip())
        self.pairs = pairs
        self.root = root

    @classmethod
    def from_directory(cls, root: Path, scale: int) -> "SrDataset":
        root = Path(root)
        hr_dir = root / "HR"
        if not hr_dir.is_dir():
            raise DatasetError(f"{root}: missing HR/ directory")
        lr_dir = root / "LR" / f"X{scale}"
        pairs = []
        for path in sorted(hr_dir.glob("*.png")):
            hr = load_png(path)
            lr_path = lr_dir / path.name
            if lr_path.is_file():
                lr = load_png(lr_path)
                hr_h, hr_w = lr.height * scale, lr.width * scale
                if hr.height < hr_h or hr.width < hr_w:
                    raise DatasetError(f"{path.name}: HR smaller than {scale}x provided LR")
                pairs.append(SamplePair(lr, hr.crop(0, 0, hr_h, hr_w), scale, path.stem))
            else:
                pairs.append(degrade(hr, scale, path.stem))
        logger.info("loaded %d image pairs from %s (x%d)", len(pairs), root, scale)
        return cls(pairs, root)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def scale(self) -> int:
        return self.pairs[0].scale

    def make_batch(
        self, batch_size: int, patch_lr: int, rng: np.random.Generator, augmentation: bool = True
    ) -> tuple[np.ndarray, np.ndarray]:
        lrs, hrs = [], []
        for _ in range(batch_size):
            pair = self.pairs[int(rng.integers(0, len(self.pairs)))]
            patch = sample_patch(pair, patch_lr, rng)
            if augmentation:
                patch = augment(patch, rng)
            lrs.append(patch.lr.to_chw())
            hrs.append(patch.hr.to_chw())
        return np.stack(lrs), np.stack(hrs)

    def lr_patches(self, patch_size: int, count: int, seed: int) -> np.ndarray:
        """분석용 LR 패치 [count, 3, p, p] (증강 없음)"""
        rng = np.random.default_rng(seed)
        lrs, _ = self.make_batch(count, patch_size, rng, augmentation=False)
        return lrs


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    """(seed, iteration)으로 결정되는 난수 스트림"""
    return np.random.default_rng([seed, iteration])


def default_workers() -> int:
    value = os.environ.get(THREADS_ENV)
    if value is None:
        return min(4, os.cpu_count() or 1)
    try:
        return max(1, int(value))
    except ValueError:
        raise DatasetError(f"{THREADS_ENV} must be an integer, got {value!r}") from None


class BatchLoader:
    """작업 스레드가 미리 배치를 만들고 반복 순서대로 넘겨준다"""

    def __init__(
        self,
        dataset: SrDataset,
        batch_size: int,
        patch_lr: int,
        seed: int,
        workers: Optional[int] = None,
        prefetch: int = 4,
    ):
        self.dataset = dataset
        self.batch_size = batch_size
        self.patch_lr = patch_lr
        self.seed = seed
        self.workers = workers or default_workers()
        self.prefetch = max(1, prefetch)

    def build(self, iteration: int) -> Batch:
        lr, hr = self.dataset.make_batch(self.batch_size, self.patch_lr, iteration_rng(self.seed, iteration))
        return Batch(lr, hr, iteration)

    def iterate(self, start: int, stop: int) -> Iterator[Batch]:
        """[start, stop) 반복의 배치 (bounded queue)"""
        with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="emt-data") as pool:
            queue: deque[Future[Batch]] = deque()
            next_it = start
            while next_it < stop and len(queue) < self.prefetch:
                queue.append(pool.submit(self.build, next_it))
                next_it += 1
            while queue:
                batch = queue.popleft().result()
                if next_it < stop:
                    queue.append(pool.submit(self.build, next_it))
                    next_it += 1
                yield batch
