"""L1 training loop for EMT"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..core import ops
from ..core.config import ModelConfig, TrainConfig
from ..core.errors import ConfigError, DatasetError, TrainingDivergedError
from ..core.model import EmtModel, EmtParameters
from ..core.tensor import Tape, Tensor, backward
from ..data.dataset import Batch, BatchLoader, SrDataset
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .optimizer import OptimizerState, adam_step, collect_grads, cosine_lr

logger = logging.getLogger(__name__)

LOSS_LOG = "loss.tsv"
LOSS_LOG_HEADER = "iteration\tlr\tloss"


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """mean |pred - target| (sign(0) = 0)"""
    return ops.l1_mean(pred, target)


def checkpoint_name(iteration: int) -> str:
    return f"ckpt_{iteration}"


@dataclass
class TrainResult:
    """학습 실행 결과"""
    start_iteration: int
    final_iteration: int
    final_loss: Optional[float] = None
    losses: list[tuple[int, float]] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


class LossLog:
    """iteration<TAB>lr<TAB>loss 형식의 학습 로그"""

    def __init__(self, path: Path):
        self.path = Path(path)

    def open(self, start_iteration: int) -> None:
        """재개 시점 이후의 줄은 버리고 이어서 쓴다"""
        kept = [LOSS_LOG_HEADER]
        if start_iteration > 0 and self.path.is_file():
            for line in self.path.read_text(encoding="utf-8").splitlines()[1:]:
                head = line.split("\t", 1)[0]
                if head.isdigit() and int(head) <= start_iteration:
                    kept.append(line)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("\n".join(kept) + "\n", encoding="utf-8")

    def append(self, iteration: int, lr: float, loss: float) -> None:
        with self.path.open("a", encoding="utf-8") as f:
            f.write(f"{iteration}\t{lr!r}\t{loss!r}\n")

    def read(self) -> list[tuple[int, float, float]]:
        rows = []
        for line in self.path.read_text(encoding="utf-8").splitlines()[1:]:
            it, lr, loss = line.split("\t")
            rows.append((int(it), float(lr), float(loss)))
        return rows


class Trainer:
    """반복마다 배치 -> forward -> L1 -> backward -> Adam"""

    def __init__(
        self,
        model: EmtModel,
        train_cfg: TrainConfig,
        dataset: SrDataset,
        output_dir: Path,
        optimizer: Optional[OptimizerState] = None,
        start_iteration: int = 0,
        workers: Optional[int] = None,
    ):
        self.model = model
        self.cfg = train_cfg.validate()
        self.dataset = dataset
        self.output_dir = Path(output_dir)
        self.optimizer = optimizer or OptimizerState.zeros_like(model.params)
        self.optimizer.check_against(model.params)
        self.iteration = start_iteration
        if not 0 <= start_iteration <= self.cfg.total_iters:
            raise ConfigError(f"start iteration {start_iteration} outside 0..{self.cfg.total_iters}")
        if dataset.scale != model.cfg.scale:
            raise DatasetError(f"dataset scale x{dataset.scale} does not match model scale x{model.cfg.scale}")
        self.loader = BatchLoader(dataset, self.cfg.batch_size, self.cfg.patch_lr, self.cfg.seed, workers)
        self.loss_log = LossLog(self.output_dir / LOSS_LOG)

    @classmethod
    def create(
        cls,
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        dataset: SrDataset,
        output_dir: Path,
        workers: Optional[int] = None,
    ) -> "Trainer":
        model = EmtModel.create(model_cfg, train_cfg.seed, train_cfg.dtype, train_cfg.init_std)
        return cls(model, train_cfg, dataset, output_dir, workers=workers)

    @classmethod
    def resume(
        cls,
        path: Path,
        dataset: SrDataset,
        output_dir: Path,
        train_cfg: Optional[TrainConfig] = None,
        workers: Optional[int] = None,
    ) -> "Trainer":
        """체크포인트의 파라미터/모멘트/반복 횟수에서 이어서 학습"""
        ckpt: Checkpoint = load_checkpoint(path)
        model = ckpt.build_model()
        cfg = train_cfg or ckpt.train_cfg
        logger.info("resuming from %s at iteration %d", path, ckpt.iteration)
        return cls(model, cfg, dataset, output_dir, ckpt.optimizer, ckpt.iteration, workers)

    def step(self, batch: Batch) -> tuple[float, float]:
        """한 반복 수행 후 (lr, loss) 반환"""
        params: EmtParameters = self.model.params
        dtype = self.model.dtype
        params.zero_grad()
        with Tape():
            pred = self.model.forward(Tensor(batch.lr, dtype=dtype))
            loss = l1_loss(pred, Tensor(batch.hr, dtype=dtype))
            backward(loss)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(batch.iteration, value)
        grads = collect_grads(params)
        for name, grad in grads.items():
            if grad is not None and not np.isfinite(grad).all():
                raise TrainingDivergedError(batch.iteration, value, name)

        lr = cosine_lr(batch.iteration - 1, self.cfg)
        adam_step(
            params, grads, self.optimizer, lr,
            self.cfg.beta1, self.cfg.beta2, self.cfg.eps_adam,
        )
        self.iteration = batch.iteration
        return lr, value

    def save(self) -> Path:
        return save_checkpoint(
            self.output_dir / checkpoint_name(self.iteration),
            self.model.params, self.optimizer, self.model.cfg, self.cfg, self.iteration,
        )

    def run(
        self,
        stop: Optional[int] = None,
        on_step: Optional[Callable[[int, float, float], None]] = None,
    ) -> TrainResult:
        """현재 반복부터 stop(기본 total_iters)까지 학습"""
        stop = self.cfg.total_iters if stop is None else min(stop, self.cfg.total_iters)
        result = TrainResult(start_iteration=self.iteration, final_iteration=self.iteration)
        self.loss_log.open(self.iteration)
        logger.info(
            "training x%d, iterations %d..%d, batch %d, patch %d, %d parameters",
            self.model.cfg.scale, self.iteration + 1, stop,
            self.cfg.batch_size, self.cfg.patch_lr, self.model.params.count(),
        )
        for batch in self.loader.iterate(self.iteration + 1, stop + 1):
            lr, loss = self.step(batch)
            it = batch.iteration
            self.loss_log.append(it, lr, loss)
            result.losses.append((it, loss))
            result.final_iteration, result.final_loss = it, loss
            if on_step is not None:
                on_step(it, lr, loss)
            if it % self.cfg.log_every == 0:
                logger.info("iter %d lr %.3e loss %.6f", it, lr, loss)
            if it % self.cfg.checkpoint_every == 0 or it == self.cfg.total_iters:
                result.checkpoints.append(self.save())
        return result


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: SrDataset,
    output_dir: Path,
    resume: Optional[Path] = None,
    workers: Optional[int] = None,
) -> TrainResult:
    if resume is not None:
        trainer = Trainer.resume(resume, dataset, output_dir, train_cfg, workers)
        if trainer.model.cfg != model_cfg.validate():
            logger.warning("model config differs from checkpoint; using the checkpoint's architecture")
    else:
        trainer = Trainer.create(model_cfg, train_cfg, dataset, output_dir, workers)
    return trainer.run()
