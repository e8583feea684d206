"""Run registry: training runs and evaluation results in SQLite"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from sqlalchemy import select

from ..core.config import ModelConfig, TrainConfig
from ..data.database import DatabaseManager
from ..data.models import EvaluationRecord, TrainingRun
from .evaluation import BICUBIC, EvalReport

logger = logging.getLogger(__name__)


@dataclass
class RunSummary:
    """세션 밖에서 쓰는 실행 요약"""
    id: int
    status: str
    scale: int
    seed: int
    iterations: int
    final_loss: Optional[float]
    output_dir: str
    started_at: datetime
    finished_at: Optional[datetime]

    @classmethod
    def from_model(cls, run: TrainingRun) -> "RunSummary":
        return cls(
            id=run.id, status=run.status, scale=run.scale, seed=run.seed,
            iterations=run.iterations, final_loss=run.final_loss,
            output_dir=run.output_dir, started_at=run.started_at, finished_at=run.finished_at,
        )


class RunRegistry:
    """학습/평가 실행 기록"""

    def __init__(self, db: Optional[DatabaseManager] = None):
        self.db = db or DatabaseManager.get_instance()

    def start_run(
        self,
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        output_dir: Path,
        dataset: Optional[Path] = None,
        config_path: Optional[Path] = None,
        start_iteration: int = 0,
    ) -> int:
        with self.db.session() as session:
            run = TrainingRun(
                config_path=str(config_path) if config_path else None,
                model_config=model_cfg.to_dict(),
                train_config=train_cfg.to_dict(),
                seed=train_cfg.seed,
                scale=model_cfg.scale,
                dataset=str(dataset) if dataset else None,
                output_dir=str(output_dir),
                status="running",
                start_iteration=start_iteration,
                iterations=start_iteration,
            )
            session.add(run)
            session.flush()
            run_id = run.id
        logger.debug("registered training run %d", run_id)
        return run_id

    def finish_run(self, run_id: int, iterations: int, final_loss: Optional[float]) -> None:
        with self.db.session() as session:
            run = session.get(TrainingRun, run_id)
            run.status = "finished"
            run.iterations = iterations
            run.final_loss = final_loss
            run.finished_at = datetime.now(timezone.utc)

    def fail_run(self, run_id: int, message: str, iterations: Optional[int] = None) -> None:
        with self.db.session() as session:
            run = session.get(TrainingRun, run_id)
            run.status = "failed"
            run.error_message = message
            if iterations is not None:
                run.iterations = iterations
            run.finished_at = datetime.now(timezone.utc)

    def run_for_checkpoint(self, checkpoint: str | Path) -> Optional[int]:
        """체크포인트가 들어 있는 출력 디렉터리로 학습 실행을 찾는다 (가장 최근 것)"""
        if str(checkpoint) == BICUBIC:
            return None
        directory = Path(checkpoint).resolve().parent
        with self.db.session() as session:
            stmt = select(TrainingRun.id, TrainingRun.output_dir).order_by(TrainingRun.id.desc())
            for run_id, output_dir in session.execute(stmt):
                if Path(output_dir).resolve() == directory:
                    return run_id
        return None

    def record_evaluation(self, report: EvalReport, run_id: Optional[int] = None) -> int:
        """이미지별 결과 저장, 저장한 행 수 반환

        run_id 가 없으면 체크포인트 위치로 학습 실행을 찾아 연결한다.
        """
        if run_id is None:
            run_id = self.run_for_checkpoint(report.model)
            if run_id is not None:
                logger.debug("evaluation of %s linked to run %d", report.model, run_id)
        with self.db.session() as session:
            for row in report.rows:
                session.add(EvaluationRecord(
                    run_id=run_id,
                    model=report.model,
                    dataset=report.dataset,
                    image=row.image,
                    scale=report.scale,
                    psnr=None if math.isinf(row.psnr) else row.psnr,
                    ssim=row.ssim,
                ))
        return len(report.rows)

    def recent_runs(self, limit: int = 10) -> list[RunSummary]:
        with self.db.session() as session:
            stmt = select(TrainingRun).order_by(TrainingRun.id.desc()).limit(limit)
            return [RunSummary.from_model(run) for run in session.scalars(stmt)]

    def evaluations(self, model: Optional[str] = None) -> list[EvaluationRecord]:
        with self.db.session() as session:
            stmt = select(EvaluationRecord).order_by(EvaluationRecord.id)
            if model is not None:
                stmt = stmt.where(EvaluationRecord.model == model)
            return list(session.scalars(stmt))
