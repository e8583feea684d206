"""SQLAlchemy ORM models for the EMT run registry"""

from datetime import datetime, timezone
from typing import List, Optional

from sqlalchemy import DateTime, Float, ForeignKey, Integer, JSON, String, Text
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class Base(DeclarativeBase):
    pass


class TrainingRun(Base):
    """학습 실행 한 번"""
    __tablename__ = "training_runs"

    id: Mapped[int] = mapped_column(primary_key=True)
    config_path: Mapped[Optional[str]] = mapped_column(Text, nullable=True)
    # ModelConfig / TrainConfig 스냅샷 (문자열 값)
    model_config: Mapped[dict] = mapped_column(JSON)
    train_config: Mapped[dict] = mapped_column(JSON)
    seed: Mapped[int] = mapped_column(Integer, default=0)
    scale: Mapped[int] = mapped_column(Integer)
    dataset: Mapped[Optional[str]] = mapped_column(Text, nullable=True)
    output_dir: Mapped[str] = mapped_column(Text)

    # running / finished / failed
    status: Mapped[str] = mapped_column(String(16), default="running", index=True)
    start_iteration: Mapped[int] = mapped_column(Integer, default=0)
    iterations: Mapped[int] = mapped_column(Integer, default=0)
    final_loss: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    error_message: Mapped[Optional[str]] = mapped_column(Text, nullable=True)

    started_at: Mapped[datetime] = mapped_column(DateTime, default=_utcnow, index=True)
    finished_at: Mapped[Optional[datetime]] = mapped_column(DateTime, nullable=True)

    evaluations: Mapped[List["EvaluationRecord"]] = relationship(
        "EvaluationRecord", back_populates="run"
    )


class EvaluationRecord(Base):
    """이미지 한 장의 평가 결과"""
    __tablename__ = "evaluation_records"

    id: Mapped[int] = mapped_column(primary_key=True)
    run_id: Mapped[Optional[int]] = mapped_column(
        ForeignKey("training_runs.id"), nullable=True
    )
    # 체크포인트 경로 또는 "bicubic"
    model: Mapped[str] = mapped_column(Text)
    dataset: Mapped[str] = mapped_column(Text)
    image: Mapped[str] = mapped_column(String(255))
    scale: Mapped[int] = mapped_column(Integer)
    # 동일 이미지면 PSNR은 inf -> NULL 로 저장
    psnr: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    ssim: Mapped[float] = mapped_column(Float)
    created_at: Mapped[datetime] = mapped_column(DateTime, default=_utcnow, index=True)

    run: Mapped[Optional["TrainingRun"]] = relationship(
        "TrainingRun", back_populates="evaluations"
    )
