"""Error hierarchy for EMT"""

from typing import Optional


class EmtError(Exception):
    """모든 EMT 오류의 기반 클래스"""

    kind = "emt"


class ShapeError(EmtError):
    """텐서 형상 불일치"""

    kind = "shape"


class ConfigError(EmtError):
    """설정 값/설정 파일 오류"""

    kind = "config"

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ImageError(EmtError):
    """이미지 읽기/쓰기 오류"""

    kind = "image"


class DatasetError(EmtError):
    """데이터셋 구성 오류"""

    kind = "dataset"


class CheckpointError(EmtError):
    """체크포인트 형식/무결성 오류"""

    kind = "checkpoint"


class GradientError(EmtError):
    """역전파 관련 오류"""

    kind = "gradient"


class MetricError(EmtError):
    """평가/분석 지표 계산 오류"""

    kind = "metric"


class TrainingDivergedError(EmtError):
    """학습 중 NaN/Inf 손실 또는 기울기 발생"""

    kind = "diverged"

    def __init__(self, iteration: int, loss: float, parameter: Optional[str] = None):
        self.iteration = iteration
        self.loss = loss
        self.parameter = parameter
        if parameter is None:
            super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        else:
            super().__init__(f"non-finite gradient for {parameter} at iteration {iteration}")
