"""Shared fixtures for the EMT test suite"""

import os

import numpy as np
import pytest

from src.core.config import ModelConfig, TrainConfig, WindowSpec
from src.core.tensor import DType
from src.data.database import DatabaseManager

from helpers import smooth_image, write_png


def pytest_collection_modifyitems(config, items):
    if os.environ.get("EMT_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow: set EMT_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def isolated_home(tmp_path, monkeypatch):
    """실행 기록 DB를 테스트별 임시 디렉토리로"""
    home = tmp_path / "emt-home"
    monkeypatch.setenv("EMT_HOME", str(home))
    DatabaseManager.reset_instance()
    yield home
    DatabaseManager.reset_instance()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grad_cfg():
    """기울기 검사용 작은 구성: C=20, MTB 1개, heads 2, 창 4x2 / 2x4, x2"""
    return ModelConfig(
        channels=20, num_mtb=1, heads=2,
        windows=(WindowSpec(4, 2), WindowSpec(2, 4)), scale=2,
    )


@pytest.fixture
def tiny_cfg():
    return ModelConfig.tiny(2)


@pytest.fixture
def fast_train_cfg():
    return TrainConfig.desk().with_(
        batch_size=2, patch_lr=8, total_iters=4, checkpoint_every=2, log_every=1, dtype=DType.F64,
    )


@pytest.fixture
def dataset_dir(tmp_path, rng):
    """HR 이미지 2장 (48x40, 44x52)"""
    root = tmp_path / "dataset"
    write_png(root / "HR" / "a.png", smooth_image(rng, 48, 40))
    write_png(root / "HR" / "b.png", smooth_image(rng, 44, 52))
    return root


@pytest.fixture
def desk_dataset_dir(tmp_path, rng):
    """데스크 규모 학습용 HR 2장, x2 LR 한 변이 64 이상 (32 패치를 고를 여유)"""
    root = tmp_path / "desk-dataset"
    write_png(root / "HR" / "a.png", smooth_image(rng, 144, 136))
    write_png(root / "HR" / "b.png", smooth_image(rng, 136, 152))
    return root
