"""Run registry tests"""

import math

import pytest

from src.core.config import ModelConfig, TrainConfig
from src.data.database import DatabaseManager, default_db_path
from src.data.models import TrainingRun
from src.services.evaluation import EvalReport, EvalRow
from src.services.registry import RunRegistry


@pytest.fixture
def registry():
    return RunRegistry()


def test_database_lives_under_emt_home(isolated_home, registry):
    assert default_db_path() == isolated_home / "registry.db"
    assert registry.db.db_path.is_file()
    assert DatabaseManager.get_instance() is registry.db


def test_run_lifecycle(registry, tmp_path):
    run_id = registry.start_run(
        ModelConfig.tiny(2), TrainConfig.desk().with_(seed=3), tmp_path / "out", tmp_path / "data",
        tmp_path / "tiny.cfg",
    )
    [running] = registry.recent_runs()
    assert (running.id, running.status, running.seed, running.scale) == (run_id, "running", 3, 2)
    assert running.finished_at is None

    registry.finish_run(run_id, 2000, 0.0123)
    [done] = registry.recent_runs()
    assert (done.status, done.iterations, done.final_loss) == ("finished", 2000, 0.0123)
    assert done.finished_at is not None

    with registry.db.session() as session:
        row = session.get(TrainingRun, run_id)
        assert row.model_config["channels"] == "20"
        assert row.train_config["seed"] == "3"
        assert row.config_path == str(tmp_path / "tiny.cfg")


def test_failed_run_keeps_the_message(registry, tmp_path):
    run_id = registry.start_run(ModelConfig.tiny(2), TrainConfig.desk(), tmp_path, start_iteration=500)
    registry.fail_run(run_id, "non-finite loss nan at iteration 512", 511)
    with registry.db.session() as session:
        row = session.get(TrainingRun, run_id)
        assert row.status == "failed"
        assert row.start_iteration == 500 and row.iterations == 511
        assert "iteration 512" in row.error_message


def test_recent_runs_newest_first(registry, tmp_path):
    ids = [registry.start_run(ModelConfig.tiny(2), TrainConfig.desk(), tmp_path / str(i)) for i in range(4)]
    assert [r.id for r in registry.recent_runs(limit=2)] == ids[::-1][:2]


def test_evaluations_store_inf_as_null(registry):
    report = EvalReport("bicubic", "data/Set5", 2, 0, [EvalRow("baby", math.inf, 1.0), EvalRow("bird", 30.0, 0.9)])
    assert registry.record_evaluation(report) == 2
    other = EvalReport("runs/ckpt_10", "data/Set5", 2, 10, [EvalRow("baby", 31.0, 0.9)])
    registry.record_evaluation(other)

    rows = registry.evaluations("bicubic")
    assert [(r.image, r.psnr) for r in rows] == [("baby", None), ("bird", 30.0)]
    assert len(registry.evaluations()) == 3


def test_checkpoint_evaluations_link_to_their_run(registry, tmp_path):
    registry.start_run(ModelConfig.tiny(2), TrainConfig.desk(), tmp_path / "other")
    run_id = registry.start_run(ModelConfig.tiny(2), TrainConfig.desk(), tmp_path / "tiny_x2")
    report = EvalReport(str(tmp_path / "tiny_x2" / "ckpt_2000"), "data/Set5", 2, 2000, [EvalRow("baby", 31.0, 0.9)])
    registry.record_evaluation(report)
    registry.record_evaluation(EvalReport("bicubic", "data/Set5", 2, 0, [EvalRow("baby", 30.0, 0.9)]))

    linked, baseline = registry.evaluations()
    assert linked.run_id == run_id
    assert baseline.run_id is None
    with registry.db.session() as session:
        assert [e.image for e in session.get(TrainingRun, run_id).evaluations] == ["baby"]


def test_unknown_checkpoint_directory_stays_unlinked(registry, tmp_path):
    registry.start_run(ModelConfig.tiny(2), TrainConfig.desk(), tmp_path / "tiny_x2")
    assert registry.run_for_checkpoint(tmp_path / "elsewhere" / "ckpt_10") is None
