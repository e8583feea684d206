"""Training loop, loss log and resume tests"""

import numpy as np
import pytest

from src.core.config import TrainConfig
from src.core.errors import ConfigError, DatasetError, TrainingDivergedError
from src.core.model import EmtModel
from src.data.dataset import SrDataset
from src.services import training
from src.services.checkpoint import load_checkpoint
from src.services.evaluation import Upscaler, evaluate
from src.services.training import LossLog, Trainer, checkpoint_name, train


@pytest.fixture
def dataset(dataset_dir):
    return SrDataset.from_directory(dataset_dir, 2)


def test_checkpoint_names():
    assert checkpoint_name(500) == "ckpt_500"


def test_run_writes_log_and_checkpoints(tmp_path, tiny_cfg, fast_train_cfg, dataset):
    seen = []
    trainer = Trainer.create(tiny_cfg, fast_train_cfg, dataset, tmp_path / "run", workers=2)
    result = trainer.run(on_step=lambda it, lr, loss: seen.append(it))

    assert seen == [1, 2, 3, 4]
    assert (result.start_iteration, result.final_iteration) == (0, 4)
    assert result.checkpoints == [tmp_path / "run" / "ckpt_2", tmp_path / "run" / "ckpt_4"]
    assert load_checkpoint(result.checkpoints[-1]).iteration == 4

    log = tmp_path / "run" / "loss.tsv"
    assert log.read_text(encoding="utf-8").splitlines()[0] == "iteration\tlr\tloss"
    rows = LossLog(log).read()
    assert [r[0] for r in rows] == [1, 2, 3, 4]
    assert rows[0][1] == pytest.approx(fast_train_cfg.lr_init)
    assert rows[-1][2] == pytest.approx(result.final_loss)
    assert all(r[2] > 0 for r in rows)


def test_zero_learning_rate_keeps_params(tmp_path, tiny_cfg, fast_train_cfg, dataset):
    cfg = fast_train_cfg.with_(lr_init=0.0, lr_min=0.0, total_iters=2)
    trainer = Trainer.create(tiny_cfg, cfg, dataset, tmp_path / "run", workers=1)
    before = {k: v.copy() for k, v in trainer.model.params.arrays().items()}
    trainer.run()
    for name, arr in trainer.model.params.arrays().items():
        np.testing.assert_array_equal(arr, before[name])
    assert trainer.optimizer.t == 2


def test_resume_matches_uninterrupted_run(tmp_path, tiny_cfg, fast_train_cfg, dataset):
    straight = Trainer.create(tiny_cfg, fast_train_cfg, dataset, tmp_path / "a", workers=1)
    straight.run()

    first = Trainer.create(tiny_cfg, fast_train_cfg, dataset, tmp_path / "b", workers=3)
    first.run(stop=2)
    resumed = Trainer.resume(tmp_path / "b" / "ckpt_2", dataset, tmp_path / "b", workers=2)
    assert resumed.iteration == 2
    resumed.run()

    for name, arr in straight.model.params.arrays().items():
        np.testing.assert_array_equal(resumed.model.params[name].data, arr)
    assert resumed.optimizer.t == straight.optimizer.t == 4
    assert (tmp_path / "a" / "ckpt_4").read_bytes() == (tmp_path / "b" / "ckpt_4").read_bytes()
    assert LossLog(tmp_path / "a" / "loss.tsv").read() == LossLog(tmp_path / "b" / "loss.tsv").read()


def test_resume_truncates_later_log_rows(tmp_path, tiny_cfg, fast_train_cfg, dataset):
    Trainer.create(tiny_cfg, fast_train_cfg, dataset, tmp_path / "run", workers=1).run()
    resumed = Trainer.resume(tmp_path / "run" / "ckpt_2", dataset, tmp_path / "run", workers=1)
    resumed.loss_log.open(resumed.iteration)
    assert [r[0] for r in resumed.loss_log.read()] == [1, 2]
    resumed.run()
    assert [r[0] for r in resumed.loss_log.read()] == [1, 2, 3, 4]


def test_diverged_loss_stops_training(tmp_path, tiny_cfg, fast_train_cfg, dataset):
    trainer = Trainer.create(tiny_cfg, fast_train_cfg, dataset, tmp_path / "run", workers=1)
    trainer.model.params.replace("recu.bias", np.full(12, np.nan))
    with pytest.raises(TrainingDivergedError) as info:
        trainer.run()
    assert info.value.iteration == 1
    assert not (tmp_path / "run" / "ckpt_2").exists()


def test_non_finite_gradient_stops_training(tmp_path, tiny_cfg, fast_train_cfg, dataset, monkeypatch):
    trainer = Trainer.create(tiny_cfg, fast_train_cfg, dataset, tmp_path / "run", workers=1)
    before = trainer.model.params["sfeu.weight"].data.copy()

    def poisoned(params):
        grads = {name: p.grad for name, p in params.items()}
        grads["sfeu.weight"] = np.full_like(grads["sfeu.weight"], np.inf)
        return grads

    monkeypatch.setattr(training, "collect_grads", poisoned)
    with pytest.raises(TrainingDivergedError) as info:
        trainer.run()
    assert (info.value.iteration, info.value.parameter) == (1, "sfeu.weight")
    assert "non-finite gradient for sfeu.weight" in str(info.value)
    np.testing.assert_array_equal(trainer.model.params["sfeu.weight"].data, before)


def test_scale_mismatch(tmp_path, tiny_cfg, fast_train_cfg, dataset):
    with pytest.raises(DatasetError):
        Trainer.create(tiny_cfg.with_(scale=3), fast_train_cfg, dataset, tmp_path)


def test_start_iteration_out_of_range(tmp_path, tiny_cfg, fast_train_cfg, dataset):
    model = EmtModel.create(tiny_cfg, dtype="f64")
    with pytest.raises(ConfigError):
        Trainer(model, fast_train_cfg, dataset, tmp_path, start_iteration=5)


def test_train_entry_point(tmp_path, tiny_cfg, fast_train_cfg, dataset):
    result = train(tiny_cfg, fast_train_cfg.with_(total_iters=2), dataset, tmp_path / "run", workers=1)
    assert result.final_iteration == 2
    resumed = train(tiny_cfg, fast_train_cfg.with_(total_iters=3), dataset, tmp_path / "run",
                    resume=tmp_path / "run" / "ckpt_2", workers=1)
    assert (resumed.start_iteration, resumed.final_iteration) == (2, 3)


@pytest.mark.slow
def test_desk_profile_overfits_and_beats_bicubic(tmp_path, tiny_cfg, desk_dataset_dir):
    dataset = SrDataset.from_directory(desk_dataset_dir, 2)
    cfg = TrainConfig.desk()
    assert cfg.patch_lr == 32
    assert min(min(p.lr.height, p.lr.width) for p in dataset.pairs) >= 64
    result = Trainer.create(tiny_cfg, cfg, dataset, tmp_path / "run").run()

    losses = dict(result.losses)
    assert losses[2000] < 0.5 * losses[10]

    emt = evaluate(Upscaler.load(tmp_path / "run" / "ckpt_2000"), dataset)
    bicubic = evaluate(Upscaler.load("bicubic", 2), dataset)
    assert emt.mean_psnr >= bicubic.mean_psnr + 0.5
