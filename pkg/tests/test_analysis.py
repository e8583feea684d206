"""CKA heatmap and mean attention distance analysis tests"""

import csv

import numpy as np
import orjson
import pytest

from src.core.config import AnalysisConfig, ModelConfig
from src.core.errors import MetricError
from src.core.model import EmtModel, EmtParameters
from src.core.recorder import ActivationRecorder, AttentionCapture
from src.core.tensor import Tensor
from src.services.analysis import (
    AnalysisMetadata, cka_heatmap, cka_summary, mad_summary, mad_table, write_cka_csv, write_mad_csv,
)
from src.services.metrics import cka, mean_attention_distance


@pytest.fixture
def model(tiny_cfg):
    return EmtModel.create(tiny_cfg, seed=4, std=0.2)


@pytest.fixture
def patches(rng):
    return rng.uniform(size=(6, 3, 8, 8)).astype(np.float32)


def test_heatmap_layout(model, patches):
    result = cka_heatmap(model, patches, batch_size=4)
    n = 2 + 2 * 6
    assert result.layer_ids[0] == "sfeu" and result.layer_ids[-1] == "recu_in"
    assert result.layer_ids[1] == "mtb0.layer0"
    assert result.matrix.shape == (n, n)
    np.testing.assert_allclose(result.matrix, result.matrix.T)
    np.testing.assert_array_equal(np.diag(result.matrix), 1.0)
    assert ((result.matrix >= 0) & (result.matrix <= 1)).all()


def test_heatmap_matches_direct_cka(model, patches):
    result = cka_heatmap(model, patches, batch_size=6)
    rec = ActivationRecorder()
    model.forward(Tensor(patches), rec)
    for i, j in [(0, 1), (3, 7), (0, 13)]:
        direct = cka(rec.matrix(result.layer_ids[i]), rec.matrix(result.layer_ids[j]))
        assert result.matrix[i, j] == pytest.approx(direct, rel=1e-4, abs=1e-6)


def test_heatmap_does_not_depend_on_batching(model, patches):
    a = cka_heatmap(model, patches, batch_size=1).matrix
    b = cka_heatmap(model, patches, batch_size=5).matrix
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_heatmap_needs_two_patches(model, patches):
    with pytest.raises(MetricError):
        cka_heatmap(model, patches[:1])


def test_identical_layers_have_unit_cka(tiny_cfg, patches):
    # 모든 레이어가 항등이면 sfeu, 각 레이어, recu_in(= 2 F0)의 표현이 모두 같다
    cfg = tiny_cfg.with_(gtl_count=0, ltl_mixer="identity", mtb_conv=False)
    init = EmtParameters.initialize(cfg, seed=2, std=0.2)
    arrays = {k: np.zeros_like(v) if k.startswith("mtb") else v for k, v in init.arrays().items()}
    model = EmtModel(cfg, EmtParameters.from_arrays(arrays))
    result = cka_heatmap(model, patches, batch_size=3)
    assert result.matrix.shape == (14, 14)
    np.testing.assert_allclose(result.matrix, 1.0, atol=1e-9)


def test_mad_rows_match_captured_attention(model, patches, tiny_cfg):
    rows = mad_table(model, patches, batch_size=4)
    # MTB 2개 x GTL 2개 x 절반 2개 x head 2개
    assert len(rows) == 16
    assert {r.layer_id for r in rows} == {"mtb0.layer1", "mtb0.layer4", "mtb1.layer1", "mtb1.layer4"}
    assert {str(r.window) for r in rows} == {"8x2", "2x8"}

    capture = AttentionCapture()
    model.forward(Tensor(patches), capture)
    first = capture.records[0]
    expected = mean_attention_distance(first.attn, first.window)
    got = [r.mad for r in rows if r.layer_id == first.layer_id and r.half == first.half]
    np.testing.assert_allclose(got, expected, rtol=1e-5)
    for r in rows:
        assert 0.0 <= r.mad <= r.window.diagonal


def test_mad_of_initialized_paper_model_is_bounded(rng):
    model = EmtModel.create(ModelConfig.paper(2), seed=0)
    patches = rng.uniform(size=(1, 3, 32, 32)).astype(np.float32)
    rows = mad_table(model, patches, batch_size=1)
    # MTB 6개 x GTL 2개 x 절반 2개 x head 3개
    assert len(rows) == 72
    assert {str(r.window) for r in rows} == {"32x8", "8x32"}
    for r in rows:
        assert 0.0 <= r.mad <= r.window.diagonal


def test_mad_without_gtl_is_empty(tiny_cfg, patches):
    model = EmtModel.create(tiny_cfg.with_(gtl_count=0))
    rows = mad_table(model, patches)
    assert rows == []
    assert mad_summary(rows) == "\n"


def test_csv_outputs(tmp_path, model, patches):
    result = cka_heatmap(model, patches)
    path = write_cka_csv(result, tmp_path / "out" / "cka.csv")
    with path.open(newline="", encoding="utf-8") as f:
        table = list(csv.reader(f))
    assert table[0] == ["layer", *result.layer_ids]
    assert [row[0] for row in table[1:]] == result.layer_ids
    values = np.array([[float(v) for v in row[1:]] for row in table[1:]])
    np.testing.assert_allclose(values, result.matrix, atol=1e-11)

    rows = mad_table(model, patches)
    path = write_mad_csv(rows, tmp_path / "out" / "mad.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "layer,half,window,head,mad"
    assert lines[1].startswith("mtb0.layer1,0,8x2,0,")
    assert len(lines) == 1 + len(rows)


def test_summaries(model, patches):
    text = cka_summary(cka_heatmap(model, patches))
    assert text.startswith("layers: 14\n")
    assert "sfeu -> mtb0.layer0:" in text
    mad_text = mad_summary(mad_table(model, patches))
    assert "mtb0.layer1: mean MAD" in mad_text
    assert "overall:" in mad_text


def test_metadata_json(tmp_path, model):
    cfg = AnalysisConfig(patch_size=8, num_patches=6, batch_size=2, seed=9)
    meta = AnalysisMetadata.build("cka", "runs/x/ckpt_4", tmp_path / "data", cfg, model, ["sfeu", "recu_in"])
    data = orjson.loads(meta.write(tmp_path / "meta" / "metadata.json").read_bytes())
    assert data["analysis"] == "cka"
    assert data["patch_size"] == 8 and data["num_patches"] == 6 and data["seed"] == 9
    assert data["layer_ids"] == ["sfeu", "recu_in"]
    assert data["model_config"]["channels"] == "20"
    assert data["dataset"] == str(tmp_path / "data")
