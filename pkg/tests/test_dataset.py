"""Dataset, patch sampling and batch loader tests"""

import numpy as np
import pytest

from src.core.errors import DatasetError, ImageError
from src.data.dataset import (
    BatchLoader, SamplePair, SrDataset, augment, default_workers, degrade, iteration_rng, modcrop,
    sample_patch, transform,
)
from src.data.images import ImageRGB

from helpers import smooth_image, write_png


def nearest_pair(rng, h, w, scale):
    """HR = LR을 픽셀 복제로 키운 것 (정렬 검사용)"""
    lr = rng.uniform(size=(h, w, 3)).astype(np.float32)
    hr = lr.repeat(scale, axis=0).repeat(scale, axis=1)
    return SamplePair(ImageRGB(lr), ImageRGB(hr), scale, "nearest")


def assert_aligned(pair):
    r = pair.scale
    expected = pair.lr.pixels.repeat(r, axis=0).repeat(r, axis=1)
    np.testing.assert_array_equal(pair.hr.pixels, expected)


# --- directory loading ---

@pytest.mark.parametrize("scale,sizes", [(2, [(24, 20), (22, 26)]), (3, [(16, 13), (14, 17)])])
def test_from_directory_degrades_hr(dataset_dir, scale, sizes):
    ds = SrDataset.from_directory(dataset_dir, scale)
    assert len(ds) == 2 and ds.scale == scale
    assert [p.name for p in ds.pairs] == ["a", "b"]
    for pair, (h, w) in zip(ds.pairs, sizes):
        assert (pair.lr.height, pair.lr.width) == (h, w)
        assert (pair.hr.height, pair.hr.width) == (h * scale, w * scale)


def test_provided_lr_overrides_degradation(dataset_dir, rng):
    lr_pixels = smooth_image(rng, 20, 18)
    write_png(dataset_dir / "LR" / "X2" / "a.png", lr_pixels)
    ds = SrDataset.from_directory(dataset_dir, 2)
    a = ds.pairs[0]
    np.testing.assert_allclose(a.lr.pixels, lr_pixels / 255.0, atol=1e-7)
    # HR은 왼쪽 위 기준 40x36으로 잘림
    assert (a.hr.height, a.hr.width) == (40, 36)
    # X3 디렉토리가 없으면 bicubic 생성
    assert SrDataset.from_directory(dataset_dir, 3).pairs[0].lr.height == 16


def test_provided_lr_too_large(dataset_dir, rng):
    write_png(dataset_dir / "LR" / "X2" / "b.png", smooth_image(rng, 30, 30))
    with pytest.raises(DatasetError, match="HR smaller"):
        SrDataset.from_directory(dataset_dir, 2)


def test_empty_or_missing_dataset(tmp_path):
    with pytest.raises(DatasetError, match="missing HR"):
        SrDataset.from_directory(tmp_path, 2)
    (tmp_path / "HR").mkdir()
    with pytest.raises(DatasetError, match="no images"):
        SrDataset.from_directory(tmp_path, 2)


def test_pair_shape_check(rng):
    with pytest.raises(DatasetError):
        SamplePair(ImageRGB(rng.uniform(size=(4, 4, 3))), ImageRGB(rng.uniform(size=(8, 9, 3))), 2)


def test_modcrop_and_degrade(rng):
    hr = ImageRGB(rng.uniform(size=(11, 14, 3)))
    assert modcrop(hr, 4).pixels.shape == (8, 12, 3)
    pair = degrade(hr, 3, "x")
    assert pair.lr.pixels.shape == (3, 4, 3)
    with pytest.raises(DatasetError):
        modcrop(ImageRGB(rng.uniform(size=(2, 5, 3))), 3)


# --- patches and augmentation ---

def test_patches_are_aligned(rng):
    pair = nearest_pair(rng, 12, 10, 3)
    for _ in range(10):
        patch = sample_patch(pair, 4, rng)
        assert patch.lr.pixels.shape == (4, 4, 3)
        assert patch.hr.pixels.shape == (12, 12, 3)
        assert_aligned(patch)


def test_patch_larger_than_image(rng):
    with pytest.raises(DatasetError, match="smaller than patch"):
        sample_patch(nearest_pair(rng, 6, 10, 2), 8, rng)


def test_transform_identities(rng):
    pair = nearest_pair(rng, 5, 5, 2)
    same = transform(pair, 4, False)
    np.testing.assert_array_equal(same.lr.pixels, pair.lr.pixels)
    twice = transform(transform(pair, 0, True), 0, True)
    np.testing.assert_array_equal(twice.hr.pixels, pair.hr.pixels)
    turned = transform(transform(pair, 1, False), 3, False)
    np.testing.assert_array_equal(turned.hr.pixels, pair.hr.pixels)
    rotated = transform(pair, 1, True)
    np.testing.assert_array_equal(rotated.lr.pixels, np.rot90(pair.lr.pixels)[:, ::-1])
    assert_aligned(rotated)


def test_transform_rejects_non_square_quarter_turn(rng):
    pair = nearest_pair(rng, 4, 6, 2)
    with pytest.raises(ImageError):
        transform(pair, 1, False)
    assert transform(pair, 2, True).lr.pixels.shape == (4, 6, 3)


def test_augment_picks_one_of_eight(rng):
    pair = nearest_pair(rng, 4, 4, 2)
    candidates = [transform(pair, r, f).lr.pixels for r in range(4) for f in (False, True)]
    seen = set()
    for _ in range(64):
        out = augment(pair, rng)
        assert_aligned(out)
        matches = [i for i, c in enumerate(candidates) if np.array_equal(c, out.lr.pixels)]
        assert matches
        seen.update(matches)
    assert len(seen) == 8


# --- batches ---

def test_make_batch_layout(dataset_dir, rng):
    ds = SrDataset.from_directory(dataset_dir, 2)
    lr, hr = ds.make_batch(3, 8, rng)
    assert lr.shape == (3, 3, 8, 8) and hr.shape == (3, 3, 16, 16)
    assert lr.dtype == np.float32


def test_batches_depend_only_on_seed_and_iteration(dataset_dir):
    ds = SrDataset.from_directory(dataset_dir, 2)
    a = BatchLoader(ds, 2, 8, seed=5, workers=1).build(7)
    b = BatchLoader(ds, 2, 8, seed=5, workers=3).build(7)
    c = BatchLoader(ds, 2, 8, seed=6, workers=1).build(7)
    np.testing.assert_array_equal(a.lr, b.lr)
    np.testing.assert_array_equal(a.hr, b.hr)
    assert not np.array_equal(a.lr, c.lr)
    assert a.iteration == 7


def test_loader_order_is_independent_of_workers(dataset_dir):
    ds = SrDataset.from_directory(dataset_dir, 2)
    single = list(BatchLoader(ds, 2, 8, seed=1, workers=1, prefetch=1).iterate(3, 10))
    pooled = list(BatchLoader(ds, 2, 8, seed=1, workers=4, prefetch=3).iterate(3, 10))
    assert [b.iteration for b in pooled] == list(range(3, 10))
    for x, y in zip(single, pooled):
        np.testing.assert_array_equal(x.lr, y.lr)
        np.testing.assert_array_equal(x.hr, y.hr)
    # 재개한 스트림은 같은 반복에서 같은 배치
    resumed = next(BatchLoader(ds, 2, 8, seed=1, workers=2).iterate(6, 7))
    np.testing.assert_array_equal(resumed.lr, single[3].lr)


def test_empty_range_yields_nothing(dataset_dir):
    ds = SrDataset.from_directory(dataset_dir, 2)
    assert list(BatchLoader(ds, 1, 4, seed=0, workers=1).iterate(5, 5)) == []


def test_iteration_rng_streams_differ():
    a = iteration_rng(0, 1).integers(0, 1 << 30, 4)
    b = iteration_rng(0, 2).integers(0, 1 << 30, 4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, iteration_rng(0, 1).integers(0, 1 << 30, 4))


def test_lr_patches_are_seeded(dataset_dir):
    ds = SrDataset.from_directory(dataset_dir, 2)
    p = ds.lr_patches(8, 5, seed=3)
    assert p.shape == (5, 3, 8, 8)
    np.testing.assert_array_equal(p, ds.lr_patches(8, 5, seed=3))


def test_worker_count_from_environment(monkeypatch):
    monkeypatch.setenv("EMT_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("EMT_THREADS", "0")
    assert default_workers() == 1
    monkeypatch.setenv("EMT_THREADS", "many")
    with pytest.raises(DatasetError):
        default_workers()
