import numpy as np
import pytest

from amrf.core import Sample, load_samples, save_mask
from amrf.errors import ConfigError, EmptyTrainingSet, MaskNotFound, NoRegionFound
from amrf.metrics import iou
from amrf.segment import (
    AREA_GRID,
    KERNEL_GRID,
    THRESHOLD_GRID,
    BaselineSegmenter,
    OracleSegmenter,
    SegmenterConfig,
    baseline_fit,
    baseline_segment,
    disk,
    fit_grid,
    oracle_segment,
    otsu_level,
    perturb_mask,
    segmenter_from_json,
)
from amrf.synth import SynthSpec, generate_synthetic


@pytest.fixture(scope="module")
def clean_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("clean")
    return load_samples(generate_synthetic(SynthSpec(count=100, seed=31, size=192, prefix="u"), root))


def _fit_kernel(root, blur):
    spec = SynthSpec(count=30, seed=32, size=192, split="train", prefix="s", blur_range=blur)
    pairs = [(s.image, s.mask) for s in load_samples(generate_synthetic(spec, root))]
    return baseline_fit(SegmenterConfig(), pairs).close_kernel


def test_config_json_round_trip():
    for cfg in (SegmenterConfig(), SegmenterConfig(96, "light_on_dark", 7, 200)):
        assert SegmenterConfig.from_json(cfg.to_json()) == cfg


@pytest.mark.parametrize("kwargs", [
    {"threshold": 300}, {"threshold": "mean"}, {"polarity": "up"}, {"close_kernel": 4}, {"min_region_area": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SegmenterConfig(**kwargs)


def test_disk_is_round():
    d = disk(5)
    assert d.shape == (5, 5)
    assert d[2].all() and d[:, 2].all()
    assert not d[0, 0] and not d[4, 4]
    assert disk(1).sum() == 1


def test_otsu_splits_two_levels():
    gray = np.array([[20] * 50 + [200] * 50], np.uint8)
    assert 20 <= otsu_level(gray) < 200


def test_clean_codes_segment_well(clean_set):
    cfg = SegmenterConfig()
    scores = []
    for s in clean_set:
        try:
            scores.append(iou(baseline_segment(cfg, s.image), s.mask))
        except NoRegionFound:
            scores.append(0.0)
    assert np.mean(scores) >= 0.7
    # Observed on this fixture: mean 0.787, minimum 0.381.
    assert min(scores) >= 0.35


def test_output_shape_matches_input(clean_set):
    for s in clean_set[:5]:
        out = baseline_segment(SegmenterConfig(), s.image)
        assert out.shape == s.image.shape[:2] and out.dtype == bool


def test_uniform_gray_has_no_region():
    with pytest.raises(NoRegionFound):
        baseline_segment(SegmenterConfig(), np.full((64, 64, 3), 128, np.uint8))


def test_grid_order():
    grid = fit_grid()
    assert len(grid) == len(THRESHOLD_GRID) * len(KERNEL_GRID) * len(AREA_GRID)
    assert grid[0] == SegmenterConfig("otsu", "dark_on_light", KERNEL_GRID[0], AREA_GRID[0])


def test_single_pair_picks_its_best_cell(clean_set):
    s = clean_set[0]
    best = baseline_fit(SegmenterConfig(), [(s.image, s.mask)])
    scores = []
    for cfg in fit_grid():
        try:
            scores.append(iou(baseline_segment(cfg, s.image), s.mask))
        except NoRegionFound:
            scores.append(0.0)
    first_best = fit_grid()[int(np.argmax(scores))]
    assert best == first_best


def test_fit_empty():
    with pytest.raises(EmptyTrainingSet):
        baseline_fit(SegmenterConfig(), [])


def test_fit_deterministic_across_jobs(clean_set):
    pairs = [(s.image, s.mask) for s in clean_set[:6]]
    assert baseline_fit(SegmenterConfig(), pairs, 1) == baseline_fit(SegmenterConfig(), pairs, 2)


@pytest.mark.xfail(strict=True, reason="blur already bridges dot gaps, so heavy blur lowers the fitted kernel here")
def test_heavy_blur_prefers_larger_kernel(tmp_path):
    assert _fit_kernel(tmp_path / "blur", (9, 11)) > _fit_kernel(tmp_path / "sharp", (1, 1))


def test_heavy_blur_kernel_measured(tmp_path):
    # Measured: sharp fit k=5, blur 9..11 fit k=1.
    assert _fit_kernel(tmp_path / "blur", (9, 11)) < _fit_kernel(tmp_path / "sharp", (1, 1))


def test_oracle_returns_stored_mask(tmp_path, rng):
    m = rng.random((20, 30)) > 0.5
    save_mask(tmp_path / "x1.png", m)
    assert np.array_equal(oracle_segment(tmp_path, "x1"), m)


def test_oracle_missing_id(tmp_path):
    with pytest.raises(MaskNotFound):
        oracle_segment(tmp_path, "nope")


def test_perturb_deterministic():
    m = np.zeros((30, 30), bool)
    m[10:20, 8:22] = True
    a = perturb_mask(m, 2, 99)
    assert np.array_equal(a, perturb_mask(m, 2, 99))
    assert np.array_equal(perturb_mask(m, 0, 99), m)


def test_oracle_adapter_prefers_sample_mask():
    m = np.zeros((8, 8), bool)
    m[2:5, 2:6] = True
    s = Sample("a", np.zeros((8, 8, 3), np.uint8), m, "F1")
    assert np.array_equal(OracleSegmenter().segment(s), m)
    with pytest.raises(MaskNotFound):
        OracleSegmenter().segment(Sample("b", np.zeros((8, 8, 3), np.uint8), None, "F1"))


def test_adapter_from_json(tmp_path):
    seg = segmenter_from_json({"adapter": "baseline", "config": {"threshold_mode": "fixed", "fixed_level": 96}})
    assert isinstance(seg, BaselineSegmenter) and seg.config.threshold == 96
    ora = segmenter_from_json({"adapter": "oracle", "mask_dir": "masks"}, tmp_path)
    assert ora.mask_dir == tmp_path / "masks"
    with pytest.raises(ConfigError):
        segmenter_from_json({"adapter": "unet"})
