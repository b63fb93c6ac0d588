import numpy as np
import pytest

from estaware.validation import (DATASET_COLUMNS, Dataset, SyntheticErrorSampler, ValidationGrid,
                                 build_envelope, default_grid, generate_dataset, synthetic_error_sampler)


def test_default_grid():
    g = default_grid()
    assert g.ranges == (10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0)
    assert g.sun_angles == tuple(float(a) for a in range(0, 181, 15))
    assert len(g.sun_angles) == 13
    assert g.rotations_per_angle == 50
    assert g.samples_per_cell == 600
    assert g.n_rows == 8 * 13 * 600


@pytest.mark.parametrize("kw", [dict(ranges=()), dict(ranges=(-1.0,)), dict(sun_angles=(200.0,)),
                                dict(rotations_per_angle=0)])
def test_grid_validation(kw):
    base = dict(ranges=(10.0,), sun_angles=(0.0,))
    base.update(kw)
    with pytest.raises(ValueError):
        ValidationGrid(**base)


def test_sampler_noiseless():
    s = SyntheticErrorSampler(0.1, 0.01, 1e-4, noise=0.0)
    assert s(20.0, 90.0, np.random.default_rng(0)) == pytest.approx(0.1 + 0.2 + 0.81)
    assert synthetic_error_sampler(20.0, 90.0, np.random.default_rng(0), s) == pytest.approx(1.11)


def test_sampler_reproducible_and_monotone():
    a = synthetic_error_sampler(30.0, 45.0, np.random.default_rng(5))
    b = synthetic_error_sampler(30.0, 45.0, np.random.default_rng(5))
    assert a == b
    s = SyntheticErrorSampler()
    rng = np.random.default_rng(0)
    assert s(25.0, 90.0, rng, 600).mean() > s(25.0, 0.0, rng, 600).mean()


def test_sampler_rejects_bad_parameters():
    with pytest.raises(ValueError):
        SyntheticErrorSampler(c0=-1.0)
    with pytest.raises(ValueError):
        SyntheticErrorSampler(noise=2.0)


def test_noiseless_envelope_recovers_coefficients():
    s = SyntheticErrorSampler(0.05, 0.002, 2e-5, noise=0.0)
    res = build_envelope(default_grid(), s, seed=0)
    for r, env in zip(res.grid.ranges, res.per_range):
        assert env.alpha == pytest.approx(2e-5, abs=1e-6)
        assert env.beta == pytest.approx(0.0, abs=1e-6)
        assert env.gamma == pytest.approx(0.05 + 0.002 * r, abs=1e-6)


def test_noisy_envelope_dominates():
    res = build_envelope(default_grid(), seed=1)
    assert len(res.dataset) == 62_400
    assert res.dominates()
    ang = np.asarray(res.grid.sun_angles)
    for i, env in enumerate(res.per_range):
        assert np.all(env(ang) >= res.maxima[i])
    assert np.all(res.combined(ang)[None] >= res.maxima)
    a2, a0 = res.illumination
    s = 2 * np.sin(np.deg2rad(ang) / 2)
    assert np.all(a2 * s**2 + a0 >= res.maxima.max(axis=0) - 1e-12)


def test_cell_maxima_are_maxima():
    grid = ValidationGrid((10.0, 20.0), (0.0, 90.0, 180.0), 4, 3)
    data = generate_dataset(grid, SyntheticErrorSampler(), seed=2)
    M = data.cell_maxima(grid)
    for i, r in enumerate(grid.ranges):
        for j, a in enumerate(grid.sun_angles):
            sel = (data.range_m == r) & (data.sun_angle_deg == a)
            assert sel.sum() == 12
            assert M[i, j] == data.error_norm[sel].max()


def test_dataset_csv_round_trip(tmp_path):
    grid = ValidationGrid((10.0, 20.0), (0.0, 90.0, 180.0), 5, 2)
    data = generate_dataset(grid, SyntheticErrorSampler(), seed=3)
    path = tmp_path / "data.csv"
    data.write_csv(path, ["config_hash=x"])
    assert path.read_text().splitlines()[1] == ",".join(DATASET_COLUMNS)
    back = Dataset.read_csv(path)
    for col in DATASET_COLUMNS:
        assert np.array_equal(getattr(back, col), getattr(data, col))


def test_envelope_from_loaded_dataset_matches(tmp_path):
    grid = ValidationGrid((10.0, 20.0, 30.0), (0.0, 60.0, 120.0, 180.0), 5, 2)
    res = build_envelope(grid, seed=4)
    path = tmp_path / "data.csv"
    res.dataset.write_csv(path)
    again = build_envelope(grid, dataset=Dataset.read_csv(path))
    assert again.combined == res.combined
    assert np.array_equal(again.maxima, res.maxima)


def test_incomplete_dataset_rejected():
    grid = ValidationGrid((10.0, 20.0), (0.0, 90.0, 180.0), 2, 1)
    data = generate_dataset(grid, SyntheticErrorSampler(), seed=0)
    keep = data.range_m == 10.0
    part = Dataset(data.range_m[keep], data.sun_angle_deg[keep], data.rotation_id[keep], data.error_norm[keep])
    with pytest.raises(ValueError):
        build_envelope(grid, dataset=part)
