import numpy as np
import pytest

from wsindy_ips.density import (
    Grid,
    HistogramField,
    average_histograms,
    build_domain,
    density_field,
    histogram,
    histograms,
    load_field,
    save_field,
)
from wsindy_ips.sde_sim import ParticleDataset


def dataset(x, times=None):
    x = np.asarray(x, dtype=float)
    return ParticleDataset(x, np.arange(x.shape[1], dtype=float) if times is None else times)


def test_domain_is_three_sigma_box():
    rng = np.random.default_rng(0)
    x = rng.normal(loc=[1.0, -2.0], scale=[1.0, 2.0], size=(1, 3, 5000, 2))
    g = build_domain(dataset(x))
    s = x.reshape(-1, 2).std(axis=0, ddof=1)
    assert g.n == (128, 128)
    assert g.h == pytest.approx(6 * s.max() / 128)
    (a0, b0), (a1, b1) = g.bounds()
    mean = x.reshape(-1, 2).mean(axis=0)
    assert 0.5 * (a0 + b0) == pytest.approx(mean[0])
    assert 0.5 * (a1 + b1) == pytest.approx(mean[1])
    assert build_domain(dataset(x[..., :1])).n == (256,)


def test_degenerate_domain_rejected():
    with pytest.raises(ValueError, match="standard deviation"):
        build_domain(dataset(np.ones((1, 2, 10, 1))))


def test_cells_are_half_open():
    g = Grid((0.0,), 0.5, (4,))
    u = histogram(np.array([[0.0], [0.5], [1.999], [2.0], [-1e-12]]), g)
    # 2.0 is the upper edge of the last cell, so it is outside the grid
    np.testing.assert_allclose(u * 5 * 0.5, [1, 1, 0, 1])


def test_single_particle_histogram():
    g = Grid((0.0, 0.0), 0.25, (4, 4))
    u = histogram(np.array([[0.3, 0.9]]), g)
    assert u[1, 3] == pytest.approx(1 / 0.25**2)
    assert u.sum() * g.cell_volume == pytest.approx(1.0)


def test_mass_and_dropped_fraction():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 4, 1000, 1))
    g = Grid((-1.0,), 0.02, (100,))
    fields = histograms(dataset(x), g)
    for f, xm in zip(fields, x):
        inside = np.mean((xm[..., 0] >= -1.0) & (xm[..., 0] < 1.0), axis=1)
        np.testing.assert_allclose(f.mass(), inside)
        np.testing.assert_allclose(f.dropped, 1 - inside)


def test_density_field_is_average():
    rng = np.random.default_rng(2)
    data = dataset(rng.normal(size=(3, 2, 500, 2)))
    g = build_domain(data)
    avg = average_histograms(histograms(data, g))
    streamed = density_field(data, g)
    np.testing.assert_allclose(streamed.values, avg.values, atol=1e-12)
    np.testing.assert_allclose(streamed.dropped, avg.dropped)


def test_average_rejects_mismatched_grids():
    t = np.array([0.0])
    a = HistogramField(Grid((0.0,), 1.0, (3,)), np.zeros((1, 3)), t)
    b = HistogramField(Grid((0.0,), 0.5, (3,)), np.zeros((1, 3)), t)
    with pytest.raises(ValueError):
        average_histograms([a, b])
    with pytest.raises(ValueError):
        average_histograms([])


def test_offsets_span_difference_grid():
    g = Grid((0.0, 1.0), 0.1, (5, 3))
    assert g.offset_points().shape == (9, 5, 2)
    np.testing.assert_allclose(g.offsets(1), np.arange(-2, 3) * 0.1)
    assert g.points()[0, 0].tolist() == pytest.approx([0.05, 1.05])


def test_field_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    g = Grid((-1.0, 2.0), 0.1, (4, 5))
    f = HistogramField(g, rng.random((3, 4, 5)), np.array([0.0, 0.5, 1.0]))
    save_field(f, tmp_path / "u")
    back = load_field(tmp_path / "u")
    assert back.grid == g
    np.testing.assert_array_equal(back.values, f.values)
    np.testing.assert_array_equal(back.times, f.times)


def test_bad_grid():
    with pytest.raises(ValueError):
        Grid((0.0,), 0.0, (3,))
    with pytest.raises(ValueError):
        Grid((0.0, 0.0), 1.0, (3,))
