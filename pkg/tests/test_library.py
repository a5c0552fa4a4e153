import numpy as np
import pytest

from wsindy_ips import kernels
from wsindy_ips.density import Grid
from wsindy_ips.library import (
    Term,
    TrialLibrary,
    build_library,
    kernel_tables,
    low_rank,
    tabulate_kernel,
)


@pytest.mark.parametrize("preset,J,sizes", [("qanr1d", 24, (7, 8, 9)), ("cos2d", 85, (7, 72, 6)), ("log2d", 53, (8, 27, 18))])
def test_preset_sizes(preset, J, sizes):
    lib = build_library(preset)
    assert lib.J == J
    assert tuple(lib.block_size(b) for b in "KVS") == sizes
    assert lib.manifest()["J"] == J
    assert len(set(lib.descriptors)) == J


@pytest.mark.parametrize("preset", ["qanr1d", "cos2d", "log2d"])
def test_interaction_gradients_vanish_at_origin(preset):
    lib = build_library(preset)
    zero = np.zeros((1, lib.d))
    for t in lib.by_block("K"):
        assert np.all(t.fn(zero) == 0)


def test_power_gradient_finite_difference():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 2))
    for m in (1, 2, 3.5):
        g = kernels.power_grad(m)(x)
        eps = 1e-6
        for i in range(2):
            e = np.zeros(2)
            e[i] = eps
            fd = (np.linalg.norm(x + e, axis=1) ** m - np.linalg.norm(x - e, axis=1) ** m) / (2 * eps)
            np.testing.assert_allclose(g[:, i], fd, rtol=1e-6, atol=1e-8)


def test_cutoff_is_continuous_at_delta():
    delta = 0.01
    grad = kernels.cutoff_grad(kernels.log_fprime, delta)
    r = np.array([delta * (1 - 1e-9), delta * (1 + 1e-9)])
    g = grad(np.stack([r, np.zeros(2)], axis=1))[:, 0]
    assert g[0] == pytest.approx(g[1], rel=1e-6)
    # inside the cutoff the radial slope is constant f'(delta)
    inner = grad(np.array([[0.003, 0.004]]))
    assert np.linalg.norm(inner) == pytest.approx(1 / delta)


def test_low_rank_tolerance():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(40, 3)) @ rng.normal(size=(3, 50)) + 1e-12 * rng.normal(size=(40, 50))
    lr = low_rank(a, tol=1e-8)
    assert lr.rank == 3
    assert np.linalg.norm(lr.reconstruct() - a) <= 1e-8 * np.linalg.norm(a)
    full = rng.normal(size=(10, 10))
    assert low_rank(full, tol=1e-8).rank == 10
    assert low_rank(np.zeros((4, 5))).rank == 0
    assert low_rank(np.arange(5.0)).dense is not None


def test_log2d_tables_are_low_rank():
    lib = build_library("log2d")
    grid = Grid((-3.0, -3.0), 6 / 32, (32, 32))
    for tabs, t in zip(kernel_tables(lib, grid), lib.by_block("K")):
        dense = tabulate_kernel(t, grid)
        for lr, ref in zip(tabs, dense):
            assert lr.rank < 63
            assert np.linalg.norm(lr.reconstruct() - ref) <= 1e-8 * np.linalg.norm(ref)


def test_non_finite_table_rejected():
    def singular(x):
        return np.where(x > 0, np.inf, np.where(x < 0, -np.inf, 0.0))

    lib = build_library(d=1, k_terms=[Term("K:singular", "K", singular)])
    with pytest.raises(ValueError, match="non-finite"):
        tabulate_kernel(lib.terms[0], Grid((0.0,), 0.1, (8,)))


def test_coefficient_vector():
    lib = build_library("qanr1d")
    w = lib.coefficient_vector({"K:|x|^2": 0.5, "K:|x|^1": -1.0, "S:x^0": 0.2})
    assert w.shape == (24,) and np.count_nonzero(w) == 3
    assert w[lib.descriptors.index("K:|x|^1")] == -1.0
    with pytest.raises(KeyError, match="x\\^1"):
        lib.coefficient_vector({"V:x^1": 1.0})


def test_library_validation():
    g = kernels.power_grad(2)
    with pytest.raises(ValueError, match="duplicate"):
        TrialLibrary(1, (Term("a", "K", g), Term("a", "K", g)))
    with pytest.raises(ValueError, match="ordered"):
        TrialLibrary(1, (Term("v", "V", lambda x: x), Term("k", "K", g)))
    with pytest.raises(ValueError, match="origin"):
        TrialLibrary(1, (Term("k", "K", lambda x: np.ones_like(x)),))
    with pytest.raises(ValueError):
        Term("x", "Q", g)
    with pytest.raises(KeyError):
        build_library("nope")


@pytest.mark.parametrize("preset,bounds", [("qanr1d", [(-4.0, 4.0)]), ("cos2d", [(-3.0, 3.0)] * 2), ("log2d", [(-3.0, 3.0)] * 2)])
def test_block_columns_are_independent(preset, bounds):
    # each block's functions, sampled on a grid and normalized, are linearly independent
    lib = build_library(preset)
    n = 64 if lib.d == 1 else 24
    h = (bounds[0][1] - bounds[0][0]) / n
    grid = Grid(tuple(b[0] for b in bounds), h, (n,) * lib.d)
    cols = {"K": lib.interaction_field, "V": lib.drift_field, "S": lib.diffusion_field}
    for block, field in cols.items():
        sl = lib.block_slice(block)
        vecs = []
        for j in range(sl.start, sl.stop):
            w = np.zeros(lib.J)
            w[j] = 1.0
            vecs.append(field(w, grid).ravel())
        A = np.array(vecs)
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        assert np.linalg.svd(A, compute_uv=False).min() > 1e-8, block


def test_fields_evaluate_coefficients():
    lib = build_library("qanr1d")
    grid = Grid((-2.0,), 0.5, (8,))
    w = lib.coefficient_vector({"K:|x|^2": 0.5, "K:|x|^1": -1.0, "S:x^0": 0.2, "V:x^2": 1.0})
    np.testing.assert_allclose(lib.interaction_field(w, grid)[..., 0], kernels.qanr_grad(grid.offset_points())[..., 0])
    np.testing.assert_allclose(lib.diffusion_field(w, grid)[..., 0, 0], 0.2)
    np.testing.assert_allclose(lib.drift_field(w, grid)[..., 0], grid.points()[..., 0] ** 2)
