import warnings

import numpy as np
import pytest
from scipy.integrate import trapezoid

from oracles import direct_convolution, direct_entry
from wsindy_ips.assembly import (
    WeakSystem,
    assemble,
    condition_report,
    convolve,
    load_system,
    save_system,
    trapezoid_weights,
)
from wsindy_ips.density import Grid, HistogramField, build_domain, density_field
from wsindy_ips.experiment import PRESETS, make_init
from wsindy_ips.library import Term, build_library, low_rank, tabulate_kernel
from wsindy_ips.sde_sim import SimConfig, get_model, simulate
from wsindy_ips.test_functions import make_test_basis, support_parameters


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_convolution_matches_double_sum_1d(rng):
    grid = Grid((-1.0,), 2 / 64, (64,))
    U = rng.random(64)
    table = rng.normal(size=127)
    assert rel(convolve(table, U, grid), direct_convolution(table, U, grid)) <= 1e-10


def test_convolution_matches_double_sum_2d(rng):
    grid = Grid((0.0, 0.0), 0.1, (12, 12))
    U = rng.random((12, 12))
    table = rng.normal(size=(23, 23))
    assert rel(convolve(table, U, grid), direct_convolution(table, U, grid)) <= 1e-10


def test_delta_density_reproduces_kernel():
    grid = Grid((-1.0, -1.0), 0.1, (20, 20))
    term = build_library("log2d").by_block("K")[6]
    tab = tabulate_kernel(term, grid)
    U = np.zeros((20, 20))
    U[7, 13] = 1 / grid.cell_volume
    for a in range(2):
        out = convolve(tab[a], U, grid)
        # out(x) = dK(x - c), with x - c at offset index (i - 7, j - 13)
        np.testing.assert_allclose(out, tab[a][19 - 7 : 39 - 7, 19 - 13 : 39 - 13], atol=1e-12)


def test_lowrank_matches_dense(rng):
    grid = Grid((-3.0, -3.0), 6 / 32, (32, 32))
    U = rng.random((3, 32, 32))
    for term in build_library("log2d").by_block("K"):
        for tab in tabulate_kernel(term, grid):
            lr = low_rank(tab, 1e-12)
            dense = convolve(tab, U, grid)
            assert rel(convolve(lr, U, grid, method="lowrank"), dense) <= 1e-8


def test_convolution_shape_checked():
    grid = Grid((0.0,), 1.0, (5,))
    with pytest.raises(ValueError, match="C - C"):
        convolve(np.ones(8), np.ones(5), grid)


def test_assembly_matches_nested_loops(small_qanr, rng):
    U, basis = small_qanr
    lib = build_library("qanr1d")
    system = assemble(U, lib, basis)
    rows = rng.choice(system.n, 8, replace=False)
    cols = rng.choice(lib.J, 8, replace=False)
    for r, c in zip(rows, cols):
        assert system.G[r, c] == pytest.approx(direct_entry(U, lib, basis, r, c), rel=1e-8, abs=1e-12 * np.abs(system.G[:, c]).max())
        assert system.b[r] == pytest.approx(direct_entry(U, lib, basis, r, None), rel=1e-8)


def test_assembly_2d_matches_nested_loops(rng):
    grid = Grid((-1.25, -1.25), 0.25, (10, 10))
    times = np.arange(7) * 0.05
    vals = rng.random((7, 10, 10))
    U = HistogramField(grid, vals, times)
    full = build_library("log2d")
    lib = build_library(d=2, k_terms=full.by_block("K")[5:7], v_terms=full.by_block("V")[:3], sigma_terms=full.by_block("S")[2:5])
    with warnings.catch_warnings():
        # the supports are deliberately small for the oracle's sake
        warnings.simplefilter("ignore")
        basis = make_test_basis(grid, times, 3, 2, 2, 1, 5, 3)
        for method in ("dense", "lowrank"):
            system = assemble(U, lib, basis, kernel_method=method)
            for r in rng.choice(system.n, 2, replace=False):
                for c in range(lib.J):
                    assert system.G[r, c] == pytest.approx(direct_entry(U, lib, basis, r, c), rel=1e-8, abs=1e-14)
                assert system.b[r] == pytest.approx(direct_entry(U, lib, basis, r, None), rel=1e-8)


def test_scaling_is_linear_and_quadratic(small_qanr):
    U, basis = small_qanr
    lib = build_library("qanr1d")
    s1 = assemble(U, lib, basis)
    c = 3.0
    s2 = assemble(HistogramField(U.grid, c * U.values, U.times), lib, basis)
    k = lib.block_slice("K")
    np.testing.assert_allclose(s2.b, c * s1.b, rtol=1e-12, atol=1e-13 * np.abs(s2.b).max())
    np.testing.assert_allclose(s2.G[:, k], c**2 * s1.G[:, k], rtol=1e-10, atol=1e-12 * np.abs(s2.G[:, k]).max())
    rest = slice(k.stop, None)
    np.testing.assert_allclose(s2.G[:, rest], c * s1.G[:, rest], rtol=1e-12, atol=1e-13 * np.abs(s2.G[:, rest]).max())


def test_constant_potential_gives_zero_column(small_qanr):
    U, basis = small_qanr
    lib = build_library(d=1, v_terms=[Term("V:const", "V", lambda x: np.zeros_like(x)), Term("V:x", "V", lambda x: x)])
    G = assemble(U, lib, basis).G
    assert np.all(G[:, 0] == 0) and np.any(G[:, 1] != 0)


def test_trapezoid_weights():
    np.testing.assert_allclose(trapezoid_weights(np.arange(5) * 0.1), [0.05, 0.1, 0.1, 0.1, 0.05])
    f = np.linspace(0, 1, 11) ** 2
    assert trapezoid_weights(np.linspace(0, 1, 11)) @ f == pytest.approx(trapezoid(f, np.linspace(0, 1, 11)))


def test_fewer_rows_than_columns_warns(small_qanr):
    U, _ = small_qanr
    basis = make_test_basis(U.grid, U.times, 8, 4, 20, 5, 5, 3)
    with pytest.warns(UserWarning, match="fewer rows"):
        assemble(U, build_library("qanr1d"), basis)


def test_deterministic_qanr_residual():
    # sigma = 0: the true coefficients should nearly solve the system
    data = simulate(get_model("qanr1d_zero"), make_init(PRESETS["qanr1d"]["init"]), SimConfig(0.001, 10, 8000, 1, 101, seed=2))
    grid = build_domain(data, 256)
    lib = build_library("qanr1d")
    p = support_parameters("qanr1d")
    basis = make_test_basis(grid, data.times, p["m_x"], p["m_t"], p["s_x"], p["s_t"], p["p_x"], p["p_t"])
    system = assemble(density_field(data, grid), lib, basis)
    w = lib.coefficient_vector(get_model("qanr1d_zero").true_coeffs)
    assert np.linalg.norm(system.G @ w - system.b) / np.linalg.norm(system.b) <= 0.05


def test_system_dump_round_trip(small_qanr, tmp_path):
    U, basis = small_qanr
    system = assemble(U, build_library("qanr1d"), basis)
    save_system(system, tmp_path / "sys.bin")
    back = load_system(tmp_path / "sys.bin")
    np.testing.assert_array_equal(back.G, system.G)
    np.testing.assert_array_equal(back.b, system.b)
    assert back.descriptors == system.descriptors and back.query_shape == system.query_shape
    assert back.meta == system.meta
    (tmp_path / "junk.bin").write_bytes(b"x" * 40)
    with pytest.raises(ValueError):
        load_system(tmp_path / "junk.bin")


def test_condition_report(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(30, 4)))
    rep = condition_report(WeakSystem(Q, rng.normal(size=30), list("abcd"), list("KKVV"), (30,)))
    assert rep["kappa"] == pytest.approx(1.0)
    np.testing.assert_allclose(rep["column_norms"], 1.0)
    dup = np.column_stack([Q, Q[:, 0]])
    rep = condition_report(WeakSystem(dup, rng.normal(size=30), list("abcde"), list("KKVVS"), (30,)))
    assert rep["kappa"] == np.inf


def test_weak_system_validation():
    with pytest.raises(FloatingPointError):
        WeakSystem(np.array([[np.nan]]), np.zeros(1), ["a"], ["K"], (1,))
    with pytest.raises(ValueError):
        WeakSystem(np.zeros((2, 1)), np.zeros(3), ["a"], ["K"], (2,))
