import math

import numpy as np
import pytest

from wsindy_ips.density import Grid
from wsindy_ips.library import build_library
from wsindy_ips.metrics import (
    RecoveryScore,
    aggregate,
    function_errors,
    rate_fit,
    score,
    tpr,
    tpr_drift,
)


def test_tpr_examples():
    w = np.array([1.0, 0.0, 2.0, 0.0])
    assert tpr(w, w) == 1.0
    assert tpr(np.array([1.0, 0, 0, 0]), w) == 0.5
    assert tpr(np.array([1.0, 1, 2, 1]), w) == 0.5
    with pytest.raises(ValueError):
        tpr(np.zeros(4), np.zeros(4))
    with pytest.raises(ValueError):
        tpr(np.ones(3), np.ones(4))


def test_tpr_permutation_invariant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.normal(size=12) * (rng.random(12) < 0.5)
        b = rng.normal(size=12) * (rng.random(12) < 0.5)
        if not (a.any() or b.any()):
            continue
        p = rng.permutation(12)
        assert tpr(a[p], b[p]) == tpr(a, b)


def test_tpr_drift():
    blocks = ["K", "K", "V", "S", "S"]
    true = np.array([1.0, 0, 0, 0.2, 0])
    wrong_sigma = np.array([1.0, 0, 0, 0, 0.3])
    assert tpr_drift(wrong_sigma, true, blocks) == 1.0
    assert tpr(wrong_sigma, true) < 1.0
    assert tpr_drift(np.array([0, 0, 0, 0.2, 0]), true, blocks) == 0.0


def test_function_errors():
    lib = build_library("qanr1d")
    grid = Grid((-3.0,), 6 / 64, (64,))
    w = lib.coefficient_vector({"K:|x|^2": 0.5, "K:|x|^1": -1.0, "S:x^0": 0.2})
    assert function_errors(w, w, lib, grid) == (0.0, 0.0, 0.0)
    one = lib.coefficient_vector({"K:|x|^2": 0.5, "S:x^0": 0.2})
    pert = one.copy()
    pert[lib.descriptors.index("K:|x|^2")] *= 1.01
    eK, eV, eS = function_errors(pert, one, lib, grid)
    assert eK == pytest.approx(0.01) and eV == 0.0 and eS == 0.0
    with pytest.raises(ValueError):
        function_errors(one, w, lib, grid)


def test_score_marks_unrecovered_blocks():
    lib = build_library("qanr1d")
    grid = Grid((-3.0,), 6 / 64, (64,))
    w = lib.coefficient_vector({"K:|x|^2": 0.5, "K:|x|^1": -1.0, "S:x^0": 0.2})
    extra = w.copy()
    extra[lib.descriptors.index("S:x^2")] = 0.01
    s = score(extra, w, lib, grid)
    assert s.tpr == pytest.approx(3 / 4) and s.tpr_drift == 1.0
    assert s.rel_err_K == 0.0 and math.isnan(s.rel_err_sigma)
    assert not s.identified and s.as_dict()["identified"] is False


def test_rate_fit_examples():
    N = np.array([1000, 2000, 4000, 8000])
    assert rate_fit(N, 3 * N**-0.5) == pytest.approx(-0.5)
    assert rate_fit(N, np.full(4, 0.1)) == pytest.approx(0.0, abs=1e-12)
    for bad in ([0.1, 0.0, 0.1, 0.1], [0.1, np.nan, 0.1, 0.1]):
        with pytest.raises(ValueError):
            rate_fit(N, bad)
    with pytest.raises(ValueError):
        rate_fit(N[:2], [1.0, 0.5])
    with pytest.raises(ValueError):
        rate_fit(N[::-1], N**-0.5)


def test_rate_fit_monte_carlo():
    rng = np.random.default_rng(1)
    N = np.array([1000, 2000, 4000, 8000])
    slopes = [rate_fit(N, N**-0.5 * (1 + rng.uniform(-0.1, 0.1, 4))) for _ in range(2000)]
    assert -0.62 <= min(slopes) and max(slopes) <= -0.38


def test_aggregate():
    scores = [
        RecoveryScore(1.0, 1.0, 0.01, 0.0, 0.02),
        RecoveryScore(1.0, 1.0, 0.03, 0.0, 0.04),
        RecoveryScore(0.5, 1.0, 0.02, 0.0, math.nan),
    ]
    agg = aggregate(scores)
    assert agg["trials"] == 3
    assert agg["fraction_identified"] == pytest.approx(2 / 3)
    assert agg["rel_err_K_median"] == pytest.approx(0.02)
    assert agg["rel_err_sigma_mean"] == pytest.approx(0.03)
    with pytest.raises(ValueError):
        aggregate([])
