"""Support-recovery and function-error scores for identified models."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from wsindy_ips.density import Grid
from wsindy_ips.library import TrialLibrary


def _ratio(est: np.ndarray, true: np.ndarray) -> float:
    est, true = np.asarray(est) != 0, np.asarray(true) != 0
    if est.shape != true.shape:
        raise ValueError("coefficient vectors differ in length")
    tp = np.count_nonzero(est & true)
    fn = np.count_nonzero(true & ~est)
    fp = np.count_nonzero(est & ~true)
    if tp + fn + fp == 0:
        raise ValueError("both supports are empty; the ratio is undefined")
    return tp / (tp + fn + fp)


def tpr(w_hat: np.ndarray, w_star: np.ndarray) -> float:
    """TP / (TP + FN + FP) with exact-zero support semantics."""
    return _ratio(w_hat, w_star)


def tpr_drift(w_hat: np.ndarray, w_star: np.ndarray, blocks: Sequence[str]) -> float:
    """The same ratio restricted to the interaction and local-force columns."""
    mask = np.isin(np.asarray(blocks), ("K", "V"))
    return _ratio(np.asarray(w_hat)[mask], np.asarray(w_star)[mask])


def _rel(est: np.ndarray, true: np.ndarray) -> float:
    scale = np.linalg.norm(true)
    diff = np.linalg.norm(est - true)
    if scale == 0:
        return 0.0 if diff == 0 else math.inf
    return float(diff / scale)


def function_errors(
    w_hat: np.ndarray, w_star: np.ndarray, lib: TrialLibrary, grid: Grid, require_identified: bool = True
) -> tuple[float, float, float]:
    """Relative l2 errors of gradK on C - C, gradV on C and sigma sigma^T on C.

    A block's error is nan when its support was not recovered exactly.  With
    ``require_identified`` a full support mismatch raises instead.
    """
    w_hat = np.asarray(w_hat, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    if require_identified and tpr(w_hat, w_star) != 1.0:
        raise ValueError("function errors are only defined for correctly identified models")
    out = []
    for block, fieldfn in (("K", lib.interaction_field), ("V", lib.drift_field), ("S", lib.diffusion_field)):
        sl = lib.block_slice(block)
        if not np.array_equal(w_hat[sl] != 0, w_star[sl] != 0):
            out.append(math.nan)
        elif not np.any(w_star[sl]) and not np.any(w_hat[sl]):
            out.append(0.0)
        else:
            out.append(_rel(fieldfn(w_hat, grid), fieldfn(w_star, grid)))
    return tuple(out)


def rate_fit(N: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(N)."""
    N = np.asarray(N, dtype=float)
    e = np.asarray(errors, dtype=float)
    if N.size < 3 or N.size != e.size:
        raise ValueError("need at least three (N, error) pairs")
    if np.any(np.diff(N) <= 0):
        raise ValueError("N must be increasing")
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be positive and finite")
    return float(np.polyfit(np.log(N), np.log(e), 1)[0])


@dataclass(frozen=True)
class RecoveryScore:
    tpr: float
    tpr_drift: float
    rel_err_K: float
    rel_err_V: float
    rel_err_sigma: float

    @property
    def identified(self) -> bool:
        return self.tpr == 1.0

    def as_dict(self) -> dict:
        return {**asdict(self), "identified": self.identified}


def score(w_hat: np.ndarray, w_star: np.ndarray, lib: TrialLibrary, grid: Grid) -> RecoveryScore:
    errs = function_errors(w_hat, w_star, lib, grid, require_identified=False)
    return RecoveryScore(tpr(w_hat, w_star), tpr_drift(w_hat, w_star, lib.blocks), *errs)


def aggregate(scores: Sequence[RecoveryScore]) -> dict:
    """Mean and median of each score (nan entries skipped) and the identified fraction."""
    if not scores:
        raise ValueError("no scores to aggregate")
    out = {"trials": len(scores), "fraction_identified": float(np.mean([s.identified for s in scores]))}
    for key in ("tpr", "tpr_drift", "rel_err_K", "rel_err_V", "rel_err_sigma"):
        vals = np.array([getattr(s, key) for s in scores], dtype=float)
        ok = vals[np.isfinite(vals)]
        out[f"{key}_mean"] = float(ok.mean()) if ok.size else math.nan
        out[f"{key}_median"] = float(np.median(ok)) if ok.size else math.nan
    return out
