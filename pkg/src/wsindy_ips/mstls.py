"""Modified sequential-thresholded least squares with loss-based threshold selection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DegenerateSolutionError(RuntimeError):
    """Every threshold on the grid produced an empty support."""


def default_lambdas() -> np.ndarray:
    return 10.0 ** np.linspace(-4, 0, 100)


def least_squares(G: np.ndarray, b: np.ndarray, support=None) -> np.ndarray:
    """Minimum-norm least squares restricted to ``support`` (all columns by default).

    Singular values below ``max(n, |S|) * eps * s_max`` are treated as zero.
    """
    G = np.asarray(G, dtype=float)
    b = np.asarray(b, dtype=float)
    J = G.shape[1]
    if support is None:
        idx = np.arange(J)
    else:
        idx = np.flatnonzero(support) if np.asarray(support).dtype == bool else np.asarray(support, dtype=int)
    if idx.size == 0:
        raise ValueError("least squares needs a nonempty support")
    sub = G[:, idx]
    rcond = max(sub.shape) * np.finfo(float).eps
    coef = np.linalg.lstsq(sub, b, rcond=rcond)[0]
    w = np.zeros(J)
    w[idx] = coef
    return w


def bounds(G: np.ndarray, b: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Quasi-dominant-balance bounds ``(L_i, U_i)`` for every column."""
    ratio = np.linalg.norm(b) / np.linalg.norm(G, axis=0)
    lower = lam * np.maximum(1.0, ratio)
    with np.errstate(divide="ignore"):
        upper = np.minimum(1.0, ratio) / lam if lam > 0 else np.full(ratio.shape, np.inf)
    return lower, upper


@dataclass
class ThresholdResult:
    coeffs: np.ndarray
    iterations: int
    degenerate: bool


def mstls_at(
    G: np.ndarray,
    b: np.ndarray,
    lam: float,
    max_iters: Optional[int] = None,
    w0: Optional[np.ndarray] = None,
) -> ThresholdResult:
    """Thresholded least squares at a single ``lam``, iterated to a support fixed point."""
    if not lam >= 0:
        raise ValueError("threshold must be nonnegative")
    G = np.asarray(G, dtype=float)
    J = G.shape[1]
    max_iters = J if max_iters is None else max_iters
    w = least_squares(G, b) if w0 is None else np.array(w0, dtype=float)
    lo, hi = bounds(G, b, lam)
    support = w != 0
    it = 0
    while it < max_iters:
        keep = support & (np.abs(w) >= lo) & (np.abs(w) <= hi)
        if not keep.any():
            return ThresholdResult(np.zeros(J), it, True)
        if np.array_equal(keep, support):
            break
        support = keep
        w = least_squares(G, b, support)
        it += 1
    return ThresholdResult(w, it, False)


def loss(G: np.ndarray, w: np.ndarray, w0: np.ndarray) -> float:
    """``|G(w - w0)| / |G w0| + nnz(w) / J``."""
    return float(np.linalg.norm(G @ (w - w0)) / np.linalg.norm(G @ w0) + np.count_nonzero(w) / G.shape[1])


@dataclass
class SparseSolution:
    coeffs: np.ndarray
    lam: float
    lambdas: np.ndarray
    losses: np.ndarray
    supports: list[np.ndarray] = field(repr=False)
    iterations: int = 0
    residual: float = float("nan")

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coeffs)

    def loss_curve_csv(self, path, descriptors: Optional[Sequence[str]] = None) -> None:
        """One row per threshold: lambda, loss, support size, support terms."""
        with open(Path(path), "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["lambda", "loss", "nnz", "support"])
            for lam, val, sup in zip(self.lambdas, self.losses, self.supports):
                names = [descriptors[i] for i in sup] if descriptors is not None else [str(i) for i in sup]
                out.writerow([f"{lam:.6e}", f"{val:.10e}", len(sup), ";".join(names)])


def select_lambda(G: np.ndarray, b: np.ndarray, lambdas: Optional[Sequence[float]] = None) -> SparseSolution:
    """Run the thresholded solver over a grid and keep the smallest minimizer of the loss.

    Degenerate (empty-support) thresholds are recorded with infinite loss.
    """
    G = np.asarray(G, dtype=float)
    b = np.asarray(b, dtype=float)
    lambdas = np.sort(np.asarray(default_lambdas() if lambdas is None else lambdas, dtype=float))
    if lambdas.size == 0:
        raise ValueError("empty threshold grid")
    w0 = least_squares(G, b)
    if not np.any(G @ w0):
        raise DegenerateSolutionError("least-squares fit is identically zero; b lies outside the span of G")
    losses = np.full(lambdas.size, np.inf)
    results = []
    for i, lam in enumerate(lambdas):
        r = mstls_at(G, b, lam, w0=w0)
        results.append(r)
        if not r.degenerate:
            losses[i] = loss(G, r.coeffs, w0)
    if not np.isfinite(losses).any():
        raise DegenerateSolutionError(
            "every threshold produced an empty model; review the library or the scaling of the data"
        )
    best = int(np.flatnonzero(losses == losses.min())[0])
    w = results[best].coeffs
    return SparseSolution(
        coeffs=w,
        lam=float(lambdas[best]),
        lambdas=lambdas,
        losses=losses,
        supports=[np.flatnonzero(r.coeffs) for r in results],
        iterations=results[best].iterations,
        residual=float(np.linalg.norm(G @ w - b) / np.linalg.norm(b)),
    )
