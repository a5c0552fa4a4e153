"""Trial libraries for the interaction, local-force and diffusivity blocks.

Column order is always ``[K block | V block | S block]``:

* K terms carry the gradient of a candidate interaction potential, evaluated at offsets.
* V terms carry a candidate drift field gradV_j (for the presets listed as
  drift components, the field itself is the library entry).
* S terms carry the matrix field (sigma_j sigma_j^T)(x).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from wsindy_ips import kernels
from wsindy_ips.density import Grid

BLOCKS = ("K", "V", "S")
SVD_TOL = 1e-8


@dataclass(frozen=True)
class Term:
    descriptor: str
    block: str
    fn: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.block not in BLOCKS:
            raise ValueError(f"unknown block {self.block!r}")


@dataclass(frozen=True)
class TrialLibrary:
    d: int
    terms: tuple[Term, ...]
    delta: Optional[float] = None
    name: str = "custom"
    notes: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.terms:
            raise ValueError("empty library")
        desc = [t.descriptor for t in self.terms]
        if len(set(desc)) != len(desc):
            dup = sorted({x for x in desc if desc.count(x) > 1})
            raise ValueError(f"duplicate descriptors: {dup}")
        order = [BLOCKS.index(t.block) for t in self.terms]
        if order != sorted(order):
            raise ValueError("terms must be ordered K, V, S")
        for t in self.terms:
            if t.block == "K":
                g0 = t.fn(np.zeros((1, self.d)))
                if np.any(g0 != 0):
                    raise ValueError(f"{t.descriptor}: gradient must vanish at the origin")

    @property
    def J(self) -> int:
        return len(self.terms)

    @property
    def descriptors(self) -> list[str]:
        return [t.descriptor for t in self.terms]

    @property
    def blocks(self) -> list[str]:
        return [t.block for t in self.terms]

    def block_size(self, block: str) -> int:
        return sum(t.block == block for t in self.terms)

    def block_slice(self, block: str) -> slice:
        idx = [i for i, t in enumerate(self.terms) if t.block == block]
        if not idx:
            return slice(0, 0)
        return slice(idx[0], idx[-1] + 1)

    def by_block(self, block: str) -> list[Term]:
        return [t for t in self.terms if t.block == block]

    def coefficient_vector(self, coeffs: dict[str, float]) -> np.ndarray:
        """Align a descriptor -> value dict to the library columns."""
        missing = sorted(set(coeffs) - set(self.descriptors))
        if missing:
            raise KeyError(f"true terms absent from library {self.name!r}: {missing}")
        return np.array([coeffs.get(d, 0.0) for d in self.descriptors])

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "d": self.d,
            "J": self.J,
            "block_sizes": {b: self.block_size(b) for b in BLOCKS},
            "delta": self.delta,
            "svd_tol": SVD_TOL,
            "terms": self.descriptors,
            "notes": list(self.notes),
        }

    # evaluations on a grid -------------------------------------------------

    def drift_field(self, w: np.ndarray, grid: Grid) -> np.ndarray:
        """sum_j w_j gradV_j on grid centers, shape (*n, d)."""
        x = grid.points()
        out = np.zeros_like(x)
        for wj, t in zip(w[self.block_slice("V")], self.by_block("V")):
            if wj != 0:
                out += wj * t.fn(x)
        return out

    def interaction_field(self, w: np.ndarray, grid: Grid) -> np.ndarray:
        """sum_j w_j gradK_j on C - C, shape (*(2n-1), d)."""
        x = grid.offset_points()
        out = np.zeros_like(x)
        for wj, t in zip(w[self.block_slice("K")], self.by_block("K")):
            if wj != 0:
                out += wj * _zero_origin(t.fn(x), grid)
        return out

    def diffusion_field(self, w: np.ndarray, grid: Grid) -> np.ndarray:
        """sum_j w_j (sigma_j sigma_j^T) on grid centers, shape (*n, d, d)."""
        x = grid.points()
        out = np.zeros(x.shape + (self.d,))
        for wj, t in zip(w[self.block_slice("S")], self.by_block("S")):
            if wj != 0:
                out += wj * t.fn(x)
        return out


def _zero_origin(vals: np.ndarray, grid: Grid) -> np.ndarray:
    center = tuple(k - 1 for k in grid.n)
    vals = np.array(vals, dtype=float)
    vals[center] = 0.0
    return vals


# ---------------------------------------------------------------- presets


def _cos2(m: int, n: int):
    def f(x):
        return np.cos(m * x[..., 0]) * np.cos(n * x[..., 1])

    return f


def _unit_drift(f, axis: int, d: int):
    def g(x):
        out = np.zeros(x.shape[:-1] + (d,))
        out[..., axis] = f(x)
        return out

    return g


def _matrix(f, entries, d: int):
    def a(x):
        out = np.zeros(x.shape[:-1] + (d, d))
        v = f(x)
        for p, q in entries:
            out[..., p, q] = v
        return out

    return a


def _monomial1d(m: int):
    def f(x):
        return x[..., 0] ** m

    return f


def _monomial_grad2d(m: int, n: int):
    def g(x):
        x1, x2 = x[..., 0], x[..., 1]
        gx = m * x1 ** max(m - 1, 0) * x2**n if m > 0 else np.zeros_like(x1)
        gy = n * x1**m * x2 ** max(n - 1, 0) if n > 0 else np.zeros_like(x1)
        return np.stack([gx, gy], axis=-1)

    return g


def _powers(ms) -> list[Term]:
    return [Term(f"K:|x|^{m}", "K", kernels.power_grad(m)) for m in ms]


def _qanr1d() -> TrialLibrary:
    terms = _powers(range(1, 8))
    terms += [Term(f"V:x^{m}", "V", (lambda f: lambda x: f(x)[..., None])(_monomial1d(m))) for m in (0, 2, 3, 4, 5, 6, 7, 8)]
    terms += [Term(f"S:x^{m}", "S", (lambda f: lambda x: f(x)[..., None, None])(_monomial1d(m))) for m in range(9)]
    return TrialLibrary(
        1,
        tuple(terms),
        name="qanr1d",
        notes=("local drift library omits x^1 (as tabulated); x^1 is nearly collinear with the |x|^2 interaction column",),
    )


def _cos2d() -> TrialLibrary:
    terms = _powers(range(1, 8))
    for i in range(2):
        for m in range(6):
            for n in range(6):
                terms.append(Term(f"V:e{i + 1}*cos({m}x1)cos({n}x2)", "V", _unit_drift(_cos2(m, n), i, 2)))
    for m in range(6):
        terms.append(Term(f"S:cos({m}x1)cos({m}x2)*I", "S", _matrix(_cos2(m, m), [(0, 0), (1, 1)], 2)))
    return TrialLibrary(
        2,
        tuple(terms),
        name="cos2d",
        notes=("isotropic diffusivity candidates cos(m x1)cos(m x2) I, m = 0..5 (85 columns in total)",),
    )


def _log2d(delta: float) -> TrialLibrary:
    terms = _powers(range(2, 7))
    terms += [
        Term("K:[|x|^0.5]_d", "K", kernels.cutoff_grad(kernels.sqrt_fprime, delta)),
        Term("K:[|x|(log|x|-1)]_d", "K", kernels.cutoff_grad(kernels.rlog_fprime, delta)),
        Term("K:[log|x|]_d", "K", kernels.cutoff_grad(kernels.log_fprime, delta)),
    ]
    for total in range(1, 7):
        for m in range(total, -1, -1):
            n = total - m
            terms.append(Term(f"V:x1^{m}x2^{n}", "V", _monomial_grad2d(m, n)))
    for m in range(3):
        for n in range(3):
            for i in range(2):
                terms.append(Term(f"S:cos({m}x1)cos({n}x2)*E{i + 1}{i + 1}", "S", _matrix(_cos2(m, n), [(i, i)], 2)))
    return TrialLibrary(2, tuple(terms), delta=delta, name="log2d")


def build_library(
    preset: Optional[str] = None,
    *,
    d: Optional[int] = None,
    k_terms: Sequence[Term] = (),
    v_terms: Sequence[Term] = (),
    sigma_terms: Sequence[Term] = (),
    delta: float = kernels.LOG_CUTOFF_DELTA,
) -> TrialLibrary:
    """Preset library (``cos2d``, ``qanr1d``, ``log2d``) or one built from explicit term lists."""
    if preset is not None:
        if preset == "qanr1d":
            return _qanr1d()
        if preset == "cos2d":
            return _cos2d()
        if preset == "log2d":
            return _log2d(delta)
        raise KeyError(f"unknown library preset {preset!r}")
    if d is None:
        raise ValueError("custom libraries need the dimension d")
    return TrialLibrary(d, tuple(k_terms) + tuple(v_terms) + tuple(sigma_terms))


# ---------------------------------------------------------------- kernel tables


@dataclass(frozen=True)
class LowRankKernel:
    """One partial derivative table on C - C, dense (d = 1) or as a truncated SVD (d = 2)."""

    shape: tuple[int, ...]
    dense: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None  # (n1, Q)
    v: Optional[np.ndarray] = None  # (n2, Q)
    tol: float = SVD_TOL

    @property
    def rank(self) -> int:
        return 0 if self.s is None else self.s.size

    def reconstruct(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        return (self.u * self.s) @ self.v.T


def tabulate_kernel(term: Term, grid: Grid) -> np.ndarray:
    """Tables of d_{x_i} K_j on C - C, stacked as ``(d, *(2n-1))``; zero offset forced to 0."""
    if term.block != "K":
        raise ValueError(f"{term.descriptor} is not an interaction term")
    vals = _zero_origin(term.fn(grid.offset_points()), grid)
    if not np.all(np.isfinite(vals)):
        raise ValueError(
            f"{term.descriptor}: non-finite kernel gradient on the difference grid; "
            "use the cutoff form [.]_delta for singular potentials"
        )
    return np.moveaxis(vals, -1, 0)


def low_rank(table: np.ndarray, tol: float = SVD_TOL) -> LowRankKernel:
    """Truncated SVD keeping the fewest triples with relative Frobenius error <= tol."""
    table = np.asarray(table, dtype=float)
    if table.ndim == 1:
        return LowRankKernel(table.shape, dense=table, tol=tol)
    if table.ndim != 2:
        raise ValueError("only one- and two-dimensional tables are supported")
    U, s, Vt = np.linalg.svd(table, full_matrices=False)
    total = float(np.sum(s * s))
    if total == 0.0:
        return LowRankKernel(table.shape, s=np.zeros(0), u=U[:, :0], v=Vt[:0].T, tol=tol)
    # tail[r] = energy discarded when keeping r triples
    tail = np.concatenate([np.cumsum((s * s)[::-1])[::-1], [0.0]])
    r = int(np.argmax(np.sqrt(np.maximum(tail, 0.0) / total) <= tol))
    return LowRankKernel(table.shape, s=s[:r].copy(), u=U[:, :r].copy(), v=Vt[:r].T.copy(), tol=tol)


def kernel_tables(lib: TrialLibrary, grid: Grid, tol: float = SVD_TOL) -> list[list[LowRankKernel]]:
    """For each K term, one LowRankKernel per spatial partial."""
    return [[low_rank(tab, tol) for tab in tabulate_kernel(t, grid)] for t in lib.by_block("K")]

