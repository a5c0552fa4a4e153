"""Weak-form linear system G w = b built with FFT convolutions.

Conventions
-----------
Test-function derivatives are those of the *reference* bump evaluated at the
offset ``(x_k - x, t_k - t)``.  With that convention the columns are

    G^K_kj = sum_i < d_i psi_k, U (d_i K_j * U) >
    G^V_kj = sum_i < d_i psi_k, U (gradV_j)_i >
    G^S_kj = 1/2 sum_pq < d_pq psi_k, (sigma_j sigma_j^T)_pq U >
    b_k    = < d_t psi_k, U >

and the true coefficients satisfy b ~ G w* with the diffusivity block
carrying sigma sigma^T.

Quadrature weights: the kernel convolution carries h^d (it approximates the
integral over y), and the test-function inner product carries h^d in space
and trapezoid weights in time.  Neither factor is applied twice.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from scipy.signal import fftconvolve

from wsindy_ips.density import Grid, HistogramField
from wsindy_ips.library import LowRankKernel, TrialLibrary, kernel_tables, tabulate_kernel
from wsindy_ips.test_functions import TestBasis

log = logging.getLogger(__name__)


@dataclass
class WeakSystem:
    G: np.ndarray
    b: np.ndarray
    descriptors: list[str]
    blocks: list[str]
    query_shape: tuple[int, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n, J = self.G.shape
        if n == 0 or J == 0:
            raise ValueError("empty system")
        if self.b.shape != (n,):
            raise ValueError("b does not match G")
        if not (np.all(np.isfinite(self.G)) and np.all(np.isfinite(self.b))):
            raise FloatingPointError("non-finite entries in the weak system (kernel or tabulation problem)")

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @property
    def J(self) -> int:
        return self.G.shape[1]

    def block_mask(self, *blocks: str) -> np.ndarray:
        return np.isin(np.array(self.blocks), blocks)


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    w = np.zeros(times.size)
    dt = np.diff(times)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


# ---------------------------------------------------------------- kernel convolution


def _crop(full: np.ndarray, grid: Grid) -> np.ndarray:
    sl = tuple(slice(k - 1, 2 * k - 1) for k in grid.n)
    return full[(Ellipsis, *sl)]


def _fft_len(k: int) -> int:
    # kernel length 2k-1, data length k: entries wrapped by a length-(2k-1)
    # transform land outside the retained window [k-1, 2k-2], so this is an
    # exact linear convolution on C
    return sfft.next_fast_len(2 * k - 1, real=True)


class KernelConvolver:
    """Convolves tabulated kernels on C - C with a stack of density slices.

    The transform of the density is computed once and reused for every table.
    """

    def __init__(self, U: np.ndarray, grid: Grid):
        d = grid.d
        if U.shape[-d:] != tuple(grid.n):
            raise ValueError(f"density shape {U.shape[-d:]} does not match grid {grid.n}")
        self.U = U
        self.grid = grid
        self.axes = tuple(range(-d, 0))
        self.P = tuple(_fft_len(k) for k in grid.n)
        self._Uhat = None
        self._Uhat_last = None

    @property
    def Uhat(self):
        if self._Uhat is None:
            self._Uhat = sfft.rfftn(self.U, s=self.P, axes=self.axes)
        return self._Uhat

    def dense(self, table: np.ndarray) -> np.ndarray:
        khat = sfft.rfftn(table, s=self.P, axes=self.axes)
        full = sfft.irfftn(self.Uhat * khat, s=self.P, axes=self.axes)
        return _crop(full, self.grid) * self.grid.cell_volume

    def lowrank(self, k: LowRankKernel) -> np.ndarray:
        """sum_q s_q u_q (x) v_q applied with one-dimensional transforms only."""
        g = self.grid
        if g.d != 2:
            raise ValueError("rank-Q path is two-dimensional")
        n1, n2 = g.n
        P1, P2 = self.P
        if self._Uhat_last is None:
            self._Uhat_last = sfft.rfft(self.U, n=P2, axis=-1)
        out = np.zeros(self.U.shape)
        for q in range(k.rank):
            vh = sfft.rfft(k.v[:, q], n=P2)
            a = sfft.irfft(self._Uhat_last * vh, n=P2, axis=-1)[..., n2 - 1 : 2 * n2 - 1]
            uh = sfft.rfft(k.u[:, q], n=P1)
            ah = sfft.rfft(a, n=P1, axis=-2)
            b = sfft.irfft(ah * uh[:, None], n=P1, axis=-2)[..., n1 - 1 : 2 * n1 - 1, :]
            out += k.s[q] * b
        return out * g.cell_volume

    def apply(self, kernel, method: str = "dense") -> np.ndarray:
        if isinstance(kernel, LowRankKernel):
            if kernel.dense is not None or method == "dense":
                return self.dense(kernel.reconstruct())
            return self.lowrank(kernel)
        return self.dense(np.asarray(kernel, dtype=float))


def convolve(kernel, U_slice: np.ndarray, grid: Grid, method: str | None = None) -> np.ndarray:
    """Discrete ``h^d sum_y K(x - y) U(y)`` for x on C.

    ``kernel`` is a table on C - C (array) or a LowRankKernel; rank-Q 2D kernels
    use one-dimensional transforms unless ``method="dense"``.
    """
    U_slice = np.asarray(U_slice, dtype=float)
    expected = tuple(2 * k - 1 for k in grid.n)
    shape = kernel.shape if isinstance(kernel, LowRankKernel) else np.shape(kernel)
    if tuple(shape) != expected:
        raise ValueError(f"kernel shape {tuple(shape)} does not match C - C {expected}")
    if method is None:
        method = "lowrank" if isinstance(kernel, LowRankKernel) and kernel.dense is None else "dense"
    return KernelConvolver(U_slice, grid).apply(kernel, method)


# ---------------------------------------------------------------- test-function inner products


class TestIntegrator:
    """Inner products of a space-time field against every test function at once."""

    __test__ = False

    def __init__(self, basis: TestBasis, grid: Grid, times: np.ndarray):
        if basis.d != grid.d:
            raise ValueError("basis and grid dimensions differ")
        self.basis = basis
        self.grid = grid
        self.wt = trapezoid_weights(times)
        self._x = {o: basis.phi_x.stencil(o) for o in (0, 1, 2)}
        self._t = {o: basis.phi_t.stencil(o) for o in (0, 1)}

    @staticmethod
    def _conv_sample(F: np.ndarray, stencil: np.ndarray, axis: int, idx: np.ndarray) -> np.ndarray:
        m = (stencil.size - 1) // 2
        shape = [1] * F.ndim
        shape[axis] = stencil.size
        full = fftconvolve(F, stencil.reshape(shape), mode="full", axes=axis)
        return np.take(full, idx + m, axis=axis)

    def __call__(self, F: np.ndarray, t_order: int = 0, x_orders: Sequence[int] = ()) -> np.ndarray:
        """``sum_l w_l sum_i h^d D psi^ref(x_k - c_i, t_k - t_l) F[l, i]`` on the query lattice."""
        b = self.basis
        x_orders = tuple(x_orders) or (0,) * b.d
        out = self._conv_sample(F * self.wt.reshape((-1,) + (1,) * b.d), self._t[t_order], 0, b.time_idx)
        for a in range(b.d):
            out = self._conv_sample(out, self._x[x_orders[a]], a + 1, b.space_idx[a])
        return out * self.grid.cell_volume


def assemble(
    U: HistogramField,
    lib: TrialLibrary,
    basis: TestBasis,
    kernel_method: str = "dense",
    svd_tol: float = 1e-8,
) -> WeakSystem:
    """Build G and b for the histogram field U, library and test basis."""
    grid = U.grid
    if lib.d != grid.d or basis.d != grid.d:
        raise ValueError("library, basis and density have different dimensions")
    d = grid.d
    vals = U.values
    integ = TestIntegrator(basis, grid, U.times)
    if kernel_method not in ("dense", "lowrank"):
        raise ValueError(f"unknown kernel method {kernel_method!r}")
    cols = []

    def derivative(*axes):
        o = [0] * d
        for a in axes:
            o[a] += 1
        return tuple(o)

    k_terms = lib.by_block("K")
    if k_terms:
        conv = KernelConvolver(vals, grid)
        if kernel_method == "lowrank":
            tables = kernel_tables(lib, grid, svd_tol)
        else:
            tables = [tabulate_kernel(t, grid) for t in k_terms]
        for parts in tables:
            col = np.zeros(basis.shape)
            for a in range(d):
                col += integ(vals * conv.apply(parts[a], kernel_method), 0, derivative(a))
            cols.append(col.ravel())

    pts = grid.points()
    for term in lib.by_block("V"):
        gv = term.fn(pts)
        col = np.zeros(basis.shape)
        for a in range(d):
            if np.any(gv[..., a] != 0):
                col += integ(vals * gv[..., a], 0, derivative(a))
        cols.append(col.ravel())

    for term in lib.by_block("S"):
        A = term.fn(pts)
        col = np.zeros(basis.shape)
        for p in range(d):
            for q in range(d):
                if np.any(A[..., p, q] != 0):
                    col += 0.5 * integ(vals * A[..., p, q], 0, derivative(p, q))
        cols.append(col.ravel())

    G = np.column_stack(cols)
    b = np.ravel(integ(vals, 1, (0,) * d))
    if G.shape[0] < G.shape[1]:
        warnings.warn(f"G has fewer rows ({G.shape[0]}) than columns ({G.shape[1]})", stacklevel=2)
    meta = {
        "grid": {"origin": list(grid.origin), "h": grid.h, "n": list(grid.n)},
        "basis": basis.describe(),
        "library": lib.name,
        "kernel_method": kernel_method,
    }
    return WeakSystem(G, b, lib.descriptors, lib.blocks, basis.shape, meta)


def condition_report(system: WeakSystem) -> dict:
    """Column norms and 2-norm condition number (inf when numerically rank deficient)."""
    G = system.G
    s = np.linalg.svd(G, compute_uv=False)
    cutoff = s[0] * max(G.shape) * np.finfo(float).eps
    kappa = float(s[0] / s[-1]) if s[-1] > cutoff else float("inf")
    return {
        "n": system.n,
        "J": system.J,
        "kappa": kappa,
        "column_norms": np.linalg.norm(G, axis=0).tolist(),
        "b_norm": float(np.linalg.norm(system.b)),
        "singular_values": s.tolist(),
    }


# Dump layout (little-endian):
#   8 bytes   magic b"WSYSDMP1"
#   int64     n, J
#   float64   G, n*J values, row-major
#   float64   b, n values
#   int64     length of the metadata blob
#   bytes     UTF-8 JSON with descriptors, blocks, query_shape, meta

DUMP_MAGIC = b"WSYSDMP1"


def save_system(system: WeakSystem, path) -> None:
    meta = json.dumps(
        {
            "descriptors": system.descriptors,
            "blocks": system.blocks,
            "query_shape": list(system.query_shape),
            "meta": system.meta,
        }
    ).encode()
    with open(Path(path), "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(np.array([system.n, system.J], dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(system.G, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(system.b, dtype="<f8").tobytes())
        fh.write(np.array([len(meta)], dtype="<i8").tobytes())
        fh.write(meta)


def load_system(path) -> WeakSystem:
    raw = Path(path).read_bytes()
    if raw[:8] != DUMP_MAGIC:
        raise ValueError(f"{path}: not a weak-system dump")
    n, J = np.frombuffer(raw, "<i8", 2, 8)
    off = 24
    G = np.frombuffer(raw, "<f8", n * J, off).reshape(n, J).copy()
    off += 8 * n * J
    b = np.frombuffer(raw, "<f8", n, off).copy()
    off += 8 * n
    (k,) = np.frombuffer(raw, "<i8", 1, off)
    meta = json.loads(raw[off + 8 : off + 8 + k].decode())
    return WeakSystem(G, b, meta["descriptors"], meta["blocks"], tuple(meta["query_shape"]), meta["meta"])
