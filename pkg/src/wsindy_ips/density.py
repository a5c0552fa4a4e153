"""Computational grid and histogram densities of particle data."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from wsindy_ips.sde_sim import ParticleDataset

DEFAULT_BINS = {1: 256, 2: 128}


@dataclass(frozen=True)
class Grid:
    """Regular grid of cubic cells with side ``h``; ``origin`` is the lower bin edge."""

    origin: tuple[float, ...]
    h: float
    n: tuple[int, ...]

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("bin width must be positive")
        if len(self.origin) != len(self.n) or any(k < 1 for k in self.n):
            raise ValueError("bad grid shape")

    @property
    def d(self) -> int:
        return len(self.n)

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.n[axis]) + 0.5) * self.h

    def points(self) -> np.ndarray:
        """Cell centers as an array of shape ``(*n, d)``."""
        axes = np.meshgrid(*[self.centers(a) for a in range(self.d)], indexing="ij")
        return np.stack(axes, axis=-1)

    def offsets(self, axis: int) -> np.ndarray:
        """Difference-grid coordinates ``i*h`` for ``-(n-1) <= i <= n-1``."""
        k = self.n[axis]
        return np.arange(-(k - 1), k) * self.h

    def offset_points(self) -> np.ndarray:
        """The difference grid C - C as an array of shape ``(*(2n-1), d)``."""
        axes = np.meshgrid(*[self.offsets(a) for a in range(self.d)], indexing="ij")
        return np.stack(axes, axis=-1)

    def bounds(self) -> list[tuple[float, float]]:
        return [(o, o + k * self.h) for o, k in zip(self.origin, self.n)]

    def volume(self) -> float:
        return float(np.prod([k * self.h for k in self.n]))


@dataclass(frozen=True)
class HistogramField:
    grid: Grid
    values: np.ndarray  # (L, *grid.n), probability per volume
    times: np.ndarray
    dropped: Optional[np.ndarray] = None  # fraction of particles outside the grid, per time

    def __post_init__(self):
        if self.values.shape != (self.times.size, *self.grid.n):
            raise ValueError("field shape does not match grid and times")

    def mass(self) -> np.ndarray:
        axes = tuple(range(1, self.values.ndim))
        return self.values.sum(axis=axes) * self.grid.cell_volume

    def scaled(self, c: float) -> "HistogramField":
        return HistogramField(self.grid, self.values * c, self.times, self.dropped)


def build_domain(data: ParticleDataset, bins_per_dim: Optional[int] = None, pooled: bool = False) -> Grid:
    """Rectangle extending three sample standard deviations from the data mean.

    All dimensions share one bin width: each extent is rounded up to the
    widest one, keeping the same bin count and center.
    """
    if data.positions.size == 0:
        raise ValueError("empty dataset")
    d = data.d
    bins = bins_per_dim or DEFAULT_BINS.get(d, 128)
    flat = data.positions.reshape(-1, d)
    mean = flat.mean(axis=0)
    if pooled:
        s = np.full(d, flat.std(ddof=1))
    else:
        s = flat.std(axis=0, ddof=1)
    if np.any(s <= 0):
        raise ValueError("degenerate data: zero standard deviation (all particles coincide)")
    h = float(6.0 * s.max() / bins)
    origin = tuple(float(m - 0.5 * bins * h) for m in mean)
    return Grid(origin=origin, h=h, n=(bins,) * d)


def _cell_index(x: np.ndarray, grid: Grid):
    idx = np.floor((x - np.asarray(grid.origin)) / grid.h).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.asarray(grid.n)), axis=1)
    flat = np.ravel_multi_index(tuple(idx[inside].T), grid.n) if inside.any() else np.empty(0, np.int64)
    return flat, inside


def histogram(positions: np.ndarray, grid: Grid) -> np.ndarray:
    """Histogram density of one snapshot ``(N, d)``: count / (N h^d) per cell.

    Cells are half-open ``[edge, edge + h)``; particles outside the grid are dropped.
    """
    return _binned(positions, grid)[0]


def _binned(positions, grid: Grid):
    positions = np.asarray(positions, dtype=float).reshape(-1, grid.d)
    n = positions.shape[0]
    flat, inside = _cell_index(positions, grid)
    counts = np.bincount(flat, minlength=grid.size).reshape(grid.n)
    return counts / (n * grid.cell_volume), 1.0 - np.count_nonzero(inside) / n


def histograms(data: ParticleDataset, grid: Grid) -> list[HistogramField]:
    """One field per experiment."""
    out = []
    for m in range(data.M):
        vals = np.empty((data.L, *grid.n))
        dropped = np.empty(data.L)
        for ell in range(data.L):
            vals[ell], dropped[ell] = _binned(data.positions[m, ell], grid)
        out.append(HistogramField(grid, vals, np.asarray(data.times), dropped))
    return out


def average_histograms(fields: Sequence[HistogramField]) -> HistogramField:
    """Pointwise mean over experiments."""
    if not fields:
        raise ValueError("no fields to average")
    g, t = fields[0].grid, fields[0].times
    for f in fields[1:]:
        if f.grid != g or not np.array_equal(f.times, t):
            raise ValueError("fields live on different grids or times")
    vals = np.mean([f.values for f in fields], axis=0)
    dropped = None
    if all(f.dropped is not None for f in fields):
        dropped = np.mean([f.dropped for f in fields], axis=0)
    return HistogramField(g, vals, t, dropped)


def density_field(data: ParticleDataset, grid: Grid) -> HistogramField:
    """Experiment-averaged histogram without holding all M fields at once."""
    acc = None
    dropped = np.zeros(data.L)
    for m in range(data.M):
        f = histograms(ParticleDataset(data.positions[m : m + 1], np.asarray(data.times)), grid)[0]
        acc = f.values if acc is None else acc + f.values
        dropped += f.dropped
    return HistogramField(grid, acc / data.M, np.asarray(data.times), dropped / data.M)


# Field export: values saved with numpy's .npy format, geometry in a sidecar
# text file of "key = value" lines (origin, h, n, times).


def save_field(field: HistogramField, path) -> None:
    path = Path(path)
    np.save(path.with_suffix(".npy"), field.values)
    g = field.grid
    lines = [
        f"d = {g.d}",
        "origin = " + " ".join(repr(float(o)) for o in g.origin),
        f"h = {g.h!r}",
        "n = " + " ".join(str(k) for k in g.n),
        "times = " + " ".join(repr(float(t)) for t in field.times),
    ]
    path.with_suffix(".txt").write_text("\n".join(lines) + "\n")


def load_field(path) -> HistogramField:
    path = Path(path)
    meta = {}
    for line in path.with_suffix(".txt").read_text().splitlines():
        k, _, v = line.partition("=")
        meta[k.strip()] = v.split()
    grid = Grid(
        origin=tuple(float(x) for x in meta["origin"]),
        h=float(meta["h"][0]),
        n=tuple(int(x) for x in meta["n"]),
    )
    times = np.array([float(x) for x in meta["times"]])
    return HistogramField(grid, np.load(path.with_suffix(".npy")), times)
