"""Euler-Maruyama simulation of overdamped interacting particle systems.

Each particle follows

    dX_i = (-(1/N) sum_j gradK(X_i - X_j) - gradV(X_i)) dt + sigma(X_i) dB_i

with gradK(0) = 0.  Datasets are stored as ``positions[m, l, i, k]``
(experiment, timepoint, particle, coordinate).
"""

from __future__ import annotations

import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from wsindy_ips import kernels

log = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray], np.ndarray]

# purpose tags for per-(trial, purpose) RNG streams
_STREAM_INIT = 0
_STREAM_BROWNIAN = 1
_STREAM_NOISE = 2


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class IpsModel:
    """Ground-truth particle model and its coefficients in a trial library.

    ``diffusivity`` maps ``(N, d)`` positions to ``(N, d, d)`` matrices.
    ``fast_interaction``, when given, must agree with the direct O(N^2) mean
    pairwise force; it is used only to speed up data generation.
    ``reference`` maps a grid to the coefficient dict the identification
    should be scored against (defaults to ``true_coeffs``).
    """

    name: str
    dimension: int
    library: str
    true_coeffs: dict[str, float]
    interaction_grad: Optional[VectorField] = None
    local_grad: Optional[VectorField] = None
    diffusivity: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fast_interaction: Optional[VectorField] = None
    reference: Optional[Callable[..., dict[str, float]]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if not self.true_coeffs:
            raise ValueError("true_coeffs must be nonempty")
        if self.interaction_grad is not None:
            g0 = self.interaction_grad(np.zeros((1, self.dimension)))
            if np.any(g0 != 0):
                raise ValueError("interaction gradient must vanish at the origin")

    def mean_interaction(self, x: np.ndarray, chunk: int = 512) -> np.ndarray:
        """Direct O(N^2) evaluation of ``(1/N) sum_j gradK(x_i - x_j)``."""
        n = x.shape[0]
        out = np.zeros_like(x)
        if self.interaction_grad is None:
            return out
        for a in range(0, n, chunk):
            diff = x[a : a + chunk, None, :] - x[None, :, :]
            out[a : a + chunk] = self.interaction_grad(diff).sum(axis=1)
        return out / n

    def drift(self, x: np.ndarray, direct: bool = False) -> np.ndarray:
        f = np.zeros_like(x)
        if self.interaction_grad is not None:
            if self.fast_interaction is not None and not direct:
                f -= self.fast_interaction(x)
            else:
                f -= self.mean_interaction(x)
        if self.local_grad is not None:
            f -= self.local_grad(x)
        return f

    def reference_coeffs(self, grid=None) -> dict[str, float]:
        if self.reference is None:
            return dict(self.true_coeffs)
        return self.reference(grid)


@dataclass(frozen=True)
class InitialDistribution:
    """Initial particle law.

    kind = "gaussian": params ``mean``, ``cov``;
    kind = "gaussian_mixture": ``weights``, ``means`` (list of vectors), ``stds``;
    kind = "uniform_disk": ``center``, ``radius``.
    """

    kind: str
    params: dict

    def __post_init__(self):
        p = self.params
        if self.kind == "gaussian":
            cov = np.atleast_2d(np.asarray(p["cov"], dtype=float))
            if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() < -1e-12:
                raise ValueError("covariance must be symmetric positive semidefinite")
        elif self.kind == "gaussian_mixture":
            w = np.asarray(p["weights"], dtype=float)
            if not math.isclose(w.sum(), 1.0, rel_tol=1e-9) or np.any(w < 0):
                raise ValueError("mixture weights must be nonnegative and sum to 1")
            if len(p["means"]) != w.size or len(p["stds"]) != w.size:
                raise ValueError("mixture component lists differ in length")
        elif self.kind == "uniform_disk":
            if p["radius"] <= 0:
                raise ValueError("radius must be positive")
            if len(p["center"]) != 2:
                raise ValueError("uniform_disk is two-dimensional")
        else:
            raise ValueError(f"unknown initial distribution {self.kind!r}")

    @property
    def dimension(self) -> int:
        p = self.params
        if self.kind == "gaussian":
            return len(np.atleast_1d(p["mean"]))
        if self.kind == "gaussian_mixture":
            return len(np.atleast_1d(p["means"][0]))
        return 2

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        p = self.params
        d = self.dimension
        if self.kind == "gaussian":
            mean = np.atleast_1d(np.asarray(p["mean"], dtype=float))
            cov = np.atleast_2d(np.asarray(p["cov"], dtype=float))
            return rng.multivariate_normal(mean, cov, size=n, method="eigh")
        if self.kind == "gaussian_mixture":
            comp = rng.choice(len(p["weights"]), size=n, p=np.asarray(p["weights"], dtype=float))
            means = np.array([np.atleast_1d(m) for m in p["means"]], dtype=float)
            stds = np.asarray(p["stds"], dtype=float)
            return means[comp] + stds[comp, None] * rng.standard_normal((n, d))
        # area-uniform: radius ~ R sqrt(u)
        r = p["radius"] * np.sqrt(rng.random(n))
        th = 2.0 * np.pi * rng.random(n)
        c = np.asarray(p["center"], dtype=float)
        return c + np.column_stack([r * np.cos(th), r * np.sin(th)])


@dataclass(frozen=True)
class SimConfig:
    dt_fine: float
    subsample: int
    N: int
    M: int
    L: int
    seed: int = 0

    def __post_init__(self):
        if not self.dt_fine > 0:
            raise ValueError("dt_fine must be positive")
        if self.subsample < 1:
            raise ValueError("subsample must be >= 1")
        if min(self.N, self.M, self.L) < 1:
            raise ValueError("N, M, L must be positive")

    @property
    def dt_obs(self) -> float:
        return self.dt_fine * self.subsample


@dataclass(frozen=True)
class ParticleDataset:
    positions: np.ndarray  # (M, L, N, d)
    times: np.ndarray  # (L,)

    def __post_init__(self):
        if self.positions.ndim != 4:
            raise ValueError("positions must be (M, L, N, d)")
        if self.positions.shape[1] != self.times.size:
            raise ValueError("times length does not match positions")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        self.positions.setflags(write=False)
        self.times.setflags(write=False)

    @property
    def M(self) -> int:
        return self.positions.shape[0]

    @property
    def L(self) -> int:
        return self.positions.shape[1]

    @property
    def N(self) -> int:
        return self.positions.shape[2]

    @property
    def d(self) -> int:
        return self.positions.shape[3]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.L > 1 else 0.0


def trial_rng(seed: int, trial: int, purpose: int) -> np.random.Generator:
    """Independent stream for (trial, purpose); adding trials never perturbs earlier ones."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(trial, purpose))
    return np.random.Generator(np.random.PCG64(ss))


def _simulate_trial(model: IpsModel, init: InitialDistribution, cfg: SimConfig, trial: int) -> np.ndarray:
    d = model.dimension
    x = init.sample(cfg.N, trial_rng(cfg.seed, trial, _STREAM_INIT))
    bm = trial_rng(cfg.seed, trial, _STREAM_BROWNIAN)
    out = np.empty((cfg.L, cfg.N, d))
    out[0] = x
    sq = math.sqrt(cfg.dt_fine)
    for ell in range(1, cfg.L):
        for _ in range(cfg.subsample):
            step = model.drift(x) * cfg.dt_fine
            if model.diffusivity is not None:
                xi = bm.standard_normal((cfg.N, d))
                step += sq * np.einsum("nij,nj->ni", model.diffusivity(x), xi)
            x = x + step
        if not np.all(np.isfinite(x)):
            raise SimulationError(
                f"{model.name}: non-finite position in trial {trial} at observation {ell}; "
                "the model blew up or dt_fine is too large"
            )
        out[ell] = x
    return out


def simulate(model: IpsModel, init: InitialDistribution, cfg: SimConfig, workers: int = 1) -> ParticleDataset:
    """Simulate ``cfg.M`` independent trials and record ``cfg.L`` observations each.

    Observations are taken at ``t = l * subsample * dt_fine`` for l = 0..L-1.
    """
    if init.dimension != model.dimension:
        raise ValueError("initial distribution and model dimensions differ")
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            blocks = list(ex.map(lambda m: _simulate_trial(model, init, cfg, m), range(cfg.M)))
    else:
        blocks = [_simulate_trial(model, init, cfg, m) for m in range(cfg.M)]
    times = np.arange(cfg.L) * cfg.dt_obs
    return ParticleDataset(np.stack(blocks), times)


def add_extrinsic_noise(data: ParticleDataset, eps: float, seed: int = 0) -> ParticleDataset:
    """Return Y = X + noise with noise ~ N(0, eps^2 ||X||_RMS^2) per scalar entry."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps == 0:
        return data
    x = data.positions
    rms = math.sqrt(float(np.mean(x * x)))
    rng = trial_rng(seed, 0, _STREAM_NOISE)
    y = x + eps * rms * rng.standard_normal(x.shape)
    return ParticleDataset(y, data.times.copy())


def subset(data: ParticleDataset, M: Optional[int] = None, N: Optional[int] = None) -> ParticleDataset:
    p = data.positions[: M or data.M, :, : N or data.N]
    return ParticleDataset(np.array(p), data.times.copy())


# ---------------------------------------------------------------- catalog

QANR_SIGMA = math.sqrt(0.2)
LOG2D_CRITICAL_SIGMA = 1.0 / math.sqrt(4.0 * math.pi)


def _scalar_diffusivity(sigma_of_x: Callable[[np.ndarray], np.ndarray]):
    def diff(x):
        s = sigma_of_x(x)
        d = x.shape[1]
        return s[:, None, None] * np.eye(d)

    return diff


def cos2d_model(omega: float = 1.0) -> IpsModel:
    def local(x):
        return np.ones_like(x)

    def sig(x):
        return np.sqrt(2.0 * (1.0 + 0.95 * np.cos(omega * x[:, 0]) * np.cos(omega * x[:, 1])))

    coeffs = {"V:e1*cos(0x1)cos(0x2)": 1.0, "V:e2*cos(0x1)cos(0x2)": 1.0, "S:cos(0x1)cos(0x2)*I": 2.0}
    reference = None
    if float(omega).is_integer() and 1 <= omega <= 5:
        coeffs[f"S:cos({int(omega)}x1)cos({int(omega)}x2)*I"] = 1.9
    else:
        # scored against the homogenized constant-diffusion model

        def reference(grid):
            from wsindy_ips.experiment import homogenized_reference

            wbar = homogenized_reference(grid, omega)
            return {"V:e1*cos(0x1)cos(0x2)": 1.0, "V:e2*cos(0x1)cos(0x2)": 1.0, "S:cos(0x1)cos(0x2)*I": 2.0 * wbar}

    return IpsModel(
        name=f"cos2d_w{omega:g}",
        dimension=2,
        library="cos2d",
        true_coeffs=coeffs,
        local_grad=local,
        diffusivity=_scalar_diffusivity(sig),
        reference=reference,
        params={"omega": omega},
    )


def qanr1d_model(sigma_mode: str = "const") -> IpsModel:
    """QANR swarm, K = x^2/2 - |x|, V = 0.

    sigma_mode: "zero" (sigma = 0), "const" (sqrt(0.2)) or "linear" (sqrt(0.2)|x - 2|).
    """
    coeffs = {"K:|x|^1": -1.0, "K:|x|^2": 0.5}
    if sigma_mode == "zero":
        diff = None
    elif sigma_mode == "const":
        diff = _scalar_diffusivity(lambda x: np.full(x.shape[0], QANR_SIGMA))
        coeffs["S:x^0"] = 0.2
    elif sigma_mode == "linear":
        diff = _scalar_diffusivity(lambda x: QANR_SIGMA * np.abs(x[:, 0] - 2.0))
        coeffs.update({"S:x^0": 0.8, "S:x^1": -0.8, "S:x^2": 0.2})
    else:
        raise KeyError(f"unknown sigma_mode {sigma_mode!r}")
    return IpsModel(
        name=f"qanr1d_{sigma_mode}",
        dimension=1,
        library="qanr1d",
        true_coeffs=coeffs,
        interaction_grad=kernels.qanr_grad,
        diffusivity=diff,
        fast_interaction=kernels.qanr_mean_force,
        params={"sigma_mode": sigma_mode},
    )


def log2d_model(sigma: float = LOG2D_CRITICAL_SIGMA, delta: float = kernels.LOG_CUTOFF_DELTA) -> IpsModel:
    """Keller-Segel particles: K = (1/2pi)[log|x|]_delta, constant diffusivity."""
    coeffs = {"K:[log|x|]_d": 1.0 / (2.0 * math.pi)}
    diff = None
    if sigma > 0:
        diff = _scalar_diffusivity(lambda x: np.full(x.shape[0], sigma))
        coeffs["S:cos(0x1)cos(0x2)*E11"] = sigma**2
        coeffs["S:cos(0x1)cos(0x2)*E22"] = sigma**2
    return IpsModel(
        name="log2d_critical" if sigma > 0 else "log2d_sigma0",
        dimension=2,
        library="log2d",
        true_coeffs=coeffs,
        interaction_grad=kernels.log2d_grad(delta),
        diffusivity=diff,
        fast_interaction=kernels.log2d_mean_force(delta),
        params={"sigma": sigma, "delta": delta},
    )


_CATALOG = {
    "cos2d_w1": lambda: cos2d_model(1.0),
    "cos2d_w20": lambda: cos2d_model(20.0),
    "qanr1d_zero": lambda: qanr1d_model("zero"),
    "qanr1d_const": lambda: qanr1d_model("const"),
    "qanr1d_linear": lambda: qanr1d_model("linear"),
    "log2d_sigma0": lambda: log2d_model(0.0),
    "log2d_critical": lambda: log2d_model(LOG2D_CRITICAL_SIGMA),
}


def builtin_models() -> dict[str, IpsModel]:
    return {k: f() for k, f in _CATALOG.items()}


def get_model(key: str) -> IpsModel:
    try:
        return _CATALOG[key]()
    except KeyError:
        raise KeyError(f"unknown model {key!r}; choose from {sorted(_CATALOG)}") from None


# ---------------------------------------------------------------- serialization
#
# Binary layout (little endian):
#   8 bytes  magic b"IPSDATA1"
#   4 x int64  M, L, N, d
#   L x float64  times
#   M*L*N*d x float64  positions, row-major in (m, l, i, k)

_MAGIC = b"IPSDATA1"


def save_dataset(data: ParticleDataset, path) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4q", data.M, data.L, data.N, data.d))
        fh.write(np.ascontiguousarray(data.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(data.positions, dtype="<f8").tobytes())


def load_dataset(path) -> ParticleDataset:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a particle dataset file")
    M, L, N, d = struct.unpack_from("<4q", raw, 8)
    off = 8 + 32
    times = np.frombuffer(raw, dtype="<f8", count=L, offset=off).astype(float)
    off += 8 * L
    pos = np.frombuffer(raw, dtype="<f8", count=M * L * N * d, offset=off).astype(float)
    return ParticleDataset(pos.reshape(M, L, N, d), times)


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return replace(cfg, seed=seed)
