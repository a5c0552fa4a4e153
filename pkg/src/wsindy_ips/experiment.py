"""End-to-end experiments: simulate, add noise, bin, assemble, solve and score.

A sweep is the Cartesian product of the ``N``, ``M`` and ``eps`` lists; each
(cell, trial) pair derives its own seed from the base seed and the cell
values, so adding or removing cells never changes the others.
"""

from __future__ import annotations

import configparser
import csv
import itertools
import json
import logging
import math
import time
from io import StringIO
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from wsindy_ips import __version__
from wsindy_ips.assembly import WeakSystem, assemble, condition_report, save_system
from wsindy_ips.density import Grid, build_domain, density_field
from wsindy_ips.library import TrialLibrary, build_library
from wsindy_ips.metrics import RecoveryScore, aggregate, rate_fit, score
from wsindy_ips.mstls import SparseSolution, select_lambda
from wsindy_ips.sde_sim import (
    InitialDistribution,
    IpsModel,
    ParticleDataset,
    SimConfig,
    add_extrinsic_noise,
    get_model,
    simulate,
)
from wsindy_ips.test_functions import make_test_basis, support_parameters

log = logging.getLogger(__name__)

PRESETS = {
    "qanr1d": {
        "model": "qanr1d_const",
        "dt_fine": 0.001,
        "subsample": 10,
        "L": 101,
        "bins": 256,
        "init": {"kind": "gaussian_mixture", "weights": [1 / 3] * 3, "means": [[-1.5], [0.0], [1.5]], "stds": [0.005] * 3},
    },
    "cos2d": {
        "model": "cos2d_w1",
        "dt_fine": 1e-4,
        "subsample": 200,
        "L": 101,
        "bins": 128,
        "init": {"kind": "gaussian", "mean": [0.0, 0.0], "cov": [[1.0, 0.0], [0.0, 1.0]]},
    },
    "log2d": {
        "model": "log2d_critical",
        "dt_fine": 0.0025,
        "subsample": 40,
        "L": 81,
        "bins": 128,
        "init": {"kind": "uniform_disk", "center": [0.0, 0.0], "radius": 2.0},
    },
}


def make_init(spec: dict) -> InitialDistribution:
    spec = dict(spec)
    return InitialDistribution(spec.pop("kind"), spec)


# ---------------------------------------------------------------- homogenization


def homogenized_reference(
    grid: Grid | Sequence[tuple[float, float]],
    omega: float,
    amplitude: float = 0.95,
    tol: float = 1e-6,
    max_panels: int = 4096,
) -> float:
    """Harmonic mean ``|D| / int_D dx dy / (1 + a cos(w x) cos(w y))`` over the grid's rectangle.

    Composite 8-point Gauss-Legendre, doubling the panel count until two
    successive values agree to ``tol`` (relative).
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    if abs(amplitude) >= 1:
        raise ValueError("diffusivity must stay positive (|amplitude| < 1)")
    box = grid.bounds() if isinstance(grid, Grid) else list(grid)
    if len(box) != 2:
        raise ValueError("homogenized reference is two-dimensional")
    (ax, bx), (ay, by) = box
    area = (bx - ax) * (by - ay)
    nodes, weights = leggauss(8)

    def composite(a, b, panels):
        edges = np.linspace(a, b, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        x = (mid[:, None] + half[:, None] * nodes).ravel()
        w = (half[:, None] * weights).ravel()
        return x, w

    panels = max(8, int(math.ceil(omega * max(bx - ax, by - ay) / math.pi)))
    prev = None
    while panels <= max_panels:
        x, wx = composite(ax, bx, panels)
        y, wy = composite(ay, by, panels)
        cx, cy = np.cos(omega * x), np.cos(omega * y)
        total = wx @ (1.0 / (1.0 + amplitude * np.outer(cx, cy))) @ wy
        val = area / total
        if prev is not None and abs(val - prev) <= tol * abs(val):
            return float(val)
        prev = val
        panels *= 2
    raise RuntimeError("homogenized diffusivity quadrature did not converge")


# ---------------------------------------------------------------- configuration


def _ini_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys such as N, M and L are case-sensitive
    return cp


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (int, float)):
        return (float(text),)
    if isinstance(text, str):
        text = text.replace(",", " ").split()
    return tuple(float(t) for t in text)


def _ints(text) -> tuple[int, ...]:
    return tuple(int(round(v)) for v in _floats(text))


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    N: tuple[int, ...]
    M: tuple[int, ...] = (1,)
    eps: tuple[float, ...] = (0.0,)
    trials: int = 10
    seed: int = 0
    model: Optional[str] = None
    dt_fine: Optional[float] = None
    subsample: Optional[int] = None
    L: Optional[int] = None
    init: Optional[dict] = None
    bins: Optional[int] = None
    m_x: Optional[int] = None
    m_t: Optional[int] = None
    s_x: Optional[int] = None
    s_t: Optional[int] = None
    p_x: Optional[int] = None
    p_t: Optional[int] = None
    lambda_min: float = -4.0
    lambda_max: float = 0.0
    lambda_count: int = 100
    kernel_method: str = "dense"
    workers: int = 1
    dump_system: bool = False
    output: Optional[str] = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        for name in ("N", "M", "eps"):
            vals = getattr(self, name)
            if isinstance(vals, (int, float)):
                vals = (vals,)
            object.__setattr__(self, name, tuple(vals))
            if not getattr(self, name):
                raise ValueError(f"sweep axis {name} is empty")
        if any(n < 1 for n in self.N) or any(m < 1 for m in self.M):
            raise ValueError("N and M must be positive")
        if any(e < 0 for e in self.eps):
            raise ValueError("eps must be nonnegative")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.lambda_count < 1:
            raise ValueError("lambda grid is empty")
        if self.kernel_method not in ("dense", "lowrank"):
            raise ValueError("kernel_method must be 'dense' or 'lowrank'")

    def resolved(self) -> "ExperimentConfig":
        """Copy with every preset default filled in."""
        pre = PRESETS[self.preset]
        basis = support_parameters(
            self.preset, m_x=self.m_x, m_t=self.m_t, s_x=self.s_x, s_t=self.s_t, p_x=self.p_x, p_t=self.p_t
        )
        return replace(
            self,
            model=self.model or pre["model"],
            dt_fine=self.dt_fine or pre["dt_fine"],
            subsample=self.subsample or pre["subsample"],
            L=self.L or pre["L"],
            init=self.init or pre["init"],
            bins=self.bins or pre["bins"],
            **basis,
        )

    def cells(self) -> list[tuple[int, int, float]]:
        return list(itertools.product(self.N, self.M, self.eps))

    def lambdas(self) -> np.ndarray:
        return 10.0 ** np.linspace(self.lambda_min, self.lambda_max, self.lambda_count)

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("N", "M", "eps"):
            d[k] = list(d[k])
        return d

    # flat INI layout: one [experiment] section plus optional stage sections
    _SECTIONS = {
        "experiment": ("preset", "model", "N", "M", "eps", "trials", "seed", "workers", "output"),
        "simulation": ("dt_fine", "subsample", "L", "init"),
        "basis": ("bins", "m_x", "m_t", "s_x", "s_t", "p_x", "p_t"),
        "solver": ("lambda_min", "lambda_max", "lambda_count", "kernel_method", "dump_system"),
    }

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in types:
                raise KeyError(f"unknown config key {key!r}")
            if raw is None or raw == "":
                continue
            if key in ("N", "M"):
                kw[key] = _ints(raw)
            elif key == "eps":
                kw[key] = _floats(raw)
            elif key == "init":
                kw[key] = json.loads(raw) if isinstance(raw, str) else dict(raw)
            elif key == "dump_system":
                kw[key] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes", "on")
            elif key in ("preset", "model", "output", "kernel_method"):
                kw[key] = str(raw)
            elif key in ("dt_fine", "lambda_min", "lambda_max"):
                kw[key] = float(raw)
            else:
                kw[key] = int(raw)
        return cls(**kw)

    @classmethod
    def from_ini(cls, path) -> "ExperimentConfig":
        cp = _ini_parser()
        if not cp.read(Path(path)):
            raise FileNotFoundError(path)
        values = {}
        for section in cp.sections():
            if section not in cls._SECTIONS:
                raise KeyError(f"unknown config section [{section}]")
            values.update(cp[section])
        return cls.from_mapping(values)

    def to_ini(self) -> str:
        cp = _ini_parser()
        d = self.as_dict()
        for section, keys in self._SECTIONS.items():
            cp[section] = {}
            for k in keys:
                v = d[k]
                if v is None:
                    continue
                if isinstance(v, list):
                    v = " ".join(str(x) for x in v)
                elif isinstance(v, dict):
                    v = json.dumps(v)
                cp[section][k] = str(v)
        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()


def cell_seed(seed: int, N: int, M: int, eps: float, trial: int) -> int:
    """Seed for one (cell, trial), independent of every other cell."""
    ss = np.random.SeedSequence([seed, N, M, int(round(eps * 1e9)), trial])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------- pipeline


@dataclass
class Identification:
    grid: Grid
    library: TrialLibrary
    system: WeakSystem
    solution: SparseSolution
    kappa: float
    timings: dict


def identify(
    data: ParticleDataset,
    preset: str,
    bins: Optional[int] = None,
    lambdas: Optional[np.ndarray] = None,
    kernel_method: str = "dense",
    **basis_overrides,
) -> Identification:
    """Histogram, weak system and sparse regression for one dataset."""
    timings = {}
    t0 = time.perf_counter()
    grid = build_domain(data, bins or PRESETS[preset]["bins"])
    U = density_field(data, grid)
    timings["histogram"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    lib = build_library(preset)
    p = support_parameters(preset, **basis_overrides)
    basis = make_test_basis(grid, data.times, p["m_x"], p["m_t"], p["s_x"], p["s_t"], p["p_x"], p["p_t"], n_columns=lib.J)
    system = assemble(U, lib, basis, kernel_method=kernel_method)
    timings["assemble"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sol = select_lambda(system.G, system.b, lambdas)
    timings["solve"] = time.perf_counter() - t0
    kappa = condition_report(system)["kappa"]
    return Identification(grid, lib, system, sol, kappa, timings)


def describe_model(lib: TrialLibrary, w: np.ndarray) -> dict[str, float]:
    return {lib.descriptors[i]: float(w[i]) for i in np.flatnonzero(w)}


def format_model(lib: TrialLibrary, w: np.ndarray) -> str:
    terms = describe_model(lib, w)
    if not terms:
        return "(empty model)"
    return "\n".join(f"  {k:<32s} {v:+.6g}" for k, v in terms.items())


@dataclass
class TrialRecord:
    N: int
    M: int
    eps: float
    trial: int
    seed: int
    score: Optional[dict] = None
    lam: float = math.nan
    kappa: float = math.nan
    residual: float = math.nan
    coefficients: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    loss_curve: Optional[dict] = None
    timings: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def walltime(self) -> float:
        return float(sum(self.timings.values()))


def run_trial(cfg: ExperimentConfig, model: IpsModel, N: int, M: int, eps: float, trial: int, dump_dir=None) -> TrialRecord:
    seed = cell_seed(cfg.seed, N, M, eps, trial)
    rec = TrialRecord(N, M, eps, trial, seed)
    try:
        t0 = time.perf_counter()
        sim = SimConfig(cfg.dt_fine, cfg.subsample, N, M, cfg.L, seed)
        data = simulate(model, make_init(cfg.init), sim)
        rec.timings["simulate"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        data = add_extrinsic_noise(data, eps, seed)
        rec.timings["noise"] = time.perf_counter() - t0

        ident = identify(
            data,
            cfg.preset,
            bins=cfg.bins,
            lambdas=cfg.lambdas(),
            kernel_method=cfg.kernel_method,
            m_x=cfg.m_x,
            m_t=cfg.m_t,
            s_x=cfg.s_x,
            s_t=cfg.s_t,
            p_x=cfg.p_x,
            p_t=cfg.p_t,
        )
        rec.timings.update(ident.timings)
        t0 = time.perf_counter()
        lib, sol = ident.library, ident.solution
        rec.reference = dict(model.reference_coeffs(ident.grid))
        w_star = lib.coefficient_vector(rec.reference)
        sc = score(sol.coeffs, w_star, lib, ident.grid)
        rec.timings["score"] = time.perf_counter() - t0
        rec.score = sc.as_dict()
        rec.lam = sol.lam
        rec.kappa = ident.kappa
        rec.residual = sol.residual
        rec.coefficients = describe_model(lib, sol.coeffs)
        rec.loss_curve = {"lambda": sol.lambdas.tolist(), "loss": [float(x) for x in sol.losses]}
        if dump_dir is not None:
            save_system(ident.system, Path(dump_dir) / f"system_dump_N{N}_M{M}_eps{eps:g}_t{trial}.bin")
    except Exception as exc:  # recorded per trial, other cells keep running
        log.exception("trial failed: N=%d M=%d eps=%g trial=%d", N, M, eps, trial)
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


@dataclass
class ExperimentReport:
    config: dict
    library: dict
    records: list[TrialRecord]
    version: str = __version__

    @property
    def any_errors(self) -> bool:
        return any(r.error for r in self.records)

    def cells(self) -> list[tuple[int, int, float]]:
        seen = []
        for r in self.records:
            key = (r.N, r.M, r.eps)
            if key not in seen:
                seen.append(key)
        return seen

    def cell_records(self, cell) -> list[TrialRecord]:
        return [r for r in self.records if (r.N, r.M, r.eps) == tuple(cell)]

    def cell_summary(self, cell) -> dict:
        recs = self.cell_records(cell)
        ok = [r for r in recs if r.error is None]
        out = {"N": cell[0], "M": cell[1], "eps": cell[2], "errors": len(recs) - len(ok)}
        if ok:
            out.update(aggregate([RecoveryScore(**{k: v for k, v in r.score.items() if k != "identified"}) for r in ok]))
        return out

    def summary(self) -> list[dict]:
        return [self.cell_summary(c) for c in self.cells()]

    def as_dict(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "library": self.library,
            "cells": self.summary(),
            "trials": [asdict(r) for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(d["config"], d["library"], [TrialRecord(**r) for r in d["trials"]], d.get("version", "?"))

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.json").write_text(json.dumps(self.as_dict(), indent=2, default=_json_default) + "\n")
        write_scores_csv(self, outdir / "scores.csv")
        emit_plot_data(self, outdir / "plotdata")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.6e}"
    return str(x)


SCORE_COLUMNS = (
    "preset", "model", "N", "M", "eps", "seed", "trial", "tpr", "tpr_drift",
    "rel_err_K", "rel_err_V", "rel_err_sigma", "lambda", "kappa", "error",
)  # fmt: skip


def write_scores_csv(report: ExperimentReport, path) -> None:
    """One row per trial.  Timings live in report.json so this file is byte-stable per seed."""
    cfg = report.config
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(SCORE_COLUMNS)
        for r in report.records:
            s = r.score or {}
            out.writerow(
                [
                    cfg["preset"], cfg["model"], r.N, r.M, _fmt(float(r.eps)), r.seed, r.trial,
                    _fmt(s.get("tpr")), _fmt(s.get("tpr_drift")), _fmt(s.get("rel_err_K")),
                    _fmt(s.get("rel_err_V")), _fmt(s.get("rel_err_sigma")), _fmt(r.lam),
                    _fmt(r.kappa), r.error or "",
                ]
            )  # fmt: skip


def emit_plot_data(report: ExperimentReport, outdir) -> list[Path]:
    """CSV tables behind error-vs-N, TPR-vs-N and loss-vs-lambda plots."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = [s for s in report.summary() if "tpr_mean" in s]
    written = []

    path = outdir / "error_vs_N.csv"
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["M", "eps", "N", "rel_err_K_mean", "rel_err_V_mean", "rel_err_sigma_mean", "guide_N^-1/2", "slope_K"])
        groups = {}
        for s in rows:
            groups.setdefault((s["M"], s["eps"]), []).append(s)
        for (M, eps), grp in groups.items():
            grp = sorted(grp, key=lambda s: s["N"])
            Ns = [s["N"] for s in grp]
            errs = [s["rel_err_K_mean"] for s in grp]
            slope = math.nan
            if len(grp) >= 3 and all(np.isfinite(errs)) and all(e > 0 for e in errs):
                slope = rate_fit(Ns, errs)
            anchor = next((e * math.sqrt(n) for n, e in zip(Ns, errs) if np.isfinite(e) and e > 0), math.nan)
            for s in grp:
                out.writerow(
                    [M, _fmt(float(eps)), s["N"], _fmt(s["rel_err_K_mean"]), _fmt(s["rel_err_V_mean"]),
                     _fmt(s["rel_err_sigma_mean"]), _fmt(anchor / math.sqrt(s["N"])), _fmt(slope)]
                )  # fmt: skip
    written.append(path)

    path = outdir / "tpr_vs_N.csv"
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["M", "eps", "N", "tpr_mean", "tpr_drift_mean", "fraction_identified"])
        for s in sorted(rows, key=lambda s: (s["M"], s["eps"], s["N"])):
            out.writerow([s["M"], _fmt(float(s["eps"])), s["N"], _fmt(s["tpr_mean"]), _fmt(s["tpr_drift_mean"]), _fmt(s["fraction_identified"])])
    written.append(path)

    path = outdir / "loss_vs_lambda.csv"
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["N", "M", "eps", "trial", "lambda", "loss"])
        for r in report.records:
            if r.loss_curve is None:
                continue
            for lam, val in zip(r.loss_curve["lambda"], r.loss_curve["loss"]):
                out.writerow([r.N, r.M, _fmt(float(r.eps)), r.trial, _fmt(float(lam)), _fmt(float(val))])
    written.append(path)
    return written


def run(config: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """Run every (cell, trial) and optionally write the report files to ``config.output``."""
    cfg = config.resolved()
    model = get_model(cfg.model)
    if model.library != cfg.preset:
        raise ValueError(f"model {cfg.model!r} is scored with library {model.library!r}, not {cfg.preset!r}")
    dump_dir = None
    if cfg.dump_system and cfg.output:
        dump_dir = Path(cfg.output)
        dump_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(N, M, eps, t) for (N, M, eps) in cfg.cells() for t in range(cfg.trials)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            records = list(ex.map(lambda a: run_trial(cfg, model, *a, dump_dir=dump_dir), tasks))
    else:
        records = [run_trial(cfg, model, *a, dump_dir=dump_dir) for a in tasks]
    report = ExperimentReport(cfg.as_dict(), build_library(cfg.preset).manifest(), records)
    if write and cfg.output:
        report.write(cfg.output)
    return report


def load_report(path) -> ExperimentReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return ExperimentReport.from_dict(json.loads(path.read_text()))
