"""Weak-form sparse identification of mean-field equations from particle data."""

__version__ = "0.1.0"

from wsindy_ips.sde_sim import (
    InitialDistribution,
    IpsModel,
    ParticleDataset,
    SimConfig,
    add_extrinsic_noise,
    builtin_models,
    get_model,
    simulate,
)
from wsindy_ips.density import Grid, HistogramField, average_histograms, build_domain, histogram, histograms
from wsindy_ips.test_functions import ReferencePhi, TestBasis, make_phi, make_query_points, make_test_basis, support_parameters
from wsindy_ips.library import LowRankKernel, TrialLibrary, build_library, low_rank, tabulate_kernel
from wsindy_ips.assembly import WeakSystem, assemble, condition_report, convolve
from wsindy_ips.mstls import SparseSolution, least_squares, mstls_at, select_lambda
from wsindy_ips.metrics import RecoveryScore, function_errors, rate_fit, score, tpr, tpr_drift

__all__ = [
    "Grid",
    "HistogramField",
    "InitialDistribution",
    "IpsModel",
    "LowRankKernel",
    "ParticleDataset",
    "RecoveryScore",
    "ReferencePhi",
    "SimConfig",
    "SparseSolution",
    "TestBasis",
    "TrialLibrary",
    "WeakSystem",
    "add_extrinsic_noise",
    "assemble",
    "average_histograms",
    "build_domain",
    "build_library",
    "builtin_models",
    "condition_report",
    "convolve",
    "function_errors",
    "get_model",
    "histogram",
    "histograms",
    "least_squares",
    "low_rank",
    "make_phi",
    "make_query_points",
    "make_test_basis",
    "mstls_at",
    "rate_fit",
    "score",
    "select_lambda",
    "simulate",
    "support_parameters",
    "tabulate_kernel",
    "tpr",
    "tpr_drift",
]
