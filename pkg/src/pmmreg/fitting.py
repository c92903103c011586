"""One entry point for both solvers, with optional unit-norm column scaling.

Scaling is applied identically for PMM and CD so that both solve the same
problem; coefficients are mapped back to the original columns.
"""
from __future__ import annotations

import time

import numpy as np

from .cd import cd_solve
from .dataio import Dataset, Scaling, standardize
from .penalty import DEFAULT_TAU, PenaltySpec
from .pmm import PmmConfig, kkt_residual_dc, pmm_solve
from .result import FitResult, Trace

METHODS = ("pmm", "cd")


def fit(dataset: Dataset, method: str = "pmm", penalty: str = "mcp", tau: float | None = None,
        lam: float | None = None, config: PmmConfig | None = None,
        scale: bool = True) -> tuple[FitResult, Trace]:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    penalty = penalty.lower()
    tau = DEFAULT_TAU[penalty] if tau is None else float(tau)
    config = config or PmmConfig()
    t0 = time.perf_counter()
    scaling = None
    work = dataset
    if scale:
        keep = dataset.column_norms > 0
        if not np.all(keep):
            raise ValueError("design has zero columns; drop them before fitting")
        work, scaling = standardize(dataset)
    if method == "pmm":
        res, trace = pmm_solve(work, penalty, tau, config, lam)
    else:
        res, trace = cd_solve(work, penalty, tau, lam, tol=config.tol_outer,
                              k_max=config.k_max, grid=config.grid,
                              grid_ratio=config.grid_ratio, grid_count=config.grid_count)
    if scaling is not None:
        res.beta = scaling.to_original(res.beta)
        res.extra["scaling"] = scaling
    res.extra["standardized"] = scaling is not None
    res.seconds = time.perf_counter() - t0
    return res, trace


def rescore(result: FitResult, dataset: Dataset) -> float:
    """Recompute R2_kkt of ``result`` on the problem it was fitted to."""
    beta = result.beta
    work = dataset
    if result.extra.get("standardized", False):
        work, scaling = standardize(dataset)
        beta = scaling.to_standardized(beta)
    spec = PenaltySpec(result.penalty, result.lambda_hat, result.tau)
    return kkt_residual_dc(beta, work, spec)


__all__ = ["fit", "rescore", "METHODS", "Scaling"]
