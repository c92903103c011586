"""Two-stage proximal majorization-minimization for MCP/SCAD least squares.

Stage one solves the l1 problem with a small ridge term; stage two
repeatedly linearises the concave part ``-q`` at the current iterate, adds
a proximal term with geometrically shrinking weight, and solves the
resulting l1 subproblem with the active-set solver.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset
from .pdasc import (ActiveSetState, ConvergenceError, LambdaGrid, PathEntry, SolverError,
                    Subproblem, hbic_score, kkt_residual_l1, pdasc_path, select_by_hbic,
                    solve_subproblem)
from .penalty import PenaltySpec, objective_value, prox_penalty, q_gradient, soft_threshold
from .result import FitResult, Trace, TraceRecord

log = logging.getLogger(__name__)


@dataclass
class PmmConfig:
    sigma1: float = 0.1
    sigma2_init: float = 0.1
    gamma: float = 0.1
    tol_inner: float = 1e-6
    tol_outer: float = 1e-6
    max_outer: int = 50
    k_max: int = 1
    inner_max_iter: int = 50
    grid_ratio: float = 1e-10
    grid_count: int = 100
    grid: LambdaGrid | None = None
    # "path": HBIC over the stage-two solutions along the grid
    # "stage1": HBIC on the stage-one path only, stage two at that lambda
    strategy: str = "path"
    # stage-two start along the path: "stage1" uses the stage-one solution at
    # the same lambda while the stage-one path is under its sparsity cap, then
    # the previous stage-two solution; "previous" uses stage one only once
    warm_start: str = "stage1"

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.sigma1 <= 0 or self.sigma2_init <= 0:
            raise ValueError("proximal weights must be positive")
        if self.tol_inner <= 0 or self.tol_outer <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_outer < 1 or self.k_max < 1:
            raise ValueError("iteration caps must be positive")
        if self.strategy not in ("path", "stage1"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.warm_start not in ("stage1", "previous"):
            raise ValueError(f"unknown warm_start {self.warm_start!r}")

    def sigma2(self, k: int) -> float:
        return self.sigma2_init * self.gamma ** k

    def make_grid(self, sub: Subproblem) -> LambdaGrid:
        return self.grid or LambdaGrid.for_problem(sub, self.grid_ratio, self.grid_count)


def kkt_residual_dc(beta, dataset: Dataset, spec: PenaltySpec,
                    ls_grad: np.ndarray | None = None) -> float:
    """Relative residual of the prox fixed point for the nonconvex problem."""
    beta = np.asarray(beta, dtype=float)
    grad = dataset.gradient(beta) if ls_grad is None else ls_grad
    num = np.linalg.norm(beta - prox_penalty(beta - grad, spec))
    return float(num / (1.0 + np.linalg.norm(beta) + np.linalg.norm(grad)))


@dataclass
class StageOne:
    beta0: np.ndarray
    lam_hat: float
    r1_kkt: float
    solves: int
    path: object = None


def stage_one(dataset: Dataset, config: PmmConfig, lam: float | None = None) -> StageOne:
    """Ridge-augmented lasso: HBIC along the path, or a single given lambda."""
    sub = Subproblem(dataset, sigma=config.sigma1)
    if sub.lambda_max() == 0:
        # X'y = 0: zero solves every lambda and no grid exists
        return StageOne(np.zeros(dataset.p), float(lam) if lam is not None else 1.0, 0.0, 0)
    grid = config.make_grid(sub)
    if lam is not None:
        state, info = solve_subproblem(sub, lam, None, config.tol_inner,
                                       config.inner_max_iter, grid)
        r1 = kkt_residual_l1(state.beta, dataset, lam, sub)
        return StageOne(state.beta, float(lam), r1, info.solves)
    path = pdasc_path(sub, grid, config.k_max)
    sel = path.selected
    solves = path.solves
    if sel.r1_kkt > config.tol_inner:
        state, info = solve_subproblem(sub, sel.lam, sel.state, config.tol_inner,
                                       config.inner_max_iter)
        solves += info.solves
        polished = PathEntry(sel.lam, state.beta, state.dual, state.active,
                             hbic_score(state.beta, dataset),
                             kkt_residual_l1(state.beta, dataset, sel.lam, sub), True, state)
        path.entries[path.entries.index(sel)] = polished
        path.selected = sel = polished
    return StageOne(sel.beta, sel.lam, sel.r1_kkt, solves, path)


@dataclass
class StepInfo:
    inner_iters: int
    r1_sub: float
    delta_est: float
    ls_grad: np.ndarray = field(repr=False, default=None)


def stage_two_step(dataset: Dataset, beta_k: np.ndarray, sigma2_k: float, spec: PenaltySpec,
                   config: PmmConfig, ls_grad: np.ndarray | None = None
                   ) -> tuple[np.ndarray, bool, StepInfo]:
    """Solve the linearised proximal subproblem at ``beta_k``.

    Returns the next iterate and whether the inexactness bound
    ||delta|| <= sigma/4 ||beta_next - beta_k|| holds for the estimated
    error vector (the inner residual scaled by 1 + Lipschitz bound).
    """
    sub = Subproblem(dataset, sigma2_k, beta_k, q_gradient(beta_k, spec))
    warm = ActiveSetState.warm_from(sub, beta_k, ls_grad)
    state, info = solve_subproblem(sub, spec.lam, warm, config.tol_inner, config.inner_max_iter)
    beta = state.beta
    ls_grad = dataset.gradient(beta)
    g = sub.smooth_grad(beta, ls_grad)
    raw = float(np.linalg.norm(beta - soft_threshold(beta - g, spec.lam)))
    delta_est = raw * (1.0 + dataset.lipschitz() + sigma2_k)
    ok = delta_est <= 0.25 * sigma2_k * float(np.linalg.norm(beta - beta_k))
    r1 = raw / (1.0 + np.linalg.norm(beta) + np.linalg.norm(g))
    return beta, ok, StepInfo(info.iterations, r1, delta_est, ls_grad)


def run_stage_two(dataset: Dataset, beta0: np.ndarray, spec: PenaltySpec, config: PmmConfig,
                  k0: int = 0, max_steps: int | None = None, trace: Trace | None = None
                  ) -> tuple[np.ndarray, Trace, bool, float]:
    """Outer iterations k0, k0+1, ... until R2 <= tol_outer or the caps hit."""
    beta = np.asarray(beta0, dtype=float)
    trace = Trace() if trace is None else trace
    f = objective_value(beta, dataset, spec)
    grad = dataset.gradient(beta)
    r2 = kkt_residual_dc(beta, dataset, spec, grad)
    k = k0
    stop = config.max_outer if max_steps is None else min(config.max_outer, k0 + max_steps)
    while r2 > config.tol_outer and k < stop:
        sigma = config.sigma2(k)
        if sigma == 0.0:
            log.warning("proximal weight underflowed at outer iteration %d", k)
            break
        nxt, ok, info = stage_two_step(dataset, beta, sigma, spec, config, grad)
        f_next = objective_value(nxt, dataset, spec)
        step = float(np.linalg.norm(nxt - beta))
        r2 = kkt_residual_dc(nxt, dataset, spec, info.ls_grad)
        gap = f - f_next - 0.25 * sigma * step * step
        trace.append(TraceRecord(k, f_next, step, sigma, r2, info.inner_iters, gap, ok,
                                 info.r1_sub))
        beta, f, grad = nxt, f_next, info.ls_grad
        k += 1
    return beta, trace, r2 <= config.tol_outer, r2


@dataclass
class PmmPathEntry:
    lam: float
    beta: np.ndarray
    beta0: np.ndarray
    hbic: float
    r1_kkt: float
    r2_kkt: float
    converged: bool
    trace: Trace = field(repr=False, default_factory=Trace)

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.beta))

    @property
    def zero_residual(self) -> bool:
        return self.hbic == -math.inf


def _degenerate(dataset: Dataset) -> bool:
    return not np.any(dataset.y) or not np.any(dataset.X)


def pmm_solve(dataset: Dataset, penalty_kind: str, tau: float, config: PmmConfig | None = None,
              lam: float | None = None) -> tuple[FitResult, Trace]:
    """Fit MCP/SCAD-penalised least squares; ``lam=None`` selects by HBIC."""
    config = config or PmmConfig()
    PenaltySpec(penalty_kind, 1.0, tau)  # validates kind/tau up front
    t0 = time.perf_counter()
    if _degenerate(dataset):
        lam_hat = float(lam) if lam is not None else 1.0
        res = FitResult(np.zeros(dataset.p), lam_hat, "pmm", penalty_kind.lower(), tau,
                        r1_kkt=0.0, r2_kkt=0.0, converged=True)
        res.seconds = time.perf_counter() - t0
        return res, Trace()
    if lam is not None or config.strategy == "stage1":
        res, trace = _solve_single(dataset, penalty_kind, tau, config, lam)
    else:
        res, trace = _solve_path(dataset, penalty_kind, tau, config)
    res.seconds = time.perf_counter() - t0
    return res, trace


def _solve_single(dataset, kind, tau, config, lam):
    s1 = stage_one(dataset, config, lam)
    spec = PenaltySpec(kind, s1.lam_hat, tau)
    beta, trace, converged, r2 = run_stage_two(dataset, s1.beta0, spec, config)
    res = FitResult(beta, s1.lam_hat, "pmm", spec.kind, tau,
                    r1_kkt=trace.last_r1(s1.r1_kkt), r2_kkt=r2, stage1_iters=s1.solves,
                    stage2_iters=len(trace), converged=converged,
                    extra={"beta0": s1.beta0, "stage1_path": s1.path,
                           "descent_violations": trace.descent_violations(),
                           "traces": [trace]})
    return res, trace


def _solve_path(dataset, kind, tau, config):
    n, p = dataset.n, dataset.p
    sub1 = Subproblem(dataset, sigma=config.sigma1)
    grid = config.make_grid(sub1)
    stop_nnz = n / math.log(p) if p > 1 else math.inf
    lams = grid.lambdas()
    state1 = ActiveSetState.zero(sub1, lams[0])
    zero = np.zeros(p)
    entries = [PmmPathEntry(float(lams[0]), zero, zero, hbic_score(zero, dataset),
                            kkt_residual_l1(zero, dataset, lams[0], sub1),
                            kkt_residual_dc(zero, dataset, PenaltySpec(kind, lams[0], tau)), True)]
    solves = 0
    reason = "grid exhausted"
    prev = None
    for lam_j in lams[1:]:
        spec = PenaltySpec(kind, float(lam_j), tau)
        start = prev
        if state1 is not None and (config.warm_start == "stage1" or prev is None):
            try:
                state1, info = solve_subproblem(sub1, lam_j, state1, config.tol_inner,
                                                config.inner_max_iter)
                solves += info.solves
            except (ConvergenceError, SolverError) as exc:
                if prev is None:
                    raise
                log.info("stage one stopped at lam=%.4g: %s", lam_j, exc)
                state1 = None
            if state1 is not None and np.count_nonzero(state1.beta) >= stop_nnz and prev is not None:
                # stage one has left its own path range; stage two carries on alone
                state1 = None
            if state1 is not None:
                start = state1.beta
        try:
            beta, trace, converged, r2 = run_stage_two(dataset, start, spec, config,
                                                       max_steps=config.k_max)
        except (ConvergenceError, SolverError) as exc:
            log.warning("stage two failed at lam=%.4g: %s", lam_j, exc)
            reason = "inner failure"
            break
        if np.count_nonzero(beta) >= stop_nnz:
            reason = "sparsity cap"
            break
        entries.append(PmmPathEntry(float(lam_j), beta, start, hbic_score(beta, dataset),
                                    trace.last_r1(0.0), r2, converged, trace))
        prev = beta
    if len(entries) < 2 and reason == "sparsity cap":
        log.warning("sparsity cap reached at the first grid step")
    sel = select_by_hbic(entries)
    all_traces = [e.trace for e in entries]
    path_steps = sum(len(t) for t in all_traces)
    # finish the chosen lambda: continue the sigma schedule where the path left it
    spec = PenaltySpec(kind, sel.lam, tau)
    trace = Trace(list(sel.trace.records))
    beta, trace, converged, r2 = run_stage_two(dataset, sel.beta, spec, config,
                                               k0=len(trace), trace=trace)
    if not converged:
        log.warning("stage two stopped at max_outer with R2 = %.3g", r2)
    res = FitResult(beta, sel.lam, "pmm", kind.lower(), tau,
                    r1_kkt=trace.last_r1(sel.r1_kkt), r2_kkt=r2, stage1_iters=solves,
                    stage2_iters=len(trace), converged=converged,
                    extra={"beta0": sel.beta0, "path": entries, "stop_reason": reason,
                           "descent_violations": trace.descent_violations()
                           + sum(t.descent_violations() for t in all_traces),
                           "traces": all_traces + [trace],
                           "total_stage2_iters": path_steps + len(trace) - len(sel.trace)})
    return res, trace
