"""Primal-dual active set solver with continuation for l1 proximal subproblems.

The subproblem solved here is

    min_b 0.5*||X b - y||^2 + lam*||b||_1 - <v, b - c> + 0.5*sigma*||b - c||^2

(``c`` the proximal centre, ``v`` the linearisation slope).  Its optimality
system is ``(X'X + sigma I) b + d = X'y + v + sigma c`` together with
``b = S_lam(b + d)``; the active set iteration guesses the support from
``b + d`` and solves the first equation on it exactly.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dataio import Dataset
from .penalty import soft_threshold

log = logging.getLogger(__name__)

_JITTER = 1e-12
_MAX_COND = 1e15


class SolverError(RuntimeError):
    """Linear algebra failure on the active block."""

    def __init__(self, msg, cond=None):
        super().__init__(msg if cond is None else f"{msg} (cond ~ {cond:.3g})")
        self.cond = cond


class ActiveSetOverflow(RuntimeError):
    """The active set outgrew the configured cap; callers end the path."""


class PathError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass
class Subproblem:
    dataset: Dataset
    sigma: float = 0.0
    beta_tilde: np.ndarray | None = None
    v_tilde: np.ndarray | None = None

    def __post_init__(self):
        p = self.dataset.p
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        self.beta_tilde = np.zeros(p) if self.beta_tilde is None else np.asarray(self.beta_tilde, float)
        self.v_tilde = np.zeros(p) if self.v_tilde is None else np.asarray(self.v_tilde, float)
        if self.beta_tilde.shape != (p,) or self.v_tilde.shape != (p,):
            raise ValueError("beta_tilde and v_tilde must have length p")
        self.rhs = self.dataset.Xty + self.v_tilde + self.sigma * self.beta_tilde

    def smooth_grad(self, beta: np.ndarray, ls_grad: np.ndarray | None = None) -> np.ndarray:
        """Gradient of the smooth part; ``ls_grad`` may supply X'(X beta - y)."""
        if ls_grad is None:
            ls_grad = self.dataset.gradient(beta)
        g = ls_grad - self.v_tilde
        if self.sigma:
            g = g + self.sigma * (beta - self.beta_tilde)
        return g

    def lambda_max(self) -> float:
        return float(np.max(np.abs(self.rhs)))


@dataclass
class ActiveSetState:
    beta: np.ndarray
    dual: np.ndarray
    active_plus: np.ndarray | None = None
    active_minus: np.ndarray | None = None
    lam: float | None = None
    jittered: bool = False

    @property
    def active(self) -> np.ndarray:
        if self.active_plus is None:
            return np.flatnonzero(self.beta)
        return np.union1d(self.active_plus, self.active_minus)

    @property
    def inactive(self) -> np.ndarray:
        mask = np.ones(self.beta.size, dtype=bool)
        mask[self.active] = False
        return np.flatnonzero(mask)

    @classmethod
    def zero(cls, sub: Subproblem, lam: float | None = None) -> "ActiveSetState":
        empty = np.array([], dtype=np.intp)
        return cls(np.zeros(sub.dataset.p), sub.rhs.copy(), empty, empty.copy(), lam)

    @classmethod
    def warm_from(cls, sub: Subproblem, beta: np.ndarray,
                  ls_grad: np.ndarray | None = None) -> "ActiveSetState":
        """Pair ``beta`` with the dual that satisfies the linear KKT equation."""
        beta = np.asarray(beta, dtype=float).copy()
        ds = sub.dataset
        if ls_grad is None:
            ls_grad = ds.gradient(beta)
        dual = sub.rhs - (ls_grad + ds.Xty) - sub.sigma * beta
        return cls(beta, dual)


def compute_active_sets(beta, dual, lam: float):
    """Split indices by the sign test on ``beta + dual`` (strict inequalities)."""
    z = np.asarray(beta) + np.asarray(dual)
    plus = np.flatnonzero(z > lam)
    minus = np.flatnonzero(z < -lam)
    inactive = np.flatnonzero(np.abs(z) <= lam)
    return plus, minus, inactive


def _same_sets(a_plus, a_minus, b_plus, b_minus) -> bool:
    if b_plus is None or b_minus is None:
        return False
    return np.array_equal(a_plus, b_plus) and np.array_equal(a_minus, b_minus)


def primal_dual_update(sub: Subproblem, sets, lam: float,
                       max_active: int | None = None) -> ActiveSetState:
    """One primal-dual step on the given (A+, A-) partition."""
    plus, minus = np.asarray(sets[0], dtype=np.intp), np.asarray(sets[1], dtype=np.intp)
    X = sub.dataset.X
    p = sub.dataset.p
    A = np.union1d(plus, minus)
    if max_active is not None and A.size > max_active:
        raise ActiveSetOverflow(f"|A| = {A.size} exceeds {max_active}")
    beta = np.zeros(p)
    d_fixed = np.zeros(p)
    d_fixed[plus] = lam
    d_fixed[minus] = -lam
    jittered = False
    if A.size:
        XA = X[:, A]
        M = XA.T @ XA
        M[np.diag_indices_from(M)] += sub.sigma
        b = sub.rhs[A] - d_fixed[A]
        try:
            factor = linalg.cho_factor(M, check_finite=False)
        except linalg.LinAlgError:
            if sub.sigma > 0:
                raise SolverError("active block is not positive definite",
                                  np.linalg.cond(M)) from None
            M[np.diag_indices_from(M)] += _JITTER * max(np.trace(M), 1.0) / A.size
            jittered = True
            try:
                factor = linalg.cho_factor(M, check_finite=False)
            except linalg.LinAlgError:
                raise SolverError("singular active block", np.linalg.cond(M)) from None
        diag = np.abs(np.diag(factor[0]))
        cond_est = (diag.max() / diag.min()) ** 2 if diag.min() > 0 else math.inf
        if cond_est > _MAX_COND:
            raise SolverError("ill-conditioned active block", cond_est)
        beta[A] = linalg.cho_solve(factor, b, check_finite=False)
        if jittered:
            log.warning("singular active block at sigma=0; added diagonal jitter")
        dual = sub.rhs - X.T @ (XA @ beta[A])
    else:
        dual = sub.rhs.copy()
    dual[A] = d_fixed[A]
    return ActiveSetState(beta, dual, plus, minus, lam, jittered)


def optimality_residuals(state: ActiveSetState, sub: Subproblem, lam: float) -> tuple[float, float]:
    """Max-abs residuals of the two optimality equations at ``state``."""
    X = sub.dataset.X
    lhs = X.T @ (X @ state.beta) + sub.sigma * state.beta + state.dual
    eq1 = float(np.max(np.abs(lhs - sub.rhs)))
    eq2 = float(np.max(np.abs(state.beta - soft_threshold(state.beta + state.dual, lam))))
    return eq1, eq2


@dataclass
class PdasInfo:
    iterations: int = 0
    solves: int = 0
    converged: bool = False
    cycled: bool = False


def _is_fixed_point(state: ActiveSetState, sub: Subproblem, lam: float, plus, minus) -> bool:
    if state.lam != lam or not _same_sets(plus, minus, state.active_plus, state.active_minus):
        return False
    A = state.active
    if np.any(state.beta[state.inactive] != 0):
        return False
    if not np.all(np.abs(state.dual[A]) == lam):
        return False
    eq1, _ = optimality_residuals(state, sub, lam)
    return eq1 <= 1e-10 * (1.0 + float(np.max(np.abs(sub.rhs))))


def pdas_fixed_lambda(sub: Subproblem, warm: ActiveSetState, lam: float, k_max: int,
                      max_active: int | None = None) -> tuple[ActiveSetState, PdasInfo]:
    """Active-set iterations at a fixed ``lam`` until the set repeats or ``k_max``.

    Convergence means the set recomputed from the last iterate equals the
    set that produced it, which is exactly the optimality system.
    """
    info = PdasInfo()
    plus, minus, _ = compute_active_sets(warm.beta, warm.dual, lam)
    if _is_fixed_point(warm, sub, lam, plus, minus):
        info.converged = True
        return warm, info
    state = warm
    seen = set()
    for _ in range(k_max):
        state = primal_dual_update(sub, (plus, minus), lam, max_active)
        info.iterations += 1
        info.solves += 1
        new_plus, new_minus, _ = compute_active_sets(state.beta, state.dual, lam)
        if _same_sets(new_plus, new_minus, plus, minus):
            info.converged = True
            break
        seen.add((plus.tobytes(), minus.tobytes()))
        plus, minus = new_plus, new_minus
        if (plus.tobytes(), minus.tobytes()) in seen:
            # the iteration is deterministic, so a repeated set means a cycle
            info.cycled = True
            break
    return state, info


def kkt_residual_l1(beta, dataset: Dataset, lam: float, sub: Subproblem | None = None,
                    ls_grad: np.ndarray | None = None) -> float:
    """Relative KKT residual of the l1 problem.

    Without ``sub`` this is the plain lasso residual; with it, the gradient
    of the subproblem's smooth part replaces ``X'(X beta - y)``.
    """
    beta = np.asarray(beta, dtype=float)
    if ls_grad is None:
        ls_grad = dataset.gradient(beta)
    grad = ls_grad if sub is None else sub.smooth_grad(beta, ls_grad)
    num = np.linalg.norm(beta - soft_threshold(beta - grad, lam))
    return float(num / (1.0 + np.linalg.norm(beta) + np.linalg.norm(grad)))


def hbic_score(beta, dataset: Dataset) -> float:
    """log(RSS/n) + log(log n) log(p) / n * ||beta||_0 (natural logs).

    A perfect fit returns ``-inf``; callers must treat that case apart.
    """
    n, p = dataset.n, dataset.p
    if n < 2 or p < 2:
        raise ValueError("HBIC needs n >= 2 and p >= 2")
    r = dataset.predict(np.asarray(beta, dtype=float)) - dataset.y
    rss = float(r @ r)
    if rss == 0.0:
        return -math.inf
    return math.log(rss / n) + math.log(math.log(n)) * math.log(p) / n * int(np.count_nonzero(beta))


@dataclass(frozen=True)
class LambdaGrid:
    lambda_max: float
    lambda_min: float
    count: int = 100
    mu: float | None = None

    def __post_init__(self):
        if not (self.lambda_max > 0 and 0 < self.lambda_min <= self.lambda_max):
            raise ValueError("need 0 < lambda_min <= lambda_max")
        if self.count < 1:
            raise ValueError("count must be positive")
        if self.mu is None:
            object.__setattr__(self, "mu", (self.lambda_min / self.lambda_max) ** (1.0 / self.count))
        elif not 0 < self.mu < 1:
            raise ValueError("mu must lie in (0, 1)")

    @classmethod
    def for_problem(cls, sub_or_data, ratio: float = 1e-10, count: int = 100) -> "LambdaGrid":
        if isinstance(sub_or_data, Subproblem):
            lmax = sub_or_data.lambda_max()
        else:
            lmax = float(np.max(np.abs(sub_or_data.Xty)))
        if lmax == 0:
            raise PathError("X'y vanishes; no nontrivial lambda path")
        return cls(lmax, ratio * lmax, count)

    def lambdas(self) -> np.ndarray:
        return self.lambda_max * self.mu ** np.arange(self.count + 1)


@dataclass
class PathEntry:
    lam: float
    beta: np.ndarray
    dual: np.ndarray
    active_set: np.ndarray
    hbic: float
    r1_kkt: float
    converged: bool
    state: ActiveSetState = field(repr=False, default=None)

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.beta))

    @property
    def zero_residual(self) -> bool:
        return self.hbic == -math.inf


@dataclass
class PathResult:
    selected: PathEntry
    entries: list
    stop_reason: str
    solves: int

    def to_csv(self, path_or_stream) -> None:
        write_path_csv(self.entries, path_or_stream)


def select_by_hbic(entries) -> PathEntry:
    """Argmin of HBIC; ties go to the larger lambda.

    Perfect-fit entries (``-inf``) are never ranked against finite scores:
    if any exist the sparsest one wins and a warning is logged.
    """
    if not entries:
        raise PathError("no usable path entries")
    perfect = [e for e in entries if e.zero_residual]
    if perfect:
        log.warning("%d path entries fit y exactly; picking the largest lambda among them",
                    len(perfect))
        return max(perfect, key=lambda e: e.lam)
    return min(entries, key=lambda e: (e.hbic, -e.lam))


def pdasc_path(sub: Subproblem, grid: LambdaGrid | None = None, k_max: int = 1,
               stop_nnz: float | None = None) -> PathResult:
    """Continuation over a decreasing lambda grid, each step warm-started.

    Stops once ||beta||_0 >= n / log(p) (the offending entry is discarded)
    or when the grid is exhausted, then picks lambda by HBIC.
    """
    ds = sub.dataset
    if grid is None:
        grid = LambdaGrid.for_problem(sub)
    if stop_nnz is None:
        stop_nnz = ds.n / math.log(ds.p) if ds.p > 1 else math.inf
    lams = grid.lambdas()
    state = ActiveSetState.zero(sub, lams[0])
    if grid.lambda_max < sub.lambda_max():
        state, _ = pdas_fixed_lambda(sub, state, lams[0], k_max)
    entries = []
    solves = 0
    reason = "grid exhausted"
    max_active = ds.n if sub.sigma == 0 else None
    for j, lam in enumerate(lams):
        if j > 0:
            try:
                state, info = pdas_fixed_lambda(sub, state, lam, k_max, max_active)
            except ActiveSetOverflow:
                reason = "active set overflow"
                break
            solves += info.solves
            converged = info.converged
        else:
            converged = True
        plus, minus, _ = compute_active_sets(state.beta, state.dual, lam)
        if j > 0 and not converged:
            converged = _same_sets(plus, minus, state.active_plus, state.active_minus)
        nnz = int(np.count_nonzero(state.beta))
        if nnz >= stop_nnz:
            reason = "sparsity cap"
            break
        entries.append(PathEntry(
            lam=float(lam), beta=state.beta, dual=state.dual,
            active_set=np.union1d(plus, minus), hbic=hbic_score(state.beta, ds),
            r1_kkt=kkt_residual_l1(state.beta, ds, lam, sub), converged=converged,
            state=state))
    if not entries:
        raise PathError("first lambda already violates the sparsity cap")
    return PathResult(select_by_hbic(entries), entries, reason, solves)


def solve_subproblem(sub: Subproblem, lam: float, warm: ActiveSetState | None = None,
                     tol: float = 1e-6, k_max: int = 50, grid: LambdaGrid | None = None
                     ) -> tuple[ActiveSetState, PdasInfo]:
    """Solve at a single ``lam`` to relative KKT residual ``tol``.

    Cold starts walk the grid down from lambda_max with one step per point.
    A warm start that stalls falls back to a short continuation from 2*lam,
    then to a cold walk; if the active sets still cycle, coordinate descent
    finds the support and one exact solve on it finishes.
    """
    total = PdasInfo()

    def run(state, lam_, kmax):
        state, info = pdas_fixed_lambda(sub, state, lam_, kmax)
        total.iterations += info.iterations
        total.solves += info.solves
        return state, info

    if warm is None:
        if grid is None:
            grid = LambdaGrid.for_problem(sub) if sub.lambda_max() > 0 else None
        state = ActiveSetState.zero(sub, None)
        if grid is not None:
            for lam_j in grid.lambdas():
                if lam_j <= lam:
                    break
                state, _ = run(state, lam_j, 1)
    else:
        state = warm
    state, info = run(state, lam, k_max)
    if not info.converged:
        log.info("PDAS stalled at lam=%.4g; retrying with local continuation", lam)
        for lam_j in np.geomspace(2.0 * lam, lam, 9)[:-1]:
            state, _ = run(state, lam_j, 5)
        state, info = run(state, lam, k_max)
    if not info.converged and warm is not None and sub.lambda_max() > lam:
        log.info("PDAS stalled again at lam=%.4g; restarting from lambda_max", lam)
        state = ActiveSetState.zero(sub, None)
        for lam_j in LambdaGrid.for_problem(sub).lambdas():
            if lam_j <= lam:
                break
            state, _ = run(state, lam_j, 1)
        state, info = run(state, lam, k_max)
    if not info.converged:
        log.info("PDAS cycles at lam=%.4g; switching to coordinate descent", lam)
        state, info = _coordinate_fallback(sub, lam, state, tol)
        total.iterations += info.iterations
        total.solves += info.solves
    total.converged = info.converged and kkt_residual_l1(state.beta, sub.dataset, lam, sub) <= tol
    if not total.converged:
        raise ConvergenceError(f"subproblem at lam={lam:.6g} did not converge")
    return state, total


def _coordinate_fallback(sub: Subproblem, lam: float, state: ActiveSetState, tol: float,
                         max_sweeps: int = 20_000) -> tuple[ActiveSetState, PdasInfo]:
    """Cyclic coordinate descent on the (convex) subproblem, then a PDAS polish.

    Used when the active-set iteration cycles, typically on nearly collinear
    columns.  Coordinate descent converges globally; once its support is
    right a single active-set solve makes the optimality system exact.
    """
    ds = sub.dataset
    X = ds.X
    a = ds.column_norms ** 2 + sub.sigma
    beta = state.beta.copy()
    if not np.all(np.isfinite(beta)):
        beta = np.zeros(ds.p)
    r = ds.y - ds.predict(beta)
    # gradient of the smooth part minus its X'(X b - y) piece, per coordinate
    lin = -sub.v_tilde - sub.sigma * sub.beta_tilde
    info = PdasInfo()
    signs = tried = None
    for sweep in range(max_sweeps):
        for i in range(ds.p):
            if a[i] == 0:
                continue
            xi = X[:, i]
            old = beta[i]
            z = float(xi @ r) - lin[i] + (a[i] - sub.sigma) * old
            new = math.copysign(max(abs(z) - lam, 0.0), z) / a[i]
            if new != old:
                r -= (new - old) * xi
                beta[i] = new
        if sweep % 3 == 2:
            r = ds.y - ds.predict(beta)
            if kkt_residual_l1(beta, ds, lam, sub) <= 0.1 * tol:
                break
            now = np.sign(beta)
            if signs is not None and np.array_equal(now, signs) and not np.array_equal(now, tried):
                # sign pattern settled: an exact solve on it usually finishes the job
                tried = now
                polished = _solve_on_signs(sub, lam, beta)
                if polished is not None and kkt_residual_l1(polished.beta, ds, lam, sub) <= tol:
                    info.iterations += 1
                    info.solves += 1
                    info.converged = True
                    return polished, info
            signs = now
    polished = _solve_on_signs(sub, lam, beta)
    if polished is not None and kkt_residual_l1(polished.beta, ds, lam, sub) <= tol:
        info.converged = True
        return polished, info
    info.converged = kkt_residual_l1(beta, ds, lam, sub) <= tol
    return ActiveSetState.warm_from(sub, beta), info


def _solve_on_signs(sub: Subproblem, lam: float, beta: np.ndarray) -> ActiveSetState | None:
    """Active-set solve on the sign pattern of ``beta``; None if not self-consistent."""
    plus, minus = np.flatnonzero(beta > 0), np.flatnonzero(beta < 0)
    try:
        state = primal_dual_update(sub, (plus, minus), lam)
    except SolverError:
        return None
    new_plus, new_minus, _ = compute_active_sets(state.beta, state.dual, lam)
    return state if _same_sets(new_plus, new_minus, plus, minus) else None


def write_path_csv(entries, path_or_stream) -> None:
    header = ["lambda", "nnz", "hbic", "r1_kkt", "solve_converged"]
    # CD path entries have no inner solve: residual nan, solve_converged 0
    rows = [[repr(e.lam), e.nnz, repr(e.hbic), repr(getattr(e, "r1_kkt", float("nan"))),
             int(getattr(e, "converged", False))] for e in entries]
    if hasattr(path_or_stream, "write"):
        w = csv.writer(path_or_stream, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    else:
        with open(path_or_stream, "w", newline="") as fh:
            write_path_csv(entries, fh)
