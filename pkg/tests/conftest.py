import itertools

import numpy as np
import pytest

from pmmreg.dataio import Dataset
from pmmreg.penalty import PenaltySpec, objective_value


def rho_oracle(u, kind, lam, tau):
    """Penalty value written out branch by branch, independent of the package."""
    a = np.abs(u)
    if kind == "mcp":
        return np.where(a <= lam * tau, lam * a - u * u / (2 * tau), 0.5 * lam * lam * tau)
    return np.where(a <= lam, lam * a,
                    np.where(a <= lam * tau,
                             (lam * tau * a - 0.5 * (u * u + lam * lam)) / (tau - 1),
                             0.5 * lam * lam * (tau + 1)))


def grid_argmin(x, kind, lam, tau, weight=1.0, lo=-10.0, hi=10.0, step=1e-5):
    """Brute-force minimiser of weight/2 (u - x)^2 + rho(u) on a uniform grid."""
    u = np.arange(lo, hi + step / 2, step)
    return float(u[np.argmin(0.5 * weight * (u - x) ** 2 + rho_oracle(u, kind, lam, tau))])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_problem(rng, n, p, k, noise=0.0, scale=(1.0, 3.0)):
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    support = np.sort(rng.choice(p, k, replace=False))
    beta[support] = rng.uniform(*scale, k) * rng.choice([-1.0, 1.0], k)
    y = X @ beta + noise * rng.standard_normal(n)
    return Dataset(X, y), beta


def best_subset(dataset, k_max=None):
    """Exhaustive search: support minimising RSS for each size, least squares fit."""
    X, y = dataset.X, dataset.y
    p = X.shape[1]
    k_max = p if k_max is None else k_max
    best = {0: (float(y @ y), ())}
    for k in range(1, k_max + 1):
        for S in itertools.combinations(range(p), k):
            coef, *_ = np.linalg.lstsq(X[:, S], y, rcond=None)
            r = y - X[:, S] @ coef
            rss = float(r @ r)
            if k not in best or rss < best[k][0]:
                best[k] = (rss, S)
    return best


def brute_objective(beta, dataset, spec):
    r = dataset.X @ beta - dataset.y
    total = 0.5 * float(r @ r)
    lam, tau = spec.lam, spec.tau
    for t in np.abs(beta):
        if spec.kind == "mcp":
            total += lam * t - t * t / (2 * tau) if t <= lam * tau else 0.5 * lam * lam * tau
        elif t <= lam:
            total += lam * t
        elif t <= lam * tau:
            total += (lam * tau * t - 0.5 * (t * t + lam * lam)) / (tau - 1)
        else:
            total += 0.5 * lam * lam * (tau + 1)
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


__all__ = ["grid_argmin", "small_problem", "best_subset", "brute_objective",
           "objective_value", "PenaltySpec"]
