"""MCP and SCAD penalties, their DC split, and proximal maps.

Both penalties are written as ``rho(t) = lam * |t| - q(t)`` where ``q`` is
convex and continuously differentiable.  Everything here is vectorised over
numpy arrays and free of state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MCP = "mcp"
SCAD = "scad"
KINDS = (MCP, SCAD)

# default concavity per penalty
DEFAULT_TAU = {MCP: 2.7, SCAD: 3.7}


class PenaltyDomainError(ValueError):
    """Raised for penalty parameters outside their admissible range."""


@dataclass(frozen=True)
class PenaltySpec:
    kind: str
    lam: float
    tau: float

    def __post_init__(self):
        kind = str(self.kind).lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise PenaltyDomainError(f"unknown penalty kind {self.kind!r}")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise PenaltyDomainError(f"lam must be positive and finite, got {self.lam}")
        min_tau = 1.0 if kind == MCP else 2.0
        if not (self.tau > min_tau and math.isfinite(self.tau)):
            raise PenaltyDomainError(
                f"{kind} needs tau > {min_tau:g}, got {self.tau}")

    def with_lam(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(self.kind, lam, self.tau)


def penalty_value(t, spec: PenaltySpec):
    """Elementwise penalty rho(t; lam, tau)."""
    lam, tau = spec.lam, spec.tau
    a = np.abs(np.asarray(t, dtype=float))
    if spec.kind == MCP:
        out = np.where(a > lam * tau, 0.5 * lam * lam * tau,
                       lam * (a - a * a / (2.0 * lam * tau)))
    else:
        out = np.where(
            a > lam * tau, 0.5 * lam * lam * (tau + 1.0),
            np.where(a > lam, (lam * tau * a - 0.5 * (a * a + lam * lam)) / (tau - 1.0),
                     lam * a))
    return out[()] if out.ndim == 0 else out


def q_elementwise(t, spec: PenaltySpec):
    lam, tau = spec.lam, spec.tau
    a = np.abs(np.asarray(t, dtype=float))
    if spec.kind == MCP:
        return np.where(a > lam * tau, lam * a - 0.5 * lam * lam * tau,
                        a * a / (2.0 * tau))
    return np.where(
        a > lam * tau, lam * a - 0.5 * lam * lam * (tau + 1.0),
        np.where(a > lam, (a - lam) ** 2 / (2.0 * (tau - 1.0)), 0.0))


def q_value(beta, spec: PenaltySpec) -> float:
    """Sum of the convex part ``q`` over the coordinates of ``beta``."""
    return float(np.sum(q_elementwise(beta, spec)))


def q_gradient(beta, spec: PenaltySpec) -> np.ndarray:
    """Gradient of ``q``; every entry is bounded by ``lam`` in magnitude."""
    lam, tau = spec.lam, spec.tau
    b = np.asarray(beta, dtype=float)
    a = np.abs(b)
    s = np.sign(b)
    if spec.kind == MCP:
        return np.where(a > lam * tau, lam * s, b / tau)
    return np.where(a > lam * tau, lam * s,
                    np.where(a > lam, s * (a - lam) / (tau - 1.0), 0.0))


def soft_threshold(x, threshold: float):
    """Proximal map of ``threshold * ||.||_1``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    x = np.asarray(x, dtype=float)
    return np.maximum(np.abs(x) - threshold, 0.0) * np.sign(x)


def _is_strongly_convex(spec: PenaltySpec, weight: float) -> bool:
    # 1-D model 0.5*w*(u-x)^2 + rho(u) is strictly convex iff w beats the
    # largest negative curvature of rho
    if spec.kind == MCP:
        return weight * spec.tau > 1.0
    return weight * (spec.tau - 1.0) > 1.0


def prox_penalty(x, spec: PenaltySpec, weight: float = 1.0):
    """Minimiser of ``0.5 * weight * (u - x)**2 + rho(u)``, elementwise.

    With ``weight=1`` this is the proximal map of ``lam*||.||_1 - q``.  For
    MCP it is firm thresholding, for SCAD the three-branch rule.  When the
    1-D model is not convex (small weights) the minimiser is picked among
    the piecewise candidates, ties going to the smaller magnitude.
    """
    if not weight > 0:
        raise ValueError("weight must be positive")
    x = np.asarray(x, dtype=float)
    if not _is_strongly_convex(spec, weight):
        out = _prox_by_candidates(x, spec, weight)
        return out[()] if out.ndim == 0 else out

    lam, tau, w = spec.lam, spec.tau, weight
    a = np.abs(x)
    s = np.sign(x)
    if spec.kind == MCP:
        mid = tau * (w * a - lam) / (w * tau - 1.0)
        u = np.where(a <= lam / w, 0.0, np.where(a <= lam * tau, mid, a))
    else:
        low = a - lam / w
        mid = (w * a * (tau - 1.0) - lam * tau) / (w * (tau - 1.0) - 1.0)
        u = np.where(a <= lam / w, 0.0,
                     np.where(a <= lam + lam / w, low,
                              np.where(a <= lam * tau, mid, a)))
    out = s * u
    return out[()] if out.ndim == 0 else out


def _prox_by_candidates(x, spec: PenaltySpec, weight: float) -> np.ndarray:
    lam, tau, w = spec.lam, spec.tau, weight
    a = np.abs(x)
    if spec.kind == MCP:
        knots = [0.0, lam * tau]
        curv = w - 1.0 / tau
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.clip((w * a - lam) / curv, 0.0, lam * tau) if curv > 0 else np.zeros_like(a)
        cands = [np.zeros_like(a), np.full_like(a, lam * tau), inner, np.maximum(a, lam * tau)]
    else:
        knots = [0.0, lam, lam * tau]
        curv = w - 1.0 / (tau - 1.0)
        first = np.clip(a - lam / w, 0.0, lam)
        if curv > 0:
            second = np.clip((w * a * (tau - 1.0) - lam * tau) / (w * (tau - 1.0) - 1.0),
                             lam, lam * tau)
        else:
            second = np.full_like(a, lam)
        cands = [first, second, np.full_like(a, lam * tau), np.maximum(a, lam * tau)]
    cands += [np.full_like(a, k) for k in knots]
    # sorted by magnitude so argmin's first-hit rule picks the smaller one on ties
    stack = np.sort(np.stack(cands), axis=0)
    obj = 0.5 * w * (stack - a) ** 2 + penalty_value(stack, spec)
    best = np.argmin(obj, axis=0)
    u = np.take_along_axis(stack, best[None, ...], axis=0)[0]
    return np.sign(x) * u


def prox_scalar(z: float, weight: float, kind: str, lam: float, tau: float) -> float:
    """Scalar prox for the coordinate-descent inner loop (no numpy overhead).

    Falls back to :func:`prox_penalty` outside the strongly convex regime.
    """
    a = abs(z)
    w = weight
    if kind == MCP:
        if w * tau <= 1.0:
            return float(prox_penalty(z, PenaltySpec(kind, lam, tau), w))
        if a <= lam / w:
            return 0.0
        if a > lam * tau:
            return z
        u = tau * (w * a - lam) / (w * tau - 1.0)
    else:
        if w * (tau - 1.0) <= 1.0:
            return float(prox_penalty(z, PenaltySpec(kind, lam, tau), w))
        if a <= lam / w:
            return 0.0
        if a > lam * tau:
            return z
        if a <= lam + lam / w:
            u = a - lam / w
        else:
            u = (w * a * (tau - 1.0) - lam * tau) / (w * (tau - 1.0) - 1.0)
    return u if z > 0 else -u


def objective_value(beta, dataset, spec: PenaltySpec) -> float:
    """DC objective ``0.5*||X beta - y||^2 + lam*||beta||_1 - q(beta)``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dataset.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({dataset.p},)")
    r = dataset.predict(beta) - dataset.y
    return 0.5 * float(r @ r) + spec.lam * float(np.abs(beta).sum()) - q_value(beta, spec)
