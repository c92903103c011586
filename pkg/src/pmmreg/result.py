from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class FitResult:
    beta: np.ndarray
    lambda_hat: float
    method: str
    penalty: str
    tau: float
    r1_kkt: float = float("nan")
    r2_kkt: float = float("nan")
    stage1_iters: int = 0
    stage2_iters: int = 0
    seconds: float = 0.0
    converged: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.beta)

    @property
    def iters(self) -> int:
        return self.stage2_iters

    def to_dict(self, timing: bool = True) -> dict:
        idx = self.active_set
        out = {
            "method": self.method,
            "penalty": self.penalty,
            "tau": self.tau,
            "p": int(self.beta.size),
            "beta": [[int(i), float(self.beta[i])] for i in idx],
            "lambda_hat": float(self.lambda_hat),
            "r1_kkt": float(self.r1_kkt),
            "r2_kkt": float(self.r2_kkt),
            "iters": {"stage1": int(self.stage1_iters), "stage2": int(self.stage2_iters)},
            "seconds": float(self.seconds) if timing else None,
            "converged": bool(self.converged),
            "standardized": bool(self.extra.get("standardized", False)),
        }
        return out

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        beta = np.zeros(d["p"])
        for i, v in d["beta"]:
            beta[i] = v
        return cls(beta=beta, lambda_hat=d["lambda_hat"], method=d["method"],
                   penalty=d["penalty"], tau=d["tau"], r1_kkt=d["r1_kkt"],
                   r2_kkt=d["r2_kkt"], stage1_iters=d["iters"]["stage1"],
                   stage2_iters=d["iters"]["stage2"], seconds=d["seconds"] or 0.0,
                   converged=d["converged"],
                   extra={"standardized": bool(d.get("standardized", False))})


@dataclass
class TraceRecord:
    iter: int
    f: float
    step_norm: float
    sigma2: float
    r2_kkt: float
    inner_iters: int
    descent_gap: float = float("nan")
    delta_ok: bool = True
    r1_sub: float = float("nan")


TRACE_COLUMNS = ["iter", "f", "step_norm", "sigma2", "r2_kkt", "inner_iters"]


@dataclass
class Trace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    def last_r1(self, default: float = float("nan")) -> float:
        """Relative residual of the most recent inner subproblem solve."""
        return self.records[-1].r1_sub if self.records else default

    def descent_violations(self, slack: float = 1e-10) -> int:
        return sum(1 for r in self.records if r.descent_gap < -slack)

    def to_csv(self, path_or_stream) -> None:
        if not hasattr(path_or_stream, "write"):
            with open(path_or_stream, "w", newline="") as fh:
                return self.to_csv(fh)
        w = csv.writer(path_or_stream, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([r.iter, repr(r.f), repr(r.step_norm), repr(r.sigma2),
                        repr(r.r2_kkt), r.inner_iters])
