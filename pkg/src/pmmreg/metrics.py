"""Replication statistics: Time, RE, MS, CM and the discovery rates."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .simgen import GroundTruth

SUMMARY_COLUMNS = ["method", "penalty", "n", "p", "K", "kappa", "sigma1", "tau", "reps",
                   "time_mean", "re_mean", "ms_mean", "cm_pct", "apdr", "afdr", "acdr",
                   "failures"]


@dataclass
class ReplicationRecord:
    beta_hat: np.ndarray
    truth: GroundTruth
    wall_time: float = 0.0

    @property
    def active_hat(self) -> np.ndarray:
        return np.flatnonzero(self.beta_hat)


def relative_error(record: ReplicationRecord) -> float:
    star = record.truth.beta_star
    denom = np.linalg.norm(star)
    if denom == 0:
        raise ValueError("relative error is undefined for beta_star = 0")
    return float(np.linalg.norm(record.beta_hat - star) / denom)


def _sets(record):
    return set(record.active_hat.tolist()), set(np.asarray(record.truth.active_star).tolist())


def aggregate(records) -> dict:
    if not records:
        raise ValueError("no records to aggregate")
    sizes, correct = [], []
    for r in records:
        hat, star = _sets(r)
        sizes.append(len(hat))
        correct.append(hat == star)
    return {
        "time_mean": float(np.mean([r.wall_time for r in records])),
        "re_mean": float(np.mean([relative_error(r) for r in records])),
        "ms_mean": float(np.mean(sizes)),
        "cm_pct": 100.0 * float(np.mean(correct)),
    }


def discovery_rates(records) -> dict:
    """APDR, AFDR and ACDR = APDR + (1 - AFDR); an empty estimate has FDR 0."""
    if not records:
        raise ValueError("no records to aggregate")
    pdr, fdr = [], []
    for r in records:
        hat, star = _sets(r)
        hits = len(hat & star)
        pdr.append(hits / len(star) if star else 1.0)
        fdr.append((len(hat) - hits) / len(hat) if hat else 0.0)
    apdr, afdr = float(np.mean(pdr)), float(np.mean(fdr))
    return {"apdr": apdr, "afdr": afdr, "acdr": apdr + 1.0 - afdr}


def summary_row(records, failures: int = 0, timing: bool = True, **labels) -> dict:
    """One summary CSV row; statistics are NaN when every replication failed."""
    row = {k: labels.get(k) for k in SUMMARY_COLUMNS[:8]}
    row["reps"] = len(records) + failures
    if records:
        row.update(aggregate(records))
        row.update(discovery_rates(records))
    else:
        row.update({k: math.nan for k in SUMMARY_COLUMNS[9:16]})
    if not timing:
        row["time_mean"] = None
    row["failures"] = failures
    return row


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_summary_csv(rows, path_or_stream, columns=SUMMARY_COLUMNS) -> None:
    if not hasattr(path_or_stream, "write"):
        with open(path_or_stream, "w", newline="") as fh:
            return write_summary_csv(rows, fh, columns)
    w = csv.writer(path_or_stream, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
