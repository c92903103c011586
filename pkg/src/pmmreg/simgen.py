"""Synthetic sparse regression problems with AR(1)-correlated Gaussian designs.

Every draw comes from a PCG64 stream keyed by ``(seed, rep, purpose)`` so a
single replication can be regenerated without replaying the others.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.signal import lfilter

from .dataio import Dataset, read_matrix, write_matrix

_DESIGN, _TRUTH, _NOISE = 0, 1, 2

# nonzero coefficients of the fixed ten-sparse example (1-based positions)
BOXPLOT_BETA = {30: 6.0, 198: -11.0, 269: -10.0, 395: 25.0, 442: -8.0,
                495: 100.0, 637: -9.0, 766: -10.0, 777: 5.0, 865: 1.0}


@dataclass(frozen=True)
class SimDesign:
    n: int
    p: int
    K: int
    kappa: float = 0.0
    sigma1_noise: float = 0.1
    R: float = 100.0
    seed: int = 0
    sign_mode: str = "random"
    rep: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.K < 1:
            raise ValueError("n, p and K must be positive")
        if self.K >= self.n:
            raise ValueError(f"K={self.K} must be smaller than n={self.n}")
        if self.K > self.p:
            raise ValueError(f"K={self.K} exceeds p={self.p}")
        if not 0 <= self.kappa < 1:
            raise ValueError("kappa must lie in [0, 1)")
        if self.sigma1_noise < 0:
            raise ValueError("noise level must be nonnegative")
        if self.R < 1:
            raise ValueError("R must be at least 1")
        if self.sign_mode not in ("random", "positive"):
            raise ValueError(f"unknown sign_mode {self.sign_mode!r}")

    def replicate(self, rep: int) -> "SimDesign":
        return replace(self, rep=rep)


@dataclass
class GroundTruth:
    beta_star: np.ndarray
    active_star: np.ndarray


def _rng(seed: int, rep: int, purpose: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(rep, purpose))
    return np.random.Generator(np.random.PCG64(ss))


def gen_design(design: SimDesign) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma) with Sigma_ij = kappa^|i-j|.

    Uses the AR(1) recursion x_1 = e_1, x_j = kappa x_{j-1} + sqrt(1-kappa^2) e_j,
    which reproduces that covariance exactly.
    """
    rng = _rng(design.seed, design.rep, _DESIGN)
    E = rng.standard_normal((design.n, design.p))
    k = design.kappa
    if k == 0:
        return np.asfortranarray(E)
    E[:, 1:] *= math.sqrt(1.0 - k * k)
    return np.asfortranarray(lfilter([1.0], [1.0, -k], E, axis=1))


def gen_ground_truth(design: SimDesign) -> GroundTruth:
    rng = _rng(design.seed, design.rep, _TRUTH)
    active = np.sort(rng.choice(design.p, size=design.K, replace=False))
    mags = rng.uniform(1.0, design.R, size=design.K)
    if design.sign_mode == "random":
        mags *= rng.choice([-1.0, 1.0], size=design.K)
    beta = np.zeros(design.p)
    beta[active] = mags
    return GroundTruth(beta, active)


def boxplot_truth(p: int = 1000) -> GroundTruth:
    """The fixed ten-sparse coefficient vector used for the box-plot study."""
    beta = np.zeros(p)
    for pos, val in BOXPLOT_BETA.items():
        beta[pos - 1] = val
    return GroundTruth(beta, np.flatnonzero(beta))


def gen_response(X: np.ndarray, truth: GroundTruth, sigma1_noise: float,
                 seed: int, rep: int = 0) -> np.ndarray:
    if X.shape[1] != truth.beta_star.size:
        raise ValueError("X and beta_star disagree on p")
    y = X @ truth.beta_star
    if sigma1_noise > 0:
        y = y + sigma1_noise * _rng(seed, rep, _NOISE).standard_normal(X.shape[0])
    return y


def simulate(design: SimDesign) -> tuple[Dataset, GroundTruth]:
    X = gen_design(design)
    truth = gen_ground_truth(design)
    y = gen_response(X, truth, design.sigma1_noise, design.seed, design.rep)
    return Dataset(X, y, meta={"design": asdict(design)}), truth


def dump(design: SimDesign, dataset: Dataset, truth: GroundTruth, prefix) -> list:
    """Write ``prefix``.X.bin, .y.csv, .beta.csv and .json; return the paths."""
    prefix = str(prefix)
    paths = [prefix + ".X.bin", prefix + ".y.csv", prefix + ".beta.csv", prefix + ".json"]
    write_matrix(paths[0], dataset.X)
    for path, name, vec in ((paths[1], "y", dataset.y), (paths[2], "beta_star", truth.beta_star)):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([name])
            w.writerows([[repr(float(v))] for v in vec])
    with open(paths[3], "w") as fh:
        json.dump({"design": asdict(design), "active_star": truth.active_star.tolist()},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def load_dump(prefix) -> tuple[Dataset, GroundTruth, SimDesign]:
    """Read back the files written by :func:`dump`."""
    prefix = str(prefix)
    X = read_matrix(prefix + ".X.bin")
    cols = []
    for suffix in (".y.csv", ".beta.csv"):
        with open(prefix + suffix, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        cols.append(np.array([float(r[0]) for r in rows]))
    with open(prefix + ".json") as fh:
        meta = json.load(fh)
    design = SimDesign(**meta["design"])
    truth = GroundTruth(cols[1], np.asarray(meta["active_star"], dtype=int))
    return Dataset(X, cols[0], meta={"design": meta["design"]}), truth, design
