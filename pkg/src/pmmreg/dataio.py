"""Datasets: container, LIBSVM text I/O, polynomial expansion, scaling.

Designs are stored dense and column-major since every solver here walks
columns.  The binary matrix dump is shared with :mod:`pmmreg.simgen`.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

MAX_ENTRIES = 200_000_000
MATRIX_MAGIC = b"PMMX"
_HEADER = struct.Struct("<4sQQ8s")


class ParseError(ValueError):
    """Malformed LIBSVM input."""


class CapacityError(ValueError):
    """Requested design would exceed the dense-storage cap."""


@dataclass(eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asfortranarray(np.asarray(self.X, dtype=float))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=float).ravel())
        if X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        n, p = X.shape
        if n < 1 or p < 1:
            raise ValueError("dataset needs n >= 1 and p >= 1")
        if y.shape != (n,):
            raise ValueError(f"y has {y.size} entries, X has {n} rows")
        if self.feature_names is not None and len(self.feature_names) != p:
            raise ValueError("feature_names length does not match p")
        self.X, self.y = X, y
        self.column_norms = np.sqrt(np.einsum("ij,ij->j", X, X))
        self._Xty = None
        self._lipschitz = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def Xty(self) -> np.ndarray:
        if self._Xty is None:
            self._Xty = self.X.T @ self.y
        return self._Xty

    def predict(self, beta: np.ndarray) -> np.ndarray:
        """``X @ beta``, touching only the support when beta is sparse."""
        nz = np.flatnonzero(beta)
        if nz.size * 4 < self.p:
            return self.X[:, nz] @ beta[nz]
        return self.X @ beta

    def gradient(self, beta: np.ndarray) -> np.ndarray:
        """Gradient of 0.5*||X beta - y||^2."""
        return self.X.T @ (self.predict(beta) - self.y)

    def lipschitz(self) -> float:
        """Upper estimate of ||X||_2^2 (power iteration, padded by 1%)."""
        if self._lipschitz is None:
            rng = np.random.default_rng(0)
            v = rng.standard_normal(self.p)
            est = 0.0
            for _ in range(30):
                w = self.X.T @ (self.X @ v)
                nrm = np.linalg.norm(w)
                if nrm == 0:
                    break
                est = nrm / np.linalg.norm(v)
                v = w / nrm
            self._lipschitz = 1.01 * est
        return self._lipschitz

    def same_as(self, other: "Dataset") -> bool:
        return (self.X.shape == other.X.shape and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y))


def parse_libsvm(stream: IO[str] | Iterable[str], drop_zero_columns: bool = True,
                 max_entries: int = MAX_ENTRIES) -> Dataset:
    """Read ``label idx:val ...`` lines (1-based, strictly increasing idx)."""
    labels, rows = [], []
    p_raw = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise ParseError(f"line {lineno}: bad label {tokens[0]!r}") from None
        entries = []
        last = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"line {lineno}: expected idx:val, got {tok!r}")
            try:
                idx, val = int(idx_s), float(val_s)
            except ValueError:
                raise ParseError(f"line {lineno}: bad pair {tok!r}") from None
            if idx < 1:
                raise ParseError(f"line {lineno}: index {idx} is not 1-based")
            if idx <= last:
                raise ParseError(f"line {lineno}: indices not strictly increasing at {idx}")
            last = idx
            entries.append((idx - 1, val))
        p_raw = max(p_raw, last)
        labels.append(label)
        rows.append(entries)
    if not labels:
        raise ParseError("no data lines in input")
    n = len(labels)
    if n * p_raw > max_entries:
        raise CapacityError(f"{n} x {p_raw} exceeds the cap of {max_entries} entries")
    if p_raw == 0:
        raise ParseError("input has no features")
    X = np.zeros((n, p_raw), order="F")
    for i, entries in enumerate(rows):
        for j, v in entries:
            X[i, j] = v
    meta = {"n": n, "p_raw": p_raw}
    names = [f"x{j + 1}" for j in range(p_raw)]
    if drop_zero_columns:
        keep = np.flatnonzero(np.any(X != 0, axis=0))
        if keep.size == 0:
            raise ParseError("every column is zero")
        meta["dropped_columns"] = [int(j) for j in np.setdiff1d(np.arange(p_raw), keep)]
        X = X[:, keep]
        names = [names[j] for j in keep]
        meta["kept_columns"] = [int(j) for j in keep]
    meta["p_final"] = X.shape[1]
    return Dataset(X, np.asarray(labels), feature_names=names, meta=meta)


def load_libsvm(path, **kwargs) -> Dataset:
    with open(path) as fh:
        ds = parse_libsvm(fh, **kwargs)
    ds.meta["source"] = str(path)
    return ds


def write_libsvm(dataset: Dataset, stream: IO[str]) -> None:
    """Inverse of :func:`parse_libsvm` for datasets without zero columns."""
    for i in range(dataset.n):
        row = dataset.X[i]
        nz = np.flatnonzero(row)
        parts = [repr(float(dataset.y[i]))]
        parts += [f"{j + 1}:{float(row[j])!r}" for j in nz]
        stream.write(" ".join(parts) + "\n")


def dumps_libsvm(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_libsvm(dataset, buf)
    return buf.getvalue()


def polynomial_expand(dataset: Dataset, order: int, max_entries: int = MAX_ENTRIES) -> Dataset:
    """Append per-feature monomials x, x^2, ..., x^order.

    Zero columns and exact duplicates (e.g. x^2 == x for 0/1 features) are
    dropped; the first occurrence wins.
    """
    if int(order) != order or order < 1:
        raise ValueError("order must be a positive integer")
    order = int(order)
    n, p = dataset.X.shape
    if n * p * order > max_entries:
        raise CapacityError(f"expansion to {p * order} features exceeds the cap")
    base_names = dataset.feature_names or [f"x{j + 1}" for j in range(p)]
    cols, names, seen = [], [], set()
    for k in range(1, order + 1):
        block = dataset.X ** k
        for j in range(p):
            c = np.ascontiguousarray(block[:, j])
            if not np.any(c):
                continue
            key = c.tobytes()
            if key in seen:
                continue
            seen.add(key)
            cols.append(c)
            names.append(base_names[j] if k == 1 else f"{base_names[j]}^{k}")
    X = np.column_stack(cols)
    meta = dict(dataset.meta)
    meta.update({
        "n": n,
        "p_raw": meta.get("p_raw", p),
        "p_before_expansion": p,
        "p_final": X.shape[1],
        "expansion_rule": "per-feature-monomials",
        "order": order,
        "expansion_dropped": p * order - X.shape[1],
    })
    return Dataset(X, dataset.y.copy(), feature_names=names, meta=meta)


@dataclass(frozen=True)
class Scaling:
    scale: np.ndarray

    def to_original(self, gamma: np.ndarray) -> np.ndarray:
        """Coefficients of the standardized problem back to the raw columns."""
        return np.asarray(gamma) / self.scale

    def to_standardized(self, beta: np.ndarray) -> np.ndarray:
        return np.asarray(beta) * self.scale


def standardize(dataset: Dataset) -> tuple[Dataset, Scaling]:
    """Scale each column to unit Euclidean norm."""
    norms = dataset.column_norms
    if np.any(norms == 0):
        raise ValueError("standardize needs a design without zero columns")
    ds = Dataset(dataset.X / norms, dataset.y, feature_names=dataset.feature_names,
                 meta=dict(dataset.meta, standardized=True))
    return ds, Scaling(norms.copy())


def metadata_json(dataset: Dataset) -> str:
    m = dataset.meta
    out = {
        "n": dataset.n,
        "p_raw": m.get("p_raw", dataset.p),
        "p_final": dataset.p,
        "dropped_columns": m.get("dropped_columns", []),
        "expansion_rule": m.get("expansion_rule"),
        "order": m.get("order"),
    }
    return json.dumps(out, indent=2)


def write_matrix(path, X: np.ndarray) -> None:
    """Binary dump: magic, n, p, dtype tag, then column-major float64 data."""
    X = np.asarray(X, dtype="<f8")
    n, p = X.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, n, p, b"<f8".ljust(8)))
        fh.write(np.asfortranarray(X).tobytes(order="F"))


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, n, p, tag = _HEADER.unpack(head)
        if magic != MATRIX_MAGIC:
            raise ValueError(f"{path}: not a matrix dump")
        dtype = np.dtype(tag.rstrip(b" \x00").decode())
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != n * p:
        raise ValueError(f"{path}: expected {n * p} values, found {data.size}")
    return data.reshape((n, p), order="F").astype(float)
