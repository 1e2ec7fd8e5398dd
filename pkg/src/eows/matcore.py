"""Dense matrix substrate: validation, SVD with a fixed sign convention, metrics and file IO."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import InputError, NumericError

__all__ = [
    "SvdTriplet",
    "Metrics",
    "as_mat",
    "svd",
    "mse",
    "subspace_inner",
    "metrics",
    "read_matrix",
    "write_matrix",
]

Array = NDArray[np.float64]

_MAGIC = b"EOWS"
_VERSION = 1


def as_mat(m, name: str = "matrix") -> Array:
    """Return `m` as a C-contiguous finite float64 2-D array or raise InputError."""
    a = np.ascontiguousarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise InputError(f"{name} must be two-dimensional, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise InputError(f"{name} must have at least one row and one column")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class SvdTriplet:
    U: Array
    sigma: Array
    V: Array

    @property
    def k(self) -> int:
        return int(self.sigma.shape[0])

    def matrix(self) -> Array:
        return (self.U * self.sigma) @ self.V.T


@dataclass(frozen=True)
class Metrics:
    mse: float
    left_inner: float
    right_inner: float


def _fix_signs(U: Array, V: Array) -> None:
    # largest-magnitude entry of each left vector made nonnegative
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    U *= s
    V *= s


def svd(m, k: int | None = None) -> SvdTriplet:
    """Thin SVD truncated to the top `k` triplets."""
    a = as_mat(m)
    p, n = a.shape
    r = min(p, n)
    if k is None:
        k = r
    if not 0 <= k <= r:
        raise InputError(f"k={k} outside [0, {r}]")
    try:
        U, s, Vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    U = np.ascontiguousarray(U[:, :k])
    V = np.ascontiguousarray(Vt[:k].T)
    _fix_signs(U, V)
    return SvdTriplet(U, s[:k].copy(), V)


def mse(a, b) -> float:
    """Mean squared entrywise difference ‖a − b‖²_F/(pn)."""
    x = as_mat(a, "a")
    y = as_mat(b, "b")
    if x.shape != y.shape:
        raise InputError(f"shape mismatch {x.shape} vs {y.shape}")
    d = x - y
    return float(np.sum(d * d) / d.size)


def subspace_inner(U_true, u_hat) -> float:
    """Norm of the projection of the unit vector `u_hat` onto span(U_true)."""
    U = np.asarray(U_true, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    u = np.asarray(u_hat, dtype=np.float64).ravel()
    if U.shape[0] != u.shape[0]:
        raise InputError("U_true and u_hat lengths differ")
    if abs(np.linalg.norm(u) - 1.0) > 1e-6:
        raise InputError("u_hat must have unit norm")
    return float(np.linalg.norm(U.T @ u))


def metrics(s_hat, truth_signal, truth: SvdTriplet, r_hat: int) -> Metrics:
    """MSE plus the projections of the r̂-th estimated singular vectors onto the true top-r̂ subspaces."""
    s_hat = as_mat(s_hat, "estimate")
    k = min(r_hat, min(s_hat.shape))
    if k > 0 and np.any(s_hat):
        est = svd(s_hat, k)
        r = min(r_hat, truth.k)
        li = subspace_inner(truth.U[:, :r], est.U[:, k - 1])
        ri = subspace_inner(truth.V[:, :r], est.V[:, k - 1])
    else:
        li = ri = 0.0
    return Metrics(mse(s_hat, truth_signal), li, ri)


def write_matrix(path: str | Path, m, fmt: str | None = None) -> None:
    """Write a matrix in the binary (.eows) or text format; the suffix picks the default."""
    a = as_mat(m)
    path = Path(path)
    fmt = fmt or ("text" if path.suffix in (".txt", ".tsv", ".dat") else "binary")
    p, n = a.shape
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_MAGIC + struct.pack("<IQQ", _VERSION, p, n))
            fh.write(a.astype("<f8").tobytes(order="C"))
    elif fmt == "text":
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"{p} {n}\n")
            for row in a:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")
    else:
        raise InputError(f"unknown matrix format {fmt!r}")


def read_matrix(path: str | Path) -> Array:
    """Read either matrix format, detected from the magic bytes."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise InputError(f"file not found: {path}") from exc
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if raw[:4] == _MAGIC:
        if len(raw) < 24:
            raise InputError(f"{path}: truncated header")
        version, p, n = struct.unpack("<IQQ", raw[4:24])
        if version != _VERSION:
            raise InputError(f"{path}: unsupported version {version}")
        if len(raw) != 24 + 8 * p * n:
            raise InputError(f"{path}: expected {p}x{n} payload, got {len(raw) - 24} bytes")
        a = np.frombuffer(raw, dtype="<f8", offset=24).reshape(p, n)
        return as_mat(a.astype(np.float64), str(path))
    try:
        lines = raw.decode("ascii").split("\n")
        p, n = (int(t) for t in lines[0].split())
        rows = [ln.split() for ln in lines[1:] if ln.strip()]
        if len(rows) != p or any(len(r) != n for r in rows):
            raise ValueError(f"expected {p} rows of {n} values")
        a = np.array(rows, dtype=np.float64)
    except (UnicodeDecodeError, ValueError) as exc:
        raise InputError(f"{path}: malformed text matrix ({exc})") from exc
    return as_mat(a.reshape(p, n), str(path))
