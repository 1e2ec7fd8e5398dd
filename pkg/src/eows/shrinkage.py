"""Coefficient shrinkage: soft thresholding, the classical WS baseline and the adaptive variance model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import InputError
from .hwt import BestBasis2D, CoeffMap, GhwtLayout, best_basis_2d, inverse_2d, tensor_analyze, transform_2d
from .matcore import as_mat
from .spectre import SpikeEstimates
from .treegeo import PartitionTree

__all__ = [
    "ThresholdPolicy",
    "VarTable",
    "soft_threshold",
    "universal_threshold",
    "classic_ws",
    "variance_terms",
    "coeff_variance",
    "var_table",
    "tau_star",
    "adaptive_shrink",
]

Array = NDArray[np.float64]

QUANTILE = 0.99


@dataclass(frozen=True)
class ThresholdPolicy:
    """kind is "global" (value = noise level σ) or "adaptive" (value = τ*)."""

    kind: str
    value: float

    def __post_init__(self) -> None:
        if self.kind not in ("global", "adaptive"):
            raise InputError(f"unknown threshold policy {self.kind!r}")
        if self.kind == "global" and not self.value > 0:
            raise InputError("global policy needs sigma > 0")
        if self.kind == "adaptive" and not self.value >= 0:
            raise InputError("adaptive policy needs tau >= 0")


def soft_threshold(x, t):
    """η_t(x) = (|x| − t)₊ sgn(x); works elementwise on arrays."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(np.isnan(t_arr)):
        raise InputError("threshold must be nonnegative")
    x_arr = np.asarray(x, dtype=np.float64)
    out = np.sign(x_arr) * np.maximum(np.abs(x_arr) - t_arr, 0.0)
    return float(out) if out.ndim == 0 else out


def universal_threshold(p: int, n: int, sigma: float) -> float:
    """√(2 log(pn)) σ/√n: the WS threshold for entries of variance σ²/n."""
    return math.sqrt(2.0 * math.log(p * n)) * sigma / math.sqrt(n)


def _shrink_map(cm: CoeffMap, thresholds: dict[tuple[int, int], Array] | float) -> CoeffMap:
    out: dict[tuple[int, int], Array] = {}
    for key, v in cm.values.items():
        t = thresholds if np.isscalar(thresholds) else thresholds[key]  # type: ignore[index]
        out[key] = soft_threshold(v, t) if v.size else v.copy()
    keep = cm.basis.passthrough()
    if keep is not None:
        out[keep][0] = cm.values[keep][0]
    return cm.replace(out)


def classic_ws(m, t_rows: PartitionTree, t_cols: PartitionTree, sigma: float,
               ell: float = 1.0, basis: BestBasis2D | None = None) -> Array:
    """Soft-threshold every best-basis coefficient of m at √(2 log pn)σ/√n, except the constant atom."""
    if not sigma > 0:
        raise InputError("sigma must be positive")
    a = as_mat(m)
    p, n = a.shape
    if basis is None:
        basis = best_basis_2d(tensor_analyze(a, t_rows, t_cols), ell)
    cm = transform_2d(a, basis)
    return inverse_2d(_shrink_map(cm, universal_threshold(p, n, sigma)))


# ---------------------------------------------------------------------------
# variance model


def _spike_sums(est: SpikeEstimates, p: int, n: int) -> tuple[float, float, float, float]:
    if est.r_hat < 1:
        raise InputError("variance model needs at least one detected spike")
    a1 = np.asarray(est.a1_hat, dtype=np.float64)
    a2 = np.asarray(est.a2_hat, dtype=np.float64)
    d = np.asarray(est.d_hat, dtype=np.float64)
    c1 = float(np.sum(1.0 / (a1 * n * n)))
    c2 = float(np.sum(1.0 / (a2 * p * p)))
    c3 = float(np.sum(1.0 / (a1 * p * n * n) + 1.0 / (a2 * p * p * n)))
    c4 = float(np.sum(d ** -2.0 / (a1 * a2)))
    return c1, c2, c3, c4


def variance_terms(s1, s2, s3: float, est: SpikeEstimates, p: int, n: int) -> tuple:
    """The four summands of F: row term, column term, global term and the product term."""
    c1, c2, c3, c4 = _spike_sums(est, p, n)
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    return (c1 * s1, c2 * s2, np.full(np.broadcast(s1, s2).shape, c3 * s3),
            c4 * (s1 / n + s3 / (p * n)) * (s2 / p + s3 / (p * n)))


def _f_value(s1, s2, s3, est, p, n):
    t1, t2, t3, t4 = variance_terms(s1, s2, s3, est, p, n)
    return t1 + t2 + t3 + t4


def coeff_variance(z_hat, row_atom, col_atom, est: SpikeEstimates) -> float:
    """σ̂²_Φ for one tensor atom; atoms are weight vectors over natural row / column indices."""
    z = as_mat(z_hat, "z_hat")
    p, n = z.shape
    w = np.asarray(row_atom, dtype=np.float64).ravel()
    v = np.asarray(col_atom, dtype=np.float64).ravel()
    if w.size != p or v.size != n:
        raise InputError("atom length does not match z_hat")
    s1 = float(np.sum((w @ z) ** 2))
    s2 = float(np.sum((z @ v) ** 2))
    s3 = float(np.sum(z * z))
    return float(_f_value(s1, s2, s3, est, p, n))


def _axis_energy(lay: GhwtLayout, z: Array, levels) -> dict[int, Array]:
    """Squared projection norms ‖ω ᵀ z‖² of every atom (along axis 0) on the requested levels."""
    coeffs = lay.analyze_levels(z)
    return {l: np.einsum("ij,ij->i", coeffs[l], coeffs[l]) for l in levels}


@dataclass
class VarTable:
    """σ̂²_Φ aligned with a basis (same keys and ordering as CoeffMap.values)."""

    values: dict[tuple[int, int], Array]
    s1: dict[int, Array]
    s2: dict[int, Array]
    s3: float

    def summary(self) -> dict:
        flat = np.concatenate([v for v in self.values.values()]) if self.values else np.zeros(1)
        sd = np.sqrt(flat)
        return {"min": float(sd.min()), "median": float(np.median(sd)), "max": float(sd.max())}


def var_table(z_hat, basis: BestBasis2D, est: SpikeEstimates) -> VarTable:
    z = as_mat(z_hat, "z_hat")
    p, n = z.shape
    if (p, n) != (basis.rows.N, basis.cols.N):
        raise InputError("z_hat shape does not match the basis")
    rl = sorted({k[0] for k in basis.index})
    cl = sorted({k[1] for k in basis.index})
    s1 = _axis_energy(basis.rows, z, rl)
    s2 = _axis_energy(basis.cols, z.T, cl)
    s3 = float(np.sum(z * z))
    values = {}
    for (a, b), idx in basis.index.items():
        values[(a, b)] = np.maximum(_f_value(s1[a][idx // n], s2[b][idx % n], s3, est, p, n), 0.0)
    return VarTable(values, s1, s2, s3)


def tau_star(z_hat) -> float:
    """99% nearest-rank quantile of |Ẑ| over its RMS entry size; 0 for a zero matrix."""
    z = as_mat(z_hat, "z_hat")
    rms = math.sqrt(float(np.mean(z * z)))
    if rms == 0.0:
        return 0.0
    q = float(np.quantile(np.abs(z), QUANTILE, method="inverted_cdf"))
    return q / rms


def adaptive_shrink(cm: CoeffMap, vt: VarTable, tau: float) -> CoeffMap:
    if not tau >= 0:
        raise InputError("tau must be nonnegative")
    if set(cm.values) != set(vt.values):
        raise InputError("coefficient map and variance table cover different level pairs")
    th = {}
    for k, v in cm.values.items():
        if vt.values[k].shape != v.shape:
            raise InputError(f"variance table block {k} has the wrong size")
        th[k] = tau * np.sqrt(vt.values[k])
    return _shrink_map(cm, th)
