"""eOptShrink: data-driven bulk edge, effective rank, spike estimates and optimal shrinkers."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .errors import InputError, NumericError
from .matcore import SvdTriplet, as_mat, svd

__all__ = [
    "ShrinkTarget",
    "SpectrumView",
    "SpikeEstimates",
    "EOptResult",
    "default_c",
    "spectrum",
    "bulk_edge",
    "effective_rank",
    "impute_and_cdf",
    "stieltjes_at",
    "estimate_spikes",
    "shrinker_values",
    "eoptshrink",
]

log = logging.getLogger(__name__)

Array = NDArray[np.float64]

_KAPPA = 2.0 ** (2.0 / 3.0) - 1.0
_MIN_GAP = 1e-12


class ShrinkTarget(enum.Enum):
    FROBENIUS = "fro"
    OPERATOR = "op"
    NUCLEAR = "nuc"

    @classmethod
    def parse(cls, value: "str | ShrinkTarget") -> "ShrinkTarget":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        aliases = {"frobenius": "fro", "operator": "op", "nuclear": "nuc"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise InputError(f"unknown shrink target {value!r}") from None


@dataclass(frozen=True)
class SpectrumView:
    """Descending eigenvalues of S̃S̃ᵀ, with p ≤ n after any internal transpose."""

    eigs: Array
    p: int
    n: int

    def __post_init__(self) -> None:
        e = np.asarray(self.eigs, dtype=np.float64)
        if e.ndim != 1 or e.size == 0:
            raise InputError("eigs must be a non-empty vector")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise InputError("eigs must be finite and nonnegative")
        if np.any(np.diff(e) > 0):
            raise InputError("eigs must be sorted descending")
        object.__setattr__(self, "eigs", e)

    @property
    def beta(self) -> float:
        return self.p / self.n


@dataclass
class SpikeEstimates:
    r_hat: int
    lambda_plus_hat: float
    c_exp: float
    lam: Array = field(default_factory=lambda: np.zeros(0))
    m1: Array = field(default_factory=lambda: np.zeros(0))
    m2: Array = field(default_factory=lambda: np.zeros(0))
    m1p: Array = field(default_factory=lambda: np.zeros(0))
    m2p: Array = field(default_factory=lambda: np.zeros(0))
    t_hat: Array = field(default_factory=lambda: np.zeros(0))
    tp_hat: Array = field(default_factory=lambda: np.zeros(0))
    d_hat: Array = field(default_factory=lambda: np.zeros(0))
    a1_hat: Array = field(default_factory=lambda: np.zeros(0))
    a2_hat: Array = field(default_factory=lambda: np.zeros(0))
    imputed: Array = field(default_factory=lambda: np.zeros(0))
    dropped: int = 0

    def amplitude(self) -> Array:
        """Amplitude-corrected singular values d̂/√(â₁â₂)."""
        return self.d_hat / np.sqrt(self.a1_hat * self.a2_hat)

    def to_dict(self) -> dict:
        return {
            "r_hat": self.r_hat,
            "lambda_plus_hat": self.lambda_plus_hat,
            "c": self.c_exp,
            "dropped": self.dropped,
            "spikes": [
                {"lambda": float(self.lam[i]), "d_hat": float(self.d_hat[i]),
                 "a1": float(self.a1_hat[i]), "a2": float(self.a2_hat[i])}
                for i in range(self.r_hat)
            ],
        }


def default_c(n: int) -> float:
    """min(1/2.01, 1/log(log n))."""
    if n < 3:
        return 1.0 / 2.01
    ll = math.log(math.log(n))
    return 1.0 / 2.01 if ll <= 0 else min(1.0 / 2.01, 1.0 / ll)


def _window(n: int, c: float) -> int:
    if not 0.0 < c < 0.5:
        raise InputError(f"c must lie in (0, 1/2), got {c}")
    # guard against n**c landing a hair below an integer
    return int(math.floor(n ** c + 1e-9))


def spectrum(y) -> tuple[SpectrumView, bool]:
    """Eigenvalues of the smaller Gram matrix; the flag reports whether y was transposed."""
    a = as_mat(y)
    flipped = a.shape[0] > a.shape[1]
    if flipped:
        a = a.T
    s = np.linalg.svd(a, compute_uv=False)
    return SpectrumView(np.sort(s * s)[::-1], a.shape[0], a.shape[1]), flipped


def bulk_edge(spec: SpectrumView, c: float) -> float:
    k = _window(spec.n, c)
    e = spec.eigs
    if 2 * k + 1 > e.size:
        raise InputError(f"matrix too small for c={c}: needs {2 * k + 1} eigenvalues, has {e.size}")
    return float(e[k] + (e[k] - e[2 * k]) / _KAPPA)


def effective_rank(spec: SpectrumView, lambda_plus_hat: float) -> int:
    if not math.isfinite(lambda_plus_hat):
        raise InputError("lambda_plus_hat must be finite")
    return int(np.count_nonzero(spec.eigs > lambda_plus_hat + spec.n ** (-1.0 / 3.0)))


@dataclass(frozen=True)
class ImputedCdf:
    """Right-continuous step CDF over the imputed and remaining bulk eigenvalues."""

    points: Array

    def __call__(self, x) -> Array | float:
        pts = np.sort(self.points)
        v = np.searchsorted(pts, np.asarray(x, dtype=np.float64), side="right") / pts.size
        return float(v) if np.ndim(v) == 0 else v


def impute_and_cdf(spec: SpectrumView, r_hat: int, c: float) -> tuple[Array, ImputedCdf]:
    """Imputed λ̂ⱼ, j = r̂+1..r̂+k, and the CDF over them plus λ̃_{k+r̂+1..p}."""
    k = _window(spec.n, c)
    e = spec.eigs
    if r_hat + 2 * k + 1 > e.size:
        raise InputError(f"no bulk room: r_hat + 2k + 1 = {r_hat + 2 * k + 1} > {e.size}")
    top = e[k + r_hat]
    gap = top - e[2 * k + r_hat]
    j = np.arange(r_hat + 1, r_hat + k + 1, dtype=np.float64)
    imputed = top + (1.0 - ((j - r_hat - 1) / k) ** (2.0 / 3.0)) / _KAPPA * gap
    points = np.concatenate([imputed, e[k + r_hat:]])
    return imputed, ImputedCdf(points)


def stieltjes_at(spec: SpectrumView, imputed: Array, r_hat: int, lam: float) -> tuple[float, float, float, float]:
    """m̂₁, m̂₂ and their derivatives at λ̃ from the imputed bulk.

    m̂₂ follows from ∫ρ₂(t)/(t−x) with the (1−β) atom at zero:
    m̂₂ = βm̂₁ − (1−β)/λ̃.
    """
    k = np.asarray(imputed).size
    pts = np.concatenate([np.asarray(imputed, dtype=np.float64), spec.eigs[k + r_hat:]])
    diff = pts - lam
    if np.min(np.abs(diff)) < _MIN_GAP:
        raise NumericError(f"spike {lam} within {_MIN_GAP} of the bulk")
    if lam <= 0:
        raise NumericError("spike eigenvalue must be positive")
    inv = 1.0 / diff
    m1 = float(np.mean(inv))
    m1p = float(np.mean(inv * inv))
    beta = spec.beta
    m2 = beta * m1 - (1.0 - beta) / lam
    m2p = beta * m1p + (1.0 - beta) / lam**2
    return m1, m2, m1p, m2p


def estimate_spikes(spec: SpectrumView, c: float | None = None) -> SpikeEstimates:
    if c is None:
        c = default_c(spec.n)
    lp = bulk_edge(spec, c)
    r = effective_rank(spec, lp)
    k = _window(spec.n, c)
    r = min(r, spec.eigs.size - 2 * k - 1)
    if r <= 0:
        return SpikeEstimates(0, lp, c)
    imputed, _ = impute_and_cdf(spec, r, c)
    rows = []
    dropped = 0
    for i in range(r):
        lam = float(spec.eigs[i])
        m1, m2, m1p, m2p = stieltjes_at(spec, imputed, r, lam)
        t = lam * m1 * m2
        tp = m1 * m2 + lam * (m1p * m2 + m1 * m2p)
        if not (t > 0 and tp != 0 and math.isfinite(t)):
            dropped += 1
            log.warning("spike %d dropped: T=%g", i, t)
            continue
        d = 1.0 / math.sqrt(t)
        a1 = m1 / (d * d * tp)
        a2 = m2 / (d * d * tp)
        if not (0 < a1 < 1.5 and 0 < a2 < 1.5):
            dropped += 1
            log.warning("spike %d dropped: a1=%g a2=%g", i, a1, a2)
            continue
        a1 = min(max(a1, 1e-8), 1.0)
        a2 = min(max(a2, 1e-8), 1.0)
        rows.append((lam, m1, m2, m1p, m2p, t, tp, d, a1, a2))
    if not rows:
        return SpikeEstimates(0, lp, c, imputed=imputed, dropped=dropped)
    cols = [np.array(col, dtype=np.float64) for col in zip(*rows)]
    return SpikeEstimates(len(rows), lp, c, *cols, imputed=imputed, dropped=dropped)


def shrinker_values(est: SpikeEstimates, target: ShrinkTarget | str) -> Array:
    target = ShrinkTarget.parse(target)
    d, a1, a2 = est.d_hat, est.a1_hat, est.a2_hat
    if target is ShrinkTarget.FROBENIUS:
        return d * np.sqrt(a1 * a2)
    if target is ShrinkTarget.OPERATOR:
        return d * np.sqrt(np.minimum(a1, a2) / np.maximum(a1, a2))
    v = d * (np.sqrt(a1 * a2) - np.sqrt((1.0 - a1) * (1.0 - a2)))
    return np.maximum(v, 0.0)


@dataclass
class EOptResult:
    s_os: Array
    s_amp: Array
    z_hat: Array
    est: SpikeEstimates
    phi: Array
    triplet: object  # top-r̂ SvdTriplet of y

    def __iter__(self):
        return iter((self.s_os, self.s_amp, self.z_hat, self.est))


def _swap_sides(est: SpikeEstimates) -> SpikeEstimates:
    return replace(est, m1=est.m2, m2=est.m1, m1p=est.m2p, m2p=est.m1p,
                   a1_hat=est.a2_hat, a2_hat=est.a1_hat)


def _spike_index(spec: SpectrumView, est: SpikeEstimates) -> Array:
    # retained spikes keep their eigenvalue rank among the outliers
    return np.searchsorted(-spec.eigs, -est.lam, side="left")


def eoptshrink(y, target: ShrinkTarget | str = ShrinkTarget.FROBENIUS, c: float | None = None) -> EOptResult:
    """Steps (i)-(iii): shrink the outlier singular values and form Ẑ."""
    a = as_mat(y)
    target = ShrinkTarget.parse(target)
    full = svd(a)
    sv = full.sigma
    p, n = min(a.shape), max(a.shape)
    spec = SpectrumView(sv * sv, p, n)
    est = estimate_spikes(spec, c)
    phi = shrinker_values(est, target)
    if a.shape[0] > a.shape[1]:
        # estimates describe the transposed problem; swap sides back
        est = _swap_sides(est)
    idx = _spike_index(spec, est).astype(int)
    U = full.U[:, idx]
    V = full.V[:, idx]
    trip = SvdTriplet(np.ascontiguousarray(U), sv[idx].copy(), np.ascontiguousarray(V))
    s_os = (U * phi) @ V.T
    s_amp = (U * est.amplitude()) @ V.T
    return EOptResult(s_os, s_amp, a - s_os, est, phi, trip)
