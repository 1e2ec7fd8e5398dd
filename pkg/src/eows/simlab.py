"""Synthetic experiments: signal and noise generators, a trial runner and summary statistics."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .errors import EowsError, InputError
from .matcore import SvdTriplet, metrics, svd
from .pipeline import EowsConfig, run
from .spectre import eoptshrink

__all__ = [
    "NOISE_KINDS",
    "SIM_METHODS",
    "NoiseSpec",
    "SignalSpec",
    "HelixGeometry",
    "TrialResult",
    "derive_rng",
    "derive_seed",
    "noise_spectra",
    "gen_noise",
    "gen_helmholtz",
    "gen_sinusoid",
    "gen_signal",
    "run_trial",
    "run_experiment",
    "aggregate",
    "paired_ttest",
    "write_csv",
    "write_json",
    "worker_count",
]

log = logging.getLogger(__name__)

Array = NDArray[np.float64]

NOISE_KINDS = ("type1", "type2", "type3")
SIGNAL_KINDS = ("helmholtz", "sinusoid")
SIM_METHODS = ("noisy", "eoptshrink", "ws", "eows")
CSV_FIELDS = ("n", "method", "trial", "mse", "left_inner", "right_inner", "r_hat", "seed")


# seeding ----------------------------------------------------------------


def derive_seed(seed: int, label: str, *index: int) -> np.random.SeedSequence:
    """Counter-style derivation: the stream depends only on (seed, label, index)."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode()), *map(int, index)])


def derive_rng(seed: int, label: str, *index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, label, *index))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def worker_count() -> int:
    env = os.environ.get("EOWS_THREADS")
    cores = os.cpu_count() or 1
    if env:
        try:
            v = int(env)
        except ValueError:
            raise InputError(f"EOWS_THREADS must be an integer, got {env!r}") from None
        if v < 1:
            raise InputError("EOWS_THREADS must be at least 1")
        return min(v, cores) if cores else v
    return cores


# noise ------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "type1"
    df: float = 10.0

    def __post_init__(self) -> None:
        k = self.kind.lower()
        if k not in NOISE_KINDS:
            raise InputError(f"unknown noise kind {self.kind!r}")
        object.__setattr__(self, "kind", k)
        if not self.df > 2:
            raise InputError("t degrees of freedom must exceed 2")


def noise_spectra(kind: str, p: int, n: int) -> tuple[Array, Array]:
    """Diagonals D_A (length p) and D_B (length n) of the row and column covariances."""
    kind = NoiseSpec(kind).kind
    kp = np.arange(1, p + 1) / p
    kn = np.arange(1, n + 1) / n
    if kind == "type1":
        return np.ones(p), np.ones(n)
    if kind == "type2":
        q = n // 4
        dB = np.full(n, math.sqrt(0.3))
        dB[:q] = np.sqrt(10.0 + kn[:q])
        return np.sqrt(1.0 + 9.0 * kp), dB
    return np.exp(kp), 1.1 + np.sin(4.0 * np.pi * kn)


def _random_orthogonal(k: int, rng: np.random.Generator) -> Array:
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def _sqrt_cov(d: Array, rng: np.random.Generator) -> Array | None:
    if np.all(d == 1.0):
        return None
    q = _random_orthogonal(d.size, rng)
    return (q * np.sqrt(d)) @ q.T


def gen_noise(p: int, n: int, spec: NoiseSpec = NoiseSpec(), seed=None) -> Array:
    """Z = A^{1/2} X B^{1/2} / L with t_df entries in X and ‖Z‖_F = √p (average entry variance 1/n)."""
    if p < 2 or n < 2:
        raise InputError("noise dimensions must be at least 2")
    rng = _rng(seed)
    x = rng.standard_t(spec.df, size=(p, n)) / math.sqrt(n * spec.df / (spec.df - 2.0))
    dA, dB = noise_spectra(spec.kind, p, n)
    a_half = _sqrt_cov(dA, rng)
    b_half = _sqrt_cov(dB, rng)
    if a_half is not None:
        x = a_half @ x
    if b_half is not None:
        x = x @ b_half
    return x * (math.sqrt(p) / np.linalg.norm(x))


# signals ----------------------------------------------------------------


@dataclass(frozen=True)
class HelixGeometry:
    radius: float = 1.0
    pitch: float = 0.5  # rise per turn
    turns: float = 3.0
    sheet_x: float = 3.0  # the sheet is the plane x = sheet_x
    sheet_y: tuple[float, float] = (-1.5, 1.5)
    sheet_z: tuple[float, float] = (0.0, 1.5)


@dataclass(frozen=True)
class SignalSpec:
    kind: str = "sinusoid"
    nu: float = 1.0
    frob2: float = 150.0
    geometry: HelixGeometry = field(default_factory=HelixGeometry)
    normalize: bool = True  # sinusoid only: unit-norm U, V columns

    def __post_init__(self) -> None:
        k = self.kind.lower()
        if k not in SIGNAL_KINDS:
            raise InputError(f"unknown signal kind {self.kind!r}")
        object.__setattr__(self, "kind", k)
        if not self.frob2 > 0:
            raise InputError("frob2 must be positive")

    def shape(self, n: int) -> tuple[int, int]:
        return (n, 2 * n) if self.kind == "sinusoid" else (n, n)


def _helix(p: int, g: HelixGeometry) -> Array:
    t = np.linspace(0.0, 2.0 * np.pi * g.turns, p)
    return np.column_stack([g.radius * np.cos(t), g.radius * np.sin(t), g.pitch * t / (2.0 * np.pi)])


def gen_helmholtz(p: int, n: int, nu: float = 1.0, frob2: float = 150.0, seed=None,
                  geometry: HelixGeometry = HelixGeometry()) -> tuple[Array, SvdTriplet]:
    """C cos(2πν‖x−y‖)/‖x−y‖ between a helix and uniform points on a sheet, scaled to ‖S‖²_F = frob2."""
    if not frob2 > 0:
        raise InputError("frob2 must be positive")
    if p < 1 or n < 1:
        raise InputError("dimensions must be positive")
    rng = _rng(seed)
    g = geometry
    xs = _helix(p, g)
    ys = np.empty((n, 3))
    for j in range(n):
        while True:
            y = np.array([g.sheet_x, rng.uniform(*g.sheet_y), rng.uniform(*g.sheet_z)])
            if np.min(np.linalg.norm(xs - y, axis=1)) >= 1e-6:
                break
        ys[j] = y
    r = np.linalg.norm(xs[:, None, :] - ys[None, :, :], axis=2)
    k = np.cos(2.0 * np.pi * nu * r) / r
    s = k * math.sqrt(frob2 / float(np.sum(k * k)))
    return s, svd(s)


def gen_sinusoid(n: int, seed=None, normalize: bool = True) -> tuple[Array, SvdTriplet]:
    """S = U diag(1..10) Vᵀ, U_ij = sin(2πj x_i) on n points, V_kl = cos(2πl y_k) on 2n points.

    With `normalize` the columns of U and V are scaled to unit expected norm
    (by √(2/n) and 1/√n) so that the singular values of S are close to 1..10.
    """
    if n < 10:
        raise InputError("sinusoid signal needs n >= 10")
    rng = _rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    y = rng.uniform(0.0, 1.0, 2 * n)
    j = np.arange(1, 11)
    U = np.sin(2.0 * np.pi * np.outer(x, j))
    V = np.cos(2.0 * np.pi * np.outer(y, j))
    if normalize:
        U *= math.sqrt(2.0 / n)
        V *= math.sqrt(1.0 / n)
    s = (U * j.astype(np.float64)) @ V.T
    return s, svd(s, 10)


def gen_signal(spec: SignalSpec, n: int, seed=None) -> tuple[Array, SvdTriplet]:
    if spec.kind == "sinusoid":
        return gen_sinusoid(n, seed, spec.normalize)
    return gen_helmholtz(n, n, spec.nu, spec.frob2, seed, spec.geometry)


# trials -----------------------------------------------------------------


@dataclass
class TrialResult:
    n: int
    trial: int
    seed: int
    r_hat: int
    scores: dict[str, dict] = field(default_factory=dict)  # method -> {mse, left_inner, right_inner, runtime}
    error: str | None = None


def _trial_seed(seed: int, n: int, trial: int) -> int:
    return int(derive_seed(seed, "trial", n, trial).generate_state(1, np.uint64)[0])


def run_trial(signal: SignalSpec, noise: NoiseSpec, n: int, trial: int, methods, seed: int,
              cfg: EowsConfig = EowsConfig()) -> TrialResult:
    ts = _trial_seed(seed, n, trial)
    s, truth = gen_signal(signal, n, derive_rng(ts, "signal"))
    p, m = s.shape
    y = s + gen_noise(p, m, noise, derive_rng(ts, "noise"))
    res = TrialResult(n, trial, ts, 0)
    try:
        res.r_hat = eoptshrink(y, cfg.loss, cfg.c_exp).est.r_hat
        for method in methods:
            t0 = time.perf_counter()
            if method == "noisy":
                s_hat = y
            else:
                s_hat = run(y, dataclasses.replace(cfg, method=method)).s_hat
            mt = metrics(s_hat, s, truth, res.r_hat)
            res.scores[method] = {"mse": mt.mse, "left_inner": mt.left_inner, "right_inner": mt.right_inner,
                                  "runtime": time.perf_counter() - t0}
    except EowsError as exc:
        res.error = f"{exc.step or 'trial'}: {exc}"
        log.warning("trial n=%d #%d failed: %s", n, trial, res.error)
    return res


def _run_task(args) -> TrialResult:
    return run_trial(*args)


@dataclass
class Experiment:
    trials: list[TrialResult]
    summary: list[dict]
    pvalues: list[dict]

    def rows(self):
        for t in self.trials:
            for method, sc in t.scores.items():
                yield {"n": t.n, "method": method, "trial": t.trial, "mse": sc["mse"],
                       "left_inner": sc["left_inner"], "right_inner": sc["right_inner"],
                       "r_hat": t.r_hat, "seed": t.seed}

    def to_dict(self) -> dict:
        failures = [{"n": t.n, "trial": t.trial, "error": t.error} for t in self.trials if t.error]
        return {"summary": self.summary, "pvalues": self.pvalues, "failures": failures}

    def median(self, n: int, method: str, key: str = "mse") -> float:
        for row in self.summary:
            if row["n"] == n and row["method"] == method:
                return row[key]["median"]
        raise KeyError((n, method))


def run_experiment(signal: SignalSpec, noise: NoiseSpec, n_grid, trials: int, methods, seed: int = 0,
                   cfg: EowsConfig = EowsConfig(), workers: int | None = None) -> Experiment:
    if trials < 1:
        raise InputError("trials must be at least 1")
    methods = list(methods)
    for mth in methods:
        if mth not in SIM_METHODS:
            raise InputError(f"unknown method {mth!r}; choose from {', '.join(SIM_METHODS)}")
    tasks = [(signal, noise, int(n), t, methods, seed, cfg) for n in n_grid for t in range(trials)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
            results = list(ex.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    summary, pvals = aggregate(results, methods)
    return Experiment(results, summary, pvals)


def _stats(v: list[float]) -> dict:
    a = np.sort(np.asarray(v, dtype=np.float64))
    if a.size == 0:
        return {"median": float("nan"), "q25": float("nan"), "q75": float("nan"), "iqr": float("nan")}
    q25, med, q75 = np.percentile(a, [25, 50, 75])
    return {"median": float(med), "q25": float(q25), "q75": float(q75), "iqr": float(q75 - q25)}


def aggregate(results: list[TrialResult], methods) -> tuple[list[dict], list[dict]]:
    """Per (n, method) medians and IQRs; paired t-tests of MSE between every method pair."""
    summary = []
    pvals = []
    for n in sorted({r.n for r in results}):
        ok = sorted((r for r in results if r.n == n and r.error is None), key=lambda r: r.trial)
        for mth in methods:
            row: dict = {"n": n, "method": mth, "trials": len(ok)}
            for key in ("mse", "left_inner", "right_inner"):
                row[key] = _stats([r.scores[mth][key] for r in ok])
            summary.append(row)
        for i, m1 in enumerate(methods):
            for m2 in methods[i + 1:]:
                a = [r.scores[m1]["mse"] for r in ok]
                b = [r.scores[m2]["mse"] for r in ok]
                if len(a) >= 2:
                    st, pv = paired_ttest(a, b)
                    pvals.append({"n": n, "a": m1, "b": m2, "stat": st, "p": pv})
    return summary, pvals


def paired_ttest(a, b) -> tuple[float, float]:
    """Two-sided paired t-test; (0, 1) for identical samples, (±inf, 0) for a constant nonzero shift."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("paired samples must be 1-D with equal lengths")
    if x.size < 2:
        raise InputError("paired t-test needs at least two pairs")
    d = x - y
    if np.all(d == d[0]):
        if d[0] == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, d[0]), 0.0
    res = stats.ttest_rel(x, y)
    return float(res.statistic), float(res.pvalue)


# persistence ------------------------------------------------------------


def write_csv(exp: Experiment, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in exp.rows():
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_json_safe(v) for v in x]
    return x


def write_json(exp: Experiment, path: str | Path) -> None:
    Path(path).write_text(json.dumps(_json_safe(exp.to_dict()), indent=2, sort_keys=True) + "\n")
