"""End-to-end denoising: eOptShrink, the classical WS baseline and the combined eOWS estimator."""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import EowsError, InputError, NumericError, with_step
from .hwt import BestBasis2D, best_basis_2d, inverse_2d, tensor_analyze, transform_2d
from .matcore import as_mat, svd
from .shrinkage import adaptive_shrink, classic_ws, tau_star, var_table
from .spectre import ShrinkTarget, SpikeEstimates, _window, eoptshrink
from .treegeo import EmdParams, PartitionTree, questionnaire

__all__ = ["EowsConfig", "EowsResult", "run", "METHODS", "MIN_DIM"]

log = logging.getLogger(__name__)

Array = NDArray[np.float64]

METHODS = ("eoptshrink", "ws", "eows")
MIN_DIM = 32


@dataclass(frozen=True)
class EowsConfig:
    loss: ShrinkTarget = ShrinkTarget.FROBENIUS
    c_exp: float | None = None  # None: min(1/2.01, 1/log log n)
    emd: EmdParams = field(default_factory=EmdParams)
    iters: int = 3
    ell: float = 1.0
    method: str = "eows"
    tree_source: str = "os"  # "os": Σφ̂ũṽᵀ, "amp": the amplitude-corrected matrix
    sigma: float = 1.0  # noise level of the WS baseline
    family: str = "auto"

    def __post_init__(self) -> None:
        object.__setattr__(self, "loss", ShrinkTarget.parse(self.loss))
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.tree_source not in ("os", "amp"):
            raise InputError("tree_source must be 'os' or 'amp'")
        if self.iters < 1:
            raise InputError("iters must be at least 1")
        if not 0.0 < self.ell < 2.0:
            raise InputError("ell must lie in (0, 2)")
        if not self.sigma > 0:
            raise InputError("sigma must be positive")


@dataclass
class EowsResult:
    s_hat: Array
    est: SpikeEstimates
    trees: tuple[PartitionTree, PartitionTree] | None = None
    basis: BestBasis2D | None = None
    tau_star: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def r_hat(self) -> int:
        return self.est.r_hat


@contextmanager
def _step(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except EowsError as exc:
        raise with_step(exc, name)
    except np.linalg.LinAlgError as exc:
        raise with_step(NumericError(str(exc)), name) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def _recombine(shrunk: Array, d_hat: Array, r: int, diag: dict) -> Array:
    """Top-r̂ singular vectors of the shrunk matrix with the singular values replaced by d̂."""
    trip = svd(shrunk, r)
    tol = max(shrunk.shape) * np.finfo(float).eps * (trip.sigma[0] if trip.k else 0.0)
    k = int(np.sum(trip.sigma > tol))
    if k < r:
        diag["warnings"].append(f"wavelet-shrunk matrix has rank {k} < r_hat {r}; trailing d_hat dropped")
    return (trip.U[:, :k] * d_hat[:k]) @ trip.V[:, :k].T


def run(y, cfg: EowsConfig = EowsConfig()) -> EowsResult:
    try:
        a = as_mat(y)
    except EowsError as exc:
        raise with_step(exc, "input")
    p, n = a.shape
    if min(p, n) < MIN_DIM:
        raise with_step(InputError(f"matrix must be at least {MIN_DIM}x{MIN_DIM}, got {p}x{n}"), "input")
    timings: dict[str, float] = {}
    diag: dict = {"method": cfg.method, "timings": timings, "warnings": []}

    with _step("eoptshrink", timings):
        opt = eoptshrink(a, cfg.loss, cfg.c_exp)
    est = opt.est
    diag["r_hat"] = est.r_hat

    if cfg.method == "eoptshrink":
        return EowsResult(opt.s_os, est, diagnostics=diag)

    if cfg.method == "ws":
        with _step("trees", timings):
            trees = questionnaire(a, cfg.iters, cfg.emd)
        with _step("best_basis", timings):
            basis = best_basis_2d(tensor_analyze(a, *trees), cfg.ell, cfg.family)
        with _step("shrink", timings):
            s_hat = classic_ws(a, *trees, cfg.sigma, basis=basis)
        diag["balance"] = {"rows": trees[0].balance(), "cols": trees[1].balance()}
        return EowsResult(s_hat, est, trees, basis, diagnostics=diag)

    r = est.r_hat
    if r == 0:
        diag["warnings"].append("no signal detected")
        return EowsResult(np.zeros_like(a), est, diagnostics=diag)
    m, big = min(p, n), max(p, n)
    k = _window(big, est.c_exp)
    if r >= m - 2 * k - 1:
        msg = f"r_hat {r} leaves no bulk room (min dim {m}, window {k}); falling back to eoptshrink"
        log.warning(msg)
        diag["warnings"].append(msg)
        return EowsResult(opt.s_os, est, diagnostics=diag)

    src = opt.s_os if cfg.tree_source == "os" else opt.s_amp
    with _step("trees", timings):
        trees = questionnaire(src, cfg.iters, cfg.emd)
    with _step("best_basis", timings):
        basis = best_basis_2d(tensor_analyze(opt.s_amp, *trees), cfg.ell, cfg.family)
        cm = transform_2d(opt.s_amp, basis)
    with _step("variance", timings):
        vt = var_table(opt.z_hat, basis, est)
    with _step("tau", timings):
        tau = tau_star(opt.z_hat)
    with _step("shrink", timings):
        shrunk = inverse_2d(adaptive_shrink(cm, vt, tau))
    with _step("recombine", timings):
        s_hat = _recombine(shrunk, est.d_hat, r, diag)
    diag["tau_star"] = tau
    diag["sigma_phi"] = vt.summary()
    diag["balance"] = {"rows": trees[0].balance(), "cols": trees[1].balance()}
    return EowsResult(s_hat, est, trees, basis, tau, diag)
