"""Shared fixtures-as-functions: planted low-rank signals and noise."""

import numpy as np

from eows.simlab import NoiseSpec, gen_noise


def orthonormal(m: int, k: int, rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((m, k)))
    return q * np.sign(np.diag(r))


def planted(p: int, n: int, d, seed: int, noise: str = "type1"):
    """(y, s, U, V) with s = U diag(d) Vᵀ for random orthonormal U, V plus normalized noise."""
    rng = np.random.default_rng(seed)
    d = np.asarray(d, dtype=float)
    U = orthonormal(p, d.size, rng)
    V = orthonormal(n, d.size, rng)
    s = (U * d) @ V.T
    return s + gen_noise(p, n, NoiseSpec(noise), rng), s, U, V


ACCEPTANCE: dict[int, str] = {}  # criterion -> one-line verdict, printed in the terminal summary


def verdict(num: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[num] = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, ACCEPTANCE[num]
