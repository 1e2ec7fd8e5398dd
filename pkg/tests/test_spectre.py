import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eows.errors import InputError, NumericError
from eows.simlab import NoiseSpec, gen_noise, gen_sinusoid
from eows.spectre import (ShrinkTarget, SpectrumView, SpikeEstimates, bulk_edge, default_c, effective_rank,
                          eoptshrink, estimate_spikes, impute_and_cdf, shrinker_values, spectrum, stieltjes_at)
from support import planted

C = 1 / 2.01
KAPPA = 2 ** (2 / 3) - 1
LINE = 10.0 - 0.2 * np.arange(40)  # λ̃ᵢ = 10 − 0.2(i−1)


def est_with(d, a1, a2):
    return SpikeEstimates(len(d), 0.0, C, d_hat=np.asarray(d, float), a1_hat=np.asarray(a1, float),
                          a2_hat=np.asarray(a2, float))


def test_default_c():
    assert default_c(256) == C
    n = 10 ** 10
    assert default_c(n) == pytest.approx(1 / math.log(math.log(n)))


def test_bulk_edge_constant():
    assert bulk_edge(SpectrumView(np.full(40, 4.0), 40, 256), C) == 4.0


def test_bulk_edge_hand_value():
    # k = ⌊256^{1/2.01}⌋ = 15: λ̃₁₆ = 7, λ̃₃₁ = 4
    lp = bulk_edge(SpectrumView(LINE, 40, 256), C)
    assert lp == pytest.approx(12.107243151757947, abs=1e-12)
    assert lp >= LINE[15]


def test_bulk_edge_too_small():
    with pytest.raises(InputError):
        bulk_edge(SpectrumView(np.ones(20), 20, 256), C)


def test_bulk_edge_noise_only_near_top_eigenvalue():
    ratios = []
    for seed in range(10):
        spec, _ = spectrum(gen_noise(256, 256, NoiseSpec(), seed))
        ratios.append(bulk_edge(spec, default_c(256)) / spec.eigs[0])
    assert abs(np.median(ratios) - 1.0) <= 0.10


def test_effective_rank_examples():
    spec = SpectrumView(np.full(40, 1.0), 40, 256)
    assert effective_rank(spec, 2.0) == 0
    eigs = np.ones(256)
    eigs[0] = 100.0
    assert effective_rank(SpectrumView(eigs, 256, 256), 1.0) == 1
    with pytest.raises(InputError):
        effective_rank(spec, math.inf)


def test_impute_boundary_and_last_index():
    spec = SpectrumView(LINE, 40, 256)
    imputed, cdf = impute_and_cdf(spec, 0, C)
    assert imputed.size == 15
    assert imputed[0] == pytest.approx(bulk_edge(spec, C), abs=1e-12)
    # j = r̂ + k: (1 − (14/15)^{2/3})/(2^{2/3} − 1) · 3 above λ̃₁₆ = 7
    assert imputed[-1] == pytest.approx(7.2295884504895715, abs=1e-12)
    assert cdf(np.inf) == 1.0
    assert cdf.points.size == 40


def test_impute_with_spikes_is_shifted():
    spec = SpectrumView(np.concatenate([[50.0, 30.0], LINE]), 42, 256)
    imputed, cdf = impute_and_cdf(spec, 2, C)
    assert imputed[0] == pytest.approx(12.107243151757947, abs=1e-12)
    assert cdf.points.size == 42 - 2
    assert cdf(-1.0) == 0.0


def test_stieltjes_one_term():
    spec = SpectrumView(np.array([2.0, 1.0]), 2, 2)
    m1, m2, m1p, m2p = stieltjes_at(spec, np.zeros(0), 1, 2.0)
    assert (m1, m2, m1p) == (-1.0, -1.0, 1.0)
    assert m2p == 1.0


def test_stieltjes_half_beta():
    # m̂₂ = βm̂₁ − (1−β)/λ̃ (sign as derived from the companion measure)
    spec = SpectrumView(np.array([2.0, 1.0]), 2, 4)
    m1, m2, m1p, m2p = stieltjes_at(spec, np.zeros(0), 1, 2.0)
    assert m2 == pytest.approx(-0.75)
    assert m2p == pytest.approx(0.5 * 1.0 + 0.5 / 4)


def test_stieltjes_gap_error():
    spec = SpectrumView(np.array([1.0, 1.0]), 2, 2)
    with pytest.raises(NumericError):
        stieltjes_at(spec, np.zeros(0), 1, 1.0)


@given(st.lists(st.floats(0.01, 5.0), min_size=3, max_size=30), st.floats(5.5, 50.0),
       st.integers(1, 4))
def test_m2_identity(bulk, lam, ratio):
    eigs = np.sort(np.asarray([lam] + bulk))[::-1]
    spec = SpectrumView(eigs, len(eigs), len(eigs) * ratio)
    m1, m2, m1p, m2p = stieltjes_at(spec, np.zeros(0), 1, lam)
    b = spec.beta
    assert abs((m2 - b * m1) + (1 - b) / lam) <= 1e-12
    assert m1 < 0 and m2 < 0 and m1p > 0


@given(st.lists(st.floats(0.0, 10.0), min_size=40, max_size=80), st.integers(1, 30))
def test_edge_and_rank_ignore_zero_tail(eigs, extra):
    e = np.sort(np.asarray(eigs))[::-1]
    a = SpectrumView(e, e.size, 256)
    b = SpectrumView(np.concatenate([e, np.zeros(extra)]), e.size + extra, 256)
    assert bulk_edge(a, C) == bulk_edge(b, C)
    lp = bulk_edge(a, C)
    assert effective_rank(a, lp) == effective_rank(b, lp)


def test_estimate_spikes_no_signal():
    est = estimate_spikes(SpectrumView(np.full(64, 1.0), 64, 64))
    assert est.r_hat == 0 and est.d_hat.size == 0


def test_estimate_spikes_invariants_and_monotone():
    y, *_ = planted(200, 300, [9.0, 6.0, 4.0, 3.0], seed=11)
    spec, _ = spectrum(y)
    est = estimate_spikes(spec)
    assert est.r_hat == 4
    assert np.all(est.d_hat > 0) and np.all(est.t_hat > 0)
    assert np.all((est.a1_hat > 0) & (est.a1_hat <= 1)) and np.all((est.a2_hat > 0) & (est.a2_hat <= 1))
    assert np.all(np.diff(est.d_hat) < 0)
    tp = est.m1 * est.m2 + est.lam * (est.m1p * est.m2 + est.m1 * est.m2p)
    assert np.allclose(est.tp_hat, tp)


def test_shrinker_no_bias():
    est = est_with([3.0, 2.0], [1.0, 1.0], [1.0, 1.0])
    for t in ShrinkTarget:
        assert np.allclose(shrinker_values(est, t), [3.0, 2.0])


def test_shrinker_half_overlap():
    est = est_with([2.0], [0.5], [0.5])
    assert shrinker_values(est, "fro") == pytest.approx([1.0])
    assert shrinker_values(est, "op") == pytest.approx([2.0])
    assert shrinker_values(est, "nuc") == pytest.approx([0.0], abs=1e-15)


def test_shrinker_operator_asymmetric():
    est = est_with([1.0], [0.9], [0.4])
    assert shrinker_values(est, ShrinkTarget.OPERATOR)[0] == pytest.approx(0.6667, abs=1e-4)


def test_shrinker_nuclear_clamped():
    est = est_with([1.0], [0.3], [0.2])
    assert shrinker_values(est, "nuc")[0] == 0.0


@given(st.lists(st.tuples(st.floats(0.1, 10), st.floats(1e-6, 1), st.floats(1e-6, 1)), min_size=1, max_size=5))
def test_frobenius_below_amplitude(rows):
    d, a1, a2 = map(list, zip(*rows))
    est = est_with(d, a1, a2)
    assert np.all(shrinker_values(est, "fro") <= est.amplitude() + 1e-12)


def test_shrink_target_parse():
    assert ShrinkTarget.parse("Frobenius") is ShrinkTarget.FROBENIUS
    with pytest.raises(InputError):
        ShrinkTarget.parse("l1")


def test_eoptshrink_pure_noise():
    y = gen_noise(64, 96, NoiseSpec(), 3)
    s_os, s_amp, z_hat, est = eoptshrink(y)
    assert est.r_hat == 0
    assert not np.any(s_os) and not np.any(s_amp)
    assert np.array_equal(z_hat, y)


def test_eoptshrink_near_clean():
    rng = np.random.default_rng(5)
    u = rng.standard_normal(64)
    v = rng.standard_normal(80)
    s = 10.0 * np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v))
    y = s + 1e-8 * rng.standard_normal(s.shape)
    s_os, *_ = eoptshrink(y)
    assert np.mean((s_os - s) ** 2) <= 1e-6


def test_eoptshrink_rank_equals_r_hat():
    y, *_ = planted(120, 160, [8.0, 5.0, 3.0], seed=2)
    res = eoptshrink(y, "op")
    sv = np.linalg.svd(res.s_os, compute_uv=False)
    assert int(np.sum(sv > 1e-10)) == res.est.r_hat == 3
    assert np.allclose(res.z_hat, y - res.s_os)


def test_eoptshrink_transpose_symmetry():
    y, *_ = planted(90, 130, [7.0, 4.0], seed=4)
    a = eoptshrink(y)
    b = eoptshrink(y.T)
    assert np.allclose(a.s_os, b.s_os.T, atol=1e-10)
    assert np.allclose(a.est.a1_hat, b.est.a2_hat) and np.allclose(a.est.a2_hat, b.est.a1_hat)


def test_eoptshrink_improves_sinusoid():
    wins = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        s, _ = gen_sinusoid(512, rng)
        y = s + gen_noise(*s.shape, NoiseSpec(), rng)
        s_os, *_ = eoptshrink(y)
        wins += np.mean((s_os - s) ** 2) < np.mean((y - s) ** 2)
    assert wins >= 9
