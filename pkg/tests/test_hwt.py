import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eows.errors import InputError
from eows.hwt import (AtomId, Basis1D, BestBasis2D, CoeffMap, atom_support, basis_cost, best_basis_1d,
                      best_basis_2d, finest_basis_2d, ghwt_analyze, ghwt_synthesize, haar_basis_2d, inverse_2d,
                      layout_of, random_tiling_1d, random_tiling_2d, tensor_analyze, tiling_cost_1d, transform_2d)
from eows.treegeo import PartitionTree, build_tree, gaussian_affinity
from oracles import dense_atoms, masks_to_bool, sign_changes, tilings_1d, tilings_2d_masks, walsh_recursion


def learned_tree(N: int, seed: int) -> PartitionTree:
    return build_tree(gaussian_affinity(np.random.default_rng(seed).standard_normal((N, 2))))


TREES = {
    "dyadic8": lambda: PartitionTree.uniform(8),
    "uniform11": lambda: PartitionTree.uniform(11),
    "ternary9": lambda: PartitionTree.uniform(9, arity=3),
    "learned13": lambda: learned_tree(13, 0),
    "mixed": lambda: PartitionTree.from_nested([[0, [4, 2]], [1, 5, [3, 6, 7]]]),
}


def test_constant_vector_only_tag_zero():
    t = learned_tree(10, 1)
    d = ghwt_analyze(np.full(10, 2.0), t)
    lay = d.layout
    for l in range(lay.L):
        nz = np.abs(d.coeffs[l]) > 1e-12
        assert np.all(lay.tags[l][nz] == 0)


def test_haar_pair():
    d = ghwt_analyze([3.0, 1.0], PartitionTree.uniform(2))
    assert np.allclose(d.coeffs[0], [4 / math.sqrt(2), 2 / math.sqrt(2)])


def test_walsh_functions_by_tag():
    lay = layout_of(PartitionTree.uniform(8))
    W = walsh_recursion(8)
    op = lay.operator(0)
    for slot in range(8):
        n = int(lay.tags[0][slot])
        a = op[slot]
        assert min(np.max(np.abs(a - W[n])), np.max(np.abs(a + W[n]))) <= 1e-12
        assert sign_changes(a) == n


def test_synthesize_finest_is_identity():
    t = learned_tree(9, 2)
    v = np.random.default_rng(0).standard_normal(9)
    lay = layout_of(t)
    fin = Basis1D(lay, [(lay.L - 1, np.arange(9))])
    d = ghwt_analyze(v, t)
    assert np.array_equal(fin.coefficients(d), v[t.leaf_order])
    assert np.allclose(ghwt_synthesize(fin.coefficients(d), fin), v, atol=1e-14)


def test_synthesize_walsh_level_matches_dense():
    t = PartitionTree.uniform(16)
    lay = layout_of(t)
    c = np.random.default_rng(1).standard_normal(16)
    b = Basis1D(lay, [(0, np.arange(16))])
    assert np.allclose(ghwt_synthesize(c, b), lay.operator(0).T @ c, atol=1e-12)


@pytest.mark.parametrize("name", sorted(TREES))
def test_random_tiling_round_trip_and_orthonormal(name):
    t = TREES[name]()
    lay = layout_of(t)
    rng = np.random.default_rng(2)
    for _ in range(10):
        b = random_tiling_1d(lay, rng)
        v = rng.standard_normal(t.N)
        c = b.coefficients(ghwt_analyze(v, t))
        assert np.max(np.abs(ghwt_synthesize(c, b) - v)) <= 1e-10
        A = dense_atoms(lay, b.blocks)
        assert np.allclose(A @ A.T, np.eye(t.N), atol=1e-10)


def test_synthesize_rejects_overlap():
    lay = layout_of(PartitionTree.uniform(4))
    bad = Basis1D(lay, [(0, np.array([0, 1])), (1, np.array([0, 2]))])
    with pytest.raises(InputError):
        ghwt_synthesize(np.zeros(4), bad)


def test_best_basis_1d_spike():
    t = PartitionTree.uniform(8)
    v = np.zeros(8)
    v[5] = 3.0
    b = best_basis_1d(ghwt_analyze(v, t), 1.0)
    lay = layout_of(t)
    assert b.cost == pytest.approx(3.0)
    assert AtomId(lay.L - 1, 5, 0) in b.atoms()


def test_best_basis_1d_constant():
    t = PartitionTree.uniform(8)
    b = best_basis_1d(ghwt_analyze(np.ones(8), t), 1.0)
    assert b.cost == pytest.approx(math.sqrt(8))
    assert AtomId(0, 0, 0) in b.atoms()
    assert all(l == 0 for l, _ in b.blocks) and b.size() == 8


def coarse_positions(lay, level, slots):
    """Level-0 slot equal (up to sign) to each atom; atoms of replicated folders are exact copies."""
    hit = np.abs(lay.operator(level)[np.asarray(slots)] @ lay.operator(0).T) > 1 - 1e-12
    assert np.all(hit.sum(axis=1) == 1)
    return hit.argmax(axis=1)


@pytest.mark.parametrize("name", sorted(TREES))
def test_best_basis_1d_zero_is_coarse(name):
    t = TREES[name]()
    lay = layout_of(t)
    b = best_basis_1d(ghwt_analyze(np.zeros(t.N), t))
    got = np.concatenate([coarse_positions(lay, l, js) for l, js in b.blocks])
    assert sorted(got.tolist()) == list(range(t.N))


@pytest.mark.parametrize("N,ell", [(4, 1.0), (8, 1.0), (8, 0.5), (8, 1.5)])
def test_best_basis_1d_bruteforce(N, ell):
    t = PartitionTree.uniform(N)
    lay = layout_of(t)
    tilings = tilings_1d(N)
    rng = np.random.default_rng(N)
    for _ in range(5):
        d = ghwt_analyze(rng.standard_normal(N), t)
        brute = min(sum(abs(d.coeffs[l][s]) ** ell for l, s in til) for til in tilings)
        b = best_basis_1d(d, ell)
        assert b.cost == pytest.approx(brute, rel=1e-12)
        assert tiling_cost_1d(d, b, ell) == pytest.approx(brute, rel=1e-12)


def test_best_basis_1d_rejects_ell():
    d = ghwt_analyze(np.ones(4), PartitionTree.uniform(4))
    for ell in (0.0, 2.0):
        with pytest.raises(InputError):
            best_basis_1d(d, ell)


def test_tensor_separability():
    tr, tc = learned_tree(7, 3), learned_tree(9, 4)
    rng = np.random.default_rng(5)
    f, g = rng.standard_normal(7), rng.standard_normal(9)
    tab = tensor_analyze(np.outer(f, g), tr, tc)
    df, dg = ghwt_analyze(f, tr), ghwt_analyze(g, tc)
    for a in range(tr.depth):
        for b in range(tc.depth):
            assert np.allclose(tab.pair(a, b), np.outer(df.coeffs[a], dg.coeffs[b]), atol=1e-12)


def test_tensor_all_ones():
    t = PartitionTree.uniform(4)
    X = tensor_analyze(np.ones((4, 4)), t, t).pair(0, 0)
    assert X[0, 0] == pytest.approx(4.0)
    X[0, 0] = 0.0
    assert np.max(np.abs(X)) <= 1e-12


def test_tensor_shape_mismatch():
    t = PartitionTree.uniform(4)
    with pytest.raises(InputError):
        tensor_analyze(np.ones((4, 5)), t, t)


def test_parseval_random_tilings_8x8():
    tr, tc = learned_tree(8, 6), learned_tree(8, 7)
    m = np.random.default_rng(8).standard_normal((8, 8))
    lr, lc = layout_of(tr), layout_of(tc)
    rng = np.random.default_rng(9)
    for _ in range(20):
        cm = transform_2d(m, random_tiling_2d(lr, lc, rng))
        assert cm.energy() == pytest.approx(np.sum(m * m), rel=1e-10)


def test_best_basis_2d_separable_beats_product():
    tr, tc = learned_tree(8, 10), learned_tree(12, 11)
    rng = np.random.default_rng(12)
    f, g = rng.standard_normal(8), rng.standard_normal(12)
    m = np.outer(f, g)
    bf, bg = best_basis_1d(ghwt_analyze(f, tr)), best_basis_1d(ghwt_analyze(g, tc))
    prod = BestBasis2D.product(layout_of(tr), layout_of(tc), bf.blocks, bg.blocks)
    best = best_basis_2d(tensor_analyze(m, tr, tc), 1.0)
    assert best.cost <= basis_cost(transform_2d(m, prod)) + 1e-12
    assert basis_cost(transform_2d(m, prod)) == pytest.approx(bf.cost * bg.cost, rel=1e-10)


def test_best_basis_2d_bruteforce_4x4():
    masks, K = tilings_2d_masks(4)
    B = masks_to_bool(masks, K * K)
    t = PartitionTree.uniform(4)
    rng = np.random.default_rng(13)
    for _ in range(3):
        m = rng.standard_normal((4, 4))
        tab = tensor_analyze(m, t, t)
        w = np.zeros(K * K)
        for a in range(3):
            for b in range(3):
                X = np.abs(tab.pair(a, b))
                for r in range(4):
                    w[(a * 4 + r) * K + b * 4: (a * 4 + r) * K + b * 4 + 4] = X[r]
        costs = B @ w
        best = best_basis_2d(tab, 1.0, "full")
        assert best.cost == pytest.approx(costs.min(), rel=1e-12)


def test_best_basis_2d_zero_matrix_is_coarse():
    t = learned_tree(6, 14)
    best = best_basis_2d(tensor_analyze(np.zeros((6, 6)), t, t))
    assert best.cost == 0.0
    lay = layout_of(t)
    seen = set()
    for (a, b), idx in best.index.items():
        r = coarse_positions(lay, a, idx // 6)
        c = coarse_positions(lay, b, idx % 6)
        seen.update(zip(r.tolist(), c.tolist()))
    assert len(seen) == 36
    dyadic = PartitionTree.uniform(8)
    best = best_basis_2d(tensor_analyze(np.zeros((8, 8)), dyadic, dyadic))
    assert list(best.index) == [(0, 0)]


@pytest.mark.parametrize("family", ["full", "blocks"])
def test_best_basis_2d_dominance(family):
    tr, tc = learned_tree(16, 15), learned_tree(12, 16)
    m = np.random.default_rng(17).standard_normal((16, 12))
    best = best_basis_2d(tensor_analyze(m, tr, tc), 1.0, family)
    lr, lc = layout_of(tr), layout_of(tc)
    assert basis_cost(transform_2d(m, best)) == pytest.approx(best.cost, rel=1e-12)
    others = [haar_basis_2d(lr, lc), finest_basis_2d(lr, lc)]
    rng = np.random.default_rng(18)
    others += [random_tiling_2d(lr, lc, rng) for _ in range(50)]
    for b in others:
        assert best.cost <= basis_cost(transform_2d(m, b)) * (1 + 1e-12)


def test_transform_round_trip_16x16():
    tr, tc = learned_tree(16, 19), learned_tree(16, 20)
    m = np.random.default_rng(21).standard_normal((16, 16))
    cm = transform_2d(m, best_basis_2d(tensor_analyze(m, tr, tc)))
    assert np.max(np.abs(inverse_2d(cm) - m)) <= 1e-10
    assert cm.energy() == pytest.approx(np.sum(m * m), rel=1e-10)


def test_transform_zero_and_delta():
    t = learned_tree(6, 22)
    basis = best_basis_2d(tensor_analyze(np.random.default_rng(0).standard_normal((6, 6)), t, t))
    assert not np.any(transform_2d(np.zeros((6, 6)), basis).flat())
    e = np.zeros((6, 6))
    e[2, 4] = 1.0
    assert transform_2d(e, basis).energy() == pytest.approx(1.0)


def test_transform_coverage_violation():
    t = PartitionTree.uniform(4)
    lay = layout_of(t)
    short = BestBasis2D(lay, lay, {(0, 0): np.arange(15)})
    with pytest.raises(InputError):
        transform_2d(np.ones((4, 4)), short)
    with pytest.raises(InputError):
        inverse_2d(CoeffMap(short, {(0, 0): np.zeros(15)}))


def test_coeff_items_follow_atom_pairs():
    t = PartitionTree.uniform(4)
    m = np.random.default_rng(23).standard_normal((4, 4))
    cm = transform_2d(m, haar_basis_2d(layout_of(t), layout_of(t)))
    items = list(cm.items())
    assert len(items) == 16
    (ra, ca), v = items[0]
    _, wr = atom_support(ra, t)
    _, wc = atom_support(ca, t)
    sr, _ = atom_support(ra, t)
    sc, _ = atom_support(ca, t)
    assert v == pytest.approx(wr @ m[np.ix_(sr, sc)] @ wc)


def test_atom_support_examples():
    t = PartitionTree.uniform(4)
    s, w = atom_support(AtomId(0, 0, 0), t)
    assert s.tolist() == [0, 1, 2, 3] and np.allclose(w, 0.5)
    s, w = atom_support(AtomId(1, 1, 1), t)
    assert s.tolist() == [2, 3] and np.allclose(w, [1 / math.sqrt(2), -1 / math.sqrt(2)])


@given(st.integers(2, 16), st.integers(0, 10 ** 6), st.data())
def test_atom_support_unit_norm(N, seed, data):
    t = learned_tree(N, seed)
    lay = layout_of(t)
    level = data.draw(st.integers(0, lay.L - 1))
    slot = data.draw(st.integers(0, N - 1))
    _, w = atom_support(lay.atom(level, slot), t)
    assert abs(np.sum(w * w) - 1.0) <= 1e-12


@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 10 ** 6))
def test_parseval_property(p, n, seed):
    rng = np.random.default_rng(seed)
    tr, tc = learned_tree(p, seed), learned_tree(n, seed + 1)
    m = rng.standard_normal((p, n))
    b = random_tiling_2d(layout_of(tr), layout_of(tc), rng)
    cm = transform_2d(m, b)
    assert abs(cm.energy() - np.sum(m * m)) <= 1e-8 * np.sum(m * m)
    assert np.max(np.abs(inverse_2d(cm) - m)) <= 1e-10
