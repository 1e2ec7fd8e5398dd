import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eows.errors import InputError
from eows.treegeo import (EmdParams, PartitionTree, build_tree, dual_affinity, emd_matrix, fiedler_bipartition,
                          gaussian_affinity, questionnaire, tree_emd)
from oracles import emd_bruteforce, min_ncut


def check_tree(t: PartitionTree, N: int) -> None:
    levels = t.levels
    assert t.N == N
    assert sorted(levels[0][0].members) == list(range(N))
    assert all(len(f.members) == 1 for f in levels[-1])
    for l, folders in enumerate(levels):
        leaves = sorted(i for f in folders for i in f.members)
        assert leaves == list(range(N))
        for f in folders:
            if l + 1 < len(levels):
                kids = [levels[l + 1][c] for c in f.children]
                assert sorted(i for k in kids for i in k.members) == sorted(f.members)
                assert all(k.parent == f.index for k in kids)
    assert [f.members[0] for f in levels[-1]] == t.leaf_order.tolist()


def random_tree(N: int, seed: int) -> PartitionTree:
    rng = np.random.default_rng(seed)
    return build_tree(gaussian_affinity(rng.standard_normal((N, 3))))


def test_gaussian_affinity_duplicates():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 2.0], [5.0, 1.0]])
    assert gaussian_affinity(pts)[0, 1] == 1.0


def test_gaussian_affinity_at_sigma():
    # pairwise distances 1, 1, 2: median 1
    W = gaussian_affinity(np.array([[0.0], [1.0], [2.0]]))
    assert W[0, 1] == pytest.approx(math.exp(-0.5))


def test_gaussian_affinity_line_hand_value():
    W = gaussian_affinity(np.array([[0.0], [1.0], [10.0], [11.0]]))
    assert W[0, 1] == pytest.approx(0.9944751522138855, abs=1e-15)
    assert np.allclose(W, W.T) and np.all(np.diag(W) == 1.0)


def test_gaussian_affinity_degenerate():
    with pytest.raises(InputError):
        gaussian_affinity(np.ones((4, 2)))


def test_fiedler_two_cliques_matches_min_ncut():
    W = np.full((6, 6), 1e-6)
    W[:3, :3] = 1.0
    W[3:, 3:] = 1.0
    left, right = fiedler_bipartition(W)
    got = frozenset([frozenset(left.tolist()), frozenset(right.tolist())])
    assert min_ncut(W) == {got}
    assert got == frozenset([frozenset({0, 1, 2}), frozenset({3, 4, 5})])


def test_fiedler_two_nodes():
    left, right = fiedler_bipartition(np.ones((2, 2)))
    assert left.tolist() == [0] and right.tolist() == [1]


def test_fiedler_path():
    W = np.eye(4)
    for i in range(3):
        W[i, i + 1] = W[i + 1, i] = 1.0
    left, right = fiedler_bipartition(W)
    assert {frozenset(left.tolist()), frozenset(right.tolist())} == {frozenset({0, 1}), frozenset({2, 3})}


def test_fiedler_constant_affinity_still_splits():
    left, right = fiedler_bipartition(np.ones((5, 5)))
    assert left.size and right.size and left.size + right.size == 5


def test_build_tree_single():
    t = build_tree(np.ones((1, 1)))
    assert t.depth == 1 and t.N == 1


def test_build_tree_two_pairs():
    t = build_tree(gaussian_affinity(np.array([[0.0], [0.1], [10.0], [10.1]])))
    assert {frozenset(f.members) for f in t.levels[1]} == {frozenset({0, 1}), frozenset({2, 3})}


@pytest.mark.parametrize("seed", range(3))
def test_build_tree_random_structure(seed):
    check_tree(random_tree(16, seed), 16)


def test_tree_emd_examples():
    t = PartitionTree.from_levels([[[0, 1]]], strict=False)
    assert tree_emd([3.0, 4.0], [0.0, 0.0], t, EmdParams(0.0, 0.0)) == pytest.approx(2.5)
    t16 = random_tree(16, 0)
    f = np.random.default_rng(1).standard_normal(16)
    assert tree_emd(f, f, t16) == 0.0
    g = np.zeros(16)
    assert tree_emd(2 * f, g, t16) == pytest.approx(2 * tree_emd(f, g, t16))
    with pytest.raises(InputError):
        tree_emd(f[:5], f[:5], t16)


@pytest.mark.parametrize("a,b", [(0.0, 1.0), (0.5, 0.0), (1.0, 0.5)])
def test_tree_emd_matches_bruteforce(a, b):
    t = random_tree(12, 2)
    rng = np.random.default_rng(3)
    f, g = rng.standard_normal((2, 12))
    levels = [[f_.members for f_ in lv] for lv in t.levels]
    prm = EmdParams(a, b)
    assert tree_emd(f, g, t, prm) == pytest.approx(emd_bruteforce(f, g, levels, a, b), rel=1e-12)


def test_emd_matrix_matches_tree_emd():
    t = random_tree(10, 4)
    m = np.random.default_rng(5).standard_normal((6, 10))
    D = emd_matrix(m, t, EmdParams(0.3, 0.7))
    for i, j in itertools.combinations(range(6), 2):
        assert D[i, j] == pytest.approx(tree_emd(m[i], m[j], t, EmdParams(0.3, 0.7)), rel=1e-12)


@given(arrays(np.float64, (3, 16), elements=st.floats(-100, 100)))
def test_tree_emd_pseudometric(x):
    t = random_tree(16, 7)
    f, g, h = x
    assert abs(tree_emd(f, g, t) - tree_emd(g, f, t)) <= 1e-10
    assert tree_emd(f, h, t) <= tree_emd(f, g, t) + tree_emd(g, h, t) + 1e-10
    assert tree_emd(f, g, t) >= 0.0


def test_dual_affinity_examples():
    t = random_tree(8, 0)
    rng = np.random.default_rng(0)
    m = rng.standard_normal((5, 8))
    m[3] = m[1]
    W = dual_affinity(m, t)
    assert W[1, 3] == 1.0
    assert np.allclose(W, W.T) and np.all(np.diag(W) == 1.0)
    assert np.all((W >= 0) & (W <= 1))


def test_dual_affinity_at_median():
    t = random_tree(8, 1)
    m = np.random.default_rng(2).standard_normal((3, 8))  # 3 pairs: the median is an attained EMD
    D = emd_matrix(m, t)
    med = float(np.median(D[np.triu_indices(3, 1)]))
    W = dual_affinity(m, t, EmdParams(eps_factor=1.0))
    i, j = [(i, j) for i, j in itertools.combinations(range(3), 2) if D[i, j] == med][0]
    assert W[i, j] == pytest.approx(math.exp(-1.0))


def test_dual_affinity_toy_oracle():
    t = PartitionTree.from_levels([[[0, 1, 2, 3]], [[0, 1], [2, 3]], [[0], [1], [2], [3]]])
    m = np.array([[1.0, 2.0, 0.0, 1.0], [0.0, 2.0, 1.0, 1.0], [3.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 2.0]])
    levels = [[[0, 1, 2, 3]], [[0, 1], [2, 3]], [[0], [1], [2], [3]]]
    D = np.array([[emd_bruteforce(m[i], m[j], levels, 0.0, 1.0) for j in range(4)] for i in range(4)])
    eps = np.median(D[np.triu_indices(4, 1)])
    expect = np.exp(-D / eps)
    assert np.allclose(dual_affinity(m, t), expect, atol=1e-14)


def test_dual_affinity_identical_rows():
    t = random_tree(6, 3)
    assert np.array_equal(dual_affinity(np.ones((4, 6)), t), np.ones((4, 4)))


def test_emd_row_translation_is_local():
    t = random_tree(8, 5)
    m = np.random.default_rng(6).standard_normal((5, 8))
    m2 = m.copy()
    m2[2] += 3.0
    D1, D2 = emd_matrix(m, t), emd_matrix(m2, t)
    keep = [0, 1, 3, 4]
    assert np.array_equal(D1[np.ix_(keep, keep)], D2[np.ix_(keep, keep)])
    assert not np.allclose(D1[2], D2[2])


def test_questionnaire_single_iteration():
    m = np.random.default_rng(8).standard_normal((12, 9))
    tr, tc = questionnaire(m, 1)
    check_tree(tr, 12)
    check_tree(tc, 9)


def test_questionnaire_block_recovery():
    rng = np.random.default_rng(9)
    rows = rng.permutation(8)
    cols = rng.permutation(8)
    block = np.array([[1.0, -2.0], [-1.0, 3.0]])
    m = np.empty((8, 8))
    for i in range(8):
        for j in range(8):
            m[rows[i], cols[j]] = block[i // 4, j // 4]
    tr, tc = questionnaire(m, 3)
    expect_r = {frozenset(rows[:4].tolist()), frozenset(rows[4:].tolist())}
    expect_c = {frozenset(cols[:4].tolist()), frozenset(cols[4:].tolist())}
    assert {frozenset(f.members) for f in tr.levels[1]} == expect_r
    assert {frozenset(f.members) for f in tc.levels[1]} == expect_c


def test_questionnaire_row_permutation_equivariance():
    rng = np.random.default_rng(10)
    m = rng.standard_normal((14, 10))
    perm = rng.permutation(14)
    tr, _ = questionnaire(m, 2)
    tp, _ = questionnaire(m[perm], 2)
    mapped = {frozenset(int(perm[i]) for i in s) for s in tp.folder_sets()}
    assert mapped == set(tr.folder_sets())


def test_questionnaire_start_rows():
    m = np.random.default_rng(11).standard_normal((7, 9))
    tr, tc = questionnaire(m, 1, start="rows")
    check_tree(tr, 7)
    check_tree(tc, 9)
    with pytest.raises(InputError):
        questionnaire(m, 0)


def test_tree_distance_axioms():
    t = random_tree(16, 12)
    D = t.distance_matrix()
    assert np.all(np.diag(D) == 0) and np.array_equal(D, D.T)
    for x, y, z in itertools.product(range(16), repeat=3):
        assert D[x, z] <= max(D[x, y], D[y, z])
    assert D[3, 5] == t.tree_distance(3, 5)


def test_tree_json_round_trip():
    t = random_tree(11, 13)
    assert PartitionTree.from_json(t.to_json()) == t
    with pytest.raises(InputError):
        PartitionTree.from_json("{bad")


def test_partition_tree_validation():
    with pytest.raises(InputError):
        PartitionTree([0, 0], [[0, 2], [0, 1, 2]])
    with pytest.raises(InputError):
        PartitionTree([0, 1, 2], [[0, 3], [0, 2, 3]])  # last level not singletons
    with pytest.raises(InputError):
        EmdParams(eps_factor=0.0)


def test_balance_of_uniform_tree():
    assert PartitionTree.uniform(8).balance() == (0.5, 0.5)
