"""Partition trees, tree EMD, dual affinities and the Questionnaire iteration."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
import scipy.linalg
from numpy.typing import NDArray
from scipy.spatial.distance import pdist, squareform

from .errors import InputError
from .matcore import as_mat

__all__ = [
    "EmdParams",
    "Folder",
    "PartitionTree",
    "gaussian_affinity",
    "fiedler_bipartition",
    "build_tree",
    "tree_emd",
    "emd_matrix",
    "dual_affinity",
    "questionnaire",
]

log = logging.getLogger(__name__)

Array = NDArray[np.float64]

_TIE = 1e-12


@dataclass(frozen=True)
class EmdParams:
    a: float = 0.0
    b: float = 1.0
    eps_factor: float = 1.0

    def __post_init__(self) -> None:
        if not self.eps_factor > 0:
            raise InputError("eps_factor must be positive")


@dataclass(frozen=True)
class Folder:
    level: int
    index: int
    members: tuple[int, ...]
    parent: int | None
    children: tuple[int, ...]


class PartitionTree:
    """Nested partitions stored as contiguous ranges of a leaf ordering.

    Level 0 is the root. ``bounds[l]`` holds the folder start positions at
    level l plus a final N; folder k covers ``leaf_order[bounds[l][k]:bounds[l][k+1]]``.
    In a strict tree the last level is all singletons, and a singleton that
    stops splitting early is repeated at every finer level.
    """

    def __init__(self, leaf_order: Sequence[int], bounds: Sequence[Sequence[int]], strict: bool = True):
        order = np.asarray(leaf_order, dtype=np.int64)
        N = order.size
        if N < 1 or not np.array_equal(np.sort(order), np.arange(N)):
            raise InputError("leaf_order must be a permutation of 0..N-1")
        bnds = [np.asarray(b, dtype=np.int64) for b in bounds]
        if not bnds:
            raise InputError("tree needs at least one level")
        prev = None
        for lvl, b in enumerate(bnds):
            if b.size < 2 or b[0] != 0 or b[-1] != N or np.any(np.diff(b) <= 0):
                raise InputError(f"level {lvl}: invalid folder bounds")
            if prev is not None and not np.all(np.isin(prev, b)):
                raise InputError(f"level {lvl}: partitions are not nested")
            prev = b
        if bnds[0].size != 2:
            raise InputError("level 0 must be a single root folder")
        if strict and bnds[-1].size != N + 1:
            raise InputError("finest level must consist of singletons")
        self.leaf_order = order
        self.bounds = bnds
        self.N = N
        self.depth = len(bnds)
        self._pos = np.empty(N, dtype=np.int64)
        self._pos[order] = np.arange(N)
        # folder id of every leaf position, per level
        self.slot_folder = [np.repeat(np.arange(b.size - 1), np.diff(b)) for b in bnds]

    # structure ---------------------------------------------------------
    def n_folders(self, level: int) -> int:
        return self.bounds[level].size - 1

    def sizes(self, level: int) -> NDArray[np.int64]:
        return np.diff(self.bounds[level])

    def span(self, level: int, k: int) -> tuple[int, int]:
        b = self.bounds[level]
        return int(b[k]), int(b[k + 1])

    def members(self, level: int, k: int) -> NDArray[np.int64]:
        s, e = self.span(level, k)
        return self.leaf_order[s:e]

    def children(self, level: int, k: int) -> NDArray[np.int64]:
        if level + 1 >= self.depth:
            return np.zeros(0, dtype=np.int64)
        s, e = self.span(level, k)
        f = self.slot_folder[level + 1]
        return np.arange(f[s], f[e - 1] + 1)

    def parent(self, level: int, k: int) -> int | None:
        if level == 0:
            return None
        s, _ = self.span(level, k)
        return int(self.slot_folder[level - 1][s])

    def folder(self, level: int, k: int) -> Folder:
        return Folder(level, k, tuple(int(i) for i in self.members(level, k)),
                      self.parent(level, k), tuple(int(c) for c in self.children(level, k)))

    @property
    def levels(self) -> list[list[Folder]]:
        return [[self.folder(l, k) for k in range(self.n_folders(l))] for l in range(self.depth)]

    def position(self, leaf: int) -> int:
        return int(self._pos[leaf])

    # constructors ------------------------------------------------------
    @classmethod
    def from_nested(cls, node) -> "PartitionTree":
        """Build from nested lists: a leaf is an int, a folder a list of subtrees."""
        order: list[int] = []
        spans: list[tuple[int, int, int]] = []  # (depth, start, end)

        stack = [(node, 0, False, 0)]
        # iterative post-order to survive deep, unbalanced trees
        while stack:
            cur, d, done, start = stack.pop()
            if isinstance(cur, (int, np.integer)):
                spans.append((d, len(order), len(order) + 1))
                order.append(int(cur))
                continue
            if done:
                spans.append((d, start, len(order)))
                continue
            kids = list(cur)
            if not kids:
                raise InputError("empty folder in nested tree")
            stack.append((cur, d, True, len(order)))
            for kid in reversed(kids):
                stack.append((kid, d + 1, False, 0))
        depth = max(d for d, _, _ in spans) + 1
        N = len(order)
        starts = [set() for _ in range(depth)]
        for d, s, e in spans:
            # a folder persists at every finer level until it splits; singletons to the bottom
            last = depth - 1 if e - s == 1 else d
            for lvl in range(d, last + 1):
                starts[lvl].add(s)
        for d, s, e in spans:
            if e - s > 1:
                pass
        bounds = []
        for lvl in range(depth):
            acc = set(starts[lvl])
            if lvl > 0:
                acc |= set(bounds[-1][:-1].tolist())
            bounds.append(np.array(sorted(acc) + [N], dtype=np.int64))
        return cls(order, bounds)

    @classmethod
    def from_levels(cls, levels: Sequence[Sequence[Sequence[int]]], strict: bool = True) -> "PartitionTree":
        """Build from explicit member lists per level (coarse to fine)."""
        finest = [list(map(int, f)) for f in levels[-1]]
        order = [i for f in finest for i in f]
        pos = {leaf: i for i, leaf in enumerate(order)}
        bounds = []
        for lvl, folders in enumerate(levels):
            spans = []
            for f in folders:
                ps = sorted(pos[int(i)] for i in f)
                if ps != list(range(ps[0], ps[0] + len(ps))):
                    raise InputError(f"level {lvl}: folder is not contiguous in the leaf order")
                spans.append(ps[0])
            bounds.append(sorted(spans) + [len(order)])
        return cls(order, bounds, strict=strict)

    @classmethod
    def uniform(cls, N: int, arity: int = 2) -> "PartitionTree":
        """Balanced tree over 0..N-1 in natural order (dyadic when N is a power of two)."""
        def rec(lo: int, hi: int):
            if hi - lo == 1:
                return lo
            cuts = np.linspace(lo, hi, min(arity, hi - lo) + 1).round().astype(int)
            return [rec(int(a), int(b)) for a, b in zip(cuts[:-1], cuts[1:])]
        return cls.from_nested(rec(0, N))

    # serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        levels = []
        for l in range(self.depth):
            lv = []
            for k in range(self.n_folders(l)):
                p = self.parent(l, k)
                lv.append({"id": k, "parent": p, "members": [int(i) for i in self.members(l, k)]})
            levels.append(lv)
        return {"levels": levels, "leaf_order": [int(i) for i in self.leaf_order]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionTree":
        try:
            levels = [[f["members"] for f in lv] for lv in d["levels"]]
            t = cls.from_levels(levels)
        except (KeyError, TypeError, IndexError) as exc:
            raise InputError(f"malformed tree JSON: {exc}") from exc
        if "leaf_order" in d and list(d["leaf_order"]) != t.leaf_order.tolist():
            raise InputError("leaf_order inconsistent with finest level")
        return t

    @classmethod
    def from_json(cls, text: str) -> "PartitionTree":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed tree JSON: {exc}") from exc

    def __eq__(self, other) -> bool:
        if not isinstance(other, PartitionTree):
            return NotImplemented
        return (np.array_equal(self.leaf_order, other.leaf_order)
                and len(self.bounds) == len(other.bounds)
                and all(np.array_equal(a, b) for a, b in zip(self.bounds, other.bounds)))

    def __repr__(self) -> str:
        return f"PartitionTree(N={self.N}, depth={self.depth})"

    # geometry ----------------------------------------------------------
    def folder_sets(self) -> list[frozenset[int]]:
        """Distinct folders as member sets (padded repeats collapsed)."""
        seen = {}
        for l in range(self.depth):
            for k in range(self.n_folders(l)):
                s = frozenset(int(i) for i in self.members(l, k))
                seen.setdefault(s, None)
        return list(seen)

    def tree_distance(self, x: int, y: int) -> int:
        """Size of the smallest folder holding both leaves; 0 when x == y."""
        if x == y:
            return 0
        px, py = self._pos[x], self._pos[y]
        size = self.N
        for l in range(self.depth):
            f = self.slot_folder[l]
            if f[px] != f[py]:
                break
            s, e = self.span(l, int(f[px]))
            size = e - s
        return int(size)

    def distance_matrix(self) -> NDArray[np.int64]:
        D = np.full((self.N, self.N), self.N, dtype=np.int64)
        for l in range(1, self.depth):
            f = self.slot_folder[l]
            sz = self.sizes(l)[f]
            same = f[:, None] == f[None, :]
            D = np.where(same, np.minimum(D, sz[:, None]), D)
        out = np.empty_like(D)
        out[np.ix_(self.leaf_order, self.leaf_order)] = D
        np.fill_diagonal(out, 0)
        return out

    def balance(self) -> tuple[float, float]:
        """Smallest and largest child/parent size ratio over genuine splits."""
        lo, hi = 1.0, 0.0
        for l in range(self.depth - 1):
            for k in range(self.n_folders(l)):
                kids = self.children(l, k)
                if kids.size < 2:
                    continue
                s, e = self.span(l, k)
                r = self.sizes(l + 1)[kids] / (e - s)
                lo, hi = min(lo, float(r.min())), max(hi, float(r.max()))
        return (lo, hi) if hi > 0 else (1.0, 1.0)


# affinities ------------------------------------------------------------

def gaussian_affinity(points) -> Array:
    """exp(−‖xᵢ−xⱼ‖²/(2σ²)) with σ the median pairwise distance."""
    x = as_mat(points, "points")
    if x.shape[0] < 2:
        raise InputError("need at least two points")
    d = pdist(x)
    sigma = float(np.median(d))
    if sigma == 0.0:
        raise InputError("degenerate input: median pairwise distance is zero")
    W = squareform(np.exp(-(d * d) / (2.0 * sigma * sigma)))
    np.fill_diagonal(W, 1.0)
    return W


def _check_affinity(w) -> Array:
    W = np.asarray(w, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise InputError("affinity must be square")
    if W.shape[0] < 2:
        raise InputError("need at least two nodes")
    return W


def fiedler_vector(w) -> Array:
    W = _check_affinity(w)
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        raise InputError("affinity has an isolated zero-degree node")
    dm = 1.0 / np.sqrt(deg)
    L = np.eye(W.shape[0]) - dm[:, None] * W * dm[None, :]
    L = 0.5 * (L + L.T)
    _, vecs = scipy.linalg.eigh(L, subset_by_index=[0, 1])
    f = vecs[:, 1]
    # orientation: largest-magnitude entry positive
    j = int(np.argmax(np.abs(f)))
    return f if f[j] >= 0 else -f


def fiedler_bipartition(w) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
    """Split by the sign of the Fiedler vector of I − D^{-1/2}WD^{-1/2}."""
    W = _check_affinity(w)
    N = W.shape[0]
    if N == 2:
        return np.array([0]), np.array([1])
    f = fiedler_vector(W)
    left = np.flatnonzero(f <= _TIE)
    right = np.flatnonzero(f > _TIE)
    if left.size == 0 or right.size == 0:
        order = np.argsort(f, kind="stable")
        left, right = np.sort(order[: N // 2]), np.sort(order[N // 2:])
        if np.ptp(f) <= _TIE:
            idx = np.arange(N)
            left, right = idx[idx % 2 == 0], idx[idx % 2 == 1]
    return left, right


def build_tree(w) -> PartitionTree:
    """Recursive Fiedler bipartitioning into a padded binary tree."""
    W = np.asarray(w, dtype=np.float64)
    N = W.shape[0]
    if N == 1:
        return PartitionTree([0], [[0, 1]])
    _check_affinity(W)
    root: list = []
    stack = [(np.arange(N), root)]
    while stack:
        idx, slot = stack.pop()
        left, right = fiedler_bipartition(W[np.ix_(idx, idx)])
        for part in (idx[left], idx[right]):
            if part.size == 1:
                slot.append(int(part[0]))
            else:
                sub: list = []
                slot.append(sub)
                stack.append((part, sub))
    return PartitionTree.from_nested(root)


# tree EMD --------------------------------------------------------------

def _level_weights(t: PartitionTree, prm: EmdParams):
    """Per level: folder sizes and ω(X)/|X| with levels numbered from 1."""
    out = []
    for l in range(t.depth):
        sz = t.sizes(l).astype(np.float64)
        w = 2.0 ** (-prm.a * (l + 1)) * sz ** (prm.b - 1.0)
        out.append((sz, w))
    return out


def tree_emd(f, g, t: PartitionTree, prm: EmdParams = EmdParams()) -> float:
    """Σ over all levels and folders of ‖f(X) − g(X)‖·ω(X)/|X|."""
    f = np.asarray(f, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    if f.size != t.N or g.size != t.N:
        raise InputError(f"vectors must have length {t.N}")
    d = (f - g)[t.leaf_order]
    sq = d * d
    total = 0.0
    for l, (sz, w) in enumerate(_level_weights(t, prm)):
        norms = np.sqrt(np.add.reduceat(sq, t.bounds[l][:-1]))
        total += float(np.sum(norms * w))
    return total


def _folder_program(t: PartitionTree, prm: EmdParams):
    """Distinct folders bottom-up as CSR child lists, with level multiplicity folded into weights."""
    wsum: dict[tuple[int, int], float] = {}
    for l, (sz, w) in enumerate(_level_weights(t, prm)):
        b = t.bounds[l]
        for k in range(b.size - 1):
            key = (int(b[k]), int(b[k + 1]))
            wsum[key] = wsum.get(key, 0.0) + float(w[k])
    leaf_w = np.zeros(t.N)
    spans = sorted(wsum, key=lambda se: (se[0], -se[1]))
    # laminar family: parent of each span is the innermost open span containing it
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    stack: list[tuple[int, int]] = []
    for se in spans:
        while stack and stack[-1][1] <= se[0]:
            stack.pop()
        if stack:
            parent[se] = stack[-1]
        stack.append(se)
    internal = sorted((se for se in spans if se[1] - se[0] > 1), key=lambda se: (se[1] - se[0], se[0]))
    node_of = {se: t.N + i for i, se in enumerate(internal)}
    children: dict[tuple[int, int], list[int]] = {se: [] for se in internal}
    for se in spans:
        if se in parent:
            children[parent[se]].append(se[0] if se[1] - se[0] == 1 else node_of[se])
    for se in spans:
        if se[1] - se[0] == 1:
            leaf_w[se[0]] = wsum[se]
    ptr = np.zeros(len(internal) + 1, dtype=np.int64)
    kids: list[int] = []
    for i, se in enumerate(internal):
        kids.extend(children[se])
        ptr[i + 1] = len(kids)
    weights = np.array([wsum[se] for se in internal], dtype=np.float64)
    return leaf_w, ptr, np.asarray(kids, dtype=np.int64), weights


@numba.njit(cache=True)
def _emd_pairs(x, leaf_w, ptr, kids, weights):  # pragma: no cover - compiled
    M, N = x.shape
    K = weights.shape[0]
    D = np.zeros((M, M))
    s = np.empty(N + K)
    for i in range(M):
        for j in range(i + 1, M):
            acc = 0.0
            for q in range(N):
                d = x[i, q] - x[j, q]
                s[q] = d * d
                acc += leaf_w[q] * abs(d)
            for k in range(K):
                v = 0.0
                for c in range(ptr[k], ptr[k + 1]):
                    v += s[kids[c]]
                s[N + k] = v
                acc += weights[k] * np.sqrt(v)
            D[i, j] = acc
            D[j, i] = acc
    return D


def emd_matrix(m, t: PartitionTree, prm: EmdParams = EmdParams()) -> Array:
    """Pairwise tree EMD between the rows of `m` over a tree on its columns."""
    x = as_mat(m)
    if x.shape[1] != t.N:
        raise InputError(f"tree has {t.N} leaves but matrix has {x.shape[1]} columns")
    x = np.ascontiguousarray(x[:, t.leaf_order])
    return _emd_pairs(x, *_folder_program(t, prm))


def dual_affinity(m, t: PartitionTree, prm: EmdParams = EmdParams()) -> Array:
    """exp(−D/ε) between rows of `m`, ε = eps_factor × median pairwise EMD."""
    D = emd_matrix(m, t, prm)
    M = D.shape[0]
    if M < 2:
        return np.ones((M, M))
    eps = prm.eps_factor * float(np.median(D[np.triu_indices(M, 1)]))
    if eps == 0.0:
        log.warning("dual affinity degenerate (median EMD is zero); using all-ones affinity")
        return np.ones((M, M))
    W = np.exp(-D / eps)
    np.fill_diagonal(W, 1.0)
    return W


def _initial_tree(points: Array) -> PartitionTree:
    if points.shape[0] == 1:
        return PartitionTree([0], [[0, 1]])
    try:
        W = gaussian_affinity(points)
    except InputError:
        log.warning("identical points; initial affinity set to all ones")
        W = np.ones((points.shape[0], points.shape[0]))
    return build_tree(W)


def questionnaire(m, iters: int = 3, prm: EmdParams = EmdParams(),
                  start: str = "cols") -> tuple[PartitionTree, PartitionTree]:
    """Alternate dual-affinity trees on rows and columns; returns (rows, cols)."""
    x = as_mat(m)
    if iters < 1:
        raise InputError("iters must be at least 1")
    if start not in ("cols", "rows"):
        raise InputError("start must be 'cols' or 'rows'")
    if start == "rows":
        tc, tr = questionnaire(x.T, iters, prm, "cols")
        return tr, tc

    def tree_of(a: Array, other: PartitionTree) -> PartitionTree:
        if a.shape[0] == 1:
            return PartitionTree([0], [[0, 1]])
        return build_tree(dual_affinity(a, other, prm))

    t_cols = _initial_tree(x.T)
    t_rows = None
    for _ in range(iters):
        t_rows = tree_of(x, t_cols)
        t_cols = tree_of(x.T, t_rows)
    return t_rows, t_cols
