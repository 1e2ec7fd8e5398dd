"""Generalized Haar-Walsh dictionaries on partition trees, best-basis search and 2-D transforms.

Every tree level stores N coefficients in leaf order. Within a folder the
coefficients are sorted by tag (sequency). A parent level is obtained from
its child level by one sparse orthogonal merge, so a level's analysis
operator is a product of merges and its inverse is the transpose.

Tags are kept raw: merging children that share tag t yields tags t*M + i
with M the maximal arity. On a uniform binary tree this is the sequency
ordering of the Walsh recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .errors import InputError
from .matcore import as_mat
from .treegeo import PartitionTree

__all__ = [
    "AtomId",
    "GhwtLayout",
    "Dictionary",
    "Lattice",
    "Basis1D",
    "CoeffTable",
    "BestBasis2D",
    "CoeffMap",
    "layout_of",
    "ghwt_analyze",
    "ghwt_synthesize",
    "best_basis_1d",
    "tiling_cost_1d",
    "random_tiling_1d",
    "tensor_analyze",
    "best_basis_2d",
    "random_tiling_2d",
    "haar_basis_2d",
    "finest_basis_2d",
    "transform_2d",
    "inverse_2d",
    "atom_support",
]

Array = NDArray[np.float64]
IntArray = NDArray[np.int64]

FULL_STATE_BUDGET = 4_000_000


@dataclass(frozen=True, order=True)
class AtomId:
    level: int
    folder: int
    tag: int


# ---------------------------------------------------------------------------
# layout


def _helmert(w: Array) -> Array:
    """Orthonormal g×g matrix whose first row is w/|w|; row i contrasts children < i against child i."""
    g = w.size
    H = np.zeros((g, g))
    H[0] = w / np.linalg.norm(w)
    for i in range(1, g):
        H[i, :i] = w[:i] * w[i]
        H[i, i] = -np.sum(w[:i] ** 2)
        H[i] /= np.linalg.norm(H[i])
    return H


def _group_matrix(t: int, sizes: Array) -> Array:
    g = sizes.size
    if g == 1:
        return np.ones((1, 1))
    if t == 0:
        return _helmert(np.sqrt(sizes))
    if g == 2:
        s = 1.0 if t % 2 == 0 else -1.0
        return np.array([[1.0, s], [1.0, -s]]) / math.sqrt(2.0)
    return _helmert(np.ones(g))


class GhwtLayout:
    """Tag layout and merge operators of the GHWT dictionary of one tree."""

    def __init__(self, tree: PartitionTree):
        self.tree = tree
        self.N = N = tree.N
        self.L = L = tree.depth
        arity = 1
        for l in range(L - 1):
            for k in range(tree.n_folders(l)):
                arity = max(arity, tree.children(l, k).size)
        self.M = M = max(arity, 2)
        tags: list[IntArray] = [np.zeros(0, dtype=np.int64)] * L
        tags[L - 1] = np.zeros(N, dtype=np.int64)
        merges: list[sp.csr_matrix] = [None] * max(L - 1, 0)  # type: ignore[list-item]
        for l in range(L - 2, -1, -1):
            child_tags = tags[l + 1]
            new_tags = np.empty(N, dtype=np.int64)
            rows: list[int] = []
            cols: list[int] = []
            vals: list[float] = []
            b = tree.bounds[l]
            cb = tree.bounds[l + 1]
            for k in range(b.size - 1):
                s, e = int(b[k]), int(b[k + 1])
                kids = tree.children(l, k)
                if kids.size == 1:
                    new_tags[s:e] = child_tags[s:e] * M
                    rows.extend(range(s, e))
                    cols.extend(range(s, e))
                    vals.extend([1.0] * (e - s))
                    continue
                sizes = (cb[kids + 1] - cb[kids]).astype(np.float64)
                groups: dict[int, list[tuple[int, int]]] = {}
                for ci, c in enumerate(kids):
                    for j in range(int(cb[c]), int(cb[c + 1])):
                        groups.setdefault(int(child_tags[j]), []).append((ci, j))
                out: list[tuple[int, int, Array]] = []  # (tag, group tag, coefficient row)
                for t in sorted(groups):
                    members = groups[t]
                    H = _group_matrix(t, sizes[[ci for ci, _ in members]])
                    idx = [j for _, j in members]
                    for i in range(len(members)):
                        out.append((t * M + i, t, (idx, H[i])))
                out.sort(key=lambda x: x[0])
                for pos, (tag, _, (idx, h)) in enumerate(out):
                    slot = s + pos
                    new_tags[slot] = tag
                    rows.extend([slot] * len(idx))
                    cols.extend(idx)
                    vals.extend(h.tolist())
            tags[l] = new_tags
            merges[l] = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
        self.tags = tags
        self.merges = merges
        self.merges_t = [m.T.tocsr() for m in merges]
        self.folder = tree.slot_folder
        self._ranges = None

    # coefficient movement ----------------------------------------------
    def leaf_vector(self, v: Array) -> Array:
        return np.asarray(v, dtype=np.float64)[self.tree.leaf_order]

    def up(self, x: Array, level: int) -> Array:
        """Move coefficients (along axis 0) from `level` + 1 to `level`."""
        return self.merges[level] @ x

    def down(self, x: Array, level: int) -> Array:
        """Move coefficients (along axis 0) from `level` to `level` + 1."""
        return self.merges_t[level] @ x

    def analyze_levels(self, v) -> list[Array]:
        x = self.leaf_vector(v)
        out: list[Array] = [None] * self.L  # type: ignore[list-item]
        out[self.L - 1] = x
        for l in range(self.L - 2, -1, -1):
            out[l] = self.up(out[l + 1], l)
        return out

    def to_leaves(self, x: Array, level: int) -> Array:
        """Synthesize level-`level` coefficients (axis 0) back to natural index order."""
        for l in range(level, self.L - 1):
            x = self.down(x, l)
        out = np.empty_like(x)
        out[self.tree.leaf_order] = x
        return out

    def operator(self, level: int) -> Array:
        """Dense N×N analysis matrix of a level: rows are atoms, columns natural indices."""
        return self.to_leaves(np.eye(self.N), level).T

    # atoms --------------------------------------------------------------
    def slot(self, atom: AtomId) -> int:
        s, e = self.tree.span(atom.level, atom.folder)
        hit = np.flatnonzero(self.tags[atom.level][s:e] == atom.tag)
        if hit.size != 1:
            raise InputError(f"no atom {atom}")
        return s + int(hit[0])

    def atom(self, level: int, slot: int) -> AtomId:
        return AtomId(level, int(self.folder[level][slot]), int(self.tags[level][slot]))

    def atoms_at(self, level: int) -> list[AtomId]:
        return [self.atom(level, j) for j in range(self.N)]

    def is_root_scaling(self, level: int, slot: int) -> bool:
        b = self.tree.bounds[level]
        return b.size == 2 and slot == 0

    def ranges(self):
        """Distinct folder ranges: dict (s, e) -> (first level, child ranges)."""
        if self._ranges is None:
            first: dict[tuple[int, int], int] = {}
            for l in range(self.L):
                b = self.tree.bounds[l]
                for k in range(b.size - 1):
                    first.setdefault((int(b[k]), int(b[k + 1])), l)
            kids: dict[tuple[int, int], list[tuple[int, int]]] = {}
            for (s, e), l in first.items():
                if e - s == 1:
                    kids[(s, e)] = []
                    continue
                # genuine children: the folders at the first level where the range splits
                lv = l
                while lv + 1 < self.L and (s, e) in _level_set(self.tree, lv + 1):
                    lv += 1
                nb = self.tree.bounds[lv + 1]
                cut = nb[(nb >= s) & (nb <= e)]
                kids[(s, e)] = [(int(a), int(c)) for a, c in zip(cut[:-1], cut[1:])]
            self._ranges = {r: (first[r], kids[r]) for r in first}
        return self._ranges


def _level_set(tree: PartitionTree, level: int) -> set[tuple[int, int]]:
    cache = tree.__dict__.setdefault("_level_sets", {})
    if level not in cache:
        b = tree.bounds[level]
        cache[level] = {(int(b[k]), int(b[k + 1])) for k in range(b.size - 1)}
    return cache[level]


def layout_of(tree: PartitionTree) -> GhwtLayout:
    lay = tree.__dict__.get("_ghwt_layout")
    if lay is None:
        lay = GhwtLayout(tree)
        tree.__dict__["_ghwt_layout"] = lay
    return lay


def atom_support(atom: AtomId, tree: PartitionTree) -> tuple[IntArray, Array]:
    """Member indices of the atom's folder and the atom's values there."""
    lay = layout_of(tree)
    slot = lay.slot(atom)
    e = np.zeros(lay.N)
    e[slot] = 1.0
    vec = lay.to_leaves(e, atom.level)
    members = tree.members(atom.level, atom.folder)
    return members.copy(), vec[members]


# ---------------------------------------------------------------------------
# 1-D dictionary and tilings


@dataclass
class Dictionary:
    layout: GhwtLayout
    coeffs: list[Array]

    @property
    def tree(self) -> PartitionTree:
        return self.layout.tree

    def coeff(self, atom: AtomId) -> float:
        return float(self.coeffs[atom.level][self.layout.slot(atom)])


def ghwt_analyze(v, t: PartitionTree) -> Dictionary:
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != t.N:
        raise InputError(f"vector length {v.size} does not match {t.N} leaves")
    lay = layout_of(t)
    return Dictionary(lay, lay.analyze_levels(v))


@dataclass
class Basis1D:
    """A tiling given as blocks of atoms (level, slots)."""

    layout: GhwtLayout
    blocks: list[tuple[int, IntArray]]
    cost: float = float("nan")

    def atoms(self) -> list[AtomId]:
        return [self.layout.atom(l, int(j)) for l, js in self.blocks for j in js]

    def size(self) -> int:
        return int(sum(js.size for _, js in self.blocks))

    def coefficients(self, d: Dictionary) -> Array:
        return np.concatenate([d.coeffs[l][js] for l, js in self.blocks]) if self.blocks else np.zeros(0)

    @classmethod
    def from_atoms(cls, layout: GhwtLayout, atoms: list[AtomId]) -> "Basis1D":
        per: dict[int, list[int]] = {}
        for a in atoms:
            per.setdefault(a.level, []).append(layout.slot(a))
        return cls(layout, [(l, np.asarray(js, dtype=np.int64)) for l, js in sorted(per.items())])


def _check_tiling_1d(basis: Basis1D) -> None:
    lay = basis.layout
    if basis.size() != lay.N:
        raise InputError(f"basis has {basis.size()} atoms, need {lay.N}")
    lv = np.concatenate([np.full(js.size, l) for l, js in basis.blocks])
    sl = np.concatenate([js for _, js in basis.blocks]).astype(np.int64)
    b = lay.tree.bounds
    starts = np.empty(sl.size, dtype=np.int64)
    ends = np.empty(sl.size, dtype=np.int64)
    tags = np.empty(sl.size, dtype=np.int64)
    for l in np.unique(lv):
        m = lv == l
        f = lay.folder[l][sl[m]]
        starts[m], ends[m] = b[l][f], b[l][f + 1]
        tags[m] = lay.tags[l][sl[m]]
    levels = np.unique(lv)
    for ia, a in enumerate(levels):
        A = np.flatnonzero(lv == a)
        for c in levels[ia:]:
            C = np.flatnonzero(lv == c)
            # tag of the coarser atom's ancestor at the finer level c
            shift = lay.M ** int(c - a) if (c - a) * math.log2(lay.M) < 62 else None
            anc = tags[A] // shift if shift is not None else np.zeros(A.size, dtype=np.int64)
            over = ((starts[C][None, :] >= starts[A][:, None]) & (starts[C][None, :] < ends[A][:, None])
                    & (anc[:, None] == tags[C][None, :]))
            if a == c:
                over &= A[:, None] != C[None, :]
            if np.any(over):
                raise InputError("atom set is not an admissible tiling (overlapping tiles)")


def ghwt_synthesize(coeffs, basis: Basis1D, validate: bool = True) -> Array:
    """Inverse transform of coefficients listed in `basis` block order."""
    c = np.asarray(coeffs, dtype=np.float64).ravel()
    if validate:
        _check_tiling_1d(basis)
    if c.size != basis.size():
        raise InputError("coefficient count does not match basis")
    lay = basis.layout
    acc = np.zeros(lay.N)
    pos = 0
    per_level: dict[int, Array] = {}
    for l, js in basis.blocks:
        x = per_level.setdefault(l, np.zeros(lay.N))
        x[js] += c[pos:pos + js.size]
        pos += js.size
    # Horner sweep from coarse to fine
    for l in range(lay.L):
        if l in per_level:
            acc = acc + per_level[l]
        if l < lay.L - 1:
            acc = lay.down(acc, l)
    out = np.empty(lay.N)
    out[lay.tree.leaf_order] = acc
    return out


# ---------------------------------------------------------------------------
# lattices


class _TooBig(Exception):
    pass


@dataclass
class Lattice:
    """Tiling family as a DAG. Node ids are in post-order; id == n is the empty node."""

    layout: GhwtLayout
    kind: str
    term_level: IntArray
    term_slots: list[IntArray]
    splits: list[list[tuple[int, ...]]]
    root: int
    height: IntArray = field(init=False)

    def __post_init__(self) -> None:
        h = np.zeros(self.n, dtype=np.int64)
        for i in range(self.n):
            best = 0
            for s in self.splits[i]:
                for c in s:
                    best = max(best, h[c] + 1)
            h[i] = best
        self.height = h

    @property
    def n(self) -> int:
        return len(self.splits)

    @property
    def null(self) -> int:
        return self.n

    def padded_splits(self) -> tuple[IntArray, NDArray[np.bool_]]:
        S = max((len(s) for s in self.splits), default=0)
        K = max((len(c) for s in self.splits for c in s), default=0)
        ch = np.full((self.n + 1, max(S, 1), max(K, 1)), self.null, dtype=np.int64)
        ok = np.zeros((self.n + 1, max(S, 1)), dtype=bool)
        for i, ss in enumerate(self.splits):
            for si, c in enumerate(ss):
                ch[i, si, :len(c)] = c
                ok[i, si] = True
        return ch, ok


class _Builder:
    def __init__(self, layout: GhwtLayout, kind: str, cap: int | None):
        self.layout = layout
        self.kind = kind
        self.cap = cap
        self.ids: dict = {}
        self.term_level: list[int] = []
        self.term_slots: list[IntArray] = []
        self.splits: list[list[tuple[int, ...]]] = []

    def build(self, root_key, expand) -> int:
        # expand(key) -> None for empty, or (terminal | None, [[child keys]])
        stack = [(root_key, False)]
        pending: dict = {}
        while stack:
            key, ready = stack.pop()
            if key in self.ids:
                continue
            if not ready:
                info = pending.get(key)
                if info is None:
                    info = expand(key)
                    pending[key] = info
                if info is None:
                    self.ids[key] = -1
                    continue
                stack.append((key, True))
                for group in info[1]:
                    for ck in group:
                        if ck not in self.ids:
                            stack.append((ck, False))
                continue
            term, groups = pending.pop(key)
            splits = []
            for group in groups:
                kids = tuple(self.ids[ck] for ck in group if self.ids[ck] >= 0)
                if kids:
                    splits.append(kids)
            nid = len(self.splits)
            self.ids[key] = nid
            if term is None:
                self.term_level.append(-1)
                self.term_slots.append(np.zeros(0, dtype=np.int64))
            else:
                self.term_level.append(term[0])
                self.term_slots.append(np.asarray(term[1], dtype=np.int64))
            self.splits.append(splits)
            if self.cap is not None and nid >= self.cap:
                raise _TooBig
        return self.ids[root_key]

    def lattice(self, root: int) -> Lattice:
        return Lattice(self.layout, self.kind, np.asarray(self.term_level, dtype=np.int64),
                       self.term_slots, self.splits, root)


def full_lattice(layout: GhwtLayout, cap: int | None = None) -> Lattice:
    """All Haar-Walsh tilings: nodes (range, level b, tag m) split in time or frequency.

    A node spans the level-b atoms with tag m of the folders inside the range.
    Nodes holding a single atom collapse onto that atom, which makes them terminal.
    """
    ranges = layout.ranges()
    M = layout.M

    def canon(key):
        s, e, b, m = key
        slots = s + np.flatnonzero(layout.tags[b][s:e] == m)
        if slots.size == 0:
            return None
        if slots.size == 1:
            return ("atom", b, int(slots[0]))
        return key

    def expand(key):
        if key[0] == "atom":
            return ((key[1], [key[2]]), [])
        s, e, b, m = key
        groups = []
        if b >= 1:
            groups.append([(s, e, b - 1, mm) for mm in range(m * M, m * M + M)])
        groups.append([(cs, ce, b, m) for cs, ce in ranges[(s, e)][1]])
        return (None, [[k for k in map(canon, g) if k is not None] for g in groups])

    bld = _Builder(layout, "full", cap)
    root = bld.build(canon((0, layout.N, layout.L - 1, 0)), expand)
    return bld.lattice(root)


def _split_level(layout: GhwtLayout, s: int, e: int) -> int:
    lv = layout.ranges()[(s, e)][0]
    while lv + 1 < layout.L and (s, e) in _level_set(layout.tree, lv + 1):
        lv += 1
    return lv


def _haar_details(layout: GhwtLayout, s: int, e: int) -> tuple[int, IntArray]:
    """Level and slots of the difference atoms created where range [s, e) splits."""
    lv = _split_level(layout, s, e)
    g = len(layout.ranges()[(s, e)][1])
    tags = layout.tags[lv][s:e]
    return lv, s + np.flatnonzero((tags >= 1) & (tags < g))


def restricted_lattice(layout: GhwtLayout) -> Lattice:
    """Coarse-to-fine folder splits, fine-to-coarse tag groups and the Haar basis under a virtual root."""
    ranges = layout.ranges()
    M = layout.M
    L = layout.L

    def expand(key):
        if key[0] == "c2f":
            s, e = key[1], key[2]
            first, kids = ranges[(s, e)]
            groups = [[("c2f", cs, ce) for cs, ce in kids]] if kids else []
            return ((first, np.arange(s, e)), groups)
        if key[0] == "f2c":
            b, m = key[1], key[2]
            slots = np.flatnonzero(layout.tags[b] == m)
            if slots.size == 0:
                return None
            groups = [[("f2c", b - 1, mm) for mm in range(m * M, m * M + M)]] if b >= 1 else []
            return ((b, slots), groups)
        if key[0] == "hd":
            s, e = key[1], key[2]
            kids = ranges[(s, e)][1]
            if not kids:
                return None
            return (None, [[("diff", s, e)] + [("hd", cs, ce) for cs, ce in kids]])
        if key[0] == "diff":
            return (_haar_details(layout, key[1], key[2]), [])
        if key[0] == "scal":
            return ((0, np.array([0])), [])
        return (None, [[("c2f", 0, layout.N)], [("f2c", L - 1, 0)], [("scal",), ("hd", 0, layout.N)]])

    bld = _Builder(layout, "blocks", None)
    root = bld.build(("root",), expand)
    return bld.lattice(root)


def lattice_for(layout: GhwtLayout, family: str, cap: int | None = None) -> Lattice:
    if family == "full":
        return full_lattice(layout, cap)
    if family == "blocks":
        return restricted_lattice(layout)
    raise InputError(f"unknown tiling family {family!r}")


def _choose_families(lr: GhwtLayout, lc: GhwtLayout, family: str, budget: int):
    if family != "auto":
        return lattice_for(lr, family), lattice_for(lc, family)
    try:
        a = full_lattice(lr, cap=max(budget // 64, 1))
        b = full_lattice(lc, cap=max(budget // max(a.n, 1), 1))
        if a.n * b.n <= budget:
            return a, b
    except _TooBig:
        pass
    return restricted_lattice(lr), restricted_lattice(lc)


# ---------------------------------------------------------------------------
# 1-D best basis


def _terminal_cost_1d(lat: Lattice, coeffs: list[Array], ell: float) -> Array:
    cost = np.full(lat.n + 1, np.inf)
    cost[lat.n] = 0.0
    for i in range(lat.n):
        l = lat.term_level[i]
        if l >= 0:
            cost[i] = float(np.sum(np.abs(coeffs[l][lat.term_slots[i]]) ** ell))
    return cost


def _check_ell(ell: float) -> None:
    if not 0.0 < ell < 2.0:
        raise InputError(f"cost exponent must lie in (0, 2), got {ell}")


def best_basis_1d(d: Dictionary, ell: float = 1.0, family: str = "full") -> Basis1D:
    """Minimum-cost tiling; ties prefer the undivided tile, then frequency splits."""
    _check_ell(ell)
    lat = lattice_for(d.layout, "full" if family == "auto" else family)
    tcost = _terminal_cost_1d(lat, d.coeffs, ell)
    V = np.zeros(lat.n + 1)
    choice = np.full(lat.n, -1, dtype=np.int64)
    for i in range(lat.n):
        best, arg = tcost[i], -1
        for si, kids in enumerate(lat.splits[i]):
            c = float(sum(V[k] for k in kids))
            if c < best:
                best, arg = c, si
        V[i] = best
        choice[i] = arg
    blocks = []
    stack = [lat.root]
    while stack:
        i = stack.pop()
        if choice[i] < 0:
            blocks.append((int(lat.term_level[i]), lat.term_slots[i]))
        else:
            stack.extend(reversed(lat.splits[i][choice[i]]))
    return Basis1D(d.layout, blocks, float(V[lat.root]))


def tiling_cost_1d(d: Dictionary, basis: Basis1D, ell: float = 1.0) -> float:
    return float(np.sum(np.abs(basis.coefficients(d)) ** ell))


def random_tiling_1d(layout: GhwtLayout, rng: np.random.Generator, family: str = "full") -> Basis1D:
    lat = lattice_for(layout, family)
    blocks = []
    stack = [lat.root]
    while stack:
        i = stack.pop()
        opts = ([-1] if lat.term_level[i] >= 0 else []) + list(range(len(lat.splits[i])))
        o = opts[int(rng.integers(len(opts)))]
        if o < 0:
            blocks.append((int(lat.term_level[i]), lat.term_slots[i]))
        else:
            stack.extend(lat.splits[i][o])
    return Basis1D(layout, blocks)


# ---------------------------------------------------------------------------
# 2-D coefficients


class CoeffTable:
    """Tensor GHWT coefficients of a matrix, one (row level, column level) pair at a time."""

    def __init__(self, m: Array, rows: GhwtLayout, cols: GhwtLayout):
        self.rows = rows
        self.cols = cols
        self.base = np.ascontiguousarray(m[np.ix_(rows.tree.leaf_order, cols.tree.leaf_order)])

    @property
    def shape(self) -> tuple[int, int]:
        return self.base.shape

    def sweep(self, row_levels=None, col_levels=None):
        """Yield (a, b, X_ab) over the requested level pairs using one merge per step."""
        Lr, Lc = self.rows.L, self.cols.L
        row_levels = set(range(Lr)) if row_levels is None else set(row_levels)
        col_levels = set(range(Lc)) if col_levels is None else set(col_levels)
        if not row_levels or not col_levels:
            return
        x = self.base
        low_a = min(row_levels)
        low_b = min(col_levels)
        for a in range(Lr - 1, low_a - 1, -1):
            if a < Lr - 1:
                x = self.rows.up(x, a)
            if a not in row_levels:
                continue
            y = x.T  # columns along axis 0
            for b in range(Lc - 1, low_b - 1, -1):
                if b < Lc - 1:
                    y = self.cols.up(y, b)
                if b in col_levels:
                    yield a, b, y.T

    def pair(self, a: int, b: int) -> Array:
        for aa, bb, x in self.sweep([a], [b]):
            return np.ascontiguousarray(x)
        raise InputError("invalid level pair")


def tensor_analyze(m, t_rows: PartitionTree, t_cols: PartitionTree) -> CoeffTable:
    a = as_mat(m)
    if a.shape != (t_rows.N, t_cols.N):
        raise InputError(f"matrix shape {a.shape} does not match trees ({t_rows.N}, {t_cols.N})")
    return CoeffTable(a, layout_of(t_rows), layout_of(t_cols))


# ---------------------------------------------------------------------------
# 2-D tilings


@dataclass
class BestBasis2D:
    """Disjoint tiling stored per (row level, column level) as flat indices row_slot * n + col_slot."""

    rows: GhwtLayout
    cols: GhwtLayout
    index: dict[tuple[int, int], IntArray]
    ell: float = 1.0
    cost: float = float("nan")
    family: str = ""

    def n_coeffs(self) -> int:
        return int(sum(v.size for v in self.index.values()))

    def atom_pairs(self):
        n = self.cols.N
        for (a, b), idx in sorted(self.index.items()):
            for f in idx:
                yield self.rows.atom(a, int(f // n)), self.cols.atom(b, int(f % n))

    @property
    def tiles(self) -> list[tuple[AtomId, AtomId]]:
        return list(self.atom_pairs())

    def passthrough(self) -> tuple[int, int] | None:
        """Level pair holding the root-scaling pair at flat index 0, if the basis has it."""
        for (a, b), idx in self.index.items():
            if (self.rows.tree.bounds[a].size == 2 and self.cols.tree.bounds[b].size == 2
                    and idx.size and idx[0] == 0):
                return a, b
        return None

    @classmethod
    def from_blocks(cls, rows: GhwtLayout, cols: GhwtLayout, blocks, family: str = "") -> "BestBasis2D":
        """Blocks are (row level, row slots, column level, column slots)."""
        acc: dict[tuple[int, int], list[IntArray]] = {}
        for a, rs, b, cs in blocks:
            acc.setdefault((int(a), int(b)), []).append(
                (np.asarray(rs, dtype=np.int64)[:, None] * cols.N + np.asarray(cs, dtype=np.int64)[None, :]).ravel())
        return cls(rows, cols, {k: np.sort(np.concatenate(v)) for k, v in acc.items()}, family=family)

    @classmethod
    def product(cls, rows: GhwtLayout, cols: GhwtLayout, rb, cb, family: str = "") -> "BestBasis2D":
        """Tensor product of two 1-D tilings given as (level, slots) lists."""
        per_r: dict[int, list] = {}
        per_c: dict[int, list] = {}
        for a, rs in rb:
            per_r.setdefault(int(a), []).append(np.asarray(rs, dtype=np.int64))
        for b, cs in cb:
            per_c.setdefault(int(b), []).append(np.asarray(cs, dtype=np.int64))
        index = {}
        for a, rl in per_r.items():
            rs = np.concatenate(rl)
            for b, cl in per_c.items():
                cs = np.concatenate(cl)
                index[(a, b)] = np.sort((rs[:, None] * cols.N + cs[None, :]).ravel())
        return cls(rows, cols, index, family=family)


@dataclass
class CoeffMap:
    basis: BestBasis2D
    values: dict[tuple[int, int], Array]

    def flat(self) -> Array:
        keys = sorted(self.values)
        return np.concatenate([self.values[k] for k in keys]) if keys else np.zeros(0)

    def energy(self) -> float:
        return float(sum(np.sum(v * v) for v in self.values.values()))

    def replace(self, values: dict[tuple[int, int], Array]) -> "CoeffMap":
        return CoeffMap(self.basis, values)

    def items(self):
        """((row atom, column atom), value) pairs in the order of flat()."""
        for pair, v in zip(self.basis.atom_pairs(), self.flat()):
            yield pair, float(v)


def _aggregators(lat: Lattice, N: int):
    """Per level: terminal node ids and the sparse node-by-slot indicator."""
    cache = lat.__dict__.get("_agg")
    if cache is not None:
        return cache
    out = {}
    levels = np.unique(lat.term_level[lat.term_level >= 0])
    for l in levels:
        ids = np.flatnonzero(lat.term_level == l)
        rows = np.concatenate([np.full(lat.term_slots[i].size, k) for k, i in enumerate(ids)])
        cols = np.concatenate([lat.term_slots[i] for i in ids])
        P = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(ids.size, N))
        out[int(l)] = (ids, P)
    lat.__dict__["_agg"] = out
    return out


def _index_from_pairs(lr: Lattice, lc: Lattice, pr: IntArray, pc: IntArray,
                      rows: GhwtLayout, cols: GhwtLayout) -> dict[tuple[int, int], IntArray]:
    """Flat coefficient indices of terminal node pairs, grouped by level pair."""
    ar = _aggregators(lr, rows.N)
    ac = _aggregators(lc, cols.N)
    local_r = np.full(lr.n, -1, dtype=np.int64)
    local_c = np.full(lc.n, -1, dtype=np.int64)
    for ids, _ in ar.values():
        local_r[ids] = np.arange(ids.size)
    for ids, _ in ac.values():
        local_c[ids] = np.arange(ids.size)
    la = lr.term_level[pr]
    lb = lc.term_level[pc]
    index = {}
    for a, b in sorted(set(zip(la.tolist(), lb.tolist()))):
        sel = (la == a) & (lb == b)
        ids_r, P = ar[a]
        ids_c, Q = ac[b]
        K = sp.csr_matrix((np.ones(int(sel.sum())), (local_r[pr[sel]], local_c[pc[sel]])),
                          shape=(ids_r.size, ids_c.size))
        mask = (P.T @ K @ Q).tocoo()
        flat = mask.row.astype(np.int64) * cols.N + mask.col.astype(np.int64)
        index[(a, b)] = np.sort(flat)
    return index


def _terminal_costs(table: CoeffTable, lr: Lattice, lc: Lattice, ell: float) -> Array:
    T = np.full((lr.n + 1, lc.n + 1), np.inf)
    ar = _aggregators(lr, table.rows.N)
    ac = _aggregators(lc, table.cols.N)
    for a, b, X in table.sweep(ar.keys(), ac.keys()):
        E = np.abs(X)
        if ell != 1.0:
            E = E ** ell
        ids_r, P = ar[a]
        ids_c, Q = ac[b]
        agg = (Q @ (P @ E).T).T
        T[np.ix_(ids_r, ids_c)] = agg
    return T


def _dp_2d(T: Array, lr: Lattice, lc: Lattice):
    nR, nC = lr.n, lc.n
    V = np.zeros((nR + 1, nC + 1))
    chR, okR = lr.padded_splits()
    chC, okC = lc.padded_splits()
    SR = chR.shape[1]
    choice = np.zeros((nR, nC), dtype=np.int16)
    rlayers = [np.flatnonzero(lr.height == h) for h in range(int(lr.height.max()) + 1)]
    clayers = [np.flatnonzero(lc.height == h) for h in range(int(lc.height.max()) + 1)]
    for R in rlayers:
        if R.size == 0:
            continue
        for C in clayers:
            if C.size == 0:
                continue
            best = T[np.ix_(R, C)].copy()
            arg = np.zeros(best.shape, dtype=np.int16)
            for s in range(SR):
                ok = okR[R, s]
                if not np.any(ok):
                    continue
                Ri = np.flatnonzero(ok)
                cand = np.zeros((Ri.size, C.size))
                for k in range(chR.shape[2]):
                    cand += V[np.ix_(chR[R[Ri], s, k], C)]
                sub = best[Ri]
                better = cand < sub
                sub[better] = cand[better]
                best[Ri] = sub
                a = arg[Ri]
                a[better] = 1 + s
                arg[Ri] = a
            for s in range(chC.shape[1]):
                ok = okC[C, s]
                if not np.any(ok):
                    continue
                Ci = np.flatnonzero(ok)
                cand = np.zeros((R.size, Ci.size))
                for k in range(chC.shape[2]):
                    cand += V[np.ix_(R, chC[C[Ci], s, k])]
                sub = best[:, Ci]
                better = cand < sub
                sub[better] = cand[better]
                best[:, Ci] = sub
                a = arg[:, Ci]
                a[better] = 1 + SR + s
                arg[:, Ci] = a
            V[np.ix_(R, C)] = best
            choice[np.ix_(R, C)] = arg
    return V, choice, SR


def _traceback(lr: Lattice, lc: Lattice, choice, SR: int) -> tuple[IntArray, IntArray]:
    pr: list[int] = []
    pc: list[int] = []
    stack = [(lr.root, lc.root)]
    while stack:
        r, c = stack.pop()
        code = int(choice[r, c])
        if code == 0:
            pr.append(r)
            pc.append(c)
        elif code <= SR:
            stack.extend((k, c) for k in reversed(lr.splits[r][code - 1]))
        else:
            stack.extend((r, k) for k in reversed(lc.splits[c][code - 1 - SR]))
    return np.asarray(pr, dtype=np.int64), np.asarray(pc, dtype=np.int64)


def best_basis_2d(table: CoeffTable, ell: float = 1.0, family: str = "auto",
                  budget: int = FULL_STATE_BUDGET) -> BestBasis2D:
    """DP over product tiles: undivided tile, row splits, then column splits on ties in that order."""
    _check_ell(ell)
    lr, lc = _choose_families(table.rows, table.cols, family, budget)
    T = _terminal_costs(table, lr, lc, ell)
    V, choice, SR = _dp_2d(T, lr, lc)
    pr, pc = _traceback(lr, lc, choice, SR)
    index = _index_from_pairs(lr, lc, pr, pc, table.rows, table.cols)
    return BestBasis2D(table.rows, table.cols, index, ell, float(V[lr.root, lc.root]), lr.kind)


def random_tiling_2d(rows: GhwtLayout, cols: GhwtLayout, rng: np.random.Generator,
                     family: str = "full") -> BestBasis2D:
    """Uniform random choice among the admissible moves at every product node."""
    lr, lc = lattice_for(rows, family), lattice_for(cols, family)
    pr: list[int] = []
    pc: list[int] = []
    stack = [(lr.root, lc.root)]
    while stack:
        r, c = stack.pop()
        opts = [0] if lr.term_level[r] >= 0 and lc.term_level[c] >= 0 else []
        opts += [1 + s for s in range(len(lr.splits[r]))]
        opts += [1 + len(lr.splits[r]) + s for s in range(len(lc.splits[c]))]
        o = opts[int(rng.integers(len(opts)))]
        if o == 0:
            pr.append(r)
            pc.append(c)
        elif o <= len(lr.splits[r]):
            stack.extend((k, c) for k in lr.splits[r][o - 1])
        else:
            stack.extend((r, k) for k in lc.splits[c][o - 1 - len(lr.splits[r])])
    index = _index_from_pairs(lr, lc, np.asarray(pr, dtype=np.int64), np.asarray(pc, dtype=np.int64), rows, cols)
    return BestBasis2D(rows, cols, index, family=family)


def haar_basis_1d(lay: GhwtLayout) -> list[tuple[int, IntArray]]:
    """Root scaling atom plus the difference atoms of every genuine split."""
    out = [(0, np.array([0]))]
    for (s, e), (_, kids) in lay.ranges().items():
        if len(kids) >= 2:
            out.append(_haar_details(lay, s, e))
    return out


def haar_basis_2d(rows: GhwtLayout, cols: GhwtLayout) -> BestBasis2D:
    return BestBasis2D.product(rows, cols, haar_basis_1d(rows), haar_basis_1d(cols), family="haar")


def finest_basis_2d(rows: GhwtLayout, cols: GhwtLayout) -> BestBasis2D:
    return BestBasis2D.product(rows, cols, [(rows.L - 1, np.arange(rows.N))],
                               [(cols.L - 1, np.arange(cols.N))], family="finest")


def basis_cost(cm: CoeffMap, ell: float = 1.0) -> float:
    return float(sum(np.sum(np.abs(v) ** ell) for v in cm.values.values()))


def transform_2d(m, basis: BestBasis2D) -> CoeffMap:
    a = as_mat(m)
    if a.shape != (basis.rows.N, basis.cols.N):
        raise InputError("matrix shape does not match the basis")
    if basis.n_coeffs() != a.size:
        raise InputError(f"basis covers {basis.n_coeffs()} coefficients, need {a.size}")
    table = CoeffTable(a, basis.rows, basis.cols)
    values: dict[tuple[int, int], Array] = {}
    rl = {k[0] for k in basis.index}
    cl = {k[1] for k in basis.index}
    for ra, cb, X in table.sweep(rl, cl):
        idx = basis.index.get((ra, cb))
        if idx is not None:
            values[(ra, cb)] = np.ascontiguousarray(X).ravel()[idx]
    return CoeffMap(basis, values)


def inverse_2d(cm: CoeffMap, basis: BestBasis2D | None = None) -> Array:
    basis = basis or cm.basis
    if set(cm.values) != set(basis.index):
        raise InputError("coefficient map does not match basis")
    rows, cols = basis.rows, basis.cols
    p, n = rows.N, cols.N
    if basis.n_coeffs() != p * n:
        raise InputError(f"basis covers {basis.n_coeffs()} coefficients, need {p * n}")
    per_row: dict[int, Array] = {}
    for a in sorted({k[0] for k in basis.index}):
        acc = None
        for b in range(cols.L):
            idx = basis.index.get((a, b))
            if idx is not None:
                v = cm.values[(a, b)]
                if v.shape != idx.shape:
                    raise InputError("coefficient block shape mismatch")
                X = np.zeros(p * n)
                X[idx] = v
                X = X.reshape(p, n).T
                acc = X if acc is None else acc + X
            if acc is not None and b < cols.L - 1:
                acc = cols.down(acc, b)
        per_row[a] = acc.T
    acc = None
    for a in range(rows.L):
        if a in per_row:
            acc = per_row[a] if acc is None else acc + per_row[a]
        if acc is not None and a < rows.L - 1:
            acc = rows.down(acc, a)
    out = np.empty((p, n))
    out[np.ix_(rows.tree.leaf_order, cols.tree.leaf_order)] = acc
    return out
