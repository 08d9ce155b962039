"""Exact finite-group arithmetic for stabilizer groups and Z^n x| H.

A stabilizer group is stored as a table of integer point maps (one n x n
matrix per element) closed under multiplication, together with its
multiplication and inverse tables.  Elements are referred to by their index
into that table; index 0 is always the identity.

Conventions
-----------
* C4 / D4 act on Z^2 by the 90-degree rotation ``r = [[0,-1],[1,0]]`` and the
  mirror ``m = [[-1,0],[0,1]]``; the element labelled ``m r^k`` has point map
  ``m @ r^k``.
* S_n acts on Z^n by permuting coordinates, ``sigma . x = (x_sigma(1), ...,
  x_sigma(n))``.  The product ``a * b`` is the element whose point map is
  ``M(a) @ M(b)``, which reads as "apply a, then b" on the letters.  Labels
  are cycle notation of the underlying permutation (1-based).
"""
from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GroupError",
    "SubgroupError",
    "GridAction",
    "StabilizerGroup",
    "SemidirectElement",
    "QuotientSpace",
    "build_stabilizer",
    "compose",
    "inverse",
    "act_on_point",
    "to_matrix",
    "from_matrix",
    "element",
    "identity",
    "cosets",
    "subgroup_from_labels",
    "SUPPORTED_GROUPS",
]

# translation components beyond this are treated as overflow
TRANSLATION_BOUND = 2**62

SUPPORTED_GROUPS = ("C4", "D4", "S2", "S3", "S4", "S5", "S6")


class GroupError(ValueError):
    """Unsupported group or mismatched group context."""


class SubgroupError(GroupError):
    """An element set is not closed under the group law."""


@dataclass(frozen=True)
class GridAction:
    """Linear action of a stabilizer group on Z^n, one integer matrix per element."""

    n: int
    point_maps: np.ndarray  # (order, n, n) int64

    def __post_init__(self):
        maps = np.asarray(self.point_maps, dtype=np.int64)
        maps.setflags(write=False)
        object.__setattr__(self, "point_maps", maps)
        for m in maps:
            det = round(np.linalg.det(m))
            if abs(det) != 1:
                raise GroupError("point map is not unimodular")

    def __hash__(self):
        return hash((self.n, self.point_maps.tobytes()))

    def __eq__(self, other):
        return (
            isinstance(other, GridAction)
            and self.n == other.n
            and np.array_equal(self.point_maps, other.point_maps)
        )


@dataclass(frozen=True, eq=False)
class StabilizerGroup:
    name: str
    order: int
    mul_table: np.ndarray
    inv_table: np.ndarray
    generators: tuple[int, ...]
    element_labels: tuple[str, ...]
    action: GridAction

    @property
    def n(self) -> int:
        return self.action.n

    @property
    def identity(self) -> int:
        return 0

    def mul(self, a: int, b: int) -> int:
        return int(self.mul_table[a, b])

    def inv(self, a: int) -> int:
        return int(self.inv_table[a])

    def point_map(self, a: int) -> np.ndarray:
        return self.action.point_maps[a]

    def index(self, label: str) -> int:
        try:
            return self.element_labels.index(label)
        except ValueError:
            raise GroupError(f"{self.name} has no element {label!r}") from None

    def conjugacy_classes(self) -> list[list[int]]:
        seen: set[int] = set()
        classes = []
        for a in range(self.order):
            if a in seen:
                continue
            cls = sorted({self.mul(self.mul(g, a), self.inv(g)) for g in range(self.order)})
            seen.update(cls)
            classes.append(cls)
        return classes

    def validate(self) -> None:
        """Exhaustive Latin-square, inverse and associativity checks."""
        t = self.mul_table
        full = np.arange(self.order)
        for a in range(self.order):
            if not (np.array_equal(np.sort(t[a]), full) and np.array_equal(np.sort(t[:, a]), full)):
                raise GroupError(f"{self.name}: multiplication table is not a Latin square")
            if t[self.inv_table[a], a] != 0 or t[a, self.inv_table[a]] != 0:
                raise GroupError(f"{self.name}: bad inverse for element {a}")
        # (ab)c == a(bc) for all triples, vectorized over c
        for a in range(self.order):
            lhs = t[t[a]][:, :]  # lhs[b, c] = (ab)c
            rhs = t[a][t]  # rhs[b, c] = a(bc)
            if not np.array_equal(lhs, rhs):
                raise GroupError(f"{self.name}: multiplication is not associative")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "order": self.order,
            "element_labels": list(self.element_labels),
            "mul_table": self.mul_table.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    def __repr__(self):
        return f"StabilizerGroup({self.name}, order={self.order})"


def _close(generators: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Breadth-first closure of a set of integer matrices under multiplication."""
    n = generators[0].shape[0]
    ident = np.eye(n, dtype=np.int64)
    found = {ident.tobytes(): ident}
    order = [ident]
    queue = deque([ident])
    while queue:
        m = queue.popleft()
        for g in generators:
            p = m @ g
            key = p.tobytes()
            if key not in found:
                found[key] = p
                order.append(p)
                queue.append(p)
        if len(order) > 5040:
            raise GroupError("generated group is too large")
    return order


def _perm_matrix(perm: Sequence[int]) -> np.ndarray:
    n = len(perm)
    m = np.zeros((n, n), dtype=np.int64)
    m[np.arange(n), perm] = 1
    return m


def _cycle_label(perm: Sequence[int]) -> str:
    n = len(perm)
    seen = [False] * n
    parts = []
    for start in range(n):
        if seen[start] or perm[start] == start:
            seen[start] = True
            continue
        cyc = []
        j = start
        while not seen[j]:
            seen[j] = True
            cyc.append(str(j + 1))
            j = perm[j]
        parts.append("(" + "".join(cyc) + ")")
    return "".join(parts) or "e"


def _n_cycles(perm: Sequence[int]) -> int:
    seen = set()
    count = 0
    for start in range(len(perm)):
        if start in seen:
            continue
        count += 1
        j = start
        while j not in seen:
            seen.add(j)
            j = perm[j]
    return count


def _rotation_labels(maps: list[np.ndarray], r: np.ndarray, m: np.ndarray | None):
    """Label each matrix as m^a r^k and return (sort key, label) per matrix."""
    words = {}
    mirrors = [np.eye(2, dtype=np.int64)] + ([m] if m is not None else [])
    for a, pre in enumerate(mirrors):
        rk = np.eye(2, dtype=np.int64)
        for k in range(4):
            words[(pre @ rk).tobytes()] = (a, k)
            rk = rk @ r
    out = []
    for mat in maps:
        a, k = words[mat.tobytes()]
        rot = "" if k == 0 else ("r" if k == 1 else f"r^{k}")
        label = ("m" if a else "") + rot
        out.append(((a, k), label or "e"))
    return out


def _assemble(name: str, maps: list[np.ndarray], keys_labels, gen_mats) -> StabilizerGroup:
    order = sorted(range(len(maps)), key=lambda i: keys_labels[i][0])
    maps = [maps[i] for i in order]
    labels = tuple(keys_labels[i][1] for i in order)
    lookup = {m.tobytes(): i for i, m in enumerate(maps)}
    size = len(maps)
    mul = np.empty((size, size), dtype=np.int64)
    for a, b in itertools.product(range(size), repeat=2):
        mul[a, b] = lookup[(maps[a] @ maps[b]).tobytes()]
    inv = np.array([int(np.nonzero(mul[a] == 0)[0][0]) for a in range(size)], dtype=np.int64)
    mul.setflags(write=False)
    inv.setflags(write=False)
    gens = tuple(lookup[g.tobytes()] for g in gen_mats)
    group = StabilizerGroup(
        name=name,
        order=size,
        mul_table=mul,
        inv_table=inv,
        generators=gens,
        element_labels=labels,
        action=GridAction(n=maps[0].shape[0], point_maps=np.stack(maps)),
    )
    group.validate()
    return group


@lru_cache(maxsize=None)
def build_stabilizer(name: str) -> StabilizerGroup:
    """Build one of the supported stabilizer groups (C4, D4, S2, ..., S6).

    Results are cached, so two calls with the same name return the same object.
    """
    r = np.array([[0, -1], [1, 0]], dtype=np.int64)
    m = np.array([[-1, 0], [0, 1]], dtype=np.int64)
    if name == "C4":
        maps = _close([r])
        return _assemble(name, maps, _rotation_labels(maps, r, None), [r])
    if name == "D4":
        maps = _close([r, m])
        return _assemble(name, maps, _rotation_labels(maps, r, m), [r, m])
    if name.startswith("S") and name[1:].isdigit():
        n = int(name[1:])
        if not 2 <= n <= 6:
            raise GroupError(f"S_n is supported for 2 <= n <= 6, got {name}")
        swap = list(range(n))
        swap[0], swap[1] = 1, 0
        cycle = [(i + 1) % n for i in range(n)]
        gens = [_perm_matrix(swap)] + ([_perm_matrix(cycle)] if n > 2 else [])
        maps = _close(gens)
        keys = []
        for mat in maps:
            perm = [int(np.nonzero(row)[0][0]) for row in mat]
            label = _cycle_label(perm)
            # order by cycle length n - #cycles, then label
            keys.append(((n - _n_cycles(perm), label if label != "e" else ""), label))
        return _assemble(name, maps, keys, gens)
    raise GroupError(f"unsupported stabilizer group {name!r}")


@dataclass(frozen=True)
class SemidirectElement:
    """Element (t, h) of Z^n x| H: translate by t after applying h."""

    group: StabilizerGroup = field(compare=False, repr=False)
    translation: tuple[int, ...]
    stab: int

    def __post_init__(self):
        t = tuple(int(v) for v in self.translation)
        if len(t) != self.group.n:
            raise GroupError(f"translation has length {len(t)}, group acts on Z^{self.group.n}")
        if any(abs(v) > TRANSLATION_BOUND for v in t):
            raise OverflowError("translation component out of range")
        object.__setattr__(self, "translation", t)
        if not 0 <= self.stab < self.group.order:
            raise GroupError(f"stabilizer index {self.stab} out of range")

    @property
    def label(self) -> str:
        return f"({self.group.element_labels[self.stab]}, {self.translation})"


def element(group: StabilizerGroup, stab: int | str = 0, translation: Iterable[int] | None = None) -> SemidirectElement:
    if isinstance(stab, str):
        stab = group.index(stab)
    t = tuple(translation) if translation is not None else (0,) * group.n
    return SemidirectElement(group, t, stab)


def identity(group: StabilizerGroup) -> SemidirectElement:
    return element(group)


def _check_context(a: SemidirectElement, b: SemidirectElement) -> None:
    if a.group.name != b.group.name or len(a.translation) != len(b.translation):
        raise GroupError("elements belong to different groups")


def compose(a: SemidirectElement, b: SemidirectElement) -> SemidirectElement:
    """(t1, h1) . (t2, h2) = (t1 + h1 t2, h1 h2)."""
    _check_context(a, b)
    h = a.group.point_map(a.stab)
    t = np.asarray(a.translation, dtype=object) + h.astype(object) @ np.asarray(b.translation, dtype=object)
    return SemidirectElement(a.group, tuple(int(v) for v in t), a.group.mul(a.stab, b.stab))


def inverse(a: SemidirectElement) -> SemidirectElement:
    hinv = a.group.inv(a.stab)
    t = -(a.group.point_map(hinv).astype(object) @ np.asarray(a.translation, dtype=object))
    return SemidirectElement(a.group, tuple(int(v) for v in t), hinv)


def act_on_point(g: SemidirectElement, x: Sequence[int]) -> tuple[int, ...]:
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (g.group.n,):
        raise GroupError(f"point has shape {x.shape}, expected ({g.group.n},)")
    y = g.group.point_map(g.stab) @ x + np.asarray(g.translation, dtype=np.int64)
    return tuple(int(v) for v in y)


def to_matrix(g: SemidirectElement) -> np.ndarray:
    """Homogeneous (n+1) x (n+1) integer matrix [[M(h), t], [0, 1]]."""
    n = g.group.n
    out = np.zeros((n + 1, n + 1), dtype=np.int64)
    out[:n, :n] = g.group.point_map(g.stab)
    out[:n, n] = g.translation
    out[n, n] = 1
    return out


def from_matrix(group: StabilizerGroup, mat: np.ndarray) -> SemidirectElement:
    n = group.n
    mat = np.asarray(mat)
    block = np.ascontiguousarray(mat[:n, :n], dtype=np.int64)
    for i, pm in enumerate(group.action.point_maps):
        if np.array_equal(pm, block):
            return SemidirectElement(group, tuple(int(v) for v in mat[:n, n]), i)
    raise GroupError("matrix is not an element of the group")


@dataclass(frozen=True)
class QuotientSpace:
    """Left cosets gK of a subgroup K, in order of their smallest element."""

    parent: StabilizerGroup = field(repr=False)
    subgroup: frozenset[int]
    cosets: tuple[tuple[int, ...], ...]
    rep_of: tuple[int, ...]  # element index -> coset index

    def __len__(self):
        return len(self.cosets)

    def act(self, g: int, c: int) -> int:
        """Index of the coset g (c-th coset)."""
        return self.rep_of[self.parent.mul(g, self.cosets[c][0])]

    def right_cosets(self) -> list[frozenset[int]]:
        return [frozenset(self.parent.mul(k, g) for k in self.subgroup) for g in range(self.parent.order)]


def _check_subgroup(group: StabilizerGroup, elems: frozenset[int]) -> None:
    if 0 not in elems:
        raise SubgroupError("subgroup must contain the identity")
    for a in elems:
        if group.inv(a) not in elems:
            raise SubgroupError("subgroup is not closed under inverses")
        for b in elems:
            if group.mul(a, b) not in elems:
                raise SubgroupError("subgroup is not closed under multiplication")


def cosets(group: StabilizerGroup, subgroup: Iterable[int]) -> QuotientSpace:
    elems = frozenset(int(k) for k in subgroup)
    if any(not 0 <= k < group.order for k in elems):
        raise SubgroupError("subgroup element index out of range")
    _check_subgroup(group, elems)
    rep_of = [-1] * group.order
    out = []
    for g in range(group.order):
        if rep_of[g] >= 0:
            continue
        coset = tuple(sorted(group.mul(g, k) for k in elems))
        for x in coset:
            rep_of[x] = len(out)
        out.append(coset)
    return QuotientSpace(group, elems, tuple(out), tuple(rep_of))


def subgroup_from_labels(group: StabilizerGroup, labels: Iterable[str]) -> frozenset[int]:
    elems = frozenset(group.index(label) for label in labels)
    _check_subgroup(group, elems)
    return elems
