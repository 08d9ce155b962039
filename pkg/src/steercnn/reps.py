"""Representations of stabilizer groups as explicit matrix families.

Covers regular and quotient (permutation) representations, the hardcoded
irreducible tables for C4, D4, S2 and S3, characters, multiplicities from the
character formula, filter-space representations and isotypic
block-diagonalization.

All irreps here are real.  For C4 the two-dimensional irrep ``E`` is
irreducible over the reals but splits over the complex numbers, so its
endomorphism algebra is two-dimensional; multiplicities divide by
``<chi_E, chi_E> = 2`` and Hom dimensions weight by it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np

from .group import StabilizerGroup, build_stabilizer, cosets

__all__ = [
    "RepresentationError",
    "NoTableError",
    "DecompositionError",
    "Representation",
    "IrrepTable",
    "TypeVector",
    "IsotypicDecomposition",
    "trivial_rep",
    "regular_rep",
    "quotient_rep",
    "direct_sum",
    "irrep_table",
    "character",
    "multiplicity",
    "isotypic_decompose",
    "filter_space_rep",
    "rep_from_type",
    "window_cells",
    "MULTIPLICITY_TOL",
    "DECOMPOSITION_TOL",
]

MULTIPLICITY_TOL = 1e-6
DECOMPOSITION_TOL = 1e-8
HOMOMORPHISM_TOL = 1e-10


class RepresentationError(ValueError):
    """Matrices do not form a representation, or are inconsistent with a table."""


class NoTableError(RepresentationError):
    pass


class DecompositionError(RepresentationError):
    pass


def _is_monomial(m: np.ndarray, signed: bool) -> bool:
    nz = m != 0
    if not (np.all(nz.sum(axis=0) == 1) and np.all(nz.sum(axis=1) == 1)):
        return False
    vals = m[nz]
    return bool(np.all(np.abs(vals) == 1) if signed else np.all(vals == 1))


class Representation:
    """A representation of a stabilizer group in a fixed basis.

    ``matrices[h]`` is the (dim, dim) matrix of element ``h``.  Permutation
    representations may instead be given as ``perms`` with
    ``perms[h][i] = j`` meaning ``rho(h) e_i = e_j``; the dense matrices are
    then built on first access.
    """

    def __init__(
        self,
        group: StabilizerGroup,
        matrices: np.ndarray | None = None,
        *,
        perms: np.ndarray | None = None,
        label: str = "",
        check: bool = True,
    ):
        self.group = group
        self.basis_label = label
        if perms is not None:
            self.perms = np.asarray(perms, dtype=np.int64)
            self.dim = self.perms.shape[1]
            if matrices is not None:
                raise ValueError("give either matrices or perms")
        else:
            mats = np.asarray(matrices, dtype=np.float64)
            if mats.ndim != 3 or mats.shape[0] != group.order or mats.shape[1] != mats.shape[2]:
                raise RepresentationError(f"expected ({group.order}, d, d) matrices, got {mats.shape}")
            mats.setflags(write=False)
            self.__dict__["matrices"] = mats
            self.dim = mats.shape[1]
            self.perms = None
        if check:
            self.check_homomorphism(generators_only=self.dim * group.order > 4096)

    @cached_property
    def matrices(self) -> np.ndarray:
        order, d = self.perms.shape
        mats = np.zeros((order, d, d))
        for h in range(order):
            mats[h, self.perms[h], np.arange(d)] = 1.0
        mats.setflags(write=False)
        return mats

    def __call__(self, h: int) -> np.ndarray:
        return self.matrices[h]

    def __repr__(self):
        return f"Representation({self.group.name}, dim={self.dim}, {self.basis_label!r})"

    @cached_property
    def is_permutation(self) -> bool:
        if self.perms is not None:
            return True
        return all(_is_monomial(m, signed=False) for m in self.matrices)

    @cached_property
    def is_monomial(self) -> bool:
        if self.perms is not None:
            return True
        return all(_is_monomial(m, signed=True) for m in self.matrices)

    @cached_property
    def is_orthogonal(self) -> bool:
        if self.perms is not None:
            return True
        eye = np.eye(self.dim)
        return all(np.abs(m.T @ m - eye).max() <= HOMOMORPHISM_TOL for m in self.matrices)

    @property
    def flags(self) -> dict[str, bool]:
        return {
            "is_permutation": self.is_permutation,
            "is_monomial": self.is_monomial,
            "is_orthogonal": self.is_orthogonal,
        }

    def check_homomorphism(self, generators_only: bool = False) -> None:
        """Raise unless rho(e) = I and rho(ab) = rho(a) rho(b).

        With ``generators_only`` the product law is checked for a in the
        generator set only, which still pins down a homomorphism.
        """
        g = self.group
        if self.perms is not None:
            if not np.array_equal(self.perms[0], np.arange(self.dim)):
                raise RepresentationError("identity does not act trivially")
            firsts = g.generators if generators_only else range(g.order)
            for a in firsts:
                for b in range(g.order):
                    # rho(a) rho(b) e_i = e_{pa[pb[i]]}
                    if not np.array_equal(self.perms[a][self.perms[b]], self.perms[g.mul(a, b)]):
                        raise RepresentationError(f"{self}: not a homomorphism at ({a}, {b})")
            return
        mats = self.matrices
        if np.abs(mats[0] - np.eye(self.dim)).max() > HOMOMORPHISM_TOL:
            raise RepresentationError("identity does not map to the identity matrix")
        firsts = g.generators if generators_only else range(g.order)
        for a in firsts:
            prods = np.einsum("ij,bjk->bik", mats[a], mats)
            target = mats[g.mul_table[a]]
            err = np.abs(prods - target).max()
            if err > HOMOMORPHISM_TOL:
                raise RepresentationError(f"{self}: homomorphism residual {err:.3g} at element {a}")


@dataclass(frozen=True)
class TypeVector:
    """Irrep multiplicities aligned with an IrrepTable."""

    multiplicities: tuple[int, ...]
    labels: tuple[str, ...] = ()

    def __iter__(self):
        return iter(self.multiplicities)

    def __len__(self):
        return len(self.multiplicities)

    def __getitem__(self, i):
        return self.multiplicities[i]

    def __eq__(self, other):
        if isinstance(other, TypeVector):
            return self.multiplicities == other.multiplicities
        return tuple(self.multiplicities) == tuple(other)

    def __hash__(self):
        return hash(self.multiplicities)

    def __add__(self, other: "TypeVector") -> "TypeVector":
        return TypeVector(tuple(a + b for a, b in zip(self, other)), self.labels)

    def dim(self, table: "IrrepTable") -> int:
        return sum(m * rep.dim for m, rep in zip(self.multiplicities, table.irreps))

    def __repr__(self):
        return f"TypeVector{self.multiplicities}"


@dataclass(frozen=True)
class IrrepTable:
    group: StabilizerGroup
    labels: tuple[str, ...]
    irreps: tuple[Representation, ...]
    characters: np.ndarray = field(repr=False)  # (n_irreps, order)
    endo_dims: tuple[int, ...] = ()  # <chi, chi>: 1 for absolutely irreducible

    def __len__(self):
        return len(self.irreps)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise NoTableError(f"{self.group.name} has no irrep {label!r}") from None

    def __getitem__(self, label: str) -> Representation:
        return self.irreps[self.index(label)]


@lru_cache(maxsize=None)
def trivial_rep(group: StabilizerGroup) -> Representation:
    return Representation(group, perms=np.zeros((group.order, 1), dtype=np.int64), label="trivial")


@lru_cache(maxsize=None)
def regular_rep(group: StabilizerGroup) -> Representation:
    """Left-regular representation: rho(g) e_h = e_{gh}."""
    return Representation(group, perms=np.array(group.mul_table), label="regular")


def quotient_rep(group: StabilizerGroup, subgroup) -> Representation:
    """Permutation representation on left cosets: rho(g) e_{hK} = e_{ghK}."""
    q = cosets(group, subgroup)
    perms = np.array([[q.act(g, c) for c in range(len(q))] for g in range(group.order)])
    labels = ",".join(group.element_labels[k] for k in sorted(q.subgroup))
    return Representation(group, perms=perms, label=f"quotient[{labels}]")


def direct_sum(*reps: Representation) -> Representation:
    group = reps[0].group
    if any(r.group is not group for r in reps):
        raise RepresentationError("direct sum of representations of different groups")
    if all(r.perms is not None for r in reps):
        offs = np.cumsum([0] + [r.dim for r in reps])
        perms = np.concatenate([r.perms + o for r, o in zip(reps, offs)], axis=1)
        return Representation(group, perms=perms, label="+".join(r.basis_label for r in reps), check=False)
    dim = sum(r.dim for r in reps)
    mats = np.zeros((group.order, dim, dim))
    o = 0
    for r in reps:
        mats[:, o : o + r.dim, o : o + r.dim] = r.matrices
        o += r.dim
    return Representation(group, mats, label="+".join(r.basis_label for r in reps), check=False)


def character(rep: Representation) -> np.ndarray:
    if rep.perms is not None:
        return (rep.perms == np.arange(rep.dim)).sum(axis=1).astype(np.float64)
    return np.trace(rep.matrices, axis1=1, axis2=2).copy()


# Hardcoded irreducible matrices keyed by element label.
_D4_TABLE = {
    "A1": {h: [[1]] for h in ("e", "r", "r^2", "r^3", "m", "mr", "mr^2", "mr^3")},
    "A2": {h: [[1 if i < 4 else -1]] for i, h in enumerate(("e", "r", "r^2", "r^3", "m", "mr", "mr^2", "mr^3"))},
    "B1": dict(zip(("e", "r", "r^2", "r^3", "m", "mr", "mr^2", "mr^3"), ([[1]], [[-1]], [[1]], [[-1]], [[1]], [[-1]], [[1]], [[-1]]))),
    "B2": dict(zip(("e", "r", "r^2", "r^3", "m", "mr", "mr^2", "mr^3"), ([[1]], [[-1]], [[1]], [[-1]], [[-1]], [[1]], [[-1]], [[1]]))),
    "E": {
        "e": [[1, 0], [0, 1]],
        "r": [[0, -1], [1, 0]],
        "r^2": [[-1, 0], [0, -1]],
        "r^3": [[0, 1], [-1, 0]],
        "m": [[-1, 0], [0, 1]],
        "mr": [[0, 1], [1, 0]],
        "mr^2": [[1, 0], [0, -1]],
        "mr^3": [[0, -1], [-1, 0]],
    },
}

_C4_TABLE = {
    "A": {h: [[1]] for h in ("e", "r", "r^2", "r^3")},
    "B": dict(zip(("e", "r", "r^2", "r^3"), ([[1]], [[-1]], [[1]], [[-1]]))),
    "E": {k: _D4_TABLE["E"][k] for k in ("e", "r", "r^2", "r^3")},
}

_S2_TABLE = {
    "id": {"e": [[1]], "(12)": [[1]]},
    "sgn": {"e": [[1]], "(12)": [[-1]]},
}

# The (13) and (123) entries of V_s are derived from (12), (23) and (132) by
# the group law; the remaining entries are the standard printed ones.
_S3_TABLE = {
    "id": {h: [[1]] for h in ("e", "(12)", "(13)", "(23)", "(123)", "(132)")},
    "sgn": dict(zip(("e", "(12)", "(13)", "(23)", "(123)", "(132)"), ([[1]], [[-1]], [[-1]], [[-1]], [[1]], [[1]]))),
    "V_s": {
        "e": [[1, 0], [0, 1]],
        "(12)": [[1, 0], [-1, -1]],
        "(13)": [[-1, -1], [0, 1]],
        "(23)": [[0, 1], [1, 0]],
        "(123)": [[-1, -1], [1, 0]],
        "(132)": [[0, 1], [-1, -1]],
    },
}

_TABLES = {"C4": _C4_TABLE, "D4": _D4_TABLE, "S2": _S2_TABLE, "S3": _S3_TABLE}


@lru_cache(maxsize=None)
def _irrep_table(name: str) -> IrrepTable:
    group = build_stabilizer(name)
    raw = _TABLES[name]
    labels, irreps = [], []
    for label, entries in raw.items():
        mats = np.array([entries[h] for h in group.element_labels], dtype=np.float64)
        # constraints from generators, then full validation: any failure is a table bug
        rep = Representation(group, mats, label=label, check=False)
        rep.check_homomorphism(generators_only=True)
        rep.check_homomorphism()
        labels.append(label)
        irreps.append(rep)
    chars = np.array([character(r) for r in irreps])
    endo = tuple(int(round(float(c @ c) / group.order)) for c in chars)
    table = IrrepTable(group, tuple(labels), tuple(irreps), chars, endo)
    gram = chars @ chars.T / group.order
    if np.abs(gram - np.diag(endo)).max() > 1e-12:
        raise RepresentationError(f"{name}: character table is not orthogonal")
    if sum(r.dim**2 / e for r, e in zip(irreps, endo)) != group.order:
        raise RepresentationError(f"{name}: irreps do not exhaust the regular representation")
    return table


def irrep_table(group: StabilizerGroup | str) -> IrrepTable:
    name = group if isinstance(group, str) else group.name
    if name not in _TABLES:
        raise NoTableError(f"no irrep table for {name}; regular and quotient capsules remain available")
    return _irrep_table(name)


def multiplicity(rep: Representation, table: IrrepTable) -> TypeVector:
    """m_i = <chi_rep, chi_i> / <chi_i, chi_i>, with <a, b> = mean_h a(h) b(h)."""
    if rep.group.name != table.group.name:
        raise RepresentationError("representation and table belong to different groups")
    order = table.group.order
    raw = table.characters @ character(rep) / order
    raw = raw / np.array(table.endo_dims)
    rounded = np.rint(raw)
    resid = np.abs(raw - rounded).max()
    if resid >= MULTIPLICITY_TOL or np.any(rounded < 0):
        raise RepresentationError(f"non-integer multiplicities {raw} (residual {resid:.3g})")
    return TypeVector(tuple(int(v) for v in rounded), table.labels)


def rep_from_type(table: IrrepTable, mults: Sequence[int]) -> Representation:
    """Block-diagonal representation with the given irrep multiplicities."""
    parts = [irr for irr, m in zip(table.irreps, mults) for _ in range(m)]
    if not parts:
        raise RepresentationError("empty type")
    rep = direct_sum(*parts)
    rep.basis_label = "type" + str(tuple(mults))
    return rep


def window_cells(n: int, s: int) -> np.ndarray:
    """Integer coordinates of an s^n window centered at the origin, C order."""
    if s % 2 != 1:
        raise ValueError(f"window size must be odd, got {s}")
    r = (s - 1) // 2
    axes = [np.arange(-r, r + 1)] * n
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)


@lru_cache(maxsize=None)
def _cell_perms(group: StabilizerGroup, s: int) -> np.ndarray:
    """perm[h, c] = index of cell h . x_c within the window."""
    cells = window_cells(group.n, s)
    r = (s - 1) // 2
    strides = s ** np.arange(group.n - 1, -1, -1)
    out = np.empty((group.order, len(cells)), dtype=np.int64)
    for h in range(group.order):
        moved = cells @ group.point_map(h).T
        out[h] = (moved + r) @ strides
    return out


@lru_cache(maxsize=256)
def filter_space_rep(
    group: StabilizerGroup, s: int, input_fiber: Representation | None = None
) -> Representation:
    """Representation on filters of spatial size s^n with the given input fiber.

    Filters are flattened channel-major, cell-minor.  ``[pi(h) psi](x) =
    rho_in(h) psi(h^{-1} x)``; with a trivial fiber this is the plain
    rotation/permutation of filters.
    """
    if s % 2 != 1:
        raise ValueError(f"filter window must be odd, got {s}")
    fiber = input_fiber if input_fiber is not None else trivial_rep(group)
    if fiber.group is not group:
        raise RepresentationError("fiber representation belongs to another group")
    cp = _cell_perms(group, s)
    ncell = cp.shape[1]
    if fiber.perms is not None:
        # rho(h) e_(k, x) = e_(rho(h)k, h x)
        perms = (fiber.perms[:, :, None] * ncell + cp[:, None, :]).reshape(group.order, -1)
        label = f"filter{s}^{group.n}[{fiber.basis_label}]"
        return Representation(group, perms=perms, label=label, check=False)
    d = fiber.dim
    mats = np.zeros((group.order, d * ncell, d * ncell))
    for h in range(group.order):
        cell_mat = np.zeros((ncell, ncell))
        cell_mat[cp[h], np.arange(ncell)] = 1.0
        mats[h] = np.kron(fiber.matrices[h], cell_mat)
    return Representation(group, mats, label=f"filter{s}^{group.n}[{fiber.basis_label}]", check=False)


@dataclass(frozen=True)
class IsotypicDecomposition:
    change_of_basis: np.ndarray  # A, with A rho(h) A^-1 block diagonal
    basis: np.ndarray  # A^-1; columns are the adapted basis vectors
    block_layout: tuple[tuple[int, int, int], ...]  # (irrep index, copy, offset)
    type: TypeVector

    def blocks(self, table: IrrepTable, h: int) -> np.ndarray:
        d = self.basis.shape[0]
        out = np.zeros((d, d))
        for i, _, off in self.block_layout:
            k = table.irreps[i].dim
            out[off : off + k, off : off + k] = table.irreps[i].matrices[h]
        return out


def _echelon_rows(mat: np.ndarray, tol: float) -> np.ndarray:
    """Reduced row echelon form of the row space of ``mat`` (rank rows)."""
    a = mat.copy()
    rows, cols = a.shape
    r = 0
    for c in range(cols):
        if r == rows:
            break
        p = r + int(np.argmax(np.abs(a[r:, c])))
        if abs(a[p, c]) <= tol:
            continue
        a[[r, p]] = a[[p, r]]
        a[r] /= a[r, c]
        others = np.arange(rows) != r
        a[others] -= np.outer(a[others, c], a[r])
        r += 1
    return a[:r]


def _aligned_copy(rep: Representation, irrep: Representation, v: np.ndarray) -> np.ndarray:
    """Intertwiner X with rep(h) X = X irrep(h) and first column P_11 v.

    X = (d/|H|) sum_h rep(h) v e_1^T irrep(h^-1).
    """
    g = rep.group
    inv_first_rows = irrep.matrices[g.inv_table][:, 0, :]  # (order, d): row 0 of irrep(h^-1)
    moved = np.einsum("hij,j->hi", rep.matrices, v)  # (order, dim)
    return irrep.dim / g.order * moved.T @ inv_first_rows


def isotypic_decompose(
    rep: Representation, table: IrrepTable, seed: int = 0, max_attempts: int = 8
) -> IsotypicDecomposition:
    """Change of basis A with A rep(h) A^-1 = block_diag of table matrices.

    Within each isotypic component the candidate vectors are the reduced
    row-echelon basis of the image of the matrix-unit projector P_11, so copies
    are ordered by their leading coordinate; random vectors are only used if
    those candidates fail to span.
    """
    mults = multiplicity(rep, table)
    g = rep.group
    columns: list[np.ndarray] = []
    layout = []
    offset = 0
    rng = np.random.default_rng(seed)
    for i, (irr, m) in enumerate(zip(table.irreps, mults)):
        if m == 0:
            continue
        d = irr.dim
        inv_rows = irr.matrices[g.inv_table][:, 0, 0]
        p11 = d / g.order * np.einsum("h,hij->ij", inv_rows, rep.matrices)
        candidates = list(_echelon_rows(p11.T, 1e-9))
        copies: list[np.ndarray] = []
        attempts = 0
        while len(copies) < m:
            if not candidates:
                attempts += 1
                if attempts > max_attempts:
                    raise DecompositionError(f"could not span the {table.labels[i]} component")
                candidates = [p11 @ rng.standard_normal(rep.dim) for _ in range(m)]
            x = _aligned_copy(rep, irr, candidates.pop(0))
            trial = np.concatenate(columns + copies + [x], axis=1) if (columns or copies) else x
            if np.linalg.matrix_rank(trial, tol=1e-8 * max(1.0, np.abs(trial).max())) == trial.shape[1]:
                col = x[:, 0]
                lead = col[np.flatnonzero(np.abs(col) > 1e-9 * np.abs(col).max())[0]]
                copies.append(x * np.sign(lead) / np.abs(x).max())
        for c, x in enumerate(copies):
            layout.append((i, c, offset))
            offset += d
        columns.extend(copies)
    basis = np.concatenate(columns, axis=1)
    a = np.linalg.inv(basis)
    dec = IsotypicDecomposition(a, basis, tuple(layout), mults)
    for h in range(g.order):
        err = np.abs(a @ rep.matrices[h] @ basis - dec.blocks(table, h)).max()
        if err > DECOMPOSITION_TOL:
            raise DecompositionError(f"block residual {err:.3g} at element {g.element_labels[h]}")
    return dec
