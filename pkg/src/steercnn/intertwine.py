"""Intertwiner spaces Hom_H(pi, rho) and steerable filter-bank assembly.

An intertwiner is a (dim rho, dim pi) matrix B with rho(h) B = B pi(h) for
every h.  Bases come from the null space of the stacked generator
constraints; the result is validated on the whole group.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .reps import IrrepTable, Representation, TypeVector

__all__ = [
    "IntertwinerError",
    "IntertwinerBasis",
    "intertwiner_basis",
    "dim_hom",
    "parameter_efficiency",
    "project_onto_intertwiners",
    "AssembledFilterBank",
    "assemble",
    "NULL_TOL",
    "CONSTRAINT_TOL",
]

NULL_TOL = 1e-8
CONSTRAINT_TOL = 1e-9


class IntertwinerError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class IntertwinerBasis:
    pi: Representation
    rho: Representation
    basis: np.ndarray  # (dim, dim rho, dim pi), Frobenius-orthonormal

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def __len__(self):
        return self.dim

    def combine(self, coeffs: np.ndarray) -> np.ndarray:
        """sum_k coeffs[k, ...] basis[k] -> (..., dim rho, dim pi)."""
        return np.tensordot(np.moveaxis(coeffs, 0, -1), self.basis, axes=(-1, 0))


_CACHE: dict[tuple[int, int], IntertwinerBasis] = {}


def _constraint_residual(pi: Representation, rho: Representation, b: np.ndarray) -> float:
    """max_h |rho(h) B - B pi(h)| for a stack of B's, relative to max |B|."""
    lhs = np.einsum("hij,kjl->hkil", rho.matrices, b)
    rhs = np.einsum("kij,hjl->hkil", b, pi.matrices)
    scale = max(float(np.abs(b).max(initial=0.0)), 1e-30)
    return float(np.abs(lhs - rhs).max(initial=0.0)) / scale


def intertwiner_basis(pi: Representation, rho: Representation, cache: bool = True) -> IntertwinerBasis:
    """Orthonormal basis of Hom_H(pi, rho) from an SVD of the generator constraints."""
    if pi.group.name != rho.group.name:
        raise IntertwinerError("representations of different groups")
    key = (id(pi), id(rho))
    if cache and key in _CACHE:
        hit = _CACHE[key]
        if hit.pi is pi and hit.rho is rho:
            return hit
    dp, dr = pi.dim, rho.dim
    eye_p, eye_r = np.eye(dp), np.eye(dr)
    # row-major vec(B): vec(rho B) = (rho x I) vec B,  vec(B pi) = (I x pi^T) vec B
    blocks = [
        np.kron(rho.matrices[g], eye_p) - np.kron(eye_r, pi.matrices[g].T)
        for g in pi.group.generators
    ]
    if blocks:
        c = np.concatenate(blocks, axis=0)
        _, sv, vt = np.linalg.svd(c, full_matrices=True)
        top = sv[0] if sv.size and sv[0] > 0 else 1.0
        rank = int(np.sum(sv > NULL_TOL * top))
        null = vt[rank:]
    else:  # trivial group: every matrix intertwines
        null = np.eye(dp * dr)
    basis = null.reshape(-1, dr, dp)
    if basis.shape[0]:
        err = _constraint_residual(pi, rho, basis)
        if err > CONSTRAINT_TOL:
            raise IntertwinerError(f"basis fails the full-group constraint (residual {err:.3g})")
    basis.setflags(write=False)
    out = IntertwinerBasis(pi, rho, basis)
    if cache:
        _CACHE[key] = out
    return out


def dim_hom(type_pi: TypeVector | Sequence[int], type_rho: TypeVector | Sequence[int],
            table: IrrepTable | None = None) -> int:
    """sum_i m_i m'_i, weighted by the endomorphism dimension when a table is given.

    The weight is 1 for absolutely irreducible irreps, so without a table the
    plain sum is returned.
    """
    a, b = list(type_pi), list(type_rho)
    if len(a) != len(b):
        raise IntertwinerError("type vectors are not aligned")
    weights = table.endo_dims if table is not None else (1,) * len(a)
    return int(sum(x * y * e for x, y, e in zip(a, b, weights)))


def parameter_efficiency(pi: Representation, rho: Representation, dim: int | None = None) -> float:
    """mu = dim(pi) dim(rho) / dim Hom_H(pi, rho)."""
    d = intertwiner_basis(pi, rho).dim if dim is None else dim
    if d == 0:
        raise IntertwinerError("efficiency undefined: no nonzero intertwiners")
    return pi.dim * rho.dim / d


def project_onto_intertwiners(pi: Representation, rho: Representation, b: np.ndarray) -> np.ndarray:
    """Group average (1/|H|) sum_h rho(h)^-1 B pi(h)."""
    g = pi.group
    rho_inv = rho.matrices[g.inv_table]
    return np.einsum("hij,jk,hkl->il", rho_inv, b, pi.matrices) / g.order


@dataclass(frozen=True, eq=False)
class AssembledFilterBank:
    kernel: np.ndarray  # (K', K, s, ..., s)
    provenance: str = ""

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def size(self) -> int:
        return self.kernel.shape[2] if self.kernel.ndim > 2 else 1

    def flat(self) -> np.ndarray:
        return self.kernel.reshape(self.kernel.shape[0], -1)


def assemble(
    bases: Sequence[Sequence[IntertwinerBasis]],
    params: Sequence[Sequence[np.ndarray]],
    in_mults: Sequence[int],
    out_mults: Sequence[int],
    n: int,
    s: int,
    provenance: str = "",
) -> AssembledFilterBank:
    """Build the kernel from superblocks psi_ij Phi_ij.

    ``bases[i][j]`` spans Hom(pi_i, rho_j) where pi_i is the filter space of
    input capsule i; ``params[i][j]`` has shape (dim Hom, m_i * n_j) and
    column ``a * n_j + b`` holds the coefficients for input copy a and output
    copy b.  Channels are (capsule, copy, capsule channel) ordered.
    """
    cells = s**n
    in_dims = [bases[i][0].pi.dim // cells for i in range(len(in_mults))]
    out_dims = [bases[0][j].rho.dim for j in range(len(out_mults))]
    k_in = sum(m * d for m, d in zip(in_mults, in_dims))
    k_out = sum(m * d for m, d in zip(out_mults, out_dims))
    kernel = np.zeros((k_out, k_in, cells))
    in_off = np.cumsum([0] + [m * d for m, d in zip(in_mults, in_dims)])
    out_off = np.cumsum([0] + [m * d for m, d in zip(out_mults, out_dims)])
    for i, (mi, di) in enumerate(zip(in_mults, in_dims)):
        for j, (nj, dj) in enumerate(zip(out_mults, out_dims)):
            basis = bases[i][j]
            phi = np.asarray(params[i][j], dtype=np.float64)
            if phi.shape != (basis.dim, mi * nj):
                raise IntertwinerError(
                    f"parameter block ({i},{j}) has shape {phi.shape}, expected {(basis.dim, mi * nj)}"
                )
            if basis.dim == 0:
                continue
            # (dim, m_i, n_j) x (dim, d_j, d_i*cells) -> (n_j, d_j, m_i, d_i, cells)
            coeff = phi.reshape(basis.dim, mi, nj)
            blocks = np.einsum("kab,kpq->bpaq", coeff, basis.basis).reshape(nj * dj, mi * di, cells)
            kernel[out_off[j] : out_off[j + 1], in_off[i] : in_off[i + 1]] += blocks
    return AssembledFilterBank(kernel.reshape((k_out, k_in) + (s,) * n), provenance)
