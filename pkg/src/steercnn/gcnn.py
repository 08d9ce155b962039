"""Group convolution on Z^n x| H and its bridge to regular-capsule steerable nets.

A G-feature map stores f(t, h) as ``data[..., k, h, x]``.  The group acts by
left translation, [T_g f](g') = f(g^-1 g'), which moves cells by g^-1 and
permutes the stabilizer axis by left multiplication.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .group import QuotientSpace, SemidirectElement, StabilizerGroup, build_stabilizer, cosets
from .reps import window_cells
from .steer import (
    BOUNDARIES,
    Capsule,
    FeatureMap,
    Fiber,
    LayerSpec,
    NetworkSpec,
    NonlinSpec,
    SpecError,
    SteerableNetwork,
    _batched,
    conv_array,
    transport,
)

__all__ = [
    "GFeatureMap",
    "ExpandedFilterBank",
    "transform_g",
    "expand_filter_bank",
    "gconv_first",
    "gconv_higher",
    "group_pool",
    "coset_pool",
    "to_steerable",
    "from_steerable",
    "GCNN",
    "steerable_twin",
]


@dataclass(frozen=True, eq=False)
class GFeatureMap:
    """data: (*batch, K, |H|, W, ..., W); with ``quotient`` set the second
    axis runs over the cosets H/K instead of H."""

    data: np.ndarray
    group: StabilizerGroup
    boundary: str = "cyclic"
    quotient: QuotientSpace | None = None

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise SpecError(f"boundary must be one of {BOUNDARIES}")
        n = self.group.n
        axis_len = len(self.quotient) if self.quotient is not None else self.group.order
        if self.data.ndim < n + 2 or self.data.shape[self.data.ndim - n - 1] != axis_len:
            raise SpecError(f"G-feature map needs a stabilizer axis of length {axis_len}, got shape {self.data.shape}")

    @property
    def n(self) -> int:
        return self.group.n

    @property
    def channels(self) -> int:
        return self.data.shape[self.data.ndim - self.n - 2]

    @property
    def window(self) -> int:
        return self.data.shape[-1]


def _stab_perm(f: GFeatureMap, h: int) -> np.ndarray:
    """src[a'] = index read by output slot a' under h: h^-1 a' (or h^-1 coset)."""
    inv = f.group.inv(h)
    if f.quotient is None:
        return np.asarray(f.group.mul_table[inv])
    return np.array([f.quotient.act(inv, c) for c in range(len(f.quotient))])


def transform_g(g: SemidirectElement, f: GFeatureMap) -> GFeatureMap:
    """[T_g f](x, a) = f(g^-1 (x, a)) = f(h^-1 (x - t), h^-1 a)."""
    if g.group.name != f.group.name:
        raise SpecError("element and feature map belong to different groups")
    moved, _ = transport(g, f.data, f.n, f.boundary)
    axis = f.data.ndim - f.n - 1
    return GFeatureMap(np.take(moved, _stab_perm(f, g.stab), axis=axis), f.group, f.boundary, f.quotient)


@dataclass(frozen=True, eq=False)
class ExpandedFilterBank:
    F: np.ndarray  # (K', K, s..s) first layer, (K', K, |H|, s..s) higher layers
    F_plus: np.ndarray  # (K', |H|, K, s..s) or (K', |H|, K, |H|, s..s)
    first: bool

    def kernel(self) -> np.ndarray:
        """Planar kernel (K'|H|, K or K|H|, s..s) for an ordinary convolution."""
        fp = self.F_plus
        n_sp = fp.ndim - (3 if self.first else 4)
        sp = fp.shape[fp.ndim - n_sp :]
        out_ch = fp.shape[0] * fp.shape[1]
        return fp.reshape((out_ch, -1) + sp)


def _cell_moves(group: StabilizerGroup, s: int) -> np.ndarray:
    """moves[h, c] = cell index of h^-1 y_c."""
    cells = window_cells(group.n, s)
    r = (s - 1) // 2
    strides = s ** np.arange(group.n - 1, -1, -1)
    out = np.empty((group.order, len(cells)), dtype=np.int64)
    for h in range(group.order):
        src = cells @ group.point_map(group.inv(h)).T + r
        if np.any((src < 0) | (src >= s)):
            raise SpecError("stabilizer moves filter cells outside the window")
        out[h] = src @ strides
    return out


def expand_filter_bank(F: np.ndarray, group: StabilizerGroup, first: bool) -> ExpandedFilterBank:
    """F+[k', h, k, (a,) u] = F[k', k, (h^-1 a,) h^-1 u]."""
    F = np.asarray(F, dtype=np.float64)
    n = group.n
    s = F.shape[-1]
    if F.shape[F.ndim - n :] != (s,) * n:
        raise SpecError(f"filter spatial shape {F.shape[F.ndim - n:]} is not an s^{n} cube")
    moves = _cell_moves(group, s)
    order = group.order
    if first:
        if F.ndim != n + 2:
            raise SpecError("first-layer filters need shape (K', K, s..s)")
        flat = F.reshape(F.shape[0], F.shape[1], -1)
        plus = np.stack([flat[:, :, moves[h]] for h in range(order)], axis=1)
    else:
        if F.ndim != n + 3 or F.shape[2] != order:
            raise SpecError(f"higher-layer filters need shape (K', K, {order}, s..s)")
        flat = F.reshape(F.shape[0], F.shape[1], order, -1)
        plus = np.stack(
            [flat[:, :, group.mul_table[group.inv(h)]][..., moves[h]] for h in range(order)], axis=1
        )
    return ExpandedFilterBank(F, plus.reshape(plus.shape[:-1] + (s,) * n), first)


def gconv_first(f: FeatureMap, psi: np.ndarray) -> GFeatureMap:
    """[f * psi](x, h) = sum_y f(y) psi(h^-1 (y - x))."""
    group = f.fiber.capsules[0].group
    bank = expand_filter_bank(psi, group, first=True)
    x, lead = _batched(f.data, f.n)
    out = conv_array(x, bank.kernel(), f.n, f.boundary)
    out = out.reshape((out.shape[0], psi.shape[0], group.order) + out.shape[2:])
    return GFeatureMap(out.reshape(lead + out.shape[1:]), group, f.boundary)


def gconv_higher(f: GFeatureMap, psi: np.ndarray) -> GFeatureMap:
    """[f * psi](g) = sum_{g'} f(g') psi(g^-1 g'), psi supported on an s^n window."""
    if f.quotient is not None:
        raise SpecError("group convolution needs a map on G, not on a quotient")
    if psi.shape[1] != f.channels:
        raise SpecError(f"filter expects {psi.shape[1]} channels, map has {f.channels}")
    bank = expand_filter_bank(psi, f.group, first=False)
    n, order = f.n, f.group.order
    x = f.data.reshape((-1, f.channels * order) + f.data.shape[f.data.ndim - n :])
    out = conv_array(x, bank.kernel(), n, f.boundary)
    lead = f.data.shape[: f.data.ndim - n - 2]
    return GFeatureMap(out.reshape(lead + (psi.shape[0], order) + out.shape[2:]), f.group, f.boundary)


def group_pool(f: GFeatureMap, U: Sequence[tuple[int, Sequence[int]]]) -> GFeatureMap:
    """[P f](g) = max_{u in U} f(g u), U given as (stabilizer index, offset) pairs."""
    if f.quotient is not None:
        raise SpecError("group pooling needs a map on G")
    if not U:
        raise SpecError("pooling neighbourhood is empty")
    n, order = f.n, f.group.order
    w = f.window
    c = (w - 1) // 2
    axis = f.data.ndim - n - 1
    pts = window_cells(n, w)
    strides = w ** np.arange(n - 1, -1, -1)
    flat = f.data.reshape(f.data.shape[: axis + 1] + (-1,))
    out = np.full(flat.shape, -np.inf)
    for h in range(order):
        m = f.group.point_map(h)
        for a, off in U:
            # g u = (x + M(h) off, h a)
            dst = pts + np.asarray(off) @ m.T + c
            inside = np.all((dst >= 0) & (dst < w), axis=1)
            if f.boundary == "zero" and not inside.all():
                vals = np.where(inside, flat[..., f.group.mul(h, a), :][..., np.mod(dst, w) @ strides], 0.0)
            else:
                vals = flat[..., f.group.mul(h, a), :][..., np.mod(dst, w) @ strides]
            out[..., h, :] = np.maximum(out[..., h, :], vals)
    return GFeatureMap(out.reshape(f.data.shape), f.group, f.boundary)


def coset_pool(f: GFeatureMap, subgroup) -> GFeatureMap | FeatureMap:
    """Max over each coset hK of the stabilizer axis.

    For K = H the result is an ordinary feature map on Z^n with trivial fibers.
    """
    if f.quotient is not None:
        raise SpecError("map is already pooled to a quotient")
    q = cosets(f.group, subgroup)
    axis = f.data.ndim - f.n - 1
    out = np.stack([np.take(f.data, list(cs), axis=axis).max(axis=axis) for cs in q.cosets], axis=axis)
    if len(q) == 1:
        data = np.squeeze(out, axis=axis)
        k = data.shape[data.ndim - f.n - 1]
        return FeatureMap(data, Fiber.trivial(f.group, k), f.n, f.boundary)
    return GFeatureMap(out, f.group, f.boundary, q)


def to_steerable(f: GFeatureMap) -> FeatureMap:
    """Fold the stabilizer axis into regular capsules: channel k*|H| + a."""
    n = f.n
    lead = f.data.shape[: f.data.ndim - n - 2]
    k, m = f.data.shape[f.data.ndim - n - 2 : f.data.ndim - n]
    data = f.data.reshape(lead + (k * m,) + f.data.shape[f.data.ndim - n :])
    cap = Capsule.regular(f.group) if f.quotient is None else Capsule.quotient(f.group, f.quotient.subgroup)
    return FeatureMap(data, Fiber.of((cap, k)), n, f.boundary)


def from_steerable(f: FeatureMap) -> GFeatureMap:
    caps = f.fiber.capsules
    if len(caps) != 1 or caps[0].kind != "regular":
        raise SpecError(f"only a pure regular fiber maps back to G, got {f.fiber}")
    group = caps[0].group
    n = f.n
    lead = f.data.shape[: f.data.ndim - n - 1]
    data = f.data.reshape(lead + (f.fiber.n_copies, group.order) + f.data.shape[f.data.ndim - n :])
    return GFeatureMap(data, group, f.boundary)


class GCNN:
    """gconv_first, then gconv_higher layers, with an optional relu between."""

    def __init__(self, group: StabilizerGroup | str, filters: Sequence[np.ndarray], nonlin: str = "relu",
                 boundary: str = "cyclic"):
        self.group = build_stabilizer(group) if isinstance(group, str) else group
        self.filters = [np.asarray(f, dtype=np.float64) for f in filters]
        if nonlin not in ("none", "relu"):
            raise SpecError("G-CNN layers support 'none' or 'relu'")
        self.nonlin = nonlin
        self.boundary = boundary

    @classmethod
    def random(cls, group, channels: Sequence[int], s: int = 3, seed: int = 0, **kw) -> "GCNN":
        g = build_stabilizer(group) if isinstance(group, str) else group
        rng = np.random.default_rng(seed)
        sp = (s,) * g.n
        filters = [rng.standard_normal((channels[1], channels[0]) + sp)]
        for a, b in zip(channels[1:-1], channels[2:]):
            filters.append(rng.standard_normal((b, a, g.order) + sp))
        return cls(g, filters, **kw)

    def __call__(self, x: np.ndarray) -> GFeatureMap:
        f = FeatureMap(np.asarray(x, dtype=np.float64), Fiber.trivial(self.group, self.filters[0].shape[1]),
                       self.group.n, self.boundary)
        out = gconv_first(f, self.filters[0])
        for psi in self.filters[1:]:
            if self.nonlin == "relu":
                out = GFeatureMap(np.maximum(out.data, 0.0), out.group, out.boundary)
            out = gconv_higher(out, psi)
        return out


def steerable_twin(net: GCNN, n_classes: int = 1) -> SteerableNetwork:
    """Regular-capsule steerable network computing the same features as ``net``.

    Each expanded G-CNN kernel lies in the intertwiner space, so its
    coordinates in the orthonormal intertwiner basis are the twin's Phi.
    """
    g = net.group
    fiber = Fiber.trivial(g, net.filters[0].shape[1])
    layers = []
    for psi in net.filters:
        out = Fiber.of((Capsule.regular(g), psi.shape[0]))
        nl = net.nonlin if len(layers) < len(net.filters) - 1 else "none"
        layers.append(LayerSpec(fiber, out, psi.shape[-1], NonlinSpec(nl), bias=False))
        fiber = out
    spec = NetworkSpec(g.name, tuple(layers), n_classes, net.filters[0].shape[1], net.boundary)
    twin = SteerableNetwork(spec, seed=0)
    for l, psi in enumerate(net.filters):
        kernel = expand_filter_bank(psi, g, first=(l == 0)).kernel()
        for i, row in enumerate(twin.convs[l].kernel_grad(kernel)):
            for j, phi in enumerate(row):
                twin.params[f"layer{l}.phi.{i}.{j}"] = phi
    return twin
