"""Steerable feature maps, layers, nonlinearities and pooling.

Arrays are laid out as ``(batch, channels, *spatial)`` with an odd window W
per spatial axis; cell index ``i`` holds point ``x = i - (W - 1) / 2``.  With
the cyclic boundary the window is the finite group Z_W^n and every transform
below is an exact group action, so equivariance holds to rounding error.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .group import (
    SemidirectElement,
    StabilizerGroup,
    build_stabilizer,
    cosets,
    subgroup_from_labels,
)
from .intertwine import AssembledFilterBank, IntertwinerBasis, assemble, intertwiner_basis
from .reps import (
    Representation,
    direct_sum,
    filter_space_rep,
    irrep_table,
    quotient_rep,
    regular_rep,
    trivial_rep,
    window_cells,
)

__all__ = [
    "SpecError",
    "AdmissibilityError",
    "Capsule",
    "Fiber",
    "FeatureMap",
    "NonlinSpec",
    "PoolSpec",
    "LayerSpec",
    "NetworkSpec",
    "SteerableNetwork",
    "transform_input",
    "transform_induced",
    "transport",
    "fiber_act",
    "convolve",
    "conv_array",
    "conv_array_backward",
    "apply_nonlinearity",
    "relu",
    "crelu",
    "norm_relu",
    "fiber_max_pool",
    "quotient_pool",
    "forward",
    "backward",
    "NORM_EPS",
]

NORM_EPS = 1e-12
BOUNDARIES = ("cyclic", "zero")


class SpecError(ValueError):
    """Malformed or inconsistent layer/network description."""


class AdmissibilityError(ValueError):
    """Nonlinearity or pooling does not commute with the capsule's action."""


# ---------------------------------------------------------------- capsules


@lru_cache(maxsize=None)
def _capsule_rep(kind: str, group_name: str, param: tuple) -> Representation:
    g = build_stabilizer(group_name)
    if kind == "trivial":
        return trivial_rep(g)
    if kind == "regular":
        return regular_rep(g)
    if kind == "quotient":
        return quotient_rep(g, param)
    if kind == "irrep":
        return irrep_table(g)[param[0]]
    if kind == "crelu":
        return _crelu_rep(param[0].rep)
    raise SpecError(f"unknown capsule kind {kind!r}")


def _crelu_rep(base: Representation) -> Representation:
    """Post-activation capsule of CReLU for a monomial representation.

    Channel c becomes the pair (2c, 2c+1) = (relu(x_c), relu(-x_c)).  An entry
    +1 at (i, j) routes pair j to pair i; an entry -1 routes it with the two
    members swapped.
    """
    if not base.is_monomial:
        raise AdmissibilityError("crelu needs a monomial capsule")
    d = base.dim
    perms = np.empty((base.group.order, 2 * d), dtype=np.int64)
    for h, m in enumerate(base.matrices):
        for j in range(d):
            i = int(np.flatnonzero(m[:, j])[0])
            if m[i, j] > 0:
                perms[h, 2 * j], perms[h, 2 * j + 1] = 2 * i, 2 * i + 1
            else:
                perms[h, 2 * j], perms[h, 2 * j + 1] = 2 * i + 1, 2 * i
    return Representation(base.group, perms=perms, label=f"crelu({base.basis_label})")


@dataclass(frozen=True)
class Capsule:
    """A stabilizer representation with a fixed basis."""

    kind: str
    group_name: str
    param: tuple = ()

    @classmethod
    def trivial(cls, group: StabilizerGroup | str) -> "Capsule":
        return cls("trivial", _gname(group))

    @classmethod
    def regular(cls, group: StabilizerGroup | str) -> "Capsule":
        return cls("regular", _gname(group))

    @classmethod
    def quotient(cls, group: StabilizerGroup | str, subgroup: Iterable[int] | Iterable[str]) -> "Capsule":
        g = build_stabilizer(_gname(group))
        elems = list(subgroup)
        if elems and isinstance(elems[0], str):
            elems = subgroup_from_labels(g, elems)
        cosets(g, elems)  # validates
        return cls("quotient", g.name, tuple(sorted(int(e) for e in elems)))

    @classmethod
    def irrep(cls, group: StabilizerGroup | str, label: str) -> "Capsule":
        name = _gname(group)
        irrep_table(name).index(label)
        return cls("irrep", name, (label,))

    @classmethod
    def crelu(cls, base: "Capsule") -> "Capsule":
        if not base.rep.is_monomial:
            raise AdmissibilityError(f"crelu needs a monomial capsule, got {base}")
        return cls("crelu", base.group_name, (base,))

    @property
    def group(self) -> StabilizerGroup:
        return build_stabilizer(self.group_name)

    @property
    def rep(self) -> Representation:
        return _capsule_rep(self.kind, self.group_name, self.param)

    @property
    def dim(self) -> int:
        return self.rep.dim

    def __str__(self):
        if self.kind == "quotient":
            labels = self.group.element_labels
            return "quotient:" + ",".join(labels[k] for k in self.param)
        if self.kind == "irrep":
            return f"irrep:{self.param[0]}"
        if self.kind == "crelu":
            return f"crelu:{self.param[0]}"
        return self.kind

    @classmethod
    def parse(cls, group: StabilizerGroup | str, text: str) -> "Capsule":
        text = text.strip()
        head, _, rest = text.partition(":")
        if head == "trivial" and not rest:
            return cls.trivial(group)
        if head == "regular" and not rest:
            return cls.regular(group)
        if head == "irrep" and rest:
            return cls.irrep(group, rest)
        if head == "quotient" and rest:
            return cls.quotient(group, [s.strip() for s in rest.split(",")])
        if head == "crelu" and rest:
            return cls.crelu(cls.parse(group, rest))
        raise SpecError(f"cannot parse capsule {text!r}")


def _gname(group) -> str:
    return group if isinstance(group, str) else group.name


@dataclass(frozen=True)
class Fiber:
    """Ordered capsule types with multiplicities; adjacent equal capsules merge."""

    items: tuple[tuple[Capsule, int], ...]

    def __post_init__(self):
        merged: list[list] = []
        for cap, m in self.items:
            if m < 0:
                raise SpecError("negative multiplicity")
            if m == 0:
                continue
            if merged and merged[-1][0] == cap:
                merged[-1][1] += m
            else:
                merged.append([cap, int(m)])
        names = {c.group_name for c, _ in merged}
        if len(names) > 1:
            raise SpecError(f"fiber mixes groups {sorted(names)}")
        object.__setattr__(self, "items", tuple((c, m) for c, m in merged))

    @classmethod
    def of(cls, *items: tuple[Capsule, int]) -> "Fiber":
        return cls(tuple(items))

    @classmethod
    def trivial(cls, group, k: int) -> "Fiber":
        return cls(((Capsule.trivial(group), k),))

    @property
    def dim(self) -> int:
        return sum(c.dim * m for c, m in self.items)

    @property
    def n_copies(self) -> int:
        return sum(m for _, m in self.items)

    @property
    def capsules(self) -> tuple[Capsule, ...]:
        return tuple(c for c, _ in self.items)

    @property
    def mults(self) -> tuple[int, ...]:
        return tuple(m for _, m in self.items)

    def slices(self) -> list[tuple[Capsule, int, int]]:
        """(capsule, multiplicity, channel offset) per entry."""
        out, off = [], 0
        for c, m in self.items:
            out.append((c, m, off))
            off += c.dim * m
        return out

    @property
    def rep(self) -> Representation:
        return _fiber_rep(self)

    def all(self, flag: str) -> bool:
        return all(getattr(c.rep, flag) for c in self.capsules)

    def to_json(self) -> list[dict]:
        return [{"kind": str(c), "mult": m} for c, m in self.items]

    @classmethod
    def from_json(cls, group, items: Sequence[dict]) -> "Fiber":
        try:
            return cls(tuple((Capsule.parse(group, it["kind"]), int(it["mult"])) for it in items))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"bad fiber entry: {exc}") from None

    def __str__(self):
        return " + ".join(f"{m}*{c}" for c, m in self.items) or "0"


@lru_cache(maxsize=None)
def _fiber_rep(fiber: Fiber) -> Representation:
    parts = [c.rep for c, m in fiber.items for _ in range(m)]
    if not parts:
        raise SpecError("empty fiber")
    return direct_sum(*parts)


# ---------------------------------------------------------------- feature maps


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense feature map: data has shape (*batch, K, W, ..., W)."""

    data: np.ndarray
    fiber: Fiber
    n: int
    boundary: str = "cyclic"
    approximate: bool = False

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise SpecError(f"boundary must be one of {BOUNDARIES}")
        sp = self.data.shape[self.data.ndim - self.n :]
        if len(set(sp)) != 1 or sp[0] % 2 != 1:
            raise SpecError(f"spatial shape {sp} is not an odd cube")
        if self.data.shape[self.data.ndim - self.n - 1] != self.fiber.dim:
            raise SpecError(
                f"{self.data.shape[self.data.ndim - self.n - 1]} channels do not match fiber dim {self.fiber.dim}"
            )

    @property
    def window(self) -> int:
        return self.data.shape[-1]

    @property
    def channels(self) -> int:
        return self.fiber.dim

    def with_data(self, data: np.ndarray, fiber: Fiber | None = None, approximate: bool | None = None) -> "FeatureMap":
        return FeatureMap(
            data,
            self.fiber if fiber is None else fiber,
            self.n,
            self.boundary,
            self.approximate if approximate is None else approximate,
        )


def _batched(data: np.ndarray, n: int) -> tuple[np.ndarray, tuple]:
    lead = data.shape[: data.ndim - n - 1]
    return data.reshape((-1,) + data.shape[data.ndim - n - 1 :]), lead


def _transport_index(g: SemidirectElement, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat source cell for each output cell under x -> g^-1 x, and in-window mask."""
    grp = g.group
    n = grp.n
    c = (w - 1) // 2
    pts = window_cells(n, w)
    minv = grp.point_map(grp.inv(g.stab))
    src = (pts - np.asarray(g.translation)) @ minv.T + c
    inside = np.all((src >= 0) & (src < w), axis=1)
    src = np.mod(src, w)
    strides = w ** np.arange(n - 1, -1, -1)
    return src @ strides, inside


def transport(g: SemidirectElement, data: np.ndarray, n: int, boundary: str = "cyclic") -> tuple[np.ndarray, bool]:
    """out(x) = data(g^-1 x) over the last n axes; returns (out, lost_support)."""
    w = data.shape[-1]
    idx, inside = _transport_index(g, w)
    flat = data.reshape(data.shape[: data.ndim - n] + (-1,))
    out = flat[..., idx]
    lost = False
    if boundary == "zero":
        out = np.where(inside, out, 0.0)
        kept = np.zeros(flat.shape[-1], dtype=bool)
        kept[idx[inside]] = True
        lost = bool(np.any(flat[..., ~kept] != 0))
    return out.reshape(data.shape), lost


def fiber_act(fiber: Fiber, h: int, data: np.ndarray, n: int) -> np.ndarray:
    """Apply the block-diagonal fiber representation at h to every cell."""
    rep = fiber.rep
    axis = data.ndim - n - 1
    if rep.perms is not None:
        # (rho v)_{p[i]} = v_i
        inv = np.argsort(rep.perms[h])
        return np.take(data, inv, axis=axis)
    return np.moveaxis(np.tensordot(rep.matrices[h], data, axes=(1, axis)), 0, axis)


def transform_input(g: SemidirectElement, f: FeatureMap) -> FeatureMap:
    """[pi_0(g) f](x) = f(g^-1 x): spatial transport only."""
    out, lost = transport(g, f.data, f.n, f.boundary)
    return f.with_data(out, approximate=f.approximate or lost)


def transform_induced(g: SemidirectElement, f: FeatureMap) -> FeatureMap:
    """[pi'(t h) f](x) = rho(h) f((t h)^-1 x) with rho the fiber representation."""
    if g.group.name != f.fiber.capsules[0].group_name:
        raise SpecError("element and fiber belong to different groups")
    out, lost = transport(g, f.data, f.n, f.boundary)
    return f.with_data(fiber_act(f.fiber, g.stab, out, f.n), approximate=f.approximate or lost)


# ---------------------------------------------------------------- convolution


def _shift(a: np.ndarray, offset: Sequence[int], n: int, boundary: str) -> np.ndarray:
    """b[x] = a[x + offset] over the last n axes."""
    axes = tuple(range(a.ndim - n, a.ndim))
    if boundary == "cyclic":
        return np.roll(a, tuple(-int(o) for o in offset), axis=axes)
    out = np.zeros_like(a)
    src, dst = [slice(None)] * a.ndim, [slice(None)] * a.ndim
    w = a.shape[-1]
    for ax, o in zip(axes, offset):
        o = int(o)
        if abs(o) >= w:
            return out
        src[ax] = slice(max(o, 0), w + min(o, 0))
        dst[ax] = slice(max(-o, 0), w - max(o, 0))
    out[tuple(dst)] = a[tuple(src)]
    return out


def _patches(x: np.ndarray, s: int, n: int, boundary: str) -> np.ndarray:
    """(B, K, *sp) -> (B, K, s^n, *sp) with [..., c, x] = x[x + y_c]."""
    return np.stack([_shift(x, y, n, boundary) for y in window_cells(n, s)], axis=2)


def conv_array(x: np.ndarray, kernel: np.ndarray, n: int, boundary: str = "cyclic") -> np.ndarray:
    """out[b, o, x] = sum_{k, y} x[b, k, x + y] kernel[o, k, y]; kernel (K', K, s, ..., s)."""
    s = kernel.shape[-1]
    if s > x.shape[-1]:
        raise SpecError(f"filter size {s} exceeds window {x.shape[-1]}")
    if kernel.shape[1] != x.shape[1]:
        raise SpecError(f"kernel expects {kernel.shape[1]} input channels, got {x.shape[1]}")
    kflat = kernel.reshape(kernel.shape[0], kernel.shape[1], -1)
    p = _patches(x, s, n, boundary)
    return np.tensordot(p, kflat, axes=([1, 2], [1, 2])).transpose((0, n + 1) + tuple(range(1, n + 1)))


def conv_array_backward(
    x: np.ndarray, kernel: np.ndarray, grad: np.ndarray, n: int, boundary: str = "cyclic"
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (d input, d kernel) of conv_array given d output."""
    s = kernel.shape[-1]
    cells = window_cells(n, s)
    kflat = kernel.reshape(kernel.shape[0], kernel.shape[1], -1)
    p = _patches(x, s, n, boundary)
    sp_axes = list(range(2, 2 + n))
    dk = np.tensordot(grad, p, axes=([0] + sp_axes, [0] + [a + 1 for a in sp_axes]))  # (O, K, cells)
    dx = np.zeros_like(x)
    for c, y in enumerate(cells):
        back = np.tensordot(grad, kflat[:, :, c], axes=([1], [0]))  # (B, *sp, K)
        dx += _shift(np.moveaxis(back, -1, 1), -y, n, boundary)
    return dx, dk.reshape(kernel.shape)


def convolve(f: FeatureMap, bank: AssembledFilterBank | np.ndarray, out_fiber: Fiber | None = None) -> FeatureMap:
    kernel = bank.kernel if isinstance(bank, AssembledFilterBank) else np.asarray(bank, dtype=np.float64)
    if kernel.shape[1] != f.channels:
        raise SpecError(f"bank has {kernel.shape[1]} input channels, feature map has {f.channels}")
    x, lead = _batched(f.data, f.n)
    out = conv_array(x, kernel, f.n, f.boundary)
    fiber = out_fiber if out_fiber is not None else Fiber.trivial(f.fiber.capsules[0].group_name, kernel.shape[0])
    if fiber.dim != kernel.shape[0]:
        raise SpecError("output fiber does not match the bank")
    return FeatureMap(out.reshape(lead + out.shape[1:]), fiber, f.n, f.boundary, f.approximate)


# ---------------------------------------------------------------- nonlinearities


@dataclass(frozen=True)
class NonlinSpec:
    kind: str = "none"  # none | relu | crelu | norm_relu

    KINDS = ("none", "relu", "crelu", "norm_relu")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise SpecError(f"unknown nonlinearity {self.kind!r}")

    def check(self, fiber: Fiber) -> None:
        need = {"relu": "is_permutation", "crelu": "is_monomial", "norm_relu": "is_orthogonal"}.get(self.kind)
        if need is None:
            return
        for c in fiber.capsules:
            if not getattr(c.rep, need):
                raise AdmissibilityError(f"{self.kind} is not admissible for capsule {c} (not {need[3:]})")
            # quotient capsules feed only permutation-compatible nonlinearities
            if self.kind == "norm_relu" and c.kind == "quotient":
                raise AdmissibilityError(f"norm_relu is not supported on quotient capsule {c}")

    def out_fiber(self, fiber: Fiber) -> Fiber:
        self.check(fiber)
        if self.kind == "crelu":
            return Fiber(tuple((Capsule.crelu(c), m) for c, m in fiber.items))
        return fiber


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def crelu(x: np.ndarray, axis: int = 1) -> np.ndarray:
    """Channel c -> (relu(x_c), relu(-x_c)) interleaved at (2c, 2c+1)."""
    both = np.stack([np.maximum(x, 0.0), np.maximum(-x, 0.0)], axis=axis + 1)
    shape = list(x.shape)
    shape[axis] *= 2
    return both.reshape(shape)


def _copy_view(x: np.ndarray, cap: Capsule, m: int, off: int) -> np.ndarray:
    """(B, K, *sp) slice of one fiber entry as (B, m, d, *sp)."""
    d = cap.dim
    return x[:, off : off + m * d].reshape((x.shape[0], m, d) + x.shape[2:])


def norm_relu(x: np.ndarray, fiber: Fiber, bias: np.ndarray, n: int) -> np.ndarray:
    """v -> max(|v| - b, 0) v / |v| per capsule copy; zero where |v| <= 1e-12."""
    out = np.empty_like(x)
    k = 0
    for cap, m, off in fiber.slices():
        v = _copy_view(x, cap, m, off)
        r = np.sqrt((v * v).sum(axis=2, keepdims=True))
        b = bias[k : k + m].reshape((1, m, 1) + (1,) * n)
        safe = np.where(r > NORM_EPS, r, 1.0)
        scale = np.where(r > NORM_EPS, np.maximum(r - b, 0.0) / safe, 0.0)
        out[:, off : off + m * cap.dim] = (v * scale).reshape(x.shape[0], -1, *x.shape[2:])
        k += m
    return out


def _norm_relu_backward(x, fiber, bias, grad, n):
    dx = np.zeros_like(x)
    db = np.zeros_like(bias)
    k = 0
    for cap, m, off in fiber.slices():
        d = cap.dim
        v = _copy_view(x, cap, m, off)
        g = _copy_view(grad, cap, m, off)
        r = np.sqrt((v * v).sum(axis=2, keepdims=True))
        b = bias[k : k + m].reshape((1, m, 1) + (1,) * n)
        active = (r > NORM_EPS) & (r > b)
        safe = np.where(r > NORM_EPS, r, 1.0)
        vg = (v * g).sum(axis=2, keepdims=True)
        # d out/dv = (1 - b/r) I + b v v^T / r^3 ;  d out/db = -v / r
        dv = np.where(active, (1.0 - b / safe) * g + b * v * vg / safe**3, 0.0)
        dx[:, off : off + m * d] = dv.reshape(x.shape[0], -1, *x.shape[2:])
        dbk = np.where(active, -vg / safe, 0.0)
        db[k : k + m] = dbk.sum(axis=tuple(i for i in range(dbk.ndim) if i != 1))
        k += m
    return dx, db


def apply_nonlinearity(f: FeatureMap, spec: NonlinSpec, bias: np.ndarray | None = None) -> tuple[FeatureMap, Fiber]:
    out_fiber = spec.out_fiber(f.fiber)
    x, lead = _batched(f.data, f.n)
    if spec.kind == "none":
        y = x
    elif spec.kind == "relu":
        y = relu(x)
    elif spec.kind == "crelu":
        y = crelu(x)
    else:
        b = np.zeros(f.fiber.n_copies) if bias is None else np.asarray(bias, dtype=np.float64)
        if b.shape != (f.fiber.n_copies,):
            raise SpecError(f"norm_relu needs {f.fiber.n_copies} biases, got {b.shape}")
        y = norm_relu(x, f.fiber, b, f.n)
    return f.with_data(y.reshape(lead + y.shape[1:]), out_fiber), out_fiber


# ---------------------------------------------------------------- pooling


@dataclass(frozen=True)
class PoolSpec:
    kind: str = "none"  # none | fiber | quotient
    subgroup: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("none", "fiber", "quotient"):
            raise SpecError(f"unknown pooling {self.kind!r}")
        if self.kind == "quotient" and not self.subgroup:
            raise SpecError("quotient pooling needs a subgroup")

    @classmethod
    def parse(cls, text: str | None) -> "PoolSpec":
        if text in (None, "", "none"):
            return cls()
        if text == "fiber":
            return cls("fiber")
        head, _, rest = text.partition(":")
        if head == "quotient" and rest:
            return cls("quotient", tuple(s.strip() for s in rest.split(",")))
        raise SpecError(f"cannot parse pooling {text!r}")

    def __str__(self):
        return f"quotient:{','.join(self.subgroup)}" if self.kind == "quotient" else self.kind

    def out_fiber(self, fiber: Fiber) -> Fiber:
        if self.kind == "none":
            return fiber
        if self.kind == "fiber":
            return _fiber_pool_plan(fiber, None)[0]
        return _quotient_pool_plan(fiber, self.subgroup, None)[0]


def _selection(fiber: Fiber, select) -> set[int]:
    return set(range(len(fiber.items))) if select is None else set(select)


def _fiber_pool_plan(fiber: Fiber, select):
    chosen = _selection(fiber, select)
    items = []
    for i, (c, m) in enumerate(fiber.items):
        if i in chosen:
            if not c.rep.is_permutation:
                raise AdmissibilityError(f"max pooling needs a permutation capsule, got {c}")
            items.append((Capsule.trivial(c.group_name), m))
        else:
            items.append((c, m))
    return Fiber(tuple(items)), chosen


def _quotient_pool_plan(fiber: Fiber, subgroup, select):
    chosen = _selection(fiber, select)
    items, groups = [], {}
    for i, (c, m) in enumerate(fiber.items):
        if i in chosen:
            if c.kind != "regular":
                raise AdmissibilityError(f"quotient pooling needs regular capsules, got {c}")
            qcap = Capsule.quotient(c.group_name, subgroup)
            q = cosets(c.group, qcap.param)
            groups[i] = [sorted(cs) for cs in q.cosets]
            items.append((Capsule.trivial(c.group_name) if len(q) == 1 else qcap, m))
        else:
            items.append((c, m))
    return Fiber(tuple(items)), groups


def _grouped_max(x: np.ndarray, fiber: Fiber, groups_of) -> tuple[np.ndarray, list]:
    """Max over channel groups per capsule copy; returns output and argmax routes."""
    outs, routes = [], []
    for i, (cap, m, off) in enumerate(fiber.slices()):
        v = _copy_view(x, cap, m, off)
        groups = groups_of(i, cap)
        if groups is None:
            outs.append(x[:, off : off + m * cap.dim])
            routes.append(None)
            continue
        pooled, arg = [], []
        for grp in groups:
            sub = v[:, :, grp]
            a = np.argmax(sub, axis=2)  # first index on ties
            pooled.append(np.take_along_axis(sub, a[:, :, None], axis=2)[:, :, 0])
            arg.append(np.asarray(grp)[a])
        p = np.stack(pooled, axis=2)
        outs.append(p.reshape(x.shape[0], -1, *x.shape[2:]))
        routes.append((off, m, cap.dim, np.stack(arg, axis=2)))
    return np.concatenate(outs, axis=1), routes


def _grouped_max_backward(x_shape, fiber: Fiber, routes, grad: np.ndarray) -> np.ndarray:
    dx = np.zeros(x_shape)
    o = 0
    for (cap, m, off), route in zip(fiber.slices(), routes):
        if route is None:
            w = m * cap.dim
            dx[:, off : off + w] += grad[:, o : o + w]
            o += w
            continue
        _, _, d, arg = route  # arg: (B, m, n_groups, *sp) absolute channel in capsule
        ng = arg.shape[2]
        g = grad[:, o : o + m * ng].reshape(arg.shape)
        view = np.zeros((x_shape[0], m, d) + tuple(x_shape[2:]))
        for k in range(ng):
            idx = arg[:, :, k : k + 1]
            cur = np.take_along_axis(view, idx, axis=2)
            np.put_along_axis(view, idx, cur + g[:, :, k : k + 1], axis=2)
        dx[:, off : off + m * d] += view.reshape(x_shape[0], -1, *x_shape[2:])
        o += m * ng
    return dx


def fiber_max_pool(f: FeatureMap, select: Iterable[int] | None = None) -> FeatureMap:
    """Collapse each selected capsule copy to its maximum (a trivial channel)."""
    out_fiber, chosen = _fiber_pool_plan(f.fiber, select)
    x, lead = _batched(f.data, f.n)
    y, _ = _grouped_max(x, f.fiber, lambda i, c: [list(range(c.dim))] if i in chosen else None)
    return f.with_data(y.reshape(lead + y.shape[1:]), out_fiber)


def quotient_pool(f: FeatureMap, subgroup, select: Iterable[int] | None = None) -> FeatureMap:
    """Max over each coset hK of the channels of a regular capsule."""
    if subgroup and not isinstance(next(iter(subgroup)), str):
        g = f.fiber.capsules[0].group
        subgroup = tuple(g.element_labels[k] for k in sorted(subgroup))
    out_fiber, groups = _quotient_pool_plan(f.fiber, tuple(subgroup), select)
    x, lead = _batched(f.data, f.n)
    y, _ = _grouped_max(x, f.fiber, lambda i, c: groups.get(i))
    return f.with_data(y.reshape(lead + y.shape[1:]), out_fiber)


# ---------------------------------------------------------------- networks


@dataclass(frozen=True)
class LayerSpec:
    in_fiber: Fiber
    out_fiber: Fiber
    window: int = 3
    nonlin: NonlinSpec = field(default_factory=NonlinSpec)
    pool: PoolSpec = field(default_factory=PoolSpec)
    bias: bool = True

    def post_fiber(self) -> Fiber:
        return self.pool.out_fiber(self.nonlin.out_fiber(self.out_fiber))

    def to_json(self, group: str) -> dict:
        return {
            "group": group,
            "window": self.window,
            "in_fiber": self.in_fiber.to_json(),
            "out_fiber": self.out_fiber.to_json(),
            "nonlin": self.nonlin.kind,
            "pool": str(self.pool),
            "bias": self.bias,
        }


@dataclass(frozen=True)
class NetworkSpec:
    group: str
    layers: tuple[LayerSpec, ...]
    n_classes: int = 2
    in_channels: int = 1
    boundary: str = "cyclic"

    def __post_init__(self):
        g = build_stabilizer(self.group)
        if self.boundary not in BOUNDARIES:
            raise SpecError(f"boundary must be one of {BOUNDARIES}")
        fiber = Fiber.trivial(g, self.in_channels)
        for l, layer in enumerate(self.layers):
            if layer.window % 2 != 1:
                raise SpecError(f"layer {l}: window must be odd")
            if layer.in_fiber != fiber:
                raise SpecError(f"layer {l}: input fiber {layer.in_fiber} does not chain from {fiber}")
            fiber = layer.post_fiber()
        for c in fiber.capsules:
            if not (c.rep.is_permutation or c.rep.is_orthogonal):
                raise AdmissibilityError(f"head cannot pool capsule {c} to an invariant")
        if self.n_classes < 1:
            raise SpecError("need at least one class")

    @property
    def n(self) -> int:
        return build_stabilizer(self.group).n

    @property
    def final_fiber(self) -> Fiber:
        return self.layers[-1].post_fiber() if self.layers else Fiber.trivial(self.group, self.in_channels)

    def to_json(self) -> dict:
        return {
            "group": self.group,
            "n_classes": self.n_classes,
            "in_channels": self.in_channels,
            "boundary": self.boundary,
            "layers": [layer.to_json(self.group) for layer in self.layers],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    @classmethod
    def from_json(cls, obj: dict) -> "NetworkSpec":
        if not isinstance(obj, dict):
            raise SpecError("network spec must be a JSON object")
        try:
            group = obj["group"]
            layers = []
            for l, raw in enumerate(obj.get("layers", [])):
                if raw.get("group", group) != group:
                    raise SpecError(f"layer {l}: group {raw['group']} differs from network group {group}")
                layers.append(
                    LayerSpec(
                        Fiber.from_json(group, raw["in_fiber"]),
                        Fiber.from_json(group, raw["out_fiber"]),
                        int(raw.get("window", 3)),
                        NonlinSpec(raw.get("nonlin", "none") or "none"),
                        PoolSpec.parse(raw.get("pool")),
                        bool(raw.get("bias", True)),
                    )
                )
            return cls(
                group,
                tuple(layers),
                int(obj.get("n_classes", 2)),
                int(obj.get("in_channels", 1)),
                obj.get("boundary", "cyclic"),
            )
        except KeyError as exc:
            raise SpecError(f"missing field {exc}") from None


class _Conv:
    """One steerable convolution: intertwiner bases per capsule pair."""

    def __init__(self, group: StabilizerGroup, spec: LayerSpec):
        self.spec = spec
        self.group = group
        s = spec.window
        self.filter_reps = [filter_space_rep(group, s, c.rep) for c in spec.in_fiber.capsules]
        self.bases: list[list[IntertwinerBasis]] = [
            [intertwiner_basis(fr, c.rep) for c in spec.out_fiber.capsules] for fr in self.filter_reps
        ]
        self.bias_slots = [
            (off, m, c.dim) for c, m, off in spec.out_fiber.slices() if spec.bias and c.rep.is_permutation
        ]

    def phi_shapes(self) -> list[tuple[int, int, tuple[int, int]]]:
        ins, outs = self.spec.in_fiber.mults, self.spec.out_fiber.mults
        return [
            (i, j, (self.bases[i][j].dim, ins[i] * outs[j]))
            for i in range(len(ins))
            for j in range(len(outs))
        ]

    @property
    def n_bias(self) -> int:
        return sum(m for _, m, _ in self.bias_slots)

    def kernel(self, phis) -> AssembledFilterBank:
        return assemble(
            self.bases, phis, self.spec.in_fiber.mults, self.spec.out_fiber.mults, self.group.n, self.spec.window
        )

    def kernel_grad(self, dk: np.ndarray) -> list[list[np.ndarray]]:
        """Adjoint of assemble: d kernel -> d Phi_ij."""
        ins, outs = self.spec.in_fiber, self.spec.out_fiber
        cells = self.spec.window**self.group.n
        dk = dk.reshape(dk.shape[0], dk.shape[1], cells)
        grads = []
        for i, (ci, mi, ioff) in enumerate(ins.slices()):
            row = []
            for j, (cj, nj, ooff) in enumerate(outs.slices()):
                basis = self.bases[i][j]
                block = dk[ooff : ooff + nj * cj.dim, ioff : ioff + mi * ci.dim]
                block = block.reshape(nj, cj.dim, mi, ci.dim * cells)
                g = np.einsum("bpaq,kpq->kab", block, basis.basis) if basis.dim else np.zeros((0, mi, nj))
                row.append(g.reshape(basis.dim, mi * nj))
            grads.append(row)
        return grads

    def add_bias(self, y: np.ndarray, bias: np.ndarray) -> np.ndarray:
        k = 0
        for off, m, d in self.bias_slots:
            b = np.repeat(bias[k : k + m], d).reshape((1, m * d) + (1,) * (y.ndim - 2))
            y[:, off : off + m * d] += b
            k += m
        return y

    def bias_grad(self, g: np.ndarray) -> np.ndarray:
        out = []
        for off, m, d in self.bias_slots:
            blk = g[:, off : off + m * d].reshape((g.shape[0], m, d) + g.shape[2:])
            out.append(blk.sum(axis=tuple(i for i in range(blk.ndim) if i != 1)))
        return np.concatenate(out) if out else np.zeros(0)


class SteerableNetwork:
    """Equivariant conv layers followed by an invariant head.

    Parameters live in a flat dict: ``layer{l}.phi.{i}.{j}``, ``layer{l}.bias``,
    ``layer{l}.norm_bias``, ``head.W`` and ``head.b``.
    """

    def __init__(
        self,
        spec: NetworkSpec,
        params: dict[str, np.ndarray] | None = None,
        seed: int = 0,
        kernel_overrides: dict[int, np.ndarray] | None = None,
    ):
        self.spec = spec
        self.group = build_stabilizer(spec.group)
        self.n = self.group.n
        self.convs = [_Conv(self.group, layer) for layer in spec.layers]
        self.params = self.init_params(seed) if params is None else {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self._check_params()
        # explicit kernels replace the assembled ones (used to inject faults)
        self.kernel_overrides = {int(k): np.asarray(v, dtype=np.float64) for k, v in (kernel_overrides or {}).items()}
        for l, k in self.kernel_overrides.items():
            want = self.convs[l].kernel(self.phis(l)).kernel.shape
            if k.shape != want:
                raise SpecError(f"kernel override for layer {l} has shape {k.shape}, expected {want}")

    # -- parameters

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for l, (conv, layer) in enumerate(zip(self.convs, self.spec.layers)):
            for i, j, shp in conv.phi_shapes():
                shapes[f"layer{l}.phi.{i}.{j}"] = shp
            if conv.n_bias:
                shapes[f"layer{l}.bias"] = (conv.n_bias,)
            if layer.nonlin.kind == "norm_relu":
                shapes[f"layer{l}.norm_bias"] = (layer.out_fiber.n_copies,)
        shapes["head.W"] = (self.spec.n_classes, self.spec.final_fiber.n_copies)
        shapes["head.b"] = (self.spec.n_classes,)
        return shapes

    def init_params(self, seed: int = 0) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        params = {}
        for key, shp in self.param_shapes().items():
            if ".phi." in key:
                l, i = int(key.split(".")[0][5:]), int(key.split(".")[2])
                fan_in = max(shp[0] * self.spec.layers[l].in_fiber.mults[i], 1)
                a = np.sqrt(3.0 / fan_in)
                params[key] = rng.uniform(-a, a, size=shp)
            elif key.endswith("norm_bias"):
                params[key] = np.full(shp, 0.1)
            else:
                params[key] = np.zeros(shp)
        return params

    def _check_params(self):
        want = self.param_shapes()
        if set(want) != set(self.params):
            missing, extra = set(want) - set(self.params), set(self.params) - set(want)
            raise SpecError(f"parameter keys mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, shp in want.items():
            if self.params[k].shape != shp:
                raise SpecError(f"{k} has shape {self.params[k].shape}, expected {shp}")

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def phis(self, l: int) -> list[list[np.ndarray]]:
        layer = self.spec.layers[l]
        return [
            [self.params[f"layer{l}.phi.{i}.{j}"] for j in range(len(layer.out_fiber.items))]
            for i in range(len(layer.in_fiber.items))
        ]

    def kernel(self, l: int) -> AssembledFilterBank:
        if l in self.kernel_overrides:
            return AssembledFilterBank(self.kernel_overrides[l], "override")
        return self.convs[l].kernel(self.phis(l))

    # -- forward / backward

    def features(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """Run the equivariant layers on (B, K, *sp); returns the final feature array."""
        boundary = self.spec.boundary
        for l, (conv, layer) in enumerate(zip(self.convs, self.spec.layers)):
            kernel = self.kernel(l).kernel
            y = conv_array(x, kernel, self.n, boundary)
            if conv.n_bias:
                y = conv.add_bias(y, self.params[f"layer{l}.bias"])
            entry = {"x": x, "kernel": kernel, "y": y}
            kind = layer.nonlin.kind
            if kind == "relu":
                z = relu(y)
            elif kind == "crelu":
                z = crelu(y)
            elif kind == "norm_relu":
                z = norm_relu(y, layer.out_fiber, self.params[f"layer{l}.norm_bias"], self.n)
            else:
                z = y
            entry["z"] = z
            act_fiber = layer.nonlin.out_fiber(layer.out_fiber)
            if layer.pool.kind == "fiber":
                chosen = _fiber_pool_plan(act_fiber, None)[1]
                x, routes = _grouped_max(z, act_fiber, lambda i, c: [list(range(c.dim))] if i in chosen else None)
                entry["routes"] = routes
            elif layer.pool.kind == "quotient":
                groups = _quotient_pool_plan(act_fiber, layer.pool.subgroup, None)[1]
                x, routes = _grouped_max(z, act_fiber, lambda i, c: groups.get(i))
                entry["routes"] = routes
            else:
                x = z
            entry["act_fiber"] = act_fiber
            if cache is not None:
                cache.append(entry)
        return x

    def _invariants(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Per capsule copy: max (permutation) or norm (orthogonal), then spatial sum."""
        fiber = self.spec.final_fiber
        parts, info = [], []
        for cap, m, off in fiber.slices():
            v = _copy_view(x, cap, m, off)
            if cap.rep.is_permutation:
                a = np.argmax(v, axis=2)
                val = np.take_along_axis(v, a[:, :, None], axis=2)[:, :, 0]
                info.append(("max", a))
            else:
                val = np.sqrt((v * v).sum(axis=2))
                info.append(("norm", val))
            parts.append(val.reshape(val.shape[0], m, -1).sum(axis=2))
        return np.concatenate(parts, axis=1), info

    def forward(self, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
        """Class scores (B, n_classes) for inputs (B, in_channels, *sp)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == self.n + 1
        if single:
            x = x[None]
        if x.shape[1] != self.spec.in_channels:
            raise SpecError(f"expected {self.spec.in_channels} input channels, got {x.shape[1]}")
        layers: list = []
        feats = self.features(x, layers)
        z, info = self._invariants(feats)
        scores = z @ self.params["head.W"].T + self.params["head.b"]
        if cache is not None:
            cache.update(layers=layers, feats=feats, z=z, info=info, single=single)
        return scores[0] if single else scores

    def backward(self, cache: dict, dscores: np.ndarray) -> dict[str, np.ndarray]:
        """Reverse-mode gradients of sum(dscores * scores) for every parameter."""
        dscores = np.asarray(dscores, dtype=np.float64)
        if cache["single"]:
            dscores = dscores[None]
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        grads["head.W"] = dscores.T @ cache["z"]
        grads["head.b"] = dscores.sum(axis=0)
        dz = dscores @ self.params["head.W"]
        feats = cache["feats"]
        dx = np.zeros_like(feats)
        fiber = self.spec.final_fiber
        k = 0
        for (cap, m, off), (mode, aux) in zip(fiber.slices(), cache["info"]):
            d = cap.dim
            g = dz[:, k : k + m].reshape((dz.shape[0], m) + (1,) * self.n)
            v = _copy_view(feats, cap, m, off)
            if mode == "max":
                dv = np.zeros_like(v)
                np.put_along_axis(dv, aux[:, :, None], np.broadcast_to(g[:, :, None], aux[:, :, None].shape), axis=2)
            else:
                r = aux[:, :, None]
                dv = np.where(r > NORM_EPS, v / np.where(r > NORM_EPS, r, 1.0), 0.0) * g[:, :, None]
            dx[:, off : off + m * d] = dv.reshape(dx.shape[0], m * d, *dx.shape[2:])
            k += m
        for l in range(len(self.convs) - 1, -1, -1):
            conv, layer, entry = self.convs[l], self.spec.layers[l], cache["layers"][l]
            if "routes" in entry:
                dx = _grouped_max_backward(entry["z"].shape, entry["act_fiber"], entry["routes"], dx)
            kind = layer.nonlin.kind
            y = entry["y"]
            if kind == "relu":
                dy = dx * (y > 0)
            elif kind == "crelu":
                pairs = dx.reshape((dx.shape[0], -1, 2) + dx.shape[2:])
                dy = pairs[:, :, 0] * (y > 0) - pairs[:, :, 1] * (y < 0)
            elif kind == "norm_relu":
                dy, grads[f"layer{l}.norm_bias"] = _norm_relu_backward(
                    y, layer.out_fiber, self.params[f"layer{l}.norm_bias"], dx, self.n
                )
            else:
                dy = dx
            if conv.n_bias:
                grads[f"layer{l}.bias"] = conv.bias_grad(dy)
            dx, dk = conv_array_backward(entry["x"], entry["kernel"], dy, self.n, self.spec.boundary)
            for i, row in enumerate(conv.kernel_grad(dk)):
                for j, g in enumerate(row):
                    grads[f"layer{l}.phi.{i}.{j}"] = g
        return grads


def forward(net: SteerableNetwork, f: FeatureMap | np.ndarray) -> np.ndarray:
    x = f.data if isinstance(f, FeatureMap) else f
    return net.forward(x)


def backward(net: SteerableNetwork, f: FeatureMap | np.ndarray, dscores: np.ndarray) -> dict[str, np.ndarray]:
    x = f.data if isinstance(f, FeatureMap) else f
    cache: dict = {}
    net.forward(x, cache)
    return net.backward(cache, dscores)
