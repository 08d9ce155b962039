"""Numerical equivariance checks for layers and networks."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .group import SemidirectElement, StabilizerGroup, element
from .reps import window_cells
from .steer import (
    Fiber,
    SteerableNetwork,
    _fiber_pool_plan,
    _grouped_max,
    _quotient_pool_plan,
    conv_array,
    crelu,
    fiber_act,
    norm_relu,
    relu,
    transport,
)

__all__ = [
    "Check",
    "RunReport",
    "relative_residual",
    "sweep_elements",
    "induced_batch",
    "check_equivariance",
    "layer_ops",
    "verify_network",
    "EQUIVARIANCE_TOL",
]

EQUIVARIANCE_TOL = 1e-9


def relative_residual(lhs: np.ndarray, rhs: np.ndarray) -> float:
    """||lhs - rhs||_inf / max(||rhs||_inf, 1e-30)."""
    return float(np.abs(lhs - rhs).max(initial=0.0) / max(np.abs(rhs).max(initial=0.0), 1e-30))


@dataclass
class Check:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance


@dataclass
class RunReport:
    checks: list[Check] = field(default_factory=list)
    seed: int = 0
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "wall_time": self.wall_time,
            "passed": self.passed,
            "checks": [dict(asdict(c), passed=c.passed) for c in self.checks],
        }

    def lines(self) -> list[str]:
        out = [
            f"{'PASS' if c.passed else 'FAIL'}  {c.name:<28} residual {c.residual:.3e}  tol {c.tolerance:.1e}"
            for c in self.checks
        ]
        out.append(f"{sum(c.passed for c in self.checks)}/{len(self.checks)} checks passed")
        return out


def sweep_elements(
    group: StabilizerGroup, window: int, n_translations: int = 16, seed: int = 0, exhaustive: bool | None = None
) -> list[SemidirectElement]:
    """Every stabilizer element combined with a translation sweep.

    Translations are exhaustive over the window when W <= 7 (unless
    overridden), otherwise ``n_translations`` seeded draws.
    """
    if exhaustive is None:
        exhaustive = window <= 7
    if exhaustive:
        shifts = [tuple(t) for t in window_cells(group.n, window)]
    else:
        rng = np.random.default_rng(seed)
        c = (window - 1) // 2
        shifts = [tuple(int(v) for v in rng.integers(-c, c + 1, group.n)) for _ in range(n_translations)]
    return [element(group, h, t) for h in range(group.order) for t in shifts]


def induced_batch(elements: Sequence[SemidirectElement], x: np.ndarray, fiber: Fiber | None, n: int) -> np.ndarray:
    """Stack pi'(g) x over elements; x is (K, *sp), result (len, K, *sp)."""
    out = np.empty((len(elements),) + x.shape)
    for i, g in enumerate(elements):
        moved, _ = transport(g, x, n)
        out[i] = moved if fiber is None else fiber_act(fiber, g.stab, moved, n)
    return out


def check_equivariance(
    op: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    in_fiber: Fiber | None,
    out_fiber: Fiber | None,
    elements: Sequence[SemidirectElement],
    n: int,
) -> float:
    """max over g of ||L(pi(g) x) - pi'(g) L(x)|| / ||pi'(g) L(x)||.

    ``op`` maps (B, K, *sp) to (B, K', *sp).  A ``None`` fiber means
    spatial transport only.
    """
    base = op(x[None])[0]
    lhs = op(induced_batch(elements, x, in_fiber, n))
    rhs = induced_batch(elements, base, out_fiber, n)
    worst = 0.0
    for a, b in zip(lhs, rhs):
        worst = max(worst, relative_residual(a, b))
    return worst


def layer_ops(net: SteerableNetwork, l: int) -> list[tuple[str, Callable, Fiber, Fiber]]:
    """(name, op, in fiber, out fiber) for the stages of layer l."""
    conv = net.convs[l]
    layer = net.spec.layers[l]
    n, boundary = net.n, net.spec.boundary
    kernel = net.kernel(l).kernel
    bias = net.params.get(f"layer{l}.bias")

    def conv_op(x):
        y = conv_array(x, kernel, n, boundary)
        return conv.add_bias(y, bias) if bias is not None else y

    ops = [(f"layer{l}.conv", conv_op, layer.in_fiber, layer.out_fiber)]
    act = layer.nonlin.out_fiber(layer.out_fiber)
    kind = layer.nonlin.kind
    if kind == "relu":
        ops.append((f"layer{l}.relu", relu, layer.out_fiber, act))
    elif kind == "crelu":
        ops.append((f"layer{l}.crelu", crelu, layer.out_fiber, act))
    elif kind == "norm_relu":
        nb = net.params[f"layer{l}.norm_bias"]
        ops.append((f"layer{l}.norm_relu", lambda x: norm_relu(x, layer.out_fiber, nb, n), layer.out_fiber, act))
    if layer.pool.kind == "fiber":
        chosen = _fiber_pool_plan(act, None)[1]
        op = lambda x: _grouped_max(x, act, lambda i, c: [list(range(c.dim))] if i in chosen else None)[0]
        ops.append((f"layer{l}.fiber_pool", op, act, layer.post_fiber()))
    elif layer.pool.kind == "quotient":
        groups = _quotient_pool_plan(act, layer.pool.subgroup, None)[1]
        op = lambda x: _grouped_max(x, act, lambda i, c: groups.get(i))[0]
        ops.append((f"layer{l}.quotient_pool", op, act, layer.post_fiber()))
    return ops


def verify_network(
    net: SteerableNetwork,
    window: int = 5,
    seed: int = 0,
    n_translations: int = 16,
    exhaustive: bool | None = None,
    tol: float = EQUIVARIANCE_TOL,
) -> RunReport:
    """Checks every layer stage on random inputs, then end-to-end invariance."""
    start = time.perf_counter()
    report = RunReport(seed=seed)
    if not net.spec.layers:
        report.wall_time = time.perf_counter() - start
        return report
    rng = np.random.default_rng(seed)
    n = net.n
    elements = sweep_elements(net.group, window, n_translations, seed, exhaustive)
    for l in range(len(net.spec.layers)):
        for name, op, fin, fout in layer_ops(net, l):
            x = rng.standard_normal((fin.dim,) + (window,) * n)
            report.checks.append(Check(name, check_equivariance(op, x, fin, fout, elements, n), tol))
    x = rng.standard_normal((net.spec.in_channels,) + (window,) * n)
    base = net.forward(x[None])[0]
    moved = net.forward(induced_batch(elements, x, None, n))
    worst = max(relative_residual(m, base) for m in moved)
    report.checks.append(Check("network.invariance", worst, 1e-8))
    report.wall_time = time.perf_counter() - start
    return report
