"""Acceptance criteria, each at its stated tolerance and time budget."""
import time

import numpy as np
import pytest

from steercnn.gcnn import (
    GCNN,
    GFeatureMap,
    coset_pool,
    group_pool,
    steerable_twin,
    to_steerable,
    transform_g,
)
from steercnn.group import build_stabilizer, cosets, element, subgroup_from_labels
from steercnn.intertwine import dim_hom, intertwiner_basis, parameter_efficiency
from steercnn.reps import (
    character,
    filter_space_rep,
    irrep_table,
    multiplicity,
    quotient_rep,
    regular_rep,
    rep_from_type,
)
from steercnn.steer import (
    Capsule,
    Fiber,
    LayerSpec,
    NetworkSpec,
    NonlinSpec,
    PoolSpec,
    SteerableNetwork,
    _Conv,
    _grouped_max,
    conv_array,
    crelu,
    norm_relu,
    relu,
    transform_input,
    transport,
)
from steercnn.data import SyntheticTask
from steercnn.train import accuracy, train
from steercnn.verify import check_equivariance, relative_residual, sweep_elements

GROUPS = ["C4", "D4", "S2", "S3"]
QUOTIENT_SUBGROUPS = {
    "C4": ["e", "r^2"],
    "D4": ["e", "r", "r^2", "r^3"],
    "S2": ["e", "(12)"],
    "S3": ["e", "(123)", "(132)"],
}


def fresh_filter_space(group, s, fiber=None):
    filter_space_rep.cache_clear()
    return filter_space_rep(group, s, fiber)


@pytest.mark.acceptance(1, "D4 decomposition of pi0 on 3x3 is (3,0,1,1,2); chi(e)=9, chi(m)=3; < 1 s")
def test_criterion_1():
    start = time.perf_counter()
    t = irrep_table("D4")
    pi0 = fresh_filter_space(t.group, 3)
    typ = multiplicity(pi0, t)
    chi = character(pi0)
    elapsed = time.perf_counter() - start
    assert typ == (3, 0, 1, 1, 2)
    assert chi[t.group.index("e")] == 9 and chi[t.group.index("m")] == 3
    assert elapsed < 1.0


@pytest.mark.acceptance(2, "S2 type (6,3); S3 characters (27,9,9,9,3,3) and type (10,1,8); < 1 s")
def test_criterion_2():
    start = time.perf_counter()
    s2, s3 = irrep_table("S2"), irrep_table("S3")
    typ2 = multiplicity(fresh_filter_space(s2.group, 3), s2)
    pi3 = fresh_filter_space(s3.group, 3)
    chi3 = character(pi3)
    typ3 = multiplicity(pi3, s3)
    elapsed = time.perf_counter() - start
    assert typ2 == (6, 3)
    g = s3.group
    order = ["e", "(12)", "(13)", "(23)", "(123)", "(132)"]
    assert [chi3[g.index(l)] for l in order] == [27, 9, 9, 9, 3, 3]
    assert typ3 == (10, 1, 8)
    assert elapsed < 1.0


def random_rep(rng, t):
    g = t.group
    kind = rng.integers(4)
    if kind == 0:
        mults = rng.integers(0, 3, len(t.irreps))
        if not mults.any():
            mults[rng.integers(len(mults))] = 1
        return rep_from_type(t, mults.tolist())
    if kind == 1:
        fiber = t.irreps[rng.integers(len(t.irreps))]
        return filter_space_rep(g, int(rng.choice([1, 3])), fiber)
    if kind == 2:
        return regular_rep(g)
    sub = subgroup_from_labels(g, QUOTIENT_SUBGROUPS[g.name])
    return quotient_rep(g, sub)


@pytest.mark.acceptance(3, "dim Hom = 10 for the D4 example; character formula equals SVD on >= 50 random pairs; < 30 s")
def test_criterion_3():
    start = time.perf_counter()
    t = irrep_table("D4")
    pi0, rho = filter_space_rep(t.group, 3), rep_from_type(t, (2, 1, 1, 1, 1))
    assert dim_hom(multiplicity(pi0, t), multiplicity(rho, t), t) == 10
    assert intertwiner_basis(pi0, rho, cache=False).dim == 10
    rng = np.random.default_rng(0)
    pairs = 0
    for _ in range(15):
        for name in GROUPS:
            tab = irrep_table(name)
            pi, rho = random_rep(rng, tab), random_rep(rng, tab)
            formula = dim_hom(multiplicity(pi, tab), multiplicity(rho, tab), tab)
            assert intertwiner_basis(pi, rho, cache=False).dim == formula, (name, pi.basis_label, rho.basis_label)
            pairs += 1
    assert pairs >= 50
    assert time.perf_counter() - start < 30


@pytest.mark.acceptance(4, "Schur: dim Hom = 0 for non-isomorphic irreps and 1 for each irrep with itself")
def test_criterion_4():
    failures = []
    for name in GROUPS:
        t = irrep_table(name)
        for a, ra in zip(t.labels, t.irreps):
            for b, rb in zip(t.labels, t.irreps):
                d = intertwiner_basis(ra, rb, cache=False).dim
                want = 1 if a == b else 0
                if d != want:
                    failures.append(f"{name} {a}->{b}: dim {d}, expected {want}")
    assert not failures, "; ".join(failures)


@pytest.mark.acceptance(5, "D4 regular to regular with 3x3 filters: dim Hom = 72, mu = 8.0")
def test_criterion_5():
    g = build_stabilizer("D4")
    reg = regular_rep(g)
    pi = filter_space_rep(g, 3, reg)
    d = intertwiner_basis(pi, reg).dim
    assert d == 72
    assert parameter_efficiency(pi, reg) == 8.0


def fibers_for(name):
    """Capsule mixes admissible for each layer type."""
    t = irrep_table(name)
    reg, triv = Capsule.regular(name), Capsule.trivial(name)
    quo = Capsule.quotient(name, QUOTIENT_SUBGROUPS[name])
    irreps = [Capsule.irrep(name, l) for l in t.labels]
    mono = [c for c in irreps if c.rep.is_monomial]
    orth = [c for c in irreps if c.rep.is_orthogonal]
    return {
        "conv_in": Fiber.of((triv, 1), (reg, 1), *[(c, 1) for c in irreps]),
        "conv_out": Fiber.of((reg, 2), (quo, 1), *[(c, 1) for c in irreps]),
        "relu": Fiber.of((reg, 2), (quo, 1), (triv, 1)),
        "crelu": Fiber.of((reg, 1), *[(c, 1) for c in mono]),
        "norm_relu": Fiber.of((reg, 1), *[(c, 2) for c in orth]),
        "fiber_pool": Fiber.of((reg, 2), (quo, 1)),
        "quotient_pool": Fiber.of((reg, 3)),
    }


def layer_cases(name, rng, n):
    f = fibers_for(name)
    g = build_stabilizer(name)
    conv = _Conv(g, LayerSpec(f["conv_in"], f["conv_out"], 3))
    phis = [[rng.uniform(-1, 1, shp) for (i2, _, shp) in conv.phi_shapes() if i2 == i] for i in range(len(conv.bases))]
    kernel = conv.kernel(phis).kernel
    bias = rng.standard_normal(conv.n_bias)
    nb = rng.uniform(0, 1, f["norm_relu"].n_copies)
    sub = QUOTIENT_SUBGROUPS[name]

    def pool_op(fib, groups):
        return lambda x: _grouped_max(x, fib, groups)[0]

    fp = f["fiber_pool"]
    qp = f["quotient_pool"]
    qgroups = [sorted(c) for c in cosets(g, subgroup_from_labels(g, sub)).cosets]
    return [
        ("conv", lambda x: conv.add_bias(conv_array(x, kernel, n), bias), f["conv_in"], f["conv_out"]),
        ("relu", relu, f["relu"], f["relu"]),
        ("crelu", crelu, f["crelu"], NonlinSpec("crelu").out_fiber(f["crelu"])),
        ("norm_relu", lambda x: norm_relu(x, f["norm_relu"], nb, n), f["norm_relu"], f["norm_relu"]),
        ("fiber_pool", pool_op(fp, lambda i, c: [list(range(c.dim))]), fp, PoolSpec("fiber").out_fiber(fp)),
        ("quotient_pool", pool_op(qp, lambda i, c: qgroups), qp, PoolSpec("quotient", tuple(sub)).out_fiber(qp)),
    ]


@pytest.mark.acceptance(6, "every layer type over C4/D4/S2/S3, W in {5,7}, full stabilizer x 16 translations, 20 seeds: residual <= 1e-9; < 2 min")
def test_criterion_6():
    start = time.perf_counter()
    worst = {}
    for name in GROUPS:
        g = build_stabilizer(name)
        for w in (5, 7):
            for seed in range(20):
                rng = np.random.default_rng(seed)
                elements = sweep_elements(g, w, n_translations=16, seed=seed, exhaustive=False)
                for label, op, fin, fout in layer_cases(name, rng, g.n):
                    x = rng.standard_normal((fin.dim,) + (w,) * g.n)
                    r = check_equivariance(op, x, fin, fout, elements, g.n)
                    worst[(name, label)] = max(worst.get((name, label), 0.0), r)
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if v > 1e-9}
    assert not bad, bad
    assert len(worst) == 4 * 6
    assert elapsed < 120, elapsed


@pytest.mark.acceptance(7, "2-layer G-CNN and its regular steerable twin agree to 1e-9 for all four groups; < 1 min")
def test_criterion_7():
    start = time.perf_counter()
    for name in GROUPS:
        g = build_stabilizer(name)
        net = GCNN.random(name, [1, 3, 2], s=3, seed=7)
        twin = steerable_twin(net)
        x = np.random.default_rng(8).standard_normal((2, 1) + (7,) * g.n)
        want = to_steerable(net(x)).data
        assert relative_residual(twin.features(x), want) <= 1e-9, name
    assert time.perf_counter() - start < 60


@pytest.mark.acceptance(8, "group and coset pooling commute exactly with T_h on integer maps, exhaustive over H, 10 seeds")
def test_criterion_8():
    for name in GROUPS:
        g = build_stabilizer(name)
        k = subgroup_from_labels(g, QUOTIENT_SUBGROUPS[name])
        U = [(0, (0,) * g.n), (g.order - 1, (1,) + (0,) * (g.n - 1)), (0, (0,) * (g.n - 1) + (-1,))]
        for seed in range(10):
            rng = np.random.default_rng(seed)
            f = GFeatureMap(rng.integers(-20, 21, (2, g.order) + (5,) * g.n).astype(float), g)
            for h in range(g.order):
                for t in ((0,) * g.n, tuple(rng.integers(-2, 3, g.n))):
                    el = element(g, h, t)
                    moved = transform_g(el, f)
                    assert np.array_equal(group_pool(moved, U).data, transform_g(el, group_pool(f, U)).data)
                    for sub in (k, range(g.order)):
                        pooled = coset_pool(f, sub)
                        act = transform_g if isinstance(pooled, GFeatureMap) else transform_input
                        assert np.array_equal(coset_pool(moved, sub).data, act(el, pooled).data)


@pytest.mark.acceptance(9, "ReLU basis-dependence fixture: relu(Mx) = (0,5) and relu(M'x') = (12,0)")
def test_criterion_9():
    m = np.array([[1, -1], [0, 1]])
    mp = np.array([[3, 1], [-4, -1]])
    assert relu(m @ np.array([-2, 5])).tolist() == [0, 5]
    assert relu(mp @ np.array([7, -9])).tolist() == [12, 0]


def gradient_spec(seed):
    name = GROUPS[seed % 4]
    g = build_stabilizer(name)
    reg = Capsule.regular(name)
    orth = [Capsule.irrep(name, l) for l, r in zip(irrep_table(name).labels, irrep_table(name).irreps) if r.is_orthogonal][-1]
    l0 = LayerSpec(Fiber.trivial(g, 1), Fiber.of((reg, 1), (orth, 1)), 3, NonlinSpec("norm_relu"))
    l1 = LayerSpec(l0.post_fiber(), Fiber.of((reg, 1)), 3, NonlinSpec("relu"),
                   PoolSpec("quotient", tuple(QUOTIENT_SUBGROUPS[name])))
    return NetworkSpec(name, (l0, l1), n_classes=3)


@pytest.mark.acceptance(10, "analytic vs central finite-difference gradients (step 1e-5) within 1e-4, 2-layer net <= 500 params, 5 seeds; < 1 min")
def test_criterion_10():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        net = SteerableNetwork(gradient_spec(seed), seed=seed)
        assert net.n_params <= 500
        rng = np.random.default_rng(100 + seed)
        net.params["head.W"][:] = rng.standard_normal(net.params["head.W"].shape)
        x = rng.standard_normal((2, 1) + (5,) * net.n)
        r = rng.standard_normal((2, 3))
        cache = {}
        net.forward(x, cache)
        grads = net.backward(cache, r)
        for key, p in net.params.items():
            flat = p.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + 1e-5
                up = float((net.forward(x) * r).sum())
                flat[i] = old - 1e-5
                dn = float((net.forward(x) * r).sum())
                flat[i] = old
                num = (up - dn) / 2e-5
                ana = float(grads[key].reshape(-1)[i])
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
                worst = max(worst, err)
                assert err <= 1e-4, (seed, key, i, ana, num)
    assert time.perf_counter() - start < 60


@pytest.mark.acceptance(11, "trained classifier: scores invariant to 1e-8 over the sweep; transformed and plain accuracies equal")
def test_criterion_11():
    g = build_stabilizer("D4")
    reg = Capsule.regular("D4")
    l0 = LayerSpec(Fiber.trivial(g, 1), Fiber.of((reg, 2)), 3, NonlinSpec("relu"))
    l1 = LayerSpec(l0.post_fiber(), Fiber.of((reg, 2)), 3, NonlinSpec("relu"), PoolSpec("fiber"))
    net = SteerableNetwork(NetworkSpec("D4", (l0, l1), n_classes=2), seed=0)
    task = SyntheticTask("D4", window=7, n_classes=2, seed=0)
    x, y = task.sample(64, seed=1)
    xt, yt = task.sample(32, seed=2)
    train(net, x, y, epochs=15, lr=0.05, seed=0)
    base = net.forward(xt)
    acc = accuracy(base, yt)
    assert acc > 0.5
    for el in sweep_elements(g, 7, n_translations=16):
        moved = net.forward(np.stack([transport(el, xi, g.n)[0] for xi in xt]))
        assert relative_residual(moved, base) <= 1e-8
        assert accuracy(moved, yt) == acc
