import numpy as np
import pytest

from steercnn.group import build_stabilizer, element, subgroup_from_labels
from steercnn.gcnn import (
    GCNN,
    GFeatureMap,
    coset_pool,
    expand_filter_bank,
    from_steerable,
    gconv_first,
    gconv_higher,
    group_pool,
    steerable_twin,
    to_steerable,
    transform_g,
)
from steercnn.reps import window_cells
from steercnn.steer import Capsule, FeatureMap, Fiber, SpecError, transform_induced, transform_input
from steercnn.verify import sweep_elements

from oracles import transform_cells_direct

GROUPS = ["C4", "D4", "S2", "S3"]


def rotated(psi, group, h):
    """psi_h[.., z] = psi[.., h^-1 z] via a cell loop."""
    return transform_cells_direct(psi, group, h)


def naive_first(x, psi, group):
    """out[k', h, x] = sum_{k, z} f[k, x + z] psi[k', k, h^-1 z] with cyclic wrap."""
    n = group.n
    r = (psi.shape[-1] - 1) // 2
    out = np.zeros((psi.shape[0], group.order) + x.shape[1:])
    for h in range(group.order):
        ph = rotated(psi, group, h)
        for z in window_cells(n, psi.shape[-1]):
            shifted = np.roll(x, tuple(-int(v) for v in z), axis=tuple(range(1, n + 1)))
            w = ph[(slice(None), slice(None)) + tuple(z + r)]
            out[:, h] += np.tensordot(w, shifted, axes=(1, 0))
    return out


def naive_higher(x, psi, group):
    """out[k', h, x] = sum_{k, a, z} f[k, a, x + z] psi[k', k, h^-1 a, h^-1 z]."""
    n = group.n
    r = (psi.shape[-1] - 1) // 2
    out = np.zeros((psi.shape[0], group.order) + x.shape[2:])
    for h in range(group.order):
        hi = group.inv(h)
        ph = rotated(psi, group, h)  # spatial part only
        for a in range(group.order):
            src = group.mul(hi, a)
            for z in window_cells(n, psi.shape[-1]):
                shifted = np.roll(x[:, a], tuple(-int(v) for v in z), axis=tuple(range(1, n + 1)))
                w = ph[(slice(None), slice(None), src) + tuple(z + r)]
                out[:, h] += np.tensordot(w, shifted, axes=(1, 0))
    return out


def trivial_map(x, group):
    return FeatureMap(x, Fiber.trivial(group, x.shape[-group.n - 1]), group.n)


def shape(group, k, w=5):
    return (k,) + (w,) * group.n


class TestExpansion:
    @pytest.mark.parametrize("name", GROUPS)
    def test_first_copies_are_rotations(self, name):
        g = build_stabilizer(name)
        psi = np.random.default_rng(0).standard_normal((2, 1) + (3,) * g.n)
        plus = expand_filter_bank(psi, g, first=True).F_plus
        for h in range(g.order):
            np.testing.assert_array_equal(plus[:, h], rotated(psi, g, h))

    def test_s2_reflection(self):
        g = build_stabilizer("S2")
        psi = np.arange(9.0).reshape(1, 1, 3, 3)
        plus = expand_filter_bank(psi, g, first=True).F_plus
        np.testing.assert_array_equal(plus[0, 0], psi[0])
        np.testing.assert_array_equal(plus[0, 1, 0], psi[0, 0].T)

    def test_c4_quarter_turn(self):
        g = build_stabilizer("C4")
        psi = np.zeros((1, 1, 3, 3))
        psi[0, 0, 2, 1] = 1  # cell (1, 0)
        plus = expand_filter_bank(psi, g, first=True).F_plus
        assert np.argwhere(plus[0, g.index("r"), 0]).tolist() == [[1, 2]]  # cell (0, 1)

    def test_identity_slice(self):
        g = build_stabilizer("D4")
        psi = np.random.default_rng(1).standard_normal((3, 2, 8, 3, 3))
        plus = expand_filter_bank(psi, g, first=False).F_plus
        np.testing.assert_array_equal(plus[:, 0], psi)

    def test_bad_shapes(self):
        g = build_stabilizer("D4")
        with pytest.raises(SpecError):
            expand_filter_bank(np.zeros((1, 1, 3, 4)), g, first=True)
        with pytest.raises(SpecError):
            expand_filter_bank(np.zeros((1, 1, 3, 3, 3)), g, first=False)


class TestGConv:
    @pytest.mark.parametrize("name", GROUPS)
    def test_first_matches_naive(self, name):
        g = build_stabilizer(name)
        rng = np.random.default_rng(2)
        x = rng.standard_normal(shape(g, 2))
        psi = rng.standard_normal((3, 2) + (3,) * g.n)
        np.testing.assert_allclose(gconv_first(trivial_map(x, g), psi).data, naive_first(x, psi, g), atol=1e-12)

    @pytest.mark.parametrize("name", GROUPS)
    def test_higher_matches_naive(self, name):
        g = build_stabilizer(name)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, g.order) + (5,) * g.n)
        psi = rng.standard_normal((2, 2, g.order) + (3,) * g.n)
        out = gconv_higher(GFeatureMap(x, g), psi).data
        np.testing.assert_allclose(out, naive_higher(x, psi, g), atol=1e-12)

    def test_first_identity_slice_is_correlation(self):
        g = build_stabilizer("D4")
        x = np.zeros(shape(g, 1))
        x[0, 2, 2] = 1
        psi = np.random.default_rng(4).standard_normal((1, 1, 3, 3))
        out = gconv_first(trivial_map(x, g), psi).data
        np.testing.assert_array_equal(out[0, 0, 1:4, 1:4], psi[0, 0, ::-1, ::-1])

    def test_higher_delta_filter_is_identity(self):
        g = build_stabilizer("C4")
        psi = np.zeros((2, 2, 4, 3, 3))
        for k in range(2):
            psi[k, k, 0, 1, 1] = 1
        x = np.random.default_rng(5).standard_normal((2, 4, 5, 5))
        np.testing.assert_array_equal(gconv_higher(GFeatureMap(x, g), psi).data, x)

    @pytest.mark.parametrize("name", GROUPS)
    def test_equivariance(self, name):
        g = build_stabilizer(name)
        rng = np.random.default_rng(6)
        x = rng.standard_normal(shape(g, 1))
        p1 = rng.standard_normal((2, 1) + (3,) * g.n)
        p2 = rng.standard_normal((2, 2, g.order) + (3,) * g.n)
        f = trivial_map(x, g)
        y = gconv_first(f, p1)
        z = gconv_higher(y, p2)
        for el in sweep_elements(g, 5, n_translations=4, exhaustive=False):
            y2 = gconv_first(transform_input(el, f), p1)
            np.testing.assert_allclose(y2.data, transform_g(el, y).data, atol=1e-12)
            np.testing.assert_allclose(gconv_higher(y2, p2).data, transform_g(el, z).data, atol=1e-11)

    def test_quotient_rejected(self):
        g = build_stabilizer("D4")
        f = coset_pool(GFeatureMap(np.zeros((1, 8, 5, 5)), g), subgroup_from_labels(g, ["e", "r^2"]))
        with pytest.raises(SpecError):
            gconv_higher(f, np.zeros((1, 1, 8, 3, 3)))


class TestPooling:
    @pytest.mark.parametrize("name", GROUPS)
    @pytest.mark.parametrize("seed", range(3))
    def test_group_pool_commutes(self, name, seed):
        g = build_stabilizer(name)
        rng = np.random.default_rng(seed)
        f = GFeatureMap(rng.integers(-9, 10, (2, g.order) + (5,) * g.n).astype(float), g)
        U = [(0, (0,) * g.n), (min(1, g.order - 1), (1,) + (0,) * (g.n - 1))]
        for h in range(g.order):
            el = element(g, h, (2,) + (0,) * (g.n - 1))
            np.testing.assert_array_equal(group_pool(transform_g(el, f), U).data, transform_g(el, group_pool(f, U)).data)

    def test_group_pool_identity_neighbourhood(self):
        g = build_stabilizer("S2")
        f = GFeatureMap(np.random.default_rng(7).standard_normal((1, 2, 5, 5)), g)
        np.testing.assert_array_equal(group_pool(f, [(0, (0, 0))]).data, f.data)
        with pytest.raises(SpecError):
            group_pool(f, [])

    def test_group_pool_value(self):
        g = build_stabilizer("S2")
        x = np.zeros((1, 2, 5, 5))
        x[0, 0, 2, 3] = 7
        out = group_pool(GFeatureMap(x, g), [(0, (0, 0)), (0, (0, 1))]).data
        assert out[0, 0, 2, 2] == 7 and out[0, 0, 2, 3] == 7
        # slot h = (12) reads g u = (x + (12)(0,1), ...) = (x + (1,0), (12))
        assert out[0, 1].max() == 0

    @pytest.mark.parametrize("name,labels", [("D4", ["e", "r", "r^2", "r^3"]), ("S3", ["e", "(123)", "(132)"]), ("C4", ["e", "r^2"])])
    def test_coset_pool(self, name, labels):
        g = build_stabilizer(name)
        k = subgroup_from_labels(g, labels)
        x = np.random.default_rng(8).integers(-9, 10, (2, g.order) + (3,) * g.n).astype(float)
        f = GFeatureMap(x, g)
        out = coset_pool(f, k)
        for i, cs in enumerate(out.quotient.cosets):
            np.testing.assert_array_equal(out.data[:, i], x[:, list(cs)].max(axis=1))
        for h in range(g.order):
            el = element(g, h, (1,) * g.n)
            np.testing.assert_array_equal(coset_pool(transform_g(el, f), k).data, transform_g(el, out).data)
        # the pooled map transforms as a quotient capsule
        st = to_steerable(out)
        el = element(g, g.order - 1)
        np.testing.assert_array_equal(to_steerable(transform_g(el, out)).data, transform_induced(el, st).data)

    def test_coset_pool_whole_group(self):
        g = build_stabilizer("D4")
        x = np.random.default_rng(9).standard_normal((2, 8, 5, 5))
        out = coset_pool(GFeatureMap(x, g), range(8))
        assert isinstance(out, FeatureMap)
        np.testing.assert_array_equal(out.data, x.max(axis=1))


class TestBridge:
    @pytest.mark.parametrize("name", GROUPS)
    def test_round_trip_and_commutation(self, name):
        g = build_stabilizer(name)
        x = np.random.default_rng(10).standard_normal((3, g.order) + (5,) * g.n)
        f = GFeatureMap(x, g)
        s = to_steerable(f)
        assert s.fiber == Fiber.of((Capsule.regular(name), 3))
        np.testing.assert_array_equal(s.data[2 * g.order + 1], x[2, 1])
        np.testing.assert_array_equal(from_steerable(s).data, x)
        for h in range(g.order):
            el = element(g, h, (1,) + (0,) * (g.n - 1))
            np.testing.assert_array_equal(to_steerable(transform_g(el, f)).data, transform_induced(el, s).data)

    def test_from_steerable_rejects_mixed(self):
        fib = Fiber.of((Capsule.regular("S2"), 1), (Capsule.trivial("S2"), 1))
        with pytest.raises(SpecError):
            from_steerable(FeatureMap(np.zeros((3, 5, 5)), fib, 2))

    @pytest.mark.parametrize("name", GROUPS)
    def test_twin(self, name):
        g = build_stabilizer(name)
        net = GCNN.random(name, [1, 2, 2], s=3, seed=11)
        twin = steerable_twin(net)
        x = np.random.default_rng(12).standard_normal((2, 1) + (5,) * g.n)
        want = to_steerable(net(x)).data
        got = twin.features(x)
        assert np.abs(got - want).max() <= 1e-9 * np.abs(want).max()

    def test_gcnn_nonlin(self):
        with pytest.raises(SpecError):
            GCNN("D4", [np.zeros((1, 1, 3, 3))], nonlin="tanh")
