import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steercnn.group import (
    GroupError,
    SubgroupError,
    act_on_point,
    build_stabilizer,
    compose,
    cosets,
    element,
    from_matrix,
    identity,
    inverse,
    subgroup_from_labels,
    to_matrix,
)

SMALL = ["C4", "D4", "S2", "S3"]
ALL = SMALL + ["S4", "S5", "S6"]


def p4_matrix(r, u, v):
    """Homogeneous 3x3 matrix of a rotation by r quarter turns then translation (u, v)."""
    c, s = [1, 0, -1, 0][r % 4], [0, 1, 0, -1][r % 4]
    return np.array([[c, -s, u], [s, c, v], [0, 0, 1]])


def swap_matrix(t):
    """Homogeneous matrix of ((12), t) in Z^2 x| S2, built by hand."""
    return np.array([[0, 1, t[0]], [1, 0, t[1]], [0, 0, 1]])


class TestBuild:
    @pytest.mark.parametrize("name,order", [("C4", 4), ("D4", 8), ("S2", 2), ("S3", 6), ("S4", 24), ("S5", 120), ("S6", 720)])
    def test_orders(self, name, order):
        assert build_stabilizer(name).order == order

    def test_d4_labels(self):
        assert build_stabilizer("D4").element_labels == ("e", "r", "r^2", "r^3", "m", "mr", "mr^2", "mr^3")

    def test_s3_cycle_structure(self):
        labels = build_stabilizer("S3").element_labels
        assert sorted(l for l in labels if l.count(")") == 1 and len(l) == 4) == ["(12)", "(13)", "(23)"]
        assert sorted(l for l in labels if len(l) == 5) == ["(123)", "(132)"]

    def test_unsupported(self):
        with pytest.raises(GroupError):
            build_stabilizer("Q8")
        with pytest.raises(GroupError):
            build_stabilizer("S7")

    @pytest.mark.parametrize("name", SMALL + ["S4"])
    def test_exhaustive_axioms(self, name):
        g = build_stabilizer(name)
        t = np.asarray(g.mul_table)
        ids = np.arange(g.order)
        assert all(np.array_equal(np.sort(row), ids) for row in t)
        assert all(np.array_equal(np.sort(col), ids) for col in t.T)
        for a in range(g.order):
            assert t[g.inv_table[a], a] == 0
        # associativity as a table identity: t[t[a,b],c] == t[a,t[b,c]]
        assert np.array_equal(t[t[:, :, None], ids[None, None, :]], t[ids[:, None, None], t[None, :, :]])

    @pytest.mark.parametrize("name", ALL)
    def test_point_maps_homomorphic(self, name):
        g = build_stabilizer(name)
        for a, b in itertools.product(range(min(g.order, 24)), repeat=2):
            np.testing.assert_array_equal(g.point_map(g.mul(a, b)), g.point_map(a) @ g.point_map(b))

    def test_json(self):
        obj = build_stabilizer("S2").to_json()
        assert obj == {"name": "S2", "order": 2, "element_labels": ["e", "(12)"], "mul_table": [[0, 1], [1, 0]]}


class TestSemidirect:
    def test_identity_law(self):
        g = build_stabilizer("D4")
        x = element(g, "mr", (2, -1))
        assert compose(identity(g), x) == x
        assert compose(x, identity(g)) == x

    def test_s2_square(self):
        g = build_stabilizer("S2")
        x = element(g, "(12)", (3, 3))
        want = swap_matrix((3, 3)) @ swap_matrix((3, 3))
        assert compose(x, x) == element(g, "e", (6, 6))
        np.testing.assert_array_equal(to_matrix(compose(x, x)), want)

    def test_s2_inverse(self):
        g = build_stabilizer("S2")
        x = element(g, "(12)", (3, 3))
        assert inverse(x) == element(g, "(12)", (-3, -3))
        np.testing.assert_array_equal(swap_matrix((3, 3)) @ swap_matrix((-3, -3)), np.eye(3))

    def test_p4_rotation(self):
        g = build_stabilizer("C4")
        r = element(g, "r", (0, 0))
        assert compose(r, r) == element(g, "r^2", (0, 0))
        np.testing.assert_array_equal(to_matrix(compose(r, r)), p4_matrix(1, 0, 0) @ p4_matrix(1, 0, 0))
        assert inverse(r) == element(g, "r^3", (0, 0))
        np.testing.assert_array_equal(np.linalg.inv(p4_matrix(1, 0, 0)).round(), p4_matrix(3, 0, 0))

    def test_act_on_point(self):
        s2, c4 = build_stabilizer("S2"), build_stabilizer("C4")
        assert act_on_point(element(s2, "(12)"), (4, -1)) == (-1, 4)
        assert act_on_point(element(c4, "r"), (1, 0)) == (0, 1)
        g = element(c4, "r", (2, 3))
        assert act_on_point(g, (1, 0)) == tuple((p4_matrix(1, 2, 3) @ [1, 0, 1])[:2])

    def test_context_errors(self):
        a = element(build_stabilizer("S2"), "e")
        b = element(build_stabilizer("S3"), "e")
        with pytest.raises(GroupError):
            compose(a, b)
        with pytest.raises(GroupError):
            act_on_point(a, (1, 2, 3))
        with pytest.raises(GroupError):
            element(build_stabilizer("S2"), 0, (1, 2, 3))

    def test_overflow_checked(self):
        with pytest.raises(OverflowError):
            element(build_stabilizer("S2"), 0, (2**63, 0))

    def test_from_matrix_roundtrip(self):
        g = build_stabilizer("S3")
        x = element(g, "(123)", (1, -2, 5))
        assert from_matrix(g, to_matrix(x)) == x


def elements(name):
    g = build_stabilizer(name)
    return st.builds(
        lambda h, t: element(g, h, t),
        st.integers(0, g.order - 1),
        st.tuples(*[st.integers(-20, 20)] * g.n),
    )


class TestProperties:
    @pytest.mark.parametrize("name", SMALL)
    @settings(max_examples=60, deadline=None)
    @given(data=st.data())
    def test_matrix_homomorphism(self, name, data):
        a, b = data.draw(elements(name)), data.draw(elements(name))
        np.testing.assert_array_equal(to_matrix(compose(a, b)), to_matrix(a) @ to_matrix(b))
        inv = to_matrix(inverse(a))
        np.testing.assert_array_equal(inv @ to_matrix(a), np.eye(a.group.n + 1, dtype=np.int64))

    @pytest.mark.parametrize("name", SMALL)
    @settings(max_examples=60, deadline=None)
    @given(data=st.data())
    def test_action_composes(self, name, data):
        a, b = data.draw(elements(name)), data.draw(elements(name))
        x = data.draw(st.tuples(*[st.integers(-5, 5)] * a.group.n))
        assert act_on_point(compose(a, b), x) == act_on_point(a, act_on_point(b, x))


def brute_cosets(g, k):
    return {frozenset(g.mul(a, x) for x in k) for a in range(g.order)}


class TestCosets:
    def test_whole_group(self):
        g = build_stabilizer("D4")
        assert len(cosets(g, range(8))) == 1

    def test_s3_mod_a3(self):
        g = build_stabilizer("S3")
        a3 = subgroup_from_labels(g, ["e", "(123)", "(132)"])
        q = cosets(g, a3)
        assert len(q) == 2
        assert {frozenset(c) for c in q.cosets} == brute_cosets(g, a3)

    def test_d4_mod_c4(self):
        g = build_stabilizer("D4")
        c4 = subgroup_from_labels(g, ["e", "r", "r^2", "r^3"])
        q = cosets(g, c4)
        assert len(q) == 2
        assert {frozenset(c) for c in q.cosets} == brute_cosets(g, c4)

    @pytest.mark.parametrize("name,labels", [("S3", ["e", "(123)", "(132)"]), ("D4", ["e", "r", "r^2", "r^3"])])
    def test_normal_left_equals_right(self, name, labels):
        g = build_stabilizer(name)
        k = subgroup_from_labels(g, labels)
        q = cosets(g, k)
        for a in range(g.order):
            assert frozenset(q.cosets[q.rep_of[a]]) == q.right_cosets()[a]

    def test_partition(self):
        g = build_stabilizer("S3")
        q = cosets(g, subgroup_from_labels(g, ["e", "(12)"]))
        assert sorted(x for c in q.cosets for x in c) == list(range(6))
        assert all(len(c) == 2 for c in q.cosets)

    def test_not_subgroup(self):
        g = build_stabilizer("S3")
        with pytest.raises(SubgroupError):
            cosets(g, [0, g.index("(12)"), g.index("(13)")])
        with pytest.raises(SubgroupError):
            cosets(g, [g.index("(12)")])
