import numpy as np
import pytest
from hypothesis import given, strategies as st

from elastictree import (
    NodeMatch,
    SrvfNode,
    SrvfTree,
    TopologyMismatchError,
    ValidationError,
    build_tree,
    devectorize,
    from_srvft,
    normalize,
    pad_to_union,
    to_srvft,
    validate_tree,
    vectorize,
)
from elastictree.curves import resample_arclength
from elastictree.registration import tree_distance_fixed
from elastictree.synth import synth_tree
from elastictree.tree import parse_topology

from conftest import line, y_records

seeds = st.integers(0, 2**32 - 1)


def shift(records, offset):
    return [{**r, "points": np.asarray(r["points"]) + offset} for r in records]


def max_vertex_gap(a, b):
    return max(np.abs(u.curve - v.curve).max() for u, v in zip(a.nodes(), b.nodes()))


# ---------------------------------------------------------------- build_tree


def test_single_branch_tree():
    t = build_tree([{"id": "a", "parent": None, "points": line([0, 0, 0], [1, 0, 0])}])
    assert t.n_branches == 1 and t.root.layer == 0 and t.topology_id == "()"


def test_y_children_in_canonical_order(y_tree):
    assert [c.attach_s for c in y_tree.root.children] == [0.5, 0.8]
    assert [c.label for c in y_tree.root.children] == ["right", "left"]
    assert all(c.layer == 1 for c in y_tree.root.children)


def test_equal_attach_prefers_longer_subtree():
    recs = y_records()
    recs[1]["attach_s"] = recs[2]["attach_s"] = 0.5
    recs[1]["points"] = line([0, 0, 1], [0, 3, 1])
    t = build_tree(recs)
    assert [c.label for c in t.root.children] == ["left", "right"]


def test_attach_out_of_range_names_branch():
    recs = y_records()
    recs[1]["attach_s"] = 1.3
    with pytest.raises(ValidationError, match="left") as err:
        build_tree(recs)
    assert err.value.branch_id == "left"


def test_two_roots_rejected():
    recs = y_records()
    recs[2]["parent"] = None
    with pytest.raises(ValidationError, match="'trunk', 'right'"):
        build_tree(recs)


def test_cycle_rejected():
    recs = y_records() + [
        {"id": "x", "parent": "y", "attach_s": 0.5, "points": line([0, 0, 0], [1, 1, 1])},
        {"id": "y", "parent": "x", "attach_s": 0.5, "points": line([0, 0, 0], [1, 1, 1])},
    ]
    with pytest.raises(ValidationError, match="cycle") as err:
        build_tree(recs)
    assert err.value.branch_id in {"x", "y"}


def test_unknown_parent_and_duplicate_id_rejected():
    recs = y_records()
    recs[1]["parent"] = "nowhere"
    with pytest.raises(ValidationError, match="nowhere"):
        build_tree(recs)
    with pytest.raises(ValidationError, match="duplicate"):
        build_tree(y_records() + [y_records()[1]])


def test_zero_length_branch_is_null():
    recs = y_records()
    recs[1]["points"] = [[0, 0, 1.6]] * 4
    t = build_tree(recs)
    assert [c.is_null for c in t.root.children] == [False, True]
    validate_tree(t)


# ---------------------------------------------------------------- normalize


def test_normalize_translation_invariant():
    a = normalize(build_tree(y_records()))
    b = normalize(build_tree(shift(y_records(), [5, 5, 5])))
    assert max_vertex_gap(a, b) <= 1e-14
    assert np.array_equal(a.root.curve[0], [0, 0, 0])


def test_normalize_unit_scale():
    recs = shift(y_records(), [1, 2, 3])
    t = build_tree(recs)
    assert normalize(t, unit_scale=True).total_length == pytest.approx(1.0, abs=1e-12)
    assert normalize(t).total_length == pytest.approx(t.total_length, abs=1e-12)


def test_normalize_unit_scale_length_40():
    recs = [{"id": "a", "parent": None, "points": line([0, 0, 0], [40, 0, 0])}]
    assert normalize(build_tree(recs), unit_scale=True).total_length == pytest.approx(1.0, abs=1e-14)


@given(seeds)
def test_normalize_idempotent(seed):
    t = synth_tree(seed)
    once = normalize(t, unit_scale=True)
    twice = normalize(once, unit_scale=True)
    assert max_vertex_gap(once, twice) <= 1e-12


# ---------------------------------------------------------------- SRVF trees


def test_to_srvft_unit_line():
    t = build_tree([{"id": "a", "parent": None, "points": line([0, 0, 0], [1, 0, 0], 7)}])
    Q = to_srvft(t, 20)
    np.testing.assert_allclose(Q.root.q, np.tile([1.0, 0, 0], (20, 1)), atol=1e-12)


def test_to_srvft_null_and_attach(y_tree):
    Q = to_srvft(y_tree, 30)
    assert sum(1 for _ in Q.nodes()) == 3
    assert [c.attach_s for c in Q.root.children] == [0.5, 0.8]
    recs = y_records()
    recs[2]["points"] = [[0, 0, 1]] * 3
    Qn = to_srvft(build_tree(recs), 30)
    null = [c for c in Qn.root.children if c.is_null]
    assert len(null) == 1 and not np.any(null[0].q)


def test_from_srvft_round_trip_y(y_tree):
    t = normalize(y_tree)
    back = from_srvft(to_srvft(t, 200))
    gap = max(np.abs(resample_arclength(u.curve, 200) - v.curve).max() for u, v in zip(t.nodes(), back.nodes()))
    assert gap <= 1e-3 * t.total_length


def test_to_from_srvft_reproduces_q(y_tree):
    Q = to_srvft(normalize(y_tree), 100)
    Q2 = to_srvft(from_srvft(Q), 100)
    gap = max(np.abs(a.q - b.q).max() for a, b in zip(Q.nodes(), Q2.nodes()))
    assert gap <= 1e-6


def test_from_srvft_child_origin_on_trunk():
    q = np.tile([1.0, 0, 0], (11, 1))
    Q = SrvfTree(SrvfNode(q, (SrvfNode(np.tile([0, 1.0, 0], (11, 1)), (), 0.5),)))
    T = from_srvft(Q)
    np.testing.assert_allclose(T.root.children[0].curve[0], [0.5, 0, 0], atol=1e-15)


def test_from_srvft_all_null_is_point():
    z = np.zeros((5, 3))
    T = from_srvft(SrvfTree(SrvfNode(z, (SrvfNode(z, (), 0.3, True),), 0.0, True)))
    assert all(np.all(n.curve == 0) for n in T.nodes())


# ---------------------------------------------------------------- padding


def fan(attaches, n=10, offset=0.0):
    kids = tuple(SrvfNode(np.full((n, 3), k + 1.0 + offset), (), s) for k, s in enumerate(attaches))
    return SrvfTree(SrvfNode(np.ones((n, 3)), kids))


def test_pad_identity_matching_changes_nothing(y_tree):
    Q = to_srvft(y_tree, 10)
    p1, p2 = pad_to_union(Q, Q, NodeMatch.identity(Q.root))
    assert np.array_equal(vectorize(p1), vectorize(Q)) and np.array_equal(vectorize(p2), vectorize(Q))


def test_pad_bare_trunk_gains_null_child():
    full, bare = fan([0.4]), fan([])
    p1, p2 = pad_to_union(full, bare)
    assert p1.topology_id == p2.topology_id == "(())"
    child = p2.root.children[0]
    assert child.is_null and child.attach_s == 0.4 and not np.any(child.q)


def test_pad_disjoint_children_to_union():
    p1, p2 = pad_to_union(fan([0.2, 0.6]), fan([0.3, 0.5, 0.9]), NodeMatch())
    assert len(p1.root.children) == len(p2.root.children) == 5
    assert p1.topology_id == p2.topology_id
    assert [c.attach_s for c in p1.root.children] == [c.attach_s for c in p2.root.children]
    assert sum(c.is_null for c in p1.root.children) == 3
    assert sum(c.is_null for c in p2.root.children) == 2


def test_pad_is_idempotent():
    p1, p2 = pad_to_union(fan([0.2, 0.6]), fan([0.3, 0.5, 0.9]), NodeMatch())
    r1, r2 = pad_to_union(p1, p2, NodeMatch.identity(p1.root, p2.root))
    assert np.array_equal(vectorize(r1), vectorize(p1)) and np.array_equal(vectorize(r2), vectorize(p2))


def test_pad_rejects_non_injective_matching():
    m = NodeMatch(((0, 0, None), (1, 0, None)))
    with pytest.raises(ValidationError, match="injective"):
        pad_to_union(fan([0.2, 0.6]), fan([0.3]), m)


# ---------------------------------------------------------------- vectors


def test_vector_dimension_single_branch():
    t = build_tree([{"id": "a", "parent": None, "points": line([0, 0, 0], [1, 0, 0])}])
    assert vectorize(to_srvft(t, 50)).size == 151


@given(seeds)
def test_vectorize_round_trip_exact(seed):
    Q = to_srvft(synth_tree(seed), 12)
    v = vectorize(Q)
    R = devectorize(v, Q.topology_id)
    assert R.topology_id == Q.topology_id
    assert np.array_equal(vectorize(R), v)
    for a, b in zip(Q.nodes(), R.nodes()):
        assert np.array_equal(a.q, b.q) and a.attach_s == b.attach_s


def test_isomorphic_trees_share_dimension():
    a = to_srvft(build_tree(y_records()), 20)
    b = to_srvft(build_tree(shift(y_records(), [1, 0, 0])), 20)
    assert vectorize(a).size == vectorize(b).size == a.dimension


def test_devectorize_dimension_mismatch():
    with pytest.raises(ValidationError, match="does not fit"):
        devectorize(np.zeros(150), "(())")


def test_topology_parse_round_trip():
    assert parse_topology("((),(()))") == [[], [[]]]
    with pytest.raises(ValidationError):
        parse_topology("(()")


def test_fan_helper_mismatched_topology_raises():
    with pytest.raises(TopologyMismatchError, match="pad"):
        tree_distance_fixed(fan([0.1]), fan([]))
