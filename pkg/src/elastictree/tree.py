"""Tree-shaped skeletons, their SRVF trees, null-branch padding and flat vectors.

A :class:`TreeShape` is a main branch with subtrees hanging off it at
arc-length parameters ``attach_s`` in [0, 1], recursively. Its image under the
per-branch SRVF map is an :class:`SrvfTree`. Two SRVF trees can be compared
linearly only once they share a branch hierarchy, which :func:`pad_to_union`
achieves by inserting zero-length (null) branches.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional

import numpy as np

from .curves import curve_length, inverse_srvf, resample_arclength, srvf
from .errors import TopologyMismatchError, ValidationError

DEFAULT_SAMPLES = 50


def _frozen_array(values, ndim=2):
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ValidationError(f"expected a {ndim}-D array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BranchNode:
    curve: np.ndarray
    children: tuple = ()
    attach_s: float = 0.0
    layer: int = 0
    is_null: bool = False
    label: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "curve", _frozen_array(self.curve))
        object.__setattr__(self, "children", tuple(self.children))

    @property
    def length(self):
        return curve_length(self.curve)


@dataclass(frozen=True, eq=False)
class TreeShape:
    root: BranchNode
    name: str = ""
    time: Optional[float] = None
    units: str = ""

    def nodes(self) -> Iterator[BranchNode]:
        return iter_nodes(self.root)

    @property
    def total_length(self):
        return sum(node.length for node in self.nodes())

    @property
    def n_branches(self):
        return sum(1 for _ in self.nodes())

    @property
    def topology_id(self):
        return topology_of(self.root)


@dataclass(frozen=True, eq=False)
class SrvfNode:
    q: np.ndarray
    children: tuple = ()
    attach_s: float = 0.0
    is_null: bool = False
    label: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "q", _frozen_array(self.q))
        object.__setattr__(self, "children", tuple(self.children))


@dataclass(frozen=True, eq=False)
class SrvfTree:
    root: SrvfNode
    name: str = ""
    time: Optional[float] = None

    @property
    def topology_id(self):
        return topology_of(self.root)

    @property
    def n_samples(self):
        return len(self.root.q)

    @property
    def dimension(self):
        return sum(node.q.size + 1 for node in self.nodes())

    def nodes(self) -> Iterator[SrvfNode]:
        return iter_nodes(self.root)


def iter_nodes(node):
    """Depth-first pre-order traversal."""
    stack = [node]
    while stack:
        current = stack.pop()
        yield current
        stack.extend(reversed(current.children))


def iter_with_depth(node, depth=0):
    yield node, depth
    for child in node.children:
        yield from iter_with_depth(child, depth + 1)


def topology_of(node):
    """Parenthesized depth-first encoding of the branch hierarchy."""
    return "(" + ",".join(topology_of(child) for child in node.children) + ")"


def parse_topology(topology_id):
    """Inverse of :func:`topology_of`: nested lists of child structures."""
    pos = 0

    def parse():
        nonlocal pos
        if topology_id[pos] != "(":
            raise ValidationError(f"malformed topology id at offset {pos}: {topology_id!r}")
        pos += 1
        kids = []
        while topology_id[pos] != ")":
            kids.append(parse())
            if topology_id[pos] == ",":
                pos += 1
        pos += 1
        return kids

    try:
        tree = parse()
    except IndexError:
        raise ValidationError(f"malformed topology id {topology_id!r}") from None
    if pos != len(topology_id):
        raise ValidationError(f"trailing characters in topology id {topology_id!r}")
    return tree


# ---------------------------------------------------------------- building


def _subtree_length(node):
    return sum(n.length for n in iter_nodes(node))


def _canonical(children):
    order = sorted(
        range(len(children)),
        key=lambda k: (children[k].attach_s, -_subtree_length(children[k]), k),
    )
    return tuple(children[k] for k in order)


def build_tree(records: Iterable[dict], name="", time=None, units="") -> TreeShape:
    """Assemble a tree from flat branch records.

    Each record has ``id``, ``parent`` (``None`` for the root), ``attach_s``
    (ignored for the root) and ``points``. Children are put in canonical order
    (ascending ``attach_s``, then longer subtree first, then input order) and
    layers are assigned from the root.
    """
    records = list(records)
    by_id = {}
    for rec in records:
        bid = rec.get("id")
        if bid in by_id:
            raise ValidationError(f"duplicate branch id {bid!r}", branch_id=bid)
        by_id[bid] = rec
    roots = [r["id"] for r in records if r.get("parent") is None]
    if len(roots) != 1:
        ids = ", ".join(repr(r) for r in roots) or "none"
        raise ValidationError(f"expected exactly one root branch, found {len(roots)}: {ids}",
                              branch_id=roots or None)
    kids = {bid: [] for bid in by_id}
    for rec in records:
        parent = rec.get("parent")
        if parent is None:
            continue
        if parent not in by_id:
            raise ValidationError(f"branch {rec['id']!r} references unknown parent {parent!r}",
                                  branch_id=rec["id"])
        s = rec.get("attach_s")
        if s is None or not np.isfinite(s) or not 0.0 <= s <= 1.0:
            raise ValidationError(f"branch {rec['id']!r} has attach_s={s!r} outside [0, 1]",
                                  branch_id=rec["id"])
        kids[parent].append(rec["id"])

    seen = set()

    def make(bid, layer, path):
        if bid in path:
            raise ValidationError(f"cycle through branch {bid!r}", branch_id=bid)
        seen.add(bid)
        rec = by_id[bid]
        pts = np.asarray(rec["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
            raise ValidationError(f"branch {bid!r} needs at least 2 points in 3D", branch_id=bid)
        if not np.all(np.isfinite(pts)):
            raise ValidationError(f"branch {bid!r} has non-finite coordinates", branch_id=bid)
        children = [make(c, layer + 1, path | {bid}) for c in kids[bid]]
        s = 0.0 if rec.get("parent") is None else float(rec["attach_s"])
        null = bool(rec.get("is_null", False)) or curve_length(pts) == 0.0
        return BranchNode(pts, _canonical(children), s, layer, null, str(bid))

    root = make(roots[0], 0, frozenset())
    orphans = set(by_id) - seen
    if orphans:
        bid = sorted(map(str, orphans))[0]
        raise ValidationError(f"branch {bid!r} is not reachable from the root (cycle)", branch_id=bid)
    tree = TreeShape(root, name=name, time=time, units=units)
    validate_tree(tree)
    return tree


def tree_records(tree: TreeShape):
    """Flat branch records of ``tree`` (inverse of :func:`build_tree`)."""
    out = []
    counter = 0

    def walk(node, parent):
        nonlocal counter
        bid = node.label if node.label is not None else f"b{counter}"
        counter += 1
        out.append({
            "id": bid,
            "parent": parent,
            "attach_s": None if parent is None else float(node.attach_s),
            "points": node.curve.tolist(),
        })
        for child in node.children:
            walk(child, bid)

    walk(tree.root, None)
    return out


def validate_tree(tree: TreeShape):
    """Raise :class:`ValidationError` unless ``tree`` satisfies the invariants."""

    def check(node, layer, parent_null):
        bid = node.label
        if not (0.0 <= node.attach_s <= 1.0) or not np.isfinite(node.attach_s):
            raise ValidationError(f"branch {bid!r}: attach_s {node.attach_s} outside [0, 1]", branch_id=bid)
        if node.curve.ndim != 2 or node.curve.shape[1] != 3 or len(node.curve) < 2:
            raise ValidationError(f"branch {bid!r}: curve must be (N >= 2, 3)", branch_id=bid)
        if not np.all(np.isfinite(node.curve)):
            raise ValidationError(f"branch {bid!r}: non-finite geometry", branch_id=bid)
        if node.layer != layer:
            raise ValidationError(f"branch {bid!r}: layer {node.layer}, expected {layer}", branch_id=bid)
        if parent_null and not node.is_null:
            raise ValidationError(f"branch {bid!r}: real branch below a null branch", branch_id=bid)
        length = node.length
        if node.is_null and length != 0.0:
            raise ValidationError(f"branch {bid!r}: null branch with positive length", branch_id=bid)
        if not node.is_null and length <= 0.0:
            raise ValidationError(f"branch {bid!r}: zero-length branch not flagged null", branch_id=bid)
        for child in node.children:
            check(child, layer + 1, node.is_null)

    check(tree.root, 0, False)
    return tree


def normalize(tree: TreeShape, unit_scale=False) -> TreeShape:
    """Translate the root start to the origin; optionally scale to unit total length."""
    shift = tree.root.curve[0].copy()
    scale = 1.0
    if unit_scale:
        total = tree.total_length
        if total > 0:
            scale = 1.0 / total

    def move(node):
        return replace(node, curve=(node.curve - shift) * scale,
                       children=tuple(move(c) for c in node.children))

    return replace(tree, root=move(tree.root))


# ---------------------------------------------------------------- SRVF trees


def to_srvft(tree: TreeShape, n=DEFAULT_SAMPLES) -> SrvfTree:
    """Resample every branch to ``n`` points and take its SRVF."""

    def conv(node):
        if node.is_null:
            q = np.zeros((n, 3))
        else:
            q = srvf(resample_arclength(node.curve, n))
        return SrvfNode(q, tuple(conv(c) for c in node.children), float(node.attach_s),
                        node.is_null, node.label)

    return SrvfTree(conv(tree.root), name=tree.name, time=tree.time)


def point_at(curve, s):
    """Point of a uniformly sampled curve at parameter ``s`` in [0, 1]."""
    n = len(curve)
    pos = float(np.clip(s, 0.0, 1.0)) * (n - 1)
    i0 = min(int(np.floor(pos)), n - 2)
    f = pos - i0
    return curve[i0] * (1.0 - f) + curve[i0 + 1] * f


def from_srvft(Q: SrvfTree, units="") -> TreeShape:
    """Integrate every branch back to 3D, hanging children at their ``attach_s``."""

    def conv(node, origin, layer, parent_null):
        curve = inverse_srvf(node.q, origin)
        # a q too small to move the curve away from its origin is a null branch
        null = parent_null or node.is_null or curve_length(curve) == 0.0
        if null:
            curve = np.repeat(np.asarray(origin, dtype=float)[None], len(node.q), axis=0)
        children = tuple(conv(c, point_at(curve, c.attach_s), layer + 1, null) for c in node.children)
        return BranchNode(curve, children, float(node.attach_s), layer, null, node.label)

    return TreeShape(conv(Q.root, np.zeros(3), 0, False), name=Q.name, time=Q.time, units=units)


def null_like(node: SrvfNode, attach_s=None) -> SrvfNode:
    """All-null copy of a subtree's hierarchy (zero SRVFs, same attach_s)."""
    s = node.attach_s if attach_s is None else attach_s
    return SrvfNode(np.zeros_like(node.q), tuple(null_like(c) for c in node.children),
                    float(s), True, None)


# ---------------------------------------------------------------- padding


@dataclass(frozen=True, eq=False)
class NodeMatch:
    """Correspondence between the children of two matched nodes.

    ``pairs`` holds ``(i, j, sub)`` triples: child ``i`` of the first node
    matched to child ``j`` of the second, with ``sub`` the matching one level
    down. ``i`` or ``j`` is ``None`` for a child paired with an inserted null
    branch. ``gamma`` is the warp applied to the second node's own branch.
    """

    pairs: tuple = ()
    gamma: Optional[np.ndarray] = field(default=None)

    @classmethod
    def identity(cls, node1, node2=None):
        node2 = node1 if node2 is None else node2
        if len(node1.children) != len(node2.children):
            raise TopologyMismatchError("identity matching needs equal child counts")
        return cls(tuple((k, k, cls.identity(a, b))
                         for k, (a, b) in enumerate(zip(node1.children, node2.children))))

    def real_pairs(self):
        return [(i, j, sub) for i, j, sub in self.pairs if i is not None and j is not None]


def _complete_pairs(n0, n1, match):
    """Every child of both nodes exactly once, ordered by attachment parameter."""
    pairs = [] if match is None else list(match.pairs)
    used0, used1 = set(), set()
    for i, j, _ in pairs:
        if i is not None:
            if i in used0 or not 0 <= i < len(n0.children):
                raise ValidationError(f"matching is not injective or out of range on child {i} (side 0)")
            used0.add(i)
        if j is not None:
            if j in used1 or not 0 <= j < len(n1.children):
                raise ValidationError(f"matching is not injective or out of range on child {j} (side 1)")
            used1.add(j)
    full = [p for p in pairs if p[0] is not None or p[1] is not None]
    full += [(i, None, None) for i in range(len(n0.children)) if i not in used0]
    full += [(None, j, None) for j in range(len(n1.children)) if j not in used1]

    def key(p):
        i, j, _ = p
        s = n0.children[i].attach_s if i is not None else n1.children[j].attach_s
        return (s, i is None, -1 if i is None else i, -1 if j is None else j)

    return sorted(full, key=key)


def _rebuild(node, n0, n1, match, side):
    """Padded copy of ``node``, which has the hierarchy of ``(n0, n1)[side]``."""
    mine_ref = n0 if side == 0 else n1
    other_node = n1 if side == 0 else n0
    children = []
    for i, j, sub in _complete_pairs(n0, n1, match):
        mine, other = (i, j) if side == 0 else (j, i)
        if mine is None:
            partner = other_node.children[other]
            children.append(null_like(partner, partner.attach_s))
        elif other is None:
            children.append(node.children[mine])
        else:
            c_ref = mine_ref.children[mine]
            partner = other_node.children[other]
            c0, c1 = (c_ref, partner) if side == 0 else (partner, c_ref)
            child = _rebuild(node.children[mine], c0, c1, sub, side)
            if child.is_null and not partner.is_null:
                # a null branch follows its real partner along the parent
                child = replace(child, attach_s=partner.attach_s)
            children.append(child)
    return replace(node, children=tuple(children))


def apply_padding(Q: SrvfTree, tree0: SrvfTree, tree1: SrvfTree, matching: NodeMatch, side) -> SrvfTree:
    """Pad ``Q`` the way ``(tree0, tree1)[side]`` is padded under ``matching``.

    ``Q`` must share the topology of the tree on that side; its own content is
    kept. This is how padding discovered on one frame is propagated to the
    other frames of a sequence.
    """
    ref = tree0 if side == 0 else tree1
    if Q.topology_id != ref.topology_id:
        raise TopologyMismatchError("padding can only be propagated across equal topologies")
    return replace(Q, root=_rebuild(Q.root, tree0.root, tree1.root, matching, side))


def pad_to_union(Q1: SrvfTree, Q2: SrvfTree, matching: Optional[NodeMatch] = None):
    """Insert null branches so both trees share one hierarchy.

    Children of the outputs correspond position by position. Unmatched
    branches on either side get an all-null partner whose ``attach_s`` copies
    the real branch's.
    """
    if Q1.n_samples != Q2.n_samples:
        raise ValidationError("trees use different samples per branch")
    p1 = _rebuild(Q1.root, Q1.root, Q2.root, matching, 0)
    p2 = _rebuild(Q2.root, Q1.root, Q2.root, matching, 1)
    return replace(Q1, root=p1), replace(Q2, root=p2)


# ---------------------------------------------------------------- flat vectors


def vectorize(Q: SrvfTree) -> np.ndarray:
    """Depth-first concatenation of every node's SRVF samples and ``attach_s``."""
    parts = []
    for node in Q.nodes():
        parts.append(node.q.ravel())
        parts.append([node.attach_s])
    return np.concatenate(parts)


def devectorize(v, topology, name="", time=None) -> SrvfTree:
    """Rebuild an SRVF tree from a flat vector.

    ``topology`` is a topology id string, or an :class:`SrvfTree` whose
    hierarchy and branch labels are reused. Nodes whose SRVF is identically
    zero are flagged null.
    """
    v = np.asarray(v, dtype=float)
    template = topology if isinstance(topology, SrvfTree) else None
    topo = template.topology_id if template is not None else topology
    shape = parse_topology(topo)
    n_nodes = _count(shape)
    per_node, rem = divmod(v.size, n_nodes)
    if rem or (per_node - 1) % 3 or per_node < 7:
        raise ValidationError(f"vector of length {v.size} does not fit topology {topo!r}")
    n = (per_node - 1) // 3
    pos = 0

    def build(kids, tmpl):
        nonlocal pos
        q = v[pos:pos + 3 * n].reshape(n, 3)
        s = float(v[pos + 3 * n])
        pos += per_node
        tmpl_kids = tmpl.children if tmpl is not None else [None] * len(kids)
        children = tuple(build(k, t) for k, t in zip(kids, tmpl_kids))
        return SrvfNode(q, children, s, not np.any(q), None if tmpl is None else tmpl.label)

    root = build(shape, None if template is None else template.root)
    return SrvfTree(root, name=name, time=time)


def _count(shape):
    return 1 + sum(_count(k) for k in shape)
