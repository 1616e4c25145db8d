"""JSON artifacts (skeletons, sequence manifests, reports) and CSV statistics.

Every document carries a versioned ``"schema"`` tag. Floats are written with
Python's shortest round-trip representation, so a save/load cycle is exact.
Schema violations raise :class:`ValidationError` whose ``pointer`` is a JSON
pointer (RFC 6901) to the offending field.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
import statistics
import warnings
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .registration import MetricWeights, RegistrationResult, apply_registration
from .tree import NodeMatch, SrvfTree, TreeShape, build_tree, tree_records

__all__ = [
    "SKELETON_SCHEMA",
    "SEQUENCE_SCHEMA",
    "REPORT_SCHEMA",
    "parse_skeleton",
    "skeleton_document",
    "load_skeleton",
    "save_skeleton",
    "load_sequence",
    "save_sequence",
    "read_json",
    "write_json",
    "matching_to_dict",
    "matching_from_dict",
    "registration_report",
    "recompute_distance",
    "stats_rows",
    "export_stats",
]

SKELETON_SCHEMA = "elastictree/skeleton@1"
SEQUENCE_SCHEMA = "elastictree/sequence@1"
REPORT_SCHEMA = "elastictree/registration-report@1"


def _escape(token):
    return str(token).replace("~", "~0").replace("/", "~1")


def _fail(message, *path, branch_id=None):
    pointer = "".join("/" + _escape(p) for p in path)
    raise ValidationError(f"{message} (at {pointer or '/'})", branch_id=branch_id, pointer=pointer)


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(data, path):
    """Write ``data`` as indented JSON, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(data, indent=1, default=_default, allow_nan=True) + "\n"
    path.write_text(text, encoding="utf-8")
    return path


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})", pointer="") from exc
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from exc


# ---------------------------------------------------------------- skeletons


def _check_points(points, i):
    if not isinstance(points, list) or len(points) < 2:
        _fail("points must be a list of at least 2 [x, y, z] triples", "branches", i, "points")
    for r, row in enumerate(points):
        if not isinstance(row, list) or len(row) != 3:
            _fail("expected an [x, y, z] triple", "branches", i, "points", r)
        for c, x in enumerate(row):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
                _fail(f"coordinate {x!r} is not a finite number", "branches", i, "points", r, c)


def parse_skeleton(doc) -> TreeShape:
    """Validate a skeleton document and build the tree it describes."""
    if not isinstance(doc, dict):
        _fail("skeleton document must be a JSON object")
    if doc.get("schema") != SKELETON_SCHEMA:
        _fail(f"schema must be {SKELETON_SCHEMA!r}, got {doc.get('schema')!r}", "schema")
    for key in ("name", "units"):
        if not isinstance(doc.get(key, ""), str):
            _fail(f"{key} must be a string", key)
    time = doc.get("time")
    if time is not None and (isinstance(time, bool) or not isinstance(time, (int, float))):
        _fail("time must be a number or null", "time")
    branches = doc.get("branches")
    if not isinstance(branches, list) or not branches:
        _fail("branches must be a non-empty list", "branches")
    index = {}
    records = []
    for i, b in enumerate(branches):
        if not isinstance(b, dict):
            _fail("branch must be an object", "branches", i)
        bid = b.get("id")
        if isinstance(bid, bool) or not isinstance(bid, (str, int)):
            _fail("id must be a string or integer", "branches", i, "id")
        bid = str(bid)
        if bid in index:
            _fail(f"duplicate branch id {bid!r}", "branches", i, "id", branch_id=bid)
        index[bid] = i
        parent = b.get("parent")
        if parent is not None:
            if isinstance(parent, bool) or not isinstance(parent, (str, int)):
                _fail("parent must be a branch id or null", "branches", i, "parent")
            parent = str(parent)
            s = b.get("attach_s")
            if isinstance(s, bool) or not isinstance(s, (int, float)) or not 0.0 <= s <= 1.0:
                _fail(f"attach_s must be a number in [0, 1], got {s!r}", "branches", i, "attach_s",
                      branch_id=bid)
        _check_points(b.get("points"), i)
        records.append({"id": bid, "parent": parent, "attach_s": b.get("attach_s"),
                        "points": b["points"]})
    roots = [r["id"] for r in records if r["parent"] is None]
    if len(roots) != 1:
        listed = ", ".join(repr(r) for r in roots) or "none"
        where = ("branches", index[roots[1]], "parent") if roots else ("branches",)
        _fail(f"expected exactly one root branch, found {len(roots)}: {listed}", *where,
              branch_id=roots or None)
    for r in records:
        if r["parent"] is not None and r["parent"] not in index:
            _fail(f"unknown parent {r['parent']!r}", "branches", index[r["id"]], "parent",
                  branch_id=r["id"])
    try:
        return build_tree(records, name=doc.get("name", ""), time=time, units=doc.get("units", ""))
    except ValidationError as exc:
        bid = exc.branch_id
        if isinstance(bid, str) and bid in index:
            raise ValidationError(str(exc), branch_id=bid,
                                  pointer=f"/branches/{index[bid]}") from exc
        raise


def skeleton_document(tree: TreeShape):
    doc = {"schema": SKELETON_SCHEMA, "name": tree.name, "units": tree.units}
    if tree.time is not None:
        doc["time"] = float(tree.time)
    doc["branches"] = tree_records(tree)
    return doc


def load_skeleton(path) -> TreeShape:
    try:
        return parse_skeleton(read_json(path))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}", exc.branch_id, exc.pointer) from exc


def save_skeleton(tree: TreeShape, path):
    return write_json(skeleton_document(tree), path)


# ---------------------------------------------------------------- sequences


def load_sequence(path):
    """Frames, times and name of a sequence manifest.

    Frame files are resolved relative to the manifest's directory. Each
    frame's ``time`` overrides any time stored in the skeleton file.
    """
    path = Path(path)
    doc = read_json(path)
    try:
        if not isinstance(doc, dict) or doc.get("schema") != SEQUENCE_SCHEMA:
            _fail(f"schema must be {SEQUENCE_SCHEMA!r}", "schema")
        frames = doc.get("frames")
        if not isinstance(frames, list) or len(frames) < 2:
            _fail("a sequence needs at least 2 frames", "frames")
        times = []
        for i, f in enumerate(frames):
            if not isinstance(f, dict):
                _fail("frame must be an object", "frames", i)
            t = f.get("time")
            if isinstance(t, bool) or not isinstance(t, (int, float)) or not math.isfinite(t):
                _fail("time must be a finite number", "frames", i, "time")
            if times and t <= times[-1]:
                _fail(f"times must be strictly increasing ({t} after {times[-1]})", "frames", i, "time")
            if not isinstance(f.get("file"), str):
                _fail("file must be a path string", "frames", i, "file")
            times.append(float(t))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}", exc.branch_id, exc.pointer) from exc
    trees = []
    for f, t in zip(frames, times):
        tree = load_skeleton(path.parent / f["file"])
        trees.append(TreeShape(tree.root, tree.name, t, tree.units))
    return trees, np.array(times), doc.get("name", path.stem)


def save_sequence(frames, directory, name="sequence", times=None):
    """Write one skeleton per frame plus ``<name>.manifest.json`` into ``directory``."""
    directory = Path(directory)
    if times is None:
        times = [f.time if f.time is not None else i for i, f in enumerate(frames)]
    entries = []
    for i, (tree, t) in enumerate(zip(frames, times)):
        fname = f"{name}_{i:03d}.json"
        save_skeleton(TreeShape(tree.root, tree.name or f"{name}-{i}", float(t), tree.units),
                      directory / fname)
        entries.append({"time": float(t), "file": fname})
    return write_json({"schema": SEQUENCE_SCHEMA, "name": name, "frames": entries},
                      directory / f"{name}.manifest.json")


# ---------------------------------------------------------------- reports


def matching_to_dict(match: NodeMatch):
    return {
        "gamma": None if match.gamma is None else np.asarray(match.gamma).tolist(),
        "children": [
            {"source": None if i is None else int(i), "target": None if j is None else int(j),
             "match": None if sub is None else matching_to_dict(sub)}
            for i, j, sub in match.pairs
        ],
    }


def matching_from_dict(data) -> NodeMatch:
    gamma = data.get("gamma")
    pairs = tuple(
        (c["source"], c["target"], None if c.get("match") is None else matching_from_dict(c["match"]))
        for c in data.get("children", [])
    )
    return NodeMatch(pairs, None if gamma is None else np.asarray(gamma, dtype=float))


def registration_report(result: RegistrationResult, extra=None):
    """JSON-ready summary of a registration, complete enough to recompute it."""
    doc = {
        "schema": REPORT_SCHEMA,
        "distance": float(result.distance),
        "terms": {k: float(v) for k, v in result.terms.items()},
        "weights": list(result.weights.as_tuple()),
        "rotation": result.rotation.tolist(),
        "iterations": int(result.iterations),
        "history": [float(h) for h in result.history],
        "correspondences": [{"source": a, "target": b} for a, b, _ in result.correspondences()],
        "matching": matching_to_dict(result.matching),
    }
    if extra:
        doc.update(extra)
    return doc


def recompute_distance(report, Q1: SrvfTree, Q2: SrvfTree):
    """Distance obtained by re-applying a report's matching, rotation and warps."""
    w = MetricWeights(*report["weights"])
    return apply_registration(Q1, Q2, matching_from_dict(report["matching"]),
                              np.asarray(report["rotation"], dtype=float), w)[2]


# ---------------------------------------------------------------- statistics


def stats_rows(records):
    """``(condition, mean, median, std)`` per condition, in first-seen order.

    ``records`` are ``(condition, value)`` pairs or a mapping from condition
    to values. ``std`` is the sample standard deviation (NaN for one value).
    Conditions without values are skipped with a warning.
    """
    groups = {}
    if isinstance(records, dict):
        for cond, values in records.items():
            groups.setdefault(str(cond), []).extend(float(v) for v in values)
    else:
        for cond, value in records:
            groups.setdefault(str(cond), []).append(float(value))
    rows = []
    for cond, values in groups.items():
        if not values:
            warnings.warn(f"condition {cond!r} has no values; omitted", stacklevel=2)
            continue
        std = statistics.stdev(values) if len(values) > 1 else math.nan
        rows.append((cond, statistics.fmean(values), statistics.median(values), std))
    return rows


def export_stats(records, path=None):
    """CSV with columns ``condition, mean, median, std``; written to ``path`` if given.

    Returns the CSV text.
    """
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["condition", "mean", "median", "std"])
    for cond, mean, median, std in stats_rows(records):
        writer.writerow([cond, repr(mean), repr(median), repr(std)])
    text = buf.getvalue()
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
