"""Corpus evaluation: spatial, cycle-consistency and temporal suites.

A corpus is a directory of sequence manifests. ``corpus.json`` (schema
``elastictree/corpus@1``) lists the ``{"source", "target"}`` manifest pairs;
without it, sorted manifests are paired as (1st, 2nd), (3rd, 4th), ...

Each pair is evaluated independently, optionally in worker processes, and the
per-pair values are gathered in input order before export, so the CSV does not
depend on the number of jobs.
"""
from __future__ import annotations

import math
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ValidationError
from .io import export_stats, load_sequence, read_json, save_sequence, write_json
from .registration import CYCLE_EPSILONS, cycle_consistency_error, naive_distance, register_pair
from .subspace import normalize_times
from .synth import GrowthSpec, TreeSpec, synth_growth, synth_time_warp
from .temporal import cross_sequence_register
from .tree import TreeShape, normalize, to_srvft

__all__ = [
    "CORPUS_SCHEMA",
    "SUITES",
    "CORPUS_KINDS",
    "corpus_pairs",
    "evaluate_pair",
    "evaluate_corpus",
    "write_corpus",
]

CORPUS_SCHEMA = "elastictree/corpus@1"
SUITES = ("spatial", "cycle", "temporal")
CORPUS_KINDS = ("warped", "corresponded", "identical", "different")


def corpus_pairs(directory):
    """``(source, target)`` manifest paths of a corpus, in a fixed order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"corpus directory {directory} does not exist")
    index = directory / "corpus.json"
    if index.exists():
        doc = read_json(index)
        if doc.get("schema") != CORPUS_SCHEMA:
            raise ValidationError(f"{index}: schema must be {CORPUS_SCHEMA!r}", pointer="/schema")
        pairs = []
        for i, p in enumerate(doc.get("pairs", [])):
            if not isinstance(p, dict) or not all(isinstance(p.get(k), str) for k in ("source", "target")):
                raise ValidationError(f"{index}: pair needs source and target paths",
                                      pointer=f"/pairs/{i}")
            pairs.append((directory / p["source"], directory / p["target"]))
    else:
        manifests = sorted(directory.glob("*.manifest.json"))
        if len(manifests) % 2:
            raise ValidationError(f"{directory}: odd number of manifests and no corpus.json to pair them")
        pairs = list(zip(manifests[0::2], manifests[1::2]))
    if not pairs:
        raise ValidationError(f"corpus {directory} holds no sequence pairs")
    return pairs


def _frame_pairs(times_a, times_b):
    """For each frame of A, the frame of B closest in normalized time."""
    ta, tb = normalize_times(times_a), normalize_times(times_b)
    return [(i, int(np.argmin(np.abs(tb - t)))) for i, t in enumerate(ta)]


def _unit_diagonal(tree: TreeShape) -> TreeShape:
    pts = np.vstack([n.curve for n in tree.nodes()])
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    tree = normalize(tree)
    if diag == 0.0:
        return tree

    def scale(node):
        return replace(node, curve=node.curve / diag, children=tuple(scale(c) for c in node.children))

    return replace(tree, root=scale(tree.root))


def _spatial(A, ta, B, tb, cfg: RunConfig):
    w = cfg.metric
    before = after = 0.0
    pairs = _frame_pairs(ta, tb)
    for i, j in pairs:
        Q1 = to_srvft(normalize(A[i], cfg.scale_normalize), cfg.samples)
        Q2 = to_srvft(normalize(B[j], cfg.scale_normalize), cfg.samples)
        before += naive_distance(Q1, Q2, w)
        after += register_pair(Q1, Q2, w, max_iter=cfg.max_iter, rel_tol=cfg.rel_tol,
                               refine_warps=cfg.refine).distance
    # root mean square over frames of the elastic tree distance
    return {"before": math.sqrt(before / len(pairs)), "after": math.sqrt(after / len(pairs))}


def _cycle(A, ta, B, tb, cfg: RunConfig):
    w = cfg.metric
    opts = dict(max_iter=cfg.max_iter, rel_tol=cfg.rel_tol, refine_warps=cfg.refine)
    totals = np.zeros(len(CYCLE_EPSILONS))
    pairs = _frame_pairs(ta, tb)
    for i, j in pairs:
        T1, T2 = _unit_diagonal(A[i]), _unit_diagonal(B[j])
        Q1, Q2 = to_srvft(T1, cfg.samples), to_srvft(T2, cfg.samples)
        r12 = register_pair(Q1, Q2, w, **opts)
        r21 = register_pair(Q2, Q1, w, **opts)
        totals += cycle_consistency_error(T1, T2, r12, r21, list(CYCLE_EPSILONS))
    return {f"eps={e:g}": float(v) for e, v in zip(CYCLE_EPSILONS, totals / len(pairs))}


def _temporal(A, ta, B, tb, cfg: RunConfig):
    res = cross_sequence_register(
        A, B, ta, tb, cfg.metric, cfg.samples, cfg.grid, cfg.pca_var, cfg.k_max,
        per_time=cfg.per_time, refine=cfg.refine, literal=cfg.literal,
        unit_scale=cfg.scale_normalize, decode=False)
    return {"before": res.before, "after": res.after}


_SUITE_FUNCS = {"spatial": _spatial, "cycle": _cycle, "temporal": _temporal}


def evaluate_pair(suite, source, target, cfg: RunConfig):
    """Per-condition values for one manifest pair."""
    if suite not in _SUITE_FUNCS:
        raise ValidationError(f"unknown suite {suite!r}; choose one of {', '.join(SUITES)}")
    try:
        A, ta, _ = load_sequence(source)
        B, tb, _ = load_sequence(target)
        return _SUITE_FUNCS[suite](A, ta, B, tb, cfg)
    except ValidationError as exc:
        raise ValidationError(f"{suite} suite, pair {Path(source).name} / {Path(target).name}: {exc}",
                              exc.branch_id, exc.pointer) from exc


def _task(args):
    suite, source, target, cfg_dict = args
    return evaluate_pair(suite, source, target, RunConfig.from_dict(cfg_dict))


def evaluate_corpus(suite, directory, cfg: RunConfig = RunConfig(), out=None):
    """Evaluate every pair of a corpus; returns ``(rows, csv_text)``.

    ``rows`` holds one dict per pair (source, target and the suite's
    conditions). With ``out`` the CSV goes to ``<out>/eval_<suite>.csv`` and the
    per-pair values to ``<out>/eval_<suite>_pairs.json``.
    """
    if suite not in SUITES:
        raise ValidationError(f"unknown suite {suite!r}; choose one of {', '.join(SUITES)}")
    pairs = corpus_pairs(directory)
    tasks = [(suite, str(a), str(b), cfg.to_dict()) for a, b in pairs]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(tasks))) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    rows = [{"source": Path(a).name, "target": Path(b).name, **r} for (a, b), r in zip(pairs, results)]
    records = [(cond, value) for r in results for cond, value in r.items()]
    order = list(results[0])
    records.sort(key=lambda cv: order.index(cv[0]))
    text = export_stats(records)
    if out is not None:
        out = Path(out)
        export_stats(records, out / f"eval_{suite}.csv")
        write_json({"suite": suite, "pairs": rows}, out / f"eval_{suite}_pairs.json")
    return rows, text


# ---------------------------------------------------------------- corpora


def write_corpus(directory, kind="warped", count=10, frames=None, seed=0, spec: TreeSpec = TreeSpec(),
                 strength=0.5):
    """Write a synthetic evaluation corpus of ``count`` sequence pairs.

    ``warped``: the same plant, the target captured on a randomly warped
    growth clock but labeled with uniform times.
    ``corresponded``: the same plant, the target captured half a frame later,
    so every frame pair is a growth step with known branch correspondence.
    ``identical``: source and target are the same manifest.
    ``different``: independent plants.
    """
    if kind not in CORPUS_KINDS:
        raise ValidationError(f"unknown corpus kind {kind!r}; choose one of {', '.join(CORPUS_KINDS)}")
    if count < 1:
        raise ValidationError("corpus needs at least one pair")
    frames = frames or (30 if kind == "warped" else 6)
    growth = GrowthSpec(start_fraction=0.02) if kind == "warped" else GrowthSpec()
    directory = Path(directory)
    grid = np.linspace(0.0, 1.0, frames)
    pairs = []
    for i in range(count):
        s = seed + i
        src = synth_growth(s, spec, frames, growth)
        a = save_sequence(src.frames, directory, f"p{i:03d}_source", grid)
        if kind == "identical":
            pairs.append({"source": a.name, "target": a.name})
            continue
        if kind == "warped":
            xi = synth_time_warp([seed, i, 50], strength, 200)
            t = np.interp(grid, np.linspace(0.0, 1.0, 200), xi)
            tgt = synth_growth(s, spec, growth=growth, times=t)
        elif kind == "corresponded":
            t = np.minimum(grid + 0.5 / (frames - 1), 1.0)
            tgt = synth_growth(s, spec, growth=growth, times=t)
        else:
            tgt = synth_growth(seed + 100_000 + i, spec, frames, growth)
        b = save_sequence(tgt.frames, directory, f"p{i:03d}_target", grid)
        pairs.append({"source": a.name, "target": b.name})
    write_json({"schema": CORPUS_SCHEMA, "kind": kind, "seed": seed, "pairs": pairs},
               directory / "corpus.json")
    return directory
