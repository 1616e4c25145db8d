"""Command-line interface: ``elastictree <command> ...``.

Exit status is 0 on success, 1 for invalid input and 2 for numerical failures
such as a mean that does not converge under ``--strict``. Wall-clock timings go
to ``timings.json``; every other output is a deterministic function of the
inputs and ``run_config.json``.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .atlas import Atlas4D, decode_4d, fit_modes_4d, generate_4d, karcher_mean_4d, mode_srvf
from .config import RunConfig, resolve_config
from .errors import ElasticTreeError, NumericalError, ValidationError
from .evaluation import CORPUS_KINDS, SUITES, evaluate_corpus, write_corpus
from .io import (
    load_sequence,
    load_skeleton,
    read_json,
    registration_report,
    save_sequence,
    save_skeleton,
    write_json,
)
from .registration import geodesic_3d, register_pair
from .subspace import embed_sequence, fit_pca, karcher_mean_trees, normalize_times
from .synth import TreeSpec, synth_growth, synth_tree
from .temporal import cross_sequence_register, embed_collection, geodesic_4d, trajectory_srvf
from .tree import from_srvft, normalize, to_srvft

__all__ = ["main", "build_parser"]


# ---------------------------------------------------------------- helpers


def _srvf(tree, cfg: RunConfig):
    return to_srvft(normalize(tree, cfg.scale_normalize), cfg.samples)


def _reg_opts(cfg: RunConfig):
    return dict(max_iter=cfg.max_iter, rel_tol=cfg.rel_tol, refine_warps=cfg.refine)


def _need(items, count, what):
    if len(items) < count:
        raise ValidationError(f"need at least {count} {what}, got {len(items)}")


def _say(msg):
    print(msg, flush=True)


def _save_4d(frames, directory, cfg):
    # decoded trajectories keep their own grid, which may differ from cfg.grid
    return save_sequence(frames, directory, "frame", np.linspace(0.0, 1.0, len(frames)))


# ---------------------------------------------------------------- commands


def cmd_register(args, cfg: RunConfig, out: Path):
    T1, T2 = load_skeleton(args.source), load_skeleton(args.target)
    Q1, Q2 = _srvf(T1, cfg), _srvf(T2, cfg)
    start = time.perf_counter()
    res = register_pair(Q1, Q2, cfg.metric, **_reg_opts(cfg))
    elapsed = time.perf_counter() - start
    report = registration_report(res, {
        "source_file": str(args.source),
        "target_file": str(args.target),
        "samples": cfg.samples,
        "scale_normalize": cfg.scale_normalize,
    })
    write_json(report, out / "report.json")
    write_json({"register": elapsed}, out / "timings.json")
    save_skeleton(from_srvft(res.source_padded, T1.units), out / "source_padded.json")
    save_skeleton(from_srvft(res.registered_target, T2.units), out / "registered_target.json")
    _say(f"distance {res.distance:.6g} after {res.iterations} iterations ({elapsed:.2f} s)")


def cmd_register4d(args, cfg: RunConfig, out: Path):
    H1, t1, _ = load_sequence(args.source)
    H2, t2, _ = load_sequence(args.target)
    res = cross_sequence_register(
        H1, H2, t1, t2, cfg.metric, cfg.samples, cfg.grid, cfg.pca_var, cfg.k_max,
        per_time=cfg.per_time, refine=cfg.refine, literal=cfg.literal,
        unit_scale=cfg.scale_normalize)
    report = res.report()
    report.update({"source_file": str(args.source), "target_file": str(args.target)})
    write_json(report.pop("timings"), out / "timings.json")
    write_json(report, out / "report.json")
    write_json(res.basis.to_dict(), out / "basis.json")
    _save_4d(res.frames2_aligned, out / "aligned", cfg)
    _say(f"before {res.before:.6g} after {res.after:.6g} "
         f"(temporal stage {1e3 * res.timings.get('temporal', 0.0):.1f} ms)")


def cmd_geodesic(args, cfg: RunConfig, out: Path):
    T1, T2 = load_skeleton(args.source), load_skeleton(args.target)
    Q1, Q2 = _srvf(T1, cfg), _srvf(T2, cfg)
    if args.auto_register:
        Q1, Q2 = (lambda r: (r.source_padded, r.registered_target))(
            register_pair(Q1, Q2, cfg.metric, **_reg_opts(cfg)))
    elif Q1.topology_id != Q2.topology_id:
        raise ValidationError("inputs do not share a branch hierarchy; register them first "
                              "(see 'register') or pass --auto-register")
    frames = geodesic_3d(Q1, Q2, args.steps)
    for k, tree in enumerate(frames):
        save_skeleton(tree, out / f"step_{k:03d}.json")
    _say(f"wrote {len(frames)} frames to {out}")


def _load_registered_pair(args, cfg):
    """Trajectory SRVFs of two manifests whose frames already share one hierarchy."""
    seqs = [load_sequence(args.source), load_sequence(args.target)]
    chains = [[_srvf(f, cfg) for f in H] for H, _, _ in seqs]
    topo = chains[0][0].topology_id
    if any(Q.topology_id != topo for c in chains for Q in c):
        raise ValidationError("frames do not share one branch hierarchy; pass --auto-register "
                              "or register the sequences with 'register4d' first")
    basis = fit_pca([Q for c in chains for Q in c], cfg.pca_var, cfg.k_max)
    return [trajectory_srvf(embed_sequence(c, normalize_times(t), basis, cfg.grid))
            for c, (_, t, _) in zip(chains, seqs)]


def cmd_geodesic4d(args, cfg: RunConfig, out: Path):
    if args.auto_register:
        H1, t1, _ = load_sequence(args.source)
        H2, t2, _ = load_sequence(args.target)
        res = cross_sequence_register(
            H1, H2, t1, t2, cfg.metric, cfg.samples, cfg.grid, cfg.pca_var, cfg.k_max,
            per_time=cfg.per_time, refine=cfg.refine, literal=cfg.literal,
            unit_scale=cfg.scale_normalize, decode=False)
        w1, w2 = res.w1, res.w2_aligned
    else:
        w1, w2 = _load_registered_pair(args, cfg)
    start = time.perf_counter()
    geo = geodesic_4d(w1, w2, args.steps)
    elapsed = time.perf_counter() - start
    clipped = 0
    for j, w in enumerate(geo.steps):
        frames, c = decode_4d(w)
        clipped += c
        _save_4d(frames, out / f"step_{j:03d}", cfg)
    write_json({"taus": geo.taus.tolist(), "clipped_attach_s": clipped}, out / "geodesic.json")
    write_json({"geodesic4d": elapsed}, out / "timings.json")
    _say(f"wrote {len(geo.steps)} sequences to {out} ({1e3 * elapsed:.2f} ms)")


def _karcher_trees(args, cfg):
    trees = [load_skeleton(p) for p in args.inputs]
    return trees, karcher_mean_trees([_srvf(t, cfg) for t in trees], cfg.metric,
                                     max_iter=cfg.karcher_max_iter, tol=cfg.karcher_tol,
                                     strict=cfg.strict, rel_tol=cfg.rel_tol,
                                     refine_warps=cfg.refine)


def cmd_mean(args, cfg: RunConfig, out: Path):
    _need(args.inputs, 1, "skeleton files")
    trees, res = _karcher_trees(args, cfg)
    save_skeleton(from_srvft(res.mean, trees[0].units), out / "mean.json")
    write_json({"objective": list(res.objective), "iterations": res.iterations,
                "converged": res.converged}, out / "mean_report.json")
    _say(f"mean after {res.iterations} iterations, objective {res.objective[-1]:.6g}")


def cmd_pca(args, cfg: RunConfig, out: Path):
    _need(args.inputs, 2, "skeleton files for PCA")
    _, res = _karcher_trees(args, cfg)
    basis = fit_pca(res.registered, cfg.pca_var, cfg.k_max)
    write_json(basis.to_dict(), out / "basis.json")
    _say(f"{basis.k} components capture {100 * basis.variance_captured:.2f}% of the variance")


def _atlas_mean_frames(atlas: Atlas4D):
    return decode_4d(atlas.compose(np.zeros(atlas.n_modes)), atlas.basis)[0]


def cmd_mean4d(args, cfg: RunConfig, out: Path):
    _need(args.inputs, 2, "sequence manifests")
    seqs = [load_sequence(p) for p in args.inputs]
    basis, trajs, _ = embed_collection(
        [H for H, _, _ in seqs], [t for _, t, _ in seqs], cfg.metric, cfg.samples, cfg.grid,
        cfg.pca_var, cfg.k_max, cfg.scale_normalize)
    res = karcher_mean_4d([trajectory_srvf(t) for t in trajs], cfg.karcher_max_iter,
                          cfg.karcher_tol, cfg.refine, cfg.strict)
    atlas = fit_modes_4d(res)
    doc = atlas.to_dict()
    doc["karcher"] = {"objective": list(res.objective), "iterations": res.iterations,
                      "converged": res.converged}
    write_json(doc, out / "atlas.json")
    # decode from the stored form so later commands reading atlas.json agree bit for bit
    _save_4d(_atlas_mean_frames(Atlas4D.from_dict(doc)), out / "mean", cfg)
    _say(f"4D mean after {res.iterations} iterations; {atlas.n_modes} modes capture "
         f"{100 * atlas.variance_captured:.2f}%")


def _load_atlas(path):
    return Atlas4D.from_dict(read_json(path))


def cmd_modes4d(args, cfg: RunConfig, out: Path):
    atlas = _load_atlas(args.atlas)
    modes = [args.mode] if args.mode is not None else list(range(1, atlas.n_modes + 1))
    taus = [float(x) for x in args.tau.split(",")] if args.tau else [-2.0, -1.0, 0.0, 1.0, 2.0]
    for i in modes:
        for tau in taus:
            frames, _ = decode_4d(mode_srvf(atlas, i, tau), atlas.basis)
            _save_4d(frames, out / f"mode{i}_tau{tau:+g}", cfg)
    _say(f"wrote {len(modes) * len(taus)} sequences to {out}")


def cmd_generate(args, cfg: RunConfig, out: Path):
    if args.count < 1:
        raise ValidationError("--count must be at least 1")
    atlas = _load_atlas(args.atlas)
    for k in range(args.count):
        gen = generate_4d(atlas, seed=cfg.seed + k, clamp=cfg.clamp)
        target = out if args.count == 1 else out / f"sample_{k:03d}"
        _save_4d(gen.frames, target, cfg)
        write_json(gen.record(), target / "coefficients.json")
    _say(f"generated {args.count} sequence(s) in {out}")


def cmd_eval(args, cfg: RunConfig, out: Path):
    _, text = evaluate_corpus(args.suite, args.corpus, cfg, out)
    sys.stdout.write(text)


def cmd_synth(args, cfg: RunConfig, out: Path):
    spec = TreeSpec(depth=args.depth, children=(args.min_children, args.max_children))
    if args.kind == "trees":
        for k in range(args.count):
            save_skeleton(synth_tree(cfg.seed + k, spec), out / f"tree_{k:03d}.json")
    elif args.kind == "sequences":
        for k in range(args.count):
            seq = synth_growth(cfg.seed + k, spec, args.frames or 6)
            save_sequence(seq.frames, out, f"seq_{k:03d}", seq.times)
    else:
        write_corpus(out, args.kind, args.count, args.frames, cfg.seed, spec)
    _say(f"wrote synthetic {args.kind} to {out}")


COMMANDS = {
    "register": cmd_register,
    "register4d": cmd_register4d,
    "geodesic": cmd_geodesic,
    "geodesic4d": cmd_geodesic4d,
    "mean": cmd_mean,
    "pca": cmd_pca,
    "mean4d": cmd_mean4d,
    "modes4d": cmd_modes4d,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


# ---------------------------------------------------------------- parser


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="JSON run configuration (defaults to $ELASTICTREE_CONFIG)")
    g.add_argument("--out", default="elastictree-out", help="output directory")
    g.add_argument("--weights", help="metric weights main,position,subtree")
    g.add_argument("--samples", type=int, help="samples per branch")
    g.add_argument("--grid", type=int, help="trajectory time samples")
    g.add_argument("--pca-var", type=float, help="variance fraction kept by PCA")
    g.add_argument("--k-max", type=int, help="maximum number of PCA components")
    g.add_argument("--clamp", type=float, help="truncation of generation coefficients")
    g.add_argument("--seed", type=int, help="random seed")
    g.add_argument("--scale-normalize", action="store_true", default=None,
                   help="scale trees to unit total length")
    g.add_argument("--jobs", type=int, help="worker processes for eval")
    g.add_argument("--max-iter", type=int, help="registration iterations")
    g.add_argument("--rel-tol", type=float, help="registration relative tolerance")
    g.add_argument("--karcher-max-iter", type=int, help="mean iterations")
    g.add_argument("--karcher-tol", type=float, help="mean convergence tolerance")
    g.add_argument("--refine", action=argparse.BooleanOptionalAction, default=None,
                   help="continuous polish of lattice warps")
    g.add_argument("--per-time", action="store_true", default=None,
                   help="re-register every time sample across sequences")
    g.add_argument("--literal", action="store_true", default=None,
                   help="time warp without the square-root-slope factor")
    g.add_argument("--strict", action="store_true", default=None,
                   help="fail with status 2 when a mean does not converge")
    return p


_CONFIG_FLAGS = ("weights", "samples", "grid", "pca_var", "k_max", "clamp", "seed", "scale_normalize",
                 "jobs", "max_iter", "rel_tol", "karcher_max_iter", "karcher_tol", "refine", "per_time",
                 "literal", "strict")


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="elastictree",
                                     description="Elastic shape analysis of 3D and 4D trees.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, description=help_)

    p = add("register", "register two skeletons and write a report")
    p.add_argument("source")
    p.add_argument("target")
    p = add("register4d", "spatially and temporally align two sequences")
    p.add_argument("source")
    p.add_argument("target")
    for name, what in (("geodesic", "skeletons"), ("geodesic4d", "sequence manifests")):
        p = add(name, f"frames along the geodesic between two {what}")
        p.add_argument("source")
        p.add_argument("target")
        p.add_argument("--steps", type=int, default=5)
        p.add_argument("--auto-register", action="store_true")
    p = add("mean", "mean shape of skeletons")
    p.add_argument("inputs", nargs="+")
    p = add("pca", "PCA basis of co-registered skeletons")
    p.add_argument("inputs", nargs="+")
    p = add("mean4d", "4D mean and modes (atlas) of sequences")
    p.add_argument("inputs", nargs="+")
    p = add("modes4d", "decode sequences along atlas modes")
    p.add_argument("--atlas", required=True)
    p.add_argument("--mode", type=int, help="1-based mode index (default: all)")
    p.add_argument("--tau", help="comma-separated multiples of the standard deviation")
    p = add("generate", "random sequences from an atlas")
    p.add_argument("--atlas", required=True)
    p.add_argument("--count", type=int, default=1)
    p = add("eval", "evaluate a corpus of sequence pairs")
    p.add_argument("suite", choices=SUITES)
    p.add_argument("corpus")
    p = add("synth", "write synthetic trees, sequences or evaluation corpora")
    p.add_argument("--kind", choices=("trees", "sequences") + CORPUS_KINDS, default="warped")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--frames", type=int)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--min-children", type=int, default=1)
    p.add_argument("--max-children", type=int, default=3)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse reports usage errors with 2, which is reserved for numerical failures
        return 1 if exc.code == 2 else exc.code
    try:
        overrides = {k: getattr(args, k) for k in _CONFIG_FLAGS}
        cfg = resolve_config(args.config, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out)
        COMMANDS[args.command](args, cfg, out)
    except NumericalError as exc:
        print(f"elastictree {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ElasticTreeError, OSError) as exc:
        print(f"elastictree {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
