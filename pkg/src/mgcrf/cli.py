"""Command line entry point: ``mgcrf {synth,run,restrict,bench,impute}``."""

import argparse
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import baselines, harness, io, missingness
from .graph import LabelMask, masked_labels
from .missingness import Kind, Mechanism
from .synth import SyntheticSpec, generate


def _common(p, output_required=False):
    p.add_argument("--seed", type=int, default=None, help="base random seed")
    p.add_argument("--output", "-o", required=output_required, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="parallel repeats")


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _names(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def build_parser():
    parser = argparse.ArgumentParser(prog="mgcrf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic grid dataset")
    _common(p, output_required=True)
    p.add_argument("--rows", type=int, default=40)
    p.add_argument("--cols", type=int, default=40)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=5.0)
    p.add_argument("--noise", type=float, default=0.1, help="relative input noise seen by the teacher")

    p = sub.add_parser("run", help="run an experiment config and write results.csv")
    p.add_argument("config", help="INI experiment file")
    _common(p)

    p = sub.add_parser("restrict", help="rank label-reduction strategies")
    p.add_argument("config", help="INI experiment file (dataset and model settings)")
    p.add_argument("--strategies", type=_names,
                   default=("Random", "WeaklyConnected", "StronglyConnectedExclNeighbors", "MidRangeY"),
                   help="mechanisms to compare; MidRangeY removes nodes without extreme history")
    p.add_argument("--fractions", type=_floats, default=None)
    p.add_argument("--models", type=_names, default=("m-GCRF",))
    _common(p)

    p = sub.add_parser("bench", help="time assembly, evaluation and fitting per grid size")
    p.add_argument("--sizes", type=_ints, default=(10, 20, 40))
    p.add_argument("--models", type=_names, default=("m-GCRF",))
    p.add_argument("--fraction", type=float, default=0.2, help="hidden label fraction")
    _common(p)

    p = sub.add_parser("impute", help="export HGF or MI label completions of a graph file")
    p.add_argument("graph", help="graph file (missing labels written as NA)")
    p.add_argument("--method", choices=("hgf", "mi"), default="hgf")
    p.add_argument("--mask", help="mask file; default hides exactly the NA labels")
    p.add_argument("--mechanism", help="hide labels with this mechanism instead of a mask file")
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--samples", type=int, default=5, help="MI completions to draw")
    _common(p, output_required=True)
    return parser


def cmd_synth(args):
    spec = SyntheticSpec(rows=args.rows, cols=args.cols, n_steps=args.steps, alpha=args.alpha,
                         beta=args.beta, noise_fraction=args.noise, seed=args.seed or 0)
    ds = generate(spec)
    os.makedirs(args.output, exist_ok=True)
    io.save_graph(os.path.join(args.output, "graph.txt"), ds.graph, ds.teacher_output)
    io.save_params(os.path.join(args.output, "params.txt"), ds.generator.params)
    io.save_provenance(os.path.join(args.output, "provenance.txt"), command="synth",
                       **{k: getattr(spec, k) for k in spec.__dataclass_fields__})
    print(f"wrote {spec.rows}x{spec.cols} grid, {spec.n_steps} steps to {args.output}")
    return 0


def _load_config(args):
    config = harness.load_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.output:
        over["output"] = args.output
    if args.workers != 1:
        over["workers"] = args.workers
    return replace(config, **over) if over else config


def _report_failures(report):
    bad = [r for r in report.records if r["status"] != "ok"]
    for r in bad:
        print(f"failed: {r['model']} {r['mechanism']} {r['fraction']} repeat {r['repeat']}: {r['status']}",
              file=sys.stderr)
    return 1 if bad else 0


def cmd_run(args):
    config = _load_config(args)
    report = harness.run(config)
    print(report.summary())
    return _report_failures(report)


def cmd_restrict(args):
    config = _load_config(args)
    fractions = args.fractions or tuple(f for f in config.fractions if f <= 0.4)
    report = harness.active_restriction_report(config, args.strategies, fractions, args.models)
    print(report.summary())
    for model in args.models:
        for frac, ranked in report.ranking(model).items():
            print(f"{model} @ {frac:.2f}: " + " > ".join(name for name, _ in ranked))
    if config.output:
        os.makedirs(config.output, exist_ok=True)
        report.to_csv(os.path.join(config.output, "restrict.csv"))
    return _report_failures(report)


def cmd_bench(args):
    rows = harness.bench(args.sizes, args.models, args.fraction, seed=args.seed or 0)
    path = None
    if args.output:
        os.makedirs(args.output, exist_ok=True)
        path = os.path.join(args.output, "bench.csv")
    print(harness.bench_csv(rows, path), end="")
    return 1 if any(r["status"] != "ok" for r in rows) else 0


def cmd_impute(args):
    graph = io.load_graph(args.graph)
    seed = args.seed or 0
    if args.mask:
        mask = io.load_mask(args.mask)
    elif args.mechanism:
        mech = Mechanism(Kind.parse(args.mechanism), args.fraction, seed=seed)
        mask = missingness.apply(mech, graph, range(graph.n_steps))
        mask = LabelMask(mask.observed & graph.observed)
    else:
        mask = LabelMask.from_labels(graph.labels)
    os.makedirs(args.output, exist_ok=True)
    io.save_mask(os.path.join(args.output, "mask.txt"), mask)
    y = masked_labels(graph, mask)
    if args.method == "hgf":
        completed = [baselines.hgf_complete(graph, mask)]
    else:
        L, U = mask.labeled_index(), mask.unlabeled_index()
        mean_U, var_U = baselines.gp_impute(graph.features, y.ravel()[L], mask)
        rng = np.random.default_rng(seed)
        completed = []
        for _ in range(args.samples):
            c = y.ravel().copy()
            c[U] = mean_U + np.sqrt(var_U) * rng.standard_normal(U.size)
            completed.append(c.reshape(y.shape))
    for s, labels in enumerate(completed):
        name = "completed.txt" if len(completed) == 1 else f"completed_{s}.txt"
        io.save_graph(os.path.join(args.output, name), graph.replace(labels=labels))
    print(f"imputed {mask.observed.size - mask.n_labeled} labels with {args.method}; "
          f"{len(completed)} completion(s) in {args.output}")
    return 0


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "restrict": cmd_restrict,
            "bench": cmd_bench, "impute": cmd_impute}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", missingness.FallbackWarning)
            return COMMANDS[args.command](args)
    except (OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"mgcrf {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
