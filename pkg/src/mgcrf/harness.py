"""Experiment runner: mechanism sweeps, model comparison, R^2 reports, timing.

Each repeat regenerates (or reloads) the data with seed ``base_seed +
repeat``, hides labels with every mechanism/fraction pair, trains each
model on the first ``T - 1`` steps and scores its prediction of the last
step.  All models in a repeat share the same mask and the same
unstructured network, so comparisons are paired.
"""

import configparser
import csv
import io
import math
import time
import timeit
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import baselines, gcrf, marginal, missingness
from .graph import LabelMask, TemporalAttributedGraph, assemble_precision, masked_labels
from .missingness import Kind, Mechanism
from .nn import NNSettings, train_ffn
from .synth import SyntheticSpec, generate

MODEL_NAMES = ("NN", "i-GCRF", "m-GCRF", "MI-GCRF", "HGF-GCRF")
RESULT_COLUMNS = ("row_type", "model", "mechanism", "fraction", "repeat", "r2", "r2_std", "n", "status")
TIMING_COLUMNS = ("train_seconds", "predict_seconds")


def r2_score(y_true, y_pred):
    """Coefficient of determination; 0 for the mean prediction, 1 when exact."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0:
        return float("nan")
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot


# --- configuration -------------------------------------------------------------

@dataclass
class DatasetConfig:
    source: str = "synthetic"  # synthetic | graph | stations
    synthetic: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(rows=20, cols=20))
    path: Optional[str] = None
    radius: Optional[float] = None
    train_window: Optional[int] = None


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    mechanisms: tuple = ("Random",)
    fractions: tuple = (0.0, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8)
    models: tuple = MODEL_NAMES
    repeats: int = 10
    seed: int = 0
    output: Optional[str] = None
    workers: int = 1
    nn: NNSettings = field(default_factory=lambda: NNSettings(val_fraction=0.0))
    cross_fit: int = 5  # folds for out-of-fold training predictions; < 2 disables
    optimizer: gcrf.OptimizerSettings = field(default_factory=gcrf.OptimizerSettings)
    mi_samples: int = 5
    cv_hidden: tuple = ()
    cv_length_scale: tuple = ()

    def __post_init__(self):
        self.mechanisms = tuple(Kind.parse(m).value for m in self.mechanisms)
        self.fractions = tuple(float(f) for f in self.fractions)
        self.models = tuple(self.models)
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if any(not 0.0 <= f <= 0.8 for f in self.fractions):
            raise ValueError("fractions must lie in [0, 0.8]")
        if not self.models:
            raise ValueError("at least one model is required")
        for m in self.models:
            if isinstance(m, str) and m not in MODEL_NAMES:
                raise ValueError(f"unknown model {m!r}; choose from {', '.join(MODEL_NAMES)}")


def _split(value, cast=str):
    return tuple(cast(v.strip()) for v in value.split(",") if v.strip())


def load_config(path):
    """Read an INI-style experiment description (see README for the schema)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path):
        raise FileNotFoundError(path)
    ds = cp["dataset"] if cp.has_section("dataset") else {}
    ex = cp["experiment"] if cp.has_section("experiment") else {}
    nn = cp["nn"] if cp.has_section("nn") else {}
    gp = cp["gp"] if cp.has_section("gp") else {}
    spec = SyntheticSpec(
        rows=int(ds.get("rows", 20)), cols=int(ds.get("cols", 20)),
        n_steps=int(ds.get("steps", 5)),
        noise_fraction=float(ds.get("noise_fraction", 0.1)),
        weight_range=_split(ds.get("weight_range", "0.5, 1.0"), float),
        alpha=float(ds.get("alpha", 1.0)), beta=float(ds.get("beta", 5.0)))
    dataset = DatasetConfig(
        source=ds.get("source", "synthetic").strip(), synthetic=spec,
        path=ds.get("path") or None,
        radius=float(ds["radius"]) if ds.get("radius") else None,
        train_window=int(ds["train_window"]) if ds.get("train_window") else None)
    if dataset.source not in ("synthetic", "graph", "stations"):
        raise ValueError(f"unknown dataset source {dataset.source!r}")
    if dataset.source == "stations" and dataset.radius is None:
        raise ValueError("station datasets need an explicit radius")
    kw = {}
    if "mechanisms" in ex:
        kw["mechanisms"] = _split(ex["mechanisms"])
    if "fractions" in ex:
        kw["fractions"] = _split(ex["fractions"], float)
    if "models" in ex:
        kw["models"] = _split(ex["models"])
    return ExperimentConfig(
        dataset=dataset, repeats=int(ex.get("repeats", 10)), seed=int(ex.get("seed", 0)),
        output=ex.get("output") or None, workers=int(ex.get("workers", 1)),
        mi_samples=int(ex.get("mi_samples", 5)),
        nn=NNSettings(hidden=int(nn["hidden"]) if nn.get("hidden") else None,
                      max_epochs=int(nn.get("max_epochs", 2000)),
                      val_fraction=float(nn.get("val_fraction", 0.0))),
        cross_fit=int(nn.get("cross_fit", 5)),
        cv_hidden=_split(nn.get("cv_hidden", ""), int),
        cv_length_scale=_split(gp.get("cv_length_scale", ""), float),
        **kw)


def load_dataset(dataset, seed):
    """Graph for one repeat; synthetic data is regenerated from `seed`."""
    if dataset.source == "synthetic":
        return generate(replace(dataset.synthetic, seed=seed)).graph
    if dataset.source == "graph":
        from .io import load_graph
        return load_graph(dataset.path)
    from .stations import load_station_dataset
    return load_station_dataset(dataset.path, dataset.radius, dataset.train_window)


# --- models ----------------------------------------------------------------------

@dataclass
class TrainingContext:
    """Everything a model sees in one (repeat, mechanism, fraction) cell."""

    graph: TemporalAttributedGraph  # unmasked; models must not read test or hidden labels
    train: TemporalAttributedGraph  # training steps, hidden labels removed
    test: TemporalAttributedGraph  # the test step, labels removed
    train_mask: LabelMask
    r_train: np.ndarray  # (1, T-1, N) network predictions
    r_test: np.ndarray  # (1, 1, N)
    seed: int
    config: ExperimentConfig


def _gcrf_predict(model, ctx):
    return gcrf.predict(model, ctx.test, ctx.r_test).mean


def _select_length_scale(ctx):
    if not ctx.config.cv_length_scale or ctx.train.n_steps < 2:
        return None
    X = ctx.train.features.reshape(-1, ctx.train.n_features)
    y = ctx.train.labels.ravel()
    obs = ~np.isnan(y)
    T, N = ctx.train.n_steps, ctx.train.n_nodes
    last = np.zeros(T * N, dtype=bool)
    last[(T - 1) * N:] = True
    fit_idx, val_idx = obs & ~last, obs & last
    if not fit_idx.any() or not val_idx.any():
        return None
    base = baselines.GpImputer.heuristic(X[fit_idx], y[fit_idx])
    best = None
    for mult in ctx.config.cv_length_scale:
        hyper = replace(base, length_scale=base.length_scale * mult)
        mean, _ = hyper.posterior(X[fit_idx], y[fit_idx], X[val_idx])
        err = float(np.mean((mean - y[val_idx]) ** 2))
        if best is None or err < best[0]:
            best = (err, hyper)
    return replace(best[1], **{k: getattr(baselines.GpImputer.heuristic(X[obs], y[obs]), k)
                                for k in ("signal_var", "noise_var", "prior_mean")})


# name -> (fit(ctx) -> model, predict(model, ctx) -> test-step predictions).
# A custom model is a single callable ctx -> predictions, timed as training.
BUILTIN_MODELS = {
    "NN": (lambda ctx: None, lambda _, ctx: ctx.r_test[0, 0]),
    "i-GCRF": (lambda ctx: baselines.fit_igcrf(ctx.train, ctx.r_train, ctx.train_mask,
                                               settings=ctx.config.optimizer), _gcrf_predict),
    "m-GCRF": (lambda ctx: marginal.fit_marginal(ctx.train, ctx.r_train, ctx.train_mask,
                                                 settings=ctx.config.optimizer), _gcrf_predict),
    "MI-GCRF": (lambda ctx: baselines.fit_mi_gcrf(ctx.train, ctx.r_train, ctx.train_mask,
                                                  n_samples=ctx.config.mi_samples, seed=ctx.seed,
                                                  hyper=_select_length_scale(ctx),
                                                  settings=ctx.config.optimizer), _gcrf_predict),
    "HGF-GCRF": (lambda ctx: baselines.fit_hgf_gcrf(ctx.train, ctx.r_train, ctx.train_mask,
                                                    settings=ctx.config.optimizer), _gcrf_predict),
}


def _model_name(model):
    return model if isinstance(model, str) else getattr(model, "name", getattr(model, "__name__", repr(model)))


def select_hidden_size(features, labels, candidates, settings, n_steps):
    """Pick the hidden width by training on all but the last step, validating on it."""
    X = np.asarray(features).reshape(n_steps, -1, np.shape(features)[-1])
    y = np.asarray(labels, dtype=float).reshape(n_steps, -1)
    fit_obs, val_obs = ~np.isnan(y[:-1]), ~np.isnan(y[-1])
    if n_steps < 2 or not fit_obs.any() or not val_obs.any():
        return settings.hidden
    best = None
    for h in candidates:
        net = train_ffn(X[:-1][fit_obs], y[:-1][fit_obs], replace(settings, hidden=h))
        err = float(np.mean((net(X[-1][val_obs]) - y[-1][val_obs]) ** 2))
        if best is None or err < best[0]:
            best = (err, h)
    return best[1]


def train_network(train, seed, config):
    obs = ~np.isnan(train.labels)
    settings = replace(config.nn, seed=seed)
    if config.cv_hidden:
        hidden = select_hidden_size(train.features, train.labels, config.cv_hidden, settings, train.n_steps)
        settings = replace(settings, hidden=hidden)
    return train_ffn(train.features[obs], train.labels[obs], settings)


def cross_fitted(train, r_train, folds, seed, settings):
    """Replace predictions at labeled training nodes by out-of-fold ones.

    A network scores its own training labels optimistically, so a GCRF fit
    on those scores puts too much weight on the network.  Unlabeled nodes
    keep `r_train`, which is already out of sample there.
    """
    obs = np.flatnonzero(~np.isnan(train.labels.ravel()))
    if folds < 2 or obs.size < 2 * folds:
        return r_train
    X = train.features.reshape(-1, train.n_features)
    y = train.labels.ravel()
    fold = np.random.default_rng(seed).permutation(obs.size) % folds
    out = np.array(r_train, dtype=float).reshape(-1)
    for k in range(folds):
        net = train_ffn(X[obs[fold != k]], y[obs[fold != k]], replace(settings, seed=settings.seed + k + 1))
        out[obs[fold == k]] = net(X[obs[fold == k]])
    return out.reshape(np.shape(r_train))


# --- running -----------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Per-repeat records plus aggregates keyed by (model, mechanism, fraction)."""

    records: list
    repeats: int

    def aggregate(self):
        groups = {}
        for rec in self.records:
            groups.setdefault((rec["model"], rec["mechanism"], rec["fraction"]), []).append(rec)
        out = []
        for (model, mech, frac), recs in groups.items():
            vals = np.array([r["r2"] for r in recs if math.isfinite(r["r2"])])
            out.append(dict(
                model=model, mechanism=mech, fraction=frac,
                mean=float(vals.mean()) if vals.size else float("nan"),
                std=float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                n=int(vals.size), values=[r["r2"] for r in recs],
                train_seconds=float(np.mean([r["train_seconds"] for r in recs])),
                predict_seconds=float(np.mean([r["predict_seconds"] for r in recs]))))
        return out

    def mean(self, model, mechanism, fraction):
        for row in self.aggregate():
            if row["model"] == model and row["mechanism"] == mechanism and math.isclose(row["fraction"], fraction):
                return row["mean"]
        raise KeyError((model, mechanism, fraction))

    def ranking(self, model="m-GCRF"):
        """Mechanisms per fraction, best mean R^2 first."""
        out = {}
        for row in self.aggregate():
            if row["model"] == model:
                out.setdefault(row["fraction"], []).append((row["mechanism"], row["mean"]))
        return {f: sorted(v, key=lambda p: (-p[1] if math.isfinite(p[1]) else math.inf, p[0]))
                for f, v in sorted(out.items())}

    def to_csv(self, path=None, timing=True):
        cols = RESULT_COLUMNS + (TIMING_COLUMNS if timing else ())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.records:
            row = dict(row_type="repeat", r2_std="", n=1, **r)
            w.writerow([_cell(row[c]) for c in cols])
        for a in self.aggregate():
            row = dict(row_type="aggregate", model=a["model"], mechanism=a["mechanism"],
                       fraction=a["fraction"], repeat="", r2=a["mean"], r2_std=a["std"], n=a["n"],
                       status="", train_seconds=a["train_seconds"], predict_seconds=a["predict_seconds"])
            w.writerow([_cell(row[c]) for c in cols])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def summary(self):
        lines = [f"{'model':<10} {'mechanism':<32} {'frac':>5} {'mean R2':>9} {'std':>7}"]
        for a in sorted(self.aggregate(), key=lambda a: (a["mechanism"], a["fraction"], a["model"])):
            lines.append(f"{a['model']:<10} {a['mechanism']:<32} {a['fraction']:>5.2f} "
                         f"{a['mean']:>9.4f} {a['std']:>7.4f}")
        return "\n".join(lines)


def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    return v


def _natural_probabilities(graph, train_steps):
    return missingness.estimate_natural_distribution(graph.observed[list(train_steps)])


def run_cell(graph, mechanism, config, seed, models=None):
    """Records for every model on one mechanism/fraction of one repeat."""
    models = config.models if models is None else models
    T = graph.n_steps
    train_steps = list(range(T - 1))
    mask = missingness.apply(mechanism, graph, train_steps)
    train_mask = LabelMask(mask.observed[:T - 1])
    train = graph.subset_steps(train_steps).masked(train_mask)
    test = graph.subset_steps([T - 1])
    truth = test.labels[0]
    scored = ~np.isnan(truth)
    test = test.replace(labels=np.full_like(test.labels, np.nan))
    records = []
    base = dict(mechanism=mechanism.kind.value, fraction=mechanism.fraction, repeat=seed - config.seed)
    t0 = time.perf_counter()
    ctx, net_error = None, None
    try:
        net = train_network(train, seed, config)
        nn_seconds = time.perf_counter() - t0
        r = net(graph.features)[None]
        t0 = time.perf_counter()
        r_train = cross_fitted(train, r[:, :T - 1], config.cross_fit, seed,
                               replace(config.nn, hidden=net.hidden_dim, seed=seed))
        cf_seconds = time.perf_counter() - t0
        ctx = TrainingContext(graph, train, test, train_mask, r_train, r[:, T - 1:], seed, config)
    except Exception as exc:  # recorded per cell
        net_error = f"network: {type(exc).__name__}: {exc}"
    for model in models:
        name = _model_name(model)
        rec = dict(base, model=name, r2=float("nan"), train_seconds=0.0, predict_seconds=0.0, status="ok")
        if ctx is None:
            rec["status"] = net_error
            records.append(rec)
            continue
        fit_fn, predict_fn = BUILTIN_MODELS[model] if isinstance(model, str) else (model, None)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", baselines.UnanchoredComponentWarning)
                t0 = time.perf_counter()
                fitted = fit_fn(ctx)
                t1 = time.perf_counter()
                pred = fitted if predict_fn is None else predict_fn(fitted, ctx)
                pred = np.asarray(pred, dtype=float)
                t2 = time.perf_counter()
            rec["train_seconds"] = t1 - t0 + (nn_seconds if name == "NN" else nn_seconds + cf_seconds)
            rec["predict_seconds"] = t2 - t1
            rec["r2"] = r2_score(truth[scored], pred[scored])
        except Exception as exc:  # recorded per cell, run continues
            rec["status"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        records.append(rec)
    return records


def _run_repeat(config, repeat, models):
    seed = config.seed + repeat
    graph = load_dataset(config.dataset, seed)
    probs = _natural_probabilities(graph, range(graph.n_steps - 1))
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", missingness.FallbackWarning)
        for mech in config.mechanisms:
            for frac in config.fractions:
                kind = Kind.parse(mech)
                m = Mechanism(kind, frac, seed=seed,
                              probabilities=probs if kind is Kind.NATURAL_DISTRIBUTION else None)
                out.extend(run_cell(graph, m, config, seed, models))
    return out


def run(config):
    """Execute every (repeat, mechanism, fraction, model) cell and collect R^2."""
    models = config.models
    if config.workers > 1 and all(isinstance(m, str) for m in models):
        with ProcessPoolExecutor(config.workers) as pool:
            chunks = list(pool.map(_run_repeat, [config] * config.repeats,
                                   range(config.repeats), [models] * config.repeats))
    else:
        chunks = [_run_repeat(config, rep, models) for rep in range(config.repeats)]
    records = [r for chunk in chunks for r in chunk]
    report = MetricsReport(records, config.repeats)
    if config.output:
        import os
        os.makedirs(config.output, exist_ok=True)
        report.to_csv(os.path.join(config.output, "results.csv"))
    return report


def active_restriction_report(config, strategies, fractions, models=("m-GCRF",)):
    """Compare label-reduction strategies; see :meth:`MetricsReport.ranking`."""
    seen, unique = set(), []
    for s in strategies:
        kind = Kind.parse(s).value
        if kind in seen:
            warnings.warn(f"duplicate strategy {kind!r} ignored", stacklevel=2)
            continue
        seen.add(kind)
        unique.append(kind)
    cfg = replace(config, mechanisms=tuple(unique), fractions=tuple(fractions), models=tuple(models))
    return run(cfg)


# --- benchmarking ------------------------------------------------------------------

BENCH_COLUMNS = ("rows", "cols", "n_nodes", "model", "assembly_seconds", "eval_seconds",
                 "fit_seconds", "iterations", "status")


def bench(sizes, models=("m-GCRF",), missing_fraction=0.2, seed=0, n_steps=5, settings=None):
    """Wall-clock of assembly, one objective+gradient evaluation and a full fit per grid size."""
    rows = []
    for size in sizes:
        r_, c_ = (size, size) if np.isscalar(size) else size
        for model in models:
            row = dict(rows=r_, cols=c_, n_nodes=r_ * c_, model=model, assembly_seconds=float("nan"),
                       eval_seconds=float("nan"), fit_seconds=float("nan"), iterations=0, status="ok")
            try:
                ds = generate(SyntheticSpec(rows=r_, cols=c_, n_steps=n_steps, seed=seed))
                g = ds.graph.subset_steps(list(range(n_steps - 1)))
                r = ds.teacher_output[:, :n_steps - 1]
                frac = missing_fraction if model != "GCRF" else 0.0
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", missingness.FallbackWarning)
                    mask = missingness.apply(Mechanism(Kind.RANDOM, frac, seed=seed), g, range(g.n_steps))
                params = ds.generator.params
                # best of a few: single assemblies take milliseconds
                row["assembly_seconds"] = min(timeit.repeat(lambda: assemble_precision(g, params, r),
                                                            number=1, repeat=5))
                if model == "i-GCRF":
                    blocks = baselines.igcrf_blocks(g, r, mask)
                else:
                    blocks = gcrf.graph_blocks(g, r, masked_labels(g, mask), mask)
                t0 = time.perf_counter()
                gcrf.blocks_value_and_gradient(blocks, params)
                row["eval_seconds"] = time.perf_counter() - t0
                t0 = time.perf_counter()
                fitted = gcrf.maximize(blocks, settings)
                row["fit_seconds"] = time.perf_counter() - t0
                row["iterations"] = fitted.info.iterations
            except MemoryError:
                row["status"] = "out of memory"
            except Exception as exc:
                row["status"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
    return rows


def bench_csv(rows, path=None):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(buf.getvalue())
    return buf.getvalue()
