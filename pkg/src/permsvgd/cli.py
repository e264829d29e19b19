"""Command-line pipeline: synth -> order -> infer -> eval, per seed.

Every seed gets its own directory ``<out>/seed_<s>/`` holding

* ``data.csv``, ``test.csv``, ``graph.txt``, ``sem.json`` (synth),
* ``ordering.txt`` and ``ordering_trace.json`` (order),
* ``checkpoint.json``, ``particles.json``, ``graphs/particle_<m>.txt`` (infer),
* ``metrics.csv`` (eval).

``run-all`` additionally writes ``<out>/metrics.csv`` with every seed's rows
followed by mean and std rows per method. Log verbosity comes from the
``PERMSVGD_LOG`` environment variable (default ``WARNING``).

Exit codes: 0 success, 2 validation error, 3 numeric degeneracy, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
from pathlib import Path
import shutil
import sys

import numpy as np

from . import streams
from .config import SACHS_SHAPE, ExperimentConfig
from .errors import NumericDegeneracyError, ValidationError
from .evaluation import (
    auroc_of_mixture,
    expected_shd,
    make_mixture,
    max_cyclicity,
    neg_log_likelihood,
)
from .graph import DirectedGraph, Ordering, cyclicity_score, is_acyclic, read_graph, write_graph
from .likelihood import make_model
from .ordering import eqvar_ordering
from .svgd import load_checkpoint, run_inference, save_checkpoint
from .synth import (
    read_csv,
    sample_er_dag,
    sample_linear_sem,
    sample_nonlinear_sem,
    simulate,
    standardize,
    write_csv,
    write_sem,
)

log = logging.getLogger("permsvgd")

METRIC_COLUMNS = ["seed", "method", "d", "n", "steps", "eshd", "auroc", "cyclicity", "negll"]

# purpose keys for the data-side random streams
_SYNTH_STREAM = 1
_ORDER_STREAM = 2


def seed_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return Path(cfg.out) / f"seed_{seed}"


# --------------------------------------------------------------------------- #
# Stages
# --------------------------------------------------------------------------- #

def cmd_synth(cfg: ExperimentConfig, seed: int) -> Path:
    """Sample a DAG, its SEM, training and held-out data."""
    if cfg.dataset != "synthetic":
        raise ValidationError("synth only applies to dataset=synthetic")
    out = seed_dir(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    rng = streams.stream(seed, _SYNTH_STREAM)
    G = sample_er_dag(cfg.d, cfg.er_degree, rng)
    if cfg.model == "linear":
        sem = sample_linear_sem(G, rng, sigma_obs=cfg.sigma_obs)
    else:
        sem = sample_nonlinear_sem(G, rng, hidden=(cfg.hidden,), sigma_obs=cfg.sigma_obs)
    write_csv(out / "data.csv", simulate(sem, cfg.n, rng).X)
    if cfg.n_test:
        write_csv(out / "test.csv", simulate(sem, cfg.n_test, rng).X)
    write_graph(out / "graph.txt", G)
    write_sem(out / "sem.json", sem)
    return out


def load_data(cfg: ExperimentConfig, seed: int):
    """Return ``(X, X_test or None, ground-truth graph or None)``."""
    if cfg.dataset == "synthetic":
        base = seed_dir(cfg, seed)
        X = read_csv(base / "data.csv")
        test = base / "test.csv"
        X_test = read_csv(test) if test.exists() else None
        G = read_graph(base / "graph.txt")
    else:
        X = read_csv(cfg.data_path)
        X_test = read_csv(cfg.test_path) if cfg.test_path else None
        G = read_graph(cfg.graph_path) if cfg.graph_path else None
        if cfg.dataset == "sachs" and X.shape != SACHS_SHAPE:
            raise ValidationError(f"flow-cytometry data must be {SACHS_SHAPE}, got {X.shape}")
    if G is not None and G.d != X.shape[1]:
        raise ValidationError("ground-truth graph and data disagree on d")
    if cfg.standardize:
        X = standardize(X)
        X_test = standardize(X_test) if X_test is not None else None
    return X, X_test, G


def read_ordering(path) -> Ordering:
    """Whitespace-separated variables listed root-first."""
    try:
        order = [int(tok) for tok in Path(path).read_text().split()]
    except ValueError as exc:
        raise ValidationError(f"{path}: malformed ordering file ({exc})") from None
    return Ordering.from_order(order)


def write_ordering(path, pi: Ordering) -> None:
    Path(path).write_text(" ".join(str(int(v)) for v in pi.order) + "\n")


def cmd_order(cfg: ExperimentConfig, seed: int) -> Ordering:
    out = seed_dir(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    X, _, G = load_data(cfg, seed)
    trace = []
    if cfg.ordering == "eqvar":
        est = eqvar_ordering(X)
        pi, trace = est.pi, est.selection_trace
    elif cfg.ordering == "gt":
        if G is None:
            raise ValidationError("ordering=gt needs a ground-truth graph")
        pi = Ordering.from_dag(G)
    elif cfg.ordering == "random":
        pi = Ordering.random(X.shape[1], streams.stream(seed, _ORDER_STREAM))
    else:
        pi = read_ordering(cfg.ordering[len("file:"):])
        if pi.d != X.shape[1]:
            raise ValidationError("ordering file and data disagree on d")
    write_ordering(out / "ordering.txt", pi)
    (out / "ordering_trace.json").write_text(json.dumps(trace) + "\n")
    return pi


def _run_signature(cfg: ExperimentConfig, seed: int, pi: Ordering) -> dict:
    keys = ("model", "particles", "alpha_rate", "learning_rate", "gamma_z", "gamma_theta",
            "n_graph_samples", "n_gumbel_samples", "z_estimator", "denominator", "q",
            "er_degree", "sigma_obs", "hidden", "standardize")
    sig = {k: getattr(cfg, k) for k in keys}
    sig.update(seed=seed, ordering=[int(v) for v in pi.order])
    return sig


def cmd_infer(cfg: ExperimentConfig, seed: int) -> Path:
    """Run inference, checkpointing every ``checkpoint_every`` steps (resumable)."""
    out = seed_dir(cfg, seed)
    X, _, _ = load_data(cfg, seed)
    pi = read_ordering(out / "ordering.txt")
    svgd_cfg = cfg.svgd_config()
    signature = _run_signature(cfg, seed, pi)
    ckpt = out / "checkpoint.json"

    state = None
    if ckpt.exists():
        saved, meta = load_checkpoint(ckpt)
        if meta.get("signature") == signature and saved.t <= cfg.steps:
            log.info("resuming seed %d from step %d", seed, saved.t)
            state = saved

    def on_checkpoint(st):
        for G in st.graphs(pi):
            if not is_acyclic(G) or cyclicity_score(G) != 0.0:
                raise NumericDegeneracyError("extracted graph is cyclic", {"step": st.t})
        save_checkpoint(ckpt, st, {"signature": signature})
        log.info("seed %d: step %d checkpointed", seed, st.t)

    result = run_inference(X, pi, svgd_cfg, seed, callback=on_checkpoint,
                           callback_every=cfg.checkpoint_every, state=state)
    save_checkpoint(ckpt, result.state, {"signature": signature})

    model = make_model(cfg.model, X.shape[1], svgd_cfg.model_cfg)
    graph_dir = out / "graphs"
    if graph_dir.exists():
        shutil.rmtree(graph_dir)
    graph_dir.mkdir()
    records = []
    for m, G in enumerate(result.graphs):
        write_graph(graph_dir / f"particle_{m:03d}.txt", G)
        records.append({"edges": [list(e) for e in G.edges()],
                        "params": result.state.theta[m].tolist()})
    obj = {"model": cfg.model, "d": X.shape[1], "hidden": cfg.hidden, "steps": result.state.t,
           "ordering": [int(v) for v in pi.order], "n_params": model.n_params, "particles": records}
    (out / "particles.json").write_text(json.dumps(obj) + "\n")
    return out


def load_particles(path, cfg: ExperimentConfig):
    obj = json.loads(Path(path).read_text())
    model = make_model(obj["model"], obj["d"], cfg.model_config())
    return [(DirectedGraph.from_edges(obj["d"], [tuple(e) for e in rec["edges"]]),
             model.unflatten(np.array(rec["params"])))
            for rec in obj["particles"]], obj


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def evaluate_seed(cfg: ExperimentConfig, seed: int) -> list[dict]:
    out = seed_dir(cfg, seed)
    X, X_test, Gstar = load_data(cfg, seed)
    particles, meta = load_particles(out / "particles.json", cfg)
    q = cfg.svgd_config().edge_prior(X.shape[1])
    rows = []
    for mode in ("uniform", "weighted"):
        mix = make_mixture(particles, X, mode, q=q, cfg=cfg.model_config())
        has_truth = Gstar is not None and 0 < Gstar.n_edges < Gstar.d * (Gstar.d - 1)
        rows.append({
            "seed": seed,
            "method": f"{cfg.ordering.split(':')[0]}-{mode}",
            "d": X.shape[1],
            "n": X.shape[0],
            "steps": meta["steps"],
            "eshd": expected_shd(mix, Gstar) if Gstar is not None else None,
            "auroc": auroc_of_mixture(mix, Gstar) if has_truth else None,
            "cyclicity": max_cyclicity(mix),
            "negll": neg_log_likelihood(mix, X_test, cfg.model_config()) if X_test is not None else None,
        })
    return rows


def write_metrics(path, rows) -> None:
    lines = [",".join(METRIC_COLUMNS)]
    lines += [",".join(_fmt(r[c]) if c not in ("seed", "method") else str(r[c]) for c in METRIC_COLUMNS)
              for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def summary_rows(rows) -> list[dict]:
    """Mean and (population) standard deviation per method over seeds."""
    out = []
    methods = list(dict.fromkeys(r["method"] for r in rows))
    for stat, fn in (("mean", np.mean), ("std", np.std)):
        for method in methods:
            group = [r for r in rows if r["method"] == method]
            row = {"seed": stat, "method": method}
            for c in METRIC_COLUMNS[2:]:
                vals = [r[c] for r in group if r[c] is not None]
                row[c] = float(fn(vals)) if vals else None
            out.append(row)
    return out


def cmd_eval(cfg: ExperimentConfig, seed: int) -> list[dict]:
    rows = evaluate_seed(cfg, seed)
    write_metrics(seed_dir(cfg, seed) / "metrics.csv", rows)
    return rows


def cmd_run_all(cfg: ExperimentConfig) -> list[dict]:
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    cfg.save(Path(cfg.out) / "config.json")
    rows = []
    for seed in cfg.seeds:
        if cfg.dataset == "synthetic":
            cmd_synth(cfg, seed)
        cmd_order(cfg, seed)
        cmd_infer(cfg, seed)
        rows += cmd_eval(cfg, seed)
    write_metrics(Path(cfg.out) / "metrics.csv", rows + summary_rows(rows))
    return rows


# --------------------------------------------------------------------------- #
# Entry point
# --------------------------------------------------------------------------- #

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="permsvgd", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "order", "infer", "eval", "run-all"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--seeds-count", type=int)
        p.add_argument("--out")
        p.add_argument("--model", choices=("linear", "nonlinear"))
        p.add_argument("--ordering", help="eqvar | gt | random | file:PATH")
        p.add_argument("--steps", type=int)
        p.add_argument("--particles", type=int)
        p.add_argument("--workers", type=int)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return cfg.override(seed=args.seed, seeds_count=args.seeds_count, out=args.out, model=args.model,
                        ordering=args.ordering, steps=args.steps, particles=args.particles,
                        workers=args.workers)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "run-all":
            cmd_run_all(cfg)
            return 0
        stage = {"synth": cmd_synth, "order": cmd_order, "infer": cmd_infer, "eval": cmd_eval}[args.command]
        for seed in cfg.seeds:
            stage(cfg, seed)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericDegeneracyError as exc:
        print(f"numeric degeneracy: {exc} {exc.diagnostics}", file=sys.stderr)
        return 3
    except (OSError, json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    return 0


def main(argv=None) -> None:
    logging.basicConfig(level=os.environ.get("PERMSVGD_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
