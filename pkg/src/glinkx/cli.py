"""Command-line interface.

Subcommands: ingest, kge-train, run, ablate, lp, linkx, inductive, synth,
theory, report.  All outputs are JSON-lines; errors print a JSON object
with a machine-readable ``error`` code on stderr and exit nonzero.
``GLINKX_THREADS`` caps the number of parallel per-seed jobs.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .baselines import (LpConfig, label_prop, label_prop_masked, linkx_baseline,
                        lp_accuracy, lp_sweep)
from .config import (RunConfig, apply_profile, load_config, parse_seed_spec)
from .datasets import ingest, load_bundle, parse_feature_file
from .dmat import write_dmat
from .errors import ConfigError, GlinkxError, IngestError
from .graph import build_graph
from .kge import KgeConfig, export_kge, import_kge, kge_train
from .persist import load_artifacts, save_artifacts
from .pipeline import inductive_predict, run_glinkx
from .reporting import format_table, read_jsonl, summarize, write_jsonl
from .synth import PlantedConfig, generate_planted
from .theory import (compare_schemes, counting_estimator_error, loglog_slope,
                     parametric_q_sgd)
from .synth import TheoryConfig, generate_theory_instance
from .theory import counting_estimate, linf_error

logger = logging.getLogger(__name__)


def _threads():
    value = os.environ.get("GLINKX_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        raise ConfigError(f"GLINKX_THREADS must be an integer, got {value!r}")


def _map_jobs(fn, jobs):
    workers = _threads()
    if workers == 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _emit(rows, out_path):
    if out_path:
        write_jsonl(out_path, rows)
    else:
        for row in rows:
            print(json.dumps(row, sort_keys=True))


def _load_edge_graph(path, n=None):
    from .datasets import parse_edge_file

    raw = parse_edge_file(path)
    try:
        pairs = np.array([(int(a), int(b)) for a, b, _ in raw],
                         dtype=np.int64).reshape(len(raw), 2)
    except ValueError:
        raise IngestError(f"{path}: edge endpoints must be integer ids")
    n = n if n is not None else int(pairs.max()) + 1 if pairs.size else 0
    return build_graph(pairs, n)


def _run_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "pe", None):
        cfg = replace(cfg, pe_mode=args.pe)
    if getattr(args, "seeds", None):
        cfg = replace(cfg, seeds=parse_seed_spec(args.seeds))
    if getattr(args, "symmetrize", False):
        cfg = replace(cfg, symmetrize=True)
    return cfg


def _dataset_runs(ds, cfg, args):
    """(split index, seed) products; 'all' covers every shipped split."""
    if cfg.split == "all":
        split_ids = range(len(ds.splits))
    else:
        split_ids = [int(cfg.split)]
    return [(s, seed) for s in split_ids for seed in cfg.seeds]


def _pe_matrix_for(cfg, ds, g, args):
    if cfg.pe_mode != "kge":
        return None
    if getattr(args, "pe_file", None):
        return import_kge(args.pe_file, expected_n=g.n).P.astype(np.float64)
    logger.info("training embeddings in-process (no --pe-file given)")
    table, _ = kge_train(g, cfg.kge, seed=cfg.seeds[0])
    return table.P.astype(np.float64)


def cmd_ingest(args):
    manifest = ingest(args.edges, args.features, args.labels, args.splits,
                      args.out, name=args.name, classes=args.classes)
    print(json.dumps({"kind": "ingest", "name": manifest["name"],
                      "n": manifest["n"], "m": manifest["m"],
                      "d_x": manifest["d_x"], "c": manifest["c"],
                      "n_splits": manifest["n_splits"]}, sort_keys=True))
    return 0


def cmd_kge_train(args):
    g = _load_edge_graph(args.edges, n=args.n)
    cfg = KgeConfig(dim=args.dim, epochs=args.epochs, negatives=args.neg,
                    batch=args.batch, lr=args.lr, loss=args.loss,
                    margin=args.margin)
    table, log = kge_train(g, cfg, seed=args.seed)
    export_kge(table, args.out)
    print(json.dumps({"kind": "kge", "n": table.n, "dim": table.dim,
                      "epochs": cfg.epochs, "final_loss": log[-1]["loss"],
                      "out": args.out}, sort_keys=True))
    return 0


def _single_run(ds, cfg, pe_matrix, split_idx, seed, drop=None, scope="all"):
    g = ds.graph(symmetrize=cfg.symmetrize)
    art = run_glinkx(
        g, ds.x, ds.labels, ds.splits[split_idx], pe_mode=cfg.pe_mode,
        pe_matrix=pe_matrix, stage2_cfg=cfg.stage2, stage3_cfg=cfg.stage3,
        seed=seed, drop=drop, drop_scope=scope,
    )
    return art


def cmd_run(args):
    ds = load_bundle(args.dataset)
    cfg = _run_config(args)
    if args.profile:
        cfg = apply_profile(cfg, ds.name)
    if args.paper_grid:
        cfg.validate_grid()
    g = ds.graph(symmetrize=cfg.symmetrize)
    pe_matrix = _pe_matrix_for(cfg, ds, g, args)
    jobs = _dataset_runs(ds, cfg, args)

    def one(job):
        split_idx, seed = job
        art = _single_run(ds, cfg, pe_matrix, split_idx, seed)
        row = {
            "kind": "run", "method": f"glinkx-{cfg.pe_mode}",
            "dataset": ds.name, "split": split_idx, "seed": seed,
            "accuracy": art.test_accuracy, "edge_passes": art.edge_passes,
            "stage2_best_epoch": art.stage2.best_epoch if art.stage2 else None,
            "stage3_best_epoch": art.stage3.best_epoch,
            "stage2_params": art.stage2.param_count if art.stage2 else 0,
            "stage3_params": art.stage3.param_count,
        }
        if args.auc:
            from .reporting import binary_auc

            if ds.labels.c != 2:
                raise ConfigError("--auc needs a binary dataset")
            test_ids = np.flatnonzero(ds.splits[split_idx].test)
            row["auc"] = binary_auc(art.probs[test_ids, 1],
                                    ds.labels.y[test_ids])
        return row, art

    results = _map_jobs(one, jobs)
    rows = [row for row, _ in results]
    rows.extend(summarize(rows))
    _emit(rows, args.out)
    if args.model_dir:
        save_artifacts(results[-1][1], args.model_dir,
                       extra={"dataset": ds.name,
                              "symmetrize": cfg.symmetrize})
    return 0


def cmd_ablate(args):
    ds = load_bundle(args.dataset)
    cfg = _run_config(args)
    if args.profile:
        cfg = apply_profile(cfg, ds.name)
    if args.paper_grid:
        cfg.validate_grid()
    g = ds.graph(symmetrize=cfg.symmetrize)
    pe_matrix = _pe_matrix_for(cfg, ds, g, args)
    drop = {"ego": "ego", "prop": "propagation", "pe": "pe"}[args.drop]
    jobs = _dataset_runs(ds, cfg, args)

    def one(job):
        split_idx, seed = job
        art = _single_run(ds, cfg, pe_matrix, split_idx, seed, drop=drop,
                          scope=args.scope)
        return {
            "kind": "run",
            "method": f"glinkx-{cfg.pe_mode}-drop-{args.drop}-{args.scope}",
            "dataset": ds.name, "split": split_idx, "seed": seed,
            "accuracy": art.test_accuracy,
        }

    rows = _map_jobs(one, jobs)
    rows.extend(summarize(rows))
    _emit(rows, args.out)
    return 0


def cmd_lp(args):
    ds = load_bundle(args.dataset)
    g = ds.graph()
    rows = []
    split_ids = (range(len(ds.splits)) if args.split == "all"
                 else [int(args.split)])
    for split_idx in split_ids:
        masks = ds.splits[split_idx]
        if args.sweep:
            alphas = [0.01, 0.1, 0.25, 0.5, 0.75, 0.99]
            best = lp_sweep(g, ds.labels, masks, alphas, args.hops,
                            iters=args.iters, clamp=args.clamp)
            rows.append({"kind": "run", "method": f"lp-{args.hops}hop",
                         "dataset": ds.name, "split": split_idx,
                         "alpha": best["alpha"], "accuracy": best["test_acc"],
                         "val_accuracy": best["val_acc"]})
            continue
        cfg = LpConfig(alpha=args.alpha, hops=args.hops, iters=args.iters,
                       clamp=args.clamp)
        if args.mask_a2:
            result = label_prop_masked(g, ds.labels, masks, cfg)
            method = "lp-masked-a2"
        else:
            result = label_prop(g, ds.labels, masks, cfg)
            method = f"lp-{args.hops}hop"
        rows.append({"kind": "run", "method": method, "dataset": ds.name,
                     "split": split_idx, "alpha": args.alpha,
                     "accuracy": lp_accuracy(result, ds.labels, masks.test)})
    rows.extend(summarize(rows))
    _emit(rows, args.out)
    return 0


def cmd_linkx(args):
    ds = load_bundle(args.dataset)
    cfg = _run_config(args)
    if args.profile:
        cfg = apply_profile(cfg, ds.name)
    g = ds.graph()
    jobs = _dataset_runs(ds, cfg, args)

    def one(job):
        split_idx, seed = job
        acc, _ = linkx_baseline(g, ds.x, ds.labels, ds.splits[split_idx],
                                cfg.stage3, seed=seed)
        return {"kind": "run", "method": "linkx", "dataset": ds.name,
                "split": split_idx, "seed": seed, "accuracy": acc}

    rows = _map_jobs(one, jobs)
    rows.extend(summarize(rows))
    _emit(rows, args.out)
    return 0


def _numeric_sort(tokens):
    try:
        return sorted(tokens, key=int)
    except ValueError:
        return sorted(tokens)


def cmd_inductive(args):
    from .datasets import parse_edge_file

    artifacts, manifest = load_artifacts(args.model_dir)
    ds = load_bundle(args.dataset)
    id_map = dict(ds.id_map)
    n_old = ds.n
    raw = parse_edge_file(args.new_edges)
    new_tokens = sorted({tok for a, b, _ in raw for tok in (a, b)
                         if tok not in id_map})
    new_tokens = _numeric_sort(new_tokens)
    for i, tok in enumerate(new_tokens):
        id_map[tok] = n_old + i
    new_edges = np.array([[id_map[a], id_map[b]] for a, b, _ in raw],
                         dtype=np.int64).reshape(len(raw), 2)
    all_edges = np.concatenate([ds.edges, new_edges])
    full_g = build_graph(all_edges, n_old + len(new_tokens),
                         symmetrize=manifest.get("symmetrize", False))
    new_id_of = {tok: i for i, tok in enumerate(new_tokens)}
    x_new = parse_feature_file(args.new_feats, new_id_of).astype(np.float64)
    result = inductive_predict(artifacts, full_g, x_new)
    rows = []
    for i, tok in enumerate(new_tokens):
        rows.append({
            "kind": "prediction", "node": tok,
            "label": int(result.probs[i].argmax()),
            "pe_fallback": bool(result.pe_fallback[i]),
            "yprime_fallback": bool(result.yprime_fallback[i]),
        })
    _emit(rows, args.out)
    return 0


def cmd_synth(args):
    cfg = PlantedConfig(n=args.n, c=args.c, k=args.k, regime=args.regime,
                        feat_dim=args.feat_dim, noise=args.noise,
                        seed=args.seed)
    g, x, labels, masks = generate_planted(cfg)
    os.makedirs(args.out, exist_ok=True)
    # write raw text + DMAT so the bundle can be re-ingested
    edges_path = os.path.join(args.out, "edges.tsv")
    with open(edges_path, "w") as fh:
        fh.write("# src\tdst\n")
        for s, d in g.edges():
            fh.write(f"{s}\t{d}\n")
    labels_path = os.path.join(args.out, "labels.tsv")
    with open(labels_path, "w") as fh:
        for i, label in enumerate(labels.y):
            fh.write(f"{i}\t{label}\n")
    split_path = os.path.join(args.out, "split_0.tsv")
    names = {0: "train", 1: "valid", 2: "test"}
    with open(split_path, "w") as fh:
        for i, role in enumerate(masks.roles):
            fh.write(f"{i}\t{names[int(role)]}\n")
    feats_path = os.path.join(args.out, "features.dmat")
    write_dmat(feats_path, x)
    ingest(edges_path, feats_path, labels_path, [split_path],
           os.path.join(args.out, "bundle"), name=f"synth-{args.regime}")
    print(json.dumps({"kind": "synth", "regime": args.regime, "n": g.n,
                      "m": g.m, "out": args.out}, sort_keys=True))
    return 0


def cmd_theory(args):
    rows = []
    if args.check == "counting-slope":
        k_list = [8, 16, 32, 64, 128, 256, 512, 1024]
        table = counting_estimator_error(
            TheoryConfig(n=args.n, c=args.c, seed=args.seed),
            k_list, trials=args.trials, seed=args.seed,
        )
        slope = loglog_slope(table)
        rows = [{"kind": "run", "method": "counting", **row} for row in table]
        rows.append({"kind": "summary", "method": "counting-slope",
                     "slope": slope})
    elif args.check == "parametric-vs-counting":
        wins = 0
        for seed in range(args.trials):
            inst = generate_theory_instance(
                TheoryConfig(n=args.n, c=args.c, k=args.k, seed=seed,
                             enforce_min_degree=False))
            rep = parametric_q_sgd(inst, seed=seed)
            counting_err = linf_error(counting_estimate(inst), inst.q_target)
            wins += rep.error < counting_err
            rows.append({"kind": "run", "method": "parametric-vs-counting",
                         "seed": seed, "parametric_error": rep.error,
                         "counting_error": counting_err})
        rows.append({"kind": "summary", "method": "parametric-vs-counting",
                     "wins": wins, "trials": args.trials})
    elif args.check == "two-phase":
        diffs = []
        for seed in range(args.trials):
            inst = generate_theory_instance(
                TheoryConfig(n=args.n, c=args.c, k=args.k, seed=seed,
                             enforce_min_degree=False))
            rep = parametric_q_sgd(inst, seed=seed)
            cmp_res = compare_schemes(inst, rep.theta, lam=args.lam,
                                      phase1_steps=args.phase1, seed=seed)
            diffs.append(cmp_res.naive_gap - cmp_res.two_phase_gap)
            rows.append({"kind": "run", "method": "two-phase", "seed": seed,
                         "naive_gap": cmp_res.naive_gap,
                         "two_phase_gap": cmp_res.two_phase_gap})
        rows.append({"kind": "summary", "method": "two-phase",
                     "mean_gap_reduction": float(np.mean(diffs)),
                     "wins": int(np.sum(np.array(diffs) > 0)),
                     "trials": args.trials})
    else:
        raise ConfigError(f"unknown theory check {args.check!r}")
    _emit(rows, args.out)
    return 0


def cmd_report(args):
    rows = read_jsonl(args.input)
    summaries = summarize(rows, metric=args.metric)
    if args.out:
        write_jsonl(args.out, summaries)
    print(format_table([s for s in summaries if s.get("kind") == "summary"
                        and "mean" in s]))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="glinkx",
        description="Node classification with positional embeddings and "
                    "monophilous label propagation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert raw files into a bundle")
    p.add_argument("--edges", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--splits", required=True, nargs="+")
    p.add_argument("--name", default="dataset")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("kge-train", help="train positional embeddings")
    p.add_argument("--edges", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--dim", type=int, default=400)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--neg", type=int, default=1000)
    p.add_argument("--batch", type=int, default=10000)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--loss", choices=["softmax", "margin"], default="softmax")
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kge_train)

    def add_run_args(p, with_pe=True):
        p.add_argument("--dataset", required=True)
        p.add_argument("--config", default=None)
        p.add_argument("--seeds", default=None)
        p.add_argument("--profile", action="store_true",
                       help="use the shipped per-dataset hyperparameters")
        p.add_argument("--paper-grid", action="store_true",
                       help="validate hyperparameters against the sweep grid")
        p.add_argument("--symmetrize", action="store_true")
        p.add_argument("--out", default=None)
        if with_pe:
            p.add_argument("--pe", choices=["kge", "adjacency"], default=None)
            p.add_argument("--pe-file", default=None)

    p = sub.add_parser("run", help="full three-stage pipeline")
    add_run_args(p)
    p.add_argument("--model-dir", default=None,
                   help="save the last run's artifacts here")
    p.add_argument("--auc", action="store_true",
                   help="also report test AUC (binary datasets)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="pipeline with a component removed")
    add_run_args(p)
    p.add_argument("--drop", choices=["ego", "prop", "pe"], required=True)
    p.add_argument("--scope", choices=["all", "stage3"], default="all")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("lp", help="label propagation baseline")
    p.add_argument("--dataset", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--hops", type=int, choices=[1, 2], default=1)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--clamp", action="store_true")
    p.add_argument("--mask-a2", action="store_true",
                   help="propagate on the strict two-hop-only support")
    p.add_argument("--sweep", action="store_true",
                   help="pick alpha by validation accuracy")
    p.add_argument("--split", default="all")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_lp)

    p = sub.add_parser("linkx", help="two-branch adjacency baseline")
    add_run_args(p, with_pe=False)
    p.set_defaults(func=cmd_linkx)

    p = sub.add_parser("inductive", help="predict labels for unseen nodes")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--dataset", required=True,
                   help="the training bundle the model was fit on")
    p.add_argument("--new-edges", required=True)
    p.add_argument("--new-feats", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_inductive)

    p = sub.add_parser("synth", help="generate a planted dataset")
    p.add_argument("--regime",
                   choices=["homophilous", "heterophilous", "mixed"],
                   default="homophilous")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--c", type=int, default=4)
    p.add_argument("--feat-dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("theory", help="error-bound harnesses")
    p.add_argument("--check", required=True,
                   choices=["counting-slope", "parametric-vs-counting",
                            "two-phase"])
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--c", type=int, default=4)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--lam", type=float, default=0.9)
    p.add_argument("--phase1", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("report", help="summarize metric logs")
    p.add_argument("--input", required=True)
    p.add_argument("--metric", default="accuracy")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except GlinkxError as exc:
        print(json.dumps(exc.to_json(), sort_keys=True), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
