"""Command-line harness: ``nnkood synth|fit|score|eval|sweep|bench``.

Exit codes: 0 success, 2 usage, 3 configuration, 4 data/format, 5 numerical failure.
Options may also come from a JSON file given with ``--config``; flags on the
command line win over the file, which wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from dataclasses import asdict

import numpy as np

from . import data as data_mod
from .detectors import LOGIT_METHODS, METHODS, decide, fit, score, threshold_for_id_recall
from .dictionary import TrainConfig
from .errors import (ConfigError, ConvergenceError, DataError, FormatError, GenerationError,
                     InternalError, MetricError, PreconditionError, ShapeError, SingularError)
from .kernels import KernelSpec
from .metrics import auroc, evaluate, time_scoring
from .modelio import load_model, save_model

logger = logging.getLogger("nnkood")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 3, 4, 5

TRAIN_DEFAULTS = dict(kernel="cosine", sigma=1.0, m_init=64, k=5, lam=0.0, epochs=10,
                      final_plain_epochs=2, seed=0, ridge=None, entropy_sign="cross-entropy",
                      knn_k=1, kmeans_iters=50)


def _add_train_options(p, multi_seed=False):
    g = p.add_argument_group("training")
    g.add_argument("--kernel", choices=["cosine", "gaussian"])
    g.add_argument("--sigma", type=float, help="gaussian kernel bandwidth")
    g.add_argument("--m-init", type=int, help="initial number of atoms / clusters")
    g.add_argument("--k", type=int, help="sparsity: atoms per code")
    g.add_argument("--lambda", dest="lam", type=float, help="entropy-constraint weight")
    g.add_argument("--epochs", type=int)
    g.add_argument("--final-plain-epochs", type=int)
    g.add_argument("--ridge", type=float)
    g.add_argument("--entropy-sign", choices=["cross-entropy", "inverse"])
    g.add_argument("--knn-k", type=int)
    g.add_argument("--kmeans-iters", type=int)
    if multi_seed:
        g.add_argument("--seeds", type=int, nargs="+")
    else:
        g.add_argument("--seed", type=int)


def _opt(args, name):
    v = getattr(args, name, None)
    return TRAIN_DEFAULTS.get(name) if v is None else v


def _train_config(args, seed=None, **overrides) -> TrainConfig:
    kernel = KernelSpec(_opt(args, "kernel"), _opt(args, "sigma"))
    m_init = overrides.pop("m_init", _opt(args, "m_init"))
    k = min(_opt(args, "k"), m_init)
    return TrainConfig(
        m_init=m_init, k_sparsity=k, lam=overrides.pop("lam", _opt(args, "lam")),
        epochs=_opt(args, "epochs"), final_plain_epochs=_opt(args, "final_plain_epochs"),
        kernel=kernel, seed=_opt(args, "seed") if seed is None else seed,
        ridge=_opt(args, "ridge"), entropy_sign=_opt(args, "entropy_sign"),
        knn_k=_opt(args, "knn_k"), kmeans_iters=_opt(args, "kmeans_iters"))


def _seeds(args):
    return args.seeds if getattr(args, "seeds", None) else [0]


def _load_flags(path):
    return data_mod.load_labels(path).astype(bool)


def _write_scores(path, scores):
    np.savetxt(path, np.asarray(scores), fmt="%.17g")


def _load_scores(path):
    return data_mod.load_embeddings(path, "csv")[:, 0]


def _ensure_dir(path):
    if path:
        os.makedirs(path, exist_ok=True)


# ------------------------------------------------------------------ commands


def cmd_synth(args):
    ds = data_mod.generate_synthetic(
        args.id_clusters, args.ood_clusters, args.per_cluster, args.dim, args.separation,
        args.noise_sigma, args.seed, n_train=args.n_train, n_test_id=args.n_test_id,
        n_test_ood=args.n_test_ood)
    _ensure_dir(args.out)
    files = {
        "train": ("train.npy", ds.train_id),
        "train_labels": ("train_labels.csv", ds.train_labels),
        "test": ("test.npy", ds.test),
        "test_is_ood": ("test_is_ood.csv", ds.test_is_ood.astype(np.int64)),
    }
    if args.logits:
        files["train_logits"] = ("train_logits.npy", ds.train_logits)
        files["test_logits"] = ("test_logits.npy", ds.test_logits)
    for name, arr in files.values():
        path = os.path.join(args.out, name)
        if name.endswith(".npy"):
            data_mod.save_embeddings(path, arr)
        else:
            data_mod.save_labels(path, arr)
    manifest = {
        "generator": "isotropic-gaussian-clusters",
        "params": {k: getattr(args, k) for k in ("id_clusters", "ood_clusters", "per_cluster", "dim",
                                                 "separation", "noise_sigma", "seed", "n_train",
                                                 "n_test_id", "n_test_ood")},
        "files": {key: name for key, (name, _) in files.items()},
        "shapes": {key: list(np.shape(arr)) for key, (_, arr) in files.items()},
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    print(f"wrote {len(files)} files and manifest.json to {args.out}")


def cmd_fit(args):
    X = data_mod.load_embeddings(args.train) if args.train else None
    labels = data_mod.load_labels(args.labels) if args.labels else None
    logits = data_mod.load_embeddings(args.logits) if args.logits else None
    model = fit(args.method, X, labels, logits, _train_config(args))
    save_model(model, args.out)
    atoms = model.payload.get("atoms")
    extra = f" with {atoms.shape[0]} atoms" if atoms is not None else ""
    print(f"fitted {args.method}{extra} -> {args.out}")


def cmd_score(args):
    model = load_model(args.model)
    Q = data_mod.load_embeddings(args.queries) if args.queries else None
    logits = data_mod.load_embeddings(args.logits) if args.logits else None
    scores, seconds = time_scoring(model, Q, logits, repeats=args.repeats)
    _write_scores(args.out, scores)
    print(f"scored {scores.size} queries in {seconds:.4f}s -> {args.out}")


def cmd_eval(args):
    scores = _load_scores(args.scores)
    is_ood = _load_flags(args.is_ood)
    if scores.size != is_ood.size:
        raise ShapeError(f"{scores.size} scores but {is_ood.size} OOD flags")
    report = evaluate(scores, is_ood, args.inference_seconds)
    text = report.to_json()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    if args.decisions:
        eps = threshold_for_id_recall(scores[~is_ood], args.recall)
        np.savetxt(args.decisions, decide(scores, eps).astype(np.int64), fmt="%d")
        print(f"threshold {eps:.6g} keeps {args.recall:.0%} ID recall -> {args.decisions}")


def _validation_split(args):
    X = data_mod.load_embeddings(args.train)
    if args.val:
        if not args.val_is_ood:
            raise ConfigError("--val requires --val-is-ood")
        return X, data_mod.load_embeddings(args.val), _load_flags(args.val_is_ood)
    if not (args.test and args.is_ood):
        raise ConfigError("provide --val/--val-is-ood or --test/--is-ood with --val-fraction")
    Q, flags = data_mod.load_embeddings(args.test), _load_flags(args.is_ood)
    rng = np.random.default_rng(args.split_seed)
    perm = rng.permutation(Q.shape[0])
    n_val = max(2, int(round(args.val_fraction * Q.shape[0])))
    idx = np.sort(perm[:n_val])
    return X, Q[idx], flags[idx]


def cmd_sweep(args):
    if not args.m_init_grid or not args.lambdas:
        raise ConfigError("empty hyper-parameter grid")
    if args.method in LOGIT_METHODS or args.method in ("knn", "mahalanobis"):
        raise ConfigError(f"method {args.method!r} has no atom/lambda grid")
    X, Qv, flags = _validation_split(args)
    labels = data_mod.load_labels(args.labels) if args.labels else None
    rows = []
    for m in args.m_init_grid:
        for lam in args.lambdas:
            aucs, sizes = [], []
            for seed in _seeds(args):
                cfg = _train_config(args, seed=seed, m_init=m, lam=lam)
                model = fit(args.method, X, labels, None, cfg)
                aucs.append(auroc(score(model, Qv), flags))
                sizes.append(_model_size(model))
            rows.append({"m_init": m, "lambda": lam, "val_auroc": statistics.mean(aucs),
                         "final_m": statistics.mean(sizes), "best": 0})
            logger.info("m_init=%d lambda=%g auroc=%.4f final_m=%g", m, lam, rows[-1]["val_auroc"],
                        rows[-1]["final_m"])
    best = max(range(len(rows)), key=lambda i: (rows[i]["val_auroc"], -i))
    rows[best]["best"] = 1
    _write_rows(args.out, rows)
    print(f"best: m_init={rows[best]['m_init']} lambda={rows[best]['lambda']} "
          f"val_auroc={rows[best]['val_auroc']:.4f} final_m={rows[best]['final_m']}")


def _model_size(model):
    if "atoms" in model.payload:
        return model.payload["atoms"].shape[0]
    if "n_classes" in model.payload and "atoms/0" in model.payload:
        return sum(model.payload[f"atoms/{c}"].shape[0] for c in range(model.n_classes))
    return 0


def _write_rows(path, rows):
    if path:
        _ensure_dir(os.path.dirname(path))
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)


def cmd_bench(args):
    if len(args.methods) < 2:
        raise ConfigError("bench needs at least two methods")
    unknown = [m for m in args.methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods: {unknown}")
    X = data_mod.load_embeddings(args.train) if args.train else None
    labels = data_mod.load_labels(args.labels) if args.labels else None
    tl = data_mod.load_embeddings(args.train_logits) if args.train_logits else None
    Q = data_mod.load_embeddings(args.test) if args.test else None
    ql = data_mod.load_embeddings(args.test_logits) if args.test_logits else None
    flags = _load_flags(args.is_ood)
    _ensure_dir(args.out_dir)
    rows = []
    for method in args.methods:
        reports = []
        for seed in _seeds(args):
            model = fit(method, X, labels, tl, _train_config(args, seed=seed))
            scores, seconds = time_scoring(model, Q, ql, repeats=args.repeats, single_thread=True)
            rep = evaluate(scores, flags, seconds)
            reports.append(rep)
            if args.out_dir:
                with open(os.path.join(args.out_dir, f"{method}_seed{seed}.json"), "w") as f:
                    f.write(rep.to_json() + "\n")
        agg = {k: statistics.mean(getattr(r, k) for r in reports)
               for k in ("auroc", "aupr", "fpr_at_95", "inference_seconds")}
        row = {"method": method, **agg, "n_id": reports[0].n_id, "n_ood": reports[0].n_ood,
               "n_seeds": len(reports)}
        rows.append(row)
        if args.out_dir:
            with open(os.path.join(args.out_dir, f"{method}_aggregate.json"), "w") as f:
                json.dump({**row, "per_seed": [asdict(r) for r in reports]}, f, indent=2)
    _write_rows(os.path.join(args.out_dir, "bench.csv") if args.out_dir else None, rows)


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nnkood", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic ID/OOD benchmark")
    p.add_argument("--id-clusters", type=int, default=3)
    p.add_argument("--ood-clusters", type=int, default=1)
    p.add_argument("--per-cluster", type=int, default=100)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test-id", type=int)
    p.add_argument("--n-test-ood", type=int)
    p.add_argument("--logits", action="store_true", help="also write synthetic classifier logits")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit a detector and write a model file")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--train", help="ID embeddings (.npy or .csv)")
    p.add_argument("--labels", help="ID labels, one integer per line")
    p.add_argument("--logits", help="ID logits for msp/energy/d2u")
    p.add_argument("--out", required=True)
    _add_train_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="score queries with a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--queries")
    p.add_argument("--logits")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute AUROC/AUPR/FPR@95 from a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--is-ood", required=True, help="0/1 per line, 1 = OOD")
    p.add_argument("--out")
    p.add_argument("--inference-seconds", type=float, default=0.0)
    p.add_argument("--recall", type=float, default=0.95, help="ID recall for --decisions")
    p.add_argument("--decisions", help="write 0/1 OOD decisions at the recall threshold")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid search over initial atoms and lambda")
    p.add_argument("--method", default="ec_nnk", choices=METHODS)
    p.add_argument("--train", required=True)
    p.add_argument("--labels")
    p.add_argument("--val")
    p.add_argument("--val-is-ood")
    p.add_argument("--test")
    p.add_argument("--is-ood")
    p.add_argument("--val-fraction", type=float, default=0.5)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--m-init-grid", type=int, nargs="*", default=[500, 1000, 2000, 4000])
    p.add_argument("--lambdas", type=float, nargs="*", default=[0.01, 0.03, 0.05, 0.07])
    p.add_argument("--out")
    _add_train_options(p, multi_seed=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="compare detectors on one query set")
    p.add_argument("--methods", nargs="+", required=True)
    p.add_argument("--train")
    p.add_argument("--labels")
    p.add_argument("--train-logits")
    p.add_argument("--test")
    p.add_argument("--test-logits")
    p.add_argument("--is-ood", required=True)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out-dir")
    _add_train_options(p, multi_seed=True)
    p.set_defaults(func=cmd_bench)
    return parser


def _apply_config(parser, argv):
    pre, _ = parser.parse_known_args(argv)
    if not pre.config:
        return parser.parse_args(argv)
    try:
        with open(pre.config) as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {pre.config}: {exc}") from exc
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    if "lambda" in cfg:
        cfg["lam"] = cfg.pop("lambda")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparsers.choices[pre.command].set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        try:
            args = _apply_config(parser, argv)
        except SystemExit as exc:  # argparse usage errors and --help
            return int(exc.code or 0)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except (ConfigError, PreconditionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DataError, ShapeError, GenerationError, MetricError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SingularError, ConvergenceError, InternalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
