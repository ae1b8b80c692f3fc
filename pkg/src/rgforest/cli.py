"""Command-line interface: ``rgf <subcommand> ...``."""

import argparse
import os
import sys
from dataclasses import replace

from . import benchmark as bench
from .boosting import GBDTConfig, boost
from .correction import CorrectionConfig
from .dataset import (DatasetError, SynthConfig, load_dataset, read_dense, read_sparse,
                      read_targets, synthesize, write_dense, write_targets)
from .forest import ModelFormatError, load, save
from .loss import CLI_TOKENS as LOSS_TOKENS
from .loss import LossError
from .regularizers import CLI_TOKENS as REG_TOKENS
from .regularizers import RegConfig
from .trainer import TrainerConfig, cross_validate, score, train_rgf


def _add_data_args(p, targets=True):
    p.add_argument("--data", required=True, help="feature file")
    if targets:
        p.add_argument("--targets", required=True, help="target (or pair) file")
    p.add_argument("--format", default="dense", choices=("dense", "sparse", "pairs"))
    p.add_argument("--feature-format", default="dense", choices=("dense", "sparse"),
                   help="feature layout when --format pairs")
    p.add_argument("--n-features", type=int, default=None)


def _add_rgf_args(p):
    p.add_argument("--loss", default="LS", choices=sorted(LOSS_TOKENS))
    p.add_argument("--reg", default="L2", choices=sorted(REG_TOKENS))
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--lambda-g", dest="lam_g", type=float, default=None,
                   help="lambda used while growing (default: --lambda)")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--reg-tol", type=float, default=1e-8)
    p.add_argument("--reg-max-iter", type=int, default=1000)
    p.add_argument("--max-leaf", type=int, default=1000)
    p.add_argument("--recent-trees", type=int, default=1)
    p.add_argument("--min-node", type=int, default=1)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--opt-interval", type=int, default=100)
    p.add_argument("--opt-passes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)


def _trainer_config(a):
    return TrainerConfig(
        loss=LOSS_TOKENS[a.loss],
        reg=RegConfig(REG_TOKENS[a.reg], lam=a.lam, gamma=a.gamma, tol=a.reg_tol,
                      max_iter=a.reg_max_iter),
        lam_g=a.lam_g,
        correction=CorrectionConfig(eta=a.eta, passes=a.opt_passes, interval=a.opt_interval),
        recent_trees=a.recent_trees,
        min_node=a.min_node,
        max_leaf=a.max_leaf,
        report_every=getattr(a, "report_every", 0) or 0,
        seed=a.seed,
    )


def _load(a, data_path=None, target_path=None):
    return load_dataset(data_path or a.data, target_path or getattr(a, "targets", None),
                        format=a.format, n_features=a.n_features,
                        feature_format=a.feature_format)


def _read_features(a):
    layout = a.feature_format if a.format == "pairs" else a.format
    if layout == "sparse":
        return read_sparse(a.data, a.n_features)
    return read_dense(a.data)


def cmd_train(a):
    data = _load(a)
    monitor = None
    if a.monitor_data:
        if not a.monitor_targets:
            raise ValueError("--monitor-data needs --monitor-targets")
        monitor = _load(a, a.monitor_data, a.monitor_targets)
    forest, report = train_rgf(data, _trainer_config(a), monitor=monitor)
    save(forest, a.model_out)
    for r in report.records:
        extra = "" if r.monitor is None else f" monitor={r.monitor:.6g}"
        print(f"leaves={r.leaves} Q={r.objective:.6g} loss={r.loss:.6g}{extra}")
    print(f"trees={len(forest)} leaves={forest.n_leaves} stop={report.stop_reason}")
    return 0


def cmd_predict(a):
    forest = load(a.model)
    pred = forest.predict(_read_features(a))
    write_targets(pred, a.out)
    return 0


def cmd_eval(a):
    pred = read_targets(a.pred)
    y = read_targets(a.targets)
    print(f"{a.metric}={score(pred, y, a.metric):.6f}")
    return 0


_GRID_KEYS = {
    "lambda": ("lam", float), "lambda_g": ("lam_g", float), "gamma": ("gamma", float),
    "max_leaf": ("max_leaf", int), "reg": ("reg", str), "loss": ("loss", str),
    "eta": ("eta", float), "opt_interval": ("opt_interval", int),
    "opt_passes": ("opt_passes", int), "recent_trees": ("recent_trees", int),
    "min_node": ("min_node", int),
}


def parse_grid(path, base):
    """One ``key=value,key=value`` configuration per non-blank line."""
    configs, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            ns = argparse.Namespace(**vars(base))
            for item in line.split(","):
                key, sep, val = item.strip().partition("=")
                key = key.strip().replace("-", "_")
                if not sep or key not in _GRID_KEYS:
                    raise ValueError(f"{path}:{lineno}: bad grid entry {item.strip()!r}")
                attr, cast = _GRID_KEYS[key]
                setattr(ns, attr, cast(val.strip()))
            configs.append(_trainer_config(ns))
            labels.append(line)
    if not configs:
        raise ValueError(f"{path}: empty grid")
    return configs, labels


def cmd_cv(a):
    data = _load(a)
    grid, labels = parse_grid(a.grid, a)
    res = cross_validate(data, grid, folds=a.folds, seed=a.seed)
    for label, s in zip(labels, res.scores):
        print(f"{s:.6f}  {label}")
    print(f"best: {labels[res.best_index]}")
    if a.model_out:
        forest, _ = train_rgf(data, res.best)
        save(forest, a.model_out)
    return 0


def cmd_synth(a):
    train, test, _ = synthesize(SynthConfig(q=a.q, num_target_trees=a.num_trees, dim=a.dim,
                                            n_train=a.n_train, n_test=a.n_test, seed=a.seed))
    os.makedirs(a.out_dir, exist_ok=True)
    write_dense(train.X, os.path.join(a.out_dir, "train.x"))
    write_targets(train.y, os.path.join(a.out_dir, "train.y"))
    write_dense(test.X, os.path.join(a.out_dir, "test.x"))
    write_targets(test.y, os.path.join(a.out_dir, "test.y"))
    return 0


def cmd_gbdt(a):
    data = _load(a)
    cfg = GBDTConfig(loss=LOSS_TOKENS[a.loss], J=a.tree_leaves, K=a.num_trees, s=a.shrink,
                     seed=a.seed, variant=a.variant)
    forest, report = boost(data, cfg)
    save(forest, a.model_out)
    print(f"trees={len(forest)} train_loss={report.train_loss[-1]:.6g}")
    return 0


def cmd_bench(a):
    spec = bench.BenchmarkSpec(
        q_values=tuple(a.q), runs=a.runs, n_train=a.n_train, n_test=a.n_test,
        rgf_regs=tuple(REG_TOKENS[r] for r in a.regs), rgf_max_leaf=a.max_leaf,
        gbdt_K_max=a.gbdt_k_max, include_gbdt=not a.no_gbdt, folds=a.folds, seed=a.seed)
    if a.lambdas:
        spec = replace(spec, rgf_lambdas=tuple(a.lambdas))

    def progress(row):
        print(",".join(str(x) for x in row.as_tuple()), file=sys.stderr)

    rows = bench.run_benchmark(spec, progress=progress)
    text = bench.to_csv(rows)
    if a.csv:
        with open(a.csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    sys.stdout.write("\n" + bench.format_table(rows))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="rgf", description="Regularized greedy forest tools")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("train", help="train a regularized greedy forest")
    _add_data_args(p)
    _add_rgf_args(p)
    p.add_argument("--model-out", required=True)
    p.add_argument("--monitor-data")
    p.add_argument("--monitor-targets")
    p.add_argument("--report-every", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict with a saved model")
    p.add_argument("--model", required=True)
    _add_data_args(p, targets=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against targets")
    p.add_argument("--pred", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--metric", default="rmse", choices=("rmse", "accuracy"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="cross-validate a grid of training configurations")
    _add_data_args(p)
    _add_rgf_args(p)
    p.add_argument("--folds", type=int, default=2)
    p.add_argument("--grid", required=True, help="one key=value,... configuration per line")
    p.add_argument("--model-out", help="retrain the best configuration on all data")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("synth", help="write a synthetic random-tree-ensemble dataset")
    p.add_argument("--q", type=int, default=10)
    p.add_argument("--num-trees", type=int, default=100)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gbdt", help="train a gradient boosting baseline")
    _add_data_args(p)
    p.add_argument("--loss", default="LS", choices=sorted(LOSS_TOKENS))
    p.add_argument("--variant", default="gbdt", choices=("gbdt", "generic", "fc"))
    p.add_argument("--tree-leaves", type=int, default=20)
    p.add_argument("--num-trees", type=int, default=100)
    p.add_argument("--shrink", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=cmd_gbdt)

    p = sub.add_parser("bench", help="run the synthetic RGF vs GBDT benchmark")
    p.add_argument("--q", type=int, nargs="+", default=[5, 10, 20])
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=20000)
    p.add_argument("--regs", nargs="+", default=["L2", "MinPenSib"], choices=sorted(REG_TOKENS))
    p.add_argument("--lambdas", type=float, nargs="+")
    p.add_argument("--max-leaf", type=int, default=bench.BenchmarkSpec.rgf_max_leaf)
    p.add_argument("--gbdt-k-max", type=int, default=bench.BenchmarkSpec.gbdt_K_max)
    p.add_argument("--no-gbdt", action="store_true")
    p.add_argument("--folds", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="write the CSV here instead of stdout")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DatasetError, ModelFormatError, LossError, ValueError, OSError) as exc:
        print(f"rgf {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
