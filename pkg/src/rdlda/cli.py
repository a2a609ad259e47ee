"""Command-line entry point: ``rdlda {train,sweep,subclass,eval,export-dims}``.

Exit status is 0 on success, 1 for configuration errors (bad flags,
invalid values, unreadable config files) and 2 for failures while running.
"""

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from . import harness
from .data import FeatureStats
from .errors import ConfigError
from .network import load_checkpoint
from .training import latents

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_common(p):
    g = p.add_argument_group("data")
    g.add_argument("--config", help="key = value config file; flags override its values")
    g.add_argument("--data", help="CSV file or .rdim image tensor")
    g.add_argument("--test-data", help="separate test file (default: stratified split of --data)")
    g.add_argument("--label-column", help="label column name or index (CSV)")
    g.add_argument("--synthetic", metavar="SPEC", help="e.g. gaussians:c=3,n=200,d=10,sep=6,seed=0")
    g.add_argument("--val-fraction", type=float)
    g.add_argument("--test-fraction", type=float)
    g = p.add_argument_group("model")
    g.add_argument("--objective", choices=("rdlda", "dlda", "cce"))
    g.add_argument("--alpha", type=float)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--net", choices=("mlp", "dorfernet-mini"))
    g.add_argument("--hidden", help="comma-separated hidden widths for the mlp preset")
    g.add_argument("--predictor", choices=("hyperplane", "euclidean", "lda"))
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--momentum", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--lr-period", type=int)
    g.add_argument("--clip-norm", help="gradient norm clip, or 'none'")
    g.add_argument("--hflip", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--bins", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="rdlda", description="Regularized deep LDA experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", help="train one model and write report, confusion, histograms, checkpoint")
    _add_common(p)
    p = sub.add_parser("sweep", help="one rdlda run per alpha, plus sweep.csv")
    _add_common(p)
    p.add_argument("--alphas", help="comma-separated alphas, e.g. 0,0.2,0.5,1")
    p = sub.add_parser("subclass", help="autoencoder + k-means subclass pipeline")
    _add_common(p)
    p.add_argument("--k", type=int)
    p.add_argument("--ae-epochs", type=int)
    p.add_argument("--embedding-dim", type=int)
    p.add_argument("--ae-lr", type=float)
    for name, text in (("eval", "evaluate a checkpoint on the configured test split"),
                       ("export-dims", "write per-dimension histograms of a checkpoint's test latents")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        p.add_argument("--checkpoint", required=True)
    return parser


_NON_CONFIG = {"command", "config", "verbose", "checkpoint"}


def config_from_args(args):
    overrides = {}
    for key, value in vars(args).items():
        if key in _NON_CONFIG or value is None:
            continue
        overrides[key] = harness._coerce(key, value) if isinstance(value, str) else value
    if args.command == "subclass":
        overrides["subclass"] = True
    file_values = harness.load_config_file(args.config) if args.config else {}
    return harness.build_config(file_values, overrides)


def _require_out(cfg):
    if cfg.out is None:
        raise ConfigError("--out is required")
    return Path(cfg.out)


def _summary(report):
    acc = ", ".join(f"{k}={v:.4f}" for k, v in report["accuracy"].items())
    return f"test accuracy: {acc}"


def _run(args):
    cfg = config_from_args(args)
    if args.command in ("train", "subclass"):
        _require_out(cfg)
        report = harness.run_experiment(cfg)
        print(_summary(report))
    elif args.command == "sweep":
        _require_out(cfg)
        for row in harness.sweep_alpha(cfg):
            line = row["error"] if row["report"] is None else _summary(row["report"])
            print(f"alpha={row['alpha']:g}: {line}")
    elif args.command == "eval":
        result = harness.evaluate_checkpoint(args.checkpoint, cfg)
        text = harness.report_json(result)
        if cfg.out is not None:
            Path(cfg.out).mkdir(parents=True, exist_ok=True)
            (Path(cfg.out) / "eval.json").write_text(text)
        print(text, end="")
    elif args.command == "export-dims":
        out = _require_out(cfg)
        net, extra, meta = harness._stage("loading checkpoint", load_checkpoint, args.checkpoint)
        stats = FeatureStats(extra["norm.mean"], extra["norm.std"])
        test = harness._stage("loading data", harness.prepare_data, cfg, stats).test
        h = harness._stage("evaluation", latents, net, test)
        dist = harness.dimension_distributions(h, test.labels, int(meta["class_count"]), cfg.bins)
        out.mkdir(parents=True, exist_ok=True)
        harness.write_dimhist(out / "dimhist.csv", dist)
        print(json.dumps({"mean_fisher_ratio": dist["mean_fisher_ratio"],
                          "fisher_reason": dist["fisher_reason"]}))
    return EXIT_OK


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    verbose = "-v" in argv or "--verbose" in argv
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    warnings.simplefilter("default")
    try:
        return _run(build_parser().parse_args(argv))
    except ConfigError as exc:
        print(f"rdlda: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except harness.StageError as exc:
        print(f"rdlda: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is still a runtime failure, not a crash
        print(f"rdlda: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
