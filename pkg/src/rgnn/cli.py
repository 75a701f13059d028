"""Command-line entry point: ``rgnn <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import data, harness


def _ingest(args) -> int:
    paths = args.paths
    if args.format == "content-cites":
        if len(paths) != 2:
            raise SystemExit("content-cites needs CONTENT CITES")
        ds = data.ingest_content_cites(paths[0], paths[1], name=args.name or "", lcc=not args.no_lcc)
    elif args.format == "webkb":
        if len(paths) != 2:
            raise SystemExit("webkb needs EDGES NODES")
        ds = data.ingest_webkb(paths[0], paths[1], name=args.name or "", encoding=args.encoding,
                               num_features=args.num_features)
    else:
        if len(paths) != 2:
            raise SystemExit("pubmed needs NODE_TAB CITES_TAB")
        ds = data.ingest_pubmed(paths[0], paths[1], name=args.name or "pubmed", lcc=not args.no_lcc)
    out = data.save_dataset(ds, args.out)
    print(data.format_stats(data.stats(out)))
    return 0


def _stats(args) -> int:
    report = data.stats(args.dir)
    print(data.format_stats(report))
    return 1 if report["mismatches"] and args.strict else 0


def _train(args) -> int:
    cfg = harness.load_config(args.config)
    res = harness.train_single(cfg, args.out, seed=args.seed)
    print(f"test_accuracy\t{res.test_accuracy:.4f}\tbest_epoch\t{res.best_epoch}\tepochs\t{res.epochs_run}")
    if cfg.regularized:
        print(f"tau\t{res.tau:.6g}\tlambda\t{res.lam:.6g}\tepsilon\t{res.epsilon:.6g}")
    return 0


def _experiment(args) -> int:
    cfg = harness.load_config(args.config)
    s = harness.run_experiment(cfg, out_dir=args.out)
    print(f"mean {100 * s.mean_accuracy:.2f} +- {100 * s.std_accuracy:.2f} over "
          f"{len(s.records) - s.num_failed} runs ({s.num_failed} failed)")
    return 1 if s.failure_rate > harness.FAILURE_BUDGET else 0


def _sweep(args) -> int:
    cfg = harness.load_config(args.config)
    rows = harness.sweep(cfg, out_dir=args.out)
    for tau0, lam0, eps0, _, failed, mean, std in rows:
        print(f"{tau0:g}\t{lam0:g}\t{eps0:g}\t{100 * mean:.2f}\t{100 * std:.2f}\t{failed}")
    return 0


def _time(args) -> int:
    cfg = harness.load_config(args.config)
    for name, sec in harness.time_epochs(cfg).items():
        print(f"{name}\t{sec:.6f}")
    return 0


def _export(args) -> int:
    acc = harness.export_run(args.run, args.out)
    print(f"test_accuracy\t{acc:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgnn", description="Graph networks with a similarity-regularized softmax.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("ingest", help="convert raw dataset files to the canonical layout")
    q.add_argument("format", choices=["content-cites", "webkb", "pubmed"])
    q.add_argument("paths", nargs="+")
    q.add_argument("--out", required=True)
    q.add_argument("--name")
    q.add_argument("--no-lcc", action="store_true", help="keep all components")
    q.add_argument("--encoding", default="auto", choices=["auto", "dense", "indices"])
    q.add_argument("--num-features", type=int)
    q.set_defaults(func=_ingest)

    q = sub.add_parser("stats", help="dataset statistics and reference-count check")
    q.add_argument("dir")
    q.add_argument("--strict", action="store_true", help="exit 1 on any mismatch")
    q.set_defaults(func=_stats)

    q = sub.add_parser("train", help="single run on split 0")
    q.add_argument("--config", required=True)
    q.add_argument("--seed", type=int)
    q.add_argument("--out", default="run")
    q.set_defaults(func=_train)

    for name, func, helptext in (("experiment", _experiment, "splits x inits matrix"),
                                 ("sweep", _sweep, "initial-value grid")):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("--config", required=True)
        q.add_argument("--out", required=True)
        q.set_defaults(func=func)

    q = sub.add_parser("time", help="median seconds per epoch, baseline vs regularized")
    q.add_argument("--config", required=True)
    q.set_defaults(func=_time)

    q = sub.add_parser("export", help="predictions and embeddings of a saved run")
    q.add_argument("--run", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (harness.ConfigError, data.IngestError, data.SplitError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
