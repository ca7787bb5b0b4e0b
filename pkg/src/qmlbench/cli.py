"""Command-line entry point: extract, synth, run, sweep."""

from __future__ import annotations

import argparse
import json
import sys

from .bench import DEFAULT_SEEDS, METHODS, SIZES, ExperimentConfig, StageError, run_experiment, run_sweep, stage
from .data import extract_manifest, load_dataset, synth_dataset, write_features_csv


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _names(text: str) -> list[str]:
    return [t for t in text.replace(",", " ").split() if t]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmlbench", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("extract", help="write the 20-feature CSV for an image directory")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)

    s = sub.add_parser("synth", help="generate the synthetic two-class image set")
    s.add_argument("--n", type=int, required=True, help="images per class")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    r = sub.add_parser("run", help="one experiment")
    r.add_argument("--method", choices=METHODS, required=True)
    r.add_argument("--samples-per-class", type=int, choices=SIZES, required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)

    w = sub.add_parser("sweep", help="methods x sizes x seeds, plus a summary CSV")
    w.add_argument("--methods", type=_names, default=list(METHODS))
    w.add_argument("--sizes", type=_ints, default=list(SIZES))
    w.add_argument("--seeds", type=_ints, default=list(DEFAULT_SEEDS))
    w.add_argument("--data", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--workers", type=int, default=None, help="parallel runs (default: QMLBENCH_THREADS or cores)")
    return p


def _extract(args) -> None:
    with stage("load"):
        manifest = load_dataset(args.data)
    with stage("extract"):
        feats = extract_manifest(manifest)
    with stage("write"):
        write_features_csv(args.out, manifest.labels, feats)
    print(f"wrote {len(feats)} feature rows to {args.out}")


def _synth(args) -> None:
    with stage("synth"):
        manifest = synth_dataset(args.n, args.seed, args.out)
    print(f"wrote {len(manifest)} images to {args.out} ({manifest.counts()})")


def _run(args) -> None:
    with stage("config"):
        cfg = ExperimentConfig(args.method, args.samples_per_class, args.seed, args.data, args.out)
    report = run_experiment(cfg)
    print(json.dumps({k: report[k] for k in ("accuracy", "confusion_matrix", "train_time_s",
                                              "test_time_s", "report_file")}, indent=2))


def _sweep(args) -> None:
    reports, summary = run_sweep(args.methods, args.sizes, args.seeds, args.data, args.out, args.workers)
    print(f"{len(reports)} runs")
    for row in summary:
        print(f"{row['method']:>6} {row['samples_per_class']:>4}  "
              f"acc {row['mean_accuracy']:.3f} +- {row['std_accuracy']:.3f}")


COMMANDS = {"extract": _extract, "synth": _synth, "run": _run, "sweep": _sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except StageError as exc:
        print(f"qmlbench {args.command} failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
