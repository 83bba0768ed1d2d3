"""Command-line entry point: ``m3d {convert,synth,run,loso,ablate,analyze}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import mi_map, pairwise_tests, subject_groups
from .config import ConfigError, PipelineConfig, format_config, load_config
from .data import (DomainPair, load_dataset, make_loso_splits, save_csv,
                   save_dataset, synth_domain_shift, synth_subjects)
from .evaluation import (VARIANTS, ConfusionMatrix, _json_default, ablation_matrix, format_table,
                         metrics_from_confusion, predict_pair, summary_csv)

log = logging.getLogger("m3d")


class UsageError(Exception):
    """Bad arguments or missing inputs (exit code 2)."""


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such file: {p}")
    return p


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = load_config(_existing(args.config))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _comment_block(config: PipelineConfig) -> str:
    return "".join(f"# {line}\n" for line in format_config(config).splitlines())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _variants(text: str):
    names = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in names if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variant(s) {bad}; choose from {sorted(VARIANTS)}")
    return names


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_convert(args) -> int:
    ds = load_dataset(_existing(args.input), args.input_format)
    save_dataset(ds, args.output, args.output_format)
    print(f"wrote {args.output} ({ds.num_samples} x {ds.num_features})")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.subjects:
        ds = synth_subjects(args.seed, args.subjects, args.per_class, args.classes, args.shift,
                            args.rotation, args.noise, args.features, args.sessions)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, out)
        print(f"wrote {out} ({ds.num_samples} samples, {args.subjects} subjects)")
        return 0
    pair = synth_domain_shift(args.seed, args.per_class, args.classes, args.shift, args.rotation,
                              args.noise, args.features)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(pair.source, out / "source.csv")
    save_csv(pair.target, out / "target.csv")
    print(f"wrote {out / 'source.csv'} and {out / 'target.csv'}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    source = load_dataset(_existing(args.source))
    target = load_dataset(_existing(args.target), class_count=source.class_count)
    variant = args.ablate or "full"
    _variants(variant)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pair = DomainPair(source, target)
        res = predict_pair(pair, cfg, variant)
    seconds = time.perf_counter() - t0
    labels, scores = np.asarray(res["labels"]), np.asarray(res["scores"])

    report = {"variant": variant, "config": cfg.as_dict(), "source": str(args.source),
              "target": str(args.target), "n_source": pair.n, "n_target": pair.m,
              "trace": res["trace"], "warnings": sorted({str(w.message) for w in caught}),
              "timings": {"total_seconds": seconds}}
    if target.is_labeled:
        cm = ConfusionMatrix.from_labels(target.labels, labels, pair.class_count)
        report["metrics"] = metrics_from_confusion(cm, scores, target.labels)
        report["confusion"] = cm.counts.tolist()
        print(f"accuracy {100 * report['metrics']['accuracy']:.2f}%")
    _write_json(out / "report.json", report)

    with open(out / "predictions.csv", "w", newline="") as fh:
        fh.write(_comment_block(cfg))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "true", "predicted"] + [f"score_{c}" for c in range(pair.class_count)])
        for i in range(pair.m):
            w.writerow([i, int(target.labels[i]), int(labels[i])] + [f"{v:.10g}" for v in scores[i]])
    print(f"wrote {out / 'report.json'} and {out / 'predictions.csv'}")
    return 0


def _sweep(args, variants) -> int:
    cfg = _config(args)
    ds = load_dataset(_existing(args.dataset))
    plan = make_loso_splits(ds, args.protocol, args.session, cfg.stage_seeds()["folds"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = ablation_matrix(ds, plan, variants, cfg, args.jobs)

    _write_json(out / "report.json", {
        "protocol": plan.protocol, "config": cfg.as_dict(), "dataset": str(args.dataset),
        "reports": {v: r.to_dict() for v, r in reports.items()}})
    (out / "summary.csv").write_text(summary_csv(reports.values(), cfg))
    with open(out / "predictions.csv", "w", newline="") as fh:
        fh.write(_comment_block(cfg))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "fold", "index", "true", "predicted"])
        for v, rep in reports.items():
            for f in rep.ok_folds:
                for i, (t, p) in enumerate(zip(f["true_labels"], f["predictions"])):
                    w.writerow([v, f["fold"], i, t, p])
    print(format_table(reports.values()))
    failed = sum(len(r.folds) - len(r.ok_folds) for r in reports.values())
    if failed:
        print(f"warning: {failed} fold(s) failed; see report.json", file=sys.stderr)
    all_failed = all(not r.ok_folds for r in reports.values())
    return 1 if all_failed else 0


def cmd_loso(args) -> int:
    return _sweep(args, _variants(args.variants))


def cmd_ablate(args) -> int:
    return _sweep(args, _variants(args.variants) if args.variants else list(VARIANTS))


def _read_scores(path: Path):
    with open(path) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    cols = [i for i, h in enumerate(header) if h.startswith("score_")]
    if not cols:
        raise UsageError(f"{path} holds no score columns (expected output of 'm3d run')")
    return np.array([[float(r[i]) for i in cols] for r in body])


def cmd_analyze(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "mi":
        pred_path = _existing(args.run) / "predictions.csv" if Path(args.run).is_dir() else _existing(args.run)
        scores = _read_scores(_existing(pred_path))
        target = load_dataset(_existing(args.target))
        if target.num_samples != scores.shape[0]:
            raise UsageError(f"{args.target} has {target.num_samples} samples but the run "
                             f"predicted {scores.shape[0]}")
        mat = mi_map(target.features, scores, args.k, target.feature_names)
        mat.to_csv(out / "mi.csv", format_config(cfg))
        mat.to_json(out / "mi.json", cfg.as_dict())
        print(f"wrote {out / 'mi.csv'} ({mat.values.shape[0]} x {mat.values.shape[1]})")
        return 0
    ds = load_dataset(_existing(args.dataset))
    groups, subjects = subject_groups(ds, args.label)
    tm = pairwise_tests(groups, subjects, args.alpha, args.reduce)
    tm.to_csv(out / "tests.csv", format_config(cfg))
    tm.to_json(out / "tests.json", cfg.as_dict())
    print(f"wrote {out / 'tests.csv'} ({len(subjects)} subjects)")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="m3d", description="Manifold-aligned domain adaptation with ensemble consensus.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("convert", help="convert between CSV and binary datasets")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--input-format", choices=("csv", "binary"))
    sp.add_argument("--output-format", choices=("csv", "binary"))
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("synth", help="generate a synthetic domain-shift benchmark")
    sp.add_argument("--out", required=True,
                    help="output directory for source.csv/target.csv, or a dataset file with --subjects")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--shift", type=float, default=3.0)
    sp.add_argument("--rotation", type=float, default=0.4, help="radians")
    sp.add_argument("--noise", type=float, default=0.8)
    sp.add_argument("--classes", type=int, default=3)
    sp.add_argument("--per-class", type=int, default=200)
    sp.add_argument("--features", type=int, default=10)
    sp.add_argument("--subjects", type=int, default=0, help="write a multi-subject dataset")
    sp.add_argument("--sessions", type=int, default=1)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("run", help="adapt from one source set to one target set")
    common(sp)
    sp.add_argument("source")
    sp.add_argument("target")
    sp.add_argument("--out", required=True)
    sp.add_argument("--ablate", metavar="VARIANT", help="run an ablation variant instead of the full pipeline")
    sp.set_defaults(func=cmd_run)

    for name, func, default in (("loso", cmd_loso, "full"), ("ablate", cmd_ablate, None)):
        sp = sub.add_parser(name, help="leave-subject-out protocol sweep" if name == "loso"
                            else "ablation variants over a protocol")
        common(sp)
        sp.add_argument("dataset")
        sp.add_argument("--out", required=True)
        sp.add_argument("--protocol", default="single-session",
                        help="single-session, cross-session or ten-fold")
        sp.add_argument("--session", type=int, help="session id for the single-session protocol")
        sp.add_argument("--variants", default=default, help="comma-separated variant names")
        sp.add_argument("--jobs", type=int, default=1, help="parallel folds")
        sp.set_defaults(func=func)

    sp = sub.add_parser("analyze", help="mutual-information map or subject-pair tests")
    asub = sp.add_subparsers(dest="kind", required=True)
    mi = asub.add_parser("mi", help="feature/prediction mutual information")
    common(mi)
    mi.add_argument("run", help="output directory (or predictions.csv) of 'm3d run'")
    mi.add_argument("target", help="target dataset the run predicted")
    mi.add_argument("--out", required=True)
    mi.add_argument("--k", type=int, default=3, help="neighbours")
    mi.set_defaults(func=cmd_analyze)
    tests = asub.add_parser("tests", help="pairwise subject tests with FDR control")
    common(tests)
    tests.add_argument("dataset")
    tests.add_argument("--out", required=True)
    tests.add_argument("--label", type=int, help="restrict to one class")
    tests.add_argument("--alpha", type=float, default=0.05)
    tests.add_argument("--reduce", choices=("mean", "pca1"), default="mean")
    tests.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"m3d: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"m3d: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
