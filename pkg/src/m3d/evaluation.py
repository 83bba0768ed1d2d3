"""Classification metrics, protocol execution and ablation variants."""

from __future__ import annotations

import csv
import io
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .config import PipelineConfig, format_config
from .data import FeatureDataset, SplitPlan
from .ensemble import BaseEnsemble, consensus
from .learner import hard_labels, manifold_features, run_m3d, weak_classifier_fit_predict

METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "precision", "npv", "f1", "auroc")

# variant name -> (config overrides, pipeline mode)
VARIANTS = {
    "full": ({}, "m3d"),
    "manifold-only": ({}, "weak"),
    "align+classify-only": ({"use_manifold": False, "ensemble": "last"}, "m3d"),
    "no-manifold": ({"use_manifold": False}, "m3d"),
    "no-ensemble": ({"ensemble": "last"}, "m3d"),
    "fixed-mu-0": ({"fixed_mu": 0.0}, "m3d"),
    "fixed-mu-0.5": ({"fixed_mu": 0.5}, "m3d"),
    "fixed-mu-1": ({"fixed_mu": 1.0}, "m3d"),
    "pca-instead-of-tca": ({"reducer": "pca"}, "m3d"),
    "ensemble-last": ({"ensemble": "last"}, "m3d"),
    "ensemble-avg": ({"ensemble": "averaging"}, "m3d"),
    "ensemble-vote": ({"ensemble": "voting"}, "m3d"),
    "ensemble-linkclue": ({"ensemble": "linkclue"}, "m3d"),
}


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ValueError("confusion counts must be nonnegative integers")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @classmethod
    def from_labels(cls, y_true, y_pred, class_count: int) -> "ConfusionMatrix":
        cm = np.zeros((class_count, class_count), dtype=np.int64)
        np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(cm)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _ratio(num, den, flags, name, c):
    if den == 0:
        flags.append(f"{name}: class {c} undefined (0/0), set to 0")
        return 0.0
    return num / den


def auroc_ovr(y_true, scores, class_count: Optional[int] = None):
    """Macro one-vs-rest AUROC via the Mann-Whitney rank statistic.

    Tied scores receive average ranks. Classes without positives or
    without negatives are left out of the macro average. Returns
    ``(auroc, per_class)`` with ``nan`` for skipped classes.
    """
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    C = scores.shape[1] if class_count is None else class_count
    per = np.full(C, np.nan)
    for c in range(C):
        pos = y_true == c
        n_pos, n_neg = pos.sum(), (~pos).sum()
        if n_pos == 0 or n_neg == 0:
            continue
        r = rankdata(scores[:, c])
        per[c] = (r[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    ok = np.isfinite(per)
    return (float(per[ok].mean()) if ok.any() else float("nan")), per


def metrics_from_confusion(cm: ConfusionMatrix, soft_scores=None, y_true=None) -> dict:
    """Accuracy plus macro one-vs-rest sensitivity, specificity, precision, NPV and F1.

    AUROC is added when ``soft_scores`` (m x C) and ``y_true`` are given.
    Per-class ratios with a zero denominator count as 0 and are listed
    under ``"flags"``.
    """
    counts = cm.counts.astype(np.float64)
    C = counts.shape[0]
    total = counts.sum()
    flags = []
    per = {k: np.zeros(C) for k in ("sensitivity", "specificity", "precision", "npv", "f1")}
    for c in range(C):
        tp = counts[c, c]
        fn = counts[c].sum() - tp
        fp = counts[:, c].sum() - tp
        tn = total - tp - fn - fp
        per["sensitivity"][c] = _ratio(tp, tp + fn, flags, "sensitivity", c)
        per["specificity"][c] = _ratio(tn, tn + fp, flags, "specificity", c)
        per["precision"][c] = _ratio(tp, tp + fp, flags, "precision", c)
        per["npv"][c] = _ratio(tn, tn + fn, flags, "npv", c)
        per["f1"][c] = _ratio(2 * tp, 2 * tp + fp + fn, flags, "f1", c)
    out = {"accuracy": float(np.trace(counts) / total) if total else 0.0}
    for k, v in per.items():
        out[k] = float(v.mean())
    if soft_scores is not None and y_true is not None:
        out["auroc"], _ = auroc_ovr(y_true, soft_scores, C)
    else:
        warnings.warn("no soft scores given; AUROC omitted", stacklevel=2)
        out["auroc"] = None
    out["flags"] = flags
    return out


# --------------------------------------------------------------------------
# single fold
# --------------------------------------------------------------------------

def variant_config(config: PipelineConfig, variant: str):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    overrides, mode = VARIANTS[variant]
    return config.replace(**overrides), mode


def predict_pair(pair, config: PipelineConfig, variant: str = "full") -> dict:
    """Run one variant on a domain pair; returns labels, scores and the run trace.

    For ensemble methods the AUROC scores are the mean of the per-iteration
    target scores; "last" uses the final iteration, and the manifold-only
    variant uses the weak classifier's class probabilities.
    """
    cfg, mode = variant_config(config, variant)
    C = pair.class_count
    if mode == "weak":
        z, _ = manifold_features(pair, cfg)
        n = pair.n
        scores = weak_classifier_fit_predict(cfg.initial_classifier, z[:n], pair.source.labels,
                                             z[n:], C, cfg.stage_seeds()["weak"],
                                             cfg.knn_k, cfg.tree_depth)
        return {"labels": hard_labels(scores), "scores": scores, "trace": [], "result": None}
    result = run_m3d(pair, cfg)
    snaps = np.stack(result.snapshots)
    ens = BaseEnsemble(result.labelings, C, snaps)
    labels = consensus(ens, cfg.ensemble, cfg.linkage, cfg.decay, cfg.similarity).labels
    scores = snaps[-1] if cfg.ensemble == "last" else snaps.mean(axis=0)
    return {"labels": labels, "scores": scores, "trace": result.trace(), "result": result}


def _run_fold(dataset: FeatureDataset, plan: SplitPlan, index: int, config: PipelineConfig,
              variant: str) -> dict:
    fold = plan.folds[index]
    entry = {"fold": index, **fold.as_dict()}
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            pair = plan.domain_pair(dataset, index)
            out = predict_pair(pair, config, variant)
            y = pair.target.labels
            if np.any(y < 0):
                raise ValueError("target labels are required for evaluation")
            cm = ConfusionMatrix.from_labels(y, out["labels"], pair.class_count)
            entry.update(status="ok", metrics=metrics_from_confusion(cm, out["scores"], y),
                         confusion=cm.counts.tolist(), trace=out["trace"],
                         mu=[t["mu"] for t in out["trace"]],
                         predictions=np.asarray(out["labels"]).tolist(),
                         true_labels=y.tolist())
        except Exception as exc:  # record and continue with the next fold
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    entry["warnings"] = sorted({str(w.message) for w in caught})
    entry["seconds"] = time.perf_counter() - t0
    return entry


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass
class RunReport:
    variant: str
    protocol: str
    config: dict
    folds: list
    timings: dict = field(default_factory=dict)

    @property
    def ok_folds(self) -> list:
        return [f for f in self.folds if f["status"] == "ok"]

    @property
    def partial(self) -> bool:
        return len(self.ok_folds) < len(self.folds)

    def metric_values(self, name: str) -> np.ndarray:
        vals = [f["metrics"][name] for f in self.ok_folds]
        return np.array([np.nan if v is None else v for v in vals], dtype=np.float64)

    def aggregate(self) -> dict:
        """Mean and (population) standard deviation of every metric over successful folds."""
        out = {}
        for name in METRIC_NAMES:
            v = self.metric_values(name)
            v = v[np.isfinite(v)]
            out[name] = {"mean": float(v.mean()) if v.size else None,
                         "std": float(v.std()) if v.size else None}
        return out

    def accuracy_string(self) -> str:
        """Percent accuracy as ``mean/std``."""
        agg = self.aggregate()["accuracy"]
        if agg["mean"] is None:
            return "n/a"
        return f"{100 * agg['mean']:.2f}/{100 * agg['std']:05.2f}"

    def to_dict(self, include_timings: bool = True) -> dict:
        d = {
            "variant": self.variant,
            "protocol": self.protocol,
            "config": self.config,
            "fold_count": len(self.folds),
            "failed_folds": [f["fold"] for f in self.folds if f["status"] != "ok"],
            "partial": self.partial,
            "summary": self.aggregate(),
            "folds": self.folds if include_timings else
            [{k: v for k, v in f.items() if k != "seconds"} for f in self.folds],
        }
        if include_timings:
            d["timings"] = self.timings
        return d

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _fold_job(args):
    return _run_fold(*args)


def run_protocol(dataset: FeatureDataset, plan: SplitPlan, config: PipelineConfig = PipelineConfig(),
                 variant: str = "full", jobs: int = 1) -> RunReport:
    """Run one variant over every fold of ``plan``.

    A failing fold is recorded with its error and the sweep continues.
    With ``jobs > 1`` folds run in worker processes; results are collected
    in fold order so the report does not depend on scheduling.
    """
    variant_config(config, variant)  # validate the name early
    t0 = time.perf_counter()
    tasks = [(dataset, plan, i, config, variant) for i in range(len(plan))]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_fold_job, tasks))
    else:
        folds = [_fold_job(t) for t in tasks]
    timings = {"total_seconds": time.perf_counter() - t0,
               "fold_seconds": [f["seconds"] for f in folds]}
    return RunReport(variant, plan.protocol, config.as_dict(), folds, timings)


def ablation_matrix(dataset: FeatureDataset, plan: SplitPlan, variants,
                    config: PipelineConfig = PipelineConfig(), jobs: int = 1) -> dict:
    """One report per variant on shared folds and seeds, keyed by variant name."""
    variants = list(variants)
    for v in variants:
        variant_config(config, v)
    return {v: run_protocol(dataset, plan, config, v, jobs) for v in variants}


SUMMARY_COLUMNS = ("variant", "protocol", "folds", "failed") + tuple(
    f"{m}_{s}" for m in METRIC_NAMES for s in ("mean", "std"))


def summary_rows(reports) -> list:
    rows = []
    for rep in reports:
        agg = rep.aggregate()
        row = [rep.variant, rep.protocol, str(len(rep.folds)),
               str(len(rep.folds) - len(rep.ok_folds))]
        for m in METRIC_NAMES:
            for s in ("mean", "std"):
                v = agg[m][s]
                row.append("" if v is None else f"{v:.6f}")
        rows.append(row)
    return rows


def summary_csv(reports, config: Optional[PipelineConfig] = None) -> str:
    """Summary table as CSV text; no timings, fixed float format, config echoed as comments."""
    buf = io.StringIO()
    if config is not None:
        for line in format_config(config).splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    w.writerows(summary_rows(reports))
    return buf.getvalue()


def format_table(reports) -> str:
    """Aligned plain-text table for terminal output."""
    header = ("variant", "folds", "failed", "accuracy %", "f1", "auroc")
    rows = []
    for rep in reports:
        agg = rep.aggregate()
        rows.append((rep.variant, str(len(rep.folds)), str(len(rep.folds) - len(rep.ok_folds)),
                     rep.accuracy_string(),
                     "n/a" if agg["f1"]["mean"] is None else f"{agg['f1']['mean']:.4f}",
                     "n/a" if agg["auroc"]["mean"] is None else f"{agg['auroc']['mean']:.4f}"))
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)
