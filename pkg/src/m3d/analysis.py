"""Feature/prediction mutual information and between-subject hypothesis tests."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree
from scipy.special import digamma

NORMALITY_MIN_N = 8  # the omnibus normality test needs at least 8 samples
UNTESTABLE_MIN_N = 3


# --------------------------------------------------------------------------
# mutual information
# --------------------------------------------------------------------------

def mutual_information_cd(feature, labels, k: int = 3) -> float:
    """kNN estimate (nats) of the MI between a continuous feature and discrete labels.

    For every sample the distance to its k-th neighbour among samples with
    the same label sets a radius; the count of all samples strictly inside
    that radius enters the digamma estimator. Labels seen only once are
    dropped. Negative estimates are clamped to 0.
    """
    x = np.asarray(feature, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if x.size != y.size:
        raise ValueError("feature and labels differ in length")
    if k < 1:
        raise ValueError("k must be >= 1")
    values, counts = np.unique(y, return_counts=True)
    keep = np.isin(y, values[counts > 1])
    x, y = x[keep], y[keep]
    if np.unique(y).size < 2 or np.ptp(x) == 0:
        return 0.0
    n = x.size
    radius = np.empty(n)
    k_used = np.empty(n)
    label_count = np.empty(n)
    for v in np.unique(y):
        mask = y == v
        cnt = mask.sum()
        kk = min(k, cnt - 1)
        tree = cKDTree(x[mask, None])
        dist, _ = tree.query(x[mask, None], k=kk + 1)
        radius[mask] = np.nextafter(dist[:, -1], 0)
        k_used[mask] = kk
        label_count[mask] = cnt
    tree = cKDTree(x[:, None])
    m_all = tree.query_ball_point(x[:, None], radius, return_length=True)
    mi = digamma(n) + np.mean(digamma(k_used)) - np.mean(digamma(label_count)) - np.mean(digamma(m_all))
    return float(max(mi, 0.0))


@dataclass(frozen=True, eq=False)
class MiMatrix:
    values: np.ndarray  # (C, D), min-max normalised
    feature_names: tuple
    raw: Optional[np.ndarray] = None

    def to_csv(self, path, config_echo: str = "") -> None:
        with open(path, "w", newline="") as fh:
            for line in config_echo.splitlines():
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class"] + list(self.feature_names))
            for c, row in enumerate(self.values):
                w.writerow([c] + [f"{v:.6f}" for v in row])

    def to_json(self, path, config: Optional[dict] = None) -> None:
        with open(path, "w") as fh:
            json.dump({"feature_names": list(self.feature_names),
                       "values": self.values.tolist(),
                       "raw_nats": None if self.raw is None else self.raw.tolist(),
                       "config": config}, fh, indent=2)


def mi_map(features, predictions, k: int = 3, feature_names: Optional[Sequence[str]] = None) -> MiMatrix:
    """MI between each feature and each one-vs-rest hard-label indicator.

    ``predictions`` are soft scores (m x C); their row argmax gives the
    hard labels. The C x D matrix is min-max normalised as a whole and is
    all zeros when it is constant.
    """
    x = np.asarray(features, dtype=np.float64)
    p = np.asarray(predictions, dtype=np.float64)
    if x.ndim != 2 or p.ndim != 2 or x.shape[0] != p.shape[0]:
        raise ValueError(f"shapes {x.shape} and {p.shape} are not conformable")
    hard = np.argmax(p, axis=1)
    C, D = p.shape[1], x.shape[1]
    raw = np.zeros((C, D))
    for c in range(C):
        ind = (hard == c).astype(int)
        for j in range(D):
            raw[c, j] = mutual_information_cd(x[:, j], ind, k)
    lo, hi = raw.min(), raw.max()
    vals = (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{j}" for j in range(D))
    return MiMatrix(vals, names, raw)


# --------------------------------------------------------------------------
# hypothesis tests
# --------------------------------------------------------------------------

def bh_fdr(p) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, clamped to [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    t = p.size
    if t == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    scaled = p[order] * t / np.arange(1, t + 1)
    adj = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(t)
    out[order] = np.clip(adj, 0.0, 1.0)
    return out


@dataclass(frozen=True, eq=False)
class TestMatrix:
    p_values: np.ndarray  # (S, S), nan where untestable, diagonal 1
    adjusted: np.ndarray
    test_used: np.ndarray  # object array of "welch-t" / "rank-sum" / "untestable" / ""
    subjects: tuple

    __test__ = False  # not a pytest class

    def to_csv(self, path, config_echo: str = "") -> None:
        with open(path, "w", newline="") as fh:
            for line in config_echo.splitlines():
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject_a", "subject_b", "test", "p_value", "p_adjusted"])
            s = len(self.subjects)
            for i in range(s):
                for j in range(i + 1, s):
                    p, q = self.p_values[i, j], self.adjusted[i, j]
                    w.writerow([self.subjects[i], self.subjects[j], self.test_used[i, j],
                                "" if np.isnan(p) else f"{p:.6e}", "" if np.isnan(q) else f"{q:.6e}"])

    def to_json(self, path, config: Optional[dict] = None) -> None:
        def clean(a):
            return [[None if np.isnan(v) else float(v) for v in row] for row in a]
        with open(path, "w") as fh:
            json.dump({"subjects": list(self.subjects), "p_values": clean(self.p_values),
                       "adjusted": clean(self.adjusted), "test_used": self.test_used.tolist(),
                       "config": config}, fh, indent=2)


def _is_normal(x, alpha) -> bool:
    if x.size < NORMALITY_MIN_N or np.ptp(x) == 0:
        return False
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return bool(stats.normaltest(x).pvalue >= alpha)


def _reduce(x, reduce: str, pca_axis=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x
    if reduce == "mean":
        return x.mean(axis=1)
    if reduce == "pca1":
        return x @ pca_axis
    raise ValueError(f"unknown reduction {reduce!r}")


def pairwise_tests(groups: Sequence, subjects: Optional[Sequence] = None, alpha: float = 0.05,
                   reduce: str = "mean") -> TestMatrix:
    """Two-sided test for every subject pair with BH adjustment across pairs.

    Each group is a vector of per-sample values or a samples x features
    matrix, reduced to one value per sample (feature mean, or projection on
    the pooled first principal axis with ``reduce="pca1"``). Pairs where
    both groups pass the normality screen use Welch's t-test, the others the
    Wilcoxon rank-sum test. Groups with fewer than 3 samples are untestable.
    """
    if len(groups) < 2:
        raise ValueError("need at least 2 groups")
    subjects = tuple(subjects) if subjects is not None else tuple(range(len(groups)))
    axis = None
    if reduce == "pca1" and np.asarray(groups[0]).ndim == 2:
        pooled = np.vstack([np.asarray(g, dtype=np.float64) for g in groups])
        _, _, vt = np.linalg.svd(pooled - pooled.mean(axis=0), full_matrices=False)
        axis = vt[0]
    vals = [_reduce(g, reduce, axis) for g in groups]
    s = len(vals)
    normal = [v.size >= UNTESTABLE_MIN_N and _is_normal(v, alpha) for v in vals]
    p = np.full((s, s), np.nan)
    used = np.full((s, s), "", dtype=object)
    pairs, raw = [], []
    for i in range(s):
        for j in range(i + 1, s):
            a, b = vals[i], vals[j]
            if a.size < UNTESTABLE_MIN_N or b.size < UNTESTABLE_MIN_N:
                used[i, j] = used[j, i] = "untestable"
                continue
            if normal[i] and normal[j]:
                pv = stats.ttest_ind(a, b, equal_var=False).pvalue
                used[i, j] = used[j, i] = "welch-t"
            else:
                pv = stats.ranksums(a, b).pvalue
                used[i, j] = used[j, i] = "rank-sum"
            pv = 1.0 if np.isnan(pv) else float(pv)
            p[i, j] = p[j, i] = pv
            pairs.append((i, j))
            raw.append(pv)
    adj = np.full((s, s), np.nan)
    for (i, j), q in zip(pairs, bh_fdr(raw)):
        adj[i, j] = adj[j, i] = q
    np.fill_diagonal(p, 1.0)
    np.fill_diagonal(adj, 1.0)
    return TestMatrix(p, adj, used, subjects)


def subject_groups(dataset, label: Optional[int] = None):
    """Per-subject feature blocks, optionally restricted to one class."""
    subs = dataset.subjects()
    groups = []
    for s in subs:
        mask = dataset.subject_id == s
        if label is not None:
            mask &= dataset.labels == label
        groups.append(dataset.features[mask])
    return groups, tuple(int(s) for s in subs)
