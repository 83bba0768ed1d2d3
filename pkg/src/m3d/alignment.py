"""Adaptive marginal/conditional weighting and the MMD matrices it blends."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

HINGE_ITERATIONS = 200
HINGE_STEP = 0.1
HINGE_L2 = 1e-3
SPLIT_SEED = 0


@dataclass(frozen=True, eq=False)
class AlignmentState:
    mu: float
    d_marginal: float
    d_conditional: tuple
    M0: np.ndarray
    Mc_sum: np.ndarray
    M: np.ndarray


def _hinge_fit(x, y, weights):
    """Linear hinge-loss classifier, y in {-1, +1}; full-batch subgradient descent."""
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    for t in range(1, HINGE_ITERATIONS + 1):
        margin = y * (x @ w + b)
        active = (margin < 1.0) * weights * y
        gw = HINGE_L2 * w - x.T @ active
        gb = -active.sum()
        step = HINGE_STEP / np.sqrt(t)
        w -= step * gw
        b -= step * gb
    return w, b


def a_distance(a, b, seed: int = SPLIT_SEED) -> float:
    """Proxy A-distance ``2 (1 - 2 err)`` clamped to ``[0, 2]``.

    ``err`` is the balanced held-out error of a linear hinge classifier
    separating ``a`` from ``b``, averaged over a stratified 2-fold split.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] < 2 or b.shape[0] < 2:
        warnings.warn("A-distance needs at least 2 samples per set; returning 0", stacklevel=2)
        return 0.0
    x = np.vstack([a, b])
    y = np.concatenate([-np.ones(a.shape[0]), np.ones(b.shape[0])])
    rng = np.random.default_rng(seed)
    fold = np.empty(x.shape[0], dtype=int)
    for cls in (-1.0, 1.0):
        idx = np.flatnonzero(y == cls)
        fold[idx[rng.permutation(idx.size)]] = np.arange(idx.size) % 2
    errors = []
    for k in (0, 1):
        tr, te = fold != k, fold == k
        mu = x[tr].mean(axis=0)
        sd = x[tr].std(axis=0)
        sd[sd == 0] = 1.0
        xtr, xte = (x[tr] - mu) / sd, (x[te] - mu) / sd
        ytr = y[tr]
        # balance the two domains so that unequal sizes do not inflate the distance
        wts = np.where(ytr > 0, 0.5 / (ytr > 0).sum(), 0.5 / (ytr < 0).sum())
        w, bias = _hinge_fit(xtr, ytr, wts)
        pred = np.where(xte @ w + bias >= 0, 1.0, -1.0)
        yte = y[te]
        errors.append(0.5 * ((pred != yte)[yte < 0].mean() + (pred != yte)[yte > 0].mean()))
    eps = float(np.mean(errors))
    return float(np.clip(2.0 * (1.0 - 2.0 * eps), 0.0, 2.0))


def mu_from_distances(d_marginal: float, d_conditional) -> float:
    total = d_marginal + float(np.sum(d_conditional))
    if total <= 0:
        return 0.5
    return float(np.clip(1.0 - d_marginal / total, 0.0, 1.0))


def estimate_mu(zs, ys, zt, yt_pseudo, class_count: int, seed: int = SPLIT_SEED):
    """Adaptive factor from marginal and per-class A-distances.

    Classes missing from either domain are skipped. Returns
    ``(mu, d_marginal, d_conditional)`` where skipped classes hold ``nan``.
    """
    ys = np.asarray(ys)
    yt_pseudo = np.asarray(yt_pseudo)
    d_a = a_distance(zs, zt, seed)
    d_c = []
    for c in range(class_count):
        s_mask, t_mask = ys == c, yt_pseudo == c
        if not s_mask.any() or not t_mask.any():
            d_c.append(float("nan"))
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            d_c.append(a_distance(zs[s_mask], zt[t_mask], seed))
    d_c = np.array(d_c)
    mu = mu_from_distances(d_a, d_c[np.isfinite(d_c)])
    return mu, d_a, tuple(float(v) for v in d_c)


def mean_gap_vector(source_mask, target_mask) -> np.ndarray:
    """``e`` with ``1/|S|`` on source members and ``-1/|T|`` on target members."""
    source_mask = np.asarray(source_mask, dtype=bool)
    target_mask = np.asarray(target_mask, dtype=bool)
    e = np.zeros(source_mask.size)
    ns, nt = source_mask.sum(), target_mask.sum()
    if ns == 0 or nt == 0:
        return e
    e[source_mask] = 1.0 / ns
    e[target_mask] = -1.0 / nt
    return e


def build_m0(n: int, m: int) -> np.ndarray:
    if n < 1 or m < 1:
        raise ValueError("need n, m >= 1")
    e = np.concatenate([np.full(n, 1.0 / n), np.full(m, -1.0 / m)])
    return np.outer(e, e)


def build_mc(source_labels, target_pseudo, c: int) -> np.ndarray:
    """Class-conditional MMD matrix; all zeros when class ``c`` is absent from a domain."""
    ys = np.asarray(source_labels)
    yt = np.asarray(target_pseudo)
    n = ys.size
    src = np.concatenate([ys == c, np.zeros(yt.size, dtype=bool)])
    tgt = np.concatenate([np.zeros(n, dtype=bool), yt == c])
    e = mean_gap_vector(src, tgt)
    return np.outer(e, e)


def build_alignment(ys, yt_pseudo, class_count: int, mu: float, d_marginal=float("nan"),
                    d_conditional=()) -> AlignmentState:
    ys = np.asarray(ys)
    yt_pseudo = np.asarray(yt_pseudo)
    m0 = build_m0(ys.size, yt_pseudo.size)
    mc = np.zeros_like(m0)
    for c in range(class_count):
        mc += build_mc(ys, yt_pseudo, c)
    m = (1.0 - mu) * m0 + mu * mc
    return AlignmentState(float(mu), float(d_marginal), tuple(d_conditional), m0, mc, m)
