"""Slow, independent reference computations used by the tests."""

import itertools

import numpy as np


def gfk_integral(ts, tt, xi, xj, steps=10_000):
    """Twice the integral over t in [0, 1] of <Phi(t)^T xi, Phi(t)^T xj>.

    Phi(t) is the geodesic between span(ts) and span(tt), built from the
    Grassmann log map rather than from principal angles directly.
    """
    a = ts.T @ tt
    mm = (tt - ts @ a) @ np.linalg.inv(a)
    u, s, vt = np.linalg.svd(mm, full_matrices=False)
    th = np.arctan(s)
    t = np.linspace(0.0, 1.0, steps + 1)
    base = ts @ vt.T
    pi = np.einsum("d,dk->k", xi, base)
    pj = np.einsum("d,dk->k", xj, base)
    ui = xi @ u
    uj = xj @ u
    c = np.cos(np.outer(t, th))
    sn = np.sin(np.outer(t, th))
    yi = c * pi + sn * ui
    yj = c * pj + sn * uj
    return 2.0 * np.trapezoid((yi * yj).sum(axis=1), t)


def random_bases(rng, d, q):
    ts = np.linalg.qr(rng.standard_normal((d, q)))[0]
    tt = np.linalg.qr(ts + 0.6 * rng.standard_normal((d, q)))[0]
    return ts, tt


def cts_triples(labelings, decay):
    """Connected-triple similarity by enumerating every cluster triple x-k-y."""
    clusters = []  # (labeling index, member set)
    for q, row in enumerate(labelings):
        for v in sorted(set(row.tolist())):
            clusters.append((q, frozenset(np.flatnonzero(row == v).tolist())))
    n_cl = len(clusters)

    def w(a, b):
        if a == b:
            return 0.0
        sa, sb = clusters[a][1], clusters[b][1]
        return len(sa & sb) / len(sa | sb)

    wct = {}
    for x, y in itertools.combinations(range(n_cl), 2):
        if clusters[x][0] != clusters[y][0]:
            continue
        total = 0.0
        for k in range(n_cl):
            if k in (x, y):
                continue
            wx, wy = w(x, k), w(y, k)
            if wx > 0 and wy > 0:
                total += min(wx, wy)
        wct[x, y] = wct[y, x] = total
    top = max(wct.values(), default=0.0)

    def cluster_of(q, i):
        for idx, (qq, members) in enumerate(clusters):
            if qq == q and i in members:
                return idx

    m = labelings.shape[1]
    s = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for q in range(labelings.shape[0]):
                a, b = cluster_of(q, i), cluster_of(q, j)
                if a == b:
                    acc += 1.0
                else:
                    acc += decay * (wct[a, b] / top if top > 0 else 0.0)
            s[i, j] = acc / labelings.shape[0]
    return s


def naive_linkage(similarity, linkage, k):
    """Agglomerative clustering recomputing every cluster distance from members."""
    d = 1.0 - np.asarray(similarity, dtype=np.float64)
    clusters = [[i] for i in range(d.shape[0])]
    agg = {"single": np.min, "complete": np.max, "average": np.mean}[linkage]
    while len(clusters) > k:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                dist = agg(d[np.ix_(clusters[a], clusters[b])])
                key = (dist, min(clusters[a]), min(clusters[b]))
                if best is None or key < best[0]:
                    best = (key, a, b)
        _, a, b = best
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
    labels = np.empty(d.shape[0], dtype=int)
    for c in clusters:
        labels[c] = min(c)
    # renumber by first appearance
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv]


def auroc_pairs(y, scores, c):
    """One-vs-rest AUROC by counting every positive/negative score pair."""
    pos = scores[y == c, c]
    neg = scores[y != c, c]
    total = 0.0
    for p in pos:
        total += np.sum(p > neg) + 0.5 * np.sum(p == neg)
    return total / (pos.size * neg.size)


def bh_step_up(p):
    """Benjamini-Hochberg adjusted values straight from the definition."""
    p = list(map(float, p))
    t = len(p)
    out = []
    for pi in p:
        # adjusted p_i = min over ranks j >= rank(i) of p_(j) * t / j
        srt = sorted(p)
        r = srt.index(pi) + 1
        best = min(srt[j - 1] * t / j for j in range(r, t + 1))
        out.append(min(best, 1.0))
    return np.array(out)
