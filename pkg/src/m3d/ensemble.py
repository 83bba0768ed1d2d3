"""Consensus over the per-iteration target labelings.

The link-based route builds a connected-triple (CTS) similarity between
samples from the base labelings, clusters it agglomeratively into ``C``
groups and names each group after the majority base label of its members.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class BaseEnsemble:
    base_labelings: np.ndarray  # (l, m)
    class_count: int
    base_scores: Optional[np.ndarray] = None  # (l, m, C)

    def __post_init__(self):
        lab = np.atleast_2d(np.asarray(self.base_labelings, dtype=np.int64))
        if lab.shape[0] < 1:
            raise ValueError("need at least one base labeling")
        if lab.min() < 0 or lab.max() >= self.class_count:
            raise ValueError(f"base labels must lie in [0, {self.class_count})")
        object.__setattr__(self, "base_labelings", lab)
        if self.base_scores is not None:
            sc = np.asarray(self.base_scores, dtype=np.float64)
            if sc.shape != lab.shape + (self.class_count,):
                raise ValueError(f"base_scores shape {sc.shape} != {lab.shape + (self.class_count,)}")
            object.__setattr__(self, "base_scores", sc)

    @property
    def size(self) -> int:
        return self.base_labelings.shape[0]

    @property
    def num_samples(self) -> int:
        return self.base_labelings.shape[1]


@dataclass(frozen=True, eq=False)
class ConsensusResult:
    labels: np.ndarray
    method: str
    similarity_matrix: Optional[np.ndarray] = None


def consensus_last(ens: BaseEnsemble) -> np.ndarray:
    return ens.base_labelings[-1].copy()


def consensus_average(ens: BaseEnsemble) -> np.ndarray:
    if ens.base_scores is None:
        raise ValueError("averaging consensus needs soft scores")
    return np.argmax(ens.base_scores.mean(axis=0), axis=1)


def consensus_vote(ens: BaseEnsemble) -> np.ndarray:
    """Per-sample majority; ties go to whichever tied class was predicted last."""
    lab = ens.base_labelings
    counts = np.zeros((ens.num_samples, ens.class_count), dtype=int)
    for row in lab:
        counts[np.arange(lab.shape[1]), row] += 1
    out = np.empty(lab.shape[1], dtype=np.int64)
    for j in range(lab.shape[1]):
        top = counts[j] == counts[j].max()
        for label in lab[::-1, j]:
            if top[label]:
                out[j] = label
                break
    return out


# --------------------------------------------------------------------------
# connected-triple similarity
# --------------------------------------------------------------------------

def _cluster_ids(labelings: np.ndarray):
    """Relabel clusters of every base labeling with globally unique ids."""
    ids = np.empty_like(labelings)
    owner = []
    offset = 0
    for q, row in enumerate(labelings):
        _, inv = np.unique(row, return_inverse=True)
        ids[q] = inv + offset
        k = inv.max() + 1
        owner.extend([q] * k)
        offset += k
    return ids, np.array(owner)


def cluster_link_weights(labelings: np.ndarray):
    """Jaccard overlap between every pair of clusters across base labelings."""
    ids, owner = _cluster_ids(labelings)
    n_cl = owner.size
    member = np.zeros((n_cl, labelings.shape[1]))
    for row in ids:
        member[row, np.arange(row.size)] = 1.0
    inter = member @ member.T
    sizes = member.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    w = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    np.fill_diagonal(w, 0.0)
    return w, ids, owner


def cluster_cts(labelings: np.ndarray, decay: float = 0.8):
    """Cluster-level CTS matrix (decay-scaled, unit diagonal) and cluster ids per labeling.

    Connected-triple weights ``sum_k min(w_xk, w_yk)`` are computed for cluster
    pairs of the same base labeling and normalised by their maximum.
    """
    w, ids, owner = cluster_link_weights(labelings)
    n_cl = owner.size
    wct = np.zeros((n_cl, n_cl))
    for q in range(labelings.shape[0]):
        idx = np.flatnonzero(owner == q)
        for a in range(idx.size):
            for b in range(a + 1, idx.size):
                x, y = idx[a], idx[b]
                wct[x, y] = wct[y, x] = np.minimum(w[x], w[y]).sum()
    top = wct.max()
    if top > 0:
        wct = wct / top
    sim = decay * wct
    np.fill_diagonal(sim, 1.0)
    return sim, ids


def cts_similarity(ens: BaseEnsemble, decay: float = 0.8) -> np.ndarray:
    """Sample-by-sample CTS similarity averaged over the base labelings."""
    if not 0 < decay <= 1:
        raise ValueError("decay must lie in (0, 1]")
    lab = ens.base_labelings
    sim_cl, ids = cluster_cts(lab, decay)
    m = lab.shape[1]
    s = np.zeros((m, m))
    for row in ids:
        s += sim_cl[np.ix_(row, row)]
    s /= lab.shape[0]
    np.fill_diagonal(s, 1.0)
    return s


# --------------------------------------------------------------------------
# agglomerative clustering
# --------------------------------------------------------------------------

def _agglomerate(dist: np.ndarray, k: int, linkage: str, weights: np.ndarray) -> np.ndarray:
    """Lance-Williams merging on a distance matrix until ``k`` clusters remain.

    Among equally close pairs the one with the smallest (row, column) indices
    merges first, and the merged cluster keeps the smaller index. ``weights``
    are point multiplicities (used by average linkage).
    """
    n = dist.shape[0]
    d = dist.astype(np.float64).copy()
    np.fill_diagonal(d, np.inf)
    size = weights.astype(np.float64).copy()
    alive = np.ones(n, dtype=bool)
    assign = np.arange(n)
    for _ in range(n - k):
        flat = int(np.argmin(d))
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        if linkage == "single":
            new = np.minimum(d[i], d[j])
        elif linkage == "complete":
            new = np.maximum(d[i], d[j])
        elif linkage == "average":
            new = (size[i] * d[i] + size[j] * d[j]) / (size[i] + size[j])
        else:
            raise ValueError(f"unknown linkage {linkage!r}")
        new[~alive] = np.inf
        new[i] = np.inf
        d[i, :] = new
        d[:, i] = new
        d[j, :] = np.inf
        d[:, j] = np.inf
        size[i] += size[j]
        alive[j] = False
        assign[assign == j] = i
    _, labels = np.unique(assign, return_inverse=True)
    return labels


def agglomerative(similarity, linkage: str = "single", k: int = 2) -> np.ndarray:
    """Cluster labels (numbered by first appearance) from ``1 - similarity`` distances."""
    s = np.asarray(similarity, dtype=np.float64)
    m = s.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= k <= {m}, got {k}")
    return _first_appearance(_agglomerate(1.0 - s, k, linkage, np.ones(m)))


def _first_appearance(labels: np.ndarray) -> np.ndarray:
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(order.size, dtype=np.int64)
    remap[labels[first[order]]] = np.arange(order.size)
    return remap[labels]


def _majority_map(clusters: np.ndarray, labelings: np.ndarray, class_count: int) -> np.ndarray:
    out = np.empty(clusters.size, dtype=np.int64)
    for c in np.unique(clusters):
        members = clusters == c
        votes = np.bincount(labelings[:, members].ravel(), minlength=class_count)
        out[members] = int(np.argmax(votes))
    return out


def consensus_linkclue(ens: BaseEnsemble, similarity: str = "cts", linkage: str = "single",
                       decay: float = 0.8, return_similarity: bool = False):
    """Link-based consensus: CTS similarity, agglomerative clustering into ``C`` groups.

    Samples sharing the same label vector across all labelings have
    similarity 1 to each other and identical rows, so clustering runs on
    the distinct label vectors; the first merges at distance zero would
    join them anyway.
    """
    if similarity != "cts":
        raise ValueError(f"unsupported similarity {similarity!r}")
    lab = ens.base_labelings
    # np.unique orders the patterns lexicographically, so tie-breaking during
    # merging does not depend on the order of the samples
    _, first, inverse, counts = np.unique(lab.T, axis=0, return_index=True,
                                          return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sim_cl, ids = cluster_cts(lab, decay)
    rep_ids = ids[:, first]
    s = np.zeros((first.size, first.size))
    for row in rep_ids:
        s += sim_cl[np.ix_(row, row)]
    s /= lab.shape[0]
    np.fill_diagonal(s, 1.0)
    k = min(ens.class_count, first.size)
    clusters = _agglomerate(1.0 - s, k, linkage, counts)[inverse]
    labels = _majority_map(clusters, lab, ens.class_count)
    if return_similarity:
        return labels, cts_similarity(ens, decay)
    return labels


def consensus(ens: BaseEnsemble, method: str = "linkclue", linkage: str = "single",
              decay: float = 0.8, similarity: str = "cts") -> ConsensusResult:
    if method == "last":
        return ConsensusResult(consensus_last(ens), method)
    if method == "averaging":
        return ConsensusResult(consensus_average(ens), method)
    if method == "voting":
        return ConsensusResult(consensus_vote(ens), method)
    if method == "linkclue":
        labels = consensus_linkclue(ens, similarity, linkage, decay)
        return ConsensusResult(labels, f"linkclue({similarity},{linkage})")
    raise ValueError(f"unknown consensus method {method!r}")


def save_similarity_csv(matrix: np.ndarray, path) -> None:
    np.savetxt(path, matrix, delimiter=",", fmt="%.17g")
