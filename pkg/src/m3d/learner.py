"""Manifold-regularised kernel classifier with iterative pseudo-labelling."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .alignment import build_alignment, estimate_mu, mean_gap_vector
from .config import PipelineConfig
from .data import DomainPair
from .manifold import ManifoldModel, fit_manifold, kernel_matrix, median_bandwidth

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12


class SolveError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    kind: str = "rbf"
    bandwidth: Optional[float] = None  # None selects the median heuristic

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


@dataclass(frozen=True)
class GraphConfig:
    p: int = 10
    similarity: str = "cosine"


def build_kernel(z, config: KernelConfig = KernelConfig()):
    """Kernel matrix over the rows of ``z`` and the bandwidth actually used."""
    z = np.asarray(z, dtype=np.float64)
    bw = config.bandwidth
    if config.kind == "rbf" and bw is None:
        bw = median_bandwidth(z)
    k = kernel_matrix(z, z, config.kind, bw)
    return 0.5 * (k + k.T), bw


def cosine_similarity(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = z / safe[:, None]
    s = u @ u.T
    s[norms == 0, :] = 0.0
    s[:, norms == 0] = 0.0
    return np.clip(s, 0.0, 1.0)


def build_laplacian(z, config: GraphConfig = GraphConfig()):
    """Symmetrised p-nearest-neighbour cosine graph ``W`` and ``L = D - W``.

    Neighbours are ranked by cosine similarity; ties go to the lower index.
    Negative similarities are clamped to zero.
    """
    s = cosine_similarity(z)
    n = s.shape[0]
    if not 1 <= config.p < n:
        raise ValueError(f"need 1 <= p < number of samples ({n}), got p={config.p}")
    ranked = s.copy()
    np.fill_diagonal(ranked, -np.inf)
    order = np.argsort(-ranked, axis=1, kind="stable")[:, :config.p]
    mask = np.zeros((n, n), dtype=bool)
    mask[np.repeat(np.arange(n), config.p), order.ravel()] = True
    mask |= mask.T
    w = np.where(mask, s, 0.0)
    np.fill_diagonal(w, 0.0)
    lap = np.diag(w.sum(axis=1)) - w
    return w, lap


def system_matrix(K, a, MK, LK, eta, lam, rho) -> np.ndarray:
    """``(A + lam M + rho L) K + eta I`` given the products ``M K`` and ``L K``."""
    s = a[:, None] * K + lam * MK + rho * LK
    s[np.diag_indices_from(s)] += eta
    return s


def solve_system(s: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(s, check_finite=True)
    except (ValueError, np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise SolveError(f"classifier system is singular ({exc}); increase eta") from exc
    anorm = np.abs(s).sum(axis=0).max()
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or rcond == 0 or 1.0 / rcond > MAX_CONDITION:
        cond = np.inf if rcond == 0 else 1.0 / rcond
        raise SolveError(f"classifier system is ill-conditioned (cond ~ {cond:.3g}); increase eta")
    return scipy.linalg.lu_solve((lu, piv), rhs)


def solve_beta(K, A, Y, M, L, eta: float, lam: float, rho: float) -> np.ndarray:
    """Closed-form coefficients ``((A + lam M + rho L) K + eta I)^-1 A Y^T``.

    ``A`` may be the diagonal indicator matrix or its diagonal; ``Y`` is
    ``C x (n+m)``. Returns ``beta`` with shape ``(n+m, C)``.
    """
    K = np.asarray(K, dtype=np.float64)
    a = np.asarray(A, dtype=np.float64)
    a = np.diag(a) if a.ndim == 2 else a
    Y = np.asarray(Y, dtype=np.float64)
    if eta <= 0:
        raise ValueError("eta must be positive")
    s = system_matrix(K, a, np.asarray(M) @ K, np.asarray(L) @ K, eta, lam, rho)
    return solve_system(s, a[:, None] * Y.T)


def beta_residual(K, A, Y, M, L, eta, lam, rho, beta) -> float:
    """Relative Frobenius residual of the defining linear system."""
    a = np.asarray(A, dtype=np.float64)
    a = np.diag(a) if a.ndim == 2 else a
    s = system_matrix(K, a, M @ K, L @ K, eta, lam, rho)
    rhs = a[:, None] * np.asarray(Y).T
    return float(np.linalg.norm(s @ beta - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny))


def objective(beta, K, A, Y, M, L, eta, lam, rho) -> float:
    """Squared source loss plus RKHS norm, alignment and Laplacian penalties."""
    a = np.asarray(A, dtype=np.float64)
    a = np.diag(a) if a.ndim == 2 else a
    f = K @ beta  # (n+m) x C predictions
    loss = np.sum(a[:, None] * (np.asarray(Y).T - f) ** 2)
    norm = np.trace(beta.T @ K @ beta)
    penalty = np.trace(f.T @ (lam * M + rho * L) @ f)
    return float(loss + eta * norm + penalty)


# --------------------------------------------------------------------------
# weak initial classifiers
# --------------------------------------------------------------------------

def _make_weak(kind: str, seed: int, knn_k: int = 5, tree_depth: int = 10):
    from sklearn.ensemble import AdaBoostClassifier, BaggingClassifier
    from sklearn.naive_bayes import GaussianNB
    from sklearn.neighbors import KNeighborsClassifier
    from sklearn.svm import SVC
    from sklearn.tree import DecisionTreeClassifier

    factories = {
        "knn": lambda: KNeighborsClassifier(n_neighbors=knn_k),
        "gnb": lambda: GaussianNB(),
        "dtree": lambda: DecisionTreeClassifier(criterion="gini", max_depth=tree_depth,
                                                random_state=seed),
        "svm": lambda: SVC(kernel="rbf", probability=True, random_state=seed),
        "adaboost": lambda: AdaBoostClassifier(random_state=seed),
        "bagging": lambda: BaggingClassifier(random_state=seed),
    }
    if kind not in factories:
        raise ValueError(f"unknown weak classifier {kind!r}; choose from {sorted(factories)}")
    return factories[kind]()


def weak_classifier_fit_predict(kind: str, xs, ys, xt, class_count: int, seed: int = 0,
                                knn_k: int = 5, tree_depth: int = 10) -> np.ndarray:
    """Class-probability estimates ``(m, C)`` for the target from a source-trained model."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys)
    if ys.size == 0:
        raise ValueError("empty source domain")
    clf = _make_weak(kind, seed, min(knn_k, xs.shape[0]), tree_depth)
    clf.fit(xs, ys)
    proba = clf.predict_proba(np.asarray(xt, dtype=np.float64))
    out = np.zeros((proba.shape[0], class_count))
    out[:, clf.classes_.astype(int)] = proba
    return out


def hard_labels(scores) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    return np.argmax(np.asarray(scores), axis=1)


# --------------------------------------------------------------------------
# the iterative pipeline
# --------------------------------------------------------------------------

@dataclass(eq=False)
class ClassifierModel:
    beta: np.ndarray
    K: np.ndarray
    L: np.ndarray
    W: np.ndarray
    A: np.ndarray  # diagonal of the source indicator
    Y: np.ndarray  # C x (n+m), zero target columns
    z: np.ndarray
    eta: float
    lam: float
    rho: float
    bandwidth: Optional[float]
    n_source: int

    def decision_function(self, z_new) -> np.ndarray:
        kind = "linear" if self.bandwidth is None else "rbf"
        return kernel_matrix(z_new, self.z, kind, self.bandwidth) @ self.beta


@dataclass(eq=False)
class M3DResult:
    model: ClassifierModel
    initial_scores: np.ndarray
    snapshots: list  # per-iteration target soft scores, (m, C) each
    mu: list
    d_marginal: list
    d_conditional: list
    churn: list
    residuals: list
    manifold: Optional[ManifoldModel] = None
    z: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)

    @property
    def labelings(self) -> np.ndarray:
        """Hard target labels per iteration, shape ``(l, m)``."""
        return np.stack([hard_labels(s) for s in self.snapshots])

    def trace(self) -> list:
        return [
            dict(iteration=i + 1, mu=self.mu[i], d_marginal=self.d_marginal[i],
                 d_conditional=list(self.d_conditional[i]), churn=self.churn[i],
                 residual=self.residuals[i])
            for i in range(len(self.snapshots))
        ]


def manifold_features(pair: DomainPair, config: PipelineConfig):
    """Manifold features for the pooled domains (raw features when disabled)."""
    xs, xt = pair.source.features, pair.target.features
    if not config.use_manifold:
        return np.vstack([xs, xt]), None
    d = min(config.d_tca, xs.shape[1], pair.n + pair.m)
    if d < config.d_tca:
        warnings.warn(f"d_tca={config.d_tca} exceeds the data; using {d}", stacklevel=2)
    q = config.q if config.q is not None else max(1, d // 2)
    model = fit_manifold(xs, xt, d, q, config.reducer, config.tca_kernel, config.tca_regularizer)
    return model.transform(np.vstack([xs, xt])), model


def run_m3d(pair: DomainPair, config: PipelineConfig = PipelineConfig(), z=None,
            manifold=None) -> M3DResult:
    """Manifold transform, weak initialisation, then ``config.l`` alignment/solve rounds.

    ``K`` and ``L`` are built once. Each round re-estimates mu from the
    current pseudo-labels (unless ``config.fixed_mu`` is set), solves for
    beta and records the target soft scores.
    """
    seeds = config.stage_seeds()
    n, m, C = pair.n, pair.m, pair.class_count
    ys = pair.source.labels
    if z is None:
        z, manifold = manifold_features(pair, config)
    zs, zt = z[:n], z[n:]

    init = weak_classifier_fit_predict(config.initial_classifier, zs, ys, zt, C,
                                       seeds["weak"], config.knn_k, config.tree_depth)
    pseudo = hard_labels(init)

    K, bw = build_kernel(z, KernelConfig(config.kernel, config.bandwidth))
    W, L = build_laplacian(z, GraphConfig(min(config.p, n + m - 1)))
    LK = L @ K
    a = np.concatenate([np.ones(n), np.zeros(m)])
    Y = np.zeros((C, n + m))
    Y[ys, np.arange(n)] = 1.0
    rhs = a[:, None] * Y.T
    rhs_norm = np.linalg.norm(rhs)

    mus, d_as, d_cs, churns, residuals, snaps = [], [], [], [], [], []
    beta = None
    for it in range(config.l):
        if config.fixed_mu is None:
            mu, d_a, d_c = estimate_mu(zs, ys, zt, pseudo, C, seeds["adist"])
        else:
            mu, d_a, d_c = config.fixed_mu, float("nan"), (float("nan"),) * C
        # M is a sum of rank-one terms e e^T, so M K never needs an (n+m)^3 product
        e0 = mean_gap_vector(a > 0, a == 0)
        MK = (1.0 - mu) * np.outer(e0, e0 @ K)
        src_lab = np.concatenate([ys, np.full(m, -1)])
        tgt_lab = np.concatenate([np.full(n, -1), pseudo])
        for c in range(C):
            ec = mean_gap_vector(src_lab == c, tgt_lab == c)
            if ec.any():
                MK += mu * np.outer(ec, ec @ K)
        S = system_matrix(K, a, MK, LK, config.eta, config.lam, config.rho)
        beta = solve_system(S, rhs)
        res = float(np.linalg.norm(S @ beta - rhs) / rhs_norm)
        scores = K[n:] @ beta
        new = hard_labels(scores)
        churn = float(np.mean(new != pseudo))
        log.debug("iteration %d: mu=%.4f churn=%.4f residual=%.2e", it + 1, mu, churn, res)
        pseudo = new
        mus.append(float(mu))
        d_as.append(float(d_a))
        d_cs.append(tuple(d_c))
        churns.append(churn)
        residuals.append(res)
        snaps.append(scores)

    model = ClassifierModel(beta, K, L, W, a, Y, z, config.eta, config.lam, config.rho,
                            bw if config.kernel == "rbf" else None, n)
    return M3DResult(model, init, snaps, mus, d_as, d_cs, churns, residuals, manifold, z)


def alignment_for(result: M3DResult, ys, iteration: int):
    """Rebuild the explicit alignment state used at a given (1-based) iteration."""
    if iteration == 1:
        pseudo = hard_labels(result.initial_scores)
    else:
        pseudo = hard_labels(result.snapshots[iteration - 2])
    C = result.initial_scores.shape[1]
    i = iteration - 1
    return build_alignment(ys, pseudo, C, result.mu[i], result.d_marginal[i], result.d_conditional[i])
