"""Transfer component analysis and the Grassmann geodesic flow kernel.

Both domains are first reduced with TCA. Each domain then gets its own PCA
basis inside the reduced space, and the geodesic between the two bases on
the Grassmann manifold yields a PSD matrix ``G`` whose square root maps a
sample ``x`` to its manifold representation ``z = sqrt(G) x``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.spatial.distance import pdist

from .store import load_arrays, save_arrays

SMALL_ANGLE = 1e-8


class ManifoldError(ValueError):
    pass


class RankDeficiencyWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# kernels shared with the learner
# --------------------------------------------------------------------------

def median_bandwidth(x: np.ndarray, max_points: int = 2000) -> float:
    """Median pairwise Euclidean distance, on an evenly strided subset for large inputs."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] > max_points:
        x = x[np.linspace(0, x.shape[0] - 1, max_points).astype(int)]
    if x.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(x)))
    return med if med > 0 else 1.0


def sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def kernel_matrix(a, b, kind: str = "linear", bandwidth: Optional[float] = None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if kind == "linear":
        return a @ b.T
    if kind == "rbf":
        if bandwidth is None or bandwidth <= 0:
            raise ValueError("rbf kernel needs a positive bandwidth")
        return np.exp(-sq_distances(a, b) / (2.0 * bandwidth**2))
    raise ValueError(f"unknown kernel kind {kind!r}")


def _fix_signs(v: np.ndarray) -> np.ndarray:
    """Flip each column so that its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


# --------------------------------------------------------------------------
# dimensionality reduction
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TcaModel:
    projection: np.ndarray
    training_features: np.ndarray
    kernel_kind: str
    bandwidth: Optional[float]
    eigenvalues: np.ndarray

    @property
    def d_tca(self) -> int:
        return self.projection.shape[1]

    def transform(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        k = kernel_matrix(x, self.training_features, self.kernel_kind, self.bandwidth)
        return k @ self.projection


def fit_tca(xs, xt, d_tca: int = 128, kernel_kind: str = "linear",
            regularizer: float = 1.0, bandwidth: Optional[float] = None) -> TcaModel:
    """Top ``d_tca`` transfer components of the pooled source/target data.

    Solves ``K H K w = lambda (K M0 K + regularizer I) w`` where ``M0`` is the
    rank-one marginal MMD matrix and ``H`` the centring matrix.
    """
    xs = np.asarray(xs, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    x = np.vstack([xs, xt])
    n, m = xs.shape[0], xt.shape[0]
    total = n + m
    if regularizer <= 0:
        raise ManifoldError("TCA regularizer must be positive")
    if d_tca < 1 or d_tca > min(total, x.shape[1]):
        raise ManifoldError(
            f"d_tca={d_tca} must lie in [1, min(n+m, D)] = [1, {min(total, x.shape[1])}]"
        )
    if kernel_kind == "rbf" and bandwidth is None:
        bandwidth = median_bandwidth(x)
    k = kernel_matrix(x, x, kernel_kind, bandwidth)
    e = np.concatenate([np.full(n, 1.0 / n), np.full(m, -1.0 / m)])
    ke = k @ e
    k1 = k.sum(axis=1)
    scatter = k @ k - np.outer(k1, k1) / total
    scatter = 0.5 * (scatter + scatter.T)
    mmd = np.outer(ke, ke) + regularizer * np.eye(total)
    try:
        vals, vecs = scipy.linalg.eigh(scatter, mmd, subset_by_index=[total - d_tca, total - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ManifoldError(f"TCA eigen-solver failed: {exc}") from exc
    vals, vecs = vals[::-1], vecs[:, ::-1]
    floor = 1e-10 * max(abs(vals[0]), np.finfo(float).tiny)
    weak = int((vals <= floor).sum())
    if weak:
        warnings.warn(
            f"TCA: {weak} of {d_tca} components carry no variance (rank-deficient data)",
            RankDeficiencyWarning, stacklevel=2,
        )
    return TcaModel(_fix_signs(np.ascontiguousarray(vecs)), x, kernel_kind, bandwidth, vals.copy())


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Plain PCA on the pooled domains; the TCA ablation substitute."""

    mean: np.ndarray
    components: np.ndarray

    @property
    def d_tca(self) -> int:
        return self.components.shape[1]

    def transform(self, x) -> np.ndarray:
        return (np.atleast_2d(np.asarray(x, dtype=np.float64)) - self.mean) @ self.components


def fit_pca(xs, xt, d: int) -> PcaModel:
    x = np.vstack([xs, xt]).astype(np.float64)
    if d < 1 or d > min(x.shape):
        raise ManifoldError(f"PCA dimension {d} must lie in [1, {min(x.shape)}]")
    mean = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
    return PcaModel(mean, _fix_signs(vt[:d].T.copy()))


# --------------------------------------------------------------------------
# geodesic flow kernel
# --------------------------------------------------------------------------

def flow_weights(theta):
    """Diagonal entries of the three blocks of the geodesic kernel.

    Returns ``1 + sin(2t)/2t``, ``(cos(2t) - 1)/2t`` and ``1 - sin(2t)/2t``,
    replaced by their limits ``2, 0, 0`` for angles below ``SMALL_ANGLE``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    l1 = np.where(small, 2.0, 1.0 + np.sin(2 * t) / (2 * t))
    l2 = np.where(small, 0.0, (np.cos(2 * t) - 1.0) / (2 * t))
    l3 = np.where(small, 0.0, 1.0 - np.sin(2 * t) / (2 * t))
    return l1, l2, l3


def psd_sqrt(g: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (g + g.T))
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return 0.5 * (root + root.T)


def pca_basis(x: np.ndarray, q: int):
    """Leading ``q`` principal directions of ``x`` and the numerical rank."""
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    tol = max(xc.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum())
    return vt[:q].T.copy(), rank


@dataclass(frozen=True, eq=False)
class GeodesicKernel:
    source_basis: np.ndarray
    target_basis: np.ndarray
    complement: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    principal_angles: np.ndarray
    G: np.ndarray
    G_sqrt: np.ndarray

    @property
    def dim(self) -> int:
        return self.G.shape[0]

    def transform(self, x) -> np.ndarray:
        """Map row samples (or one vector) to ``sqrt(G) x``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ManifoldError(f"expected {self.dim}-dimensional input, got {x.shape[-1]}")
        return x @ self.G_sqrt  # G_sqrt is symmetric


def manifold_transform(kernel: GeodesicKernel, x) -> np.ndarray:
    return kernel.transform(x)


def geodesic_kernel_from_bases(ts: np.ndarray, tt: np.ndarray) -> GeodesicKernel:
    """Assemble ``G`` from orthonormal source/target bases of equal width."""
    d, q = ts.shape
    if tt.shape != (d, q):
        raise ManifoldError(f"basis shapes differ: {ts.shape} vs {tt.shape}")
    if 2 * q > d:
        raise ManifoldError(f"subspace dimension q={q} exceeds half the ambient dimension {d}")
    full, _ = np.linalg.qr(ts, mode="complete")
    rs = full[:, q:]
    try:
        u1, cos_t, vt = np.linalg.svd(ts.T @ tt)
    except np.linalg.LinAlgError as exc:
        raise ManifoldError(f"SVD failed: {exc}") from exc
    w = rs.T @ tt @ vt.T  # equals -U2 diag(sin theta)
    sin_t = np.linalg.norm(w, axis=0)
    theta = np.arctan2(sin_t, np.clip(cos_t, 0.0, None))

    u2 = np.zeros((d - q, q))
    live = sin_t > 1e-12
    u2[:, live] = -w[:, live] / sin_t[live]
    if not live.all():
        # directions with theta == 0 carry zero weight; any orthonormal completion works
        basis, _ = np.linalg.qr(np.hstack([u2[:, live], np.eye(d - q)]), mode="complete")
        u2[:, ~live] = basis[:, live.sum():live.sum() + (~live).sum()]

    l1, l2, l3 = flow_weights(theta)
    omega = np.hstack([ts @ u1, rs @ u2])
    lam = np.block([[np.diag(l1), np.diag(l2)], [np.diag(l2), np.diag(l3)]])
    g = omega @ lam @ omega.T
    g = 0.5 * (g + g.T)
    return GeodesicKernel(ts, tt, rs, u1, u2, theta, g, psd_sqrt(g))


def fit_gfk(source_reduced, target_reduced, q: Optional[int] = None) -> GeodesicKernel:
    """Geodesic flow kernel between the PCA subspaces of the two domains."""
    xs = np.asarray(source_reduced, dtype=np.float64)
    xt = np.asarray(target_reduced, dtype=np.float64)
    d = xs.shape[1]
    if xt.shape[1] != d:
        raise ManifoldError("source and target must share the reduced dimension")
    if q is None:
        q = d // 2
    if q < 1 or 2 * q > d:
        raise ManifoldError(f"subspace dimension q={q} must satisfy 1 <= q <= d/2 = {d / 2}")
    ts, rank_s = pca_basis(xs, q)
    tt, rank_t = pca_basis(xt, q)
    rank = min(rank_s, rank_t)
    if rank < q:
        if rank < 1:
            raise ManifoldError("a domain has zero variance; no subspace to align")
        warnings.warn(f"domain covariance rank {rank} < q={q}; reducing q to {rank}",
                      RankDeficiencyWarning, stacklevel=2)
        ts, tt = ts[:, :rank], tt[:, :rank]
    return geodesic_kernel_from_bases(ts, tt)


# --------------------------------------------------------------------------
# composed model and persistence
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ManifoldModel:
    reducer: object
    kernel: GeodesicKernel

    def transform(self, x) -> np.ndarray:
        return self.kernel.transform(self.reducer.transform(x))


def fit_manifold(xs, xt, d_tca: int = 128, q: Optional[int] = None, reducer: str = "tca",
                 kernel_kind: str = "linear", regularizer: float = 1.0,
                 bandwidth: Optional[float] = None) -> ManifoldModel:
    if reducer == "tca":
        red = fit_tca(xs, xt, d_tca, kernel_kind, regularizer, bandwidth)
    elif reducer == "pca":
        red = fit_pca(xs, xt, d_tca)
    else:
        raise ValueError(f"unknown reducer {reducer!r}")
    return ManifoldModel(red, fit_gfk(red.transform(xs), red.transform(xt), q))


def save_manifold_model(model: ManifoldModel, path, config: Optional[dict] = None) -> None:
    k = model.kernel
    arrays = dict(source_basis=k.source_basis, target_basis=k.target_basis,
                  complement=k.complement, u1=k.u1, u2=k.u2, theta=k.principal_angles,
                  G=k.G, G_sqrt=k.G_sqrt)
    red = model.reducer
    if isinstance(red, TcaModel):
        arrays.update(projection=red.projection, training_features=red.training_features,
                      eigenvalues=red.eigenvalues)
        meta = dict(reducer="tca", kernel_kind=red.kernel_kind, bandwidth=red.bandwidth)
    else:
        arrays.update(mean=red.mean, components=red.components)
        meta = dict(reducer="pca")
    meta["config"] = config or {}
    save_arrays(path, arrays, meta)


def load_manifold_model(path):
    a, meta = load_arrays(path)
    kernel = GeodesicKernel(a["source_basis"], a["target_basis"], a["complement"], a["u1"],
                            a["u2"], a["theta"], a["G"], a["G_sqrt"])
    if meta["reducer"] == "tca":
        red = TcaModel(a["projection"], a["training_features"], meta["kernel_kind"],
                       meta["bandwidth"], a["eigenvalues"])
    else:
        red = PcaModel(a["mean"], a["components"])
    return ManifoldModel(red, kernel), meta.get("config", {})
