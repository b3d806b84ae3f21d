"""PCA projection plus per-dimension standardization of feature vectors.

``encode(f) = (W (f - mu_f) - mu_z) / (sigma_z + eps)``

The principal directions come from a cyclic Jacobi eigensolver so fits are
reproducible without depending on which LAPACK build is installed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DimensionError, FitError

DEFAULT_EPS = 1e-8

# eigenvalues at or below this fraction of the largest count as zero variance
_RANK_TOL = 1e-12


def jacobi_eigh(a, tol=1e-15, max_sweeps=60):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations are applied in round-robin (tournament) order: each round
    annihilates ``n/2`` disjoint off-diagonal pairs at once, which keeps the
    inner loop vectorized.

    Returns
    -------
    eigvals : (n,) array, descending
    eigvecs : (n, n) array, columns are the eigenvectors
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"jacobi_eigh needs a square matrix, got {a.shape}")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n > 1:
        m = n + (n % 2)
        players = np.arange(m)
        scale = np.sqrt(np.sum(a * a))
        for _ in range(max_sweeps):
            off = np.sqrt(np.sum((a - np.diag(np.diag(a))) ** 2))
            if off <= tol * scale or off == 0.0:
                break
            for _ in range(m - 1):
                left, right = players[: m // 2], players[m // 2 :][::-1]
                p = np.minimum(left, right)
                q = np.maximum(left, right)
                keep = q < n
                p, q = p[keep], q[keep]
                apq = a[p, q]
                # pivots below rounding level of the diagonal are dropped outright
                negligible = np.abs(apq) <= 1e-18 * (np.abs(a[p, p]) + np.abs(a[q, q]))
                a[p[negligible], q[negligible]] = 0.0
                a[q[negligible], p[negligible]] = 0.0
                active = (apq != 0.0) & ~negligible
                if np.any(active):
                    p, q, apq = p[active], q[active], apq[active]
                    tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                    t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                    c = 1.0 / np.sqrt(1.0 + t * t)
                    s = t * c
                    ap, aq = a[:, p].copy(), a[:, q].copy()
                    a[:, p] = c * ap - s * aq
                    a[:, q] = s * ap + c * aq
                    ap, aq = a[p, :].copy(), a[q, :].copy()
                    a[p, :] = c[:, None] * ap - s[:, None] * aq
                    a[q, :] = s[:, None] * ap + c[:, None] * aq
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    vp, vq = v[:, p].copy(), v[:, q].copy()
                    v[:, p] = c * vp - s * vq
                    v[:, q] = s * vp + c * vq
                # rotate everyone but the first player
                players = np.concatenate([players[:1], players[-1:], players[1:-1]])
    eigvals = np.diag(a).copy()
    order = np.argsort(-eigvals, kind="stable")
    return eigvals[order], v[:, order]


def _fix_signs(rows):
    """Flip each row so its largest-magnitude entry is positive (ties: lowest index)."""
    lead = np.argmax(np.abs(rows), axis=1)
    signs = np.where(rows[np.arange(len(rows)), lead] < 0.0, -1.0, 1.0)
    return rows * signs[:, None]


def fit_pca(features, n_components):
    """Top principal directions of ``features`` (N x D).

    Returns ``(W, mu_f, explained_variance)`` with ``W`` of shape
    ``(n_components, D)``, orthonormal rows, ordered by decreasing variance.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"features must be a 2-D array, got shape {x.shape}")
    n, d = x.shape
    if n_components < 1:
        raise FitError(f"n_components must be >= 1, got {n_components}")
    if n < n_components:
        raise FitError(f"need at least {n_components} samples to fit {n_components} components, got {n}")
    if d < n_components:
        raise FitError(f"feature dimension {d} is smaller than n_components={n_components}")
    mu = x.mean(axis=0)
    xc = x - mu
    if d <= n:
        eigvals, eigvecs = jacobi_eigh(xc.T @ xc / n)
        eigvals = eigvals[:n_components]
        w = eigvecs[:, :n_components].T
    else:
        # Gram trick: eigenvectors of X X^T map to principal directions
        eigvals, u = jacobi_eigh(xc @ xc.T / n)
        eigvals = eigvals[:n_components]
        _check_rank(eigvals)
        w = (xc.T @ u[:, :n_components]).T / np.sqrt(n * eigvals)[:, None]
    _check_rank(eigvals)
    return _fix_signs(w), mu, np.maximum(eigvals, 0.0)


def _check_rank(eigvals):
    top = eigvals[0]
    for k, lam in enumerate(eigvals):
        if not lam > _RANK_TOL * top or top <= 0.0:
            raise FitError(
                f"principal component {k} has zero variance: data rank is {k}, "
                f"below the requested {len(eigvals)} components"
            )


def fit_standardizer(projected):
    """Per-dimension mean and population (1/N) standard deviation."""
    z = np.asarray(projected, dtype=np.float64)
    if z.ndim != 2:
        raise DimensionError(f"projected latents must be 2-D, got shape {z.shape}")
    if z.shape[0] < 2:
        raise FitError(f"standardizer needs at least 2 samples, got {z.shape[0]}")
    return z.mean(axis=0), z.std(axis=0)


@dataclass
class LatentSpaceModel:
    """Fitted projection, standardization statistics and rest latent."""

    W: np.ndarray
    mu_f: np.ndarray
    mu_z: np.ndarray
    sigma_z: np.ndarray
    eps: float = DEFAULT_EPS
    z_ref: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.mu_f = np.asarray(self.mu_f, dtype=np.float64)
        self.mu_z = np.asarray(self.mu_z, dtype=np.float64)
        self.sigma_z = np.asarray(self.sigma_z, dtype=np.float64)
        d_z, d = self.W.shape
        if self.mu_f.shape != (d,) or self.mu_z.shape != (d_z,) or self.sigma_z.shape != (d_z,):
            raise DimensionError("latent-space model blocks have inconsistent shapes")
        if np.any(self.sigma_z < 0):
            raise ValueError("sigma_z must be non-negative")
        if self.z_ref is not None:
            self.z_ref = np.asarray(self.z_ref, dtype=np.float64)
            if self.z_ref.shape != (d_z,):
                raise DimensionError(f"z_ref must have length {d_z}")

    @property
    def d_z(self) -> int:
        return self.W.shape[0]

    @property
    def n_features(self) -> int:
        return self.W.shape[1]

    def project(self, f):
        f = np.asarray(f, dtype=np.float64)
        if f.shape[-1] != self.n_features:
            raise DimensionError(f"feature vectors must have length {self.n_features}, got {f.shape[-1]}")
        return (f - self.mu_f) @ self.W.T

    def encode(self, f):
        return (self.project(f) - self.mu_z) / (self.sigma_z + self.eps)


def encode(f, model: LatentSpaceModel):
    return model.encode(f)


def extract_reference(features, model: LatentSpaceModel, rest_frame: int = 0):
    """Encoding of the rest frame of a training sequence."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise FitError("extract_reference needs a non-empty (N, D) feature sequence")
    if not -features.shape[0] <= rest_frame < features.shape[0]:
        raise FitError(f"rest frame {rest_frame} outside a sequence of {features.shape[0]} frames")
    return model.encode(features[rest_frame])


def fit_latent_space(features, n_components=128, eps=DEFAULT_EPS, rest_frame=0) -> LatentSpaceModel:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    w, mu_f, _ = fit_pca(features, n_components)
    mu_z, sigma_z = fit_standardizer((np.asarray(features, dtype=np.float64) - mu_f) @ w.T)
    model = LatentSpaceModel(w, mu_f, mu_z, sigma_z, eps)
    model.z_ref = extract_reference(features, model, rest_frame)
    return model


class LatentSpace(TransformerMixin, BaseEstimator):
    """Estimator wrapper: fit PCA + standardizer, ``transform`` encodes.

    Parameters
    ----------
    n_components : int
        Latent dimension ``d_z``.
    eps : float
        Guard added to the standard deviation before dividing.
    rest_frame : int
        Row of the training matrix whose encoding becomes ``z_ref_``.

    Attributes
    ----------
    components_ : (n_components, D) array
    mean_ : (D,) array
    latent_mean_, latent_std_ : (n_components,) arrays
    explained_variance_ : (n_components,) array
    z_ref_ : (n_components,) array
    """

    def __init__(self, n_components=128, eps=DEFAULT_EPS, rest_frame=0):
        self.n_components = n_components
        self.eps = eps
        self.rest_frame = rest_frame

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        w, mu_f, var = fit_pca(X, self.n_components)
        mu_z, sigma_z = fit_standardizer((X - mu_f) @ w.T)
        self.components_ = w
        self.mean_ = mu_f
        self.explained_variance_ = var
        self.latent_mean_ = mu_z
        self.latent_std_ = sigma_z
        self.n_features_in_ = X.shape[1]
        self.z_ref_ = extract_reference(X, self.model_, self.rest_frame)
        return self

    @property
    def model_(self) -> LatentSpaceModel:
        check_is_fitted(self, "components_")
        return LatentSpaceModel(
            self.components_,
            self.mean_,
            self.latent_mean_,
            self.latent_std_,
            self.eps,
            getattr(self, "z_ref_", None),
        )

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        return self.model_.encode(X)
