"""Exact Gaussian-mixture densities.

A :class:`GaussianMixture` can hold point-mass components (zero covariance)
so that discrete priors such as two atoms at +-1 are expressible. Such a
mixture has no density; :func:`corrupt` convolves it with the noise kernel
and returns a smooth mixture that does.

Points are numpy arrays. Functions accept a single point of shape ``(d,)``
(a bare float is fine when ``d == 1``) or a batch of shape ``(n, d)`` and
return results shaped to match.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import numerics
from .errors import DegenerateDensityError, DimensionError, NotPositiveDefiniteError

MAX_DIM = 8
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class CorruptionModel:
    """Additive isotropic Gaussian noise ``xt = x + sigma * eps``."""

    sigma: float

    def __post_init__(self):
        s = float(self.sigma)
        if not (s > 0.0 and math.isfinite(s)):
            raise ValueError(f"noise sigma must be positive and finite, got {self.sigma!r}")
        object.__setattr__(self, "sigma", s)

    @property
    def variance(self):
        return self.sigma * self.sigma


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Finite mixture ``sum_k w_k N(mean_k, cov_k)``.

    Attributes:
        weights: shape (K,), nonnegative, summing to one.
        means: shape (K, d).
        covs: shape (K, d, d), symmetric positive semidefinite.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        mu = np.array(self.means, dtype=float)
        if mu.ndim == 1:
            mu = mu.reshape(-1, 1) if w.size > 1 or mu.size == 1 else mu.reshape(1, -1)
        if mu.ndim != 2 or mu.shape[0] != w.size:
            raise ValueError("means must have shape (K, d) matching the weights")
        k, d = mu.shape
        if k < 1:
            raise ValueError("a mixture needs at least one component")
        if not 1 <= d <= MAX_DIM:
            raise DimensionError(f"dimension must be in [1, {MAX_DIM}], got {d}")
        cov = np.array(self.covs, dtype=float)
        if cov.ndim == 1 and cov.size == k:
            cov = cov[:, None, None] * np.eye(d)
        cov = cov.reshape(k, d, d)
        for name, arr in (("weights", w), ("means", mu), ("covs", cov)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contain non-finite entries")
        if np.any(w < 0.0) or np.any(w > 1.0):
            raise ValueError("weights must lie in [0, 1]")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {w.sum()!r})")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2), rtol=0.0, atol=1e-12):
            raise ValueError("covariances must be symmetric")
        for i in range(k):
            if np.linalg.eigvalsh(cov[i]).min() < -1e-12:
                raise ValueError(f"covariance {i} is not positive semidefinite")
        for arr in (w, mu, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.weights.size

    def __eq__(self, other):
        if not isinstance(other, GaussianMixture):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.covs, other.covs)
        )

    __hash__ = None

    # -- construction helpers ------------------------------------------------

    @classmethod
    def gaussian(cls, mean, cov):
        """Single-component mixture; ``cov`` may be a scalar variance."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls([1.0], mean[None, :], _as_cov(cov, mean.size)[None])

    @classmethod
    def point_masses(cls, locations, weights=None):
        """Mixture of atoms at ``locations`` (shape (K,) or (K, d))."""
        loc = np.asarray(locations, dtype=float)
        if loc.ndim == 1:
            loc = loc[:, None]
        k, d = loc.shape
        w = np.full(k, 1.0 / k) if weights is None else weights
        return cls(w, loc, np.zeros((k, d, d)))

    @classmethod
    def from_dict(cls, spec):
        """Build from ``{"dim": d, "components": [{"weight", "mean", "cov"}]}``."""
        dim = int(spec["dim"])
        comps = spec["components"]
        if not comps:
            raise ValueError("mixture spec has no components")
        weights, means, covs = [], [], []
        for c in comps:
            mean = np.atleast_1d(np.asarray(c["mean"], dtype=float))
            if mean.size != dim:
                raise DimensionError(f"component mean has length {mean.size}, expected {dim}")
            weights.append(float(c["weight"]))
            means.append(mean)
            covs.append(_as_cov(c["cov"], dim))
        return cls(np.array(weights), np.array(means), np.array(covs))

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        return {
            "dim": self.dim,
            "components": [
                {"weight": float(w), "mean": m.tolist(), "cov": c.tolist()}
                for w, m, c in zip(self.weights, self.means, self.covs)
            ],
        }

    # -- cached factorizations -----------------------------------------------

    @cached_property
    def is_point_mass(self):
        """Boolean per component: covariance identically zero."""
        return np.array([not np.any(c) for c in self.covs])

    @cached_property
    def _factors(self):
        # None when some component is singular
        try:
            chols = np.array([numerics.cholesky(c) for c in self.covs])
        except NotPositiveDefiniteError:
            return None
        logdet_half = np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)
        return chols, logdet_half

    def _require_density(self):
        f = self._factors
        if f is None:
            raise DegenerateDensityError(
                "mixture has singular (point-mass) components and no density; "
                "apply corrupt() first"
            )
        return f

    def smooth_part(self):
        """Split into ``(smooth_mixture or None, smooth_weight, atom_weights, atom_means)``.

        The smooth sub-mixture has its weights renormalized; ``smooth_weight``
        is their original total.
        """
        atoms = self.is_point_mass
        smooth = ~atoms
        total = float(self.weights[smooth].sum())
        sub = None
        if smooth.any() and total > 0.0:
            w = self.weights[smooth] / total
            w = w / w.sum()
            sub = GaussianMixture(w, self.means[smooth], self.covs[smooth])
        return sub, total, self.weights[atoms].copy(), self.means[atoms].copy()

    def component_log_densities(self, x):
        """``log w_k + log N(x; mu_k, Sigma_k)`` with shape (n, K)."""
        X, _ = as_points(x, self.dim)
        return self._component_terms(X)[0]

    def _component_terms(self, X):
        chols, logdet_half = self._require_density()
        n, d = X.shape
        k = self.n_components
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        logc = np.empty((n, k))
        z = np.empty((k, d, n))
        for i in range(k):
            zi = numerics.solve_lower(chols[i], (X - self.means[i]).T)
            z[i] = zi
            logc[:, i] = logw[i] - 0.5 * np.sum(zi * zi, axis=0) - logdet_half[i] - 0.5 * d * LOG_2PI
        return logc, z, chols


def _as_cov(cov, dim):
    c = np.asarray(cov, dtype=float)
    if c.ndim == 0:
        return float(c) * np.eye(dim)
    c = c.reshape(dim, dim)
    return c


def as_points(x, dim):
    """Coerce ``x`` to an ``(n, dim)`` array; also report if it was a single point."""
    X = np.asarray(x, dtype=float)
    single = X.ndim <= 1
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != dim:
        raise DimensionError(f"point dimension {X.shape[-1]} does not match mixture dimension {dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must have finite coordinates")
    return X, single


def responsibilities(gmm, x):
    """Posterior component probabilities ``r_k(x)``, shape (n, K) or (K,)."""
    X, single = as_points(x, gmm.dim)
    logc = gmm._component_terms(X)[0]
    r = np.exp(logc - numerics.logsumexp(logc, axis=1)[:, None])
    return r[0] if single else r


def log_density(gmm, x):
    """``log p(x)`` by log-sum-exp over components."""
    X, single = as_points(x, gmm.dim)
    out = numerics.logsumexp(gmm._component_terms(X)[0], axis=1)
    return float(out[0]) if single else out


def density(gmm, x):
    out = np.exp(log_density(gmm, x))
    return float(out) if np.ndim(out) == 0 else out


def score(gmm, x):
    """Analytic ``grad log p(x) = sum_k r_k(x) Sigma_k^{-1} (mu_k - x)``."""
    X, single = as_points(x, gmm.dim)
    logc, z, chols = gmm._component_terms(X)
    r = np.exp(logc - numerics.logsumexp(logc, axis=1)[:, None])
    g = np.zeros_like(X)
    for i in range(gmm.n_components):
        # Sigma^{-1}(mu - x) = -L^{-T} z
        g -= r[:, i:i + 1] * numerics.solve_upper_t(chols[i], z[i]).T
    return g[0] if single else g


def corrupt(gmm, noise):
    """Convolve with the noise kernel: covariances become ``Sigma_k + sigma^2 I``."""
    covs = gmm.covs + noise.variance * np.eye(gmm.dim)
    return GaussianMixture(gmm.weights, gmm.means, covs)


def sample(gmm, n, seed):
    """Draw ``n`` i.i.d. points, shape (n, d).

    Component labels come from stream 0 of the seed by cumulative-weight
    first match; component ``k`` draws its Gaussian variates from its own
    substream ``k + 1``. Point-mass components return their mean exactly.
    """
    if n < 1:
        raise ValueError("sample size must be at least 1")
    root = numerics.RandomSource(seed)
    u = root.spawn(0).uniform(n)
    cum = np.cumsum(gmm.weights)
    cum = cum / cum[-1]
    labels = np.minimum(np.searchsorted(cum, u, side="right"), gmm.n_components - 1)
    out = np.empty((n, gmm.dim))
    for k in range(gmm.n_components):
        idx = np.flatnonzero(labels == k)
        if idx.size == 0:
            continue
        if gmm.is_point_mass[k]:
            out[idx] = gmm.means[k]
            continue
        L = numerics.cholesky(gmm.covs[k], semidefinite=True)
        z = root.spawn(k + 1).standard_normal(idx.size * gmm.dim).reshape(idx.size, gmm.dim)
        out[idx] = gmm.means[k] + z @ L.T
    return out


def posterior_mean(gmm, noise, xt):
    """Closed-form ``E[x | xt]`` under ``xt = x + sigma * eps``.

    Each component contributes its conjugate posterior mean
    ``mu_k + Sigma_k (Sigma_k + sigma^2 I)^{-1} (xt - mu_k)``, weighted by its
    responsibility under the corrupted mixture. Atoms are handled naturally
    (their posterior mean is the atom itself).
    """
    X, single = as_points(xt, gmm.dim)
    noisy = corrupt(gmm, noise)
    logc, z, chols = noisy._component_terms(X)
    r = np.exp(logc - numerics.logsumexp(logc, axis=1)[:, None])
    out = np.zeros_like(X)
    for k in range(gmm.n_components):
        # (Sigma + s^2 I)^{-1} (xt - mu) = L^{-T} z
        v = numerics.solve_upper_t(chols[k], z[k])
        out += r[:, k:k + 1] * (gmm.means[k] + (gmm.covs[k] @ v).T)
    return out[0] if single else out
