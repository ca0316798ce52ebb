"""Numerical substrate: quadrature rules, finite differences, log-space
reductions, small dense linear algebra and a counter-based random source.

Everything here works on plain numpy arrays. The linear algebra is written
for tiny matrices (d <= 8) and is vectorized over the right-hand sides, not
over the matrix size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefiniteError

SQRT_PI = math.sqrt(math.pi)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights of a one-dimensional quadrature rule.

    ``kind`` is one of ``"gauss_hermite"``, ``"simpson"`` or ``"trapezoid"``.
    Gauss-Hermite rules use the physicists' weight ``exp(-t**2)``, so
    ``sum(weights) == sqrt(pi)``.
    """

    kind: str
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if len(self.nodes) != len(self.weights):
            raise ValueError("nodes and weights must have equal length")

    def __len__(self):
        return len(self.nodes)

    def integrate(self, f):
        """Apply the rule to a vectorized callable ``f``."""
        return float(np.dot(self.weights, f(self.nodes)))


def _hermite_orthonormal(n, t):
    """Orthonormal Hermite polynomials p_0..p_n at ``t`` (weight exp(-t^2))."""
    t = np.asarray(t, dtype=float)
    p = np.empty((n + 1,) + t.shape)
    p[0] = math.pi ** -0.25
    if n >= 1:
        p[1] = math.sqrt(2.0) * t * p[0]
    for k in range(1, n):
        p[k + 1] = math.sqrt(2.0 / (k + 1)) * t * p[k] - math.sqrt(k / (k + 1)) * p[k - 1]
    return p


def gauss_hermite(n):
    """Gauss-Hermite rule with ``n`` nodes via Golub-Welsch.

    The nodes are the eigenvalues of the symmetric tridiagonal Jacobi matrix
    of the Hermite recurrence. Each node is then polished with two Newton
    steps on p_n, and the weight is evaluated from the Christoffel sum
    ``1 / sum_k p_k(t)**2``. That sum is the squared first component of the
    normalized Jacobi eigenvector, but computed this way it keeps full
    relative accuracy even for the tiny tail weights.
    """
    if not 2 <= n <= 256:
        raise ValueError(f"Gauss-Hermite node count must be in [2, 256], got {n}")
    off = np.sqrt(np.arange(1, n) / 2.0)
    jacobi = np.diag(off, 1) + np.diag(off, -1)
    t = np.linalg.eigvalsh(jacobi)
    for _ in range(2):
        p = _hermite_orthonormal(n, t)
        t = t - p[n] / (math.sqrt(2.0 * n) * p[n - 1])
    p = _hermite_orthonormal(n - 1, t)
    w = 1.0 / np.sum(p * p, axis=0)
    # exact mirror symmetry
    t = 0.5 * (t - t[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadratureRule("gauss_hermite", t, w)


def simpson(a, b, n):
    """Composite Simpson rule on [a, b] with ``n`` (even) subintervals."""
    if n < 2 or n % 2:
        raise ValueError(f"Simpson rule needs an even subinterval count >= 2, got {n}")
    nodes = np.linspace(a, b, n + 1)
    h = (b - a) / n
    w = np.full(n + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return QuadratureRule("simpson", nodes, w * (h / 3.0))


def trapezoid(a, b, n):
    """Composite trapezoid rule on [a, b] with ``n`` subintervals."""
    if n < 1:
        raise ValueError(f"trapezoid rule needs n >= 1, got {n}")
    nodes = np.linspace(a, b, n + 1)
    w = np.full(n + 1, (b - a) / n)
    w[0] *= 0.5
    w[-1] *= 0.5
    return QuadratureRule("trapezoid", nodes, w)


def logsumexp(values, axis=None):
    """Stable ``log(sum(exp(values)))`` by max subtraction.

    Entries equal to ``-inf`` are allowed; an all ``-inf`` input yields
    ``-inf``.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("logsumexp of an empty sequence")
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def central_difference_gradient(f, x, h):
    """Central-difference gradient of a scalar function ``f`` at ``x``."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return grad


def cholesky(a, semidefinite=False, tol=1e-12):
    """Lower-triangular ``L`` with ``L @ L.T == a``.

    With ``semidefinite=True`` pivots within ``tol * max(diag)`` of zero are
    accepted and their column is set to zero, which is how point-mass and
    rank-deficient covariances are factored for sampling. Otherwise a
    non-positive pivot raises :class:`NotPositiveDefiniteError` naming it.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("cholesky expects a square matrix")
    n = a.shape[0]
    scale = max(float(np.max(np.abs(np.diag(a)))), 0.0)
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - np.dot(L[j, :j], L[j, :j])
        if semidefinite and pivot <= tol * max(scale, 1.0):
            if pivot < -tol * max(scale, 1.0):
                raise NotPositiveDefiniteError(j, float(pivot))
            continue
        if not pivot > 0.0:
            raise NotPositiveDefiniteError(j, float(pivot))
        L[j, j] = math.sqrt(pivot)
        for i in range(j + 1, n):
            L[i, j] = (a[i, j] - np.dot(L[i, :j], L[j, :j])) / L[j, j]
    return L


def solve_lower(L, b):
    """Forward substitution ``L y = b``; ``b`` has shape (d,) or (d, m)."""
    b = np.asarray(b, dtype=float)
    y = np.empty_like(b)
    for i in range(L.shape[0]):
        y[i] = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
    return y


def solve_upper_t(L, b):
    """Back substitution ``L.T x = b`` for lower-triangular ``L``."""
    b = np.asarray(b, dtype=float)
    x = np.empty_like(b)
    n = L.shape[0]
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
    return x


# ---------------------------------------------------------------------------
# Counter-based random source
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z):
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(value):
    return int(_mix64(np.array([value & _MASK64], dtype=np.uint64))[0])


@dataclass(frozen=True)
class RandomSource:
    """Stateless 64-bit counter-based generator.

    Draw ``i`` of stream ``(seed, stream)`` is a double SplitMix64 mix of
    the counter ``i`` keyed by the seed and stream, so the output is a pure
    function of ``(seed, stream, i)``. Repeated calls return the same
    numbers; use :meth:`spawn` to get independent substreams.
    """

    seed: int
    stream: int = 0

    @property
    def _keys(self):
        k1 = _mix_int(self.seed ^ 0x5851F42D4C957F2D)
        k2 = _mix_int(k1 ^ _mix_int(self.stream ^ 0xD1B54A32D192ED03))
        return np.uint64(k1), np.uint64(k2)

    def spawn(self, index):
        """Child source whose stream is derived from this one and ``index``."""
        child = _mix_int((self.stream * 0x2545F4914F6CDD1D + index + 1) & _MASK64)
        return RandomSource(self.seed, child)

    def bits(self, n, start=0):
        """``n`` raw 64-bit words for counters ``start .. start+n-1``."""
        k1, k2 = self._keys
        counter = np.arange(start, start + n, dtype=np.uint64)
        with np.errstate(over="ignore"):
            return _mix64(_mix64(counter * _GOLDEN + k1) ^ k2)

    def uniform(self, n, start=0):
        """Uniform doubles in the open interval (0, 1)."""
        top = (self.bits(n, start) >> np.uint64(11)).astype(np.float64)
        return (top + 0.5) * 2.0**-53

    def standard_normal(self, n):
        """``n`` standard normal draws by the Marsaglia polar method.

        Candidate pair ``j`` consumes counters ``2j`` and ``2j+1``; rejected
        pairs are skipped, so the output prefix does not depend on ``n``.
        """
        return standard_normal(self, n)


def standard_normal(source, n):
    """Polar-method normal variates from a :class:`RandomSource`."""
    n = int(n)
    out = []
    have = 0
    pair = 0
    while have < n:
        need = (n - have + 1) // 2
        m = int(need / 0.785) + 32
        u = 2.0 * source.uniform(2 * m, start=2 * pair) - 1.0
        a, b = u[0::2], u[1::2]
        s = a * a + b * b
        ok = (s < 1.0) & (s > 0.0)
        a, b, s = a[ok], b[ok], s[ok]
        f = np.sqrt(-2.0 * np.log(s) / s)
        z = np.empty(2 * a.size)
        z[0::2] = a * f
        z[1::2] = b * f
        out.append(z)
        have += z.size
        pair += m
    return np.concatenate(out)[:n]
