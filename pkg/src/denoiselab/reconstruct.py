"""Recover the corrupted density from a denoiser by line integration.

For Gaussian noise ``(g(x) - x) / sigma^2`` is the gradient of
``log p(x)``, so integrating it along any contour gives log-density
differences, and normalizing ``exp`` of the potential on a grid gives ``p``.
For a field that is not a gradient the integral depends on the path; the
path and curl diagnostics here detect that.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import numerics
from .errors import DimensionError, NotIntegrableError

STEPS_PER_UNIT = 128
REFINE_TOL = 1e-8
MAX_STEPS = 1 << 16


@dataclass(frozen=True, eq=False)
class Contour:
    """Polyline through ``vertices`` (shape (m, d)), origin first.

    Consecutive vertices must differ, except for the trivial two-vertex
    contour whose endpoint is its origin.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 2:
            raise ValueError("a contour needs at least two vertices of one dimension")
        if not np.all(np.isfinite(v)):
            raise ValueError("contour vertices must be finite")
        steps = np.any(v[1:] != v[:-1], axis=1)
        if not steps.all() and not (v.shape[0] == 2):
            raise ValueError("consecutive contour vertices must be distinct")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def straight(cls, endpoint, origin=None):
        end = np.atleast_1d(np.asarray(endpoint, dtype=float))
        start = np.zeros_like(end) if origin is None else np.atleast_1d(np.asarray(origin, dtype=float))
        return cls(np.stack([start, end]))

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def origin(self):
        return self.vertices[0]

    @property
    def endpoint(self):
        return self.vertices[-1]

    def segments(self):
        return list(zip(self.vertices[:-1], self.vertices[1:]))


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Density tabulated at the nodes of a uniform grid over ``box``.

    ``box`` holds one ``(lo, hi)`` pair per axis; node ``i`` of an axis sits
    at ``lo + i * (hi - lo) / (n - 1)``. ``log_normalizer`` is ``log Z``
    when the grid came from a reconstruction.
    """

    box: tuple
    values: np.ndarray
    sigma: Optional[float] = None
    log_normalizer: Optional[float] = None

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        vals = np.array(self.values, dtype=float)
        if len(box) not in (1, 2) or vals.ndim != len(box):
            raise DimensionError("grid densities are 1D or 2D with one box interval per axis")
        if any(n < 8 for n in vals.shape):
            raise ValueError("each grid axis needs at least 8 nodes")
        if any(not hi > lo for lo, hi in box):
            raise ValueError("box intervals must have hi > lo")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0.0):
            raise ValueError("grid density values must be finite and nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self):
        return len(self.box)

    @property
    def shape(self):
        return self.values.shape

    @property
    def axes(self):
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.box, self.shape)]

    @property
    def spacing(self):
        return np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(self.box, self.shape)])

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def points(self):
        """All nodes in row-major order, shape (N, dim)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def integral(self):
        return float(np.sum(trapezoid_weights(self.box, self.shape) * self.values))

    def normalized(self):
        return GridDensity(self.box, self.values / self.integral(), self.sigma, self.log_normalizer)

    def to_csv(self, path):
        header = ",".join([f"axis{i}" for i in range(self.dim)] + ["value"])
        rows = np.column_stack([self.points(), self.values.ravel()])
        lines = [header] + [",".join(f"{v:.17g}" for v in row) for row in rows]
        Path(path).write_text("\n".join(lines) + "\n")

    def metadata(self):
        return {
            "dim": self.dim,
            "box": [list(b) for b in self.box],
            "shape": list(self.shape),
            "sigma": self.sigma,
            "log_normalizer": self.log_normalizer,
        }

    def save(self, csv_path):
        """Write the CSV and a ``.json`` metadata sidecar next to it."""
        csv_path = Path(csv_path)
        self.to_csv(csv_path)
        csv_path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, csv_path):
        csv_path = Path(csv_path)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        values = data[:, -1].reshape(meta["shape"])
        return cls(tuple(map(tuple, meta["box"])), values, meta.get("sigma"), meta.get("log_normalizer"))


def trapezoid_weights(box, shape):
    """Tensor-product trapezoid weights for a uniform grid."""
    w = None
    for (lo, hi), n in zip(box, shape):
        wi = numerics.trapezoid(lo, hi, n - 1).weights
        w = wi if w is None else np.multiply.outer(w, wi)
    return w


def _segment_integral(g, a, b, steps):
    rule = numerics.simpson(0.0, 1.0, steps)
    delta = b - a
    P = a + rule.nodes[:, None] * delta
    return float(rule.weights @ ((g(P) - P) @ delta))


def line_integral_log_density(g, noise, contour, steps_per_segment=None):
    """``(1/sigma^2) int_C (g(x) - x) . dx`` along a polyline.

    This is ``log p(end) - log p(origin)`` for the corrupted density when
    ``g`` is the optimal denoiser. Each segment uses composite Simpson with
    ``steps_per_segment`` subintervals; when it is None the count starts at
    128 per unit length and doubles until the segment value moves by less
    than 1e-8.
    """
    if steps_per_segment is not None and steps_per_segment < 8:
        raise ValueError("need at least 8 Simpson steps per segment")
    total = 0.0
    for a, b in contour.segments():
        length = float(np.linalg.norm(b - a))
        if length == 0.0:
            continue
        if steps_per_segment is not None:
            total += _segment_integral(g, a, b, steps_per_segment + steps_per_segment % 2)
            continue
        steps = max(8, 2 * math.ceil(0.5 * STEPS_PER_UNIT * length))
        value = _segment_integral(g, a, b, steps)
        while steps < MAX_STEPS:
            steps *= 2
            finer = _segment_integral(g, a, b, steps)
            done = abs(finer - value) < REFINE_TOL
            value = finer
            if done:
                break
        total += value
    return total / noise.variance


def path_independence_check(g, noise, endpoint, n_contours, seed, steps=256, origin=None):
    """Largest spread of the line integral over several contours to ``endpoint``.

    The first contour is the straight line; the others detour through a
    random point drawn uniformly from the bounding box of origin and
    endpoint, widened by one unit on each side.
    """
    end = np.atleast_1d(np.asarray(endpoint, dtype=float))
    if end.size == 1:
        raise DimensionError("1D line integrals are trivially path independent")
    if end.size != 2:
        raise DimensionError("path independence check is implemented for d == 2")
    if n_contours < 2:
        raise ValueError("need at least two contours to compare")
    start = np.zeros(2) if origin is None else np.asarray(origin, dtype=float)
    lo = np.minimum(start, end) - 1.0
    hi = np.maximum(start, end) + 1.0
    u = numerics.RandomSource(seed).uniform(2 * (n_contours - 1)).reshape(-1, 2)
    contours = [Contour.straight(end, start)]
    for via in lo + u * (hi - lo):
        contours.append(Contour(np.stack([start, via, end])))
    values = [line_integral_log_density(g, noise, c, steps) for c in contours]
    return float(max(values) - min(values))


def curl_residual(g, x, h):
    """Central-difference curl of ``g - id`` at a 2D point."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != 2:
        raise DimensionError("curl residual is defined for d == 2 only")
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    e1, e2 = np.array([h, 0.0]), np.array([0.0, h])
    P = np.stack([x + e1, x - e1, x + e2, x - e2])
    f = g(P) - P
    return float((f[0, 1] - f[1, 1]) / (2 * h) - (f[2, 0] - f[3, 0]) / (2 * h))


def _cell_integrals(g, starts, delta, steps):
    """Simpson integrals of ``(g - id) . delta`` from each start to start + delta."""
    rule = numerics.simpson(0.0, 1.0, steps)
    P = starts[:, None, :] + rule.nodes[None, :, None] * delta
    flat = P.reshape(-1, starts.shape[1])
    vals = ((g(flat) - flat) @ delta).reshape(P.shape[:2])
    return vals @ rule.weights


def _telescope(cells, anchor):
    """Potential along an axis from cell increments, zero at index ``anchor``."""
    phi = np.zeros(cells.shape[:-1] + (cells.shape[-1] + 1,))
    phi[..., anchor + 1:] = np.cumsum(cells[..., anchor:], axis=-1)
    if anchor > 0:
        phi[..., :anchor] = -np.cumsum(cells[..., :anchor][..., ::-1], axis=-1)[..., ::-1]
    return phi


def reconstruct_density_on_grid(g, noise, box, shape, steps=8, origin=None):
    """Normalized corrupted density on a grid, recovered from a denoiser.

    The potential is anchored at the grid node nearest ``origin`` (default:
    the box centre), reached by one straight contour. From there it is
    extended along axis 0 and then along axis 1 by accumulating Simpson
    integrals over neighbouring grid cells (``steps`` subintervals per
    cell). Exponentiation uses max subtraction; ``log Z`` is stored on the
    result so that ``p = exp(potential - log Z)``.
    """
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    shape = tuple(int(n) for n in shape)
    dim = len(box)
    if dim not in (1, 2) or len(shape) != dim:
        raise DimensionError("grid reconstruction supports d <= 2")
    if any(n < 8 for n in shape):
        raise ValueError("each grid axis needs at least 8 nodes")
    steps = max(2, steps + steps % 2)
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(box, shape)]
    spacing = [(hi - lo) / (n - 1) for (lo, hi), n in zip(box, shape)]
    start = np.array([0.5 * (lo + hi) for lo, hi in box]) if origin is None else np.atleast_1d(
        np.asarray(origin, dtype=float))
    anchor = [int(np.argmin(np.abs(ax - c))) for ax, c in zip(axes, start)]
    anchor_point = np.array([ax[i] for ax, i in zip(axes, anchor)])
    phi0 = line_integral_log_density(g, noise, Contour.straight(anchor_point, start)) * noise.variance

    # along axis 0 through the anchor
    d0 = np.zeros(dim)
    d0[0] = spacing[0]
    starts = np.tile(anchor_point, (shape[0] - 1, 1))
    starts[:, 0] = axes[0][:-1]
    phi = phi0 + _telescope(_cell_integrals(g, starts, d0, steps), anchor[0])
    if dim == 2:
        d1 = np.array([0.0, spacing[1]])
        mesh = np.stack(np.meshgrid(axes[0], axes[1][:-1], indexing="ij"), axis=-1)
        cells = _cell_integrals(g, mesh.reshape(-1, 2), d1, steps).reshape(shape[0], shape[1] - 1)
        phi = phi[:, None] + _telescope(cells, anchor[1])
    phi = phi / noise.variance
    if not np.all(np.isfinite(phi)):
        raise NotIntegrableError("denoiser not integrable on box: non-finite log-density values")
    top = float(phi.max())
    p = np.exp(phi - top)
    z = float(np.sum(trapezoid_weights(box, shape) * p))
    return GridDensity(box, p / z, noise.sigma, math.log(z) + top)
