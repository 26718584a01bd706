"""Closed-form geometries used across experiments.

Stereographic conventions for the unit 2-sphere embedded in R^3 with
coordinates (p0, p1, p2):

  - chart 1 (covers everything but the pole p0 = -1):
        emb1(z) = ((1 - |z|^2), 2 z1, 2 z2) / (1 + |z|^2)
  - chart 2 coordinates w = T(z) = (z1, -z2) / |z|^2  (an involution; as a
    complex map w = 1/z, so the transition is orientation preserving)
  - the round metric is 4 delta / (1 + |.|^2)^2 in both charts
  - the hemispheres are D_+ = {p0 >= 0} (|z| <= 1) and D_- = {p0 <= 0}.

The folding map rho(p0, p1, p2) = (-|p0|, p1, p2) reflects D_+ onto D_-;
it is 1-Lipschitz, an isometry a.e., and reverses orientation on D_+.
"""

from __future__ import annotations

import numpy as np

from .grid import ChartGrid
from .metric import MetricField


# ---------------------------------------------------------------------------
# round sphere, stereographic charts
# ---------------------------------------------------------------------------

def conformal_factor(p: np.ndarray) -> np.ndarray:
    """lambda with round metric = lambda(z)^{-2} delta: lambda = (1+|z|^2)/2."""
    return (1.0 + p[..., 0] ** 2 + p[..., 1] ** 2) / 2.0


def round_metric_fn(p: np.ndarray) -> np.ndarray:
    r2 = p[..., 0] ** 2 + p[..., 1] ** 2
    c = 4.0 / (1.0 + r2) ** 2
    return c[..., None, None] * np.eye(2)


def round_metric_dfn(p: np.ndarray) -> np.ndarray:
    r2 = p[..., 0] ** 2 + p[..., 1] ** 2
    dc = -16.0 / (1.0 + r2) ** 3
    out = np.zeros(p.shape[:-1] + (2, 2, 2))
    for k in range(2):
        out[..., k, 0, 0] = dc * p[..., k]
        out[..., k, 1, 1] = dc * p[..., k]
    return out


def round_metric(grid: ChartGrid) -> MetricField:
    return MetricField.from_function(grid, round_metric_fn, round_metric_dfn)


def stereo_embed(z: np.ndarray) -> np.ndarray:
    """Chart-1 coordinates -> unit vectors in R^3."""
    r2 = z[..., 0] ** 2 + z[..., 1] ** 2
    d = 1.0 + r2
    return np.stack([(1.0 - r2) / d, 2.0 * z[..., 0] / d, 2.0 * z[..., 1] / d], axis=-1)


def stereo_embed_chart2(w: np.ndarray) -> np.ndarray:
    """Chart-2 coordinates -> unit vectors (apply the transition first)."""
    return stereo_embed(chart_transition(w))


def stereo_coords(p: np.ndarray, chart: int) -> np.ndarray:
    """Unit vectors -> chart coordinates (chart 1 near p0=1, chart 2 near p0=-1)."""
    if chart == 1:
        d = 1.0 + p[..., 0]
        return np.stack([p[..., 1] / d, p[..., 2] / d], axis=-1)
    d = 1.0 - p[..., 0]
    return np.stack([p[..., 1] / d, -p[..., 2] / d], axis=-1)


def chart_transition(z: np.ndarray) -> np.ndarray:
    """T(z) = (z1, -z2)/|z|^2, the involutive chart change (w = 1/z)."""
    r2 = z[..., 0] ** 2 + z[..., 1] ** 2
    return np.stack([z[..., 0] / r2, -z[..., 1] / r2], axis=-1)


def transition_jacobian(z: np.ndarray) -> np.ndarray:
    """dT as a stack of 2x2 matrices (complex multiplication by -1/z^2)."""
    x, y = z[..., 0], z[..., 1]
    r2 = x * x + y * y
    a = (y * y - x * x) / r2**2
    b = 2.0 * x * y / r2**2
    J = np.empty(z.shape[:-1] + (2, 2))
    J[..., 0, 0] = a
    J[..., 0, 1] = -b
    J[..., 1, 0] = b
    J[..., 1, 1] = a
    return J


def frame_rotation_angle(z: np.ndarray) -> np.ndarray:
    """Angle rotating the chart-1 conformal frame into the chart-2 one.

    The chart-2 frame pushed to chart-1 coordinates is the chart-1 frame
    rotated by alpha = pi + 2 arg z; single-valued modulo 2 pi on the
    overlap annulus, which is exactly why the lifted spinor transition on
    the 2-sphere exists.
    """
    return np.pi + 2.0 * np.arctan2(z[..., 1], z[..., 0])


# ---------------------------------------------------------------------------
# sphere self-maps in embedded coordinates
# ---------------------------------------------------------------------------

def folding_map(p: np.ndarray) -> np.ndarray:
    out = p.copy()
    out[..., 0] = -np.abs(p[..., 0])
    return out


def antipodal_map(p: np.ndarray) -> np.ndarray:
    return -p


def identity_map(p: np.ndarray) -> np.ndarray:
    return p


def azimuthal_double(p: np.ndarray) -> np.ndarray:
    """Double the azimuth angle about the p0-axis: zeta -> zeta^2/|zeta|."""
    zeta = p[..., 1] + 1j * p[..., 2]
    r = np.abs(zeta)
    out = np.empty_like(p)
    out[..., 0] = p[..., 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(r > 0, zeta * zeta / np.where(r > 0, r, 1.0), 0.0)
    out[..., 1] = np.real(w)
    out[..., 2] = np.imag(w)
    return out


def rotation_matrix(axis: int, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    R = np.eye(3)
    i, j = [(1, 2), (0, 2), (0, 1)][axis]
    R[i, i] = c
    R[j, j] = c
    R[i, j] = -s
    R[j, i] = s
    return R


def rotation_map(axis: int, angle: float):
    R = rotation_matrix(axis, angle)
    return lambda p: p @ R.T


# ---------------------------------------------------------------------------
# Moebius rotations in chart-1 complex coordinates
# ---------------------------------------------------------------------------

def mobius_rotation(t: float):
    """Rotation of the round sphere by angle t about an equatorial axis,
    written in chart-1 coordinates: z -> (c z + s) / (-s z + c), an exact
    isometry of the round chart metric.  Returns (map, complex_derivative).
    """
    c, s = np.cos(t / 2.0), np.sin(t / 2.0)

    def phi(p):
        z = p[..., 0] + 1j * p[..., 1]
        w = (c * z + s) / (-s * z + c)
        return np.stack([np.real(w), np.imag(w)], axis=-1)

    def dphi(p):
        z = p[..., 0] + 1j * p[..., 1]
        dw = 1.0 / (-s * z + c) ** 2
        J = np.empty(p.shape[:-1] + (2, 2))
        J[..., 0, 0] = np.real(dw)
        J[..., 0, 1] = -np.imag(dw)
        J[..., 1, 0] = np.imag(dw)
        J[..., 1, 1] = np.real(dw)
        return J

    return phi, dphi


# ---------------------------------------------------------------------------
# analytic test metrics on planar charts
# ---------------------------------------------------------------------------

def diag_metric_fn(f1, f2):
    def fn(p):
        out = np.zeros(p.shape[:-1] + (2, 2))
        out[..., 0, 0] = f1(p)
        out[..., 1, 1] = f2(p)
        return out

    return fn


def polar_like_metric(grid: ChartGrid) -> MetricField:
    """diag(1, x^2): the flat plane in polar-type coordinates (scal = 0)."""
    fn = diag_metric_fn(lambda p: np.ones(p.shape[:-1]), lambda p: p[..., 0] ** 2)

    def dfn(p):
        out = np.zeros(p.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = 2.0 * p[..., 0]
        return out

    return MetricField.from_function(grid, fn, dfn)


def anisotropic_metric(grid: ChartGrid) -> MetricField:
    """diag(1 + x^2/4, 1), a smooth metric with nontrivial curvature."""
    fn = diag_metric_fn(lambda p: 1.0 + p[..., 0] ** 2 / 4.0, lambda p: np.ones(p.shape[:-1]))
    return MetricField.from_function(grid, fn)


def wavy_diag_metric(grid: ChartGrid) -> MetricField:
    """diag(1, (1 + 0.3 sin x)^2): curvature -2 q''/q with q = 1 + 0.3 sin x."""
    fn = diag_metric_fn(
        lambda p: np.ones(p.shape[:-1]), lambda p: (1.0 + 0.3 * np.sin(p[..., 0])) ** 2
    )
    return MetricField.from_function(grid, fn)


def conformal_wave_metric(grid: ChartGrid, amplitude: float = 0.3) -> MetricField:
    """e^{2 phi} delta with phi = amplitude sin(x) cos(y)."""

    def fn(p):
        phi = amplitude * np.sin(p[..., 0]) * np.cos(p[..., 1])
        return np.exp(2.0 * phi)[..., None, None] * np.eye(2)

    return MetricField.from_function(grid, fn)


def offdiag_metric(grid: ChartGrid) -> MetricField:
    """A generic non-diagonal SPD metric on [-1,1]^2."""

    def fn(p):
        x, y = p[..., 0], p[..., 1]
        out = np.empty(p.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0 + y * y / 8.0
        out[..., 1, 1] = 1.0 + x * x / 8.0
        out[..., 0, 1] = x * y / 10.0
        out[..., 1, 0] = x * y / 10.0
        return out

    return MetricField.from_function(grid, fn)
