"""Admissible metric fields and their first-derivative geometry.

A metric of Sobolev class W^{1,p}, p > n, is stored as a sampled field of
symmetric positive definite matrices g_ij together with its weak first
derivatives d_k g_ij.  The derivatives are either supplied analytically
(preferred for piecewise-analytic metrics, where they are exact a.e.) or
finite-differenced from the samples.

From these we compute, sample by sample:

  - Christoffel symbols   Gamma^k_ij = 1/2 g^{kl} (d_i g_lj + d_j g_il - d_l g_ij)
  - the volume density    sqrt(det g / det gamma) relative to a background gamma
  - the square-root endomorphism b_g with gamma(v, w) = g(b_g v, b_g w),
    whose columns turn the background-orthonormal frame into a g-orthonormal
    frame e_i^g = b_g e_i
  - connection 1-forms omega_ji(d_k) of the Levi-Civita connection in the
    frame e_i^g, antisymmetrized with the projection residual recorded as an
    honest discretization-error indicator.

Index conventions: g fields have shape res + (n, n); dg has shape
res + (n, n, n) with the derivative index FIRST (dg[..., k, i, j] = d_k g_ij);
Christoffels have shape res + (n, n, n) as Gamma[..., k, i, j] = Gamma^k_ij.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import ChartGrid, Field, FieldValueError, partial_derivative

_COND_LIMIT = 1e12


class MetricError(ValueError):
    """Metric field violates admissibility (not SPD, asymmetric dg, ...)."""


def _fd_step(grid: ChartGrid) -> float:
    return 1e-5 * max(grid.hi[k] - grid.lo[k] for k in range(grid.dim)) / 2.0


def callable_derivatives(fn, points: np.ndarray, step: float) -> np.ndarray:
    """Central differences of a smooth callable at arbitrary points.

    With step ~1e-5 the truncation and roundoff errors are both ~1e-10,
    effectively analytic for test metrics given in closed form.
    """
    n = points.shape[-1]
    outs = []
    for k in range(n):
        dp = np.zeros_like(points)
        dp[..., k] = step
        outs.append((np.asarray(fn(points + dp)) - np.asarray(fn(points - dp))) / (2 * step))
    return np.stack(outs, axis=-3) if outs[0].ndim >= 2 else np.stack(outs, axis=-1)


@dataclass(eq=False)
class MetricField:
    """Sampled W^{1,p} metric: g_ij, weak derivatives d_k g_ij, exponent p.

    ``g_fn`` / ``dg_fn`` keep the analytic callables when the field was built
    from closed-form data; boundary-sensitive consumers (mean curvature,
    pullbacks) evaluate those instead of interpolating samples.
    """

    grid: ChartGrid
    g: Field
    dg: Field
    sobolev_p: float = 4.0
    lambda_min: float = field(default=0.0, init=False)
    g_fn: object = field(default=None, repr=False)
    dg_fn: object = field(default=None, repr=False)

    def __post_init__(self):
        n = self.grid.dim
        if self.g.comp_shape != (n, n):
            raise MetricError(f"metric components must be ({n},{n})")
        if self.dg.comp_shape != (n, n, n):
            raise MetricError(f"metric derivatives must be ({n},{n},{n})")
        if self.sobolev_p <= n:
            raise MetricError(f"sobolev exponent p={self.sobolev_p} must exceed n={n}")
        gv = self.g.values
        if np.max(np.abs(gv - np.swapaxes(gv, -1, -2))) > 1e-12 * (1 + np.max(np.abs(gv))):
            raise MetricError("metric samples are not symmetric")
        dgv = self.dg.values
        if np.max(np.abs(dgv - np.swapaxes(dgv, -1, -2))) > 1e-9 * (1 + np.max(np.abs(dgv))):
            raise MetricError("dg is not symmetric in (i, j)")
        eigs = np.linalg.eigvalsh(gv)
        lam = float(np.min(eigs))
        if lam <= 0:
            raise MetricError(f"metric not positive definite: min eigenvalue {lam}")
        self.lambda_min = lam

    @classmethod
    def from_function(cls, grid: ChartGrid, g_fn, dg_fn=None, sobolev_p: float = 4.0):
        """Sample a metric callable; derivatives from dg_fn or tiny-step FD."""
        pts = grid.points()
        g = Field(grid, np.asarray(g_fn(pts), dtype=float))
        if dg_fn is not None:
            dg = Field(grid, np.asarray(dg_fn(pts), dtype=float))
        else:
            dg = Field(grid, callable_derivatives(g_fn, pts, _fd_step(grid)))
        m = cls(grid, g, dg, sobolev_p=sobolev_p)
        m.g_fn = g_fn
        m.dg_fn = dg_fn if dg_fn is not None else (
            lambda p, _f=g_fn, _s=_fd_step(grid): callable_derivatives(_f, p, _s)
        )
        return m

    @classmethod
    def from_samples(cls, grid: ChartGrid, g_values: np.ndarray, sobolev_p: float = 4.0):
        """Build from metric samples alone; dg by grid finite differences."""
        g = Field(grid, np.asarray(g_values, dtype=float))
        dg = np.stack(
            [partial_derivative(g, k).values for k in range(grid.dim)], axis=-3
        )
        return cls(grid, g, Field(grid, dg, check=False), sobolev_p=sobolev_p)

    def inverse(self) -> np.ndarray:
        gv = self.g.values
        cond = np.linalg.cond(gv)
        if np.max(cond) > _COND_LIMIT:
            idx = np.unravel_index(int(np.argmax(cond)), cond.shape)
            raise MetricError(f"metric not invertible at sample {idx}: cond={np.max(cond):.3g}")
        return np.linalg.inv(gv)

    def flat_background(self) -> "MetricField":
        """The flat chart metric delta on the same grid."""
        return flat_metric(self.grid)


def flat_metric(grid: ChartGrid) -> MetricField:
    n = grid.dim
    g = np.broadcast_to(np.eye(n), grid.res + (n, n)).copy()
    dg = np.zeros(grid.res + (n, n, n))
    return MetricField(grid, Field(grid, g, check=False), Field(grid, dg, check=False), sobolev_p=2 * n)


def christoffel(m: MetricField) -> Field:
    """Christoffel symbols Gamma^k_ij of the Levi-Civita connection.

    Pointwise formula with the inverse metric per sample; symmetric in (i, j)
    by construction.  Raises MetricError when a sample is numerically
    singular (condition number above 1e12).
    """
    ginv = m.inverse()
    dg = m.dg.values  # dg[..., a, b, c] = d_a g_{b c}
    # S[..., l, i, j] = d_i g_{l j} + d_j g_{i l} - d_l g_{i j}
    S = (
        np.einsum("...ilj->...lij", dg)
        + np.einsum("...jil->...lij", dg)
        - np.einsum("...lij->...lij", dg)
    )
    gamma = 0.5 * np.einsum("...kl,...lij->...kij", ginv, S)
    return Field(m.grid, gamma, check=False)


@dataclass(eq=False)
class FrameField:
    """Background frame e, square-root endomorphism b_g, g-orthonormal frame.

    Columns of ``eg`` are e_i^g = b_g(e_i); they satisfy g(e_i^g, e_j^g) =
    delta_ij to the residual recorded at construction.
    """

    grid: ChartGrid
    e: Field
    b: Field
    eg: Field
    ortho_residual: float = 0.0


def sqrt_endomorphism(m: MetricField, background: MetricField | None = None) -> FrameField:
    """Solve gamma(v, w) = g(b v, b w) for the unique SPD square root b_g.

    Per sample: B_g = g^{-1} gamma brought to symmetric form through
    gamma^{1/2}, then an eigendecomposition square root.  The returned frame
    e_i^g = b_g e_i is g-orthonormal; the residual of that identity and of
    b^2 = B are checked (1e-12 target, hard failure at 1e-8).
    """
    gamma = background if background is not None else m.flat_background()
    if not m.grid.same_geometry(gamma.grid):
        raise MetricError("metric and background live on different grids")
    n = m.grid.dim
    G = m.g.values
    Ga = gamma.g.values
    # symmetrize: Bhat = Ga^{1/2} G^{-1} Ga^{1/2} is SPD; b = Ga^{-1/2} sqrt(Bhat) Ga^{1/2}
    wG, VG = np.linalg.eigh(Ga)
    if np.min(wG) <= 0:
        raise MetricError("background metric not positive definite")
    sq = np.einsum("...ik,...k,...jk->...ij", VG, np.sqrt(wG), VG)
    sqinv = np.einsum("...ik,...k,...jk->...ij", VG, 1.0 / np.sqrt(wG), VG)
    Ginv = m.inverse()
    Bhat = sq @ Ginv @ sq
    Bhat = 0.5 * (Bhat + np.swapaxes(Bhat, -1, -2))
    w, V = np.linalg.eigh(Bhat)
    if np.min(w) <= 0:
        raise MetricError("square-root endomorphism lost positivity")
    bhat = np.einsum("...ik,...k,...jk->...ij", V, np.sqrt(w), V)
    resid = np.max(np.abs(bhat @ bhat - Bhat)) / max(1.0, np.max(np.abs(Bhat)))
    if resid > 1e-8:
        raise MetricError(f"eigen square root residual {resid:.3g} exceeds 1e-8")
    b = sqinv @ bhat @ sq
    # background-orthonormal frame: columns of gamma^{-1/2}
    e = sqinv
    eg = b @ e
    ortho = np.einsum("...ai,...ab,...bj->...ij", eg, G, eg)
    ortho_res = float(np.max(np.abs(ortho - np.eye(n))))
    if ortho_res > 1e-10:
        raise MetricError(f"frame orthonormality residual {ortho_res:.3g} exceeds 1e-10")
    return FrameField(
        m.grid,
        e=Field(m.grid, e, check=False),
        b=Field(m.grid, b, check=False),
        eg=Field(m.grid, eg, check=False),
        ortho_residual=ortho_res,
    )


def volume_density(m: MetricField, background: MetricField | None = None) -> Field:
    """sqrt(det g / det gamma) per sample."""
    det_g = np.linalg.det(m.g.values)
    if background is None:
        det_b = 1.0
    else:
        det_b = np.linalg.det(background.g.values)
    return Field(m.grid, np.sqrt(det_g / det_b), check=False)


@dataclass(eq=False)
class ConnectionForms:
    """Levi-Civita connection 1-forms in the g-orthonormal frame.

    ``omega`` has shape res + (k, i, j): omega[..., k, i, j] = omega_ij(d_k),
    antisymmetric in (i, j).  ``projection_residual`` is the relative size of
    the symmetric part removed by the metricity projection.
    """

    grid: ChartGrid
    omega: Field
    projection_residual: float


def connection_one_forms(
    ff: FrameField, m: MetricField, residual_tol: float = 1e-3
) -> ConnectionForms:
    """omega_ji(d_k) with nabla(e_i^g) = sum_j omega_ji (e_j^g).

    Computed from Gamma and finite differences of the frame field, then
    projected onto its antisymmetric part.  A projection residual above
    ``residual_tol * ||omega||`` flags an under-resolved metric.
    """
    gamma_sym = christoffel(m).values  # [..., c, k, a]
    eg = ff.eg.values                  # [..., a, i]
    n = m.grid.dim
    G = m.g.values
    deg = np.stack(
        [partial_derivative(Field(m.grid, eg, check=False), k).values for k in range(n)],
        axis=-3,
    )  # [..., k, a, i]
    # covariant derivative components: (nabla_k e_i^g)^c = d_k eg^c_i + Gamma^c_{k a} eg^a_i
    cov = deg + np.einsum("...cka,...ai->...kci", gamma_sym, eg)
    # omega[..., k, j, i] = g(nabla_k e_i^g, e_j^g)
    omega = np.einsum("...kci,...cb,...bj->...kji", cov, G, eg)
    anti = 0.5 * (omega - np.swapaxes(omega, -1, -2))
    sym = 0.5 * (omega + np.swapaxes(omega, -1, -2))
    scale = max(np.max(np.abs(anti)), 1e-30)
    resid = float(np.max(np.abs(sym)) / scale)
    if np.max(np.abs(anti)) > 1e-12 and resid > residual_tol:
        raise MetricError(
            f"metricity projection residual {resid:.3g} exceeds {residual_tol:.1g}: "
            "metric under-resolved for connection forms"
        )
    return ConnectionForms(m.grid, Field(m.grid, anti, check=False), resid)
