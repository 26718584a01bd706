"""Distributional scalar curvature of W^{1,p} metrics and its certificates.

For local coordinates on a chart, the scalar curvature of a twice
differentiable metric splits as scal = d_k V^k + F with

    V^k = g^{ij} Gamma^k_ij - g^{ik} Gamma^j_ji
    F   = -(d_k g^{ij}) Gamma^k_ij + (d_k g^{ik}) Gamma^j_ji
          + g^{ij} (Gamma^k_kl Gamma^l_ij - Gamma^k_jl Gamma^l_ik),

with second derivatives of the metric appearing only linearly (inside the
divergence).  Moving that derivative onto the test function defines the
pairing for metrics with merely weak first derivatives:

    <<scal_g, u>> = int [ -V^k d_k(u rho_g) + F u rho_g ] dx,
    rho_g = sqrt(det g),

integrated against the chart Lebesgue measure.  The density must sit inside
the derivative: only then does partial integration reproduce
int scal u dmu_g for smooth metrics (the flat metric written in polar-type
coordinates is the litmus test: the pairing must vanish identically).  The
test function is the only thing ever differentiated; g enters through first
derivatives alone.

d_k rho_g = rho_g Gamma^j_jk closes the formula using the already computed
Christoffels, so analytic dg yields an exact integrand up to quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ChartGrid, Field, FieldValueError, GridError, fd_gradient, quadrature_values
from .metric import MetricField, christoffel, volume_density


class SupportError(ValueError):
    """Test function support violates the compactness precondition."""


def _check_compact_support(u: Field, margin_cells: int = 2):
    g = u.grid
    if all(g.periodic):
        return
    supp = np.abs(u.values) > 0
    if not supp.any():
        return
    idx = np.argwhere(supp)
    for k in range(g.dim):
        if g.periodic[k]:
            continue
        if idx[:, k].min() < margin_cells or idx[:, k].max() > g.res[k] - 1 - margin_cells:
            raise SupportError(
                f"test function support reaches within {margin_cells} cells of the chart "
                f"boundary on axis {k}"
            )


def vk_f_fields(m: MetricField) -> tuple:
    """The first-order fields (V, F) entering the weak curvature pairing.

    V has component shape (n,), F is scalar.  d_k g^{ij} is evaluated as
    -g^{ia} (d_k g_ab) g^{bj}.
    """
    gam = christoffel(m).values           # [..., k, i, j]
    ginv = m.inverse()                    # [..., i, j]
    dg = m.dg.values                      # [..., k, i, j]
    dginv = -np.einsum("...ia,...kab,...bj->...kij", ginv, dg, ginv)

    V = np.einsum("...ij,...kij->...k", ginv, gam) - np.einsum(
        "...ik,...jji->...k", ginv, gam
    )
    F = (
        -np.einsum("...kij,...kij->...", dginv, gam)
        + np.einsum("...kik,...jji->...", dginv, gam)
        + np.einsum("...ij,...kkl,...lij->...", ginv, gam, gam)
        - np.einsum("...ij,...kjl,...lik->...", ginv, gam, gam)
    )
    return Field(m.grid, V, check=False), Field(m.grid, F, check=False)


@dataclass
class ScalarPairing:
    """Value and integrand split of the weak curvature pairing."""

    value: float | complex
    v_term: float | complex
    f_term: float | complex
    test_fn_id: str = ""


def pair_scal(m: MetricField, u: Field, du: Field | None = None, test_fn_id: str = "") -> ScalarPairing:
    """<<scal_g, u>> for a compactly supported (or periodic-chart) test function.

    ``du`` may supply the exact gradient of u; otherwise fd_gradient is used.
    No discrete integration by parts is performed beyond the formula itself.
    """
    if not m.grid.same_geometry(u.grid):
        raise GridError("pair_scal: metric and test function on different grids")
    _check_compact_support(u)
    V, F = vk_f_fields(m)
    rho = volume_density(m).values
    gam = christoffel(m).values
    dlog_rho = np.einsum("...jjk->...k", gam)     # d_k log rho_g = Gamma^j_jk
    grad_u = du.values if du is not None else fd_gradient(_real_or_complex(u)).values
    # d_k(u rho) = rho (d_k u + u dlog_rho_k)
    d_urho = rho[..., None] * (grad_u + u.values[..., None] * dlog_rho)
    v_integrand = -np.einsum("...k,...k->...", V.values, d_urho)
    f_integrand = F.values * u.values * rho
    v_term = quadrature_values(m.grid, v_integrand)
    f_term = quadrature_values(m.grid, f_integrand)
    return ScalarPairing(v_term + f_term, v_term, f_term, test_fn_id)


def _real_or_complex(u: Field) -> Field:
    if np.iscomplexobj(u.values):
        raise FieldValueError("supply du explicitly for complex test functions")
    return u


def pair_scal_complex(m: MetricField, u_values: np.ndarray) -> complex:
    """Pairing against a complex test function given by samples (fd gradient)."""
    re = pair_scal(m, Field(m.grid, np.real(u_values), check=False))
    im = pair_scal(m, Field(m.grid, np.imag(u_values), check=False))
    return complex(re.value + 1j * im.value)


# ---------------------------------------------------------------------------
# lower bound certificates
# ---------------------------------------------------------------------------

@dataclass
class CertificateEntry:
    test_fn_id: str
    pairing: float
    threshold: float
    slack: float
    normalized_slack: float
    tolerance: float
    passed: bool


@dataclass
class CertificateReport:
    entries: list
    min_normalized_slack: float
    worst_witness: str
    passed: bool


def lower_bound_certificate(
    m: MetricField,
    theta,
    tests: list,
    tol_rel: float = 1e-3,
    tol_h2: float = 10.0,
) -> CertificateReport:
    """Check <<scal_g, u>> >= int theta u dmu_g  for each nonnegative test u.

    ``theta`` is a constant or a scalar Field.  Each test passes when its
    slack exceeds -tol * ||u||_{L^1(mu_g)} with
    tol = max(tol_rel, tol_h2 * h^2), the second-order discretization budget.
    Reports the minimum normalized slack and the worst witness.
    """
    rho = volume_density(m).values
    h2 = max(m.grid.spacing) ** 2
    entries = []
    for i, u in enumerate(tests):
        if np.min(u.values) < 0:
            raise FieldValueError(f"test function {i} is not nonnegative")
        name = f"u{i}"
        pairing = pair_scal(m, u, test_fn_id=name)
        th = theta.values if isinstance(theta, Field) else float(theta)
        threshold = quadrature_values(m.grid, th * u.values * rho)
        mass = quadrature_values(m.grid, u.values * rho)
        tol = max(tol_rel, tol_h2 * h2) * mass
        slack = pairing.value - threshold
        entries.append(
            CertificateEntry(
                name, pairing.value, threshold, slack, slack / mass, tol / mass, slack >= -tol
            )
        )
    worst = min(entries, key=lambda e: e.normalized_slack)
    return CertificateReport(
        entries, worst.normalized_slack, worst.test_fn_id, all(e.passed for e in entries)
    )


def pullback_invariance_check(m: MetricField, h: MetricField, phi, u_fn, du_fn=None) -> float:
    """|<<scal_g, u o phi>> - <<scal_h, u>>| for a sampled diffeomorphism phi.

    ``phi`` is a MapField from m's chart onto h's chart whose pullback of h
    must reproduce g to 1e-8 pointwise (checked; requires an analytic
    jacobian to be meaningful).  ``u_fn`` is a callable test function on the
    target chart; its pullback u o phi is sampled analytically.
    """
    J = phi.jac.values
    if h.g_fn is not None:
        H_at = np.asarray(h.g_fn(phi.values.values))
    else:
        raise GridError("pullback check needs the target metric in callable form")
    pulled = np.einsum("...ai,...ab,...bj->...ij", J, H_at, J)
    mismatch = float(np.max(np.abs(pulled - m.g.values)))
    if mismatch > 1e-8:
        raise GridError(f"phi*h differs from g by {mismatch:.3g} > 1e-8")

    u_src = Field(m.grid, np.asarray(u_fn(phi.values.values)))
    if du_fn is not None:
        du_tgt = np.asarray(du_fn(phi.values.values))
        du_src = Field(m.grid, np.einsum("...a,...ak->...k", du_tgt, J), check=False)
    else:
        du_src = None
    p_src = pair_scal(m, u_src, du=du_src)

    u_tgt = Field(h.grid, np.asarray(u_fn(h.grid.points())))
    du_tgt_field = None
    if du_fn is not None:
        du_tgt_field = Field(h.grid, np.asarray(du_fn(h.grid.points())), check=False)
    p_tgt = pair_scal(h, u_tgt, du=du_tgt_field)
    return abs(p_src.value - p_tgt.value)
