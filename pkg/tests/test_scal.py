import numpy as np
import pytest

from lowreg_geom.grid import ChartGrid, Field, quadrature_values
from lowreg_geom.library import (
    anisotropic_metric,
    mobius_rotation,
    polar_like_metric,
    round_metric,
    round_metric_fn,
)
from lowreg_geom.maps import MapField
from lowreg_geom.metric import MetricField, flat_metric, volume_density
from lowreg_geom.scal import (
    SupportError,
    lower_bound_certificate,
    pair_scal,
    pullback_invariance_check,
    vk_f_fields,
)

from oracles import bump_field, classical_scalar_curvature


def square(n, lo=-1.0, hi=1.0):
    return ChartGrid((lo, lo), (hi, hi), (n, n), (False, False))


def test_vkf_flat():
    m = flat_metric(square(16))
    V, F = vk_f_fields(m)
    assert np.max(np.abs(V.values)) == 0.0
    assert np.max(np.abs(F.values)) == 0.0


def test_vkf_polar_oracle():
    # hand oracle for diag(1, x^2): V = (-2/x, 0), F = -2/x^2
    g = ChartGrid((0.5, 0.0), (1.5, 1.0), (48, 48), (False, False))
    m = polar_like_metric(g)
    V, F = vk_f_fields(m)
    X, _ = g.meshgrid()
    assert np.max(np.abs(V.values[..., 0] + 2.0 / X)) < 1e-8
    assert np.max(np.abs(V.values[..., 1])) < 1e-8
    assert np.max(np.abs(F.values + 2.0 / X**2)) < 1e-8


def test_vkf_round_sphere_divergence_identity():
    # d_k V^k + F recovers scal = 2 pointwise at O(h^2) (the coordinate
    # divergence: this is the local splitting the weak pairing is built from)
    errs = []
    for n in (64, 128, 256):
        g = square(n)
        m = round_metric(g)
        V, F = vk_f_fields(m)
        div = np.zeros(g.res)
        from lowreg_geom.grid import partial_derivative

        for k in range(2):
            div += partial_derivative(Field(g, V.values[..., k], check=False), k).values
        recon = F.values + div
        interior = (slice(4, -4), slice(4, -4))
        errs.append(np.max(np.abs((recon - 2.0)[interior])))
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


def test_pair_flat_zero():
    g = square(64)
    m = flat_metric(g)
    u, du = bump_field(g, (0.1, -0.2), 0.5)
    p = pair_scal(m, u, du=du)
    assert abs(p.value) < 1e-10
    assert p.value == p.v_term + p.f_term


def test_pair_polar_flat_zero():
    # the flat plane in polar-type coordinates: the pairing must vanish;
    # this pins the Lebesgue-measure convention of the weak formula
    g = ChartGrid((0.5, -0.5), (1.5, 0.5), (96, 96), (False, False))
    m = polar_like_metric(g)
    u, du = bump_field(g, (1.0, 0.0), 0.3)
    p = pair_scal(m, u, du=du)
    assert abs(p.value) < 1e-8


def test_pair_round_sphere_equals_two():
    g = square(256, lo=-1.2, hi=1.2)
    m = round_metric(g)
    u, du = bump_field(g, (0.3, -0.2), 0.6)
    p = pair_scal(m, u, du=du)
    rho = volume_density(m).values
    ref = 2.0 * quadrature_values(g, u.values * rho)
    assert abs(p.value - ref) <= 0.01 * abs(ref)


def test_pair_matches_classical_oracle():
    # diag(1+x^2/4, 1) is flat in disguise: both routes must agree near zero
    g = square(96)
    m = anisotropic_metric(g)
    u, du = bump_field(g, (0.0, 0.0), 0.7)
    p = pair_scal(m, u, du=du)
    scal = classical_scalar_curvature(m)
    assert np.max(np.abs(scal)) < 1e-6
    assert abs(p.value) < 1e-6


def test_pair_matches_classical_oracle_analytic_path():
    # analytic du and dg: quadrature of smooth compact support is
    # superalgebraic, so the two routes agree to near round-off already
    g = square(96)
    from lowreg_geom.library import wavy_diag_metric

    m = wavy_diag_metric(g)
    u, du = bump_field(g, (0.0, 0.0), 0.7)
    p = pair_scal(m, u, du=du)
    scal = classical_scalar_curvature(m)
    rho = volume_density(m).values
    ref = quadrature_values(g, scal * u.values * rho)
    assert abs(p.value - ref) < 1e-8


def test_pair_matches_classical_oracle_rate():
    # sampled pathway (test function differentiated on the grid): O(h^2)
    from lowreg_geom.library import wavy_diag_metric

    errs = []
    for n in (48, 96, 192):
        g = square(n)
        m = wavy_diag_metric(g)
        u, _ = bump_field(g, (0.35, 0.1), 0.55)
        p = pair_scal(m, u)  # du by fd_gradient
        scal = classical_scalar_curvature(m)
        rho = volume_density(m).values
        ref = quadrature_values(g, scal * u.values * rho)
        errs.append(abs(p.value - ref))
    assert errs[0] / errs[2] > 8.0  # ~O(h^2) over two halvings


def test_pair_linearity():
    g = square(64)
    m = anisotropic_metric(g)
    u1, du1 = bump_field(g, (0.2, 0.1), 0.5)
    u2, du2 = bump_field(g, (-0.3, -0.1), 0.4)
    a, b = 2.0, -3.0
    lin = Field(g, a * u1.values + b * u2.values, check=False)
    dlin = Field(g, a * du1.values + b * du2.values, check=False)
    p = pair_scal(m, lin, du=dlin)
    p1 = pair_scal(m, u1, du=du1)
    p2 = pair_scal(m, u2, du=du2)
    assert p.value == pytest.approx(a * p1.value + b * p2.value, rel=1e-12, abs=1e-14)


def test_support_violation():
    g = square(32)
    m = flat_metric(g)
    u = Field(g, np.ones(g.res))
    with pytest.raises(SupportError):
        pair_scal(m, u)


def test_certificate_round_sphere():
    g = square(192, lo=-1.1, hi=1.1)
    m = round_metric(g)
    rng = np.random.default_rng(11)
    tests = []
    for _ in range(20):
        c = rng.uniform(-0.5, 0.5, size=2)
        r = rng.uniform(0.25, 0.5)
        u, _ = bump_field(g, c, r)
        tests.append(u)
    rep = lower_bound_certificate(m, 2.0, tests)
    assert rep.passed
    assert rep.min_normalized_slack >= -1e-3


def test_certificate_flat():
    g = square(64)
    m = flat_metric(g)
    u, _ = bump_field(g, (0.0, 0.0), 0.6)
    rep0 = lower_bound_certificate(m, 0.0, [u])
    assert rep0.passed and rep0.min_normalized_slack >= -1e-10
    rep1 = lower_bound_certificate(m, 1.0, [u])
    assert not rep1.passed
    # slack is approximately -int u dmu (normalized: -1)
    assert rep1.min_normalized_slack == pytest.approx(-1.0, rel=1e-6)


def test_pullback_identity_and_rotation():
    g = square(64)
    m = flat_metric(g)
    from oracles import smooth_bump

    u_fn, du_fn = smooth_bump((0.05, 0.0), 0.5)
    ident = MapField.from_function(
        g, m, lambda p: p, jac_fn=lambda p: np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2)),
        target="chart", target_metric=m,
    )
    assert pullback_invariance_check(m, m, ident, u_fn, du_fn) < 1e-12

    c, s = np.cos(np.pi / 4), np.sin(np.pi / 4)
    R = np.array([[c, -s], [s, c]])
    rot = MapField.from_function(
        g, m, lambda p: p @ R.T,
        jac_fn=lambda p: np.broadcast_to(R, p.shape[:-1] + (2, 2)),
        target="chart", target_metric=m,
    )
    u_fn0, du_fn0 = smooth_bump((0.0, 0.0), 0.4)
    assert pullback_invariance_check(m, m, rot, u_fn0, du_fn0) <= 1e-8


def test_pullback_mobius_rotation():
    # Moebius rotations are round-metric isometries: closed-form pullback
    errs = []
    from oracles import smooth_bump

    for n in (64, 128):
        g = square(n, lo=-0.9, hi=0.9)
        h = round_metric(g)
        phi, dphi = mobius_rotation(0.35)
        gm = MetricField.from_function(
            g,
            lambda p: np.einsum(
                "...ai,...ab,...bj->...ij", dphi(p), round_metric_fn(phi(p)), dphi(p)
            ),
        )
        mp = MapField.from_function(g, gm, phi, jac_fn=dphi, target="chart", target_metric=h)
        u_fn, du_fn = smooth_bump((0.1, 0.05), 0.35)
        errs.append(pullback_invariance_check(gm, h, mp, u_fn, du_fn))
    assert errs[0] < 5e-4 and errs[1] < errs[0]
