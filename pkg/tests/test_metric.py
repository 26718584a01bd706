import numpy as np
import pytest

from lowreg_geom.grid import ChartGrid, Field
from lowreg_geom.library import round_metric, round_metric_fn
from lowreg_geom.metric import (
    MetricError,
    MetricField,
    christoffel,
    connection_one_forms,
    flat_metric,
    sqrt_endomorphism,
    volume_density,
)


def square(n, lo=-1.0, hi=1.0):
    return ChartGrid((lo, lo), (hi, hi), (n, n), (False, False))


def test_metric_validation():
    g = square(8)
    bad = np.broadcast_to(np.diag([1.0, -1.0]), g.res + (2, 2)).copy()
    with pytest.raises(MetricError):
        MetricField.from_samples(g, bad)
    ok = MetricField.from_samples(g, np.broadcast_to(np.diag([4.0, 9.0]), g.res + (2, 2)).copy())
    assert ok.lambda_min == pytest.approx(4.0)
    with pytest.raises(MetricError):
        MetricField(g, ok.g, ok.dg, sobolev_p=1.5)


def test_christoffel_flat():
    m = flat_metric(square(16))
    assert np.max(np.abs(christoffel(m).values)) == 0.0


def test_christoffel_polar_oracle():
    # hand oracle for diag(1, x^2): Gamma^1_22 = -x, Gamma^2_12 = 1/x
    g = ChartGrid((0.5, 0.0), (1.5, 1.0), (64, 64), (False, False))

    def fn(p):
        out = np.zeros(p.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = p[..., 0] ** 2
        return out

    def dfn(p):
        out = np.zeros(p.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = 2.0 * p[..., 0]
        return out

    m = MetricField.from_function(g, fn, dfn)
    gam = christoffel(m).values
    X, _ = g.meshgrid()
    assert np.max(np.abs(gam[..., 0, 1, 1] - (-X))) < 1e-8
    assert np.max(np.abs(gam[..., 1, 0, 1] - 1.0 / X)) < 1e-8
    assert np.max(np.abs(gam[..., 1, 1, 0] - 1.0 / X)) < 1e-8
    # symmetry in the lower indices is exact by construction
    assert np.array_equal(gam, np.swapaxes(gam, -1, -2))


def conformal_christoffel_oracle(p, phi_grad):
    """Closed form for e^{2 phi} delta: Gamma^k_ij = d_i phi delta_kj + d_j phi delta_ki - d_k phi delta_ij."""
    px, py = phi_grad
    out = np.zeros(p.shape[:-1] + (2, 2, 2))
    dphi = np.stack([px, py], axis=-1)
    eye = np.eye(2)
    for k in range(2):
        for i in range(2):
            for j in range(2):
                out[..., k, i, j] = (
                    dphi[..., i] * eye[k, j] + dphi[..., j] * eye[k, i] - dphi[..., k] * eye[i, j]
                )
    return out


def test_christoffel_round_sphere_fd_refinement():
    # finite-differenced dg must reproduce the closed form at O(h^2)
    errs = []
    for n in (32, 64, 128):
        g = square(n)
        pts = g.points()
        m = MetricField.from_samples(g, round_metric_fn(pts))
        gam = christoffel(m).values
        r2 = pts[..., 0] ** 2 + pts[..., 1] ** 2
        px = -2 * pts[..., 0] / (1 + r2)
        py = -2 * pts[..., 1] / (1 + r2)
        oracle = conformal_christoffel_oracle(pts, (px, py))
        interior = (slice(2, -2), slice(2, -2))
        errs.append(np.max(np.abs((gam - oracle)[interior])))
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


def test_sqrt_endo_identity_and_scaling():
    g = square(8)
    m = flat_metric(g)
    ff = sqrt_endomorphism(m)
    assert np.max(np.abs(ff.b.values - np.eye(2))) < 1e-12

    m4 = MetricField.from_samples(g, np.broadcast_to(4.0 * np.eye(2), g.res + (2, 2)).copy())
    ff4 = sqrt_endomorphism(m4)
    # gamma(v,w) = g(b v, b w) forces b = id/2; frame vectors halve
    assert np.max(np.abs(ff4.b.values - 0.5 * np.eye(2))) < 1e-12
    ortho = np.einsum("...ai,...ab,...bj->...ij", ff4.eg.values, m4.g.values, ff4.eg.values)
    assert np.max(np.abs(ortho - np.eye(2))) < 1e-10


def test_sqrt_endo_diagonal():
    g = square(8)
    m = MetricField.from_samples(g, np.broadcast_to(np.diag([4.0, 9.0]), g.res + (2, 2)).copy())
    ff = sqrt_endomorphism(m)
    assert np.max(np.abs(ff.b.values - np.diag([0.5, 1.0 / 3.0]))) < 1e-12


def test_sqrt_endo_general_background():
    g = square(8)
    rng = np.random.default_rng(7)
    A = rng.normal(size=(2, 2))
    spd = A @ A.T + 2 * np.eye(2)
    m = MetricField.from_samples(g, np.broadcast_to(spd, g.res + (2, 2)).copy())
    bg = MetricField.from_samples(g, np.broadcast_to(np.diag([2.0, 0.5]), g.res + (2, 2)).copy())
    ff = sqrt_endomorphism(m, bg)
    b = ff.b.values
    # defining relation gamma(v, w) = g(b v, b w)
    rel = np.einsum("...ai,...ab,...bj->...ij", b, m.g.values, b)
    assert np.max(np.abs(rel - bg.g.values)) < 1e-10


def test_sqrt_endo_continuity_in_g():
    # perturbing g by 1e-6 moves b_g by less than 1e-3 on the sphere metric
    g = square(32)
    m = round_metric(g)
    ff = sqrt_endomorphism(m)
    rng = np.random.default_rng(3)
    delta = rng.uniform(-1, 1, size=g.res + (2, 2))
    delta = 0.5 * (delta + np.swapaxes(delta, -1, -2))
    delta *= 1e-6 / np.max(np.abs(delta))
    m2 = MetricField.from_samples(g, m.g.values + delta)
    ff2 = sqrt_endomorphism(m2)
    assert np.max(np.abs(ff2.b.values - ff.b.values)) <= 1e-3


def test_volume_density():
    g = square(8)
    m = flat_metric(g)
    assert np.max(np.abs(volume_density(m).values - 1.0)) == 0.0
    md = MetricField.from_samples(g, np.broadcast_to(np.diag([4.0, 9.0]), g.res + (2, 2)).copy())
    assert np.max(np.abs(volume_density(md).values - 6.0)) < 1e-12
    mr = round_metric(g)
    pts = g.points()
    expected = 4.0 / (1.0 + pts[..., 0] ** 2 + pts[..., 1] ** 2) ** 2
    assert np.max(np.abs(volume_density(mr).values - expected)) < 1e-12


def conformal_omega_oracle(p, amplitude=None):
    """omega_21 = -phi_y dx + phi_x dy for e^{2 phi} delta (derived by hand)."""
    r2 = p[..., 0] ** 2 + p[..., 1] ** 2
    px = -2 * p[..., 0] / (1 + r2)
    py = -2 * p[..., 1] / (1 + r2)
    return px, py


def test_connection_forms_flat_and_round():
    g = square(16)
    m = flat_metric(g)
    forms = connection_one_forms(sqrt_endomorphism(m), m)
    assert np.max(np.abs(forms.omega.values)) < 1e-12

    # analytic dg: the antisymmetrization removes the (diagonal) FD error of
    # the conformal frame entirely, so the closed form is hit almost exactly
    gg = square(64)
    mm = round_metric(gg)
    forms = connection_one_forms(sqrt_endomorphism(mm), mm)
    om = forms.omega.values  # [..., k, i, j]
    pts = gg.points()
    px, py = conformal_omega_oracle(pts)
    assert np.max(np.abs(om[..., 0, 1, 0] - (-py))) < 1e-9
    assert np.max(np.abs(om[..., 1, 1, 0] - px)) < 1e-9

    # fully sampled metric (dg by grid differences): O(h^2) to the closed
    # form, and the recorded projection residual decays at the same rate
    errs, resids = [], []
    for n in (32, 64, 128):
        gg = square(n)
        mm = MetricField.from_samples(gg, round_metric_fn(gg.points()))
        forms = connection_one_forms(sqrt_endomorphism(mm), mm, residual_tol=0.1)
        om = forms.omega.values
        pts = gg.points()
        px, py = conformal_omega_oracle(pts)
        interior = (slice(2, -2), slice(2, -2))
        err = max(
            np.max(np.abs((om[..., 0, 1, 0] - (-py))[interior])),
            np.max(np.abs((om[..., 1, 1, 0] - px)[interior])),
        )
        errs.append(err)
        resids.append(forms.projection_residual)
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0
    assert resids[0] / resids[1] > 3.0 and resids[1] / resids[2] > 3.0


def test_connection_forms_general_conformal():
    # e^{2 phi} delta with phi = 0.2 sin(x) cos(y): same closed form oracle
    for n in (64, 128):
        g = square(n)

        def fn(p):
            phi = 0.2 * np.sin(p[..., 0]) * np.cos(p[..., 1])
            return np.exp(2 * phi)[..., None, None] * np.eye(2)

        m = MetricField.from_function(g, fn)
        forms = connection_one_forms(sqrt_endomorphism(m), m)
        om = forms.omega.values
        pts = g.points()
        px = 0.2 * np.cos(pts[..., 0]) * np.cos(pts[..., 1])
        py = -0.2 * np.sin(pts[..., 0]) * np.sin(pts[..., 1])
        interior = (slice(2, -2), slice(2, -2))
        err = max(
            np.max(np.abs((om[..., 0, 1, 0] - (-py))[interior])),
            np.max(np.abs((om[..., 1, 1, 0] - px)[interior])),
        )
        assert err < 60.0 * (g.spacing[0]) ** 2
