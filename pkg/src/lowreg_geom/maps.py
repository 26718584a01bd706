"""Sampled Lipschitz maps: differentials, singular values, rigidity diagnostics.

A map is sampled on a source chart grid carrying a metric g and takes values
either in another chart (carrying a metric h) or on the unit round sphere,
stored as embedded unit vectors in R^{n+1}.  The almost-everywhere
differential is the per-sample Jacobian, finite-differenced unless supplied
in closed form; a declared kink interface switches to one-sided stencils and
masks the thin band where no clean stencil exists.

The central object is the per-sample singular value decomposition of
d_x f composed with the square-root endomorphism b_g, i.e. the map
v -> d_x f(v^g) measured between g- and h-orthonormal frames.  Its singular
values mu_1 >= ... >= mu_n and the orientation sign of det drive every
diagnostic here:

  - Lipschitz profile: ess sup |d_x f| plus sampled distance-ratio estimates;
  - quasiregularity: K(x) = mu_1^n / prod(mu_i) on the positively oriented
    set, evaluated in metric-orthonormal frames (the adapted charts in which
    a (1+eps)-pinched metric makes the coordinate definition sharp);
  - isometry a.e. / area-nonincreasing checks by measure fractions;
  - grid-graph shortest paths for the induced Riemannian distance;
  - the two-stage metric-isometry verdict: the a.e. orientation-preserving
    isometry hypothesis gates everything, distances only corroborate.

"Almost everywhere" is operationalized as "all unmasked samples", weighted
by the Riemannian measure; declared interfaces are the honest grid analogue
of measure-zero sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from .grid import ChartGrid, Field, FieldValueError, GridError, partial_derivative
from .metric import MetricField, volume_density

_DEFAULT_DIRECTIONS = 16  # undirected stencil directions for path_distance


class MapError(ValueError):
    """Map construction or precondition failure."""


# ---------------------------------------------------------------------------
# jacobians with kink interfaces
# ---------------------------------------------------------------------------

def _one_sided_jacobian(values: np.ndarray, grid: ChartGrid, side: np.ndarray):
    """Per-axis derivative choosing stencils that stay on one side of a kink.

    ``side`` is the sign of the interface function at each sample; stencils
    mixing signs fall back to the one-sided neighbour away from the
    interface.  Returns (jac[..., axis], mask) where ``mask`` flags samples
    with no clean stencil.
    """
    n = grid.dim
    comp = values.shape[n:]
    out = np.empty(values.shape[:n] + (n,) + comp)
    bad = np.zeros(values.shape[:n], dtype=bool)
    for ax in range(n):
        h = grid.spacing[ax]
        per = grid.periodic[ax]

        def shift(arr, s):
            if per:
                return np.roll(arr, -s, axis=ax)
            idx = np.arange(arr.shape[ax]) + s
            idx = np.clip(idx, 0, arr.shape[ax] - 1)
            return np.take(arr, idx, axis=ax)

        f_p1, f_m1 = shift(values, 1), shift(values, -1)
        f_p2, f_m2 = shift(values, 2), shift(values, -2)
        s_p1, s_m1 = shift(side, 1), shift(side, -1)
        s_p2, s_m2 = shift(side, 2), shift(side, -2)

        central = (f_p1 - f_m1) / (2 * h)
        fwd = (-3.0 * values + 4.0 * f_p1 - f_p2) / (2 * h)
        bwd = (3.0 * values - 4.0 * f_m1 + f_m2) / (2 * h)

        ok_c = (s_p1 * side >= 0) & (s_m1 * side >= 0)
        ok_f = (s_p1 * side >= 0) & (s_p2 * side >= 0)
        ok_b = (s_m1 * side >= 0) & (s_m2 * side >= 0)
        if not per:
            i = np.arange(values.shape[ax])
            edge_lo = i < 2
            edge_hi = i >= values.shape[ax] - 2
            sh = [1] * n
            sh[ax] = -1
            ok_c = ok_c & ~(edge_lo | edge_hi).reshape(sh)
            ok_f = ok_f & ~edge_hi.reshape(sh)
            ok_b = ok_b & ~edge_lo.reshape(sh)

        choice = np.where(ok_c, 0, np.where(ok_f, 1, np.where(ok_b, 2, 3)))
        stacked = np.stack([central, fwd, bwd, central], axis=0)
        sel = np.take_along_axis(
            stacked, choice[(None, ...) + (None,) * len(comp)], axis=0
        )[0]
        out[(Ellipsis,) + (ax,) + (slice(None),) * len(comp)] = sel
        bad |= choice == 3
    bad |= side == 0  # samples exactly on the kink have no derivative
    return out, bad


@dataclass(eq=False)
class MapField:
    """A sampled Lipschitz map with its a.e. differential and SVD data.

    ``values`` has component shape (n,) for chart targets or (n+1,) for the
    embedded round sphere.  ``jac`` has component shape (target_dim, n).
    ``svals`` are the singular values of d_x f o b_g in metric-orthonormal
    frames, sorted descending; ``sign`` is the orientation sign of det d_x f.
    ``mask`` flags samples excluded from a.e. statistics (kink band);
    ``weight`` carries the Riemannian sample measure used for fractions.
    """

    grid: ChartGrid
    source_metric: MetricField
    values: Field
    target: str
    jac: Field
    target_metric: MetricField | None = None
    mask: np.ndarray | None = None
    weight: np.ndarray | None = None
    svals: np.ndarray = field(default=None, repr=False)
    svecs: tuple = field(default=None, repr=False)
    sign: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = self.grid.dim
        tdim = n + 1 if self.target == "sphere" else n
        if self.values.comp_shape != (tdim,):
            raise MapError(f"map values must have {tdim} components for target {self.target}")
        if self.jac.comp_shape != (tdim, n):
            raise MapError("jacobian component shape mismatch")
        if self.mask is None:
            self.mask = np.zeros(self.grid.res, dtype=bool)
        if self.weight is None:
            self.weight = (
                volume_density(self.source_metric).values * self.grid.trapezoid_weights()
            )
        if self.svals is None:
            self._compute_svd()

    @classmethod
    def from_function(
        cls,
        grid: ChartGrid,
        source_metric: MetricField,
        fn,
        jac_fn=None,
        target: str = "chart",
        target_metric: MetricField | None = None,
        interface=None,
        weight: np.ndarray | None = None,
    ):
        """Sample a map callable; jacobian from jac_fn, else finite differences.

        ``interface`` is an optional signed callable whose zero set is a
        declared Lipschitz kink; one-sided stencils are used next to it and
        samples without a clean stencil are masked.
        """
        pts = grid.points()
        vals = Field(grid, np.asarray(fn(pts), dtype=float))
        mask = None
        if jac_fn is not None:
            jv = np.asarray(jac_fn(pts), dtype=float)
            jac = Field(grid, jv)
            if interface is not None:
                s = np.asarray(interface(pts))
                mask = np.abs(s) < 1e-12
        elif interface is None:
            cols = [partial_derivative(vals, k).values for k in range(grid.dim)]
            jac = Field(grid, np.stack(cols, axis=-1))
        else:
            s = np.sign(np.asarray(interface(pts)))
            jraw, bad = _one_sided_jacobian(vals.values, grid, s)
            # jraw is [..., axis, comp]; reorder to [..., comp, axis]
            jac = Field(grid, np.moveaxis(jraw, grid.dim, -1), check=False)
            mask = bad
        return cls(
            grid,
            source_metric,
            vals,
            target,
            jac,
            target_metric=target_metric,
            mask=mask,
            weight=weight,
        )

    # -- svd ---------------------------------------------------------------

    def _compute_svd(self):
        n = self.grid.dim
        G = self.source_metric.g.values
        w, V = np.linalg.eigh(G)
        ginvsqrt = np.einsum("...ik,...k,...jk->...ij", V, 1.0 / np.sqrt(w), V)
        J = self.jac.values
        if self.target == "sphere":
            A = J @ ginvsqrt
            f = self.values.values
            cross = np.cross(A[..., :, 0], A[..., :, 1])
            det = np.einsum("...i,...i->...", f, cross)
        else:
            if self.target_metric is not None and self.target_metric.g_fn is not None:
                H = np.asarray(self.target_metric.g_fn(self.values.values))
            elif self.target_metric is not None:
                H = _interp_matrix_field(self.target_metric, self.values.values)
            else:
                H = np.broadcast_to(np.eye(n), J.shape[:-2] + (n, n))
            wh, Vh = np.linalg.eigh(H)
            hsqrt = np.einsum("...ik,...k,...jk->...ij", Vh, np.sqrt(wh), Vh)
            A = hsqrt @ J @ ginvsqrt
            det = np.linalg.det(A)
        U, S, Vt = np.linalg.svd(A)
        self.svals = S
        self.svecs = (U, Vt)
        self.sign = np.sign(det)

    def unmasked(self) -> np.ndarray:
        return ~self.mask

    def masked_measure_fraction(self) -> float:
        tot = float(np.sum(self.weight))
        return float(np.sum(self.weight[self.mask]) / tot)


def _interp_matrix_field(m: MetricField, points: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of metric components at arbitrary points."""
    grid = m.grid
    n = grid.dim
    coords = []
    for k in range(n):
        coords.append((points[..., k] - grid.lo[k]) / grid.spacing[k])
    coords = np.stack(coords, axis=0)
    out = np.empty(points.shape[:-1] + (n, n))
    for i in range(n):
        for j in range(n):
            out[..., i, j] = ndimage.map_coordinates(
                m.g.values[..., i, j], coords.reshape(n, -1), order=1, mode="nearest"
            ).reshape(points.shape[:-1])
    return out


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def lipschitz_profile(mf: MapField, pairs: int = 8, rng=None, distance_fn=None):
    """(ess sup |d_x f|, max sampled distance ratio).

    The operator norm is the largest metric singular value over unmasked
    samples.  The ratio estimate draws sample pairs and compares target and
    source path distances through f.
    """
    ok = mf.unmasked()
    ess_sup = float(np.max(mf.svals[ok][..., 0]))
    rng = np.random.default_rng(0 if rng is None else rng)
    ratios = []
    if pairs > 0:
        flat_ok = np.argwhere(ok)
        n_nodes = len(flat_ok)
        for _ in range(pairs):
            ia, ib = rng.integers(0, n_nodes, size=2)
            if ia == ib:
                continue
            xa = tuple(flat_ok[ia])
            xb = tuple(flat_ok[ib])
            pa = np.array([mf.grid.axis_coords(k)[xa[k]] for k in range(mf.grid.dim)])
            pb = np.array([mf.grid.axis_coords(k)[xb[k]] for k in range(mf.grid.dim)])
            d_src, _ = path_distance(mf.source_metric, pa, pb)
            if distance_fn is not None:
                d_tgt = distance_fn(mf.values.values[xa], mf.values.values[xb])
            elif mf.target == "sphere":
                d_tgt = sphere_distance(mf.values.values[xa], mf.values.values[xb])
            else:
                if mf.target_metric is None:
                    d_tgt = float(np.linalg.norm(mf.values.values[xa] - mf.values.values[xb]))
                else:
                    d_tgt, _ = path_distance(
                        mf.target_metric, mf.values.values[xa], mf.values.values[xb]
                    )
            if d_src > 0:
                ratios.append(d_tgt / d_src)
    return ess_sup, (max(ratios) if ratios else float("nan"))


def sphere_distance(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.arccos(np.clip(np.dot(p, q), -1.0, 1.0)))


@dataclass
class QuasiregularityReport:
    K_min: float
    negative_fraction: float
    zero_fraction: float
    quasiregular: bool


def quasiregularity(mf: MapField, tol_measure: float = 1e-2, det_floor: float = 1e-12):
    """Smallest admissible K with |df|^n <= K det(df), plus orientation report.

    Evaluated in metric-orthonormal frames.  Samples with det <= 0 are
    reported by measure fraction rather than thrown; the verdict is
    "not quasiregular" when that fraction exceeds ``tol_measure``.
    """
    ok = mf.unmasked()
    w = mf.weight
    tot = float(np.sum(w[ok]))
    neg = mf.sign < 0
    dets = np.prod(mf.svals, axis=-1) * mf.sign
    degenerate = np.abs(dets) <= det_floor
    neg_frac = float(np.sum(w[ok & neg]) / tot)
    zero_frac = float(np.sum(w[ok & degenerate]) / tot)
    pos = ok & ~neg & ~degenerate
    if pos.any():
        K = mf.svals[pos][:, 0] ** mf.grid.dim / dets[pos]
        K_min = float(np.max(K))
    else:
        K_min = float("inf")
    return QuasiregularityReport(
        K_min=K_min,
        negative_fraction=neg_frac,
        zero_fraction=zero_frac,
        quasiregular=(neg_frac + zero_frac) <= tol_measure,
    )


@dataclass
class IsometryReport:
    isometric_fraction: float
    positive_fraction: float
    negative_fraction: float
    flipped: bool
    verdict: bool


def isometry_ae_check(mf: MapField, tol: float = 1e-2, tol_measure: float = 1e-2):
    """Measure fraction of samples whose singular values all lie in [1-tol, 1+tol],
    with the orientation histogram and the overall a.e.-isometry verdict.

    A global orientation flip is attempted once before declaring orientation
    failure (rigidity arguments may reverse the orientation of the source).
    """
    ok = mf.unmasked()
    w = mf.weight
    tot = float(np.sum(w[ok]))
    iso = ok & np.all(np.abs(mf.svals - 1.0) <= tol, axis=-1)
    iso_frac = float(np.sum(w[iso]) / tot)
    pos_frac = float(np.sum(w[ok & (mf.sign > 0)]) / tot)
    neg_frac = float(np.sum(w[ok & (mf.sign < 0)]) / tot)
    flipped = False
    eff_neg = neg_frac
    if neg_frac > 1.0 - tol_measure:
        flipped = True
        eff_neg = pos_frac
    verdict = iso_frac >= 1.0 - tol_measure and eff_neg <= tol_measure
    return IsometryReport(iso_frac, pos_frac, neg_frac, flipped, verdict)


def area_nonincreasing_check(mf: MapField, tol: float = 1e-9) -> float:
    """Fraction of samples with mu_1 mu_2 <= 1 + tol (norm of Lambda^2 df)."""
    if mf.grid.dim < 2:
        raise MapError("area check needs dimension >= 2")
    ok = mf.unmasked()
    w = mf.weight
    prod2 = mf.svals[..., 0] * mf.svals[..., 1]
    good = ok & (prod2 <= 1.0 + tol)
    return float(np.sum(w[good]) / np.sum(w[ok]))


# ---------------------------------------------------------------------------
# path distances on the grid graph
# ---------------------------------------------------------------------------

def stencil_offsets(directions: int = _DEFAULT_DIRECTIONS) -> list:
    """Integer offsets realizing the requested number of undirected directions.

    16 directions (the default) is the coprime set with max-norm <= 3; its
    worst-case anisotropy on a flat metric is sec(9.22 deg/2)-ish ~ 1.3%.
    """
    reach = {8: 2, 16: 3, 24: 4, 40: 5}.get(directions)
    if reach is None:
        raise MapError(f"unsupported direction count {directions} (use 8/16/24/32)")
    offs = []
    for a in range(-reach, reach + 1):
        for b in range(-reach, reach + 1):
            if (a, b) == (0, 0) or max(abs(a), abs(b)) > reach:
                continue
            if np.gcd(abs(a), abs(b)) != 1:
                continue
            offs.append((a, b))
    return offs


def _edge_lengths(m: MetricField, offset, mask=None):
    """Metric lengths of straight segments x -> x + offset (midpoint rule)."""
    grid = m.grid
    n0, n1 = grid.res
    h = grid.spacing
    a, b = offset
    i0 = np.arange(max(0, -a), min(n0, n0 - a))
    j0 = np.arange(max(0, -b), min(n1, n1 - b))
    I, J = np.meshgrid(i0, j0, indexing="ij")
    v = np.array([a * h[0], b * h[1]])
    mid0 = I + 0.5 * a
    mid1 = J + 0.5 * b
    if m.g_fn is not None:
        pts = np.stack(
            [grid.lo[0] + mid0 * h[0], grid.lo[1] + mid1 * h[1]], axis=-1
        )
        gm = np.asarray(m.g_fn(pts))
    else:
        coords = np.stack([mid0.ravel(), mid1.ravel()], axis=0)
        gm = np.empty(I.shape + (2, 2))
        for p in range(2):
            for q in range(2):
                gm[..., p, q] = ndimage.map_coordinates(
                    m.g.values[..., p, q], coords, order=1, mode="nearest"
                ).reshape(I.shape)
    lengths = np.sqrt(np.einsum("i,...ij,j->...", v, gm, v))
    src = I * n1 + J
    dst = (I + a) * n1 + (J + b)
    if mask is not None:
        keep = mask.ravel()[src.ravel()] & mask.ravel()[dst.ravel()]
        return src.ravel()[keep], dst.ravel()[keep], lengths.ravel()[keep]
    return src.ravel(), dst.ravel(), lengths.ravel()


def metric_graph(m: MetricField, directions: int = _DEFAULT_DIRECTIONS, mask=None):
    """Sparse undirected graph of metric edge lengths on the grid."""
    if m.grid.dim != 2:
        raise MapError("path_distance is implemented for 2d charts")
    rows, cols, vals = [], [], []
    for off in stencil_offsets(directions):
        if off[0] < 0 or (off[0] == 0 and off[1] < 0):
            continue  # one representative per undirected direction
        if m.grid.periodic[0] or m.grid.periodic[1]:
            raise MapError("path_distance expects a bounded chart")
        s, d, w = _edge_lengths(m, off, mask=mask)
        rows.append(s)
        cols.append(d)
        vals.append(w)
    n = m.grid.num_samples
    graph = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    return graph


def _nearest_node(grid: ChartGrid, x) -> int:
    idx = []
    for k in range(grid.dim):
        i = int(round((x[k] - grid.lo[k]) / grid.spacing[k]))
        if not (0 <= i < grid.res[k]):
            raise MapError(f"point {x} outside the chart")
        idx.append(i)
    return int(np.ravel_multi_index(idx, grid.res))


def path_distance(
    m: MetricField,
    x,
    y,
    directions: int = _DEFAULT_DIRECTIONS,
    mask=None,
    graph=None,
):
    """Shortest grid-graph path length between the nodes nearest to x and y.

    Edge lengths are midpoint-rule metric lengths of straight segments; the
    result is a graph metric (symmetric, exact triangle inequality).
    Returns (length, polyline) with the polyline as an array of points.
    """
    if graph is None:
        graph = metric_graph(m, directions, mask=mask)
    src = _nearest_node(m.grid, x)
    dst = _nearest_node(m.grid, y)
    dist, pred = csgraph.dijkstra(
        graph, directed=False, indices=src, return_predecessors=True
    )
    length = dist[dst]
    if not np.isfinite(length):
        raise MapError("no path between the requested points (disconnected mask)")
    chain = [dst]
    while chain[-1] != src:
        chain.append(pred[chain[-1]])
    chain.reverse()
    idx = np.array(np.unravel_index(chain, m.grid.res)).T
    poly = np.stack(
        [m.grid.lo[k] + idx[:, k] * m.grid.spacing[k] for k in range(m.grid.dim)], axis=-1
    )
    return float(length), poly


def pairwise_distances(m: MetricField, points, directions: int = _DEFAULT_DIRECTIONS):
    """All-pairs graph distances between the given points (one Dijkstra per source)."""
    graph = metric_graph(m, directions)
    nodes = [_nearest_node(m.grid, p) for p in points]
    dist = csgraph.dijkstra(graph, directed=False, indices=nodes)
    return dist[:, nodes]


# ---------------------------------------------------------------------------
# verdicts
# ---------------------------------------------------------------------------

@dataclass
class MetricIsometryVerdict:
    stage1: IsometryReport
    max_discrepancy: float
    tolerance: float
    passed: bool
    reason: str


def distance_tolerance_budget(
    grid: ChartGrid, directions: int = _DEFAULT_DIRECTIONS
) -> float:
    """Empirical relative error budget of the distance engine on this chart.

    Measures the graph-vs-straight-line ratio over a fan of directions on the
    flat metric (the anisotropy term) and adds an h-refinement term.
    """
    from .metric import flat_metric

    sub = ChartGrid(grid.lo, grid.hi, (65,) * grid.dim, grid.periodic)
    m = flat_metric(sub)
    graph = metric_graph(m, directions)
    c = np.array([0.5 * (lo + hi) for lo, hi in zip(sub.lo, sub.hi)])
    rad = 0.45 * min(hi - lo for lo, hi in zip(sub.lo, sub.hi))
    worst = 0.0
    for t in np.linspace(0, np.pi / 4, 12):
        p = c + rad * np.array([np.cos(t), np.sin(t)])
        d, _ = path_distance(m, c, p, graph=graph)
        worst = max(worst, abs(d / np.linalg.norm(p - c) - 1.0))
    h_term = 2.0 * max(grid.spacing) / rad
    return worst + h_term


def metric_isometry_verdict(
    mf: MapField,
    samples: int = 12,
    rng=None,
    tol: float = 1e-2,
    tol_measure: float = 1e-2,
    source_distance=None,
    target_distance=None,
    tolerance: float | None = None,
    directions: int = _DEFAULT_DIRECTIONS,
) -> MetricIsometryVerdict:
    """Two-stage metric-isometry verdict.

    Stage 1 requires the a.e. orientation-preserving isometry property (the
    rigidity hypothesis); stage 2 compares source and target path distances
    through f on random pairs.  Stage 2 alone never yields PASS.
    """
    stage1 = isometry_ae_check(mf, tol=tol, tol_measure=tol_measure)
    if not stage1.verdict:
        return MetricIsometryVerdict(stage1, float("nan"), float("nan"), False,
                                     "orientation/isometry a.e. hypothesis fails")
    rng = np.random.default_rng(1234 if rng is None else rng)
    tol_budget = (
        tolerance if tolerance is not None else distance_tolerance_budget(mf.grid, directions)
    )
    ok_idx = np.argwhere(mf.unmasked())
    graph = None
    if source_distance is None:
        graph = metric_graph(mf.source_metric, directions)
    worst = 0.0
    done = 0
    while done < samples:
        ia, ib = rng.integers(0, len(ok_idx), size=2)
        if ia == ib:
            continue
        xa, xb = tuple(ok_idx[ia]), tuple(ok_idx[ib])
        pa = np.array([mf.grid.axis_coords(k)[xa[k]] for k in range(mf.grid.dim)])
        pb = np.array([mf.grid.axis_coords(k)[xb[k]] for k in range(mf.grid.dim)])
        if source_distance is not None:
            d_src = source_distance(pa, pb)
        else:
            d_src, _ = path_distance(mf.source_metric, pa, pb, graph=graph)
        if d_src <= 0:
            continue
        fa, fb = mf.values.values[xa], mf.values.values[xb]
        if target_distance is not None:
            d_tgt = target_distance(fa, fb)
        elif mf.target == "sphere":
            d_tgt = sphere_distance(fa, fb)
        else:
            d_tgt, _ = path_distance(mf.target_metric, fa, fb, directions=directions)
        worst = max(worst, abs(d_tgt - d_src) / max(d_src, d_tgt))
        done += 1
    passed = worst <= tol_budget
    reason = "" if passed else f"distance discrepancy {worst:.3g} exceeds budget {tol_budget:.3g}"
    return MetricIsometryVerdict(stage1, worst, tol_budget, passed, reason)
