"""Uniform chart grids, sampled fields, and the basic calculus on them.

A chart is a rectangular box in R^n sampled on a uniform tensor grid.
Axes may be periodic (torus charts wrap exactly) or bounded (one-sided
stencils at the edges).  Everything downstream — metric fields, curvature
pairings, Dirac coefficients, map differentials — lives on these grids.

Conventions:
  - Sample layout is row-major in the grid indices, component axes last.
  - Bounded axes include both endpoints, spacing h = (hi - lo)/(res - 1).
  - Periodic axes drop the duplicate endpoint, spacing h = (hi - lo)/res.
  - Derivatives are second order: central in the interior, one-sided at
    bounded edges, exact wrap on periodic axes.
  - Quadrature is the trapezoidal product rule (rectangle rule on periodic
    axes, which is exact for the wrap).

The file format ``LRGF1`` is a one-line ASCII header followed by raw
little-endian float64 data, row-major, component-fastest::

    LRGF1 <dim> <res...> <lo...> <hi...> <periodic-bits> <components>
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal


class GridError(ValueError):
    """Invalid grid construction or mismatched grids in an operation."""


class FieldValueError(ValueError):
    """A field value violates an invariant (non-finite, wrong shape...)."""


@dataclass(eq=False)
class ChartGrid:
    """Uniform tensor-product grid over a box, with optional periodic axes.

    Attributes:
        lo, hi: per-axis interval bounds.
        res: per-axis sample counts (>= 4).
        periodic: per-axis wrap flags.
        boundary_margin: cells near bounded edges where derivative stencils
            are one-sided; used by support checks and interior masks.
    """

    lo: tuple
    hi: tuple
    res: tuple
    periodic: tuple
    boundary_margin: int = 1

    def __post_init__(self):
        self.lo = tuple(float(v) for v in self.lo)
        self.hi = tuple(float(v) for v in self.hi)
        self.res = tuple(int(v) for v in self.res)
        self.periodic = tuple(bool(v) for v in self.periodic)
        if not (len(self.lo) == len(self.hi) == len(self.res) == len(self.periodic)):
            raise GridError("lo/hi/res/periodic must have equal lengths")
        if self.dim < 1:
            raise GridError("grid dimension must be >= 1")
        for k, r in enumerate(self.res):
            if r < 4:
                raise GridError(f"resolution {r} on axis {k} is below the minimum 4")
            if not self.hi[k] > self.lo[k]:
                raise GridError(f"empty extent on axis {k}")
        if self.boundary_margin < 0:
            raise GridError("boundary_margin must be >= 0")

    @property
    def dim(self) -> int:
        return len(self.res)

    @property
    def spacing(self) -> tuple:
        h = []
        for k in range(self.dim):
            n = self.res[k] if self.periodic[k] else self.res[k] - 1
            h.append((self.hi[k] - self.lo[k]) / n)
        return tuple(h)

    def axis_coords(self, k: int) -> np.ndarray:
        h = self.spacing[k]
        return self.lo[k] + h * np.arange(self.res[k])

    def meshgrid(self) -> list:
        """Coordinate arrays of shape ``res`` (indexing 'ij')."""
        return list(np.meshgrid(*[self.axis_coords(k) for k in range(self.dim)], indexing="ij"))

    def points(self) -> np.ndarray:
        """All sample points, shape ``res + (dim,)``."""
        return np.stack(self.meshgrid(), axis=-1)

    @property
    def num_samples(self) -> int:
        return int(np.prod(self.res))

    def trapezoid_weights(self) -> np.ndarray:
        """Product quadrature weights, shape ``res``."""
        w = np.ones(self.res)
        for k in range(self.dim):
            h = self.spacing[k]
            wk = np.full(self.res[k], h)
            if not self.periodic[k]:
                wk[0] *= 0.5
                wk[-1] *= 0.5
            shape = [1] * self.dim
            shape[k] = self.res[k]
            w = w * wk.reshape(shape)
        return w

    def same_geometry(self, other: "ChartGrid") -> bool:
        return (
            self.res == other.res
            and self.periodic == other.periodic
            and all(math.isclose(a, b, rel_tol=0, abs_tol=1e-12) for a, b in zip(self.lo, other.lo))
            and all(math.isclose(a, b, rel_tol=0, abs_tol=1e-12) for a, b in zip(self.hi, other.hi))
        )


@dataclass(eq=False)
class Field:
    """Sampled values over a grid: scalars, vectors, matrices, complex blocks.

    ``values`` has shape ``grid.res + comp_shape``; ``comp_shape == ()`` for
    scalar fields.  All entries must be finite on construction.
    """

    grid: ChartGrid
    values: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape[: self.grid.dim] != self.grid.res:
            raise FieldValueError(
                f"field shape {self.values.shape} does not start with grid res {self.grid.res}"
            )
        if self.check:
            _require_finite(self.values, "Field")

    @property
    def comp_shape(self) -> tuple:
        return self.values.shape[self.grid.dim:]

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), check=False)


def _require_finite(a: np.ndarray, what: str):
    bad = ~np.isfinite(a)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise FieldValueError(f"{what}: non-finite value at index {tuple(int(i) for i in idx)}")


def scalar_field(grid: ChartGrid, fn) -> Field:
    """Sample a callable f(x) -> scalar (x of shape (..., dim)) on the grid."""
    return Field(grid, np.asarray(fn(grid.points())))


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------

def _axis_derivative(values: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2.0 * h)
    out = np.empty_like(values, dtype=np.result_type(values, float))
    sl = [slice(None)] * values.ndim

    def take(i):
        s = list(sl)
        s[axis] = i
        return values[tuple(s)]

    interior = list(sl)
    interior[axis] = slice(1, -1)
    out[tuple(interior)] = (take(slice(2, None)) - take(slice(None, -2))) / (2.0 * h)
    first = list(sl)
    first[axis] = 0
    out[tuple(first)] = (-3.0 * take(0) + 4.0 * take(1) - take(2)) / (2.0 * h)
    last = list(sl)
    last[axis] = -1
    out[tuple(last)] = (3.0 * take(-1) - 4.0 * take(-2) + take(-3)) / (2.0 * h)
    return out


def partial_derivative(f: Field, axis: int) -> Field:
    """Second-order d/dx^axis of any (possibly tensor-valued) field."""
    _require_finite(f.values, "partial_derivative input")
    h = f.grid.spacing[axis]
    return Field(f.grid, _axis_derivative(f.values, h, axis, f.grid.periodic[axis]), check=False)


def fd_gradient(f: Field) -> Field:
    """Gradient of a scalar field; component axis last, shape res + (dim,).

    Central second-order differences in the interior, one-sided second-order
    at bounded edges, exact wrap on periodic axes.
    """
    if f.comp_shape != ():
        raise FieldValueError("fd_gradient expects a scalar field")
    _require_finite(f.values, "fd_gradient input")
    grads = [
        _axis_derivative(f.values, f.grid.spacing[k], k, f.grid.periodic[k])
        for k in range(f.grid.dim)
    ]
    return Field(f.grid, np.stack(grads, axis=-1), check=False)


def second_difference(f: Field, axis: int) -> Field:
    """Standard 3-point second difference along one axis (wraps if periodic)."""
    h = f.grid.spacing[axis]
    v = f.values
    if f.grid.periodic[axis]:
        d2 = (np.roll(v, -1, axis=axis) - 2.0 * v + np.roll(v, 1, axis=axis)) / h**2
    else:
        d2 = np.zeros_like(v, dtype=np.result_type(v, float))
        sl = [slice(None)] * v.ndim
        inner = list(sl)
        inner[axis] = slice(1, -1)
        lo = list(sl)
        lo[axis] = slice(None, -2)
        hi = list(sl)
        hi[axis] = slice(2, None)
        mid = list(sl)
        mid[axis] = slice(1, -1)
        d2[tuple(inner)] = (v[tuple(hi)] - 2.0 * v[tuple(mid)] + v[tuple(lo)]) / h**2
    return Field(f.grid, d2, check=False)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def quadrature(f: Field, density: Field | None = None) -> float | complex:
    """Integrate f * density over the chart with the product trapezoid rule.

    ``density`` must be a nonnegative scalar field on the same grid (defaults
    to 1).  Linear in f and monotone for density >= 0.
    """
    if density is not None:
        if not f.grid.same_geometry(density.grid):
            raise GridError("quadrature: field and density live on different grids")
        if density.comp_shape != ():
            raise FieldValueError("density must be scalar")
        if np.min(density.values) < 0:
            raise FieldValueError("density must be nonnegative")
        integrand = f.values * density.values
    else:
        integrand = f.values
    if f.comp_shape != ():
        raise FieldValueError("quadrature expects a scalar field")
    w = f.grid.trapezoid_weights()
    total = np.sum(integrand * w)
    return complex(total) if np.iscomplexobj(integrand) else float(total)


def quadrature_values(grid: ChartGrid, values: np.ndarray) -> float | complex:
    """Trapezoid-rule integral of raw scalar values on ``grid``."""
    total = np.sum(values * grid.trapezoid_weights())
    return complex(total) if np.iscomplexobj(values) else float(total)


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------

def bump_profile(t: np.ndarray) -> np.ndarray:
    """The standard compactly supported bump exp(-1/(1-t^2)) on |t| < 1."""
    out = np.zeros_like(t, dtype=float)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


def mollifier_kernel(grid: ChartGrid, eps: float) -> np.ndarray:
    """Discrete kernel for scale-eps mollification, normalized to unit sum.

    Samples eps^{-n} rho(x/eps) on the grid stencil covering |x| < eps and
    renormalizes so the *discrete* mass is exactly 1; convolution with it
    then preserves constants and discrete mass exactly.
    """
    h = grid.spacing
    radii = [int(np.ceil(eps / h[k])) for k in range(grid.dim)]
    axes = [np.arange(-r, r + 1) * h[k] for k, r in zip(range(grid.dim), radii)]
    mesh = np.meshgrid(*axes, indexing="ij")
    rr = sum(m**2 for m in mesh) / eps**2
    ker = bump_profile(np.sqrt(rr))
    s = ker.sum()
    if s <= 0:
        raise GridError("mollifier kernel under-resolved")
    return ker / s


def mollify(f: Field, eps: float) -> Field:
    """Convolve with the unit-mass bump of scale eps.

    Requires eps >= 2h on every axis (resolved kernel) and, on bounded axes,
    that the support of f keeps a margin >= eps from the chart boundary:
    the support of the result then grows by at most eps and never touches
    the boundary region.
    """
    if f.comp_shape != ():
        raise FieldValueError("mollify expects a scalar field")
    if eps <= 0:
        raise GridError("mollify: eps must be positive")
    for k, h in enumerate(f.grid.spacing):
        if eps < 2.0 * h:
            raise GridError(f"mollify: eps={eps} under-resolved on axis {k} (h={h})")
    _check_support_margin(f, eps)
    ker = mollifier_kernel(f.grid, eps)
    if all(f.grid.periodic):
        out = _circular_convolve(f.values, ker)
    elif not any(f.grid.periodic):
        out = signal.fftconvolve(f.values, ker, mode="same")
    else:
        raise GridError("mollify: mixed periodic/bounded axes are not supported")
    return Field(f.grid, out, check=False)


def _check_support_margin(f: Field, eps: float):
    supp = np.abs(f.values) > 0
    if not supp.any():
        return
    idx = np.argwhere(supp)
    for k in range(f.grid.dim):
        if f.grid.periodic[k]:
            continue
        h = f.grid.spacing[k]
        lo_gap = idx[:, k].min() * h
        hi_gap = (f.grid.res[k] - 1 - idx[:, k].max()) * h
        if lo_gap < eps or hi_gap < eps:
            raise GridError(
                f"mollify: support within {min(lo_gap, hi_gap):.3g} of the boundary on axis {k}, "
                f"needs margin >= eps={eps:.3g}"
            )


def _circular_convolve(values: np.ndarray, ker: np.ndarray) -> np.ndarray:
    n = values.shape
    kpad = np.zeros(n)
    sl = tuple(slice(0, s) for s in ker.shape)
    kpad[sl] = ker
    # center the kernel at the origin index
    for ax, s in enumerate(ker.shape):
        kpad = np.roll(kpad, -(s // 2), axis=ax)
    return np.real(np.fft.ifftn(np.fft.fftn(values) * np.fft.fftn(kpad)))


# ---------------------------------------------------------------------------
# LRGF1 serialization
# ---------------------------------------------------------------------------

def write_lrgf(path, f: Field, extra: str = ""):
    """Write a field in the LRGF1 format (header line + raw float64)."""
    grid = f.grid
    comps = int(np.prod(f.comp_shape)) if f.comp_shape else 1
    bits = "".join("1" if p else "0" for p in grid.periodic)
    tokens = (
        ["LRGF1", str(grid.dim)]
        + [str(r) for r in grid.res]
        + [repr(v) for v in grid.lo]
        + [repr(v) for v in grid.hi]
        + [bits, str(comps)]
    )
    if extra:
        tokens.append(extra)
    header = " ".join(tokens) + "\n"
    data = np.ascontiguousarray(f.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


def read_lrgf(path):
    """Read an LRGF1 file; returns (Field, extra_token_or_empty).

    Component blocks come back flattened: comp_shape == (components,) unless
    components == 1 (scalar field).
    """
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip().split()
        raw = fh.read()
    if not header or header[0] != "LRGF1":
        raise GridError(f"{path}: not an LRGF1 file")
    dim = int(header[1])
    pos = 2
    res = tuple(int(v) for v in header[pos : pos + dim]); pos += dim
    lo = tuple(float(v) for v in header[pos : pos + dim]); pos += dim
    hi = tuple(float(v) for v in header[pos : pos + dim]); pos += dim
    bits = header[pos]; pos += 1
    comps = int(header[pos]); pos += 1
    extra = header[pos] if len(header) > pos else ""
    grid = ChartGrid(lo, hi, res, tuple(b == "1" for b in bits))
    count = grid.num_samples * comps
    values = np.frombuffer(raw, dtype="<f8", count=count).copy()
    shape = res + ((comps,) if comps > 1 else ())
    return Field(grid, values.reshape(shape)), extra
