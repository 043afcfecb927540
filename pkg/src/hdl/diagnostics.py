"""Quantities tracked along a harmonic map: Hopf fields, Bochner residuals,
Jacobian, distortion, quasi-isometry constants, Gromov products and traces."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .circle import TWO_PI, CircleMap, circle_distance
from .grid import DiskGrid, DistanceGraph, hyperbolic_distance, hyperbolic_factor
from .harmonic import DiskMap, TargetGeometry, complex_derivatives
from .metric import MetricField

log = logging.getLogger(__name__)

EPS_H = 1e-12
BOCHNER_MASK = 1e-6


@dataclass(eq=False)
class HopfFields:
    H: np.ndarray
    L: np.ndarray
    J: np.ndarray
    mu: np.ndarray  # NaN outside ``defined``
    defined: np.ndarray
    w: np.ndarray
    ell: np.ndarray
    grid: DiskGrid


def hopf_fields(h: DiskMap) -> HopfFields:
    """``H = sigma^2(h)/rho^2 |h_z|^2``, ``L`` likewise with ``h_zbar``, and derived fields."""
    grid = h.grid
    hz, hzb = complex_derivatives(h)
    scale = TargetGeometry(h.target).sigma2(h.values) / hyperbolic_factor(grid)
    H = scale * np.abs(hz) ** 2
    L = scale * np.abs(hzb) ** 2
    J = H - L
    # thresholds are relative to the energy density so that roundoff in a
    # vanishing H (antiholomorphic maps) does not count as defined
    defined = H > EPS_H * np.max(H + L)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(defined, hzb / hz, np.nan)
        w = np.where(defined, 0.5 * np.log(H), np.nan)
        m2 = np.abs(mu) ** 2
        ell = np.where(defined & (m2 > 0), -np.log(m2), np.nan)
    return HopfFields(H, L, J, mu, defined, w, ell, grid)


def _stencil_closed(grid, mask):
    """Nodes of ``mask`` whose whole Laplacian stencil lies inside ``mask``."""
    A = abs(grid.laplacian_h).tocsr()
    bad = A @ (~mask).ravel().astype(float)
    return mask & (bad.reshape(grid.shape) == 0) & grid.interior


def bochner_residuals(h: DiskMap, fields: HopfFields | None = None):
    """``r_H = 1/2 lap log H - ((-K o h) J - 1)`` and ``r_L = 1/2 lap log L - ((K o h) J - 1)``.

    Each is NaN outside its mask (``H > 1e-6 max(H + L)`` resp. ``L``, with
    the full stencil inside the mask).  Raises ValueError when both masks are empty.
    """
    f = hopf_fields(h) if fields is None else fields
    grid = h.grid
    K = TargetGeometry(h.target).curvature(h.values)
    top = np.max(f.H + f.L)
    out = []
    for X, sign in ((f.H, -1.0), (f.L, 1.0)):
        mask = _stencil_closed(grid, X > BOCHNER_MASK * top)
        if not mask.any():
            out.append(np.full(grid.shape, np.nan))
            continue
        with np.errstate(divide="ignore"):
            lg = np.log(np.where(X > 0, X, 1.0))
        r = 0.5 * grid.laplacian(lg) - (sign * K * f.J - 1.0)
        out.append(np.where(mask, r, np.nan))
    if np.all(np.isnan(out[0])) and np.all(np.isnan(out[1])):
        raise ValueError("Bochner residual mask is empty")
    return out[0], out[1]


def masked_sup(field: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Sup of ``|field|`` over ``mask`` ignoring NaN; NaN if nothing is left."""
    v = np.abs(field if mask is None else field[mask])
    v = v[np.isfinite(v)]
    return float(np.max(v)) if v.size else float("nan")


@dataclass(frozen=True)
class WBound:
    ok: bool
    margin: float
    skipped: bool = False
    message: str = ""


def w_bound_check(fields: HopfFields, b: float, tol: float = 1e-2, region=None) -> WBound:
    """``min e^{2w} - b^-2`` over the defined mask, restricted to ``region``.

    ``region`` defaults to the interior annulus ``r <= 0.8 r_max``: next to the
    rim the truncated problem pins ``h`` to the rim data and ``u`` to its rim
    value, which says nothing about the complete map.
    """
    region = fields.grid.annulus() if region is None else region
    mask = fields.defined & fields.grid.interior & region
    if not mask.any():
        return WBound(False, float("nan"), True, "empty mask")
    if np.any(fields.J[mask] <= 0):
        return WBound(False, float("nan"), True, "Jacobian is not positive on the mask")
    margin = float(np.min(np.exp(2 * fields.w[mask])) - b**-2)
    return WBound(margin >= -tol, margin)


def jacobian_inf(fields: HopfFields) -> float:
    return float(np.min(fields.J[fields.grid.interior]))


@dataclass(frozen=True)
class QIFit:
    c: float  # single constant: c^-1 d - c <= d' <= c d + c
    c_mult: float  # sup of max(d'/d, d/d') over the sampled pairs
    c_add: float  # additive slack left over at the large-scale ratio
    n_pairs: int


def _pullback_graph(h: DiskMap) -> DistanceGraph:
    geom = TargetGeometry(h.target)
    return DistanceGraph(h.grid, points=h.values, u_at_points=geom.u(h.values))


def _shared_constant(d, dp):
    def ok(c):
        return np.all(d / c - c <= dp) and np.all(dp <= c * d + c)

    lo, hi = 1.0, 2.0
    if ok(lo):
        return 1.0
    while not ok(hi):
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


def quasi_isometry_fit(h: DiskMap, n_pairs: int = 2000, seed: int = 0, n_sources: int = 32) -> QIFit:
    """Constants of the quasi-isometry inequality over sampled node pairs.

    Source distances come from the hyperbolic graph metric on the nodes, target
    distances from the same graph with edges measured between image points in
    the target metric.  Every value is a lower bound for the true constant.
    """
    grid = h.grid
    rng = np.random.default_rng(seed)
    nodes = np.flatnonzero(grid.interior.ravel())
    n_sources = min(n_sources, n_pairs)
    src = rng.choice(nodes, size=n_sources, replace=False)
    per = -(-n_pairs // n_sources)
    dst = rng.choice(nodes, size=(n_sources, per))
    d_all = DistanceGraph(grid).from_sources(src)
    dp_all = _pullback_graph(h).from_sources(src)
    rows = np.repeat(np.arange(n_sources), per)
    cols = dst.ravel()
    d, dp = d_all[rows, cols][:n_pairs], dp_all[rows, cols][:n_pairs]
    keep = d > 0
    d, dp = d[keep], dp[keep]
    c = _shared_constant(d, dp)
    with np.errstate(divide="ignore"):
        ratio = np.maximum(dp / d, d / np.maximum(dp, 1e-300))
    c_mult = float(np.max(ratio))
    big = d >= 1.0
    c_large = float(np.max(ratio[big])) if big.any() else c_mult
    c_add = float(max(0.0, np.max(d / c_large - dp), np.max(dp - c_large * d)))
    return QIFit(float(c), c_mult, c_add, int(d.size))


def lipschitz(h: DiskMap) -> float:
    """Largest ratio of image edge length to source edge length over neighbour pairs."""
    a, b, w_src = DistanceGraph(h.grid).edges
    _, _, w_img = _pullback_graph(h).edges
    return float(np.max(w_img / w_src))


def gromov_product(metric, x, y, base=0j) -> float:
    """``(x|y)_base = (d(x, base) + d(y, base) - d(x, y)) / 2`` in the graph metric."""
    if isinstance(metric, MetricField):
        graph = DistanceGraph(metric.grid, metric.u)
    elif isinstance(metric, DistanceGraph):
        graph = metric
    else:
        raise TypeError("metric must be a MetricField or DistanceGraph")
    dist = graph.from_sources([base, x])
    ix, iy = graph.node(x), graph.node(y)
    val = 0.5 * (dist[0, ix] + dist[0, iy] - dist[1, iy])
    return float(max(val, 0.0))


def boundary_trace(h: DiskMap, ring_fraction: float) -> CircleMap:
    """Arguments of ``h`` on the circle of radius ``ring_fraction * r_max``, re-lifted.

    At ``ring_fraction == 1`` this is the rim data itself.  A non-monotone
    trace is logged and returned unchecked.
    """
    if not (0.5 < ring_fraction <= 1.0):
        raise ValueError("ring_fraction must lie in (0.5, 1]")
    if ring_fraction == 1.0:
        return h.boundary
    g = h.grid
    rad = ring_fraction * g.r_max
    i1 = int(np.clip(np.searchsorted(g.r, rad), 1, g.n_r - 1))
    i0 = i1 - 1
    f = (rad - g.r[i0]) / (g.r[i1] - g.r[i0])
    ring = (1 - f) * h.values[i0] + f * h.values[i1]
    arg = np.unwrap(np.angle(ring))
    arg += TWO_PI * np.round((g.theta[0] - arg[0]) / TWO_PI)
    trace = CircleMap(arg, check=False)
    if not trace.is_monotone:
        log.warning("boundary trace at ring fraction %g is not monotone", ring_fraction)
    return trace


def trace_error(h: DiskMap, ring_fraction: float, reference: CircleMap | None = None) -> float:
    ref = h.boundary if reference is None else reference
    tr = boundary_trace(h, ring_fraction)
    return circle_distance(tr, ref, theta=h.grid.theta)


def map_distance(h1: DiskMap, h2: DiskMap) -> float:
    """``sup_z d_hyp(h1(z), h2(z))`` over nodes."""
    if not h1.grid.compatible(h2.grid):
        raise ValueError("maps live on different grids")
    return float(np.max(hyperbolic_distance(h1.values, h2.values)))


@dataclass(frozen=True)
class MapReport:
    jacobian_inf: float
    qc_sup_mu: float
    qc_distortion: float
    dilatation: float
    qi_c: float
    qi_c_mult: float
    qi_c_add: float
    lipschitz: float
    w_margin: float
    w_lower_bound_ok: bool
    bochner_h_sup: float
    bochner_l_sup: float
    trace_err: float

    def as_dict(self) -> dict:
        return asdict(self)


def map_report(h: DiskMap, bochner: bool = True, qi_pairs: int = 2000, trace_ring: float = 0.9,
               reference: CircleMap | None = None, seed: int = 0, w_tol: float = 1e-2) -> MapReport:
    f = hopf_fields(h)
    grid = h.grid
    mask = f.defined & grid.interior
    sup_mu = masked_sup(f.mu, mask)
    qcd = (1 + sup_mu) / (1 - sup_mu) if sup_mu < 1 else float("inf")
    pos = mask & (f.J > 0)
    dil = float(np.max((f.H + f.L)[pos] / f.J[pos])) if pos.any() else float("inf")
    wb = w_bound_check(f, h.target.bounds.b, w_tol)
    bh = bl = float("nan")
    if bochner:
        try:
            rH, rL = bochner_residuals(h, f)
            ann = grid.annulus(0.2)
            bh, bl = masked_sup(rH, ann), masked_sup(rL, ann)
        except ValueError:
            pass
    qi = quasi_isometry_fit(h, qi_pairs, seed) if qi_pairs > 0 else QIFit(*(float("nan"),) * 3, 0)
    return MapReport(
        jacobian_inf=jacobian_inf(f), qc_sup_mu=sup_mu, qc_distortion=qcd, dilatation=dil,
        qi_c=qi.c, qi_c_mult=qi.c_mult, qi_c_add=qi.c_add, lipschitz=lipschitz(h),
        w_margin=wb.margin, w_lower_bound_ok=wb.ok, bochner_h_sup=bh, bochner_l_sup=bl,
        trace_err=trace_error(h, trace_ring, reference),
    )
