"""Continuity methods along a one-parameter family of problems.

Two families are supported: the metric deformation ``K_t = -(1 - t) + t K``
with fixed boundary data, and the boundary deformation ``Phi_t = (1 - t) theta
+ t Phi`` into the hyperbolic disk.  Every step records the Jacobian infimum
and the other tracked quantities; the verdict is a statement about the
discrete solutions only.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .circle import BarycenterError, CircleMap, linear_deformation
from .diagnostics import hopf_fields, jacobian_inf, map_distance, masked_sup, w_bound_check
from .grid import DiskGrid
from .harmonic import DiskMap, HarmonicSolveError, solve_harmonic
from .io import format_report, parse_report
from .metric import MetricField, MetricSolveError, deformed_curvature, solve_prescribed_curvature

log = logging.getLogger(__name__)

CERTIFIED = "CERTIFIED_POSITIVE"
DEGENERATED = "DEGENERATED"
FAILED = "SOLVER_FAILED"


@dataclass
class StepRecord:
    t: float
    metric_residual: float
    map_residual: float
    map_iterations: int
    jacobian_inf: float
    sup_mu: float
    w_margin: float
    dist_h0: float
    dJ: float  # sup |J_t - J_prev| over interior nodes
    du: float  # sup |u_t - u_prev|
    du_grad: float  # sup |grad (u_t - u_prev)|, Euclidean, by finite differences
    budget_exceeded: bool = False


@dataclass(eq=False)
class ContinuationReport:
    kind: str
    grid: DiskGrid
    records: list = field(default_factory=list)
    verdict: str = CERTIFIED
    verdict_t: float | None = None
    message: str = ""
    patch: dict | None = None
    labels: dict = field(default_factory=dict)
    maps: list = field(default_factory=list, repr=False)
    metrics: list = field(default_factory=list, repr=False)

    @property
    def t_values(self) -> list[float]:
        return [r.t for r in self.records]

    @property
    def verdict_label(self) -> str:
        return self.verdict if self.verdict_t is None else f"{self.verdict}({self.verdict_t!r})"

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED

    @property
    def j_star(self) -> float:
        """Smallest Jacobian infimum over the recorded steps."""
        return min((r.jacobian_inf for r in self.records), default=float("nan"))

    @property
    def c_star(self) -> float:
        """Largest uniform distance ``d(h_t, h_0)`` over the recorded steps."""
        return max((r.dist_h0 for r in self.records), default=float("nan"))

    def to_text(self) -> str:
        g = self.grid
        top = {
            "kind": self.kind,
            "grid": f"{g.n_r}x{g.n_theta}@{g.r_max!r}",
            **self.labels,
            "steps": len(self.records),
            "verdict": self.verdict_label,
            "message": self.message,
            "j_star": self.j_star,
            "c_star": self.c_star,
        }
        if len(self.records) >= 3:
            m = continuity_moduli(self)
            top.update(lip_u=m.u_slope, lip_u_max=m.u_max_slope, lip_J=m.J_slope, lip_J_max=m.J_max_slope)
        sections = [(f"step {k}", asdict(r)) for k, r in enumerate(self.records)]
        if self.patch is not None:
            sections.append(("degeneration", self.patch))
        return format_report(top, sections)

    @classmethod
    def from_text(cls, text: str) -> "ContinuationReport":
        from .config import parse_grid

        top, sections = parse_report(text)
        rep = cls(top["kind"], parse_grid(top["grid"]))
        label = str(top["verdict"])
        if "(" in label:
            rep.verdict, _, rest = label.partition("(")
            rep.verdict_t = float(rest.rstrip(")"))
        else:
            rep.verdict = label
        rep.message = str(top.get("message", ""))
        for name, body in sections:
            if name.startswith("step"):
                rep.records.append(StepRecord(**body))
            elif name == "degeneration":
                rep.patch = body
        return rep


def _patch(fields, t):
    """5x5 block of J and |mu| around the node where J is smallest."""
    g = fields.grid
    J = np.where(g.interior, fields.J, np.inf)
    i, j = np.unravel_index(int(np.argmin(J)), g.shape)
    rows = np.clip(np.arange(i - 2, i + 3), 0, g.n_r - 1)
    cols = np.arange(j - 2, j + 3) % g.n_theta
    block = np.ix_(rows, cols)
    mu = np.abs(np.where(fields.defined, fields.mu, np.nan))
    return {
        "t": t, "i": int(i), "j": int(j), "r": float(g.r[i]), "theta": float(g.theta[j]),
        "J_min": float(fields.J[i, j]),
        "J": [float(v) for v in fields.J[block].ravel()],
        "abs_mu": [float(v) for v in mu[block].ravel()],
    }


def _grad_sup(grid, f):
    fx = grid.apply(grid.D_x, f)
    fy = grid.apply(grid.D_y, f)
    return float(np.max(np.hypot(fx, fy)[grid.interior]))


def _march(kind, grid, n_steps, make_metric, make_boundary, map_tol, budget, max_halvings,
           labels, callback):
    if n_steps < 2:
        raise ValueError("n_steps must be at least 2")
    report = ContinuationReport(kind, grid, labels=dict(labels or {}))
    targets = list(np.linspace(0.0, 1.0, n_steps))
    prev = None  # (t, metric, map, fields)
    h0 = None

    def attempt(t):
        metric = make_metric(t, None if prev is None else prev[1])
        phi = make_boundary(t)
        init = "douady-earle" if prev is None else prev[2]
        h = solve_harmonic(metric, phi, grid, init=init, tol=map_tol)
        return metric, h, hopf_fields(h)

    # within each interval of the uniform grid the step length is halved on a
    # budget violation (at most max_halvings times) and kept until the next
    # grid point; once the halvings are spent a violating step is accepted and flagged
    full = targets[1] - targets[0]
    step = full
    k = 0
    t_goal = targets[0]
    halvings = 0
    while True:
        t = float(t_goal)
        try:
            metric, h, f = attempt(t)
        except (MetricSolveError, HarmonicSolveError, BarycenterError) as exc:
            report.verdict, report.verdict_t, report.message = FAILED, t, str(exc)
            log.info("step t=%g failed: %s", t, exc)
            break
        inner = grid.interior
        dJ = 0.0 if prev is None else float(np.max(np.abs(f.J - prev[3].J)[inner]))
        if prev is not None and dJ > budget and halvings < max_halvings:
            halvings += 1
            step *= 0.5
            t_goal = prev[0] + step
            log.info("continuity budget exceeded at t=%g (dJ=%.3g); halving", t, dJ)
            continue
        du_field = metric.u - (prev[1].u if prev is not None else metric.u)
        rec = StepRecord(
            t=t,
            metric_residual=float(metric.residual_norm),
            map_residual=float(h.residual_norm),
            map_iterations=int(h.iterations),
            jacobian_inf=jacobian_inf(f),
            sup_mu=masked_sup(f.mu, f.defined & inner),
            w_margin=w_bound_check(f, metric.bounds.b).margin,
            dist_h0=0.0 if h0 is None else map_distance(h, h0),
            dJ=dJ,
            du=float(np.max(np.abs(du_field))),
            du_grad=_grad_sup(grid, du_field),
            budget_exceeded=dJ > budget,
        )
        report.records.append(rec)
        report.maps.append(h)
        report.metrics.append(metric)
        if callback is not None:
            callback(rec)
        log.info("t=%.4f j=%.4g sup_mu=%.4g dJ=%.3g", t, rec.jacobian_inf, rec.sup_mu, dJ)
        if h0 is None:
            h0 = h
        if rec.jacobian_inf <= 0:
            report.verdict, report.verdict_t = DEGENERATED, t
            report.message = "Jacobian is not positive"
            report.patch = _patch(f, t)
            break
        prev = (t, metric, h, f)
        if t >= targets[k]:
            k += 1
            if k == len(targets):
                break
            halvings = 0
            step = full
        t_goal = targets[k] if prev[0] + step >= targets[k] - 1e-12 * full else prev[0] + step
    return report


def run_metric_continuation(K, phi: CircleMap, n_steps: int, grid: DiskGrid, metric_tol: float = 1e-10,
                            map_tol: float = 1e-8, budget: float = 0.5, max_halvings: int = 3,
                            labels=None, callback=None) -> ContinuationReport:
    """March ``t`` over a uniform grid in [0, 1] with targets of curvature ``K_t``.

    Metrics and maps are warm-started from the previous step; the first map
    starts from the Douady-Earle extension.  Failures end the march and are
    recorded in the verdict.
    """
    K = np.asarray(K, dtype=float)
    if K.shape != grid.shape:
        raise ValueError("curvature field does not match the grid")

    def make_metric(t, prev):
        return solve_prescribed_curvature(deformed_curvature(K, t), grid, metric_tol,
                                          init=None if prev is None else prev.u)

    return _march("metric", grid, n_steps, make_metric, lambda t: phi, map_tol, budget,
                  max_halvings, labels, callback)


def run_boundary_continuation(phi: CircleMap, n_steps: int, grid: DiskGrid, map_tol: float = 1e-8,
                              budget: float = 0.5, max_halvings: int = 3, labels=None,
                              callback=None) -> ContinuationReport:
    """March the boundary data ``Phi_t`` from the identity to ``phi`` into the hyperbolic disk."""
    if not phi.is_c1:
        raise ValueError("boundary continuation needs a C1-tagged map")
    target = MetricField.hyperbolic(grid)
    return _march("boundary", grid, n_steps, lambda t, prev: target,
                  lambda t: linear_deformation(phi, t), map_tol, budget, max_halvings,
                  labels, callback)


@dataclass(frozen=True)
class ContinuityModuli:
    dt: np.ndarray
    u_slopes: np.ndarray  # per consecutive pair
    u_slope: float  # least squares through the origin
    u_residuals: np.ndarray
    u_max_slope: float
    J_slopes: np.ndarray
    J_slope: float
    J_residuals: np.ndarray
    J_max_slope: float
    lipschitz_c: float  # max of (|du| + |grad du|) / dt


def continuity_moduli(report: ContinuationReport) -> ContinuityModuli:
    """Slopes of ``sup|u_t - u_s|`` and ``sup|J_t - J_s|`` against ``|t - s|`` over consecutive steps."""
    recs = report.records
    if len(recs) < 3:
        raise ValueError("continuity moduli need at least 3 steps")
    t = np.array([r.t for r in recs])
    dt = np.diff(t)
    du = np.array([r.du for r in recs[1:]])
    dg = np.array([r.du_grad for r in recs[1:]])
    dJ = np.array([r.dJ for r in recs[1:]])

    def fit(y):
        slope = float(np.dot(y, dt) / np.dot(dt, dt))
        return y / dt, slope, y - slope * dt, float(np.max(y / dt))

    us, u_slope, ur, umax = fit(du)
    js, J_slope, jr, jmax = fit(dJ)
    return ContinuityModuli(dt, us, u_slope, ur, umax, js, J_slope, jr, jmax,
                            float(np.max((du + dg) / dt)))
