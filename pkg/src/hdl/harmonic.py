"""Harmonic maps from the hyperbolic disk into a conformal metric ``e^{2u} g_hyp``.

The unknown is the image ``h`` at interior nodes; the rim carries the Dirichlet
data ``r_max * exp(i Phi(theta))``.  The discrete tension is

    tau = lap_h h + 2 Gamma(h) * 4 rho^-2 h_z h_zbar,   Gamma = d/dw log sigma,

i.e. the harmonic map equation ``h_zzbar + 2 Gamma(h) h_z h_zbar = 0`` scaled by
``4 / rho**2`` so that it is measured in the source metric.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .circle import CircleMap, douady_earle
from .grid import DiskGrid, GridInterpolator, hyperbolic_factor, rho2
from .linalg import solve_sparse
from .metric import MetricField

log = logging.getLogger(__name__)


class HarmonicSolveError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class TargetGeometry:
    """Evaluates the target metric at arbitrary image points."""

    def __init__(self, metric: MetricField):
        self.metric = metric
        grid = metric.grid
        self.constant_u = metric.is_constant
        self.constant_k = bool(np.ptp(metric.k) == 0.0)
        self.u0 = float(metric.u.flat[0])
        self.k0 = float(metric.k.flat[0])
        if not self.constant_u:
            self._u = GridInterpolator(grid, metric.u)
        if not self.constant_k:
            self._k = GridInterpolator(grid, metric.k)

    def u(self, w) -> np.ndarray:
        if self.constant_u:
            return np.full(np.shape(w), self.u0)
        return self._u(w)

    def sigma2(self, w) -> np.ndarray:
        """Conformal factor ``sigma**2 = e^{2u} rho**2`` of the target at ``w``."""
        return np.exp(2.0 * self.u(w)) * rho2(w)

    def curvature(self, w) -> np.ndarray:
        if self.constant_k:
            return np.full(np.shape(w), self.k0)
        return self._k(w)

    def christoffel(self, w, derivatives: bool = False):
        """``Gamma = d/dw log sigma`` and, optionally, its ``d/dw`` and ``d/dwbar``."""
        w = np.asarray(w, dtype=complex)
        q = 1.0 - np.abs(w) ** 2
        wb = np.conj(w)
        gam = wb / q
        g_w = g_wb = None
        if derivatives:
            g_w = wb**2 / q**2
            g_wb = 1.0 / q**2
        if not self.constant_u:
            d = self._u.polar_derivatives(w, 2 if derivatives else 1)
            rad = np.maximum(d["rad"], 1e-12)
            e = 0.5 * np.exp(-1j * d["ang"])
            gu = e * (d["r"] - 1j * d["t"] / rad)  # d/dw of u
            gam = gam + gu
            if derivatives:
                g_r = e * (d["rr"] - 1j * (d["rt"] / rad - d["t"] / rad**2))
                g_t = -1j * gu + e * (d["rt"] - 1j * d["tt"] / rad)
                g_w = g_w + e * (g_r - 1j * g_t / rad)
                g_wb = g_wb + np.conj(e) * (g_r + 1j * g_t / rad)
        return gam, g_w, g_wb


@dataclass(eq=False)
class DiskMap:
    grid: DiskGrid
    values: np.ndarray
    boundary: CircleMap
    target: MetricField
    residual_norm: float = float("nan")
    iterations: int = 0
    energy: float = float("nan")
    projections: int = 0
    energy_history: list = field(default_factory=list)

    def with_values(self, values) -> "DiskMap":
        return DiskMap(self.grid, values, self.boundary, self.target)


def rim_values(grid: DiskGrid, phi: CircleMap) -> np.ndarray:
    return grid.r_max * np.exp(1j * phi(grid.theta))


def complex_derivatives(h: DiskMap):
    """``(h_z, h_zbar)`` at every node; the rim uses one-sided radial differences."""
    g = h.grid
    return g.apply(g.D_z, h.values), g.apply(g.D_zbar, h.values)


def _tension(grid, geom, values):
    hz = grid.apply(grid.D_z, values)
    hzb = grid.apply(grid.D_zbar, values)
    q = 4.0 / hyperbolic_factor(grid) * hz * hzb
    gam, _, _ = geom.christoffel(values)
    tau = grid.laplacian(values) + 2.0 * gam * q
    tau[~grid.interior] = np.nan
    return tau


def tension(h: DiskMap) -> np.ndarray:
    """Tension field at interior nodes (NaN on the rim)."""
    if np.any(np.abs(h.values) > h.target.grid.r_max * (1 + 1e-12)):
        raise ValueError("image points leave the target interpolation domain")
    return _tension(h.grid, TargetGeometry(h.target), h.values)


def _energy_density(grid, geom, values):
    hz = grid.apply(grid.D_z, values)
    hzb = grid.apply(grid.D_zbar, values)
    return geom.sigma2(values) / hyperbolic_factor(grid) * (np.abs(hz) ** 2 + np.abs(hzb) ** 2)


def dirichlet_energy(h: DiskMap) -> float:
    """``integral of ||Dh||^2 = H + L`` against hyperbolic area on the truncated disk."""
    dens = _energy_density(h.grid, TargetGeometry(h.target), h.values)
    return float(np.sum(dens * h.grid.cell_areas))


def douady_earle_initializer(grid: DiskGrid, phi: CircleMap) -> np.ndarray:
    """``r_max * DE_phi(z / r_max)``: the rescaled extension matches the rim data."""
    vals = np.empty(grid.shape, dtype=complex)
    inner = grid.interior
    vals[inner] = grid.r_max * douady_earle(phi, grid.z[inner] / grid.r_max)
    vals[~inner] = rim_values(grid, phi)
    return vals


class _Operators:
    """Interior restrictions of the grid operators, cached per grid."""

    _cache: dict = {}

    def __new__(cls, grid):
        key = (grid.n_r, grid.n_theta, grid.r_max)
        if key not in cls._cache:
            obj = super().__new__(cls)
            inner = grid.interior.ravel()
            obj.inner = inner
            obj.L = grid.laplacian_h[inner][:, inner].tocsr()
            obj.Dz = grid.D_z[inner][:, inner].tocsr()
            obj.Dzb = grid.D_zbar[inner][:, inner].tocsr()
            obj._lu = None
            cls._cache = {key: obj}
        return cls._cache[key]

    def precondition(self, rhs):
        if self._lu is None:
            self._lu = splu(self.L.tocsc())
        return self._lu.solve(rhs.real) + 1j * self._lu.solve(rhs.imag)


def _newton_matrix(grid, ops, geom, values):
    inner = ops.inner
    flat = values.ravel()
    hz = (grid.D_z @ flat)[inner]
    hzb = (grid.D_zbar @ flat)[inner]
    scale = 4.0 / hyperbolic_factor(grid).ravel()[inner]
    q = scale * hz * hzb
    gam, g_w, g_wb = geom.christoffel(flat[inner], derivatives=True)
    A = (ops.L
         + sp.diags(2 * gam * scale * hzb) @ ops.Dz
         + sp.diags(2 * gam * scale * hz) @ ops.Dzb
         + sp.diags(2 * q * g_w))
    B = sp.diags(2 * q * g_wb)
    P, M = A + B, A - B
    return sp.bmat([[P.real, -M.imag], [P.imag, M.real]], format="csc")


def solve_harmonic(target: MetricField, phi: CircleMap, grid: DiskGrid | None = None,
                   init="douady-earle", tol: float = 1e-8, switch_tol: float = 1e-3,
                   max_descent: int = 200, max_newton: int = 60, callback=None) -> DiskMap:
    """Harmonic map with rim data ``phi`` into ``target``.

    Preconditioned descent on the Dirichlet energy (Barzilai-Borwein steps,
    energy never increases) until the tension drops below ``switch_tol``, then
    damped Newton on the tension.  ``init`` is ``"douady-earle"``,
    ``"identity"``, an array of node values, or a DiskMap.
    """
    grid = target.grid if grid is None else grid
    if not grid.compatible(target.grid):
        raise ValueError("target metric lives on a different grid")
    if tol <= 0:
        raise ValueError("tol must be positive")
    geom = TargetGeometry(target)
    ops = _Operators(grid)
    inner = grid.interior
    rim = rim_values(grid, phi)
    r_cap = grid.r_max * (1 - 1e-9)

    if isinstance(init, str):
        if init == "douady-earle":
            h = douady_earle_initializer(grid, phi)
        elif init == "identity":
            h = grid.z.astype(complex)
        else:
            raise ValueError(f"unknown init {init!r}")
    else:
        h = np.array(init.values if isinstance(init, DiskMap) else init, dtype=complex)
        if h.shape != grid.shape:
            raise ValueError("initial map does not live on the grid")
    h = h.copy()
    h[~inner] = rim
    projections = 0
    outside = np.abs(h) > r_cap
    if outside[inner].any():
        h[outside & inner] *= r_cap / np.abs(h[outside & inner])
        projections += 1

    def energy(v):
        return float(np.sum(_energy_density(grid, geom, v) * grid.cell_areas))

    def tens(v):
        return _tension(grid, geom, v)[inner]

    def admissible(v):
        return np.all(np.abs(v[inner]) < r_cap)

    tau = tens(h)
    res = float(np.max(np.abs(tau)))
    E = energy(h)
    history = [E]
    it = 0
    consecutive_proj = 0

    def step_to(v_new):
        nonlocal h, tau, res
        h = v_new
        tau = tens(h)
        res = float(np.max(np.abs(tau)))

    # descent phase
    prev_x = prev_g = None
    alpha0 = 1.0
    while res > max(tol, switch_tol) and it < max_descent:
        g = ops.precondition(tau)  # L^-1 tau; -g is a descent direction
        if prev_g is not None:
            s_vec = h[inner] - prev_x
            y_vec = prev_g - g
            sy = float(np.real(np.vdot(s_vec, y_vec)))
            if sy > 0:
                alpha0 = min(max(float(np.real(np.vdot(s_vec, s_vec))) / sy, 0.05), 1.5)
        alpha = alpha0
        accepted = False
        for _ in range(12):
            cand = h.copy()
            cand[inner] = h[inner] - alpha * g
            if admissible(cand):
                Ec = energy(cand)
                if Ec <= E:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            break
        prev_x, prev_g = h[inner].copy(), g
        step_to(cand)
        E = Ec
        history.append(E)
        it += 1
        if callback is not None:
            callback("descent", it, h, res, E)

    # Newton phase
    n_newton = 0
    while res > tol:
        if n_newton >= max_newton:
            raise HarmonicSolveError(f"Newton did not converge (tension {res:.3e})", res, it)
        M = _newton_matrix(grid, ops, geom, h)
        rhs = -np.concatenate([tau.real, tau.imag])
        d = solve_sparse(M, rhs)
        n_i = tau.size
        dh = d[:n_i] + 1j * d[n_i:]
        merit = float(np.sum(np.abs(tau) ** 2))
        alpha = 1.0
        accepted = False
        for _ in range(30):
            cand = h.copy()
            cand[inner] = h[inner] + alpha * dh
            if admissible(cand):
                tc = tens(cand)
                if float(np.sum(np.abs(tc) ** 2)) < merit:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            cand = h.copy()
            cand[inner] = h[inner] + alpha * dh
            out = np.abs(cand) > r_cap
            if not (out & inner).any():
                raise HarmonicSolveError(f"Newton step failed to reduce the tension ({res:.3e})", res, it)
            cand[out & inner] *= r_cap / np.abs(cand[out & inner])
            projections += 1
            consecutive_proj += 1
            if consecutive_proj >= 3:
                raise HarmonicSolveError("iterate repeatedly escaped the disk", res, it)
        else:
            consecutive_proj = 0
        step_to(cand)
        n_newton += 1
        it += 1
        if callback is not None:
            callback("newton", it, h, res, None)

    out = DiskMap(grid, h, phi, target, residual_norm=res, iterations=it,
                  projections=projections, energy_history=history)
    out.energy = energy(h)
    log.debug("harmonic solve: %d iterations (%d Newton), tension %.3e", it, n_newton, res)
    return out
