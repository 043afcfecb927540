"""Complete conformal metrics ``e^{2u} g_hyp`` with prescribed negative curvature.

The curvature equation ``lap_h u = (-k) e^{2u} - 1`` is solved by Newton's
method started from the constant supersolution ``u = -log a``.  The Jacobian
``lap_h + 2 k e^{2u}`` is an M-matrix with negative diagonal, so the iterates
decrease monotonically onto the solution and stay inside the bracket
``[-log b, -log a]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .grid import DiskGrid, PinchingBounds, gaussian_curvature, hyperbolic_laplacian
from .linalg import solve_sparse

log = logging.getLogger(__name__)


class MetricSolveError(RuntimeError):
    def __init__(self, message, t=None, residual=None):
        prefix = "" if t is None else f"t={t}: "
        super().__init__(prefix + message)
        self.t = t
        self.residual = residual


@dataclass(frozen=True, eq=False)
class MetricField:
    grid: DiskGrid
    u: np.ndarray
    k: np.ndarray
    bounds: PinchingBounds
    residual_norm: float
    iterations: int = 0

    @classmethod
    def hyperbolic(cls, grid: DiskGrid) -> "MetricField":
        return cls(grid, np.zeros(grid.shape), -np.ones(grid.shape), PinchingBounds(1.0, 1.0), 0.0)

    @property
    def is_constant(self) -> bool:
        return bool(np.ptp(self.u) == 0.0)

    def conformal_factor(self) -> np.ndarray:
        """``e^{2u}``, the ratio of the metric to the hyperbolic one."""
        return np.exp(2.0 * self.u)

    def curvature(self) -> np.ndarray:
        return gaussian_curvature(self.grid, self.u)


def curvature_residual(grid: DiskGrid, u: np.ndarray, k: np.ndarray) -> np.ndarray:
    """``lap_h u + k e^{2u} + 1`` on interior nodes, NaN on the rim."""
    return hyperbolic_laplacian(grid, u) + k * np.exp(2.0 * u) + 1.0


def _check_curvature(grid, k):
    k = np.asarray(k, dtype=float)
    if k.shape != grid.shape:
        raise ValueError(f"curvature field shape {k.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(k)) or np.max(k) >= 0:
        raise ValueError("prescribed curvature must be finite and strictly negative")
    return k


def solve_prescribed_curvature(k, grid: DiskGrid, tol: float = 1e-10, init=None, rim=None,
                               max_iter: int = 60, callback=None) -> MetricField:
    """Solve for ``u`` with curvature ``k``; the rim carries ``u = rim`` (default ``-log b``).

    ``callback(iteration, u)`` sees every Newton iterate.
    """
    k = _check_curvature(grid, k)
    bounds = PinchingBounds.from_curvature(k)
    u_low, u_high = -np.log(bounds.b), -np.log(bounds.a)
    rim_value = u_low if rim is None else rim
    inner = grid.interior.ravel()
    u = np.full(grid.size, u_high) if init is None else np.array(init, dtype=float).ravel()
    u[~inner] = np.broadcast_to(np.asarray(rim_value, dtype=float), (grid.n_theta,))

    L = grid.laplacian_h
    L_ii = L[inner][:, inner]
    kk = k.ravel()

    def residual(u):
        return grid.laplacian(u)[inner] + kk[inner] * np.exp(2 * u[inner]) + 1.0

    F = residual(u)
    res = float(np.max(np.abs(F)))
    it = 0
    if callback is not None:
        callback(0, u.reshape(grid.shape).copy())
    while res > tol:
        if it >= max_iter:
            raise MetricSolveError(f"Newton did not converge in {max_iter} iterations", residual=res)
        J = (L_ii + sp.diags(2 * kk[inner] * np.exp(2 * u[inner]))).tocsc()
        du = solve_sparse(J, -F)
        step = 1.0
        while True:
            cand = u.copy()
            cand[inner] += step * du
            Fc = residual(cand)
            rc = float(np.max(np.abs(Fc)))
            if rc < res or step < 1e-4:
                break
            step *= 0.5
        if not np.isfinite(rc) or (rc >= res and step < 1e-4):
            raise MetricSolveError("Newton step failed to reduce the residual", residual=res)
        u, F, res = cand, Fc, rc
        it += 1
        if callback is not None:
            callback(it, u.reshape(grid.shape).copy())
    log.debug("curvature solve: %d Newton steps, residual %.3e", it, res)
    return MetricField(grid, u.reshape(grid.shape), k, bounds, res, it)


def deformed_curvature(K, t: float) -> np.ndarray:
    """``K_t = -(1 - t) + t K``, joining the hyperbolic curvature to ``K``."""
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return -(1.0 - t) + t * np.asarray(K, dtype=float)


def solve_family(K, t_list, grid: DiskGrid, tol: float = 1e-10) -> list[MetricField]:
    """One metric per ``t``, each warm-started from its predecessor."""
    t_list = [float(t) for t in t_list]
    if any(b <= a for a, b in zip(t_list, t_list[1:])):
        raise ValueError("t_list must be increasing")
    out = []
    prev = None
    for t in t_list:
        try:
            m = solve_prescribed_curvature(deformed_curvature(K, t), grid, tol,
                                           init=None if prev is None else prev.u)
        except (MetricSolveError, ValueError) as exc:
            raise MetricSolveError(str(exc), t=t, residual=getattr(exc, "residual", None)) from exc
        out.append(m)
        prev = m
    return out


def radial_bump(grid: DiskGrid, depth: float, width: float) -> np.ndarray:
    """``k = -1 - depth * exp(-width r^2 / (1 - r^2))``: ``-(1+depth)`` at 0, ``-1`` at infinity."""
    r2 = grid.R**2
    return -1.0 - depth * np.exp(-width * r2 / (1.0 - r2))


def curvature_from_spec(spec: str, grid: DiskGrid) -> np.ndarray:
    """``constant:<v>``, ``radial-bump:<depth>,<width>`` or a serialized field file."""
    name, _, arg = spec.strip().partition(":")
    if name == "constant":
        return np.full(grid.shape, float(arg))
    if name == "radial-bump":
        depth, width = (float(v) for v in arg.split(","))
        return radial_bump(grid, depth, width)
    path = Path(spec)
    if path.exists():
        from .io import read_field

        fgrid, values = read_field(path)
        if not fgrid.compatible(grid):
            raise ValueError(f"{path}: field grid {fgrid} does not match {grid}")
        return np.asarray(values, dtype=float)
    raise ValueError(f"unknown curvature spec {spec!r}")
