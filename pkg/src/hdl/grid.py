"""Polar discretization of the unit disk and the differential operators on it.

Nodes sit at ``z[i, j] = r[i] * exp(1j * theta[j])``.  Radii are equispaced in
hyperbolic radius with a half-cell offset, ``s_i = (i + 1/2) * ds``, so that the
last ring is exactly the rim ``r_max`` and no node sits on the origin.  The
stencil at the innermost ring reaches across the origin to the node at
``theta + pi``, which is what makes the origin a regular point of the scheme.

Angular stencils are normalized by ``2 sin(dtheta)`` and ``2 - 2 cos(dtheta)``
instead of ``2 dtheta`` and ``dtheta**2``.  Both are second order, and both are
exact on the Fourier modes ``exp(+-1j*theta)``; together with three-point radial
weights (exact on quadratics in ``r``) this makes the identity map an exact
discrete harmonic map and keeps ``Re z``, ``Im z`` in the kernel of the
Laplacian.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RectBivariateSpline
from scipy.sparse.csgraph import dijkstra


@dataclass(frozen=True)
class PinchingBounds:
    """Curvature pinching ``-b**2 <= K <= -a**2``."""

    a: float
    b: float

    def __post_init__(self):
        if not (0 < self.a <= self.b):
            raise ValueError(f"pinching bounds need 0 < a <= b, got a={self.a}, b={self.b}")

    @classmethod
    def from_curvature(cls, k: np.ndarray) -> "PinchingBounds":
        k = np.asarray(k, dtype=float)
        if not np.all(np.isfinite(k)) or np.max(k) >= 0:
            raise ValueError("curvature must be finite and strictly negative")
        return cls(a=float(np.sqrt(-np.max(k))), b=float(np.sqrt(-np.min(k))))


def _lagrange3(x0, x1, x2, x):
    """First/second derivative weights at ``x`` of the quadratic through three points."""
    d0 = (x0 - x1) * (x0 - x2)
    d1 = (x1 - x0) * (x1 - x2)
    d2 = (x2 - x0) * (x2 - x1)
    first = ((2 * x - x1 - x2) / d0, (2 * x - x0 - x2) / d1, (2 * x - x0 - x1) / d2)
    second = (2 / d0, 2 / d1, 2 / d2)
    return first, second


@dataclass(frozen=True)
class DiskGrid:
    n_r: int
    n_theta: int
    r_max: float

    def __post_init__(self):
        if int(self.n_r) != self.n_r or self.n_r < 8:
            raise ValueError(f"n_r must be an integer >= 8, got {self.n_r}")
        if int(self.n_theta) != self.n_theta or self.n_theta < 8 or self.n_theta % 2:
            raise ValueError(f"n_theta must be an even integer >= 8, got {self.n_theta}")
        if not (0.0 < self.r_max < 1.0):
            raise ValueError(f"r_max must lie in (0, 1), got {self.r_max}")

    # -- geometry -----------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_r, self.n_theta)

    @property
    def size(self) -> int:
        return self.n_r * self.n_theta

    @cached_property
    def s_max(self) -> float:
        """Hyperbolic radius of the rim."""
        return 2.0 * np.arctanh(self.r_max)

    @cached_property
    def ds(self) -> float:
        return self.s_max / (self.n_r - 0.5)

    @cached_property
    def dtheta(self) -> float:
        return 2 * np.pi / self.n_theta

    @cached_property
    def s(self) -> np.ndarray:
        s = (np.arange(self.n_r) + 0.5) * self.ds
        s[-1] = self.s_max
        return s

    @cached_property
    def r(self) -> np.ndarray:
        r = np.tanh(self.s / 2)
        r[-1] = self.r_max
        return r

    @cached_property
    def theta(self) -> np.ndarray:
        return np.arange(self.n_theta) * self.dtheta

    @cached_property
    def R(self) -> np.ndarray:
        return np.broadcast_to(self.r[:, None], self.shape)

    @cached_property
    def TH(self) -> np.ndarray:
        return np.broadcast_to(self.theta[None, :], self.shape)

    @cached_property
    def z(self) -> np.ndarray:
        return self.R * np.exp(1j * self.TH)

    @cached_property
    def interior(self) -> np.ndarray:
        """Boolean mask of nodes where the PDE is imposed (everything but the rim)."""
        m = np.ones(self.shape, dtype=bool)
        m[-1] = False
        return m

    def annulus(self, r_lo: float = 0.0, r_hi: float | None = None) -> np.ndarray:
        """Mask of nodes with ``r_lo <= r <= r_hi`` (default ``r_hi = 0.8 * r_max``)."""
        if r_hi is None:
            r_hi = 0.8 * self.r_max
        return (self.R >= r_lo) & (self.R <= r_hi)

    def compatible(self, other: "DiskGrid") -> bool:
        return (
            self.n_r == other.n_r
            and self.n_theta == other.n_theta
            and abs(self.r_max - other.r_max) < 1e-6
        )

    def refined(self, factor: int = 2) -> "DiskGrid":
        return DiskGrid(self.n_r * factor, self.n_theta * factor, self.r_max)

    @cached_property
    def cell_areas(self) -> np.ndarray:
        """Hyperbolic area of the cell around each node (exact for the cell)."""
        lo = np.arange(self.n_r) * self.ds
        hi = np.minimum(lo + self.ds, self.s_max)
        ring = (np.cosh(hi) - np.cosh(lo)) * self.dtheta
        return np.broadcast_to(ring[:, None], self.shape).copy()

    # -- stencils -----------------------------------------------------------

    def _index(self, i, j):
        return i * self.n_theta + np.mod(j, self.n_theta)

    @cached_property
    def _radial_stencils(self):
        """Rows, columns, first and second derivative weights along rays."""
        nr, nt = self.shape
        r = self.r
        rows, cols, w1, w2 = [], [], [], []
        j = np.arange(nt)
        for i in range(nr):
            if i == 0:
                pos = (-r[0], r[0], r[1])
                nbr = (self._index(0, j + nt // 2), self._index(0, j), self._index(1, j))
                at = r[0]
            elif i < nr - 1:
                pos = (r[i - 1], r[i], r[i + 1])
                nbr = (self._index(i - 1, j), self._index(i, j), self._index(i + 1, j))
                at = r[i]
            else:
                pos = (r[i - 2], r[i - 1], r[i])
                nbr = (self._index(i - 2, j), self._index(i - 1, j), self._index(i, j))
                at = r[i]
            first, second = _lagrange3(*pos, at)
            me = self._index(i, j)
            for k in range(3):
                rows.append(me)
                cols.append(nbr[k])
                w1.append(np.full(nt, first[k]))
                w2.append(np.full(nt, second[k]))
        return (np.concatenate(rows), np.concatenate(cols), np.concatenate(w1), np.concatenate(w2))

    def _csr(self, rows, cols, vals):
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.size, self.size))

    @cached_property
    def D_r(self) -> sp.csr_matrix:
        rows, cols, w1, _ = self._radial_stencils
        return self._csr(rows, cols, w1)

    @cached_property
    def D_rr(self) -> sp.csr_matrix:
        rows, cols, _, w2 = self._radial_stencils
        return self._csr(rows, cols, w2)

    @cached_property
    def D_theta(self) -> sp.csr_matrix:
        i, j = np.meshgrid(np.arange(self.n_r), np.arange(self.n_theta), indexing="ij")
        me = self._index(i, j).ravel()
        c = 1.0 / (2.0 * np.sin(self.dtheta))
        rows = np.concatenate([me, me])
        cols = np.concatenate([self._index(i, j + 1).ravel(), self._index(i, j - 1).ravel()])
        vals = np.concatenate([np.full(me.size, c), np.full(me.size, -c)])
        return self._csr(rows, cols, vals)

    @cached_property
    def D_thetatheta(self) -> sp.csr_matrix:
        i, j = np.meshgrid(np.arange(self.n_r), np.arange(self.n_theta), indexing="ij")
        me = self._index(i, j).ravel()
        c = 1.0 / (2.0 - 2.0 * np.cos(self.dtheta))
        rows = np.concatenate([me, me, me])
        cols = np.concatenate(
            [self._index(i, j + 1).ravel(), me, self._index(i, j - 1).ravel()]
        )
        vals = np.concatenate([np.full(me.size, c), np.full(me.size, -2 * c), np.full(me.size, c)])
        return self._csr(rows, cols, vals)

    @cached_property
    def _interior_rows(self) -> sp.dia_matrix:
        return sp.diags(self.interior.ravel().astype(float))

    @cached_property
    def laplacian_e(self) -> sp.csr_matrix:
        """Euclidean Laplacian ``f_rr + f_r/r + f_thth/r**2``; rim rows are zero."""
        inv_r = sp.diags(1.0 / self.R.ravel())
        inv_r2 = sp.diags(1.0 / self.R.ravel() ** 2)
        L = self.D_rr + inv_r @ self.D_r + inv_r2 @ self.D_thetatheta
        return (self._interior_rows @ L).tocsr()

    @cached_property
    def laplacian_h(self) -> sp.csr_matrix:
        """Hyperbolic Laplacian ``rho**-2 * laplacian_e``; rim rows are zero."""
        return (sp.diags(1.0 / hyperbolic_factor(self).ravel()) @ self.laplacian_e).tocsr()

    @cached_property
    def D_z(self) -> sp.csr_matrix:
        """``d/dz = 1/2 e^{-i theta} (d_r - i/r d_theta)``."""
        e = sp.diags(0.5 * np.exp(-1j * self.TH).ravel())
        inv_r = sp.diags(1.0 / self.R.ravel())
        return (e @ (self.D_r - 1j * (inv_r @ self.D_theta))).tocsr()

    @cached_property
    def D_zbar(self) -> sp.csr_matrix:
        """``d/dzbar = 1/2 e^{i theta} (d_r + i/r d_theta)``."""
        e = sp.diags(0.5 * np.exp(1j * self.TH).ravel())
        inv_r = sp.diags(1.0 / self.R.ravel())
        return (e @ (self.D_r + 1j * (inv_r @ self.D_theta))).tocsr()

    @cached_property
    def D_x(self) -> sp.csr_matrix:
        return (self.D_z + self.D_zbar).real.tocsr()

    @cached_property
    def D_y(self) -> sp.csr_matrix:
        return (1j * (self.D_z - self.D_zbar)).real.tocsr()

    def _difference_form(self, L):
        L = L.tocsr()
        rows = np.repeat(np.arange(L.shape[0]), np.diff(L.indptr))
        off = L.indices != rows
        return rows[off], L.indices[off], L.data[off]

    @cached_property
    def _lap_e_diff(self):
        return self._difference_form(self.laplacian_e)

    @cached_property
    def _lap_h_diff(self):
        return self._difference_form(self.laplacian_h)

    def laplacian(self, f: np.ndarray, hyperbolic: bool = True) -> np.ndarray:
        """Apply the Laplacian as ``sum c_n (f_n - f_i)``.

        Same operator as ``laplacian_h`` / ``laplacian_e``, but neighbour
        differences are formed before scaling, which keeps rounding noise at the
        innermost ring (angular weights ~1e5) well below the Newton tolerances.
        """
        rows, cols, w = self._lap_h_diff if hyperbolic else self._lap_e_diff
        f = np.asarray(f)
        flat = f.reshape(-1)
        if np.iscomplexobj(flat):
            return self.laplacian(f.real, hyperbolic) + 1j * self.laplacian(f.imag, hyperbolic)
        vals = w * (flat[cols] - flat[rows])
        return np.bincount(rows, vals, minlength=self.size).reshape(f.shape)

    def apply(self, op: sp.spmatrix, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        if f.shape != self.shape:
            raise ValueError(f"field shape {f.shape} does not match grid {self.shape}")
        return (op @ f.ravel()).reshape(self.shape)


def build_polar_grid(n_r: int, n_theta: int, r_max: float) -> DiskGrid:
    return DiskGrid(int(n_r), int(n_theta), float(r_max))


def hyperbolic_factor(grid: DiskGrid) -> np.ndarray:
    """Conformal factor ``rho**2 = 4 / (1 - |z|**2)**2`` of the hyperbolic metric."""
    return 4.0 / (1.0 - grid.R**2) ** 2


def rho2(w) -> np.ndarray:
    return 4.0 / (1.0 - np.abs(w) ** 2) ** 2


def hyperbolic_distance(z1, z2) -> np.ndarray:
    """Closed-form distance in the Poincare disk."""
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    q = np.abs(z1 - z2) / np.abs(1.0 - np.conj(z1) * z2)
    return 2.0 * np.arctanh(np.minimum(q, 1.0))


def _masked_rim(grid, out):
    out = np.array(out)
    out[~grid.interior] = np.nan
    return out


def euclidean_laplacian(grid: DiskGrid, f: np.ndarray) -> np.ndarray:
    """Polar finite-difference Euclidean Laplacian; the rim is NaN (not evaluated)."""
    return _masked_rim(grid, grid.laplacian(f, hyperbolic=False))


def hyperbolic_laplacian(grid: DiskGrid, f: np.ndarray) -> np.ndarray:
    return _masked_rim(grid, grid.laplacian(f))


def gaussian_curvature(grid: DiskGrid, u: np.ndarray) -> np.ndarray:
    """Curvature of ``e^{2u} g_hyp``.

    Uses ``laplacian_h(log rho) = 1`` analytically, so ``u == 0`` gives -1 on the
    nose and the result equals the prescribed ``k`` exactly when the discrete
    curvature equation is satisfied.
    """
    lap = grid.laplacian(u)
    return _masked_rim(grid, -np.exp(-2.0 * np.asarray(u)) * (lap + 1.0))


def gradient_norm(grid: DiskGrid, f: np.ndarray) -> np.ndarray:
    """Norm of the gradient of ``f`` measured in the hyperbolic metric."""
    fx = grid.apply(grid.D_x, f)
    fy = grid.apply(grid.D_y, f)
    return np.sqrt(fx**2 + fy**2) / np.sqrt(hyperbolic_factor(grid))


class GridInterpolator:
    """Bicubic spline of a real node field in (signed r, theta).

    Rays through the origin are continued to negative ``r`` with the values at
    ``theta + pi``, so the spline passes smoothly across the centre; angles are
    padded periodically.  Points beyond the rim are clamped to ``r_max``.
    """

    _PAD = 4

    def __init__(self, grid: DiskGrid, values: np.ndarray):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != grid.shape:
            raise ValueError("values must live on the grid")
        nt, half, pad = grid.n_theta, grid.n_theta // 2, self._PAD
        flipped = np.roll(self.values[::-1], -half, axis=1)
        rows = np.concatenate([flipped, self.values])
        sr = np.concatenate([-grid.r[::-1], grid.r])
        cols = np.arange(-pad, nt + pad)
        data = rows[:, cols % nt]
        self._spline = RectBivariateSpline(sr, cols * grid.dtheta, data, kx=3, ky=3, s=0)

    def _polar(self, w):
        w = np.asarray(w, dtype=complex)
        rad = np.minimum(np.abs(w), self.grid.r_max)
        ang = np.mod(np.angle(w), 2 * np.pi)
        return rad, ang

    def __call__(self, w) -> np.ndarray:
        rad, ang = self._polar(w)
        return self._spline.ev(rad, ang)

    def polar_derivatives(self, w, order: int = 1) -> dict:
        """Value and partial derivatives in (r, theta) up to ``order`` (1 or 2)."""
        rad, ang = self._polar(w)
        ev = self._spline.ev
        out = {"f": ev(rad, ang), "r": ev(rad, ang, dx=1), "t": ev(rad, ang, dy=1)}
        if order >= 2:
            out.update(rr=ev(rad, ang, dx=2), rt=ev(rad, ang, dx=1, dy=1), tt=ev(rad, ang, dy=2))
        out["rad"], out["ang"] = rad, ang
        return out


class DistanceGraph:
    """Graph metric on grid nodes for the conformal metric ``e^{2u} g_hyp``.

    Edges join radial, angular and diagonal neighbours; a virtual vertex at the
    origin joins every node of the innermost ring.  Each edge weighs
    ``exp(mean u) * d_hyp(endpoints)``, so graph distances dominate the true
    distance of a constant-``u`` metric and equal it along rays.

    With ``points`` given, edge lengths are measured between those image points
    instead of the nodes (pull-back of the metric by a map).
    """

    def __init__(self, grid: DiskGrid, u: np.ndarray | float = 0.0, points: np.ndarray | None = None,
                 u_at_points: np.ndarray | None = None):
        self.grid = grid
        nr, nt = grid.shape
        N = grid.size
        self.center = N
        i, j = np.meshgrid(np.arange(nr), np.arange(nt), indexing="ij")
        me = grid._index(i, j)
        pairs = [
            (me[:-1], grid._index(i + 1, j)[:-1]),
            (me, grid._index(i, j + 1)),
            (me[:-1], grid._index(i + 1, j + 1)[:-1]),
            (me[:-1], grid._index(i + 1, j - 1)[:-1]),
        ]
        a = np.concatenate([p[0].ravel() for p in pairs] + [np.arange(nt)])
        b = np.concatenate([p[1].ravel() for p in pairs] + [np.full(nt, N)])
        pts = grid.z.ravel() if points is None else np.asarray(points, dtype=complex).ravel()
        uu = np.broadcast_to(np.asarray(u, dtype=float), grid.shape).ravel()
        if u_at_points is not None:
            uu = np.asarray(u_at_points, dtype=float).ravel()
        center_point = 0.0 if points is None else np.mean(pts[:nt])
        pts = np.append(pts, center_point)
        uu = np.append(uu, np.mean(uu[:nt]))
        w = np.exp(0.5 * (uu[a] + uu[b])) * hyperbolic_distance(pts[a], pts[b])
        # zero-length edges would vanish from a sparse graph
        w = np.maximum(w, 1e-300)
        self.edges = (a, b, w)
        self.matrix = sp.csr_matrix((w, (a, b)), shape=(N + 1, N + 1))

    def node(self, p) -> int:
        """Resolve a node given as flat index, ``(i, j)``, complex coordinate, or 0j (origin)."""
        g = self.grid
        if isinstance(p, tuple):
            i, j = p
            if not (0 <= i < g.n_r and 0 <= j < g.n_theta):
                raise ValueError(f"node {p} is off the grid")
            return int(i * g.n_theta + j)
        if isinstance(p, (int, np.integer)):
            if not (0 <= p <= g.size):
                raise ValueError(f"node index {p} is off the grid")
            return int(p)
        zc = complex(p)
        if abs(zc) < 1e-14:
            return self.center
        k = int(np.argmin(np.abs(g.z.ravel() - zc)))
        if abs(g.z.ravel()[k] - zc) > 1e-9:
            raise ValueError(f"point {zc} is not a grid node")
        return k

    def from_sources(self, sources) -> np.ndarray:
        idx = [self.node(p) for p in sources]
        return dijkstra(self.matrix, directed=False, indices=idx)

    def distance(self, p, q) -> float:
        return float(self.from_sources([p])[0, self.node(q)])


def geodesic_distance(grid: DiskGrid, u, z1, z2) -> float:
    """Graph distance between two nodes in the metric ``e^{2u} g_hyp``."""
    return DistanceGraph(grid, u).distance(z1, z2)
