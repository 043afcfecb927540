"""Circle homeomorphisms, Moebius transformations and the Douady-Earle extension.

A circle map is stored through its lift ``Phi`` sampled at ``theta_k = 2 pi k / n``,
with ``Phi(theta + 2 pi) = Phi(theta) + 2 pi``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
_PAD = 3


class DegenerateMapError(ValueError):
    """Raised for lifts that are not strictly increasing."""


class BarycenterError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class CircleMap:
    lift: np.ndarray
    derivative: np.ndarray | None = None
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        lift = np.asarray(self.lift, dtype=float)
        object.__setattr__(self, "lift", lift)
        if lift.ndim != 1 or lift.size < 8:
            raise ValueError("lift needs at least 8 samples")
        if self.derivative is not None:
            d = np.asarray(self.derivative, dtype=float)
            if d.shape != lift.shape:
                raise ValueError("derivative samples must match lift samples")
            object.__setattr__(self, "derivative", d)
        if self.check:
            steps = np.diff(np.append(lift, lift[0] + TWO_PI))
            if not np.all(steps > 0):
                raise DegenerateMapError("lift samples are not strictly increasing")
            if self.derivative is not None and not np.all(self.derivative > 0):
                raise DegenerateMapError("derivative samples must be positive")

    @property
    def n_s(self) -> int:
        return self.lift.size

    @property
    def is_c1(self) -> bool:
        return self.derivative is not None

    @property
    def thetas(self) -> np.ndarray:
        return np.arange(self.n_s) * (TWO_PI / self.n_s)

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(np.append(self.lift, self.lift[0] + TWO_PI)) > 0))

    def _interpolant(self):
        cached = self.__dict__.get("_interp")
        if cached is not None:
            return cached
        n = self.n_s
        k = np.arange(-_PAD, n + _PAD)
        wraps = np.floor_divide(k, n)
        th = k * (TWO_PI / n)
        ph = self.lift[k % n] + TWO_PI * wraps
        if self.derivative is not None:
            interp = CubicHermiteSpline(th, ph, self.derivative[k % n])
        else:
            interp = PchipInterpolator(th, ph)
        self.__dict__["_interp"] = interp
        return interp

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        m = np.floor(theta / TWO_PI)
        return self._interpolant()(theta - TWO_PI * m) + TWO_PI * m

    def slope(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        m = np.floor(theta / TWO_PI)
        return self._interpolant().derivative()(theta - TWO_PI * m)

    def points(self, theta=None) -> np.ndarray:
        """Image points ``exp(i Phi)`` on the unit circle."""
        ph = self.lift if theta is None else self(theta)
        return np.exp(1j * ph)

    def resampled(self, n_s: int) -> "CircleMap":
        th = np.arange(n_s) * (TWO_PI / n_s)
        d = self.slope(th) if self.is_c1 else None
        return CircleMap(self(th), d)


def identity_map(n_s: int = 1024) -> CircleMap:
    th = np.arange(n_s) * (TWO_PI / n_s)
    return CircleMap(th, np.ones(n_s))


def rotation_map(angle: float, n_s: int = 1024) -> CircleMap:
    th = np.arange(n_s) * (TWO_PI / n_s)
    return CircleMap(th + angle, np.ones(n_s))


def sine_map(amplitude: float, n_s: int = 1024) -> CircleMap:
    """``Phi(theta) = theta + amplitude * sin(theta)``; a diffeomorphism for |amplitude| < 1."""
    if abs(amplitude) >= 1:
        raise ValueError("sine amplitude must satisfy |A| < 1")
    th = np.arange(n_s) * (TWO_PI / n_s)
    return CircleMap(th + amplitude * np.sin(th), 1 + amplitude * np.cos(th))


def piecewise_map(breakpoints, n_s: int = 1024) -> CircleMap:
    """Piecewise-linear lift through ``(theta, Phi)`` breakpoints, closed up periodically."""
    pts = np.asarray(breakpoints, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 1:
        raise ValueError("breakpoints must be (theta, Phi) pairs")
    pts = pts[np.argsort(pts[:, 0])]
    x = np.concatenate([pts[:, 0] - TWO_PI, pts[:, 0], pts[:, 0] + TWO_PI])
    y = np.concatenate([pts[:, 1] - TWO_PI, pts[:, 1], pts[:, 1] + TWO_PI])
    th = np.arange(n_s) * (TWO_PI / n_s)
    return CircleMap(np.interp(th, x, y))


# -- Moebius transformations ---------------------------------------------------

_CAYLEY = np.array([[1, -1j], [1, 1j]])
_CAYLEY_INV = np.linalg.inv(_CAYLEY)


@dataclass(frozen=True, eq=False)
class MobiusTransform:
    """Isometry of the disk given by a real 2x2 matrix acting on the upper half-plane.

    ``det > 0`` acts by ``x -> (a x + b)/(c x + d)``; ``det < 0`` by the same
    formula applied to the conjugate (orientation reversing).  The matrix is
    normalized to ``|det| = 1``.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float).reshape(2, 2)
        det = np.linalg.det(m)
        if det == 0 or not np.isfinite(det):
            raise ValueError("Moebius matrix must be invertible")
        object.__setattr__(self, "matrix", m / np.sqrt(abs(det)))

    @classmethod
    def identity(cls) -> "MobiusTransform":
        return cls(np.eye(2))

    @classmethod
    def from_disk_point(cls, a: complex) -> "MobiusTransform":
        """The orientation-preserving isometry ``w -> (w + a)/(1 + conj(a) w)``."""
        a = complex(a)
        md = np.array([[1, a], [np.conj(a), 1]])
        m = _CAYLEY_INV @ md @ _CAYLEY
        if abs(m.imag).max() > 1e-12 * abs(m).max():
            raise ValueError("not a real Moebius matrix")
        return cls(m.real)

    @property
    def orientation(self) -> int:
        return 1 if np.linalg.det(self.matrix) > 0 else -1

    @property
    def disk_matrix(self) -> np.ndarray:
        return _CAYLEY @ self.matrix @ _CAYLEY_INV

    def __matmul__(self, other: "MobiusTransform") -> "MobiusTransform":
        return MobiusTransform(self.matrix @ other.matrix)

    def inverse(self) -> "MobiusTransform":
        return MobiusTransform(np.linalg.inv(self.matrix))

    def half_plane(self, x):
        x = np.asarray(x, dtype=complex)
        if self.orientation < 0:
            x = np.conj(x)
        (a, b), (c, d) = self.matrix
        return (a * x + b) / (c * x + d)

    def __call__(self, w):
        """Action on the closed disk."""
        w = np.asarray(w, dtype=complex)
        if self.orientation < 0:
            # x -> -conj(x) on H is w -> conj(w) on D
            md = _CAYLEY @ (self.matrix @ np.diag([-1.0, 1.0])) @ _CAYLEY_INV
            w = np.conj(w)
        else:
            md = self.disk_matrix
        return (md[0, 0] * w + md[0, 1]) / (md[1, 0] * w + md[1, 1])

    def boundary_slope(self, xi):
        """``|d gamma / d xi|`` on the unit circle (orientation preserving case)."""
        md = self.disk_matrix
        det = md[0, 0] * md[1, 1] - md[0, 1] * md[1, 0]
        return np.abs(det / (md[1, 0] * xi + md[1, 1]) ** 2)


def _relift(points: np.ndarray) -> np.ndarray:
    ang = np.unwrap(np.angle(points))
    ang -= TWO_PI * np.round((ang[0] - np.angle(points[0])) / TWO_PI)
    return ang


def mobius_map(gamma: MobiusTransform, n_s: int = 1024) -> CircleMap:
    """Boundary action of ``gamma`` as a circle map."""
    if gamma.orientation < 0:
        raise ValueError("orientation-reversing transforms do not give increasing lifts")
    th = np.arange(n_s) * (TWO_PI / n_s)
    xi = np.exp(1j * th)
    return CircleMap(_relift(gamma(xi)), gamma.boundary_slope(xi))


def compose(outer: MobiusTransform, phi: CircleMap, inner: MobiusTransform | None = None) -> CircleMap:
    """Sampled composition ``outer o phi o inner**-1``, re-lifted."""
    if outer.orientation < 0 or (inner is not None and inner.orientation < 0):
        raise ValueError("orientation-reversing transforms do not give increasing lifts")
    th = phi.thetas
    xi = np.exp(1j * th)
    if inner is None:
        src = th
        d_inner = np.ones_like(th)
    else:
        inv = inner.inverse()
        pre = inv(xi)
        src = _relift(pre)
        d_inner = inv.boundary_slope(xi)
    img = np.exp(1j * phi(src))
    out = outer(img)
    deriv = None
    if phi.is_c1:
        deriv = outer.boundary_slope(img) * phi.slope(src) * d_inner
    return CircleMap(_relift(out), deriv)


def mobius_act(gamma: MobiusTransform, phi: CircleMap) -> CircleMap:
    return compose(gamma, phi)


# -- operations on circle maps --------------------------------------------------

def quasisymmetry_constant(phi: CircleMap, n_probe: int = 256) -> float:
    """Largest symmetric-arc ratio over an ``n_probe x n_probe`` grid of (theta, alpha).

    A lower bound for the quasi-symmetry constant, increasing to it as the probe
    grid is refined along nested grids.
    """
    if n_probe < 16:
        raise ValueError("n_probe must be at least 16")
    if not phi.is_monotone:
        raise DegenerateMapError("quasi-symmetry needs a strictly increasing lift")
    th = np.arange(n_probe) * (TWO_PI / n_probe)
    alphas = np.arange(1, n_probe + 1) * (np.pi / n_probe)
    mid = phi(th)
    worst = 1.0
    for alpha in alphas:
        fwd = phi(th + alpha) - mid
        bwd = mid - phi(th - alpha)
        ratio = fwd / bwd
        worst = max(worst, float(np.max(ratio)), float(np.max(1.0 / ratio)))
    return worst


def mollify(phi: CircleMap, width: float) -> CircleMap:
    """Convolve the lift with a smooth positive bump supported on ``[-width, width]``."""
    if not (0 < width < np.pi):
        raise ValueError("width must lie in (0, pi)")
    src = phi
    min_samples = int(np.ceil(8 * TWO_PI / width))
    if src.n_s < min_samples:
        src = src.resampled(1 << int(np.ceil(np.log2(min_samples))))
    n = src.n_s
    step = TWO_PI / n
    m = np.arange(n)
    tau = np.where(m <= n // 2, m, m - n) * step
    q = (tau / width) ** 2
    kern = np.where(q < 1, np.exp(-1.0 / np.maximum(1 - q, 1e-300)), 0.0)
    kern /= kern.sum()
    g = src.lift - src.thetas
    k = np.fft.rfftfreq(n, d=1.0 / n)
    gh = np.fft.rfft(g) * np.fft.rfft(kern)
    g_w = np.fft.irfft(gh, n)
    lift = src.thetas + g_w
    spec = 1j * k * gh
    if n % 2 == 0:
        spec[-1] = 0
    deriv = 1.0 + np.fft.irfft(spec, n)
    if not np.all(deriv > 0):
        nxt = np.append(lift[1:], lift[0] + TWO_PI)
        prv = np.insert(lift[:-1], 0, lift[-1] - TWO_PI)
        deriv = (nxt - prv) / (2 * step)
    return CircleMap(lift, deriv)


def linear_deformation(phi: CircleMap, t: float) -> CircleMap:
    """``Phi_t = (1 - t) * theta + t * Phi``."""
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if not phi.is_c1:
        raise ValueError("linear deformation needs a C1-tagged map")
    th = phi.thetas
    return CircleMap((1 - t) * th + t * phi.lift, (1 - t) + t * phi.derivative)


def circle_distance(phi: CircleMap, psi: CircleMap, theta=None) -> float:
    """Sup distance between lifts, after the best shift by a multiple of 2 pi."""
    if theta is None:
        theta = phi.thetas if phi.n_s >= psi.n_s else psi.thetas
    d = phi(theta) - psi(theta)
    d -= TWO_PI * np.round(np.mean(d) / TWO_PI)
    return float(np.max(np.abs(d)))


# -- Douady-Earle extension ------------------------------------------------------

def _barycenter(xi: np.ndarray, p: np.ndarray, tol: float, max_iter: int):
    """Conformal barycenters of weighted point sets, one per row of ``p``.

    Damped Newton on ``V(w) = sum p (xi - w)/(1 - conj(w) xi)``, started from the
    Euclidean mean; steps are halved until they stay in the disk and reduce |V|,
    with a recentring step as fallback where Newton stalls.
    """

    def field(w, rows):
        den = 1.0 - np.conj(w)[:, None] * xi[None, :]
        f = (xi[None, :] - w[:, None]) / den
        return np.sum(rows * f, axis=1), den, f

    w = p @ xi
    V, den, f = field(w, p)
    for _ in range(max_iter):
        res = np.abs(V)
        if np.all(res <= tol):
            return w, res
        A = -np.sum(p / den, axis=1)
        B = np.sum(p * f * xi[None, :] / den, axis=1)
        dw = (-V * np.conj(A) + B * np.conj(V)) / (np.abs(A) ** 2 - np.abs(B) ** 2)
        todo = np.flatnonzero(res > tol)
        alpha = np.ones(todo.size)
        for _ in range(50):
            if todo.size == 0:
                break
            cand = w[todo] + alpha * dw[todo]
            inside = np.abs(cand) < 1
            cand = np.where(inside, cand, w[todo])
            Vc, dc, fc = field(cand, p[todo])
            accept = inside & (np.abs(Vc) < res[todo])
            take = todo[accept]
            w[take], V[take], den[take], f[take] = cand[accept], Vc[accept], dc[accept], fc[accept]
            todo, alpha = todo[~accept], alpha[~accept] * 0.5
        if todo.size:
            # Newton made no progress: recentre instead, w <- T_w(V), since V is the
            # mean of the points moved by the disk automorphism sending w to 0
            stuck = todo[res[todo] > 100 * tol]
            if stuck.size == 0:
                return w, np.abs(V)
            v = V[stuck]
            w[stuck] = (w[stuck] + v) / (1.0 + np.conj(w[stuck]) * v)
            V[stuck], den[stuck], f[stuck] = field(w[stuck], p[stuck])
    if np.max(np.abs(V)) > 100 * tol:
        raise BarycenterError("barycenter iteration did not converge", float(np.max(np.abs(V))))
    return w, np.abs(V)


def douady_earle(phi: CircleMap, z, n_quad: int | None = None, tol: float = 1e-13,
                 max_iter: int = 200, chunk: int = 256) -> np.ndarray:
    """Barycenter of the push-forward by ``phi`` of the visual measure seen from ``z``.

    The visual measure is the Poisson kernel of ``z``; the integral is the
    trapezoid rule on resampled lift values.  Unless ``n_quad`` is fixed, the
    number of quadrature nodes grows like ``1/(1 - |z|)`` so that the kernel
    is always resolved by several samples.
    """
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z) >= 1):
        raise ValueError("Douady-Earle extension is evaluated inside the open disk")
    flat = z.ravel()
    if n_quad is None:
        need = 8 * np.pi / (1 - np.abs(flat))
        levels = np.maximum(phi.n_s, 2 ** np.ceil(np.log2(need))).astype(int)
    else:
        levels = np.full(flat.size, int(n_quad))
    out = np.empty_like(flat)
    for n in np.unique(levels):
        src = phi if n == phi.n_s else phi.resampled(int(n))
        e = np.exp(1j * src.thetas)
        xi = np.exp(1j * src.lift)
        idx = np.flatnonzero(levels == n)
        step = max(1, chunk * phi.n_s // int(n))
        for start in range(0, idx.size, step):
            sel = idx[start:start + step]
            zz = flat[sel]
            pk = (1 - np.abs(zz) ** 2)[:, None] / np.abs(e[None, :] - zz[:, None]) ** 2
            pk /= pk.sum(axis=1, keepdims=True)
            out[sel], _ = _barycenter(xi, pk, tol, max_iter)
    return out.reshape(z.shape)


# -- specs and files --------------------------------------------------------------

def mobius_from_spec(text: str) -> MobiusTransform:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 4:
        raise ValueError("mobius spec needs four numbers a,b,c,d")
    return MobiusTransform(np.array(vals).reshape(2, 2))


def circle_map_from_spec(spec: str, n_s: int = 1024) -> CircleMap:
    """Built-ins: ``identity``, ``rotation:<angle>``, ``sine:<A>``, ``mobius:<a>,<b>,<c>,<d>``,
    ``piecewise:<t0>:<p0>,<t1>:<p1>,...``; anything else is read as a lift file."""
    spec = spec.strip()
    name, _, arg = spec.partition(":")
    if name == "identity":
        return identity_map(n_s)
    if name == "rotation":
        return rotation_map(float(arg), n_s)
    if name == "sine":
        return sine_map(float(arg), n_s)
    if name == "mobius":
        return mobius_map(mobius_from_spec(arg), n_s)
    if name == "piecewise":
        pairs = [tuple(float(v) for v in item.split(":")) for item in arg.split(",") if item]
        return piecewise_map(pairs, n_s)
    path = Path(spec)
    if path.exists():
        return read_circle_map(path)
    raise ValueError(f"unknown circle map spec {spec!r}")


def write_circle_map(path, phi: CircleMap) -> None:
    lines = [str(phi.n_s)] + [repr(float(v)) for v in phi.lift]
    Path(path).write_text("\n".join(lines) + "\n")


def read_circle_map(path) -> CircleMap:
    tokens = Path(path).read_text().split()
    n = int(tokens[0])
    vals = np.array([float(v) for v in tokens[1:1 + n]])
    if vals.size != n:
        raise ValueError(f"{path}: expected {n} lift samples, found {vals.size}")
    return CircleMap(vals)
