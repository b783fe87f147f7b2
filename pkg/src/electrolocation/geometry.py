"""Smooth closed curves, their meshes, and the fish body model.

Curves are stored analytically as closures of the parameter ``t`` in
``[0, 2*pi)``; meshes are derived, read-only views holding nodes, normals,
curvatures and quadrature weights.  Orientation is always counterclockwise,
normals point outward and curvature is positive on convex curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi

ArrayFn = Callable[[np.ndarray], np.ndarray]


class GeometryError(ValueError):
    """Raised for degenerate, self-intersecting or otherwise invalid curves."""


def _as_points(v) -> np.ndarray:
    return np.atleast_2d(np.asarray(v, dtype=float))


class BoundaryCurve:
    """A regular, closed, counterclockwise parametrized curve.

    Parameters
    ----------
    x, dx, ddx : callable
        Position and its first two derivatives.  Each maps an array of
        parameters of shape ``(n,)`` to an array of shape ``(n, 2)``.
    name : str
        Free-form label used in reports.
    """

    def __init__(self, x: ArrayFn, dx: ArrayFn, ddx: ArrayFn, name: str = "curve",
                 _check: bool = True):
        self._x, self._dx, self._ddx = x, dx, ddx
        self.name = name
        if _check:
            t = np.linspace(0.0, TWO_PI, 4096, endpoint=False)
            speed = np.linalg.norm(self._dx(t), axis=1)
            scale = np.max(np.linalg.norm(self._x(t) - self._x(t).mean(axis=0), axis=1))
            if not np.all(np.isfinite(speed)) or scale <= 0 or speed.min() <= 1e-12 * max(scale, 1e-300):
                raise GeometryError(f"{name}: degenerate parametrization (|X'| vanishes)")
            if self._signed_area(t) < 0:
                fx, fdx, fddx = self._x, self._dx, self._ddx
                self._x = lambda s: fx(-np.asarray(s, dtype=float))
                self._dx = lambda s: -fdx(-np.asarray(s, dtype=float))
                self._ddx = lambda s: fddx(-np.asarray(s, dtype=float))

    def _signed_area(self, t):
        p, d = self._x(t), self._dx(t)
        return 0.5 * np.mean(p[:, 0] * d[:, 1] - p[:, 1] * d[:, 0]) * TWO_PI

    def __repr__(self):
        return f"BoundaryCurve({self.name!r})"

    def points(self, t) -> np.ndarray:
        return self._x(np.atleast_1d(np.asarray(t, dtype=float)))

    def derivative(self, t) -> np.ndarray:
        return self._dx(np.atleast_1d(np.asarray(t, dtype=float)))

    def second_derivative(self, t) -> np.ndarray:
        return self._ddx(np.atleast_1d(np.asarray(t, dtype=float)))

    def speed(self, t) -> np.ndarray:
        return np.linalg.norm(self.derivative(t), axis=1)

    def tangents(self, t) -> np.ndarray:
        d = self.derivative(t)
        return d / np.linalg.norm(d, axis=1)[:, None]

    def normals(self, t) -> np.ndarray:
        """Outward unit normals (tangent rotated by -pi/2)."""
        tau = self.tangents(t)
        return np.column_stack([tau[:, 1], -tau[:, 0]])

    def curvature(self, t) -> np.ndarray:
        """Signed curvature, positive where the curve bends towards its inside."""
        d, dd = self.derivative(t), self.second_derivative(t)
        return (d[:, 0] * dd[:, 1] - d[:, 1] * dd[:, 0]) / np.linalg.norm(d, axis=1) ** 3

    def area(self) -> float:
        return float(self._signed_area(np.linspace(0.0, TWO_PI, 4096, endpoint=False)))

    def perimeter(self, n: int = 4096) -> float:
        t = np.linspace(0.0, TWO_PI, n, endpoint=False)
        return float(self.speed(t).sum() * TWO_PI / n)

    def centroid(self) -> np.ndarray:
        t = np.linspace(0.0, TWO_PI, 4096, endpoint=False)
        p, d = self.points(t), self.derivative(t)
        cross = p[:, 0] * d[:, 1] - p[:, 1] * d[:, 0]
        a = 0.5 * cross.mean()
        return np.array([(p[:, 0] * cross).mean(), (p[:, 1] * cross).mean()]) / (3.0 * a)

    def polygon(self, n: int = 2048) -> np.ndarray:
        return self.points(np.linspace(0.0, TWO_PI, n, endpoint=False))

    def contains(self, pts, n: int = 2048) -> np.ndarray:
        """Winding-number point-in-curve test on a dense polygon."""
        pts = _as_points(pts)
        poly = self.polygon(n)
        out = np.empty(len(pts), dtype=bool)
        for s in range(0, len(pts), 2048):
            p = pts[s:s + 2048]
            ang = np.arctan2(poly[None, :, 1] - p[:, None, 1], poly[None, :, 0] - p[:, None, 0])
            dang = np.diff(np.concatenate([ang, ang[:, :1]], axis=1), axis=1)
            dang = (dang + np.pi) % TWO_PI - np.pi
            out[s:s + 2048] = np.abs(dang.sum(axis=1)) > np.pi
        return out

    def distance(self, pts, n: int = 4096) -> np.ndarray:
        """Distance from points to the curve.

        Nearest dense sample, then Newton steps on the parameter.
        """
        pts = _as_points(pts)
        tt = np.linspace(0.0, TWO_PI, n, endpoint=False)
        poly = self.points(tt)
        t = np.empty(len(pts))
        for s in range(0, len(pts), 1024):
            p = pts[s:s + 1024]
            t[s:s + 1024] = tt[np.argmin(((p[:, None, :] - poly[None, :, :]) ** 2).sum(-1), axis=1)]
        step = TWO_PI / n
        for _ in range(4):
            r = self.points(t) - pts
            d1 = self.derivative(t)
            g = (r * d1).sum(1)
            h = (d1 * d1).sum(1) + (r * self.second_derivative(t)).sum(1)
            dt = np.where(h > 0, -g / np.where(h > 0, h, 1.0), 0.0)
            t = t + np.clip(dt, -step, step)
        return np.linalg.norm(self.points(t) - pts, axis=1)

    def arclength_parameters(self, count: int, offset: float = 0.0) -> np.ndarray:
        """Parameters of ``count`` points equally spaced in arclength.

        The first point sits at ``t = offset``.
        """
        m = 2048
        t = np.linspace(0.0, TWO_PI, m, endpoint=False)
        c = np.fft.rfft(self.speed(t)) / m
        k = np.arange(1, len(c))
        ck = c[1:] * np.where(k < m / 2, 2.0, 1.0)
        total = TWO_PI * c[0].real

        def s_of(tt):
            tt = np.atleast_1d(tt)[:, None]
            return c[0].real * tt[:, 0] + (ck * (np.exp(1j * k * tt) - 1.0) / (1j * k)).real.sum(1)

        targets = s_of(np.array([offset]))[0] + total * np.arange(count) / count
        # Newton on s(t) - target, started from the uniform-parameter guess
        tt = offset + TWO_PI * np.arange(count) / count
        for _ in range(50):
            step = (s_of(tt) - targets) / self.speed(tt)
            tt = tt - step
            if np.max(np.abs(step)) < 1e-14:
                break
        return np.mod(tt, TWO_PI)

    def transformed(self, rotation: float = 0.0, shift=(0.0, 0.0)) -> "BoundaryCurve":
        """Rigidly moved copy: rotate about the origin, then translate."""
        c, s = np.cos(rotation), np.sin(rotation)
        r = np.array([[c, -s], [s, c]])
        sh = np.asarray(shift, dtype=float)
        x, dx, ddx = self._x, self._dx, self._ddx
        return BoundaryCurve(lambda t: x(t) @ r.T + sh, lambda t: dx(t) @ r.T,
                             lambda t: ddx(t) @ r.T, name=self.name, _check=False)


def make_ellipse(center=(0.0, 0.0), semi_axes=(1.0, 1.0), angle: float = 0.0,
                 name: str = "ellipse") -> BoundaryCurve:
    """Counterclockwise ellipse with semi-axis ``a`` along direction ``angle``."""
    a, b = (float(v) for v in semi_axes)
    if not (a > 0 and b > 0):
        raise GeometryError(f"ellipse semi-axes must be positive, got ({a}, {b})")
    c0 = np.asarray(center, dtype=float)
    ca, sa = np.cos(angle), np.sin(angle)
    r = np.array([[ca, -sa], [sa, ca]])

    def x(t):
        return np.column_stack([a * np.cos(t), b * np.sin(t)]) @ r.T + c0

    def dx(t):
        return np.column_stack([-a * np.sin(t), b * np.cos(t)]) @ r.T

    def ddx(t):
        return np.column_stack([-a * np.cos(t), -b * np.sin(t)]) @ r.T

    return BoundaryCurve(x, dx, ddx, name=name, _check=False)


def _segments_intersect(poly: np.ndarray) -> bool:
    n = len(poly)
    p, q = poly, np.roll(poly, -1, axis=0)
    d = q - p

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    for i in range(n):
        j = np.arange(i + 2, n)
        if i == 0:
            j = j[j != n - 1]
        if len(j) == 0:
            continue
        r = d[i]
        s = d[j]
        qp = p[j] - p[i]
        denom = cross(r, s)
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = cross(qp, s) / denom
            uu = cross(qp, r) / denom
        hit = (np.abs(denom) > 0) & (tt > 0) & (tt < 1) & (uu > 0) & (uu < 1)
        if np.any(hit):
            return True
    return False


def make_fourier_curve(cos_coeffs: Sequence, sin_coeffs: Sequence = (), center=(0.0, 0.0),
                       kind: str = "radial", name: str = "fourier") -> BoundaryCurve:
    """Curve from a truncated Fourier series.

    With ``kind="radial"`` the radius is
    ``r(t) = c0 + sum_m (c_m cos(mt) + s_m sin(mt))`` and the point is
    ``center + r(t) (cos t, sin t)``; ``cos_coeffs = [c0, c1, ...]`` and
    ``sin_coeffs = [s1, s2, ...]``.

    With ``kind="coordinates"`` both arguments have shape ``(2, M)`` and give
    the series of each coordinate: ``X_j(t) = sum_m cos_coeffs[j][m] cos(mt)
    + sin_coeffs[j][m] sin(mt)`` (``m`` from 0; the sine entry at ``m=0`` is
    ignored).
    """
    c0 = np.asarray(center, dtype=float)
    if kind == "radial":
        cc = np.asarray(cos_coeffs, dtype=float).ravel()
        ss = np.asarray(sin_coeffs, dtype=float).ravel()
        if cc.size == 0 or not np.any(cc) and not np.any(ss):
            raise GeometryError("Fourier radius series is identically zero")
        mc = np.arange(cc.size)
        ms = np.arange(1, ss.size + 1)

        def rad(t, order):
            t = np.asarray(t, dtype=float)[:, None]
            # derivative of cos/sin of order `order`, via phase shift
            out = (cc * mc ** order * np.cos(mc * t + order * np.pi / 2)).sum(1)
            if ss.size:
                out = out + (ss * ms ** order * np.sin(ms * t + order * np.pi / 2)).sum(1)
            return out

        def x(t):
            r = rad(t, 0)
            return np.column_stack([r * np.cos(t), r * np.sin(t)]) + c0

        def dx(t):
            r, r1 = rad(t, 0), rad(t, 1)
            return np.column_stack([r1 * np.cos(t) - r * np.sin(t), r1 * np.sin(t) + r * np.cos(t)])

        def ddx(t):
            r, r1, r2 = rad(t, 0), rad(t, 1), rad(t, 2)
            return np.column_stack([(r2 - r) * np.cos(t) - 2 * r1 * np.sin(t),
                                    (r2 - r) * np.sin(t) + 2 * r1 * np.cos(t)])

        ts = np.linspace(0.0, TWO_PI, 10000, endpoint=False)
        if np.min(rad(ts, 0)) <= 0:
            raise GeometryError("Fourier radius must stay positive (curve would self-intersect)")
    elif kind == "coordinates":
        cc = np.atleast_2d(np.asarray(cos_coeffs, dtype=float))
        ss = np.atleast_2d(np.asarray(sin_coeffs, dtype=float)) if len(sin_coeffs) else np.zeros_like(cc)
        if cc.shape[0] != 2 or ss.shape[0] != 2:
            raise GeometryError("coordinate Fourier coefficients need shape (2, M)")
        mc = np.arange(cc.shape[1])
        ms = np.arange(ss.shape[1])

        def series(t, order):
            t = np.asarray(t, dtype=float)[:, None]
            out = np.empty((t.shape[0], 2))
            for j in range(2):
                out[:, j] = (cc[j] * mc ** order * np.cos(mc * t + order * np.pi / 2)).sum(1) + \
                            (ss[j] * ms ** order * np.sin(ms * t + order * np.pi / 2)).sum(1)
            return out

        def x(t):
            return series(t, 0) + c0

        def dx(t):
            return series(t, 1)

        def ddx(t):
            return series(t, 2)
    else:
        raise ValueError(f"unknown Fourier curve kind {kind!r}")

    curve = BoundaryCurve(x, dx, ddx, name=name)
    if _segments_intersect(curve.polygon(512)):
        raise GeometryError(f"{name}: curve self-intersects")
    return curve


@dataclass(frozen=True, eq=False)
class CurveMesh:
    """Nodes, normals, curvatures and weights of a uniformly meshed curve.

    ``kind="P1"`` puts nodes at ``t_i = i h`` (hat-function vertices);
    ``kind="P0"`` puts them at panel midpoints ``t_i = (i + 1/2) h``.
    Weights are ``|X'(t_i)| h`` so that sums approximate arclength integrals
    with the (spectrally accurate) periodic trapezoidal rule.
    """

    curve: BoundaryCurve
    kind: str
    t: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    curvature: np.ndarray
    weights: np.ndarray
    h: float = field(default=0.0)

    @property
    def size(self) -> int:
        return len(self.t)

    @property
    def edges(self) -> np.ndarray:
        """Panel endpoints in parameter space, shape ``(P, 2)``."""
        start = self.t - (0.5 * self.h if self.kind == "P0" else 0.0)
        return np.column_stack([start, start + self.h])

    def perimeter(self) -> float:
        return float(self.weights.sum())

    def area(self) -> float:
        return float(0.5 * np.sum((self.points * self.normals).sum(1) * self.weights))

    def panel_length(self) -> np.ndarray:
        return self.weights


def discretize(curve: BoundaryCurve, P: int, kind: str = "P1") -> CurveMesh:
    """Mesh ``curve`` with ``P`` uniform-in-parameter nodes."""
    if P < 16:
        raise GeometryError(f"discretize needs at least 16 nodes, got P={P}")
    if kind not in ("P0", "P1"):
        raise ValueError(f"element kind must be 'P0' or 'P1', got {kind!r}")
    h = TWO_PI / P
    t = h * (np.arange(P) + (0.5 if kind == "P0" else 0.0))
    pts = curve.points(t)
    d = curve.derivative(t)
    speed = np.linalg.norm(d, axis=1)
    tau = d / speed[:, None]
    nu = np.column_stack([tau[:, 1], -tau[:, 0]])
    for a in (t, pts, nu, tau, speed):
        a.setflags(write=False)
    kappa = curve.curvature(t)
    w = speed * h
    kappa.setflags(write=False)
    w.setflags(write=False)
    return CurveMesh(curve=curve, kind=kind, t=t, points=pts, normals=nu, tangents=tau,
                     curvature=kappa, weights=w, h=h)


@dataclass(frozen=True, eq=False)
class FishBody:
    """Fish body: skin curve, skin impedance, electric organ and sensors.

    The electric organ is a point dipole of moment ``moment`` at ``dipole``.
    Sensors are ``n_sensors`` points on the body curve, equally spaced in
    arclength by default (``sensor_spacing="parameter"`` spaces them
    uniformly in the curve parameter instead).
    """

    body: BoundaryCurve
    xi: float = 0.1
    dipole: tuple = (0.7, 0.0)
    moment: tuple = (1.0, 0.0)
    n_sensors: int = 64
    sensor_spacing: str = "arclength"

    def __post_init__(self):
        if self.xi < 0:
            raise GeometryError(f"skin impedance xi must be >= 0, got {self.xi}")
        if not self.body.contains(np.asarray(self.dipole, dtype=float))[0]:
            raise GeometryError(f"electric organ {self.dipole} is not inside the body")
        if self.n_sensors < 1:
            raise GeometryError("at least one sensor is required")
        if self.sensor_spacing not in ("arclength", "parameter"):
            raise ValueError(f"unknown sensor spacing {self.sensor_spacing!r}")

    @property
    def sensor_parameters(self) -> np.ndarray:
        if self.sensor_spacing == "parameter":
            return TWO_PI * np.arange(self.n_sensors) / self.n_sensors
        return self.body.arclength_parameters(self.n_sensors)

    @property
    def sensors(self) -> np.ndarray:
        return self.body.points(self.sensor_parameters)

    @property
    def sensor_normals(self) -> np.ndarray:
        return self.body.normals(self.sensor_parameters)

    def with_sensors(self, n_sensors: int) -> "FishBody":
        return FishBody(self.body, self.xi, self.dipole, self.moment, n_sensors, self.sensor_spacing)


def default_fish(xi: float = 0.1, n_sensors: int = 64) -> FishBody:
    """Elliptic fish with semi-axes 1 and 0.3 and a unit x-dipole at (0.7, 0)."""
    return FishBody(make_ellipse((0.0, 0.0), (1.0, 0.3), 0.0, name="fish"), xi=xi,
                    dipole=(0.7, 0.0), moment=(1.0, 0.0), n_sensors=n_sensors)
