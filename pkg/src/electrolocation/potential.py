"""Laplace layer potentials on smooth closed curves.

Conventions (``G(x) = log|x| / (2 pi)``)::

    S[s](x)  = int G(x - y) s(y) ds(y)
    D[s](x)  = int nu(y) . (grad G)(x - y) s(y) ds(y)      D[1] = -1 inside, 0 outside
    K*[s](x) = p.v. int (x - y) . nu(x) / (2 pi |x - y|^2) s(y) ds(y)
    K[s](x)  = p.v. int (y - x) . nu(y) / (2 pi |x - y|^2) s(y) ds(y)

so that ``dS/dnu|± = (±1/2 + K*)`` and ``D|± = (±1/2 - K)``.  The positive
hypersingular operator is ``W = -dD/dnu``; on the unit circle it maps
``cos(m t)`` to ``(m/2) cos(m t)``.

P1 meshes carry nodal hat-function coefficients and are integrated panel by
panel with Gauss-Legendre rules; P0 meshes carry point values at panel
midpoints and are integrated with the periodic trapezoidal rule.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import TWO_PI, CurveMesh

INV_2PI = 1.0 / TWO_PI

OPERATORS = ("S", "D", "K", "Kstar", "dSdnu_off", "dDdnu_off", "gradS", "gradD", "W_bilinear")


class SingularityError(ValueError):
    """Raised when a kernel is evaluated at its singular point."""


def green(x, y) -> float:
    """Free-space Green function ``log|x - y| / (2 pi)``."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    if r == 0.0:
        raise SingularityError("green(x, y) is singular at x = y")
    return float(np.log(r) * INV_2PI)


# --------------------------------------------------------------------------
# quadrature rules

@lru_cache(maxsize=None)
def gauss01(q: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_log01(q: int):
    """Weights on the Gauss nodes integrating ``log(u) f(u)`` over [0, 1].

    Exact for polynomials of degree < q (moments ``-1/(m+1)^2``).
    """
    u, _ = gauss01(q)
    m = np.arange(q)
    vander = u[None, :] ** m[:, None]
    moments = -1.0 / (m + 1.0) ** 2
    return u, np.linalg.solve(vander, moments)


def _log_double_primitive(v):
    # Phi'' = log|v|, Phi(0) = 0
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    nz = v != 0
    out[nz] = 0.5 * v[nz] ** 2 * np.log(np.abs(v[nz])) - 0.75 * v[nz] ** 2
    return out


def log_rect_integral(a, b, c, d):
    """``int_a^b int_c^d log|t - s| ds dt`` in closed form."""
    P = _log_double_primitive
    return P(b - c) - P(a - c) - P(b - d) + P(a - d)


# --------------------------------------------------------------------------
# kernels, all vectorised over (observation, source) pairs

def _cplx(v):
    v = np.asarray(v, dtype=float)
    return v[..., 0] + 1j * v[..., 1]


def kernel(op: str, x, y, nx=None, ny=None):
    """Raw kernel values for observation points ``x`` and sources ``y``.

    Gradient kernels return an array with a trailing axis of length 2.
    Coincident points produce inf/nan; callers patch them.  Uses the complex
    form ``R = x - y``: ``(x - y)/|x - y|^2`` is ``conj(1/R)`` and the double
    layer is ``Re(nu_y / R)``.
    """
    R = _cplx(x)[:, None] - _cplx(y)[None, :]
    return _kernel_R(op, R, None if nx is None else _cplx(nx), None if ny is None else _cplx(ny))


def _kernel_R(op, R, nxc, nyc):
    with np.errstate(divide="ignore", invalid="ignore"):
        if op == "S":
            return INV_2PI * np.log(np.abs(R))
        inv = 1.0 / R
        if op == "D":
            return INV_2PI * (nyc[None, :] * inv).real
        if op == "K":
            return -INV_2PI * (nyc[None, :] * inv).real
        if op in ("Kstar", "dSdnu_off"):
            return INV_2PI * (nxc[:, None] * inv).real
        if op == "gradS":
            return INV_2PI * np.stack([inv.real, -inv.imag], -1)
        if op in ("gradD", "dDdnu_off"):
            g = -INV_2PI * nyc[None, :] * inv * inv
            if op == "gradD":
                return np.stack([g.real, -g.imag], -1)
            return (g * nxc[:, None]).real
    raise ValueError(f"unknown kernel {op!r}")


# --------------------------------------------------------------------------
# source quadratures

@dataclass(frozen=True, eq=False)
class PanelQuadrature:
    """Quadrature points on a P1 mesh with hat-function bookkeeping."""

    mesh: CurveMesh
    q: int
    t: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray      # arclength weights |X'| dt
    u: np.ndarray            # local coordinate in [0, 1] of each point

    @classmethod
    def build(cls, mesh: CurveMesh, q: int = 8) -> "PanelQuadrature":
        u, gw = gauss01(q)
        a = mesh.edges[:, 0]
        t = (a[:, None] + mesh.h * u[None, :]).ravel()
        c = mesh.curve
        return cls(mesh, q, t, c.points(t), c.normals(t),
                   c.speed(t) * np.tile(gw, mesh.size) * mesh.h, np.tile(u, mesh.size))

    def contract(self, vals: np.ndarray) -> np.ndarray:
        """Integrate ``vals`` (``(..., n_q)`` incl. weights) against each hat function."""
        P, q = self.mesh.size, self.q
        u = self.u[:q]
        v = vals.reshape(vals.shape[:-1] + (P, q))
        left = v @ (1.0 - u)
        right = v @ u
        return left + np.roll(right, 1, axis=-1)

    def interpolate(self, coeffs: np.ndarray) -> np.ndarray:
        """Values at the quadrature points of the P1 function with nodal ``coeffs``."""
        P, q = self.mesh.size, self.q
        c = np.asarray(coeffs)
        u = self.u[:q]
        left = c[..., :, None] * (1.0 - u)
        right = np.roll(c, -1, axis=-1)[..., :, None] * u
        return (left + right).reshape(c.shape[:-1] + (P * q,))


def p1_evaluate(mesh: CurveMesh, coeffs, t) -> np.ndarray:
    """Evaluate a P1 function on ``mesh`` at curve parameters ``t``."""
    t = np.mod(np.asarray(t, dtype=float), TWO_PI)
    s = t / mesh.h
    j = np.floor(s).astype(int) % mesh.size
    u = s - np.floor(s)
    c = np.asarray(coeffs)
    return c[..., j] * (1.0 - u) + c[..., (j + 1) % mesh.size] * u


def p1_interpolation_matrix(mesh: CurveMesh, t) -> np.ndarray:
    t = np.mod(np.asarray(t, dtype=float), TWO_PI)
    s = t / mesh.h
    j = np.floor(s).astype(int) % mesh.size
    u = s - np.floor(s)
    m = np.zeros((len(t), mesh.size))
    m[np.arange(len(t)), j] += 1.0 - u
    m[np.arange(len(t)), (j + 1) % mesh.size] += u
    return m


def trig_resample(values: np.ndarray, t0: float, m_new: int, t0_new: float) -> np.ndarray:
    """Trigonometric interpolation of periodic samples onto a finer uniform grid.

    ``values`` (last axis) are samples at ``t0 + j 2pi/n``; the result holds the
    interpolant at ``t0_new + j 2pi/m_new``.
    """
    v = np.asarray(values)
    n = v.shape[-1]
    f = np.fft.fft(v, axis=-1) / n
    k = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0:
        # split the Nyquist mode symmetrically
        ny = n // 2
        f = np.concatenate([f, f[..., ny:ny + 1] * 0.5], axis=-1)
        f[..., ny] *= 0.5
        k = np.concatenate([k, [ny]])
        k[ny] = -ny
    tt = t0_new + TWO_PI * np.arange(m_new) / m_new
    phase = np.exp(1j * np.outer(k, tt - t0))
    out = f @ phase
    if np.isrealobj(v):
        return out.real
    return out


# --------------------------------------------------------------------------
# kernel matrices

@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Discrete operator: ``matrix @ density_dof`` gives values at observation points."""

    op: str
    source: CurveMesh
    matrix: np.ndarray
    obs: object = None

    def __matmul__(self, other):
        return self.matrix @ other

    @property
    def shape(self):
        return self.matrix.shape


def _obs_arrays(obs, source):
    if obs is None:
        return source.points, source.normals, True
    if isinstance(obs, CurveMesh):
        return obs.points, obs.normals, obs is source
    pts = np.atleast_2d(np.asarray(obs, dtype=float))
    return pts, None, False


def assemble(op: str, source: CurveMesh, obs=None, q: int = 8) -> KernelMatrix:
    """Collocation matrix of a layer operator.

    ``obs=None`` (or ``obs is source``) gives the on-boundary operator at the
    source nodes, with singular quadrature for ``S`` and the smooth-curve
    limit ``kappa / (4 pi)`` on the diagonal of ``K`` and ``K*``.  ``D`` on the
    boundary means its principal value ``-K``.  Otherwise ``obs`` is a mesh of
    another curve (normals available for the ``*_off`` normal derivatives) or
    an array of points; off-boundary values use near-field refinement.
    """
    if op not in OPERATORS or op == "W_bilinear":
        raise ValueError(f"assemble does not handle operator {op!r}")
    x, nx, on_self = _obs_arrays(obs, source)
    if op in ("dSdnu_off", "dDdnu_off", "Kstar") and nx is None:
        raise ValueError(f"{op} needs observation normals; pass a CurveMesh")
    if on_self:
        if op in ("gradS", "gradD", "dSdnu_off", "dDdnu_off"):
            raise ValueError(f"{op} is not defined on the source curve itself; use the trace relations")
        if op == "D":
            m = -_self_smooth(source, "K", q)
        elif op in ("K", "Kstar"):
            m = _self_smooth(source, op, q)
        else:
            m = _self_single_layer(source, q)
        return KernelMatrix(op, source, m, obs)
    if op in ("K", "Kstar"):
        raise ValueError(f"{op} is an on-boundary operator; off the curve use dSdnu_off or D")
    m = _offboundary_matrix(op, source, x, nx, q)
    return KernelMatrix(op, source, m, obs)


def _self_smooth(mesh: CurveMesh, op: str, q: int) -> np.ndarray:
    """K or K* at the mesh nodes (smooth kernels, limit value on coincidence)."""
    x, nx = mesh.points, mesh.normals
    limit = mesh.curvature / (4.0 * np.pi)
    if mesh.kind == "P0":
        k = kernel(op, x, x, nx, mesh.normals)
        np.fill_diagonal(k, limit)
        return k * mesh.weights[None, :]
    quad = PanelQuadrature.build(mesh, q)
    k = kernel(op, x, quad.points, nx, quad.normals)
    # nodes coincide with no Gauss point (open rule), the kernel is smooth
    return quad.contract(k * quad.weights[None, :])


def _kress_weights(n_half: int, n: int) -> np.ndarray:
    """Kress log-quadrature weights R_j for target node 0 on 2*n_half equispaced nodes."""
    j = np.arange(n)
    tj = TWO_PI * j / n
    m = np.arange(1, n_half)
    r = -(TWO_PI / n_half) * (np.cos(np.outer(tj, m)) / m).sum(1)
    r -= np.pi / n_half ** 2 * np.cos(n_half * tj)
    return r


def _self_single_layer(mesh: CurveMesh, q: int) -> np.ndarray:
    curve = mesh.curve
    P = mesh.size
    if mesh.kind == "P0":
        # Kress product quadrature: log|x-y| = 1/2 log(4 sin^2((t-s)/2)) + smooth
        if P % 2:
            raise ValueError("spectral single layer on P0 meshes needs an even node count")
        rw = _kress_weights(P // 2, P)
        t = mesh.t
        idx = (np.arange(P)[None, :] - np.arange(P)[:, None]) % P
        r_mat = rw[idx]
        dt = t[None, :] - t[:, None]
        diff = mesh.points[:, None, :] - mesh.points[None, :, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            smooth = 0.5 * np.log((diff ** 2).sum(-1) / (4.0 * np.sin(dt / 2.0) ** 2))
        np.fill_diagonal(smooth, np.log(mesh.weights / mesh.h))
        speed = mesh.weights / mesh.h
        m = 0.5 * r_mat * speed[None, :] + smooth * mesh.weights[None, :]
        return INV_2PI * m
    quad = PanelQuadrature.build(mesh, q)
    k = kernel("S", mesh.points, quad.points)
    m = quad.contract(k * quad.weights[None, :])
    # redo the two panels touching each node with a log-split rule
    u, gw = gauss01(q)
    ul, wl = gauss_log01(q)
    h = mesh.h
    for side in (0, 1):
        # side 0: panel i = [t_i, t_i + h]; side 1: panel i-1 = [t_i - h, t_i]
        panel = (np.arange(P) - side) % P
        sgn = 1.0 if side == 0 else -1.0
        ti = mesh.t
        # standard contribution to subtract
        pts_std = quad.points.reshape(P, q, 2)[panel]
        w_std = quad.weights.reshape(P, q)[panel]
        u_std = np.tile(u, (P, 1))
        k_std = 0.5 * INV_2PI * np.log(((mesh.points[:, None, :] - pts_std) ** 2).sum(-1))
        lo_std = (k_std * w_std * (1.0 - u_std)).sum(1)
        hi_std = (k_std * w_std * u_std).sum(1)
        # parametrise the panel from the singular node: t = t_i + sgn * h * v
        tv = ti[:, None] + sgn * h * u[None, :]
        xv = curve.points(tv.ravel()).reshape(P, q, 2)
        sv = curve.speed(tv.ravel()).reshape(P, q)
        d = np.sqrt(((mesh.points[:, None, :] - xv) ** 2).sum(-1))
        smooth = np.log(d / (h * u[None, :]))
        # hat weight of node i along the panel is (1 - v); the other node gets v
        tv_l = ti[:, None] + sgn * h * ul[None, :]
        sv_l = curve.speed(tv_l.ravel()).reshape(P, q)
        f_i = lambda vv, s: s * (1.0 - vv)
        f_o = lambda vv, s: s * vv
        # log|t - t_i| = log h + log v
        own = h * (np.log(h) * (gw * f_i(u, sv)).sum(1) + (wl * f_i(ul, sv_l)).sum(1) + (gw * f_i(u, sv) * smooth).sum(1))
        oth = h * (np.log(h) * (gw * f_o(u, sv)).sum(1) + (wl * f_o(ul, sv_l)).sum(1) + (gw * f_o(u, sv) * smooth).sum(1))
        other = (np.arange(P) + (1 if side == 0 else -1)) % P
        rows = np.arange(P)
        if side == 0:
            # panel i: node i is its left end (hat 1 - u), node i+1 its right end
            m[rows, rows] += INV_2PI * own - lo_std
            m[rows, other] += INV_2PI * oth - hi_std
        else:
            # panel i-1: node i-1 left end (1 - u), node i right end (u)
            m[rows, rows] += INV_2PI * own - hi_std
            m[rows, other] += INV_2PI * oth - lo_std
    return m


# --------------------------------------------------------------------------
# off-boundary evaluation

def _reject_on_curve(source: CurveMesh, x) -> None:
    d = np.full(len(x), np.inf)
    for s in range(0, len(x), 1024):
        d[s:s + 1024] = np.sqrt(((x[s:s + 1024, None, :] - source.points[None]) ** 2).sum(-1)).min(1)
    close = d < 2.0 * source.weights.max()
    if close.any():
        scale = np.abs(source.points).max() + 1.0
        if np.any(source.curve.distance(x[close]) < 1e-12 * scale):
            raise SingularityError("observation point lies on the source curve; use the trace relations")


def _offboundary_matrix(op: str, source: CurveMesh, x, nx, q: int) -> np.ndarray:
    _reject_on_curve(source, x)
    if source.kind == "P0":
        return _offboundary_p0(op, source, x, nx)
    return _offboundary_p1(op, source, x, nx, q)


def _offboundary_p1(op, mesh, x, nx, q, chunk=512):
    quad = PanelQuadrature.build(mesh, q)
    grad = op in ("gradS", "gradD")
    shape = (len(x), mesh.size, 2) if grad else (len(x), mesh.size)
    out = np.empty(shape)
    for s in range(0, len(x), chunk):
        xs = x[s:s + chunk]
        ns = None if nx is None else nx[s:s + chunk]
        k = kernel(op, xs, quad.points, ns, quad.normals)
        if grad:
            kw = k * quad.weights[None, :, None]
            out[s:s + chunk] = np.stack([quad.contract(kw[..., 0]), quad.contract(kw[..., 1])], -1)
        else:
            out[s:s + chunk] = quad.contract(k * quad.weights[None, :])
    _refine_near_p1(op, mesh, x, nx, q, quad, out)
    return out


def _panel_distance(mesh, quad, x):
    pts = quad.points.reshape(mesh.size, quad.q, 2)
    d = np.sqrt(((x[:, None, None, :] - pts[None]) ** 2).sum(-1)).min(-1)
    return d


def _refine_near_p1(op, mesh, x, nx, q, quad, out, max_depth=14):
    grad = op in ("gradS", "gradD")
    curve = mesh.curve
    u, gw = gauss01(q)
    for s in range(0, len(x), 256):
        d = _panel_distance(mesh, quad, x[s:s + 256])
        near = np.argwhere(d < 3.0 * mesh.weights.max())
        for ip, jp in near:
            i = s + ip
            xi = x[i:i + 1]
            ni = None if nx is None else nx[i:i + 1]
            if d[ip, jp] < 1e-13:
                raise SingularityError(f"observation point {xi[0]} lies on the source curve")
            # remove the standard contribution of panel jp
            sl = slice(jp * q, (jp + 1) * q)
            k0 = kernel(op, xi, quad.points[sl], ni, quad.normals[sl])[0]
            w0 = quad.weights[sl]
            uu = quad.u[sl]
            lo, hi = _refined_panel(op, curve, xi, ni, mesh.edges[jp, 0], mesh.h, u, gw, max_depth)
            if grad:
                std_lo = (k0 * (w0 * (1 - uu))[:, None]).sum(0)
                std_hi = (k0 * (w0 * uu)[:, None]).sum(0)
            else:
                std_lo = (k0 * w0 * (1 - uu)).sum()
                std_hi = (k0 * w0 * uu).sum()
            out[i, jp] += lo - std_lo
            out[i, (jp + 1) % mesh.size] += hi - std_hi


def _refined_panel(op, curve, xi, ni, a, h, u, gw, max_depth):
    """Integrate over the parameter panel [a, a+h] by recursive bisection.

    Returns the integrals against the two hat functions (1-v) and v.
    """
    stack = [(0.0, 1.0, 0)]
    lo = 0.0
    hi = 0.0
    while stack:
        v0, v1, depth = stack.pop()
        vv = v0 + (v1 - v0) * u
        t = a + h * vv
        pts = curve.points(t)
        dist = np.sqrt(((pts - xi) ** 2).sum(-1)).min()
        length = curve.speed(t).max() * h * (v1 - v0)
        if dist < 3.0 * length and depth < max_depth:
            mid = 0.5 * (v0 + v1)
            stack.append((v0, mid, depth + 1))
            stack.append((mid, v1, depth + 1))
            continue
        k = kernel(op, xi, pts, ni, curve.normals(t))[0]
        w = curve.speed(t) * gw * h * (v1 - v0)
        if k.ndim == 2:
            lo = lo + (k * (w * (1 - vv))[:, None]).sum(0)
            hi = hi + (k * (w * vv)[:, None]).sum(0)
        else:
            lo = lo + (k * w * (1 - vv)).sum()
            hi = hi + (k * w * vv).sum()
    return lo, hi


def _offboundary_p0(op, mesh, x, nx, chunk=1024):
    """Trapezoidal rule; points close to the curve use an upsampled rule.

    The upsampled matrix acts on the original midpoint values through
    trigonometric interpolation, so the result is still ``(n_obs, P)``.
    """
    grad = op in ("gradS", "gradD")
    P = mesh.size
    shape = (len(x), P, 2) if grad else (len(x), P)
    out = np.empty(shape)
    d = np.empty(len(x))
    for s in range(0, len(x), chunk):
        xs = x[s:s + chunk]
        ns = None if nx is None else nx[s:s + chunk]
        k = kernel(op, xs, mesh.points, ns, mesh.normals)
        out[s:s + chunk] = k * (mesh.weights[None, :, None] if grad else mesh.weights[None, :])
        d[s:s + chunk] = np.sqrt(((xs[:, None, :] - mesh.points[None]) ** 2).sum(-1)).min(1)
    spacing = mesh.weights.max()
    cand = np.flatnonzero(d < 4.0 * spacing)
    if len(cand):
        # node distances overestimate the true distance; resample the curve finely
        t_fine = np.linspace(0.0, TWO_PI, 32 * P, endpoint=False)
        y_fine = mesh.curve.points(t_fine)
        for s in range(0, len(cand), 64):
            cs = cand[s:s + 64]
            d[cs] = np.sqrt(((x[cs, None, :] - y_fine[None]) ** 2).sum(-1)).min(1)
    need = d < 4.0 * spacing
    if np.any(need):
        if np.any(d[need] < 1e-13):
            raise SingularityError("observation point lies on the source curve")
        factor = np.ceil(np.log2(4.0 * spacing / d[need])).astype(int)
        factor = np.clip(factor, 1, 8)
        if np.any(d[need] < 4.0 * spacing / 2 ** 8):
            warnings.warn("points extremely close to a P0 source curve; near-field accuracy is limited",
                          RuntimeWarning, stacklevel=3)
        idx = np.flatnonzero(need)
        for f in np.unique(factor):
            sel = idx[factor == f]
            m_new = P * 2 ** f
            h_new = TWO_PI / m_new
            t_new = h_new * (np.arange(m_new) + 0.5)
            curve = mesh.curve
            y, ny = curve.points(t_new), curve.normals(t_new)
            w = curve.speed(t_new) * h_new
            # interpolation matrix from P midpoint values to m_new midpoint values
            interp = trig_resample(np.eye(P), mesh.t[0], m_new, t_new[0]).T  # (m_new, P)
            k = kernel(op, x[sel], y, None if nx is None else nx[sel], ny)
            if grad:
                out[sel] = np.einsum("ijc,j,jp->ipc", k, w, interp)
            else:
                out[sel] = (k * w[None, :]) @ interp
    return out


def eval_offboundary(op: str, source: CurveMesh, density, points, q: int = 8, chunk: int = 2048) -> np.ndarray:
    """Layer potential (``S``, ``D``) or its gradient (``gradS``, ``gradD``) at points.

    Far points use the plain source quadrature as a direct sum; points near
    the curve go through the refined matrix path.
    """
    if op not in ("S", "D", "gradS", "gradD"):
        raise ValueError(f"eval_offboundary handles S, D, gradS, gradD, not {op!r}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dens = np.asarray(density)
    if source.kind == "P1":
        quad = PanelQuadrature.build(source, q)
        yq, nq = quad.points, quad.normals
        cq = np.moveaxis(quad.interpolate(np.moveaxis(dens, 0, -1)), -1, 0) * (
            quad.weights.reshape((-1,) + (1,) * (dens.ndim - 1)))
        thr = 3.0 * source.weights.max()
    else:
        yq, nq = source.points, source.normals
        cq = dens * source.weights.reshape((-1,) + (1,) * (dens.ndim - 1))
        thr = 4.0 * source.weights.max()
    grad = op.startswith("grad")
    shape = (len(pts),) + dens.shape[1:] + ((2,) if grad else ())
    out = np.zeros(shape, dtype=np.result_type(dens, float))
    near = np.zeros(len(pts), bool)
    yc, nyc = _cplx(yq), _cplx(nq)
    for s in range(0, len(pts), chunk):
        R = _cplx(pts[s:s + chunk])[:, None] - yc[None, :]
        d = np.abs(R).min(1)
        nr = d < thr
        near[s:s + chunk] = nr
        k = _kernel_R(op, R[~nr], None, nyc)
        idx = np.arange(s, min(s + chunk, len(pts)))[~nr]
        if grad:
            out[idx] = np.einsum("ijc,j...->i...c", k, cq)
        else:
            out[idx] = np.tensordot(k, cq, axes=(1, 0))
    if near.any():
        m = _offboundary_matrix(op, source, pts[near], None, q)
        if grad:
            out[near] = np.einsum("ipc,p...->i...c", m, dens)
        else:
            out[near] = np.tensordot(m, dens, axes=(1, 0))
    return out


# --------------------------------------------------------------------------
# Galerkin forms on P1 meshes

def _require_p1(mesh: CurveMesh, what: str):
    if mesh.kind != "P1":
        raise TypeError(f"{what} needs a continuous (P1) mesh, got {mesh.kind}")


def mass_matrix(mesh: CurveMesh, q: int = 8) -> np.ndarray:
    """``M_ij = int phi_i phi_j ds`` for the hat basis."""
    _require_p1(mesh, "mass_matrix")
    quad = PanelQuadrature.build(mesh, q)
    P = mesh.size
    # each row of the expanded basis has two entries: (1 - u) on node J, u on node J+1
    basis = np.zeros((P * q, P))
    jp = np.repeat(np.arange(P), q)
    basis[np.arange(P * q), jp] = 1.0 - quad.u
    basis[np.arange(P * q), (jp + 1) % P] += quad.u
    return basis.T @ (basis * quad.weights[:, None])


def load_vector(mesh: CurveMesh, f, q: int = 8) -> np.ndarray:
    """``b_i = int f phi_i ds`` with ``f`` a callable of (points, normals)."""
    _require_p1(mesh, "load_vector")
    quad = PanelQuadrature.build(mesh, q)
    vals = np.asarray(f(quad.points, quad.normals))
    return quad.contract(vals * quad.weights)


def galerkin_smooth(mesh: CurveMesh, op: str = "Kstar", q: int = 8, chunk: int = 256) -> np.ndarray:
    """``A_ij = int phi_i (op phi_j) ds`` for ``op`` in {K, Kstar}."""
    _require_p1(mesh, "galerkin_smooth")
    quad = PanelQuadrature.build(mesh, q)
    n = len(quad.t)
    limit = mesh.curve.curvature(quad.t) / (4.0 * np.pi)
    rows = np.empty((n, mesh.size))
    for s in range(0, n, chunk):
        sl = slice(s, min(s + chunk, n))
        k = kernel(op, quad.points[sl], quad.points, quad.normals[sl], quad.normals)
        ii = np.arange(sl.start, sl.stop)
        k[ii - s, ii] = limit[ii]
        rows[sl] = quad.contract(k * quad.weights[None, :])
    return quad.contract((rows * quad.weights[:, None]).T).T


def parameter_log_matrix(mesh: CurveMesh, q: int = 8, chunk: int = 256) -> np.ndarray:
    """``C_IJ = int_I int_J log|X(t) - X(s)| dt ds`` over parameter panels."""
    _require_p1(mesh, "parameter_log_matrix")
    u, gw = gauss01(q)
    P, h = mesh.size, mesh.h
    a = mesh.edges[:, 0]
    t = (a[:, None] + h * u[None, :]).ravel()
    x = mesh.curve.points(t)
    wq = np.tile(gw, P) * h
    c = np.empty((P, P))
    for s in range(0, P, max(1, chunk // q)):
        e = min(P, s + max(1, chunk // q))
        xs = x[s * q:e * q]
        with np.errstate(divide="ignore"):
            lg = 0.5 * np.log(((xs[:, None, :] - x[None, :, :]) ** 2).sum(-1))
        lg = lg * wq[s * q:e * q, None] * wq[None, :]
        c[s:e] = lg.reshape(e - s, q, P, q).sum(axis=(1, 3))
    # near pairs: analytic log|t - s| plus a smooth remainder
    for off in (-1, 0, 1):
        I = np.arange(P)
        J = (I + off) % P
        ti = a[I][:, None] + h * u[None, :]          # (P, q)
        sj = a[I][:, None] + off * h + h * u[None, :]  # unwrapped source parameters
        xi = mesh.curve.points(ti.ravel()).reshape(P, q, 2)
        xj = mesh.curve.points(sj.ravel()).reshape(P, q, 2)
        dt = ti[:, :, None] - sj[:, None, :]
        dx = np.sqrt(((xi[:, :, None, :] - xj[:, None, :, :]) ** 2).sum(-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            rem = np.log(dx / np.abs(dt))
        if off == 0:
            sp = mesh.curve.speed(ti.ravel()).reshape(P, q)
            di = np.arange(q)
            rem[:, di, di] = np.log(sp)
        rem_int = (rem * (gw[None, :, None] * gw[None, None, :])).sum(axis=(1, 2)) * h * h
        exact = log_rect_integral(0.0, h, off * h, off * h + h)
        c[I, J] = exact + rem_int
    return 0.5 * (c + c.T)


def hypersingular_form(mesh: CurveMesh, q: int = 8) -> KernelMatrix:
    """Galerkin matrix of ``W = -dD/dnu`` in the hat basis.

    Uses ``<W v1, v2> = -int int G(x - y) v1'(x) v2'(y)`` with curvilinear
    derivatives; in the curve parameter the arclength Jacobians cancel, so
    only the parameter-space log integrals are needed.  Symmetric, positive
    semi-definite, and zero on constants.
    """
    _require_p1(mesh, "hypersingular_form")
    P, h = mesh.size, mesh.h
    c = parameter_log_matrix(mesh, q)
    e = np.zeros((P, P))
    e[np.arange(P), np.arange(P)] = -1.0
    e[np.arange(P), (np.arange(P) + 1) % P] = 1.0
    w = -(INV_2PI / h ** 2) * (e.T @ c @ e)
    w = 0.5 * (w + w.T)
    return KernelMatrix("W_bilinear", mesh, w)


def galerkin_offboundary(op: str, test_mesh: CurveMesh, source: CurveMesh, q: int = 8) -> np.ndarray:
    """``A_ij = int phi_i(x) (op s_j)(x) ds(x)`` for ``x`` on ``test_mesh`` (P1)
    and sources on another curve."""
    _require_p1(test_mesh, "galerkin_offboundary")
    quad = PanelQuadrature.build(test_mesh, q)
    vals = _offboundary_matrix(op, source, quad.points, quad.normals, q)
    return quad.contract((vals * quad.weights[:, None]).T).T


def grad_z_dGdnu(x, nu, z) -> np.ndarray:
    """Gradient in ``z`` of ``dG/dnu_x (x - z)``, shape ``(len(x), 2)``."""
    r = np.atleast_2d(x) - np.asarray(z, dtype=float)
    nu = np.atleast_2d(nu)
    r2 = (r ** 2).sum(-1)
    rn = (r * nu).sum(-1)
    return -INV_2PI * (nu / r2[:, None] - 2.0 * rn[:, None] * r / (r2 ** 2)[:, None])
