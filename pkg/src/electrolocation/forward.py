"""Forward solvers: the fish alone and the fish with a small target.

The potential is represented as ::

    u = H + S_G psi + xi D_G psi + S_D phi

with ``H`` the electric-organ dipole, ``psi`` a P1 density on the body ``G``
and ``phi`` a P0 density on the target boundary ``D``.  With this ansatz the
exterior normal current on the body is ``psi`` itself and the Robin jump
``u|+ - u|- = xi du/dnu|+`` holds by construction.  The unknowns solve ::

    (1/2 - K*_G + xi W_G) psi - dS_D phi/dnu        = dH/dnu     on G
    (lambda_n - K*_D) phi - d(S_G + xi D_G) psi/dnu  = dH/dnu     on D

with ``lambda_n = (k_n + 1) / (2 (k_n - 1))``.  Body rows are Galerkin in the
hat basis with a rank-one penalisation fixing the mean of ``psi``; target rows
are Nystrom at the panel midpoints.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import potential as pt
from .geometry import (BoundaryCurve, CurveMesh, FishBody, GeometryError,
                       TWO_PI, discretize, make_ellipse, make_fourier_curve)

INV_2PI = 1.0 / TWO_PI


class SolverError(RuntimeError):
    """The discrete system is singular or too ill-conditioned."""


class ConfigurationError(ValueError):
    """Invalid physical configuration (e.g. target overlapping the fish)."""


# --------------------------------------------------------------------------
# sources

@dataclass(frozen=True)
class SourceField:
    """Dipole field ``H(x) = p . grad G(x - z0)``."""

    z0: tuple = (0.7, 0.0)
    moment: tuple = (1.0, 0.0)

    def potential(self, x) -> np.ndarray:
        r = np.atleast_2d(x) - np.asarray(self.z0)
        return INV_2PI * (r @ np.asarray(self.moment)) / (r ** 2).sum(-1)

    def gradient(self, x) -> np.ndarray:
        p = np.asarray(self.moment, dtype=float)
        r = np.atleast_2d(x) - np.asarray(self.z0)
        r2 = (r ** 2).sum(-1)
        rp = r @ p
        return INV_2PI * (p[None, :] / r2[:, None] - 2.0 * rp[:, None] * r / (r2 ** 2)[:, None])

    def normal_derivative(self, x, nu) -> np.ndarray:
        return (self.gradient(x) * np.atleast_2d(nu)).sum(-1)


@dataclass(frozen=True)
class UniformField:
    """Background potential ``U(x) = -E0 . x`` (electric field ``E0``)."""

    E0: tuple = (1.0, 0.0)

    def potential(self, x) -> np.ndarray:
        return -np.atleast_2d(x) @ np.asarray(self.E0, dtype=float)

    def gradient(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.broadcast_to(-np.asarray(self.E0, dtype=float), x.shape).copy()

    def normal_derivative(self, x, nu) -> np.ndarray:
        return (self.gradient(x) * np.atleast_2d(nu)).sum(-1)


# --------------------------------------------------------------------------
# material and target

@dataclass(frozen=True)
class MaterialSpectrum:
    """Complex conductivities ``k_n = k + i eps omega0 n`` at harmonics ``n``."""

    k: float
    eps: float = 0.0
    omega0: float = 1.0
    harmonics: tuple = (1,)

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("conductivity k must be positive")
        if self.eps < 0:
            raise ValueError("permittivity eps must be non-negative")
        h = tuple(int(n) for n in np.atleast_1d(self.harmonics))
        if not h or min(h) < 1:
            raise ValueError("harmonic indices must be positive integers")
        object.__setattr__(self, "harmonics", h)
        if np.any(np.abs(self.k_n - 1.0) == 0.0):
            raise ValueError("k_n = 1 makes the target invisible (lambda_n undefined)")

    @classmethod
    def equidistributed(cls, k, eps, n_freq, omega0=1.0):
        return cls(k, eps, omega0, tuple(range(1, n_freq + 1)))

    @property
    def N(self) -> int:
        return len(self.harmonics)

    @property
    def frequencies(self) -> np.ndarray:
        return self.omega0 * np.asarray(self.harmonics, dtype=float)

    @property
    def k_n(self) -> np.ndarray:
        return self.k + 1j * self.eps * self.frequencies

    @property
    def lambda_n(self) -> np.ndarray:
        return lambda_of(self.k_n)


def lambda_of(k) -> np.ndarray:
    k = np.asarray(k, dtype=complex)
    return (k + 1.0) / (2.0 * (k - 1.0))


@dataclass(frozen=True)
class TargetSpec:
    """Target geometry, position and material parameters.

    ``shape`` is ``("disk", r)``, ``("ellipse", a, b, angle)`` or
    ``("fourier", cos_coeffs, sin_coeffs)``; ``center`` is the target
    location ``z``.
    """

    shape: tuple
    center: tuple
    k: float = 2.0
    eps: float = 1.0

    @classmethod
    def disk(cls, center, radius, k=2.0, eps=1.0):
        return cls(("disk", float(radius)), tuple(map(float, center)), k, eps)

    @classmethod
    def ellipse(cls, center, a, b, angle=0.0, k=2.0, eps=1.0):
        return cls(("ellipse", float(a), float(b), float(angle)), tuple(map(float, center)), k, eps)

    @classmethod
    def fourier(cls, center, cos_coeffs, sin_coeffs=(), k=2.0, eps=1.0):
        return cls(("fourier", tuple(cos_coeffs), tuple(sin_coeffs)), tuple(map(float, center)), k, eps)

    @property
    def kind(self) -> str:
        return self.shape[0]

    def curve(self) -> BoundaryCurve:
        kind = self.kind
        if kind == "disk":
            return make_ellipse(self.center, (self.shape[1], self.shape[1]), 0.0, name="disk")
        if kind == "ellipse":
            return make_ellipse(self.center, self.shape[1:3], self.shape[3], name="ellipse")
        if kind == "fourier":
            return make_fourier_curve(self.shape[1], self.shape[2], center=self.center, name="fourier")
        raise GeometryError(f"unknown target shape {kind!r}")

    def size(self) -> float:
        """Characteristic size (radius, major semi-axis or max radius)."""
        if self.kind == "disk":
            return self.shape[1]
        if self.kind == "ellipse":
            return max(self.shape[1:3])
        c = self.curve()
        return float(np.linalg.norm(c.polygon(512) - np.asarray(self.center), axis=1).max())

    def moved(self, center) -> "TargetSpec":
        return TargetSpec(self.shape, tuple(map(float, center)), self.k, self.eps)

    def spectrum(self, harmonics, omega0=1.0) -> MaterialSpectrum:
        return MaterialSpectrum(self.k, self.eps, omega0, tuple(harmonics))


# --------------------------------------------------------------------------
# solutions

@dataclass(frozen=True, eq=False)
class ForwardSolution:
    """Densities of one solve plus evaluators for the potential."""

    solver: "FishSolver"
    psi: np.ndarray
    phi: np.ndarray | None = None
    target_mesh: CurveMesh | None = None
    n: int = 0
    k_n: complex | None = None

    @property
    def mesh(self) -> CurveMesh:
        return self.solver.mesh

    def boundary_current(self) -> np.ndarray:
        """Exterior normal current ``du/dnu|+`` at the body nodes."""
        return self.psi

    def sensor_currents(self, fish: FishBody | None = None) -> np.ndarray:
        fish = fish or self.solver.fish
        return pt.p1_evaluate(self.mesh, self.psi, fish.sensor_parameters)

    def potential(self, points) -> np.ndarray:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        s = self.solver
        u = s.source.potential(x) + pt.eval_offboundary("S", s.mesh, self.psi, x, s.q)
        if s.fish.xi:
            u = u + s.fish.xi * pt.eval_offboundary("D", s.mesh, self.psi, x, s.q)
        if self.phi is not None:
            u = u + pt.eval_offboundary("S", self.target_mesh, self.phi, x)
        return u

    def gradient(self, points) -> np.ndarray:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        s = self.solver
        g = s.source.gradient(x) + pt.eval_offboundary("gradS", s.mesh, self.psi, x, s.q)
        if s.fish.xi:
            g = g + s.fish.xi * pt.eval_offboundary("gradD", s.mesh, self.psi, x, s.q)
        if self.phi is not None:
            g = g + pt.eval_offboundary("gradS", self.target_mesh, self.phi, x)
        return g

    def traces(self):
        """``(u|+, u|-)`` at the body nodes from the jump relations."""
        s = self.solver
        m = s.mesh
        base = s.source.potential(m.points) + s.S_self @ self.psi - s.fish.xi * (s.K_self @ self.psi)
        if self.phi is not None:
            base = base + pt.assemble("S", self.target_mesh, m.points).matrix @ self.phi
        half = 0.5 * s.fish.xi * self.psi
        return base + half, base - half

    def to_csv(self, path) -> Path:
        """Dump nodal densities (body, then target) to CSV."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["curve", "t", "x", "y", "re_density", "im_density"])
            for t, p, v in zip(self.mesh.t, self.mesh.points, self.psi):
                v = complex(v)
                w.writerow(["body", f"{t:.16e}", f"{p[0]:.16e}", f"{p[1]:.16e}", f"{v.real:.16e}", f"{v.imag:.16e}"])
            if self.phi is not None:
                for t, p, v in zip(self.target_mesh.t, self.target_mesh.points, self.phi):
                    v = complex(v)
                    w.writerow(["target", f"{t:.16e}", f"{p[0]:.16e}", f"{p[1]:.16e}", f"{v.real:.16e}", f"{v.imag:.16e}"])
        return path


def potential_grid_csv(solution: ForwardSolution, xs, ys, path, mask_inside: bool = True) -> Path:
    """Potential on a tensor grid, written as ``x, y, re_u, im_u`` rows."""
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    keep = np.ones(len(pts), bool)
    if mask_inside:
        body = solution.solver.fish.body
        keep &= body.distance(pts) > 2.0 * solution.mesh.weights.max()
        if solution.target_mesh is not None:
            keep &= solution.target_mesh.curve.distance(pts) > 1e-3
    u = np.full(len(pts), np.nan, dtype=complex)
    u[keep] = solution.potential(pts[keep])
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "re_u", "im_u"])
        for p, v in zip(pts, u):
            w.writerow([f"{p[0]:.10e}", f"{p[1]:.10e}", f"{v.real:.10e}", f"{v.imag:.10e}"])
    return path


# --------------------------------------------------------------------------
# the body operator, assembled once per fish

@dataclass(eq=False)
class FishSolver:
    """Assembled and factorised body system for one fish and mesh size."""

    fish: FishBody
    mesh: CurveMesh
    q: int = 8
    gamma: float = 1.0
    source: SourceField = field(init=False)

    def __post_init__(self):
        f, m = self.fish, self.mesh
        if m.kind != "P1":
            raise TypeError("the body density uses P1 elements")
        self.source = SourceField(tuple(f.dipole), tuple(f.moment))
        self.mass = pt.mass_matrix(m, self.q)
        self.kstar_gal = pt.galerkin_smooth(m, "Kstar", self.q)
        self.W = pt.hypersingular_form(m, self.q).matrix
        self.m_vec = self.mass.sum(1)
        self.operator = 0.5 * self.mass - self.kstar_gal + f.xi * self.W
        self.system = self.operator + self.gamma * np.outer(self.m_vec, self.m_vec)
        cond = np.linalg.cond(self.system)
        if not np.isfinite(cond) or cond > 1e12:
            raise SolverError(f"body system condition number {cond:.3e} exceeds 1e12")
        self.lu = sla.lu_factor(self.system)
        self.rhs = pt.load_vector(m, self.source.normal_derivative, self.q)
        self._background = None
        self._S = None
        self._K = None

    @classmethod
    def build(cls, fish: FishBody, P: int = 256, q: int = 8, gamma: float = 1.0) -> "FishSolver":
        return cls(fish, discretize(fish.body, P, "P1"), q, gamma)

    @property
    def S_self(self):
        if self._S is None:
            self._S = pt.assemble("S", self.mesh, q=self.q).matrix
        return self._S

    @property
    def K_self(self):
        if self._K is None:
            self._K = pt.assemble("K", self.mesh, q=self.q).matrix
        return self._K

    def background(self) -> ForwardSolution:
        if self._background is None:
            psi = sla.lu_solve(self.lu, self.rhs)
            self._background = ForwardSolution(self, psi)
        return self._background

    def background_gradient(self, points) -> np.ndarray:
        """``grad U`` of the fish-alone potential."""
        return self.background().gradient(points)

    # -- target coupling -------------------------------------------------
    def coupling(self, target_mesh: CurveMesh):
        """Blocks that only depend on the target geometry."""
        _check_target(self.fish, target_mesh.curve)
        m = self.mesh
        # body rows: -<dS_D phi / dnu, phi_i>
        B = -pt.galerkin_offboundary("dSdnu_off", m, target_mesh, self.q)
        # target rows: -(dS_G/dnu + xi dD_G/dnu) at the target nodes
        C = -pt.assemble("dSdnu_off", m, target_mesh, self.q).matrix
        if self.fish.xi:
            C = C - self.fish.xi * pt.assemble("dDdnu_off", m, target_mesh, self.q).matrix
        kstar = pt.assemble("Kstar", target_mesh).matrix
        h = self.source.normal_derivative(target_mesh.points, target_mesh.normals)
        return _Coupling(target_mesh, B, C, kstar, h, self)


@dataclass(eq=False)
class _Coupling:
    mesh: CurveMesh
    B: np.ndarray
    C: np.ndarray
    kstar: np.ndarray
    h: np.ndarray
    solver: FishSolver

    def __post_init__(self):
        s = self.solver
        self.AinvB = sla.lu_solve(s.lu, self.B)
        self.Ainvb = sla.lu_solve(s.lu, s.rhs)
        self.schur0 = -self.kstar - self.C @ self.AinvB
        self.rhs_d = self.h - self.C @ self.Ainvb

    def solve(self, k_n: complex, n: int = 0) -> ForwardSolution:
        lam = complex(lambda_of(k_n))
        if abs(lam) <= 0.5:
            warnings.warn(f"|lambda| = {abs(lam):.4f} <= 1/2: the target operator may not be invertible",
                          RuntimeWarning, stacklevel=3)
        Q = self.mesh.size
        schur = self.schur0 + lam * np.eye(Q)
        try:
            phi = np.linalg.solve(schur, self.rhs_d)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"target system singular for k_n = {k_n}") from exc
        psi = self.Ainvb - self.AinvB @ phi
        return ForwardSolution(self.solver, psi, phi, self.mesh, n, complex(k_n))


def _check_target(fish: FishBody, curve: BoundaryCurve):
    poly = curve.polygon(256)
    if np.any(fish.body.contains(poly)) or np.any(curve.contains(fish.body.polygon(512))):
        raise ConfigurationError("target intersects or lies inside the fish body")
    if fish.body.distance(poly).min() < 1e-3:
        raise ConfigurationError("target touches the fish body")


# --------------------------------------------------------------------------
# public solve functions

def solve_background(fish: FishBody, mesh: CurveMesh | None = None, P: int = 256, q: int = 8) -> ForwardSolution:
    """Fish-alone solution ``U``; independent of frequency."""
    if mesh is None:
        mesh = discretize(fish.body, P, "P1")
    return FishSolver(fish, mesh, q).background()


def solve_with_target(fish: FishBody, mesh: CurveMesh | FishSolver, target: TargetSpec | BoundaryCurve,
                      target_mesh: CurveMesh | None = None, k_n: complex = 2.0, Q: int = 128) -> ForwardSolution:
    """Fish plus target at a single complex conductivity ``k_n``."""
    solver = mesh if isinstance(mesh, FishSolver) else FishSolver(fish, mesh)
    if target_mesh is None:
        curve = target.curve() if isinstance(target, TargetSpec) else target
        _check_target(fish, curve)
        target_mesh = discretize(curve, Q, "P0")
    if complex(k_n) == 1.0:
        raise ValueError("k_n = 1 gives an invisible target")
    return solver.coupling(target_mesh).solve(k_n)


def frequency_sweep(fish: FishBody, target: TargetSpec, spectrum: MaterialSpectrum | None = None,
                    solver: FishSolver | None = None, P: int = 256, Q: int = 128) -> list[ForwardSolution]:
    """One solve per harmonic; the body factorisation and coupling blocks are shared."""
    spectrum = spectrum or target.spectrum((1,))
    solver = solver or FishSolver.build(fish, P)
    curve = target.curve()
    _check_target(fish, curve)
    coup = solver.coupling(discretize(curve, Q, "P0"))
    return [coup.solve(k, n) for k, n in zip(spectrum.k_n, spectrum.harmonics)]


@dataclass(frozen=True, eq=False)
class FreeSpaceSolution:
    """Target alone in a background field (no fish)."""

    background: object
    target_mesh: CurveMesh
    phi: np.ndarray

    def perturbation(self, points) -> np.ndarray:
        return pt.eval_offboundary("S", self.target_mesh, self.phi, points)

    def potential(self, points) -> np.ndarray:
        return self.background.potential(np.atleast_2d(points)) + self.perturbation(points)

    def gradient(self, points) -> np.ndarray:
        return self.background.gradient(np.atleast_2d(points)) + pt.eval_offboundary(
            "gradS", self.target_mesh, self.phi, points)


def solve_free_space(target: TargetSpec | BoundaryCurve, k_n: complex, background=None, Q: int = 128) -> FreeSpaceSolution:
    """Transmission problem for a lone target: ``(lambda - K*) phi = dU/dnu``."""
    background = background or UniformField()
    curve = target.curve() if isinstance(target, TargetSpec) else target
    m = discretize(curve, Q, "P0")
    lam = complex(lambda_of(k_n))
    A = lam * np.eye(Q) - pt.assemble("Kstar", m).matrix
    phi = np.linalg.solve(A, background.normal_derivative(m.points, m.normals))
    return FreeSpaceSolution(background, m, phi)
