"""Polarization tensors and target characterization.

For an ellipse with semi-axes ``a`` (along ``e1``) and ``b`` the first-order
polarization tensor at contrast ``k`` is ::

    M = (k - 1) pi a b  R diag((a+b)/(a + k b), (a+b)/(b + k a)) R^T

which reduces to ``2 pi r^2 (k-1)/(k+1) I`` for a disk.  Its eigenvalues tend
to ``pi a (a+b)`` and ``pi b (a+b)`` as ``|k| -> infinity``, the basis of the
semi-axis formulas below.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from . import potential as pt


class SingularContrastError(ValueError):
    pass


class RankDeficiencyError(ValueError):
    pass


class InvalidTensorError(ValueError):
    pass


@dataclass(frozen=True)
class PolarizationTensor:
    """Complex symmetric 2x2 tensor stored as ``(m11, m12, m22)``."""

    m11: complex
    m12: complex
    m22: complex
    n: int = 0
    provenance: str = "analytic"

    @classmethod
    def from_matrix(cls, M, n=0, provenance="estimated"):
        M = np.asarray(M, dtype=complex)
        return cls(complex(M[0, 0]), complex(0.5 * (M[0, 1] + M[1, 0])), complex(M[1, 1]), n, provenance)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.m11, self.m12], [self.m12, self.m22]], dtype=complex)

    def scaled(self, s: float) -> "PolarizationTensor":
        return PolarizationTensor(self.m11 * s, self.m12 * s, self.m22 * s, self.n, self.provenance)


def _rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def ellipse_eigenvalues(a, b, k):
    """``(tau_1, tau_2)``: tensor eigenvalues along the ``a`` and ``b`` axes."""
    k = np.asarray(k, dtype=complex)
    d1 = a + k * b
    d2 = b + k * a
    if np.any(np.abs(d1) == 0) or np.any(np.abs(d2) == 0):
        raise SingularContrastError(f"contrast k = {k} makes a tensor denominator vanish")
    area = np.pi * a * b
    return (k - 1.0) * area * (a + b) / d1, (k - 1.0) * area * (a + b) / d2


def analytic_pt(shape, k_n: complex, n: int = 0) -> PolarizationTensor:
    """Tensor of a disk ``("disk", r)`` or ellipse ``("ellipse", a, b, angle)``."""
    kind = shape[0]
    if kind == "disk":
        a = b = float(shape[1])
        angle = 0.0
    elif kind == "ellipse":
        a, b, angle = float(shape[1]), float(shape[2]), float(shape[3]) if len(shape) > 3 else 0.0
    else:
        raise ValueError(f"no analytic polarization tensor for shape {kind!r}")
    if a <= 0 or b <= 0:
        raise ValueError("semi-axes must be positive")
    t1, t2 = ellipse_eigenvalues(a, b, k_n)
    R = _rotation(angle)
    M = R @ np.diag([t1, t2]) @ R.T
    return PolarizationTensor.from_matrix(M, n, provenance=kind)


# --------------------------------------------------------------------------
# disk route

@dataclass
class CharacterizationResult:
    """Estimated size and material parameters with fit diagnostics."""

    k: float
    eps: float
    alpha: float | None = None
    a: float | None = None
    b: float | None = None
    angle: float | None = None
    residual: float = 0.0
    converged: bool = True
    iterations: int = 0
    k_trace: np.ndarray | None = None
    info: dict = field(default_factory=dict)


def model_vector(fish, background, z) -> np.ndarray:
    """``2 pi grad U(z) . grad_z dG/dnu_x (x_l, z)`` at the sensors."""
    bg = background.background() if hasattr(background, "background") else background
    gU = bg.gradient(np.asarray(z, dtype=float)[None, :])[0]
    return 2.0 * np.pi * pt.grad_z_dGdnu(fish.sensors, fish.sensor_normals, z) @ gU


def estimate_tau_disk(A, z, fish, background) -> np.ndarray:
    """Per-column least-squares fit ``A[:, n] ~ tau_n v``; ``tau_n ~ alpha^2 (k_n-1)/(k_n+1)``."""
    v = model_vector(fish, background, z)
    vv = np.vdot(v, v).real
    data = A.data if hasattr(A, "data") else np.asarray(A)
    if vv < 1e-300 or np.sqrt(vv) < 1e-14 * max(np.abs(data).max(), 1e-300):
        raise ValueError("model vector vanishes at z; the disk fit is geometry-degenerate")
    return (v.conj() @ data) / vv


def _disk_model(alpha, k, eps, freqs):
    kn = k + 1j * eps * freqs
    return alpha ** 2 * (kn - 1.0) / (kn + 1.0), kn


def fit_disk(tau, omega0: float = 1.0, harmonics=None, init=(0.01, 1.0, 1.0),
             max_iter: int = 200, gtol: float = 1e-12) -> CharacterizationResult:
    """Minimise ``sum_n |alpha^2 (k_n-1)/(k_n+1) - tau_n|^2`` over ``(alpha, k, eps)``.

    Levenberg-Marquardt on ``log`` parameters with the analytic Jacobian.
    """
    tau = np.asarray(tau, dtype=complex)
    if len(tau) < 2:
        raise ValueError("at least two frequencies are needed to separate alpha, k and eps")
    harmonics = np.arange(1, len(tau) + 1) if harmonics is None else np.asarray(harmonics, float)
    freqs = omega0 * harmonics
    scale = np.abs(tau).max()

    def resid(p):
        alpha, k, eps = np.exp(p)
        f, _ = _disk_model(alpha, k, eps, freqs)
        r = (f - tau) / scale
        return np.concatenate([r.real, r.imag])

    def jac(p):
        alpha, k, eps = np.exp(p)
        f, kn = _disk_model(alpha, k, eps, freqs)
        dq = 2.0 / (kn + 1.0) ** 2
        cols = [2.0 * f, alpha ** 2 * dq * k, alpha ** 2 * dq * 1j * freqs * eps]
        J = np.column_stack(cols) / scale
        return np.vstack([J.real, J.imag])

    p0 = np.log(np.asarray(init, dtype=float))
    sol = least_squares(resid, p0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=gtol,
                        max_nfev=max_iter * 4)
    alpha, k, eps = np.exp(sol.x)
    grad = sol.jac.T @ sol.fun
    ok = bool(sol.status > 0)
    return CharacterizationResult(k=float(k), eps=float(eps), alpha=float(alpha),
                                  residual=float(np.sum(sol.fun ** 2) * scale ** 2),
                                  converged=ok, iterations=int(sol.nfev),
                                  info={"status": int(sol.status), "message": sol.message,
                                        "gradient_norm": float(np.linalg.norm(grad))})


# --------------------------------------------------------------------------
# ellipse route

def estimate_pt_two_positions(A1, A2, z1, z2, fish, backgrounds, harmonics=None) -> list[PolarizationTensor]:
    """Least-squares symmetric tensor per frequency from two target positions."""
    if not isinstance(backgrounds, (list, tuple)):
        backgrounds = (backgrounds, backgrounds)
    rows = []
    grads = []
    for z, bgs in zip((z1, z2), backgrounds):
        bg = bgs.background() if hasattr(bgs, "background") else bgs
        gU = bg.gradient(np.asarray(z, dtype=float)[None, :])[0]
        grads.append(gU)
        kern = pt.grad_z_dGdnu(fish.sensors, fish.sensor_normals, z)
        rows.append(np.column_stack([gU[0] * kern[:, 0],
                                     gU[0] * kern[:, 1] + gU[1] * kern[:, 0],
                                     gU[1] * kern[:, 1]]))
    g1, g2 = grads
    cross = abs(g1[0] * g2[1] - g1[1] * g2[0]) / (np.linalg.norm(g1) * np.linalg.norm(g2))
    if cross < 1e-6:
        raise RankDeficiencyError("grad U(z1) and grad U(z2) are parallel; "
                                  "two non-parallel illuminations are required")
    F = np.vstack(rows)
    d1 = A1.data if hasattr(A1, "data") else np.asarray(A1)
    d2 = A2.data if hasattr(A2, "data") else np.asarray(A2)
    b = np.vstack([d1, d2])
    sol, *_ = np.linalg.lstsq(F.astype(complex), b, rcond=None)
    harmonics = np.arange(1, b.shape[1] + 1) if harmonics is None else harmonics
    return [PolarizationTensor(sol[0, j], sol[1, j], sol[2, j], int(harmonics[j]), "estimated")
            for j in range(b.shape[1])]


def principal_axes(M) -> tuple[np.ndarray, float]:
    """Orthonormal axes ``(e1, e2)`` from ``Re M``; ``e1`` has the larger eigenvalue."""
    M = M.matrix if isinstance(M, PolarizationTensor) else np.asarray(M)
    w, V = np.linalg.eigh(M.real)
    E = V[:, ::-1]
    if E[0, 0] < 0 or (E[0, 0] == 0 and E[1, 0] < 0):
        E[:, 0] *= -1
    E[:, 1] = np.array([-E[1, 0], E[0, 0]])
    angle = float(np.mod(np.arctan2(E[1, 0], E[0, 0]), np.pi))
    return E, angle


def axis_values(M, E) -> tuple[complex, complex]:
    M = M.matrix if isinstance(M, PolarizationTensor) else np.asarray(M)
    return complex(E[:, 0] @ M @ E[:, 0]), complex(E[:, 1] @ M @ E[:, 1])


def semiaxes_from_pt(M_N, k_N=None, eps=None, omega0=None):
    """``a = tau_1 / sqrt(pi (tau_1 + tau_2))``, ``b`` likewise; plus the ``e1`` angle.

    Optional ``k_N`` (or ``eps`` and ``omega0`` with ``M_N.n``) triggers a
    warning when the highest frequency is too low for the limit formulas.
    """
    E, angle = principal_axes(M_N)
    t1, t2 = axis_values(M_N, E)
    if t1.real <= 0 and t2.real <= 0:
        raise InvalidTensorError("both tensor eigenvalues have non-positive real part")
    if abs(t1.real) < abs(t2.real):
        t1, t2 = t2, t1
        E = E[:, ::-1].copy()
        angle = float(np.mod(angle + np.pi / 2, np.pi))
    if k_N is not None and abs(np.imag(k_N)) < 10.0 * abs(np.real(k_N)):
        warnings.warn("highest frequency may be too low for the large-contrast semi-axis formulas",
                      RuntimeWarning, stacklevel=2)
    root = np.sqrt(np.pi * (t1 + t2))
    a = float((t1 / root).real)
    b = float((t2 / root).real)
    return a, b, angle


def material_from_pt(M_list, a_est: float, b_est: float, omega0: float = 1.0, n_low: int = 3,
                     axes=None, harmonics=None):
    """``k_n = (1 + a mu_n) / (1 - b mu_n)``, ``mu_n = tau_{n,1} / (pi a b (a+b))``.

    Returns ``(k_est, eps_est, k_n_trace)``: ``k_est`` averages ``Re k_n`` over
    the ``n_low`` lowest frequencies, ``eps_est`` averages ``Im k_n / (omega0 n)``
    over all of them.
    """
    mats = [m.matrix if isinstance(m, PolarizationTensor) else np.asarray(m) for m in M_list]
    if harmonics is None:
        harmonics = [m.n if isinstance(m, PolarizationTensor) and m.n else j + 1
                     for j, m in enumerate(M_list)]
    harmonics = np.asarray(harmonics, dtype=float)
    if axes is None:
        axes, _ = principal_axes(mats[-1])
        t1, t2 = axis_values(mats[-1], axes)
        if abs(t1.real) < abs(t2.real):
            axes = axes[:, ::-1].copy()
    e1 = axes[:, 0]
    denom = np.pi * a_est * b_est * (a_est + b_est)
    kn = np.full(len(mats), np.nan + 0j)
    for j, M in enumerate(mats):
        mu = (e1 @ M @ e1) / denom
        d = 1.0 - b_est * mu
        if abs(d) < 1e-12:
            warnings.warn(f"skipping frequency {harmonics[j]:g}: 1 - b mu vanishes", RuntimeWarning, stacklevel=2)
            continue
        kn[j] = (1.0 + a_est * mu) / d
    ok = np.isfinite(kn)
    if not ok.any():
        raise ValueError("every frequency was skipped; cannot estimate k and eps")
    low = np.flatnonzero(ok)[:n_low]
    k_est = float(np.mean(kn[low].real))
    eps_est = float(np.mean(kn[ok].imag / (omega0 * harmonics[ok])))
    return k_est, eps_est, kn


def fit_ellipse(tau1, tau2, omega0: float = 1.0, harmonics=None, init=(0.05, 0.05, 1.0, 1.0),
                max_iter: int = 200) -> CharacterizationResult:
    """Joint fit of ``(a, b, k, eps)`` to the axis eigenvalue sequences."""
    tau1 = np.asarray(tau1, dtype=complex)
    tau2 = np.asarray(tau2, dtype=complex)
    harmonics = np.arange(1, len(tau1) + 1) if harmonics is None else np.asarray(harmonics, float)
    freqs = omega0 * harmonics
    scale = max(np.abs(tau1).max(), np.abs(tau2).max())

    def resid(p):
        a, b, k, eps = np.exp(p)
        t1, t2 = ellipse_eigenvalues(a, b, k + 1j * eps * freqs)
        r = np.concatenate([t1 - tau1, t2 - tau2]) / scale
        return np.concatenate([r.real, r.imag])

    sol = least_squares(resid, np.log(np.asarray(init, float)), method="lm", xtol=1e-15,
                        ftol=1e-15, gtol=1e-12, max_nfev=max_iter * 5)
    a, b, k, eps = np.exp(sol.x)
    if b > a:
        a, b = b, a
    return CharacterizationResult(k=float(k), eps=float(eps), a=float(a), b=float(b),
                                  residual=float(np.sum(sol.fun ** 2) * scale ** 2),
                                  converged=bool(sol.status > 0), iterations=int(sol.nfev))


def characterize_ellipse(M_list, omega0: float = 1.0, harmonics=None, n_low: int = 3) -> CharacterizationResult:
    """Semi-axes from the highest frequency, then material parameters."""
    M_N = M_list[-1]
    a, b, angle = semiaxes_from_pt(M_N)
    E, _ = principal_axes(M_N)
    t1, t2 = axis_values(M_N, E)
    if abs(t1.real) < abs(t2.real):
        E = E[:, ::-1].copy()
    k_est, eps_est, kn = material_from_pt(M_list, a, b, omega0, n_low, axes=E, harmonics=harmonics)
    return CharacterizationResult(k=k_est, eps=eps_est, a=a, b=b, angle=angle, k_trace=kn)
