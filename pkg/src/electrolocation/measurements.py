"""Space-frequency response (SFR) matrices: assembly, postprocessing, noise."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import potential as pt
from .characterization import analytic_pt
from .forward import FishSolver, ForwardSolution, MaterialSpectrum, TargetSpec, frequency_sweep
from .geometry import FishBody

NOISE_STAGES = ("raw", "postprocessed")


@dataclass(frozen=True, eq=False)
class SFRMatrix:
    """``L x N`` complex matrix of multi-frequency sensor data."""

    data: np.ndarray
    sensors: np.ndarray
    frequencies: np.ndarray
    provenance: str = "BEM"
    noise: dict | None = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=complex)
        if d.ndim != 2:
            raise ValueError("SFR data must be a 2-D array (sensors x frequencies)")
        if d.shape[0] != len(self.sensors) or d.shape[1] != len(self.frequencies):
            raise ValueError(f"SFR shape {d.shape} does not match {len(self.sensors)} sensors "
                             f"and {len(self.frequencies)} frequencies")
        if self.provenance not in ("BEM", "dipole-approx"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "data", d)

    @property
    def shape(self):
        return self.data.shape

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.data, compute_uv=False)

    def column(self, n: int) -> np.ndarray:
        return self.data[:, n]

    def select(self, columns) -> "SFRMatrix":
        columns = np.asarray(columns)
        return replace(self, data=self.data[:, columns], frequencies=np.asarray(self.frequencies)[columns])

    def metadata(self) -> dict:
        return {"shape": list(self.shape), "provenance": self.provenance,
                "frequencies": [float(f) for f in self.frequencies],
                "sensors": np.asarray(self.sensors).tolist(), "noise": self.noise}

    def to_csv(self, prefix) -> list[Path]:
        """Write ``<prefix>_re.csv``, ``<prefix>_im.csv`` and ``<prefix>_meta.json``."""
        prefix = Path(prefix)
        out = []
        for part, arr in (("re", self.data.real), ("im", self.data.imag)):
            p = prefix.with_name(f"{prefix.name}_{part}.csv")
            with p.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["sensor"] + [f"freq_{f:g}" for f in self.frequencies])
                for i, row in enumerate(arr):
                    w.writerow([i] + [f"{v:.16e}" for v in row])
            out.append(p)
        meta = prefix.with_name(f"{prefix.name}_meta.json")
        meta.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True))
        out.append(meta)
        return out

    def save(self, path) -> Path:
        """Binary form: ``.npz`` with data, sensors, frequencies and JSON metadata."""
        path = Path(path)
        with path.open("wb") as fh:
            np.savez(fh, data=self.data, sensors=np.asarray(self.sensors, dtype=float),
                     frequencies=np.asarray(self.frequencies, dtype=float),
                     meta=np.array(json.dumps({"provenance": self.provenance, "noise": self.noise})))
        return path

    @classmethod
    def load(cls, path) -> "SFRMatrix":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            return cls(z["data"], z["sensors"], z["frequencies"], meta["provenance"], meta["noise"])


# --------------------------------------------------------------------------
# raw data and postprocessing

def raw_currents(background: ForwardSolution, perturbed: ForwardSolution, sensors=None) -> np.ndarray:
    """``du/dnu|+ - dU/dnu|+``, at sensor parameters or (``None``) at all body nodes."""
    if background.mesh is not perturbed.mesh and (
            background.mesh.size != perturbed.mesh.size
            or not np.allclose(background.mesh.points, perturbed.mesh.points)):
        raise ValueError("background and perturbed solutions live on different meshes")
    diff = perturbed.boundary_current() - background.boundary_current()
    if sensors is None:
        return diff
    if isinstance(sensors, FishBody):
        sensors = sensors.sensor_parameters
    return pt.p1_evaluate(background.mesh, diff, sensors)


@dataclass(eq=False)
class PostProcessor:
    """``Q = 1/2 - K* + xi W`` acting on nodal current vectors.

    Applied through its Galerkin form followed by the L2 projection onto the
    hat basis.  By construction ``Q`` maps the exterior current of the fish's
    response to any exterior source back to that source's free-space normal
    derivative.
    """

    solver: FishSolver
    matrix: np.ndarray = field(init=False)

    def __post_init__(self):
        s = self.solver
        lu = sla.cho_factor(s.mass)
        self.matrix = sla.cho_solve(lu, s.operator)

    def __call__(self, v) -> np.ndarray:
        return self.matrix @ np.asarray(v)


def postprocess(raw, solver: FishSolver | PostProcessor) -> np.ndarray:
    """Apply the postprocessing operator to full-mesh nodal currents (columns allowed)."""
    pp = solver if isinstance(solver, PostProcessor) else PostProcessor(solver)
    raw = np.asarray(raw)
    if raw.shape[0] != pp.matrix.shape[1]:
        raise ValueError(f"expected {pp.matrix.shape[1]} nodal values, got {raw.shape[0]}")
    return pp(raw)


# --------------------------------------------------------------------------
# noise

def noise_std(raw_sensor_data, zeta: float) -> float:
    """``sqrt(zeta) * max |raw|`` over sensors and frequencies."""
    if zeta < 0:
        raise ValueError("noise level zeta must be non-negative")
    return float(np.sqrt(zeta) * np.abs(raw_sensor_data).max())


def complex_gaussian(shape, std: float, rng: np.random.Generator) -> np.ndarray:
    """Independent real and imaginary parts, each ``N(0, std^2)``."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return std * (re + 1j * im)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def add_noise(A: SFRMatrix, zeta: float, seed=None, reference=None) -> SFRMatrix:
    """Additive complex Gaussian noise on the entries of ``A``.

    The std is ``sqrt(zeta) * max |reference|``; ``reference`` defaults to
    ``A`` itself and should be the raw (pre-postprocessing) sensor data when
    following the published noise model.
    """
    if zeta < 0:
        raise ValueError("noise level zeta must be non-negative")
    if zeta == 0:
        return A
    ref = A.data if reference is None else reference
    std = noise_std(ref, zeta)
    noisy = A.data + complex_gaussian(A.shape, std, _rng(seed))
    return replace(A, data=noisy, noise={"zeta": zeta, "seed": _seed_repr(seed), "std": std,
                                         "stage": "postprocessed"})


def _seed_repr(seed):
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": str(seed.entropy), "spawn_key": list(seed.spawn_key)}
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return None if seed is None else str(seed)


# --------------------------------------------------------------------------
# BEM measurement pipeline

@dataclass(eq=False)
class Measurement:
    """Full-mesh raw current perturbations for one fish, target and spectrum."""

    solver: FishSolver
    spectrum: MaterialSpectrum
    raw: np.ndarray  # (P, N)
    target: TargetSpec | None = None
    _pp: PostProcessor | None = None

    @property
    def postprocessor(self) -> PostProcessor:
        if self._pp is None:
            self._pp = PostProcessor(self.solver)
        return self._pp

    def raw_at_sensors(self, fish: FishBody | None = None) -> np.ndarray:
        fish = fish or self.solver.fish
        return pt.p1_interpolation_matrix(self.solver.mesh, fish.sensor_parameters) @ self.raw

    def sfr(self, fish: FishBody | None = None, zeta: float = 0.0, seed=None, stage: str = "raw",
            columns=None) -> SFRMatrix:
        """Postprocessed SFR matrix at the sensors of ``fish``.

        ``stage='raw'`` adds noise to the nodal currents before postprocessing;
        ``stage='postprocessed'`` adds it to the final matrix.  The noise std
        is always referenced to the raw sensor data.
        """
        if stage not in NOISE_STAGES:
            raise ValueError(f"noise stage must be one of {NOISE_STAGES}")
        fish = fish or self.solver.fish
        raw = self.raw if columns is None else self.raw[:, columns]
        freqs = self.spectrum.frequencies if columns is None else self.spectrum.frequencies[columns]
        interp = pt.p1_interpolation_matrix(self.solver.mesh, fish.sensor_parameters)
        std = noise_std(interp @ raw, zeta) if zeta > 0 else 0.0
        noise = None
        if zeta > 0 and stage == "raw":
            raw = raw + complex_gaussian(raw.shape, std, _rng(seed))
            noise = {"zeta": zeta, "seed": _seed_repr(seed), "std": std, "stage": stage}
        data = interp @ self.postprocessor(raw)
        A = SFRMatrix(data, fish.sensors, freqs, "BEM", noise)
        if zeta > 0 and stage == "postprocessed":
            A = replace(A, data=A.data + complex_gaussian(A.shape, std, _rng(seed)),
                        noise={"zeta": zeta, "seed": _seed_repr(seed), "std": std, "stage": stage})
        return A


def measure(solver: FishSolver, target: TargetSpec, spectrum: MaterialSpectrum | None = None,
            Q: int = 128) -> Measurement:
    """Run the frequency sweep and keep the nodal current perturbations.

    Repeated harmonics are solved once and copied.
    """
    spectrum = spectrum or target.spectrum((1,))
    uniq, inverse = np.unique(np.asarray(spectrum.harmonics), return_inverse=True)
    sub = MaterialSpectrum(spectrum.k, spectrum.eps, spectrum.omega0, tuple(int(n) for n in uniq))
    sols = frequency_sweep(solver.fish, target, sub, solver=solver, Q=Q)
    bg = solver.background()
    raw = np.column_stack([raw_currents(bg, s) for s in sols])[:, inverse.ravel()]
    return Measurement(solver, spectrum, raw, target)


def bem_sfr(solver: FishSolver, target: TargetSpec, spectrum: MaterialSpectrum | None = None,
            Q: int = 128) -> SFRMatrix:
    """Clean BEM SFR matrix at the fish sensors."""
    return measure(solver, target, spectrum, Q).sfr()


# --------------------------------------------------------------------------
# dipole approximation

def dipole_approx_sfr(fish: FishBody, background, z, B_shape, spectrum: MaterialSpectrum) -> SFRMatrix:
    """``A_ln = grad U(z)^T M(k_n, B) grad_z dG/dnu_x (x_l, z)``.

    ``background`` is a :class:`FishSolver` or a background
    :class:`ForwardSolution`; ``B_shape`` is a :class:`TargetSpec` (its actual
    size enters the tensor) or a shape tuple as accepted by ``analytic_pt``.
    """
    z = np.asarray(z, dtype=float)
    if fish.body.contains(z[None, :])[0]:
        raise ValueError("the target point lies inside the fish")
    bg = background.background() if isinstance(background, FishSolver) else background
    gU = bg.gradient(z[None, :])[0]
    kern = pt.grad_z_dGdnu(fish.sensors, fish.sensor_normals, z)
    shape = B_shape.shape if isinstance(B_shape, TargetSpec) else B_shape
    cols = []
    for k in spectrum.k_n:
        M = analytic_pt(shape, k).matrix
        cols.append(kern @ (M.T @ gU))
    return SFRMatrix(np.column_stack(cols), fish.sensors, spectrum.frequencies, "dipole-approx")
