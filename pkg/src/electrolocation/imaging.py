"""Space-frequency MUSIC imaging."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import FishBody

DEFAULT_CAP = 1e12


class ImagingError(ValueError):
    pass


# --------------------------------------------------------------------------
# signal space

@dataclass(frozen=True, eq=False)
class SignalProjector:
    """Orthogonal projector onto the leading left singular vectors of ``A``."""

    basis: np.ndarray  # (L, rank), orthonormal columns
    singular_values: np.ndarray

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T

    def __matmul__(self, v):
        return self.basis @ (self.basis.conj().T @ v)


def signal_projector(A, rank: int = 1) -> SignalProjector:
    data = A.data if hasattr(A, "data") else np.asarray(A)
    if rank not in (1, 2):
        raise ValueError("signal-space rank must be 1 or 2")
    if not np.any(data):
        raise ImagingError("the SFR matrix is zero; no signal space")
    U, s, _ = np.linalg.svd(data, full_matrices=False)
    r = min(rank, U.shape[1])
    return SignalProjector(U[:, :r], s)


def full_projector(L: int) -> SignalProjector:
    """Projector onto the whole sensor space (degenerate case)."""
    return SignalProjector(np.eye(L, dtype=complex), np.ones(L))


# --------------------------------------------------------------------------
# illumination vectors

@dataclass(frozen=True, eq=False)
class IlluminationVectors:
    """Normalised ``g`` (disk type) and ``g^E`` (gradient pair) at search points.

    ``valid`` flags points where ``|g~| > 0``; invalid rows hold zeros.
    """

    points: np.ndarray
    g: np.ndarray       # (n, L)
    gE: np.ndarray      # (n, L, 2)
    valid: np.ndarray

    @classmethod
    def compute(cls, points, fish: FishBody, background, chunk: int = 4096) -> "IlluminationVectors":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        bg = background.background() if hasattr(background, "background") else background
        gU = np.empty_like(pts)
        for s in range(0, len(pts), chunk):
            gU[s:s + chunk] = bg.gradient(pts[s:s + chunk])
        x, nu = fish.sensors, fish.sensor_normals
        r = x[None, :, :] - pts[:, None, :]
        r2 = (r ** 2).sum(-1)
        rn = (r * nu[None]).sum(-1)
        kern = -(nu[None] / r2[..., None] - 2.0 * rn[..., None] * r / (r2 ** 2)[..., None]) / (2 * np.pi)
        gt = (kern * gU[:, None, :]).sum(-1)
        norm = np.linalg.norm(gt, axis=1)
        valid = norm > 1e-14 * max(norm.max(), 1e-300)
        g = np.zeros_like(gt)
        g[valid] = gt[valid] / norm[valid, None]
        cn = np.linalg.norm(kern, axis=1)
        gE = kern / np.where(cn > 0, cn, 1.0)[:, None, :]
        return cls(pts, g, gE, valid)


def _residual_rank1(g, basis):
    c = g.astype(complex) @ basis.conj()
    res2 = (np.abs(g) ** 2).sum(-1) - (np.abs(c) ** 2).sum(-1)
    return np.sqrt(np.clip(res2, 0.0, None))


def _residual_span(G, basis):
    """min over unit ``c`` of ``|(I - P) G c|`` for each ``G`` of shape ``(L, 2)``."""
    B = np.einsum("nli,nlj->nij", G, G).astype(complex)
    C = np.einsum("nli,lr->nri", G.astype(complex), basis.conj())
    A = B - np.einsum("nri,nrj->nij", C.conj(), C)
    detB = (B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]).real
    detA = (A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]).real
    tr = (A[:, 0, 0] * B[:, 1, 1] + A[:, 1, 1] * B[:, 0, 0] - A[:, 0, 1] * B[:, 1, 0] - A[:, 1, 0] * B[:, 0, 1]).real
    disc = np.sqrt(np.clip(tr ** 2 - 4.0 * detA * detB, 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(detB > 0, (tr - disc) / (2.0 * detB), np.inf)
        # the small root loses accuracy by cancellation; use the product of roots
        big = (tr + disc) / (2.0 * detB)
        alt = np.where(big > 0, detA / (detB * big), lam)
    lam = np.where(np.isfinite(alt), alt, lam)
    return np.sqrt(np.clip(lam, 0.0, None))


def music_values(illum: IlluminationVectors, P: SignalProjector, cap: float = DEFAULT_CAP,
                 branch: str = "combined") -> np.ndarray:
    """Imaging functional at every illumination point (``nan`` where flagged)."""
    basis = P.basis
    out = np.full(len(illum.points), np.nan)
    v = illum.valid
    with np.errstate(divide="ignore"):
        iD = 1.0 / _residual_rank1(illum.g[v], basis)
        iE = 1.0 / _residual_span(illum.gE[v], basis)
    if branch == "D":
        val = iD
    elif branch == "E":
        val = iE
    elif branch == "combined":
        val = np.maximum(iD, iE)
    else:
        raise ValueError("branch must be 'combined', 'D' or 'E'")
    out[v] = np.minimum(np.nan_to_num(val, nan=cap, posinf=cap), cap)
    return out


def music_value(z, P: SignalProjector, fish: FishBody, background, cap: float = DEFAULT_CAP,
                branch: str = "combined") -> float:
    """``max(1/|(I-P) g|, 1/min|(I-P) g^E c|)`` at one point, capped."""
    illum = IlluminationVectors.compute(np.asarray(z, float)[None, :], fish, background)
    if not illum.valid[0]:
        raise ImagingError(f"illumination vector vanishes at {z}")
    return float(music_values(illum, P, cap, branch)[0])


# --------------------------------------------------------------------------
# grids

@dataclass(frozen=True)
class GridSpec:
    window: tuple = (-3.0, 3.0, -3.0, 3.0)
    resolution: tuple = (151, 151)
    margin: float = 0.1

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.window[0], self.window[1], self.resolution[0])

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.window[2], self.window[3], self.resolution[1])

    @property
    def cell(self) -> tuple:
        return ((self.window[1] - self.window[0]) / (self.resolution[0] - 1),
                (self.window[3] - self.window[2]) / (self.resolution[1] - 1))

    @property
    def cell_diagonal(self) -> float:
        return float(np.hypot(*self.cell))

    def points(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys, indexing="xy")
        return np.column_stack([X.ravel(), Y.ravel()])

    def mask(self, fish: FishBody) -> np.ndarray:
        """True at evaluable points: outside the body and at least ``margin`` away."""
        pts = self.points()
        out = ~fish.body.contains(pts)
        near = out.copy()
        d = np.full(len(pts), np.inf)
        # distance only matters close to the body
        lo, hi = fish.body.polygon(256).min(0) - self.margin, fish.body.polygon(256).max(0) + self.margin
        box = np.all((pts >= lo) & (pts <= hi), axis=1) & near
        d[box] = fish.body.distance(pts[box])
        return out & (d >= self.margin)


@dataclass(frozen=True, eq=False)
class ImagingGrid:
    """Functional values on a grid with the exclusion mask and argmax."""

    spec: GridSpec
    values: np.ndarray      # (ny, nx), nan where excluded
    mask: np.ndarray        # (ny, nx)

    @property
    def argmax_index(self) -> tuple:
        flat = np.where(np.isnan(self.values), -np.inf, self.values).ravel()
        i = int(np.argmax(flat))  # first index wins ties
        return np.unravel_index(i, self.values.shape)

    @property
    def argmax(self) -> np.ndarray:
        iy, ix = self.argmax_index
        return np.array([self.spec.xs[ix], self.spec.ys[iy]])

    @property
    def peak(self) -> float:
        return float(np.nanmax(self.values))

    def to_csv(self, path, meta: dict | None = None) -> list[Path]:
        path = Path(path)
        X, Y = np.meshgrid(self.spec.xs, self.spec.ys, indexing="xy")
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "I"])
            for x, y, v in zip(X.ravel(), Y.ravel(), self.values.ravel()):
                w.writerow([f"{x:.10g}", f"{y:.10g}", "nan" if np.isnan(v) else f"{v:.10e}"])
        info = {"argmax": self.argmax.tolist(), "peak": self.peak,
                "window": list(self.spec.window), "resolution": list(self.spec.resolution),
                "margin": self.spec.margin}
        info.update(meta or {})
        mpath = path.with_suffix(".json")
        mpath.write_text(json.dumps(info, indent=2, sort_keys=True))
        return [path, mpath]


@dataclass(eq=False)
class GridIllumination:
    """Illumination vectors on the evaluable points of a grid, for reuse."""

    spec: GridSpec
    mask: np.ndarray
    illum: IlluminationVectors

    @classmethod
    def build(cls, spec: GridSpec, fish: FishBody, background) -> "GridIllumination":
        mask = spec.mask(fish)
        if not mask.any():
            raise ImagingError("no evaluable grid points")
        pts = spec.points()[mask]
        return cls(spec, mask, IlluminationVectors.compute(pts, fish, background))

    def scan(self, P: SignalProjector, cap: float = DEFAULT_CAP, branch: str = "combined") -> ImagingGrid:
        vals = np.full(self.mask.shape, np.nan)
        vals[self.mask] = music_values(self.illum, P, cap, branch)
        ny, nx = self.spec.resolution[1], self.spec.resolution[0]
        m = self.mask.copy()
        m[self.mask] = self.illum.valid
        return ImagingGrid(self.spec, vals.reshape(ny, nx), m.reshape(ny, nx))


def scan(window, resolution, P: SignalProjector, fish: FishBody, background, margin: float = 0.1,
         cap: float = DEFAULT_CAP, branch: str = "combined") -> ImagingGrid:
    spec = GridSpec(tuple(window), tuple(resolution), margin)
    return GridIllumination.build(spec, fish, background).scan(P, cap, branch)


def locate(A, grid: GridIllumination, rank: int = 1, cap: float = DEFAULT_CAP) -> np.ndarray:
    return grid.scan(signal_projector(A, rank), cap).argmax


# --------------------------------------------------------------------------
# noise statistics

def location_error_stats(measurement, z_true, zetas, trials: int, master_seed: int,
                         column_sets: dict | None = None, grid: GridIllumination | None = None,
                         fish: FishBody | None = None, stage: str = "raw", rank: int = 1,
                         workers: int = 1) -> list[dict]:
    """Empirical RMS location error per (column set, zeta).

    ``column_sets`` maps a label to the SFR columns used (default: all).
    Trial ``i`` at noise index ``j`` seeds its generator with
    ``seed_schedule(master_seed, i, j)``; every column set reuses that seed.
    The noise std is referenced to the raw data of the columns in use.
    """
    from .config import seed_schedule

    fish = fish or measurement.solver.fish
    if grid is None:
        grid = GridIllumination.build(GridSpec(), fish, measurement.solver)
    column_sets = column_sets or {"all": np.arange(measurement.raw.shape[1])}
    z_true = np.asarray(z_true, dtype=float)

    def one(i, j, zeta):
        seed = seed_schedule(master_seed, i, j)
        out = {}
        for label, cols in column_sets.items():
            A = measurement.sfr(fish, zeta, np.random.SeedSequence(seed), stage, columns=cols)
            z = grid.scan(signal_projector(A, rank)).argmax
            out[label] = float(np.sum((z - z_true) ** 2))
        return out

    rows = []
    for j, zeta in enumerate(zetas):
        jobs = [(i, j, zeta) for i in range(trials)]
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                res = list(ex.map(lambda a: one(*a), jobs))
        else:
            res = [one(*a) for a in jobs]
        for label in column_sets:
            err2 = np.array([r[label] for r in res])
            rows.append({"set": label, "zeta": float(zeta), "trials": trials,
                         "rms": float(np.sqrt(err2.mean()))})
    return rows


def write_stats_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    keys = list(rows[0].keys()) if rows else ["set", "zeta", "trials", "rms"]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10e}" if isinstance(v, float) else v) for k, v in r.items()})
    return path
