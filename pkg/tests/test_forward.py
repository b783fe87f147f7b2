
import numpy as np
import pytest

from electrolocation import forward as fw
from electrolocation import potential as pt
from electrolocation.geometry import FishBody, discretize, make_ellipse

from conftest import Z_TARGET


def test_dipole_source_is_harmonic():
    H = fw.SourceField((0.7, 0.0), (1.0, 0.0))
    x = np.array([[0.3, 0.9], [-1.0, 0.4], [2.0, -1.5]])
    h = 1e-4
    lap = (sum(H.potential(x + h * e) + H.potential(x - h * e) for e in np.eye(2)) - 4 * H.potential(x)) / h ** 2
    assert np.all(np.abs(lap) < 1e-6 * np.abs(H.potential(x)))
    h = 1e-3
    fd = np.column_stack([(H.potential(x + h * e) - H.potential(x - h * e)) / (2 * h) for e in np.eye(2)])
    assert np.allclose(H.gradient(x), fd, rtol=1e-5)


def test_material_spectrum():
    s = fw.MaterialSpectrum(2.0, 1.0, 1.0, (1, 2, 3))
    assert s.k_n[2] == 2 + 3j
    assert np.all(np.abs(s.lambda_n) > 0.5)
    assert fw.MaterialSpectrum.equidistributed(2.0, 1.0, 10).N == 10
    with pytest.raises(ValueError):
        fw.MaterialSpectrum(1.0, 0.0)
    with pytest.raises(ValueError):
        fw.MaterialSpectrum(-1.0, 1.0)
    with pytest.raises(ValueError):
        fw.MaterialSpectrum(2.0, 1.0, 1.0, (0,))


def test_zero_impedance_circle_has_no_interior_current():
    c = make_ellipse((0, 0), (1, 1))
    fish = FishBody(c, 0.0, (0.0, 0.0), (1.0, 0.0))
    s = fw.FishSolver.build(fish, 1024)
    bg = s.background()
    # discrete interior trace <dU/dnu|-, phi_i> = <dH/dnu, phi_i> + (-M/2 + K*) psi
    inner = s.rhs - (0.5 * s.mass - s.kstar_gal) @ bg.psi
    assert np.abs(inner).max() < 1e-10
    tt = np.linspace(0, 2 * np.pi, 7, endpoint=False) + 0.05
    x, nu = c.points(tt), c.normals(tt)

    def dn(h):
        return (bg.gradient(x - h * nu) * nu).sum(1)

    h = 4e-3
    limit = (8 * dn(h / 4) - 6 * dn(h / 2) + dn(h)) / 3
    assert np.abs(limit).max() < 1e-6


def test_fish_background_topology_and_flux(solver, background):
    up, _ = background.traces()
    assert up.max() > 0 > up.min()
    assert abs(solver.m_vec @ background.psi) < 1e-8


def _sensor_flux(solver, background, L):
    fish = solver.fish.with_sensors(L)
    w = fish.body.perimeter() / L  # sensors are equispaced in arclength
    cur = background.sensor_currents(fish)
    return np.sum(cur) * w, np.sum(np.abs(cur)) * w


def test_sensor_sampled_flux_is_small(solver, background):
    net, total = _sensor_flux(solver, background, 64)
    assert abs(net) < 1e-3 * total


@pytest.mark.xfail(strict=True, reason="64 point samples are a quadrature of the flux integral, not exact")
def test_sensor_sampled_flux_below_1e_8(solver, background):
    net, _ = _sensor_flux(solver, background, 64)
    assert abs(net) < 1e-8


def test_robin_condition_residual(solver, background):
    up, um = background.traces()
    assert np.abs(up - um - solver.fish.xi * background.psi).max() < 1e-6


def test_gauge_invariance(solver):
    class Shifted(fw.SourceField):
        def potential(self, x):
            return super().potential(x) + 7.5

    shifted = Shifted(solver.source.z0, solver.source.moment)
    rhs = pt.load_vector(solver.mesh, shifted.normal_derivative, solver.q)
    assert np.abs(rhs - solver.rhs).max() < 1e-12


def test_background_self_convergence_order(fish):
    cur = {P: fw.FishSolver.build(fish, P).background().sensor_currents() for P in (256, 512, 1024)}
    e1 = np.linalg.norm(cur[256] - cur[512]) / np.linalg.norm(cur[512])
    e2 = np.linalg.norm(cur[512] - cur[1024]) / np.linalg.norm(cur[1024])
    assert np.log2(e1 / e2) >= 1.8


@pytest.mark.xfail(strict=True, reason="P1 Galerkin changes sensor currents by ~5e-4 between P=256 and 512")
def test_background_change_256_to_512_below_1e_6(fish):
    a = fw.FishSolver.build(fish, 256).background().sensor_currents()
    b = fw.FishSolver.build(fish, 512).background().sensor_currents()
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-6


def test_transparent_target_leaves_currents_unchanged(solver, background):
    tm = discretize(make_ellipse(Z_TARGET, (0.05, 0.05)), 128, "P0")
    sol = solver.coupling(tm).solve(1 + 1e-12j, 1)
    d = sol.sensor_currents() - background.sensor_currents()
    assert np.abs(d).max() < 1e-8


@pytest.mark.parametrize("k", [2.0, 5.0, 2.0 + 3.0j, 0.2])
def test_free_space_disk_oracle(k):
    z, a, E0 = np.array([0.2, -0.1]), 0.5, np.array([1.0, 0.5])
    sol = fw.solve_free_space(fw.TargetSpec.disk(z, a), k, fw.UniformField(tuple(E0)), Q=128)
    th = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    obs = z + np.column_stack([np.cos(th), np.sin(th)]) * np.repeat([0.6, 1.0, 2.0, 4.0], 10)[:, None]
    d = obs - z
    exact = a * a * (k - 1) / (k + 1) * (d @ E0) / (d ** 2).sum(1)
    err = np.linalg.norm(sol.perturbation(obs) - exact) / np.linalg.norm(exact)
    assert err < 1e-4


def test_perfect_conductor_expels_tangential_field(solver):
    target = fw.TargetSpec.disk(Z_TARGET, 0.05, 1e10, 0.0)
    tm = discretize(target.curve(), 128, "P0")
    sol = solver.coupling(tm).solve(1e10 + 0j, 1)
    th = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    nrm = np.column_stack([np.cos(th), np.sin(th)])
    pts = Z_TARGET + 0.05 * (1 + 0.02) * nrm
    g = sol.gradient(pts).real
    tang = np.abs(g[:, 0] * -nrm[:, 1] + g[:, 1] * nrm[:, 0])
    ref = np.linalg.norm(solver.background_gradient(Z_TARGET[None])[0])
    assert tang.max() < 0.05 * ref
    # the potential on the target boundary is constant
    u = sol.potential(Z_TARGET + 0.05 * 1.001 * nrm).real
    assert np.ptp(u) < 0.01 * np.ptp(solver.background().potential(Z_TARGET + 0.05 * nrm))


def test_solutions_are_charge_neutral(solver, disk_target):
    sols = fw.frequency_sweep(solver.fish, disk_target, disk_target.spectrum(range(1, 4)), solver=solver)
    for s in sols:
        assert abs(solver.m_vec @ s.psi) < 1e-8
        assert abs(s.target_mesh.weights @ s.phi) < 1e-8


def test_sweep_with_zero_permittivity_is_flat(solver):
    t = fw.TargetSpec.disk(Z_TARGET, 0.05, 3.0, 0.0)
    sols = fw.frequency_sweep(solver.fish, t, t.spectrum(range(1, 4)), solver=solver)
    for s in sols[1:]:
        assert np.array_equal(s.psi, sols[0].psi)


def test_sweep_feeds_k_n_and_varies_smoothly(solver, disk_target):
    spec = disk_target.spectrum(range(1, 11))
    sols = fw.frequency_sweep(solver.fish, disk_target, spec, solver=solver)
    assert sols[2].k_n == 2 + 3j and sols[2].n == 3
    bg = solver.background().sensor_currents()
    cols = [s.sensor_currents() - bg for s in sols]
    for a, b in zip(cols, cols[1:]):
        assert np.linalg.norm(b - a) / np.linalg.norm(a) < 0.5


def test_target_geometry_conflicts(fish, solver):
    with pytest.raises(fw.ConfigurationError):
        fw.solve_with_target(fish, solver, fw.TargetSpec.disk((0.9, 0.0), 0.2), k_n=2.0)
    with pytest.raises(fw.ConfigurationError):
        fw.solve_with_target(fish, solver, fw.TargetSpec.disk((0.0, 0.3005), 0.0003), k_n=2.0)


def test_weak_contrast_warning(solver):
    tm = discretize(make_ellipse(Z_TARGET, (0.05, 0.05)), 64, "P0")
    with pytest.warns(RuntimeWarning, match="lambda"):
        solver.coupling(tm).solve(-3.0 + 0j, 1)


def test_solver_rejects_p0_body(fish):
    with pytest.raises(TypeError):
        fw.FishSolver(fish, discretize(fish.body, 64, "P0"))


def test_density_csv_and_grid_dump(tmp_path, solver, disk_target):
    sol = fw.solve_with_target(solver.fish, solver, disk_target, k_n=2 + 1j, Q=64)
    p = sol.to_csv(tmp_path / "d.csv")
    lines = p.read_text().splitlines()
    assert lines[0].startswith("curve,t,x,y")
    assert len(lines) == 1 + 256 + 64
    g = fw.potential_grid_csv(sol, np.linspace(-2, 2, 5), np.linspace(-2, 2, 4), tmp_path / "g.csv")
    assert len(g.read_text().splitlines()) == 1 + 20
