import numpy as np
import pytest

from hdl.circle import identity_map, rotation_map, sine_map
from hdl.grid import DiskGrid
from hdl.harmonic import (
    DiskMap,
    HarmonicSolveError,
    TargetGeometry,
    complex_derivatives,
    dirichlet_energy,
    douady_earle_initializer,
    rim_values,
    solve_harmonic,
    tension,
)
from hdl.metric import MetricField


def independent_tension(grid, h):
    """Tension into the hyperbolic disk, coded directly from the polar formulas.

    Radial derivatives from the parabola through three consecutive rings (the
    innermost ring borrows the antipodal node), angular ones from centred
    differences normalised by sin/cos of the angular step.
    """
    r, nt, dt = grid.r, grid.n_theta, grid.dtheta
    ext_r = np.concatenate([[-r[0]], r])
    ext_h = np.vstack([np.roll(h[0], -nt // 2), h])
    tau = np.full(grid.shape, np.nan, dtype=complex)
    for i in range(grid.n_r - 1):
        x0, x1, x2 = ext_r[i:i + 3]
        f0, f1, f2 = ext_h[i:i + 3]
        d01 = (f1 - f0) / (x1 - x0)
        d12 = (f2 - f1) / (x2 - x1)
        hrr = 2 * (d12 - d01) / (x2 - x0)
        hr = d01 + (d12 - d01) * (x1 - x0) / (x2 - x0)
        up, um = np.roll(f1, -1), np.roll(f1, 1)
        ht = (up - um) / (2 * np.sin(dt))
        htt = (up - 2 * f1 + um) / (2 - 2 * np.cos(dt))
        th = grid.theta
        hz = 0.5 * np.exp(-1j * th) * (hr - 1j * ht / x1)
        hzb = 0.5 * np.exp(1j * th) * (hr + 1j * ht / x1)
        lap_h = (hrr + hr / x1 + htt / x1**2) * (1 - x1**2) ** 2 / 4
        gam = np.conj(f1) / (1 - np.abs(f1) ** 2)
        tau[i] = lap_h + 2 * gam * (1 - x1**2) ** 2 * hz * hzb
    return tau


def _map(grid, values):
    return DiskMap(grid, values, identity_map(), MetricField.hyperbolic(grid))


def test_complex_derivatives_of_linear_maps(small_grid):
    z = small_grid.z
    inner = small_grid.interior
    hz, hzb = complex_derivatives(_map(small_grid, z))
    assert np.allclose(hz[inner], 1, atol=1e-11) and np.allclose(hzb[inner], 0, atol=1e-11)
    hz, hzb = complex_derivatives(_map(small_grid, np.conj(z)))
    assert np.allclose(hz[inner], 0, atol=1e-11) and np.allclose(hzb[inner], 1, atol=1e-11)


def test_complex_derivatives_of_square_converge():
    errs = []
    for n in (32, 64):
        g = DiskGrid(n, 2 * n, 0.9)
        hz, hzb = complex_derivatives(_map(g, 0.5 * g.z**2))
        m = g.interior & (g.R >= 0.2)
        errs.append(max(np.max(np.abs(hz - g.z)[m]), np.max(np.abs(hzb)[m])))
    assert errs[0] / errs[1] > 3.5


def test_tension_of_identity_vanishes(small_grid):
    tau = tension(_map(small_grid, small_grid.z.astype(complex)))
    assert np.nanmax(np.abs(tau)) < 1e-10
    assert np.all(np.isnan(tau[-1]))


def test_tension_of_holomorphic_map_is_discretisation_error():
    errs = []
    for n in (32, 64):
        g = DiskGrid(n, 2 * n, 0.9)
        h = 0.3 * g.z + 0.2 * g.z**2
        m = g.interior & (g.R >= 0.2)
        errs.append(np.max(np.abs(tension(_map(g, h)))[m]))
    assert errs[0] / errs[1] > 3.5


def test_tension_matches_independent_stencil(small_grid):
    z = small_grid.z
    h = 0.8 * z + 0.1 * np.conj(z) * np.abs(z) ** 2 + 0.05 * z**2
    ours = tension(_map(small_grid, h))
    ref = independent_tension(small_grid, h)
    inner = small_grid.interior
    assert np.max(np.abs(ours - ref)[inner]) < 1e-8 * np.max(np.abs(ref[inner]))


def test_tension_rejects_points_outside_target(small_grid):
    h = small_grid.z * 1.1
    with pytest.raises(ValueError):
        tension(_map(small_grid, h))


def test_identity_energy_is_truncated_area(small_grid):
    E = dirichlet_energy(_map(small_grid, small_grid.z.astype(complex)))
    r = small_grid.r_max
    assert E == pytest.approx(4 * np.pi * r**2 / (1 - r**2), rel=1e-12)


def test_christoffel_matches_log_sigma_differences(bump_metric_small):
    geom = TargetGeometry(bump_metric_small)
    w = np.array([0.1 + 0.2j, -0.5 + 0.3j, 0.7j, 0.6])
    gam, _, _ = geom.christoffel(w)
    eps = 1e-6
    ls = lambda v: 0.5 * np.log(geom.sigma2(v))  # noqa: E731
    fx = (ls(w + eps) - ls(w - eps)) / (2 * eps)
    fy = (ls(w + 1j * eps) - ls(w - 1j * eps)) / (2 * eps)
    assert np.max(np.abs(gam - 0.5 * (fx - 1j * fy))) < 1e-6


def test_christoffel_derivatives_by_differences(bump_metric_small):
    geom = TargetGeometry(bump_metric_small)
    w = np.array([0.15 - 0.25j, -0.4 + 0.4j])
    _, g_w, g_wb = geom.christoffel(w, derivatives=True)
    eps = 1e-5
    gx = (geom.christoffel(w + eps)[0] - geom.christoffel(w - eps)[0]) / (2 * eps)
    gy = (geom.christoffel(w + 1j * eps)[0] - geom.christoffel(w - 1j * eps)[0]) / (2 * eps)
    assert np.max(np.abs(g_w - 0.5 * (gx - 1j * gy))) < 1e-5
    assert np.max(np.abs(g_wb - 0.5 * (gx + 1j * gy))) < 1e-5


def test_identity_solve_is_immediate(identity_small, small_grid):
    assert identity_small.iterations == 0
    assert np.max(np.abs(identity_small.values - small_grid.z)) < 1e-10


def test_rotation_solve(hyp_small, small_grid):
    h = solve_harmonic(hyp_small, rotation_map(0.4), small_grid)
    assert np.max(np.abs(h.values - np.exp(0.4j) * small_grid.z)) < 1e-8


def test_sine_solution_properties(sine_map_small, small_grid):
    h = sine_map_small
    assert h.residual_norm <= 1e-8
    assert np.nanmax(np.abs(tension(h))) <= 1e-8
    hist = h.energy_history
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    init = h.with_values(douady_earle_initializer(small_grid, h.boundary))
    assert h.energy <= dirichlet_energy(init)
    assert np.all(np.abs(h.values[small_grid.interior]) < small_grid.r_max)


def test_rim_data_is_bit_exact(sine_map_small, small_grid):
    rim = rim_values(small_grid, sine_map(0.5))
    assert np.array_equal(sine_map_small.values[-1], rim)


def test_initialisations_agree(hyp_small, small_grid, sine_map_small):
    tol = 1e-8
    other = solve_harmonic(hyp_small, sine_map(0.5), small_grid, init="identity", tol=tol)
    assert np.max(np.abs(other.values - sine_map_small.values)) < 10 * tol


def test_warm_start_from_solution(hyp_small, small_grid, sine_map_small):
    again = solve_harmonic(hyp_small, sine_map(0.5), small_grid, init=sine_map_small)
    assert again.iterations == 0
    assert np.array_equal(again.values, sine_map_small.values)


def test_bump_target_solution(sine_bump_small):
    assert sine_bump_small.residual_norm <= 1e-8
    assert np.nanmax(np.abs(tension(sine_bump_small))) <= 1e-8


def test_callback_sees_every_iteration(hyp_small, small_grid):
    seen = []
    h = solve_harmonic(hyp_small, sine_map(0.3), small_grid, callback=lambda *a: seen.append(a[:2]))
    assert len(seen) == h.iterations
    assert [s[1] for s in seen] == list(range(1, h.iterations + 1))


def test_deterministic(hyp_small, small_grid, sine_map_small):
    again = solve_harmonic(hyp_small, sine_map(0.5), small_grid)
    assert again.values.tobytes() == sine_map_small.values.tobytes()


def test_solver_error_paths(hyp_small, small_grid):
    phi = sine_map(0.5)
    with pytest.raises(ValueError):
        solve_harmonic(hyp_small, phi, small_grid, tol=0)
    with pytest.raises(ValueError):
        solve_harmonic(hyp_small, phi, DiskGrid(16, 32, 0.95))
    with pytest.raises(ValueError):
        solve_harmonic(hyp_small, phi, small_grid, init="random")
    with pytest.raises(ValueError):
        solve_harmonic(hyp_small, phi, small_grid, init=np.zeros((3, 3)))
    with pytest.raises(HarmonicSolveError) as err:
        solve_harmonic(hyp_small, phi, small_grid, max_descent=0, max_newton=0)
    assert err.value.residual > 1e-8
