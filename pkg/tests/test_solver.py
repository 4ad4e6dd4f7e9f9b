import math

import numpy as np
import pytest

from wolfflab import (
    GridFunction,
    Measure,
    SolveConfig,
    build_lattice,
    compare,
    lane_emden_exponential,
    lane_emden_power,
    scalar_recursion,
    sola_solve,
    solve_dirichlet,
)
from wolfflab.measure import DensityGrid
from wolfflab.solver import solve_dirichlet_linear


def test_zero_measure_gives_zero(lat16, kernel2, weights2_16):
    res = solve_dirichlet(Measure.zero(2), lat16, kernel2,
                          cfg=SolveConfig(tol=1e-10), weights=weights2_16)
    assert res.converged
    assert np.max(np.abs(res.u.values)) == 0.0


def test_linear_oracle(lat16, kernel2, weights2_16):
    m = Measure(atoms=[((0.5, 0.5), 1.0), ((0.23, 0.71), 0.4)])
    cfg = SolveConfig(tol=1e-11, max_sweeps=5000)
    res = solve_dirichlet(m, lat16, kernel2, cfg=cfg, weights=weights2_16)
    ref = solve_dirichlet_linear(m, lat16, kernel2, weights=weights2_16)
    gap = np.max(np.abs(res.u.values - ref.u.values))
    assert res.converged
    assert gap <= 10.0 * cfg.tol * max(1.0, np.max(np.abs(ref.u.values)))


def test_nonnegative_measure_nonnegative_solution(lat16, kernel15, weights15_16):
    m = Measure(atoms=[((0.4, 0.6), 0.7)])
    res = solve_dirichlet(m, lat16, kernel15, cfg=SolveConfig(tol=1e-9),
                          weights=weights15_16)
    assert res.converged
    assert np.min(res.u.values) >= -1e-12
    assert np.max(res.u.values) > 0.0


def test_energy_decreases_per_sweep(lat16, kernel15, weights15_16):
    m = Measure(atoms=[((0.5, 0.5), 1.0)])
    res = solve_dirichlet(m, lat16, kernel15, cfg=SolveConfig(tol=1e-9),
                          weights=weights15_16)
    trace = res.energy_trace
    assert len(trace) == res.sweeps
    assert np.all(np.diff(trace) <= 1e-12 * (1.0 + np.abs(trace[:-1])))


def test_non_convergence_flag(lat16, kernel2, weights2_16):
    m = Measure(atoms=[((0.5, 0.5), 1.0)])
    res = solve_dirichlet(m, lat16, kernel2, cfg=SolveConfig(tol=1e-14, max_sweeps=2),
                          weights=weights2_16)
    assert not res.converged
    assert res.sweeps == 2


def test_exterior_data_grid_function(lat16, kernel2, weights2_16):
    g = GridFunction.from_callable(lat16, lambda x: x[0], exterior_const=0.0)
    res = solve_dirichlet(Measure.zero(2), lat16, kernel2, exterior=g,
                          cfg=SolveConfig(tol=1e-10), weights=weights2_16)
    # collar values are kept, interior interpolates between data and far zero
    assert np.allclose(res.u.values[lat16.collar_idx], g.values[lat16.collar_idx])
    assert res.u.values[lat16.node_index([0.9, 0.5])] > res.u.values[lat16.node_index([0.1, 0.5])]


def test_measure_on_fixed_nodes_rejected(lat16, kernel2, weights2_16):
    stray = Measure(atoms=[((-0.05, 0.5), 1.0)])  # collar node region
    with pytest.raises(ValueError):
        solve_dirichlet(stray, lat16, kernel2, weights=weights2_16)


def test_compare():
    lat = build_lattice(([0, 0], [1, 1]), 0.25, collar=2)
    u = GridFunction(lat, np.random.default_rng(0).normal(size=lat.n_nodes))
    rep = compare(u, u)
    assert rep["max_diff"] == 0.0
    assert rep["violations"] == 0
    v = GridFunction(lat, u.values - 1e-3)
    assert compare(v, u, tol=1e-7)["violations"] == 0
    assert compare(u, v, tol=1e-7)["violations"] > 0
    other = build_lattice(([0, 0], [1, 1]), 0.125, collar=2)
    with pytest.raises(ValueError):
        compare(u, GridFunction(other))


def test_comparison_principle_ordered_measures(lat16, kernel15, weights15_16):
    rng = np.random.default_rng(5)
    shape = lat16.node_shape
    inner = lat16.interior_mask.reshape(shape)
    v1 = np.where(inner, rng.uniform(0, 1, shape), 0.0)
    v2 = v1 + np.where(inner, rng.uniform(0, 1, shape), 0.0)
    origin = lat16.node_origin - 0.5 * lat16.h
    m1 = Measure(density=DensityGrid(origin, lat16.h, shape, v1))
    m2 = Measure(density=DensityGrid(origin, lat16.h, shape, v2))
    cfg = SolveConfig(tol=1e-9, max_sweeps=8000, track_energy=False)
    r1 = solve_dirichlet(m1, lat16, kernel15, cfg=cfg, weights=weights15_16)
    r2 = solve_dirichlet(m2, lat16, kernel15, cfg=cfg, weights=weights15_16)
    assert compare(r1.u, r2.u, tol=1e-7)["violations"] == 0


def test_sola_zero_measure(lat16, kernel2, weights2_16):
    rep = sola_solve(Measure.zero(2), lat16, kernel2, [2, 4],
                     cfg=SolveConfig(tol=1e-10), weights=weights2_16)
    assert np.max(np.abs(rep.final.values)) == 0.0
    assert all(d == 0.0 for d in rep.stage_distances)


def test_sola_smooth_density_near_identity(lat16, kernel2, weights2_16):
    # mollifier radii below the cell size collapse to the same nodal masses,
    # so consecutive stages agree to solver tolerance
    shape = lat16.node_shape
    xs = lat16.nodes[:, 0].reshape(shape)
    ys = lat16.nodes[:, 1].reshape(shape)
    vals = np.where(lat16.interior_mask.reshape(shape),
                    1.0 + 0.5 * np.sin(2 * np.pi * xs) * np.sin(np.pi * ys), 0.0)
    m = Measure(density=DensityGrid(lat16.node_origin - 0.5 * lat16.h, lat16.h,
                                    shape, vals))
    cfg = SolveConfig(tol=1e-9, max_sweeps=6000)
    rep = sola_solve(m, lat16, kernel2, [40, 80], cfg=cfg, weights=weights2_16)
    assert rep.stage_distances[0] <= 10.0 * cfg.tol


def test_sola_dirac_cauchy_trend(lat16, kernel2, weights2_16):
    m = Measure.dirac([0.5, 0.5])
    rep = sola_solve(m, lat16, kernel2, [2, 4, 8], q=1.0,
                     cfg=SolveConfig(tol=1e-9), weights=weights2_16)
    assert all(rep.stages_converged)
    assert np.min(rep.final.values) >= -1e-10
    assert rep.stage_distances[1] <= rep.stage_distances[0]
    assert all(m == pytest.approx(1.0, rel=1e-9) for m in rep.stage_masses)
    with pytest.raises(ValueError):
        sola_solve(m, lat16, kernel2, [4, 2], weights=weights2_16)


def test_lane_emden_power_zero_measure(lat16, kernel2, weights2_16):
    rep = lane_emden_power(Measure.zero(2), 3.0, lat16, kernel2,
                           cfg=SolveConfig(tol=1e-10), weights=weights2_16)
    assert rep.converged and not rep.diverged
    assert rep.iterations == 1
    assert np.max(np.abs(rep.final.values)) == 0.0


def test_lane_emden_power_requires_supercritical_gamma(lat16, kernel2, weights2_16):
    with pytest.raises(ValueError):
        lane_emden_power(Measure.zero(2), 0.9, lat16, kernel2, weights=weights2_16)


def test_lane_emden_exponential_small_dirac(lat16, kernel2, prm2, weights2_16):
    m = Measure.dirac([0.53, 0.47], 0.05)
    rep = lane_emden_exponential(m, 1, 1.0, 2.0, lat16, kernel2,
                                 cfg=SolveConfig(tol=1e-8), weights=weights2_16,
                                 max_iters=40)
    assert rep.converged and not rep.diverged
    assert rep.monotone
    # p = 2 exponential route reports the factor 2 * c_p with c_p = 1
    assert rep.bound_factor == pytest.approx(2.0)
    assert rep.ratio_max <= 1.0 + 1e-6


def test_lane_emden_exponential_zero(lat16, kernel2, weights2_16):
    rep = lane_emden_exponential(Measure.zero(2), 1, 1.0, 2.0, lat16, kernel2,
                                 cfg=SolveConfig(tol=1e-10), weights=weights2_16,
                                 delta=0.0)
    assert rep.converged
    assert np.max(np.abs(rep.final.values)) == 0.0


def test_scalar_recursion_cases():
    good = scalar_recursion(1.0, 0.25, 2.0, 2.0, 50)
    assert good.condition_holds
    assert abs(good.limit_estimate - 2.0) <= 1e-10
    assert good.bound == pytest.approx(2.0)
    assert good.bound_holds
    assert np.all(np.diff(good.sequence) >= -1e-15)

    flat = scalar_recursion(1.0, 0.0, 2.0, 2.0, 10)
    assert np.all(flat.sequence[1:] == flat.sequence[1])
    assert flat.sequence[1] == pytest.approx(1.0)  # c_star * max(2^0, 1)

    bad = scalar_recursion(1.0, 0.5, 2.0, 2.0, 60)
    assert not bad.condition_holds
    assert not bad.bound_holds
    assert bad.sequence[-1] > 1e6 or not math.isfinite(bad.sequence[-1])

    with pytest.raises(ValueError):
        scalar_recursion(1.0, 0.25, 0.5, 2.0, 10)


def test_lane_emden_divergence_flag(kernel2, prm2):
    # mass far above the blow-up threshold: sup doubles repeatedly
    lat = build_lattice(([0, 0], [1, 1]), 1.0 / 12.0, collar=2, trunc_factor=3.0)
    from wolfflab import assemble_weights

    w = assemble_weights(lat, kernel2, prm2)
    m = Measure.dirac([0.52, 0.48], 500.0)
    rep = lane_emden_power(m, 3.0, lat, kernel2,
                           cfg=SolveConfig(tol=1e-8, track_energy=False),
                           weights=w, max_iters=40)
    assert rep.diverged
    assert not rep.converged
    assert rep.final is None


def test_lane_emden_monotone_iterates(lat16, kernel2, weights2_16):
    m = Measure.dirac([0.52, 0.48], 2.0)
    rep = lane_emden_power(m, 3.0, lat16, kernel2,
                           cfg=SolveConfig(tol=1e-9), weights=weights2_16,
                           max_iters=30)
    assert rep.monotone
    assert all(inc >= -1e-8 for inc in rep.sup_increments)
