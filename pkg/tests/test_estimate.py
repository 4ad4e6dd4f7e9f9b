import math

import numpy as np
import pytest

from wolfflab import (
    GridFunction,
    KernelSpec,
    Measure,
    Params,
    SolveConfig,
    assemble_weights,
    av_functional,
    build_lattice,
    comparison_probe,
    excess,
    excess_decay_probe,
    sharp_maximal,
    sobolev_ratio,
    solve_dirichlet,
    verify_oscillation,
    verify_two_sided,
)
from wolfflab.estimate import DegenerateInput, dini_profile
from wolfflab.solver import solve_dirichlet_linear


def _scan_oracle(ball_vals, pm1, num=200001):
    ks = np.linspace(ball_vals.min() - 1.0, ball_vals.max() + 1.0, num)
    obj = (np.mean(np.abs(ball_vals[None, :] - ks[:, None]) ** pm1, axis=1)) ** (1.0 / pm1)
    return float(np.min(obj))


def test_av_constant(lat16, prm2):
    f = GridFunction.constant(lat16, 2.5)
    val, k = av_functional(f, [0.5, 0.5], 0.2, prm2)
    assert val == 0.0
    assert k == pytest.approx(2.5)


def test_av_two_valued_matches_scan_oracle(lat16):
    # split a ball into two exactly equal halves carrying 0 and 1
    d = np.linalg.norm(lat16.nodes - np.array([0.5, 0.5]), axis=1)
    idx = np.flatnonzero(d <= 0.2)
    idx = idx[: 2 * (len(idx) // 2)]
    vals = np.full(lat16.n_nodes, np.nan)
    vals[:] = 0.0
    vals[idx[: len(idx) // 2]] = 1.0
    # park the remaining ball nodes outside by moving them out of the ball set:
    # instead evaluate on a function that is 0/1 only on the chosen nodes
    f = GridFunction(lat16, vals)
    p2, p3 = Params(2, 0.5, 2.0), Params(2, 0.5, 3.0)
    ball_vals = vals[np.flatnonzero(d <= 0.2)]
    got2, _ = av_functional(f, [0.5, 0.5], 0.2, p2)
    assert got2 == pytest.approx(_scan_oracle(ball_vals, 1.0), abs=1e-6)
    got3, k3 = av_functional(f, [0.5, 0.5], 0.2, p3)
    assert got3 == pytest.approx(_scan_oracle(ball_vals, 2.0), abs=1e-6)
    # p = 3 on an exactly balanced two-valued set: mean at 1/2, value 1/2
    frac = np.mean(ball_vals)
    want = math.sqrt(frac * (1 - frac) ** 2 + (1 - frac) * frac ** 2)
    assert got3 == pytest.approx(want, abs=5e-3)


def test_excess_constant_and_homogeneity(lat16, prm2):
    fc = GridFunction.constant(lat16, 1.3)
    res = excess(fc, [0.5, 0.5], 0.2, prm2)
    assert res.value == pytest.approx(0.0, abs=1e-12)
    assert res.k_star == pytest.approx(1.3, abs=1e-6)

    vals = np.sin(2 * np.pi * lat16.nodes[:, 0]) * np.cos(np.pi * lat16.nodes[:, 1])
    g = GridFunction(lat16, vals)
    e1 = excess(g, [0.5, 0.5], 0.25, prm2).value
    e3 = excess(g.scaled(3.0), [0.5, 0.5], 0.25, prm2).value
    assert e3 == pytest.approx(3.0 * e1, rel=1e-6)
    av, _ = av_functional(g, [0.5, 0.5], 0.25, prm2)
    assert e1 >= av - 1e-12
    res = excess(g, [0.5, 0.5], 0.25, prm2)
    assert res.value == pytest.approx(res.av_component + res.tail_component, rel=1e-12)


def test_excess_indicator_matches_dense_scan(lat16, prm2):
    # indicator of the ball itself: compare against a brute-force k scan of
    # the full objective (ball average plus shifted tail)
    from wolfflab.estimate import _ShiftedTail, _ball_node_idx

    x0, r = [0.5, 0.5], 0.2
    d = np.linalg.norm(lat16.nodes - np.array(x0), axis=1)
    f = GridFunction(lat16, (d <= r).astype(float))
    res = excess(f, x0, r, prm2)
    idx = _ball_node_idx(lat16, x0, r)
    tail_of = _ShiftedTail(f, x0, r, prm2)
    ks = np.linspace(-0.5, 1.5, 80001)
    pm1 = prm2.p - 1.0
    brute = min(float(np.mean(np.abs(f.values[idx] - k) ** pm1)) ** (1.0 / pm1)
                + tail_of(k) for k in ks)
    assert res.value > 0.0
    assert res.value == pytest.approx(brute, rel=1e-6)


def test_excess_decay_probe_measure_solve_reports_residual(lat16, kernel2, prm2,
                                                           weights2_16):
    # diagnostic mode: a measure-data solve yields a finite fit and residual
    m = Measure.dirac([0.5, 0.5], 1.0)
    res = solve_dirichlet(m, lat16, kernel2, cfg=SolveConfig(tol=1e-9),
                          weights=weights2_16)
    probe = excess_decay_probe(res.u, [0.5, 0.5], [0.4, 0.3, 0.25], prm2)
    assert not probe.degenerate
    assert math.isfinite(probe.residual)
    assert len(probe.excesses) == 3


def test_excess_shift_invariance(lat16, prm15):
    rng = np.random.default_rng(3)
    g = GridFunction(lat16, rng.normal(size=lat16.n_nodes), exterior_const=0.2)
    base = excess(g, [0.5, 0.5], 0.3, prm15)
    shifted = excess(g.shifted(5.0), [0.5, 0.5], 0.3, prm15)
    assert shifted.value == pytest.approx(base.value, rel=1e-6)
    assert shifted.k_star == pytest.approx(base.k_star + 5.0, abs=1e-4)


def test_sharp_maximal(lat16, prm2):
    z = GridFunction(lat16)
    assert sharp_maximal(z, [0.5, 0.5], 0.0, 0.25, prm2) == 0.0
    c = GridFunction.constant(lat16, 2.0)
    assert sharp_maximal(c, [0.5, 0.5], 0.0, 0.25, prm2) == pytest.approx(0.0, abs=1e-12)
    vals = np.sin(2 * np.pi * lat16.nodes[:, 0])
    g = GridFunction(lat16, vals)
    got = sharp_maximal(g, [0.5, 0.5], 0.0, 0.25, prm2)
    dyadic = []
    r = 0.25
    while r >= 2 * lat16.h * (1 - 1e-12):
        dyadic.append(excess(g, [0.5, 0.5], r, prm2).value)
        r *= 0.5
    assert got == pytest.approx(max(dyadic), rel=1e-12)
    with pytest.raises(ValueError):
        sharp_maximal(g, [0.5, 0.5], -0.1, 0.25, prm2)


def test_verify_two_sided_zero_measure(lat16, kernel2, prm2, weights2_16):
    res = solve_dirichlet(Measure.zero(2), lat16, kernel2,
                          cfg=SolveConfig(tol=1e-10), weights=weights2_16)
    rep = verify_two_sided(res.u, Measure.zero(2), prm2, lat16)
    assert rep.vacuous


def test_verify_two_sided_dirac_band(lat16, kernel2, prm2, weights2_16):
    m = Measure.dirac([0.5, 0.5], 1.0)
    res = solve_dirichlet(m, lat16, kernel2, cfg=SolveConfig(tol=1e-10),
                          weights=weights2_16)
    rep = verify_two_sided(res.u, m, prm2, lat16)
    assert rep.excluded > 0
    assert np.all(np.isfinite(rep.w_upper))
    up = rep.upper_ratios()
    assert len(up) and np.all(np.isfinite(up))
    assert math.isfinite(rep.c0_emp)


def test_verify_band_scaling_invariance(lat16, kernel2, prm2, weights2_16):
    # at p = 2 both the solution and the reference scale linearly in the mass
    m1 = Measure.dirac([0.5, 0.5], 1.0)
    m3 = Measure.dirac([0.5, 0.5], 3.0)
    u1 = solve_dirichlet_linear(m1, lat16, kernel2, weights=weights2_16).u
    u3 = solve_dirichlet_linear(m3, lat16, kernel2, weights=weights2_16).u
    r1 = verify_two_sided(u1, m1, prm2, lat16, tol=1e-10)
    r3 = verify_two_sided(u3, m3, prm2, lat16, tol=1e-10)
    assert r1.upper_band[1] == pytest.approx(r3.upper_band[1], abs=1e-8)
    assert r1.upper_band[0] == pytest.approx(r3.upper_band[0], abs=1e-8)


def test_verify_oscillation(lat16, kernel2, prm2, weights2_16):
    m = Measure.dirac([0.5, 0.5], 1.0)
    res = solve_dirichlet(m, lat16, kernel2, cfg=SolveConfig(tol=1e-10),
                          weights=weights2_16)
    same = verify_oscillation(res.u, m, [0.3, 0.5], [0.3, 0.5], [0.35, 0.5],
                              0.3, 0.0, prm2)
    assert same == 0.0
    ratio = verify_oscillation(res.u, m, [0.30, 0.50], [0.35, 0.55], [0.35, 0.5],
                               0.3, 0.0, prm2)
    assert 0.0 < ratio < math.inf
    # zero data with nonzero exterior: homogeneous oscillation, finite ratio
    g = GridFunction.from_callable(lat16, lambda x: x[0])
    hom = solve_dirichlet(Measure.zero(2), lat16, kernel2, exterior=g,
                          cfg=SolveConfig(tol=1e-10), weights=weights2_16)
    r2 = verify_oscillation(hom.u, Measure.zero(2), [0.35, 0.5], [0.45, 0.5],
                            [0.4, 0.5], 0.35, 0.1, prm2)
    assert 0.0 < r2 < math.inf


def test_excess_decay_probe_degenerate(lat16, prm2):
    c = GridFunction.constant(lat16, 1.0)
    probe = excess_decay_probe(c, [0.5, 0.5], [0.4, 0.3], prm2)
    assert probe.degenerate
    with pytest.raises(ValueError):
        excess_decay_probe(c, [0.5, 0.5], [0.4], prm2)
    with pytest.raises(ValueError):
        excess_decay_probe(c, [0.5, 0.5], [0.4, lat16.h], prm2)


def test_excess_decay_probe_homogeneous():
    prm = Params(2, 0.6, 2.0)
    kspec = KernelSpec(prm)
    lat = build_lattice(([0.0, 0.0], [2.0, 2.0]), 2.0 / 48.0, collar=2, trunc_factor=2.5)
    w = assemble_weights(lat, kspec, prm)
    g = GridFunction.from_callable(lat, lambda x: x[0] - 1.0)
    res = solve_dirichlet_linear(Measure.zero(2), lat, kspec, exterior=g, weights=w)
    probe = excess_decay_probe(res.u, [1.0, 1.0], [0.8, 0.4, 0.2], prm)
    assert not probe.degenerate
    assert probe.alpha > 0.0


def test_comparison_probe(prm15, kernel15):
    lat = build_lattice(([0.0, 0.0], [1.0, 1.0]), 1.0 / 12.0, collar=2, trunc_factor=3.0)
    w = assemble_weights(lat, kernel15, prm15)
    with pytest.raises(ValueError):
        comparison_probe(Measure.zero(2), lat, KernelSpec(Params(2, 0.5, 2.0)),
                         0.2, [0.5, 0.5])
    lhs0, rhs0 = comparison_probe(Measure.zero(2), lat, kernel15, 0.2, [0.5, 0.5],
                                  cfg=SolveConfig(tol=1e-10), weights=w)
    assert lhs0 == pytest.approx(0.0, abs=1e-8)
    m = Measure.dirac([0.5, 0.5], 0.3)
    lhs, rhs = comparison_probe(m, lat, kernel15, 0.2, [0.5, 0.5],
                                cfg=SolveConfig(tol=1e-9), weights=w)
    assert math.isfinite(lhs) and math.isfinite(rhs) and rhs > 0.0
    assert lhs > 0.0


def test_sobolev_ratio_properties(prm15):
    lat = build_lattice(([0.0, 0.0], [1.0, 1.0]), 1.0 / 16.0, collar=2, trunc_factor=3.0)

    def bump(x):
        r2 = ((x[0] - 0.5) ** 2 + (x[1] - 0.5) ** 2) / 0.3 ** 2
        return math.exp(-1.0 / (1.0 - r2)) if r2 < 1 else 0.0

    f = GridFunction.from_callable(lat, bump)
    ratio = sobolev_ratio(f, [0.5, 0.5], 0.3, 0.5, 0.5, prm15)
    assert math.isfinite(ratio) and ratio > 0.0
    assert sobolev_ratio(f.scaled(4.0), [0.5, 0.5], 0.3, 0.5, 0.5, prm15) == \
        pytest.approx(ratio, rel=1e-9)
    with pytest.raises(DegenerateInput):
        sobolev_ratio(GridFunction(lat), [0.5, 0.5], 0.3, 0.5, 0.5, prm15)
    with pytest.raises(ValueError):
        sobolev_ratio(f, [0.5, 0.5], 0.3, 0.5, 1.5, prm15)
    supported_everywhere = GridFunction.constant(lat, 1.0)
    with pytest.raises(ValueError, match="vanish"):
        sobolev_ratio(supported_everywhere, [0.5, 0.5], 0.3, 0.5, 0.5, prm15)


def test_dini_profile(prm2):
    m = Measure.dirac([0.5, 0.5], 1.0)
    rep = dini_profile(m, prm2, [[0.4, 0.5], [0.6, 0.5]], [0.5, 0.25, 0.125])
    assert len(rep["h"]) == 3
    assert all(v >= 0.0 for v in rep["h"])
    z = dini_profile(Measure.zero(2), prm2, [[0.5, 0.5]], [0.5, 0.25])
    assert all(v == 0.0 for v in z["h"])
