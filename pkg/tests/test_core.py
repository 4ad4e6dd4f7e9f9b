import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from wolfflab import (
    KernelSpec,
    Params,
    ReactionSpec,
    log_weight,
    phi_eval,
    psi_eval,
    reaction_conjugate,
    reaction_eval,
    reaction_series,
    trunc_exp,
)
from wolfflab.core import psi_values, signed_power_ratio_sup


def test_params_derived_exponents():
    prm = Params(2, 0.5, 2.0)
    assert prm.sp == 1.0
    assert prm.q0 == pytest.approx(2.0)
    assert prm.qbar == pytest.approx(2.0 / 1.5)


@pytest.mark.parametrize("bad", [
    dict(n=1, s=0.5, p=2.0),
    dict(n=2, s=0.0, p=2.0),
    dict(n=2, s=1.0, p=2.0),
    dict(n=2, s=0.5, p=1.0),
    dict(n=2, s=0.5, p=4.0),       # p = n/s not allowed
    dict(n=2, s=0.5, p=2.0, lam=0.5),
])
def test_params_rejects_bad_ranges(bad):
    with pytest.raises(ValueError):
        Params(**bad)


def test_phi_default_values():
    assert phi_eval(3.0, KernelSpec(Params(2, 0.5, 2.0))) == pytest.approx(3.0)
    k15 = KernelSpec(Params(2, 0.5, 1.5))
    assert phi_eval(4.0, k15) == pytest.approx(2.0)
    assert phi_eval(-4.0, k15) == pytest.approx(-2.0)
    assert phi_eval(0.0, k15) == 0.0


@given(t=st.floats(min_value=-30.0, max_value=30.0,
                   allow_nan=False, allow_infinity=False))
@settings(max_examples=60, deadline=None)
def test_phi_ellipticity_band(t):
    for p in (1.5, 2.0, 2.7):
        k = KernelSpec(Params(2, 0.5, p))
        prod = phi_eval(t, k) * t
        assert abs(t) ** p * (1 - 1e-12) <= prod + 1e-30
        assert prod <= abs(t) ** p * (1 + 1e-12) + 1e-30


def test_psi_values():
    assert psi_eval(2.0, KernelSpec(Params(2, 0.5, 2.0))) == pytest.approx(2.0)
    assert psi_eval(0.0, KernelSpec(Params(2, 0.5, 1.5))) == 0.0
    # antiderivative oracle for the p = 1.5 case
    oracle, _ = quad(lambda t: math.sqrt(t), 0.0, 4.0)
    got = psi_eval(4.0, KernelSpec(Params(2, 0.5, 1.5)))
    assert got == pytest.approx(oracle, rel=1e-12)
    assert got == pytest.approx(16.0 / 3.0, rel=1e-12)


def test_psi_even_and_midpoint_convex():
    k = KernelSpec(Params(2, 0.5, 1.5))
    ts = np.linspace(-6.0, 6.0, 41)
    vals = np.array([psi_eval(t, k) for t in ts])
    assert np.allclose(vals, vals[::-1])
    mids = np.array([psi_eval(0.5 * (a + b), k) for a, b in zip(ts[:-2], ts[2:])])
    assert np.all(mids <= 0.5 * (vals[:-2] + vals[2:]) + 1e-12)


def test_custom_phi_must_be_monotone():
    prm = Params(2, 0.5, 2.0, lam=4.0)
    # in-band (product between 0.6 t^2 and 1.4 t^2) but non-monotone
    with pytest.raises(ValueError, match="nondecreasing"):
        KernelSpec(prm, phi=lambda t: t * (1.0 + 0.4 * math.sin(8.0 * t)))
    # a valid in-band monotone perturbation passes
    KernelSpec(prm, phi=lambda t: t * (1.5 + 0.2 * math.tanh(t)))


def test_custom_kernel_band_checked():
    prm = Params(2, 0.5, 2.0, lam=2.0)
    with pytest.raises(ValueError, match="band"):
        KernelSpec(prm, kernel=lambda x, y: 100.0 * np.linalg.norm(
            np.asarray(x) - np.asarray(y), axis=-1) ** -3.0)
    KernelSpec(prm, kernel=lambda x, y: 1.5 * np.linalg.norm(
        np.asarray(x) - np.asarray(y), axis=-1) ** -3.0)


def test_psi_values_custom_matches_quad():
    prm = Params(2, 0.5, 2.0, lam=4.0)
    k = KernelSpec(prm, phi=lambda t: t * (1.5 + 0.2 * math.tanh(t)))
    ts = np.array([-2.0, 0.3, 1.7])
    got = psi_values(ts, k)
    for t, g in zip(ts, got):
        want, _ = quad(k.phi, 0.0, abs(t))
        assert g == pytest.approx(want, rel=1e-8)


def _trunc_exp_series_oracle(l, t, terms=60):
    return math.fsum(t ** j / math.factorial(j) for j in range(l, l + terms))


@pytest.mark.parametrize("l,t", [(1, 1.0), (2, 1.0), (3, 0.25), (1, 7.5)])
def test_trunc_exp_matches_series_oracle(l, t):
    assert trunc_exp(l, t) == pytest.approx(_trunc_exp_series_oracle(l, t), rel=1e-13)


def test_trunc_exp_edges():
    assert trunc_exp(2, 0.0) == 0.0
    assert trunc_exp(1, 1.0) == pytest.approx(math.e - 1.0, rel=1e-14)
    assert trunc_exp(2, 1.0) == pytest.approx(math.e - 2.0, rel=1e-13)
    with pytest.raises(ValueError):
        trunc_exp(1, -0.5)
    with pytest.raises(ValueError):
        trunc_exp(0, 1.0)
    ts = np.linspace(0.0, 4.0, 30)
    vals = [trunc_exp(2, t) for t in ts]
    assert np.all(np.diff(vals) > 0.0)


def test_reaction_eval():
    assert reaction_eval(ReactionSpec.power(3.0), 2.0) == pytest.approx(8.0)
    r = ReactionSpec.exponential(1, 1.0, 1.0)
    assert reaction_eval(r, 1.0) == pytest.approx(math.e - 1.0, rel=1e-13)
    r2 = ReactionSpec.exponential(1, 2.0, 2.0)
    assert reaction_eval(r2, 1.0) == pytest.approx(math.e ** 2 - 1.0, rel=1e-13)
    assert reaction_eval(ReactionSpec.zero(), 5.0) == 0.0
    with pytest.raises(ValueError):
        reaction_eval(r, -1.0)


def test_reaction_spec_validation():
    with pytest.raises(ValueError):
        ReactionSpec.power(0.5, Params(2, 0.5, 2.0))
    with pytest.raises(ValueError):
        ReactionSpec.exponential(0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ReactionSpec.exponential(1, -1.0, 1.0)
    # coupling with p is deferred to check()
    r = ReactionSpec.exponential(1, 1.0, 1.0)
    with pytest.raises(ValueError):
        r.check(Params(2, 0.5, 2.5))


def test_log_weight():
    assert log_weight(0.0, 0.37) == 1.0
    assert log_weight(1.0, 0.25) == pytest.approx(1.0 / math.log(4.0), rel=1e-14)
    assert log_weight(2.0, 0.9) == pytest.approx(math.log(2.0) ** -2, rel=1e-14)
    with pytest.raises(ValueError):
        log_weight(1.0, 0.0)
    # continuous across the branch point
    assert log_weight(1.5, 0.5 - 1e-12) == pytest.approx(log_weight(1.5, 0.5), rel=1e-9)


def _series_oracle_p3(t, terms=80):
    # independent summation of the p = 3, l = 1, beta = 1 growth series
    return math.fsum(t ** (q / 2.0) / (math.factorial(q) * q ** (q / 2.0))
                     for q in range(1, terms))


def test_reaction_series():
    r = ReactionSpec.exponential(1, 1.0, 1.0)
    prm2 = Params(2, 0.5, 2.0)
    assert reaction_series(r, prm2, 1.0) == pytest.approx(math.e - 1.0, rel=1e-13)
    prm3 = Params(2, 0.5, 3.0)
    assert reaction_series(r, prm3, 0.0) == 0.0
    assert reaction_series(r, prm3, 1.0) == pytest.approx(_series_oracle_p3(1.0), rel=1e-12)
    assert reaction_series(r, prm3, 2.5) == pytest.approx(_series_oracle_p3(2.5), rel=1e-12)


def test_reaction_conjugate_values():
    r = ReactionSpec.exponential(1, 1.0, 1.0)
    prm = Params(2, 0.5, 2.0)
    assert reaction_conjugate(r, prm, 0.0) == 0.0
    assert reaction_conjugate(r, prm, 1.0) == pytest.approx(0.0, abs=1e-10)
    # analytic value t ln t - t + 1 at t = e
    assert reaction_conjugate(r, prm, math.e) == pytest.approx(1.0, abs=1e-8)
    assert reaction_conjugate(r, prm, 5.0) == pytest.approx(
        5.0 * math.log(5.0) - 4.0, rel=1e-8)


def test_reaction_conjugate_convex_nonneg():
    r = ReactionSpec.exponential(1, 1.0, 1.0)
    prm = Params(2, 0.5, 3.0)
    ts = np.linspace(0.0, 6.0, 25)
    vals = np.array([reaction_conjugate(r, prm, t) for t in ts])
    assert np.all(vals >= 0.0)
    mid = np.array([reaction_conjugate(r, prm, 0.5 * (a + b))
                    for a, b in zip(ts[:-2], ts[2:])])
    assert np.all(mid <= 0.5 * (vals[:-2] + vals[2:]) + 1e-8)


@given(t=st.floats(min_value=0.0, max_value=6.0),
       tt=st.floats(min_value=0.0, max_value=6.0))
@settings(max_examples=40, deadline=None)
def test_fenchel_young_inequality(t, tt):
    r = ReactionSpec.exponential(1, 1.0, 1.0)
    prm = Params(2, 0.5, 3.0)
    lhs = t * tt
    rhs = reaction_series(r, prm, tt) + reaction_conjugate(r, prm, t)
    assert lhs <= rhs + 1e-8 * (1.0 + rhs)


def test_fenchel_young_equality_at_maximizer():
    r = ReactionSpec.exponential(1, 1.0, 1.0)
    for p in (2.0, 3.0):
        prm = Params(2, 0.5, p)
        for t in (0.9, 1.7, 3.3):
            val, arg = reaction_conjugate(r, prm, t, return_argmax=True)
            gap = abs(t * arg - reaction_series(r, prm, arg) - val)
            assert gap <= 1e-6


def test_signed_power_scan_sup():
    # analytic sup 2^(1-q), attained as a -> -b
    for q in (0.3, 0.5, 0.9):
        got = signed_power_ratio_sup(q, num=400)
        assert got == pytest.approx(2.0 ** (1.0 - q), rel=1e-3)
        refined = signed_power_ratio_sup(q, num=800)
        assert abs(got - refined) <= 0.15 * refined
    with pytest.raises(ValueError):
        signed_power_ratio_sup(1.5)
