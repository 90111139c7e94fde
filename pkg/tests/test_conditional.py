"""Conditional laws against closed forms computed directly from normal densities."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from levybridge import (
    BrownianDrift,
    ExponentialDensity,
    GammaSubordinator,
    LengthMeasure,
    NormalDensity,
    Observation,
    PinningMeasure,
    markov_gap,
    predictive_law,
    q_density,
    survival_given_state,
    tau_posterior,
    two_time_tau_posterior,
    two_time_z_expectation,
    u_ratio,
    UniformDensity,
    y_transition,
    z_posterior_expectation,
)
from levybridge.errors import PreconditionError, ZeroEvidence

BM = BrownianDrift()
TAU12 = LengthMeasure.atomic(((1.0, 0.5), (2.0, 0.5)))
Z2 = PinningMeasure.atomic(((-1.0, 0.5), (1.0, 0.5)))
ZN = PinningMeasure.continuous(NormalDensity(0.0, 1.0))


def phi(t, x):
    return stats.norm.pdf(x, scale=math.sqrt(t))


def V_atoms(r, t, x):
    return sum(0.5 * phi(r - t, z - x) / phi(r, z) for z in (-1.0, 1.0))


def lphi(t, x):
    return stats.norm.logpdf(x, scale=math.sqrt(t))


def V_normal(r, t, x, g=lambda z: 1.0):
    f = lambda z: g(z) * math.exp(lphi(r - t, z - x) - lphi(r, z) + lphi(1.0, z))
    return integrate.quad(f, -np.inf, np.inf, epsabs=1e-14, epsrel=1e-12)[0]


# --- one time ---------------------------------------------------------------


@pytest.mark.parametrize("x", [-2.0, -0.3, 0.0, 1.1])
def test_z_posterior_tanh(x):
    # off the pins at t = 1.5 only tau = 2 survives; the two pins give tanh(x / (r - t))
    got = z_posterior_expectation(lambda z: z, Observation(1.5, x, False), BM, TAU12, Z2)
    assert got == pytest.approx(math.tanh(x / 0.5), abs=1e-12)


def test_z_posterior_on_pin_is_the_pin():
    assert z_posterior_expectation(lambda z: z, Observation(1.5, 1.0, True), BM, TAU12, Z2) == 1.0


@pytest.mark.parametrize("x", [-1.2, 0.4])
def test_tau_posterior_two_atoms(x):
    w1, w2 = 0.5 * V_atoms(1.0, 0.5, x), 0.5 * V_atoms(2.0, 0.5, x)
    law = tau_posterior(Observation(0.5, x, False), BM, TAU12, Z2)
    probs = dict(law.atoms)
    assert probs[1.0] == pytest.approx(w1 / (w1 + w2), rel=1e-12)
    assert law.total_mass() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("x", [-0.8, 0.7, 2.0])
def test_survival_absolutely_continuous_pin(x):
    A = stats.norm.pdf(x) * 0.5
    B = phi(1.5, x) * 0.5 * V_normal(2.0, 1.5, x)
    # P(tau <= t | zeta_t = x)
    got = survival_given_state(Observation(1.5, x, False), BM, TAU12, ZN)
    assert got == pytest.approx(A / (A + B), rel=1e-9)


def test_survival_binary_without_density_part():
    xs = np.array([-1.0, -0.4, 0.3, 1.0])
    flags = Z2.in_support(xs)
    got = survival_given_state(Observation(1.5, xs, flags), BM, TAU12, Z2)
    np.testing.assert_array_equal(got, np.where(flags, 1.0, 0.0))


def test_z_expectation_absolutely_continuous():
    x, t = 0.7, 1.5
    A = stats.norm.pdf(x) * 0.5
    num_b = phi(t, x) * 0.5 * V_normal(2.0, t, x, g=lambda z: z)
    B = phi(t, x) * 0.5 * V_normal(2.0, t, x)
    exact = (A * x + num_b) / (A + B)
    got = z_posterior_expectation(lambda z: z, Observation(t, x, False), BM, TAU12, ZN)
    assert got == pytest.approx(exact, rel=1e-9)


def test_q_density_branches():
    x = 0.3
    stopped = q_density(BM, TAU12, ZN, 1.0, x, 1.5)
    assert stopped == pytest.approx(stats.norm.pdf(x), rel=1e-12)
    running = q_density(BM, TAU12, ZN, 2.0, x, 1.5)
    assert running == pytest.approx(phi(1.5, x) * V_normal(2.0, 1.5, x), rel=1e-9)


def test_zero_evidence_for_unreachable_state():
    g = GammaSubordinator()
    lm = LengthMeasure.atomic(((1.0, 1.0),))
    pm = PinningMeasure.atomic(((0.5, 1.0),))
    with pytest.raises(ZeroEvidence):
        survival_given_state(Observation(0.5, 0.8, False), g, lm, pm)


def test_posterior_law_json():
    law = tau_posterior(Observation(0.5, 0.2, False), BM, TAU12, ZN)
    doc = json.loads(law.to_json())
    assert sum(p for _, p in doc["atoms"]) == pytest.approx(1.0)


def test_tau_posterior_density_part():
    lm = LengthMeasure.continuous(ExponentialDensity(1.0))
    t, x = 1.0, 0.4
    law = tau_posterior(Observation(t, x, False), BM, lm, ZN)
    assert law.total_mass() == pytest.approx(1.0, abs=1e-9)
    # P(tau <= t | x) = A / (A + B) with B = f_t(x) int_t^inf V(r) e^{-r} dr
    A = stats.norm.pdf(x) * (1 - math.exp(-t))
    B = phi(t, x) * integrate.quad(lambda r: V_normal(r, t, x) * math.exp(-r), t, np.inf, epsabs=1e-13)[0]
    assert law.info["past_mass"] == pytest.approx(A / (A + B), rel=1e-7)


# --- predictive law ---------------------------------------------------------


def test_predictive_single_length_matches_bridge_mixture():
    lm = LengthMeasure.atomic(((2.0, 1.0),))
    t, u, x = 0.5, 1.2, 0.3
    w = np.array([0.5 * phi(2.0 - t, z - x) / phi(2.0, z) for z in (-1.0, 1.0)])
    w /= w.sum()
    mean = sum(wi * (x + (u - t) / (2.0 - t) * (z - x)) for wi, z in zip(w, (-1.0, 1.0)))
    law = predictive_law(Observation(t, x, False), u, BM, lm, Z2)
    assert law.total_mass() == pytest.approx(1.0, abs=1e-10)
    assert law.expect(lambda y: y) == pytest.approx(mean, abs=1e-9)


def test_predictive_after_all_lengths_is_pin_law():
    law = predictive_law(Observation(0.5, 0.4, False), 2.5, BM, TAU12, Z2)
    assert law.continuous_weight == pytest.approx(0.0, abs=1e-15)
    ez = z_posterior_expectation(lambda z: z, Observation(0.5, 0.4, False), BM, TAU12, Z2)
    assert law.expect(lambda y: y) == pytest.approx(ez, abs=1e-12)


def test_predictive_keeps_stopped_atom():
    law = predictive_law(Observation(1.5, 0.7, False), 2.5, BM, TAU12, ZN)
    surv = survival_given_state(Observation(1.5, 0.7, False), BM, TAU12, ZN)
    atoms = dict(law.atoms)
    assert atoms[0.7] == pytest.approx(surv, rel=1e-10)
    assert law.total_mass() == pytest.approx(1.0, abs=1e-8)


# --- two times --------------------------------------------------------------


def test_two_time_precondition():
    with pytest.raises(PreconditionError):
        two_time_tau_posterior(1.2, 1.5, 0.0, 0.3, BM, TAU12, ZN)


def test_u_ratio_closed_form():
    # A12 = P(tau = 1) f_{1 - 0.5}(1) / f_1(1); U = f_1(1) / A12
    U = phi(1.0, 1.0) / (0.5 * phi(0.5, 1.0) / phi(1.0, 1.0))
    assert u_ratio(0.5, 1.5, 0.0, 1.0, BM, TAU12) == pytest.approx(U, rel=1e-12)
    gap = abs(U - phi(1.5, 1.0) / 0.5)
    assert markov_gap(0.5, 1.5, 0.0, 1.0, BM, TAU12) == pytest.approx(gap, rel=1e-10)


def test_two_time_coherence_atomic_pins():
    x1 = np.linspace(-2, 2, 11)
    vals = two_time_z_expectation(lambda z: z, 0.5, 1.5, x1, 0.3, BM, TAU12, Z2)
    one = z_posterior_expectation(lambda z: z, Observation(1.5, 0.3, False), BM, TAU12, Z2)
    assert np.ptp(vals) < 1e-12
    assert vals[0] == pytest.approx(one, abs=1e-12)


def test_two_time_depends_on_past_with_density_part():
    x1 = np.array([-1.5, 0.0, 1.5])
    vals = two_time_z_expectation(lambda z: z, 0.5, 1.5, x1, 0.3, BM, TAU12, ZN)
    assert np.ptp(vals) > 1e-3


def test_two_time_tau_posterior_mass():
    law = two_time_tau_posterior(0.5, 1.5, 0.0, 1.0, BM, TAU12, ZN)
    assert law.total_mass() == pytest.approx(1.0, abs=1e-12)
    assert 0 < law.info["stopped_mass"] < 1


# --- lifted transition ------------------------------------------------------


@settings(max_examples=15, deadline=None)
@given(z=st.floats(-1.5, 1.5), x=st.floats(-1.5, 1.5), t=st.floats(0.1, 0.9), du=st.floats(0.05, 1.5))
def test_y_transition_normalized(z, x, t, du):
    val = y_transition(lambda zz, y: np.ones_like(y), t, t + du, z, x, BM, TAU12)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_y_transition_single_length_mean():
    lm = LengthMeasure.atomic(((2.0, 1.0),))
    t, u, z, x = 0.5, 1.5, 0.8, -0.2
    got = y_transition(lambda zz, y: y, t, u, z, x, BM, lm)
    assert got == pytest.approx(x + (u - t) / (2.0 - t) * (z - x), abs=1e-9)


def test_y_transition_stopped_branch():
    assert y_transition(lambda zz, y: y + 1, 1.5, 2.0, 0.4, 0.4, BM, TAU12) == 1.4


# --- gamma increments of small shape -----------------------------------------


@pytest.mark.parametrize("dr", [0.5, 1e-2, 1e-4])
def test_gamma_small_shape_V(dr):
    """V(r; t, x) stays accurate as r -> t, where f_{r-t} degenerates to a spike."""
    from scipy.special import gammaln

    from levybridge.conditional import _V

    gm = GammaSubordinator(rate=1.3, scale=0.7)
    pm = PinningMeasure.continuous(UniformDensity(0.5, 1.5))
    t, x = 1.0, 0.8
    s = gm.rate * dr
    # the d^(s-1) factor goes into QUADPACK's algebraic weight
    rest = lambda z: math.exp(-(z - x) / 0.7 - gammaln(s) - s * math.log(0.7)) / stats.gamma.pdf(
        z, a=gm.rate * (t + dr), scale=0.7)
    exact = integrate.quad(rest, x, 1.5, weight="alg", wvar=(s - 1, 0), epsabs=1e-15, epsrel=1e-13)[0]
    assert _V(gm, pm, t + dr, t, x)[0] == pytest.approx(exact, rel=1e-9)


def test_gamma_continuous_length_survival_limits():
    gm = GammaSubordinator()
    lm = LengthMeasure.continuous(ExponentialDensity(1.0))
    pm = PinningMeasure.continuous(UniformDensity(0.5, 1.5))
    p = survival_given_state(Observation(1.0, np.array([0.3, 0.8, 1.2]), False), gm, lm, pm)
    # below the support of Z nothing can have stopped
    assert p[0] == 0.0
    assert np.all((p[1:] > 0) & (p[1:] < 1))


def test_gamma_V_limit_at_observation_time():
    # as r -> t the kernel tends to a point mass at x: V -> f_Z(x) / f_t(x)
    from levybridge.conditional import _V

    gm = GammaSubordinator(rate=1.3, scale=0.7)
    pm = PinningMeasure.continuous(UniformDensity(0.5, 1.5))
    limit = 1.0 / stats.gamma.pdf(0.8, a=1.3, scale=0.7)
    assert _V(gm, pm, 1.0 + 1e-9, 1.0, 0.8)[0] == pytest.approx(limit, rel=1e-7)


@pytest.mark.parametrize("dr", [0.4, 2.5])
def test_gamma_mixed_law_V_weights(dr):
    """Each component of a mixed pinning law enters V once, with its own weight."""
    from levybridge.conditional import _V

    gm = GammaSubordinator()
    pm = PinningMeasure(a_sd=0.5, a_ac=0.5, atoms=((1.0, 1.0),), density=UniformDensity(0.5, 1.5))
    t, x = 0.5, 0.7
    r = t + dr
    f = lambda s, d: stats.gamma.pdf(d, a=s)
    atom = f(dr, 1.0 - x) / f(r, 1.0)
    # shape of the increment on both sides of 1, where two code paths meet
    # the (z - x)^(dr - 1) factor goes into QUADPACK's algebraic weight
    dens = integrate.quad(lambda z: math.exp(-(z - x)) / math.gamma(dr) / f(r, z), x, 1.5,
                          weight="alg", wvar=(dr - 1, 0), epsabs=1e-15, epsrel=1e-12)[0]
    assert _V(gm, pm, r, t, x)[0] == pytest.approx(0.5 * atom + 0.5 * dens, rel=1e-8)
