import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from levybridge import (
    BrownianDrift,
    CantorMeasure,
    ExponentialDensity,
    GammaSubordinator,
    LengthMeasure,
    NormalDensity,
    PiecewiseLinearDensity,
    PinningMeasure,
    UniformDensity,
    validate_pair,
)
from levybridge.errors import PreconditionError
from levybridge.measures import (
    cantor_integrate,
    integrate_length,
    integrate_pinning,
    sample_length,
    sample_pinning,
)


def test_cantor_moments():
    # Cantor law on [0, 1]: mean 1/2, variance 1/8
    m1 = cantor_integrate(lambda x: x, 18)
    m2 = cantor_integrate(lambda x: x * x, 18)
    assert m1 == pytest.approx(0.5, abs=1e-8)
    assert m2 - m1 ** 2 == pytest.approx(0.125, abs=1e-7)


def test_cantor_error_bound_holds():
    val, bound = cantor_integrate(np.sin, 10, lipschitz=1.0, full_output=True)
    ref = cantor_integrate(np.sin, 20)
    assert abs(val - ref) <= bound


def test_cantor_membership():
    c = CantorMeasure()
    assert c.contains(np.array([0.0, 1.0, 0.25, 2 / 3, 1 / 3])).all()
    assert not c.contains(np.array([0.5, 0.4, 1.2, -0.1])).any()


def test_cantor_samples_are_members(rng):
    c = CantorMeasure(-1.0, 2.0)
    assert c.contains(c.sample(rng, 200)).all()


def test_cantor_sample_distribution(rng):
    c = CantorMeasure()
    x = c.sample(rng, 20000)
    assert np.mean(x) == pytest.approx(0.5, abs=4 * math.sqrt(0.125 / 20000))
    # self-similarity: P(X <= 1/3) = 1/2
    assert np.mean(x <= 1 / 3) == pytest.approx(0.5, abs=4 * 0.5 / math.sqrt(20000))


def test_pinning_weights_checked():
    with pytest.raises(PreconditionError):
        PinningMeasure(a_sd=0.5, a_ac=0.4, atoms=((0.0, 1.0),), density=UniformDensity())
    with pytest.raises(PreconditionError):
        PinningMeasure(a_sd=1.0, atoms=((0.0, 0.3),))
    with pytest.raises(PreconditionError):
        PinningMeasure(a_ac=1.0)


def test_length_measure_cdf():
    lm = LengthMeasure(atoms=((1.0, 0.25),), density=ExponentialDensity(2.0), density_weight=0.75)
    assert lm.cdf(0.5) == pytest.approx(0.75 * (1 - math.exp(-1.0)))
    assert lm.cdf(1.0) == pytest.approx(0.25 + 0.75 * (1 - math.exp(-2.0)))
    with pytest.raises(PreconditionError):
        LengthMeasure(atoms=((0.0, 1.0),))


def test_integrate_pinning_mixture():
    pm = PinningMeasure(a_sd=0.25, a_sc=0.25, a_ac=0.5, atoms=((2.0, 1.0),),
                        cantor=CantorMeasure(), density=NormalDensity(1.0, 2.0))
    val = integrate_pinning(lambda z: z, pm)
    assert val == pytest.approx(0.25 * 2.0 + 0.25 * 0.5 + 0.5 * 1.0, rel=1e-8)


def test_integrate_pinning_anchored_rows():
    pm = PinningMeasure.continuous(NormalDensity(0.0, 1.0))
    anchors = np.array([-1.0, 0.0, 2.5])

    def g(z, d, rows):
        return stats.norm.pdf(d, scale=0.05)

    got = integrate_pinning(g, pm, anchor=anchors, scale=np.full(3, 0.05))
    exact = stats.norm.pdf(anchors, scale=math.sqrt(1 + 0.05 ** 2))
    np.testing.assert_allclose(got, exact, rtol=1e-9)


def test_integrate_length_window_is_half_open():
    lm = LengthMeasure.atomic(((1.0, 0.5), (2.0, 0.5)))
    assert integrate_length(lambda r: 1.0, lm, (1.0, 2.0)) == 0.5
    assert integrate_length(lambda r: r, lm, (0.0, math.inf)) == 1.5


def test_integrate_length_density():
    lm = LengthMeasure.continuous(ExponentialDensity(1.0))
    assert integrate_length(lambda r: r, lm, (0.5, math.inf)) == pytest.approx(1.5 * math.exp(-0.5), rel=1e-9)


def test_sampling_frequencies(rng):
    pm = PinningMeasure(a_sd=0.5, a_ac=0.5, atoms=((3.0, 1.0),), density=UniformDensity(0.0, 1.0))
    z = sample_pinning(pm, rng, 40000)
    assert np.mean(z == 3.0) == pytest.approx(0.5, abs=4 * 0.5 / math.sqrt(40000))
    lm = LengthMeasure(atoms=((1.0, 0.3),), density=ExponentialDensity(1.0), density_weight=0.7)
    r = sample_length(lm, rng, 40000)
    assert np.all(r > 0)
    assert np.mean(r == 1.0) == pytest.approx(0.3, abs=4 * math.sqrt(0.21 / 40000))


def test_validate_pair_subordinator_support():
    bad = validate_pair(GammaSubordinator(), LengthMeasure.atomic(((1.0, 1.0),)),
                        PinningMeasure.atomic(((-1.0, 1.0),)))
    assert not bad.ok and any("z <= 0" in v for v in bad.violations)
    good = validate_pair(BrownianDrift(), LengthMeasure.atomic(((1.0, 1.0),)),
                         PinningMeasure.atomic(((-1.0, 1.0),)))
    assert good.ok


@pytest.mark.parametrize("dens", [UniformDensity(-1.0, 2.0), NormalDensity(0.5, 2.0),
                                  ExponentialDensity(0.7),
                                  PiecewiseLinearDensity.normalized((0.0, 1.0, 3.0), (0.0, 2.0, 0.0))])
def test_density_cdf_ppf_roundtrip(dens):
    u = np.linspace(0.01, 0.99, 17)
    np.testing.assert_allclose(dens.cdf(dens.ppf(u)), u, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.01, 1.0)), min_size=1, max_size=5,
                unique_by=lambda a: a[0]))
def test_atomic_pinning_roundtrip(atoms):
    total = sum(p for _, p in atoms)
    atoms = tuple((a, p / total) for a, p in atoms)
    pm = PinningMeasure(a_sd=1.0, atoms=atoms)
    assert PinningMeasure.from_dict(pm.to_dict()) == pm
    assert np.all(pm.in_support(pm.atom_locations))
    assert integrate_pinning(lambda z: np.ones_like(z), pm) == pytest.approx(1.0)
