import math

import numpy as np
import pytest
from scipy import integrate, stats

from levybridge import (
    BrownianDrift,
    GammaSubordinator,
    GridSpec,
    LengthMeasure,
    PinningMeasure,
    SymmetricStable,
    bridge_transition_density,
    sample_fixed_bridge,
    sample_random_bridge,
)
from levybridge.errors import PreconditionError
from levybridge.rng import stream


def test_grid_spec():
    np.testing.assert_allclose(GridSpec(2.0, 4).grid(), [0.5, 1.0, 1.5, 2.0])
    with pytest.raises(PreconditionError):
        GridSpec(times=(0.5, 0.5))


def test_brownian_explicit_moments():
    m = BrownianDrift(sigma=1.5, drift=2.0)
    r, z, t = 2.0, 1.0, 0.5
    b = sample_fixed_bridge(m, r, z, np.array([t]), stream(3, "test"), 50000, "explicit")
    x = b.values[:, 0]
    mean, var = z * t / r, 1.5 ** 2 * t * (r - t) / r
    assert np.mean(x) == pytest.approx(mean, abs=4 * math.sqrt(var / x.size))
    assert stats.kstest(x, stats.norm(mean, math.sqrt(var)).cdf).pvalue > 1e-3


def test_gamma_generic_beta_ratio():
    m = GammaSubordinator(rate=1.5)
    r, z, t = 2.0, 3.0, 0.8
    b = sample_fixed_bridge(m, r, z, np.array([t]), stream(4, "test"), 4000, "generic")
    ratio = b.values[:, 0] / z
    assert stats.kstest(ratio, stats.beta(1.5 * t, 1.5 * (r - t)).cdf).pvalue > 1e-3


def test_stable_generic_cdf():
    m = SymmetricStable(alpha=1.5)
    r, z, t = 1.0, 0.5, 0.4
    b = sample_fixed_bridge(m, r, z, np.array([t]), stream(5, "test"), 4000, "generic")
    x = b.values[:, 0]
    f = lambda y: float(bridge_transition_density(m, 0.0, t, r, 0.0, y, z))
    for q in np.quantile(x, [0.2, 0.5, 0.8]):
        p = integrate.quad(f, -np.inf, q, limit=400)[0]
        assert np.mean(x <= q) == pytest.approx(p, abs=4 * math.sqrt(p * (1 - p) / x.size) + 1e-3)


def test_paths_hit_pin_only_at_r():
    m = BrownianDrift()
    times = np.array([0.5, 1.0, 1.5, 2.0])
    b = sample_fixed_bridge(m, 1.5, 0.3, times, stream(6, "test"), 1000, "generic")
    assert np.all(b.values[:, 2:] == 0.3)
    assert not np.any(b.values[:, :2] == 0.3)


def test_thread_count_does_not_change_paths():
    lm = LengthMeasure.atomic(((1.0, 0.5), (2.0, 0.5)))
    pm = PinningMeasure.atomic(((-1.0, 0.5), (1.0, 0.5)))
    g = GridSpec(2.5, 5)
    a = sample_random_bridge(BrownianDrift(), lm, pm, g, 9000, 123, threads=1)
    b = sample_random_bridge(BrownianDrift(), lm, pm, g, 9000, 123, threads=4)
    assert a.to_csv() == b.to_csv()
    c = sample_random_bridge(BrownianDrift(), lm, pm, g, 9000, 124, threads=1)
    assert not np.array_equal(a.values, c.values)


def test_random_bridge_rejects_invalid_pair():
    lm = LengthMeasure.atomic(((1.0, 1.0),))
    pm = PinningMeasure.atomic(((-1.0, 1.0),))
    with pytest.raises(PreconditionError):
        sample_random_bridge(GammaSubordinator(), lm, pm, GridSpec(), 10, 0)


def test_csv_round_trips_doubles():
    lm = LengthMeasure.atomic(((1.0, 1.0),))
    pm = PinningMeasure.atomic(((0.1, 1.0),))
    b = sample_random_bridge(BrownianDrift(), lm, pm, GridSpec(times=(0.3, 0.7)), 5, 1)
    text = b.to_csv(meta={"seed": 1})
    lines = text.splitlines()
    assert lines[0] == "# seed=1" and lines[1] == "time,value,r,z,path_id"
    vals = [float(row.split(",")[1]) for row in lines[2:]]
    np.testing.assert_array_equal(vals, b.values.ravel())
