import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import quad

from phi4lab.singlesite import (SingleSiteParams, log_density, moment,
                                quad_cutoff, sample_tilted,
                                sample_tilted_batch)

# <t^2> at g=1, a=0 has the closed form Gamma(3/4)/Gamma(1/4)
T2_QUARTIC = 0.3379891200336423
# quadrature mean of the tilted density, g=1 a=0 tilt=10
TILTED_MEAN_10 = 1.3217621273218656


def test_log_density_values():
    p = SingleSiteParams(g=1.0, a=0.0)
    assert log_density(0.0, p) == 0.0
    assert log_density(1.0, p) == -1.0
    p2 = SingleSiteParams(g=0.5, a=-2.0)
    assert log_density(2.0, p2, tilt=3.0) == pytest.approx(-0.5 * 16 + 2.0 * 4 + 6.0)


@given(t=st.floats(-5, 5), tilt=st.floats(-10, 10),
       g=st.floats(0.1, 3), a=st.floats(-4, 4))
@settings(deadline=None, max_examples=60)
def test_log_density_parity(t, tilt, g, a):
    p = SingleSiteParams(g=g, a=a)
    assert log_density(-t, p, tilt=tilt) == pytest.approx(log_density(t, p, tilt=-tilt), abs=1e-12)


def test_g_must_be_positive():
    with pytest.raises(ValueError):
        SingleSiteParams(g=0.0, a=1.0)
    with pytest.raises(ValueError):
        SingleSiteParams(g=-1.0, a=1.0)


def test_moments():
    p = SingleSiteParams(g=1.0, a=0.0)
    assert moment(0, p) == 1.0
    assert moment(1, p) == 0.0
    assert moment(7, p) == 0.0
    assert moment(2, p) == pytest.approx(T2_QUARTIC, abs=1e-9)
    with pytest.raises(ValueError):
        moment(-2, p)


@pytest.mark.parametrize("g,a", [(1.0, 0.0), (0.5, -3.0), (2.0, 1.5)])
def test_moment_cauchy_schwarz(g, a):
    p = SingleSiteParams(g=g, a=a)
    for k in (1, 2, 3):
        assert moment(2 * k, p) ** 2 <= moment(2 * k - 2, p) * moment(2 * k + 2, p) + 1e-14


def test_sample_mean_symmetric():
    rng = np.random.default_rng(7)
    p = SingleSiteParams(g=1.0, a=0.0)
    x = sample_tilted_batch(p, np.zeros(10 ** 6), rng)
    se = x.std() / len(x) ** 0.5
    assert abs(x.mean()) < 5 * se


def test_sample_second_moment():
    rng = np.random.default_rng(8)
    p = SingleSiteParams(g=1.0, a=0.0)
    x = sample_tilted_batch(p, np.zeros(10 ** 6), rng)
    x2 = x * x
    se = x2.std() / len(x2) ** 0.5
    assert abs(x2.mean() - T2_QUARTIC) < 5 * se


def test_sample_tilted_mean():
    rng = np.random.default_rng(9)
    p = SingleSiteParams(g=1.0, a=0.0)
    x = sample_tilted_batch(p, np.full(10 ** 6, 10.0), rng)
    se = x.std() / len(x) ** 0.5
    assert abs(x.mean() - TILTED_MEAN_10) < 5 * se


def test_sample_tilted_scalar():
    rng = np.random.default_rng(10)
    p = SingleSiteParams(g=1.0, a=-1.0)
    vals = [sample_tilted(p, 2.0, rng) for _ in range(50)]
    assert len(set(vals)) > 1
    assert all(np.isfinite(vals))


def _quadrature_cdf(p, tilt):
    T = quad_cutoff(p.g, p.a, tilt=tilt)
    peak = float(np.max(log_density(np.linspace(-T, T, 4001), p, tilt=tilt)))
    dens = lambda t: np.exp(log_density(t, p, tilt=tilt) - peak)
    z = quad(dens, -T, T, limit=400)[0]

    def cdf(x):
        x = np.atleast_1d(x)
        out = np.array([quad(dens, -T, min(max(v, -T), T), limit=400)[0] / z for v in x])
        return out

    return cdf


@pytest.mark.parametrize("g,a,tilt", [
    (1.0, 0.0, 0.0),
    (0.5, -3.0, 0.0),
    (1.0, -5.0, 1.0),
    (2.0, 1.0, -7.0),
    (1.0, 0.5, 20.0),
    (0.7, -2.0, -20.0),
])
def test_sampler_matches_quadrature_cdf(g, a, tilt):
    rng = np.random.default_rng(abs(hash((g, a, tilt))) % 2 ** 31)
    p = SingleSiteParams(g=g, a=a)
    x = sample_tilted_batch(p, np.full(4000, tilt), rng)
    res = stats.kstest(x, _quadrature_cdf(p, tilt))
    assert res.pvalue > 1e-3


def test_batch_empty_and_shapes():
    rng = np.random.default_rng(0)
    p = SingleSiteParams(g=1.0, a=0.0)
    assert sample_tilted_batch(p, np.empty(0), rng).shape == (0,)
    out = sample_tilted_batch(p, np.array([-3.0, 0.0, 3.0]), rng)
    assert out.shape == (3,)
