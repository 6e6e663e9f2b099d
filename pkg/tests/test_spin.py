import numpy as np
import pytest

from phi4lab.lattice import build_region, make_boundary_field
from phi4lab.oracle import exact_spin_expectation
from phi4lab.spin import (ModelParams, SpinConfig, hamiltonian,
                          heatbath_log_rate, heatbath_sweep, heatbath_update,
                          langevin_drift, langevin_step, log_weight,
                          magnetization, neighbour_field)

T2_QUARTIC = 0.3379891200336423
# exact quadrature oracle on the 2x2 grid at beta=0.5, g=1, a=0, h=0
PHIPHI_2X2 = 0.06133783576888287


def _block_err(x, blocks=20):
    x = np.asarray(x)
    bm = np.array([b.mean() for b in np.array_split(x, blocks)])
    return bm.std(ddof=1) / np.sqrt(blocks)


def test_hamiltonian_values():
    r = build_region("grid", 2, sides=(2, 1))
    p = ModelParams(region=r, beta=1.0, g=1.0, a=0.0)
    assert hamiltonian(SpinConfig(r, np.zeros(2)), p) == 0.0
    assert hamiltonian(SpinConfig(r, np.ones(2)), p) == -1.0

    r0 = build_region("box", 2, n=0)
    p0 = ModelParams(region=r0, beta=1.0, g=1.0, a=0.0, h=2.0)
    assert hamiltonian(SpinConfig(r0, np.array([3.0])), p0) == -6.0


def test_params_validation():
    r = build_region("grid", 2, sides=(2, 2))
    with pytest.raises(ValueError):
        ModelParams(region=r, beta=-0.1, g=1.0, a=0.0)
    with pytest.raises(ValueError):
        ModelParams(region=r, beta=1.0, g=1.0, a=0.0, J=np.ones(3))
    with pytest.raises(ValueError):
        ModelParams(region=r, beta=1.0, g=1.0, a=0.0, J=-1.0)
    with pytest.raises(ValueError):
        ModelParams(region=r, beta=1.0, g=1.0, a=0.0, h=np.zeros(5))
    with pytest.raises(ValueError):
        SpinConfig(r, np.array([0.0, np.inf, 0.0, 0.0]))


def test_boundary_field_accepted_as_h():
    r = build_region("box", 2, n=2)
    fld = make_boundary_field("thick-plus", r)
    p = ModelParams(region=r, beta=0.4, g=1.0, a=-1.0, h=fld)
    assert np.array_equal(p.h_sites, fld.values)


def test_magnetization():
    r = build_region("grid", 2, sides=(2, 2))
    assert magnetization(SpinConfig(r, np.full(4, 1.7))) == pytest.approx(1.7)
    v = np.array([0.3, -1.2, 2.0, 0.4])
    assert magnetization(v) + magnetization(-v) == 0.0
    r3 = build_region("grid", 2, sides=(3, 1))
    assert magnetization(SpinConfig(r3, np.array([1.0, 2.0, 3.0]))) == 2.0


def test_heatbath_update_beta_zero():
    r = build_region("grid", 2, sides=(2, 2))
    p = ModelParams(region=r, beta=0.0, g=1.0, a=0.0)
    rng = np.random.default_rng(3)
    phi = SpinConfig(r, np.full(4, 5.0))
    draws = np.array([heatbath_update(phi, 0, p, rng).values[0] for _ in range(20000)])
    se = (draws ** 2).std() / np.sqrt(len(draws))
    assert abs((draws ** 2).mean() - T2_QUARTIC) < 5 * se
    with pytest.raises(ValueError):
        heatbath_update(phi, 4, p, rng)


def test_heatbath_update_isolated_vertex():
    r0 = build_region("box", 2, n=0)
    p = ModelParams(region=r0, beta=5.0, g=1.0, a=0.0)  # no neighbours, h=0
    rng = np.random.default_rng(4)
    phi = SpinConfig(r0, np.array([2.0]))
    draws = np.array([heatbath_update(phi, 0, p, rng).values[0] for _ in range(20000)])
    se = (draws ** 2).std() / np.sqrt(len(draws))
    assert abs((draws ** 2).mean() - T2_QUARTIC) < 5 * se


def test_heatbath_detailed_balance():
    r = build_region("grid", 2, sides=(2, 2))
    p = ModelParams(region=r, beta=0.7, g=1.0, a=-0.5, h=0.2)
    rng = np.random.default_rng(5)
    for _ in range(100):
        phi = SpinConfig(r, rng.normal(scale=1.5, size=4))
        x = int(rng.integers(4))
        s = float(rng.normal(scale=1.5))
        moved = phi.copy()
        moved.values[x] = s
        lhs = log_weight(phi, p) + heatbath_log_rate(phi, x, s, p)
        rhs = log_weight(moved, p) + heatbath_log_rate(moved, x, float(phi.values[x]), p)
        assert abs(lhs - rhs) < 1e-12


def test_sweep_beta_zero_iid():
    r = build_region("grid", 2, sides=(2, 2))
    p = ModelParams(region=r, beta=0.0, g=1.0, a=0.0)
    rng = np.random.default_rng(6)
    phi = SpinConfig(r, np.zeros(4))
    vals = np.empty((5000, 4))
    for i in range(5000):
        phi = heatbath_sweep(phi, p, rng, "checkerboard")
        vals[i] = phi.values
    for col in range(4):
        se = (vals[:, col] ** 2).std() / np.sqrt(len(vals))
        assert abs((vals[:, col] ** 2).mean() - T2_QUARTIC) < 5 * se
    c = np.corrcoef(vals[:, 0], vals[:, 3])[0, 1]
    assert abs(c) < 5 / np.sqrt(len(vals))


def test_sweep_decorrelates_without_couplings():
    r = build_region("grid", 2, sides=(2, 2))
    p = ModelParams(region=r, beta=0.8, g=1.0, a=0.0, J=np.zeros(4), h=0.3)
    rng = np.random.default_rng(7)
    phi = SpinConfig(r, np.zeros(4))
    m = np.empty(3000)
    for i in range(3000):
        phi = heatbath_sweep(phi, p, rng, "checkerboard")
        m[i] = magnetization(phi)
    r1 = np.corrcoef(m[:-1], m[1:])[0, 1]
    assert abs(r1) < 5 / np.sqrt(len(m))


def test_sweep_bad_schedule():
    r = build_region("grid", 2, sides=(2, 2))
    p = ModelParams(region=r, beta=0.5, g=1.0, a=0.0)
    with pytest.raises(ValueError):
        heatbath_sweep(SpinConfig(r, np.zeros(4)), p, np.random.default_rng(0), "diagonal")


@pytest.mark.parametrize("schedule", ["sequential", "random", "checkerboard"])
def test_sweep_stationary_all_schedules(schedule):
    r = build_region("grid", 2, sides=(2, 2))
    p = ModelParams(region=r, beta=0.5, g=1.0, a=0.0)
    rng = np.random.default_rng(8)
    phi = SpinConfig(r, np.zeros(4))
    for _ in range(200):
        phi = heatbath_sweep(phi, p, rng, schedule)
    prods = np.empty(4000)
    for i in range(4000):
        phi = heatbath_sweep(phi, p, rng, schedule)
        prods[i] = phi.values[0] * phi.values[1]
    err = _block_err(prods)
    assert abs(prods.mean() - PHIPHI_2X2) < 3 * err


def test_sign_symmetry():
    r = build_region("grid", 2, sides=(2, 2))
    p = ModelParams(region=r, beta=0.5, g=1.0, a=0.0)
    rng = np.random.default_rng(9)
    phi = SpinConfig(r, np.zeros(4))
    vals = np.empty((4000, 4))
    for i in range(4000):
        phi = heatbath_sweep(phi, p, rng, "checkerboard")
        vals[i] = phi.values
    for col in range(4):
        assert abs(vals[:, col].mean()) < 3 * _block_err(vals[:, col])


def test_langevin_rejects_bad_dt():
    r = build_region("box", 2, n=0)
    p = ModelParams(region=r, beta=0.0, g=1.0, a=0.0)
    phi = SpinConfig(r, np.zeros(1))
    rng = np.random.default_rng(0)
    for dt in (0.0, -1e-3):
        with pytest.raises(ValueError):
            langevin_step(phi, p, dt, rng)


def test_langevin_drift_identity():
    r = build_region("box", 2, n=1)
    p = ModelParams(region=r, beta=0.9, g=1.0, a=-0.7, h=0.4)
    rng = np.random.default_rng(11)
    n = r.n_vertices
    for _ in range(100):
        v = rng.normal(scale=1.3, size=n)
        drift = langevin_drift(v, p)
        # analytic gradient of beta*H + sum_x (g phi^4 + a phi^2)
        grad = (-p.beta * (neighbour_field(v, p) + p.h_sites)
                + 4 * p.g * v ** 3 + 2 * p.a * v)
        assert np.max(np.abs(drift + grad)) < 1e-12
        # finite-difference cross-check of the same gradient
        eps = 1e-6
        for x in range(n):
            vp, vm = v.copy(), v.copy()
            vp[x] += eps
            vm[x] -= eps
            energy = lambda w: (p.beta * hamiltonian(w, p)
                                + np.sum(p.g * w ** 4 + p.a * w ** 2))
            fd = (energy(vp) - energy(vm)) / (2 * eps)
            assert abs(drift[x] + fd) < 1e-5


def test_langevin_single_vertex_moment():
    # 256 isolated vertices (J identically 0) = 256 independent copies of the
    # single-site chain; the slow tau_int ~ 1/dt makes one long scalar run too
    # noisy to meet the stated tolerance.
    r = build_region("grid", 2, sides=(16, 16))
    p = ModelParams(region=r, beta=0.6, g=1.0, a=0.0, J=np.zeros(len(r.edges)))
    rng = np.random.default_rng(12)
    phi = SpinConfig(r, np.zeros(r.n_vertices))
    for _ in range(4000):
        phi = langevin_step(phi, p, 1e-3, rng)
    acc = np.empty(20000)
    for i in range(len(acc)):
        phi = langevin_step(phi, p, 1e-3, rng)
        acc[i] = np.mean(phi.values ** 2)
    assert abs(acc.mean() - 0.338) < 0.02


def test_langevin_matches_heatbath():
    r = build_region("grid", 2, sides=(2, 2))
    p = ModelParams(region=r, beta=0.5, g=1.0, a=0.0)
    rng = np.random.default_rng(13)

    phi = SpinConfig(r, np.zeros(4))
    hb = np.empty(4000)
    for _ in range(200):
        phi = heatbath_sweep(phi, p, rng, "checkerboard")
    for i in range(len(hb)):
        phi = heatbath_sweep(phi, p, rng, "checkerboard")
        hb[i] = phi.values[0] ** 2
    hb_err = _block_err(hb)

    est = {}
    for dt, steps in ((2e-3, 150000), (1e-3, 300000)):
        phi = SpinConfig(r, np.zeros(4))
        for _ in range(int(5 / dt)):
            phi = langevin_step(phi, p, dt, rng)
        acc = np.empty(steps)
        for i in range(steps):
            phi = langevin_step(phi, p, dt, rng)
            acc[i] = phi.values[0] ** 2
        est[dt] = (acc.mean(), _block_err(acc))
    # first-order Richardson extrapolation in dt
    lv = 2 * est[1e-3][0] - est[2e-3][0]
    lv_err = np.hypot(2 * est[1e-3][1], est[2e-3][1])
    assert abs(lv - hb.mean()) < 3 * np.hypot(lv_err, hb_err)


def test_fkg_increasing_pair():
    r = build_region("box", 2, n=1)
    for beta in (0.2, 0.8):
        p = ModelParams(region=r, beta=beta, g=1.0, a=0.0)
        rng = np.random.default_rng(int(beta * 10))
        phi = SpinConfig(r, np.zeros(9))
        for _ in range(300):
            phi = heatbath_sweep(phi, p, rng, "checkerboard")
        xs = np.empty(4000)
        ms = np.empty(4000)
        for i in range(4000):
            phi = heatbath_sweep(phi, p, rng, "checkerboard")
            xs[i] = phi.values[0]
            ms[i] = magnetization(phi)
        blocks = 20
        covs = np.array([
            np.mean(bx * bm) - bx.mean() * bm.mean()
            for bx, bm in zip(np.array_split(xs, blocks), np.array_split(ms, blocks))
        ])
        cov, err = covs.mean(), covs.std(ddof=1) / np.sqrt(blocks)
        assert cov >= -3 * err


def test_field_monotonicity():
    r = build_region("grid", 2, sides=(2, 2))
    rng = np.random.default_rng(15)
    out = []
    for h in (0.0, 0.5, 1.0):
        p = ModelParams(region=r, beta=0.5, g=1.0, a=0.0, h=h)
        phi = SpinConfig(r, np.zeros(4))
        for _ in range(200):
            phi = heatbath_sweep(phi, p, rng, "checkerboard")
        vals = np.empty(3000)
        for i in range(len(vals)):
            phi = heatbath_sweep(phi, p, rng, "checkerboard")
            vals[i] = phi.values[0]
        out.append((vals.mean(), _block_err(vals)))
    for (lo, lo_err), (hi, hi_err) in zip(out, out[1:]):
        assert hi >= lo - 3 * np.hypot(lo_err, hi_err)
