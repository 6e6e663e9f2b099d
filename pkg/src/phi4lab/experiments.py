"""Estimator drivers: magnetisation, critical point, large-deviation scans,
surface tension, local uniqueness, and spectral-gap upper bounds.

Every driver runs one or more Markov chains (heat-bath, Langevin, or the
random-cluster composite), evaluates observables on thinned samples, and
returns estimates with autocorrelation-corrected errors. Per-chain generators
are seeded from (master seed, chain index), so a rerun with the same spec is
bit-identical. Rare-event scans use direct counting only and refuse parameter
regimes where that is hopeless.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .events import cluster_stats, disconnection, local_uniqueness
from .lattice import build_region, make_boundary_field, two_ghost_rectangle
from .randomcluster import (BoundaryCondition, RCState, cluster_labels,
                            initial_state, rc_sweep)
from .singlesite import quad_cutoff, sample_tilted_batch
from .spin import (SCHEDULES, ModelParams, SpinConfig, heatbath_sweep,
                   langevin_step, magnetization, tilt_vector)

__all__ = [
    "MCMCSpec", "SamplerSpec", "EstimateResult", "ScalingFit",
    "autocorrelation", "estimate_observable", "estimate_m_star",
    "estimate_beta_c", "scan_ldp", "estimate_surface_tension",
    "scan_local_uniqueness", "smooth_ramp", "dirichlet_form",
    "spectral_gap_upper", "collect_rc_states", "truncation_diagnostics",
]

SAMPLER_KINDS = ("rc", "heatbath", "langevin")
BC_KINDS = ("free", "thick-plus", "wired-plus")

_MAX_THREADS = 1


def set_threads(k: int) -> None:
    """Worker threads for running independent chains; aggregation stays
    single-threaded and ordered by chain index, so results do not depend on k."""
    global _MAX_THREADS
    if int(k) < 1:
        raise ValueError("thread count must be >= 1")
    _MAX_THREADS = int(k)


@dataclass
class MCMCSpec:
    """Chain-length bookkeeping shared by all drivers.

    ``sweeps`` counts post-burn-in sweeps per chain; every ``thin``-th state
    is recorded, so a chain contributes sweeps // thin samples.
    """

    sweeps: int
    burn_in: int = 0
    thin: int = 1
    seed: int = 0
    chains: int = 1
    schedule: str = "checkerboard"
    dt: float = 0.01

    def __post_init__(self):
        if self.sweeps < 1 or self.burn_in < 0 or self.thin < 1 or self.chains < 1:
            raise ValueError("sweeps >= 1, burn_in >= 0, thin >= 1, chains >= 1 required")
        if self.sweeps // self.thin < 1:
            raise ValueError("thinning leaves no samples")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def samples_per_chain(self) -> int:
        return self.sweeps // self.thin


@dataclass
class SamplerSpec:
    """Which chain to run on which model."""

    params: ModelParams
    kind: str = "rc"
    bc: BoundaryCondition | None = None

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")


@dataclass
class EstimateResult:
    estimate: float
    stderr: float
    n_samples: int
    tau_int: float
    metadata: dict = field(default_factory=dict)


@dataclass
class ScalingFit:
    """Log-probabilities against size, with surface- and volume-order fits."""

    sizes: np.ndarray
    log_p: np.ndarray
    log_p_err: np.ndarray
    fits: dict
    preferred: str


# ---------------------------------------------------------------------------
# autocorrelation analysis


def autocorrelation(series) -> tuple[float, float]:
    """(tau_int, tau_exp) of a scalar series.

    tau_int by automatic windowing: the smallest W with W >= 5 * tau_int(W),
    where tau_int(W) = 1/2 + sum_{t<=W} rho(t). tau_exp from a log-linear fit
    of the positive autocorrelation tail. Degenerate series (constant, too
    short) and non-converged windowing come back as NaN — the caller decides
    whether that is an error.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 8:
        return math.nan, math.nan
    x = x - x.mean()
    c0 = float(np.dot(x, x)) / n
    if not (c0 > 0 and math.isfinite(c0)):
        return math.nan, math.nan
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    rho = acov / acov[0]

    tau_w = 0.5 + np.cumsum(rho[1:])          # tau_w[i] = tau_int(W = i + 1)
    windows = np.arange(1, n)
    ok = np.nonzero(windows >= 5.0 * tau_w)[0]
    if len(ok) == 0:
        return math.nan, math.nan
    W = int(windows[ok[0]])
    tau_int = float(tau_w[W - 1])

    tail = rho[1:W + 1]
    ts = np.arange(1, W + 1)[tail > 0]
    tail = tail[tail > 0]
    if len(tail) >= 3:
        slope = np.polyfit(ts, np.log(tail), 1)[0]
        tau_exp = -1.0 / slope if slope < 0 else math.nan
    else:
        tau_exp = math.nan
    return tau_int, float(tau_exp)


def _series_stats(chains_values: list[np.ndarray]) -> tuple[float, float, float, list[str]]:
    """(mean, stderr, tau_int, flags) pooled over per-chain sample series."""
    flags = []
    pooled = np.concatenate(chains_values)
    n = len(pooled)
    mean = float(pooled.mean())
    var = float(pooled.var(ddof=1)) if n > 1 else 0.0

    taus = [autocorrelation(v)[0] for v in chains_values]
    finite = [t for t in taus if math.isfinite(t)]
    if var == 0.0:
        flags.append("zero-variance")
        tau = 0.5
    elif not finite:
        flags.append("autocorrelation-window-not-converged")
        tau = float(len(chains_values[0]))   # pessimistic: no better information
    else:
        tau = max(0.5, float(np.mean(finite)))
        if len(finite) < len(taus):
            flags.append("autocorrelation-window-not-converged")
    stderr = math.sqrt(2.0 * tau * var / n) if n > 1 else math.inf
    return mean, stderr, tau, flags


def effective_samples(n: int, tau_int: float) -> float:
    return n / (2.0 * tau_int) if tau_int > 0 else float(n)


# ---------------------------------------------------------------------------
# chain plumbing


def _flat_seed(seed) -> list[int]:
    if isinstance(seed, (list, tuple)):
        return [s for part in seed for s in _flat_seed(part)]
    return [int(seed)]


def _chain_rng(seed, chain_index):
    return np.random.default_rng(_flat_seed(seed) + [int(chain_index)])


def _iter_chain(sampler: SamplerSpec, mcmc: MCMCSpec, chain_index: int):
    """Yield samples_per_chain thinned states of one chain.

    rc chains yield RCState (with the spin snapshot attached); heat-bath and
    Langevin chains yield SpinConfig.
    """
    rng = _chain_rng(mcmc.seed, chain_index)
    params = sampler.params
    n = params.region.n_vertices

    if sampler.kind == "rc":
        state = initial_state(params, rng)

        def sweep(s):
            return rc_sweep(s, params, rng, bc=sampler.bc, schedule=mcmc.schedule)
    else:
        values = sample_tilted_batch(params.single_site, np.zeros(n), rng)
        state = SpinConfig(params.region, values)
        if sampler.kind == "heatbath":
            def sweep(s):
                return heatbath_sweep(s, params, rng, schedule=mcmc.schedule)
        else:
            def sweep(s):
                return langevin_step(s, params, mcmc.dt, rng)

    for _ in range(mcmc.burn_in):
        state = sweep(state)
    for _ in range(mcmc.samples_per_chain):
        for _ in range(mcmc.thin):
            state = sweep(state)
        yield state


def _params_meta(params: ModelParams) -> dict:
    h = params.h_sites
    if np.all(h == 0):
        h_meta = 0.0
    else:
        h_meta = {"min": float(h.min()), "max": float(h.max()),
                  "nonzero": int(np.count_nonzero(h))}
    return {
        "region": params.region.spec(),
        "g": params.g, "a": params.a, "beta": params.beta,
        "J": float(params.J_edges[0]) if params.uniform_J and len(params.J_edges) else 1.0,
        "h": h_meta,
    }


def _mcmc_meta(sampler: SamplerSpec, mcmc: MCMCSpec) -> dict:
    return {
        "sampler": sampler.kind, "schedule": mcmc.schedule,
        "sweeps": mcmc.sweeps, "burn_in": mcmc.burn_in, "thin": mcmc.thin,
        "chains": mcmc.chains, "seed": mcmc.seed,
        **({"dt": mcmc.dt} if sampler.kind == "langevin" else {}),
    }


def estimate_observable(sampler: SamplerSpec, observable, mcmc: MCMCSpec):
    """Mean of one observable (or a dict of them) over the chain samples.

    ``observable`` is a callable on the sample object — RCState for rc chains,
    SpinConfig otherwise — or a name -> callable dict, in which case all
    observables share the same run and a dict of results comes back.
    """
    single = callable(observable)
    obs = {"value": observable} if single else dict(observable)
    t0 = time.perf_counter()

    def run_chain(c):
        vals = {name: np.empty(mcmc.samples_per_chain) for name in obs}
        for i, state in enumerate(_iter_chain(sampler, mcmc, c)):
            for name, fn in obs.items():
                vals[name][i] = fn(state)
        return vals

    if _MAX_THREADS > 1 and mcmc.chains > 1:
        with ThreadPoolExecutor(max_workers=_MAX_THREADS) as pool:
            chain_vals = list(pool.map(run_chain, range(mcmc.chains)))
    else:
        chain_vals = [run_chain(c) for c in range(mcmc.chains)]
    series = {name: [vals[name] for vals in chain_vals] for name in obs}
    wall = time.perf_counter() - t0

    out = {}
    base_meta = {**_mcmc_meta(sampler, mcmc), "params": _params_meta(sampler.params),
                 "wall_time": wall}
    for name, chains_values in series.items():
        mean, stderr, tau, flags = _series_stats(chains_values)
        if math.isfinite(tau) and tau > mcmc.samples_per_chain / 50.0:
            flags = flags + ["tau-exceeds-sweeps/50"]
        out[name] = EstimateResult(
            estimate=mean, stderr=stderr,
            n_samples=mcmc.chains * mcmc.samples_per_chain, tau_int=tau,
            metadata={**base_meta, "observable": name, "flags": flags},
        )
    return out["value"] if single else out


# ---------------------------------------------------------------------------
# standard observables


def spin_values(sample) -> np.ndarray:
    """The spin snapshot of a sample, for either chain type."""
    return sample.phi if isinstance(sample, RCState) else sample.values


def magnetization_observable(sample) -> float:
    return magnetization(spin_values(sample))


def site_product_observable(*sites):
    def fn(sample):
        v = spin_values(sample)
        out = 1.0
        for x in sites:
            out *= v[x]
        return out
    return fn


# ---------------------------------------------------------------------------
# spontaneous magnetisation and critical point


def _field_params(beta, L, field_kind, *, g, a, d) -> ModelParams:
    region = build_region("box", d, n=L)
    if field_kind == "free":
        h = np.zeros(region.n_vertices)
    elif field_kind == "thick-plus":
        h = make_boundary_field("thick-plus", region)
    elif field_kind in ("plus-max", "wired-plus"):
        h = make_boundary_field("plus-max", region)
    else:
        raise ValueError(f"unknown field kind {field_kind!r}")
    return ModelParams(region, beta=beta, g=g, a=a, h=h)


def estimate_m_star(beta, L, field_kind, mcmc: MCMCSpec, *, g, a, d=2,
                    sampler_kind="rc"):
    """<phi_0> under a plus-approximating boundary field on the box of radius L.

    field_kind "thick-plus" puts unit field on the log-width shell; "plus-max"
    encodes the maximal wired boundary as the field it induces; "both" returns
    a dict with one estimate per kind for cross-validation.
    """
    if field_kind == "both":
        return {k: estimate_m_star(beta, L, k, mcmc, g=g, a=a, d=d,
                                   sampler_kind=sampler_kind)
                for k in ("thick-plus", "plus-max")}
    params = _field_params(beta, L, field_kind, g=g, a=a, d=d)
    centre = int(params.region.index_of(np.zeros(d, dtype=np.int64)))
    res = estimate_observable(SamplerSpec(params, kind=sampler_kind),
                              site_product_observable(centre), mcmc)
    res.metadata.update(field_kind=field_kind, L=L, centre=centre)
    return res


def binder_cumulant(beta, nrad, mcmc: MCMCSpec, *, g, a, d=2, seed=None) -> float:
    """U4 = 1 - <m^4> / (3 <m^2>^2) from a free-boundary chain on box radius nrad."""
    region = build_region("box", d, n=nrad)
    params = ModelParams(region, beta=beta, g=g, a=a)
    spec = MCMCSpec(sweeps=mcmc.sweeps, burn_in=mcmc.burn_in, thin=mcmc.thin,
                    seed=mcmc.seed if seed is None else seed,
                    chains=mcmc.chains, schedule=mcmc.schedule)
    res = estimate_observable(
        SamplerSpec(params, kind="rc"),
        {"m2": lambda s: magnetization(spin_values(s)) ** 2,
         "m4": lambda s: magnetization(spin_values(s)) ** 4},
        spec)
    m2, m4 = res["m2"].estimate, res["m4"].estimate
    return 1.0 - m4 / (3.0 * m2 * m2)


def estimate_beta_c(g, a, sizes, mcmc: MCMCSpec, *, d=2, bracket=(0.05, 2.0),
                    resolution=1e-2, full=False):
    """Binder-cumulant crossing estimate of the critical inverse temperature.

    For each consecutive size pair the crossing of U4(beta, n) curves is
    located by bisection to ``resolution``; the estimate is the median
    crossing. Raises when a pair's curves do not cross inside ``bracket``
    (scan window too narrow).
    """
    sizes = sorted(int(s) for s in sizes)
    if len(sizes) < 3:
        raise ValueError("need at least three sizes")
    lo0, hi0 = bracket
    cache: dict[tuple[int, int], float] = {}

    def diff(beta, n1, n2):
        out = []
        for nr in (n1, n2):
            key = (nr, round(beta / resolution))
            if key not in cache:
                cache[key] = binder_cumulant(beta, nr, mcmc, g=g, a=a, d=d,
                                             seed=[mcmc.seed, nr, key[1]])
            out.append(cache[key])
        return out[1] - out[0]

    crossings = {}
    for n1, n2 in zip(sizes[:-1], sizes[1:]):
        lo, hi = lo0, hi0
        f_lo, f_hi = diff(lo, n1, n2), diff(hi, n1, n2)
        if not (f_lo < 0 < f_hi):
            raise ValueError(
                f"Binder curves for sizes {n1},{n2} do not cross in "
                f"({lo0}, {hi0}): U4 differences {f_lo:.3f}, {f_hi:.3f}")
        while hi - lo > resolution:
            mid = 0.5 * (lo + hi)
            if diff(mid, n1, n2) < 0:
                lo = mid
            else:
                hi = mid
        crossings[(n1, n2)] = 0.5 * (lo + hi)

    vals = sorted(crossings.values())
    beta_c = float(np.median(vals))
    if full:
        return beta_c, {"crossings": crossings, "spread": vals[-1] - vals[0]}
    return beta_c


# ---------------------------------------------------------------------------
# large deviation scan


def _m_star_value(m_star) -> tuple[float, float]:
    if isinstance(m_star, EstimateResult):
        return m_star.estimate, m_star.stderr
    return float(m_star), 0.0


def _loglsq(sizes, y, power) -> dict:
    """Least squares y ~ intercept - c * n^power."""
    u = np.asarray(sizes, dtype=float) ** power
    A = np.stack([np.ones_like(u), -u], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return {"power": power, "intercept": float(coef[0]), "c": float(coef[1]),
            "ssr": float(np.dot(resid, resid))}


def _scaling_fit(sizes, log_p, log_p_err, d) -> ScalingFit:
    fits = {"surface": _loglsq(sizes, log_p, d - 1),
            "volume": _loglsq(sizes, log_p, d)}
    preferred = min(fits, key=lambda k: fits[k]["ssr"])
    return ScalingFit(sizes=np.asarray(sizes), log_p=np.asarray(log_p),
                      log_p_err=np.asarray(log_p_err), fits=fits,
                      preferred=preferred)


def scan_ldp(beta, delta_fraction, sizes, mcmc: MCMCSpec, *, m_star, g, a,
             d=2) -> dict:
    """Deviation probabilities of the empirical magnetisation across sizes.

    For each box radius n, counts P[|m| <= m* - delta] (lower deviation) and
    P[m >= m* + delta] (upper deviation, one-sided) with delta =
    delta_fraction * m*, then fits log P against n^(d-1) and n^d. Requires a
    clearly positive m_star — scanning a subcritical point is meaningless and
    rejected.
    """
    ms, ms_err = _m_star_value(m_star)
    if not 0 < delta_fraction < 1:
        raise ValueError("delta_fraction must be in (0, 1)")
    if ms <= 0 or ms <= 5 * ms_err:
        raise ValueError(
            "m_star is consistent with zero — the deviation scan needs a "
            "supercritical point with positive spontaneous magnetisation")
    delta = delta_fraction * ms

    table = {}
    for n in sorted(int(s) for s in sizes):
        region = build_region("box", d, n=n)
        params = ModelParams(region, beta=beta, g=g, a=a)
        res = estimate_observable(
            SamplerSpec(params, kind="rc"),
            {"lower": lambda s: float(abs(magnetization(spin_values(s))) <= ms - delta),
             "upper": lambda s: float(magnetization(spin_values(s)) >= ms + delta)},
            MCMCSpec(sweeps=mcmc.sweeps, burn_in=mcmc.burn_in, thin=mcmc.thin,
                     seed=[mcmc.seed, n], chains=mcmc.chains,
                     schedule=mcmc.schedule))
        for name, r in res.items():
            r.metadata.update(hits=int(round(r.estimate * r.n_samples)),
                              n=n, delta=delta, m_star=ms)
            if r.metadata["hits"] < 30:
                r.metadata["flags"] = r.metadata.get("flags", []) + ["fewer-than-30-hits"]
        table[n] = res

    out = {"table": table, "delta": delta, "m_star": ms, "flags": {}}
    for name in ("lower", "upper"):
        ns = sorted(table)
        ps = np.array([table[n][name].estimate for n in ns])
        errs = np.array([table[n][name].stderr for n in ns])
        if np.any(ps <= 0):
            # direct counting ran dry for this event; refuse the fit (log 0)
            # but keep the other event's result usable
            dead = [n for n, p in zip(ns, ps) if p <= 0]
            out[name] = None
            out["flags"][name] = [f"zero-hits-at-n={n}" for n in dead]
            continue
        out[name] = _scaling_fit(ns, np.log(ps), errs / ps, d)
        out["flags"][name] = [f for n in ns for f in
                              table[n][name].metadata.get("flags", [])]
    return out


# ---------------------------------------------------------------------------
# surface tension


def estimate_surface_tension(beta, L, M, mcmc: MCMCSpec, *, g, a, d=2,
                             width=None) -> EstimateResult:
    """tau_hat = -log P[ghosts disconnected] / L^(d-1) on the two-ghost
    rectangle R(L, M), sampling the ghost-identified all-plus chain."""
    tg = two_ghost_rectangle(d, L, M, width=width)
    params = ModelParams(tg.region, beta=beta, g=g, a=a, h=np.abs(tg.h))
    res = estimate_observable(
        SamplerSpec(params, kind="rc"),
        lambda s: float(disconnection(s, tg)),
        mcmc)
    p, p_err = res.estimate, res.stderr
    hits = int(round(p * res.n_samples))
    area = float(L) ** (d - 1)
    flags = res.metadata.get("flags", [])
    if hits == 0:
        flags = flags + ["no-disconnections-observed"]
        tau_hat, tau_err = math.nan, math.nan
    else:
        tau_hat = -math.log(p) / area
        tau_err = p_err / (p * area)
    return EstimateResult(
        estimate=tau_hat, stderr=tau_err, n_samples=res.n_samples,
        tau_int=res.tau_int,
        metadata={**res.metadata, "flags": flags, "p_disconnect": p,
                  "p_stderr": p_err, "hits": hits, "L": L, "M": M})


# ---------------------------------------------------------------------------
# local uniqueness scan


def scan_local_uniqueness(beta, L_list, bc_list, mcmc: MCMCSpec, *, g, a,
                          d=2) -> dict:
    """Frequency of the two-scale uniqueness event per (scale, boundary field).

    Chains run on the box of radius 10 L; "wired-plus" means the field-encoded
    maximal boundary. Returns the per-pair estimates and the minimum over
    boundary fields at each scale.
    """
    for bc in bc_list:
        if bc not in BC_KINDS:
            raise ValueError(f"unknown boundary field {bc!r}; expected one of {BC_KINDS}")
    table: dict = {}
    for L in L_list:
        L = int(L)
        for bc in bc_list:
            params = _field_params(beta, 10 * L, bc, g=g, a=a, d=d)
            region = params.region
            res = estimate_observable(
                SamplerSpec(params, kind="rc"),
                lambda s, _r=region, _L=L: float(local_uniqueness(s.omega, _r, _L)),
                MCMCSpec(sweeps=mcmc.sweeps, burn_in=mcmc.burn_in,
                         thin=mcmc.thin, seed=[mcmc.seed, L], chains=mcmc.chains,
                         schedule=mcmc.schedule))
            res.metadata.update(L=L, bc=bc,
                                n_eff=effective_samples(res.n_samples, res.tau_int))
            table[(L, bc)] = res
    minima = {}
    for L in sorted({int(L) for L in L_list}):
        bc_min = min(bc_list, key=lambda b: table[(L, b)].estimate)
        minima[L] = {"bc": bc_min, "estimate": table[(L, bc_min)].estimate,
                     "stderr": table[(L, bc_min)].stderr}
    return {"table": table, "min_over_bc": minima}


# ---------------------------------------------------------------------------
# spectral gap upper bound


def smooth_ramp(m: float):
    """Odd C^1 cubic ramp: +-1 beyond -+m, (3s - s^3)/2 inside (s = t/m).

    Steepest slope is 3 / (2 m), at the origin.
    """
    if not m > 0:
        raise ValueError("ramp width must be positive — the test function "
                         "would be saturated")

    def chi(t):
        s = np.clip(np.asarray(t, dtype=float) / m, -1.0, 1.0)
        return 0.5 * s * (3.0 - s * s)
    return chi


def dirichlet_form(phis: np.ndarray, params: ModelParams, f, n_nodes: int = 96
                   ) -> np.ndarray:
    """Per-sample heat-bath Dirichlet terms for f = f(mean spin).

    For each sampled configuration phi the inner integral over the refreshed
    site value is done by fixed Gauss-Legendre quadrature of the single-site
    conditional; the outer average over samples is left to the caller. Returns
    one nonnegative number per sample.
    """
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    n = params.region.n_vertices
    if phis.shape[1] != n:
        raise ValueError("sample array does not match the region size")

    theta_max = 0.0
    for v in phis:
        theta_max = max(theta_max, float(np.abs(tilt_vector(v, params)).max(initial=0.0)))
    T = quad_cutoff(params.g, params.a, tilt=theta_max)
    nodes, weights = leggauss(n_nodes)
    s = T * nodes
    logw_base = np.log(weights) - params.g * s ** 4 - params.a * s ** 2

    out = np.empty(len(phis))
    for i, v in enumerate(phis):
        theta = tilt_vector(v, params)
        logw = logw_base[None, :] + np.outer(theta, s)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        w /= w.sum(axis=1, keepdims=True)
        mean = v.mean()
        fm = f(mean)
        fmoved = f(mean + (s[None, :] - v[:, None]) / n)
        out[i] = 0.5 * float(np.sum(w * (fm - fmoved) ** 2))
    return out


def _jackknife_ratio(num_terms: np.ndarray, f_vals: np.ndarray,
                     n_blocks: int = 32) -> tuple[float, float]:
    """Ratio mean(num) / var(f) with block-jackknife error."""
    n = len(f_vals)
    n_blocks = max(2, min(n_blocks, n))
    edges = np.linspace(0, n, n_blocks + 1).astype(int)
    ratio = float(num_terms.mean() / f_vals.var(ddof=1))
    rs = []
    for b in range(n_blocks):
        keep = np.ones(n, dtype=bool)
        keep[edges[b]:edges[b + 1]] = False
        rs.append(num_terms[keep].mean() / f_vals[keep].var(ddof=1))
    rs = np.array(rs)
    err = math.sqrt((n_blocks - 1) / n_blocks * float(np.sum((rs - rs.mean()) ** 2)))
    return ratio, err


def spectral_gap_upper(beta, n, m_fraction, mcmc: MCMCSpec, *, m_star, g, a,
                       d=2) -> EstimateResult:
    """Variational upper bound E(f)/Var(f) on the heat-bath spectral gap,
    using f = ramp(mean spin) with ramp width m_fraction * m_star.

    Samples come from the cluster chain (which moves between the two phases);
    the Dirichlet form is evaluated by per-site quadrature on each sample.
    """
    if not 0 < m_fraction < 1:
        raise ValueError("m-fraction must lie in (0, 1); the boundary cases "
                         "degenerate to a saturated test function")
    ms, _ = _m_star_value(m_star)
    chi = smooth_ramp(m_fraction * ms)

    region = build_region("box", d, n=n)
    params = ModelParams(region, beta=beta, g=g, a=a)
    t0 = time.perf_counter()
    phis = np.stack([spin_values(s)
                     for c in range(mcmc.chains)
                     for s in _iter_chain(SamplerSpec(params, kind="rc"), mcmc, c)])
    f_vals = chi(phis.mean(axis=1))
    terms = dirichlet_form(phis, params, chi)
    wall = time.perf_counter() - t0

    flags = []
    var = float(f_vals.var(ddof=1))
    tau, _ = autocorrelation(f_vals)
    if not math.isfinite(tau):
        flags.append("autocorrelation-window-not-converged")
        tau = 0.5
    var_err = var * math.sqrt(2.0 * (2.0 * max(tau, 0.5)) / len(f_vals))
    if var <= 3.0 * var_err and var_err > 0:
        flags.append("variance-consistent-with-zero")
    if var == 0.0:
        raise ValueError("test function saturated: Var(f) = 0 on this run")

    ratio, err = _jackknife_ratio(terms, f_vals)
    return EstimateResult(
        estimate=ratio, stderr=err, n_samples=len(f_vals),
        tau_int=max(0.5, tau),
        metadata={"params": _params_meta(params),
                  **_mcmc_meta(SamplerSpec(params, kind="rc"), mcmc),
                  "wall_time": wall, "flags": flags, "m": m_fraction * ms,
                  "ramp_max_slope": 1.5 / (m_fraction * ms),
                  "dirichlet": float(terms.mean()), "variance": var})


# ---------------------------------------------------------------------------
# truncation diagnostics


def collect_rc_states(params: ModelParams, mcmc: MCMCSpec,
                      bc: BoundaryCondition | None = None) -> list[RCState]:
    """All thinned states of the cluster chain (single aggregation point for
    diagnostics that need the full configuration)."""
    spec = SamplerSpec(params, kind="rc", bc=bc)
    return [s for c in range(mcmc.chains) for s in _iter_chain(spec, mcmc, c)]


def truncation_diagnostics(states: list[RCState], M: float, K: int, N: int) -> dict:
    """Volume-averaged truncation statistics over a chain's states.

    tail_field:          (1/|V|) sum_x a_x 1{a_x >= M}
    large_cluster_field: (1/|V|) sum_x a_x 1{|C_x| >= K}
    mid_cluster_volume:  (1/|V|) sum over clusters != C_max with |C| >= N of |C|
    """
    if not states:
        raise ValueError("no states supplied")
    n = states[0].graph.region.n_vertices
    rows = {"tail_field": [], "large_cluster_field": [], "mid_cluster_volume": []}
    for st in states:
        a = st.a_interior
        labels, _ = cluster_labels(st)
        stats = cluster_stats(labels, n, N=N, K=K)
        rows["tail_field"].append(float(np.sum(a * (a >= M))) / n)
        rows["large_cluster_field"].append(float(np.sum(a * stats.large_site)) / n)
        rows["mid_cluster_volume"].append(stats.restricted_sum / n)

    out = {}
    for name, vals in rows.items():
        vals = np.asarray(vals)
        mean, stderr, tau, flags = _series_stats([vals])
        out[name] = EstimateResult(
            estimate=mean, stderr=stderr, n_samples=len(vals), tau_int=tau,
            metadata={"M": M, "K": K, "N": N, "flags": flags,
                      "per_sample": vals})
    return out
