"""Exact computations on tiny graphs, used as ground truth by the test suite.

Spin expectations are multi-dimensional quadrature integrals evaluated by
tensor contraction: one Gauss-Legendre axis per vertex, one exponential
kernel per edge, with the node count doubled until the value stabilises.
Random-cluster quantities enumerate every configuration of the stochastic
edges (those not forced closed by a zero field or zero boundary value) and
integrate out the absolute-value field the same way. Truncated current sums
and an exhaustive up-set stochastic-domination checker round out the toolbox.

Everything here is deliberately exponential in the graph size; callers are
limited to a handful of vertices and edges.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, logsumexp, roots_legendre

from .lattice import GhostGraph
from .randomcluster import BoundaryCondition, cluster_labels, edge_prob, free_bc, ghost_prob
from .singlesite import moment, quad_cutoff
from .spin import ModelParams

MAX_ORACLE_VERTICES = 4
MAX_STOCHASTIC_EDGES = 16
_N_SEQ = (40, 80, 160, 320, 640)

__all__ = [
    "exact_spin_expectation", "exact_rc_probability", "partition_identities",
    "current_expansion_check", "current_moment_check",
    "stochastic_domination_check", "exact_power_sum_moment",
    "rc_edge_law", "sprinkled_law", "EnumConfig",
]


# ---------------------------------------------------------------------------
# quadrature plumbing


@lru_cache(maxsize=32)
def _gl(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(n)
    return (x + 1.0) / 2.0, w / 2.0


def _cutoff(params: ModelParams) -> float:
    """Integration cutoff T: the single-site cutoff pushed out by the largest
    tilt any vertex can see when its neighbours sit at T themselves."""
    deg = float(params.J_nbr.sum(axis=1).max()) if params.region.n_vertices else 0.0
    h_max = float(np.abs(params.h_sites).max()) if params.region.n_vertices else 0.0
    T = quad_cutoff(params.g, params.a, 0.0)
    for _ in range(4):
        T = quad_cutoff(params.g, params.a, params.beta * (deg * T + h_max))
    return T


def _contract(site_vecs, pair_ops) -> float:
    """Contract per-site vectors against (u, v, kernel) pair operands."""
    n = len(site_vecs)
    letters = "abcdefgh"[:n]
    subs = [letters[i] for i in range(n)]
    ops = list(site_vecs)
    for u, v, K in pair_ops:
        subs.append(letters[u] + letters[v])
        ops.append(K)
    return float(np.einsum(",".join(subs) + "->", *ops, optimize=True))


def _site_fn_values(t: np.ndarray, spec) -> np.ndarray:
    if isinstance(spec, (int, np.integer)):
        return t ** int(spec)
    if spec == "sgn":
        return np.sign(t)
    if spec == "abs":
        return np.abs(t)
    if callable(spec):
        return np.asarray(spec(t), dtype=float)
    raise ValueError(f"unsupported observable factor {spec!r}")


def _spin_ratio(params: ModelParams, observable: dict | None,
                extra_pair: dict | None = None, extra_site: dict | None = None,
                rel_tol: float = 1e-10) -> float:
    """<F>_{Lambda,beta,h,J} for product observables F = prod_x f_x(phi_x).

    Each spin integral is decomposed into a sum over sign vectors times a
    half-line integral in |phi|, so observables that are only piecewise
    smooth at 0 (sgn, abs) still converge superexponentially under node
    doubling. ``extra_pair`` maps vertex pairs (u, v) to lambda coefficients
    multiplying e^{lambda phi_u phi_v} into the *numerator* integrand only
    (so the result is <F prod e^{lambda phi phi}> under the unmodified
    measure); ``extra_site`` likewise maps sites to coefficients of
    e^{c phi_x} in the numerator.
    """
    region = params.region
    n = region.n_vertices
    if n > MAX_ORACLE_VERTICES:
        raise ValueError(f"oracle limited to {MAX_ORACLE_VERTICES} vertices, got {n}")
    observable = observable or {}
    for x in observable:
        if not (0 <= x < n):
            raise ValueError(f"observable site {x} out of range")
    T = _cutoff(params)
    extra_site = dict(extra_site or {})
    epairs: dict[tuple[int, int], float] = {}
    for (pu, pv), lam in (extra_pair or {}).items():
        key = (min(int(pu), int(pv)), max(int(pu), int(pv)))
        epairs[key] = epairs.get(key, 0.0) + lam
    edge_keys = [(min(int(e[0]), int(e[1])), max(int(e[0]), int(e[1]))) for e in region.edges]
    # (u, v, lambda in denominator, lambda in numerator)
    pair_list = [(key[0], key[1], params.beta * params.J_edges[i],
                  params.beta * params.J_edges[i] + epairs.get(key, 0.0))
                 for i, key in enumerate(edge_keys)]
    pair_list += [(pu, pv, 0.0, lam) for (pu, pv), lam in epairs.items()
                  if (pu, pv) not in set(edge_keys)]

    prev = None
    for N in _N_SEQ:
        u, w = _gl(N)
        t = T * u
        wt = T * w
        base = wt * np.exp(-params.g * t ** 4 - params.a * t ** 2)
        outer = np.outer(t, t)
        kernels = {}
        for _, _, lam_d, lam_n in pair_list:
            for lam in (lam_d, lam_n):
                if lam not in kernels:
                    kernels[lam] = (np.exp(lam * outer), np.exp(-lam * outer))
        num = 0.0
        den = 0.0
        for signs in itertools.product((1.0, -1.0), repeat=n):
            den_vecs, num_vecs = [], []
            for x in range(n):
                c = params.beta * params.h_sites[x] * signs[x]
                bx = base * np.exp(c * t)
                den_vecs.append(bx)
                nx = bx * np.exp(extra_site[x] * signs[x] * t) if x in extra_site else bx
                num_vecs.append(nx * _site_fn_values(signs[x] * t, observable[x])
                                if x in observable else nx)
            flip = [0 if signs[pu] * signs[pv] > 0 else 1 for pu, pv, _, _ in pair_list]
            den += _contract(den_vecs, [(pu, pv, kernels[lam_d][f])
                                        for (pu, pv, lam_d, _), f in zip(pair_list, flip)])
            num += _contract(num_vecs, [(pu, pv, kernels[lam_n][f])
                                        for (pu, pv, _, lam_n), f in zip(pair_list, flip)])
        val = num / den
        if prev is not None and abs(val - prev) <= rel_tol * max(1.0, abs(val)):
            return val
        prev = val
    raise RuntimeError("quadrature failed to stabilise; integrand too wild for the node budget")


def exact_spin_expectation(params: ModelParams, observable) -> float:
    """Expectation of a product observable under the spin Gibbs measure.

    ``observable`` maps vertex index -> integer power, "sgn", "abs", or a
    vectorised callable; the observable is the product over its entries
    (empty dict gives 1). Limited to four vertices.
    """
    return _spin_ratio(params, observable)


def exact_power_sum_moment(params: ModelParams, power: int) -> float:
    """<(sum_x phi_x)^power> by multinomial expansion into product terms."""
    n = params.region.n_vertices
    total = 0.0
    for comp in itertools.product(range(power + 1), repeat=n):
        if sum(comp) != power:
            continue
        coef = math.factorial(power)
        for k in comp:
            coef //= math.factorial(k)
        obs = {x: k for x, k in enumerate(comp) if k}
        total += coef * exact_spin_expectation(params, obs)
    return total


# ---------------------------------------------------------------------------
# random-cluster enumeration


@dataclass
class EnumConfig:
    """One configuration handed to event predicates during enumeration."""

    graph: GhostGraph
    bc: BoundaryCondition
    omega: np.ndarray
    omega_boundary: np.ndarray
    omega_ghost: np.ndarray
    labels: np.ndarray
    k: int

    def _node(self, v) -> int:
        region = self.graph.region
        if v == "ghost" or v == "ghost+":
            return region.n_closed
        if v == "ghost-":
            if not self.graph.two_ghost:
                raise ValueError("graph has a single ghost")
            return region.n_closed + 1
        return int(v)

    def connected(self, u, v) -> bool:
        return self.labels[self._node(u)] == self.labels[self._node(v)]


def _stochastic_sets(graph: GhostGraph, bc: BoundaryCondition):
    region = graph.region
    internal = np.arange(len(region.edges))
    bnd = np.nonzero(bc.b[region.boundary_edges[:, 1] - region.n_vertices] > 0)[0]
    ghost = np.nonzero(graph.h != 0.0)[0]
    return internal, bnd, ghost


def _rc_enumerate(params: ModelParams, graph: GhostGraph, bc: BoundaryCondition,
                  event, site_powers, pair_weight, N: int):
    """One pass at fixed node count: returns (numerator, denominator).

    Denominator: unnormalised total mass. Numerator: mass of configurations
    passing ``event``, with a_x^{site_powers[x]} and the pair_weight factors
    inserted into the field integral.
    """
    region = graph.region
    n = region.n_vertices
    beta = params.beta
    site_powers = site_powers or {}
    pair_weight = list(pair_weight or [])

    T = _cutoff(params)
    u, w = _gl(N)
    t = T * u
    wt = T * w
    base = wt * np.exp(-params.g * t ** 4 - params.a * t ** 2)
    outer = np.outer(t, t)

    internal, bnd_stoch, ghost_stoch = _stochastic_sets(graph, bc)
    S = len(internal) + len(bnd_stoch) + len(ghost_stoch)
    if S > MAX_STOCHASTIC_EDGES:
        raise ValueError(f"{S} stochastic edges exceed the oracle cap {MAX_STOCHASTIC_EDGES}")
    if n > MAX_ORACLE_VERTICES:
        raise ValueError(f"oracle limited to {MAX_ORACLE_VERTICES} vertices, got {n}")
    if len(params.J_edges) and not np.all(params.J_edges == 1.0):
        raise ValueError("the random-cluster oracle requires unit couplings J = 1")

    # kernel variants per internal edge
    K_closed, K_open = [], []
    for eu, ev in region.edges:
        arg = beta * outer
        K_closed.append(np.exp(-arg))
        K_open.append(2.0 * np.sinh(arg))
    W = [np.asarray(fn(t[:, None], t[None, :]), dtype=float) for (_, _, fn) in pair_weight]

    # ghost-edge site factors (h may be signed on two-ghost graphs)
    habs = np.abs(graph.h)
    G_closed = {x: np.exp(-beta * habs[x] * t) for x in ghost_stoch}
    G_open = {x: 2.0 * np.sinh(beta * habs[x] * t) for x in ghost_stoch}
    # boundary-edge site factors for edges with b > 0
    b_of = bc.b[region.boundary_edges[:, 1] - region.n_vertices]
    B_closed = {i: np.exp(-beta * b_of[i] * t) for i in bnd_stoch}
    B_open = {i: 2.0 * np.sinh(beta * b_of[i] * t) for i in bnd_stoch}

    num = 0.0
    den = 0.0
    n_int, n_bnd = len(internal), len(bnd_stoch)
    for bits in range(1 << S):
        omega = np.zeros(len(region.edges), dtype=np.uint8)
        omega_b = np.zeros(len(region.boundary_edges), dtype=np.uint8)
        omega_g = np.zeros(n, dtype=np.uint8)
        for j in range(n_int):
            omega[internal[j]] = (bits >> j) & 1
        for j in range(n_bnd):
            omega_b[bnd_stoch[j]] = (bits >> (n_int + j)) & 1
        for j in range(len(ghost_stoch)):
            omega_g[ghost_stoch[j]] = (bits >> (n_int + n_bnd + j)) & 1

        labels, k = cluster_labels(omega, graph, bc, omega_boundary=omega_b,
                                   omega_ghost=omega_g)
        cfg = EnumConfig(graph, bc, omega, omega_b, omega_g, labels, k)

        site_vecs = []
        for x in range(n):
            v = base.copy()
            if x in G_closed:
                v = v * (G_open[x] if omega_g[x] else G_closed[x])
            site_vecs.append(v)
        for i in bnd_stoch:
            x = region.boundary_edges[i, 0]
            site_vecs[x] = site_vecs[x] * (B_open[i] if omega_b[i] else B_closed[i])
        pair_ops = [(int(eu), int(ev), K_open[i] if omega[i] else K_closed[i])
                    for i, (eu, ev) in enumerate(region.edges)]

        mass = (2.0 ** k) * _contract(site_vecs, pair_ops)
        den += mass
        if event is None or event(cfg):
            if site_powers or W:
                ins_vecs = [sv * (t ** site_powers[x]) if x in site_powers else sv
                            for x, sv in enumerate(site_vecs)]
                ins_ops = pair_ops + [(int(pu), int(pv), W[j])
                                      for j, (pu, pv, _) in enumerate(pair_weight)]
                num += (2.0 ** k) * _contract(ins_vecs, ins_ops)
            else:
                num += mass
    return num, den


def exact_rc_probability(params: ModelParams, event=None,
                         bc: BoundaryCondition | None = None, *,
                         graph: GhostGraph | None = None,
                         site_powers: dict | None = None,
                         pair_weight=None,
                         normalised: bool = True,
                         rel_tol: float = 1e-9) -> float:
    """Exact random-cluster expectation E[f(a) 1_event] by enumeration.

    ``event`` is a predicate of EnumConfig (None = always). ``site_powers``
    inserts a_x^p factors, ``pair_weight`` a list of (u, v, fn(a_u, a_v))
    weights. Normalised against the plain total mass unless ``normalised``
    is False, in which case the unnormalised numerator is returned.
    """
    if graph is None:
        graph = GhostGraph(params.region, params.h_sites.copy())
    if bc is None:
        bc = free_bc(graph.region)
    prev = None
    for N in _N_SEQ:
        num, den = _rc_enumerate(params, graph, bc, event, site_powers, pair_weight, N)
        val = num / den if normalised else num
        if prev is not None and abs(val - prev) <= rel_tol * max(1.0, abs(val)):
            return val
        prev = val
    raise RuntimeError("quadrature failed to stabilise in the rc enumeration")


# ---------------------------------------------------------------------------
# partition identities


def _rc_normaliser(params: ModelParams, graph: GhostGraph, bc: BoundaryCondition,
                   rel_tol: float = 1e-10) -> float:
    prev = None
    for N in _N_SEQ:
        _, den = _rc_enumerate(params, graph, bc, None, None, None, N)
        if prev is not None and abs(den - prev) <= rel_tol * abs(den):
            return den
        prev = den
    raise RuntimeError("quadrature failed to stabilise in the rc normaliser")


def _spin_normaliser(params: ModelParams, rel_tol: float = 1e-10) -> float:
    """Z = integral over signed spins of the unnormalised Gibbs density."""
    region = params.region
    T = _cutoff(params)
    prev = None
    for N in _N_SEQ:
        u, w = _gl(N)
        t = T * (2.0 * u - 1.0)
        wt = 2.0 * T * w
        base = wt * np.exp(-params.g * t ** 4 - params.a * t ** 2)
        vecs = [base * np.exp(params.beta * params.h_sites[x] * t)
                for x in range(region.n_vertices)]
        outer = np.outer(t, t)
        ops = [(int(eu), int(ev), np.exp(params.beta * params.J_edges[i] * outer))
               for i, (eu, ev) in enumerate(region.edges)]
        val = _contract(vecs, ops)
        if prev is not None and abs(val - prev) <= rel_tol * abs(val):
            return val
        prev = val
    raise RuntimeError("quadrature failed to stabilise in the spin normaliser")


def _sign_route_normaliser(params: ModelParams, rel_tol: float = 1e-10) -> float:
    """Z by the alternative route: sum over sign vectors, integral over a >= 0."""
    region = params.region
    n = region.n_vertices
    T = _cutoff(params)
    prev = None
    for N in _N_SEQ:
        u, w = _gl(N)
        t = T * u
        wt = T * w
        base = wt * np.exp(-params.g * t ** 4 - params.a * t ** 2)
        outer = np.outer(t, t)
        total = 0.0
        for signs in itertools.product((1.0, -1.0), repeat=n):
            vecs = [base * np.exp(params.beta * params.h_sites[x] * signs[x] * t)
                    for x in range(n)]
            ops = [(int(eu), int(ev),
                    np.exp(params.beta * params.J_edges[i] * signs[eu] * signs[ev] * outer))
                   for i, (eu, ev) in enumerate(region.edges)]
            total += _contract(vecs, ops)
        if prev is not None and abs(total - prev) <= rel_tol * abs(total):
            return total
        prev = total
    raise RuntimeError("quadrature failed to stabilise in the sign-route normaliser")


def _fk_ising_sides(params: ModelParams, graph: GhostGraph, bc: BoundaryCondition,
                    a_fixed: np.ndarray) -> tuple[float, float]:
    """Both sides of the fixed-a identity relating the +/- spin sum to the
    edge-configuration sum: the Ising normaliser with the ghost spin pinned
    to +1 equals half the cluster-weighted sum times the closed-edge factors.
    """
    region = graph.region
    n, n_ext = region.n_vertices, region.n_ext
    beta = params.beta
    a_int = np.asarray(a_fixed, dtype=float)
    if a_int.shape != (n,):
        raise ValueError("a_fixed must give one value per interior vertex")

    # LHS: spin sum over interior spins and one spin per wiring class
    n_cls = len(bc.classes)
    cls_of = np.empty(n_ext, dtype=np.int64)
    for ci, cls in enumerate(bc.classes):
        for v in cls:
            cls_of[v] = ci
    lhs = 0.0
    for s_int in itertools.product((1.0, -1.0), repeat=n):
        for s_cls in itertools.product((1.0, -1.0), repeat=n_cls):
            e = 0.0
            for i, (eu, ev) in enumerate(region.edges):
                e += beta * a_int[eu] * a_int[ev] * s_int[eu] * s_int[ev]
            for x, yc in region.boundary_edges:
                ext = yc - n
                e += beta * a_int[x] * bc.b[ext] * s_int[x] * s_cls[cls_of[ext]]
            e += beta * float(np.dot(np.abs(graph.h) * a_int, s_int))
            lhs += math.exp(e)

    # RHS: enumerate omega with weights (p/(1-p))^open 2^k, then the
    # closed-form square-root prefactors over the full edge sets
    internal, bnd_stoch, ghost_stoch = _stochastic_sets(graph, bc)
    S = len(internal) + len(bnd_stoch) + len(ghost_stoch)
    if S > MAX_STOCHASTIC_EDGES:
        raise ValueError(f"{S} stochastic edges exceed the oracle cap {MAX_STOCHASTIC_EDGES}")
    b_of = bc.b[region.boundary_edges[:, 1] - n]
    p_int = edge_prob(beta, a_int[region.edges[:, 0]], a_int[region.edges[:, 1]])
    p_bnd = edge_prob(beta, a_int[region.boundary_edges[:, 0]], b_of)
    p_gh = ghost_prob(beta, np.abs(graph.h), a_int)

    fk = 0.0
    n_int, n_bnd = len(internal), len(bnd_stoch)
    for bits in range(1 << S):
        omega = np.zeros(len(region.edges), dtype=np.uint8)
        omega_b = np.zeros(len(region.boundary_edges), dtype=np.uint8)
        omega_g = np.zeros(n, dtype=np.uint8)
        wgt = 1.0
        for j in range(n_int):
            if (bits >> j) & 1:
                omega[internal[j]] = 1
                wgt *= p_int[internal[j]] / (1.0 - p_int[internal[j]])
        for j in range(n_bnd):
            if (bits >> (n_int + j)) & 1:
                omega_b[bnd_stoch[j]] = 1
                wgt *= p_bnd[bnd_stoch[j]] / (1.0 - p_bnd[bnd_stoch[j]])
        for j, x in enumerate(ghost_stoch):
            if (bits >> (n_int + n_bnd + j)) & 1:
                omega_g[x] = 1
                wgt *= p_gh[x] / (1.0 - p_gh[x])
        _, k = cluster_labels(omega, graph, bc, omega_boundary=omega_b, omega_ghost=omega_g)
        fk += wgt * 2.0 ** k

    prefactor = math.exp(0.5 * (np.sum(np.log1p(-p_int)) + np.sum(np.log1p(-p_bnd))
                                + np.sum(np.log1p(-p_gh))))
    rhs = 0.5 * fk * prefactor
    return lhs, rhs


def partition_identities(params: ModelParams, a_fixed=None) -> dict:
    """Cross-checks of the three normaliser routes on an oracle-size graph.

    Returns the random-cluster normaliser Z_rc, the spin normaliser Z_phi4
    computed two ways (signed-spin quadrature and sign-sum-over-|phi| route),
    the ratio Z_rc / Z_phi4 whose target value is 2, and both sides of the
    fixed-a identity with their relative gap.
    """
    region = params.region
    if np.any(params.h_sites < 0):
        raise ValueError("partition identities assume h >= 0")
    graph = GhostGraph(region, params.h_sites.copy())
    bc = free_bc(region)

    z_rc = _rc_normaliser(params, graph, bc)
    # exterior spins are uncoupled under the free bc and contribute 2 each
    z_phi4 = (2.0 ** region.n_ext) * _spin_normaliser(params)
    z_phi4_alt = (2.0 ** region.n_ext) * _sign_route_normaliser(params)

    if a_fixed is None:
        a_fixed = np.full(region.n_vertices, 1.0)
    ising_lhs, fk_rhs = _fk_ising_sides(params, graph, bc, a_fixed)

    ratio = z_rc / z_phi4
    return {
        "z_rc": z_rc,
        "z_phi4": z_phi4,
        "z_phi4_alt": z_phi4_alt,
        "ratio": ratio,
        "ratio_rel_err": abs(ratio - 2.0) / 2.0,
        "phi4_routes_rel_err": abs(z_phi4 - z_phi4_alt) / abs(z_phi4),
        "ising_lhs": ising_lhs,
        "fk_rhs": fk_rhs,
        "fk_rel_err": abs(ising_lhs - fk_rhs) / abs(ising_lhs),
        "a_fixed": np.asarray(a_fixed, dtype=float),
    }


# ---------------------------------------------------------------------------
# truncated current sums


def _current_edges(params: ModelParams) -> list:
    """Edge list of the field graph: internal edges then ghost edges."""
    edges = [("internal", i) for i in range(len(params.region.edges))]
    edges += [("ghost", x) for x in np.nonzero(params.h_sites != 0.0)[0]]
    return edges


def _current_log_terms(params: ModelParams, A: dict, Nmax: int):
    """Log-weights of every current with all n_e <= Nmax, plus the max n_e
    per term (for truncation curves). Terms with an odd moment vanish and
    are returned as -inf."""
    region = params.region
    n = region.n_vertices
    edges = _current_edges(params)
    m = len(edges)
    if (Nmax + 1) ** m > 10 ** 7:
        raise ValueError("current enumeration too large; reduce Nmax or the graph")
    if np.any(params.h_sites < 0):
        raise ValueError("current expansion requires a nonnegative field")

    grids = np.indices((Nmax + 1,) * m).reshape(m, -1) if m else np.zeros((0, 1), dtype=np.int64)
    n_terms = grids.shape[1]

    log_c = np.empty(m)
    inc = np.zeros((m, n), dtype=np.int64)
    for j, (kind, idx) in enumerate(edges):
        if kind == "internal":
            eu, ev = region.edges[idx]
            log_c[j] = math.log(params.beta * params.J_edges[idx]) if params.beta * params.J_edges[idx] > 0 else -math.inf
            inc[j, eu] += 1
            inc[j, ev] += 1
        else:
            val = params.beta * abs(params.h_sites[idx])
            log_c[j] = math.log(val) if val > 0 else -math.inf
            inc[j, idx] += 1

    deg = inc.T @ grids  # (n, n_terms)
    for x, p in (A or {}).items():
        deg[x] += int(p)

    max_deg = int(deg.max()) if deg.size else 0
    log_mom = np.full(max_deg + 1, -np.inf)
    for k in range(0, max_deg + 1, 2):
        log_mom[k] = math.log(moment(k, params.single_site))

    with np.errstate(invalid="ignore"):
        lw = np.zeros(n_terms)
        for j in range(m):
            nj = grids[j]
            contrib = np.where(nj > 0, nj * log_c[j], 0.0)
            lw += contrib - gammaln(nj + 1.0)
        lw += log_mom[deg].sum(axis=0)
    max_n = grids.max(axis=0) if m else np.zeros(n_terms, dtype=np.int64)
    return lw, max_n, grids, edges


def current_expansion_check(params: ModelParams, A: dict, Nmax: int = 40,
                            cutoffs=(10, 20, 40)) -> dict:
    """Truncated current-expansion ratio for the moment <phi^A> vs quadrature.

    The expansion writes Z * <prod phi_x^{A_x}> as a sum over integer edge
    currents weighted by beta^{n}/n! times single-site moments; odd-degree
    terms vanish, which silently enforces the source-parity constraint.
    Returns the ratio at Nmax, the quadrature reference, their gap, the
    truncation curve over ``cutoffs``, and a crude factorial tail bound.
    """
    A = {int(x): int(p) for x, p in (A or {}).items()}
    lw_num, mx_num, _, edges = _current_log_terms(params, A, Nmax)
    lw_den, mx_den, _, _ = _current_log_terms(params, {}, Nmax)

    def partial(cut):
        num = logsumexp(lw_num[mx_num <= cut]) if np.any(mx_num <= cut) else -np.inf
        den = logsumexp(lw_den[mx_den <= cut])
        return math.exp(num - den)

    ratio = partial(Nmax)
    reference = exact_spin_expectation(params, A) if A else 1.0
    curve = {int(c): partial(int(c)) for c in cutoffs}

    # crude tail bound: per edge, sum_{n > Nmax} (c B)^n / n! with B the
    # worst single-step moment growth observed in the table
    if edges:
        mom_tbl = [moment(k, params.single_site) for k in range(0, 2 * Nmax + 4, 2)]
        growth = max(mom_tbl[i + 1] / mom_tbl[i] for i in range(len(mom_tbl) - 1))
        c_max = max(params.beta * np.abs(params.h_sites).max(initial=0.0),
                    params.beta * params.J_edges.max(initial=0.0))
        arg = c_max * math.sqrt(growth)
        head = sum(arg ** j / math.factorial(j) for j in range(Nmax + 1))
        tail_bound = len(edges) * (math.exp(arg) - head)
    else:
        tail_bound = 0.0

    return {
        "ratio": ratio,
        "reference": reference,
        "gap": abs(ratio - reference),
        "curve": curve,
        "tail_bound": tail_bound,
    }


def current_moment_check(params: ModelParams, edge_subset, Nmax: int = 40) -> dict:
    """Degree moment identity: E[2^{sum_{e in subset} n_e}] against the
    quadrature value of <prod_{e} exp(J_e phi_e)> with J_e = beta J (internal)
    or beta h_x (ghost edge, where phi at the ghost is identically 1)."""
    lw, _, grids, edges = _current_log_terms(params, {}, Nmax)
    edge_index = {spec: j for j, spec in enumerate(edges)}

    sel = []
    for spec in edge_subset:
        key = ("internal", int(spec)) if isinstance(spec, (int, np.integer)) else (spec[0], int(spec[1]))
        if key not in edge_index:
            raise ValueError(f"edge {spec!r} not present in the field graph")
        sel.append(edge_index[key])

    lw_num = lw.copy()
    for j in sel:
        lw_num += grids[j] * math.log(2.0)
    lhs = math.exp(logsumexp(lw_num) - logsumexp(lw))

    extra_pair, extra_site = {}, {}
    for j in sel:
        kind, idx = edges[j]
        if kind == "internal":
            eu, ev = params.region.edges[idx]
            key = (int(eu), int(ev))
            extra_pair[key] = extra_pair.get(key, 0.0) + params.beta * params.J_edges[idx]
        else:
            extra_site[int(idx)] = extra_site.get(int(idx), 0.0) + params.beta * abs(params.h_sites[idx])
    rhs = _spin_ratio(params, None, extra_pair=extra_pair, extra_site=extra_site)
    return {"lhs": lhs, "rhs": rhs, "gap": abs(lhs - rhs)}


# ---------------------------------------------------------------------------
# stochastic domination


def rc_edge_law(params: ModelParams, bc: BoundaryCondition | None = None) -> np.ndarray:
    """Exact marginal law of the internal edge configuration, indexed by
    bitmask (edge i -> bit i)."""
    n_e = len(params.region.edges)
    if n_e > 4:
        raise ValueError("edge law limited to 4 internal edges")
    law = np.empty(1 << n_e)
    for mask in range(1 << n_e):
        want = np.array([(mask >> i) & 1 for i in range(n_e)], dtype=np.uint8)
        law[mask] = exact_rc_probability(
            params, lambda cfg, w=want: bool(np.array_equal(cfg.omega, w)), bc)
    return law


def sprinkled_law(law: np.ndarray, eps: float) -> np.ndarray:
    """Law of omega union gamma for gamma i.i.d. Bernoulli(eps) per edge."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    m = len(law)
    n_e = m.bit_length() - 1
    if 1 << n_e != m:
        raise ValueError("law length must be a power of two")
    out = np.zeros(m)
    for w in range(m):
        free = [i for i in range(n_e) if not (w >> i) & 1]
        for extra in range(1 << len(free)):
            target = w
            p = law[w]
            for j, i in enumerate(free):
                if (extra >> j) & 1:
                    target |= 1 << i
                    p *= eps
                else:
                    p *= 1.0 - eps
            out[target] += p
    return out


def _up_sets(n_configs: int):
    """All up-closed subsets of {0,1}^E, encoded as bitmasks over configs."""
    n_e = n_configs.bit_length() - 1
    succ = []
    for c in range(n_configs):
        succ.append([c | (1 << j) for j in range(n_e) if not (c >> j) & 1])
    for s in range(1 << n_configs):
        ok = True
        for c in range(n_configs):
            if (s >> c) & 1:
                for d in succ[c]:
                    if not (s >> d) & 1:
                        ok = False
                        break
                if not ok:
                    break
        if ok:
            yield s
    # the empty set and the full set are included; both are trivially up-closed


def stochastic_domination_check(law_hi: np.ndarray, law_lo: np.ndarray,
                                tol: float = 1e-8) -> tuple[bool, dict | None]:
    """True iff law_hi stochastically dominates law_lo on {0,1}^E, |E| <= 4,
    by exhaustive comparison over every up-set. On failure the witness dict
    holds the violating up-set (as config indices) and the mass gap.

    ``tol`` absorbs float noise in the input laws (quadrature-built vectors
    carry ~1e-9 normalisation error, which would otherwise show up as a
    spurious violation on near-full up-sets); pass 0 for a strict check on
    exact vectors."""
    law_hi = np.asarray(law_hi, dtype=float)
    law_lo = np.asarray(law_lo, dtype=float)
    if law_hi.shape != law_lo.shape:
        raise ValueError("laws must share a configuration space")
    m = len(law_hi)
    n_e = m.bit_length() - 1
    if 1 << n_e != m or n_e > 4:
        raise ValueError("laws must live on {0,1}^E with |E| <= 4")
    for law in (law_hi, law_lo):
        if np.any(law < -1e-12) or abs(law.sum() - 1.0) > 1e-8:
            raise ValueError("inputs must be probability vectors")

    worst = None
    for s in _up_sets(m):
        members = [c for c in range(m) if (s >> c) & 1]
        gap = law_hi[members].sum() - law_lo[members].sum()
        if worst is None or gap < worst[0]:
            worst = (gap, members)
    if worst[0] < -tol:
        return False, {"up_set": tuple(worst[1]), "gap": float(worst[0])}
    return True, None
