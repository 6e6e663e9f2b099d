"""The random-cluster representation of the phi^4 model.

A configuration is a pair (omega, a): occupation bits on the closed edge set
(internal edges, edges to the exterior boundary, ghost edges) together with a
nonnegative absolute-value field. Closed edges carry weight e^{-beta a_x a_y},
open ones 2 sinh(beta a_x a_y), and every configuration picks up a factor
2^{k(omega)} where k counts clusters after the boundary-condition wiring.

The Edwards-Sokal maps couple this to the spin model: conditionally on spins,
same-sign edges open with probability 1 - e^{-2 beta a_x a_y}; conditionally
on (omega, a), clusters get independent uniform signs except the ghost cluster,
which is +1. Composing back-map, heat-bath sweep and forward map gives a
Markov chain on (omega, a) with the random-cluster law as stationary measure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .lattice import GhostGraph, Region, boundary_magnitude, build_region
from .singlesite import sample_tilted_batch
from .spin import ModelParams, SpinConfig, heatbath_sweep

__all__ = [
    "BoundaryCondition", "RCState", "free_bc", "wired_plus_bc",
    "edge_prob", "ghost_prob", "sprinkle_prob", "cluster_labels",
    "es_spin_to_rc", "es_rc_to_spin", "rc_sweep", "bernoulli_sprinkle",
    "initial_state", "rc_state_from_bytes",
]


# ---------------------------------------------------------------------------
# edge opening probabilities


def edge_prob(beta, a_x, a_y):
    """Opening probability 1 - e^{-2 beta a_x a_y} of an internal edge."""
    return -np.expm1(-2.0 * beta * np.asarray(a_x) * np.asarray(a_y))


def ghost_prob(beta, h_x, a_x):
    """Opening probability 1 - e^{-2 beta h_x a_x} of a ghost edge."""
    return -np.expm1(-2.0 * beta * np.asarray(h_x) * np.asarray(a_x))


def sprinkle_prob(beta, a_x, a_y):
    """Sprinkling rate (1 - e^{-2 b aa}) / (1 + e^{-2 b aa}) = tanh(b aa).

    Always <= edge_prob(beta, a_x, a_y); used with beta = beta - beta' to
    dominate the effect of raising the inverse temperature.
    """
    return np.tanh(beta * np.asarray(a_x) * np.asarray(a_y))


# ---------------------------------------------------------------------------
# boundary conditions


@dataclass(eq=False)
class BoundaryCondition:
    """Wiring partition of the exterior boundary plus boundary values.

    ``classes`` partitions the exterior indices 0..n_ext-1; vertices in a
    common class are identified for cluster counting. ``b`` pins the
    absolute-value field on the exterior.
    """

    classes: tuple[tuple[int, ...], ...]
    b: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        self.classes = tuple(tuple(int(i) for i in c) for c in self.classes)
        flat = sorted(i for c in self.classes for i in c)
        if flat != list(range(len(self.b))):
            raise ValueError("classes must partition the exterior indices exactly")
        if np.any(self.b < 0):
            raise ValueError("boundary values must be >= 0")

    @property
    def is_free(self) -> bool:
        return all(len(c) == 1 for c in self.classes) and not np.any(self.b > 0)


def free_bc(region: Region) -> BoundaryCondition:
    """Singleton wiring, b = 0."""
    classes = tuple((i,) for i in range(region.n_ext))
    return BoundaryCondition(classes, np.zeros(region.n_ext), name="free")


def wired_plus_bc(region: Region, C0: float = 1.0) -> BoundaryCondition:
    """All exterior vertices in one class, b = C0 (1 v log|boundary|)^{1/4}."""
    if region.n_ext == 0:
        raise ValueError("region has no exterior boundary")
    classes = (tuple(range(region.n_ext)),)
    b = np.full(region.n_ext, boundary_magnitude(region, C0))
    return BoundaryCondition(classes, b, name="wired-plus")


# ---------------------------------------------------------------------------
# configurations


@dataclass(eq=False)
class RCState:
    """Occupation bits on the closed edge set plus the absolute-value field.

    ``omega``/``omega_boundary``/``omega_ghost`` cover internal edges, edges
    to the exterior, and ghost edges (one bit per interior vertex; forced 0
    where h = 0). ``a`` lives on the closed vertex set, interior first.
    """

    graph: GhostGraph
    omega: np.ndarray
    omega_boundary: np.ndarray
    omega_ghost: np.ndarray
    a: np.ndarray
    phi: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        region = self.graph.region
        self.omega = np.asarray(self.omega, dtype=np.uint8)
        self.omega_boundary = np.asarray(self.omega_boundary, dtype=np.uint8)
        self.omega_ghost = np.asarray(self.omega_ghost, dtype=np.uint8)
        self.a = np.asarray(self.a, dtype=float)
        if self.omega.shape != (len(region.edges),):
            raise ValueError("omega must carry one bit per internal edge")
        if self.omega_boundary.shape != (len(region.boundary_edges),):
            raise ValueError("omega_boundary must carry one bit per boundary edge")
        if self.omega_ghost.shape != (region.n_vertices,):
            raise ValueError("omega_ghost must carry one bit per interior vertex")
        if self.a.shape != (region.n_closed,):
            raise ValueError("a must carry one value per closed vertex")
        if np.any(self.a < 0):
            raise ValueError("absolute-value field must be >= 0")
        for bits in (self.omega, self.omega_boundary, self.omega_ghost):
            if bits.size and bits.max() > 1:
                raise ValueError("occupation entries must be 0/1 bits")
        if np.any(self.omega_ghost[self.graph.h == 0.0] == 1):
            raise ValueError("ghost edges exist only where the field is nonzero")

    @property
    def region(self) -> Region:
        return self.graph.region

    @property
    def a_interior(self) -> np.ndarray:
        return self.a[: self.region.n_vertices]

    def copy(self) -> "RCState":
        return RCState(self.graph, self.omega.copy(), self.omega_boundary.copy(),
                       self.omega_ghost.copy(), self.a.copy(),
                       None if self.phi is None else self.phi.copy())

    def to_bytes(self) -> bytes:
        """Snapshot: JSON header, bit-packed omega, then a as binary doubles."""
        header = {
            "region": self.region.spec(),
            "two_ghost": bool(self.graph.two_ghost),
            "h": self.graph.h.tolist(),
            "counts": [len(self.omega), len(self.omega_boundary), len(self.omega_ghost)],
        }
        blob = json.dumps(header, sort_keys=True).encode()
        bits = np.concatenate([self.omega, self.omega_boundary, self.omega_ghost])
        packed = np.packbits(bits)
        return (len(blob).to_bytes(4, "little") + blob + packed.tobytes()
                + self.a.astype("<f8").tobytes())


def rc_state_from_bytes(buf: bytes) -> RCState:
    """Inverse of RCState.to_bytes."""
    hlen = int.from_bytes(buf[:4], "little")
    header = json.loads(buf[4 : 4 + hlen].decode())
    spec = dict(header["region"])
    region = build_region(spec.pop("kind"), spec.pop("d"), **spec)
    graph = GhostGraph(region, np.asarray(header["h"], dtype=float),
                       two_ghost=header["two_ghost"])
    n_omega, n_bnd, n_gh = header["counts"]
    total = n_omega + n_bnd + n_gh
    off = 4 + hlen
    packed = np.frombuffer(buf[off : off + (total + 7) // 8], dtype=np.uint8)
    bits = np.unpackbits(packed, count=total)
    a = np.frombuffer(buf[off + (total + 7) // 8 :], dtype="<f8")
    return RCState(graph, bits[:n_omega], bits[n_omega : n_omega + n_bnd],
                   bits[n_omega + n_bnd :], a.copy())


# ---------------------------------------------------------------------------
# cluster counting


def _as_graph(graph_or_region) -> GhostGraph:
    if isinstance(graph_or_region, GhostGraph):
        return graph_or_region
    region = graph_or_region
    return GhostGraph(region, np.zeros(region.n_vertices))


def _components_small(m: int, pairs: np.ndarray) -> tuple[int, np.ndarray]:
    """Union-find with path halving; beats sparse-matrix setup on small graphs."""
    parent = list(range(m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for u, v in pairs.tolist():
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)
    comp = np.array([find(i) for i in range(m)])
    uniq, comp = np.unique(comp, return_inverse=True)
    return len(uniq), comp


def cluster_labels(omega, graph_or_region=None, bc: BoundaryCondition | None = None,
                   *, omega_boundary=None, omega_ghost=None,
                   identify_ghosts: bool = False) -> tuple[np.ndarray, int]:
    """Deterministic cluster labels and the wired cluster count k.

    Vertices are the closed set plus the ghost(s): indices 0..n-1 interior,
    n..n+n_ext-1 exterior, then g (or g+, g-). The ghost is always a vertex,
    even with no incident open edge. Each cluster is labelled by the index of
    its lexicographically smallest member (ghosts sort last). Vertices in a
    common wiring class of ``bc`` are identified before counting; with
    ``identify_ghosts`` the two ghosts of a two-ghost graph are merged too.
    """
    if isinstance(omega, RCState):
        state = omega
        graph = state.graph
        omega, omega_boundary, omega_ghost = state.omega, state.omega_boundary, state.omega_ghost
    else:
        graph = _as_graph(graph_or_region)
        omega = np.asarray(omega, dtype=np.uint8)
    region = graph.region
    n, n_ext = region.n_vertices, region.n_ext
    if omega.shape != (len(region.edges),):
        raise ValueError("omega must be indexed by the internal edge set")
    if omega_boundary is None:
        omega_boundary = np.zeros(len(region.boundary_edges), dtype=np.uint8)
    if omega_ghost is None:
        omega_ghost = np.zeros(n, dtype=np.uint8)
    omega_boundary = np.asarray(omega_boundary, dtype=np.uint8)
    omega_ghost = np.asarray(omega_ghost, dtype=np.uint8)
    if bc is None:
        bc = free_bc(region)
    if len(bc.b) != n_ext:
        raise ValueError("boundary condition does not match the region")

    n_ghost = graph.n_ghosts
    m = n + n_ext + n_ghost
    g_plus = n + n_ext

    rows = [region.edges[omega == 1]]
    rows.append(region.boundary_edges[omega_boundary == 1])
    open_ghost = np.nonzero(omega_ghost == 1)[0]
    if len(open_ghost):
        if graph.two_ghost:
            target = np.where(graph.h[open_ghost] > 0, g_plus, g_plus + 1)
        else:
            target = np.full(len(open_ghost), g_plus)
        rows.append(np.stack([open_ghost, target], axis=1))
    for cls in bc.classes:
        if len(cls) > 1:
            head = np.full(len(cls) - 1, n + cls[0])
            rows.append(np.stack([head, n + np.asarray(cls[1:])], axis=1))
    if identify_ghosts and graph.two_ghost:
        rows.append(np.array([[g_plus, g_plus + 1]]))

    pairs = np.concatenate([r for r in rows if len(r)], axis=0) if any(len(r) for r in rows) else np.zeros((0, 2), dtype=np.int64)
    if m < 512:
        k, comp = _components_small(m, pairs)
    else:
        adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m, m))
        k, comp = connected_components(adj, directed=False)

    # relabel each component by its lex-smallest member; ghosts rank last
    ranks = np.concatenate([region.closed_lex_rank,
                            region.n_closed + np.arange(n_ghost)])
    order = np.argsort(ranks, kind="stable")
    uniq, first = np.unique(comp[order], return_index=True)
    rep = np.empty(k, dtype=np.int64)
    rep[uniq] = order[first]
    return rep[comp], int(k)


# ---------------------------------------------------------------------------
# Edwards-Sokal maps and the composite chain


def _require_rc_compatible(params: ModelParams, graph: GhostGraph | None = None):
    if not (params.uniform_J and (len(params.J_edges) == 0 or params.J_edges[0] == 1.0)):
        raise ValueError("the random-cluster representation requires unit couplings J = 1")
    if graph is not None:
        if params.region != graph.region or not np.array_equal(params.h_sites, graph.h):
            raise ValueError("params and state disagree on region or field")


def es_spin_to_rc(phi: SpinConfig, params: ModelParams, rng,
                  bc: BoundaryCondition | None = None) -> RCState:
    """Forward Edwards-Sokal map: spins -> (omega, a).

    a = |phi|; edges between opposite signs close; same-sign internal edges
    open with edge_prob, ghost edges at +1 sites with ghost_prob. Only the
    free boundary condition (b = 0, so boundary edges closed) is supported
    here — wired-type conditions enter through the field encoding instead.
    """
    _require_rc_compatible(params)
    region = params.region
    if np.any(params.h_sites < 0):
        raise ValueError("the one-ghost representation needs h >= 0")
    if bc is not None and not bc.is_free:
        raise ValueError("only the free boundary condition is supported in the "
                         "sampling path; encode wired-plus as a magnetic field")
    v = phi.values
    a = np.abs(v)
    sgn = np.where(v < 0, -1, 1)

    e = region.edges
    same = sgn[e[:, 0]] == sgn[e[:, 1]]
    p = edge_prob(params.beta, a[e[:, 0]], a[e[:, 1]])
    omega = (same & (rng.random(len(e)) < p)).astype(np.uint8)

    plus = sgn > 0
    pg = ghost_prob(params.beta, params.h_sites, a)
    omega_ghost = (plus & (rng.random(region.n_vertices) < pg)).astype(np.uint8)

    a_full = np.concatenate([a, np.zeros(region.n_ext)])
    graph = GhostGraph(region, params.h_sites.copy())
    return RCState(graph, omega, np.zeros(len(region.boundary_edges), dtype=np.uint8),
                   omega_ghost, a_full)


def es_rc_to_spin(state: RCState, rng) -> SpinConfig:
    """Backward Edwards-Sokal map: (omega, a) -> spins.

    Each cluster gets an independent uniform sign, except the ghost cluster
    which is +1 with probability one; phi = sign * a.
    """
    graph = state.graph
    if graph.two_ghost:
        raise ValueError("sample two-ghost graphs through graph.identified()")
    region = graph.region
    n = region.n_vertices
    labels, _ = cluster_labels(state)
    uniq, inv = np.unique(labels[: n], return_inverse=True)
    signs = rng.choice(np.array([-1.0, 1.0]), size=len(uniq))
    signs[uniq == labels[region.n_closed]] = 1.0
    return SpinConfig(region, signs[inv] * state.a_interior)


def rc_sweep(state: RCState, params: ModelParams, rng,
             bc: BoundaryCondition | None = None,
             schedule: str = "checkerboard") -> RCState:
    """One step of the composite chain: ES back-map, heat-bath sweep over the
    spins, ES forward map. Preserves the random-cluster law; the spin snapshot
    taken between the maps is cached on the returned state as ``phi``."""
    _require_rc_compatible(params, state.graph)
    if bc is not None and not bc.is_free:
        raise ValueError("only the free boundary condition is supported in the "
                         "sampling path; encode wired-plus as a magnetic field")
    phi = es_rc_to_spin(state, rng)
    phi = heatbath_sweep(phi, params, rng, schedule=schedule)
    out = es_spin_to_rc(phi, params, rng, bc=bc)
    out.phi = phi.values
    return out


def initial_state(params: ModelParams, rng) -> RCState:
    """Exact sample at beta = 0: a i.i.d. |rho_{g,a}|, all edges closed."""
    _require_rc_compatible(params)
    region = params.region
    n = region.n_vertices
    a = np.abs(sample_tilted_batch(params.single_site, np.zeros(n), rng))
    graph = GhostGraph(region, params.h_sites.copy())
    return RCState(graph, np.zeros(len(region.edges), dtype=np.uint8),
                   np.zeros(len(region.boundary_edges), dtype=np.uint8),
                   np.zeros(n, dtype=np.uint8),
                   np.concatenate([a, np.zeros(region.n_ext)]))


# ---------------------------------------------------------------------------
# sprinkling


def bernoulli_sprinkle(omega: np.ndarray, rate, rng) -> np.ndarray:
    """Union of omega with an independent Bernoulli configuration on the
    internal edges: closed edges open with their rate, open edges stay open.
    ``rate`` is a constant or one rate per edge (e.g. sprinkle_prob values).
    """
    omega = np.asarray(omega, dtype=np.uint8)
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0) or np.any(rate > 1):
        raise ValueError("sprinkling rates must lie in [0, 1]")
    gamma = rng.random(omega.shape) < rate
    return np.where(gamma, np.uint8(1), omega)
