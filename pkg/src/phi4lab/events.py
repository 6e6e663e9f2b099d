"""Geometric event detectors on percolation configurations.

Everything here is deterministic given the configuration: annulus-crossing
events, the two-scale local-uniqueness event, its sprinkled variant, ghost
disconnection on two-ghost graphs, and cluster statistics for coarse-graining.
The one sampling routine (the Bernoulli site-percolation surface check) takes
an explicit generator.

Conventions: "crossing an annulus" means a cluster of the configuration
restricted to the closed annulus that touches both the inner face (annulus
vertices with a nearest neighbour inside the hole) and the outer face
(vertices on the outer boundary). This makes every detector monotone in the
edge configuration. Connectivity is nearest-neighbour throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .lattice import GhostGraph, Region
from .randomcluster import RCState, _components_small, cluster_labels

__all__ = [
    "ClusterStats", "crossing", "local_uniqueness", "unique_sprinkled",
    "disconnection", "cluster_stats", "site_percolation_surface_event",
]


# ---------------------------------------------------------------------------
# masked connectivity helpers


def _components(m: int, pairs: np.ndarray) -> np.ndarray:
    if m < 512:
        return _components_small(m, pairs)[1]
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m, m))
    return connected_components(adj, directed=False)[1]


def _masked_components(omega: np.ndarray, region: Region, vmask: np.ndarray) -> np.ndarray:
    """Component labels using only open edges with both endpoints in vmask.

    Vertices outside the mask come out as singletons; callers only ever look
    at masked vertices.
    """
    e = region.edges
    keep = (omega == 1) & vmask[e[:, 0]] & vmask[e[:, 1]]
    return _components(region.n_vertices, e[keep])


def _chebyshev(region: Region) -> np.ndarray:
    return np.abs(region.vertices).max(axis=1)


def _require_contains_box(region: Region, r: int):
    corners = np.array(np.meshgrid(*[(-r, r)] * region.d)).T.reshape(-1, region.d)
    if not np.all(region.contains(corners)):
        raise ValueError(f"region does not contain the centred box of radius {r}")


def _annulus_crossing(omega, region, chi, r_in: int, r_out: int):
    """Labels of the annulus restriction plus the labels that cross it."""
    in_ann = (chi > r_in) & (chi <= r_out)
    comp = _masked_components(omega, region, in_ann)
    # inner face: annulus vertices with a nearest neighbour inside the hole
    chi_pad = np.concatenate([chi, [np.iinfo(np.int64).max]])
    inner = in_ann & (chi_pad[region.nbr] <= r_in).any(axis=1)
    outer = chi == r_out
    cross = np.intersect1d(comp[inner], comp[outer])
    return comp, in_ann, cross


def _piece_representatives(comp, in_mask, wanted_labels):
    """One member vertex for each wanted component label inside the mask."""
    idx = np.nonzero(in_mask)[0]
    uniq, first = np.unique(comp[idx], return_index=True)
    rep = dict(zip(uniq.tolist(), idx[first].tolist()))
    return [rep[l] for l in wanted_labels.tolist()]


# ---------------------------------------------------------------------------
# detectors


def crossing(labels, region: Region, axis: int = 0) -> bool:
    """True iff some cluster touches both faces of the box along ``axis``.

    ``labels`` are cluster labels for the box region (extra entries for
    exterior/ghost nodes are ignored); faces are the slices where the axis
    coordinate is minimal/maximal.
    """
    if not (0 <= axis < region.d):
        raise ValueError(f"axis {axis} out of range for d={region.d}")
    labels = np.asarray(labels)[: region.n_vertices]
    coords = region.vertices[:, axis]
    left = labels[coords == coords.min()]
    right = labels[coords == coords.max()]
    return len(np.intersect1d(left, right)) > 0


def local_uniqueness(omega, region: Region, L: int) -> bool:
    """Two-scale uniqueness event on the annulus between radii L and 8L.

    (a) some cluster of omega restricted to the annulus crosses it, and
    (b) every cluster of the restriction to the middle annulus (radii 2L, 4L)
    that crosses the middle annulus lies in one single cluster of the big
    annulus.  Nondecreasing in omega.
    """
    L = int(L)
    if L < 1:
        raise ValueError(f"scale must be >= 1, got {L}")
    _require_contains_box(region, 8 * L)
    omega = np.asarray(omega, dtype=np.uint8)
    chi = _chebyshev(region)

    big_comp, _, big_cross = _annulus_crossing(omega, region, chi, L, 8 * L)
    if len(big_cross) == 0:
        return False

    mid_comp, in_mid, mid_cross = _annulus_crossing(omega, region, chi, 2 * L, 4 * L)
    if len(mid_cross) == 0:
        return True
    reps = _piece_representatives(mid_comp, in_mid, mid_cross)
    return len(np.unique(big_comp[reps])) == 1


def unique_sprinkled(omega, gamma, region: Region, L: int) -> bool:
    """Uniqueness event for a configuration with an independent sprinkle.

    True iff some cluster of omega restricted to the box of radius L crosses
    the annulus between radii L/8 and L, and all clusters of that restriction
    crossing the middle annulus (radii L/4, L/2) are connected to each other
    in (omega | gamma) restricted to the box of radius L/2.  Scales L/8, L/4,
    L/2 must be integers, so 8 | L.
    """
    L = int(L)
    if L % 8 != 0 or L <= 0:
        raise ValueError(f"scale must be a positive multiple of 8, got {L}")
    _require_contains_box(region, L)
    omega = np.asarray(omega, dtype=np.uint8)
    gamma = np.asarray(gamma, dtype=np.uint8)
    chi = _chebyshev(region)

    _, _, outer_cross = _annulus_crossing(omega, region, chi, L // 8, L)
    if len(outer_cross) == 0:
        return False

    mid_comp, in_mid, mid_cross = _annulus_crossing(omega, region, chi, L // 4, L // 2)
    if len(mid_cross) <= 1:
        return True

    # group the crossing middle pieces by their cluster in the box of radius L
    box_comp = _masked_components(omega, region, chi <= L)
    reps = _piece_representatives(mid_comp, in_mid, mid_cross)
    box_labels = np.unique(box_comp[reps])
    if len(box_labels) <= 1:
        return True

    in_win = chi <= L // 2
    union_comp = _masked_components(omega | gamma, region, in_win)
    label_sets = [frozenset(union_comp[in_win & (box_comp == b)].tolist())
                  for b in box_labels]
    return all(s & t for s, t in combinations(label_sets, 2))


def disconnection(omega, graph: GhostGraph | None = None, *,
                  omega_boundary=None, omega_ghost=None) -> bool:
    """True iff the two ghosts of a two-ghost graph are in distinct clusters.

    Accepts either raw bit arrays or an RCState; when a chain was run on the
    ghost-identified graph, pass its bits together with the two-ghost graph
    (the ghost edges split by the sign of the attachment field).
    Nonincreasing in omega.
    """
    if isinstance(omega, RCState):
        state = omega
        graph = graph if graph is not None else state.graph
        omega, omega_boundary, omega_ghost = (
            state.omega, state.omega_boundary, state.omega_ghost)
    if graph is None or not isinstance(graph, GhostGraph) or not graph.two_ghost:
        raise ValueError("disconnection needs a two-ghost graph")
    labels, _ = cluster_labels(omega, graph, omega_boundary=omega_boundary,
                               omega_ghost=omega_ghost, identify_ghosts=False)
    g_plus = graph.region.n_closed
    return bool(labels[g_plus] != labels[g_plus + 1])


# ---------------------------------------------------------------------------
# cluster statistics


@dataclass(frozen=True)
class ClusterStats:
    """Interior cluster sizes and the derived coarse-graining quantities.

    ``sizes`` is descending; ``cmax_label`` identifies the largest cluster,
    ties broken towards the cluster containing the smallest vertex in
    iteration order. ``restricted_sum`` adds up |C| over clusters other than
    the largest with |C| >= N; ``large_site`` flags vertices whose cluster
    has size >= K.
    """

    sizes: np.ndarray
    cmax_label: int
    cmax_size: int
    second_size: int
    restricted_sum: int
    large_site: np.ndarray


def cluster_stats(labels, n_interior, N: int, K: int) -> ClusterStats:
    """Statistics of the partition restricted to the interior vertices.

    ``labels`` may cover interior + exterior + ghost nodes; only the first
    ``n_interior`` entries contribute to sizes (pass the region to take its
    vertex count).
    """
    n = n_interior.n_vertices if isinstance(n_interior, Region) else int(n_interior)
    lab = np.asarray(labels)[:n]
    uniq, first, inv, counts = np.unique(
        lab, return_index=True, return_inverse=True, return_counts=True)
    mx = int(counts.max())
    cand = np.nonzero(counts == mx)[0]
    winner = cand[np.argmin(first[cand])]

    order = np.argsort(counts)[::-1]
    sizes = counts[order]
    rest = counts[(np.arange(len(uniq)) != winner) & (counts >= N)]
    return ClusterStats(
        sizes=sizes,
        cmax_label=int(uniq[winner]),
        cmax_size=mx,
        second_size=int(sizes[1]) if len(sizes) > 1 else 0,
        restricted_sum=int(rest.sum()),
        large_site=(counts[inv] >= K).astype(np.uint8),
    )


# ---------------------------------------------------------------------------
# Bernoulli site percolation surface check


def _label_sites(mask: np.ndarray, star: bool = False):
    d = mask.ndim
    structure = ndimage.generate_binary_structure(d, d if star else 1)
    return ndimage.label(mask, structure=structure)


def site_percolation_surface_event(p: float, m: int, M: int, eps: float,
                                   rng, d: int = 2) -> bool:
    """Sample i.i.d. site occupation at density p on the box of radius m and
    test: some open cluster C covers >= 3/4 of the box, and the components of
    the complement of C with size >= M together cover <= eps * volume."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"density must be in [0, 1], got {p}")
    if m < 1 or M < 1:
        raise ValueError("box radius and size threshold must be >= 1")
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    shape = (2 * m + 1,) * d
    vol = (2 * m + 1) ** d
    occupied = rng.random(shape) < p

    lab, n_lab = _label_sites(occupied)
    if n_lab == 0:
        return False
    counts = np.bincount(lab.ravel())[1:]
    big = int(np.argmax(counts)) + 1
    if counts[big - 1] < 0.75 * vol:
        return False

    comp_lab, n_comp = _label_sites(lab != big)
    if n_comp == 0:
        return True
    comp_counts = np.bincount(comp_lab.ravel())[1:]
    return bool(comp_counts[comp_counts >= M].sum() <= eps * vol)
