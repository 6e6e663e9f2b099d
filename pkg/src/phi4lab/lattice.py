"""Finite lattice geometry: regions of Z^d, boundary sets, ghost graphs,
and boundary-field constructors.

Every supported shape is a product of integer intervals, so membership tests
and vertex indexing are closed-form (per-axis bounds and mixed-radix strides).
Vertex order is lexicographic on coordinates throughout; this fixes all
downstream tie-breaking (cluster labels, sweep schedules, CSV column order).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SHAPES = ("box", "rectangle", "strip-box", "slab-box", "half-space-box", "grid")


def _interval_bounds(shape: str, d: int, params: dict) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis inclusive bounds (lo, hi) for a shape spec."""
    if shape == "box":
        n = int(params["n"])
        if n < 0:
            raise ValueError(f"box radius must be >= 0, got {n}")
        center = np.asarray(params.get("center", np.zeros(d, dtype=np.int64)), dtype=np.int64)
        if center.shape != (d,):
            raise ValueError(f"center must have {d} coordinates")
        return center - n, center + n
    if shape in ("rectangle", "strip-box"):
        L, M = int(params["L"]), int(params["M"])
        if L < 0 or M < 0:
            raise ValueError("rectangle sizes must be >= 0")
        lo = np.full(d, -L, dtype=np.int64)
        hi = np.full(d, L, dtype=np.int64)
        lo[-1], hi[-1] = -M, M
        return lo, hi
    if shape == "slab-box":
        if d < 2:
            raise ValueError("slab-box needs d >= 2")
        L, N = int(params["L"]), int(params["N"])
        if L < 0 or N < 0:
            raise ValueError("slab sizes must be >= 0")
        lo = np.full(d, -L, dtype=np.int64)
        hi = np.full(d, L, dtype=np.int64)
        lo[-2:], hi[-2:] = -N, N
        return lo, hi
    if shape == "half-space-box":
        L = int(params["L"])
        if L < 0:
            raise ValueError("half-space box radius must be >= 0")
        center = np.zeros(d, dtype=np.int64)
        center[-1] = L
        return center - L, center + L
    if shape == "grid":
        sides = np.asarray(params["sides"], dtype=np.int64)
        if sides.shape != (d,) or np.any(sides < 1):
            raise ValueError("grid sides must be d positive integers")
        return np.zeros(d, dtype=np.int64), sides - 1
    raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")


@dataclass(eq=False)
class Region:
    """A finite box-like subgraph of Z^d with its boundary structure.

    Vertices are split into the interior set (indices 0..n-1, lexicographic)
    and the exterior boundary (indices n..n+n_ext-1 in the "closed" index
    space, also lexicographic). ``edges`` holds internal edges as interior
    index pairs; ``boundary_edges`` holds (interior index, closed index of the
    exterior endpoint).
    """

    d: int
    shape: str
    params: dict
    lo: np.ndarray                 # (d,) inclusive lower bounds
    hi: np.ndarray                 # (d,) inclusive upper bounds
    vertices: np.ndarray           # (n, d) interior coordinates, lex order
    ext_vertices: np.ndarray       # (n_ext, d) exterior boundary, lex order
    edges: np.ndarray              # (n_e, 2) interior index pairs, E(Lambda)
    boundary_edges: np.ndarray     # (n_be, 2) [interior, closed exterior index]
    nbr: np.ndarray                # (n, 2d) interior neighbour indices, pad = n
    ext_degree: np.ndarray         # (n,) number of exterior neighbours
    inner_boundary: np.ndarray     # interior indices with ext_degree > 0
    closed_lex_rank: np.ndarray    # (n+n_ext,) rank in coordinate lex order
    parity: np.ndarray             # (n,) checkerboard colour = coord sum mod 2
    _strides: np.ndarray = field(repr=False, default=None)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_ext(self) -> int:
        return len(self.ext_vertices)

    @property
    def n_closed(self) -> int:
        return len(self.vertices) + len(self.ext_vertices)

    @property
    def closed_vertices(self) -> np.ndarray:
        """Coordinates of the closed vertex set (interior then exterior)."""
        return np.concatenate([self.vertices, self.ext_vertices], axis=0)

    @property
    def internal_degree(self) -> np.ndarray:
        return (self.nbr < self.n_vertices).sum(axis=1)

    def contains(self, coords: np.ndarray) -> np.ndarray:
        """Vectorised membership test for an (..., d) coordinate array."""
        coords = np.asarray(coords)
        return np.all((coords >= self.lo) & (coords <= self.hi), axis=-1)

    def index_of(self, coords: np.ndarray) -> np.ndarray:
        """Interior index of each (..., d) coordinate (must be members)."""
        coords = np.asarray(coords, dtype=np.int64)
        return (coords - self.lo) @ self._strides

    def spec(self) -> dict:
        """Serialisable shape spec (round-trips through build_region)."""
        out = {"kind": self.shape, "d": self.d}
        out.update({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()})
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, Region):
            return NotImplemented
        return (
            self.d == other.d
            and self.shape == other.shape
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.ext_vertices, other.ext_vertices)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.boundary_edges, other.boundary_edges)
        )


def build_region(shape: str, d: int, **params) -> Region:
    """Construct a Region for one of the supported shapes.

    Shapes: box (radius n, optional center), rectangle/strip-box (L, M),
    slab-box (L, N), half-space-box (L), grid (explicit sides, corner at 0).
    Deterministic: vertex and edge iteration order is lexicographic.
    """
    if d < 2:
        raise ValueError(f"dimension must be >= 2, got {d}")
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    lo, hi = _interval_bounds(shape, d, params)
    sides = (hi - lo + 1).astype(np.int64)
    n = int(np.prod(sides))

    # meshgrid with indexing='ij' enumerates coordinates in lexicographic order
    axes = [np.arange(lo[k], hi[k] + 1, dtype=np.int64) for k in range(d)]
    vertices = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(n, d)

    strides = np.ones(d, dtype=np.int64)
    for k in range(d - 2, -1, -1):
        strides[k] = strides[k + 1] * sides[k + 1]

    def member(c):
        return np.all((c >= lo) & (c <= hi), axis=-1)

    def index(c):
        return (c - lo) @ strides

    # internal edges: +e_k neighbours only (each edge once), order (vertex, axis)
    eye = np.eye(d, dtype=np.int64)
    int_edges = []
    for k in range(d):
        nb = vertices + eye[k]
        ok = member(nb)
        src = np.nonzero(ok)[0]
        int_edges.append(np.stack([src, index(nb[ok])], axis=1))
    edges = np.concatenate(int_edges, axis=0)
    # re-sort edges to (tail lex, axis) order: rows are (src, dst) generated
    # per-axis; lexsort by (src, dst) restores the per-vertex direction order
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges = edges[order]

    # exterior neighbours in direction order +e0, -e0, +e1, -e1, ...
    dirs = []
    for k in range(d):
        dirs.append(eye[k])
        dirs.append(-eye[k])
    dirs = np.stack(dirs, axis=0)  # (2d, d)

    all_nb = vertices[:, None, :] + dirs[None, :, :]      # (n, 2d, d)
    inside = member(all_nb)                                # (n, 2d)
    ext_coords = all_nb[~inside]
    if len(ext_coords):
        ext_vertices, ext_inv = np.unique(ext_coords, axis=0, return_inverse=True)
    else:
        ext_vertices = np.zeros((0, d), dtype=np.int64)
        ext_inv = np.zeros(0, dtype=np.int64)
    src_idx = np.broadcast_to(np.arange(n)[:, None], (n, 2 * d))[~inside]
    boundary_edges = np.stack([src_idx, n + ext_inv], axis=1)

    nbr = np.full((n, 2 * d), n, dtype=np.int64)
    nb_idx = index(all_nb.reshape(-1, d)).reshape(n, 2 * d)
    nbr[inside] = nb_idx[inside]

    ext_degree = (~inside).sum(axis=1).astype(np.int64)
    inner_boundary = np.nonzero(ext_degree > 0)[0]

    closed = np.concatenate([vertices, ext_vertices], axis=0)
    lex_order = np.lexsort(closed.T[::-1])
    closed_lex_rank = np.empty(len(closed), dtype=np.int64)
    closed_lex_rank[lex_order] = np.arange(len(closed))

    parity = (vertices.sum(axis=1) % 2).astype(np.int64)

    kept = dict(params)
    return Region(
        d=d, shape=shape, params=kept, lo=lo, hi=hi,
        vertices=vertices, ext_vertices=ext_vertices,
        edges=edges, boundary_edges=boundary_edges,
        nbr=nbr, ext_degree=ext_degree, inner_boundary=inner_boundary,
        closed_lex_rank=closed_lex_rank, parity=parity, _strides=strides,
    )


def boundary_sets(region: Region):
    """(inner boundary, exterior boundary, closed vertex set, closed edge set).

    The closed edge set is returned as (internal edges, boundary edges) in the
    region's index conventions.
    """
    inner = region.vertices[region.inner_boundary]
    closed = region.closed_vertices
    return inner, region.ext_vertices, closed, (region.edges, region.boundary_edges)


def log_width(L: int) -> int:
    """Thickness rule for thick-plus / Dobrushin supports: max(1, ceil(ln L))."""
    if L < 1:
        raise ValueError(f"need L >= 1, got {L}")
    return max(1, math.ceil(math.log(L)))


def boundary_magnitude(region: Region, C0: float = 1.0) -> float:
    """The effectively-maximal boundary value C0 * (1 v log|Lambda|)^(1/4)."""
    return C0 * max(1.0, math.log(region.n_vertices)) ** 0.25


@dataclass(frozen=True)
class BoundaryField:
    """A per-vertex magnetic field realising a boundary-condition surrogate."""

    kind: str
    values: np.ndarray     # (n,) field h_x over interior vertices
    params: dict

    @property
    def support(self) -> np.ndarray:
        return np.nonzero(self.values != 0)[0]


def make_boundary_field(kind: str, region: Region, **params) -> BoundaryField:
    """Construct one of the named boundary fields on a region.

    kinds: zero | constant-on-set | plus-max | thick-plus | dobrushin-pm |
    dobrushin-pp | weak-plus.
    """
    n = region.n_vertices
    h = np.zeros(n)

    if kind == "zero":
        pass

    elif kind == "constant-on-set":
        value = float(params["value"])
        idx = np.asarray(params["indices"], dtype=np.int64)
        h[idx] = value

    elif kind == "plus-max":
        # field induced on the inner boundary by constant exterior spin M
        C0 = float(params.get("C0", 1.0))
        M = boundary_magnitude(region, C0)
        h = M * region.ext_degree.astype(float)

    elif kind == "thick-plus":
        if region.shape not in ("box", "half-space-box"):
            raise ValueError("thick-plus field is defined on a box")
        L = int(region.params["n"]) if region.shape == "box" else int(region.params["L"])
        w = int(params.get("width", log_width(L)))
        if w > L:
            raise ValueError(f"thick-plus width {w} exceeds box radius {L}")
        center = (region.lo + region.hi) // 2
        dist = np.abs(region.vertices - center).max(axis=1)
        h[dist > L - w] = 1.0

    elif kind in ("dobrushin-pm", "dobrushin-pp"):
        if region.shape not in ("rectangle", "strip-box"):
            raise ValueError("Dobrushin fields are defined on rectangles")
        L, M = int(region.params["L"]), int(region.params["M"])
        w = int(params.get("width", log_width(L)))
        if w > L:
            raise ValueError(f"Dobrushin width {w} exceeds rectangle half-width {L}")
        side = np.abs(region.vertices[:, :-1]).max(axis=1)
        thick = side >= L - w
        if kind == "dobrushin-pp":
            h[thick] = 1.0
        else:
            last = region.vertices[:, -1]
            h[thick & (last >= 1)] = 1.0
            h[thick & (last <= 0)] = -1.0

    elif kind == "weak-plus":
        if region.shape != "box":
            raise ValueError("weak-plus field is defined on a box")
        L = int(region.params["n"])
        gamma = float(params.get("gamma", 1.0))
        C0 = float(params.get("C0", 1.0))
        M = boundary_magnitude(region, C0)
        cap = gamma * L ** (-(region.d - 1)) * math.log(math.e + L)
        h = np.minimum(M * region.ext_degree.astype(float), cap)
        h[region.ext_degree == 0] = 0.0

    else:
        raise ValueError(f"unknown boundary field kind {kind!r}")

    return BoundaryField(kind=kind, values=h, params=dict(params))


@dataclass(eq=False)
class GhostGraph:
    """A region with magnetic field encoded as edges to ghost vertices.

    One-ghost: a single ghost g with edge set {xg : h_x != 0}. Two-ghost
    (Dobrushin geometry): g+ attached where h_x > 0 and g- where h_x < 0,
    with disjoint attachment sets; edge weights use |h_x|.
    """

    region: Region
    h: np.ndarray            # (n,) signed field
    two_ghost: bool = False

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        if self.h.shape != (self.region.n_vertices,):
            raise ValueError("field must assign one value per interior vertex")
        if not self.two_ghost and np.any(self.h < 0):
            raise ValueError("one-ghost graphs need h >= 0; use two_ghost for signed fields")

    @property
    def ghost_sites(self) -> np.ndarray:
        """Interior indices carrying a ghost edge."""
        return np.nonzero(self.h != 0)[0]

    @property
    def plus_sites(self) -> np.ndarray:
        return np.nonzero(self.h > 0)[0]

    @property
    def minus_sites(self) -> np.ndarray:
        return np.nonzero(self.h < 0)[0]

    @property
    def n_ghosts(self) -> int:
        return 2 if self.two_ghost else 1

    def identified(self) -> "GhostGraph":
        """The one-ghost graph obtained by identifying g- and g+ (field |h|)."""
        if not self.two_ghost:
            return self
        return GhostGraph(self.region, np.abs(self.h), two_ghost=False)


def two_ghost_rectangle(d: int, L: int, M: int, width: int | None = None) -> GhostGraph:
    """The Dobrushin two-ghost geometry on R(L, M): g+ on the top half of the
    thick boundary, g- on the bottom half, unit field magnitude."""
    region = build_region("rectangle", d, L=L, M=M)
    kwargs = {} if width is None else {"width": width}
    fld = make_boundary_field("dobrushin-pm", region, **kwargs)
    return GhostGraph(region, fld.values, two_ghost=True)
