import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phi4lab.lattice import (BoundaryField, build_region, boundary_magnitude,
                             boundary_sets, log_width, make_boundary_field,
                             two_ghost_rectangle)


def test_box_counts():
    r = build_region("box", 2, n=1)
    assert r.n_vertices == 9
    assert len(r.edges) == 12

    r0 = build_region("box", 2, n=0)
    assert r0.n_vertices == 1
    assert len(r0.edges) == 0
    assert len(r0.boundary_edges) == 4
    assert r0.n_ext == 4


def test_rectangle_counts():
    r = build_region("rectangle", 2, L=1, M=2)
    assert r.n_vertices == 15
    assert len(r.edges) == 22


def test_boundary_sets():
    r = build_region("box", 2, n=1)
    inner, ext, closed, (edges, bedges) = boundary_sets(r)
    assert len(inner) == 8          # all but the centre
    assert len(closed) == r.n_closed
    assert len(edges) == 12

    r0 = build_region("box", 2, n=0)
    _, ext0, _, (_, bedges0) = boundary_sets(r0)
    assert len(ext0) == 4
    assert len(bedges0) == 4


def test_rejects_bad_sizes():
    with pytest.raises(ValueError):
        build_region("box", 1, n=2)
    with pytest.raises(ValueError):
        build_region("box", 2, n=-1)


def test_vertex_order_lexicographic_and_deterministic():
    r1 = build_region("box", 2, n=2)
    r2 = build_region("box", 2, n=2)
    assert r1 == r2
    order = np.lexsort(r1.vertices.T[::-1])
    assert np.array_equal(order, np.arange(r1.n_vertices))


@given(n=st.integers(min_value=0, max_value=4), d=st.integers(min_value=2, max_value=3))
@settings(deadline=None, max_examples=30)
def test_box_cardinalities(n, d):
    r = build_region("box", d, n=n)
    assert r.n_vertices == (2 * n + 1) ** d
    # recompute the exterior boundary from the next box out and compare
    bigger = build_region("box", d, n=n + 1)
    inside = np.abs(bigger.vertices).max(axis=1) <= n
    adj = np.zeros(bigger.n_vertices, dtype=bool)
    for u, v in bigger.edges:
        if inside[u] and not inside[v]:
            adj[v] = True
        elif inside[v] and not inside[u]:
            adj[u] = True
    recomputed = bigger.vertices[adj]
    got = np.array(sorted(map(tuple, r.ext_vertices)))
    want = np.array(sorted(map(tuple, recomputed)))
    assert np.array_equal(got, want)


def test_log_width():
    assert log_width(1) == 1
    assert log_width(2) == 1
    assert log_width(8) == 3
    assert log_width(100) == 5


def test_zero_field():
    r = build_region("box", 2, n=2)
    fld = make_boundary_field("zero", r)
    assert np.all(fld.values == 0)


def test_thick_plus_support():
    r = build_region("box", 2, n=8)
    fld = make_boundary_field("thick-plus", r)
    w = log_width(8)
    assert w == 3
    dist = np.abs(r.vertices).max(axis=1)
    expect = (dist > 8 - w).astype(float)
    assert np.array_equal(fld.values, expect)
    # thickness exceeding the radius is rejected
    with pytest.raises(ValueError):
        make_boundary_field("thick-plus", r, width=9)


def test_plus_max_values():
    r = build_region("box", 2, n=1)
    fld = make_boundary_field("plus-max", r, C0=1.0)
    M = max(1.0, math.log(9)) ** 0.25
    assert boundary_magnitude(r) == pytest.approx(M)
    corners = np.abs(r.vertices).sum(axis=1) == 2
    mids = (np.abs(r.vertices).max(axis=1) == 1) & ~corners
    centre = np.abs(r.vertices).max(axis=1) == 0
    assert np.allclose(fld.values[corners], 2 * M)
    assert np.allclose(fld.values[mids], M)
    assert np.allclose(fld.values[centre], 0.0)


def test_fields_vanish_off_support():
    r = build_region("box", 2, n=5)
    for kind in ("zero", "thick-plus", "plus-max", "weak-plus"):
        fld = make_boundary_field(kind, r)
        assert isinstance(fld, BoundaryField)
        off = np.setdiff1d(np.arange(r.n_vertices), fld.support)
        assert np.all(fld.values[off] == 0)


def test_dobrushin_fields():
    r = build_region("rectangle", 2, L=6, M=4)
    pm = make_boundary_field("dobrushin-pm", r)
    pp = make_boundary_field("dobrushin-pp", r)
    assert np.all(np.abs(pm.values) == pp.values)
    last = r.vertices[:, -1]
    assert np.all(pm.values[(pm.values != 0) & (last >= 1)] > 0)
    assert np.all(pm.values[(pm.values != 0) & (last <= 0)] < 0)


def test_two_ghost_rectangle():
    tg = two_ghost_rectangle(2, 4, 3)
    assert tg.two_ghost
    assert tg.n_ghosts == 2
    assert len(tg.plus_sites) > 0 and len(tg.minus_sites) > 0
    assert not np.intersect1d(tg.plus_sites, tg.minus_sites).size
    one = tg.identified()
    assert not one.two_ghost
    assert np.all(one.h >= 0)


def test_region_spec_roundtrip():
    r = build_region("rectangle", 2, L=2, M=3)
    spec = r.spec()
    again = build_region(spec.pop("kind"), spec.pop("d"), **spec)
    assert r == again
