from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catchmix.dataset import Site
from catchmix.errors import (
    DegenerateBox,
    DuplicateSites,
    IndexOutOfRange,
    NoPolygons,
    SelfEdge,
)
from catchmix.lattice import (
    Adjacency,
    adjacency_from_edges,
    build_voronoi_adjacency,
    default_clip_box,
    lattice_geojson,
    neighbors_of,
)


def sites_at(coords):
    return [Site(f"S{i}", float(x), float(y), f"C{i}") for i, (x, y) in enumerate(coords)]


class TestEdgeList:
    def test_dedup_and_symmetry(self):
        a = adjacency_from_edges(4, [(0, 1), (1, 0), (1, 2)])
        assert a.edges == frozenset({(0, 1), (1, 2)})

    def test_self_edge(self):
        with pytest.raises(SelfEdge):
            adjacency_from_edges(3, [(2, 2)])

    def test_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            adjacency_from_edges(3, [(0, 3)])

    def test_empty(self):
        a = adjacency_from_edges(2, [])
        assert a.n_edges == 0

    def test_neighbors_path(self):
        a = adjacency_from_edges(3, [(0, 1), (1, 2)])
        assert neighbors_of(a, 1) == [0, 2]

    def test_neighbors_isolated(self):
        a = adjacency_from_edges(3, [(0, 1)])
        assert neighbors_of(a, 2) == []

    def test_neighbors_cycle(self):
        a = adjacency_from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
        assert neighbors_of(a, 0) == [1, 3]

    def test_neighbors_index_check(self):
        a = adjacency_from_edges(2, [])
        with pytest.raises(IndexOutOfRange):
            neighbors_of(a, 2)

    @given(
        st.lists(
            st.tuples(st.integers(0, 7), st.integers(0, 7)).filter(lambda e: e[0] != e[1]),
            max_size=20,
        )
    )
    def test_symmetry_property(self, edges):
        a = adjacency_from_edges(8, edges)
        for i in range(8):
            for j in neighbors_of(a, i):
                assert i in neighbors_of(a, j)


class TestVoronoi:
    def test_two_sites(self):
        a = build_voronoi_adjacency(sites_at([(0.2, 0.2), (0.8, 0.8)]), (0, 0, 1, 1))
        assert a.edges == frozenset({(0, 1)})

    def test_three_collinear(self):
        a = build_voronoi_adjacency(
            sites_at([(0.0, 0.5), (0.5, 0.5), (1.0, 0.5)]), (-1, -1, 2, 2)
        )
        assert a.edges == frozenset({(0, 1), (1, 2)})

    def test_square_corners_excludes_diagonals(self):
        # four co-circular sites: cells meet pairwise at the centre point,
        # which carries zero border length, so only the 4 side pairs touch
        a = build_voronoi_adjacency(
            sites_at([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]),
            (-0.25, -0.25, 1.25, 1.25),
        )
        assert a.edges == frozenset({(0, 1), (1, 2), (2, 3), (0, 3)})

    def test_duplicate_sites(self):
        with pytest.raises(DuplicateSites):
            build_voronoi_adjacency(sites_at([(0.5, 0.5), (0.5, 0.5), (0.2, 0.2)]), (0, 0, 1, 1))

    def test_degenerate_box(self):
        with pytest.raises(DegenerateBox):
            build_voronoi_adjacency(sites_at([(0.2, 0.2), (0.8, 0.8)]), (0, 0, 0, 1))

    def test_site_outside_box(self):
        with pytest.raises(DegenerateBox):
            build_voronoi_adjacency(sites_at([(0.2, 0.2), (1.8, 0.8)]), (0, 0, 1, 1))

    def test_similarity_invariance(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(0, 10, size=(9, 2))
        box = (-2.0, -2.0, 12.0, 12.0)
        a1 = build_voronoi_adjacency(sites_at(pts), box)
        scale, dx, dy = 3.5, 100.0, -40.0
        pts2 = pts * scale + np.array([dx, dy])
        box2 = (box[0] * scale + dx, box[1] * scale + dy, box[2] * scale + dx, box[3] * scale + dy)
        a2 = build_voronoi_adjacency(sites_at(pts2), box2)
        assert a1.edges == a2.edges

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_against_dense_grid_oracle(self, seed):
        # assign a dense grid of probe points to their nearest site; two
        # cells are adjacent iff their point sets touch on the probe grid
        rng = np.random.default_rng(seed)
        n = 7
        pts = rng.uniform(0.1, 0.9, size=(n, 2))
        box = (0.0, 0.0, 1.0, 1.0)
        a = build_voronoi_adjacency(sites_at(pts), box)

        res = 400
        gx, gy = np.meshgrid(np.linspace(0, 1, res), np.linspace(0, 1, res))
        probes = np.column_stack([gx.ravel(), gy.ravel()])
        d2 = ((probes[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        owner = np.argmin(d2, axis=1).reshape(res, res)
        oracle = set()
        for i, j in zip(owner[:, :-1].ravel(), owner[:, 1:].ravel()):
            if i != j:
                oracle.add((min(i, j), max(i, j)))
        for i, j in zip(owner[:-1, :].ravel(), owner[1:, :].ravel()):
            if i != j:
                oracle.add((min(i, j), max(i, j)))
        # the probe grid can only miss borders shorter than ~2 grid cells;
        # every oracle edge must exist, and any extra exact edge must be tiny
        assert oracle <= set(a.edges)
        missed = set(a.edges) - oracle
        for i, j in missed:
            length = _shared_border_length(a, i, j)
            assert length < 2.5 / res, (i, j, length)

    def test_polygons_cover_box(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(1, 9, size=(6, 2))
        box = (0.0, 0.0, 10.0, 10.0)
        a = build_voronoi_adjacency(sites_at(pts), box)
        area = sum(_polygon_area(p) for p in a.cell_polygons)
        assert area == pytest.approx(100.0, rel=1e-9)

    def test_default_clip_box_inflation(self):
        s = sites_at([(0.0, 0.0), (4.0, 2.0)])
        box = default_clip_box(s)
        assert box == (-1.0, -0.5, 5.0, 2.5)
        a = build_voronoi_adjacency(s)
        assert a.edges == frozenset({(0, 1)})


def _polygon_area(poly):
    x = np.array([p[0] for p in poly])
    y = np.array([p[1] for p in poly])
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _shared_border_length(a: Adjacency, i: int, j: int) -> float:
    """Length of the common boundary of two cells (float polygons)."""
    pi = np.asarray(a.cell_polygons[i])
    pj = np.asarray(a.cell_polygons[j])
    best = 0.0
    for u in range(len(pi)):
        p1, p2 = pi[u], pi[(u + 1) % len(pi)]
        for v in range(len(pj)):
            q1, q2 = pj[v], pj[(v + 1) % len(pj)]
            if (np.allclose(p1, q1) and np.allclose(p2, q2)) or (
                np.allclose(p1, q2) and np.allclose(p2, q1)
            ):
                best = max(best, float(np.hypot(*(p2 - p1))))
    return best


class TestGeoJson:
    def test_features(self):
        s = sites_at([(0.2, 0.2), (0.8, 0.8)])
        a = build_voronoi_adjacency(s, (0, 0, 1, 1))
        geo = lattice_geojson(a, s)
        assert geo["type"] == "FeatureCollection"
        assert len(geo["features"]) == 2
        f0 = geo["features"][0]
        assert f0["properties"]["site_id"] == "S0"
        assert f0["properties"]["neighbors"] == ["S1"]
        ring = f0["geometry"]["coordinates"][0]
        assert ring[0] == ring[-1]

    def test_no_polygons(self):
        a = adjacency_from_edges(2, [(0, 1)])
        with pytest.raises(NoPolygons):
            lattice_geojson(a, sites_at([(0, 0), (1, 1)]))
