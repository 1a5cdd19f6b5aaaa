"""Voronoi tessellation over monitoring sites and the neighbor structure.

All spatial dependence downstream is carried by the boolean neighbor
relation derived here: two sites are neighbors iff their Voronoi cells,
clipped to a bounding box, share a border segment of positive length.
Cell construction uses exact rational arithmetic (each cell is the
intersection of bisector half-planes with the box), so adjacency is
deterministic even for degenerate inputs — four co-circular sites whose
cells meet in a single point are *not* neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .dataset import Site
from .errors import DegenerateBox, DuplicateSites, IndexOutOfRange, SelfEdge

_MIN_SITE_SEPARATION = 1e-9

Point = tuple[Fraction, Fraction]


@dataclass(frozen=True)
class Adjacency:
    """Symmetric neighbor structure over ``n`` cells.

    ``edges`` holds unordered pairs stored as ``(i, j)`` with ``i < j``.
    ``cell_polygons`` is present only when built from site geometry; each
    polygon is a counter-clockwise ring of ``(x, y)`` floats.
    """

    n: int
    edges: frozenset[tuple[int, int]]
    cell_polygons: tuple[tuple[tuple[float, float], ...], ...] | None = None

    def __post_init__(self):
        for i, j in self.edges:
            if i == j:
                raise SelfEdge(f"self edge ({i}, {j})")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise IndexOutOfRange(f"edge ({i}, {j}) outside 0..{self.n - 1}")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges


def adjacency_from_edges(n: int, edges: Iterable[tuple[int, int]]) -> Adjacency:
    """Build an Adjacency from an explicit edge list (no geometry).

    Edges are symmetrized and deduplicated; self edges and out-of-range
    indices are rejected.
    """
    canon = set()
    for i, j in edges:
        if i == j:
            raise SelfEdge(f"self edge ({i}, {j})")
        if not (0 <= i < n and 0 <= j < n):
            raise IndexOutOfRange(f"edge ({i}, {j}) outside 0..{n - 1}")
        canon.add((min(i, j), max(i, j)))
    return Adjacency(n, frozenset(canon))


def neighbors_of(a: Adjacency, i: int) -> list[int]:
    """Sorted list of the neighbors of cell ``i``."""
    if not 0 <= i < a.n:
        raise IndexOutOfRange(f"index {i} outside 0..{a.n - 1}")
    out = set()
    for u, v in a.edges:
        if u == i:
            out.add(v)
        elif v == i:
            out.add(u)
    return sorted(out)


@lru_cache(maxsize=128)
def edge_arrays(a: Adjacency) -> tuple[np.ndarray, np.ndarray]:
    """Edge endpoints as two parallel int64 arrays, in sorted edge order."""
    pairs = sorted(a.edges)
    if not pairs:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    arr = np.asarray(pairs, dtype=np.int64)
    ei = arr[:, 0].copy()
    ej = arr[:, 1].copy()
    ei.setflags(write=False)
    ej.setflags(write=False)
    return ei, ej


@lru_cache(maxsize=128)
def neighbor_matrix(a: Adjacency) -> np.ndarray:
    """Dense boolean neighbor matrix as float64 (v_ij = 1 iff edge)."""
    v = np.zeros((a.n, a.n))
    for i, j in a.edges:
        v[i, j] = 1.0
        v[j, i] = 1.0
    v.setflags(write=False)
    return v


# --- exact geometry ---------------------------------------------------------


def _clip_halfplane(poly: list[Point], a: Fraction, b: Fraction, c: Fraction) -> list[Point]:
    """Clip a convex ccw polygon to the half-plane a*x + b*y <= c."""
    out: list[Point] = []
    n = len(poly)
    for k in range(n):
        p, q = poly[k], poly[(k + 1) % n]
        fp = a * p[0] + b * p[1] - c
        fq = a * q[0] + b * q[1] - c
        if fp <= 0:
            out.append(p)
        if (fp < 0 < fq) or (fq < 0 < fp):
            t = fp / (fp - fq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    dedup: list[Point] = []
    for p in out:
        if not dedup or p != dedup[-1]:
            dedup.append(p)
    if len(dedup) > 1 and dedup[0] == dedup[-1]:
        dedup.pop()
    return dedup


def _bisector(si: Point, sj: Point) -> tuple[Fraction, Fraction, Fraction]:
    """Half-plane a*x + b*y <= c containing si, bounded by bisector(si, sj)."""
    a = 2 * (sj[0] - si[0])
    b = 2 * (sj[1] - si[1])
    c = sj[0] * sj[0] + sj[1] * sj[1] - si[0] * si[0] - si[1] * si[1]
    return a, b, c


def default_clip_box(sites: Sequence[Site]) -> tuple[float, float, float, float]:
    """Site bounding box inflated by 25% per side.

    Collinear site sets have a zero-extent bounding box in one direction;
    the inflation then borrows the larger extent so the box stays proper.
    """
    xs = [s.x for s in sites]
    ys = [s.y for s in sites]
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)
    ext = max(xmax - xmin, ymax - ymin)
    if ext <= 0:
        raise DuplicateSites("all sites coincide")
    pad_x = 0.25 * ((xmax - xmin) or ext)
    pad_y = 0.25 * ((ymax - ymin) or ext)
    return (xmin - pad_x, ymin - pad_y, xmax + pad_x, ymax + pad_y)


def build_voronoi_adjacency(
    sites: Sequence[Site],
    clip_box: tuple[float, float, float, float] | None = None,
) -> Adjacency:
    """Tessellate the plane around ``sites`` and derive cell adjacency.

    ``clip_box = (xmin, ymin, xmax, ymax)`` bounds the otherwise unbounded
    outer cells; by default the site bounding box inflated by 25% per side.
    Two cells are adjacent iff they share a border segment of positive
    length; meeting in a single point does not count.
    """
    if len(sites) < 2:
        raise DuplicateSites("need at least 2 sites")
    if clip_box is None:
        clip_box = default_clip_box(sites)
    xmin, ymin, xmax, ymax = clip_box
    if not (xmin < xmax and ymin < ymax):
        raise DegenerateBox(f"clip box {clip_box} has non-positive extent")
    for s in sites:
        if not (xmin < s.x < xmax and ymin < s.y < ymax):
            raise DegenerateBox(f"site {s.site_id!r} not strictly inside the clip box")

    pts: list[Point] = [(Fraction(s.x), Fraction(s.y)) for s in sites]
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            dx = float(pts[i][0] - pts[j][0])
            dy = float(pts[i][1] - pts[j][1])
            if dx * dx + dy * dy <= _MIN_SITE_SEPARATION**2:
                raise DuplicateSites(
                    f"sites {sites[i].site_id!r} and {sites[j].site_id!r} coincide"
                )

    fxmin, fymin = Fraction(xmin), Fraction(ymin)
    fxmax, fymax = Fraction(xmax), Fraction(ymax)
    box: list[Point] = [(fxmin, fymin), (fxmax, fymin), (fxmax, fymax), (fxmin, fymax)]

    cells: list[list[Point]] = []
    for i in range(n):
        poly = list(box)
        for j in range(n):
            if j == i or not poly:
                continue
            a, b, c = _bisector(pts[i], pts[j])
            poly = _clip_halfplane(poly, a, b, c)
        cells.append(poly)

    # cell i borders cell j iff some polygon edge of cell i lies on the
    # (i, j) bisector with positive length; the relation is symmetric by
    # construction but computed for both sides as a consistency check
    edges: set[tuple[int, int]] = set()
    for i in range(n):
        poly = cells[i]
        m = len(poly)
        for j in range(n):
            if j == i:
                continue
            a, b, c = _bisector(pts[i], pts[j])
            for k in range(m):
                p, q = poly[k], poly[(k + 1) % m]
                if p != q and a * p[0] + b * p[1] == c and a * q[0] + b * q[1] == c:
                    edges.add((min(i, j), max(i, j)))
                    break

    polygons = tuple(
        tuple((float(px), float(py)) for px, py in poly) for poly in cells
    )
    return Adjacency(n, frozenset(edges), polygons)


def lattice_geojson(a: Adjacency, sites: Sequence[Site]) -> dict:
    """Tessellation as a GeoJSON FeatureCollection (one Polygon per site)."""
    from .errors import NoPolygons

    if a.cell_polygons is None:
        raise NoPolygons("adjacency carries no cell polygons")
    if len(sites) != a.n:
        raise IndexOutOfRange(f"{len(sites)} sites for {a.n} cells")
    features = []
    for i, s in enumerate(sites):
        ring = [list(p) for p in a.cell_polygons[i]]
        ring.append(list(a.cell_polygons[i][0]))
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {
                    "site_id": s.site_id,
                    "catchment_id": s.catchment_id,
                    "neighbors": [sites[j].site_id for j in neighbors_of(a, i)],
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}
