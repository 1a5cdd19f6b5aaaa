from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest

from catchmix.dataset import Observation
from catchmix.lattice import adjacency_from_edges


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture
def tiny_inputs(tmp_path):
    """Two sites, two categories, 8 weekly observations each."""
    sites = tmp_path / "sites.csv"
    obs = tmp_path / "observations.csv"
    comp = tmp_path / "landuse.csv"
    write_csv(sites, ["site_id", "x", "y", "catchment_id"], [
        ["A", 0.0, 0.0, "CA"],
        ["B", 100.0, 0.0, "CB"],
    ])
    start = date(2020, 1, 6)
    rows = []
    for sid, level in (("A", 1.0), ("B", 2.0)):
        for w in range(8):
            rows.append([sid, (start + timedelta(days=7 * w)).isoformat(), level + 0.1 * w])
    write_csv(obs, ["site_id", "date", "value"], rows)
    write_csv(comp, ["catchment_id", "forest", "pasture"], [
        ["CA", 0.7, 0.3],
        ["CB", 0.2, 0.8],
    ])
    return sites, obs, comp


def weekly_obs(site_id, values, start=date(2020, 1, 6)):
    return [
        Observation(site_id, start + timedelta(days=7 * i), float(v))
        for i, v in enumerate(values)
    ]


@pytest.fixture(scope="session")
def path4():
    return adjacency_from_edges(4, [(0, 1), (1, 2), (2, 3)])


@pytest.fixture(scope="session")
def cycle4():
    return adjacency_from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)])


def grid_adjacency(nx: int, ny: int):
    edges = []
    for yy in range(ny):
        for xx in range(nx):
            i = yy * nx + xx
            if xx + 1 < nx:
                edges.append((i, i + 1))
            if yy + 1 < ny:
                edges.append((i, i + nx))
    return adjacency_from_edges(nx * ny, edges)


@pytest.fixture(scope="session")
def grid33():
    return grid_adjacency(3, 3)


def empirical_tv(counts: np.ndarray, probs: np.ndarray) -> float:
    emp = counts / counts.sum()
    return 0.5 * float(np.abs(emp - probs).sum())
