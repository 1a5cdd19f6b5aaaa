"""Hidden Potts / Gibbs random field over the site lattice.

The field density is ``f(z | delta) = exp(delta * S(z)) / Z_delta`` where
``S(z)`` counts unordered neighbor pairs with equal labels and ``delta >= 0``
is the interaction strength. ``Z_delta`` is intractable in general, so:

- simulation uses the Swendsen-Wang cluster algorithm (open each same-label
  edge with probability ``1 - exp(-delta)``, relabel clusters uniformly);
- inference on ``delta`` uses an exchange-style update that cancels the
  normalizer with an auxiliary simulated field;
- tiny graphs get an exact enumerated ``Z_delta`` for testing.

The cluster sweep is a tight loop over edges; it is compiled with numba
when available and falls back to the identical pure-Python code otherwise.
Both paths consume pre-drawn random arrays, so results are bit-identical
for a given generator state either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, TooLarge
from .lattice import Adjacency, edge_arrays

_BRUTE_FORCE_LIMIT = 10**7
_ENUM_BLOCK = 1 << 15

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False


@dataclass(frozen=True)
class LabelField:
    """Categorical labels on the lattice cells."""

    labels: np.ndarray
    K: int

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be a 1-d array")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.K):
            raise ValueError(f"labels must lie in [0, {self.K})")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class PottsParams:
    """Interaction strength of the label field (ferromagnetic only)."""

    delta: float

    def __post_init__(self):
        if not math.isfinite(self.delta):
            raise ValueError(f"delta must be finite, got {self.delta}")
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")


def same_label_edges(z: LabelField, a: Adjacency) -> int:
    """Number of unordered neighbor pairs carrying the same label."""
    if z.n != a.n:
        raise LengthMismatch(f"{z.n} labels for {a.n} cells")
    ei, ej = edge_arrays(a)
    if len(ei) == 0:
        return 0
    return int(np.count_nonzero(z.labels[ei] == z.labels[ej]))


def potts_log_unnorm(z: LabelField, p: PottsParams, a: Adjacency) -> float:
    """Log of the unnormalized field density, ``delta * S(z)``."""
    return p.delta * same_label_edges(z, a)


def config_codes_to_labels(codes: np.ndarray, n: int, K: int) -> np.ndarray:
    """Decode mixed-radix config codes into an (n_codes, n) label matrix."""
    codes = np.asarray(codes)
    out = np.empty((len(codes), n), dtype=np.int64)
    rem = codes.copy()
    for i in range(n):
        out[:, i] = rem % K
        rem //= K
    return out


def labels_to_config_code(labels: np.ndarray, K: int) -> int:
    """Mixed-radix code of a label vector (site 0 is the least significant digit)."""
    code = 0
    for v in labels[::-1]:
        code = code * K + int(v)
    return code


def brute_force_edge_stats(a: Adjacency, K: int) -> np.ndarray:
    """S(z) for every one of the K^n label configurations, by config code."""
    total = K**a.n
    if total > _BRUTE_FORCE_LIMIT:
        raise TooLarge(f"K^n = {total} exceeds the enumeration guard {_BRUTE_FORCE_LIMIT}")
    ei, ej = edge_arrays(a)
    stats = np.empty(total, dtype=np.int64)
    for lo in range(0, total, _ENUM_BLOCK):
        hi = min(lo + _ENUM_BLOCK, total)
        block = config_codes_to_labels(np.arange(lo, hi), a.n, K)
        if len(ei):
            stats[lo:hi] = (block[:, ei] == block[:, ej]).sum(axis=1)
        else:
            stats[lo:hi] = 0
    return stats


def potts_partition_brute(a: Adjacency, K: int, delta: float) -> float:
    """Exact normalizer ``Z_delta`` by enumerating all K^n configurations."""
    stats = brute_force_edge_stats(a, K)
    return float(np.exp(delta * stats).sum())


# --- cluster sweeps ---------------------------------------------------------


def _sw_sweeps_impl(labels, K, p_open, ei, ej, bond_u, label_draws, codes, record):
    """Run ``bond_u.shape[0]`` cluster sweeps in place on ``labels``.

    Same-label edges open with probability ``p_open``; connected clusters
    of open edges take the pre-drawn uniform label of their root. When
    ``record`` is true, the mixed-radix code of each swept configuration
    is stored in ``codes``.
    """
    n = labels.shape[0]
    m = ei.shape[0]
    sweeps = bond_u.shape[0]
    parent = np.empty(n, dtype=np.int64)
    for s in range(sweeps):
        for i in range(n):
            parent[i] = i
        for e in range(m):
            u = ei[e]
            v = ej[e]
            if labels[u] == labels[v] and bond_u[s, e] < p_open:
                ru = u
                while parent[ru] != ru:
                    parent[ru] = parent[parent[ru]]
                    ru = parent[ru]
                rv = v
                while parent[rv] != rv:
                    parent[rv] = parent[parent[rv]]
                    rv = parent[rv]
                if ru != rv:
                    parent[rv] = ru
        for i in range(n):
            r = i
            while parent[r] != r:
                parent[r] = parent[parent[r]]
                r = parent[r]
            labels[i] = label_draws[s, r]
        if record:
            code = 0
            for i in range(n - 1, -1, -1):
                code = code * K + labels[i]
            codes[s] = code
    return labels


if _HAVE_NUMBA:
    _sw_sweeps = numba.njit(cache=True)(_sw_sweeps_impl)
else:  # pragma: no cover
    _sw_sweeps = _sw_sweeps_impl


def _run_sweeps(
    labels: np.ndarray,
    K: int,
    delta: float,
    a: Adjacency,
    sweeps: int,
    rng: np.random.Generator,
    record: bool = False,
    block: int = 1 << 16,
) -> tuple[np.ndarray, np.ndarray | None]:
    ei, ej = edge_arrays(a)
    p_open = -math.expm1(-delta)  # 1 - exp(-delta)
    codes = np.empty(sweeps, dtype=np.int64) if record else None
    if record and K**len(labels) > np.iinfo(np.int64).max:
        raise TooLarge("configuration codes overflow int64")
    labels = labels.astype(np.int64).copy()
    done = 0
    dummy = np.empty(0, dtype=np.int64)
    while done < sweeps:
        b = min(block, sweeps - done)
        bond_u = rng.random((b, len(ei)))
        label_draws = rng.integers(0, K, size=(b, len(labels)))
        out = codes[done : done + b] if record else dummy
        labels = _sw_sweeps(labels, K, p_open, ei, ej, bond_u, label_draws, out, record)
        done += b
    return labels, codes


def swendsen_wang_step(
    z: LabelField, p: PottsParams, a: Adjacency, rng: np.random.Generator
) -> LabelField:
    """One cluster sweep of the field; leaves ``f(z | delta)`` invariant."""
    if z.n != a.n:
        raise LengthMismatch(f"{z.n} labels for {a.n} cells")
    labels, _ = _run_sweeps(z.labels, z.K, p.delta, a, 1, rng)
    return LabelField(labels, z.K)


def run_swendsen_wang(
    z: LabelField,
    p: PottsParams,
    a: Adjacency,
    sweeps: int,
    rng: np.random.Generator,
    record: bool = False,
) -> tuple[LabelField, np.ndarray | None]:
    """Run many cluster sweeps; optionally record per-sweep config codes."""
    if z.n != a.n:
        raise LengthMismatch(f"{z.n} labels for {a.n} cells")
    labels, codes = _run_sweeps(z.labels, z.K, p.delta, a, sweeps, rng, record=record)
    return LabelField(labels, z.K), codes


def exchange_update_delta(
    z: LabelField,
    p: PottsParams,
    a: Adjacency,
    proposal_sd: float,
    prior: tuple[float, float],
    rng: np.random.Generator,
    aux_sweeps: int = 50,
) -> PottsParams:
    """One exchange-algorithm step for the interaction strength.

    Proposes ``delta' ~ N(delta, proposal_sd^2)``; proposals outside the
    uniform prior range are rejected outright (the proposal is symmetric
    on the interior). Otherwise an auxiliary field is simulated at
    ``delta'`` by ``aux_sweeps`` cluster sweeps from a uniform start and
    the move is accepted with probability
    ``min(1, exp((delta' - delta) * (S(z) - S(aux))))``, which cancels the
    intractable normalizers.
    """
    lo, hi = prior
    if not lo <= p.delta <= hi:
        raise ValueError(f"delta {p.delta} outside prior range [{lo}, {hi}]")
    proposal = p.delta + proposal_sd * rng.standard_normal()
    if proposal == p.delta:
        return p
    if not lo <= proposal <= hi:
        return p
    start = LabelField(rng.integers(0, z.K, size=z.n), z.K)
    aux, _ = run_swendsen_wang(start, PottsParams(proposal), a, aux_sweeps, rng)
    log_accept = (proposal - p.delta) * (same_label_edges(z, a) - same_label_edges(aux, a))
    if log_accept >= 0.0 or rng.random() < math.exp(log_accept):
        return PottsParams(proposal)
    return p
