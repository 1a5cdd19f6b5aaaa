"""Per-site seasonal-trend decomposition and per-land-use basis functions.

Each site series is split additively into trend, seasonal and remainder
parts by the classic two-loop Loess procedure (cycle-subseries smoothing,
low-pass filtering of the subseries fits, trend smoothing of the
de-seasonalized series). The trend and seasonal shapes are stored as
unit-norm vectors with separate scales so regression weights stay
comparable across sites; grouping sites by a label vector then averages
member components into one basis per group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBasis, EmptyComponent, LengthMismatch, SeriesTooShort, SpanTooSmall

_NORM_FLOOR = 1e-12


def _loess_eval(
    x: np.ndarray, y: np.ndarray, q: int, degree: int, xq: np.ndarray
) -> np.ndarray:
    """Locally weighted polynomial regression evaluated at query points.

    At each query the ``q`` nearest data points get tricube weights scaled
    by the q-th nearest distance; when ``q`` exceeds the data size the
    bandwidth is inflated by ``q / n`` (the usual convention, which also
    covers queries outside the data range during subseries extension).
    """
    n = len(x)
    out = np.empty(len(xq))
    for m, x0 in enumerate(xq):
        d = np.abs(x - x0)
        if q < n:
            idx = np.argpartition(d, q - 1)[:q]
        else:
            idx = np.arange(n)
        h = d[idx].max()
        if q > n:
            h = h * q / n
        if h <= 0:
            out[m] = y[idx].mean()
            continue
        w = np.clip(1.0 - (d[idx] / h) ** 3, 0.0, None) ** 3
        sw = np.sqrt(w)
        xc = x[idx] - x0
        design = np.vander(xc, degree + 1, increasing=True)
        beta, *_ = np.linalg.lstsq(sw[:, None] * design, sw * y[idx], rcond=None)
        out[m] = beta[0]
    return out


def loess_smooth(y: np.ndarray, x: np.ndarray, span: float, degree: int = 1) -> np.ndarray:
    """Loess-smoothed values of ``y`` at its own abscissae.

    ``span`` is the fraction of points in each local window; ``degree``
    the local polynomial degree (0, 1, or 2).
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape:
        raise LengthMismatch(f"y has {y.shape}, x has {x.shape}")
    if degree not in (0, 1, 2):
        raise ValueError(f"degree must be 0, 1 or 2, got {degree}")
    n = len(y)
    if n < degree + 1:
        raise SpanTooSmall(f"need at least {degree + 1} points, got {n}")
    if not 0 < span <= 1:
        raise SpanTooSmall(f"span must be in (0, 1], got {span}")
    if span * n < degree + 1:
        raise SpanTooSmall(f"span {span} covers fewer than {degree + 1} points")
    # window size follows the classic convention: floor(span * n)
    q = max(degree + 1, min(n, int(span * n + 1e-9)))
    return _loess_eval(x, y, q, degree, x)


def _moving_average(a: np.ndarray, w: int) -> np.ndarray:
    c = np.cumsum(np.concatenate(([0.0], a)))
    return (c[w:] - c[:-w]) / w


def _odd_at_least(v: float) -> int:
    k = int(np.ceil(v))
    return k if k % 2 == 1 else k + 1


def default_spans(period: int, seasonal_span: int = 7) -> tuple[int, int, int]:
    """(seasonal, trend, lowpass) smoother lengths for a given period."""
    trend_span = _odd_at_least(1.5 * period / (1.0 - 1.5 / seasonal_span))
    lowpass_span = _odd_at_least(period + 0.0) if period % 2 == 0 else period
    return seasonal_span, trend_span, lowpass_span


@dataclass(frozen=True)
class SiteBasis:
    """Additive decomposition of one site series over the shared grid.

    ``f_const + trend_scale * f_trend + seasonal_scale * f_seasonal +
    remainder`` reconstructs the input exactly; ``f_trend``/``f_seasonal``
    have unit Euclidean norm (zero vectors when the component vanishes).
    """

    site_id: str
    f_const: float
    f_trend: np.ndarray
    f_seasonal: np.ndarray
    remainder: np.ndarray
    trend_scale: float
    seasonal_scale: float

    def __post_init__(self):
        for arr in (self.f_trend, self.f_seasonal, self.remainder):
            arr.setflags(write=False)

    @property
    def trend_component(self) -> np.ndarray:
        return self.trend_scale * self.f_trend

    @property
    def seasonal_component(self) -> np.ndarray:
        return self.seasonal_scale * self.f_seasonal

    def reconstruct(self) -> np.ndarray:
        return (
            self.f_const
            + self.trend_scale * self.f_trend
            + self.seasonal_scale * self.f_seasonal
            + self.remainder
        )


def _normalize(v: np.ndarray) -> tuple[np.ndarray, float]:
    scale = float(np.linalg.norm(v))
    if scale <= _NORM_FLOOR * max(1.0, float(np.abs(v).max(initial=0.0))) or scale == 0.0:
        return np.zeros_like(v), 0.0
    return v / scale, scale


def stl_decompose(
    values: np.ndarray,
    period: int,
    site_id: str = "",
    inner_iters: int = 2,
    spans: tuple[int, int, int] | None = None,
    degrees: tuple[int, int, int] = (1, 1, 1),
) -> SiteBasis:
    """Seasonal-trend decomposition of a regular series by Loess.

    ``spans`` are the (seasonal, trend, lowpass) smoother lengths in
    points (odd); defaults follow the standard formulae for the given
    period. The inner loop runs ``inner_iters`` times:

    1. detrend, smooth each cycle-subseries (extended one period each way),
    2. low-pass the subseries fits (two period-length moving averages, a
       3-point moving average, then a Loess pass) and subtract to get the
       seasonal part,
    3. Loess-smooth the de-seasonalized series to get the trend.

    The seasonal part is then de-meaned over each complete cycle (the
    per-cycle means move into the trend), so it averages to ~0 over every
    full cycle. The remainder is computed last so that the four parts add
    back to the input exactly.
    """
    y = np.asarray(values, dtype=float)
    n = len(y)
    if period < 2:
        raise ValueError(f"period must be >= 2, got {period}")
    if n < 2 * period:
        raise SeriesTooShort(f"need >= {2 * period} points for period {period}, got {n}")
    n_s, n_t, n_l = spans if spans is not None else default_spans(period)
    s_deg, t_deg, l_deg = degrees

    xs = np.arange(n, dtype=float)
    trend = np.zeros(n)
    seasonal = np.zeros(n)
    for _ in range(max(1, inner_iters)):
        detrended = y - trend
        cycle = np.empty(n + 2 * period)
        for pos in range(period):
            sub = detrended[pos::period]
            ln = len(sub)
            grid = np.arange(ln, dtype=float)
            fit = _loess_eval(grid, sub, n_s, s_deg, np.arange(-1, ln + 1, dtype=float))
            cycle[pos::period] = fit
        lowpass = _moving_average(_moving_average(_moving_average(cycle, period), period), 3)
        lowpass = _loess_eval(xs, lowpass, n_l, l_deg, xs)
        seasonal = cycle[period : period + n] - lowpass
        trend = _loess_eval(xs, y - seasonal, n_t, t_deg, xs)

    # move per-cycle means of the seasonal part into the trend
    n_cycles = n // period
    shift = np.zeros(n)
    for c in range(n_cycles):
        lo, hi = c * period, (c + 1) * period
        shift[lo:hi] = seasonal[lo:hi].mean()
    if n_cycles * period < n:
        shift[n_cycles * period :] = seasonal[n_cycles * period :].mean()
    seasonal = seasonal - shift
    trend = trend + shift

    f_const = float(y.mean())
    f_trend, trend_scale = _normalize(trend - f_const)
    f_seasonal, seasonal_scale = _normalize(seasonal)
    remainder = y - f_const - trend_scale * f_trend - seasonal_scale * f_seasonal
    return SiteBasis(site_id, f_const, f_trend, f_seasonal, remainder, trend_scale, seasonal_scale)


@dataclass(frozen=True)
class BasisSet:
    """Per-group temporal basis functions over the shared grid.

    For each group ``k`` the trend/seasonal vectors are the unit-norm
    shapes of the averaged member components (index 1 = constant,
    2 = trend, 3 = seasonal); ``counts[k]`` is the number of member sites
    (a group left over from an earlier labeling keeps its last non-empty
    basis and counts 0).
    """

    const: np.ndarray  # (K,)
    trend: np.ndarray  # (K, T) unit rows (or zero rows)
    seasonal: np.ndarray  # (K, T) unit rows (or zero rows)
    trend_scale: np.ndarray  # (K,)
    seasonal_scale: np.ndarray  # (K,)
    counts: np.ndarray  # (K,)

    def __post_init__(self):
        for arr in (self.const, self.trend, self.seasonal, self.trend_scale, self.seasonal_scale, self.counts):
            arr.setflags(write=False)

    @property
    def n_components(self) -> int:
        return len(self.const)

    @property
    def n_times(self) -> int:
        return self.trend.shape[1]

    def design(self, k: int) -> np.ndarray:
        """Regression design [1, trend_k, seasonal_k] of shape (T, 3)."""
        return np.column_stack(
            [np.ones(self.n_times), self.trend[k], self.seasonal[k]]
        )


def landuse_basis(site_bases: list[SiteBasis], labels: np.ndarray, k: int, j: int) -> np.ndarray:
    """Pointwise mean of the scaled basis-``j`` components of group ``k``.

    ``j`` is 1 (constant), 2 (trend) or 3 (seasonal). Raises
    :class:`EmptyComponent` when no site carries label ``k``.
    """
    labels = np.asarray(labels)
    if len(labels) != len(site_bases):
        raise LengthMismatch(f"{len(labels)} labels for {len(site_bases)} site bases")
    members = [sb for sb, z in zip(site_bases, labels) if z == k]
    if not members:
        raise EmptyComponent(f"no site carries label {k}")
    t_len = len(members[0].f_trend)
    if j == 1:
        return np.full(t_len, float(np.mean([sb.f_const for sb in members])))
    if j == 2:
        return np.mean([sb.trend_component for sb in members], axis=0)
    if j == 3:
        return np.mean([sb.seasonal_component for sb in members], axis=0)
    raise ValueError(f"basis index must be 1, 2 or 3, got {j}")


def basis_from_labels(
    site_bases: list[SiteBasis],
    labels: np.ndarray,
    n_components: int,
    previous: BasisSet | None = None,
) -> BasisSet:
    """Aggregate member-site components into one basis per group.

    Groups with no members inherit their entry from ``previous`` (count 0)
    so a label that disappears mid-fit does not abort the run; with no
    previous basis to fall back on, the all-site pooled basis is used.
    """
    labels = np.asarray(labels)
    if len(labels) != len(site_bases):
        raise LengthMismatch(f"{len(labels)} labels for {len(site_bases)} site bases")
    if not site_bases:
        raise EmptyBasis("no site bases")
    t_len = len(site_bases[0].f_trend)

    pooled_trend = np.mean([sb.trend_component for sb in site_bases], axis=0)
    pooled_seas = np.mean([sb.seasonal_component for sb in site_bases], axis=0)
    pooled_const = float(np.mean([sb.f_const for sb in site_bases]))

    const = np.zeros(n_components)
    trend = np.zeros((n_components, t_len))
    seasonal = np.zeros((n_components, t_len))
    t_scale = np.zeros(n_components)
    s_scale = np.zeros(n_components)
    counts = np.zeros(n_components, dtype=np.int64)
    for k in range(n_components):
        members = labels == k
        counts[k] = int(members.sum())
        if counts[k] == 0:
            if previous is not None:
                const[k] = previous.const[k]
                trend[k] = previous.trend[k]
                seasonal[k] = previous.seasonal[k]
                t_scale[k] = previous.trend_scale[k]
                s_scale[k] = previous.seasonal_scale[k]
            else:
                const[k] = pooled_const
                trend[k], t_scale[k] = _normalize(pooled_trend)
                seasonal[k], s_scale[k] = _normalize(pooled_seas)
            continue
        const[k] = float(np.mean([sb.f_const for sb, m in zip(site_bases, members) if m]))
        trend[k], t_scale[k] = _normalize(landuse_basis(site_bases, labels, k, 2))
        seasonal[k], s_scale[k] = _normalize(landuse_basis(site_bases, labels, k, 3))
    return BasisSet(const, trend, seasonal, t_scale, s_scale, counts)


def decompose_panel(
    values: np.ndarray,
    site_ids: tuple[str, ...],
    period: int,
    inner_iters: int = 2,
    spans: tuple[int, int, int] | None = None,
) -> list[SiteBasis]:
    """STL decomposition of every row of an aligned panel."""
    return [
        stl_decompose(values[i], period, site_id=site_ids[i], inner_iters=inner_iters, spans=spans)
        for i in range(values.shape[0])
    ]
