"""Neighborhood EM: penalized mixture fitting with spatial regularization.

The estimator maximizes a penalized classification-likelihood functional

    U(c, theta) = sum_ik c_ik [log pi_k + loglik_ik] - sum_ik c_ik log c_ik
                  + lam * G(c),
    G(c) = sum_i sum_j sum_k c_ik c_jk v_ij,

where ``c`` are soft responsibilities, ``v`` the boolean neighbor matrix
and ``lam >= 0`` the penalty weight. The E-step solves the stationarity
condition ``c_ik ∝ pi_k f_ik exp(2 lam sum_j v_ij c_jk)`` by fixed-point
iteration; the M-step is weighted least squares per component. With
``lam = 0`` the whole procedure reduces to classical EM.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import AlignedPanel, Dataset, align_panel
from .errors import EmptyComponent, FixedPointDiverged, LengthMismatch, SingularDesign
from .lattice import Adjacency, edge_arrays, neighbor_matrix
from .model import FitResult, MixtureParams, fitted_from_labels, sum_squared_error
from .rngutil import substream
from .seasonal import BasisSet, SiteBasis, basis_from_labels, decompose_panel

_FIXED_POINT_TOL = 1e-8
_FIXED_POINT_MAX_ITERS = 500
_RIDGE = 1e-10
_VARIANCE_FLOOR_FRAC = 1e-8
_MIN_COLUMN_MASS = 1e-10


@dataclass(frozen=True)
class Responsibilities:
    """Soft component memberships, one row per site summing to 1."""

    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 2:
            raise ValueError("responsibilities must be a 2-d matrix")
        if np.any(c < -1e-12) or np.any(c > 1 + 1e-12):
            raise ValueError("responsibilities must lie in [0, 1]")
        if np.max(np.abs(c.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("responsibility rows must sum to 1")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    def harden(self) -> np.ndarray:
        return np.argmax(self.c, axis=1)


def site_loglik(series: np.ndarray, k: int, params: MixtureParams, basis: BasisSet) -> float:
    """Gaussian log-likelihood of one site series under component ``k``."""
    mean = params.component_curve(k, basis)
    if mean.shape != series.shape:
        raise LengthMismatch(f"series length {series.shape} vs basis length {mean.shape}")
    nu = float(params.nu[k])
    resid = series - mean
    t_len = len(series)
    return float(-0.5 * t_len * np.log(2.0 * np.pi * nu) - 0.5 * np.dot(resid, resid) / nu)


def loglik_matrix(values: np.ndarray, params: MixtureParams, basis: BasisSet) -> np.ndarray:
    """Per-site, per-component log-likelihoods, shape (n_sites, K)."""
    curves = params.curves(basis)  # (K, T)
    t_len = values.shape[1]
    resid2 = ((values[:, None, :] - curves[None, :, :]) ** 2).sum(axis=2)  # (n, K)
    return -0.5 * t_len * np.log(2.0 * np.pi * params.nu)[None, :] - 0.5 * resid2 / params.nu[None, :]


def penalty_G(c: Responsibilities | np.ndarray, a: Adjacency) -> float:
    """Spatial agreement score: ordered-pair sum of c_ik c_jk over edges."""
    mat = c.c if isinstance(c, Responsibilities) else np.asarray(c, dtype=float)
    if mat.shape[0] != a.n:
        raise LengthMismatch(f"{mat.shape[0]} rows for {a.n} cells")
    ei, ej = edge_arrays(a)
    if len(ei) == 0:
        return 0.0
    return float(2.0 * np.sum(mat[ei] * mat[ej]))


def _row_softmax(logw: np.ndarray) -> np.ndarray:
    shifted = logw - logw.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=1, keepdims=True)


def e_step(
    panel: AlignedPanel,
    params: MixtureParams,
    basis: BasisSet,
    a: Adjacency,
    lam: float,
) -> Responsibilities:
    """Spatially regularized responsibilities by fixed-point iteration.

    Starts from the unpenalized posterior responsibilities and iterates
    ``c <- softmax(log pi + loglik + 2 lam V c)`` row-wise until the
    largest entry change falls below 1e-8. With ``lam = 0`` the start is
    already the fixed point.
    """
    ll = loglik_matrix(panel.values, params, basis)
    return _e_step_core(ll, np.log(params.pi), a, lam)


def _e_step_core(ll: np.ndarray, log_pi: np.ndarray, a: Adjacency, lam: float) -> Responsibilities:
    v = neighbor_matrix(a)
    base = log_pi[None, :] + ll
    c = _row_softmax(base)
    if lam == 0.0:
        return Responsibilities(c)
    for _ in range(_FIXED_POINT_MAX_ITERS):
        c_next = _row_softmax(base + 2.0 * lam * (v @ c))
        delta = float(np.max(np.abs(c_next - c)))
        c = c_next
        if delta < _FIXED_POINT_TOL:
            return Responsibilities(c)
    raise FixedPointDiverged(
        f"fixed point not reached in {_FIXED_POINT_MAX_ITERS} iterations (lam={lam})"
    )


def m_step(panel: AlignedPanel, c: Responsibilities, basis: BasisSet) -> MixtureParams:
    """Weighted-least-squares update of all component parameters.

    Every observation of site ``i`` carries weight ``c_ik`` in component
    ``k``'s regression on ``[1, trend_k, seasonal_k]``. A tiny ridge term
    is added when the normal matrix is singular (constant series zero out
    the trend/seasonal columns). Noise variances are responsibility-
    weighted mean squared residuals, floored at a small fraction of the
    total data variance.
    """
    values = panel.values
    weights = c.c
    n, t_len = values.shape
    n_comp = weights.shape[1]
    col_mass = weights.sum(axis=0)
    if np.any(col_mass <= _MIN_COLUMN_MASS):
        k_bad = int(np.argmin(col_mass))
        raise EmptyComponent(f"component {k_bad} has no responsibility mass")

    floor = _VARIANCE_FLOOR_FRAC * max(float(values.var()), 1e-30)
    mu0 = np.empty(n_comp)
    b_trend = np.empty(n_comp)
    b_seas = np.empty(n_comp)
    nu = np.empty(n_comp)
    for k in range(n_comp):
        design = basis.design(k)  # (T, 3)
        w = weights[:, k]
        ybar = (w[:, None] * values).sum(axis=0) / col_mass[k]
        gram = design.T @ design
        rhs = design.T @ ybar
        try:
            coef = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            coef = np.linalg.solve(gram + _RIDGE * np.eye(3), rhs)
        if not np.all(np.isfinite(coef)):
            raise SingularDesign(f"component {k} design produced non-finite coefficients")
        resid = values - (design @ coef)[None, :]
        nu[k] = max(float((w[:, None] * resid**2).sum() / (col_mass[k] * t_len)), floor)
        mu0[k], b_trend[k], b_seas[k] = coef
    pi = col_mass / n
    return MixtureParams(mu0, b_trend, b_seas, nu, pi)


def hathaway_criterion(
    ll: np.ndarray, c: np.ndarray, pi: np.ndarray, a: Adjacency, lam: float
) -> float:
    """Penalized classification likelihood U evaluated at (c, theta)."""
    mix = float((c * (np.log(pi)[None, :] + ll)).sum())
    pos = c > 0
    entropy = -float((c[pos] * np.log(c[pos])).sum())
    return mix + entropy + lam * penalty_G(c, a)


def init_features(site_bases: list[SiteBasis]) -> np.ndarray:
    """Per-site (mean, trend slope, seasonal amplitude) summary features."""
    feats = np.empty((len(site_bases), 3))
    for i, sb in enumerate(site_bases):
        t_len = len(sb.f_trend)
        xs = np.arange(t_len, dtype=float)
        trend = sb.trend_component
        slope = float(np.polyfit(xs, trend, 1)[0]) if t_len > 1 else 0.0
        feats[i] = (sb.f_const, slope, sb.seasonal_scale / np.sqrt(t_len))
    return feats


def kmeans_labels(
    features: np.ndarray, n_components: int, seed: int, n_init: int = 4, max_iters: int = 100
) -> np.ndarray:
    """Standardized k-means labels used to initialize both estimators.

    Plain Lloyd iterations from k-means++ seeds, written out here so the
    initialization is bit-reproducible regardless of BLAS/thread settings.
    """
    rng = np.random.default_rng(seed)
    sd = features.std(axis=0)
    sd[sd == 0] = 1.0
    pts = (features - features.mean(axis=0)) / sd
    n = len(pts)
    best_labels: np.ndarray | None = None
    best_inertia = np.inf
    for _ in range(max(1, n_init)):
        centers = _kmeanspp(pts, n_components, rng)
        labels = np.full(n, -1, dtype=np.int64)
        for _it in range(max_iters):
            d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = np.argmin(d2, axis=1)
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for k in range(n_components):
                mask = labels == k
                if mask.any():
                    centers[k] = pts[mask].mean(axis=0)
                else:  # reseed an empty cluster at the farthest point
                    centers[k] = pts[np.argmax(d2.min(axis=1))]
        inertia = float(((pts - centers[labels]) ** 2).sum())
        if inertia < best_inertia:
            best_inertia = inertia
            best_labels = labels.copy()
    assert best_labels is not None
    return best_labels


def _kmeanspp(pts: np.ndarray, n_components: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((n_components, pts.shape[1]))
    centers[0] = pts[rng.integers(len(pts))]
    for k in range(1, n_components):
        d2 = ((pts[:, None, :] - centers[None, :k, :]) ** 2).sum(axis=2).min(axis=1)
        total = d2.sum()
        if total <= 0:
            centers[k] = pts[rng.integers(len(pts))]
            continue
        centers[k] = pts[rng.choice(len(pts), p=d2 / total)]
    return centers


def _hard_responsibilities(labels: np.ndarray, n_components: int) -> Responsibilities:
    c = np.zeros((len(labels), n_components))
    c[np.arange(len(labels)), labels] = 1.0
    return Responsibilities(c)


def _category_names(dataset, n_components: int) -> tuple[str, ...]:
    """Component names: the dataset's land-use categories when they line up."""
    if isinstance(dataset, Dataset) and dataset.n_categories == n_components:
        return dataset.categories
    return tuple(f"component_{k}" for k in range(n_components))


def _reseed_empty(c: np.ndarray, ll: np.ndarray, n_components: int) -> tuple[np.ndarray, int]:
    """Give each massless component the full responsibility of the worst-fit site."""
    col_mass = c.sum(axis=0)
    if np.all(col_mass > _MIN_COLUMN_MASS):
        return c, 0
    c = c.copy()
    n_reseeded = 0
    for k in range(n_components):
        if col_mass[k] <= _MIN_COLUMN_MASS:
            worst = int(np.argmin(ll.max(axis=1)))
            c[worst] = 0.0
            c[worst, k] = 1.0
            col_mass = c.sum(axis=0)
            n_reseeded += 1
    return c, n_reseeded


def fit_nem(
    dataset: Dataset | AlignedPanel,
    a: Adjacency,
    lam: float,
    n_components: int,
    init: str | np.ndarray = "kmeans",
    max_iters: int = 100,
    tol: float = 1e-6,
    seed: int = 0,
    restarts: int = 10,
    period: int = 52,
    site_bases: list[SiteBasis] | None = None,
) -> FitResult:
    """Fit the spatially penalized mixture by Neighborhood EM.

    Runs ``restarts`` independent fits from k-means initializations (or a
    single fit from given labels / random labels) and keeps the best final
    objective. Each iteration alternates the fixed-point E-step and the
    weighted-least-squares M-step, then re-aggregates the per-group basis
    functions from the hardened labels; a basis update is kept only when
    it does not lower the objective, so the U trace is non-decreasing.

    ``dataset`` may be a raw Dataset (regularized and aligned here) or an
    already aligned panel.
    """
    if n_components < 2:
        raise ValueError(f"need at least 2 components, got {n_components}")
    categories = _category_names(dataset, n_components)
    panel = dataset if isinstance(dataset, AlignedPanel) else align_panel(dataset)
    if panel.n_sites != a.n:
        raise LengthMismatch(f"{panel.n_sites} sites for {a.n} cells")
    if site_bases is None:
        site_bases = decompose_panel(panel.values, panel.site_ids, period)
    feats = init_features(site_bases)

    if isinstance(init, np.ndarray):
        starts: list[np.ndarray] = [np.asarray(init, dtype=np.int64)]
    elif init == "given":
        raise ValueError("init='given' requires an explicit label array")
    elif init == "random":
        starts = [
            substream(seed, "nem-random", r).integers(0, n_components, panel.n_sites)
            for r in range(max(1, restarts))
        ]
    elif init == "kmeans":
        starts = [
            kmeans_labels(feats, n_components, int(substream(seed, "nem-kmeans", r).integers(2**31)))
            for r in range(max(1, restarts))
        ]
    else:
        raise ValueError(f"unknown init {init!r}")

    best: tuple[float, dict] | None = None
    for labels0 in starts:
        state = _run_single_nem(panel, a, lam, n_components, labels0, max_iters, tol, site_bases)
        if best is None or state["objective"] > best[0]:
            best = (state["objective"], state)
    assert best is not None
    state = best[1]

    labels = state["labels"]
    params: MixtureParams = state["params"]
    basis: BasisSet = state["basis"]
    fitted = fitted_from_labels(labels, params, basis)
    sse = sum_squared_error(panel.values, fitted)
    return FitResult(
        method="nem",
        site_ids=panel.site_ids,
        categories=categories,
        map_labels=labels,
        params=params,
        baselines=params.mu0.copy(),
        fitted=fitted,
        sse=sse,
        diagnostics={
            "objective_trace": state["trace"],
            "lam": lam,
            "iterations": len(state["trace"]),
            "reseeded_components": state["reseeds"],
        },
    )


def _run_single_nem(
    panel: AlignedPanel,
    a: Adjacency,
    lam: float,
    n_components: int,
    labels0: np.ndarray,
    max_iters: int,
    tol: float,
    site_bases: list[SiteBasis],
) -> dict:
    basis = basis_from_labels(site_bases, labels0, n_components)
    c = _hard_responsibilities(labels0, n_components)
    params = m_step(panel, c, basis)
    reseeds = 0
    trace: list[float] = []
    u_prev = -np.inf
    log_pi = np.log(params.pi)
    ll = loglik_matrix(panel.values, params, basis)
    c_mat = c.c

    for _ in range(max_iters):
        # E-step; keep the previous responsibilities if the fixed point
        # found from the unpenalized start happens to score lower
        c_new = _e_step_core(ll, log_pi, a, lam).c
        if hathaway_criterion(ll, c_new, params.pi, a, lam) < hathaway_criterion(
            ll, c_mat, params.pi, a, lam
        ):
            c_new = c_mat
        c_new, n_reseeded = _reseed_empty(c_new, ll, n_components)
        reseeds += n_reseeded

        params = m_step(panel, Responsibilities(c_new), basis)
        log_pi = np.log(params.pi)
        ll = loglik_matrix(panel.values, params, basis)
        u_now = hathaway_criterion(ll, c_new, params.pi, a, lam)

        # re-aggregate basis from hardened labels; keep only if it helps
        hard = np.argmax(c_new, axis=1)
        basis_new = basis_from_labels(site_bases, hard, n_components, previous=basis)
        params_new = m_step(panel, Responsibilities(c_new), basis_new)
        ll_new = loglik_matrix(panel.values, params_new, basis_new)
        u_swapped = hathaway_criterion(ll_new, c_new, params_new.pi, a, lam)
        if u_swapped >= u_now:
            basis, params, ll, u_now = basis_new, params_new, ll_new, u_swapped
            log_pi = np.log(params.pi)

        c_mat = c_new
        trace.append(u_now)
        if u_now - u_prev < tol:
            u_prev = u_now
            break
        u_prev = u_now

    labels = np.argmax(c_mat, axis=1)
    return {
        "labels": labels,
        "params": params,
        "basis": basis,
        "objective": u_prev,
        "trace": trace,
        "responsibilities": c_mat,
        "reseeds": reseeds,
    }
