"""Lumped compositional baseline and the model-comparison table.

The baseline regresses all observations on centred-log-ratio (CLR)
transformed catchment compositions interacted with globally pooled
temporal basis functions. It ignores the latent structure entirely, so
it is the reference the mixture estimators are compared against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import AlignedPanel, Dataset, align_panel
from .errors import AlignmentMismatch, CategoryMismatch, SingularDesign, ZeroComponent
from .model import FitResult, sum_squared_error
from .seasonal import stl_decompose

_ZERO_REPLACEMENT_FACTOR = 0.5
_RANK_TOL = 1e-9


def clr_transform(p: np.ndarray, zero_policy: str = "replace") -> np.ndarray:
    """Centred log-ratio transform of one composition vector.

    Returns ``log(p_k) - mean_k log(p_k)``, which always sums to zero.
    Zero entries are replaced by half the smallest positive entry and the
    vector renormalized (``zero_policy="replace"``, the default), or
    rejected (``zero_policy="error"``).
    """
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ZeroComponent("composition entries must be non-negative")
    if np.any(p == 0):
        if zero_policy == "error":
            raise ZeroComponent("composition contains a zero entry")
        positive = p[p > 0]
        if len(positive) == 0:
            raise ZeroComponent("composition is all zeros")
        p = np.where(p == 0, _ZERO_REPLACEMENT_FACTOR * positive.min(), p)
        p = p / p.sum()
    logs = np.log(p)
    return logs - logs.mean()


def fit_clr_model(
    dataset: Dataset,
    n_basis: int = 2,
    period: int = 52,
    zero_policy: str = "replace",
    panel: AlignedPanel | None = None,
) -> FitResult:
    """Ordinary least squares on CLR compositions times global bases.

    The pooled (all-site mean) series is decomposed once; its unit-norm
    trend and seasonal shapes are the ``n_basis`` global basis functions.
    The design interacts every CLR component with ``[1, basis...]``, plus
    a global intercept. One category - the one with the smallest total
    proportion - is dropped to break the CLR zero-sum collinearity; its
    baseline is reported as NaN.
    """
    if panel is None:
        panel = align_panel(dataset)
    if n_basis not in (1, 2):
        raise ValueError(f"n_basis must be 1 or 2, got {n_basis}")
    values = panel.values
    n, t_len = values.shape

    pooled = stl_decompose(values.mean(axis=0), period, site_id="pooled")
    bases = [pooled.f_trend, pooled.f_seasonal][:n_basis]

    comp_by_catchment = {c.catchment_id: np.asarray(c.proportions) for c in dataset.compositions}
    site_clr = np.vstack(
        [
            clr_transform(comp_by_catchment[s.catchment_id], zero_policy=zero_policy)
            for s in dataset.sites
        ]
    )  # (n, K)

    n_cat = dataset.n_categories
    totals = site_clr.sum(axis=0)  # used only for tie-breaking readability
    drop = int(np.argmin(np.vstack([comp_by_catchment[s.catchment_id] for s in dataset.sites]).sum(axis=0)))
    keep = [k for k in range(n_cat) if k != drop]

    # one row per (site, t): intercept + clr_k * {1, basis_b(t)}
    n_cols = 1 + len(keep) * (1 + n_basis)
    design = np.empty((n * t_len, n_cols))
    design[:, 0] = 1.0
    col = 1
    col_of_baseline = {}
    for k in keep:
        ck = np.repeat(site_clr[:, k], t_len)
        col_of_baseline[k] = col
        design[:, col] = ck
        col += 1
        for b in bases:
            design[:, col] = ck * np.tile(b, n)
            col += 1

    y = values.ravel()
    gram = design.T @ design
    rank = np.linalg.matrix_rank(gram, tol=_RANK_TOL * max(1.0, float(np.abs(gram).max())))
    if rank < n_cols:
        raise SingularDesign(
            f"CLR design is rank deficient ({rank} < {n_cols}); "
            "identical compositions across catchments collapse the columns"
        )
    coef = np.linalg.solve(gram, design.T @ y)

    fitted = (design @ coef).reshape(n, t_len)
    baselines = np.full(n_cat, np.nan)
    for k in keep:
        baselines[k] = coef[col_of_baseline[k]]

    return FitResult(
        method="clr",
        site_ids=panel.site_ids,
        categories=dataset.categories,
        map_labels=None,
        params=None,
        baselines=baselines,
        fitted=fitted,
        sse=sum_squared_error(values, fitted),
        diagnostics={
            "dropped_category": dataset.categories[drop],
            "n_basis": n_basis,
            "n_coefficients": n_cols,
            "intercept": float(coef[0]),
            "clr_totals": [float(v) for v in totals],
        },
    )


def sse(fit: FitResult, panel: AlignedPanel | Dataset) -> float:
    """Sum of squared errors of a fit against the aligned observations."""
    if isinstance(panel, Dataset):
        panel = align_panel(panel)
    if fit.fitted.shape != panel.values.shape:
        raise AlignmentMismatch(
            f"fitted {fit.fitted.shape} does not align with observations {panel.values.shape}"
        )
    if fit.site_ids != panel.site_ids:
        raise AlignmentMismatch("fit and panel site orders differ")
    return sum_squared_error(panel.values, fit.fitted)


@dataclass(frozen=True)
class ComparisonTable:
    """Per-category baselines for several models plus an SSE footer."""

    categories: tuple[str, ...]  # sorted ascending by the first model's baselines
    models: tuple[str, ...]
    baselines: np.ndarray  # (K, n_models), NaN where a model has no estimate
    sse: tuple[float, ...]

    def __post_init__(self):
        self.baselines.setflags(write=False)

    def to_csv(self) -> str:
        lines = ["category," + ",".join(self.models)]
        for r, cat in enumerate(self.categories):
            cells = ["" if np.isnan(v) else repr(float(v)) for v in self.baselines[r]]
            lines.append(",".join([cat, *cells]))
        lines.append(",".join(["SSE", *(repr(float(v)) for v in self.sse)]))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len("category"), max((len(c) for c in self.categories), default=0)) + 2
        cols = [max(len(m), 10) + 2 for m in self.models]
        out = ["category".ljust(width) + "".join(m.rjust(w) for m, w in zip(self.models, cols))]
        for r, cat in enumerate(self.categories):
            row = cat.ljust(width)
            for v, w in zip(self.baselines[r], cols):
                row += ("-" if np.isnan(v) else f"{v:.2f}").rjust(w)
            out.append(row)
        out.append("-" * (width + sum(cols)))
        out.append("SSE".ljust(width) + "".join(f"{v:.2f}".rjust(w) for v, w in zip(self.sse, cols)))
        return "\n".join(out) + "\n"


def compare_models(fits: list[FitResult], category_names: list[str] | None = None) -> ComparisonTable:
    """Line up per-category baselines across fits, sorted by the first fit.

    The first fit should be a mixture model; rows are ordered by its
    baselines ascending (NaN last). All fits must share the category set.
    """
    if len(fits) < 2:
        raise CategoryMismatch(f"need at least 2 fits to compare, got {len(fits)}")
    cats = tuple(category_names) if category_names is not None else fits[0].categories
    for f in fits:
        if tuple(f.categories) != cats:
            raise CategoryMismatch(f"fit {f.method!r} categories {f.categories} != {cats}")
        if len(f.baselines) != len(cats):
            raise CategoryMismatch(f"fit {f.method!r} has {len(f.baselines)} baselines for {len(cats)} categories")

    first = fits[0].baselines
    order = sorted(range(len(cats)), key=lambda k: (np.isnan(first[k]), first[k]))
    baselines = np.column_stack([f.baselines for f in fits])[order]
    return ComparisonTable(
        categories=tuple(cats[k] for k in order),
        models=tuple(f.method for f in fits),
        baselines=baselines,
        sse=tuple(float(f.sse) for f in fits),
    )
