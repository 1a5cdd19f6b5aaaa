"""Shared parameter and result containers for the three estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seasonal import BasisSet


@dataclass(frozen=True)
class MixtureParams:
    """Per-component regression coefficients and noise levels.

    Component ``k`` predicts a site series as
    ``mu0[k] + b_trend[k] * trend_k(t) + b_seas[k] * seasonal_k(t)``
    with i.i.d. Gaussian noise of variance ``nu[k]``; ``pi`` are the
    mixing proportions.
    """

    mu0: np.ndarray
    b_trend: np.ndarray
    b_seas: np.ndarray
    nu: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        for arr in (self.mu0, self.b_trend, self.b_seas, self.nu, self.pi):
            np.asarray(arr).setflags(write=False)
        if np.any(self.nu <= 0):
            raise ValueError("noise variances must be positive")
        if abs(float(self.pi.sum()) - 1.0) > 1e-8 or np.any(self.pi <= 0):
            raise ValueError("mixing proportions must be positive and sum to 1")

    @property
    def n_components(self) -> int:
        return len(self.mu0)

    def component_curve(self, k: int, basis: BasisSet) -> np.ndarray:
        return self.mu0[k] + self.b_trend[k] * basis.trend[k] + self.b_seas[k] * basis.seasonal[k]

    def curves(self, basis: BasisSet) -> np.ndarray:
        """All component mean curves, shape (K, T)."""
        return (
            self.mu0[:, None]
            + self.b_trend[:, None] * basis.trend
            + self.b_seas[:, None] * basis.seasonal
        )


@dataclass
class FitResult:
    """Common output of the mixture, spatial-mixture and log-ratio fits."""

    method: str
    site_ids: tuple[str, ...]
    categories: tuple[str, ...]
    map_labels: np.ndarray | None
    params: MixtureParams | None
    baselines: np.ndarray  # per-category baseline level (NaN where undefined)
    fitted: np.ndarray  # (n_sites, T)
    sse: float
    diagnostics: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        obj = {
            "method": self.method,
            "site_ids": list(self.site_ids),
            "categories": list(self.categories),
            "map_labels": None if self.map_labels is None else [int(v) for v in self.map_labels],
            "baselines": [None if np.isnan(v) else float(v) for v in self.baselines],
            "sse": float(self.sse),
            "diagnostics": _plain(self.diagnostics),
        }
        if self.params is not None:
            obj["params"] = {
                "mu0": [float(v) for v in self.params.mu0],
                "b_trend": [float(v) for v in self.params.b_trend],
                "b_seas": [float(v) for v in self.params.b_seas],
                "nu": [float(v) for v in self.params.nu],
                "pi": [float(v) for v in self.params.pi],
            }
        else:
            obj["params"] = None
        return obj


def _plain(value):
    """Recursively convert numpy scalars/arrays to plain JSON-able types."""
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    return value


def fitted_from_labels(labels: np.ndarray, params: MixtureParams, basis: BasisSet) -> np.ndarray:
    """Per-site fitted series using each site's assigned component curve."""
    curves = params.curves(basis)
    return curves[np.asarray(labels)]


def sum_squared_error(observed: np.ndarray, fitted: np.ndarray) -> float:
    return float(np.sum((observed - fitted) ** 2))
