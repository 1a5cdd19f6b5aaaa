"""Bayesian hierarchical estimator: four-block Gibbs over the hidden field.

Per sweep the sampler updates, in order:

1. the label field by a sequential single-site pass (likelihood of the
   whole site series times the exp(delta * matching-neighbor-count) prior),
2. the per-group basis functions re-aggregated from the new labels,
3. the component mean-curve coefficients (conjugate normal draws around
   the weighted least-squares estimates),
4. the noise variances (conjugate inverse-gamma), and
5. the field interaction strength via the exchange update.

Everything is driven by one ``numpy`` generator, so a chain is a pure
function of (data, config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import AlignedPanel, Dataset, align_panel
from .errors import EmptyChain, LengthMismatch, SingularDesign
from .lattice import Adjacency, neighbors_of
from .model import FitResult, MixtureParams, fitted_from_labels, sum_squared_error
from .nem import _category_names, _hard_responsibilities, init_features, kmeans_labels, loglik_matrix, m_step
from .potts import LabelField, PottsParams, exchange_update_delta
from .rngutil import substream
from .seasonal import BasisSet, SiteBasis, basis_from_labels, decompose_panel

_RIDGE = 1e-10
_DIFFUSE_VARIANCE_FACTOR = 10.0


@dataclass(frozen=True)
class GibbsConfig:
    """Sampler settings; ``a``/``b`` are the inverse-gamma hyperparameters."""

    sweeps: int = 1000
    burn_in: int = 200
    thin: int = 1
    a: float = 2.0
    b: float = 1.0
    delta_proposal_sd: float = 0.2
    seed: int = 0
    shared_variance: bool = False
    delta_prior: tuple[float, float] = (0.0, 3.0)
    delta_init: float = 0.5
    aux_sweeps: int = 50
    # freeze switches let tests target one block in isolation
    update_params: bool = True
    update_delta: bool = True
    update_basis: bool = True

    def __post_init__(self):
        if not 0 <= self.burn_in < self.sweeps:
            raise ValueError(f"burn_in {self.burn_in} must be < sweeps {self.sweeps}")
        if self.a <= 0 or self.b <= 0:
            raise ValueError("inverse-gamma hyperparameters must be positive")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class PosteriorChain:
    """Retained post-burn-in states of one Gibbs run."""

    site_ids: tuple[str, ...]
    n_components: int
    sweep_indices: np.ndarray  # (R,)
    labels: np.ndarray  # (R, n)
    mu0: np.ndarray  # (R, K)
    b_trend: np.ndarray  # (R, K)
    b_seas: np.ndarray  # (R, K)
    nu: np.ndarray  # (R, K)
    delta: np.ndarray  # (R,)
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.sweep_indices)

    def to_ndjson(self) -> str:
        import json

        rows = []
        for r in range(len(self)):
            rows.append(
                json.dumps(
                    {
                        "sweep": int(self.sweep_indices[r]),
                        "labels": [int(v) for v in self.labels[r]],
                        "mu0": [float(v) for v in self.mu0[r]],
                        "b_trend": [float(v) for v in self.b_trend[r]],
                        "b_seas": [float(v) for v in self.b_seas[r]],
                        "nu": [float(v) for v in self.nu[r]],
                        "delta": float(self.delta[r]),
                    },
                    sort_keys=True,
                )
            )
        return "\n".join(rows)


def concat_chains(chains: list[PosteriorChain]) -> PosteriorChain:
    """Pool the retained states of several chains (for pooled summaries)."""
    if not chains:
        raise EmptyChain("no chains to concatenate")
    first = chains[0]
    for c in chains[1:]:
        if c.site_ids != first.site_ids or c.n_components != first.n_components:
            raise LengthMismatch("chains disagree on sites or component count")
    return PosteriorChain(
        site_ids=first.site_ids,
        n_components=first.n_components,
        sweep_indices=np.concatenate([c.sweep_indices for c in chains]),
        labels=np.vstack([c.labels for c in chains]),
        mu0=np.vstack([c.mu0 for c in chains]),
        b_trend=np.vstack([c.b_trend for c in chains]),
        b_seas=np.vstack([c.b_seas for c in chains]),
        nu=np.vstack([c.nu for c in chains]),
        delta=np.concatenate([c.delta for c in chains]),
        diagnostics={"n_chains": len(chains)},
    )


def split_rhat(chain_values: list[np.ndarray]) -> float:
    """Split-half potential scale reduction across chains for one scalar."""
    halves = []
    for v in chain_values:
        v = np.asarray(v, dtype=float)
        h = len(v) // 2
        if h < 2:
            return float("nan")
        halves.extend([v[:h], v[h : 2 * h]])
    n = min(len(h) for h in halves)
    stacked = np.vstack([h[:n] for h in halves])
    m = stacked.shape[0]
    within = stacked.var(axis=1, ddof=1).mean()
    between = n * stacked.mean(axis=1).var(ddof=1)
    if within <= 0:
        return 1.0 if between <= 0 else float("inf")
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def sample_noise_variance(
    residuals: np.ndarray, n: int, cfg: GibbsConfig, rng: np.random.Generator
) -> float:
    """One draw of a noise variance from its inverse-gamma full conditional.

    Shape ``n/2 + a`` and scale ``sum(residuals^2)/2 + b``; with ``n = 0``
    this is a draw from the prior.
    """
    shape = 0.5 * n + cfg.a
    scale = 0.5 * float(np.dot(residuals, residuals)) + cfg.b
    return scale / rng.gamma(shape)


def sample_component_mean(
    values: np.ndarray,
    design: np.ndarray,
    nu: float,
    rng: np.random.Generator,
    fallback_mean: float = 0.0,
) -> np.ndarray:
    """Draw mean-curve coefficients around their weighted LS estimate.

    Each coefficient is drawn independently from a normal centred on the
    least-squares solution with variance ``nu`` times the corresponding
    diagonal entry of the inverted normal matrix; with a single intercept
    column this is exactly ``N(mean(values), nu / n)``.

    An empty ``values`` triggers the diffuse fallback: the first (level)
    coefficient is drawn from ``N(fallback_mean, 10 * nu)`` and the rest
    from ``N(0, 10 * nu)``.
    """
    n_coef = design.shape[1]
    if len(values) == 0:
        centre = np.zeros(n_coef)
        centre[0] = fallback_mean
        return centre + np.sqrt(_DIFFUSE_VARIANCE_FACTOR * nu) * rng.standard_normal(n_coef)
    if len(values) != design.shape[0]:
        raise LengthMismatch(f"{len(values)} values for design {design.shape}")
    gram = design.T @ design
    try:
        gram_inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        gram_inv = np.linalg.inv(gram + _RIDGE * np.eye(n_coef))
    estimate = gram_inv @ (design.T @ values)
    if not np.all(np.isfinite(estimate)):
        raise SingularDesign("non-finite least-squares estimate")
    sd = np.sqrt(np.clip(nu * np.diag(gram_inv), 0.0, None))
    return estimate + sd * rng.standard_normal(n_coef)


def site_label_weights(
    loglik_row: np.ndarray, delta: float, neighbor_labels: np.ndarray, n_components: int
) -> np.ndarray:
    """Full-conditional label weights for one site.

    ``w_k ∝ exp(loglik_k + delta * #{neighbors holding label k})``,
    normalized to sum to 1.
    """
    logw = np.asarray(loglik_row, dtype=float).copy()
    for lab in np.asarray(neighbor_labels):
        logw[int(lab)] += delta
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def sample_labels(
    panel: AlignedPanel,
    params: MixtureParams,
    basis: BasisSet,
    delta: float,
    a: Adjacency,
    current: LabelField,
    rng: np.random.Generator,
    loglik: np.ndarray | None = None,
) -> LabelField:
    """Sequential single-site label sweep in ascending site order.

    Each site draws its label from :func:`site_label_weights`, where the
    neighbor counts see the labels already updated earlier in the same
    sweep. ``loglik`` may be passed to reuse a precomputed matrix.
    """
    if current.n != a.n:
        raise LengthMismatch(f"{current.n} labels for {a.n} cells")
    ll = loglik if loglik is not None else loglik_matrix(panel.values, params, basis)
    n, n_comp = ll.shape
    labels = current.labels.copy()
    nbrs = [neighbors_of(a, i) for i in range(n)]
    for i in range(n):
        w = site_label_weights(ll[i], delta, labels[nbrs[i]], n_comp)
        labels[i] = rng.choice(n_comp, p=w)
    return LabelField(labels, n_comp)


def run_gibbs(
    dataset: Dataset | AlignedPanel,
    a: Adjacency,
    n_components: int,
    cfg: GibbsConfig,
    period: int = 52,
    init_params: MixtureParams | None = None,
    init_labels: np.ndarray | None = None,
    init_basis: BasisSet | None = None,
    site_bases: list[SiteBasis] | None = None,
) -> PosteriorChain:
    """Run the four-block sampler and return the retained states.

    Labels initialize from k-means on per-site summary features unless
    given explicitly. ``cfg.update_*`` switches freeze individual blocks
    (used by the validation suite to compare single blocks against exact
    enumerations); frozen blocks keep their initial values.
    """
    panel = dataset if isinstance(dataset, AlignedPanel) else align_panel(dataset)
    if panel.n_sites != a.n:
        raise LengthMismatch(f"{panel.n_sites} sites for {a.n} cells")
    needs_bases = cfg.update_basis or init_basis is None or init_labels is None or init_params is None
    if site_bases is None and needs_bases:
        site_bases = decompose_panel(panel.values, panel.site_ids, period)

    rng = substream(cfg.seed, "gibbs")
    if init_labels is None:
        feats = init_features(site_bases)
        init_labels = kmeans_labels(feats, n_components, int(substream(cfg.seed, "gibbs-init").integers(2**31)))
    labels = LabelField(np.asarray(init_labels, dtype=np.int64), n_components)

    basis = init_basis if init_basis is not None else basis_from_labels(site_bases, labels.labels, n_components)
    if init_params is not None:
        params = init_params
    else:
        params = m_step(panel, _hard_responsibilities(labels.labels, n_components), basis)
    delta = PottsParams(cfg.delta_init)

    n_retained = (cfg.sweeps - cfg.burn_in + cfg.thin - 1) // cfg.thin
    chain = PosteriorChain(
        site_ids=panel.site_ids,
        n_components=n_components,
        sweep_indices=np.empty(n_retained, dtype=np.int64),
        labels=np.empty((n_retained, panel.n_sites), dtype=np.int64),
        mu0=np.empty((n_retained, n_components)),
        b_trend=np.empty((n_retained, n_components)),
        b_seas=np.empty((n_retained, n_components)),
        nu=np.empty((n_retained, n_components)),
        delta=np.empty(n_retained),
    )

    global_mean = float(panel.values.mean())
    t_len = panel.n_times
    ll = loglik_matrix(panel.values, params, basis)
    ll_stale = False
    delta_accepts = 0
    delta_moves = 0
    empty_component_draws = 0
    kept = 0

    for sweep in range(cfg.sweeps):
        if ll_stale:
            ll = loglik_matrix(panel.values, params, basis)
            ll_stale = False
        labels = sample_labels(panel, params, basis, delta.delta, a, labels, rng, loglik=ll)

        if cfg.update_basis:
            basis = basis_from_labels(site_bases, labels.labels, n_components, previous=basis)
            ll_stale = True

        if cfg.update_params:
            mu0 = np.empty(n_components)
            b_trend = np.empty(n_components)
            b_seas = np.empty(n_components)
            members = [np.nonzero(labels.labels == k)[0] for k in range(n_components)]

            for k in range(n_components):
                design_one = basis.design(k)
                idx = members[k]
                if len(idx) == 0:
                    empty_component_draws += 1
                    values_k = np.empty(0)
                    design_k = design_one
                else:
                    values_k = panel.values[idx].ravel()
                    design_k = np.tile(design_one, (len(idx), 1))
                coef = sample_component_mean(values_k, design_k, float(params.nu[k]), rng, fallback_mean=global_mean)
                mu0[k], b_trend[k], b_seas[k] = coef

            curves = (
                mu0[:, None] + b_trend[:, None] * basis.trend + b_seas[:, None] * basis.seasonal
            )
            nu = params.nu.copy()
            if cfg.shared_variance:
                resid_all = panel.values - curves[labels.labels]
                nu[:] = sample_noise_variance(resid_all.ravel(), resid_all.size, cfg, rng)
            else:
                for k in range(n_components):
                    idx = members[k]
                    resid = (panel.values[idx] - curves[k][None, :]).ravel() if len(idx) else np.empty(0)
                    nu[k] = sample_noise_variance(resid, len(idx) * t_len, cfg, rng)

            counts = np.bincount(labels.labels, minlength=n_components).astype(float)
            pi = (counts + 1.0) / (counts.sum() + n_components)  # smoothed occupancy, reporting only
            params = MixtureParams(mu0, b_trend, b_seas, nu, pi)
            ll_stale = True

        if cfg.update_delta:
            new_delta = exchange_update_delta(
                labels, delta, a, cfg.delta_proposal_sd, cfg.delta_prior, rng, aux_sweeps=cfg.aux_sweeps
            )
            delta_moves += 1
            if new_delta.delta != delta.delta:
                delta_accepts += 1
            delta = new_delta

        if sweep >= cfg.burn_in and (sweep - cfg.burn_in) % cfg.thin == 0:
            chain.sweep_indices[kept] = sweep
            chain.labels[kept] = labels.labels
            chain.mu0[kept] = params.mu0
            chain.b_trend[kept] = params.b_trend
            chain.b_seas[kept] = params.b_seas
            chain.nu[kept] = params.nu
            chain.delta[kept] = delta.delta
            kept += 1

        if not np.all(np.isfinite(params.nu)) or np.any(params.nu <= 0):
            raise SingularDesign(f"non-positive noise variance at sweep {sweep}")

    chain.diagnostics = {
        "delta_acceptance": (delta_accepts / delta_moves) if delta_moves else None,
        "empty_component_draws": empty_component_draws,
        "n_retained": kept,
    }
    return chain


def map_estimate(
    chain: PosteriorChain,
    dataset: Dataset | AlignedPanel,
    period: int = 52,
    site_bases: list[SiteBasis] | None = None,
) -> FitResult:
    """Posterior-mode labels with matched-sweep parameter averages.

    Each site takes its most frequent label (ties break to the lowest
    index and are flagged). Component parameters average over the sweeps
    whose labels agree with the mode at all of that component's member
    sites, falling back to sweeps where any member matches, then to the
    whole chain. Fitted values use the basis re-aggregated from the mode
    labels.
    """
    if len(chain) == 0:
        raise EmptyChain("no retained sweeps")
    categories = _category_names(dataset, chain.n_components)
    panel = dataset if isinstance(dataset, AlignedPanel) else align_panel(dataset)
    if site_bases is None:
        site_bases = decompose_panel(panel.values, panel.site_ids, period)

    n = panel.n_sites
    n_comp = chain.n_components
    counts = np.zeros((n, n_comp), dtype=np.int64)
    for i in range(n):
        counts[i] = np.bincount(chain.labels[:, i], minlength=n_comp)
    map_labels = np.argmax(counts, axis=1)
    ties = [
        i for i in range(n)
        if np.count_nonzero(counts[i] == counts[i].max()) > 1
    ]

    mu0 = np.empty(n_comp)
    b_trend = np.empty(n_comp)
    b_seas = np.empty(n_comp)
    nu = np.empty(n_comp)
    for k in range(n_comp):
        member_sites = np.nonzero(map_labels == k)[0]
        if len(member_sites):
            all_match = np.all(chain.labels[:, member_sites] == k, axis=1)
            any_match = np.any(chain.labels[:, member_sites] == k, axis=1)
            sel = all_match if all_match.any() else (any_match if any_match.any() else np.ones(len(chain), bool))
        else:
            sel = np.ones(len(chain), dtype=bool)
        mu0[k] = chain.mu0[sel, k].mean()
        b_trend[k] = chain.b_trend[sel, k].mean()
        b_seas[k] = chain.b_seas[sel, k].mean()
        nu[k] = chain.nu[sel, k].mean()

    occupancy = np.bincount(map_labels, minlength=n_comp).astype(float)
    pi = (occupancy + 1.0) / (occupancy.sum() + n_comp)
    params = MixtureParams(mu0, b_trend, b_seas, nu, pi)
    basis = basis_from_labels(site_bases, map_labels, n_comp)
    fitted = fitted_from_labels(map_labels, params, basis)
    sse = sum_squared_error(panel.values, fitted)
    return FitResult(
        method="gibbs",
        site_ids=panel.site_ids,
        categories=categories,
        map_labels=map_labels,
        params=params,
        baselines=mu0.copy(),
        fitted=fitted,
        sse=sse,
        diagnostics={
            "label_ties": ties,
            "delta_posterior_mean": float(chain.delta.mean()),
            "delta_acceptance": chain.diagnostics.get("delta_acceptance"),
            "n_retained": len(chain),
        },
    )
