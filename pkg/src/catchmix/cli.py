"""Batch command-line front end.

Subcommands: ``validate``, ``simulate``, ``fit``, ``compare``,
``export-lattice``, ``export-map``, ``export-basis``. Exit codes: 0 on
success, 1 when the inputs fail validation, 2 when a computation fails.
Every failure emits a single JSON error record on stderr; all data goes
to files. Given the same arguments and ``--seed``, every output file is
byte-identical across runs.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import compare_models, fit_clr_model
from .dataset import Dataset, align_panel, load_dataset, save_dataset, validate_dataset
from .errors import INPUT_ERRORS, CatchmixError, ConfigError, EmptyBasis, MissingFile, NoPolygons
from .hbayes import GibbsConfig, PosteriorChain, concat_chains, map_estimate, run_gibbs, split_rhat
from .lattice import build_voronoi_adjacency, lattice_geojson
from .model import FitResult
from .nem import fit_nem
from .rngutil import substream
from .seasonal import basis_from_labels, decompose_panel
from .simgen import SimSpec, simulate_catchment


def _git_hash() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        return out.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _require_file(path: str, what: str) -> str:
    if not path or not os.path.exists(path):
        raise MissingFile(f"{what}: no such file: {path}")
    return path


# --- config handling --------------------------------------------------------

_METHOD_SCHEMA = {
    "nem": {
        "lambda": float, "k": int, "max_iters": int, "tol": float,
        "seed": int, "restarts": int, "period": int,
    },
    "gibbs": {
        "k": int, "sweeps": int, "burn_in": int, "thin": int, "a": float, "b": float,
        "delta_proposal_sd": float, "seed": int, "shared_variance": bool,
        "chains": int, "period": int,
    },
    "clr": {"n_basis": int, "period": int, "zero_policy": str},
}


def _load_config(path: str | None, method: str) -> dict:
    if path is None:
        return {}
    _require_file(path, "config")
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path}: expected a JSON object")
    schema = _METHOD_SCHEMA[method]
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"config {path}: unknown key {key!r} for method {method!r}")
        want = schema[key]
        ok = isinstance(value, bool) if want is bool else (
            isinstance(value, (int, float)) and not isinstance(value, bool)
            if want is float
            else isinstance(value, want) and not isinstance(value, bool)
        )
        if not ok:
            raise ConfigError(f"config {path}: key {key!r} must be {want.__name__}")
    return raw


def _merged(flag_value, config: dict, key: str, default):
    """CLI flag wins over config file wins over default."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


# --- subcommands ------------------------------------------------------------


def _load_inputs(args) -> Dataset:
    return load_dataset(
        _require_file(args.sites, "sites"),
        _require_file(args.observations, "observations"),
        _require_file(args.landuse, "landuse"),
        log_transform=getattr(args, "log", False),
    )


def _cmd_validate(args) -> int:
    d = _load_inputs(args)
    report = validate_dataset(d, period=args.period)
    text = report.to_jsonl()
    if args.report:
        _write_text(Path(args.report), text + ("\n" if text else ""))
    elif text:
        print(text)
    return 0 if report.empty else 1


def _cmd_simulate(args) -> int:
    spec = SimSpec(
        n_sites=args.sites,
        geometry=args.geometry,
        n_components=args.categories,
        delta=args.delta,
        period=args.period,
        n_times=args.t,
        dominant_share=args.dominant_share,
        noise_sd=tuple(args.noise_sd for _ in range(args.categories)),
        seed=args.seed,
    )
    sim = simulate_catchment(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(sim.dataset, str(out / "sites.csv"), str(out / "observations.csv"), str(out / "landuse.csv"))
    truth_lines = ["site_id,true_label"]
    truth_lines += [f"{s.site_id},{int(z)}" for s, z in zip(sim.dataset.sites, sim.truth.labels)]
    _write_text(out / "truth.csv", "\n".join(truth_lines) + "\n")
    spec_obj = {
        "n_sites": spec.n_sites, "geometry": spec.geometry, "k": spec.n_components,
        "delta": spec.delta, "baselines": list(spec.baselines),
        "trend_slopes": list(spec.trend_slopes), "seasonal_amps": list(spec.seasonal_amps),
        "phases": list(spec.phases), "noise_sd": list(spec.noise_sd),
        "period": spec.period, "t": spec.n_times,
        "dominant_share": spec.dominant_share, "seed": spec.seed,
        "categories": list(spec.category_names),
    }
    _write_text(out / "simspec.json", _dump_json(spec_obj))
    return 0


def _fit_output(fit: FitResult, panel, out: Path) -> None:
    obj = fit.to_json_obj()
    obj["grid"] = {
        "start": panel.start.isoformat(),
        "step_days": panel.step.days,
        "n_times": panel.n_times,
    }
    _write_text(out / "fit.json", _dump_json(obj))
    dates = [d.isoformat() for d in panel.dates()]
    lines = ["site_id,date,value"]
    for i, sid in enumerate(fit.site_ids):
        for j, day in enumerate(dates):
            lines.append(f"{sid},{day},{fit.fitted[i, j]!r}")
    _write_text(out / "fitted.csv", "\n".join(lines) + "\n")


def _run_chain_job(payload) -> PosteriorChain:
    panel, adjacency, n_components, cfg, period = payload
    return run_gibbs(panel, adjacency, n_components, cfg, period=period)


def _cmd_fit(args) -> int:
    config = _load_config(args.config, args.method)
    d = _load_inputs(args)
    panel = align_panel(d)
    adjacency = build_voronoi_adjacency(d.sites)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(_merged(args.seed, config, "seed", 0))
    period = int(_merged(args.period, config, "period", 52))
    n_components = int(_merged(args.k, config, "k", d.n_categories))

    if args.method == "nem":
        fit = fit_nem(
            d,
            adjacency,
            lam=float(_merged(args.penalty, config, "lambda", 1.0)),
            n_components=n_components,
            max_iters=int(_merged(args.max_iters, config, "max_iters", 100)),
            tol=float(_merged(args.tol, config, "tol", 1e-6)),
            seed=seed,
            restarts=int(_merged(args.restarts, config, "restarts", 10)),
            period=period,
        )
    elif args.method == "gibbs":
        n_chains = int(_merged(args.chains, config, "chains", 1))
        base = dict(
            sweeps=int(_merged(args.sweeps, config, "sweeps", 1000)),
            burn_in=int(_merged(args.burn_in, config, "burn_in", 200)),
            thin=int(_merged(args.thin, config, "thin", 1)),
            a=float(_merged(None, config, "a", 2.0)),
            b=float(_merged(None, config, "b", 1.0)),
            delta_proposal_sd=float(_merged(args.delta_proposal_sd, config, "delta_proposal_sd", 0.2)),
            shared_variance=bool(_merged(None, config, "shared_variance", False)),
        )
        cfgs = [
            GibbsConfig(seed=int(substream(seed, "chain", c).integers(2**31)), **base)
            for c in range(n_chains)
        ]
        jobs = [(panel, adjacency, n_components, cfg, period) for cfg in cfgs]
        if args.jobs > 1 and n_chains > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                chains = list(pool.map(_run_chain_job, jobs))
        else:
            chains = [_run_chain_job(j) for j in jobs]
        for c, chain in enumerate(chains):
            _write_text(out / f"chain_{c}.ndjson", chain.to_ndjson() + "\n")
        pooled = concat_chains(chains) if n_chains > 1 else chains[0]
        fit = map_estimate(pooled, d, period=period)
        if n_chains > 1:
            fit.diagnostics["split_rhat_delta"] = split_rhat([c.delta for c in chains])
            fit.diagnostics["split_rhat_mu0"] = [
                split_rhat([c.mu0[:, k] for c in chains]) for k in range(n_components)
            ]
    else:  # clr
        fit = fit_clr_model(
            d,
            n_basis=int(_merged(args.n_basis, config, "n_basis", 2)),
            period=period,
            zero_policy=str(_merged(None, config, "zero_policy", "replace")),
            panel=panel,
        )

    _fit_output(fit, panel, out)
    return 0


def _cmd_compare(args) -> int:
    fits = []
    for path in args.fit:
        _require_file(path, "fit")
        with open(path) as fh:
            obj = json.load(fh)
        baselines = np.array([np.nan if v is None else float(v) for v in obj["baselines"]])
        fits.append(
            FitResult(
                method=obj["method"],
                site_ids=tuple(obj["site_ids"]),
                categories=tuple(obj["categories"]),
                map_labels=None,
                params=None,
                baselines=baselines,
                fitted=np.zeros((0, 0)),
                sse=float(obj["sse"]),
            )
        )
    table = compare_models(fits)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "comparison.csv", table.to_csv())
    _write_text(out / "comparison.txt", table.to_text())
    return 0


def _cmd_export_lattice(args) -> int:
    d = _load_inputs(args)
    adjacency = build_voronoi_adjacency(d.sites)
    _write_text(Path(args.out), _dump_json(lattice_geojson(adjacency, d.sites)))
    return 0


def _read_fit_json(path: str) -> dict:
    _require_file(path, "fit")
    with open(path) as fh:
        return json.load(fh)


def _cmd_export_map(args) -> int:
    d = _load_inputs(args)
    fit = _read_fit_json(args.fit)
    if fit.get("map_labels") is None:
        raise NoPolygons("fit has no latent labels to map (CLR fits are not mappable)")
    adjacency = build_voronoi_adjacency(d.sites)
    if adjacency.cell_polygons is None:
        raise NoPolygons("lattice carries no polygons")
    labels = fit["map_labels"]
    categories = fit["categories"]
    mu0 = fit["params"]["mu0"] if fit.get("params") else [float("nan")] * len(categories)
    features = []
    for i, site in enumerate(d.sites):
        ring = [list(p) for p in adjacency.cell_polygons[i]]
        ring.append(list(adjacency.cell_polygons[i][0]))
        k = int(labels[i])
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {
                    "site_id": site.site_id,
                    "catchment_id": site.catchment_id,
                    "map_label": k,
                    "label_name": categories[k],
                    "baseline_mu0": float(mu0[k]),
                },
            }
        )
    features.sort(key=lambda f: (f["properties"]["baseline_mu0"], f["properties"]["site_id"]))
    geo = {"type": "FeatureCollection", "features": features}
    _write_text(Path(args.out), _dump_json(geo))
    return 0


def _cmd_export_basis(args) -> int:
    d = _load_inputs(args)
    fit = _read_fit_json(args.fit)
    if fit.get("map_labels") is None:
        raise EmptyBasis("fit has no latent labels, so no per-land-use basis exists")
    panel = align_panel(d)
    period = int(fit.get("grid", {}).get("period", args.period))
    site_bases = decompose_panel(panel.values, panel.site_ids, period)
    labels = np.asarray(fit["map_labels"], dtype=np.int64)
    basis = basis_from_labels(site_bases, labels, len(fit["categories"]))
    if basis.n_components == 0:
        raise EmptyBasis("no components in basis")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dates = [day.isoformat() for day in panel.dates()]
    for k, name in enumerate(fit["categories"]):
        lines = ["t,trend,seasonal"]
        for j, day in enumerate(dates):
            lines.append(f"{day},{basis.trend[k, j]!r},{basis.seasonal[k, j]!r}")
        _write_text(out / f"basis_{name}.csv", "\n".join(lines) + "\n")
    return 0


# --- argument parsing --------------------------------------------------------


def _add_input_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sites", required=True, help="sites.csv path")
    p.add_argument("--observations", required=True, help="observations.csv path")
    p.add_argument("--landuse", required=True, help="landuse.csv path")
    p.add_argument("--log", action="store_true", help="log-transform raw values at ingestion")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catchmix",
        description="Spatial mixture modelling of land-use influence on water-quality series",
    )
    parser.add_argument("--version", action="version", version=f"catchmix {__version__} ({_git_hash()})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check the input tables for fit-readiness")
    _add_input_flags(p)
    p.add_argument("--period", type=int, default=52)
    p.add_argument("--report", default=None, help="write the JSON-lines report here instead of stdout")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("simulate", help="generate a synthetic catchment with known truth")
    p.add_argument("--out", required=True)
    p.add_argument("--sites", type=int, default=16)
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--t", type=int, default=260)
    p.add_argument("--period", type=int, default=52)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--dominant-share", type=float, default=0.4)
    p.add_argument("--geometry", choices=["grid", "uniform"], default="grid")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit one model to the input tables")
    _add_input_flags(p)
    p.add_argument("--method", choices=["nem", "gibbs", "clr"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON config; explicit flags win")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--period", type=int, default=None)
    p.add_argument("--k", type=int, default=None, help="number of mixture components")
    p.add_argument("--lambda", dest="penalty", type=float, default=None, help="nem: spatial penalty weight")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--sweeps", type=int, default=None)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--delta-proposal-sd", type=float, default=None)
    p.add_argument("--n-basis", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for multi-chain runs")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("compare", help="tabulate baselines and SSE across fitted models")
    p.add_argument("--fit", action="append", required=True, help="fit.json path (repeat; first = mixture)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("export-lattice", help="write the Voronoi tessellation as GeoJSON")
    _add_input_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_lattice)

    p = sub.add_parser("export-map", help="write the latent-label map as GeoJSON")
    _add_input_flags(p)
    p.add_argument("--fit", required=True, help="fit.json from a mixture fit")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_map)

    p = sub.add_parser("export-basis", help="write per-land-use basis functions as CSV")
    _add_input_flags(p)
    p.add_argument("--fit", required=True, help="fit.json from a mixture fit")
    p.add_argument("--out", required=True)
    p.add_argument("--period", type=int, default=52)
    p.set_defaults(func=_cmd_export_basis)

    return parser


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse errors and --help/--version
        code = exc.code if isinstance(exc.code, int) else 0
        return 1 if code not in (0,) else 0
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        _emit_error(exc)
        return 1
    except CatchmixError as exc:
        _emit_error(exc)
        return 2


def _emit_error(exc: Exception) -> None:
    record = {"error": type(exc).__name__, "detail": str(exc)}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
