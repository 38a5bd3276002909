"""Command-line front end: ``sdalgcp fit|predict|simulate|report``.

Configuration comes from a ``key=value`` file (``--config``) with flag
overrides. Every output embeds the config hash and master seed. Exit codes:
0 success, 1 finished with warnings, 2 error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from .covariance import PhiGrid, build_cache, cache_key, corr_matrix, factorize, load_cache, partition_hash, save_cache
from .errors import SDAError
from .geometry import load_partition
from .latent import LatentChainConfig, run_mala, write_trace_csv
from .mcml import FitResult, McmlConfig, fit
from .model import DataVector, ModelParams
from .predict import PredictionGrid, predict_regions, predict_surface, write_region_csv, write_surface
from .quadrature import (QuadratureConfig, adaptive_partition_quadrature, build_quadrature, weight_functions,
                         write_quadrature_csv)
from .raster import read_ascii_grid, region_mass
from .seeding import rng_for
from .sim import SimScenario, make_setup, run_replicate, summarize

log = logging.getLogger("sdalgcp")

EXIT_OK, EXIT_WARN, EXIT_ERROR = 0, 1, 2

DEFAULTS = {
    "partition": None,
    "counts": None,
    "covariates": None,
    "population": None,
    "per_m2": False,
    "weighting": "population",
    "delta": None,
    "gamma": 0.55,
    "quad_mode": "non-adaptive",
    "batch_size_k": 20,
    "rel_tol_eps": 1e-3,
    "phi_grid": "50:2000:100",
    "kappa": 0.5,
    "n_iter": 110_000,
    "burn_in": 10_000,
    "thin": 10,
    "outer_iters": 3,
    "param_tol": 1e-3,
    "cache": None,
    "spacing": 300.0,
    "bbox": None,
    "thresholds": "",
    "seed": 0,
    "threads": 1,
    "out": "out",
}
# keys that never change numerical results and are left out of the config hash
_UNHASHED = ("out", "threads", "cache")


class CliError(SDAError):
    module = "cli"


class Warnings(list):
    def add(self, msg: str):
        log.warning(msg)
        self.append(msg)


def _coerce(key: str, value: str):
    default = DEFAULTS.get(key)
    if value.lower() in ("none", ""):
        return None if key != "thresholds" else ""
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float) or key == "delta":
        return float(value)
    return value


def read_config(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment. Relative paths resolve against the file."""
    out = {}
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CliError(f"{path}: expected key=value, got {raw.strip()!r}")
            key, value = key.strip().replace("-", "_"), value.strip()
            out[key] = value
    for key in ("partition", "counts", "covariates", "population", "cache"):
        if out.get(key) and not os.path.isabs(out[key]):
            out[key] = os.path.join(base, out[key])
    return out


def resolve(args, keys, base: dict | None = None) -> dict:
    """Defaults, then ``base`` (e.g. a fit's config echo), then the config file, then flags."""
    cfg = {k: DEFAULTS[k] for k in keys}
    for k, v in (base or {}).items():
        if k in cfg:
            cfg[k] = v
    if getattr(args, "config", None):
        for k, v in read_config(args.config).items():
            if k in cfg:
                cfg[k] = _coerce(k, v)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(cfg: dict, inputs: dict | None = None) -> str:
    payload = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    payload["inputs"] = inputs or {}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _stamp(cfg_hash: str, seed: int, extra: str = "") -> str:
    return f"config_hash={cfg_hash} seed={seed}" + (f" {extra}" if extra else "")


# ---------------------------------------------------------------------------
# input files


def _read_table(path) -> tuple:
    if not path or not os.path.exists(path):
        raise CliError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise CliError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], rows[1:]


def read_counts(path) -> dict:
    """``region_id,count[,offset]`` -> {id: (count, offset or None)}."""
    header, rows = _read_table(path)
    if header[:2] != ["region_id", "count"]:
        raise CliError(f"{path}: header must start with region_id,count")
    has_offset = len(header) > 2 and header[2] == "offset"
    out = {}
    for row in rows:
        rid = row[0].strip()
        if rid in out:
            raise CliError(f"{path}: duplicate region {rid!r}")
        try:
            count = float(row[1])
            offset = float(row[2]) if has_offset else None
        except (ValueError, IndexError):
            raise CliError(f"{path}: bad row for region {rid!r}: {row}") from None
        out[rid] = (count, offset)
    return out


def read_covariates(path) -> tuple:
    header, rows = _read_table(path)
    if header[0] != "region_id":
        raise CliError(f"{path}: first column must be region_id")
    vals = {}
    for row in rows:
        try:
            vals[row[0].strip()] = [float(v) for v in row[1:]]
        except ValueError:
            raise CliError(f"{path}: non-numeric covariate for region {row[0]!r}") from None
    return header[1:], vals


def _check_raster_covers(raster, partition):
    x0, y0, x1, y1 = partition.study_area_bbox
    rx0, ry0, rx1, ry1 = raster.extent
    tol = 1e-9 * max(abs(rx1), abs(ry1), 1.0)
    if x0 < rx0 - tol or y0 < ry0 - tol or x1 > rx1 + tol or y1 > ry1 + tol:
        raise CliError(f"extent mismatch: partition bbox {partition.study_area_bbox} "
                       f"not covered by population raster extent {raster.extent}")


def load_inputs(cfg: dict):
    for key in ("partition", "counts"):
        if not cfg.get(key):
            raise CliError(f"missing required setting {key!r}")
    if not os.path.exists(cfg["partition"]):
        raise CliError(f"input file not found: {cfg['partition']}")
    partition = load_partition(cfg["partition"])
    counts = read_counts(cfg["counts"])
    raster = None
    if cfg.get("population"):
        if not os.path.exists(cfg["population"]):
            raise CliError(f"input file not found: {cfg['population']}")
        raster = read_ascii_grid(cfg["population"])
        _check_raster_covers(raster, partition)
    if cfg["weighting"] not in ("population", "uniform"):
        raise CliError(f"unknown weighting {cfg['weighting']!r}")
    if cfg["weighting"] == "population" and raster is None:
        raise CliError("weighting=population needs a population raster")
    missing = [rid for rid in partition.ids if rid not in counts]
    extra = [rid for rid in counts if rid not in set(partition.ids)]
    if missing or extra:
        raise CliError(f"counts and partition disagree: missing {missing[:5]}, unknown {extra[:5]}")
    y = np.array([counts[rid][0] for rid in partition.ids])
    m = []
    for region in partition:
        off = counts[region.id][1]
        if off is None:
            if raster is None:
                raise CliError(f"region {region.id!r}: no offset column and no population raster")
            off = region_mass(raster, region, per_m2=cfg["per_m2"])
        m.append(off)
    columns = [np.ones(len(partition))]
    names = ()
    if cfg.get("covariates"):
        names, cov = read_covariates(cfg["covariates"])
        absent = [rid for rid in partition.ids if rid not in cov]
        if absent:
            raise CliError(f"covariates missing for regions {absent[:5]}")
        X = np.array([cov[rid] for rid in partition.ids])
        columns.extend(X.T)
        names = tuple(names)
    data = DataVector(y, np.array(m), np.column_stack(columns), tuple(partition.ids), names)
    return partition, raster, data


def _inputs_digest(cfg: dict) -> dict:
    return {k: file_digest(cfg[k]) for k in ("partition", "counts", "covariates", "population") if cfg.get(k)}


def _quad_config(cfg: dict) -> QuadratureConfig:
    return QuadratureConfig(delta=cfg["delta"], gamma=cfg["gamma"], mode=cfg["quad_mode"],
                            batch_size_k=cfg["batch_size_k"], rel_tol_eps=cfg["rel_tol_eps"])


def build_quads(cfg: dict, partition, raster, grid: PhiGrid):
    qcfg = _quad_config(cfg)
    if qcfg.mode == "adaptive":
        # refine at the smallest phi, where R(phi) is hardest to resolve
        wfs = weight_functions(partition, cfg["weighting"], raster, cfg["per_m2"])
        res = adaptive_partition_quadrature(partition, wfs, float(grid.values.min()), qcfg, cfg["seed"],
                                            cfg["weighting"])
        return res.sets
    return build_quadrature(partition, qcfg, cfg["weighting"], raster, seed=cfg["seed"], per_m2=cfg["per_m2"])


def chain_config(cfg: dict) -> LatentChainConfig:
    return LatentChainConfig(cfg["n_iter"], cfg["burn_in"], cfg["thin"])


# ---------------------------------------------------------------------------
# commands

FIT_KEYS = ("partition", "counts", "covariates", "population", "per_m2", "weighting", "delta", "gamma", "quad_mode",
            "batch_size_k", "rel_tol_eps", "phi_grid", "kappa", "n_iter", "burn_in", "thin", "outer_iters",
            "param_tol", "cache", "seed", "threads", "out")
PREDICT_KEYS = FIT_KEYS + ("spacing", "bbox", "thresholds")


def cmd_fit(cfg: dict) -> int:
    warnings = Warnings()
    os.makedirs(cfg["out"], exist_ok=True)
    partition, raster, data = load_inputs(cfg)
    grid = PhiGrid.parse(cfg["phi_grid"])
    inputs = _inputs_digest(cfg)
    chash = config_hash(cfg, inputs)
    seed = cfg["seed"]
    quads = build_quads(cfg, partition, raster, grid)
    cache = None
    key = cache_key(partition_hash(partition), seed, grid, chash)
    if cfg.get("cache") and os.path.exists(cfg["cache"]):
        cache = load_cache(cfg["cache"], key)
        if cache is None:
            log.info("cache %s is stale; rebuilding", cfg["cache"])
    if cache is None:
        cache = build_cache(quads, grid, cfg["kappa"], cfg["threads"])
        if cfg.get("cache"):
            save_cache(cache, cfg["cache"], key)
    chain = chain_config(cfg)
    mcfg = McmlConfig(n_samples=chain.n_samples, outer_iters=cfg["outer_iters"], param_tol=cfg["param_tol"])
    result = fit(data, cache, mcfg, chain, seed=seed, threads=cfg["threads"], keep_draws=True)
    diag = result.diagnostics
    if not result.converged:
        warnings.add("MCML fit did not converge")
    if diag["degenerate_phi"]:
        warnings.add(f"importance weights degenerate at {len(diag['degenerate_phi'])} phi value(s)")
    if not diag["hessian_negative_definite"]:
        warnings.add("Hessian at the optimum is not negative definite; standard errors unavailable")
    if diag["sigma2_at_bound"]:
        warnings.add("sigma2 estimate at its bound")
    if result.draws.warning:
        warnings.add(f"MALA acceptance rate {result.draws.acceptance_rate:.3f} outside [0.1, 0.9]")
    if any(result.phi_ci_censored):
        warnings.add("phi confidence interval censored at the grid edge")
    stamp = _stamp(chash, seed)
    doc = {
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
        "config_hash": chash,
        "seed": seed,
        "config": {k: v for k, v in cfg.items() if k not in _UNHASHED},
        "inputs": inputs,
        "quadrature": {"points": [len(q) for q in quads], "weighting": cfg["weighting"]},
        "result": result.to_dict(),
        "warnings": list(warnings),
    }
    with open(os.path.join(cfg["out"], "fit.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(cfg["out"], "profile.csv"), "w", newline="") as fh:
        fh.write(f"# {stamp}\n")
        w = csv.writer(fh)
        w.writerow(["phi", "loglik", "ess"])
        for (phi, ll), ess in zip(result.phi_profile, diag["profile_ess"]):
            w.writerow([repr(phi), repr(ll), repr(ess)])
    write_trace_csv(result.draws, os.path.join(cfg["out"], "trace.csv"), stamp)
    write_quadrature_csv(quads, os.path.join(cfg["out"], "quadrature.csv"), stamp)
    est = result.estimates
    print(f"phi={est.phi:g} sigma2={est.sigma2:.6g} beta={np.array2string(est.beta, precision=6)} "
          f"phi_ci=({result.phi_ci_95[0]:.6g}, {result.phi_ci_95[1]:.6g}) converged={result.converged}")
    return EXIT_WARN if warnings else EXIT_OK


def _parse_bbox(text):
    if text is None or isinstance(text, tuple):
        return text
    parts = [float(v) for v in str(text).split(",")]
    if len(parts) != 4 or not (parts[0] < parts[2] and parts[1] < parts[3]):
        raise CliError(f"bbox must be x0,y0,x1,y1 with x0<x1, y0<y1; got {text!r}")
    return tuple(parts)


def load_fit(fit_path: str) -> dict:
    if not os.path.exists(fit_path):
        raise CliError(f"fit file not found: {fit_path}")
    with open(fit_path) as fh:
        doc = json.load(fh)
    if "result" not in doc:
        raise CliError(f"{fit_path}: not a fit file")
    return doc


def cmd_predict(cfg: dict, fit_path: str) -> int:
    warnings = Warnings()
    doc = load_fit(fit_path)
    os.makedirs(cfg["out"], exist_ok=True)
    partition, raster, data = load_inputs(cfg)
    result = FitResult.from_dict(doc["result"])
    params = result.estimates
    grid_phi = PhiGrid.parse(cfg["phi_grid"])
    quads = build_quads(cfg, partition, raster, grid_phi)
    entry = factorize(corr_matrix(quads, params.phi, params.kappa), params.phi)
    seed = cfg["seed"]
    chash = config_hash(cfg, _inputs_digest(cfg))
    draws = run_mala(data, params, entry, chain_config(cfg), seed=rng_for(seed, "predict", "mala"))
    if draws.warning:
        warnings.add(f"MALA acceptance rate {draws.acceptance_rate:.3f} outside [0.1, 0.9]")
    bbox = _parse_bbox(cfg.get("bbox"))
    if bbox is not None:
        px0, py0, px1, py1 = partition.study_area_bbox
        if bbox[2] <= px0 or bbox[0] >= px1 or bbox[3] <= py0 or bbox[1] >= py1:
            raise CliError(f"extent mismatch: prediction bbox {bbox} does not overlap the partition "
                           f"{partition.study_area_bbox}")
    spacing = float(cfg["spacing"])
    if not spacing > 0:
        raise CliError("spacing must be positive")
    grid = PredictionGrid.regular(partition, spacing, bbox)
    if len(grid) == 0:
        raise CliError("extent mismatch: no prediction cell centre falls inside the partition")
    thresholds = [float(t) for t in str(cfg.get("thresholds") or "").split(",") if t.strip()]
    surface = predict_surface(draws, result, grid, quads, data, entry, seed=rng_for(seed, "predict", "surface"),
                              thresholds=thresholds)
    stamp = _stamp(chash, seed, f"fit={os.path.basename(fit_path)}")
    paths = write_surface(surface, cfg["out"], "risk")
    with open(os.path.join(cfg["out"], "risk_manifest.json"), "w") as fh:
        json.dump({"config_hash": chash, "seed": seed, "fit_config_hash": doc.get("config_hash"),
                   "spacing": spacing, "origin": list(grid.origin), "shape": list(grid.mask.shape),
                   "grids": [os.path.basename(p) for p in paths], "thresholds": thresholds}, fh, indent=2)
        fh.write("\n")
    regions = predict_regions(draws, data)
    write_region_csv(regions, os.path.join(cfg["out"], "regions.csv"), stamp)
    print(f"wrote {len(paths)} grid(s) of shape {grid.mask.shape} and {len(regions.ids)} region predictions")
    return EXIT_WARN if warnings else EXIT_OK


def scenario_from(args) -> SimScenario:
    sc = SimScenario()
    if args.config:
        with open(args.config) as fh:
            sc = SimScenario.from_text(fh.read())
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.weighting is not None:
        over["weighting"] = args.weighting
    if args.phi_grid is not None:
        over["phi_grid"] = args.phi_grid
    return replace(sc, **over) if over else sc


def cmd_simulate(scenario: SimScenario, out: str, threads: int = 1) -> int:
    warnings = Warnings()
    os.makedirs(os.path.join(out, "replicates"), exist_ok=True)
    chash = hashlib.sha256(scenario.to_text().encode()).hexdigest()[:16]
    seed = scenario.seed
    setup = make_setup(scenario)
    idx = list(range(scenario.B))
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(threads) as pool:
            results = list(pool.map(run_replicate, [setup] * len(idx), idx))
    else:
        results = [run_replicate(setup, b) for b in idx]
    ids = setup.partition.ids
    m = np.bincount(setup.cell_owner[setup.cell_owner >= 0],
                    weights=setup.raster.clean_values().ravel()[setup.cell_owner >= 0], minlength=len(ids))
    rows = []
    for r in results:
        b = r["replicate"]
        with open(os.path.join(out, "replicates", f"counts_{b:03d}.csv"), "w", newline="") as fh:
            fh.write(f"# {_stamp(chash, seed, f'replicate={b}')}\n")
            w = csv.writer(fh)
            w.writerow(["region_id", "count", "offset"])
            for rid, c, off in zip(ids, r["counts"], m):
                w.writerow([rid, int(c), repr(float(off))])
        res = r["fit"]
        est = res.estimates
        reg, cont = summarize([r])
        if not res.converged:
            warnings.add(f"replicate {b}: fit did not converge")
        rows.append([b, int(r["counts"].sum()), r["dropped"], repr(est.phi), repr(est.sigma2),
                     repr(float(est.beta[0])), repr(res.phi_ci_95[0]), repr(res.phi_ci_95[1]), int(res.converged),
                     repr(reg.cp), repr(cont.cp)])
    with open(os.path.join(out, "replicates.csv"), "w", newline="") as fh:
        fh.write(f"# {_stamp(chash, seed)}\n")
        w = csv.writer(fh)
        w.writerow(["replicate", "total_count", "dropped", "phi_hat", "sigma2_hat", "beta0_hat", "phi_lo95",
                    "phi_hi95", "converged", "region_cp", "continuous_cp"])
        w.writerows(rows)
    reports = summarize(results)
    with open(os.path.join(out, "metrics.csv"), "w", newline="") as fh:
        fh.write(f"# {_stamp(chash, seed)}\n")
        w = csv.writer(fh)
        w.writerow(["target", "bias", "rmse", "wpi", "cp"])
        for rep in reports:
            w.writerow([rep.target, repr(rep.bias), repr(rep.rmse), repr(rep.wpi), repr(rep.cp)])
    with open(os.path.join(out, "metrics.json"), "w") as fh:
        json.dump({"config_hash": chash, "seed": seed, "scenario": asdict(scenario),
                   "metrics": [rep.as_dict() for rep in reports]}, fh, indent=2)
        fh.write("\n")
    for rep in reports:
        print(f"{rep.target}: bias={rep.bias:.4g} rmse={rep.rmse:.4g} wpi={rep.wpi:.4g} cp={rep.cp:.4f}")
    return EXIT_WARN if warnings else EXIT_OK


def cmd_report(paths) -> int:
    for path in paths:
        if not os.path.exists(path):
            raise CliError(f"file not found: {path}")
        with open(path) as fh:
            doc = json.load(fh)
        print(f"== {path} (config_hash={doc.get('config_hash')}, seed={doc.get('seed')})")
        if "result" in doc:
            r = doc["result"]
            est = r["estimates"]
            se = [math.sqrt(v) if v >= 0 else float("nan") for v in np.diag(r["beta_cov"])]
            for i, (b, s) in enumerate(zip(est["beta"], se)):
                print(f"beta[{i}] = {b:.6g} (se {s:.4g})")
            print(f"sigma2 = {est['sigma2']:.6g}  95% CI ({r['sigma2_ci_95'][0]:.4g}, {r['sigma2_ci_95'][1]:.4g})")
            print(f"phi = {est['phi']:g}  95% profile CI ({r['phi_ci_95'][0]:.6g}, {r['phi_ci_95'][1]:.6g})"
                  + ("  [censored]" if any(r["phi_ci_censored"]) else ""))
            print(f"converged = {r['converged']}  N = {r['monte_carlo_N']}")
            for w in doc.get("warnings", []):
                print(f"warning: {w}")
        elif "metrics" in doc:
            print(f"{'target':<18}{'bias':>12}{'rmse':>12}{'wpi':>12}{'cp':>8}")
            for m in doc["metrics"]:
                print(f"{m['target']:<18}{m['bias']:>12.4g}{m['rmse']:>12.4g}{m['wpi']:>12.4g}{m['cp']:>8.4f}")
        else:
            raise CliError(f"{path}: neither a fit nor a metrics file")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdalgcp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sim=False):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--threads", type=int, help="worker pool size")
        p.add_argument("--weighting", choices=("population", "uniform"))
        p.add_argument("--phi-grid", dest="phi_grid", help="lo:hi:n")
        p.add_argument("--out", help="output directory")
        if not sim:
            p.add_argument("--partition")
            p.add_argument("--counts")
            p.add_argument("--covariates")
            p.add_argument("--population")

    common(sub.add_parser("fit", help="fit the model by Monte Carlo maximum likelihood"))
    pp = sub.add_parser("predict", help="predict the risk surface and region incidence")
    common(pp)
    pp.add_argument("--fit", dest="fit_path", required=True, help="fit.json from a previous fit")
    pp.add_argument("--spacing", type=float)
    pp.add_argument("--bbox", help="x0,y0,x1,y1")
    pp.add_argument("--thresholds", help="comma-separated exceedance thresholds")
    common(sub.add_parser("simulate", help="run the simulation study"), sim=True)
    rp = sub.add_parser("report", help="summarize fit.json or metrics.json files")
    rp.add_argument("paths", nargs="+")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            return cmd_fit(resolve(args, FIT_KEYS))
        if args.command == "predict":
            cfg = resolve(args, PREDICT_KEYS, base=load_fit(args.fit_path).get("config"))
            return cmd_predict(cfg, args.fit_path)
        if args.command == "simulate":
            out = args.out or DEFAULTS["out"]
            return cmd_simulate(scenario_from(args), out, args.threads or 1)
        return cmd_report(args.paths)
    except SDAError as exc:
        print(f"error [{exc.module}]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, KeyError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error [{_origin(exc)}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _origin(exc: BaseException) -> str:
    """Innermost package module in the traceback."""
    here = os.path.dirname(os.path.abspath(__file__))
    name = "cli"
    tb = exc.__traceback__
    while tb is not None:
        path = os.path.abspath(tb.tb_frame.f_code.co_filename)
        if os.path.dirname(path) == here:
            name = os.path.splitext(os.path.basename(path))[0]
        tb = tb.tb_next
    return name


if __name__ == "__main__":
    sys.exit(main())
