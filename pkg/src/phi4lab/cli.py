"""Batch entry point: parse a run config, execute one experiment, persist
results.

Configs are plain text with named blocks::

    model {
      g = 1.0
      a = -1.0
      beta = 0.5
      d = 2
      shape = box
      n = 2
    }
    sampler {
      type = rc
      sweeps = 1000
      seed = 7
    }
    experiment {
      name = observable
      observable = m
    }
    output {
      path = results.csv
    }

The schema is strict: unknown blocks or keys are rejected with the offending
name and line number, and the physical parameters g, a, beta have no
defaults. Artifacts are a results CSV (byte-identical across reruns of the
same config + seed), a JSON summary (parameters, seed, version, wall time),
and optional plot-ready series files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, experiments
from .experiments import (EstimateResult, MCMCSpec, SamplerSpec, ScalingFit,
                          estimate_beta_c, estimate_m_star,
                          estimate_observable, estimate_surface_tension,
                          magnetization_observable, scan_ldp,
                          scan_local_uniqueness, collect_rc_states,
                          spectral_gap_upper, truncation_diagnostics,
                          spin_values)
from .lattice import build_region, make_boundary_field
from .oracle import (MAX_ORACLE_VERTICES, exact_rc_probability,
                     exact_spin_expectation, partition_identities)
from .spin import SCHEDULES, ModelParams

CSV_COLUMNS = ("experiment", "series", "x", "estimate", "stderr",
               "n_samples", "tau_int", "flags")


class ConfigError(ValueError):
    """Raised for parse and validation failures; the message carries the
    offending key and, when known, its line."""


# ---------------------------------------------------------------------------
# config syntax


def _coerce(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in text:
        return [_coerce(p.strip()) for p in text.split(",") if p.strip()]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> dict:
    """Nested dict from block syntax; scalar values are coerced to
    bool/int/float where they parse as such, comma lists to lists."""
    out: dict = {}
    block: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.endswith("{"):
            name = line[:-1].strip()
            if block is not None:
                raise ConfigError(f"line {lineno}: block {name!r} opened inside "
                                  f"block {block!r}")
            if not name.isidentifier():
                raise ConfigError(f"line {lineno}: bad block name {name!r}")
            if name in out:
                raise ConfigError(f"line {lineno}: duplicate block {name!r}")
            block = name
            out[block] = {}
        elif line == "}":
            if block is None:
                raise ConfigError(f"line {lineno}: unmatched '}}'")
            block = None
        else:
            if block is None:
                raise ConfigError(f"line {lineno}: {line.split('=')[0].strip()!r} "
                                  "outside any block")
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not key.isidentifier():
                raise ConfigError(f"line {lineno}: bad key {key!r}")
            if key in out[block]:
                raise ConfigError(f"line {lineno}: duplicate key {key!r} in "
                                  f"block {block!r}")
            if value == "":
                raise ConfigError(f"line {lineno}: key {key!r} has no value")
            out[block][key] = (_coerce(value), lineno)
    if block is not None:
        raise ConfigError(f"block {block!r} never closed")
    return out


def serialize_config(config: dict) -> str:
    """Inverse of parsing (modulo comments): emits the block syntax."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (list, tuple)):
            return ", ".join(fmt(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    lines = []
    for block, entries in config.items():
        lines.append(f"{block} {{")
        for key, value in entries.items():
            lines.append(f"  {key} = {fmt(value)}")
        lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# schema

_SCHEMA = {
    "model": {
        "g": (float, None), "a": (float, None), "beta": (float, None),
        "d": (int, 2), "shape": (str, "box"), "n": (int, None),
        "sides": (list, None), "L": (int, None), "M": (int, None),
    },
    "field": {
        "kind": (str, "zero"), "width": (int, None), "value": (float, None),
        "c0": (float, None), "gamma": (float, None),
    },
    "bc": {"kind": (str, "free")},
    "sampler": {
        "type": (str, "rc"), "sweeps": (int, None), "burn_in": (int, 0),
        "thin": (int, 1), "dt": (float, 0.01),
        "schedule": (str, "checkerboard"), "seed": (int, 0), "chains": (int, 1),
    },
    "experiment": {
        "name": (str, None), "observable": (str, "m"), "L": (int, None),
        "M": (float, None), "K": (int, None), "N": (int, None),
        "sizes": (list, None), "delta_fraction": (float, None),
        "m_star": (float, None), "m_fraction": (float, None),
        "field_kind": (str, None), "L_list": (list, None),
        "bc_list": (list, None), "bracket": (list, None),
        "resolution": (float, 1e-2), "x": (int, 0), "y": (int, 1),
        "h": (float, None), "width": (int, None),
    },
    "output": {
        "path": (str, "results.csv"), "plot_dir": (str, None),
        "samples_path": (str, None),
    },
}

_REQUIRED = {"model": ("g", "a", "beta"), "sampler": ("sweeps",),
             "experiment": ("name",)}


def _check_type(key, value, typ, lineno):
    where = f"line {lineno}: " if lineno else ""
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}key {key!r} must be a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}key {key!r} must be an integer, got {value!r}")
        return value
    if typ is list:
        return list(value) if isinstance(value, (list, tuple)) else [value]
    if typ is str and not isinstance(value, str):
        raise ConfigError(f"{where}key {key!r} must be a name, got {value!r}")
    return value


def validate_config(raw: dict) -> dict:
    """Schema check; returns {block: {key: value}} with defaults filled in."""
    config: dict = {}
    for block, entries in raw.items():
        if block not in _SCHEMA:
            lineno = min(l for _, l in entries.values()) if entries else None
            at = f" (line {lineno})" if lineno else ""
            raise ConfigError(f"unknown block {block!r}{at}; expected one of "
                              f"{sorted(_SCHEMA)}")
        config[block] = {}
        for key, (value, lineno) in entries.items():
            if key not in _SCHEMA[block]:
                raise ConfigError(f"line {lineno}: unknown key {key!r} in block "
                                  f"{block!r}; expected one of {sorted(_SCHEMA[block])}")
            typ, _ = _SCHEMA[block][key]
            config[block][key] = _check_type(key, value, typ, lineno)
    for block, keys in _REQUIRED.items():
        if block not in config:
            raise ConfigError(f"missing required block {block!r}")
        for key in keys:
            if key not in config[block]:
                raise ConfigError(f"missing required key {key!r} in block {block!r} "
                                  "(no silent defaults for physical parameters)")
    for block in _SCHEMA:
        config.setdefault(block, {})
        for key, (typ, default) in _SCHEMA[block].items():
            if default is not None and key not in config[block]:
                config[block][key] = default
    return config


def load_config(path) -> dict:
    return validate_config(parse_config_text(Path(path).read_text()))


# ---------------------------------------------------------------------------
# model assembly


def _build_model(config: dict) -> ModelParams:
    m = config["model"]
    shape, d = m["shape"], m["d"]
    if shape == "box":
        if "n" not in m:
            raise ConfigError("missing required key 'n' in block 'model' for shape box")
        region = build_region("box", d, n=m["n"])
    elif shape == "grid":
        if "sides" not in m:
            raise ConfigError("missing required key 'sides' in block 'model' for shape grid")
        region = build_region("grid", d, sides=m["sides"])
    elif shape == "rectangle":
        if "L" not in m or "M" not in m:
            raise ConfigError("missing required keys 'L'/'M' in block 'model' for shape rectangle")
        region = build_region("rectangle", d, L=m["L"], M=m["M"])
    else:
        raise ConfigError(f"unknown shape {m['shape']!r} in block 'model'")

    f = config["field"]
    kind = f.get("kind", "zero")
    if kind == "zero":
        h = 0.0
    elif kind == "uniform":
        if "value" not in f:
            raise ConfigError("missing required key 'value' in block 'field' for kind uniform")
        h = f["value"]
    elif kind in ("thick-plus", "plus-max", "dobrushin-pm", "dobrushin-pp", "weak-plus"):
        kwargs = {}
        if f.get("width") is not None:
            kwargs["width"] = f["width"]
        if f.get("c0") is not None:
            kwargs["C0"] = f["c0"]
        if f.get("gamma") is not None:
            kwargs["gamma"] = f["gamma"]
        h = make_boundary_field(kind, region, **kwargs)
    else:
        raise ConfigError(f"unknown field kind {kind!r} in block 'field'")

    if config["bc"].get("kind", "free") != "free":
        raise ConfigError("only the free boundary condition is sampled directly; "
                          "encode wired-plus through the field block")
    return ModelParams(region, beta=m["beta"], g=m["g"], a=m["a"], h=h)


def _build_mcmc(config: dict, seed_override=None) -> MCMCSpec:
    s = config["sampler"]
    return MCMCSpec(sweeps=s["sweeps"], burn_in=s.get("burn_in", 0),
                    thin=s.get("thin", 1),
                    seed=s.get("seed", 0) if seed_override is None else seed_override,
                    chains=s.get("chains", 1),
                    schedule=s.get("schedule", "checkerboard"),
                    dt=s.get("dt", 0.01))


# ---------------------------------------------------------------------------
# observables by name

def _phi_at(index):
    def fn(sample):
        return float(spin_values(sample)[index])
    return fn


def _observable_by_name(name: str, params: ModelParams):
    region = params.region
    centre = int(region.index_of(np.zeros(region.d, dtype=np.int64))) \
        if region.contains(np.zeros(region.d, dtype=np.int64)) else 0
    table = {
        "m": magnetization_observable,
        "abs_m": lambda s: abs(magnetization_observable(s)),
        "m2": lambda s: magnetization_observable(s) ** 2,
        "m4": lambda s: magnetization_observable(s) ** 4,
        "phi_center": _phi_at(centre),
        "phi_center_sq": lambda s: float(spin_values(s)[centre] ** 2),
    }
    if name == "two_point":
        if not len(region.edges):
            raise ConfigError("observable 'two_point' needs at least one edge")
        x, y = map(int, region.edges[0])
        return lambda s: float(spin_values(s)[x] * spin_values(s)[y])
    if name not in table:
        raise ConfigError(f"unknown observable {name!r}; expected one of "
                          f"{sorted(table) + ['two_point']}")
    return table[name]


# ---------------------------------------------------------------------------
# experiment dispatch: each runner returns (rows, series, summary-extras)


def _res_row(experiment, series, x, r: EstimateResult):
    return {"experiment": experiment, "series": series, "x": x,
            "estimate": r.estimate, "stderr": r.stderr,
            "n_samples": r.n_samples, "tau_int": r.tau_int,
            "flags": ";".join(r.metadata.get("flags", []))}


def _fit_dict(fit: ScalingFit | None):
    if fit is None:
        return None
    return {"preferred": fit.preferred, "fits": fit.fits}


def _require(exp: dict, *keys):
    for key in keys:
        if exp.get(key) is None:
            raise ConfigError(f"missing required key {key!r} in block 'experiment' "
                              f"for name {exp['name']!r}")


def _oracle_size_check(region):
    if region.n_vertices > MAX_ORACLE_VERTICES:
        raise ConfigError(
            f"oracle request on {region.n_vertices} vertices exceeds the exact-"
            f"computation cap of {MAX_ORACLE_VERTICES}; shrink the model block")


def _run_experiment(config: dict, mcmc: MCMCSpec):
    exp = config["experiment"]
    name = exp["name"]
    model = config["model"]
    g, a, beta, d = model["g"], model["a"], model["beta"], model["d"]
    rows, series, extras = [], {}, {}

    if name == "observable":
        params = _build_model(config)
        obs_name = exp.get("observable", "m")
        sampler = SamplerSpec(params, kind=config["sampler"].get("type", "rc"))
        res = estimate_observable(sampler, _observable_by_name(obs_name, params), mcmc)
        rows.append(_res_row(name, obs_name, "", res))
        extras["estimate"] = {"value": res.estimate, "stderr": res.stderr,
                              "tau_int": res.tau_int, "flags": res.metadata["flags"]}

    elif name == "m_star":
        _require(exp, "L")
        kind = exp.get("field_kind") or config["field"].get("kind", "thick-plus")
        if kind == "zero":
            kind = "thick-plus"
        out = estimate_m_star(beta, exp["L"], kind, mcmc, g=g, a=a, d=d)
        out = out if isinstance(out, dict) else {kind: out}
        for k, r in out.items():
            rows.append(_res_row(name, k, exp["L"], r))
        extras["m_star"] = {k: r.estimate for k, r in out.items()}

    elif name == "beta_c":
        _require(exp, "sizes")
        kwargs = {"resolution": exp.get("resolution", 1e-2)}
        if exp.get("bracket") is not None:
            kwargs["bracket"] = tuple(exp["bracket"])
        bc_hat, details = estimate_beta_c(g, a, exp["sizes"], mcmc, d=d,
                                          full=True, **kwargs)
        spread = details["spread"]
        rows.append({"experiment": name, "series": "beta_c", "x": "",
                     "estimate": bc_hat, "stderr": spread, "n_samples": mcmc.sweeps,
                     "tau_int": 0.5, "flags": ""})
        extras["beta_c"] = {"estimate": bc_hat, "spread": spread,
                            "crossings": {f"{k[0]},{k[1]}": v
                                          for k, v in details["crossings"].items()}}

    elif name == "ldp":
        _require(exp, "sizes", "delta_fraction", "m_star")
        out = scan_ldp(beta, exp["delta_fraction"], exp["sizes"], mcmc,
                       m_star=exp["m_star"], g=g, a=a, d=d)
        for n in sorted(out["table"]):
            for ev in ("lower", "upper"):
                rows.append(_res_row(name, ev, n, out["table"][n][ev]))
        for ev in ("lower", "upper"):
            fit = out[ev]
            series[ev] = {
                "x": [int(n) for n in sorted(out["table"])],
                "y": [out["table"][n][ev].estimate for n in sorted(out["table"])],
                "yerr": [out["table"][n][ev].stderr for n in sorted(out["table"])],
                "fits": None if fit is None else fit.fits,
            }
            extras[ev] = _fit_dict(fit)
        extras["flags"] = out["flags"]
        extras["delta"] = out["delta"]

    elif name == "surface_tension":
        _require(exp, "L", "M")
        res = estimate_surface_tension(beta, exp["L"], int(exp["M"]), mcmc,
                                       g=g, a=a, d=d, width=exp.get("width"))
        rows.append(_res_row(name, "tau_hat", exp["L"], res))
        extras["surface_tension"] = {"tau_hat": res.estimate,
                                     "p_disconnect": res.metadata["p_disconnect"],
                                     "hits": res.metadata["hits"]}

    elif name == "local_uniqueness":
        _require(exp, "L_list", "bc_list")
        out = scan_local_uniqueness(beta, exp["L_list"], exp["bc_list"], mcmc,
                                    g=g, a=a, d=d)
        for (L, bc), r in sorted(out["table"].items()):
            rows.append(_res_row(name, bc, L, r))
        Ls = sorted(out["min_over_bc"])
        series["min_over_bc"] = {
            "x": Ls,
            "y": [out["min_over_bc"][L]["estimate"] for L in Ls],
            "yerr": [out["min_over_bc"][L]["stderr"] for L in Ls],
            "fits": None,
        }
        extras["min_over_bc"] = {str(L): out["min_over_bc"][L] for L in Ls}

    elif name == "spectral_gap":
        _require(exp, "m_fraction", "m_star")
        n_rad = exp.get("L") if exp.get("L") is not None else model.get("n")
        if n_rad is None:
            raise ConfigError("missing required key 'L' in block 'experiment' "
                              "for name 'spectral_gap' (box radius)")
        res = spectral_gap_upper(beta, n_rad, exp["m_fraction"], mcmc,
                                 m_star=exp["m_star"], g=g, a=a, d=d)
        rows.append(_res_row(name, "gap_upper", n_rad, res))
        extras["spectral_gap"] = {"ratio": res.estimate,
                                  "dirichlet": res.metadata["dirichlet"],
                                  "variance": res.metadata["variance"]}

    elif name == "truncation":
        _require(exp, "M", "K", "N")
        params = _build_model(config)
        states = collect_rc_states(params, mcmc)
        out = truncation_diagnostics(states, exp["M"], int(exp["K"]), int(exp["N"]))
        for key, r in out.items():
            rows.append(_res_row(name, key, "", r))
        extras["truncation"] = {k: r.estimate for k, r in out.items()}

    elif name == "oracle_es":
        params = _build_model(config)
        _oracle_size_check(params.region)
        x, y = exp.get("x", 0), exp.get("y", min(1, params.region.n_vertices - 1))
        pairs = [
            ("spin_phi_x", exact_spin_expectation(params, {x: 1})),
            ("rc_a_x_to_ghost",
             exact_rc_probability(params, lambda c: c.connected(x, "ghost"),
                                  site_powers={x: 1})),
            ("spin_phi_xy", exact_spin_expectation(params, {x: 1, y: 1})),
            ("rc_aa_connected",
             exact_rc_probability(params, lambda c: c.connected(x, y),
                                  site_powers={x: 1, y: 1})),
        ]
        for key, val in pairs:
            rows.append({"experiment": name, "series": key, "x": "",
                         "estimate": val, "stderr": 0.0, "n_samples": 0,
                         "tau_int": 0.5, "flags": "exact"})
        extras["oracle_es"] = dict(pairs)

    elif name == "oracle_partition":
        params = _build_model(config)
        _oracle_size_check(params.region)
        rep = partition_identities(params)
        for key in ("ratio", "fk_rel_err"):
            rows.append({"experiment": name, "series": key, "x": "",
                         "estimate": rep[key], "stderr": 0.0, "n_samples": 0,
                         "tau_int": 0.5, "flags": "exact"})
        extras["oracle_partition"] = {k: float(rep[k])
                                      for k in ("ratio", "fk_rel_err")}

    else:
        raise ConfigError(f"unknown experiment name {name!r}")

    return rows, series, extras


# ---------------------------------------------------------------------------
# artifacts


def _format_cell(v):
    if isinstance(v, float):  # incl. np.float64, whose repr is not parseable
        if math.isnan(v):
            return "nan"
        return repr(float(v))
    return str(v)


def write_results_csv(path, rows, config: dict, seed) -> None:
    """One row per estimate, fixed column order; the config and master seed
    ride along as comment lines so no result file is orphaned. Contains no
    timestamps: reruns of the same config + seed are byte-identical."""
    buf = io.StringIO()
    buf.write("# phi4lab results\n")
    buf.write(f"# version = {__version__}\n")
    buf.write(f"# seed = {seed}\n")
    for line in serialize_config(config).splitlines():
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_format_cell(row[c]) for c in CSV_COLUMNS])
    Path(path).write_text(buf.getvalue())


def write_summary(path, config: dict, seed, extras: dict, wall: float,
                  rows) -> None:
    record = {
        "version": __version__,
        "seed": seed,
        "config": config,
        "wall_time": wall,
        "results": extras,
        "rows": rows,
    }
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True,
                                     default=str) + "\n")


def emit_plot_data(results: dict, spec) -> list:
    """Two-column (x, y, yerr) text files per scan series.

    ``results`` maps series name -> {x, y, yerr, fits}; ``spec`` is the output
    directory or {"dir": ..., "series": [names]}. Fit parameters are appended
    as comment blocks. Unknown requested series are an error naming them.
    """
    if isinstance(spec, (str, Path)):
        spec = {"dir": spec}
    out_dir = Path(spec["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = spec.get("series") or sorted(results)
    missing = [s for s in wanted if s not in results]
    if missing:
        raise KeyError(f"missing series: {', '.join(missing)}")
    written = []
    for name in wanted:
        data = results[name]
        path = out_dir / f"{name}.dat"
        lines = ["# x y yerr"]
        for x, y, err in zip(data["x"], data["y"], data["yerr"]):
            lines.append(f"{_format_cell(x)} {_format_cell(y)} {_format_cell(err)}")
        for model, fit in (data.get("fits") or {}).items():
            lines.append(f"# fit {model}: c = {fit['c']!r}  intercept = "
                         f"{fit['intercept']!r}  ssr = {fit['ssr']!r}")
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# runner


def run(config_path, *, seed=None, strict=True, out=None, threads=1) -> int:
    """Execute the experiment in ``config_path``. Returns the exit status:
    0 success, 1 validation/parse failure, 2 convergence flags under strict
    mode (results still written)."""
    try:
        config = load_config(config_path)
        experiments.set_threads(threads)
        mcmc = _build_mcmc(config, seed_override=seed)
        t0 = time.perf_counter()
        rows, series, extras = _run_experiment(config, mcmc)
        wall = time.perf_counter() - t0
    except (ConfigError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    out_path = Path(out) if out is not None else Path(config["output"]["path"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_results_csv(out_path, rows, config, mcmc.seed)
    write_summary(out_path.with_suffix(".summary.json"), config, mcmc.seed,
                  extras, wall, rows)
    plot_dir = config["output"].get("plot_dir")
    if plot_dir and series:
        emit_plot_data(series, plot_dir)

    flagged = [r for r in rows if r["flags"] and r["flags"] != "exact"]
    if strict and flagged:
        for r in flagged:
            print(f"flagged: {r['experiment']}/{r['series']} x={r['x']}: "
                  f"{r['flags']}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="phi4lab",
        description="Run one experiment from a plain-text config.")
    parser.add_argument("config", help="path to the run config")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the master seed from the config")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for independent chains")
    parser.add_argument("--out", default=None,
                        help="override the results CSV path")
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_true",
                      default=True,
                      help="nonzero exit on convergence flags (default)")
    mode.add_argument("--permissive", dest="strict", action="store_false",
                      help="exit 0 even when estimates carry flags")
    args = parser.parse_args(argv)
    return run(args.config, seed=args.seed, strict=args.strict,
               out=args.out, threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
