"""Command line entry point.

Usage::

    fracspde run experiments.cfg --seed 42 --out results/
    fracspde run --config coupling.cfg --format json --replicates 2000

The config is INI-style text with one flat section per experiment::

    [coupling]
    kind = wave
    H0 = 0.5
    H_list = 0.35, 0.4, 0.45, 0.48, 0.5

Every key of the experiment schema can also be given as ``--key value`` and
overrides the file.  Unknown keys are rejected before any computation.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .errors import BlowUpError, ConfigError, FracSPDEError, QuadratureFlag

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_QUAD = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# schema


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _strings(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _points(text) -> list[tuple[float, float]]:
    """``"1:1, 0.5:-1"`` -> ``[(1, 1), (0.5, -1)]``."""
    out = []
    for item in _strings(text):
        t, _, x = item.partition(":")
        if not _:
            raise ConfigError(f"point {item!r} must be written t:x")
        out.append((float(t), float(x)))
    return out


def _opt_float(text):
    return None if str(text).strip().lower() in ("", "none", "auto") else float(text)


def _u64(text) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return v


def _kind(text) -> str:
    v = str(text).strip().lower()
    if v not in ("wave", "heat"):
        raise ConfigError(f"kind must be wave or heat, got {text!r}")
    return v


GRID = {"T": (float, 1.0), "n_t": (int, 64), "L": (float, 1.0), "n_x": (int, 64), "xi_max": (_opt_float, None)}
COMMON = {"seed": (_u64, 0), "format": (str, "csv"), "out": (str, "")}

SCHEMAS: dict[str, dict[str, tuple[Callable, Any]]] = {
    "constants": {"kinds": (_strings, "wave, heat"), "alphas": (_floats, "-0.5, -0.2, 0, 0.2, 0.5"),
                  "Ts": (_floats, "0.5, 1"), "quadrature": (int, 0)},
    "covariance": {"H": (_floats, "0.3, 0.5, 0.75"), "points": (_points, "1:1, 1:-1, 0.5:0.5, 1:0.25"),
                   "replicates": (int, 1000), "n_t": (int, 2), "L": (float, 2.0), "period": (float, 16.0),
                   "xi_max": (float, 3000.0)},
    "chaos-table": {"kind": (_kind, "wave"), "H": (_floats, "0.5"), "n_max": (int, 2), "t": (float, 1.0),
                    "eta": (float, 1.0), "log2_points": (int, 14), "scrambles": (int, 16)},
    "solve": {"kind": (_kind, "wave"), "H": (float, 0.5), "eta": (float, 1.0), "m_max": (int, 4),
              "tol": (float, 1e-8), "mode": (str, "fixed_iterates"), "times": (_floats, ""),
              "dump": (str, ""), **GRID},
    "holder": {"kind": (_kind, "wave"), "H": (_floats, "0.5"), "directions": (_strings, "space, time"),
               "eta": (float, 1.0), "replicates": (int, 500), "m": (int, 2), "p": (int, 2)},
    "coupling": {"kind": (_kind, "wave"), "H0": (float, 0.5), "H_list": (_floats, "0.35, 0.4, 0.45, 0.48, 0.5"),
                 "eta": (float, 1.0), "probe_t": (float, 1.0), "probe_x": (float, 0.0), "m": (int, 2),
                 "replicates": (int, 1000), **GRID},
    "ks": {"kind": (_kind, "wave"), "H_a": (float, 0.3), "H_b": (float, 0.7), "trials": (int, 100),
           "samples": (int, 500), "observable": (str, "increment"), "level": (float, 0.01), "eta": (float, 1.0)},
    "tightness": {"kind": (_kind, "wave"), "H": (_floats, "0.35, 0.45"), "p": (int, 8), "eta": (float, 1.0),
                  "replicates": (int, 500), "m": (int, 2), **GRID},
}


@dataclass
class ExperimentConfig:
    experiment: str
    values: dict

    def __getitem__(self, key):
        return self.values[key]


def _validate(experiment: str, raw: dict) -> ExperimentConfig:
    if experiment not in SCHEMAS:
        raise ConfigError(f"unknown experiment [{experiment}]; known: {', '.join(SCHEMAS)}")
    schema = {**COMMON, **SCHEMAS[experiment]}
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"[{experiment}] unknown keys: {', '.join(unknown)}")
    values = {}
    for key, (conv, default) in schema.items():
        text = raw.get(key, default)
        try:
            values[key] = conv(text) if text is not None else None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{experiment}] bad value for {key}: {text!r} ({exc})") from None
    if values["format"] not in ("csv", "json"):
        raise ConfigError("format must be csv or json")
    return ExperimentConfig(experiment, values)


def load_config(path, overrides: dict | None = None) -> list[ExperimentConfig]:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str  # keys are case sensitive (T, L, H)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not parser.sections():
        raise ConfigError(f"{path} defines no experiment section")
    out = []
    for section in parser.sections():
        raw = dict(parser[section])
        for key, value in (overrides or {}).items():
            if key in SCHEMAS.get(section, {}) or key in COMMON:
                raw[key] = value
        out.append(_validate(section, raw))
    if overrides:
        known = set(COMMON).union(*(SCHEMAS[c.experiment] for c in out))
        stray = sorted(set(overrides) - known)
        if stray:
            raise ConfigError(f"override keys not used by any experiment: {', '.join(stray)}")
    return out


# ---------------------------------------------------------------------------
# emission


def git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5)
        return res.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def provenance(cfg: ExperimentConfig, threads: int) -> dict:
    return {"experiment": cfg.experiment, "package": f"fracspde {__version__}", "git": git_describe(),
            "threads": threads, "config": {k: _plain(v) for k, v in sorted(cfg.values.items())}}


def _plain(v):
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def render(rows: list[dict], prov: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"provenance": prov, "rows": [{k: _plain(v) for k, v in r.items()} for r in rows]},
                          indent=2, sort_keys=False) + "\n"
    buf = io.StringIO()
    buf.write(f"# provenance: {json.dumps(prov, sort_keys=True)}\n")
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else v


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# experiments


@dataclass
class Outcome:
    rows: list
    summary: str
    flagged: bool = False


def _grid(c: ExperimentConfig, kind):
    from .noise import SpaceTimeGrid
    from .solver import solver_grid
    if c["xi_max"] is None:
        return solver_grid(kind, T=c["T"], n_t=c["n_t"], L=c["L"], n_x=c["n_x"])
    g = solver_grid(kind, T=c["T"], n_t=c["n_t"], L=c["L"], n_x=c["n_x"])
    n_xi = int(round(c["xi_max"] * g.period / math.pi))
    return SpaceTimeGrid(T=c["T"], n_t=c["n_t"], L=c["L"], n_x=c["n_x"], n_xi=n_xi, xi_max=c["xi_max"])


def run_constants(c):
    from .greens import spectral_energy, spectral_energy_quadrature, wave_constant
    rows = []
    for kind in c["kinds"]:
        kind = _kind(kind)
        for a in c["alphas"]:
            for T in c["Ts"]:
                # C_alpha belongs to the wave closed form only
                row = {"kind": kind, "alpha": a, "T": T, "A_T": spectral_energy(kind, a, T),
                       "C_alpha": wave_constant(a) if kind == "wave" else None}
                if c["quadrature"]:
                    row["A_T_quadrature"] = spectral_energy_quadrature(kind, a, T)
                rows.append(row)
    return Outcome(rows, f"constants: {len(rows)} rows")


def run_covariance(c):
    from .noise import covariance_grid, empirical_covariance, fbm_sheet_covariance
    grid = covariance_grid(n_t=c["n_t"], L=c["L"], period=c["period"], xi_max=c["xi_max"])
    pts = c["points"]
    rows, worst = [], 0.0
    for h in c["H"]:
        est = empirical_covariance(h, pts, c["replicates"], c["seed"], grid)
        for i, p in enumerate(pts):
            for j, q in enumerate(pts):
                exact = fbm_sheet_covariance(h, p, q)
                z = abs(est.value[i, j] - exact) / est.se[i, j] if est.se[i, j] > 0 else 0.0
                worst = max(worst, z)
                rows.append({"H": h, "t_a": p[0], "x_a": p[1], "t_b": q[0], "x_b": q[1],
                             "value": est.value[i, j], "se": est.se[i, j], "exact": exact})
    return Outcome(rows, f"covariance: {len(rows)} entries, max |error|/SE = {worst:.2f}")


def run_chaos_table(c):
    from .chaos import Quadrature, chaos_second_moment
    quad = Quadrature(c["log2_points"], c["scrambles"], seed=c["seed"] or Quadrature.seed)
    rows, flagged = [], False
    for h in c["H"]:
        for n in range(1, c["n_max"] + 1):
            est = chaos_second_moment(c["kind"], h, n, c["t"], c["eta"], quad)
            flagged |= est.flagged
            rows.append({"kind": c["kind"], "H": h, "n": n, "t": c["t"], "value": est.value, "se": est.se,
                         "samples": est.samples})
    return Outcome(rows, f"chaos-table: {len(rows)} rows" + (" (quadrature flagged)" if flagged else ""), flagged)


def run_solve(c):
    from .noise import sample_white_noise
    from .solver import SolverConfig, dump_solution, slice_rows, solve
    grid = _grid(c, c["kind"])
    wn = sample_white_noise(grid, c["seed"])
    sol = solve(wn, c["H"], c["kind"], c["eta"], SolverConfig(c["m_max"], c["tol"], c["mode"]))
    times = c["times"] or [grid.T]
    rows = [{"t": t, "x": x, "u": u} for t, x, u in slice_rows(sol, times)]
    if c["dump"]:
        dump_solution(sol, c["dump"])
    return Outcome(rows, f"solve: m={sol.m} ({sol.stop_rule}), {len(rows)} rows")


def run_holder(c):
    from .stats import default_lags, expected_slope, holder_fit, holder_grid
    rows = []
    for d in c["directions"]:
        grid = holder_grid(c["kind"], d)
        lags = default_lags(grid, d)
        for h in c["H"]:
            f = holder_fit(c["kind"], h, c["eta"], d, (grid.T, 0.0), lags, c["replicates"], c["seed"],
                           p=c["p"], grid=grid, m=c["m"])
            rows.append({"kind": c["kind"], "H": h, "direction": d, "slope": f.slope, "slope_se": f.slope_se,
                         "expected": expected_slope(c["kind"], h, d, c["p"]), "intercept": f.intercept})
    return Outcome(rows, f"holder: {len(rows)} fits")


def run_coupling(c):
    from .stats import coupling_curve
    grid = _grid(c, c["kind"])
    cc = coupling_curve(c["kind"], c["H0"], c["H_list"], c["eta"], (c["probe_t"], c["probe_x"]),
                        c["replicates"], c["seed"], m=c["m"], grid=grid)
    rows = [{"kind": c["kind"], "H0": c["H0"], "H": h, "distance": abs(h - c["H0"]), "value": v, "se": s}
            for h, v, s in cc.entries]
    return Outcome(rows, f"coupling: {len(rows)} points")


def run_ks(c):
    from .stats import ks_calibration
    rej, pvals = ks_calibration(c["kind"], c["H_a"], c["H_b"], c["trials"], c["samples"], c["seed"],
                                eta=c["eta"], observable=c["observable"], level=c["level"])
    rows = [{"trial": i, "H_a": c["H_a"], "H_b": c["H_b"], "p_value": p} for i, p in enumerate(pvals)]
    return Outcome(rows, f"ks: {rej}/{c['trials']} rejections at p < {c['level']}")


def run_tightness(c):
    from .stats import tightness_probe
    grid = _grid(c, c["kind"])
    res = tightness_probe(c["kind"], c["H"], c["eta"], c["p"], c["replicates"], c["seed"], grid, m=c["m"])
    rows = [{"kind": c["kind"], "H": r.H, "p": c["p"], "delta": r.delta, "ratio": r.ratio,
             "ratio_se": r.ratio_se, "status": r.status} for r in res]
    return Outcome(rows, f"tightness: {len(rows)} rows, status {res[0].status if res else 'n/a'}")


RUNNERS = {"constants": run_constants, "covariance": run_covariance, "chaos-table": run_chaos_table,
           "solve": run_solve, "holder": run_holder, "coupling": run_coupling, "ks": run_ks,
           "tightness": run_tightness}


def _out_path(cfg: ExperimentConfig, cli_out: str | None, several: bool) -> Path:
    name = f"{cfg.experiment}.{cfg['format']}"
    if cli_out:
        return Path(cli_out) / name if several else Path(cli_out)
    return Path(cfg["out"]) if cfg["out"] else Path(name)


def run(config_path, overrides: dict | None = None, out: str | None = None, threads: int = 1,
        stdout=None) -> int:
    """Run every experiment of a config file; return the exit status."""
    from .solver import set_threads
    stdout = stdout or sys.stdout
    configs = load_config(config_path, overrides)
    set_threads(threads)
    status = EXIT_OK
    for cfg in configs:
        result = RUNNERS[cfg.experiment](cfg)
        path = _out_path(cfg, out, len(configs) > 1)
        atomic_write(path, render(result.rows, provenance(cfg, threads), cfg["format"]))
        print(f"{result.summary} -> {path}", file=stdout)
        if result.flagged:
            status = EXIT_QUAD
    return status


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracspde", description="Fractional-noise wave/heat SPDE experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiments of a config file")
    r.add_argument("config_file", nargs="?", help="config path (or use --config)")
    r.add_argument("--config", dest="config", help="config path")
    r.add_argument("--threads", type=int, default=1, help="worker threads (1 is the reference)")
    r.add_argument("--out", help="output file, or directory when the config has several experiments")
    keys = sorted(set(COMMON).union(*SCHEMAS.values()) - {"out"})
    for key in keys:
        r.add_argument(f"--{key}", dest=f"set_{key}", metavar="VALUE", help=argparse.SUPPRESS)
    sub.add_parser("experiments", help="list experiments and their keys")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "experiments":
        for name, schema in SCHEMAS.items():
            keys = ", ".join(f"{k}={d}" for k, (_, d) in {**COMMON, **schema}.items())
            print(f"[{name}] {keys}")
        return EXIT_OK
    path = args.config or args.config_file
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("set_") and v is not None}
    try:
        if not path:
            raise ConfigError("no config file given")
        return run(path, overrides, args.out, args.threads)
    except QuadratureFlag as exc:
        print(f"error {exc.code}: {exc}", file=sys.stderr)
        return EXIT_QUAD
    except BlowUpError as exc:
        print(f"error {exc.code}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FracSPDEError as exc:
        print(f"error {exc.code}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
