"""Command-line driver: simulate, identify, sweep, compare, report.

Configuration comes from an optional JSON file (strict: unknown keys are
rejected) with command-line flags taking precedence.  Every command writes
a JSON sidecar echoing the fully resolved configuration so any output can
be reproduced from its sidecar alone.  Outputs are plot-ready CSV/JSON and
are byte-stable for fixed inputs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .afp import PdeConfig
from .errors import ConfigError, DataError, NumericalError, OscidError
from .ident import (
    FitReport,
    StopCriteria,
    extrapolation_guess,
    lm_solve,
    nelder_mead_solve,
    noise_balance_report,
)
from .km import write_km_csv
from .pipeline import METHODS, GridSettings, identify, prepare_estimates
from .sde import (
    OscillatorModel,
    SimConfig,
    Theta,
    TimeSeries,
    read_timeseries_csv,
    simulate_vdp,
    write_timeseries_csv,
)
from .signals import segment_series

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


@dataclass
class ModelBlock:
    epsilon: float = 0.1
    alpha: float = -0.1
    d: float = 0.1
    omega: float = 2.0 * math.pi


@dataclass
class SimBlock:
    t_max: float = 2000.0
    fs: float = 100.0
    substeps: int = 10
    discard_cycles: float = 50.0


@dataclass
class GridBlock:
    n_a: int = 50
    n_tau: int = 100
    epsilon_hint: float = 1.0


@dataclass
class PdeBlock:
    a_max_factor: float = 1.5
    n_cells: int = 400
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9


@dataclass
class StopBlock:
    theta_rtol: float = 1e-4
    cost_rtol: float = 1e-4
    max_iter: int = 200
    backtrack_cap: int = 30


@dataclass
class SweepBlock:
    axis: str = "epsilon"
    start: float = -0.1
    stop: float = 0.1
    step: float = 0.01


@dataclass
class RunConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    sim: SimBlock = field(default_factory=SimBlock)
    grid: GridBlock = field(default_factory=GridBlock)
    pde: PdeBlock = field(default_factory=PdeBlock)
    stop: StopBlock = field(default_factory=StopBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    method: str = "prop"
    seeds: list[int] = field(default_factory=lambda: [0])
    jobs: int = 1
    out: str = "."
    prefix: str = "run"
    segment: float | None = None

    def grid_settings(self) -> GridSettings:
        return GridSettings(
            n_a=self.grid.n_a,
            n_tau=self.grid.n_tau,
            epsilon_hint=self.grid.epsilon_hint,
        )

    def pde_config(self) -> PdeConfig:
        return PdeConfig(
            a_max_factor=self.pde.a_max_factor,
            n_cells=self.pde.n_cells,
            rel_tol=self.pde.rel_tol,
            abs_tol=self.pde.abs_tol,
        )

    def stop_criteria(self) -> StopCriteria:
        return StopCriteria(
            theta_rtol=self.stop.theta_rtol,
            cost_rtol=self.stop.cost_rtol,
            max_iter=self.stop.max_iter,
            backtrack_cap=self.stop.backtrack_cap,
        )

    def sim_config(self, seed: int) -> SimConfig:
        return SimConfig(
            t_max=self.sim.t_max, fs=self.sim.fs,
            substeps=self.sim.substeps, seed=seed,
        )

    def oscillator(self) -> OscillatorModel:
        m = self.model
        return OscillatorModel(Theta(m.epsilon, m.alpha, m.d), m.omega)

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


def _fill_block(obj, data: dict, path: str):
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key '{path}{key}'")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{path}{key}' must be an object")
            _fill_block(current, value, f"{path}{key}.")
        else:
            setattr(obj, key, _coerce(value, current, f"{path}{key}"))
    return obj


def _coerce(value, current, path: str):
    try:
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ValueError
            return value
        if isinstance(current, int) and not isinstance(current, bool):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, str):
            if not isinstance(value, str):
                raise ValueError
            return value
        if isinstance(current, list):
            return [int(v) for v in value]
        if current is None:
            return float(value) if value is not None else None
    except (TypeError, ValueError):
        raise ConfigError(f"config key '{path}' has invalid value {value!r}") from None
    raise ConfigError(f"config key '{path}' has invalid value {value!r}")


def load_config(path: str | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _fill_block(cfg, data, "")
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown method '{cfg.method}' (choose from {METHODS})")
    if cfg.sweep.axis not in ("epsilon", "alpha"):
        raise ConfigError("sweep.axis must be 'epsilon' or 'alpha'")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if not cfg.seeds:
        raise ConfigError("seeds must not be empty")


def _parse_seeds(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        a, b = int(lo), int(hi)
        if b < a:
            raise ConfigError(f"empty seed range '{text}'")
        return list(range(a, b + 1))
    return [int(p) for p in text.split(",") if p]


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if getattr(args, "method", None) is not None:
        cfg.method = args.method
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "seeds", None) is not None:
        cfg.seeds = _parse_seeds(args.seeds)
    if getattr(args, "segment", None) is not None:
        cfg.segment = args.segment
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    _validate(cfg)
    return cfg


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write_new(path: str, text: str, force: bool):
    if os.path.exists(path) and not force:
        raise ConfigError(f"refusing to overwrite {path} (use --force)")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _sidecar(cfg: RunConfig, out_dir: str, name: str, force: bool, extra=None):
    payload = {"config": cfg.to_json_dict()}
    if extra:
        payload.update(extra)
    _write_new(os.path.join(out_dir, name), _json_text(payload), force)


# ---------------------------------------------------------------- simulate


def cmd_simulate(cfg: RunConfig, force: bool) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    model = cfg.oscillator()
    paths = []
    for seed in cfg.seeds:
        ts = simulate_vdp(
            model, cfg.sim_config(seed), discard_cycles=cfg.sim.discard_cycles
        )
        path = os.path.join(cfg.out, f"{cfg.prefix}_seed{seed}.csv")
        if os.path.exists(path) and not force:
            raise ConfigError(f"refusing to overwrite {path} (use --force)")
        write_timeseries_csv(ts, path)
        paths.append(path)
    _sidecar(cfg, cfg.out, f"{cfg.prefix}.config.json", force,
             extra={"outputs": [os.path.basename(p) for p in paths]})
    for p in paths:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------- identify


def _identify_one(ts: TimeSeries, cfg: RunConfig):
    return identify(
        ts,
        grid_cfg=cfg.grid_settings(),
        pde_cfg=cfg.pde_config(),
        stop=cfg.stop_criteria(),
        method=cfg.method,
    )


def _fit_payload(res) -> dict:
    d = res.fit.to_json_dict()
    d["omega"] = res.omega
    d["theta0"] = {
        "epsilon": res.theta0.epsilon,
        "alpha": res.theta0.alpha,
        "d": res.theta0.d,
    }
    d["theta0_source"] = res.theta0_source
    return d


def cmd_identify(cfg: RunConfig, input_path: str, force: bool,
                 dump_km: bool = False) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    ts = read_timeseries_csv(input_path)
    stem = os.path.splitext(os.path.basename(input_path))[0]
    segmented = cfg.segment is not None
    pieces = [ts] if not segmented else segment_series(ts, cfg.segment)
    results = []
    last_error = None
    for k, piece in enumerate(pieces):
        tag = f"{stem}_seg{k:03d}" if segmented else stem
        try:
            res = _identify_one(piece, cfg)
        except (OscidError, ValueError) as exc:
            # a broken segment must not abort the others (the reference
            # behavior for per-segment failures is an N/A entry)
            if not segmented:
                raise
            last_error = exc
            results.append((tag, piece, None,
                            f"{type(exc).__name__}: {exc}"))
            continue
        _write_new(os.path.join(cfg.out, f"{tag}_fit.json"),
                   _json_text(_fit_payload(res)), force)
        _write_new(os.path.join(cfg.out, f"{tag}_trajectory.csv"),
                   "\n".join(res.fit.trajectory_csv_rows()) + "\n", force)
        if dump_km:
            write_km_csv(res.km, os.path.join(cfg.out, f"{tag}_km.csv"))
        results.append((tag, piece, res, None))
    if segmented:
        if all(res is None for _, _, res, _ in results):
            raise last_error
        combined = {"segments": []}
        for k, (tag, piece, res, err) in enumerate(results):
            entry = {"segment": k, "t_start": piece.t0}
            if res is None:
                entry["error"] = err
            else:
                entry.update(_fit_payload(res))
            combined["segments"].append(entry)
        _write_new(os.path.join(cfg.out, f"{stem}_segments.json"),
                   _json_text(combined), force)
    _sidecar(cfg, cfg.out, f"{stem}.identify.config.json", force,
             extra={"input": os.path.abspath(input_path)})
    for tag, _, res, err in results:
        if res is None:
            print(f"{tag}: failed ({err})")
            continue
        th = res.theta_hat
        print(
            f"{tag}: method={res.fit.method} converged={res.fit.converged} "
            f"epsilon={th.epsilon:.6g} alpha={th.alpha:.6g} d={th.d:.6g} "
            f"evals={res.fit.residual_evals}"
        )
    return EXIT_OK


# ---------------------------------------------------------------- sweep


def _sweep_cell(payload):
    """One (axis value, seed) cell; returns rows for all three methods."""
    cfg_dict, axis, value, seed = payload
    cfg = RunConfig()
    _fill_block(cfg, cfg_dict, "")
    setattr(cfg.model, "epsilon" if axis == "epsilon" else "alpha", value)
    model = cfg.oscillator()
    rows = []
    try:
        ts = simulate_vdp(
            model, cfg.sim_config(seed), discard_cycles=cfg.sim.discard_cycles
        )
        hint = cfg.grid.epsilon_hint
        if axis == "epsilon":
            hint = 1.0 if value > 0 else -1.0
        gs = GridSettings(n_a=cfg.grid.n_a, n_tau=cfg.grid.n_tau, epsilon_hint=hint)
        omega, grid, km = prepare_estimates(ts, gs)
        theta0 = extrapolation_guess(km, omega)
        rows.append(_row(value, seed, "extrap", theta0, math.nan, 0, True))
        pde = cfg.pde_config()
        stop = cfg.stop_criteria()
        fit_nm = nelder_mead_solve(theta0, omega, km, pde, stop)
        rows.append(_row(value, seed, "nm", fit_nm.theta_hat, fit_nm.cost_min,
                         fit_nm.residual_evals, fit_nm.converged))
        fit_p = lm_solve(theta0, omega, km, pde, stop)
        rows.append(_row(value, seed, "prop", fit_p.theta_hat, fit_p.cost_min,
                         fit_p.residual_evals, fit_p.converged))
    except (OscidError, ValueError) as exc:
        for method in ("extrap", "nm", "prop"):
            if not any(r["method"] == method for r in rows):
                rows.append(_row(value, seed, method, None, math.nan, 0, False,
                                 error=f"{type(exc).__name__}: {exc}"))
    return rows


def _row(value, seed, method, theta, cost_val, evals, converged, error=None):
    return {
        "axis_value": value,
        "seed": seed,
        "method": method,
        "eps_hat": theta.epsilon if theta else math.nan,
        "alpha_hat": theta.alpha if theta else math.nan,
        "d_hat": theta.d if theta else math.nan,
        "cost": cost_val,
        "residual_evals": evals,
        "converged": converged,
        "error": error,
    }


_SWEEP_COLUMNS = (
    "axis_value", "seed", "method", "eps_hat", "alpha_hat", "d_hat",
    "cost", "residual_evals", "converged",
)


def _format_row(row) -> str:
    cells = []
    for col in _SWEEP_COLUMNS:
        v = row[col]
        if isinstance(v, bool):
            cells.append("true" if v else "false")
        elif isinstance(v, float):
            cells.append(f"{v:.17g}")
        else:
            cells.append(str(v))
    return ",".join(cells)


def cmd_sweep(cfg: RunConfig, force: bool) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    sw = cfg.sweep
    n_steps = int(round((sw.stop - sw.start) / sw.step))
    values = [round(sw.start + k * sw.step, 12) for k in range(n_steps + 1)]
    if not values:
        raise ConfigError("sweep range is empty")
    cfg_dict = cfg.to_json_dict()
    cells = [(cfg_dict, sw.axis, v, s) for v in values for s in cfg.seeds]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            per_cell = list(pool.map(_sweep_cell, cells))
    else:
        per_cell = [_sweep_cell(c) for c in cells]
    rows = [r for cell_rows in per_cell for r in cell_rows]

    # seed-averaged rows per (axis value, method), converged runs only
    for v in values:
        for method in ("extrap", "nm", "prop"):
            sel = [r for r in rows if r["axis_value"] == v
                   and r["method"] == method and r["converged"]]
            n_tot = len(cfg.seeds)
            if len(cfg.seeds) < 2:
                continue
            mean = {
                "axis_value": v, "seed": "mean", "method": method,
                "converged": f"{len(sel)}/{n_tot}",
            }
            for colname in ("eps_hat", "alpha_hat", "d_hat", "cost",
                            "residual_evals"):
                vals = [r[colname] for r in sel]
                mean[colname] = float(np.mean(vals)) if vals else math.nan
            rows.append(mean)

    path = os.path.join(cfg.out, f"{cfg.prefix}_sweep.csv")
    text = ",".join(_SWEEP_COLUMNS) + "\n" + "\n".join(
        _format_row(r) for r in rows) + "\n"
    _write_new(path, text, force)
    _sidecar(cfg, cfg.out, f"{cfg.prefix}_sweep.config.json", force)
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------- compare


def cmd_compare(cfg: RunConfig, input_path: str, force: bool) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    ts = read_timeseries_csv(input_path)
    stem = os.path.splitext(os.path.basename(input_path))[0]
    omega, grid, km = prepare_estimates(ts, cfg.grid_settings())
    theta0 = extrapolation_guess(km, omega)
    pde = cfg.pde_config()
    stop = cfg.stop_criteria()

    reports: dict[str, FitReport | None] = {}
    failures: dict[str, str] = {}
    for name, solver in (("nm", nelder_mead_solve), ("prop", lm_solve)):
        try:
            reports[name] = solver(theta0, omega, km, pde, stop)
        except OscidError as exc:
            reports[name] = None
            failures[name] = f"{type(exc).__name__}: {exc}"

    finite_costs = [r.cost_min for r in reports.values()
                    if r is not None and math.isfinite(r.cost_min)]
    e_min = min(finite_costs) if finite_costs else math.nan
    payload = {
        "input": os.path.abspath(input_path),
        "omega": omega,
        "theta0": {"epsilon": theta0.epsilon, "alpha": theta0.alpha,
                   "d": theta0.d},
        "e_min": e_min,
    }
    for name, rep in reports.items():
        if rep is None:
            payload[name] = {"failure": failures[name]}
            continue
        payload[name] = rep.to_json_dict()
        payload[name]["energy_error_curve"] = [
            [s.residual_evals, s.cost - e_min] for s in rep.trajectory
        ]
    both = all(r is not None and r.converged for r in reports.values())
    payload["both_converged"] = both
    if both:
        payload["costs_agree"] = bool(
            abs(reports["nm"].cost_min - reports["prop"].cost_min)
            < 1e-3 * (1.0 + e_min)
        )
    _write_new(os.path.join(cfg.out, f"{stem}_compare.json"),
               _json_text(payload), force)
    _sidecar(cfg, cfg.out, f"{stem}.compare.config.json", force,
             extra={"input": os.path.abspath(input_path)})
    for name, rep in reports.items():
        if rep is None:
            print(f"{name}: failed ({failures[name]})")
        else:
            print(f"{name}: converged={rep.converged} "
                  f"evals={rep.residual_evals} cost={rep.cost_min:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------- report


_REPORT_COLUMNS = (
    "segment", "t_start", "mean_abs_lhs", "sqrt_2d", "ratio",
    "ratio_is_finite", "amp_mean", "amp_std", "amp_std_over_mean",
)


def _parse_theta(text: str) -> Theta:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError("--theta expects 'epsilon,alpha,d'")
    try:
        return Theta(*(float(p) for p in parts))
    except ValueError as exc:
        raise ConfigError(f"invalid --theta: {exc}") from exc


def _thetas_from_fits(path: str, n_segments: int) -> list[Theta]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read fits file {path}: {exc}") from exc
    segs = data.get("segments")
    if not isinstance(segs, list) or len(segs) != n_segments:
        raise DataError(
            f"fits file lists {len(segs) if isinstance(segs, list) else 0} "
            f"segments, record has {n_segments}"
        )
    out = []
    for s in segs:
        th = s["theta_hat"]
        out.append(Theta(th["epsilon"], th["alpha"], th["d"]))
    return out


def cmd_report(cfg: RunConfig, input_path: str, theta_text: str | None,
               fits_path: str | None, omega_flag: float | None,
               force: bool) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    ts = read_timeseries_csv(input_path)
    stem = os.path.splitext(os.path.basename(input_path))[0]
    pieces = [ts] if cfg.segment is None else segment_series(ts, cfg.segment)
    if (theta_text is None) == (fits_path is None):
        raise ConfigError("report needs exactly one of --theta or --fits")
    if theta_text is not None:
        thetas = [_parse_theta(theta_text)] * len(pieces)
    else:
        thetas = _thetas_from_fits(fits_path, len(pieces))
    from .signals import dominant_frequency

    rows = []
    for k, (piece, theta) in enumerate(zip(pieces, thetas)):
        omega = omega_flag if omega_flag is not None else dominant_frequency(piece)
        rep = noise_balance_report(piece, theta, omega)
        rows.append(
            f"{k},{piece.t0:.17g},{rep.mean_abs_lhs:.17g},{rep.sqrt_2d:.17g},"
            f"{rep.ratio:.17g},{str(rep.ratio_is_finite).lower()},"
            f"{rep.amp_mean:.17g},{rep.amp_std:.17g},{rep.amp_std_over_mean:.17g}"
        )
    path = os.path.join(cfg.out, f"{stem}_report.csv")
    _write_new(path, ",".join(_REPORT_COLUMNS) + "\n" + "\n".join(rows) + "\n",
               force)
    _sidecar(cfg, cfg.out, f"{stem}.report.config.json", force,
             extra={"input": os.path.abspath(input_path)})
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------- main


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oscid",
        description="Output-only identification of noise-driven "
                    "self-sustained oscillators",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=False):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")
        if needs_input:
            p.add_argument("input", help="time,value CSV file")

    p = sub.add_parser("simulate", help="generate synthetic records")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="list 'a,b,c' or range 'a..b'")

    p = sub.add_parser("identify", help="identify parameters from a CSV record")
    common(p, needs_input=True)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--segment", type=float, help="window length in seconds")
    p.add_argument("--dump-km", action="store_true",
                   help="also write the KM estimate CSV")

    p = sub.add_parser("sweep", help="parameter sweep with all three methods")
    common(p)
    p.add_argument("--seeds", help="list 'a,b,c' or range 'a..b'")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("compare", help="Nelder-Mead vs proposed on one record")
    common(p, needs_input=True)

    p = sub.add_parser("report", help="deterministic-vs-noise scale report")
    common(p, needs_input=True)
    p.add_argument("--theta", help="'epsilon,alpha,d' to use for all segments")
    p.add_argument("--fits", help="segments JSON from identify --segment")
    p.add_argument("--omega", type=float, help="override spectral omega")
    p.add_argument("--segment", type=float, help="window length in seconds")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_flags(cfg, args)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.force)
        if args.command == "identify":
            return cmd_identify(cfg, args.input, args.force, args.dump_km)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.force)
        if args.command == "compare":
            return cmd_compare(cfg, args.input, args.force)
        if args.command == "report":
            return cmd_report(cfg, args.input, args.theta, args.fits,
                              args.omega, args.force)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ValueError) as exc:
        print(_json_text({"error": "config", "message": str(exc)}),
              file=sys.stderr, end="")
        return EXIT_CONFIG
    except DataError as exc:
        print(_json_text({"error": "data", "message": str(exc)}),
              file=sys.stderr, end="")
        return EXIT_DATA
    except NumericalError as exc:
        print(_json_text({"error": "numerical", "message": str(exc)}),
              file=sys.stderr, end="")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
