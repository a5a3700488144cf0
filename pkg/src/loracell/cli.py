"""Command-line front end: solve, sweep, simulate, optimize, compare.

Every emitted document starts with the fully resolved configuration so
any output can be reproduced from its own header.  Identical invocations
produce byte-identical output.

Exit codes: 0 success; 1 I/O or unexpected error; 2 parse error;
3 validation error; 4 solver non-convergence; 5 simulation assertion.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import analytic, metrics, simulate
from .optimize import OBJECTIVES, OptimizationProblem
from .optimize import optimize as run_optimize
from .scenario import ParseError, ScenarioConfig, ValidationError, load_scenario

EXIT_OK = 0
EXIT_IO = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NO_CONVERGENCE = 4
EXIT_SIMULATION = 5

_SWEEP_METRICS = ("uu", "cu", "cd", "delta_ul", "delta_dl", "jain",
                  "f_nmd", "f_gwtx", "f_int")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _write_out(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _apply_override(data: dict, item: str):
    if "=" not in item:
        raise ValidationError(f"--set expects key=value, got {item!r}")
    key, _, raw = item.partition("=")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ParseError(f"cannot parse --set value {raw!r}: {exc}") from exc
    node = data
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValidationError(f"--set path {key!r} does not name a mapping")
    node[parts[-1]] = value


def _resolve_config(args) -> ScenarioConfig:
    data: dict = {}
    if args.config is not None:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        parsed = yaml.safe_load(text)  # may raise yaml.YAMLError
        if parsed is None:
            parsed = {}
        if not isinstance(parsed, dict):
            raise ParseError("scenario document must be a mapping")
        data = parsed
    for item in args.set or []:
        _apply_override(data, item)
    return load_scenario(data, renormalize=args.renormalize)


def _config_header(cfg: ScenarioConfig, command: str, extra: dict | None = None) -> list[str]:
    lines = [f"# loracell {command}",
             "# config: " + json.dumps(cfg.to_dict(), sort_keys=True)]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}: {_fmt(value)}")
    return lines


def _csv(lines_header: list[str], columns: list[str], rows: list[list]) -> str:
    out = list(lines_header)
    out.append(",".join(columns))
    for row in rows:
        out.append(",".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


# -- solve -------------------------------------------------------------------

def cmd_solve(args) -> int:
    cfg = _resolve_config(args)
    state = analytic.solve(cfg, tol=args.tol, max_iter=args.max_iter)
    report = metrics.compute_report(state, cfg)
    solver = {"converged": state.converged, "iterations": state.iterations,
              "residual": state.residual, "tol": args.tol, "max_iter": args.max_iter}
    if args.format == "doc":
        doc = {"command": "solve", "config": cfg.to_dict(), "solver": solver,
               "metrics": report.to_dict()}
        if args.full_state:
            doc["steady_state"] = {
                "s_ul": list(state.s_ul), "s_dl": list(state.s_dl),
                "s_int": list(state.s_int), "s_tx": list(state.s_tx),
                "f_tx1": list(state.f_tx1), "f_tx2": list(state.f_tx2),
                "s_int_ack1": list(state.s_int_ack1),
                "s_sb1": list(state.s_sb1), "s_sb2": state.s_sb2,
                "r_phy": list(state.rates.r_phy), "d": list(state.rates.d),
                "s_demod": state.demod.s_demod,
                "p_lock": list(state.demod.p_lock),
            }
        _write_out(json.dumps(doc, sort_keys=True, indent=2) + "\n", args.out)
    else:
        columns = list(_SWEEP_METRICS) + ["iterations", "residual", "converged"]
        rep = report.to_dict()
        row = [rep[k] for k in _SWEEP_METRICS] + [state.iterations, state.residual,
                                                  state.converged]
        _write_out(_csv(_config_header(cfg, "solve", solver), columns, [row]), args.out)
    return EXIT_OK if state.converged else EXIT_NO_CONVERGENCE


# -- sweep -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """One swept scenario key with its value list and output selection."""

    axis: str
    values: tuple[float, ...]
    outputs: tuple[str, ...]

    def __post_init__(self):
        if not self.values:
            raise ValidationError("sweep values must be non-empty")
        diffs = np.diff(self.values)
        if len(self.values) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValidationError("sweep values must be strictly monotone")
        unknown = set(self.outputs) - set(_SWEEP_METRICS)
        if unknown:
            raise ValidationError(f"unknown sweep outputs: {sorted(unknown)}; "
                                  f"available: {list(_SWEEP_METRICS)}")


def _sweep_point(args) -> tuple[dict, int, float, bool]:
    base_dict, axis, value, tol, max_iter = args
    data = json.loads(json.dumps(base_dict))  # deep copy of plain scalars
    _apply_override(data, f"{axis}={_fmt(value)}")
    cfg = load_scenario(data)
    state = analytic.solve(cfg, tol=tol, max_iter=max_iter)
    report = metrics.compute_report(state, cfg).to_dict()
    return report, state.iterations, state.residual, state.converged


def _parse_values(spec: str) -> list[float]:
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) not in (3, 4):
            raise ValidationError("range must be start:stop:count[:log|lin]")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        scale = parts[3] if len(parts) == 4 else "lin"
        if count < 1:
            raise ValidationError("range count must be >= 1")
        if scale == "log":
            if start <= 0 or stop <= 0:
                raise ValidationError("log range needs positive endpoints")
            values = list(np.logspace(np.log10(start), np.log10(stop), count))
        elif scale == "lin":
            values = list(np.linspace(start, stop, count))
        else:
            raise ValidationError(f"unknown range scale {scale!r}")
    else:
        try:
            values = [float(v) for v in spec.split(",") if v.strip() != ""]
        except ValueError as exc:
            raise ValidationError(f"cannot parse sweep values {spec!r}") from exc
    if not values:
        raise ValidationError("sweep values must be non-empty")
    diffs = np.diff(values)
    if len(values) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ValidationError("sweep values must be strictly monotone")
    return values


def cmd_sweep(args) -> int:
    base = _resolve_config(args)
    spec = SweepSpec(
        axis=args.axis,
        values=tuple(_parse_values(args.values)),
        outputs=tuple(s.strip() for s in args.outputs.split(","))
        if args.outputs else _SWEEP_METRICS,
    )
    values, outputs = list(spec.values), list(spec.outputs)

    base_dict = base.to_dict()
    points = [(base_dict, spec.axis, float(value), args.tol, args.max_iter)
              for value in values]
    if args.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            solved = list(pool.map(_sweep_point, points))
    else:
        solved = [_sweep_point(p) for p in points]

    rows = []
    all_converged = True
    for value, (rep, iterations, residual, converged) in zip(values, solved):
        all_converged = all_converged and converged
        rows.append([value] + [rep[k] for k in outputs]
                    + [iterations, residual, converged])

    columns = [args.axis] + outputs + ["iterations", "residual", "converged"]
    header = _config_header(base, "sweep", {"axis": args.axis, "values": args.values})
    text = _csv(header, columns, rows)
    if args.format == "doc":
        doc = {"command": "sweep", "config": base.to_dict(), "axis": args.axis,
               "rows": [dict(zip(columns, row)) for row in rows]}
        text = json.dumps(doc, sort_keys=True, indent=2, default=_fmt) + "\n"
    _write_out(text, args.out)
    return EXIT_OK if all_converged else EXIT_NO_CONVERGENCE


# -- simulate ------------------------------------------------------------------

def _sim_config(args, cfg: ScenarioConfig) -> simulate.SimConfig:
    return simulate.SimConfig(
        scenario=cfg,
        n_devices=args.devices,
        arrival_model=args.arrivals,
        capture_model=args.capture,
        radius_m=args.radius,
        path_loss_exponent=args.path_loss_exponent,
        cr_db=args.cr_db,
        sim_duration=args.duration,
        warmup=args.warmup,
        seed=args.seed,
        n_replications=args.replications,
        trace_path=args.trace,
    )


_REP_COLUMNS = ("rep", "offered_app", "offered_phy", "uu", "cu", "cd",
                "delta_ul", "delta_dl", "jain", "f_nmd", "f_gwtx", "f_int",
                "dc_violations")


def _rep_row(idx, rep: simulate.ReplicationResult) -> list:
    return [idx,
            sum(rep.offered_app_u) + sum(rep.offered_app_c),
            sum(rep.offered_phy),
            rep.uu, rep.cu, rep.cd, rep.delta_ul, rep.delta_dl, rep.jain,
            rep.f_nmd, rep.f_gwtx, rep.f_int, rep.dc_violations]


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    sim_cfg = _sim_config(args, cfg)
    report = simulate.run(sim_cfg, workers=args.workers)

    extra = {"seed": sim_cfg.seed, "n_devices": sim_cfg.n_devices,
             "arrival_model": sim_cfg.arrival_model,
             "capture_model": sim_cfg.capture_model,
             "sim_duration": sim_cfg.sim_duration,
             "warmup": sim_cfg.resolved_warmup(),
             "n_replications": sim_cfg.n_replications}
    rows = [_rep_row(i, rep) for i, rep in enumerate(report.replications)]
    means = ["mean", report.offered_app, report.offered_phy,
             report.uu.mean, report.cu.mean, report.cd.mean,
             report.delta_ul.mean, report.delta_dl.mean, report.jain.mean,
             report.f_nmd.mean, report.f_gwtx.mean, report.f_int.mean,
             report.dc_violations]
    cis = ["ci95", None, None,
           report.uu.halfwidth, report.cu.halfwidth, report.cd.halfwidth,
           report.delta_ul.halfwidth, report.delta_dl.halfwidth,
           report.jain.halfwidth,
           report.f_nmd.halfwidth, report.f_gwtx.halfwidth,
           report.f_int.halfwidth, None]
    if args.format == "doc":
        doc = {"command": "simulate", "config": cfg.to_dict(), "sim": extra,
               "replications": [dict(zip(_REP_COLUMNS, row)) for row in rows],
               "mean": dict(zip(_REP_COLUMNS, means)),
               "ci95": dict(zip(_REP_COLUMNS, cis))}
        text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    else:
        text = _csv(_config_header(cfg, "simulate", extra), list(_REP_COLUMNS),
                    rows + [means, cis])
    _write_out(text, args.out)
    return EXIT_OK


# -- optimize ------------------------------------------------------------------

def _parse_int_grid(spec: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in spec.split(",") if v.strip() != "")
    except ValueError as exc:
        raise ValidationError(f"cannot parse grid {spec!r}") from exc
    if not values:
        raise ValidationError("grid must be non-empty")
    return values


def cmd_optimize(args) -> int:
    cfg = _resolve_config(args)
    lambdas = tuple(_parse_values(args.lambdas))
    try:
        problem = OptimizationProblem(
            base_cfg=cfg,
            lambdas=lambdas,
            m_grid=_parse_int_grid(args.m_grid),
            h_grid=_parse_int_grid(args.h_grid),
            objective=args.objective,
            max_ascent_iters=args.max_ascent_iters,
            perturbed_restarts=args.perturbed_restarts,
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    result = run_optimize(problem, workers=args.workers)

    records = [{
        "lambda": r.lam, "m": r.m, "h": r.h, "value": r.value,
        "p_unconfirmed": list(r.p_unconfirmed), "p_confirmed": list(r.p_confirmed),
        "iterations": r.iterations, "evaluations": r.evaluations,
        "start": r.start, "solver_converged": r.solver_converged,
    } for r in result.records]
    doc = {"command": "optimize", "config": cfg.to_dict(),
           "objective": args.objective,
           "m_grid": list(problem.m_grid), "h_grid": list(problem.h_grid),
           "lambdas": list(lambdas),
           "best": {"value": result.best_value, "config": result.best_cfg.to_dict()},
           "records": records}
    if args.format == "csv":
        columns = ["lambda", "m", "h", "value", "iterations", "evaluations",
                   "start", "solver_converged"] \
            + [f"p_u_sf{s}" for s in range(7, 13)] + [f"p_c_sf{s}" for s in range(7, 13)]
        rows = [[r.lam, r.m, r.h, r.value, r.iterations, r.evaluations, r.start,
                 r.solver_converged] + list(r.p_unconfirmed) + list(r.p_confirmed)
                for r in result.records]
        text = _csv(_config_header(cfg, "optimize", {"objective": args.objective}),
                    columns, rows)
    else:
        text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    _write_out(text, args.out)
    return EXIT_OK


# -- compare -------------------------------------------------------------------

def cmd_compare(args) -> int:
    cfg = _resolve_config(args)
    state = analytic.solve(cfg, tol=args.tol, max_iter=args.max_iter)
    report = metrics.compute_report(state, cfg)
    sim_cfg = _sim_config(args, cfg)
    sim_report = simulate.run(sim_cfg, workers=args.workers)

    pairs = [
        ("uu", report.uu, sim_report.uu),
        ("cu", report.cu, sim_report.cu),
        ("cd", report.cd, sim_report.cd),
        ("f_nmd", report.f_nmd, sim_report.f_nmd),
        ("f_gwtx", report.f_gwtx, sim_report.f_gwtx),
        ("f_int", report.f_int, sim_report.f_int),
        ("delta_ul", report.delta_ul, sim_report.delta_ul),
        ("delta_dl", report.delta_dl, sim_report.delta_dl),
        ("jain", report.jain, sim_report.jain),
    ]
    rows = []
    for name, model_value, summary in pairs:
        sim_value = summary.mean
        diff = (abs(model_value - sim_value)
                if model_value is not None and sim_value is not None else None)
        rows.append([name, model_value, sim_value, diff, summary.halfwidth])
    extra = {"seed": sim_cfg.seed, "n_replications": sim_cfg.n_replications,
             "sim_duration": sim_cfg.sim_duration}
    if args.format == "doc":
        doc = {"command": "compare", "config": cfg.to_dict(), "sim": extra,
               "rows": [dict(zip(("metric", "analytic", "simulated", "abs_diff",
                                  "sim_ci95"), row)) for row in rows]}
        text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    else:
        text = _csv(_config_header(cfg, "compare", extra),
                    ["metric", "analytic", "simulated", "abs_diff", "sim_ci95"], rows)
    _write_out(text, args.out)
    return EXIT_OK if state.converged else EXIT_NO_CONVERGENCE


# -- parser ---------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="scenario YAML file (defaults when omitted)")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a scenario key (dotted paths allowed)")
    sub.add_argument("--renormalize", action="store_true",
                     help="rescale SF distributions that do not sum to 1")
    sub.add_argument("--out", help="output path (stdout when omitted)")
    sub.add_argument("--format", choices=("csv", "doc"), default=None)


def _add_solver(sub):
    sub.add_argument("--tol", type=float, default=1e-10)
    sub.add_argument("--max-iter", type=int, default=1000)


def _add_sim(sub):
    sub.add_argument("--devices", type=int, default=1200)
    sub.add_argument("--arrivals", choices=("poisson", "periodic"), default="poisson")
    sub.add_argument("--capture", choices=("probabilistic", "geometric"),
                     default="probabilistic")
    sub.add_argument("--radius", type=float, default=2500.0)
    sub.add_argument("--path-loss-exponent", type=float, default=3.76)
    sub.add_argument("--cr-db", type=float, default=6.0)
    sub.add_argument("--duration", type=float, default=3600.0)
    sub.add_argument("--warmup", type=float, default=None)
    sub.add_argument("--seed", type=int, default=1)
    sub.add_argument("--replications", type=int, default=10)
    sub.add_argument("--trace", default=None, help="append per-event trace lines to this file")
    sub.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loracell",
        description="Steady-state model, optimizer and Monte-Carlo simulator "
                    "of a single-gateway LoRaWAN cell.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("solve", help="solve one scenario and print its metrics")
    _add_common(p); _add_solver(p)
    p.add_argument("--full-state", action="store_true",
                   help="include the converged per-SF state vectors")
    p.set_defaults(func=cmd_solve, default_format="doc")

    p = subs.add_parser("sweep", help="solve across one swept parameter")
    _add_common(p); _add_solver(p)
    p.add_argument("--axis", required=True, help="dotted config key, e.g. lambda_total")
    p.add_argument("--values", required=True,
                   help="comma list, or start:stop:count[:log|lin]")
    p.add_argument("--outputs", default=None,
                   help=f"comma list of metric columns (default all: {','.join(_SWEEP_METRICS)})")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep, default_format="csv")

    p = subs.add_parser("simulate", help="run the Monte-Carlo simulator")
    _add_common(p); _add_sim(p)
    p.set_defaults(func=cmd_simulate, default_format="csv")

    p = subs.add_parser("optimize", help="search SF distributions and (m, h)")
    _add_common(p)
    p.add_argument("--lambdas", required=True,
                   help="traffic loads: comma list or start:stop:count[:log|lin]")
    p.add_argument("--m-grid", default="1,2,3,4,5,6,7,8")
    p.add_argument("--h-grid", default="1,2,3,4,5,6,7,8")
    p.add_argument("--objective", default="uu_plus_cd",
                   choices=sorted(OBJECTIVES))
    p.add_argument("--max-ascent-iters", type=int, default=60)
    p.add_argument("--perturbed-restarts", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_optimize, default_format="doc")

    p = subs.add_parser("compare", help="solve and simulate, join the metrics")
    _add_common(p); _add_solver(p); _add_sim(p)
    p.set_defaults(func=cmd_compare, default_format="csv")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = args.default_format
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except yaml.YAMLError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except analytic.ModelError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except simulate.SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
