"""Command-line front end: ``run``, ``sweep``, ``list-scenarios`` and ``check``.

Configs are sectioned key-value text read with :mod:`configparser`::

    [scenario]
    name = stones
    controller = clf_ecbf_qp
    r1 = 1.0

    [run]
    duration = 10
    ctrl_dt = 0.001

    [sweep]
    param = p_relax
    values = 1, 10, 100, 1000

Exit status: 0 safe, 2 safety violation or infeasible QP, 3 numerical
failure, 1 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import difflib
import json
import math
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import scenarios
from .core import check_gradient_consistency
from .backup import backup_h_batch
from .errors import CbfError, ConfigError, NumericalFailure, ParseError, UnknownScenario
from .sim import (FAIL_NUMERICAL, RunConfig, exponential_bound_check, invariance_report,
                  nu_minima, run_closed_loop)

EXIT_SAFE, EXIT_USAGE, EXIT_UNSAFE, EXIT_NUMERICAL = 0, 1, 2, 3

SECTIONS = ("scenario", "run", "sweep")
RUN_KEYS = {"ctrl_dt": float, "sim_substeps": int, "duration": float, "seed": int,
            "noise_std": float, "x0": tuple, "out": str, "tol": float}
SWEEP_KEYS = {"param": str, "values": tuple, "jobs": int}
_KEY_RE = re.compile(r"^[a-z][a-z0-9_]*$")
_SECTION_RE = re.compile(r"^\s*\[([^\]]*)\]")
_OPTION_RE = re.compile(r"^\s*([^=:\s#;][^=:]*?)\s*[=:]")


@dataclass(frozen=True)
class CliConfig:
    scenario: str
    controller: str
    params: dict = field(default_factory=dict)
    run: RunConfig = field(default_factory=RunConfig)
    out: str = "out"
    tol: float = 1e-3
    sweep_param: Optional[str] = None
    sweep_values: tuple = ()
    jobs: int = 1

    def with_params(self, **overrides) -> "CliConfig":
        return dataclasses.replace(self, params={**self.params, **overrides})


# parsing -----------------------------------------------------------------------

def _line_map(text):
    """``{(section, key): line_number}`` and ``{section: line_number}``."""
    keys, sections = {}, {}
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1).strip()
            sections.setdefault(current, i)
            continue
        m = _OPTION_RE.match(line)
        if m and current is not None and not line[:1].isspace():
            keys.setdefault((current, m.group(1).strip()), i)
    return keys, sections


def _number(raw, line, key):
    try:
        v = float(raw)
    except ValueError:
        raise ParseError(f"{key}: expected a number, got {raw!r}", line) from None
    if not math.isfinite(v):
        raise ParseError(f"{key}: value must be finite, got {raw!r}", line)
    return v


def _value(raw, line, key, kind=None):
    raw = raw.strip()
    if raw == "":
        raise ParseError(f"{key}: empty value", line)
    if kind is str:
        return raw
    parts = [p.strip() for p in raw.split(",")]
    nums = tuple(_number(p, line, key) for p in parts)
    if kind is tuple:
        return nums
    if len(nums) > 1:
        return nums
    if kind is int:
        if not float(nums[0]).is_integer():
            raise ParseError(f"{key}: expected an integer, got {raw!r}", line)
        return int(nums[0])
    return nums[0]


def _unknown(keys, valid, section, lines):
    msgs = []
    for k in keys:
        hint = difflib.get_close_matches(k, list(valid), n=1, cutoff=0.6)
        where = f"line {lines[(section, k)]}: " if (section, k) in lines else ""
        msgs.append(f"{where}unknown key {k!r} in [{section}]"
                    + (f"; did you mean {hint[0]!r}?" if hint else ""))
    return ConfigError("; ".join(msgs))


def parse_config(text: str) -> CliConfig:
    """Parse and validate config text; defaults are filled from the scenario."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   empty_lines_in_values=False, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("key-value line before any [section] header", exc.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ParseError(exc.message.split(":", 1)[-1].strip(), exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0]
        bad = text.splitlines()[lineno - 1].strip() if lineno <= len(text.splitlines()) else ""
        raise ParseError(f"expected 'key = value', got {bad!r}", lineno) from None
    lines, section_lines = _line_map(text)

    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ParseError(f"unknown section [{sec}]; expected one of "
                             + ", ".join(f"[{s}]" for s in SECTIONS), section_lines.get(sec))
        for key in cp[sec]:
            if not _KEY_RE.match(key):
                raise ParseError(f"key {key!r} must be lowercase snake_case", lines.get((sec, key)))
    if not cp.has_section("scenario") or "name" not in cp["scenario"]:
        raise ConfigError("config must set 'name' in [scenario]")

    sc = cp["scenario"]
    name = sc["name"].strip()
    entry = scenarios.entry(name)
    controller = sc.get("controller", entry.controllers[-1]).strip()
    if controller not in entry.controllers:
        raise ConfigError(f"scenario {name!r} has no controller {controller!r}; "
                          f"available: {', '.join(entry.controllers)}")
    valid = scenarios.parameter_keys(name)
    param_keys = [k for k in sc if k not in ("name", "controller")]
    bad = [k for k in param_keys if k not in valid]
    if bad:
        raise _unknown(bad, list(valid) + ["name", "controller"], "scenario", lines)
    params = {k: _value(sc[k], lines.get(("scenario", k)), k) for k in param_keys}

    run_vals, out, tol = {}, "out", 1e-3
    if cp.has_section("run"):
        bad = [k for k in cp["run"] if k not in RUN_KEYS]
        if bad:
            raise _unknown(bad, RUN_KEYS, "run", lines)
        for k in cp["run"]:
            v = _value(cp["run"][k], lines.get(("run", k)), k, RUN_KEYS[k])
            if k == "out":
                out = v
            elif k == "tol":
                tol = v
            else:
                run_vals[k] = v

    sweep_param, sweep_values, jobs = None, (), 1
    if cp.has_section("sweep"):
        sw = cp["sweep"]
        bad = [k for k in sw if k not in SWEEP_KEYS]
        if bad:
            raise _unknown(bad, SWEEP_KEYS, "sweep", lines)
        if "param" not in sw or "values" not in sw:
            raise ConfigError("[sweep] needs both 'param' and 'values'")
        sweep_param = _value(sw["param"], lines.get(("sweep", "param")), "param", str)
        if sweep_param not in valid:
            raise _unknown([sweep_param], valid, "scenario", {})
        sweep_values = _value(sw["values"], lines.get(("sweep", "values")), "values", tuple)
        if "jobs" in sw:
            jobs = _value(sw["jobs"], lines.get(("sweep", "jobs")), "jobs", int)

    return _assemble(name, controller, params, run_vals, out, tol, sweep_param, sweep_values, jobs)


def _assemble(name, controller, params, run_vals, out, tol, sweep_param=None, sweep_values=(),
              jobs=1):
    try:
        scenarios.make_params(name, params)
        default_run = scenarios.build(name, params).run
        if "x0" in run_vals:
            run_vals = {**run_vals, "x0": tuple(float(v) for v in run_vals["x0"])}
        run = dataclasses.replace(default_run, **run_vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return CliConfig(name, controller, params, run, out, tol, sweep_param, tuple(sweep_values), jobs)


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_text(cfg: CliConfig) -> str:
    """Serialize ``cfg``; ``parse_config(to_text(cfg)) == cfg``."""
    out = ["[scenario]", f"name = {cfg.scenario}", f"controller = {cfg.controller}"]
    out += [f"{k} = {_fmt(v)}" for k, v in sorted(cfg.params.items())]
    out += ["", "[run]"]
    for f in dataclasses.fields(RunConfig):
        v = getattr(cfg.run, f.name)
        if v is not None:
            out.append(f"{f.name} = {_fmt(v)}")
    out += [f"out = {cfg.out}", f"tol = {_fmt(cfg.tol)}"]
    if cfg.sweep_param is not None:
        out += ["", "[sweep]", f"param = {cfg.sweep_param}", f"values = {_fmt(cfg.sweep_values)}",
                f"jobs = {cfg.jobs}"]
    return "\n".join(out) + "\n"


# commands ------------------------------------------------------------------------

def exit_status(log, report) -> int:
    if log.failure == FAIL_NUMERICAL:
        return EXIT_NUMERICAL
    if log.failure is not None or not report.safe:
        return EXIT_UNSAFE
    return EXIT_SAFE


def _delta_stats(delta):
    d = np.asarray(delta, dtype=float)
    if d.size == 0:
        return {"mean_abs": None, "max": None, "min": None}
    return {"mean_abs": float(np.mean(np.abs(d))), "max": float(d.max()), "min": float(d.min())}


def execute(cfg: CliConfig, csv_path: Optional[Path] = None) -> dict:
    """Run one simulation; returns the summary dict (exit status included)."""
    scenario = scenarios.build(cfg.scenario, cfg.params, cfg.run)
    t0 = time.perf_counter()
    log = run_closed_loop(scenario, cfg.controller, cfg.run)
    runtime = time.perf_counter() - t0
    report = invariance_report(log, cfg.tol)
    summary = {
        "scenario": cfg.scenario,
        "controller": cfg.controller,
        "params": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.params.items()},
        "rows": len(log),
        "runtime_s": runtime,
        **report.as_dict(),
        "failure_time": log.failure_time,
        "failure_message": log.failure_message,
        "delta": _delta_stats(log.delta),
    }
    if scenario.ecbf_designs and cfg.controller != "nominal" and len(log):
        summary["exponential_bound_margin"] = exponential_bound_check(log, scenario.ecbf_designs, cfg.tol)
        summary["nu_minima"] = nu_minima(log, scenario.ecbf_designs)
    summary["exit_status"] = exit_status(log, report)
    if csv_path is not None:
        log.to_csv(csv_path)
        summary["csv"] = str(csv_path)
    return summary


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o).__name__)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _prepare_out(out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_command(cfg: CliConfig) -> int:
    out = _prepare_out(cfg.out)
    stem = f"{cfg.scenario}__{cfg.controller}"
    summary = execute(cfg, out / f"{stem}.csv")
    (out / f"{stem}.cfg").write_text(to_text(cfg))
    _write_json(out / f"{stem}.summary.json", summary)
    _print_summary(summary)
    return summary["exit_status"]


def _sweep_one(args):
    cfg, path = args
    return execute(cfg, path)


def sweep_command(cfg: CliConfig) -> int:
    if cfg.sweep_param is None or not cfg.sweep_values:
        raise ConfigError("sweep needs [sweep] param and values (or --param/--values)")
    out = _prepare_out(cfg.out)
    jobs = [(cfg.with_params(**{cfg.sweep_param: v}),
             out / f"{cfg.scenario}__{cfg.controller}__{cfg.sweep_param}_{i}.csv")
            for i, v in enumerate(cfg.sweep_values)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    table = [{"value": v, "mean_abs_delta": r["delta"]["mean_abs"], "max_delta": r["delta"]["max"],
              "min_h": min(r["min_h"]) if r["min_h"] else None, "safe": r["safe"],
              "exit_status": r["exit_status"], "csv": r["csv"]}
             for v, r in zip(cfg.sweep_values, results)]
    (out / "sweep.cfg").write_text(to_text(cfg))
    _write_json(out / "sweep_summary.json", {"param": cfg.sweep_param, "table": table, "runs": results})
    print(f"{cfg.sweep_param:>12} {'mean|delta|':>14} {'max delta':>12} {'min h':>12}  safe")
    for row in table:
        print(f"{row['value']:>12.6g} {_num(row['mean_abs_delta']):>14} {_num(row['max_delta']):>12} "
              f"{_num(row['min_h']):>12}  {row['safe']}")
    codes = [r["exit_status"] for r in results]
    return EXIT_NUMERICAL if EXIT_NUMERICAL in codes else max(codes)


def _num(v):
    return "-" if v is None else f"{v:.6g}"


def _print_summary(s):
    mins = ", ".join(f"{n}={v:.6g}" for n, v in zip(s["barrier_names"], s["min_h"]))
    verdict = "SAFE" if s["safe"] else "UNSAFE"
    print(f"{s['scenario']}/{s['controller']}: {verdict}  min h: {mins}  rows={s['rows']}  "
          f"runtime={s['runtime_s']:.2f}s")
    if s["first_violation_time"] is not None:
        print(f"  first violation at t={s['first_violation_time']:.6g}")
    if s["failure"]:
        print(f"  failure ({s['failure']}) at t={s['failure_time']}: {s['failure_message']}")


@dataclass(frozen=True)
class CheckResult:
    scenario: str
    item: str
    kind: str
    passed: bool
    worst: float


def check_scenario(name: str, n_samples: int = 20, seed: int = 0) -> list:
    """Gradient and Lie-chain consistency on states sampled near ``x0``."""
    sc = scenarios.build(name)
    rng = np.random.default_rng(seed)
    x0 = np.asarray(sc.x0, dtype=float)
    samples = x0 + 0.05 * np.maximum(1.0, np.abs(x0)) * rng.standard_normal((n_samples, x0.size))
    results = []
    for spec in sc.barrier_specs:
        rep = check_gradient_consistency(spec, samples)
        results.append(CheckResult(name, spec.name, "gradient", rep.passed, rep.max_deviation))
    if sc.lyapunov is not None:
        rep = check_gradient_consistency(sc.lyapunov, samples)
        results.append(CheckResult(name, sc.lyapunov.name, "gradient", rep.passed, rep.max_deviation))
    for d in sc.ecbf_designs:
        worst, ok = d.chain.check_consistency(sc.sys, samples)
        results.append(CheckResult(name, d.name, "lie_chain", ok, worst))
    if sc.backup is not None:
        b = sc.backup
        h = backup_h_batch(b, samples)
        rho = np.array([float(b.rho(x)) for x in samples])
        gap = float(np.max(h - rho))
        results.append(CheckResult(name, b.name, "h_le_rho", gap <= 1e-12, gap))
        if b.grad_rho is not None:
            from .core import BarrierSpec
            rep = check_gradient_consistency(BarrierSpec(b.rho, b.grad_rho, name="rho"), samples)
            results.append(CheckResult(name, "rho", "gradient", rep.passed, rep.max_deviation))
    return results


def check_command(names) -> int:
    ok = True
    for name in names:
        for r in check_scenario(name):
            ok &= r.passed
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.scenario:<14} {r.item:<10} {r.kind:<10} "
                  f"worst={r.worst:.3e}")
    return EXIT_SAFE if ok else EXIT_NUMERICAL


def list_command() -> int:
    for name in scenarios.names():
        e = scenarios.entry(name)
        print(f"{name:<14} controllers: {', '.join(e.controllers):<38} {e.description}")
    return EXIT_SAFE


# argument handling -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parser():
    p = _Parser(prog="cbfsynth", description="CBF/CLF controller synthesis experiments")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("run", "sweep"):
        s = sub.add_parser(verb)
        s.add_argument("--config", type=Path)
        s.add_argument("--scenario")
        s.add_argument("--controller")
        s.add_argument("--out")
        s.add_argument("--duration", type=float)
        s.add_argument("--seed", type=int)
        if verb == "sweep":
            s.add_argument("--param")
            s.add_argument("--values", help="comma-separated numbers")
            s.add_argument("--jobs", type=int)
    sub.add_parser("list-scenarios")
    c = sub.add_parser("check")
    c.add_argument("--scenario", action="append", help="repeatable; default is every scenario")
    return p


def config_from_args(args) -> CliConfig:
    if args.config is not None:
        cfg = parse_config(args.config.read_text(encoding="utf-8"))
    elif args.scenario is not None:
        cfg = None
    else:
        raise ConfigError("give --config or --scenario")
    name = args.scenario or cfg.scenario
    entry = scenarios.entry(name)
    same = cfg is not None and cfg.scenario == name
    params = dict(cfg.params) if same else {}
    controller = args.controller or (cfg.controller if same else entry.controllers[-1])
    if controller not in entry.controllers:
        raise ConfigError(f"scenario {name!r} has no controller {controller!r}; "
                          f"available: {', '.join(entry.controllers)}")
    run_vals = {}
    if same:
        run_vals = {f.name: getattr(cfg.run, f.name) for f in dataclasses.fields(RunConfig)}
        if cfg.run.x0 is None:
            run_vals.pop("x0")
    if args.duration is not None:
        run_vals["duration"] = args.duration
    if args.seed is not None:
        run_vals["seed"] = args.seed
    out = args.out or (cfg.out if cfg is not None else "out")
    tol = cfg.tol if cfg is not None else 1e-3
    sweep_param = cfg.sweep_param if cfg is not None else None
    sweep_values = cfg.sweep_values if cfg is not None else ()
    jobs = cfg.jobs if cfg is not None else 1
    if getattr(args, "param", None):
        sweep_param = args.param
        if sweep_param not in scenarios.parameter_keys(name):
            raise _unknown([sweep_param], scenarios.parameter_keys(name), "scenario", {})
    if getattr(args, "values", None):
        sweep_values = _value(args.values, None, "values", tuple)
    if getattr(args, "jobs", None):
        jobs = args.jobs
    return _assemble(name, controller, params, run_vals, out, tol, sweep_param, sweep_values, jobs)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "list-scenarios":
            return list_command()
        if args.verb == "check":
            names = args.scenario or scenarios.names()
            for n in names:
                scenarios.entry(n)
            return check_command(names)
        cfg = config_from_args(args)
        return run_command(cfg) if args.verb == "run" else sweep_command(cfg)
    except (ParseError, ConfigError, UnknownScenario) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CbfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
