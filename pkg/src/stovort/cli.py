"""Command line front end.

Subcommands:

* ``simulate``: one trajectory; writes ``timeseries.csv``,
  ``balance.csv``, and the final state as ``final.ckpt``.
* ``sweep``: the viscosity ladder; writes ``sweep.csv``,
  ``spectra.csv``, and ``verdicts.txt``.
* ``spectrum``: one trajectory; writes the time-averaged enstrophy
  spectrum as ``spectrum.csv``.
* ``check-noise``: prints the forcing nondegeneracy report.

Flag precedence is defaults < config file < command line. Every
writing subcommand also drops ``manifest.json`` holding the fully
resolved config text, the package version, and the seed; outputs are
pure functions of that manifest, so rerunning it reproduces them byte
for byte (no timestamps anywhere).

Exit codes: 0 success, 1 validation failure, 2 numerical blow-up.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import __version__
from .config import (
    ConfigError,
    RunConfig,
    build_sim_params,
    build_sweep_config,
    emit_config,
    parse_config,
    run_steps,
)
from .diagnostics import (
    Collector,
    balance_report,
    spectrum_shells,
    write_balance_csv,
    write_timeseries,
)
from .experiments import (
    default_burn_in,
    viscosity_sweep,
    write_spectra_csv,
    write_sweep_csv,
    write_verdicts,
)
from .integrator import BlowUpError, checkpoint, integrate
from .noise import check_hm_condition


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; 2 is reserved for
    # blow-ups here, so usage problems are rethrown as validation errors.
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="stovort", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "sweep", "spectrum", "check-noise"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="flat key = value config file")
        if name == "check-noise":
            continue
        p.add_argument("--seed", type=int, help="master seed (u64)")
        p.add_argument("--output-dir", dest="output_dir", help="where outputs land")
        p.add_argument("--nu", type=float, help="viscosity override")
        p.add_argument("--gamma", type=float, help="drag override")
        p.add_argument("--steps", type=int, help="step-count override")
        p.add_argument("--grid", type=int, help="truncation K override")
    return parser


def _load_config(args) -> RunConfig:
    if args.config is not None:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        cfg = parse_config(text, mode=args.command)
    else:
        cfg = replace(RunConfig(), mode=args.command)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be a u64")
        overrides["seed"] = args.seed
    if getattr(args, "output_dir", None) is not None:
        overrides["output_dir"] = args.output_dir
    if getattr(args, "nu", None) is not None:
        if args.nu < 0:
            raise ConfigError("--nu must be >= 0")
        overrides["nu"] = args.nu
    if getattr(args, "gamma", None) is not None:
        if args.gamma <= 0:
            raise ConfigError("--gamma must be > 0")
        overrides["gamma"] = args.gamma
    if getattr(args, "steps", None) is not None:
        if args.steps < 1:
            raise ConfigError("--steps must be >= 1")
        overrides["steps"] = args.steps
        overrides["total_time"] = None
    if getattr(args, "grid", None) is not None:
        if args.grid < 2:
            raise ConfigError("--grid must be >= 2")
        overrides["K"] = args.grid
    return replace(cfg, **overrides) if overrides else cfg


def _write_manifest(out: Path, cfg: RunConfig, outputs: List[str]) -> None:
    doc = {
        "version": __version__,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "config": emit_config(cfg),
        "outputs": sorted(outputs),
    }
    (out / "manifest.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _cmd_simulate(cfg: RunConfig) -> int:
    params = build_sim_params(cfg)
    burn_in = cfg.burn_in if cfg.burn_in is not None else default_burn_in(params.gamma)
    rows = []
    sink = rows.append if cfg.write_timeseries else None
    collector = Collector(
        params.trunc,
        burn_in=burn_in,
        target_batches=cfg.target_batches,
        grid_observables=cfg.grid_observables,
        accumulate_spectrum=False,
        sink=sink,
    )
    final = integrate(
        params, n_steps=run_steps(cfg), observer=collector, observe_every=cfg.observe_every
    )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["final.ckpt"]
    (out / "final.ckpt").write_bytes(checkpoint(final, params))
    if cfg.write_timeseries:
        write_timeseries(out / "timeseries.csv", rows)
        outputs.append("timeseries.csv")
    try:
        report = balance_report(collector.stats, params.nu, params.gamma, params.noise)
        write_balance_csv(out / "balance.csv", [report])
        outputs.append("balance.csv")
    except ValueError as exc:
        print(f"note: no balance report ({exc})", file=sys.stderr)
    _write_manifest(out, cfg, outputs)
    return 0


def _cmd_spectrum(cfg: RunConfig) -> int:
    params = build_sim_params(cfg)
    burn_in = cfg.burn_in if cfg.burn_in is not None else default_burn_in(params.gamma)
    collector = Collector(
        params.trunc,
        burn_in=burn_in,
        target_batches=cfg.target_batches,
        grid_observables=False,
        accumulate_spectrum=True,
    )
    integrate(
        params, n_steps=run_steps(cfg), observer=collector, observe_every=cfg.observe_every
    )
    mean = collector.mean_spectrum()
    if mean is None:
        raise ConfigError(
            f"run too short: no samples past burn_in = {burn_in:g}; "
            "raise steps or lower burn_in"
        )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["k,E"]
    for shell, value in zip(spectrum_shells(params.trunc), mean):
        lines.append(f"{int(shell)},{format(float(value), '.17g')}")
    (out / "spectrum.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(out, cfg, ["spectrum.csv"])
    return 0


def _cmd_sweep(cfg: RunConfig) -> int:
    sweep_cfg = build_sweep_config(cfg)
    report = viscosity_sweep(sweep_cfg, workers=cfg.workers)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(report, out / "sweep.csv")
    write_spectra_csv(report, out / "spectra.csv")
    write_verdicts(report, out / "verdicts.txt")
    _write_manifest(out, cfg, ["sweep.csv", "spectra.csv", "verdicts.txt"])
    bad = [p for p in report.points if not p.valid]
    if bad:
        for p in bad:
            for msg in p.failures:
                print(f"error: blow-up at nu = {p.nu:g}: {msg}", file=sys.stderr)
        return 2
    return 0


def _cmd_check_noise(cfg: RunConfig) -> int:
    report = check_hm_condition(cfg.forcing)
    print(report.describe())
    return 0 if report.ok else 1


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load_config(args)
        if args.command == "simulate":
            return _cmd_simulate(cfg)
        if args.command == "sweep":
            return _cmd_sweep(cfg)
        if args.command == "spectrum":
            return _cmd_spectrum(cfg)
        return _cmd_check_noise(cfg)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BlowUpError as exc:
        print(
            f"error: blow-up at t = {exc.t:.6g} after {exc.step_count} steps: {exc.reason}",
            file=sys.stderr,
        )
        return 2
    except RuntimeError as exc:
        # total replica loss inside a sweep surfaces here
        print(f"error: {exc}", file=sys.stderr)
        return 2
