"""Flat key = value run configuration.

The format is one assignment per line, ``#`` starts a comment, and
forcing modes are given as repeated ``force k1 k2 q`` lines:

    mode = simulate
    nu = 0.1
    gamma = 1.0
    K = 32
    force 1 0 1.0
    force 1 1 1.0

Every key is checked against the schema and every violation is
reported with its line number. :func:`emit_config` writes a config back
out with floats at 17 significant digits, so ``parse_config`` composed
with it is the identity; emitted text doubles as the run manifest's
authoritative record.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Tuple

from .experiments import DEFAULT_LADDER, SweepConfig
from .integrator import DEFAULT_H, SimParams
from .noise import NoiseSpec, default_forcing, in_half_lattice
from .spectral import TruncationSpec

MODES = ("simulate", "sweep", "check-noise", "spectrum")

DEFAULT_STEPS = 20_000
DEFAULT_SWEEP_TIME = 1200.0


@dataclass(frozen=True)
class RunConfig:
    """Fully parsed configuration for any CLI mode.

    Duration is either ``steps`` or ``total_time``, never both; when
    neither is given the mode default applies (20000 steps for a
    single run, 1200 time units per sweep point). ``nu`` and ``gamma``
    stay None until required so check-noise configs can omit them.
    """

    mode: str = "simulate"
    K: int = 32
    N: Optional[int] = None
    nu: Optional[float] = None
    gamma: Optional[float] = None
    h: float = DEFAULT_H
    nonlinearity: bool = True
    seed: int = 0
    stream: int = 0
    forcing: NoiseSpec = field(default_factory=default_forcing)
    steps: Optional[int] = None
    total_time: Optional[float] = None
    burn_in: Optional[float] = None
    observe_every: int = 10
    grid_observables: bool = True
    write_timeseries: bool = True
    output_dir: str = "runs"
    nu_ladder: Tuple[float, ...] = DEFAULT_LADDER
    include_euler: bool = True
    replicas: int = 4
    threshold: float = 0.1
    target_batches: int = 30
    workers: int = 1


class ConfigError(ValueError):
    """A config line failed validation; the message names the line."""


def _parse_bool(raw: str, line_no: int, key: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ConfigError(f"line {line_no}: {key} must be 'true' or 'false', got {raw!r}")


def _parse_int(raw: str, line_no: int, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"line {line_no}: {key} expects an integer, got {raw!r}") from None


def _parse_float(raw: str, line_no: int, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"line {line_no}: {key} expects a number, got {raw!r}") from None


def _parse_ladder(raw: str, line_no: int, key: str) -> Tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in raw.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(
            f"line {line_no}: nu_ladder expects comma-separated numbers, got {raw!r}"
        ) from None


# key -> (parser, validator, requirement text); validators see the parsed value
_SCHEMA = {
    "mode": (str, lambda v: v in MODES, f"one of {', '.join(MODES)}"),
    "K": (_parse_int, lambda v: v >= 2, ">= 2"),
    "N": (_parse_int, lambda v: v >= 4, ">= 4"),
    "nu": (_parse_float, lambda v: v >= 0.0, ">= 0 (viscosity)"),
    "gamma": (_parse_float, lambda v: v > 0.0, "> 0 (the drag is fixed positive)"),
    "h": (_parse_float, lambda v: v > 0.0, "> 0"),
    "nonlinearity": (_parse_bool, None, None),
    "seed": (_parse_int, lambda v: 0 <= v < 2**64, "a u64"),
    "stream": (_parse_int, lambda v: 0 <= v < 2**64, "a u64"),
    "steps": (_parse_int, lambda v: v >= 1, ">= 1"),
    "total_time": (_parse_float, lambda v: v > 0.0, "> 0"),
    "burn_in": (_parse_float, lambda v: v > 0.0, "> 0"),
    "observe_every": (_parse_int, lambda v: v >= 1, ">= 1"),
    "grid_observables": (_parse_bool, None, None),
    "write_timeseries": (_parse_bool, None, None),
    "output_dir": (str, lambda v: bool(v), "a nonempty path"),
    "nu_ladder": (_parse_ladder, lambda v: len(v) > 0, "a nonempty list"),
    "include_euler": (_parse_bool, None, None),
    "replicas": (_parse_int, lambda v: v >= 1, ">= 1"),
    "threshold": (_parse_float, lambda v: 0.0 < v <= 1.0, "in (0, 1]"),
    "target_batches": (_parse_int, lambda v: v >= 5, ">= 5"),
    "workers": (_parse_int, lambda v: v >= 1, ">= 1"),
}


def parse_config(text: str, mode: Optional[str] = None) -> RunConfig:
    """Parse and fully validate a flat config; errors carry line numbers.

    ``mode`` (when given) overrides the file's own mode line before the
    mode-dependent required-key checks run; the CLI passes its
    subcommand here so a forcing-only config stays valid for
    check-noise.
    """
    values = {}
    force_lines = []
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "force":
            if len(tokens) != 4:
                raise ConfigError(
                    f"line {line_no}: force lines read 'force k1 k2 q', got {line!r}"
                )
            k1 = _parse_int(tokens[1], line_no, "force k1")
            k2 = _parse_int(tokens[2], line_no, "force k2")
            q = _parse_float(tokens[3], line_no, "force q")
            if (k1, k2) == (0, 0):
                raise ConfigError(
                    f"line {line_no}: mode (0, 0) cannot be forced; the field is mean-free"
                )
            if not q > 0:
                raise ConfigError(f"line {line_no}: force amplitude must be positive, got {q}")
            force_lines.append((line_no, (k1, k2), q))
            continue
        if "=" not in line:
            raise ConfigError(
                f"line {line_no}: expected 'key = value' or 'force k1 k2 q', got {line!r}"
            )
        key, _, raw_val = line.partition("=")
        key = key.strip()
        raw_val = raw_val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        if not raw_val:
            raise ConfigError(f"line {line_no}: empty value for {key!r}")
        parser, check, req = _SCHEMA[key]
        value = parser(raw_val, line_no, key) if parser is not str else raw_val
        if check is not None and not check(value):
            raise ConfigError(f"line {line_no}: {key} must be {req}, got {raw_val}")
        values[key] = value

    if force_lines:
        seen = {}
        for line_no, wavevec, q in force_lines:
            canon = wavevec if in_half_lattice(wavevec) else (-wavevec[0], -wavevec[1])
            if canon in seen:
                raise ConfigError(
                    f"line {line_no}: mode {wavevec} repeats the forcing at {canon} "
                    f"(first given on line {seen[canon]})"
                )
            seen[canon] = line_no
        values["forcing"] = NoiseSpec.from_modes(
            {wavevec: q for _, wavevec, q in force_lines}
        )

    if "steps" in values and "total_time" in values:
        raise ConfigError("config sets both steps and total_time; pick one duration")

    if mode is not None:
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        values["mode"] = mode
    cfg = RunConfig(**values)

    if cfg.mode in ("simulate", "spectrum", "sweep") and cfg.gamma is None:
        raise ConfigError(f"missing required key: gamma ({cfg.mode} needs the drag rate)")
    if cfg.mode in ("simulate", "spectrum") and cfg.nu is None:
        raise ConfigError(f"missing required key: nu ({cfg.mode} needs a viscosity)")
    return cfg


def _fmt_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def emit_config(cfg: RunConfig) -> str:
    """Render a config so that parsing it back reproduces ``cfg`` exactly."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if f.name == "forcing":
            for (k1, k2), q in value.entries:
                lines.append(f"force {k1} {k2} {format(q, '.17g')}")
            continue
        if f.name == "nu_ladder":
            lines.append("nu_ladder = " + ",".join(format(v, ".17g") for v in value))
            continue
        lines.append(f"{f.name} = {_fmt_value(value)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# building runtime objects

def build_sim_params(cfg: RunConfig) -> SimParams:
    """SimParams for a single run; needs nu and gamma present."""
    if cfg.nu is None or cfg.gamma is None:
        raise ValueError("config lacks nu or gamma; cannot build run parameters")
    return SimParams(
        trunc=TruncationSpec(cfg.K, cfg.N),
        noise=cfg.forcing,
        nu=cfg.nu,
        gamma=cfg.gamma,
        h=cfg.h,
        nonlinearity=cfg.nonlinearity,
        seed=cfg.seed,
        stream=cfg.stream,
    )


def run_steps(cfg: RunConfig) -> int:
    """Resolved step count for a single run."""
    if cfg.steps is not None:
        return cfg.steps
    if cfg.total_time is not None:
        return max(1, int(round(cfg.total_time / cfg.h)))
    return DEFAULT_STEPS


def build_sweep_config(cfg: RunConfig) -> SweepConfig:
    """SweepConfig from a parsed config; base viscosity is the ladder head."""
    if cfg.gamma is None:
        raise ValueError("config lacks gamma; cannot build a sweep")
    base = SimParams(
        trunc=TruncationSpec(cfg.K, cfg.N),
        noise=cfg.forcing,
        nu=cfg.nu if cfg.nu is not None else cfg.nu_ladder[0],
        gamma=cfg.gamma,
        h=cfg.h,
        nonlinearity=cfg.nonlinearity,
        seed=cfg.seed,
        stream=cfg.stream,
    )
    if cfg.total_time is not None:
        total = cfg.total_time
    elif cfg.steps is not None:
        total = cfg.steps * cfg.h
    else:
        total = DEFAULT_SWEEP_TIME
    return SweepConfig(
        base=base,
        nu_ladder=cfg.nu_ladder,
        include_euler=cfg.include_euler,
        replicas=cfg.replicas,
        total_time=total,
        burn_in=cfg.burn_in,
        observe_every=cfg.observe_every,
        threshold=cfg.threshold,
        target_batches=cfg.target_batches,
    )
