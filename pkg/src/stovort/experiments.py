"""Stationary-regime drivers: replicated runs and the viscosity ladder.

Two entry points. :func:`stationary_run` evolves one parameter set from
the zero field, one or more independent replicas, and merges their
post-burn-in statistics into a single balance report.
:func:`viscosity_sweep` repeats that along a decreasing viscosity
ladder (plus a damped-Euler run at nu = 0 when requested) with frozen
forcing, then renders the dissipation verdicts from the collected rows.

Seeding: every job shares the master seed and differs only in the
counter stream. Replica r of a run uses ``base_stream + r``; sweep
point p places its replicas under ``base_stream + p * STREAM_STRIDE``.
A report is therefore a pure function of its configuration; worker
count and completion order never enter the numbers.

Jobs are independent (one trajectory each) and may be handed to a
process pool with ``workers > 1``. Results are merged by job index.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .diagnostics import (
    BalanceReport,
    Collector,
    RunningStats,
    balance_report,
    spectrum_shells,
)
from .integrator import BlowUpError, SimParams, checkpoint, integrate
from .noise import total_q, velocity_q

# Room for replicas under one sweep point before streams would collide.
STREAM_STRIDE = 4096

DEFAULT_LADDER = (0.1, 0.05, 0.02, 0.01, 0.005)


def default_burn_in(gamma: float) -> float:
    """Burn-in window 10 / gamma: the drag sets the slowest relaxation."""
    return 10.0 / gamma


# ---------------------------------------------------------------------------
# replica jobs

def _run_replica(job):
    """Worker body: one trajectory, fully described by the job tuple.

    Returns a picklable dict; blow-ups are reported as data, not raised,
    so one bad replica cannot take down a pool.
    """
    (params, total_time, burn_in, observe_every, grid_observables,
     target_batches, accumulate_spectrum) = job
    col = Collector(
        params.trunc,
        burn_in=burn_in,
        target_batches=target_batches,
        grid_observables=grid_observables,
        accumulate_spectrum=accumulate_spectrum,
    )
    try:
        final = integrate(
            params, total_time=total_time, observer=col, observe_every=observe_every
        )
    except BlowUpError as exc:
        return {
            "failure": f"stream {params.stream}: {exc}",
            "stats": None,
            "spectrum": None,
            "spectrum_count": 0,
            "checkpoint": None,
            "digest": params.noise.digest(),
        }
    return {
        "failure": None,
        "stats": col.stats,
        "spectrum": col.mean_spectrum(),
        "spectrum_count": col.spectrum_count,
        "checkpoint": checkpoint(final, params),
        "digest": params.noise.digest(),
    }


def _run_jobs(jobs: Sequence[tuple], workers: int) -> List[dict]:
    if workers <= 1 or len(jobs) <= 1:
        return [_run_replica(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_replica, jobs))


def _make_jobs(
    params: SimParams,
    total_time: float,
    replicas: int,
    burn_in: float,
    observe_every: int,
    grid_observables: bool,
    target_batches: int,
    accumulate_spectrum: bool,
) -> List[tuple]:
    return [
        (
            replace(params, stream=params.stream + r),
            total_time,
            burn_in,
            observe_every,
            grid_observables,
            target_batches,
            accumulate_spectrum,
        )
        for r in range(replicas)
    ]


# ---------------------------------------------------------------------------
# stationary runs

@dataclass(frozen=True)
class RunResult:
    """Merged outcome of the replicas of one stationary run.

    ``report`` is the merged balance report; ``stats`` the merged batch
    means behind it (one segment per surviving replica); ``spectrum``
    the time-averaged enstrophy spectrum on integer shells. A replica
    that blew up contributes a message to ``failures`` and nothing
    else; ``valid`` is False as soon as any replica failed.
    """

    params: SimParams
    total_time: float
    burn_in: float
    report: BalanceReport
    stats: RunningStats
    spectrum: Optional[np.ndarray]
    final_checkpoints: Tuple[bytes, ...]
    valid: bool
    failures: Tuple[str, ...] = ()


def _merge_results(
    params: SimParams,
    results: Sequence[dict],
    total_time: float,
    burn_in: float,
    burn_in_probe: bool,
) -> RunResult:
    digest = params.noise.digest()
    for r in results:
        if r["digest"] != digest:
            raise RuntimeError(
                f"forcing drift: replica reported noise digest {r['digest']}, "
                f"expected {digest}"
            )
    failures = tuple(r["failure"] for r in results if r["failure"] is not None)
    ok = [r for r in results if r["failure"] is None]
    if not ok:
        raise RuntimeError(
            f"all {len(results)} replicas blew up; first failure: {failures[0]}"
        )
    stats = ok[0]["stats"] if len(ok) == 1 else RunningStats.merge([r["stats"] for r in ok])

    # Stationarity probe on the workhorse observable: if the two run
    # halves disagree beyond 2 sigma the burn-in was too short, so the
    # first half of every segment is discarded (conservative doubling).
    doubled = False
    if burn_in_probe:
        try:
            if not stats.halves_consistent("enstrophy", n_sigma=2.0):
                stats.drop_first_half()
                doubled = True
        except ValueError:
            pass  # too few batches to probe; the report will say so anyway

    spectrum = None
    counts = [r["spectrum_count"] for r in ok]
    if all(c > 0 for c in counts):
        weighted = sum(r["spectrum"] * r["spectrum_count"] for r in ok)
        spectrum = weighted / sum(counts)

    report = balance_report(
        stats, params.nu, params.gamma, params.noise, burn_in_doubled=doubled
    )
    return RunResult(
        params=params,
        total_time=float(total_time),
        burn_in=float(burn_in),
        report=report,
        stats=stats,
        spectrum=spectrum,
        final_checkpoints=tuple(r["checkpoint"] for r in ok),
        valid=not failures,
        failures=failures,
    )


def stationary_run(
    params: SimParams,
    total_time: float,
    replicas: int = 1,
    *,
    burn_in: Optional[float] = None,
    observe_every: int = 10,
    grid_observables: bool = True,
    target_batches: int = 30,
    accumulate_spectrum: bool = True,
    burn_in_probe: bool = True,
    workers: int = 1,
) -> RunResult:
    """Run ``replicas`` trajectories from the zero field and merge them.

    ``burn_in`` defaults to 10 / gamma; the run must satisfy
    ``total_time >= 20 * burn_in`` so the averaging window dominates
    the discarded transient. Replica r uses stream
    ``params.stream + r`` under the shared seed.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if burn_in is None:
        burn_in = default_burn_in(params.gamma)
    if total_time < 20.0 * burn_in:
        raise ValueError(
            f"total_time = {total_time} is shorter than 20 * burn_in = {20.0 * burn_in}; "
            "the averaging window would not dominate the transient"
        )
    jobs = _make_jobs(
        params, total_time, replicas, burn_in, observe_every,
        grid_observables, target_batches, accumulate_spectrum,
    )
    results = _run_jobs(jobs, workers)
    return _merge_results(params, results, total_time, burn_in, burn_in_probe)


# ---------------------------------------------------------------------------
# viscosity ladder

@dataclass(frozen=True)
class SweepConfig:
    """A frozen description of the vanishing-viscosity experiment.

    ``base`` supplies everything but the viscosity, which is overridden
    per ladder point (``base.nu`` itself is never run). The smallest
    default ladder point keeps the dissipative scale marginally
    resolved at K = 32; pushing lower would bias the dissipation term
    by truncation and make the verdict vacuous. ``threshold`` is the
    fraction of the enstrophy input rate that the smallest-viscosity
    dissipation term must undercut.
    """

    base: SimParams
    nu_ladder: Tuple[float, ...] = DEFAULT_LADDER
    include_euler: bool = True
    replicas: int = 4
    total_time: float = 1200.0
    burn_in: Optional[float] = None
    observe_every: int = 20
    threshold: float = 0.1
    target_batches: int = 30

    def __post_init__(self):
        ladder = tuple(float(v) for v in self.nu_ladder)
        object.__setattr__(self, "nu_ladder", ladder)
        if not ladder:
            raise ValueError("empty viscosity ladder")
        if any(v <= 0 for v in ladder):
            raise ValueError("ladder viscosities must be positive (nu = 0 is the euler flag)")
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError(f"viscosity ladder must be strictly decreasing, got {ladder}")
        if self.replicas < 4:
            raise ValueError("sweep needs at least 4 replicas per point")
        if self.total_time <= 0:
            raise ValueError("total_time must be positive")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold is a fraction of the input rate, in (0, 1]")
        if self.observe_every < 1:
            raise ValueError("observe_every must be >= 1")
        if self.burn_in is not None and self.burn_in <= 0:
            raise ValueError("burn_in must be positive when given")

    @property
    def nu_points(self) -> Tuple[float, ...]:
        return self.nu_ladder + ((0.0,) if self.include_euler else ())


@dataclass(frozen=True)
class SweepPoint:
    nu: float
    report: BalanceReport
    stats: RunningStats
    spectrum: Optional[np.ndarray]
    valid: bool
    failures: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    evidence: Tuple[str, ...]

    def describe(self) -> str:
        head = f"verdict {self.name}: {'PASS' if self.passed else 'FAIL'}"
        return "\n".join([head] + [f"  {line}" for line in self.evidence])


@dataclass(frozen=True)
class SweepReport:
    """Ladder rows plus the verdicts derived from them.

    ``points`` is in ladder order, the euler row (nu = 0) last when
    present. Verdict booleans are recomputable from the rows alone via
    :func:`recompute_verdicts`; the evidence lines spell out every
    inequality with its confidence slack.
    """

    config: SweepConfig
    shells: np.ndarray
    points: Tuple[SweepPoint, ...]
    anomalous_dissipation_vanishes: Verdict
    mean_enstrophy_converges: Verdict
    energy_dissipation_vanishes: Verdict
    noise_digest: str

    @property
    def viscous_points(self) -> Tuple[SweepPoint, ...]:
        return tuple(p for p in self.points if p.nu > 0)

    @property
    def euler_point(self) -> Optional[SweepPoint]:
        for p in self.points:
            if p.nu == 0.0:
                return p
        return None

    @property
    def verdicts(self) -> Tuple[Verdict, Verdict, Verdict]:
        return (
            self.anomalous_dissipation_vanishes,
            self.mean_enstrophy_converges,
            self.energy_dissipation_vanishes,
        )


def _pm(value: float, ci: float) -> str:
    return f"{value:.6g} +- {ci:.6g}"


def _chain_decreasing(
    label: str,
    nus: Sequence[float],
    values: Sequence[float],
    cis: Sequence[float],
) -> Tuple[bool, List[str]]:
    """Check a ladder series decreases, allowing the joint CI as slack."""
    lines = [f"nu={nu:g}: {label} = {_pm(v, c)}" for nu, v, c in zip(nus, values, cis)]
    ok = True
    for i in range(1, len(values)):
        slack = cis[i - 1] + cis[i]
        good = values[i] <= values[i - 1] + slack
        ok = ok and good
        lines.append(
            f"step nu={nus[i - 1]:g} -> nu={nus[i]:g}: "
            f"{values[i]:.6g} <= {values[i - 1]:.6g} + {slack:.6g}: "
            f"{'ok' if good else 'VIOLATED'}"
        )
    return ok, lines


def recompute_verdicts(
    points: Sequence[SweepPoint], threshold: float
) -> Tuple[Verdict, Verdict, Verdict]:
    """Derive all three verdicts from sweep rows alone.

    Used both to render a fresh sweep and to audit a stored one: the
    booleans depend only on the per-row means and confidence intervals.
    """
    viscous = [p for p in points if p.nu > 0]
    euler = next((p for p in points if p.nu == 0.0), None)
    if len(viscous) < 3:
        raise ValueError(
            f"ladder has {len(viscous)} viscous points; need at least 3 for a trend verdict"
        )
    q = viscous[0].report.q_enstrophy
    qu = viscous[0].report.q_energy
    gamma = viscous[0].report.gamma
    nus = [p.nu for p in viscous]

    # Enstrophy dissipation nu * <palinstrophy>: decreasing and finally small.
    vals = [p.report.nu_term for p in viscous]
    cis = [p.report.ci_nu_term for p in viscous]
    decreasing, lines = _chain_decreasing("nu*<palinstrophy>", nus, vals, cis)
    bound = threshold * q
    small = vals[-1] <= bound
    lines.append(
        f"threshold: {vals[-1]:.6g} <= {threshold:g} * Q = {bound:.6g}: "
        f"{'ok' if small else 'VIOLATED'}"
    )
    dissipation = Verdict("anomalous_dissipation_vanishes", decreasing and small, tuple(lines))

    # Mean enstrophy at the smallest viscosity agrees with the euler run.
    if euler is None:
        convergence = Verdict(
            "mean_enstrophy_converges", False, ("no euler row in this sweep",)
        )
    else:
        a, ca = gamma * viscous[-1].report.mean_enstrophy, gamma * viscous[-1].report.ci_enstrophy
        b, cb = gamma * euler.report.mean_enstrophy, gamma * euler.report.ci_enstrophy
        lines = [
            f"nu={nus[-1]:g}: gamma*<enstrophy> = {_pm(a, ca)}",
            f"euler: gamma*<enstrophy> = {_pm(b, cb)}",
        ]
        joint = abs(a - b) <= ca + cb
        lines.append(
            f"joint interval: |{a:.6g} - {b:.6g}| = {abs(a - b):.6g} <= {ca + cb:.6g}: "
            f"{'ok' if joint else 'VIOLATED'}"
        )
        near = True
        for tag, v in ((f"nu={nus[-1]:g}", a), ("euler", b)):
            good = abs(v - q) <= 0.1 * q
            near = near and good
            lines.append(
                f"input rate, {tag}: |{v:.6g} - {q:g}| <= 0.1 * Q = {0.1 * q:.6g}: "
                f"{'ok' if good else 'VIOLATED'}"
            )
        convergence = Verdict("mean_enstrophy_converges", joint and near, tuple(lines))

    # Energy analogue: nu * <enstrophy> decreasing, gamma * <energy> near Q_u.
    vals = [p.nu * p.report.mean_enstrophy for p in viscous]
    cis = [p.nu * p.report.ci_enstrophy for p in viscous]
    decreasing, lines = _chain_decreasing("nu*<enstrophy>", nus, vals, cis)
    near = True
    checks = [(f"nu={nus[-1]:g}", viscous[-1])]
    if euler is not None:
        checks.append(("euler", euler))
    for tag, p in checks:
        v = gamma * p.report.mean_energy
        good = abs(v - qu) <= 0.1 * qu
        near = near and good
        lines.append(
            f"input rate, {tag}: |gamma*<energy> - Q_u| = |{v:.6g} - {qu:g}| "
            f"<= 0.1 * Q_u = {0.1 * qu:.6g}: {'ok' if good else 'VIOLATED'}"
        )
    energy = Verdict("energy_dissipation_vanishes", decreasing and near, tuple(lines))

    return dissipation, convergence, energy


def viscosity_sweep(config: SweepConfig, workers: int = 1) -> SweepReport:
    """Run the ladder (and the euler endpoint) at frozen forcing.

    All (point, replica) jobs are flattened into one queue so a pool
    sees maximal parallelism; merging is by job index. Every row must
    come back with the configured forcing digest, otherwise the sweep
    aborts: the comparison is meaningless unless the input rates agree.
    """
    if len(config.nu_ladder) < 3:
        raise ValueError(
            f"ladder has {len(config.nu_ladder)} points; need at least 3 for a trend verdict"
        )
    base = config.base
    burn_in = config.burn_in if config.burn_in is not None else default_burn_in(base.gamma)
    if config.total_time < 20.0 * burn_in:
        raise ValueError(
            f"total_time = {config.total_time} is shorter than 20 * burn_in = {20.0 * burn_in}"
        )
    points = config.nu_points
    jobs: List[tuple] = []
    for idx, nu in enumerate(points):
        point_params = replace(base, nu=nu, stream=base.stream + idx * STREAM_STRIDE)
        jobs.extend(
            _make_jobs(
                point_params, config.total_time, config.replicas, burn_in,
                config.observe_every, True, config.target_batches, True,
            )
        )
    results = _run_jobs(jobs, workers)

    digest = base.noise.digest()
    rows: List[SweepPoint] = []
    for idx, nu in enumerate(points):
        chunk = results[idx * config.replicas : (idx + 1) * config.replicas]
        point_params = replace(base, nu=nu, stream=base.stream + idx * STREAM_STRIDE)
        merged = _merge_results(point_params, chunk, config.total_time, burn_in, True)
        if merged.report.noise_digest != digest:
            raise RuntimeError(
                f"forcing drift at nu = {nu}: digest {merged.report.noise_digest} != {digest}"
            )
        rows.append(
            SweepPoint(
                nu=nu,
                report=merged.report,
                stats=merged.stats,
                spectrum=merged.spectrum,
                valid=merged.valid,
                failures=merged.failures,
            )
        )
    dissipation, convergence, energy = recompute_verdicts(rows, config.threshold)
    return SweepReport(
        config=config,
        shells=spectrum_shells(base.trunc),
        points=tuple(rows),
        anomalous_dissipation_vanishes=dissipation,
        mean_enstrophy_converges=convergence,
        energy_dissipation_vanishes=energy,
        noise_digest=digest,
    )


# ---------------------------------------------------------------------------
# euler-endpoint comparison

@dataclass(frozen=True)
class ComparisonRow:
    nu: float
    enstrophy_distance: float
    enstrophy_slack: float
    energy_distance: float
    energy_slack: float
    spectrum_distance: float


@dataclass(frozen=True)
class ComparisonReport:
    """Distances from each viscous row to the euler row.

    Moment distances carry the joint CI as slack; the spectrum distance
    is the L1 difference of shell-averaged enstrophy spectra. Trend
    flags say whether each metric decreases along the ladder (moments
    up to slack, spectrum exactly); they are reported, not asserted.
    """

    rows: Tuple[ComparisonRow, ...]
    enstrophy_trend_decreasing: bool
    energy_trend_decreasing: bool
    spectrum_trend_decreasing: bool


def inviscid_comparison(sweep: SweepReport) -> ComparisonReport:
    euler = sweep.euler_point
    if euler is None:
        raise ValueError("sweep has no euler row to compare against")
    if euler.spectrum is None:
        raise ValueError("euler row has no accumulated spectrum")
    rows = []
    for p in sweep.viscous_points:
        if p.spectrum is None:
            raise ValueError(f"row nu = {p.nu} has no accumulated spectrum")
        rows.append(
            ComparisonRow(
                nu=p.nu,
                enstrophy_distance=abs(p.report.mean_enstrophy - euler.report.mean_enstrophy),
                enstrophy_slack=p.report.ci_enstrophy + euler.report.ci_enstrophy,
                energy_distance=abs(p.report.mean_energy - euler.report.mean_energy),
                energy_slack=p.report.ci_energy + euler.report.ci_energy,
                spectrum_distance=float(np.sum(np.abs(p.spectrum - euler.spectrum))),
            )
        )

    def trend(vals, slacks):
        return all(
            vals[i] <= vals[i - 1] + slacks[i - 1] + slacks[i] for i in range(1, len(vals))
        )

    return ComparisonReport(
        rows=tuple(rows),
        enstrophy_trend_decreasing=trend(
            [r.enstrophy_distance for r in rows], [r.enstrophy_slack for r in rows]
        ),
        energy_trend_decreasing=trend(
            [r.energy_distance for r in rows], [r.energy_slack for r in rows]
        ),
        spectrum_trend_decreasing=all(
            rows[i].spectrum_distance <= rows[i - 1].spectrum_distance
            for i in range(1, len(rows))
        ),
    )


# ---------------------------------------------------------------------------
# emission

_SWEEP_COLUMNS = (
    "nu", "mean_energy", "ci_energy", "mean_enstrophy", "ci_enstrophy",
    "mean_palinstrophy", "ci_palinstrophy", "mean_l4", "ci_l4",
    "mean_l2wgrad", "ci_l2wgrad", "nu_term", "ci_nu_term",
    "gamma_enstrophy", "ci_gamma_enstrophy",
    "residual_enstrophy", "ci_residual_enstrophy",
    "residual_energy", "ci_residual_energy",
    "residual_p4", "ci_residual_p4",
    "n_samples", "n_batches", "batch_size", "burn_in", "burn_in_doubled", "valid",
)


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def sweep_csv_text(sweep: SweepReport) -> str:
    """One row per viscosity, euler last; floats carry 17 digits."""
    lines = [",".join(_SWEEP_COLUMNS)]
    for p in sweep.points:
        r = p.report
        row = (
            p.nu, r.mean_energy, r.ci_energy, r.mean_enstrophy, r.ci_enstrophy,
            r.mean_palinstrophy, r.ci_palinstrophy, r.mean_l4, r.ci_l4,
            r.mean_l2wgrad, r.ci_l2wgrad, r.nu_term, r.ci_nu_term,
            r.gamma * r.mean_enstrophy, r.gamma * r.ci_enstrophy,
            r.residual_enstrophy, r.ci_residual_enstrophy,
            r.residual_energy, r.ci_residual_energy,
            r.residual_p4, r.ci_residual_p4,
            r.n_samples, r.n_batches, r.batch_size, r.burn_in, r.burn_in_doubled,
            p.valid,
        )
        lines.append(",".join(_csv_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def spectra_csv_text(sweep: SweepReport) -> str:
    """Shell-binned mean enstrophy spectra, one column per viscosity."""
    cols = []
    for p in sweep.points:
        if p.spectrum is None:
            raise ValueError(f"row nu = {p.nu} has no accumulated spectrum")
        cols.append(("E_euler" if p.nu == 0.0 else f"E_nu{p.nu:g}", p.spectrum))
    lines = [",".join(["k"] + [name for name, _ in cols])]
    for i, shell in enumerate(sweep.shells):
        cells = [str(int(shell))] + [format(float(spec[i]), ".17g") for _, spec in cols]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def verdict_text(sweep: SweepReport) -> str:
    """Human-readable verdict block with the full inequality chains."""
    base = sweep.config.base
    head = [
        f"forcing digest {sweep.noise_digest}, Q = {total_q(base.noise):g}, "
        f"Q_u = {velocity_q(base.noise):g}, gamma = {base.gamma:g}, "
        f"threshold = {sweep.config.threshold:g}",
    ]
    blocks = [v.describe() for v in sweep.verdicts]
    return "\n".join(head + blocks) + "\n"


def write_sweep_csv(sweep: SweepReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(sweep_csv_text(sweep))


def write_spectra_csv(sweep: SweepReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(spectra_csv_text(sweep))


def write_verdicts(sweep: SweepReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(verdict_text(sweep))
