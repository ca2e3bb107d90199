"""Observables, stationary averaging, and balance-law reports.

The five scalar observables tracked along a trajectory (all relative to
the orthonormal basis convention of :mod:`.spectral`):

======== ==========================================================
energy        ``||u||_{L^2}^2``, the squared velocity norm
enstrophy     ``||xi||_{L^2}^2``
palinstrophy  ``||grad xi||_{L^2}^2``
l4            ``||xi||_{L^4}^4`` (grid quadrature, 2x oversampled)
l2wgrad       ``int |xi|^2 |grad xi|^2 dx`` (same quadrature)
======== ==========================================================

Stationary means and confidence intervals come from non-overlapping
batch means: samples accumulate into equal-length batches whose size
doubles as the run grows, keeping the batch count in a fixed window, and
the 95% interval uses the Student-t quantile on the batch-mean spread.
Correlated samples are handled by the batching, not by thinning.

The stationary balance laws these feed (with ``Q`` the squared-vorticity
input rate and ``Q_u`` the squared-velocity input rate):

* ``nu * E[palinstrophy] + gamma * E[enstrophy] = Q``
* ``nu * E[enstrophy] + gamma * E[energy] = Q_u``
* ``3 nu E[l2wgrad] + gamma E[l4] = 3 (Q / (4 pi^2)) E[enstrophy]``

The quartic identity's constant carries the ``1/(2 pi)`` basis factor:
the pointwise noise variance rate is ``Q / (2 pi^2)``, uniform in x.
Residuals are measured on the per-batch linear combinations, so their
intervals honor the correlations between the observables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as _sps

from .noise import NoiseSpec, total_q, velocity_q
from .spectral import SpectralField, TruncationSpec

__all__ = [
    "OBSERVABLE_NAMES",
    "Observables",
    "ObservableWorkspace",
    "measure",
    "enstrophy_spectrum",
    "spectrum_shells",
    "RunningStats",
    "Collector",
    "BalanceReport",
    "balance_report",
    "write_timeseries",
    "read_timeseries",
    "write_balance_csv",
]

OBSERVABLE_NAMES = ("energy", "enstrophy", "palinstrophy", "l4", "l2wgrad")
_GRID_NAMES = ("l4", "l2wgrad")
_IDX = {name: i for i, name in enumerate(OBSERVABLE_NAMES)}

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Observables:
    """One sample of the tracked scalars at time t.

    ``l4`` and ``l2wgrad`` are None when grid quadrature was switched
    off for the run.
    """

    t: float
    energy: float
    enstrophy: float
    palinstrophy: float
    l4: Optional[float] = None
    l2wgrad: Optional[float] = None

    def vector(self) -> np.ndarray:
        return np.array(
            [
                self.energy,
                self.enstrophy,
                self.palinstrophy,
                np.nan if self.l4 is None else self.l4,
                np.nan if self.l2wgrad is None else self.l2wgrad,
            ]
        )


class ObservableWorkspace:
    """Reusable buffers for the quartic grid quadratures.

    Synthesizes (xi, dxi/dx1, dxi/dx2) on a grid oversampled by
    ``oversample`` (default 2x) in one batched transform. 2x suffices
    for quartic products of band-limited factors up to the dealias
    cutoff; the native grid would alias them.
    """

    def __init__(self, trunc: TruncationSpec, oversample: int = 2):
        if oversample < 1:
            raise ValueError("oversample must be >= 1")
        K, N = trunc.K, trunc.N
        n = N * int(oversample)
        self.trunc = trunc
        self.n = n
        self._rows = trunc.scatter_rows(n)
        self._stack = np.zeros((3, n, n // 2 + 1), dtype=np.complex128)
        self._tmp = np.empty((3, 2 * K + 1, K + 1), dtype=np.complex128)
        scale = trunc.phase_half * (n * n / _TWO_PI)
        side = 2 * K + 1
        k1 = np.broadcast_to(trunc.k1, (side, side))
        k2 = np.broadcast_to(trunc.k2, (side, side))
        half = np.s_[:, K:]
        self._pref = np.stack(
            [
                np.ones((side, K + 1)) * scale,
                (1j * k1)[half] * scale,
                (1j * k2)[half] * scale,
            ]
        )
        self._quad_w = (_TWO_PI / n) ** 2
        self._sq = np.empty((n, n))
        self._grad = np.empty((n, n))

    def quartic(self, coeffs: np.ndarray) -> Tuple[float, float]:
        """(l4, l2wgrad) of the field with these coefficients."""
        K = self.trunc.K
        np.multiply(self._pref, coeffs[:, K:], out=self._tmp)
        self._stack[:, self._rows, : K + 1] = self._tmp
        g = np.fft.irfft2(self._stack, s=(self.n, self.n), axes=(-2, -1))
        np.multiply(g[0], g[0], out=self._sq)
        np.multiply(g[1], g[1], out=self._grad)
        self._grad += g[2] * g[2]
        sq, grad = self._sq.ravel(), self._grad.ravel()
        l4 = float(np.dot(sq, sq) * self._quad_w)
        l2w = float(np.dot(sq, grad) * self._quad_w)
        return l4, l2w


def measure(
    field: SpectralField,
    t: float = 0.0,
    workspace: Optional[ObservableWorkspace] = None,
    grid_observables: bool = True,
) -> Observables:
    """Evaluate all observables on one field.

    The spectral sums are exact; the quartic pair uses 2x-oversampled
    grid quadrature (a one-shot workspace is built when none is given).
    """
    tr = field.trunc
    c = field.coeffs
    mag = c.real**2 + c.imag**2
    enstrophy = float(np.sum(mag))
    energy = float(np.sum(mag / tr.ksq_safe))
    palinstrophy = float(np.sum(mag * tr.ksq))
    l4 = l2w = None
    if grid_observables:
        if workspace is None:
            workspace = ObservableWorkspace(tr)
        l4, l2w = workspace.quartic(c)
    return Observables(t, energy, enstrophy, palinstrophy, l4, l2w)


# ---------------------------------------------------------------------------
# spectra

def spectrum_shells(trunc: TruncationSpec) -> np.ndarray:
    """Shell indices 1..round(sqrt(2) K) used by enstrophy_spectrum."""
    smax = int(np.rint(trunc.K * math.sqrt(2.0)))
    return np.arange(1, smax + 1)


def enstrophy_spectrum(field: SpectralField) -> np.ndarray:
    """Enstrophy per integer shell: ``E_n = sum over round(|k|) = n``.

    Returns the array aligned with :func:`spectrum_shells` (shell 0,
    which contains only the pinned mean mode, is dropped).
    """
    tr = field.trunc
    mag = field.coeffs.real**2 + field.coeffs.imag**2
    shell = np.rint(np.sqrt(tr.ksq)).astype(np.int64).ravel()
    smax = int(np.rint(tr.K * math.sqrt(2.0)))
    out = np.bincount(shell, weights=mag.ravel(), minlength=smax + 1)
    return out[1 : smax + 1]


# ---------------------------------------------------------------------------
# batch-means statistics

class RunningStats:
    """Online batch means over the observable stream of one or more runs.

    Samples with ``t <= burn_in`` are discarded. Completed batches all
    have the same length; when the count reaches ``2 * target_batches``
    adjacent pairs are averaged and the batch length doubles, keeping
    the count in ``[target_batches, 2 * target_batches)``. The trailing
    partial batch never enters means or intervals.

    Merging replicas concatenates their batch lists (batch lengths must
    agree, which holds for replicas of equal length); the result is
    independent of merge order. The per-replica segment boundaries are
    kept so stationarity probes can compare run halves.
    """

    def __init__(self, burn_in: float = 0.0, target_batches: int = 30):
        if target_batches < 5:
            raise ValueError("target_batches must be >= 5")
        self.burn_in = float(burn_in)
        self.target_batches = int(target_batches)
        self.batch_size = 1
        self._batches: List[np.ndarray] = []
        self._acc = np.zeros(len(OBSERVABLE_NAMES))
        self._acc_n = 0
        self._last_t = -math.inf
        self.n_samples = 0
        self.n_skipped = 0
        self._recorded: Optional[np.ndarray] = None
        self._segment_lengths: Optional[List[int]] = None

    # -- collection --------------------------------------------------------

    def update(self, obs: Observables) -> None:
        """Fold in one sample; errors on time regression or non-finite data."""
        if self._segment_lengths is not None:
            raise ValueError("merged statistics are read-only")
        if obs.t <= self._last_t:
            raise ValueError(f"time regression: sample at t = {obs.t} after t = {self._last_t}")
        self._last_t = obs.t
        vec = obs.vector()
        recorded = ~np.isnan(vec)
        # NaN marks "not recorded", a state only the optional grid pair can be in
        if not np.all(recorded[:3]):
            raise ValueError(f"non-finite observable at t = {obs.t}")
        if self._recorded is None:
            self._recorded = recorded
        elif not np.array_equal(recorded, self._recorded):
            raise ValueError("observable set changed mid-stream")
        if not np.all(np.isfinite(vec[recorded])):
            raise ValueError(f"non-finite observable at t = {obs.t}")
        if obs.t <= self.burn_in:
            self.n_skipped += 1
            return
        self._acc += np.where(recorded, vec, 0.0)
        self._acc_n += 1
        self.n_samples += 1
        if self._acc_n == self.batch_size:
            self._batches.append(self._acc / self.batch_size)
            self._acc = np.zeros(len(OBSERVABLE_NAMES))
            self._acc_n = 0
            if len(self._batches) >= 2 * self.target_batches:
                merged = [
                    (self._batches[2 * i] + self._batches[2 * i + 1]) / 2.0
                    for i in range(len(self._batches) // 2)
                ]
                self._batches = merged
                self.batch_size *= 2

    @classmethod
    def merge(cls, parts: Sequence["RunningStats"]) -> "RunningStats":
        """Combine replica statistics; order of ``parts`` is immaterial."""
        if not parts:
            raise ValueError("nothing to merge")
        sizes = {p.batch_size for p in parts}
        if len(sizes) != 1:
            raise ValueError(f"replicas have unequal batch sizes {sorted(sizes)}; cannot merge")
        burn = {p.burn_in for p in parts}
        if len(burn) != 1:
            raise ValueError("replicas have unequal burn-in")
        rec = [p._recorded for p in parts if p._recorded is not None]
        if rec and any(not np.array_equal(r, rec[0]) for r in rec[1:]):
            raise ValueError("replicas recorded different observable sets")
        out = cls(burn_in=parts[0].burn_in, target_batches=parts[0].target_batches)
        out.batch_size = parts[0].batch_size
        out._recorded = rec[0] if rec else None
        segs = []
        for p in parts:
            out._batches.extend(np.array(b) for b in p._batches)
            segs.append(len(p._batches))
            out.n_samples += p.n_samples
            out.n_skipped += p.n_skipped
        out._segment_lengths = segs
        return out

    # -- queries ------------------------------------------------------------

    @property
    def n_batches(self) -> int:
        return len(self._batches)

    def _col(self, name: str) -> np.ndarray:
        if name not in _IDX:
            raise KeyError(f"unknown observable {name!r}")
        if self._recorded is not None and not self._recorded[_IDX[name]]:
            raise ValueError(f"observable {name!r} was not recorded on this run")
        if not self._batches:
            raise ValueError("no complete batches yet")
        return np.array([b[_IDX[name]] for b in self._batches])

    def batch_series(self, name: str) -> np.ndarray:
        """Complete batch means for one observable, in stream order."""
        return self._col(name)

    def mean(self, name: str) -> float:
        return float(np.mean(self._col(name)))

    def ci_half_width(self, name: str) -> float:
        """Half width of the 95% batch-means interval (needs >= 10 batches)."""
        return self._series_ci(self._col(name))

    def _series_ci(self, series: np.ndarray) -> float:
        n = len(series)
        if n < 10:
            raise ValueError(f"need at least 10 complete batches for an interval, have {n}")
        sd = float(np.std(series, ddof=1))
        tq = float(_sps.t.ppf(0.975, n - 1))
        return tq * sd / math.sqrt(n)

    def linear_combo(self, coeffs: dict, constant: float = 0.0) -> Tuple[float, float]:
        """Mean and CI half-width of ``sum c_i * obs_i + constant``.

        Evaluated on the per-batch series, so cross-correlations between
        observables are inherited rather than assumed away.
        """
        series = np.full(self.n_batches, float(constant))
        for name, c in coeffs.items():
            series = series + float(c) * self._col(name)
        return float(np.mean(series)), self._series_ci(series)

    # -- stationarity probes -------------------------------------------------

    def _segments(self) -> List[Tuple[int, int]]:
        lengths = self._segment_lengths or [len(self._batches)]
        out = []
        start = 0
        for ln in lengths:
            out.append((start, start + ln))
            start += ln
        return out

    def halves(self, name: str) -> Tuple[float, float, float]:
        """(first-half mean, second-half mean, joint sigma) for one observable.

        Each replica segment is split in half; halves are pooled across
        segments. Sigma combines the two standard errors in quadrature.
        """
        col = self._col(name)
        first, second = [], []
        for a, b in self._segments():
            mid = a + (b - a) // 2
            first.extend(col[a:mid])
            second.extend(col[mid:b])
        f = np.array(first)
        s = np.array(second)
        if len(f) < 2 or len(s) < 2:
            raise ValueError("too few batches for a halves comparison")
        m1, m2 = float(np.mean(f)), float(np.mean(s))
        se1 = float(np.std(f, ddof=1)) / math.sqrt(len(f))
        se2 = float(np.std(s, ddof=1)) / math.sqrt(len(s))
        return m1, m2, math.hypot(se1, se2)

    def halves_consistent(self, name: str, n_sigma: float = 2.0) -> bool:
        m1, m2, sigma = self.halves(name)
        return abs(m1 - m2) <= n_sigma * sigma if sigma > 0 else m1 == m2

    def drop_first_half(self) -> None:
        """Discard the first half of each segment's batches (burn-in doubling)."""
        kept = []
        lengths = []
        for a, b in self._segments():
            mid = a + (b - a) // 2
            kept.extend(self._batches[mid:b])
            lengths.append(b - mid)
        dropped = len(self._batches) - len(kept)
        self._batches = kept
        self.n_samples -= dropped * self.batch_size
        self.n_skipped += dropped * self.batch_size
        if self._segment_lengths is not None:
            self._segment_lengths = lengths


class Collector:
    """Observer for :func:`.integrator.integrate`: stats + mean spectrum.

    ``sink`` (if given) sees every sample including burn-in, in order;
    the statistics and the spectrum accumulator start after ``burn_in``.
    """

    def __init__(
        self,
        trunc: TruncationSpec,
        burn_in: float = 0.0,
        target_batches: int = 30,
        grid_observables: bool = True,
        accumulate_spectrum: bool = True,
        sink: Optional[Callable[[Observables], None]] = None,
    ):
        self.stats = RunningStats(burn_in=burn_in, target_batches=target_batches)
        self._ws = ObservableWorkspace(trunc) if grid_observables else None
        self._grid = grid_observables
        self._sink = sink
        self._spectrum_sum = (
            np.zeros(len(spectrum_shells(trunc)), dtype=np.float64) if accumulate_spectrum else None
        )
        self._spectrum_n = 0

    def __call__(self, state) -> None:
        obs = measure(state.field, state.t, workspace=self._ws, grid_observables=self._grid)
        if self._sink is not None:
            self._sink(obs)
        self.stats.update(obs)
        if self._spectrum_sum is not None and state.t > self.stats.burn_in:
            self._spectrum_sum += enstrophy_spectrum(state.field)
            self._spectrum_n += 1

    @property
    def spectrum_count(self) -> int:
        return self._spectrum_n

    def mean_spectrum(self) -> Optional[np.ndarray]:
        """Time-averaged enstrophy spectrum over the post-burn-in samples."""
        if self._spectrum_sum is None or self._spectrum_n == 0:
            return None
        return self._spectrum_sum / self._spectrum_n


# ---------------------------------------------------------------------------
# balance reports

@dataclass(frozen=True)
class BalanceReport:
    """Stationary averages of one run against its exact input rates.

    ``residual_enstrophy = nu * <palinstrophy> + gamma * <enstrophy> - Q``
    and the energy/quartic analogues; all residual intervals come from
    the combined per-batch series. Quartic fields are None when grid
    quadrature was off.
    """

    nu: float
    gamma: float
    q_enstrophy: float
    q_energy: float
    mean_energy: float
    ci_energy: float
    mean_enstrophy: float
    ci_enstrophy: float
    mean_palinstrophy: float
    ci_palinstrophy: float
    mean_l4: Optional[float]
    ci_l4: Optional[float]
    mean_l2wgrad: Optional[float]
    ci_l2wgrad: Optional[float]
    nu_term: float
    ci_nu_term: float
    residual_enstrophy: float
    ci_residual_enstrophy: float
    residual_energy: float
    ci_residual_energy: float
    residual_p4: Optional[float]
    ci_residual_p4: Optional[float]
    n_samples: int
    n_batches: int
    batch_size: int
    burn_in: float
    burn_in_doubled: bool
    noise_digest: str


def balance_report(
    stats: RunningStats,
    nu: float,
    gamma: float,
    noise: NoiseSpec,
    burn_in_doubled: bool = False,
) -> BalanceReport:
    """Assemble the balance-law report from collected statistics."""
    q = total_q(noise)
    qu = velocity_q(noise)
    mean_e, ci_e = stats.mean("energy"), stats.ci_half_width("energy")
    mean_z, ci_z = stats.mean("enstrophy"), stats.ci_half_width("enstrophy")
    mean_p, ci_p = stats.mean("palinstrophy"), stats.ci_half_width("palinstrophy")
    nu_term, ci_nu_term = stats.linear_combo({"palinstrophy": nu})
    res_z, ci_res_z = stats.linear_combo({"palinstrophy": nu, "enstrophy": gamma}, -q)
    res_e, ci_res_e = stats.linear_combo({"enstrophy": nu, "energy": gamma}, -qu)
    try:
        mean_l4, ci_l4 = stats.mean("l4"), stats.ci_half_width("l4")
        mean_w, ci_w = stats.mean("l2wgrad"), stats.ci_half_width("l2wgrad")
        ito_rate = 3.0 * q / (4.0 * math.pi**2)
        res_4, ci_res_4 = stats.linear_combo(
            {"l2wgrad": 3.0 * nu, "l4": gamma, "enstrophy": -ito_rate}
        )
    except ValueError:
        mean_l4 = ci_l4 = mean_w = ci_w = res_4 = ci_res_4 = None
    return BalanceReport(
        nu=nu,
        gamma=gamma,
        q_enstrophy=q,
        q_energy=qu,
        mean_energy=mean_e,
        ci_energy=ci_e,
        mean_enstrophy=mean_z,
        ci_enstrophy=ci_z,
        mean_palinstrophy=mean_p,
        ci_palinstrophy=ci_p,
        mean_l4=mean_l4,
        ci_l4=ci_l4,
        mean_l2wgrad=mean_w,
        ci_l2wgrad=ci_w,
        nu_term=nu_term,
        ci_nu_term=ci_nu_term,
        residual_enstrophy=res_z,
        ci_residual_enstrophy=ci_res_z,
        residual_energy=res_e,
        ci_residual_energy=ci_res_e,
        residual_p4=res_4,
        ci_residual_p4=ci_res_4,
        n_samples=stats.n_samples,
        n_batches=stats.n_batches,
        batch_size=stats.batch_size,
        burn_in=stats.burn_in,
        burn_in_doubled=burn_in_doubled,
        noise_digest=noise.digest(),
    )


# ---------------------------------------------------------------------------
# CSV

def _fmt(x) -> str:
    if x is None:
        return "nan"
    return format(float(x), ".17g")


TIMESERIES_HEADER = "t,energy,enstrophy,palinstrophy,l4,l2wgrad"


def write_timeseries(path, rows: Iterable[Observables]) -> None:
    """Time-series CSV, one row per sample, floats at 17 significant digits."""
    with open(path, "w", newline="") as f:
        f.write(TIMESERIES_HEADER + "\n")
        for r in rows:
            f.write(
                ",".join(
                    _fmt(v) for v in (r.t, r.energy, r.enstrophy, r.palinstrophy, r.l4, r.l2wgrad)
                )
                + "\n"
            )


def read_timeseries(path) -> List[Observables]:
    """Inverse of :func:`write_timeseries` (used by tests and tooling)."""
    out = []
    with open(path, "r", newline="") as f:
        header = f.readline().strip()
        if header != TIMESERIES_HEADER:
            raise ValueError(f"unexpected time-series header {header!r}")
        for line in f:
            t, e, z, p, l4, w = (float(x) for x in line.strip().split(","))
            out.append(
                Observables(
                    t,
                    e,
                    z,
                    p,
                    None if math.isnan(l4) else l4,
                    None if math.isnan(w) else w,
                )
            )
    return out


def write_balance_csv(path, reports: Sequence[BalanceReport]) -> None:
    """Balance-report CSV: one row per run, every field and CI half-width."""
    names = [f.name for f in fields(BalanceReport)]
    with open(path, "w", newline="") as f:
        f.write(",".join(names) + "\n")
        for r in reports:
            cells = []
            for n in names:
                v = getattr(r, n)
                if isinstance(v, bool):
                    cells.append("true" if v else "false")
                elif isinstance(v, (int,)):
                    cells.append(str(v))
                elif isinstance(v, str):
                    cells.append(v)
                else:
                    cells.append(_fmt(v))
            f.write(",".join(cells) + "\n")
