import math
from dataclasses import fields, replace

import numpy as np
import pytest

from stovort import (
    BalanceReport,
    Collector,
    Observables,
    RunningStats,
    SimParams,
    SpectralField,
    TruncationSpec,
    balance_report,
    default_forcing,
    enstrophy_spectrum,
    integrate,
    measure,
    ou_stationary_enstrophy,
    read_timeseries,
    spectrum_shells,
    write_balance_csv,
    write_timeseries,
)
from stovort.diagnostics import OBSERVABLE_NAMES, ObservableWorkspace


def obs_at(t, value, with_grid=True):
    """Synthetic sample where every observable equals ``value``."""
    g = value if with_grid else None
    return Observables(t, value, value, value, g, g)


class TestMeasure:
    def test_single_low_mode(self):
        t = TruncationSpec(8)
        f = SpectralField.from_modes(t, {(1, 0): 1.0})
        obs = measure(f, grid_observables=False)
        assert obs.enstrophy == pytest.approx(2.0)
        assert obs.palinstrophy == pytest.approx(2.0)
        assert obs.energy == pytest.approx(2.0)
        assert obs.l4 is None and obs.l2wgrad is None

    def test_single_high_mode(self):
        t = TruncationSpec(8)
        f = SpectralField.from_modes(t, {(2, 0): 1.0})
        obs = measure(f, grid_observables=False)
        assert obs.enstrophy == pytest.approx(2.0)
        assert obs.palinstrophy == pytest.approx(8.0)
        assert obs.energy == pytest.approx(0.5)

    def test_quartic_of_cosine(self):
        # xi = cos(x1): int xi^4 = 3 pi^2 / 2, int xi^2 |grad xi|^2 = pi^2 / 2
        t = TruncationSpec(8)
        f = SpectralField.from_modes(t, {(1, 0): math.pi})
        obs = measure(f)
        assert obs.l4 == pytest.approx(1.5 * math.pi**2, rel=1e-12)
        assert obs.l2wgrad == pytest.approx(0.5 * math.pi**2, rel=1e-12)

    def test_workspace_matches_oneshot(self):
        t = TruncationSpec(6)
        f = SpectralField.from_modes(t, {(1, 0): 1.0, (2, 1): 0.5 - 0.25j})
        ws = ObservableWorkspace(t)
        a = measure(f, workspace=ws)
        b = measure(f)
        assert a.l4 == b.l4 and a.l2wgrad == b.l2wgrad

    def test_workspace_validation(self):
        with pytest.raises(ValueError):
            ObservableWorkspace(TruncationSpec(4), oversample=0)


class TestSpectrum:
    def test_shell_placement(self):
        t = TruncationSpec(8)
        f = SpectralField.from_modes(t, {(3, 4): 1.0, (1, 1): 2.0})
        shells = spectrum_shells(t)
        spec = enstrophy_spectrum(f)
        assert shells[0] == 1
        # |(3,4)| = 5 exactly; |(1,1)| rounds to 1
        assert spec[list(shells).index(5)] == pytest.approx(2.0)
        assert spec[0] == pytest.approx(8.0)

    def test_total_is_enstrophy(self):
        t = TruncationSpec(8)
        f = SpectralField.from_modes(t, {(1, 0): 1.0, (5, 5): 1.0 + 3j, (2, 7): 0.5})
        assert float(np.sum(enstrophy_spectrum(f))) == pytest.approx(
            measure(f, grid_observables=False).enstrophy
        )


class TestRunningStats:
    def test_batch_consolidation(self):
        st = RunningStats(target_batches=5)
        for i in range(10):
            st.update(obs_at(float(i + 1), float(i)))
        # 10 unit batches collapse to 5 batches of size 2
        assert st.n_batches == 5
        assert st.batch_size == 2
        assert st.mean("energy") == pytest.approx(4.5)

    def test_partial_batch_excluded(self):
        # after consolidation the batch size is 2, so a lone trailing
        # sample sits in an incomplete batch and must not affect means
        st = RunningStats(target_batches=5)
        for i in range(10):
            st.update(obs_at(float(i + 1), 1.0))
        st.update(obs_at(99.0, 1000.0))
        assert st.batch_size == 2
        assert st.n_batches == 5
        assert st.mean("energy") == pytest.approx(1.0)

    def test_time_regression_rejected(self):
        st = RunningStats()
        st.update(obs_at(1.0, 0.0))
        with pytest.raises(ValueError, match="regression"):
            st.update(obs_at(1.0, 0.0))

    def test_observable_set_change_rejected(self):
        st = RunningStats()
        st.update(obs_at(1.0, 0.0, with_grid=False))
        with pytest.raises(ValueError, match="observable set"):
            st.update(obs_at(2.0, 0.0, with_grid=True))

    def test_non_finite_rejected(self):
        st = RunningStats()
        with pytest.raises(ValueError, match="non-finite"):
            st.update(Observables(1.0, math.nan, 1.0, 1.0, None, None))
        st2 = RunningStats()
        with pytest.raises(ValueError, match="non-finite"):
            st2.update(Observables(1.0, 1.0, math.inf, 1.0, None, None))
        st3 = RunningStats()
        with pytest.raises(ValueError, match="non-finite"):
            st3.update(Observables(1.0, 1.0, 1.0, 1.0, math.inf, 1.0))

    def test_burn_in_skip(self):
        st = RunningStats(burn_in=5.0)
        for i in range(10):
            st.update(obs_at(float(i + 1), float(i + 1)))
        assert st.n_skipped == 5
        assert st.n_samples == 5
        assert st.mean("energy") == pytest.approx(8.0)  # mean of 6..10

    def test_constant_stream_has_zero_interval(self):
        st = RunningStats()
        for i in range(15):
            st.update(obs_at(float(i + 1), 7.0))
        assert st.mean("enstrophy") == 7.0
        assert st.ci_half_width("enstrophy") == 0.0

    def test_interval_needs_ten_batches(self):
        st = RunningStats()
        for i in range(9):
            st.update(obs_at(float(i + 1), float(i)))
        with pytest.raises(ValueError, match="10"):
            st.ci_half_width("energy")

    def test_unknown_and_unrecorded_names(self):
        st = RunningStats()
        st.update(obs_at(1.0, 1.0, with_grid=False))
        with pytest.raises(KeyError):
            st.mean("vorticity")
        with pytest.raises(ValueError, match="not recorded"):
            st.mean("l4")

    def test_linear_combo(self):
        st = RunningStats()
        for i in range(12):
            st.update(Observables(float(i + 1), 2.0, 3.0, 4.0, None, None))
        mean, ci = st.linear_combo({"energy": 1.0, "palinstrophy": -0.5}, constant=1.0)
        assert mean == pytest.approx(2.0 + 1.0 - 2.0)
        assert ci == 0.0

    def test_merge_concatenates(self):
        parts = []
        for rep in range(3):
            st = RunningStats()
            for i in range(10):
                st.update(obs_at(float(i + 1), float(rep)))
            parts.append(st)
        merged = RunningStats.merge(parts)
        assert merged.n_batches == 30
        assert merged.mean("energy") == pytest.approx(1.0)
        swapped = RunningStats.merge(parts[::-1])
        assert swapped.mean("energy") == merged.mean("energy")
        assert swapped.ci_half_width("energy") == merged.ci_half_width("energy")

    def test_merge_requires_equal_batch_sizes(self):
        a = RunningStats(target_batches=5)
        for i in range(10):  # consolidates to size 2
            a.update(obs_at(float(i + 1), 0.0))
        b = RunningStats(target_batches=5)
        for i in range(5):
            b.update(obs_at(float(i + 1), 0.0))
        with pytest.raises(ValueError, match="batch sizes"):
            RunningStats.merge([a, b])

    def test_merged_stats_are_read_only(self):
        st = RunningStats()
        st.update(obs_at(1.0, 0.0))
        merged = RunningStats.merge([st])
        with pytest.raises(ValueError, match="read-only"):
            merged.update(obs_at(2.0, 0.0))

    def test_halves_flag_drift_then_recover(self):
        st = RunningStats(target_batches=30)
        for i in range(20):
            st.update(obs_at(float(i + 1), 100.0))  # burn-in artifact
        for i in range(20, 40):
            st.update(obs_at(float(i + 1), 0.0))
        assert not st.halves_consistent("enstrophy")
        st.drop_first_half()
        assert st.n_batches == 20
        assert st.halves_consistent("enstrophy")
        assert st.mean("enstrophy") == 0.0

    def test_drop_first_half_bookkeeping(self):
        st = RunningStats()
        for i in range(20):
            st.update(obs_at(float(i + 1), float(i)))
        before = st.n_samples
        st.drop_first_half()
        assert st.n_batches == 10
        assert st.n_samples == before - 10
        assert st.n_skipped == 10

    def test_halves_respect_replica_segments(self):
        # two replicas, each trending the same way: pooled halves see the
        # within-replica drift, not the between-replica offsets
        parts = []
        for rep in range(2):
            st = RunningStats(target_batches=30)
            for i in range(20):
                value = (1000.0 if rep else 0.0) + (10.0 if i < 10 else 0.0)
                st.update(obs_at(float(i + 1), value))
            parts.append(st)
        merged = RunningStats.merge(parts)
        m1, m2, _ = merged.halves("enstrophy")
        assert m1 - m2 == pytest.approx(10.0)


class TestCollector:
    def _run(self, **kw):
        params = SimParams(
            TruncationSpec(2),
            default_forcing(),
            nu=0.1,
            gamma=1.0,
            h=0.02,
            nonlinearity=False,
        )
        collector = Collector(params.trunc, **kw)
        integrate(params, total_time=40.0, observer=collector, observe_every=10)
        return collector

    def test_spectrum_respects_burn_in(self):
        c = self._run(burn_in=20.0, grid_observables=False)
        # 200 observer calls, half beyond t = 20
        assert c.spectrum_count == 100
        assert c.stats.n_skipped == 100
        spec = c.mean_spectrum()
        assert spec is not None and len(spec) == len(spectrum_shells(TruncationSpec(2)))

    def test_no_spectrum_when_disabled(self):
        c = self._run(grid_observables=False, accumulate_spectrum=False)
        assert c.mean_spectrum() is None

    def test_sink_sees_burn_in_samples(self):
        rows = []
        c = self._run(burn_in=20.0, grid_observables=False, sink=rows.append)
        assert len(rows) == 200
        assert rows[0].t == pytest.approx(0.2)
        assert c.stats.n_samples == 100


@pytest.fixture(scope="module")
def linear_run():
    # long linear run with grid quadrature; exact transition, coarse h
    params = SimParams(
        TruncationSpec(8),
        default_forcing(),
        nu=0.1,
        gamma=1.0,
        h=0.01,
        nonlinearity=False,
        seed=5,
    )
    collector = Collector(params.trunc, burn_in=10.0, accumulate_spectrum=False)
    integrate(params, total_time=700.0, observer=collector, observe_every=10)
    return params, collector.stats


class TestStationaryBenchmarks:
    def test_enstrophy_matches_ou_value(self, linear_run):
        params, stats = linear_run
        want = ou_stationary_enstrophy(params.noise, params.nu, params.gamma)
        assert want == pytest.approx(170.0 / 33.0)
        assert abs(stats.mean("enstrophy") - want) <= 3 * stats.ci_half_width("enstrophy")

    def test_quartic_matches_gaussian_moment(self, linear_run):
        # zero-mean Gaussian field: E||xi||_{L4}^4 = 3 E[Z]^2 / (4 pi^2)
        params, stats = linear_run
        zbar = ou_stationary_enstrophy(params.noise, params.nu, params.gamma)
        want = 3.0 * zbar**2 / (4.0 * math.pi**2)
        got = stats.mean("l4")
        tol = max(3 * stats.ci_half_width("l4"), 0.05 * want)
        assert abs(got - want) <= tol

    def test_balance_report_residuals_cover_zero(self, linear_run):
        params, stats = linear_run
        report = balance_report(stats, params.nu, params.gamma, params.noise)
        assert report.q_enstrophy == 6.0
        assert report.q_energy == 4.0
        assert abs(report.residual_enstrophy) <= 2 * report.ci_residual_enstrophy
        assert abs(report.residual_energy) <= 2 * report.ci_residual_energy
        assert abs(report.residual_p4) <= 2 * report.ci_residual_p4
        assert report.nu_term == pytest.approx(
            params.nu * stats.mean("palinstrophy")
        )
        assert not report.burn_in_doubled
        assert report.noise_digest == params.noise.digest()

    def test_interval_coverage_rate(self):
        # frequentist check of the batch-means machinery itself: 100
        # independent replicas, count how often the 95% interval covers
        # the known stationary mean
        params = SimParams(
            TruncationSpec(2),
            default_forcing(),
            nu=0.1,
            gamma=1.0,
            h=0.02,
            nonlinearity=False,
            seed=42,
        )
        want = 170.0 / 33.0
        hits = 0
        for stream in range(100):
            collector = Collector(
                params.trunc,
                burn_in=10.0,
                grid_observables=False,
                accumulate_spectrum=False,
            )
            integrate(
                replace(params, stream=stream),
                total_time=120.0,
                observer=collector,
                observe_every=5,
            )
            mean = collector.stats.mean("enstrophy")
            ci = collector.stats.ci_half_width("enstrophy")
            hits += abs(mean - want) <= ci
        # nominal 95%; correlated samples and finite batches cost a little
        assert hits >= 90


class TestSerialization:
    def test_timeseries_round_trip(self, tmp_path):
        rows = [
            Observables(0.5, 1.0, 2.0, 3.0, 4.0, 5.0),
            Observables(1.0, 1.5, 2.5, 3.5, 4.5, 5.5),
        ]
        path = tmp_path / "ts.csv"
        write_timeseries(path, rows)
        assert read_timeseries(path) == rows

    def test_timeseries_none_round_trip(self, tmp_path):
        rows = [Observables(0.5, 1.0, 2.0, 3.0, None, None)]
        path = tmp_path / "ts.csv"
        write_timeseries(path, rows)
        back = read_timeseries(path)
        assert back == rows and back[0].l4 is None

    def test_timeseries_header_checked(self, tmp_path):
        path = tmp_path / "ts.csv"
        path.write_text("t,wrong\n")
        with pytest.raises(ValueError, match="header"):
            read_timeseries(path)

    def test_balance_csv_layout(self, tmp_path):
        st = RunningStats()
        for i in range(12):
            st.update(obs_at(float(i + 1), float(i)))
        report = balance_report(st, nu=0.1, gamma=1.0, noise=default_forcing())
        path = tmp_path / "balance.csv"
        write_balance_csv(path, [report])
        lines = path.read_text().splitlines()
        names = [f.name for f in fields(BalanceReport)]
        assert lines[0] == ",".join(names)
        cells = lines[1].split(",")
        assert len(cells) == len(names)
        assert cells[names.index("burn_in_doubled")] == "false"
        assert cells[names.index("noise_digest")] == default_forcing().digest()
        assert cells[names.index("n_batches")] == "12"
