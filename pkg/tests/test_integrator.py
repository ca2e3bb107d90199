import math

import numpy as np
import pytest

from stovort import (
    BlowUpError,
    CheckpointError,
    NoiseSpec,
    RngState,
    RunningStats,
    SimParams,
    State,
    TruncationSpec,
    checkpoint,
    default_forcing,
    initial_state,
    integrate,
    measure,
    restore,
    step,
)
from stovort.integrator import advective_h_max, static_h_max

from conftest import make_band_limited


def linear_params(**kw):
    base = dict(
        trunc=TruncationSpec(2),
        noise=default_forcing(),
        nu=0.1,
        gamma=1.0,
        h=0.02,
        nonlinearity=False,
    )
    base.update(kw)
    return SimParams(**base)


class TestParamsValidation:
    def test_static_cap_rejects_large_step(self):
        # K=8 -> cutoff 5; cap = min(0.1/gamma, 0.5/(nu 25)) = 0.1
        with pytest.raises(ValueError, match="stability cap"):
            SimParams(TruncationSpec(8), default_forcing(), nu=0.1, gamma=1.0, h=0.15)

    def test_linear_runs_are_exempt_from_the_cap(self):
        # the exact transition has no step restriction
        p = linear_params(h=0.5)
        assert p.h == 0.5

    def test_cap_formula(self):
        assert static_h_max(gamma=1.0, nu=0.1, cutoff=5) == pytest.approx(0.1)
        assert static_h_max(gamma=1.0, nu=0.5, cutoff=5) == pytest.approx(0.04)
        assert advective_h_max(8, 2.0) == pytest.approx(0.25 / 16)
        assert advective_h_max(8, 0.0) == math.inf

    def test_forcing_outside_dealias_band_rejected_with_nonlinearity(self):
        # K=8 -> cutoff 5; (6,0) is representable but aliased
        noise = NoiseSpec.from_modes({(6, 0): 1.0})
        with pytest.raises(ValueError, match="dealias"):
            SimParams(TruncationSpec(8), noise, nu=0.1, gamma=1.0, h=0.005)
        SimParams(TruncationSpec(8), noise, nu=0.1, gamma=1.0, h=0.005, nonlinearity=False)

    def test_forcing_outside_truncation_always_rejected(self):
        noise = NoiseSpec.from_modes({(9, 0): 1.0})
        with pytest.raises(ValueError, match="truncation"):
            SimParams(TruncationSpec(8), noise, nu=0.1, gamma=1.0, h=0.005, nonlinearity=False)

    def test_negative_coefficients_rejected(self):
        with pytest.raises(ValueError):
            linear_params(nu=-0.1)
        with pytest.raises(ValueError):
            linear_params(gamma=0.0)
        with pytest.raises(ValueError):
            linear_params(h=0.0)


class TestDeterministicDynamics:
    def test_pure_decay_matches_closed_form(self):
        # no noise, no quadratic term: each mode decays by exp(-(nu|k|^2+gamma) t)
        trunc = TruncationSpec(8)
        params = SimParams(trunc, NoiseSpec(()), nu=0.1, gamma=1.0, h=0.01, nonlinearity=False)
        f0 = make_band_limited(trunc, seed=11, inside_dealias=False)
        start = State(0.0, 0, f0, RngState(0))
        n = 50
        out = integrate(params, n_steps=n, initial=start)
        lam = params.nu * trunc.ksq + params.gamma
        want = f0.coeffs * np.exp(-lam * n * params.h)
        assert np.allclose(out.field.coeffs, want, rtol=1e-12, atol=1e-16)
        assert out.t == pytest.approx(n * params.h)
        assert out.step_count == n

    def test_first_order_convergence_of_the_split(self):
        # deterministic nonlinear run; error vs a fine reference halves with h
        trunc = TruncationSpec(8)
        f0 = make_band_limited(trunc, seed=7, scale=0.5)
        T = 1.0

        def final(h):
            p = SimParams(trunc, NoiseSpec(()), nu=0.05, gamma=1.0, h=h)
            return integrate(p, total_time=T, initial=State(0.0, 0, f0, RngState(0)))

        ref = final(1.25e-4).field.coeffs
        errs = [
            float(np.linalg.norm(final(h).field.coeffs - ref)) for h in (4e-3, 2e-3, 1e-3)
        ]
        for a, b in zip(errs, errs[1:]):
            assert 1.7 < a / b < 2.5


class TestStepping:
    def test_step_equals_integrate_one(self):
        params = linear_params()
        s1 = step(initial_state(params), params)
        s2 = integrate(params, n_steps=1)
        assert np.array_equal(s1.field.coeffs, s2.field.coeffs)
        assert s1.rng.counter == s2.rng.counter == 1

    def test_step_leaves_input_untouched(self):
        params = linear_params()
        s0 = initial_state(params)
        step(s0, params)
        assert s0.rng.counter == 0
        assert np.all(s0.field.coeffs == 0)

    def test_trajectories_are_reproducible(self):
        params = linear_params()
        a = integrate(params, n_steps=200)
        b = integrate(params, n_steps=200)
        assert np.array_equal(a.field.coeffs, b.field.coeffs)

    def test_streams_decorrelate_replicas(self):
        a = integrate(linear_params(stream=0), n_steps=50)
        b = integrate(linear_params(stream=1), n_steps=50)
        assert not np.array_equal(a.field.coeffs, b.field.coeffs)

    def test_total_time_rounds_to_steps(self):
        params = linear_params(h=0.02)
        out = integrate(params, total_time=0.1)
        assert out.step_count == 5

    def test_argument_validation(self):
        params = linear_params()
        with pytest.raises(ValueError, match="exactly one"):
            integrate(params, n_steps=5, total_time=1.0)
        with pytest.raises(ValueError, match="exactly one"):
            integrate(params)
        with pytest.raises(ValueError):
            integrate(params, n_steps=0)
        with pytest.raises(ValueError):
            integrate(params, n_steps=5, observe_every=0)

    def test_observer_cadence(self):
        params = linear_params()
        seen = []
        integrate(params, n_steps=10, observer=lambda s: seen.append(s), observe_every=3)
        assert [s.step_count for s in seen] == [3, 6, 9]
        assert seen[0].t == pytest.approx(3 * params.h)

    def test_observer_gets_a_copy(self):
        params = linear_params()
        grabbed = []
        integrate(params, n_steps=10, observer=lambda s: grabbed.append(s), observe_every=5)
        first = grabbed[0].field.coeffs.copy()
        # mutating the grabbed state must not corrupt the run
        grabbed[0].field.coeffs[:] = 0
        again = []
        integrate(params, n_steps=10, observer=lambda s: again.append(s), observe_every=5)
        assert np.array_equal(again[0].field.coeffs, first)


class TestBlowUpDetection:
    def test_enstrophy_ceiling(self):
        params = linear_params()
        with pytest.raises(BlowUpError) as err:
            integrate(params, n_steps=100, check_every=1, enstrophy_ceiling=1e-12)
        assert "ceiling" in str(err.value)
        assert err.value.history
        assert err.value.step_count >= 1

    def test_advective_cap_monitor(self):
        # absurd forcing drives the grid speed far past the step cap
        noise = NoiseSpec.from_modes({(1, 0): 1e8})
        params = SimParams(TruncationSpec(8), noise, nu=0.1, gamma=1.0, h=0.005)
        with pytest.raises(BlowUpError) as err:
            integrate(params, n_steps=200, check_every=1, enstrophy_ceiling=1e30)
        assert "advective step cap" in str(err.value)

    def test_history_carries_recent_enstrophy(self):
        params = linear_params()
        with pytest.raises(BlowUpError) as err:
            integrate(params, n_steps=500, check_every=10, enstrophy_ceiling=1e-12)
        ts = [t for t, _ in err.value.history]
        assert ts == sorted(ts)


class TestStationaryStatistics:
    def test_linear_enstrophy_matches_ou_value(self):
        # exact transition at any h: coarse steps, long run, batch-means CI
        params = linear_params(h=0.02, seed=4)
        stats = RunningStats(burn_in=10.0)
        integrate(
            params,
            total_time=600.0,
            observer=lambda s: stats.update(measure(s.field, s.t, grid_observables=False)),
            observe_every=10,
        )
        want = 170.0 / 33.0
        got = stats.mean("enstrophy")
        ci = stats.ci_half_width("enstrophy")
        assert abs(got - want) <= 3 * ci
        assert ci < 0.1 * want


class TestCheckpointing:
    def test_round_trip(self):
        params = linear_params(seed=12, stream=3)
        state = integrate(params, n_steps=100)
        blob = checkpoint(state, params)
        state2, params2 = restore(blob)
        assert params2 == params
        assert state2.t == state.t
        assert state2.step_count == state.step_count
        assert state2.rng.counter == state.rng.counter
        assert np.array_equal(state2.field.coeffs, state.field.coeffs)

    def test_resume_is_bit_identical(self):
        params = SimParams(TruncationSpec(8), default_forcing(), nu=0.1, gamma=1.0, h=0.005)
        whole = integrate(params, n_steps=200)
        half = integrate(params, n_steps=100)
        mid = restore(checkpoint(half, params))
        resumed = integrate(params, n_steps=100, initial=mid[0])
        assert whole.field.coeffs.tobytes() == resumed.field.coeffs.tobytes()
        assert whole.rng.counter == resumed.rng.counter

    def test_corruption_detected(self):
        params = linear_params()
        blob = bytearray(checkpoint(integrate(params, n_steps=10), params))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(CheckpointError, match="digest"):
            restore(bytes(blob))

    def test_truncation_detected(self):
        params = linear_params()
        blob = checkpoint(integrate(params, n_steps=10), params)
        with pytest.raises(CheckpointError):
            restore(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError):
            restore(b"")

    def test_bad_magic_detected(self):
        params = linear_params()
        blob = bytearray(checkpoint(integrate(params, n_steps=10), params))
        blob[0] ^= 0xFF
        # digest guards everything including the magic
        with pytest.raises(CheckpointError):
            restore(bytes(blob))
