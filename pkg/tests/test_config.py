import math

import pytest

from stovort import (
    ConfigError,
    RunConfig,
    build_sim_params,
    build_sweep_config,
    default_forcing,
    emit_config,
    parse_config,
    total_q,
)
from stovort.config import DEFAULT_STEPS, DEFAULT_SWEEP_TIME, run_steps

MINIMAL = """
mode = simulate
nu = 0.1
gamma = 1.0
"""


class TestParsing:
    def test_minimal_config(self):
        cfg = parse_config(MINIMAL)
        assert cfg.mode == "simulate"
        assert cfg.nu == 0.1 and cfg.gamma == 1.0
        assert cfg.K == 32 and cfg.h == 0.005
        assert cfg.forcing == default_forcing()
        assert total_q(cfg.forcing) == 6.0

    def test_comments_and_blank_lines(self):
        cfg = parse_config(
            "# run setup\nmode = simulate\n\nnu = 0.1  # small\ngamma = 1.0\n"
        )
        assert cfg.nu == 0.1

    def test_custom_forcing(self):
        cfg = parse_config(MINIMAL + "force 2 0 1.5\nforce 1 1 0.5\n")
        assert cfg.forcing.modes == ((1, 1), (2, 0))
        assert total_q(cfg.forcing) == pytest.approx(2 * (0.5 * 2.0 + 1.5 * 4.0))

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match="line 2: unknown key 'viscosity'"):
            parse_config("mode = simulate\nviscosity = 0.1\n")

    def test_duplicate_key_names_line(self):
        with pytest.raises(ConfigError, match="line 3: duplicate key 'nu'"):
            parse_config("mode = simulate\nnu = 0.1\nnu = 0.2\n")

    def test_empty_value_rejected(self):
        with pytest.raises(ConfigError, match="empty value"):
            parse_config("mode = simulate\nnu =\ngamma = 1.0\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError, match="line 1: expected"):
            parse_config("just some words\n")

    def test_bad_bool(self):
        with pytest.raises(ConfigError, match="must be 'true' or 'false'"):
            parse_config(MINIMAL + "nonlinearity = yes\n")

    def test_bad_number(self):
        with pytest.raises(ConfigError, match="expects a number"):
            parse_config("mode = simulate\nnu = fast\ngamma = 1.0\n")

    def test_gamma_zero_names_requirement(self):
        with pytest.raises(ConfigError, match="drag is fixed positive"):
            parse_config("mode = simulate\nnu = 0.1\ngamma = 0.0\n")

    def test_mean_mode_force_rejected(self):
        with pytest.raises(ConfigError, match="mean-free"):
            parse_config(MINIMAL + "force 0 0 1.0\n")

    def test_negative_amplitude_rejected(self):
        with pytest.raises(ConfigError, match="amplitude must be positive"):
            parse_config(MINIMAL + "force 1 0 -1.0\n")

    def test_conjugate_duplicate_forcing_rejected(self):
        with pytest.raises(ConfigError, match="repeats the forcing"):
            parse_config(MINIMAL + "force 1 0 1.0\nforce -1 0 2.0\n")

    def test_malformed_force_line(self):
        with pytest.raises(ConfigError, match="force k1 k2 q"):
            parse_config(MINIMAL + "force 1 0\n")

    def test_duration_conflict(self):
        with pytest.raises(ConfigError, match="both steps and total_time"):
            parse_config(MINIMAL + "steps = 100\ntotal_time = 10.0\n")

    def test_ladder_parsing(self):
        cfg = parse_config(
            "mode = sweep\ngamma = 1.0\nnu_ladder = 0.2, 0.1, 0.05\n"
        )
        assert cfg.nu_ladder == (0.2, 0.1, 0.05)

    def test_bad_ladder(self):
        with pytest.raises(ConfigError, match="comma-separated"):
            parse_config("mode = sweep\ngamma = 1.0\nnu_ladder = a,b\n")

    def test_seed_range(self):
        with pytest.raises(ConfigError, match="u64"):
            parse_config(MINIMAL + "seed = -1\n")
        cfg = parse_config(MINIMAL + f"seed = {2**64 - 1}\n")
        assert cfg.seed == 2**64 - 1


class TestModeRequirements:
    def test_simulate_needs_nu_and_gamma(self):
        with pytest.raises(ConfigError, match="missing required key: gamma"):
            parse_config("mode = simulate\nnu = 0.1\n")
        with pytest.raises(ConfigError, match="missing required key: nu"):
            parse_config("mode = simulate\ngamma = 1.0\n")

    def test_sweep_needs_only_gamma(self):
        cfg = parse_config("mode = sweep\ngamma = 1.0\n")
        assert cfg.nu is None

    def test_check_noise_needs_neither(self):
        cfg = parse_config("mode = check-noise\nforce 1 0 1.0\nforce 1 1 1.0\n")
        assert cfg.nu is None and cfg.gamma is None

    def test_mode_override_rechecks_requirements(self):
        text = "mode = check-noise\nforce 1 0 1.0\n"
        parse_config(text)
        with pytest.raises(ConfigError, match="missing required key: gamma"):
            parse_config(text, mode="simulate")

    def test_mode_override_validated(self):
        with pytest.raises(ConfigError, match="unknown mode"):
            parse_config(MINIMAL, mode="destroy")

    def test_unknown_mode_line(self):
        with pytest.raises(ConfigError, match="mode must be one of"):
            parse_config("mode = explode\n")


class TestEmission:
    def round_trip(self, cfg):
        back = parse_config(emit_config(cfg))
        assert back == cfg
        return back

    def test_default_round_trip(self):
        self.round_trip(RunConfig(nu=0.1, gamma=1.0))

    def test_full_round_trip(self):
        cfg = parse_config(
            "mode = sweep\n"
            "K = 8\n"
            "N = 64\n"
            "gamma = 0.7\n"
            "h = 0.004\n"
            "nonlinearity = false\n"
            "seed = 12345\n"
            "stream = 9\n"
            "force 2 1 0.333\n"
            "force 1 3 1.25\n"
            "total_time = 500.0\n"
            "burn_in = 12.5\n"
            "observe_every = 4\n"
            "grid_observables = false\n"
            "write_timeseries = false\n"
            "output_dir = out/sweeps\n"
            "nu_ladder = 0.2,0.1,0.05,0.025\n"
            "include_euler = false\n"
            "replicas = 6\n"
            "threshold = 0.2\n"
            "target_batches = 20\n"
            "workers = 3\n"
        )
        self.round_trip(cfg)

    def test_seventeen_digit_floats_survive(self):
        cfg = RunConfig(nu=1.0 / 3.0, gamma=math.pi, h=0.1 / 7.0)
        back = self.round_trip(cfg)
        assert back.nu == 1.0 / 3.0 and back.gamma == math.pi

    def test_awkward_force_amplitudes_survive(self):
        cfg = parse_config(MINIMAL + "force 1 0 0.1\nforce 1 1 0.30000000000000004\n")
        self.round_trip(cfg)


class TestBuilders:
    def test_build_sim_params(self):
        cfg = parse_config(MINIMAL + "K = 8\nseed = 7\nstream = 2\n")
        params = build_sim_params(cfg)
        assert params.trunc.K == 8
        assert params.nu == 0.1 and params.gamma == 1.0
        assert params.seed == 7 and params.stream == 2

    def test_build_sim_params_needs_rates(self):
        with pytest.raises(ValueError, match="nu or gamma"):
            build_sim_params(RunConfig(gamma=1.0))

    def test_run_steps_resolution(self):
        assert run_steps(RunConfig(nu=0.1, gamma=1.0)) == DEFAULT_STEPS
        assert run_steps(RunConfig(nu=0.1, gamma=1.0, steps=123)) == 123
        assert run_steps(RunConfig(nu=0.1, gamma=1.0, total_time=1.0, h=0.005)) == 200

    def test_build_sweep_config(self):
        cfg = parse_config(
            "mode = sweep\ngamma = 1.0\nK = 8\nnu_ladder = 0.2,0.1,0.05\nreplicas = 5\n"
        )
        sweep = build_sweep_config(cfg)
        assert sweep.nu_ladder == (0.2, 0.1, 0.05)
        assert sweep.base.nu == 0.2  # ladder head stands in for the base
        assert sweep.replicas == 5
        assert sweep.total_time == DEFAULT_SWEEP_TIME

    def test_sweep_duration_from_steps(self):
        cfg = parse_config("mode = sweep\ngamma = 1.0\nsteps = 1000\nh = 0.01\n")
        assert build_sweep_config(cfg).total_time == pytest.approx(10.0)

    def test_sweep_needs_gamma(self):
        with pytest.raises(ValueError, match="gamma"):
            build_sweep_config(RunConfig())
