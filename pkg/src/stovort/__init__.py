"""Pseudo-spectral simulation of stochastically forced, damped 2D flow.

The package integrates the vorticity dynamics

    d xi + (nu * (-Lap) xi + gamma * xi + u . grad xi) dt = d(curl noise)

on the periodic square, with the velocity recovered from the vorticity
by Biot-Savart. The linear part of the stepping is exact, the forcing
acts on finitely many modes, and the statistics layer measures the
stationary balance laws the dynamics must satisfy, including their
behavior as nu goes to zero.
"""

from .spectral import (
    TruncationSpec,
    SpectralField,
    VelocityField,
    GridField,
    to_grid,
    from_grid,
    grid_values,
    biot_savart,
    curl,
    advect,
    nonlinear_term,
    sobolev_norm,
    lp_norm,
)
from .noise import (
    NoiseSpec,
    RngState,
    HMReport,
    default_forcing,
    total_q,
    velocity_q,
    check_hm_condition,
    sample_curl_increment,
    ou_stationary_moments,
    ou_stationary_enstrophy,
)
from .integrator import (
    DEFAULT_H,
    SimParams,
    State,
    BlowUpError,
    CheckpointError,
    initial_state,
    step,
    integrate,
    checkpoint,
    restore,
    suggest_timestep,
)
from .diagnostics import (
    Observables,
    RunningStats,
    Collector,
    BalanceReport,
    balance_report,
    measure,
    enstrophy_spectrum,
    spectrum_shells,
    write_timeseries,
    read_timeseries,
    write_balance_csv,
)

from .experiments import (
    SweepConfig,
    SweepReport,
    RunResult,
    stationary_run,
    viscosity_sweep,
    inviscid_comparison,
    recompute_verdicts,
)
from .config import (
    RunConfig,
    ConfigError,
    parse_config,
    emit_config,
    build_sim_params,
    build_sweep_config,
)

__version__ = "0.1.0"
