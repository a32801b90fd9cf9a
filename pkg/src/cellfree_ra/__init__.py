"""Resource allocation and Monte Carlo simulation for cell-free MU-MIMO
multicarrier downlinks, in Shannon and short-packet rate regimes."""

__version__ = "0.1.0"

from .core import (
    ConfigError,
    Deployment,
    GaConfig,
    Regime,
    Scheme,
    SolverConfig,
    SystemConfig,
    ValidationReport,
    derive_power_budget,
    validate_config,
)
from .channel import ChannelRealization, Topology, capacity_gap, generate_channels, generate_topology, path_gain
from .metrics import (
    AllocationResult,
    BeamformerSet,
    ScheduleMatrix,
    blocklengths,
    dispersion,
    fbl_bits,
    fbl_bits_raw,
    q_inverse,
    shannon_bits,
    sinr,
    weighted_throughput,
)
from .beamforming import bf_fbl, bf_infbl, mmse_beamformer
from .scheduling import Evaluator, GaTrace, Individual, evaluate_fitness, evolve, exhaustive_oracle, init_population, two_stage, usbda
from .experiments import Axis, SweepSpec, SweepResult, convergence_report, run_sweep, run_trial

__all__ = [name for name in dir() if not name.startswith("_")]
