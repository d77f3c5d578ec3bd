"""MS-NOMA positioning-communication signal simulator and power allocator.

The package models a signal that superposes low-power positioning
sub-carriers on an OFDM communication grid, evaluates the mutual
interference (communication bit error rate, delay-locked-loop ranging
error, horizontal positioning accuracy), and allocates per-user
positioning powers with a nested dual-decomposition algorithm.
"""

from .mathkit import QuadratureSpec, DomainError, ToleranceNotMet, erfc, erfc_inv, integrate, sinc
from .signalmodel import (
    ChannelGains,
    SignalPlan,
    ber_cuser,
    ber_matrix,
    ber_single_cell,
    interference_at_cuser,
    interference_matrix,
    psd_communication,
    psd_positioning,
    received_pos_power_at_cuser,
    subcarrier_leakage,
)
from .ranging import (
    SPEED_OF_LIGHT,
    DllConfig,
    DllIntegrals,
    RangingBreakdown,
    ZeroPowerError,
    dll_integrals,
    equivalent_comm_gain,
    ranging_factor,
    ranging_var_approx,
    ranging_var_exact,
)
from .geometry import (
    DegenerateGeometry,
    GeometryResult,
    LengthMismatch,
    Position,
    dilution,
    horizontal_accuracy,
    horizontal_accuracy_squared,
    los_matrix,
)
from .scenario import (
    ConfigError,
    HearabilityConfig,
    Scenario,
    ScenarioLayout,
    build_scenario,
    dump_scenario,
    fix_available,
    free_space_gain,
    hearable_matrix,
    hearable_set,
    load_scenario,
)
from .allocator import (
    AllocationReport,
    Constraints,
    DualState,
    InactiveBracket,
    SubgradientCheck,
    dual_function_check,
    equal_power,
    evaluate_allocation,
    interference_threshold,
    interference_threshold_matrix,
    j_leakage,
    kkt_power,
    pcjpa,
    qos_band,
)

__version__ = "0.1.0"
