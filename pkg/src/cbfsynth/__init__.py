"""Safety-critical controller synthesis with control barrier and Lyapunov functions."""

from .core import (
    BarrierSpec,
    ControlAffineSystem,
    ExtendedClassK,
    LyapunovSpec,
    check_gradient_consistency,
    lie_derivatives,
)
from .qp import QpProblem, QpSolution, solve_active_set, solve_minnorm_single
from .filters import (
    SafetyFilter,
    UnifiedController,
    cbf_constraint_row,
    clf_cbf_qp,
    in_K_cbf,
    in_K_clf,
    min_norm_clf,
    safety_filter,
)
from .ecbf import (
    EcbfDesign,
    LieChain,
    clf_ecbf_qp,
    companion_matrices,
    ecbf_constraint_row,
    eta_b,
    gains_from_poles,
    nu_chain,
    validate_initial_state,
)
from .backup import BackupCbf, as_barrier_spec, backup_flow, backup_h, backup_h_gradient
from .sim import RunConfig, TrajectoryLog, invariance_report, rk4_step, run_closed_loop

__version__ = "0.1.0"
