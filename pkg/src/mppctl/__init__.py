"""Optimal control of marked point processes on finite state spaces.

Simulation, Girsanov reweighting, HJB solvers and pathwise/Monte Carlo checks of
the associated BSDE identities.
"""
from .errors import (
    BadGrid,
    BetaTooSmall,
    BoundViolation,
    MalformedDistribution,
    MppControlError,
    NoConvergence,
    NoRoot,
    OutOfHorizon,
    OutOfRange,
    StepTooLarge,
    TooManyPolicies,
)
from .model import (
    BetaReport,
    LipschitzConstants,
    ModelSpec,
    beta_thresholds,
    cumulative_A,
    dump_model,
    inverse_A,
    lipschitz_constants,
    load_model,
    refine,
    validate_model,
)
from .sim import (
    PathBatch,
    Policy,
    Trajectory,
    simulate_controlled,
    simulate_controlled_batch,
    simulate_reference,
    simulate_reference_batch,
)
from .hamiltonian import hamiltonian, policy_from_value
from .hjb import ConvergenceReport, ValueField, hjb_march, hjb_picard, policy_value
from .girsanov import (
    empirical_compensator_check,
    likelihood,
    verify_moment_bound,
    verify_normalization,
)
from .control import (
    CostEstimate,
    brute_force_value,
    mc_cost_direct,
    mc_cost_reweighted,
    mc_jump_cost,
    transform_dAu_cost,
    transform_jump_cost,
)
from .bsde import (
    DriftField,
    KernelField,
    apriori_check,
    bsde_residual,
    energy_identity_check,
    ito_identity_check,
)

__version__ = "0.1.0"
