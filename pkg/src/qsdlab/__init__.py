"""qsdlab: quasi-stationary distributions of killed Markov processes.

Simulation of killed trajectories, Fleming-Viot and conditioned-ensemble
estimators of conditional laws, dense grid-spectral solvers for the Green
kernel and the survival-conditioned process, closed-form oracles for the
benchmark models, and sampled geometric checkers (accessibility, boundary
transversality, bracket ranks).
"""

from .fields import (
    VectorFieldSpec,
    constant_field,
    fd_jacobian,
    horizontal_drift,
    linear_field,
    polynomial_field,
    unit_field,
)
from .models import ControlInput, PDMPModel, SDEModel, build_ito_drift, sde_model
from .domains import (
    DomainSpec,
    cylinder_strip_domain,
    disk_domain,
    domain_membership_consistency,
    interval_domain,
    rectangle_domain,
)
from .rng import RngPolicy
from .simulate import (
    KilledPath,
    SurvivalTail,
    simulate_killed_path,
    simulate_pdmp_path,
    step_sde,
    survival_tail,
)
from .estimation import (
    ConditionedEnsembleResult,
    FlemingViotResult,
    Histogram,
    ParticleEnsemble,
    RateFit,
    conditioned_ensemble,
    convergence_rate_fit,
    delta_sampler,
    fleming_viot_run,
    pdmp_delta_sampler,
    pdmp_uniform_sampler,
    tv_distance,
    uniform_sampler,
)
from .spectral import (
    GridSystem,
    LyapunovCertificate,
    MinorizationCertificate,
    QProcessKernels,
    SpectralSolution,
    certify_lyapunov,
    certify_minorization,
    discretize_diffusion_1d,
    discretize_pdmp,
    fixed_point_T_iteration,
    green_identity_suite,
    green_matrix,
    principal_eigenpair,
    q_process_kernel,
    system_histogram,
    transition_matrix,
)
from .control import (
    BracketNode,
    EscapeResult,
    HormanderResult,
    PinskyReport,
    ReachabilityResult,
    h2prime_check,
    hormander_rank,
    integrate_control_ode,
    inward_condition_check,
    lie_bracket,
    pinsky_check,
    pinsky_feedback_escape,
)
from .oracles import (
    PDMPOracle,
    interval_diffusion_reference,
    pdmp_expected_exit,
    pdmp_exit_maximizer,
    pdmp_h,
    pdmp_oracle,
    pdmp_qsd_density,
)
from .config import load_config

__version__ = "0.1.0"
