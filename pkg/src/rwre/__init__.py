"""Transient zero-speed random walks in i.i.d. random environments.

The package splits along the objects of the theory:

* env        environment laws, kappa, the log-moment generating function;
* potential  the potential landscape: ladder epochs, excursions, deep and
             star valleys, good-environment events;
* quenched   fixed-environment chains: exit probabilities, h-transforms,
             crossing-attempt moments, exact solvers, walk simulation;
* constants  the explicit limit-law constants and their Monte Carlo
             estimators;
* stable     positive stable sampling and the inverse subordinator;
* experiments  the end-to-end Monte Carlo harness and report emission;
* rng        keyed counter-based streams behind all of the above;
* special    log-gamma, digamma, log-beta without a scipy dependency in
             the formula paths.
"""

__version__ = "0.1.0"

from .env import (
    EnvironmentLaw,
    EnvironmentSlice,
    KappaResult,
    NoRootError,
    RegimeError,
    kappa_solve,
    lambda_fn,
    mean_log_rho,
    moment_rho_log,
    rate_function,
    sample_environment,
)
from .potential import (
    DeepValley,
    ExcursionRecord,
    GoodEnvironmentRecord,
    PotentialPath,
    StarValley,
    WindowExhausted,
    build_potential,
    check_good_environment,
    critical_height,
    descent_threshold,
    detect_deep_valleys,
    detect_star_valleys,
    excursion_table,
    excursions,
    ladder_epochs,
)
from .quenched import (
    AttemptMoments,
    HTransform,
    QuenchedChain,
    WalkResult,
    attempt_moments,
    exit_prob,
    failure_prob,
    h_transform,
    linear_solve_oracle,
    mean_G_exact,
    sample_hitting_times,
    simulate_walk,
)
from .constants import (
    IglehartEstimate,
    LimitLawParams,
    TailEstimate,
    feller_constant,
    iglehart_constant,
    kesten_constant_beta,
    kesten_tail_estimate,
    limit_scale,
    limit_scale_beta,
)
from .stable import (
    PredictedCdf,
    StableSpec,
    SubordinatorPath,
    inverse_subordinator_path,
    laplace,
    predicted_tau_cdf,
    sample_positive_stable,
)
from .experiments import (
    ConvergenceReport,
    ExperimentConfig,
    run_position_experiment,
    run_tau_experiment,
    run_valley_census,
    verify_crossing_bound,
    verify_reduction,
)
