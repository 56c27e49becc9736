"""Shift-share instrumental variables via the equivalent shock-level regression."""

from .aggregate import ShareAggregator, ShockLevelDataset, load_shock_level, ssaggregate
from .data import (
    CONST,
    MISSING_SHOCK,
    ExposureMatrix,
    ObservationTable,
    ObsSchema,
    PanelBundle,
    ShareSchema,
    ShockSchema,
    ShockTable,
    add_exposure_weighted_controls,
    bundle_from_dense,
    complete_shares,
    load_bundle,
    load_observations,
    load_shares,
    load_shocks,
    relabel_panel,
)
from .diagnostics import (
    Contributions,
    balance_summary,
    concentration,
    icc_decompose,
    loo_build,
    loo_estimate,
    loo_heuristic,
    rotemberg,
)
from .errors import (
    EstimationError,
    InapplicableError,
    InputError,
    RankError,
    SSIVError,
    ValidationError,
)
from .estimate import (
    EstimateReport,
    Inference,
    akm_se,
    effective_f,
    falsification_test,
    first_stage_f,
    lm_confidence_interval,
    lm_statistic,
    orthogonality_moment,
    overidentified_fit,
    ssiv_estimate,
)
from .montecarlo import (
    DgpSpec,
    SimulationDesign,
    StudyReport,
    aggregate_industries,
    draw_shocks,
    make_synthetic_design,
    reweight_to_hhi,
    run_many_weak_study,
    run_rejection_study,
    subsample_regions,
)
from .regress import Residualizer, iv_fit, sandwich_vcov, wls_residualize

__version__ = "0.1.0"
