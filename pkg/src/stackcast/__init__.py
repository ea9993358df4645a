"""Weight estimation and evaluation for linear pools of binned forecasts."""

from .errors import (
    DegenerateColumnError,
    DomainError,
    IngestionError,
    RunError,
    StackcastError,
    UnsupportedError,
)
from .estimator import (
    DirichletState,
    FitTrace,
    PriorSchedule,
    alpha_of_t,
    elbo,
    em_responsibilities,
    expected_log_pi,
    fit_em,
    fit_vi,
    log_likelihood,
    map_weights,
    vi_responsibilities,
)
from .evaluation import (
    PairedDifference,
    PairedDifferenceSet,
    SweepResult,
    paired_differences,
    permutation_pvalue,
    prior_sweep,
)
from .forecast import (
    BinGrid,
    BinnedForecast,
    ForecastMeta,
    LogScoreMatrix,
    ObsKey,
    WeightVector,
    bin_index_of,
    canonical_grid,
    combine,
    log_score,
)
from .season import (
    SeasonData,
    SeasonRun,
    TruthSnapshot,
    TruthSnapshotStore,
    build_score_matrix,
    final_score_matrix,
    run_adaptive,
    run_equal,
    run_static,
)
from .synthetic import RevisionModel, SyntheticScenario, generate, grid_mle_oracle

__version__ = "0.1.0"
