"""Missing-modality masking protocols and modality balance diagnostics.

Submodules:

- `protocol`: shared/imbalanced missing-rate distributions, mask
  sampling, truncated marginals, divergences, mean-matching.
- `equity`: the ablation-based modality equity index.
- `learning`: the gradient-trace modality learning index.
- `simtrainer`: a deterministic toy multimodal trainer that emits the
  artifacts the two indices consume.
- `config` / `report` / `cli`: experiment configuration, checksummed
  JSON reports, and the `missdiag` command-line tool.
"""

from .equity import (
    BALANCED_IS_ONE,
    DOMINANCE_IS_ONE,
    AblationTable,
    ContributionProfile,
    MEIResult,
    PerfMetric,
    combos_excluding,
    contribution,
    mei,
    mei_from_table,
    perf_drops,
)
from .errors import (
    ConfigError,
    DegenerateContributionError,
    DimensionError,
    DuplicateSampleError,
    EmptyDatasetError,
    FileFormatError,
    IncompleteTableError,
    InsufficientTraceError,
    InvalidPatternError,
    InvalidTraceError,
    MissdiagError,
)
from .learning import (
    GradSample,
    GradTrace,
    MLIResult,
    aggregate_G,
    assemble_trace,
    delta_series,
    mli,
    modality_loss,
)
from .protocol import (
    JS,
    KL,
    MaskMatrix,
    MaskPattern,
    PatternDistribution,
    RateVector,
    all_patterns,
    apply_mask,
    divergence,
    empirical_rates,
    generate_mask_matrix,
    marginal_missing_rate,
    marginal_missing_rates,
    mean_match_shared,
    pattern_distribution,
    pattern_probability,
    sample_pattern,
    sample_patterns,
)
from .simtrainer import (
    CLASSIFICATION,
    CLASSIFICATION_METRICS,
    REGRESSION,
    REGRESSION_METRICS,
    TASKS,
    RunLog,
    StepLog,
    SynthDataset,
    SynthSpec,
    ToyModel,
    TrainConfig,
    ablation_table,
    dataset_loss,
    default_metrics,
    evaluate_under_combination,
    forward,
    gen_synthetic,
    run_experiment,
    train_step,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
