"""Survivor average causal effects in cluster-randomized trials with
outcomes truncated by death, via mixed-effects BART principal
stratification."""

__version__ = "0.1.0"

from .bart import (
    RegressionTree,
    SumOfTreesModel,
    TreePrior,
    backfit_iteration,
    fit_probit_latent,
    predict,
)
from .cart import CartTree, fit_cart, render_dot, render_tree
from .data import (
    ClusterRecord,
    IndividualRecord,
    ObservationPattern,
    TrialDataset,
    classify_pattern,
    impute_baseline_covariates,
    load_dataset,
    write_dataset_csv,
)
from .dgp import (
    DgpConfig,
    GroundTruth,
    MissingnessSpec,
    generate,
    preset_constant_effect,
    preset_heterogeneous,
    preset_null,
    preset_wsd,
    true_sace,
    true_stratum_proportions,
)
from .errors import (
    ConfigError,
    ConsistencyError,
    ContractViolation,
    DataError,
    InitializationError,
    NumericalUnderflowError,
    PositivityError,
    RandomizationError,
    SaceBartError,
    SchemaError,
)
from .estimands import (
    EstimandSummary,
    compute_csace,
    compute_sace,
    format_estimate,
    likely_always_survivors,
    stratum_proportions,
    summarize,
)
from .gibbs import (
    GibbsSampler,
    PosteriorStore,
    SamplerConfig,
    fit,
    impute_missing_survival,
    initialize,
    run_chain,
)
from .kernels import (
    RngStream,
    TruncationRegion,
    normal_cdf,
    sample_conjugate_normal_mean,
    sample_inverse_gamma,
    sample_truncated_normal,
)
from .outcomes import OutcomeModelSet, density, impute_outcome, update_outcome_models
from .strata import (
    MembershipProbs,
    PrincipalStratum,
    StrataState,
    membership_probs,
    observed_likelihood,
    sample_label,
    sample_latents,
    survives,
)
