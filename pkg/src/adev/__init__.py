"""Unitary path developments, high rank characteristic-function
distances, and the tooling around them: conditional-expectation
regression, a trainable two-sample test, and a conditional generator.

Numerics run through swappable kernels (``adev.backend``): a numba
implementation by default, pure numpy via ``ADEV_BACKEND=numpy``.
"""

from .backend import backend_name, set_backend, set_thread_cap
from .data import (
    MetricReport,
    ProcessSpec,
    aldous_family,
    eval_metrics,
    export_csv,
    fgn_autocovariance,
    ingest_csv,
    read_csv_dataset,
    simulate_ar1,
    simulate_fbm,
)
from .errors import (
    AdevError,
    ArgumentError,
    GenerationError,
    NumericError,
    ParseError,
    ShapeError,
    TrainingError,
    UndefinedConditionalError,
    UnitarityError,
    ValidationError,
)
from .generator import (
    GanConfig,
    GanResult,
    GeneratorModel,
    conditional_mean_futures,
    generate_joint,
    load_generator,
    save_generator,
    train_hrpcf_gan,
)
from .highrank import (
    CondPaths,
    DevMap2,
    Map2Ensemble,
    develop_rank2,
    ehrpcfd,
    ehrpcfd_sq,
    hrpcf,
    hrpcf_kernel,
    sample_map2_ensemble,
    truncated_hrpcfd,
    truncation_schedule,
)
from .paths import (
    Dataset,
    PiecewisePath,
    develop,
    develop_all,
    epcfd,
    epcfd_sq,
    pcf,
    time_augment,
    unitary_features,
)
from .regression import (
    FiniteProcessSpec,
    RegressionConfig,
    RegressionModel,
    future_dev_targets,
    mean_oracle_error,
    oracle_cond_dev,
    predict_cond_dev,
    rloss,
    train_regression,
)
from .testing import (
    TestReport,
    TestStatistic,
    fit_test_statistic,
    load_statistic,
    permutation_test,
    power_study,
    save_statistic,
)
from .training import (
    DiscConfig,
    DiscriminatorResult,
    grad_ehrpcfd,
    grad_epcfd,
    gradient_ascent,
    optimize_rank1,
    train_discriminator,
)
from .unitary import (
    DevMap,
    MapEnsemble,
    hs_distance,
    hs_inner,
    hs_norm,
    sample_map_ensemble,
)

__version__ = "0.1.0"
