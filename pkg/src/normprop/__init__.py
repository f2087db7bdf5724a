"""Normalization Propagation: batch-statistics-free normalization of hidden layers.

Hidden-layer inputs are kept zero-mean and unit-variance by dividing each
pre-activation by its weight-row norm and standardizing the post-activation
with the closed-form moments of the activation under a standard-normal input.
"""

from .activations import (
    Activation,
    ActivationStats,
    get_activation,
    jacobian_factor,
    monte_carlo_stats,
    prelu_stats,
    relu_stats,
    stats_for,
)
from .analysis import (
    CovarianceReport,
    ShiftMonitor,
    ShiftTrace,
    canonical_bound,
    canonical_gap,
    coherence,
    jacobian_probe,
    shift_monitor,
)
from .config import ExperimentConfig, load_config, parse_config
from .data import (
    Dataset,
    DatasetStats,
    RunningStats,
    apply_normalization,
    batch_normalize_data,
    fit_global_stats,
    load_cifar,
    load_csv,
    load_idx,
    read_idx,
    synth_gaussian,
)
from .estimator import BatchDataNormalizer, GlobalDataNormalizer, NormPropClassifier
from .exceptions import (
    ConfigurationError,
    DataError,
    DimensionError,
    DivergenceError,
    EvaluationError,
    FormatError,
    InsufficientDataError,
    NormalizationError,
    NormPropError,
    StateError,
    UnsupportedConfigurationError,
)
from .layers import (
    BatchNormDense,
    Flatten,
    NormPropConv,
    NormPropDense,
    PlainConv,
    PlainDense,
    Pool,
    SoftmaxCrossEntropy,
    layer_backward,
    loss_forward_backward,
)
from .network import Network, build_network, init_gamma, init_weights, parse_architecture
from .tensor import conv2d, matmul, pool2d, row_l2_norms
from .training import (
    OptimizerState,
    Schedule,
    TrainConfig,
    apply_l2_constraint,
    evaluate,
    load_checkpoint,
    restore_checkpoint,
    save_checkpoint,
    sgd_step,
    train,
)

__version__ = "0.1.0"
