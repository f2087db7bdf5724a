"""scikit-learn compatible wrappers.

``NormPropClassifier`` trains a network through :func:`normprop.training.train`
and exposes ``fit``/``predict``/``predict_proba``/``score``; the two data
normalizers are ordinary transformers so they compose with ``Pipeline``.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y, validate_data

from .data import DEFAULT_DECAY, Dataset, RunningStats, apply_normalization, batch_normalize_data, fit_global_stats
from .network import build_network, parse_architecture
from .training import TrainConfig, evaluate, train


class GlobalDataNormalizer(TransformerMixin, BaseEstimator):
    """Per-feature standardization with statistics of the whole fitting set."""

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        self.stats_ = fit_global_stats(X)
        self.mean_, self.scale_ = self.stats_.mean, self.stats_.std
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return apply_normalization(X, self.stats_)


class BatchDataNormalizer(TransformerMixin, BaseEstimator):
    """Standardizes each training batch by its own statistics.

    ``fit_transform``/``partial_fit`` consume one mini-batch and update a
    running estimate; ``transform`` applies the frozen running estimate, as
    used at evaluation time.
    """

    def __init__(self, decay=DEFAULT_DECAY):
        self.decay = decay

    def partial_fit(self, X, y=None):
        self.fit_transform_batch(X)
        return self

    def fit(self, X, y=None):
        self.running_ = None
        return self.partial_fit(X)

    def fit_transform_batch(self, X):
        X = check_array(X, dtype=np.float64)
        if getattr(self, "running_", None) is None:
            self.running_ = RunningStats(X.shape[1], self.decay)
            self.n_features_in_ = X.shape[1]
        out, _ = batch_normalize_data(X, self.running_)
        return out

    def fit_transform(self, X, y=None, **fit_params):
        self.running_ = None
        return self.fit_transform_batch(X)

    def transform(self, X):
        check_is_fitted(self, "running_")
        X = check_array(X, dtype=np.float64)
        return apply_normalization(X, self.running_.as_dataset_stats())


class NormPropClassifier(ClassifierMixin, BaseEstimator):
    """Feed-forward classifier with NormProp (or BN / no) hidden-layer normalization.

    Parameters
    ----------
    hidden : str or sequence of str
        Hidden layers in C/P/D shorthand, e.g. ``("D(64)", "D(64)")``. The
        output ``D(n_classes)`` layer is appended automatically.
    norm : {"normprop", "batchnorm", "none"}
    data_norm : {"global", "batch"}
        Input normalization strategy.
    image_shape : tuple, optional
        ``(channels, height, width)`` when ``hidden`` starts with a C or P layer.
    """

    def __init__(self, hidden=("D(64)", "D(64)"), norm="normprop", activation="relu", gamma_init="jacobian",
                 data_norm="global", batch_size=50, epochs=20, lr=0.05, halve_every=10, momentum=0.9,
                 weight_decay=0.0005, image_shape=None, random_state=0):
        self.hidden = hidden
        self.norm = norm
        self.activation = activation
        self.gamma_init = gamma_init
        self.data_norm = data_norm
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.halve_every = halve_every
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.image_shape = image_shape
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           halve_every=self.halve_every, momentum=self.momentum, weight_decay=self.weight_decay,
                           data_norm=self.data_norm, seed=self.random_state)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.n_features_in_ = X.shape[1]
        self.classes_, encoded = np.unique(y, return_inverse=True)
        specs = parse_architecture(self.hidden) + parse_architecture(f"D({len(self.classes_)})")
        input_shape = self.image_shape if self.image_shape is not None else (X.shape[1],)
        self.network_ = build_network(specs, input_shape, norm=self.norm, activation=self.activation,
                                      seed=self.random_state, gamma_init=self.gamma_init)
        result = train(self.network_, Dataset(X, encoded), self._train_config())
        self.data_stats_ = result.data_stats
        self.history_ = result.history
        return self

    def _normalized(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but {type(self).__name__} expects {self.n_features_in_}")
        return apply_normalization(X, self.data_stats_)

    def decision_function(self, X):
        return self.network_.forward(self._normalized(X))

    def predict_proba(self, X):
        return self.network_.predict_proba(self._normalized(X))

    def predict(self, X):
        check_is_fitted(self, "network_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def evaluate(self, X, y):
        """``(accuracy, mean cross-entropy)`` on labelled data."""
        check_is_fitted(self, "network_")
        encoded = np.searchsorted(self.classes_, y)
        return evaluate(self.network_, Dataset(check_array(X, dtype=np.float64), encoded), self.data_stats_)
