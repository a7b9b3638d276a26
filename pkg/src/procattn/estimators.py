"""scikit-learn style classifiers wrapping the two attention architectures.

``X`` is a sequence of :class:`~procattn.eventlog.PrefixTrace`; ``y`` defaults
to each prefix's recorded next activity.  Predictions are activity labels.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_prefixes, check_random_state, check_targets
from .encode import PrefixEncoder, split_indices
from .errors import ConfigError
from .models import SHARED, SPECIALISED, TrainConfig, predict, train


class _AttentionClassifier(ClassifierMixin, BaseEstimator):
    architecture = None

    def __init__(self, hidden_size=50, activity_dim=None, resource_dim=None, epochs=50,
                 batch_size=64, learning_rate=0.001, patience=5, validation_fraction=0.1,
                 time_unit="days", time_scaling="maxabs", include_end_label=False,
                 pad_length=None, random_state=None):
        self.hidden_size = hidden_size
        self.activity_dim = activity_dim
        self.resource_dim = resource_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.time_unit = time_unit
        self.time_scaling = time_scaling
        self.include_end_label = include_end_label
        self.pad_length = pad_length
        self.random_state = random_state

    def _train_config(self, seed):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.learning_rate,
            seed=seed, patience=self.patience, hidden_size=self.hidden_size,
            activity_dim=self.activity_dim, resource_dim=self.resource_dim,
        )

    def fit(self, X, y=None):
        prefixes = check_prefixes(X)
        targets = check_targets(prefixes, y)
        prefixes = [dataclasses.replace(p, target=t) for p, t in zip(prefixes, targets)]
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}"
            )
        seed = check_random_state(self.random_state)
        self.encoder_ = PrefixEncoder(
            pad_length=self.pad_length, time_unit=self.time_unit,
            time_scaling=self.time_scaling, include_end_label=self.include_end_label,
        ).fit(prefixes)
        data = self.encoder_.transform(prefixes)
        val = None
        if self.validation_fraction > 0 and len(data) > 1:
            fit_idx, val_idx = split_indices(data.prefix_ids, 1.0 - self.validation_fraction, seed)
            if len(fit_idx) and len(val_idx):
                data, val = data.subset(fit_idx), data.subset(val_idx)
        self.artifact_, self.history_ = train(
            self.architecture, data, val, self._train_config(seed)
        )
        self._set_fitted_attributes()
        return self

    def _set_fitted_attributes(self):
        self.classes_ = np.array(self.artifact_.class_labels, dtype=object)
        self.n_classes_ = len(self.classes_)

    @classmethod
    def from_artifact(cls, artifact):
        """Wrap an already trained :class:`~procattn.models.ModelArtifact`."""
        if artifact.architecture != cls.architecture:
            raise ConfigError(
                f"{cls.__name__} cannot wrap a {artifact.architecture} artifact"
            )
        cfg = artifact.config
        est = cls(
            hidden_size=cfg.get("hidden_size", 50),
            activity_dim=cfg.get("activity_dim"),
            resource_dim=cfg.get("resource_dim"),
            time_unit=artifact.time_unit,
            time_scaling=artifact.scaler.kind,
            pad_length=artifact.pad_length,
            random_state=cfg.get("seed"),
        )
        est.artifact_ = artifact
        est.history_ = []
        est._set_fitted_attributes()
        return est

    def _predict(self, X):
        check_is_fitted(self, "artifact_")
        return predict(self.artifact_, check_prefixes(X))

    def predict_proba(self, X):
        return self._predict(X).probabilities

    def predict(self, X):
        classes = self._predict(X).classes
        return self.classes_[classes]

    def score(self, X, y=None):
        prefixes = check_prefixes(X)
        targets = np.array(check_targets(prefixes, y), dtype=object)
        return float(np.mean(self.predict(prefixes) == targets))


class SharedAttentionClassifier(_AttentionClassifier):
    """Shared attention: alpha and beta computed from one embedded feature tensor."""

    architecture = SHARED


class SpecialisedAttentionClassifier(_AttentionClassifier):
    """Specialised attention: one beta network per attribute, alpha over influence vectors."""

    architecture = SPECIALISED
