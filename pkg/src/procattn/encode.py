"""Vocabularies, elapsed-time features and padded tensor encoding of prefixes."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import container
from ._validation import check_prefixes
from .errors import ConfigError, DataError
from .eventlog import END_LABEL

PAD = 0
UNK = 1
N_RESERVED = 2

TIME_UNITS = {"seconds": 1.0, "minutes": 60.0, "hours": 3600.0, "days": 86400.0}


@dataclass(frozen=True)
class Vocabulary:
    """Label <-> index map; 0 is padding, 1 is unknown/absent, real labels from 2."""

    kind: str
    labels: tuple
    with_end: bool = False
    _index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"{self.kind} vocabulary has duplicate labels")
        index = {lab: i + N_RESERVED for i, lab in enumerate(self.labels)}
        if self.with_end:
            index[END_LABEL] = self.end_index
        object.__setattr__(self, "_index", index)

    @property
    def end_index(self):
        if not self.with_end:
            return None
        return N_RESERVED + len(self.labels)

    def __len__(self):
        return N_RESERVED + len(self.labels) + int(self.with_end)

    @property
    def size(self):
        return len(self)

    def index(self, label):
        if label is None:
            return UNK
        return self._index.get(label, UNK)

    def decode(self, idx):
        idx = int(idx)
        if idx == PAD:
            return "<PAD>"
        if idx == UNK:
            return "<UNK>"
        if self.with_end and idx == self.end_index:
            return END_LABEL
        return self.labels[idx - N_RESERVED]

    def __contains__(self, label):
        return label in self._index

    # classes for the output head: every index except pad and unknown
    @property
    def n_classes(self):
        return len(self) - N_RESERVED

    def class_of(self, label):
        idx = self._index.get(label)
        return -1 if idx is None else idx - N_RESERVED

    def class_label(self, cls):
        return self.decode(int(cls) + N_RESERVED)

    @property
    def class_labels(self):
        return [self.class_label(c) for c in range(self.n_classes)]

    def to_dict(self):
        return {"kind": self.kind, "labels": list(self.labels), "with_end": self.with_end}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["labels"]), d.get("with_end", False))


def fit_vocabularies(prefixes, include_end_label=False):
    """Activity and resource vocabularies in first-occurrence order.

    Target labels join the activity vocabulary (after the events of their
    prefix); ``<END>`` becomes the last activity index when enabled.
    """
    if not prefixes:
        raise DataError("cannot fit vocabularies on an empty prefix set")
    acts, res = {}, {}
    for p in prefixes:
        for e in p.events:
            acts.setdefault(e.activity, None)
            if e.resource is not None:
                res.setdefault(e.resource, None)
        if p.target != END_LABEL:
            acts.setdefault(p.target, None)
    return (
        Vocabulary("activity", tuple(acts), with_end=include_end_label),
        Vocabulary("resource", tuple(res)),
    )


def elapsed_time(prefix, unit="days"):
    """Time since the first event of the prefix, per event, in ``unit``."""
    if unit not in TIME_UNITS:
        raise ConfigError(f"unknown time unit {unit!r}; choose from {sorted(TIME_UNITS)}")
    t0 = prefix.events[0].timestamp
    div = TIME_UNITS[unit]
    return np.array([(e.timestamp - t0).total_seconds() / div for e in prefix.events])


@dataclass(frozen=True)
class TimeScaler:
    """Divides elapsed times by a constant; ``identity`` keeps raw values."""

    kind: str = "maxabs"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("maxabs", "identity"):
            raise ConfigError(f"unknown time scaling {self.kind!r}")

    def fit(self, elapsed, mask):
        if self.kind == "identity":
            return replace(self, scale=1.0)
        vals = np.abs(np.asarray(elapsed)[np.asarray(mask, dtype=bool)])
        top = float(vals.max()) if vals.size else 0.0
        return replace(self, scale=top if top > 0 else 1.0)

    def transform(self, elapsed):
        return np.asarray(elapsed, dtype=np.float64) / self.scale

    def to_dict(self):
        return {"kind": self.kind, "scale": self.scale}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d["scale"]))


@dataclass
class EncodedDataset:
    """Left-padded index/elapsed matrices for a batch of prefixes.

    ``targets`` holds output-class indices (activity vocabulary index minus the
    two reserved slots); ``-1`` marks a target label absent from the vocabulary.
    """

    activity_indices: np.ndarray
    resource_indices: np.ndarray
    elapsed: np.ndarray
    mask: np.ndarray
    targets: np.ndarray
    lengths: np.ndarray
    prefix_ids: list
    activity_vocab: Vocabulary
    resource_vocab: Vocabulary
    time_unit: str = "days"
    scaler: TimeScaler = field(default_factory=TimeScaler)

    def __len__(self):
        return len(self.targets)

    @property
    def pad_length(self):
        return self.activity_indices.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            activity_indices=self.activity_indices[idx],
            resource_indices=self.resource_indices[idx],
            elapsed=self.elapsed[idx],
            mask=self.mask[idx],
            targets=self.targets[idx],
            lengths=self.lengths[idx],
            prefix_ids=[self.prefix_ids[i] for i in idx],
        )

    def save(self, path):
        header = {
            "kind": "dataset",
            "activity_vocab": self.activity_vocab.to_dict(),
            "resource_vocab": self.resource_vocab.to_dict(),
            "time_unit": self.time_unit,
            "scaler": self.scaler.to_dict(),
            "prefix_ids": list(self.prefix_ids),
        }
        arrays = {
            "activity_indices": self.activity_indices,
            "resource_indices": self.resource_indices,
            "elapsed": self.elapsed,
            "mask": self.mask,
            "targets": self.targets,
            "lengths": self.lengths,
        }
        with open(path, "wb") as fh:
            container.write_container(fh, header, arrays)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            header, arrays = container.read_container(fh)
        if header.get("kind") != "dataset":
            raise DataError(f"{path}: not a dataset container")
        return cls(
            prefix_ids=header["prefix_ids"],
            activity_vocab=Vocabulary.from_dict(header["activity_vocab"]),
            resource_vocab=Vocabulary.from_dict(header["resource_vocab"]),
            time_unit=header["time_unit"],
            scaler=TimeScaler.from_dict(header["scaler"]),
            **arrays,
        )


def _raw_elapsed(prefixes, pad_length, unit):
    out = np.zeros((len(prefixes), pad_length))
    for row, p in enumerate(prefixes):
        out[row, pad_length - p.length :] = elapsed_time(p, unit)
    return out


def encode_dataset(prefixes, activity_vocab, resource_vocab, pad_length,
                   scaler=None, time_unit="days"):
    """Encode prefixes into left-padded matrices; ``scaler`` must already be fitted."""
    scaler = scaler or TimeScaler("identity")
    n = len(prefixes)
    if n and max(p.length for p in prefixes) > pad_length:
        longest = max(p.length for p in prefixes)
        raise DataError(f"prefix of length {longest} exceeds pad length {pad_length}")
    acts = np.zeros((n, pad_length), dtype=np.int64)
    ress = np.zeros((n, pad_length), dtype=np.int64)
    mask = np.zeros((n, pad_length), dtype=bool)
    lengths = np.zeros(n, dtype=np.int64)
    targets = np.zeros(n, dtype=np.int64)
    for row, p in enumerate(prefixes):
        start = pad_length - p.length
        acts[row, start:] = [activity_vocab.index(e.activity) for e in p.events]
        ress[row, start:] = [resource_vocab.index(e.resource) for e in p.events]
        mask[row, start:] = True
        lengths[row] = p.length
        targets[row] = activity_vocab.class_of(p.target)
    elapsed = scaler.transform(_raw_elapsed(prefixes, pad_length, time_unit)) * mask
    return EncodedDataset(
        activity_indices=acts,
        resource_indices=ress,
        elapsed=elapsed,
        mask=mask,
        targets=targets,
        lengths=lengths,
        prefix_ids=[p.prefix_id for p in prefixes],
        activity_vocab=activity_vocab,
        resource_vocab=resource_vocab,
        time_unit=time_unit,
        scaler=scaler,
    )


def split_indices(prefix_ids, train_fraction=0.7, seed=0):
    """Shuffle positions by prefix id under ``seed``; return ``(train, test)`` index arrays."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(prefix_ids)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    # order by id first so the split does not depend on input order
    base = np.array(sorted(range(n), key=lambda i: prefix_ids[i]), dtype=np.int64)
    perm = base[np.random.default_rng(seed).permutation(n)]
    n_train = int(round(train_fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split_dataset(dataset, train_fraction=0.7, seed=0):
    train, test = split_indices(dataset.prefix_ids, train_fraction, seed)
    return dataset.subset(train), dataset.subset(test)


def one_hot(indices, width, mask=None):
    """``[rows, L]`` integer indices -> ``[rows, L, width]`` 0/1 floats.

    Positions where ``mask`` is false become all-zero rows.
    """
    indices = np.asarray(indices)
    if indices.size and (indices.max() >= width or indices.min() < 0):
        raise ValueError(f"one_hot: index {indices.max()} out of range for width {width}")
    out = (indices[..., None] == np.arange(width)).astype(np.float64)
    if mask is not None:
        out *= np.asarray(mask, dtype=bool)[..., None]
    return out


class PrefixEncoder(TransformerMixin, BaseEstimator):
    """Fits vocabularies and the time scaler on prefixes; transforms to :class:`EncodedDataset`."""

    def __init__(self, pad_length=None, time_unit="days", time_scaling="maxabs",
                 include_end_label=False):
        self.pad_length = pad_length
        self.time_unit = time_unit
        self.time_scaling = time_scaling
        self.include_end_label = include_end_label

    def fit(self, X, y=None):
        prefixes = check_prefixes(X)
        if self.time_unit not in TIME_UNITS:
            raise ConfigError(f"unknown time unit {self.time_unit!r}")
        self.activity_vocab_, self.resource_vocab_ = fit_vocabularies(
            prefixes, self.include_end_label
        )
        longest = max(p.length for p in prefixes)
        self.pad_length_ = self.pad_length or longest
        if longest > self.pad_length_:
            raise DataError(f"prefix of length {longest} exceeds pad length {self.pad_length_}")
        raw = _raw_elapsed(prefixes, self.pad_length_, self.time_unit)
        mask = np.arange(self.pad_length_)[None, :] >= (
            self.pad_length_ - np.array([p.length for p in prefixes])[:, None]
        )
        self.scaler_ = TimeScaler(self.time_scaling).fit(raw, mask)
        return self

    def transform(self, X):
        check_is_fitted(self, "scaler_")
        prefixes = check_prefixes(X)
        return encode_dataset(
            prefixes, self.activity_vocab_, self.resource_vocab_, self.pad_length_,
            self.scaler_, self.time_unit,
        )
