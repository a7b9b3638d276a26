"""Shared and specialised attention architectures, training, prediction and artifacts.

Shared model: activity and resource index embeddings plus the elapsed time
form one concatenated tensor ``v``.  Two independent BiLSTMs read ``v``; one
feeds a scalar-per-step dense layer that is softmaxed over real positions
(event attention alpha), the other a tanh dense layer as wide as ``v``
(attribute attention beta).  The context is ``sum_i alpha_i * beta_i * v_i``.

Specialised model: one-hot activity, one-hot resource and elapsed time each go
through their own BiLSTM and tanh head, giving beta per stream.  The
influence vectors ``onehot * beta`` are concatenated and read by a single
BiLSTM whose softmax head yields alpha; the context is
``sum_i alpha_i * influence_i``.

Both contexts go through a dense softmax classifier over the activity classes.
"""

from __future__ import annotations

import copy
import io
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__, container
from . import tensor as T
from .bilstm import BiLstmParams, LstmParams, bilstm_forward
from .encode import EncodedDataset, TimeScaler, Vocabulary, encode_dataset, one_hot
from .errors import ArtifactFormatError, ConfigError, DataError, TrainingDivergedError

logger = logging.getLogger(__name__)

SHARED = "shared"
SPECIALISED = "specialised"
ARCHITECTURES = (SHARED, SPECIALISED)


# -- parameters -----------------------------------------------------------------


def _dense(rng, n_in, n_out, name):
    return T.glorot_uniform(rng, (n_in, n_out), f"{name}.w"), T.zeros((n_out,), f"{name}.b")


class _ParamSet:
    """Common helpers: ordered (name, tensor) listing and array round-trip."""

    def named_tensors(self):
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, BiLstmParams):
                for direction in ("forward", "backward"):
                    lp = getattr(value, direction)
                    for attr in ("w_input", "w_hidden", "bias"):
                        out.append((f"{f.name}.{direction}.{attr}", getattr(lp, attr)))
            elif isinstance(value, T.Tensor):
                out.append((f.name, value))
        return out

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def arrays(self):
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_arrays(self, arrays):
        for name, t in self.named_tensors():
            if name not in arrays:
                raise ArtifactFormatError(f"missing parameter block {name!r}")
            if arrays[name].shape != t.shape:
                raise ArtifactFormatError(
                    f"parameter {name!r} has shape {arrays[name].shape}, expected {t.shape}"
                )
            t.data = np.array(arrays[name], dtype=np.float64)
            t.zero_grad()
        return self


@dataclass
class SharedModelParams(_ParamSet):
    emb_activity: T.Tensor
    emb_resource: T.Tensor
    lstm_alpha: BiLstmParams
    lstm_beta: BiLstmParams
    w_alpha: T.Tensor
    b_alpha: T.Tensor
    w_beta: T.Tensor
    b_beta: T.Tensor
    w_out: T.Tensor
    b_out: T.Tensor

    @classmethod
    def init(cls, rng, n_activity, n_resource, n_classes, hidden_size=50,
             activity_dim=None, resource_dim=None):
        da = activity_dim or n_activity
        dr = resource_dim or n_resource
        width = da + dr + 1
        emb_a = T.glorot_uniform(rng, (n_activity, da), "emb_activity")
        emb_r = T.glorot_uniform(rng, (n_resource, dr), "emb_resource")
        lstm_a = BiLstmParams.init(rng, width, hidden_size, "lstm_alpha")
        lstm_b = BiLstmParams.init(rng, width, hidden_size, "lstm_beta")
        w_alpha, b_alpha = _dense(rng, 2 * hidden_size, 1, "alpha")
        w_beta, b_beta = _dense(rng, 2 * hidden_size, width, "beta")
        w_out, b_out = _dense(rng, width, n_classes, "out")
        return cls(emb_a, emb_r, lstm_a, lstm_b, w_alpha, b_alpha, w_beta, b_beta,
                   w_out, b_out)

    @property
    def activity_dim(self):
        return self.emb_activity.shape[1]

    @property
    def resource_dim(self):
        return self.emb_resource.shape[1]


@dataclass
class SpecialisedModelParams(_ParamSet):
    lstm_beta_activity: BiLstmParams
    lstm_beta_resource: BiLstmParams
    lstm_beta_time: BiLstmParams
    lstm_alpha: BiLstmParams
    w_beta_activity: T.Tensor
    b_beta_activity: T.Tensor
    w_beta_resource: T.Tensor
    b_beta_resource: T.Tensor
    w_beta_time: T.Tensor
    b_beta_time: T.Tensor
    w_alpha: T.Tensor
    b_alpha: T.Tensor
    w_out: T.Tensor
    b_out: T.Tensor

    @classmethod
    def init(cls, rng, n_activity, n_resource, n_classes, hidden_size=50, **_):
        width = n_activity + n_resource + 1
        la = BiLstmParams.init(rng, n_activity, hidden_size, "lstm_beta_activity")
        lr_ = BiLstmParams.init(rng, n_resource, hidden_size, "lstm_beta_resource")
        lt = BiLstmParams.init(rng, 1, hidden_size, "lstm_beta_time")
        lal = BiLstmParams.init(rng, width, hidden_size, "lstm_alpha")
        wa, ba = _dense(rng, 2 * hidden_size, n_activity, "beta_activity")
        wr, br = _dense(rng, 2 * hidden_size, n_resource, "beta_resource")
        wt, bt = _dense(rng, 2 * hidden_size, 1, "beta_time")
        w_alpha, b_alpha = _dense(rng, 2 * hidden_size, 1, "alpha")
        w_out, b_out = _dense(rng, width, n_classes, "out")
        return cls(la, lr_, lt, lal, wa, ba, wr, br, wt, bt, w_alpha, b_alpha, w_out, b_out)

    @property
    def n_activity(self):
        return self.w_beta_activity.shape[1]

    @property
    def n_resource(self):
        return self.w_beta_resource.shape[1]


PARAM_CLASSES = {SHARED: SharedModelParams, SPECIALISED: SpecialisedModelParams}


# -- forward passes ---------------------------------------------------------------


@dataclass
class ForwardCapture:
    """Everything a forward pass exposes for explanation, batched on axis 0.

    ``beta`` is one array ``[B, L, width]`` for the shared model and a dict
    with keys ``activity``, ``resource``, ``time`` for the specialised one.
    ``influence`` (specialised only) uses the same keys.
    """

    architecture: str
    prediction: np.ndarray
    alpha: np.ndarray
    beta: object
    context: np.ndarray
    mask: np.ndarray
    inputs: np.ndarray
    influence: dict = None

    def row(self, i):
        pick = (lambda v: {k: a[i] for k, a in v.items()}) if isinstance(self.beta, dict) else None
        return ForwardCapture(
            architecture=self.architecture,
            prediction=self.prediction[i],
            alpha=self.alpha[i],
            beta=pick(self.beta) if pick else self.beta[i],
            context=self.context[i],
            mask=self.mask[i],
            inputs=self.inputs[i],
            influence={k: a[i] for k, a in self.influence.items()} if self.influence else None,
        )

    def __len__(self):
        return self.prediction.shape[0]


def _attention_alpha(h, w, b, mask):
    scores = T.add(T.matmul(h, w), b)
    scores = T.reshape(scores, scores.shape[:2])
    return T.softmax_masked(scores, mask, axis=1)


def _check_batch(params, batch):
    if isinstance(params, SharedModelParams):
        n_act, n_res = params.emb_activity.shape[0], params.emb_resource.shape[0]
    else:
        n_act, n_res = params.n_activity, params.n_resource
    if batch.activity_vocab.size != n_act or batch.resource_vocab.size != n_res:
        raise DataError(
            "vocabulary mismatch: batch encodes "
            f"{batch.activity_vocab.size} activities/{batch.resource_vocab.size} resources, "
            f"model expects {n_act}/{n_res}"
        )


def shared_forward(params, batch):
    """Return ``(logits, capture)`` for a batch of encoded prefixes."""
    _check_batch(params, batch)
    mask = batch.mask
    keep = mask[..., None].astype(np.float64)
    v = T.concat_last_axis(
        T.embedding_lookup(params.emb_activity, batch.activity_indices),
        T.embedding_lookup(params.emb_resource, batch.resource_indices),
        T.Tensor(batch.elapsed[..., None]),
    )
    v = T.mul(v, keep)
    h = bilstm_forward(params.lstm_alpha, v, mask)
    alpha = _attention_alpha(h, params.w_alpha, params.b_alpha, mask)
    g = bilstm_forward(params.lstm_beta, v, mask)
    beta = T.tanh(T.add(T.matmul(g, params.w_beta), params.b_beta))
    weighted = T.mul(T.mul(T.expand_last(alpha), beta), v)
    context = T.sum_over_axis(weighted, axis=1)
    logits = T.add(T.matmul(context, params.w_out), params.b_out)
    capture = ForwardCapture(
        architecture=SHARED,
        prediction=T._masked_softmax_values(logits.data, None, -1),
        alpha=alpha.data,
        beta=beta.data,
        context=context.data,
        mask=mask,
        inputs=v.data,
    )
    return logits, capture


def specialised_forward(params, batch):
    """Return ``(logits, capture)`` for a batch of encoded prefixes."""
    _check_batch(params, batch)
    mask = batch.mask
    ohe_a = T.Tensor(one_hot(batch.activity_indices, params.n_activity, mask))
    ohe_r = T.Tensor(one_hot(batch.resource_indices, params.n_resource, mask))
    t_in = T.Tensor((batch.elapsed * mask)[..., None])

    def head(lstm, x, w, b):
        return T.tanh(T.add(T.matmul(bilstm_forward(lstm, x, mask), w), b))

    beta_a = head(params.lstm_beta_activity, ohe_a, params.w_beta_activity, params.b_beta_activity)
    beta_r = head(params.lstm_beta_resource, ohe_r, params.w_beta_resource, params.b_beta_resource)
    beta_t = head(params.lstm_beta_time, t_in, params.w_beta_time, params.b_beta_time)
    inf_a = T.mul(ohe_a, beta_a)
    inf_r = T.mul(ohe_r, beta_r)
    inf_t = T.mul(t_in, beta_t)
    inf = T.concat_last_axis(inf_a, inf_r, inf_t)
    h = bilstm_forward(params.lstm_alpha, inf, mask)
    alpha = _attention_alpha(h, params.w_alpha, params.b_alpha, mask)
    context = T.sum_over_axis(T.mul(T.expand_last(alpha), inf), axis=1)
    logits = T.add(T.matmul(context, params.w_out), params.b_out)
    capture = ForwardCapture(
        architecture=SPECIALISED,
        prediction=T._masked_softmax_values(logits.data, None, -1),
        alpha=alpha.data,
        beta={"activity": beta_a.data, "resource": beta_r.data, "time": beta_t.data},
        context=context.data,
        mask=mask,
        inputs=np.concatenate([ohe_a.data, ohe_r.data, t_in.data], axis=-1),
        influence={"activity": inf_a.data, "resource": inf_r.data, "time": inf_t.data},
    )
    return logits, capture


FORWARDS = {SHARED: shared_forward, SPECIALISED: specialised_forward}


def forward(params, batch):
    arch = SHARED if isinstance(params, SharedModelParams) else SPECIALISED
    return FORWARDS[arch](params, batch)


# -- artifact ---------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.001
    seed: int = 0
    patience: int = 5
    hidden_size: int = 50
    activity_dim: int = None
    resource_dim: int = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.hidden_size < 1:
            raise ConfigError(f"invalid training configuration: {self}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")


@dataclass
class ModelArtifact:
    """Self-contained trained model: parameters, vocabularies, scaler and config."""

    architecture: str
    params: _ParamSet
    activity_vocab: Vocabulary
    resource_vocab: Vocabulary
    scaler: TimeScaler
    pad_length: int
    time_unit: str = "days"
    config: dict = field(default_factory=dict)

    @property
    def n_classes(self):
        return self.activity_vocab.n_classes

    @property
    def class_labels(self):
        return self.activity_vocab.class_labels

    def encode(self, prefixes):
        return encode_dataset(
            prefixes, self.activity_vocab, self.resource_vocab, self.pad_length,
            self.scaler, self.time_unit,
        )

    def header(self):
        return {
            "kind": "model",
            "tool_version": __version__,
            "architecture": self.architecture,
            "activity_vocab": self.activity_vocab.to_dict(),
            "resource_vocab": self.resource_vocab.to_dict(),
            "scaler": self.scaler.to_dict(),
            "pad_length": self.pad_length,
            "time_unit": self.time_unit,
            "config": self.config,
        }

    def to_bytes(self):
        buf = io.BytesIO()
        container.write_container(buf, self.header(), self.params.arrays())
        return buf.getvalue()


def build_params(architecture, activity_vocab, resource_vocab, config, rng=None):
    if architecture not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {architecture!r}; choose from {ARCHITECTURES}")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    return PARAM_CLASSES[architecture].init(
        rng, activity_vocab.size, resource_vocab.size, activity_vocab.n_classes,
        hidden_size=config.hidden_size, activity_dim=config.activity_dim,
        resource_dim=config.resource_dim,
    )


def save_artifact(artifact, sink):
    """Write to a path or binary file object."""
    data = artifact.to_bytes()
    if hasattr(sink, "write"):
        sink.write(data)
    else:
        with open(sink, "wb") as fh:
            fh.write(data)


def load_artifact(source):
    if hasattr(source, "read"):
        header, arrays = container.read_container(source)
    else:
        with open(source, "rb") as fh:
            header, arrays = container.read_container(fh)
    if header.get("kind") != "model":
        raise ArtifactFormatError("container does not hold a model artifact")
    arch = header["architecture"]
    if arch not in ARCHITECTURES:
        raise ArtifactFormatError(f"unknown architecture tag {arch!r}")
    act = Vocabulary.from_dict(header["activity_vocab"])
    res = Vocabulary.from_dict(header["resource_vocab"])
    cfg = header.get("config", {})
    tc = TrainConfig(**{k: cfg[k] for k in ("hidden_size", "activity_dim", "resource_dim")
                        if k in cfg})
    params = build_params(arch, act, res, tc, rng=np.random.default_rng(0))
    params.load_arrays(arrays)
    return ModelArtifact(
        architecture=arch,
        params=params,
        activity_vocab=act,
        resource_vocab=res,
        scaler=TimeScaler.from_dict(header["scaler"]),
        pad_length=header["pad_length"],
        time_unit=header["time_unit"],
        config=cfg,
    )


# -- training and prediction --------------------------------------------------------


def _batches(n, batch_size, rng=None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _accuracy(params, dataset, batch_size):
    if len(dataset) == 0:
        return float("nan"), float("nan")
    correct, loss_sum = 0, 0.0
    for idx in _batches(len(dataset), max(batch_size, 256)):
        batch = dataset.subset(idx)
        logits, cap = forward(params, batch)
        known = batch.targets >= 0
        correct += int(np.sum(cap.prediction.argmax(axis=1)[known] == batch.targets[known]))
        if known.any():
            logp = T.log_softmax_values(logits.data[known])
            loss_sum += -logp[np.arange(known.sum()), batch.targets[known]].sum()
    return correct / len(dataset), float(loss_sum / len(dataset))


def train(architecture, train_set, val_set=None, config=None, log_every=0):
    """Mini-batch cross-entropy training with ADAM.

    Returns ``(artifact, history)``; the artifact keeps the parameters of the
    epoch with the best validation accuracy (the last epoch without a
    validation set).  Training stops after ``patience`` epochs without
    improvement.
    """
    config = config or TrainConfig()
    if len(train_set) == 0:
        raise DataError("training set is empty")
    if np.any(train_set.targets < 0):
        raise DataError("training targets contain labels outside the vocabulary")
    params = build_params(architecture, train_set.activity_vocab, train_set.resource_vocab, config)
    opt = T.Adam(params.tensors(), lr=config.lr)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    has_val = val_set is not None and len(val_set) > 0

    history = []
    best_acc, best_arrays, stale = -1.0, params.arrays(), 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        total, correct, seen = 0.0, 0, 0
        for b, idx in enumerate(_batches(len(train_set), config.batch_size, shuffle_rng)):
            batch = train_set.subset(idx)
            opt.zero_grad()
            logits, cap = forward(params, batch)
            loss = T.cross_entropy(logits, batch.targets)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, b, value)
            T.backward(loss)
            opt.step()
            total += value * len(idx)
            seen += len(idx)
            correct += int(np.sum(cap.prediction.argmax(axis=1) == batch.targets))
        row = {"epoch": epoch, "loss": total / seen, "train_accuracy": correct / seen}
        if has_val:
            row["val_accuracy"], row["val_loss"] = _accuracy(params, val_set, config.batch_size)
        history.append(row)
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d %s (%.1fs)", epoch, row, time.perf_counter() - started)
        score = row.get("val_accuracy", row["train_accuracy"])
        if score > best_acc:
            best_acc, best_arrays, stale = score, params.arrays(), 0
        else:
            stale += 1
            if has_val and config.patience and stale >= config.patience:
                break
    if has_val:
        params.load_arrays(best_arrays)
    artifact = ModelArtifact(
        architecture=architecture,
        params=params,
        activity_vocab=train_set.activity_vocab,
        resource_vocab=train_set.resource_vocab,
        scaler=train_set.scaler,
        pad_length=train_set.pad_length,
        time_unit=train_set.time_unit,
        config=asdict(config),
    )
    return artifact, history


@dataclass
class Prediction:
    classes: np.ndarray
    probabilities: np.ndarray
    capture: ForwardCapture


def _concat_captures(parts):
    first = parts[0]

    def cat(get):
        return np.concatenate([get(p) for p in parts], axis=0)

    if isinstance(first.beta, dict):
        beta = {k: cat(lambda p, k=k: p.beta[k]) for k in first.beta}
    else:
        beta = cat(lambda p: p.beta)
    influence = None
    if first.influence is not None:
        influence = {k: cat(lambda p, k=k: p.influence[k]) for k in first.influence}
    return ForwardCapture(
        architecture=first.architecture,
        prediction=cat(lambda p: p.prediction),
        alpha=cat(lambda p: p.alpha),
        beta=beta,
        context=cat(lambda p: p.context),
        mask=cat(lambda p: p.mask),
        inputs=cat(lambda p: p.inputs),
        influence=influence,
    )


def predict(artifact, prefixes_or_dataset, batch_size=256):
    """Argmax class (lowest index wins ties), probabilities and capture per prefix."""
    data = prefixes_or_dataset
    if not isinstance(data, EncodedDataset):
        data = artifact.encode(list(data))
    if len(data) == 0:
        raise DataError("nothing to predict")
    parts = []
    for idx in _batches(len(data), batch_size):
        _, cap = forward(artifact.params, data.subset(idx))
        parts.append(cap)
    cap = _concat_captures(parts)
    return Prediction(cap.prediction.argmax(axis=1), cap.prediction, cap)


def copy_artifact(artifact):
    return copy.deepcopy(artifact)
