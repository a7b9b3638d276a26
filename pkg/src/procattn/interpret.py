"""Feature weights from event (alpha) and attribute (beta) attention.

For each real event the combined attention ``alpha_i * beta_i`` is read out
per attribute:

* shared model: activity weight at the activity's index inside the activity
  embedding block, resource weight at ``activity_dim + resource index``, time
  weight at the last slot.  When an embedding is narrower than its vocabulary
  the index has no meaning, so the whole block is summed instead and the
  explanation is flagged ``approximate``.
* specialised model: the entry of ``alpha_i * beta^a_i`` (resp. ``beta^r``) at
  the hot index of the event's one-hot vector, and ``alpha_i * beta^t_i``.

Local explanations cover one prefix.  Global explanations aggregate a cohort
of prefixes sharing the last activity (the decision point) and the
predicted or actual next activity, with events aligned by their offset from
the end of the prefix (last event = -1).
"""

from __future__ import annotations

import csv
import io
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .models import SHARED, SPECIALISED, predict

CATEGORIES = ("activity", "resource", "time")


@dataclass
class FeatureWeightRow:
    position: int
    offset: int
    activity: str
    resource: str
    weights: dict
    alpha: float


@dataclass
class LocalExplanation:
    prefix_id: str
    architecture: str
    predicted: str
    probability: float
    actual: str
    rows: list
    top_events: list
    approximate: bool = False

    @property
    def last_activity(self):
        return self.rows[-1].activity

    def to_dict(self):
        d = asdict(self)
        return d


def _real_positions(mask_row):
    pos = np.flatnonzero(mask_row)
    return pos, len(pos)


def shared_feature_weights(capture, activity_indices, resource_indices,
                           activity_vocab, resource_vocab, activity_dim=None):
    """Feature weights of one shared-model row; returns ``(rows, approximate)``."""
    if capture.architecture != SHARED:
        raise ConfigError(f"shared extraction applied to a {capture.architecture} capture")
    width = capture.beta.shape[-1]
    da = activity_dim if activity_dim is not None else activity_vocab.size
    dr = width - 1 - da
    approximate = da != activity_vocab.size or dr != resource_vocab.size
    positions, n = _real_positions(capture.mask)
    rows = []
    for k, p in enumerate(positions):
        combined = capture.alpha[p] * capture.beta[p]
        ja, jr = int(activity_indices[p]), int(resource_indices[p])
        if approximate:
            wa = float(combined[:da].sum())
            wr = float(combined[da : da + dr].sum())
        else:
            wa = float(combined[ja])
            wr = float(combined[da + jr])
        wt = float(combined[da + dr])
        rows.append(
            FeatureWeightRow(
                position=k,
                offset=k - n,
                activity=activity_vocab.decode(ja),
                resource=resource_vocab.decode(jr),
                weights={"activity": wa, "resource": wr, "time": wt},
                alpha=float(capture.alpha[p]),
            )
        )
    return rows, approximate


def specialised_feature_weights(capture, activity_indices, resource_indices,
                                activity_vocab, resource_vocab):
    if capture.architecture != SPECIALISED:
        raise ConfigError(f"specialised extraction applied to a {capture.architecture} capture")
    positions, n = _real_positions(capture.mask)
    rows = []
    for k, p in enumerate(positions):
        a = capture.alpha[p]
        ja, jr = int(activity_indices[p]), int(resource_indices[p])
        rows.append(
            FeatureWeightRow(
                position=k,
                offset=k - n,
                activity=activity_vocab.decode(ja),
                resource=resource_vocab.decode(jr),
                weights={
                    "activity": float(a * capture.beta["activity"][p, ja]),
                    "resource": float(a * capture.beta["resource"][p, jr]),
                    "time": float(a * capture.beta["time"][p, 0]),
                },
                alpha=float(a),
            )
        )
    return rows


def top_events(rows, k):
    """Positions of the ``k`` highest-alpha events; ties go to the later event."""
    if k < 1:
        raise ConfigError(f"k must be at least 1, got {k}")
    ranked = sorted(rows, key=lambda r: (-r.alpha, -r.position))
    return [r.position for r in ranked[:k]]


def explain_rows(artifact, dataset, prediction, k=3):
    """Local explanations for every row of an already-predicted dataset."""
    out = []
    labels = artifact.class_labels
    for i in range(len(dataset)):
        cap = prediction.capture.row(i)
        acts, ress = dataset.activity_indices[i], dataset.resource_indices[i]
        if artifact.architecture == SHARED:
            rows, approx = shared_feature_weights(
                cap, acts, ress, artifact.activity_vocab, artifact.resource_vocab,
                artifact.params.activity_dim,
            )
        else:
            rows = specialised_feature_weights(
                cap, acts, ress, artifact.activity_vocab, artifact.resource_vocab
            )
            approx = False
        cls = int(prediction.classes[i])
        target = int(dataset.targets[i])
        out.append(
            LocalExplanation(
                prefix_id=dataset.prefix_ids[i],
                architecture=artifact.architecture,
                predicted=labels[cls],
                probability=float(prediction.probabilities[i, cls]),
                actual=labels[target] if target >= 0 else None,
                rows=rows,
                top_events=top_events(rows, k),
                approximate=approx,
            )
        )
    return out


def local_explanations(artifact, prefixes, k=3):
    dataset = artifact.encode(list(prefixes))
    return explain_rows(artifact, dataset, predict(artifact, dataset), k)


def local_explanation(artifact, prefix, k=3):
    return local_explanations(artifact, [prefix], k)[0]


@dataclass
class GlobalExplanation:
    decision_point: str
    target: str
    selector: str
    window: int
    cohort_size: int
    cells: list = field(default_factory=list)
    values: list = field(default_factory=list)
    top_values: list = field(default_factory=list)
    approximate: bool = False

    def cell(self, offset, category):
        for c in self.cells:
            if c["offset"] == offset and c["category"] == category:
                return c
        return None

    def ranked_cells(self):
        """Cells sorted by mean absolute weight, largest first."""
        return sorted(self.cells, key=lambda c: (-c["mean_abs"], c["offset"], c["category"]))

    def to_dict(self):
        return asdict(self)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["offset", "category", "value", "mean", "mean_abs", "count"])
        for c in self.cells:
            w.writerow([c["offset"], c["category"], "*", repr(c["mean"]), repr(c["mean_abs"]), c["count"]])
        for v in self.values:
            w.writerow([v["offset"], v["category"], v["value"], repr(v["mean"]),
                        repr(v["mean_abs"]), v["count"]])
        return buf.getvalue()


def _stats(values):
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(np.abs(arr).mean()), len(arr)


def aggregate(explanations, decision_point, target, selector="predicted", window=10):
    """Global explanation over the cohort ending at ``decision_point`` with class ``target``."""
    if selector not in ("predicted", "actual"):
        raise ConfigError(f"selector must be 'predicted' or 'actual', got {selector!r}")
    if window < 1:
        raise ConfigError(f"window must be at least 1, got {window}")
    cohort = [
        e for e in explanations
        if e.last_activity == decision_point and getattr(e, selector) == target
    ]
    if not cohort:
        points = sorted({e.last_activity for e in explanations})
        raise DataError(
            f"empty cohort for decision point {decision_point!r} and target {target!r}; "
            f"available decision points: {points}"
        )
    per_cell = defaultdict(list)
    per_value = defaultdict(list)
    for e in cohort:
        for r in e.rows:
            if r.offset < -window:
                continue
            for cat in CATEGORIES:
                per_cell[(r.offset, cat)].append(r.weights[cat])
            per_value[(r.offset, "activity", r.activity)].append(r.weights["activity"])
            per_value[(r.offset, "resource", r.resource)].append(r.weights["resource"])

    cells = []
    for (off, cat), vals in sorted(per_cell.items(), key=lambda kv: (-kv[0][0], CATEGORIES.index(kv[0][1]))):
        m, ma, n = _stats(vals)
        cells.append({"offset": off, "category": cat, "mean": m, "mean_abs": ma, "count": n})
    values = []
    for (off, cat, val), vals in sorted(per_value.items(), key=lambda kv: (-kv[0][0], kv[0][1], kv[0][2])):
        m, ma, n = _stats(vals)
        values.append({"offset": off, "category": cat, "value": val, "mean": m,
                       "mean_abs": ma, "count": n})
    top = []
    for off in sorted({v["offset"] for v in values}, reverse=True):
        for cat in ("activity", "resource"):
            cands = [v for v in values if v["offset"] == off and v["category"] == cat]
            counts = Counter({v["value"]: v["count"] for v in cands})
            best_count = max(counts.values())
            # most frequent; ties broken alphabetically for determinism
            best = min(v for v, c in counts.items() if c == best_count)
            match = next(v for v in cands if v["value"] == best)
            top.append({"offset": off, "category": cat, "value": best,
                        "count": match["count"], "mean": match["mean"]})
    return GlobalExplanation(
        decision_point=decision_point,
        target=target,
        selector=selector,
        window=window,
        cohort_size=len(cohort),
        cells=cells,
        values=values,
        top_values=top,
        approximate=any(e.approximate for e in cohort),
    )


def global_explanation(artifact, prefixes, decision_point, target, selector="predicted",
                       window=10, k=3):
    return aggregate(local_explanations(artifact, prefixes, k), decision_point, target,
                     selector, window)
