"""Confusion matrices, precision/recall/F1 and one-way ANOVA with exact p-values."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError

# -- classification metrics -----------------------------------------------------


@dataclass
class ConfusionMatrix:
    """Rows are actual classes, columns predicted classes."""

    classes: list
    counts: np.ndarray

    @property
    def total(self):
        return int(self.counts.sum())

    def one_vs_rest(self, i):
        """``(tp, fp, fn, tn)`` for class index ``i``."""
        tp = int(self.counts[i, i])
        fp = int(self.counts[:, i].sum()) - tp
        fn = int(self.counts[i, :].sum()) - tp
        tn = self.total - tp - fp - fn
        return tp, fp, fn, tn

    def to_dict(self):
        return {"classes": list(self.classes), "counts": self.counts.tolist()}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["actual\\predicted", *self.classes])
        for label, row in zip(self.classes, self.counts):
            w.writerow([label, *row.tolist()])
        return buf.getvalue()


def confusion(actual, predicted, classes=None):
    actual, predicted = list(actual), list(predicted)
    if len(actual) != len(predicted):
        raise DataError(f"length mismatch: {len(actual)} actual vs {len(predicted)} predicted")
    if not actual:
        raise DataError("cannot build a confusion matrix from no predictions")
    if classes is None:
        classes = sorted(set(actual) | set(predicted), key=str)
    else:
        classes = list(classes)
        missing = (set(actual) | set(predicted)) - set(classes)
        if missing:
            raise DataError(f"labels not among classes: {sorted(map(str, missing))}")
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for a, p in zip(actual, predicted):
        counts[pos[a], pos[p]] += 1
    return ConfusionMatrix(classes, counts)


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


@dataclass
class ClassMetrics:
    label: object
    support: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    zero_division: bool = False


@dataclass
class MetricReport:
    accuracy: float
    per_class: list
    macro: dict
    weighted: dict
    total: int

    def to_dict(self):
        return asdict(self)

    def headline(self):
        return {"accuracy": self.accuracy, **self.weighted}


def metrics(cm):
    """Per-class one-vs-rest precision/recall/F1 plus macro and support-weighted means.

    A vanishing denominator yields 0 and sets the class's ``zero_division`` flag.
    """
    total = cm.total
    if total == 0:
        raise DataError("empty confusion matrix")
    per_class = []
    for i, label in enumerate(cm.classes):
        tp, fp, fn, tn = cm.one_vs_rest(i)
        a = (tp + tn) / (tp + tn + fp + fn)
        p, zp = _ratio(tp, tp + fp)
        r, zr = _ratio(tp, tp + fn)
        f, zf = _ratio(tp, tp + 0.5 * (fp + fn))
        per_class.append(ClassMetrics(label, tp + fn, a, p, r, f, zp or zr or zf))
    support = np.array([c.support for c in per_class], dtype=np.float64)

    def avg(name, weights):
        vals = np.array([getattr(c, name) for c in per_class])
        return float((vals * weights).sum() / weights.sum()) if weights.sum() else 0.0

    ones = np.ones(len(per_class))
    return MetricReport(
        accuracy=float(np.trace(cm.counts)) / total,
        per_class=per_class,
        macro={k: avg(k, ones) for k in ("precision", "recall", "f1")},
        weighted={k: avg(k, support) for k in ("precision", "recall", "f1")},
        total=total,
    )


# -- incomplete beta and the F distribution ---------------------------------------

_EPS = 1e-15
_TINY = 1e-300


def _beta_cf(a, b, x, tol=1e-12, max_iter=10000):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = _TINY if abs(d) < _TINY else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_regularized(a, b, x):
    """Regularised incomplete beta ``I_x(a, b)`` for ``a, b > 0`` and ``0 <= x <= 1``."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc_regularized: a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"betainc_regularized: x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the fraction converges fast only on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def f_survival(f, df1, df2):
    """``P(F > f)`` for an F(df1, df2) variable."""
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc_regularized(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


# -- ANOVA -----------------------------------------------------------------------


@dataclass
class GroupSummary:
    count: int
    sum: float
    mean: float
    variance: float
    name: str = ""

    @classmethod
    def of(cls, values, name=""):
        arr = np.asarray(values, dtype=np.float64)
        if arr.size < 2:
            raise DataError(f"group {name!r} needs at least 2 values, got {arr.size}")
        return cls(int(arr.size), float(arr.sum()), float(arr.mean()), float(arr.var(ddof=1)), name)


@dataclass
class AnovaResult:
    groups: list
    ss_between: float
    ss_within: float
    df_between: int
    df_within: int
    ms_between: float
    ms_within: float
    f: float
    p_value: float
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _finish(groups, ss_between, ss_within):
    k = len(groups)
    n = sum(g.count for g in groups)
    dfb, dfw = k - 1, n - k
    if dfw <= 0:
        raise DataError("not enough observations for a within-group estimate")
    msb, msw = ss_between / dfb, ss_within / dfw
    notes = []
    if msw == 0.0:
        if ss_between == 0.0:
            f, p = 0.0, 1.0
            notes.append("all groups constant and equal; F set to 0 and p to 1")
        else:
            f, p = math.inf, 0.0
            notes.append("zero within-group variance")
    else:
        f = msb / msw
        p = f_survival(f, dfb, dfw)
    return AnovaResult(groups, ss_between, ss_within, dfb, dfw, msb, msw, f, p, notes)


def anova_one_way(groups, names=None):
    """One-way ANOVA over raw observations (at least two groups of two values)."""
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2:
        raise DataError("ANOVA needs at least two groups")
    names = names or [f"group_{i}" for i in range(len(groups))]
    summaries = [GroupSummary.of(g, n) for g, n in zip(groups, names)]
    grand = np.concatenate(groups).mean()
    ss_between = float(sum(g.size * (g.mean() - grand) ** 2 for g in groups))
    ss_within = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    return _finish(summaries, ss_between, ss_within)


def anova_from_summary(summaries, rel_tol=1e-4):
    """One-way ANOVA from per-group count/sum/mean/variance.

    Group means are taken as ``sum / count``; the reported ``mean`` only has to
    agree with that within ``rel_tol`` (reported summaries are often rounded).
    """
    summaries = [s if isinstance(s, GroupSummary) else GroupSummary(**s) for s in summaries]
    if len(summaries) < 2:
        raise DataError("ANOVA needs at least two groups")
    for s in summaries:
        if s.count < 2:
            raise DataError(f"group {s.name!r} needs at least 2 values")
        implied = s.sum / s.count
        if not math.isclose(implied, s.mean, rel_tol=rel_tol, abs_tol=1e-9):
            raise DataError(
                f"inconsistent summary for group {s.name!r}: sum/count = {implied} "
                f"but mean = {s.mean}"
            )
        if s.variance < 0:
            raise DataError(f"negative variance in group {s.name!r}")
    n = sum(s.count for s in summaries)
    grand = sum(s.sum for s in summaries) / n
    ss_between = sum(s.count * (s.sum / s.count - grand) ** 2 for s in summaries)
    ss_within = sum((s.count - 1) * s.variance for s in summaries)
    return _finish(summaries, ss_between, ss_within)


# -- per-prefix statistics for model comparison ------------------------------------


def true_label_rank(probabilities, target):
    """1-based rank of the true class among predicted probabilities (1 = top)."""
    probs = np.asarray(probabilities)
    return int(1 + np.sum(probs > probs[target]))


STATISTICS = {
    "rank": lambda rec: float(rec["true_rank"]),
    "correct": lambda rec: float(rec["correct"]),
}
