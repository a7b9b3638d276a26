"""Synthetic loan-style event log whose next activity follows fixed rules.

Every transition is a deterministic function of the last event's activity,
its resource, or the elapsed time since case start, so a perfect predictor
exists.  ``DECISIVE`` records which attribute decides at each branching
activity, which makes the log usable as ground truth for explanations.

    Submit   --resource in {clerk_1, clerk_2}--> Check, otherwise Review
    Check    --elapsed > 1 day-->                 Escalate, otherwise Approve
    Review   ------------------------------------> Approve
    Escalate ------------------------------------> Approve
    Approve  --resource == manager_1-->           Notify, otherwise Archive
"""

from __future__ import annotations

from datetime import datetime, timedelta

import numpy as np

from .eventlog import Event

START = datetime(2020, 1, 1, 8, 0, 0)
TIME_THRESHOLD_DAYS = 1.0

DECISIVE = {"Submit": "resource", "Check": "time", "Approve": "resource"}

_SUBMIT_STAFF = ("clerk_1", "clerk_2", "clerk_3", "clerk_4")
_CHECK_STAFF = ("analyst_1", "analyst_2")
_REVIEW_STAFF = ("reviewer_1", "reviewer_2")
_MANAGERS = ("manager_1", "manager_2")


def _gap(rng, low=0.05, high=0.8):
    return timedelta(days=float(rng.uniform(low, high)))


def generate_case(rng, case_id, start):
    events = []

    def emit(activity, resource, when):
        events.append((activity, resource, when))

    t = start
    submitter = _SUBMIT_STAFF[rng.integers(len(_SUBMIT_STAFF))]
    emit("Submit", submitter, t)
    if submitter in ("clerk_1", "clerk_2"):
        # keep a margin around the threshold so the rule is learnable
        late = bool(rng.integers(2))
        elapsed = rng.uniform(1.2, 2.0) if late else rng.uniform(0.1, 0.8)
        t = start + timedelta(days=float(elapsed))
        emit("Check", _CHECK_STAFF[rng.integers(len(_CHECK_STAFF))], t)
        if elapsed > TIME_THRESHOLD_DAYS:
            t += _gap(rng)
            emit("Escalate", "supervisor", t)
    else:
        t += _gap(rng)
        emit("Review", _REVIEW_STAFF[rng.integers(len(_REVIEW_STAFF))], t)
    t += _gap(rng)
    manager = _MANAGERS[rng.integers(len(_MANAGERS))]
    emit("Approve", manager, t)
    t += _gap(rng)
    emit("Notify" if manager == "manager_1" else "Archive", "system", t)
    return [Event(str(case_id), a, when, r) for a, r, when in events]


def generate_rule_log(n_cases=5000, seed=0):
    """Events of ``n_cases`` cases, interleaved in timestamp order like a real log."""
    rng = np.random.default_rng(seed)
    events = []
    for k in range(n_cases):
        start = START + timedelta(hours=float(k) * 0.5)
        events.extend(generate_case(rng, 100000 + k, start))
    events.sort(key=lambda e: (e.timestamp, e.case_id))
    return [
        Event(e.case_id, e.activity, e.timestamp, e.resource, e.lifecycle, index=i)
        for i, e in enumerate(events)
    ]


def write_csv(events, path):
    """Write events with the default :class:`~procattn.eventlog.LogProfile` columns."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("case_id,activity,timestamp,resource\n")
        for e in events:
            ts = e.timestamp.strftime("%Y-%m-%d %H:%M:%S.%f")[:-3]
            fh.write(f"{e.case_id},{e.activity},{ts},{e.resource or ''}\n")
