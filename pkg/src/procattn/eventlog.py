"""Event log ingestion, trace construction and prefix generation.

Logs arrive as header-bearing delimited text described by a :class:`LogProfile`
(column names, timestamp pattern, missing-value tokens) or as a small subset
of XES.  Both produce a flat list of :class:`Event` in file order, which
:func:`build_traces` groups per case and orders by timestamp.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional

from .errors import ConfigError, DataError, LogParseError

logger = logging.getLogger(__name__)

END_LABEL = "<END>"
DEFAULT_TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S.%f"
COMPLETED_TRANSITIONS = frozenset({"complete", "completed"})


@dataclass(frozen=True)
class Event:
    case_id: str
    activity: str
    timestamp: datetime
    resource: Optional[str] = None
    lifecycle: Optional[str] = None
    # position in the source file; breaks timestamp ties
    index: int = 0

    def __post_init__(self):
        if not self.case_id:
            raise ValueError("event case_id must be non-empty")
        if not self.activity:
            raise ValueError("event activity must be non-empty")

    def to_dict(self):
        return {
            "case_id": self.case_id,
            "activity": self.activity,
            "resource": self.resource,
            "timestamp": self.timestamp.isoformat(timespec="microseconds"),
            "lifecycle": self.lifecycle,
            "index": self.index,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            case_id=d["case_id"],
            activity=d["activity"],
            timestamp=datetime.fromisoformat(d["timestamp"]),
            resource=d.get("resource"),
            lifecycle=d.get("lifecycle"),
            index=d.get("index", 0),
        )


@dataclass(frozen=True)
class Trace:
    case_id: str
    events: tuple

    def __post_init__(self):
        if not self.events:
            raise ValueError(f"trace {self.case_id!r} is empty")
        if any(e.case_id != self.case_id for e in self.events):
            raise ValueError(f"trace {self.case_id!r} mixes events of other cases")

    def __len__(self):
        return len(self.events)

    @property
    def activities(self):
        return tuple(e.activity for e in self.events)


@dataclass(frozen=True)
class PrefixTrace:
    trace_case_id: str
    events: tuple
    target: str

    @property
    def length(self):
        return len(self.events)

    @property
    def prefix_id(self):
        return f"{self.trace_case_id}:{self.length}"

    @property
    def last_activity(self):
        return self.events[-1].activity

    def to_dict(self):
        return {
            "case_id": self.trace_case_id,
            "length": self.length,
            "events": [e.to_dict() for e in self.events],
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, d):
        events = tuple(Event.from_dict(e) for e in d["events"])
        if len(events) != d.get("length", len(events)):
            raise DataError(f"prefix {d['case_id']}: length field disagrees with events")
        return cls(d["case_id"], events, d["target"])


@dataclass
class LogProfile:
    """Column mapping and parsing options for a delimited event log."""

    case_id: str = "case_id"
    activity: str = "activity"
    timestamp: str = "timestamp"
    resource: Optional[str] = "resource"
    lifecycle: Optional[str] = None
    timestamp_format: str = DEFAULT_TIMESTAMP_FORMAT
    delimiter: str = ","
    missing_values: list = field(default_factory=lambda: ["", "NULL"])

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _parse_iso(text):
    text = text.strip()
    # fromisoformat only learned the "Z" suffix in Python 3.11
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


def parse_timestamp(text, fmt=DEFAULT_TIMESTAMP_FORMAT):
    if fmt == "iso":
        return _parse_iso(text)
    return datetime.strptime(text.strip(), fmt)


def parse_log(source, profile=None):
    """Read a delimited log into events, one per data row, in file order.

    ``source`` is a path, a text stream or a byte stream.
    """
    profile = profile or LogProfile()
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text), delimiter=profile.delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty log: no header row") from None

    def col(name, required):
        if name is None:
            if required:
                raise ConfigError("profile leaves a mandatory column unmapped")
            return None
        if name not in header:
            if required:
                raise ConfigError(f"mandatory column {name!r} not in header {header}")
            return None
        return header.index(name)

    i_case = col(profile.case_id, True)
    i_act = col(profile.activity, True)
    i_time = col(profile.timestamp, True)
    i_res = col(profile.resource, False)
    i_life = col(profile.lifecycle, False)
    missing = set(profile.missing_values)

    events = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise LogParseError(f"expected {len(header)} fields, got {len(row)}", line_no)
        case_id = row[i_case].strip()
        activity = row[i_act].strip()
        if not case_id or not activity:
            raise LogParseError("empty case id or activity", line_no)
        try:
            ts = parse_timestamp(row[i_time], profile.timestamp_format)
        except ValueError as exc:
            raise LogParseError(f"malformed timestamp {row[i_time]!r}: {exc}", line_no) from None
        events.append(
            Event(
                case_id=case_id,
                activity=activity,
                timestamp=ts,
                resource=_optional(row, i_res, missing),
                lifecycle=_optional(row, i_life, missing),
                index=len(events),
            )
        )
    if not events:
        raise DataError("empty log: no data rows after header")
    return events


def _optional(row, idx, missing):
    if idx is None:
        return None
    value = row[idx].strip()
    return None if value in missing else value


def _read_text(source):
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8-sig")
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8-sig")
    return data


_XES_KEYS = {
    "concept:name": "activity",
    "org:resource": "resource",
    "time:timestamp": "timestamp",
    "lifecycle:transition": "lifecycle",
}


def _local(tag):
    return tag.rsplit("}", 1)[-1]


def parse_xes(source):
    """Parse the minimal XES subset: traces of events with string/date attributes."""
    if isinstance(source, (str, Path)):
        source = open(source, "rb")
        close = True
    else:
        close = False
    events = []
    try:
        for _, trace in _iter_traces(source):
            case_id = None
            for child in trace:
                if _local(child.tag) == "string" and child.get("key") == "concept:name":
                    case_id = child.get("value")
            if not case_id:
                raise DataError("XES trace without concept:name")
            for ev in trace:
                if _local(ev.tag) != "event":
                    continue
                attrs = {}
                for a in ev:
                    key = a.get("key")
                    if key in _XES_KEYS and _local(a.tag) in ("string", "date"):
                        attrs[_XES_KEYS[key]] = a.get("value")
                if "activity" not in attrs or "timestamp" not in attrs:
                    raise DataError(f"XES event in case {case_id} lacks name or timestamp")
                try:
                    ts = _parse_iso(attrs["timestamp"])
                except ValueError:
                    raise DataError(f"malformed XES timestamp {attrs['timestamp']!r}") from None
                events.append(
                    Event(case_id, attrs["activity"], ts, attrs.get("resource"),
                          attrs.get("lifecycle"), index=len(events))
                )
            trace.clear()
    except ET.ParseError as exc:
        raise DataError(f"malformed XES: {exc}") from None
    finally:
        if close:
            source.close()
    if not events:
        raise DataError("empty log: XES contains no events")
    return events


def _iter_traces(stream):
    for event, elem in ET.iterparse(stream, events=("end",)):
        if _local(elem.tag) == "trace":
            yield event, elem


def read_log(path, profile=None):
    """Dispatch on file suffix: ``.xes`` goes to the XES reader."""
    if str(path).lower().endswith(".xes"):
        return parse_xes(path)
    return parse_log(path, profile)


def build_traces(events, completed_only=False):
    """Group events per case, sorted by timestamp with file order breaking ties.

    Returns ``(traces, dropped)`` where ``dropped`` counts cases whose events
    were all removed by the lifecycle filter.
    """
    by_case = {}
    for e in events:
        by_case.setdefault(e.case_id, []).append(e)
    traces, dropped = [], 0
    for case_id, evs in by_case.items():
        if completed_only:
            evs = [
                e for e in evs
                if e.lifecycle is None or e.lifecycle.lower() in COMPLETED_TRANSITIONS
            ]
        if not evs:
            dropped += 1
            continue
        evs.sort(key=lambda e: (e.timestamp, e.index))
        traces.append(Trace(case_id, tuple(evs)))
    if dropped:
        logger.warning("%d case(s) dropped: no events survived filtering", dropped)
    return traces, dropped


def generate_prefixes(trace, min_length=1, max_length=50, include_end_label=False):
    """Prefixes of lengths ``min_length..min(n-1, max_length)`` labelled with the next activity."""
    if min_length < 1 or max_length < min_length:
        raise ConfigError(f"invalid prefix lengths min={min_length} max={max_length}")
    n = len(trace)
    events = trace.events
    out = [
        PrefixTrace(trace.case_id, events[:l], events[l].activity)
        for l in range(min_length, min(n - 1, max_length) + 1)
    ]
    if include_end_label and min_length <= n <= max_length:
        out.append(PrefixTrace(trace.case_id, events, END_LABEL))
    return out


def all_prefixes(traces, **options):
    return [p for t in traces for p in generate_prefixes(t, **options)]


def count_duplicate_events(traces):
    """Events repeating activity, resource and timestamp of their predecessor."""
    dup = 0
    for t in traces:
        for a, b in zip(t.events, t.events[1:]):
            if (a.activity, a.resource, a.timestamp) == (b.activity, b.resource, b.timestamp):
                dup += 1
    return dup


def log_summary(traces):
    """Data profile of a set of traces: counts, case lengths, durations, variants."""
    if not traces:
        raise DataError("no traces to summarise")
    lengths = [len(t) for t in traces]
    durations = [
        (t.events[-1].timestamp - t.events[0].timestamp).total_seconds() / 86400.0
        for t in traces
    ]
    activities = {e.activity for t in traces for e in t.events}
    resources = {e.resource for t in traces for e in t.events if e.resource is not None}
    variants = Counter(t.activities for t in traces)
    return {
        "cases": len(traces),
        "activities": len(activities),
        "resources": len(resources),
        "events": sum(lengths),
        "avg_case_length": round(sum(lengths) / len(lengths), 4),
        "max_case_length": max(lengths),
        "avg_case_duration_days": round(sum(durations) / len(durations), 4),
        "max_case_duration_days": round(max(durations), 4),
        "variants": len(variants),
        "duplicate_events": count_duplicate_events(traces),
    }


def dump_prefixes(prefixes, fh):
    for p in prefixes:
        fh.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")


def load_prefixes(path):
    """Read an NDJSON prefix dump; ``{"_meta": ...}`` header records are skipped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogParseError(f"invalid JSON: {exc.msg}", n) from None
            if "_meta" in record:
                continue
            out.append(PrefixTrace.from_dict(record))
    return out
