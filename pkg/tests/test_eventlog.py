import io
import json
from datetime import datetime, timedelta
from pathlib import Path

import pytest

from procattn.errors import ConfigError, DataError, LogParseError
from procattn.eventlog import (
    END_LABEL,
    Event,
    LogProfile,
    PrefixTrace,
    Trace,
    all_prefixes,
    build_traces,
    dump_prefixes,
    generate_prefixes,
    load_prefixes,
    log_summary,
    parse_log,
    parse_xes,
    read_log,
)

DATA = Path(__file__).parent / "data"
T0 = datetime(2021, 3, 1, 9, 0, 0)


def _trace(case="c1", acts=("a", "b", "c", "d")):
    return Trace(case, tuple(
        Event(case, a, T0 + timedelta(hours=i), f"r{i}", index=i) for i, a in enumerate(acts)
    ))


class TestFragment:
    def test_two_traces(self):
        traces, dropped = build_traces(parse_log(DATA / "loan_fragment.csv"))
        assert dropped == 0
        assert {t.case_id: len(t) for t in traces} == {"173688": 7, "173694": 10}

    def test_order_and_ties(self):
        traces, _ = build_traces(parse_log(DATA / "loan_fragment.csv"))
        first = {t.case_id: t for t in traces}["173688"]
        assert first.activities[:3] == ("A_SUBMITTED", "A_PARTLYSUBMITTED", "A_PREACCEPTED")
        # O_SELECTED and A_FINALIZED share a timestamp; file order decides
        assert first.activities[4:6] == ("O_SELECTED", "A_FINALIZED")

    def test_null_resource_is_missing(self):
        traces, _ = build_traces(parse_log(DATA / "loan_fragment.csv"))
        last = {t.case_id: t for t in traces}["173688"].events[-1]
        assert last.resource is None

    def test_summary(self):
        traces, _ = build_traces(parse_log(DATA / "loan_fragment.csv"))
        s = log_summary(traces)
        assert s["cases"] == 2 and s["events"] == 17
        assert s["avg_case_length"] == 8.5 and s["max_case_length"] == 10
        assert s["variants"] == 2
        assert s["activities"] == 13


class TestParseLog:
    def test_custom_profile(self):
        text = "Case;Task;When;Who\nx;A;2020-01-01T10:00:00;bob\nx;B;2020-01-01T11:30:00;\n"
        prof = LogProfile(case_id="Case", activity="Task", timestamp="When", resource="Who",
                          timestamp_format="iso", delimiter=";")
        events = parse_log(io.StringIO(text), prof)
        assert [e.activity for e in events] == ["A", "B"]
        assert events[1].resource is None
        assert events[1].timestamp - events[0].timestamp == timedelta(minutes=90)

    def test_bad_timestamp_reports_line(self):
        text = "case_id,activity,timestamp\n1,A,2020-01-01 00:00:00.000\n1,B,yesterday\n"
        with pytest.raises(LogParseError, match="line 3") as err:
            parse_log(io.StringIO(text))
        assert err.value.line == 3
        assert err.value.exit_code == 2

    def test_short_row_reports_line(self):
        text = "case_id,activity,timestamp\n1,A\n"
        with pytest.raises(LogParseError, match="line 2"):
            parse_log(io.StringIO(text))

    def test_missing_column_is_config_error(self):
        with pytest.raises(ConfigError, match="timestamp"):
            parse_log(io.StringIO("case_id,activity\n1,A\n"))

    def test_empty_log(self):
        with pytest.raises(DataError, match="empty"):
            parse_log(io.StringIO(""))
        with pytest.raises(DataError, match="empty"):
            parse_log(io.StringIO("case_id,activity,timestamp\n"))

    def test_profile_rejects_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown"):
            LogProfile.from_dict({"case": "x"})

    def test_profile_round_trip(self):
        prof = LogProfile(resource=None, delimiter="\t")
        assert LogProfile.from_dict(prof.to_dict()) == prof

    def test_byte_stream_with_bom(self):
        raw = "﻿case_id,activity,timestamp\n1,A,2020-01-01 00:00:00.000\n".encode("utf-8")
        assert parse_log(io.BytesIO(raw))[0].case_id == "1"


XES = """<?xml version="1.0" encoding="UTF-8"?>
<log xmlns="http://www.xes-standard.org/">
  <trace>
    <string key="concept:name" value="t1"/>
    <event>
      <string key="concept:name" value="A"/>
      <string key="org:resource" value="r1"/>
      <string key="lifecycle:transition" value="start"/>
      <date key="time:timestamp" value="2012-01-01T10:00:00.000+01:00"/>
    </event>
    <event>
      <string key="concept:name" value="A"/>
      <string key="org:resource" value="r1"/>
      <string key="lifecycle:transition" value="complete"/>
      <date key="time:timestamp" value="2012-01-01T10:05:00.000+01:00"/>
    </event>
    <event>
      <string key="concept:name" value="B"/>
      <string key="lifecycle:transition" value="COMPLETE"/>
      <date key="time:timestamp" value="2012-01-01T09:30:00.000Z"/>
    </event>
  </trace>
  <trace>
    <string key="concept:name" value="t2"/>
    <event>
      <string key="concept:name" value="C"/>
      <string key="lifecycle:transition" value="schedule"/>
      <date key="time:timestamp" value="2012-01-02T10:00:00.000+01:00"/>
    </event>
  </trace>
</log>
"""


class TestXes:
    def test_parse(self, tmp_path):
        path = tmp_path / "log.xes"
        path.write_text(XES)
        events = read_log(path)
        assert [(e.case_id, e.activity) for e in events] == [
            ("t1", "A"), ("t1", "A"), ("t1", "B"), ("t2", "C")]
        assert events[2].resource is None
        assert events[0].lifecycle == "start"

    def test_completed_only(self):
        traces, dropped = build_traces(parse_xes(io.BytesIO(XES.encode())), completed_only=True)
        assert dropped == 1
        assert traces[0].activities == ("A", "B")

    def test_malformed(self):
        with pytest.raises(DataError, match="malformed"):
            parse_xes(io.BytesIO(b"<log><trace>"))


class TestPrefixes:
    def test_lengths_and_targets(self):
        prefixes = generate_prefixes(_trace())
        assert [p.length for p in prefixes] == [1, 2, 3]
        assert [p.target for p in prefixes] == ["b", "c", "d"]
        assert prefixes[1].prefix_id == "c1:2"
        assert prefixes[1].last_activity == "b"

    def test_end_label(self):
        prefixes = generate_prefixes(_trace(), include_end_label=True)
        assert prefixes[-1].length == 4 and prefixes[-1].target == END_LABEL

    def test_length_window(self):
        prefixes = generate_prefixes(_trace(acts="abcdefg"), min_length=2, max_length=4)
        assert [p.length for p in prefixes] == [2, 3, 4]

    def test_single_event_trace_has_no_prefix(self):
        assert generate_prefixes(_trace(acts=("a",))) == []

    def test_invalid_window(self):
        with pytest.raises(ConfigError):
            generate_prefixes(_trace(), min_length=0)

    def test_count(self):
        traces = [_trace("x", "abc"), _trace("y", "abcde")]
        assert len(all_prefixes(traces)) == 2 + 4

    def test_dump_load_round_trip(self, tmp_path):
        prefixes = all_prefixes([_trace("x", "abc"), _trace("y", "ab")])
        path = tmp_path / "p.ndjson"
        with open(path, "w") as fh:
            fh.write(json.dumps({"_meta": {"tool": "x"}}) + "\n")
            dump_prefixes(prefixes, fh)
        assert load_prefixes(path) == prefixes

    def test_load_rejects_bad_json(self, tmp_path):
        path = tmp_path / "p.ndjson"
        path.write_text("{not json}\n")
        with pytest.raises(LogParseError, match="line 1"):
            load_prefixes(path)

    def test_prefix_dict_round_trip(self):
        p = generate_prefixes(_trace())[2]
        assert PrefixTrace.from_dict(p.to_dict()) == p


def test_trace_rejects_foreign_events():
    e = Event("a", "x", T0)
    with pytest.raises(ValueError):
        Trace("b", (e,))


def test_summary_needs_traces():
    with pytest.raises(DataError):
        log_summary([])
