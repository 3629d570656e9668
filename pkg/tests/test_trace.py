import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otrange.trace import (
    TraceError,
    TraceLog,
    filter_records,
    format_record,
    parse_trace,
)

token = st.text(
    alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Nd"), whitelist_characters="_-."),
    min_size=1, max_size=12,
)

# t/device/kind are the record envelope; emit() reserves them, extras may not shadow them
field_key = token.filter(lambda s: s not in ("t", "device", "kind"))


@given(st.lists(
    st.tuples(
        st.integers(min_value=0, max_value=10**9),
        token, token,
        st.dictionaries(field_key, st.one_of(token, st.integers(0, 999)), max_size=4),
    ),
    max_size=30,
))
@settings(max_examples=150, deadline=None)
def test_dump_parse_roundtrip(entries):
    log = TraceLog()
    for t, device, kind, fields in sorted(entries, key=lambda e: e[0]):
        log.emit(t, device, kind, **fields)
    parsed = parse_trace(log.dumps())
    assert len(parsed) == len(entries)
    for rec, (t, device, kind, fields) in zip(parsed, sorted(entries, key=lambda e: e[0])):
        assert (rec.t_ms, rec.device, rec.kind) == (t, device, kind)
        assert rec.fields == {k: str(v) for k, v in fields.items()}


def test_header_required():
    with pytest.raises(TraceError, match="schema"):
        parse_trace("0 plc1 alert_raised cause=deadline\n")


def test_unsupported_schema_version():
    with pytest.raises(TraceError, match="schema"):
        parse_trace("schema=99\n")


def test_bad_lines_carry_line_numbers():
    text = "schema=1\n100 plc1 alert_raised cause=deadline\nnot a record\n"
    with pytest.raises(TraceError, match="line 3"):
        parse_trace(text)


def test_malformed_field_rejected():
    with pytest.raises(TraceError):
        parse_trace("schema=1\n100 plc1 alert_raised causedeadline\n")


def test_format_rejects_unserializable_values():
    from otrange.trace import TraceRecord

    with pytest.raises(TraceError):
        format_record(TraceRecord(0, "plc1", "x", {"k": "has space"}))
    with pytest.raises(TraceError):
        format_record(TraceRecord(0, "plc1", "x", {"k": "a=b"}))
    with pytest.raises(TraceError):
        format_record(TraceRecord(0, "plc 1", "x", {}))
    with pytest.raises(TraceError):
        format_record(TraceRecord(0, "plc1", "two words", {}))


def test_emit_notifies_subscribers():
    log = TraceLog()
    seen = []
    log.subscribe(seen.append)
    rec = log.emit(5, "plc1", "process", level=100)
    assert seen == [rec]


def test_filter_records():
    log = TraceLog()
    log.emit(0, "plc1", "process")
    log.emit(100, "plc2", "process")
    log.emit(200, "plc1", "alert_raised", cause="deadline")
    assert len(filter_records(log.records, kind="process")) == 2
    assert len(filter_records(log.records, device="plc1")) == 2
    assert len(filter_records(log.records, from_ms=100)) == 2
    assert len(filter_records(log.records, to_ms=100)) == 2
    assert len(filter_records(log.records, kind="alert_raised", device="plc1")) == 1


def test_dump_and_load_file(tmp_path):
    log = TraceLog()
    log.emit(0, "ew", "armed", deadline_ms=1000, targets="plc1")
    path = tmp_path / "run.trace"
    log.dump(path)
    text = path.read_text()
    assert text.startswith("schema=1\n")
    from otrange.trace import load_trace

    records = load_trace(path)
    assert len(records) == 1
    assert records[0].fields["targets"] == "plc1"
