"""Run traces: schema-stable records, line serialization, parsing.

A trace line is `t_ms device kind key=value ...` with a `schema=N` header.
Field values are plain tokens (no whitespace) so a trace round-trips exactly;
byte-identical traces for equal seeds is an acceptance-level guarantee, so
nothing wall-clock or platform-dependent may ever be emitted here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

SCHEMA_VERSION = 1


class TraceError(ValueError):
    pass


@dataclass(slots=True)
class TraceRecord:
    t_ms: int
    device: str
    kind: str
    fields: dict


def _check_token(label: str, text: str, allow_eq: bool = False) -> str:
    if not text or " " in text or "\n" in text or "\t" in text or (not allow_eq and "=" in text):
        raise TraceError(f"unserializable {label} {text!r}")
    return text


def format_record(rec: TraceRecord) -> str:
    parts = [
        str(rec.t_ms),
        _check_token("device", rec.device),
        _check_token("kind", rec.kind),
    ]
    for key, value in rec.fields.items():
        _check_token("field key", key)
        text = _check_token(f"field value {key}", str(value))
        parts.append(f"{key}={text}")
    return " ".join(parts)


class TraceLog:
    """Append-only record store with subscriber fan-out."""

    __slots__ = ("records", "_listeners")

    def __init__(self):
        self.records: list[TraceRecord] = []
        self._listeners: list[Callable[[TraceRecord], None]] = []

    def emit(self, t_ms: int, device: str, kind: str, **fields) -> TraceRecord:
        rec = TraceRecord(t_ms, device, kind, fields)
        self.records.append(rec)
        for listener in self._listeners:
            listener(rec)
        return rec

    def subscribe(self, listener: Callable[[TraceRecord], None]) -> None:
        self._listeners.append(listener)

    def dumps(self) -> str:
        lines = [f"schema={SCHEMA_VERSION}"]
        lines.extend(format_record(r) for r in self.records)
        return "\n".join(lines) + "\n"

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())


def parse_trace(text: str) -> list[TraceRecord]:
    """Parse serialized trace text; rejects unknown schema versions."""
    lines = text.splitlines()
    if not lines:
        raise TraceError("empty trace")
    header = lines[0].strip()
    if not header.startswith("schema="):
        raise TraceError("missing schema header")
    version = header.split("=", 1)[1]
    if version != str(SCHEMA_VERSION):
        raise TraceError(f"unsupported trace schema {version!r}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(" ")
        if len(parts) < 3:
            raise TraceError(f"line {lineno}: expected 't_ms device kind'")
        try:
            t_ms = int(parts[0])
        except ValueError as exc:
            raise TraceError(f"line {lineno}: bad timestamp {parts[0]!r}") from exc
        fields = {}
        for token in parts[3:]:
            if "=" not in token:
                raise TraceError(f"line {lineno}: bad field token {token!r}")
            key, value = token.split("=", 1)
            fields[key] = value
        records.append(TraceRecord(t_ms, parts[1], parts[2], fields))
    return records


def load_trace(path) -> list[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh.read())


def filter_records(
    records: Iterable[TraceRecord],
    kind: str | None = None,
    device: str | None = None,
    from_ms: int | None = None,
    to_ms: int | None = None,
) -> list[TraceRecord]:
    out = []
    for rec in records:
        if kind is not None and rec.kind != kind:
            continue
        if device is not None and rec.device != device:
            continue
        if from_ms is not None and rec.t_ms < from_ms:
            continue
        if to_ms is not None and rec.t_ms > to_ms:
            continue
        out.append(rec)
    return out
