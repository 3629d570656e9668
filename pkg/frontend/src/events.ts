/** NDJSON event stream handling for GET /v1/events. */

import { RangeEvent } from "./types";

/**
 * Parse the body of an /v1/events response.
 *
 * One JSON object per line, blank lines tolerated. Throws on rows that are
 * not valid JSON or that lack the envelope keys every event carries.
 */
export function parseEventLines(text: string): RangeEvent[] {
  const events: RangeEvent[] = [];
  for (const line of text.split(/\r?\n/)) {
    if (line.trim() === "") {
      continue;
    }
    let row: unknown;
    try {
      row = JSON.parse(line);
    } catch {
      throw new Error(`event stream carried a non-JSON line: ${line.slice(0, 80)}`);
    }
    if (!isEventRow(row)) {
      throw new Error(`event stream carried a malformed row: ${line.slice(0, 80)}`);
    }
    events.push(row);
  }
  return events;
}

function isEventRow(row: unknown): row is RangeEvent {
  if (typeof row !== "object" || row === null) {
    return false;
  }
  const rec = row as Record<string, unknown>;
  if (typeof rec.pos !== "number" || typeof rec.t_ms !== "number") {
    return false;
  }
  if (rec.type === "session") {
    return typeof rec.kind === "string";
  }
  if (rec.type === "trace") {
    return typeof rec.kind === "string" && typeof rec.device === "string";
  }
  return false;
}

/**
 * True when `events` continues straight from `afterPos` with no gap.
 *
 * A gap means the client missed rows (for example across a reconnect) and
 * must rebuild from its base snapshot instead of folding the batch in.
 */
export function continuesFrom(events: RangeEvent[], afterPos: number): boolean {
  let expected = afterPos + 1;
  for (const ev of events) {
    if (ev.pos !== expected) {
      return false;
    }
    expected += 1;
  }
  return true;
}
