/**
 * Event-sourced fleet view.
 *
 * The console never asks the server for state while following a session: it
 * takes one base snapshot, then folds the /v1/events stream into a local
 * TopologyView. Folding the same stream onto the same base always lands on
 * the same view, so a client that reconnects can rebuild by replaying from
 * its base position instead of trusting whatever it held before the drop.
 */

import {
  DeviceState,
  LinkState,
  RangeEvent,
  SessionEvent,
  SessionLifecycle,
  Snapshot,
  TraceEvent,
} from "./types";

/** One line of the rolling activity feed shown under the device table. */
export interface ActivityLine {
  t_ms: number;
  device: string;
  text: string;
}

export interface TopologyView {
  t_ms: number;
  sessionState: SessionLifecycle;
  passed: boolean | null;
  horizonMs: number | null;
  armed: boolean;
  deadlineMs: number | null;
  detectionAlerts: number;
  failedKeyAttempts: number;
  devices: Record<string, DeviceState>;
  links: LinkState[];
  /** Position of the last folded event; base snapshots start at -1. */
  lastPos: number;
  activity: ActivityLine[];
}

const ACTIVITY_CAP = 200;

// chatter kinds (per-scan process and healthy poll records) stay out of the feed
const QUIET_KINDS = new Set(["process", "poll_sent", "ew_write", "put_write", "get_read"]);

export function initView(snapshot: Snapshot, basePos = -1): TopologyView {
  const devices: Record<string, DeviceState> = {};
  for (const [name, dev] of Object.entries(snapshot.devices)) {
    devices[name] = { ...dev, outputs: { ...dev.outputs } };
  }
  return {
    t_ms: snapshot.t_ms,
    sessionState: "created",
    passed: null,
    horizonMs: null,
    armed: snapshot.armed,
    deadlineMs: snapshot.deadline_ms,
    detectionAlerts: snapshot.detection_alerts,
    failedKeyAttempts: 0,
    devices,
    links: snapshot.links.map((link) => ({ ...link })),
    lastPos: basePos,
    activity: [],
  };
}

/** Fold a batch of events, oldest first. Rows at or before lastPos are skipped. */
export function replay(base: Snapshot, events: RangeEvent[], basePos = -1): TopologyView {
  const view = initView(base, basePos);
  for (const ev of events) {
    applyEvent(view, ev);
  }
  return view;
}

/**
 * Fold one event into the view in place.
 *
 * Returns false for rows already applied (pos <= lastPos), which makes
 * overlapping deliveries after a reconnect harmless.
 */
export function applyEvent(view: TopologyView, ev: RangeEvent): boolean {
  if (ev.pos <= view.lastPos) {
    return false;
  }
  view.lastPos = ev.pos;
  view.t_ms = ev.t_ms;
  if (ev.type === "session") {
    applySession(view, ev);
  } else {
    applyTrace(view, ev);
  }
  return true;
}

/** Project the view back into the wire snapshot shape for comparisons. */
export function toSnapshot(view: TopologyView): Snapshot {
  const devices: Record<string, DeviceState> = {};
  for (const [name, dev] of Object.entries(view.devices)) {
    devices[name] = { ...dev, outputs: { ...dev.outputs } };
  }
  return {
    t_ms: view.t_ms,
    devices,
    links: view.links.map((link) => ({ ...link })),
    armed: view.armed,
    deadline_ms: view.deadlineMs,
    detection_alerts: view.detectionAlerts,
  };
}

function applySession(view: TopologyView, ev: SessionEvent): void {
  switch (ev.kind) {
    case "session_created":
      view.horizonMs = ev.horizon_ms ?? null;
      break;
    case "session_started":
    case "session_resumed":
      view.sessionState = "running";
      break;
    case "session_paused":
      view.sessionState = "paused";
      break;
    case "session_finished":
      view.sessionState = "finished";
      view.passed = ev.passed ?? null;
      break;
  }
}

function applyTrace(view: TopologyView, ev: TraceEvent): void {
  const fields = ev.fields ?? {};
  if (ev.device === "net") {
    if (ev.kind === "link_cut" || ev.kind === "link_restored") {
      setLink(view, fields.a ?? "", fields.b ?? "", ev.kind === "link_restored");
    }
    note(view, ev);
    return;
  }
  const dev = view.devices[ev.device];
  if (dev === undefined) {
    note(view, ev);
    return;
  }
  switch (ev.kind) {
    case "enabled":
      dev.enable = true;
      dev.polling = dev.enable && !dev.alert;
      break;
    case "alert_raised":
      dev.alert = true;
      dev.polling = false;
      break;
    case "disarmed":
      dev.enable = false;
      dev.polling = false;
      if (dev.kind === "ew") {
        view.armed = false;
        view.deadlineMs = null;
      } else {
        dev.alert = false;
      }
      break;
    case "armed":
      dev.enable = true;
      dev.polling = true;
      view.armed = true;
      view.deadlineMs = Number(fields.deadline_ms ?? "0");
      break;
    case "ew_shutdown":
      dev.alert = true;
      dev.polling = false;
      break;
    case "disarm_failed":
      view.failedKeyAttempts = Number(fields.attempts ?? "0");
      break;
    case "halted":
      dev.alive = false;
      break;
    case "outputs_on":
      setAllOutputs(dev, true);
      break;
    case "outputs_restored":
      setAllOutputs(dev, false);
      break;
    case "output_changed":
      if (fields.address !== undefined) {
        dev.outputs[fields.address] = fields.state !== "0";
      }
      break;
    case "config_replaced":
      dev.enable = false;
      dev.alert = false;
      dev.polling = false;
      setAllOutputs(dev, false);
      break;
    default:
      break;
  }
  note(view, ev);
}

function setAllOutputs(dev: DeviceState, state: boolean): void {
  for (const address of Object.keys(dev.outputs)) {
    dev.outputs[address] = state;
  }
}

function setLink(view: TopologyView, a: string, b: string, up: boolean): void {
  for (const link of view.links) {
    if ((link.a === a && link.b === b) || (link.a === b && link.b === a)) {
      link.up = up;
    }
  }
}

function note(view: TopologyView, ev: TraceEvent): void {
  if (QUIET_KINDS.has(ev.kind)) {
    return;
  }
  const fields = Object.entries(ev.fields ?? {})
    .map(([key, value]) => `${key}=${value}`)
    .join(" ");
  view.activity.push({
    t_ms: ev.t_ms,
    device: ev.device,
    text: fields === "" ? ev.kind : `${ev.kind} ${fields}`,
  });
  if (view.activity.length > ACTIVITY_CAP) {
    view.activity.splice(0, view.activity.length - ACTIVITY_CAP);
  }
}
