/** JSON shapes spoken by the /v1 control surface. */

export type DeviceKind = "plc" | "ew";

export interface DeviceState {
  kind: DeviceKind;
  alive: boolean;
  enable: boolean;
  alert: boolean;
  outputs: Record<string, boolean>;
  polling: boolean;
}

export interface LinkState {
  a: string;
  b: string;
  up: boolean;
}

/** Point-in-time fleet view returned by GET /v1/snapshot. */
export interface Snapshot {
  t_ms: number;
  devices: Record<string, DeviceState>;
  links: LinkState[];
  armed: boolean;
  deadline_ms: number | null;
  detection_alerts: number;
}

export type SessionLifecycle = "created" | "running" | "paused" | "finished";

export interface CheckResult {
  description: string;
  detail: string;
  passed: boolean;
}

/** GET /v1/session. `passed` and `checks` are only meaningful once finished. */
export interface SessionStatus {
  session: string;
  state: SessionLifecycle;
  t_ms: number;
  horizon_ms: number;
  speed: number;
  events: number;
  passed: boolean | null;
  checks: CheckResult[];
}

export interface CreateSessionRequest {
  scenario?: string;
  project?: string;
  password?: string;
  seed?: number;
  speed?: number;
  horizon_ms?: number;
  autostart?: boolean;
  include_actions?: boolean;
  record_flows?: boolean;
}

export interface CreateSessionResponse {
  session: string;
  state: SessionLifecycle;
  snapshot: Snapshot;
}

/** One NDJSON row from GET /v1/events. Positions are contiguous from 0. */
export interface SessionEvent {
  type: "session";
  pos: number;
  t_ms: number;
  kind:
    | "session_created"
    | "session_started"
    | "session_paused"
    | "session_resumed"
    | "session_finished";
  horizon_ms?: number;
  speed?: number;
  passed?: boolean;
}

export interface TraceEvent {
  type: "trace";
  pos: number;
  t_ms: number;
  device: string;
  kind: string;
  fields: Record<string, string>;
}

export type RangeEvent = SessionEvent | TraceEvent;

export interface CommandRequest {
  command: string;
  at_ms?: number;
  params?: Record<string, unknown>;
}

export interface CommandStatus {
  handle: string;
  command: string;
  at_ms: number | null;
  status: "pending" | "done" | "failed";
  error: string | null;
}
