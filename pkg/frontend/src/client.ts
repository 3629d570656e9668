/** Thin fetch wrapper for the /v1 control surface. */

import { parseEventLines } from "./events";
import {
  CommandRequest,
  CommandStatus,
  CreateSessionRequest,
  CreateSessionResponse,
  RangeEvent,
  SessionStatus,
  Snapshot,
} from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: string,
    method: string,
    path: string,
  ) {
    super(`${method} ${path} -> ${status}: ${body}`);
    this.name = "ApiError";
  }
}

export interface ClientOptions {
  baseUrl: string;
  /** Test seam; defaults to the global fetch. */
  fetchFn?: FetchLike;
}

export class RangeClient {
  private readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(options: ClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/+$/, "");
    this.fetchFn = options.fetchFn ?? ((url, init) => fetch(url, init));
  }

  async health(): Promise<{ status: string }> {
    return (await this.requestJson("GET", "/v1/health")) as { status: string };
  }

  async createSession(body: CreateSessionRequest): Promise<CreateSessionResponse> {
    return (await this.requestJson("POST", "/v1/session", body)) as CreateSessionResponse;
  }

  async sessionStatus(): Promise<SessionStatus> {
    return (await this.requestJson("GET", "/v1/session")) as SessionStatus;
  }

  async startSession(): Promise<SessionStatus> {
    return (await this.requestJson("POST", "/v1/session/start")) as SessionStatus;
  }

  async deleteSession(): Promise<void> {
    await this.requestText("DELETE", "/v1/session");
  }

  async snapshot(): Promise<Snapshot> {
    return (await this.requestJson("GET", "/v1/snapshot")) as Snapshot;
  }

  /** Rows with pos strictly greater than `since`, oldest first. */
  async events(since: number): Promise<RangeEvent[]> {
    const text = await this.requestText("GET", `/v1/events?since=${since}`);
    return parseEventLines(text);
  }

  async submitCommand(body: CommandRequest): Promise<CommandStatus> {
    return (await this.requestJson("POST", "/v1/commands", body)) as CommandStatus;
  }

  async commandStatus(handle: string): Promise<CommandStatus> {
    return (await this.requestJson(
      "GET",
      `/v1/commands/${encodeURIComponent(handle)}`,
    )) as CommandStatus;
  }

  /** Full run log as plain text, one record per line. */
  async trace(): Promise<string> {
    return this.requestText("GET", "/v1/trace");
  }

  private async requestJson(method: string, path: string, body?: unknown): Promise<unknown> {
    const text = await this.requestText(method, path, body);
    return JSON.parse(text);
  }

  private async requestText(method: string, path: string, body?: unknown): Promise<string> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const res = await this.fetchFn(this.baseUrl + path, init);
    const text = await res.text();
    if (!res.ok) {
      throw new ApiError(res.status, text, method, path);
    }
    return text;
  }
}
