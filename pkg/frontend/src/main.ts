/**
 * Console follower for an exercise range session.
 *
 * Creates (or attaches to) the single session slot, folds the /v1/events
 * stream into a local TopologyView, and redraws a text dashboard until the
 * session finishes. Dropped connections rebuild the view by replaying the
 * whole stream from the base position, never by trusting stale local state.
 */

import { parseArgs } from "node:util";

import { ApiError, RangeClient } from "./client";
import { continuesFrom } from "./events";
import { renderView } from "./render";
import { applyEvent, initView, replay, TopologyView } from "./state";
import { SessionLifecycle, Snapshot } from "./types";

const USAGE = `usage: range-console [options]

  --url URL          control API base (default http://127.0.0.1:8000)
  --scenario NAME    packaged scenario to run (scenario1, scenario2, ...)
  --project PATH     server-side project file to run free-form
  --password PW      project file password, when protected
  --seed N           simulation seed
  --speed X          wall-clock pacing, 0 = as fast as possible (default 1)
  --horizon-ms N     override the run horizon
  --attach           follow the session that already exists, do not create
  --keep             leave the session in place on exit
  --poll-ms N        event poll interval (default 250)
  --tail N           activity lines to show (default 12)
`;

interface CliOptions {
  url: string;
  scenario?: string;
  project?: string;
  password?: string;
  seed?: number;
  speed: number;
  horizonMs?: number;
  attach: boolean;
  keep: boolean;
  pollMs: number;
  tail: number;
}

function parseCli(argv: string[]): CliOptions {
  const { values } = parseArgs({
    args: argv,
    options: {
      url: { type: "string", default: "http://127.0.0.1:8000" },
      scenario: { type: "string" },
      project: { type: "string" },
      password: { type: "string" },
      seed: { type: "string" },
      speed: { type: "string", default: "1" },
      "horizon-ms": { type: "string" },
      attach: { type: "boolean", default: false },
      keep: { type: "boolean", default: false },
      "poll-ms": { type: "string", default: "250" },
      tail: { type: "string", default: "12" },
      help: { type: "boolean", default: false },
    },
  });
  if (values.help) {
    process.stdout.write(USAGE);
    process.exit(0);
  }
  const num = (name: string, raw: string | undefined): number | undefined => {
    if (raw === undefined) {
      return undefined;
    }
    const parsed = Number(raw);
    if (!Number.isFinite(parsed)) {
      throw new Error(`--${name} expects a number, got ${raw!}`);
    }
    return parsed;
  };
  const opts: CliOptions = {
    url: values.url!,
    scenario: values.scenario,
    project: values.project,
    password: values.password,
    seed: num("seed", values.seed),
    speed: num("speed", values.speed)!,
    horizonMs: num("horizon-ms", values["horizon-ms"]),
    attach: values.attach!,
    keep: values.keep!,
    pollMs: num("poll-ms", values["poll-ms"])!,
    tail: num("tail", values.tail)!,
  };
  if (!opts.attach && opts.scenario === undefined && opts.project === undefined) {
    throw new Error("need --scenario, --project, or --attach (see --help)");
  }
  return opts;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

function draw(view: TopologyView, tail: number): void {
  const body = renderView(view, tail);
  if (process.stdout.isTTY) {
    process.stdout.write("\x1b[2J\x1b[H" + body + "\n");
  } else {
    process.stdout.write(body + "\n\n");
  }
}

/**
 * Snapshot plus the event position it corresponds to.
 *
 * A snapshot taken while events kept flowing matches no definite position,
 * so attach retries until the event count is identical on both sides of the
 * snapshot read.
 */
async function attachBase(
  client: RangeClient,
): Promise<{ base: Snapshot; pos: number; state: SessionLifecycle }> {
  for (let attempt = 0; attempt < 50; attempt += 1) {
    const before = await client.sessionStatus();
    const base = await client.snapshot();
    const after = await client.sessionStatus();
    if (before.events === after.events) {
      return { base, pos: before.events - 1, state: after.state };
    }
    await sleep(50);
  }
  throw new Error("session kept producing events; could not pin a base snapshot");
}

async function follow(
  client: RangeClient,
  base: Snapshot,
  basePos: number,
  baseState: SessionLifecycle,
  opts: CliOptions,
): Promise<TopologyView> {
  // a base taken mid-session predates the lifecycle rows; a view still in
  // "created" after folding means those rows sit before basePos, so take the
  // lifecycle the server reported at attach time
  const seed = (view: TopologyView): TopologyView => {
    if (view.sessionState === "created") {
      view.sessionState = baseState;
    }
    return view;
  };
  let view = seed(initView(base, basePos));
  draw(view, opts.tail);
  for (;;) {
    let batch;
    try {
      batch = await client.events(view.lastPos);
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        throw err; // session deleted underneath us
      }
      process.stderr.write(`event poll failed (${String(err)}); replaying from base\n`);
      await sleep(opts.pollMs);
      view = seed(replay(base, await client.events(basePos), basePos));
      draw(view, opts.tail);
      continue;
    }
    if (!continuesFrom(batch, view.lastPos)) {
      // missed rows; rebuild instead of folding a gapped batch
      view = seed(replay(base, await client.events(basePos), basePos));
      draw(view, opts.tail);
    } else if (batch.length > 0) {
      for (const ev of batch) {
        applyEvent(view, ev);
      }
      draw(view, opts.tail);
    }
    if (view.sessionState === "finished") {
      return view;
    }
    await sleep(opts.pollMs);
  }
}

async function main(): Promise<number> {
  let opts: CliOptions;
  try {
    opts = parseCli(process.argv.slice(2));
  } catch (err) {
    process.stderr.write(`${String(err instanceof Error ? err.message : err)}\n`);
    return 2;
  }
  const client = new RangeClient({ baseUrl: opts.url });

  let base: Snapshot;
  let basePos: number;
  let baseState: SessionLifecycle = "created";
  let created = false;
  try {
    if (opts.attach) {
      ({ base, pos: basePos, state: baseState } = await attachBase(client));
    } else {
      const res = await client.createSession({
        scenario: opts.scenario,
        project: opts.project,
        password: opts.password,
        seed: opts.seed,
        speed: opts.speed,
        horizon_ms: opts.horizonMs,
        autostart: false,
      });
      created = true;
      base = res.snapshot;
      basePos = -1;
      await client.startSession();
    }

    const view = await follow(client, base, basePos, baseState, opts);
    const status = await client.sessionStatus();
    for (const check of status.checks) {
      process.stdout.write(`${check.passed ? "pass" : "FAIL"}  ${check.description}\n`);
    }
    process.stdout.write(
      `session ${status.session} finished at ${status.t_ms}ms: ` +
        `${status.passed ? "all checks passed" : "checks failed"}\n`,
    );
    return status.passed ? 0 : 1;
  } finally {
    if (created && !opts.keep) {
      await client.deleteSession().catch(() => undefined);
    }
  }
}

main().then(
  (code) => process.exit(code),
  (err) => {
    process.stderr.write(`${String(err instanceof Error ? err.message : err)}\n`);
    process.exit(2);
  },
);
