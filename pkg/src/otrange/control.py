"""HTTP control surface (/v1): session lifecycle, snapshots, steering
commands and an event feed.

One session at a time. The session owns a background thread that runs the
kernel in short slices; commands injected with at_ms land in the event queue
at exactly that simulated time, so an interactive run steered this way
produces the same trace a scripted batch run does. speed scales simulated
versus wall time; 0 means free-run.

    POST   /v1/session            create ({scenario|project, seed, speed, ...})
    GET    /v1/session            status
    POST   /v1/session/start      begin execution (if created with autostart=false)
    DELETE /v1/session            tear down
    GET    /v1/snapshot           point-in-time fleet view
    POST   /v1/commands           {command, params, at_ms?} -> {accepted, handle}
    GET    /v1/commands/{handle}  submitted command status
    GET    /v1/events?since=POS   NDJSON feed; each line carries its pos
    GET    /v1/trace              full trace text so far
"""

from __future__ import annotations

import json
import threading
import time
from itertools import count

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse, Response

from .deployer import DeploymentPlan, install_switch
from .ew import RansomTerms
from .fleet import build_fleet
from .kernel import RunLimits, ScheduleError
from .project import load_project
from .scenario import (
    ACTIONS,
    apply_action,
    evaluate_assertion,
    load_scenario,
    prepare_scenario,
)

SLICE_MS = 200
CONTROL_VERBS = frozenset({"pause", "resume", "step", "set_speed", "arm", "install"})


class CommandError(ValueError):
    pass


class SimSession:
    """A running exercise owned by the HTTP layer."""

    def __init__(self, session_id: str, result, horizon_ms: int, speed: float):
        self.id = session_id
        self.result = result  # ScenarioResult (script may be None for bare projects)
        self.fleet = result.fleet
        self.horizon_ms = horizon_ms
        self.speed = speed
        self.state = "created"
        self.checks_evaluated = False
        self._events: list[dict] = []
        self._events_lock = threading.Lock()
        self._run_lock = threading.RLock()
        self._wake = threading.Event()
        self._stopping = False
        self._thread: threading.Thread | None = None
        self._handles = count(1)
        self.commands: dict[str, dict] = {}
        self.fleet.trace.subscribe(self._on_record)
        self._emit_meta("session_created", horizon_ms=horizon_ms, speed=speed)

    # -- event feed -----------------------------------------------------------

    def _on_record(self, rec) -> None:
        with self._events_lock:
            self._events.append({
                "pos": len(self._events),
                "type": "trace",
                "t_ms": rec.t_ms,
                "device": rec.device,
                "kind": rec.kind,
                "fields": {k: str(v) for k, v in rec.fields.items()},
            })

    def _emit_meta(self, kind: str, **data) -> None:
        with self._events_lock:
            self._events.append({
                "pos": len(self._events),
                "type": "session",
                "t_ms": self.fleet.kernel.now(),
                "kind": kind,
                **data,
            })

    def events_since(self, pos: int) -> list[dict]:
        with self._events_lock:
            if pos < 0:
                return list(self._events)
            return [e for e in self._events if e["pos"] > pos]

    # -- lifecycle --------------------------------------------------------------

    def start(self) -> None:
        if self.state != "created":
            raise CommandError(f"session is {self.state}, not startable")
        self.state = "running"
        self._emit_meta("session_started")
        self._spawn()

    def _spawn(self) -> None:
        self._thread = threading.Thread(target=self._run_loop, daemon=True,
                                        name=f"otrange-{self.id}")
        self._thread.start()

    def _run_loop(self) -> None:
        kernel = self.fleet.kernel
        wall_anchor = time.monotonic()
        sim_anchor = kernel.now()
        while not self._stopping:
            if self.state == "paused":
                self._wake.wait(timeout=0.1)
                self._wake.clear()
                wall_anchor = time.monotonic()
                sim_anchor = kernel.now()
                continue
            with self._run_lock:
                if kernel.now() >= self.horizon_ms:
                    break
                target = min(kernel.now() + SLICE_MS, self.horizon_ms)
                kernel.run_until(RunLimits(horizon_ms=target))
            if kernel.now() >= self.horizon_ms:
                break
            if self.speed > 0:
                due = wall_anchor + (kernel.now() - sim_anchor) / (1000.0 * self.speed)
                delay = due - time.monotonic()
                if delay > 0:
                    time.sleep(min(delay, 0.25))
        self._finish()

    def _finish(self) -> None:
        if self.state == "finished":
            return
        self.state = "finished"
        script = self.result.script
        if script is not None and script.assertions and not self.checks_evaluated:
            with self._run_lock:
                self.result.checks = [evaluate_assertion(a, self.fleet)
                                      for a in script.assertions]
            self.checks_evaluated = True
        self._emit_meta("session_finished",
                        passed=self.result.passed if self.checks_evaluated else None)

    def stop(self) -> None:
        self._stopping = True
        self.fleet.kernel.pause()
        self._wake.set()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def status(self) -> dict:
        out = {
            "session": self.id,
            "state": self.state,
            "t_ms": self.fleet.kernel.now(),
            "horizon_ms": self.horizon_ms,
            "speed": self.speed,
            "events": len(self._events),
        }
        if self.checks_evaluated:
            out["checks"] = [
                {"description": c.description, "passed": c.passed, "detail": c.detail}
                for c in self.result.checks
            ]
            out["passed"] = self.result.passed
        return out

    def snapshot(self) -> dict:
        with self._run_lock:
            return self.fleet.snapshot()

    def trace_text(self) -> str:
        with self._run_lock:
            return self.fleet.trace.dumps()

    # -- commands ---------------------------------------------------------------

    def submit(self, command: str, params: dict, at_ms: int | None) -> str:
        if self.state == "finished":
            raise CommandError("session has finished")
        if command not in ACTIONS and command not in CONTROL_VERBS:
            raise CommandError(f"unknown command {command!r}")
        self._validate(command, params)
        if command in CONTROL_VERBS:
            if at_ms is not None:
                raise CommandError(f"{command} cannot be scheduled with at_ms")
            return self._control(command, params)
        if at_ms is not None and at_ms < self.fleet.kernel.now():
            raise CommandError(f"at_ms={at_ms} is already in the past")

        handle = f"cmd-{next(self._handles)}"
        self.commands[handle] = {"handle": handle, "command": command,
                                 "at_ms": at_ms, "status": "pending", "error": None}

        def execute() -> None:
            entry = self.commands[handle]
            try:
                apply_action(self.fleet, command, params)
                entry["status"] = "done"
            except Exception as exc:
                entry["status"] = "failed"
                entry["error"] = str(exc)
                self._emit_meta("command_failed", handle=handle, error=str(exc))

        def place() -> None:
            entry = self.commands[handle]
            try:
                if at_ms is None:
                    execute()
                else:
                    self.fleet.kernel.schedule(at_ms, execute, origin="control")
            except ScheduleError as exc:
                entry["status"] = "failed"
                entry["error"] = str(exc)
                self._emit_meta("command_failed", handle=handle, error=str(exc))

        if self.state == "created":
            # thread not running yet; place directly for deterministic seq order
            place()
        else:
            self.fleet.kernel.inject(place)
        return handle

    def _validate(self, command: str, params: dict) -> None:
        devices = self.fleet.devices
        if command in ("cut_link", "restore_link"):
            for end in ("a", "b"):
                if params.get(end) not in devices:
                    raise CommandError(f"unknown device {params.get(end)!r}")
        elif command in ("halt_device", "reflash_device", "safe_shutdown_signal",
                         "tamper_memory"):
            if params.get("device") not in devices:
                raise CommandError(f"unknown device {params.get('device')!r}")
        elif command == "pay_ransom":
            if not params.get("key"):
                raise CommandError("pay_ransom needs a key")
        elif command == "arm":
            for need in ("deadline_ms", "key"):
                if need not in params:
                    raise CommandError(f"arm needs {need}")
        elif command == "install":
            for need in ("deadline_ms", "key", "plc_password"):
                if need not in params:
                    raise CommandError(f"install needs {need}")
        elif command == "step":
            if not isinstance(params.get("ms"), int) or params["ms"] <= 0:
                raise CommandError("step needs a positive integer ms")
        elif command == "set_speed":
            speed = params.get("speed")
            if not isinstance(speed, (int, float)) or speed < 0:
                raise CommandError("set_speed needs a non-negative speed")

    def _control(self, command: str, params: dict) -> str:
        handle = f"cmd-{next(self._handles)}"
        entry = {"handle": handle, "command": command, "at_ms": None,
                 "status": "done", "error": None}
        self.commands[handle] = entry
        try:
            if command == "pause":
                if self.state != "running":
                    raise CommandError(f"cannot pause a {self.state} session")
                self.state = "paused"
                self.fleet.kernel.pause()
                self._emit_meta("session_paused")
            elif command == "resume":
                if self.state != "paused":
                    raise CommandError(f"cannot resume a {self.state} session")
                self.state = "running"
                self._emit_meta("session_resumed")
                if self._thread is None:
                    self._spawn()  # session was stepped before ever starting
                else:
                    self._wake.set()
            elif command == "step":
                if self.state not in ("paused", "created"):
                    raise CommandError("step requires a paused session")
                with self._run_lock:
                    target = min(self.fleet.kernel.now() + params["ms"], self.horizon_ms)
                    if target > 0:
                        self.fleet.kernel.run_until(RunLimits(horizon_ms=target))
                if self.state == "created":
                    self.state = "paused"
                if self.fleet.kernel.now() >= self.horizon_ms:
                    self._finish()
            elif command == "set_speed":
                self.speed = float(params["speed"])
                self._emit_meta("speed_changed", speed=self.speed)
            elif command == "arm":
                terms = RansomTerms(int(params["deadline_ms"]), str(params["key"]))
                with self._run_lock:
                    outcome = self.fleet.ew.arm_all(terms, self.fleet.devices)
                if not outcome.armed:
                    raise CommandError(f"arming failed: {outcome.failures}")
            elif command == "install":
                plan = DeploymentPlan(
                    deadline_ms=int(params["deadline_ms"]),
                    ransom_key=str(params["key"]),
                    plc_password=str(params["plc_password"]),
                    project_password=self.fleet.project.password or "unset",
                    poll_interval_ms=int(params.get("poll_interval_ms", 1000)),
                    deadband_misses=int(params.get("deadband_misses", 1)),
                )
                with self._run_lock:
                    report = install_switch(self.fleet, plan)
                if report.aborted:
                    raise CommandError(f"install failed: {report.reason}")
        except CommandError as exc:
            entry["status"] = "failed"
            entry["error"] = str(exc)
            raise
        return handle


# -- app ----------------------------------------------------------------------

def _reject(reason: str, code: int = 400) -> JSONResponse:
    return JSONResponse({"rejected": True, "reason": reason}, status_code=code)


def create_app() -> FastAPI:
    app = FastAPI(title="otrange control", version="1")
    holder: dict = {"session": None, "counter": count(1)}

    def current() -> SimSession | None:
        return holder["session"]

    @app.get("/v1/health")
    def health() -> dict:
        return {"ok": True}

    @app.post("/v1/session")
    async def create_session(request: Request):
        if current() is not None and current().state != "finished":
            return _reject("a session already exists; delete it first", 409)
        body = await request.json() if await request.body() else {}
        try:
            session = _build_session(body, next(holder["counter"]))
        except CommandError as exc:
            return _reject(str(exc))
        except Exception as exc:
            return _reject(f"{type(exc).__name__}: {exc}")
        holder["session"] = session
        if body.get("autostart", True):
            session.start()
        return {"session": session.id, "state": session.state,
                "snapshot": session.snapshot()}

    @app.get("/v1/session")
    def session_status():
        session = current()
        if session is None:
            return _reject("no session", 404)
        return session.status()

    @app.post("/v1/session/start")
    def session_start():
        session = current()
        if session is None:
            return _reject("no session", 404)
        try:
            session.start()
        except CommandError as exc:
            return _reject(str(exc))
        return {"session": session.id, "state": session.state}

    @app.delete("/v1/session")
    def session_delete():
        session = current()
        if session is None:
            return _reject("no session", 404)
        session.stop()
        holder["session"] = None
        return {"deleted": session.id}

    @app.get("/v1/snapshot")
    def snapshot():
        session = current()
        if session is None:
            return _reject("no session", 404)
        return session.snapshot()

    @app.post("/v1/commands")
    async def commands(request: Request):
        session = current()
        if session is None:
            return _reject("no session", 404)
        body = await request.json()
        command = body.get("command")
        if not command:
            return _reject("missing command")
        at_ms = body.get("at_ms")
        if at_ms is not None and (not isinstance(at_ms, int) or at_ms < 0):
            return _reject("at_ms must be a non-negative integer")
        try:
            handle = session.submit(command, body.get("params") or {}, at_ms)
        except CommandError as exc:
            return _reject(str(exc))
        return {"accepted": True, "handle": handle}

    @app.get("/v1/commands/{handle}")
    def command_status(handle: str):
        session = current()
        if session is None:
            return _reject("no session", 404)
        entry = session.commands.get(handle)
        if entry is None:
            return _reject(f"unknown handle {handle!r}", 404)
        return entry

    @app.get("/v1/events")
    def events(since: int = -1):
        session = current()
        if session is None:
            return _reject("no session", 404)
        lines = [json.dumps(e, sort_keys=True) for e in session.events_since(since)]
        body = "\n".join(lines) + ("\n" if lines else "")
        return Response(content=body, media_type="application/x-ndjson")

    @app.get("/v1/trace")
    def trace():
        session = current()
        if session is None:
            return _reject("no session", 404)
        return PlainTextResponse(session.trace_text())

    return app


def _build_session(body: dict, number: int) -> SimSession:
    speed = float(body.get("speed", 0))
    if speed < 0:
        raise CommandError("speed must be non-negative")
    record_flows = bool(body.get("record_flows", False))
    if "scenario" in body:
        from .cli import resolve_input

        script = load_scenario(resolve_input(body["scenario"]))
        if body.get("seed") is not None:
            script.seed = int(body["seed"])
        if not body.get("include_actions", True):
            script.actions = []  # caller will steer via /v1/commands instead
        result = prepare_scenario(script, record_flows=record_flows)
        horizon = int(body.get("horizon_ms", script.horizon_ms))
    elif "project" in body:
        from .cli import resolve_input

        project = load_project(resolve_input(body["project"]),
                               password=body.get("password"))
        fleet = build_fleet(project, seed=int(body.get("seed", 0)),
                            record_flows=record_flows)

        from .scenario import ScenarioResult

        result = ScenarioResult(None, fleet)
        horizon = int(body.get("horizon_ms", 60000))
    else:
        raise CommandError("body needs either a scenario or a project")
    if horizon <= 0:
        raise CommandError("horizon_ms must be positive")
    return SimSession(f"s{number}", result, horizon, speed)
