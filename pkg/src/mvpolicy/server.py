"""Rollout preview server and gated execution loop.

The simulation loop is the only executor. Before running a planned chunk it
publishes the predicted multi-view rollout (RGB, heatmap, and overlay PNG
frames) and, when the gate is on, blocks until an approve/reject decision
arrives over HTTP. Reject resamples with a new seed up to a retry limit; a
decision timeout auto-rejects. Decisions per rollout are first-writer-wins;
a second decision gets 409.

Endpoints (exact wire contract, also in docs/format.md):

    GET  /health                                -> {"status": "ok"}
    GET  /rollouts                              -> [{"id", "state"}, ...]
    GET  /rollouts/{id}                         -> metadata + frame URL template
    GET  /rollouts/{id}/frames/{stream}/{view}/{t}.png
    POST /rollouts/{id}/decision {"action": "approve"|"reject"}
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import uvicorn
from fastapi import FastAPI, Response
from fastapi.responses import JSONResponse

from .data import STREAMS, encode_frame_png, render_overlay
from .seeding import derive_seed
from .sim import TaskSpec, reset, step
from .sim.runner import EvalResult

PENDING, APPROVED, REJECTED, EXECUTED = "pending", "approved", "rejected", "executed"


def _chunk_json(chunk) -> dict:
    return {
        "positions": np.asarray(chunk.positions).tolist(),
        "euler": np.asarray(chunk.euler).tolist(),
        "euler_bins": np.asarray(chunk.euler_bins).tolist(),
        "gripper": np.asarray(chunk.gripper).tolist(),
    }


@dataclass
class Rollout:
    id: str
    trial: int
    chunk_index: int
    attempt: int
    seed: int
    chunk: object
    rgb_video: np.ndarray
    heat_video: np.ndarray
    state: str = PENDING
    created_at: float = field(default_factory=time.time)
    decided_by: str | None = None
    executed_chunk: dict | None = None
    event: threading.Event = field(default_factory=threading.Event)

    @property
    def n_views(self) -> int:
        return self.rgb_video.shape[0]

    @property
    def n_frames(self) -> int:
        return self.rgb_video.shape[1]

    def frame(self, stream: str, view: int, t: int) -> np.ndarray:
        if stream == "rgb":
            return self.rgb_video[view, t]
        if stream == "heatmap":
            return np.repeat(self.heat_video[view, t][..., None], 3, axis=-1)
        return render_overlay(self.rgb_video[view, t], self.heat_video[view, t])


class RolloutStore:
    """Thread-safe rollout registry with a JSONL decision log."""

    def __init__(self, log_path=None):
        self._lock = threading.RLock()
        self._rollouts: dict = {}
        self._order: list = []
        self._log_path = Path(log_path) if log_path else None
        if self._log_path:
            self._log_path.parent.mkdir(parents=True, exist_ok=True)
            self._log_path.write_text("")

    def _log(self, record: dict) -> None:
        if self._log_path is None:
            return
        record = {"ts": time.time(), **record}
        with open(self._log_path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def register(self, rollout: Rollout) -> Rollout:
        with self._lock:
            self._rollouts[rollout.id] = rollout
            self._order.append(rollout.id)
        self._log({"event": "registered", "rollout": rollout.id, "seed": rollout.seed})
        return rollout

    def listing(self) -> list:
        with self._lock:
            return [{"id": rid, "state": self._rollouts[rid].state} for rid in self._order]

    def get(self, rollout_id: str) -> Rollout | None:
        with self._lock:
            return self._rollouts.get(rollout_id)

    def decide(self, rollout_id: str, action: str, source: str) -> tuple:
        """Returns (http_status, payload). First decision wins; later ones 409."""
        if action not in ("approve", "reject"):
            return 400, {"error": f"invalid action {action!r}"}
        with self._lock:
            ro = self._rollouts.get(rollout_id)
            if ro is None:
                return 404, {"error": "unknown rollout"}
            if ro.state != PENDING:
                return 409, {"error": "already decided", "state": ro.state}
            ro.state = APPROVED if action == "approve" else REJECTED
            ro.decided_by = source
            ro.event.set()
            state = ro.state
        self._log({"event": "decision", "rollout": rollout_id, "action": action, "source": source})
        return 200, {"id": rollout_id, "state": state}

    def mark_executed(self, rollout_id: str) -> None:
        with self._lock:
            ro = self._rollouts[rollout_id]
            ro.state = EXECUTED
            ro.executed_chunk = _chunk_json(ro.chunk)
        self._log({"event": "executed", "rollout": rollout_id, "chunk": ro.executed_chunk})

    def metadata(self, rollout_id: str) -> dict | None:
        with self._lock:
            ro = self._rollouts.get(rollout_id)
            if ro is None:
                return None
            return {
                "id": ro.id,
                "state": ro.state,
                "trial": ro.trial,
                "chunk_index": ro.chunk_index,
                "attempt": ro.attempt,
                "seed": ro.seed,
                "frames": ro.n_frames,
                "views": ro.n_views,
                "streams": list(STREAMS),
                "frame_url_template": "/rollouts/{id}/frames/{stream}/{view}/{t}.png",
                "chunk": _chunk_json(ro.chunk),
                "executed_chunk": ro.executed_chunk,
                "decided_by": ro.decided_by,
            }


def create_app(store: RolloutStore, ui_dir=None) -> FastAPI:
    app = FastAPI(title="mvpolicy rollout gate")
    # The inspector UI may be served from another origin during development;
    # the API carries no credentials (authentication is out of scope).
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])
    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/rollouts")
    def rollouts():
        return store.listing()

    @app.get("/rollouts/{rollout_id}")
    def rollout(rollout_id: str):
        meta = store.metadata(rollout_id)
        if meta is None:
            return JSONResponse({"error": "unknown rollout"}, status_code=404)
        return meta

    @app.get("/rollouts/{rollout_id}/frames/{stream}/{view}/{frame}.png")
    def frame(rollout_id: str, stream: str, view: int, frame: int):
        ro = store.get(rollout_id)
        if ro is None:
            return JSONResponse({"error": "unknown rollout"}, status_code=404)
        if stream not in STREAMS:
            return JSONResponse({"error": f"unknown stream {stream!r}"}, status_code=400)
        if not (0 <= view < ro.n_views and 0 <= frame < ro.n_frames):
            return JSONResponse({"error": "frame out of range"}, status_code=404)
        img = ro.frame(stream, view, frame)
        return Response(content=encode_frame_png(img), media_type="image/png")

    @app.post("/rollouts/{rollout_id}/decision")
    def decision(rollout_id: str, body: dict):
        status, payload = store.decide(rollout_id, body.get("action", ""), source="http")
        return JSONResponse(payload, status_code=status)

    return app


@dataclass
class GateConfig:
    gate: bool = True
    retry_limit: int = 5
    decision_timeout: float = 300.0


class GateRunner:
    """Drives the closed loop and publishes each planned chunk for review."""

    def __init__(self, policy, task: TaskSpec, sim_config, store: RolloutStore, gate_cfg: GateConfig, seed: int = 0):
        self.policy = policy
        self.task = task
        self.sim_config = sim_config
        self.store = store
        self.gate_cfg = gate_cfg
        self.seed = seed
        self.stop_requested = threading.Event()

    def _publish(self, trial: int, chunk_index: int, attempt: int, detail) -> Rollout:
        rollout = Rollout(
            id=f"t{trial:03d}c{chunk_index:03d}a{attempt:02d}",
            trial=trial,
            chunk_index=chunk_index,
            attempt=attempt,
            seed=detail.seed,
            chunk=detail.chunk,
            rgb_video=detail.rgb_video,
            heat_video=detail.heat_video,
        )
        return self.store.register(rollout)

    def run(self, trials: int) -> EvalResult:
        per_trial = []
        successes = 0
        for trial in range(trials):
            if self.stop_requested.is_set():
                break
            state, (cloud, pose) = reset(self.task, derive_seed(self.seed, "trial", trial), self.sim_config)
            succ = False
            steps = 0
            chunk_idx = 0
            aborted = False
            while steps < self.task.horizon and not succ and not aborted:
                approved = None
                for attempt in range(self.gate_cfg.retry_limit + 1):
                    plan_seed = derive_seed(self.seed, "plan", trial, chunk_idx, attempt)
                    detail = self.policy.plan_detailed(cloud, pose, plan_seed)
                    rollout = self._publish(trial, chunk_idx, attempt, detail)
                    if not self.gate_cfg.gate:
                        self.store.decide(rollout.id, "approve", source="auto")
                    decided = rollout.event.wait(self.gate_cfg.decision_timeout)
                    if not decided:
                        self.store.decide(rollout.id, "reject", source="timeout")
                    if rollout.state == APPROVED:
                        approved = rollout
                        break
                if approved is None:
                    aborted = True  # retries exhausted; trial counts as failure
                    break
                chunk = approved.chunk
                for k in range(chunk.length):
                    state, (cloud, pose), done, succ, info = step(state, chunk.pose_at(k))
                    steps += 1
                    if succ or steps >= self.task.horizon:
                        break
                self.store.mark_executed(approved.id)
                chunk_idx += 1
            if succ:
                successes += 1
            per_trial.append(
                {"trial": trial, "success": bool(succ), "steps": steps, "chunks": chunk_idx, "aborted": aborted}
            )
        return EvalResult(task_id=self.task.task_id, trials=len(per_trial), successes=successes, per_trial=per_trial)


class ServeSession:
    """A live HTTP server plus the gate runner, embeddable in tests and the CLI."""

    def __init__(self, policy, task, sim_config, out_dir, gate: bool = True, seed: int = 0,
                 host: str = "127.0.0.1", port: int = 0, retry_limit: int = 5,
                 decision_timeout: float = 300.0, ui_dir=None):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.store = RolloutStore(log_path=out_dir / "decisions.jsonl")
        self.runner = GateRunner(
            policy, task, sim_config, self.store,
            GateConfig(gate=gate, retry_limit=retry_limit, decision_timeout=decision_timeout),
            seed=seed,
        )
        self.app = create_app(self.store, ui_dir=ui_dir)
        self._config = uvicorn.Config(self.app, host=host, port=port, log_level="warning")
        self._server = uvicorn.Server(self._config)
        self._server_thread: threading.Thread | None = None
        self._runner_thread: threading.Thread | None = None
        self.result: EvalResult | None = None

    def start_http(self) -> str:
        self._server_thread = threading.Thread(target=self._server.run, daemon=True)
        self._server_thread.start()
        while not self._server.started:
            time.sleep(0.01)
        sock = self._server.servers[0].sockets[0]
        host, port = sock.getsockname()[:2]
        return f"http://{host}:{port}"

    def run_trials(self, trials: int, background: bool = False):
        if background:
            def _run():
                self.result = self.runner.run(trials)

            self._runner_thread = threading.Thread(target=_run, daemon=True)
            self._runner_thread.start()
            return None
        self.result = self.runner.run(trials)
        return self.result

    def wait(self, timeout: float | None = None) -> EvalResult | None:
        if self._runner_thread is not None:
            self._runner_thread.join(timeout)
        return self.result

    def shutdown(self) -> None:
        self.runner.stop_requested.set()
        self._server.should_exit = True
        if self._server_thread is not None:
            self._server_thread.join(timeout=5)
