"""Session service: serves counterbalanced trial plans, streams frames, scores rankings.

The server is the single source of truth. Frames are fully precomputed per
trial and pushed over a websocket on a wall-clock ticker, so the stream content
is deterministic regardless of network timing; clients only render and submit.
"""

from __future__ import annotations

import asyncio
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse

from .attribution import AttributionFrame
from .protocol import (
    ConditionPayload,
    ConditionStatsPayload,
    CursorPayload,
    ErrorEnvelope,
    FramePacket,
    PhaseMessage,
    RankingResult,
    RankingSubmission,
    ResultsSummary,
    SessionCreateRequest,
    SessionInfo,
    TrialInfo,
)
from .study import (
    LINGER_FRAMES,
    N_BLOCKS,
    N_SCENARIOS,
    TRIALS_PER_BLOCK,
    Condition,
    Scenario,
    StudyPlan,
    StudyResultRow,
    TrialRecord,
    aggregate,
    make_study_plan,
    results_csv_text,
    run_trial,
    score_ranking,
)
from .world import N_RAYS, scene_to_dict

_STATUS = {"unknown-session": 404, "out-of-phase": 409, "bad-ranking": 422}


class ServiceError(Exception):
    """Maps to an ErrorEnvelope response with a machine-readable code."""

    def __init__(self, code: str, message: str):
        if code not in _STATUS:
            raise ValueError(f"unknown error code {code!r}")
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = _STATUS[code]

    def envelope(self) -> ErrorEnvelope:
        return ErrorEnvelope(code=self.code, message=self.message)


def _condition_payload(c: Condition) -> ConditionPayload:
    return ConditionPayload(
        label=c.label, xai_visible=c.xai_visible, lidar_visible=c.lidar_visible
    )


def _frame_data(frame: AttributionFrame) -> dict:
    """Condition-independent payload fields for one frame."""
    pose = frame.pose
    angles = pose.heading + (2.0 * math.pi / N_RAYS) * np.arange(N_RAYS)
    ex = pose.x + np.cos(angles) * frame.scan.distances
    ey = pose.y + np.sin(angles) * frame.scan.distances
    scores = frame.importance.scores
    return {
        "pose": {"x": pose.x, "y": pose.y, "heading": pose.heading},
        "action": {"v": frame.action.v, "omega": frame.action.omega},
        "ray_endpoints": [(float(x), float(y)) for x, y in zip(ex, ey)],
        "ray_hits": [bool(h) for h in frame.scan.hit_index >= 0],
        "g_star": [float(g) for g in frame.processed.g_star],
        "object_scores": {oid: float(scores[oid]) for oid in sorted(scores)},
        "outline_widths": {
            oid: float(frame.outline_widths[oid]) for oid in sorted(frame.outline_widths)
        },
    }


@dataclass
class _SessionState:
    session_id: str
    participant: int
    plan: StudyPlan
    phase: str = "idle"  # idle|ready|running|linger|awaiting-ranking|done
    block: int = -1
    trial: int = -1
    records: dict[tuple[int, int], TrialRecord] = field(default_factory=dict)
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)

    @property
    def cursor_payload(self) -> CursorPayload | None:
        if self.block < 0:
            return None
        return CursorPayload(block=self.block, trial=self.trial)

    @property
    def completed(self) -> int:
        return sum(1 for r in self.records.values() if r.tau is not None)

    def current_record(self) -> TrialRecord:
        return self.records[(self.block, self.trial)]

    def result_rows(self) -> list[StudyResultRow]:
        rows = []
        for (b, t) in sorted(self.records):
            rec = self.records[(b, t)]
            if rec.tau is None:
                continue
            rows.append(
                StudyResultRow(
                    participant=self.participant,
                    block=b,
                    condition=rec.condition,
                    trial=t,
                    scenario_id=rec.scenario_id,
                    tau=rec.tau,
                )
            )
        return rows

    def info(self) -> SessionInfo:
        return SessionInfo(
            session_id=self.session_id,
            participant=self.participant,
            n_blocks=N_BLOCKS,
            trials_per_block=TRIALS_PER_BLOCK,
            block_order=tuple(_condition_payload(c) for c in self.plan.block_order),
            phase=self.phase,
            cursor=self.cursor_payload,
            completed=self.completed,
        )


class SessionManager:
    """All mutable service state; one instance per app."""

    def __init__(self, policy, scenarios: list[Scenario], *, seed: int = 0):
        by_id = {s.id: s for s in scenarios}
        if len(by_id) != N_SCENARIOS:
            raise ValueError(f"need exactly {N_SCENARIOS} uniquely-identified scenarios")
        self.policy = policy
        self.scenarios = by_id
        self.seed = seed
        self.sessions: dict[str, _SessionState] = {}
        self._counter = itertools.count()
        self._next_participant = itertools.count()
        self._rollouts: dict[str, TrialRecord] = {}
        self._frame_cache: dict[str, list[dict]] = {}

    # -- session lifecycle ------------------------------------------------

    def create(self, participant: int | None) -> _SessionState:
        if participant is None:
            participant = next(self._next_participant)
        plan = make_study_plan(participant, sorted(self.scenarios), seed=self.seed)
        sid = f"sess-{next(self._counter):04d}"
        state = _SessionState(session_id=sid, participant=participant, plan=plan)
        self.sessions[sid] = state
        return state

    def get(self, sid: str) -> _SessionState:
        state = self.sessions.get(sid)
        if state is None:
            raise ServiceError("unknown-session", f"no session {sid!r}")
        return state

    # -- trial advancement ------------------------------------------------

    def _rollout(self, scenario_id: str) -> TrialRecord:
        if scenario_id not in self._rollouts:
            scenario = self.scenarios[scenario_id]
            # dynamics and attribution do not depend on the condition
            self._rollouts[scenario_id] = run_trial(
                self.policy, scenario, Condition(xai_visible=True, lidar_visible=True)
            )
        return self._rollouts[scenario_id]

    def advance(self, state: _SessionState) -> TrialInfo:
        if state.phase == "idle":
            state.block, state.trial = 0, 0
        elif state.phase == "awaiting-ranking":
            if state.current_record().tau is None:
                raise ServiceError("out-of-phase", "submit a ranking before advancing")
            if state.trial + 1 < TRIALS_PER_BLOCK:
                state.trial += 1
            elif state.block + 1 < N_BLOCKS:
                state.block, state.trial = state.block + 1, 0
            else:
                state.phase = "done"
                raise ServiceError("out-of-phase", "session complete")
        elif state.phase == "done":
            raise ServiceError("out-of-phase", "session complete")
        else:
            raise ServiceError(
                "out-of-phase", f"cannot advance while phase is {state.phase!r}"
            )
        condition = state.plan.block_order[state.block]
        sid = state.plan.block_scenarios[state.block][state.trial]
        record = replace(self._rollout(sid), condition=condition)
        state.records[(state.block, state.trial)] = record
        state.phase = "ready"
        return self.trial_info(state)

    def trial_info(self, state: _SessionState) -> TrialInfo:
        record = state.current_record()
        scenario = self.scenarios[record.scenario_id]
        return TrialInfo(
            session_id=state.session_id,
            block=state.block,
            trial=state.trial,
            condition=_condition_payload(record.condition),
            scenario_id=record.scenario_id,
            scene=scene_to_dict(scenario.scene),
            objects=tuple(sorted(scenario.scene.obstacle_ids)),
            n_running_frames=len(record.frames),
            n_linger_frames=LINGER_FRAMES,
        )

    # -- frame packets ----------------------------------------------------

    def _frame_datas(self, scenario_id: str) -> list[dict]:
        if scenario_id not in self._frame_cache:
            record = self._rollout(scenario_id)
            self._frame_cache[scenario_id] = [_frame_data(f) for f in record.frames]
        return self._frame_cache[scenario_id]

    def packets(self, state: _SessionState) -> list[FramePacket]:
        """Running frames then linger repeats of the frozen frame."""
        record = state.current_record()
        datas = self._frame_datas(record.scenario_id)
        cond = record.condition
        out = []
        for t, data in enumerate(datas):
            out.append(
                FramePacket(
                    timestep=t,
                    phase="running",
                    xai_visible=cond.xai_visible,
                    lidar_visible=cond.lidar_visible,
                    **data,
                )
            )
        frozen = datas[-1]
        for k in range(LINGER_FRAMES):
            out.append(
                FramePacket(
                    timestep=len(datas) + k,
                    phase="linger",
                    xai_visible=cond.xai_visible,
                    lidar_visible=cond.lidar_visible,
                    **frozen,
                )
            )
        return out

    # -- scoring ----------------------------------------------------------

    def submit(self, state: _SessionState, submission: RankingSubmission) -> RankingResult:
        if state.phase != "awaiting-ranking":
            raise ServiceError(
                "out-of-phase", f"cannot submit while phase is {state.phase!r}"
            )
        record = state.current_record()
        want = set(record.ground_truth)
        got = list(submission.ranking)
        if set(got) != want or len(got) != len(want):
            raise ServiceError(
                "bad-ranking",
                f"ranking must be a permutation of {sorted(want)}",
            )
        tau = score_ranking(record, got)
        # idempotent until the cursor advances: resubmission replaces
        state.records[(state.block, state.trial)] = replace(
            record, submitted_ranking=tuple(got), tau=tau
        )
        return RankingResult(
            session_id=state.session_id,
            block=state.block,
            trial=state.trial,
            scenario_id=record.scenario_id,
            ranking=tuple(got),
            tau=tau,
        )

    def results(self, state: _SessionState) -> ResultsSummary:
        rows = state.result_rows()
        per_condition = {}
        if rows:
            summary = aggregate(rows)
            per_condition = {
                label: ConditionStatsPayload(mean=s.mean, sd=s.sd, n=s.n)
                for label, s in sorted(summary.per_condition.items())
            }
        return ResultsSummary(
            session_id=state.session_id,
            participant=state.participant,
            completed=len(rows),
            total=N_BLOCKS * TRIALS_PER_BLOCK,
            per_condition=per_condition,
        )


def create_app(
    policy,
    scenarios: list[Scenario],
    *,
    seed: int = 0,
    frame_interval_s: float = 0.1,
) -> FastAPI:
    """Build the service; frame_interval_s = 0 streams without pacing (tests)."""
    app = FastAPI(title="navxai session service")
    manager = SessionManager(policy, scenarios, seed=seed)
    app.state.manager = manager

    @app.exception_handler(ServiceError)
    async def _service_error(_, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content=exc.envelope().model_dump())

    @app.post("/sessions", response_model=SessionInfo)
    async def create_session(req: SessionCreateRequest) -> SessionInfo:
        return manager.create(req.participant).info()

    @app.get("/sessions/{sid}", response_model=SessionInfo)
    async def get_session(sid: str) -> SessionInfo:
        return manager.get(sid).info()

    @app.post("/sessions/{sid}/trials/next", response_model=TrialInfo)
    async def next_trial(sid: str) -> TrialInfo:
        state = manager.get(sid)
        async with state.lock:
            return manager.advance(state)

    @app.post("/sessions/{sid}/ranking", response_model=RankingResult)
    async def submit_ranking(sid: str, submission: RankingSubmission) -> RankingResult:
        state = manager.get(sid)
        async with state.lock:
            return manager.submit(state, submission)

    @app.get("/sessions/{sid}/results", response_model=ResultsSummary)
    async def get_results(sid: str) -> ResultsSummary:
        return manager.results(manager.get(sid))

    @app.get("/sessions/{sid}/export")
    async def export(sid: str) -> PlainTextResponse:
        state = manager.get(sid)
        return PlainTextResponse(
            results_csv_text(state.result_rows()), media_type="text/csv"
        )

    @app.websocket("/sessions/{sid}/stream")
    async def stream(ws: WebSocket, sid: str):
        await ws.accept()
        try:
            state = manager.get(sid)
            if state.phase not in ("ready", "running", "linger"):
                raise ServiceError(
                    "out-of-phase", f"cannot stream while phase is {state.phase!r}"
                )
        except ServiceError as exc:
            await ws.send_text(exc.envelope().model_dump_json())
            await ws.close(code=1008)
            return
        packets = manager.packets(state)
        try:
            for packet in packets:
                state.phase = packet.phase
                await ws.send_text(packet.model_dump_json())
                if frame_interval_s > 0:
                    await asyncio.sleep(frame_interval_s)
            state.phase = "awaiting-ranking"
            await ws.send_text(PhaseMessage(phase="awaiting-ranking").model_dump_json())
            await ws.close()
        except WebSocketDisconnect:
            # mid-stream drop: phase stays running/linger, so the client
            # may reconnect and restart the stream from frame zero
            pass

    return app
