"""Wire schemas for the session service.

Every top-level message carries a version field ``v`` (currently 1) and rejects
unknown fields, so stale clients fail loudly instead of silently dropping data.
All floats must be finite; serialize -> parse is an identity for every model.
"""

from __future__ import annotations

from typing import Annotated, Any, Literal, Mapping

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .study import CONDITION_LABELS, LINGER_FRAMES, TRIAL_TICKS
from .world import N_RAYS, N_SECTORS, SceneFormatError, scene_from_dict

WIRE_VERSION = 1

ERROR_CODES = ("unknown-session", "out-of-phase", "bad-ranking")

Finite = Annotated[float, Field(allow_inf_nan=False)]
Phase = Literal["running", "linger", "awaiting-ranking"]
SessionPhase = Literal["idle", "ready", "running", "linger", "awaiting-ranking", "done"]


class _Message(BaseModel):
    model_config = ConfigDict(extra="forbid")

    v: Literal[1] = WIRE_VERSION


class PosePayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    x: Finite
    y: Finite
    heading: Finite


class ActionPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    v: Finite
    omega: Finite


class ConditionPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label: Literal["xai+lidar", "xai", "lidar", "none"]
    xai_visible: bool
    lidar_visible: bool

    @model_validator(mode="after")
    def _label_matches_flags(self) -> "ConditionPayload":
        want = CONDITION_LABELS[(self.xai_visible, self.lidar_visible)]
        if self.label != want:
            raise ValueError(f"condition label {self.label!r} does not match flags")
        return self


class SessionCreateRequest(_Message):
    participant: int | None = Field(default=None, ge=0)


class CursorPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    block: int = Field(ge=0)
    trial: int = Field(ge=0)


class SessionInfo(_Message):
    session_id: str
    participant: int = Field(ge=0)
    n_blocks: int = Field(ge=1)
    trials_per_block: int = Field(ge=1)
    block_order: tuple[ConditionPayload, ...]
    phase: SessionPhase
    cursor: CursorPayload | None
    completed: int = Field(ge=0)


class TrialInfo(_Message):
    session_id: str
    block: int = Field(ge=0)
    trial: int = Field(ge=0)
    condition: ConditionPayload
    scenario_id: str
    scene: dict[str, Any]
    objects: tuple[str, ...]
    n_running_frames: int = Field(ge=1, le=TRIAL_TICKS)
    n_linger_frames: int = Field(ge=0, le=LINGER_FRAMES)

    @field_validator("scene")
    @classmethod
    def _scene_is_wellformed(cls, value: dict[str, Any]) -> dict[str, Any]:
        try:
            scene_from_dict(value)
        except SceneFormatError as exc:
            raise ValueError(f"malformed scene payload: {exc}") from exc
        return value

    @field_validator("objects")
    @classmethod
    def _objects_unique(cls, value: tuple[str, ...]) -> tuple[str, ...]:
        if len(set(value)) != len(value):
            raise ValueError("duplicate object ids")
        return value


class FramePacket(_Message):
    """One streamed display frame.

    Attribution and lidar data are always present; ``xai_visible`` and
    ``lidar_visible`` tell the client whether to draw them. The server is
    authoritative about gating, the client only mirrors it.
    """

    type: Literal["frame"] = "frame"
    timestep: int = Field(ge=0)
    phase: Phase
    pose: PosePayload
    action: ActionPayload
    ray_endpoints: tuple[tuple[Finite, Finite], ...]
    ray_hits: tuple[bool, ...]
    g_star: tuple[Annotated[float, Field(ge=0.0, le=1.0, allow_inf_nan=False)], ...]
    object_scores: dict[str, Finite]
    outline_widths: dict[str, Finite]
    xai_visible: bool
    lidar_visible: bool

    @field_validator("ray_endpoints")
    @classmethod
    def _endpoint_count(cls, value: tuple) -> tuple:
        if len(value) != N_RAYS:
            raise ValueError(f"expected {N_RAYS} ray endpoints, got {len(value)}")
        return value

    @field_validator("ray_hits")
    @classmethod
    def _hit_count(cls, value: tuple) -> tuple:
        if len(value) != N_RAYS:
            raise ValueError(f"expected {N_RAYS} hit flags, got {len(value)}")
        return value

    @field_validator("g_star")
    @classmethod
    def _sector_count(cls, value: tuple) -> tuple:
        if len(value) != N_SECTORS:
            raise ValueError(f"expected {N_SECTORS} sector scores, got {len(value)}")
        return value

    @model_validator(mode="after")
    def _widths_match_scores(self) -> "FramePacket":
        if set(self.outline_widths) != set(self.object_scores):
            raise ValueError("outline_widths keys differ from object_scores keys")
        return self


class PhaseMessage(_Message):
    """Marks a phase transition that is not itself a frame."""

    type: Literal["phase"] = "phase"
    phase: Phase


class RankingSubmission(_Message):
    ranking: tuple[str, ...] = Field(min_length=1)

    @field_validator("ranking")
    @classmethod
    def _unique(cls, value: tuple[str, ...]) -> tuple[str, ...]:
        if len(set(value)) != len(value):
            raise ValueError("duplicate ids in ranking")
        return value


class RankingResult(_Message):
    session_id: str
    block: int = Field(ge=0)
    trial: int = Field(ge=0)
    scenario_id: str
    ranking: tuple[str, ...]
    tau: Annotated[float, Field(ge=-1.0, le=1.0, allow_inf_nan=False)]


class ConditionStatsPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mean: Finite
    sd: Annotated[float, Field(ge=0.0, allow_inf_nan=False)]
    n: int = Field(ge=1)


class ResultsSummary(_Message):
    session_id: str
    participant: int = Field(ge=0)
    completed: int = Field(ge=0)
    total: int = Field(ge=1)
    per_condition: dict[str, ConditionStatsPayload]

    @field_validator("per_condition")
    @classmethod
    def _known_labels(cls, value: Mapping[str, ConditionStatsPayload]):
        unknown = set(value) - set(CONDITION_LABELS.values())
        if unknown:
            raise ValueError(f"unknown condition labels: {sorted(unknown)}")
        return dict(value)


class ErrorEnvelope(_Message):
    code: Literal["unknown-session", "out-of-phase", "bad-ranking"]
    message: str


WIRE_SCHEMAS: tuple[type[BaseModel], ...] = (
    SessionCreateRequest,
    SessionInfo,
    TrialInfo,
    FramePacket,
    PhaseMessage,
    RankingSubmission,
    RankingResult,
    ResultsSummary,
    ErrorEnvelope,
)


def parse_stream_message(raw: str | bytes) -> FramePacket | PhaseMessage:
    """Parse one websocket text message into its typed form."""
    import json

    data = json.loads(raw)
    if not isinstance(data, dict) or "type" not in data:
        raise ValueError("stream message must be an object with a 'type' field")
    if data["type"] == "frame":
        return FramePacket.model_validate(data)
    if data["type"] == "phase":
        return PhaseMessage.model_validate(data)
    raise ValueError(f"unknown stream message type {data['type']!r}")
