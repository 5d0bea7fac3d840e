"""KSTAR encounter schema and state machine.

This is the pure symbolic heart of the agent: the record types for one
complete encounter (knowledge, situation, task, action, result), the
state machine that orders an in-flight encounter, validation of the
schema invariants, and a canonical JSON codec. Nothing here talks to a
model, a tool, or the filesystem.

An in-flight encounter is a single-owner object mutated by one logical
thread; completed records are frozen dataclasses and safe to share.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Optional

from .errors import NeolafError

# Default bounds for the starter kit. A subtask tree deeper than this is
# rejected, and an encounter may replan at most this many times.
DEFAULT_SUBTASK_DEPTH = 3
DEFAULT_REPLAN_BUDGET = 2


class IllegalTransition(NeolafError):
    """Raised when an event is not legal in the current phase."""

    def __init__(self, phase: "EncounterPhase", event: "EncounterEvent"):
        super().__init__(f"event {event.value} is illegal in phase {phase.value}")
        self.phase = phase
        self.event = event


class ReplanBudgetExhausted(NeolafError):
    """Raised when a replan would exceed the replan budget."""

    def __init__(self, replan_count: int, budget: int):
        super().__init__(f"replan budget exhausted ({replan_count} of {budget} used)")
        self.replan_count = replan_count
        self.budget = budget


class MalformedRecord(NeolafError):
    """Raised when record text cannot be parsed back into a record.

    ``position`` is the character offset for JSON syntax errors, or None
    for schema-level problems (the message then names the field).
    """

    def __init__(self, message: str, position: Optional[int] = None):
        suffix = f" (at position {position})" if position is not None else ""
        super().__init__(message + suffix)
        self.position = position


class SituationSource(str, Enum):
    USER = "user"
    HARNESS = "harness"
    AGENT = "agent"


class CoTaskState(str, Enum):
    PENDING = "pending"
    DONE = "done"
    SKIPPED = "skipped"


class StepStatus(str, Enum):
    PLANNED = "planned"
    EXECUTED = "executed"
    FAILED = "failed"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class Situation:
    """Context in which an encounter occurred."""

    description: str
    context_tags: tuple[str, ...] = ()
    source: SituationSource = SituationSource.USER


@dataclass(frozen=True)
class CoTasks:
    """Status of the three co-tasks implied by every task."""

    planning: CoTaskState = CoTaskState.PENDING
    forecasting: CoTaskState = CoTaskState.PENDING
    grounding: CoTaskState = CoTaskState.PENDING


@dataclass(frozen=True)
class TaskSpec:
    """A goal, optionally decomposed into an ordered subtask tree."""

    goal: str
    subtasks: tuple["TaskSpec", ...] = ()
    cotasks: CoTasks = field(default_factory=CoTasks)


@dataclass(frozen=True)
class ActionStep:
    """One planned or executed action in agent-skill-constraints form."""

    agent: str
    skill: str
    constraints: tuple[str, ...] = ()
    status: StepStatus = StepStatus.PLANNED
    observed_output: Optional[str] = None


@dataclass(frozen=True)
class Forecast:
    """Anticipated outcome produced before any action is taken."""

    expected_result: str
    success_probability: float


@dataclass(frozen=True)
class GroundingEvidence:
    """One tool invocation used to check an outcome against reality."""

    tool_name: str
    input: str
    output: str


@dataclass(frozen=True)
class Outcome:
    """What actually happened, and whether it counts as success."""

    actual_result: str
    success: bool
    grounding_evidence: tuple[GroundingEvidence, ...] = ()
    feedback: Optional[str] = None


@dataclass(frozen=True)
class EncounterMetrics:
    latency_ms: int = 0
    provider_calls: int = 0
    tool_calls: int = 0
    replans: int = 0


@dataclass(frozen=True)
class KstarRecord:
    """One complete encounter.

    ``knowledge_used`` and ``knowledge_delta`` hold knowledge item ids;
    they may be empty only for early encounters that had nothing to draw
    on or nothing new to say.
    """

    id: int
    timestamp: datetime
    knowledge_used: tuple[int, ...]
    situation: Situation
    task: TaskSpec
    plan: tuple[ActionStep, ...]
    forecast: Forecast
    outcome: Outcome
    knowledge_delta: tuple[int, ...]
    metrics: EncounterMetrics


# --------------------------------------------------------------------------
# Encounter state machine
# --------------------------------------------------------------------------


class EncounterPhase(str, Enum):
    CREATED = "Created"
    SITUATION_IDENTIFIED = "SituationIdentified"
    TASK_DEFINED = "TaskDefined"
    PLANNED = "Planned"
    FORECASTED = "Forecasted"
    EXECUTING = "Executing"
    EVALUATED = "Evaluated"
    ENCODED = "Encoded"


class EncounterEvent(str, Enum):
    IDENTIFY = "Identify"
    DEFINE_TASK = "DefineTask"
    PLAN = "Plan"
    FORECAST = "Forecast"
    BEGIN_EXECUTION = "BeginExecution"
    FINISH_EXECUTION = "FinishExecution"
    EVALUATE = "Evaluate"
    REPLAN = "Replan"
    ENCODE = "Encode"


@dataclass(frozen=True)
class EncounterState:
    """Position of an in-flight encounter plus its replan count."""

    phase: EncounterPhase = EncounterPhase.CREATED
    replan_count: int = 0


# The full legal-transition table. Execution finishing and evaluation are
# collapsed into the single Evaluate transition, so FinishExecution is
# never legal; forecasting must precede execution.
TRANSITIONS: dict[tuple[EncounterPhase, EncounterEvent], EncounterPhase] = {
    (EncounterPhase.CREATED, EncounterEvent.IDENTIFY): EncounterPhase.SITUATION_IDENTIFIED,
    (EncounterPhase.SITUATION_IDENTIFIED, EncounterEvent.DEFINE_TASK): EncounterPhase.TASK_DEFINED,
    (EncounterPhase.TASK_DEFINED, EncounterEvent.PLAN): EncounterPhase.PLANNED,
    (EncounterPhase.PLANNED, EncounterEvent.FORECAST): EncounterPhase.FORECASTED,
    (EncounterPhase.FORECASTED, EncounterEvent.BEGIN_EXECUTION): EncounterPhase.EXECUTING,
    (EncounterPhase.EXECUTING, EncounterEvent.EVALUATE): EncounterPhase.EVALUATED,
    (EncounterPhase.EVALUATED, EncounterEvent.REPLAN): EncounterPhase.PLANNED,
    (EncounterPhase.EVALUATED, EncounterEvent.ENCODE): EncounterPhase.ENCODED,
}


def advance(
    state: EncounterState,
    event: EncounterEvent,
    replan_budget: int = DEFAULT_REPLAN_BUDGET,
) -> EncounterState:
    """Apply one event to the encounter state machine.

    Returns the next state per the transition table. Replan increments
    the replan counter and is refused once the budget is used up; every
    (phase, event) pair absent from the table raises IllegalTransition.
    """
    event = EncounterEvent(event)
    next_phase = TRANSITIONS.get((state.phase, event))
    if next_phase is None:
        raise IllegalTransition(state.phase, event)
    if event is EncounterEvent.REPLAN:
        if state.replan_count >= replan_budget:
            raise ReplanBudgetExhausted(state.replan_count, replan_budget)
        return EncounterState(next_phase, state.replan_count + 1)
    return EncounterState(next_phase, state.replan_count)


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


def _walk_task(
    task: TaskSpec,
    depth: int,
    max_depth: int,
    path: str,
    seen: set[int],
    violations: list[str],
) -> None:
    if id(task) in seen:
        violations.append(f"{path} introduces a cycle in the subtask tree")
        return
    seen.add(id(task))
    if not task.goal.strip():
        violations.append(f"{path}.goal empty")
    if depth > max_depth:
        violations.append(f"{path} exceeds subtask depth {max_depth}")
        return
    for i, sub in enumerate(task.subtasks):
        _walk_task(sub, depth + 1, max_depth, f"{path}.subtasks[{i}]", seen, violations)
    seen.discard(id(task))


def validate_record(
    record: KstarRecord, max_depth: int = DEFAULT_SUBTASK_DEPTH
) -> list[str]:
    """Check every schema invariant and return all violations found.

    An empty list means the record is valid. Violations are data, not
    exceptions: callers decide whether to refuse the record.
    """
    v: list[str] = []

    if not isinstance(record.id, int) or isinstance(record.id, bool) or record.id < 1:
        v.append("id must be a positive integer")
    if record.timestamp.tzinfo is None:
        v.append("timestamp must be timezone-aware UTC")

    s = record.situation
    if not s.description.strip():
        v.append("situation.description empty")
    if any(t != t.lower() for t in s.context_tags):
        v.append("situation.context_tags must be lowercase")
    if len(set(s.context_tags)) != len(s.context_tags):
        v.append("situation.context_tags must be deduplicated")

    _walk_task(record.task, 0, max_depth, "task", set(), v)

    if not record.plan:
        v.append("plan empty: at least one action step is required")
    for i, step in enumerate(record.plan):
        if not step.agent.strip():
            v.append(f"plan[{i}].agent empty")
        if not step.skill.strip():
            v.append(f"plan[{i}].skill empty")
        has_output = step.observed_output is not None
        needs_output = step.status in (StepStatus.EXECUTED, StepStatus.FAILED)
        if needs_output and not has_output:
            v.append(f"plan[{i}].observed_output missing for status {step.status.value}")
        if not needs_output and has_output:
            v.append(f"plan[{i}].observed_output present for status {step.status.value}")

    if not record.forecast.expected_result.strip():
        v.append("forecast.expected_result empty")
    p = record.forecast.success_probability
    if not (0.0 <= p <= 1.0):
        v.append(f"forecast.success_probability {p} outside [0, 1]")

    o = record.outcome
    if not o.actual_result.strip():
        v.append("outcome.actual_result empty")
    grounding_required = record.task.cotasks.grounding != CoTaskState.SKIPPED
    if o.success and grounding_required and not o.grounding_evidence:
        v.append("outcome.grounding_evidence empty although success claims grounding")

    m = record.metrics
    for name in ("latency_ms", "provider_calls", "tool_calls", "replans"):
        if getattr(m, name) < 0:
            v.append(f"metrics.{name} negative")

    return v


# --------------------------------------------------------------------------
# Canonical serialization
# --------------------------------------------------------------------------
#
# One UTF-8 JSON object per record, keys in a fixed order so equal records
# produce identical bytes and logs stay diffable. Timestamps are RFC 3339.


def _task_to_dict(task: TaskSpec) -> dict[str, Any]:
    return {
        "goal": task.goal,
        "subtasks": [_task_to_dict(t) for t in task.subtasks],
        "cotasks": {
            "planning": task.cotasks.planning.value,
            "forecasting": task.cotasks.forecasting.value,
            "grounding": task.cotasks.grounding.value,
        },
    }


def record_to_dict(record: KstarRecord) -> dict[str, Any]:
    """Build the canonical dict form (fixed key order) of a record."""
    return {
        "id": record.id,
        "timestamp": record.timestamp.astimezone(timezone.utc).isoformat(),
        "knowledge_used": list(record.knowledge_used),
        "situation": {
            "description": record.situation.description,
            "context_tags": list(record.situation.context_tags),
            "source": record.situation.source.value,
        },
        "task": _task_to_dict(record.task),
        "plan": [
            {
                "agent": step.agent,
                "skill": step.skill,
                "constraints": list(step.constraints),
                "status": step.status.value,
                "observed_output": step.observed_output,
            }
            for step in record.plan
        ],
        "forecast": {
            "expected_result": record.forecast.expected_result,
            "success_probability": record.forecast.success_probability,
        },
        "outcome": {
            "actual_result": record.outcome.actual_result,
            "success": record.outcome.success,
            "grounding_evidence": [
                {"tool_name": e.tool_name, "input": e.input, "output": e.output}
                for e in record.outcome.grounding_evidence
            ],
            "feedback": record.outcome.feedback,
        },
        "knowledge_delta": list(record.knowledge_delta),
        "metrics": {
            "latency_ms": record.metrics.latency_ms,
            "provider_calls": record.metrics.provider_calls,
            "tool_calls": record.metrics.tool_calls,
            "replans": record.metrics.replans,
        },
    }


def serialize_record(record: KstarRecord) -> str:
    """Serialize to the canonical single-line JSON form."""
    return json.dumps(record_to_dict(record), ensure_ascii=False, separators=(",", ":"))


def _parse_timestamp(raw: str) -> datetime:
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        raise ValueError("timestamp missing timezone offset")
    return dt.astimezone(timezone.utc)


def _need(obj: dict[str, Any], key: str, path: str) -> Any:
    if key not in obj:
        raise MalformedRecord(f"missing field {path}.{key}")
    return obj[key]


def _task_from_dict(obj: dict[str, Any], path: str) -> TaskSpec:
    cot = _need(obj, "cotasks", path)
    try:
        cotasks = CoTasks(
            planning=CoTaskState(_need(cot, "planning", path + ".cotasks")),
            forecasting=CoTaskState(_need(cot, "forecasting", path + ".cotasks")),
            grounding=CoTaskState(_need(cot, "grounding", path + ".cotasks")),
        )
    except ValueError as exc:
        raise MalformedRecord(f"bad co-task state in {path}: {exc}") from exc
    return TaskSpec(
        goal=_need(obj, "goal", path),
        subtasks=tuple(
            _task_from_dict(t, f"{path}.subtasks[{i}]")
            for i, t in enumerate(_need(obj, "subtasks", path))
        ),
        cotasks=cotasks,
    )


def record_from_dict(obj: dict[str, Any]) -> KstarRecord:
    """Rebuild a record from its canonical dict form."""
    if not isinstance(obj, dict):
        raise MalformedRecord("record must be a JSON object")
    try:
        sit = _need(obj, "situation", "record")
        fc = _need(obj, "forecast", "record")
        out = _need(obj, "outcome", "record")
        met = _need(obj, "metrics", "record")
        return KstarRecord(
            id=_need(obj, "id", "record"),
            timestamp=_parse_timestamp(_need(obj, "timestamp", "record")),
            knowledge_used=tuple(_need(obj, "knowledge_used", "record")),
            situation=Situation(
                description=_need(sit, "description", "situation"),
                context_tags=tuple(_need(sit, "context_tags", "situation")),
                source=SituationSource(_need(sit, "source", "situation")),
            ),
            task=_task_from_dict(_need(obj, "task", "record"), "task"),
            plan=tuple(
                ActionStep(
                    agent=_need(s, "agent", f"plan[{i}]"),
                    skill=_need(s, "skill", f"plan[{i}]"),
                    constraints=tuple(_need(s, "constraints", f"plan[{i}]")),
                    status=StepStatus(_need(s, "status", f"plan[{i}]")),
                    observed_output=s.get("observed_output"),
                )
                for i, s in enumerate(_need(obj, "plan", "record"))
            ),
            forecast=Forecast(
                expected_result=_need(fc, "expected_result", "forecast"),
                success_probability=_need(fc, "success_probability", "forecast"),
            ),
            outcome=Outcome(
                actual_result=_need(out, "actual_result", "outcome"),
                success=_need(out, "success", "outcome"),
                grounding_evidence=tuple(
                    GroundingEvidence(
                        tool_name=_need(e, "tool_name", f"grounding_evidence[{i}]"),
                        input=_need(e, "input", f"grounding_evidence[{i}]"),
                        output=_need(e, "output", f"grounding_evidence[{i}]"),
                    )
                    for i, e in enumerate(_need(out, "grounding_evidence", "outcome"))
                ),
                feedback=out.get("feedback"),
            ),
            knowledge_delta=tuple(_need(obj, "knowledge_delta", "record")),
            metrics=EncounterMetrics(
                latency_ms=_need(met, "latency_ms", "metrics"),
                provider_calls=_need(met, "provider_calls", "metrics"),
                tool_calls=_need(met, "tool_calls", "metrics"),
                replans=_need(met, "replans", "metrics"),
            ),
        )
    except MalformedRecord:
        raise
    except (TypeError, ValueError, AttributeError) as exc:
        raise MalformedRecord(f"bad field value: {exc}") from exc


def deserialize_record(text: str) -> KstarRecord:
    """Parse canonical record text; inverse of :func:`serialize_record`."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON: {exc.msg}", position=exc.pos) from exc
    return record_from_dict(obj)
