"""The agent: starter-kit configuration, fast/slow routing, and the
slow-path loop that drives the encounter state machine.

The fast path is one completion with retrieved knowledge in context,
parsed for a self-reported confidence. The router escalates anything
below the kit threshold to the slow path, which walks the state machine
through identify, decompose, plan, forecast, execute, evaluate, and
encode, invoking tools for grounding and replanning on failure within
budget. Accepted fast-path answers are also encoded as lightweight
records so consolidation sees every encounter.

Request-builder functions are the complete prompt surface: fixtures and
tests construct the exact requests the loop will make by calling them.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Optional, Sequence

from .errors import NeolafError
from .kstar import (
    DEFAULT_REPLAN_BUDGET,
    DEFAULT_SUBTASK_DEPTH,
    ActionStep,
    CoTasks,
    CoTaskState,
    EncounterEvent,
    EncounterMetrics,
    EncounterState,
    Forecast,
    GroundingEvidence,
    KstarRecord,
    Outcome,
    Situation,
    SituationSource,
    StepStatus,
    TaskSpec,
    advance,
)
from .memory import (
    EpisodicStore,
    ValidationFailed,
    extract_knowledge,
    forecast_matched,
    render_plan,
)
from .provider import (
    Completion,
    CompletionProvider,
    Message,
    ProviderError,
    ProviderRequest,
    Role,
)
from .templates import DEFAULT_TEMPLATES, TEMPLATE_NAMES, render
from .toolkit import (
    MalformedDirective,
    ToolDirective,
    ToolRegistry,
    parse_tool_directive,
)
from . import calculator

DEFAULT_MAX_TOKENS = 1024


class ReviewRejected(NeolafError):
    """The human reviewer declined the proposed plan."""


class EncodingFailed(NeolafError):
    """The finished encounter failed validation at encode time (a bug)."""


class Route(str, Enum):
    SYSTEM1 = "system1"
    SYSTEM2 = "system2"


@dataclass(frozen=True)
class StarterKit:
    """The innate configuration an agent is instantiated from."""

    agent_name: str = "neolaf"
    system_prompt: str = (
        "You are a careful problem-solving agent. Follow the requested "
        "output format exactly."
    )
    route_threshold: float = 0.75
    d_max: int = DEFAULT_SUBTASK_DEPTH
    r_max: int = DEFAULT_REPLAN_BUDGET
    retrieval_k: int = 4
    context_token_budget: int = 256
    tool_allowlist: tuple[str, ...] = ("calc",)
    prompt_templates: dict = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))

    def __post_init__(self):
        if not 0.0 <= self.route_threshold <= 1.0:
            raise ValueError("route_threshold must be in [0, 1]")
        if self.d_max < 1 or self.r_max < 0:
            raise ValueError("d_max must be >= 1 and r_max >= 0")
        if self.retrieval_k < 0:
            raise ValueError("retrieval_k must be >= 0")
        if self.context_token_budget < 1:
            raise ValueError("context_token_budget must be positive")
        missing = [name for name in TEMPLATE_NAMES if name not in self.prompt_templates]
        if missing:
            raise ValueError(f"prompt_templates missing slots: {', '.join(missing)}")
        object.__setattr__(self, "prompt_templates", dict(self.prompt_templates))
        object.__setattr__(self, "tool_allowlist", tuple(self.tool_allowlist))


def default_kit(**overrides) -> StarterKit:
    return StarterKit(**overrides)


def kit_to_dict(kit: StarterKit) -> dict:
    return {
        "agent_name": kit.agent_name,
        "system_prompt": kit.system_prompt,
        "route_threshold": kit.route_threshold,
        "d_max": kit.d_max,
        "r_max": kit.r_max,
        "retrieval_k": kit.retrieval_k,
        "context_token_budget": kit.context_token_budget,
        "tool_allowlist": list(kit.tool_allowlist),
        "prompt_templates": dict(kit.prompt_templates),
    }


def kit_from_dict(obj: dict) -> StarterKit:
    """Build a kit from a JSON document; absent fields take defaults,
    absent template slots fall back to the built-in templates."""
    templates = dict(DEFAULT_TEMPLATES)
    templates.update(obj.get("prompt_templates", {}))
    base = default_kit()
    return StarterKit(
        agent_name=obj.get("agent_name", base.agent_name),
        system_prompt=obj.get("system_prompt", base.system_prompt),
        route_threshold=obj.get("route_threshold", base.route_threshold),
        d_max=obj.get("d_max", base.d_max),
        r_max=obj.get("r_max", base.r_max),
        retrieval_k=obj.get("retrieval_k", base.retrieval_k),
        context_token_budget=obj.get("context_token_budget", base.context_token_budget),
        tool_allowlist=tuple(obj.get("tool_allowlist", base.tool_allowlist)),
        prompt_templates=templates,
    )


def load_kit(path) -> StarterKit:
    import json

    with open(path, encoding="utf-8") as fh:
        return kit_from_dict(json.load(fh))


def save_kit(kit: StarterKit, path) -> None:
    import json
    from pathlib import Path

    Path(path).write_text(
        json.dumps(kit_to_dict(kit), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


@dataclass(frozen=True)
class Solution:
    answer: str
    explanation: str
    route: Route
    record_id: Optional[int]
    elapsed_ms: int
    provider_calls: int
    tool_calls: int


@dataclass(frozen=True)
class System1Result:
    answer: str
    explanation: str
    confidence: float


# --------------------------------------------------------------------------
# Request builders: the complete prompt surface of the agent
# --------------------------------------------------------------------------


def _request(kit: StarterKit, template_name: str, **subs: str) -> ProviderRequest:
    body = render(kit.prompt_templates[template_name], **subs)
    return ProviderRequest(
        messages=(
            Message(Role.SYSTEM, kit.system_prompt),
            Message(Role.USER, body),
        ),
        temperature=0.0,
        max_tokens=DEFAULT_MAX_TOKENS,
    )


def system1_request(kit, query, context=""):
    return _request(kit, "confidence", query=query, context=context)


def situation_request(kit, query, context=""):
    return _request(kit, "situation", query=query, context=context)


def decompose_request(kit, query, context=""):
    return _request(kit, "decompose", query=query, context=context)


def plan_request(kit, query, context=""):
    return _request(kit, "plan", query=query, context=context)


def forecast_request(kit, query, plan_text):
    return _request(kit, "forecast", query=query, plan=plan_text)


def execute_request(kit, query, context, step_line, step_output):
    return _request(
        kit, "execute", query=query, context=context, plan=step_line,
        step_output=step_output or "(none yet)",
    )


def evaluate_request(kit, query, expected, actual):
    return _request(kit, "evaluate", query=query, expected=expected, actual=actual)


# --------------------------------------------------------------------------
# Response parsing
# --------------------------------------------------------------------------


def parse_labeled_sections(text: str, labels: Sequence[str]) -> dict[str, str]:
    """Split a response into LABEL: sections; content may span lines."""
    sections: dict[str, str] = {}
    current: Optional[str] = None
    buffer: list[str] = []
    for line in text.splitlines():
        stripped = line.strip()
        matched = None
        for label in labels:
            if stripped.upper().startswith(label.upper() + ":"):
                matched = label
                break
        if matched is not None:
            if current is not None:
                sections[current] = "\n".join(buffer).strip()
            current = matched
            buffer = [stripped[len(matched) + 1 :].strip()]
        elif current is not None:
            buffer.append(line)
    if current is not None:
        sections[current] = "\n".join(buffer).strip()
    return sections


_FLOAT_RE = re.compile(r"[-+]?\d*\.?\d+")


def _parse_float(text: Optional[str]) -> Optional[float]:
    if not text:
        return None
    m = _FLOAT_RE.search(text)
    if m is None:
        return None
    try:
        return float(m.group(0))
    except ValueError:
        return None


_STEP_RE = re.compile(r"^\s*STEP\s+\d+\s*:\s*(.*)$", re.IGNORECASE)


def parse_plan(text: str) -> tuple[ActionStep, ...]:
    """Parse STEP lines into action steps.

    A response with no conforming STEP line becomes one free-text
    reasoning step (robustness over strictness), so chatty plans still
    execute.
    """
    steps = []
    for line in text.splitlines():
        m = _STEP_RE.match(line)
        if m is None:
            continue
        parts = [p.strip() for p in m.group(1).split("|")]
        if len(parts) == 1:
            agent, skill, raw_constraints = "self", parts[0], ""
        elif len(parts) == 2:
            agent, skill, raw_constraints = parts[0], parts[1], ""
        else:
            agent, skill, raw_constraints = parts[0], parts[1], " | ".join(parts[2:])
        if not skill:
            continue
        constraints = tuple(
            c.strip() for c in raw_constraints.split(",") if c.strip()
        )
        steps.append(ActionStep(agent=agent or "self", skill=skill, constraints=constraints))
    if not steps:
        body = text.strip()
        steps = [ActionStep(agent="self", skill=body or "reason about the task step by step")]
    return tuple(steps)


def parse_subtasks(text: str) -> tuple[TaskSpec, ...]:
    goals = []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("- ") and stripped[2:].strip():
            goals.append(stripped[2:].strip())
    return tuple(TaskSpec(goal=g) for g in goals)


def parse_forecast(text: str) -> Forecast:
    sections = parse_labeled_sections(text, ("EXPECTED", "PROBABILITY"))
    expected = sections.get("EXPECTED") or text.strip() or "no explicit expectation"
    probability = _parse_float(sections.get("PROBABILITY"))
    if probability is None:
        probability = 0.5
    return Forecast(
        expected_result=expected,
        success_probability=min(1.0, max(0.0, probability)),
    )


def parse_verdict(text: str) -> tuple[bool, Optional[str]]:
    sections = parse_labeled_sections(text, ("VERDICT", "FEEDBACK"))
    verdict = sections.get("VERDICT", "").lower()
    success = verdict.startswith("success") or verdict.startswith("yes")
    return success, sections.get("FEEDBACK") or None


# --------------------------------------------------------------------------
# Fast path and routing
# --------------------------------------------------------------------------


def knowledge_context(items, budget: int) -> str:
    """Format ranked knowledge items as a context block.

    Items append whole or not at all, in rank order, until the word
    budget would be exceeded.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    lines = []
    used = 0
    for item in items:
        line = f"- [{item.confidence:.2f}] {item.statement}"
        words = len(line.split())
        if used + words > budget:
            break
        lines.append(line)
        used += words
    return "\n".join(lines)


def system1_answer(
    query: str, context: str, kit: StarterKit, provider: CompletionProvider
) -> System1Result:
    """One fast-path completion, parsed for answer and self-confidence.

    A response that does not state a parseable confidence scores 0.0,
    which forces escalation to the slow path.
    """
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    completion = provider.complete(system1_request(kit, query, context))
    sections = parse_labeled_sections(
        completion.text, ("ANSWER", "EXPLANATION", "CONFIDENCE")
    )
    confidence = _parse_float(sections.get("CONFIDENCE"))
    if confidence is None:
        confidence = 0.0
    return System1Result(
        answer=sections.get("ANSWER") or completion.text.strip(),
        explanation=sections.get("EXPLANATION") or "",
        confidence=min(1.0, max(0.0, confidence)),
    )


def route(confidence: float, kit: StarterKit) -> Route:
    """Accept the fast answer iff confidence reaches the kit threshold."""
    return Route.SYSTEM1 if confidence >= kit.route_threshold else Route.SYSTEM2


# --------------------------------------------------------------------------
# Slow path
# --------------------------------------------------------------------------


class _Counters:
    def __init__(self):
        self.provider_calls = 0
        self.tool_calls = 0


class _CountingProvider(CompletionProvider):
    """Counts every completion attempt, successful or not."""

    def __init__(self, inner: CompletionProvider, counters: _Counters):
        self.inner = inner
        self.counters = counters
        self.name = inner.name

    def complete(self, request: ProviderRequest) -> Completion:
        self.counters.provider_calls += 1
        return self.inner.complete(request)


def _maybe_directive(line: str) -> Optional[ToolDirective]:
    # Inside LLM output, near-miss directive lines are prose, not errors.
    try:
        return parse_tool_directive(line)
    except MalformedDirective:
        return None


def _directive_input(directive: ToolDirective) -> str:
    import json

    return json.dumps(directive.args, ensure_ascii=False, sort_keys=True)


def _invoke(registry, allowlist, directive, counters):
    counters.tool_calls += 1
    if directive.tool_name not in allowlist:
        from .toolkit import ToolResult

        return ToolResult(
            output="", ok=False,
            error_detail=f"ToolNotAllowed: {directive.tool_name!r} is not in the kit allowlist",
        )
    return registry.invoke(directive.tool_name, directive.args)


def _step_line(step: ActionStep) -> str:
    parts = [step.agent, step.skill]
    if step.constraints:
        parts.append(", ".join(step.constraints))
    return " | ".join(parts)


def _execute_steps(kit, provider, registry, query, context, steps, counters):
    """Run plan steps in order.

    A step whose skill is a tool directive is invoked directly; other
    steps go to the provider, and directive lines in the response are
    invoked with their outputs folded into the step's observed output.
    The first failure marks the step failed and skips the rest.
    """
    evidence: list[GroundingEvidence] = []
    out_steps: list[ActionStep] = []
    prior_outputs: list[str] = []
    failed = False
    for step in steps:
        if failed:
            out_steps.append(replace(step, status=StepStatus.SKIPPED))
            continue
        directive = _maybe_directive(step.skill)
        if directive is not None:
            result = _invoke(registry, kit.tool_allowlist, directive, counters)
            if result.ok:
                evidence.append(
                    GroundingEvidence(directive.tool_name, _directive_input(directive), result.output)
                )
                prior_outputs.append(result.output)
                out_steps.append(
                    replace(step, status=StepStatus.EXECUTED, observed_output=result.output)
                )
            else:
                out_steps.append(
                    replace(step, status=StepStatus.FAILED,
                            observed_output=result.error_detail or "tool failed")
                )
                failed = True
            continue
        try:
            completion = provider.complete(
                execute_request(kit, query, context, _step_line(step), "\n".join(prior_outputs))
            )
        except ProviderError as exc:
            out_steps.append(
                replace(step, status=StepStatus.FAILED, observed_output=f"provider error: {exc}")
            )
            failed = True
            continue
        text = completion.text.strip()
        parts = [text] if text else []
        step_failed = False
        for line in completion.text.splitlines():
            inner = _maybe_directive(line)
            if inner is None:
                continue
            result = _invoke(registry, kit.tool_allowlist, inner, counters)
            if result.ok:
                evidence.append(
                    GroundingEvidence(inner.tool_name, _directive_input(inner), result.output)
                )
                parts.append(f"[{inner.tool_name}] {result.output}")
            else:
                parts.append(f"[{inner.tool_name}] failed: {result.error_detail}")
                step_failed = True
                break
        observed = "\n".join(parts) or "(no output)"
        out_steps.append(
            replace(
                step,
                status=StepStatus.FAILED if step_failed else StepStatus.EXECUTED,
                observed_output=observed,
            )
        )
        if step_failed:
            failed = True
        else:
            prior_outputs.append(observed)
    return tuple(out_steps), evidence


_ANSWER_MARK_RE = re.compile(r"^\s*ANSWER:\s*(.+)$", re.MULTILINE)


def _final_answer(steps, evidence) -> str:
    for step in reversed(steps):
        if step.observed_output:
            marks = _ANSWER_MARK_RE.findall(step.observed_output)
            if marks:
                return marks[-1].strip()
    if evidence:
        return evidence[-1].output.strip()
    for step in reversed(steps):
        if step.status is StepStatus.EXECUTED and step.observed_output:
            lines = [l.strip() for l in step.observed_output.splitlines() if l.strip()]
            if lines:
                return lines[-1]
    return ""


def _numeric_checkable(answer: str) -> bool:
    try:
        calculator.eval_expression(answer)
        return True
    except calculator.CalculatorError:
        return False


def _evaluate(kit, provider, registry, query, steps, forecast, evidence, counters):
    """Decide success, grounding the answer where possible.

    Returns (outcome, grounding co-task state, answer). Numeric answers
    are confirmed with the calculator unless a tool already produced
    them; everything else is judged by the evaluation prompt.
    """
    failed = [s for s in steps if s.status is StepStatus.FAILED]
    if failed:
        detail = failed[0].observed_output or "step failed"
        outcome = Outcome(
            actual_result=f"step '{failed[0].skill}' failed: {detail}",
            success=False,
            grounding_evidence=tuple(evidence),
            feedback=detail,
        )
        grounding = CoTaskState.DONE if evidence else CoTaskState.SKIPPED
        return outcome, grounding, ""

    answer = _final_answer(steps, evidence)
    if not answer:
        outcome = Outcome(
            actual_result="no answer was produced",
            success=False,
            grounding_evidence=tuple(evidence),
            feedback="the plan produced no usable output",
        )
        return outcome, CoTaskState.SKIPPED, ""

    if any(ev.output.strip() == answer for ev in evidence):
        # already grounded: the answer is a tool output
        outcome = Outcome(answer, True, tuple(evidence), None)
        return outcome, CoTaskState.DONE, answer

    calc_available = "calc" in kit.tool_allowlist and registry.describe("calc") is not None
    if calc_available and _numeric_checkable(answer):
        directive = ToolDirective("calc", {"expr": answer})
        result = _invoke(registry, kit.tool_allowlist, directive, counters)
        if result.ok:
            evidence.append(GroundingEvidence("calc", _directive_input(directive), result.output))
            outcome = Outcome(result.output, True, tuple(evidence), None)
            return outcome, CoTaskState.DONE, result.output
        outcome = Outcome(
            actual_result=f"answer '{answer}' failed grounding",
            success=False,
            grounding_evidence=tuple(evidence),
            feedback=result.error_detail,
        )
        return outcome, CoTaskState.DONE, answer

    try:
        completion = provider.complete(
            evaluate_request(kit, query, forecast.expected_result, answer)
        )
        success, feedback = parse_verdict(completion.text)
    except ProviderError as exc:
        success, feedback = False, f"evaluation unavailable: {exc}"
    outcome = Outcome(answer, success, tuple(evidence), feedback)
    return outcome, CoTaskState.SKIPPED, answer


def run_system2(
    query: str,
    kit: StarterKit,
    provider: CompletionProvider,
    registry: ToolRegistry,
    store: EpisodicStore,
    source: SituationSource = SituationSource.USER,
    plan_review: Optional[Callable[[tuple[ActionStep, ...]], bool]] = None,
    retrieved=None,
) -> tuple[Solution, KstarRecord]:
    """Drive one full slow-path encounter and encode it.

    Walks the encounter state machine in order, replanning after failed
    evaluations until the budget runs out. Failures are also experience:
    the record is encoded either way, with corrective knowledge captured
    from each failed attempt before replanning supersedes it.
    """
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    started = time.monotonic()
    counters = _Counters()
    counted = _CountingProvider(provider, counters)

    if retrieved is None:
        retrieved = store.retrieve(query, kit.retrieval_k)
    used_ids = tuple(item.id for item in retrieved)
    context = knowledge_context(retrieved, kit.context_token_budget)

    state = EncounterState()
    state = advance(state, EncounterEvent.IDENTIFY, kit.r_max)
    description = counted.complete(situation_request(kit, query, context)).text.strip()
    situation = Situation(
        description=description or f"User query: {query}",
        context_tags=(),
        source=source,
    )

    state = advance(state, EncounterEvent.DEFINE_TASK, kit.r_max)
    subtasks = parse_subtasks(counted.complete(decompose_request(kit, query, context)).text)

    state = advance(state, EncounterEvent.PLAN, kit.r_max)
    failure_note: Optional[str] = None
    failed_attempts: list[tuple[tuple[ActionStep, ...], Forecast, Outcome]] = []
    while True:
        plan_context = context
        if failure_note is not None:
            joiner = "\n" if context else ""
            plan_context = f"{context}{joiner}Previous attempt failed: {failure_note}"
        steps = parse_plan(counted.complete(plan_request(kit, query, plan_context)).text)
        if plan_review is not None and not plan_review(steps):
            raise ReviewRejected("plan rejected by reviewer")

        state = advance(state, EncounterEvent.FORECAST, kit.r_max)
        forecast = parse_forecast(
            counted.complete(forecast_request(kit, query, render_plan(steps))).text
        )

        state = advance(state, EncounterEvent.BEGIN_EXECUTION, kit.r_max)
        executed, evidence = _execute_steps(
            kit, counted, registry, query, plan_context, steps, counters
        )

        state = advance(state, EncounterEvent.EVALUATE, kit.r_max)
        outcome, grounding_state, answer = _evaluate(
            kit, counted, registry, query, executed, forecast, evidence, counters
        )
        if outcome.success or state.replan_count >= kit.r_max:
            break
        failed_attempts.append((executed, forecast, outcome))
        failure_note = outcome.feedback or outcome.actual_result
        state = advance(state, EncounterEvent.REPLAN, kit.r_max)

    task = TaskSpec(
        goal=query,
        subtasks=subtasks,
        cotasks=CoTasks(
            planning=CoTaskState.DONE,
            forecasting=CoTaskState.DONE,
            grounding=grounding_state,
        ),
    )
    state = advance(state, EncounterEvent.ENCODE, kit.r_max)

    draft = KstarRecord(
        id=0,
        timestamp=datetime.now(timezone.utc),
        knowledge_used=used_ids,
        situation=situation,
        task=task,
        plan=executed,
        forecast=forecast,
        outcome=outcome,
        knowledge_delta=(),
        metrics=EncounterMetrics(),
    )
    new_items = []
    for a_steps, a_forecast, a_outcome in failed_attempts:
        snapshot = replace(draft, plan=a_steps, forecast=a_forecast, outcome=a_outcome)
        new_items.extend(extract_knowledge(snapshot))
    new_items.extend(
        extract_knowledge(
            draft,
            provider=counted,
            distill_template=kit.prompt_templates["distill"],
            system_prompt=kit.system_prompt,
        )
    )

    latency_ms = int((time.monotonic() - started) * 1000)
    metrics = EncounterMetrics(
        latency_ms=latency_ms,
        provider_calls=counters.provider_calls,
        tool_calls=counters.tool_calls,
        replans=state.replan_count,
    )
    with store.lock:
        record_id = store.next_record_id()
        delta = tuple(
            store.add_knowledge(replace(item, provenance=(record_id,)))
            for item in new_items
        )
        record = replace(draft, knowledge_delta=delta, metrics=metrics)
        try:
            stored_id = store.store_record(record)
        except ValidationFailed as exc:
            raise EncodingFailed(str(exc)) from exc
        record = replace(record, id=stored_id)
        if record.outcome.success and forecast_matched(record) and used_ids:
            store.boost_confidence(used_ids)

    explanation = "\n".join(
        step.observed_output for step in executed if step.observed_output
    )
    solution = Solution(
        answer=answer,
        explanation=explanation,
        route=Route.SYSTEM2,
        record_id=stored_id,
        elapsed_ms=latency_ms,
        provider_calls=counters.provider_calls,
        tool_calls=counters.tool_calls,
    )
    return solution, record


def _lightweight_record(query, source, result: System1Result, used_ids, latency_ms):
    answer_text = result.answer.strip() or "(no answer text)"
    return KstarRecord(
        id=0,
        timestamp=datetime.now(timezone.utc),
        knowledge_used=used_ids,
        situation=Situation(description=query, context_tags=(), source=source),
        task=TaskSpec(
            goal=query,
            subtasks=(),
            cotasks=CoTasks(
                planning=CoTaskState.SKIPPED,
                forecasting=CoTaskState.SKIPPED,
                grounding=CoTaskState.SKIPPED,
            ),
        ),
        plan=(
            ActionStep(
                agent="self",
                skill="answer directly from prior knowledge",
                status=StepStatus.EXECUTED,
                observed_output=answer_text,
            ),
        ),
        forecast=Forecast(
            expected_result=f"confident direct answer: {answer_text}",
            success_probability=result.confidence,
        ),
        outcome=Outcome(actual_result=answer_text, success=True),
        knowledge_delta=(),
        metrics=EncounterMetrics(
            latency_ms=latency_ms, provider_calls=1, tool_calls=0, replans=0
        ),
    )


def solve(
    query: str,
    kit: StarterKit,
    provider: CompletionProvider,
    registry: ToolRegistry,
    store: EpisodicStore,
    source: SituationSource = SituationSource.USER,
    system1_only: bool = False,
    plan_review: Optional[Callable[[tuple[ActionStep, ...]], bool]] = None,
) -> Solution:
    """Answer a query by the fast path, escalating to the slow path when
    self-confidence falls below the kit threshold.

    With ``system1_only`` the fast answer is accepted unconditionally
    (the comparison baseline). Either way the encounter is encoded.
    """
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    started = time.monotonic()
    counters = _Counters()
    counted = _CountingProvider(provider, counters)

    retrieved = store.retrieve(query, kit.retrieval_k)
    context = knowledge_context(retrieved, kit.context_token_budget)
    result = system1_answer(query, context, kit, counted)

    decision = Route.SYSTEM1 if system1_only else route(result.confidence, kit)
    if decision is Route.SYSTEM1:
        latency_ms = int((time.monotonic() - started) * 1000)
        record = _lightweight_record(
            query, source, result, tuple(item.id for item in retrieved), latency_ms
        )
        record_id = store.store_record(record)
        return Solution(
            answer=result.answer,
            explanation=result.explanation,
            route=Route.SYSTEM1,
            record_id=record_id,
            elapsed_ms=latency_ms,
            provider_calls=counters.provider_calls,
            tool_calls=counters.tool_calls,
        )

    slow, _record = run_system2(
        query,
        kit,
        provider,
        registry,
        store,
        source=source,
        plan_review=plan_review,
        retrieved=retrieved,
    )
    elapsed_ms = int((time.monotonic() - started) * 1000)
    return replace(
        slow,
        elapsed_ms=elapsed_ms,
        provider_calls=slow.provider_calls + counters.provider_calls,
        tool_calls=slow.tool_calls + counters.tool_calls,
    )
