"""Evaluation harness: dataset loading, answer checking, eval runs,
and configuration comparison.

Problems come in the open math-dataset layout (one JSON file per problem
with ``problem``/``level``/``type``/``solution`` fields, nested in
subject directories) or as JSON Lines. Reference answers are extracted
from the last boxed region of the worked solution; problems whose answer
cannot be extracted are loaded with an empty reference and excluded from
accuracy denominators.

Answer equality is string equality after normalization, falling back to
exact rational comparison (or 1e-6 relative float agreement) when both
sides parse as arithmetic expressions. Symbolic equivalence is out of
scope: "x+1" and "1+x" are unequal.
"""

from __future__ import annotations

import json
import math
import re
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from . import calculator
from .cognition import StarterKit, solve
from .errors import NeolafError
from .kstar import SituationSource
from .memory import EpisodicStore
from .provider import CompletionProvider, ProviderError
from .toolkit import ToolRegistry, default_registry


class FormatError(NeolafError):
    def __init__(self, message: str, file: str, line: Optional[int] = None):
        location = f"{file}:{line}" if line is not None else file
        super().__init__(f"{location}: {message}")
        self.file = file
        self.line = line


class NoFinalAnswer(NeolafError):
    """The solution text contains no balanced boxed answer."""


@dataclass(frozen=True)
class Problem:
    id: str
    statement: str
    reference_solution: str
    reference_answer: str
    level: Optional[str] = None
    subject: Optional[str] = None


# --------------------------------------------------------------------------
# Answer extraction and normalization
# --------------------------------------------------------------------------

_BOXED = "\\boxed{"


def _balanced_braces(text: str, open_index: int) -> Optional[str]:
    depth = 0
    for i in range(open_index, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return text[open_index + 1 : i]
    return None


def extract_final_answer(solution_text: str) -> str:
    """Normalized content of the last balanced boxed region."""
    position = len(solution_text)
    while True:
        position = solution_text.rfind(_BOXED, 0, position)
        if position < 0:
            raise NoFinalAnswer("no boxed answer found")
        inner = _balanced_braces(solution_text, position + len(_BOXED) - 1)
        if inner is not None:
            return normalize_answer(inner)
        # unbalanced region: keep scanning earlier occurrences


def _wrap_part(part: str) -> str:
    if not part:
        return part
    if part.startswith("(") and part.endswith(")"):
        return part
    if all(c.isalnum() or c in "._" for c in part):
        return part
    return f"({part})"


def _rewrite_frac(text: str) -> str:
    marker = "\\frac{"
    found = text.find(marker)
    if found < 0:
        return text
    brace = found + len(marker) - 1
    numerator = _balanced_braces(text, brace)
    if numerator is None:
        return text
    after = brace + len(numerator) + 2
    if after >= len(text) or text[after] != "{":
        # missing denominator group: leave the command verbatim
        return text[:after] + _rewrite_frac(text[after:])
    denominator = _balanced_braces(text, after)
    if denominator is None:
        return text
    rest = after + len(denominator) + 2
    p = _wrap_part(_rewrite_all(numerator))
    q = _wrap_part(_rewrite_all(denominator))
    return text[:found] + f"{p}/{q}" + _rewrite_frac(text[rest:])


def _rewrite_sqrt(text: str) -> str:
    marker = "\\sqrt{"
    found = text.find(marker)
    if found < 0:
        return text
    brace = found + len(marker) - 1
    inner = _balanced_braces(text, brace)
    if inner is None:
        return text
    rest = brace + len(inner) + 2
    return text[:found] + f"sqrt({_rewrite_all(inner)})" + _rewrite_sqrt(text[rest:])


def _rewrite_all(text: str) -> str:
    return _rewrite_sqrt(_rewrite_frac(text))


def normalize_answer(raw: str) -> str:
    """Canonical form of an answer string. Idempotent."""
    s = raw.strip()
    s = s.replace("$", "")
    s = s.replace("\\left", "").replace("\\right", "")
    s = re.sub(r"^(?:the\s+)?(?:final\s+)?answer\s+is\s*:?\s*", "", s, flags=re.IGNORECASE)
    s = _rewrite_all(s)
    s = re.sub(r"\s+", " ", s)
    return s.strip()


def _try_number(text: str):
    if not text:
        return None
    try:
        return calculator.eval_expression(text)
    except calculator.CalculatorError:
        return None


def answers_equal(a: str, b: str) -> bool:
    """Equality after normalization, with a numeric fallback."""
    na, nb = normalize_answer(a), normalize_answer(b)
    if na == nb:
        return True
    va, vb = _try_number(na), _try_number(nb)
    if va is None or vb is None:
        return False
    if isinstance(va, Fraction) and isinstance(vb, Fraction):
        return va == vb
    try:
        return math.isclose(float(va), float(vb), rel_tol=1e-6, abs_tol=0.0)
    except OverflowError:
        return False


# --------------------------------------------------------------------------
# Dataset loading
# --------------------------------------------------------------------------


def _problem_from_fields(obj: dict, problem_id: str, file: str, line: Optional[int] = None) -> Problem:
    for required in ("problem", "solution"):
        if required not in obj:
            raise FormatError(f"missing field {required!r}", file, line)
    statement = obj["problem"]
    solution = obj["solution"]
    if not isinstance(statement, str) or not statement.strip():
        raise FormatError("field 'problem' must be non-empty text", file, line)
    if not isinstance(solution, str) or not solution.strip():
        raise FormatError("field 'solution' must be non-empty text", file, line)
    try:
        reference = extract_final_answer(solution)
    except NoFinalAnswer:
        reference = ""
    return Problem(
        id=str(obj.get("id", problem_id)),
        statement=statement,
        reference_solution=solution,
        reference_answer=reference,
        level=obj.get("level"),
        subject=obj.get("type"),
    )


def load_dataset(path, format: str = "math_dir") -> list[Problem]:
    """Load problems from a directory tree or a JSON Lines file."""
    path = Path(path)
    if format == "math_dir":
        if not path.is_dir():
            raise FileNotFoundError(f"dataset directory {path} does not exist")
        problems = []
        for file in sorted(path.rglob("*.json")):
            try:
                obj = json.loads(file.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", str(file)) from exc
            if not isinstance(obj, dict):
                raise FormatError("problem file must hold a JSON object", str(file))
            relative = file.relative_to(path).with_suffix("")
            problem_id = relative.as_posix()
            fields = dict(obj)
            fields.setdefault("type", file.parent.name if file.parent != path else None)
            problems.append(_problem_from_fields(fields, problem_id, str(file)))
        return problems
    if format == "jsonl":
        if not path.is_file():
            raise FileNotFoundError(f"dataset file {path} does not exist")
        problems = []
        with open(path, encoding="utf-8") as fh:
            for number, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"invalid JSON: {exc.msg}", str(path), number) from exc
                problems.append(
                    _problem_from_fields(obj, f"line{number}", str(path), number)
                )
        return problems
    raise ValueError(f"unknown dataset format {format!r}")


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemResult:
    problem_id: str
    answer: str
    correct: bool
    route: str
    elapsed_ms: int
    provider_calls: int
    tool_calls: int
    explanation: str


@dataclass(frozen=True)
class Aggregate:
    n: int
    n_correct: int
    accuracy: float
    mean_elapsed_ms: float
    median_elapsed_ms: float


@dataclass(frozen=True)
class EvalReport:
    config_name: str
    per_problem: tuple[ProblemResult, ...]
    aggregate: Aggregate


def report_to_dict(report: EvalReport) -> dict:
    return {
        "config_name": report.config_name,
        "per_problem": [
            {
                "problem_id": r.problem_id,
                "answer": r.answer,
                "correct": r.correct,
                "route": r.route,
                "elapsed_ms": r.elapsed_ms,
                "provider_calls": r.provider_calls,
                "tool_calls": r.tool_calls,
                "explanation": r.explanation,
            }
            for r in report.per_problem
        ],
        "aggregate": {
            "n": report.aggregate.n,
            "n_correct": report.aggregate.n_correct,
            "accuracy": report.aggregate.accuracy,
            "mean_elapsed_ms": report.aggregate.mean_elapsed_ms,
            "median_elapsed_ms": report.aggregate.median_elapsed_ms,
        },
    }


def report_from_dict(obj: dict) -> EvalReport:
    aggregate = obj["aggregate"]
    return EvalReport(
        config_name=obj["config_name"],
        per_problem=tuple(ProblemResult(**row) for row in obj["per_problem"]),
        aggregate=Aggregate(
            n=aggregate["n"],
            n_correct=aggregate["n_correct"],
            accuracy=aggregate["accuracy"],
            mean_elapsed_ms=aggregate["mean_elapsed_ms"],
            median_elapsed_ms=aggregate["median_elapsed_ms"],
        ),
    )


def save_report(report: EvalReport, path) -> None:
    Path(path).write_text(
        json.dumps(report_to_dict(report), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def load_report(path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        return report_from_dict(json.load(fh))


@dataclass
class EvalConfig:
    """One runnable agent configuration for an eval or comparison."""

    name: str
    kit: StarterKit
    provider: CompletionProvider
    registry: ToolRegistry = field(default_factory=default_registry)
    system1_only: bool = False


def _aggregate(rows: Sequence[ProblemResult]) -> Aggregate:
    n = len(rows)
    n_correct = sum(1 for r in rows if r.correct)
    elapsed = [r.elapsed_ms for r in rows]
    return Aggregate(
        n=n,
        n_correct=n_correct,
        accuracy=(n_correct / n) if n else 0.0,
        mean_elapsed_ms=float(statistics.mean(elapsed)) if elapsed else 0.0,
        median_elapsed_ms=float(statistics.median(elapsed)) if elapsed else 0.0,
    )


def run_eval(
    config: EvalConfig,
    problems: Sequence[Problem],
    limit: Optional[int] = None,
    fresh_store: bool = False,
    store_dir=None,
    out_path=None,
) -> EvalReport:
    """Solve each problem and score against its reference answer.

    Problems without an extractable reference are skipped. By default
    one store is shared across the run so learning accumulates;
    ``fresh_store`` isolates each problem in its own store. Provider
    failures mark the problem incorrect and the run continues.
    """
    usable = [p for p in problems if p.reference_answer]
    if limit is not None:
        usable = usable[: max(0, limit)]

    rows: list[ProblemResult] = []
    with tempfile.TemporaryDirectory(prefix="neolaf-eval-") as scratch:

        def make_store(index: int) -> EpisodicStore:
            if store_dir is not None and not fresh_store:
                return EpisodicStore.open(store_dir)
            base = Path(store_dir) if store_dir is not None else Path(scratch)
            if fresh_store:
                return EpisodicStore.open(base / f"problem-{index}")
            return EpisodicStore.open(base / "shared")

        shared = None if fresh_store else make_store(0)
        for index, problem in enumerate(usable):
            store = make_store(index) if fresh_store else shared
            started = time.monotonic()
            try:
                solution = solve(
                    problem.statement,
                    config.kit,
                    config.provider,
                    config.registry,
                    store,
                    source=SituationSource.HARNESS,
                    system1_only=config.system1_only,
                )
                rows.append(
                    ProblemResult(
                        problem_id=problem.id,
                        answer=solution.answer,
                        correct=answers_equal(solution.answer, problem.reference_answer),
                        route=solution.route.value,
                        elapsed_ms=solution.elapsed_ms,
                        provider_calls=solution.provider_calls,
                        tool_calls=solution.tool_calls,
                        explanation=solution.explanation,
                    )
                )
            except ProviderError as exc:
                rows.append(
                    ProblemResult(
                        problem_id=problem.id,
                        answer="",
                        correct=False,
                        route="error",
                        elapsed_ms=int((time.monotonic() - started) * 1000),
                        provider_calls=0,
                        tool_calls=0,
                        explanation=f"provider error: {exc}",
                    )
                )

    rows.sort(key=lambda r: r.problem_id)
    report = EvalReport(
        config_name=config.name,
        per_problem=tuple(rows),
        aggregate=_aggregate(rows),
    )
    if out_path is not None:
        save_report(report, out_path)
    return report


@dataclass(frozen=True)
class ComparisonRow:
    config_name: str
    accuracy: float
    mean_elapsed_ms: float
    provider_calls: int
    error: Optional[str] = None


def compare(
    configs: Sequence[EvalConfig],
    problems: Sequence[Problem],
    limit: Optional[int] = None,
    fresh_store: bool = False,
) -> tuple[ComparisonRow, ...]:
    """Run every configuration over the same problems.

    A failing configuration yields an error row; the others still run.
    """
    if not configs:
        raise ValueError("compare needs at least one configuration")
    rows = []
    for config in configs:
        try:
            report = run_eval(config, problems, limit=limit, fresh_store=fresh_store)
            rows.append(
                ComparisonRow(
                    config_name=config.name,
                    accuracy=report.aggregate.accuracy,
                    mean_elapsed_ms=report.aggregate.mean_elapsed_ms,
                    provider_calls=sum(r.provider_calls for r in report.per_problem),
                )
            )
        except Exception as exc:  # keep other configs running
            rows.append(
                ComparisonRow(
                    config_name=config.name,
                    accuracy=0.0,
                    mean_elapsed_ms=0.0,
                    provider_calls=0,
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
    return tuple(rows)


def comparison_to_dicts(rows: Sequence[ComparisonRow]) -> list[dict]:
    return [
        {
            "config_name": r.config_name,
            "accuracy": r.accuracy,
            "mean_elapsed_ms": r.mean_elapsed_ms,
            "provider_calls": r.provider_calls,
            "error": r.error,
        }
        for r in rows
    ]


def render_comparison(rows: Sequence[ComparisonRow]) -> str:
    """Aligned table of a comparison run."""
    headers = ("config", "accuracy", "mean_ms", "provider_calls", "error")
    table = [headers]
    for r in rows:
        table.append(
            (
                r.config_name,
                f"{r.accuracy:.3f}",
                f"{r.mean_elapsed_ms:.1f}",
                str(r.provider_calls),
                r.error or "-",
            )
        )
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    lines = []
    for row in table:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines)
