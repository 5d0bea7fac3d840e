"""Episodic memory: append-only record log, knowledge retrieval,
knowledge extraction, and consolidation export.

The two JSON Lines files under a store directory are the single source
of truth; the in-memory indexes are rebuildable caches. The record log
is strictly append-only. The knowledge file is also append-only: item
updates (usage bumps, confidence boosts) append a fresh version of the
item and reload keeps the last version per id.

Writes serialize on the store lock; completed records are immutable, so
many readers may share them freely.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional

from .errors import NeolafError
from .kstar import KstarRecord, deserialize_record, serialize_record, validate_record
from .provider import (
    CompletionProvider,
    DeterministicEmbedder,
    EmbeddingVector,
    Message,
    ProviderError,
    ProviderRequest,
    Role,
    cosine,
)
from .templates import DEFAULT_TEMPLATES, render

# Fixed starter-kit constants for the knowledge update rules.
CORRECTIVE_CONFIDENCE = 0.5
REINFORCEMENT_CONFIDENCE = 0.8
DISTILLED_CONFIDENCE = 0.6
REINFORCEMENT_BOOST = 0.1

RECORD_LOG_NAME = "episodic.jsonl"
KNOWLEDGE_FILE_NAME = "knowledge.jsonl"


class ValidationFailed(NeolafError):
    def __init__(self, violations: list[str]):
        super().__init__("record failed validation: " + "; ".join(violations))
        self.violations = violations


class StorageError(NeolafError):
    pass


class KnowledgeKind(str, Enum):
    CORRECTIVE = "corrective"
    REINFORCEMENT = "reinforcement"
    DISTILLED = "distilled"


def _clamp(value: float) -> float:
    return min(1.0, max(0.0, value))


@dataclass(frozen=True)
class KnowledgeItem:
    """An encoded lesson with provenance back to the records it came from."""

    id: int
    statement: str
    kind: KnowledgeKind
    provenance: tuple[int, ...]
    confidence: float
    usage_count: int = 0
    embedding: Optional[EmbeddingVector] = None

    def __post_init__(self):
        object.__setattr__(self, "confidence", _clamp(self.confidence))


def knowledge_item_to_dict(item: KnowledgeItem) -> dict:
    return {
        "id": item.id,
        "statement": item.statement,
        "kind": item.kind.value,
        "provenance": list(item.provenance),
        "confidence": item.confidence,
        "usage_count": item.usage_count,
        "embedding": list(item.embedding.values) if item.embedding else None,
    }


def knowledge_item_from_dict(obj: dict) -> KnowledgeItem:
    embedding = obj.get("embedding")
    return KnowledgeItem(
        id=obj["id"],
        statement=obj["statement"],
        kind=KnowledgeKind(obj["kind"]),
        provenance=tuple(obj["provenance"]),
        confidence=obj["confidence"],
        usage_count=obj.get("usage_count", 0),
        embedding=EmbeddingVector(values=tuple(embedding)) if embedding else None,
    )


@dataclass(frozen=True)
class ConsolidationExample:
    """One instruction-completion pair exported for offline tuning."""

    prompt: str
    completion: str
    source_record: int
    tags: tuple[str, ...] = ()


def consolidation_example_to_dict(example: ConsolidationExample) -> dict:
    return {
        "prompt": example.prompt,
        "completion": example.completion,
        "source_record": example.source_record,
        "tags": list(example.tags),
    }


def consolidation_example_from_dict(obj: dict) -> ConsolidationExample:
    return ConsolidationExample(
        prompt=obj["prompt"],
        completion=obj["completion"],
        source_record=obj["source_record"],
        tags=tuple(obj.get("tags", ())),
    )


def read_consolidation(path) -> list[ConsolidationExample]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                examples.append(consolidation_example_from_dict(json.loads(line)))
    return examples


# --------------------------------------------------------------------------
# Similarity
# --------------------------------------------------------------------------

_TOKEN_PATTERN = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> set[str]:
    return set(_TOKEN_PATTERN.findall(text.lower()))


def similarity(a: str, b: str, embedder: Optional[DeterministicEmbedder] = None) -> float:
    """Text similarity in [0, 1].

    With an embedder: cosine similarity mapped through (c + 1) / 2.
    Without: Jaccard overlap of lowercase alphanumeric token sets.
    Pairs where either side has no tokens score 0.
    """
    if embedder is not None:
        if not a or not b:
            return 0.0
        return (cosine(embedder.embed(a), embedder.embed(b)) + 1.0) / 2.0
    ta, tb = _tokens(a), _tokens(b)
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


# --------------------------------------------------------------------------
# Store
# --------------------------------------------------------------------------


class EpisodicStore:
    """Append-only store of encounter records plus the knowledge index."""

    def __init__(
        self,
        log_path,
        knowledge_path=None,
        embedder: Optional[DeterministicEmbedder] = None,
    ):
        self.log_path = Path(log_path)
        self.knowledge_path = (
            Path(knowledge_path)
            if knowledge_path is not None
            else self.log_path.with_name(KNOWLEDGE_FILE_NAME)
        )
        self.embedder = embedder
        self.lock = threading.RLock()
        self._records: list[KstarRecord] = []
        self._knowledge: dict[int, KnowledgeItem] = {}
        self._load()

    @classmethod
    def open(cls, directory, embedder: Optional[DeterministicEmbedder] = None) -> "EpisodicStore":
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        return cls(directory / RECORD_LOG_NAME, directory / KNOWLEDGE_FILE_NAME, embedder)

    def _load(self) -> None:
        if self.log_path.exists():
            last_id = 0
            with open(self.log_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    record = deserialize_record(line)
                    if record.id <= last_id:
                        raise StorageError(
                            f"record log corrupt: id {record.id} after {last_id}"
                        )
                    last_id = record.id
                    self._records.append(record)
        if self.knowledge_path.exists():
            with open(self.knowledge_path, encoding="utf-8") as fh:
                for number, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        item = knowledge_item_from_dict(json.loads(line))
                    except (ValueError, KeyError, TypeError) as exc:
                        raise StorageError(
                            f"knowledge file corrupt at line {number}: {exc}"
                        ) from exc
                    self._knowledge[item.id] = item

    def _append_line(self, path: Path, line: str) -> None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
        except OSError as exc:
            raise StorageError(f"cannot append to {path}: {exc}") from exc

    def _write_knowledge(self, item: KnowledgeItem) -> None:
        self._append_line(
            self.knowledge_path,
            json.dumps(knowledge_item_to_dict(item), ensure_ascii=False, separators=(",", ":")),
        )
        self._knowledge[item.id] = item

    # -- records ------------------------------------------------------

    @property
    def records(self) -> tuple[KstarRecord, ...]:
        with self.lock:
            return tuple(self._records)

    def get_record(self, record_id: int) -> Optional[KstarRecord]:
        with self.lock:
            for record in self._records:
                if record.id == record_id:
                    return record
        return None

    def next_record_id(self) -> int:
        with self.lock:
            return self._records[-1].id + 1 if self._records else 1

    def store_record(self, record: KstarRecord) -> int:
        """Validate, assign the next id, and append atomically."""
        with self.lock:
            assigned = replace(record, id=self.next_record_id())
            violations = validate_record(assigned)
            if violations:
                raise ValidationFailed(violations)
            self._append_line(self.log_path, serialize_record(assigned))
            self._records.append(assigned)
            return assigned.id

    # -- knowledge ----------------------------------------------------

    @property
    def knowledge(self) -> tuple[KnowledgeItem, ...]:
        with self.lock:
            return tuple(self._knowledge.values())

    def get_knowledge(self, item_id: int) -> Optional[KnowledgeItem]:
        with self.lock:
            return self._knowledge.get(item_id)

    def add_knowledge(self, item: KnowledgeItem) -> int:
        """Assign the next item id, embed if configured, and append."""
        with self.lock:
            next_id = max(self._knowledge, default=0) + 1
            if not item.statement.strip():
                raise ValueError("knowledge statement must be non-empty")
            if not item.provenance:
                raise ValueError("knowledge provenance must be non-empty")
            embedding = item.embedding
            if embedding is None and self.embedder is not None:
                embedding = self.embedder.embed(item.statement)
            stored = replace(item, id=next_id, embedding=embedding)
            self._write_knowledge(stored)
            return next_id

    def boost_confidence(self, item_ids: Iterable[int], delta: float = REINFORCEMENT_BOOST) -> None:
        with self.lock:
            for item_id in item_ids:
                item = self._knowledge.get(item_id)
                if item is not None:
                    self._write_knowledge(
                        replace(item, confidence=_clamp(item.confidence + delta))
                    )

    def _bump_usage(self, item_ids: Iterable[int]) -> None:
        for item_id in item_ids:
            item = self._knowledge.get(item_id)
            if item is not None:
                self._write_knowledge(replace(item, usage_count=item.usage_count + 1))

    def retrieve(self, query: str, k: int) -> list[KnowledgeItem]:
        """Top-k knowledge items by similarity to the query.

        Ties break toward the higher item id (recency). Usage counts of
        the returned items are bumped after ranking, so the ranking
        itself is a pure function of the store snapshot.
        """
        if k < 0:
            raise ValueError("k must be >= 0")
        with self.lock:
            if k == 0 or not self._knowledge:
                return []
            if self.embedder is not None and query:
                query_vec = self.embedder.embed(query)

                def score(item: KnowledgeItem) -> float:
                    vec = item.embedding or self.embedder.embed(item.statement)
                    return (cosine(query_vec, vec) + 1.0) / 2.0

            else:

                def score(item: KnowledgeItem) -> float:
                    return similarity(query, item.statement)

            ranked = sorted(
                self._knowledge.values(), key=lambda it: (-score(it), -it.id)
            )
            top = ranked[:k]
            self._bump_usage([it.id for it in top])
            return [self._knowledge[it.id] for it in top]

    # -- consolidation --------------------------------------------------

    def consolidate(
        self,
        out_path=None,
        keep: Optional[Callable[[KstarRecord], bool]] = None,
    ) -> list[ConsolidationExample]:
        """Export one instruction-completion example per kept record.

        The default filter keeps successful encounters. When ``out_path``
        is given, examples are written as one JSON object per line.
        """
        if keep is None:
            keep = lambda record: record.outcome.success
        with self.lock:
            records = list(self._records)
        examples = []
        for record in records:
            if not keep(record):
                continue
            prompt = f"{record.situation.description}\n{record.task.goal}"
            completion = f"{render_plan(record.plan)}\n{record.outcome.actual_result}"
            examples.append(
                ConsolidationExample(
                    prompt=prompt,
                    completion=completion,
                    source_record=record.id,
                    tags=record.situation.context_tags,
                )
            )
        if out_path is not None:
            try:
                with open(out_path, "w", encoding="utf-8") as fh:
                    for example in examples:
                        fh.write(
                            json.dumps(
                                consolidation_example_to_dict(example),
                                ensure_ascii=False,
                                separators=(",", ":"),
                            )
                            + "\n"
                        )
            except OSError as exc:
                raise StorageError(f"cannot write consolidation file: {exc}") from exc
        return examples


# --------------------------------------------------------------------------
# Knowledge extraction
# --------------------------------------------------------------------------


def render_plan(plan) -> str:
    """Human-readable one-line-per-step rendering of a plan."""
    return "\n".join(
        f"{i + 1}. {step.agent} | {step.skill}"
        + (f" | {', '.join(step.constraints)}" if step.constraints else "")
        for i, step in enumerate(plan)
    )


def forecast_matched(record: KstarRecord) -> bool:
    """Whether the forecast agreed with what actually happened.

    The forecast predicts success when its probability is at least 0.5;
    it matched when that prediction agrees with the actual outcome.
    """
    predicted = record.forecast.success_probability >= 0.5
    return predicted == record.outcome.success


def extract_knowledge(
    record: KstarRecord,
    provider: Optional[CompletionProvider] = None,
    distill_template: Optional[str] = None,
    system_prompt: str = "",
) -> list[KnowledgeItem]:
    """Turn one evaluated encounter into knowledge items.

    The rule layer is a pure function of the record: a success whose
    forecast held produces one reinforcement item; anything else
    produces one corrective item stating expected vs actual. With a
    provider, a distillation prompt adds one distilled item; provider
    failures degrade to the rule-layer output alone.

    Item ids are assigned by the store; provenance always points at the
    source record.
    """
    items: list[KnowledgeItem] = []
    situation = record.situation.description.strip()
    if record.outcome.success and forecast_matched(record):
        statement = (
            f"Confirmed for '{situation}': the plan "
            f"[{'; '.join(s.skill for s in record.plan)}] "
            f"produced {record.outcome.actual_result}"
        )
        items.append(
            KnowledgeItem(
                id=0,
                statement=statement,
                kind=KnowledgeKind.REINFORCEMENT,
                provenance=(record.id,),
                confidence=REINFORCEMENT_CONFIDENCE,
            )
        )
    else:
        statement = (
            f"Correction for '{situation}': expected "
            f"{record.forecast.expected_result} but got {record.outcome.actual_result}"
        )
        items.append(
            KnowledgeItem(
                id=0,
                statement=statement,
                kind=KnowledgeKind.CORRECTIVE,
                provenance=(record.id,),
                confidence=CORRECTIVE_CONFIDENCE,
            )
        )
    if provider is not None:
        template = distill_template or DEFAULT_TEMPLATES["distill"]
        body = render(
            template,
            query=record.task.goal,
            plan=render_plan(record.plan),
            expected=record.forecast.expected_result,
            actual=record.outcome.actual_result,
        )
        messages = []
        if system_prompt:
            messages.append(Message(Role.SYSTEM, system_prompt))
        messages.append(Message(Role.USER, body))
        try:
            completion = provider.complete(ProviderRequest(messages=tuple(messages)))
            text = completion.text.strip()
            if text:
                items.append(
                    KnowledgeItem(
                        id=0,
                        statement=text,
                        kind=KnowledgeKind.DISTILLED,
                        provenance=(record.id,),
                        confidence=DISTILLED_CONFIDENCE,
                    )
                )
        except ProviderError:
            pass
    return items
