"""The seven-stage re-hydration pipeline.

Verify -> Filter -> Rank -> Compress -> Format -> Frame -> Inject.
Verification failure halts the pipeline with empty framed text (the
report says why). Filtering is capability-based and default-deny.
Ranking scores each entry as a weighted sum of recency, salience,
embedding similarity and DAG depth; without an embedder (or with an
empty task text) the remaining three weights are renormalized
proportionally rather than silently deflating every score. Compression
walks entries in rank order, rendering high-relevance entries verbatim
and middle-band entries as truncated extractive summaries, within a
token budget that accounts for framing overhead up front. Stage 7 is
the caller's: framed text is meant to be placed after the system
prompt and before user-controlled content; no model calls happen here.

For exact budget accounting the compressor renders, escapes and
enforces entries as it admits them (format and frame costs are what
the budget must cover), so stages 4-6 are interleaved per entry while
remaining semantically ordered.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Sequence

from .capability import (
    CapabilityToken,
    EMPTY_REVOCATIONS,
    Permission,
    RevocationList,
    authorize,
    validate_token,
)
from .canonical import format_number
from .errors import RehydrationError
from .framing import (
    DataBlock,
    DIRECTIVE_BLOCK,
    enforce_content_type,
    escape_boundaries_and_roles,
    escape_content,
    frame,
)
from .keys import KeyRegistry
from .model import (
    EpisodicEntry,
    Entry,
    IdentityEntry,
    MemoryArtifact,
    ProceduralEntry,
    RedactedEntry,
    REDACTION_TOKEN_RE,
    SemanticEntry,
    WorkingEntry,
    validate_envelope,
)
from .provenance import ProvenanceDag, VerificationReport, build_dag, verify_artifact
from .timestamps import parse_timestamp
from .validation import ValidationReport

logger = logging.getLogger(__name__)

Embedder = Callable[[str], Sequence[float]]
TokenEstimator = Callable[[str], int]

_SUMMARY_LIMIT = 120
_ELLIPSIS = "..."


def estimate_tokens(text: str) -> int:
    """Default token estimate: ceil(UTF-8 bytes / 4).

    A model-specific counter may replace this via
    RehydrationConfig.token_estimator; budget logic uses only the
    estimator interface.
    """
    return (len(text.encode("utf-8")) + 3) // 4


@dataclass(frozen=True)
class RelevanceWeights:
    alpha: float = 0.2  # recency
    beta: float = 0.3  # salience
    gamma: float = 0.4  # embedding similarity
    delta: float = 0.1  # DAG depth

    def __post_init__(self) -> None:
        for name, value in (("alpha", self.alpha), ("beta", self.beta),
                            ("gamma", self.gamma), ("delta", self.delta)):
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        total = self.alpha + self.beta + self.gamma + self.delta
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")


@dataclass(frozen=True)
class TaskContext:
    """The target agent's current task; drives relevance ranking.

    `now` is the single clock for recency and token validation. An
    empty text contributes no similarity signal.
    """

    text: str
    now: datetime
    embedder: Embedder | None = None


@dataclass(frozen=True)
class RehydrationConfig:
    token_budget: int
    weights: RelevanceWeights = RelevanceWeights()
    hi_threshold: float = 0.7
    lo_threshold: float = 0.3
    format_style: str = "structured"  # or "narrative"
    model_profile: str = "default"
    token_estimator: TokenEstimator | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.lo_threshold < self.hi_threshold <= 1.0):
            raise ValueError(
                f"need 0 <= lo < hi <= 1, got lo={self.lo_threshold} hi={self.hi_threshold}"
            )
        if self.token_budget < 1:
            raise ValueError(f"token_budget must be >= 1, got {self.token_budget}")
        if self.format_style not in ("structured", "narrative"):
            raise ValueError(f"unknown format_style {self.format_style!r}")

    @property
    def estimator(self) -> TokenEstimator:
        return self.token_estimator or estimate_tokens


@dataclass(frozen=True)
class RankedEntry:
    entry_id: str
    component: str
    entry: Entry
    relevance: float
    recency: float
    salience: float
    sim: float | None  # None when the similarity signal is inactive
    depth: float


@dataclass(frozen=True)
class CompressionPlan:
    verbatim: tuple[RankedEntry, ...]
    summarized: tuple[tuple[RankedEntry, str], ...]
    dropped: dict[str, int]
    estimated_tokens: int

    def counts(self) -> dict:
        return {
            "verbatim": len(self.verbatim),
            "summarized": len(self.summarized),
            "dropped": dict(sorted(self.dropped.items())),
            "dropped_total": sum(self.dropped.values()),
            "estimated_tokens": self.estimated_tokens,
        }


@dataclass(frozen=True)
class RehydrationResult:
    framed_text: str
    plan: CompressionPlan
    quarantined: tuple[tuple[str, str], ...]
    verification: VerificationReport
    envelope: ValidationReport
    warnings: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return bool(self.framed_text)


_EMPTY_PLAN = CompressionPlan((), (), {}, 0)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _collapse(text: str) -> str:
    return " ".join(text.split())


def _redacted_line(entry: RedactedEntry) -> str:
    match = REDACTION_TOKEN_RE.match(entry.redaction_token)
    component = match.group(1) if match else "unknown"
    return f"(redacted {component} entry {entry.id.split(':', 1)[1][:8]})"


def _render_fields(entry: Entry, style: str, protect: Callable[[str], str]) -> str:
    """Shared template body; `protect` transforms each free-text field."""
    if isinstance(entry, RedactedEntry):
        return _redacted_line(entry)
    if isinstance(entry, EpisodicEntry):
        actor, obs = protect(entry.actor), protect(entry.observation)
        if style == "structured":
            return f"[{entry.timestamp}] {actor} -- {obs}"
        return f"On {entry.timestamp}, {actor} observed: {obs}."
    if isinstance(entry, SemanticEntry):
        subject, predicate = protect(entry.subject), protect(entry.predicate)
        obj = protect(entry.object)
        conf = format_number(entry.confidence)
        if style == "structured":
            return f"{subject} {predicate} {obj} (confidence: {conf})"
        return f"It is recorded (confidence {conf}) that {subject} {predicate} {obj}."
    if isinstance(entry, ProceduralEntry):
        name, description = protect(entry.name), protect(entry.description)
        steps = [protect(step) for step in entry.steps]
        rate = format_number(entry.success_rate)
        if style == "structured":
            text = f"{name}: {description}"
            if steps:
                text += f" (steps: {' -> '.join(steps)})"
            return text + f" (used: {entry.usage_count}; success: {rate})"
        text = (
            f"The procedure '{name}' ({description}) has been used "
            f"{entry.usage_count} times with success rate {rate}"
        )
        if steps:
            text += f"; steps: {'; '.join(steps)}"
        return text + "."
    if isinstance(entry, WorkingEntry):
        goal = protect(entry.goal)
        subgoals = [protect(s) for s in entry.subgoals]
        pending = [protect(p) for p in entry.pending_actions]
        scratch = protect(entry.scratch) if entry.scratch else ""
        if style == "structured":
            text = f"goal: {goal} (status: {entry.status})"
            if subgoals:
                text += f" subgoals: {'; '.join(subgoals)}"
            if pending:
                text += f" pending: {'; '.join(pending)}"
            if scratch:
                text += f" notes: {scratch}"
            return text
        text = f"The goal '{goal}' is {entry.status}"
        if subgoals:
            text += f"; subgoals: {'; '.join(subgoals)}"
        if pending:
            text += f"; pending: {'; '.join(pending)}"
        if scratch:
            text += f"; notes: {scratch}"
        return text + "."
    if isinstance(entry, IdentityEntry):
        attribute, value = protect(entry.attribute), protect(entry.value)
        if style == "structured":
            return f"{attribute} ({entry.category}): {value}"
        return f"The agent's {attribute} ({entry.category}) is: {value}."
    raise TypeError(f"not an entry: {type(entry).__name__}")


def render_entry(entry: Entry, style: str = "structured") -> str:
    """Deterministic plain rendering of one entry (no escaping)."""
    return _collapse(_render_fields(entry, style, lambda s: s))


def render_protected(entry: Entry, style: str = "structured") -> str:
    """Injection-safe rendering: every free-text field gets boundary
    and role escaping before template assembly (field starts are line
    starts for the escaper), then the assembled line goes through the
    full escape - instruction patterns have no positional anchors, so
    once per line suffices, and idempotence makes the overlap safe.
    """
    line = _collapse(_render_fields(entry, style, escape_boundaries_and_roles))
    return escape_content(line)


# ---------------------------------------------------------------------------
# Scoring and ranking
# ---------------------------------------------------------------------------


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(y * y for y in b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return dot / (norm_a * norm_b)


def _active_weights(
    weights: RelevanceWeights, sim_active: bool
) -> tuple[float, float, float, float]:
    if sim_active:
        return weights.alpha, weights.beta, weights.gamma, weights.delta
    remaining = weights.alpha + weights.beta + weights.delta
    if remaining == 0.0:
        return 0.0, 0.0, 0.0, 0.0
    return weights.alpha / remaining, weights.beta / remaining, 0.0, weights.delta / remaining


def _salience_signal(entry: Entry) -> float:
    if isinstance(entry, EpisodicEntry):
        return entry.salience
    if isinstance(entry, SemanticEntry):
        return entry.confidence
    return 0.5


def score_relevance(
    entry: Entry,
    component: str,
    ctx: TaskContext,
    cfg: RehydrationConfig,
    dag: ProvenanceDag,
    time_span: tuple[datetime, datetime],
) -> RankedEntry:
    """One entry's relevance: weighted recency/salience/similarity/depth.

    Recency maps created_at linearly onto [0, 1] (newest 1, oldest 0;
    a zero span scores 1). Depth is 1/(1+d) for the minimum distance d
    to any DAG root. Similarity is embedder cosine clamped to [0, 1],
    active only when an embedder is present and the task text is
    non-empty; otherwise the remaining weights renormalize.
    """
    oldest, newest = time_span
    span = (newest - oldest).total_seconds()
    if span <= 0.0:
        recency = 1.0
    else:
        recency = (parse_timestamp(entry.created_at) - oldest).total_seconds() / span
        recency = min(1.0, max(0.0, recency))

    salience = _salience_signal(entry)

    sim: float | None = None
    sim_active = ctx.embedder is not None and bool(ctx.text)
    if sim_active:
        vector = ctx.embedder(render_entry(entry, "structured"))
        target = ctx.embedder(ctx.text)
        sim = min(1.0, max(0.0, _cosine(vector, target)))

    depth_distance = dag.depth_map().get(entry.id, 0)
    depth = 1.0 / (1.0 + depth_distance)

    alpha, beta, gamma, delta = _active_weights(cfg.weights, sim_active)
    relevance = alpha * recency + beta * salience + gamma * (sim or 0.0) + delta * depth
    return RankedEntry(
        entry_id=entry.id,
        component=component,
        entry=entry,
        relevance=relevance,
        recency=recency,
        salience=salience,
        sim=sim,
        depth=depth,
    )


def rank(
    entries: Sequence[tuple[str, Entry]],
    ctx: TaskContext,
    cfg: RehydrationConfig,
    dag: ProvenanceDag,
    time_span: tuple[datetime, datetime],
) -> list[RankedEntry]:
    """Score and sort: relevance desc, then created_at desc, then id."""
    scored = [
        score_relevance(entry, component, ctx, cfg, dag, time_span)
        for component, entry in entries
    ]
    return sorted(
        scored,
        key=lambda r: (-r.relevance, -parse_timestamp(r.entry.created_at).timestamp(), r.entry_id),
    )


# ---------------------------------------------------------------------------
# Compression
# ---------------------------------------------------------------------------


def _summarize(line: str) -> str:
    if len(line) <= _SUMMARY_LIMIT:
        return line
    cut = line.rfind(" ", 0, _SUMMARY_LIMIT - len(_ELLIPSIS) + 1)
    if cut <= 0:
        cut = _SUMMARY_LIMIT - len(_ELLIPSIS)
    return line[:cut].rstrip() + _ELLIPSIS


def _compress_full(
    ranked: Sequence[RankedEntry], cfg: RehydrationConfig
) -> tuple[CompressionPlan, list[DataBlock], list[tuple[str, str]]]:
    est = cfg.estimator
    budget = cfg.token_budget
    running = est(DIRECTIVE_BLOCK)
    if running > budget:
        raise RehydrationError(
            "BUDGET_TOO_SMALL",
            f"budget {budget} cannot fit the directive block ({running} tokens)",
        )

    verbatim: list[RankedEntry] = []
    summarized: list[tuple[RankedEntry, str]] = []
    dropped: dict[str, int] = {}
    quarantined: list[tuple[str, str]] = []
    block_lines: dict[str, list[str]] = {}
    exhausted = False

    for item in ranked:
        if item.relevance < cfg.lo_threshold:
            dropped[item.component] = dropped.get(item.component, 0) + 1
            continue

        line = render_protected(item.entry, cfg.format_style)
        check = enforce_content_type(item.component, line)
        if not check.accepted:
            quarantined.append((item.entry_id, check.reason or "QUARANTINED"))
            continue

        is_verbatim = item.relevance >= cfg.hi_threshold
        if not is_verbatim:
            line = _summarize(render_protected(item.entry, "structured"))

        if exhausted:
            dropped[item.component] = dropped.get(item.component, 0) + 1
            continue
        cost = est(f"* {line}\n")
        if item.component not in block_lines:
            cost += est(f"[PAM:DATA:{item.component}]\n") + est("\n[/PAM:DATA]") + est("\n\n")
        if running + cost > budget:
            exhausted = True
            dropped[item.component] = dropped.get(item.component, 0) + 1
            continue
        running += cost
        block_lines.setdefault(item.component, []).append(f"* {line}")
        if is_verbatim:
            verbatim.append(item)
        else:
            summarized.append((item, line))

    # Count annotations for components that rendered something but also
    # dropped entries; added only when they still fit the budget.
    for component, lines in block_lines.items():
        count = dropped.get(component, 0)
        if count:
            annotation = f"* (+{count} more low-relevance {component} entries omitted)"
            cost = est(annotation + "\n")
            if running + cost <= budget:
                running += cost
                lines.append(annotation)

    blocks = [
        DataBlock(component, "\n".join(lines)) for component, lines in block_lines.items()
    ]
    plan = CompressionPlan(
        verbatim=tuple(verbatim),
        summarized=tuple(summarized),
        dropped=dropped,
        estimated_tokens=running,
    )
    return plan, blocks, quarantined


def compress(ranked: Sequence[RankedEntry], cfg: RehydrationConfig) -> CompressionPlan:
    """Budgeted compression plan over rank-ordered entries."""
    return _compress_full(ranked, cfg)[0]


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def rehydrate(
    artifact: MemoryArtifact,
    tokens: Sequence[CapabilityToken],
    presenter: str,
    ctx: TaskContext,
    cfg: RehydrationConfig,
    registry: KeyRegistry,
    revocations: RevocationList = EMPTY_REVOCATIONS,
    *,
    allow_unscoped: bool = False,
) -> RehydrationResult:
    """Run the full pipeline and return the injection-safe context text.

    Halts with empty framed_text when stage 1 (envelope + three-phase
    verification) fails. The framed text is intended to be injected
    after the system prompt and before user-controlled content; no
    model interaction happens here.
    """
    envelope = validate_envelope(artifact)
    if not envelope.ok:
        verification = VerificationReport(False, False, False, (), 0)
        return RehydrationResult("", _EMPTY_PLAN, (), verification, envelope,
                                 ("VERIFICATION_FAILED",))
    verification = verify_artifact(artifact, registry, fail_fast=True)
    if not verification.ok:
        return RehydrationResult("", _EMPTY_PLAN, (), verification, envelope,
                                 ("VERIFICATION_FAILED",))

    warnings: list[str] = []
    if allow_unscoped:
        logger.warning("capability filtering bypassed (allow_unscoped) for %s", presenter)
        warnings.append("UNSCOPED_ACCESS")
        authorized = frozenset(artifact.entry_ids())
    else:
        authorized = authorize(
            artifact, tokens, Permission.READ, presenter, ctx.now, revocations, registry
        )
        if artifact.capability_tokens:
            # An artifact that carries tokens demands the rehydrate
            # permission for pipeline execution.
            pooled = list(tokens) + list(artifact.capability_tokens)
            gate_open = any(
                Permission.REHYDRATE in token.permissions
                and validate_token(token, presenter, ctx.now, revocations, registry).ok
                for token in pooled
            )
            if not gate_open:
                warnings.append("REHYDRATE_PERMISSION_REQUIRED")
                authorized = frozenset()
        # Distinct from success-with-empty-memory: only a non-empty
        # artifact can have entries that failed to authorize.
        if not authorized and artifact.components.entry_count() > 0:
            warnings.append("NO_AUTHORIZED_ENTRIES")

    dag = build_dag(artifact)
    all_entries = list(artifact.components.all_entries())
    if all_entries:
        stamps = [parse_timestamp(entry.created_at) for _, entry in all_entries]
        time_span = (min(stamps), max(stamps))
    else:
        time_span = (ctx.now, ctx.now)

    selected = [(component, entry) for component, entry in all_entries
                if entry.id in authorized]
    ranked = rank(selected, ctx, cfg, dag, time_span)
    plan, blocks, quarantined = _compress_full(ranked, cfg)
    framed = frame(blocks)

    return RehydrationResult(
        framed_text=framed,
        plan=plan,
        quarantined=tuple(quarantined),
        verification=verification,
        envelope=envelope,
        warnings=tuple(warnings),
    )
