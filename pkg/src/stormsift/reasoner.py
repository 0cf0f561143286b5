"""Two-round LLM interaction over SOP knowledge.

Round one condenses each SOP into a four-field summary and caches it; round
two builds in-context prompts (rules, retrieved samples, query) for the
uncertain pairs left over by the statistical stage and parses the verdicts.

The mock backend is normative and fully deterministic: extraction echoes the
document sections, and pair reasoning declares two alerts correlated when the
cause keywords of one sufficiently overlap the impact keywords of the other.
That rule is the contract the storm simulator generates against, which keeps
end-to-end results oracle-checkable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Sequence

import requests

from .model import (
    SUMMARY_FIELD_BUDGET,
    AlertType,
    CorrelationVerdict,
    SopDocument,
    SopSummary,
    ValidationError,
    VerdictLabel,
    VerdictSource,
)
from .textvec import SampleBank, SampleEntry, TextEmbedder, nearest_samples, tokenize

log = logging.getLogger(__name__)

ANSWER_CORRELATED = "ANSWER: CORRELATED"
ANSWER_NOT_CORRELATED = "ANSWER: NOT CORRELATED"

MOCK_OVERLAP_THRESHOLD = 0.3

# Tokens carrying no causal signal; shared by the mock verdict rule and the
# simulator's SOP templates.
STOP_WORDS = frozenset(
    """
    a an the of on in at to is are was were be been being and or nor for with
    by this that these those it its as from due such may can might should
    when while into over under after before during not no none only same
    other both each all any more most very will would
    alert alerts service services system systems detected observed include
    includes including indicators effects reported related recent
    """.split()
)

DEFAULT_RULES = (
    "A root cause propagates: if alert X's impact matches alert Y's possible cause, treat Y as downstream of X and the two alerts as correlated.",
    "Prefer evidence from the possible-cause and impact sections over title wording.",
    "Similar titles alone are insufficient to call two alerts correlated.",
)


class ParseError(ValueError):
    """The backend response did not follow the required answer format."""


class BackendError(RuntimeError):
    """The backend could not be reached or returned an unusable payload."""


class BackendKind(str, Enum):
    MOCK = "mock"
    REMOTE_CHAT = "remote_chat"


@dataclass(frozen=True)
class ReasoningRuleSet:
    rules: tuple[str, ...] = DEFAULT_RULES

    def __post_init__(self) -> None:
        if not self.rules:
            raise ValidationError("need at least one reasoning rule")
        for rule in self.rules:
            if len(rule) > 300:
                raise ValidationError("rule exceeds 300 characters")


@dataclass(frozen=True)
class LlmBackendDescriptor:
    kind: BackendKind = BackendKind.MOCK
    endpoint: str | None = None
    model: str | None = None
    max_prompt_chars: int = 8000
    timeout_s: float = 30.0
    max_retries: int = 2
    response_path: tuple[Any, ...] = ("choices", 0, "message", "content")

    def __post_init__(self) -> None:
        if self.kind is BackendKind.REMOTE_CHAT and (not self.endpoint or not self.model):
            raise ValidationError("remote chat backend requires endpoint and model")
        if self.timeout_s <= 0:
            raise ValidationError("timeout must be positive")
        object.__setattr__(self, "response_path", tuple(self.response_path))

    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "kind": self.kind.value,
                "endpoint": self.endpoint,
                "model": self.model,
                "max_prompt_chars": self.max_prompt_chars,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Prompt:
    """Role-tagged messages ready for a chat backend.

    ``degradation`` records how much content was shed to fit the budget:
    0 none, 1 negative sample dropped, 2 both samples dropped, 3 summaries
    truncated as well.
    """

    messages: tuple[tuple[str, str], ...]
    degradation: int = 0
    truncated: bool = False

    @property
    def length(self) -> int:
        return sum(len(content) for _, content in self.messages)

    def as_wire_messages(self) -> list[dict[str, str]]:
        return [{"role": role, "content": content} for role, content in self.messages]


def _clean(text: str) -> str:
    """Single-line, brace-free rendering of interpolated content."""
    return " ".join(text.replace("{", "(").replace("}", ")").split())


def build_extraction_prompt(sop: SopDocument, max_prompt_chars: int = 8000) -> Prompt:
    """Round-one prompt asking for a condensed, strictly formatted summary.

    When the document is too large, sections are truncated tail-first:
    mitigation steps go first and the explanation is cut last.
    """
    sections = {
        "explanation": _clean(sop.explanation),
        "impact": _clean(sop.impact),
        "possible_cause": _clean(sop.possible_cause),
        "mitigation_steps": _clean(sop.mitigation_steps),
    }

    def render() -> str:
        return (
            "You are an experienced site reliability engineer. Summarize the "
            "following alert handling document, keeping the detailed "
            "explanation, the consequence for the system, the likely cause, "
            "and the handling steps.\n"
            "\n"
            f"TITLE: {_clean(sop.title)}\n"
            f"SEVERITY: {sop.severity.value}\n"
            "EXPLANATION SECTION:\n"
            f"{sections['explanation']}\n"
            "IMPACT SECTION:\n"
            f"{sections['impact']}\n"
            "POSSIBLE CAUSE SECTION:\n"
            f"{sections['possible_cause']}\n"
            "MITIGATION STEPS SECTION:\n"
            f"{sections['mitigation_steps']}\n"
            "\n"
            "Reply with exactly four lines using these labels:\n"
            "EXPLANATION: <summary>\n"
            "IMPACT: <summary>\n"
            "CAUSE: <summary>\n"
            "STEPS: <summary>"
        )

    truncated = False
    text = render()
    for name in ("mitigation_steps", "possible_cause", "impact", "explanation"):
        if len(text) <= max_prompt_chars:
            break
        overflow = len(text) - max_prompt_chars
        keep = max(0, len(sections[name]) - overflow)
        if keep < len(sections[name]):
            sections[name] = sections[name][:keep]
            truncated = True
            text = render()
    return Prompt(messages=(("user", text),), truncated=truncated)


_SUMMARY_LABELS = {
    "EXPLANATION": "explanation_summary",
    "IMPACT": "impact_summary",
    "CAUSE": "cause_summary",
    "STEPS": "steps_summary",
}

_SOP_FIELD_FOR_LABEL = {
    "EXPLANATION": "explanation",
    "IMPACT": "impact",
    "CAUSE": "possible_cause",
    "STEPS": "mitigation_steps",
}


def parse_summary_response(text: str) -> dict[str, str]:
    """Pull labeled summary lines out of a round-one response."""
    found: dict[str, str] = {}
    for line in text.splitlines():
        stripped = line.strip()
        for label in _SUMMARY_LABELS:
            prefix = label + ":"
            if stripped.upper().startswith(prefix) and label not in found:
                found[label] = stripped[len(prefix) :].strip()
    return found


def sop_content_hash(sop: SopDocument) -> str:
    return hashlib.sha256(
        json.dumps(sop.to_dict(), sort_keys=True).encode()
    ).hexdigest()[:16]


@dataclass
class SummaryCache:
    """Round-one results keyed by (sop id, content hash, backend fingerprint)."""

    entries: dict[str, dict[str, Any]] = field(default_factory=dict)

    @staticmethod
    def key(sop: SopDocument, backend_fingerprint: str) -> str:
        return f"{sop.id}|{sop_content_hash(sop)}|{backend_fingerprint}"

    def get(self, sop: SopDocument, backend_fingerprint: str) -> SopSummary | None:
        entry = self.entries.get(self.key(sop, backend_fingerprint))
        if entry is None:
            return None
        if entry["content_hash"] != sop_content_hash(sop):
            return None
        return SopSummary.from_dict(entry["summary"])

    def put(self, sop: SopDocument, backend_fingerprint: str, summary: SopSummary, degraded: bool) -> None:
        self.entries[self.key(sop, backend_fingerprint)] = {
            "sop_id": sop.id,
            "content_hash": sop_content_hash(sop),
            "summary": summary.to_dict(),
            "degraded": degraded,
        }

    def to_dict(self) -> dict[str, Any]:
        return {"entries": self.entries}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SummaryCache":
        return cls(entries=dict(d.get("entries", {})))


class MockChatBackend:
    """Deterministic stand-in for a chat LLM; see the module docstring.

    Correlation rule: after stop-word removal, the pair is correlated iff the
    directional overlap coefficient ``|C & I| / min(|C|, |I|)`` between the
    cause tokens of one alert and the impact tokens of the other reaches 0.3
    in either direction.
    """

    def __init__(self, descriptor: LlmBackendDescriptor | None = None) -> None:
        self.descriptor = descriptor or LlmBackendDescriptor(kind=BackendKind.MOCK)
        self.extraction_calls = 0
        self.reasoning_calls = 0
        self._count_lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self.extraction_calls + self.reasoning_calls

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str:
        text = "\n".join(m["content"] for m in messages)
        if "QUERY:" in text and "ANSWER: CORRELATED" in text:
            with self._count_lock:
                self.reasoning_calls += 1
            return self._answer_query(text)
        if "EXPLANATION SECTION:" in text:
            with self._count_lock:
                self.extraction_calls += 1
            return self._summarize(text)
        raise BackendError("mock backend cannot interpret this prompt")

    @staticmethod
    def _section(text: str, header: str, stop_headers: Sequence[str]) -> str:
        pattern = re.escape(header) + r"\n(.*?)(?:" + "|".join(re.escape(h) for h in stop_headers) + r"|$)"
        match = re.search(pattern, text, flags=re.S)
        return match.group(1).strip() if match else ""

    def _summarize(self, text: str) -> str:
        headers = [
            "EXPLANATION SECTION:",
            "IMPACT SECTION:",
            "POSSIBLE CAUSE SECTION:",
            "MITIGATION STEPS SECTION:",
            "Reply with",
        ]
        sections = {
            h: self._section(text, h, [x for x in headers if x != h]) for h in headers[:4]
        }
        condense = lambda s: " ".join(s.split())[:300]
        return (
            f"EXPLANATION: {condense(sections['EXPLANATION SECTION:'])}\n"
            f"IMPACT: {condense(sections['IMPACT SECTION:'])}\n"
            f"CAUSE: {condense(sections['POSSIBLE CAUSE SECTION:'])}\n"
            f"STEPS: {condense(sections['MITIGATION STEPS SECTION:'])}"
        )

    @staticmethod
    def content_tokens(text: str) -> set[str]:
        return {t for t in tokenize(text) if t not in STOP_WORDS}

    @classmethod
    def overlap_coefficient(cls, cause: str, impact: str) -> tuple[float, set[str]]:
        c, i = cls.content_tokens(cause), cls.content_tokens(impact)
        if not c or not i:
            return 0.0, set()
        shared = c & i
        return len(shared) / min(len(c), len(i)), shared

    def _answer_query(self, text: str) -> str:
        query = text.split("QUERY:", 1)[1]
        fields = {}
        for line in query.splitlines():
            stripped = line.strip()
            match = re.match(r"(ALERT [12]) (TITLE|EXPLANATION|CAUSE|IMPACT):\s*(.*)", stripped)
            if match and (match.group(1), match.group(2)) not in fields:
                fields[(match.group(1), match.group(2))] = match.group(3)
        cause1 = fields.get(("ALERT 1", "CAUSE"), "")
        cause2 = fields.get(("ALERT 2", "CAUSE"), "")
        impact1 = fields.get(("ALERT 1", "IMPACT"), "")
        impact2 = fields.get(("ALERT 2", "IMPACT"), "")
        score12, shared12 = self.overlap_coefficient(cause1, impact2)
        score21, shared21 = self.overlap_coefficient(cause2, impact1)
        score, shared = max((score12, shared12), (score21, shared21), key=lambda x: (x[0], sorted(x[1])))
        if score >= MOCK_OVERLAP_THRESHOLD:
            return (
                f"{ANSWER_CORRELATED}\n"
                f"REASON: cause/impact keyword overlap: {', '.join(sorted(shared))}"
            )
        return (
            f"{ANSWER_NOT_CORRELATED}\n"
            "REASON: no sufficient overlap between possible causes and impacts"
        )


class RemoteChatBackend:
    """Minimal chat-completion client for a remote (possibly fine-tuned) model.

    One POST per call: ``{"model": ..., "messages": [...], "temperature": 0}``;
    the completion text is read from the configured JSON path.
    """

    def __init__(self, descriptor: LlmBackendDescriptor, session: requests.Session | None = None) -> None:
        if descriptor.kind is not BackendKind.REMOTE_CHAT:
            raise ValidationError("descriptor is not a remote chat backend")
        self.descriptor = descriptor
        self._session = session or requests.Session()

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str:
        body = {
            "model": self.descriptor.model,
            "messages": list(messages),
            "temperature": 0,
        }
        try:
            response = self._session.post(
                self.descriptor.endpoint, json=body, timeout=self.descriptor.timeout_s
            )
            response.raise_for_status()
            payload = response.json()
        except (requests.RequestException, ValueError) as exc:
            raise BackendError(f"remote chat call failed: {exc}") from exc
        node: Any = payload
        try:
            for step in self.descriptor.response_path:
                node = node[step]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"response missing completion at {self.descriptor.response_path}") from exc
        if not isinstance(node, str):
            raise BackendError("completion payload is not text")
        return node


def make_backend(descriptor: LlmBackendDescriptor):
    if descriptor.kind is BackendKind.MOCK:
        return MockChatBackend(descriptor)
    return RemoteChatBackend(descriptor)


def fallback_summary(sop: SopDocument, budget: int = SUMMARY_FIELD_BUDGET) -> SopSummary:
    """Rule-built summary used when the backend output cannot be parsed."""
    clip = lambda s: _clean(s)[:budget]
    return SopSummary(
        sop_id=sop.id,
        explanation_summary=clip(sop.explanation),
        impact_summary=clip(sop.impact),
        cause_summary=clip(sop.possible_cause),
        steps_summary=clip(sop.mitigation_steps),
        field_budget=budget,
    )


def extract_knowledge(
    backend,
    sop: SopDocument,
    cache: SummaryCache | None = None,
    budget: int = SUMMARY_FIELD_BUDGET,
) -> SopSummary:
    """Round one: summarize a SOP, reusing the cache whenever possible.

    Individual fields the backend failed to label fall back to the leading
    characters of the original section; a completely unusable response (after
    the descriptor's retries) degrades the whole summary that way.
    """
    descriptor: LlmBackendDescriptor = backend.descriptor
    fingerprint = descriptor.fingerprint()
    if cache is not None:
        hit = cache.get(sop, fingerprint)
        if hit is not None:
            return hit

    prompt = build_extraction_prompt(sop, descriptor.max_prompt_chars)
    parsed: dict[str, str] | None = None
    for _ in range(descriptor.max_retries + 1):
        try:
            response = backend.complete(prompt.as_wire_messages())
        except BackendError as exc:
            log.warning("extraction call failed for %s: %s", sop.id, exc)
            continue
        found = parse_summary_response(response)
        if found:
            parsed = found
            break
    degraded = parsed is None or len(parsed) < len(_SUMMARY_LABELS)

    fields: dict[str, str] = {}
    for label, field_name in _SUMMARY_LABELS.items():
        if parsed is not None and label in parsed:
            value = _clean(parsed[label])[:budget]
        else:
            value = _clean(getattr(sop, _SOP_FIELD_FOR_LABEL[label]))[:budget]
        fields[field_name] = value
    summary = SopSummary(sop_id=sop.id, field_budget=budget, **fields)
    if cache is not None:
        cache.put(sop, fingerprint, summary, degraded)
    return summary


@dataclass(frozen=True)
class PairQuery:
    """Everything round two needs to ask about one uncertain pair."""

    a: AlertType
    b: AlertType
    title_a: str
    title_b: str
    summary_a: SopSummary
    summary_b: SopSummary


def _sample_block(idx: int, entry: SampleEntry) -> str:
    answer = (
        ANSWER_CORRELATED
        if entry.label is VerdictLabel.CORRELATED
        else ANSWER_NOT_CORRELATED
    )
    reason = (
        "past incidents confirmed one shared root cause"
        if entry.label is VerdictLabel.CORRELATED
        else "past incidents showed these were independent"
    )
    return (
        f"SAMPLE {idx}:\n"
        f"ALERT 1 CAUSE: {_clean(entry.a.cause_summary)}\n"
        f"ALERT 1 IMPACT: {_clean(entry.a.impact_summary)}\n"
        f"ALERT 2 CAUSE: {_clean(entry.b.cause_summary)}\n"
        f"ALERT 2 IMPACT: {_clean(entry.b.impact_summary)}\n"
        f"{answer}\n"
        f"REASON: {reason}"
    )


def build_icl_prompt(
    query: PairQuery,
    samples: tuple[SampleEntry | None, SampleEntry | None],
    rules: ReasoningRuleSet,
    max_prompt_chars: int = 8000,
) -> Prompt:
    """Round-two prompt: rules, up to two worked samples, then the query.

    Over budget, content is shed in order: the negative sample, then the
    positive sample, then the query summaries are truncated. The fixed answer
    format keeps responses machine-checkable.
    """
    positive, negative = samples
    base_degradation = (positive is None) + (negative is None)

    system = "You analyze pairs of cloud monitoring alerts and decide whether they share one root cause.\nRULES:\n" + "\n".join(
        f"{i}. {_clean(rule)}" for i, rule in enumerate(rules.rules, start=1)
    )

    summary_budget = max(
        len(query.summary_a.cause_summary),
        len(query.summary_b.cause_summary),
        len(query.summary_a.impact_summary),
        len(query.summary_b.impact_summary),
        len(query.summary_a.explanation_summary),
        len(query.summary_b.explanation_summary),
        1,
    )

    def render(with_negative: bool, with_positive: bool, budget: int) -> str:
        blocks = []
        idx = 1
        if with_positive and positive is not None:
            blocks.append(_sample_block(idx, positive))
            idx += 1
        if with_negative and negative is not None:
            blocks.append(_sample_block(idx, negative))
            idx += 1
        clip = lambda s: _clean(s)[:budget]
        blocks.append(
            "QUERY:\n"
            f"ALERT 1 TITLE: {_clean(query.title_a)}\n"
            f"ALERT 1 EXPLANATION: {clip(query.summary_a.explanation_summary)}\n"
            f"ALERT 1 CAUSE: {clip(query.summary_a.cause_summary)}\n"
            f"ALERT 1 IMPACT: {clip(query.summary_a.impact_summary)}\n"
            f"ALERT 2 TITLE: {_clean(query.title_b)}\n"
            f"ALERT 2 EXPLANATION: {clip(query.summary_b.explanation_summary)}\n"
            f"ALERT 2 CAUSE: {clip(query.summary_b.cause_summary)}\n"
            f"ALERT 2 IMPACT: {clip(query.summary_b.impact_summary)}"
        )
        blocks.append(
            "Decide whether the two alerts in QUERY are correlated.\n"
            f"Reply with a first line of exactly {ANSWER_CORRELATED} or "
            f"{ANSWER_NOT_CORRELATED},\n"
            "then a second line REASON: <one sentence>."
        )
        return "\n\n".join(blocks)

    attempts = [
        (True, True, summary_budget, base_degradation),
        (False, True, summary_budget, max(base_degradation, 1)),
        (False, False, summary_budget, 2),
        (False, False, max(summary_budget // 4, 40), 3),
    ]
    for with_neg, with_pos, budget, degradation in attempts:
        user = render(with_neg, with_pos, budget)
        prompt = Prompt(
            messages=(("system", system), ("user", user)),
            degradation=degradation,
            truncated=degradation >= 3,
        )
        if prompt.length <= max_prompt_chars:
            return prompt
    return prompt


def parse_verdict(response: str) -> tuple[VerdictLabel, str]:
    """Find the first ANSWER line (case-insensitive) and the REASON text.

    "NOT CORRELATED" is matched before "CORRELATED" to dodge the substring
    hazard.
    """
    lines = response.splitlines()
    label: VerdictLabel | None = None
    answer_line = -1
    for i, line in enumerate(lines):
        stripped = line.strip().upper()
        if not stripped.startswith("ANSWER:"):
            continue
        rest = stripped[len("ANSWER:") :].strip()
        if "NOT CORRELATED" in rest:
            label = VerdictLabel.NOT_CORRELATED
        elif "CORRELATED" in rest:
            label = VerdictLabel.CORRELATED
        else:
            continue
        answer_line = i
        break
    if label is None:
        raise ParseError("response has no ANSWER line")
    remainder = "\n".join(lines[answer_line + 1 :])
    match = re.search(r"reason:\s*(.*)", remainder, flags=re.I | re.S)
    explanation = match.group(1).strip() if match else ""
    return label, explanation


def reason_pair(
    backend,
    query: PairQuery,
    embedder: TextEmbedder,
    bank: SampleBank,
    rules: ReasoningRuleSet,
    titles: Mapping[str, str] | None = None,
) -> CorrelationVerdict:
    """Round two for one uncertain pair: retrieve samples, prompt, parse.

    Any failure after the configured retries yields a conservative
    NotCorrelated verdict: a missed merge costs review time, a false merge
    misleads the whole triage.
    """
    descriptor: LlmBackendDescriptor = backend.descriptor
    samples = nearest_samples(embedder, (query.summary_a, query.summary_b), bank, titles)
    prompt = build_icl_prompt(query, samples, rules, descriptor.max_prompt_chars)
    for _ in range(descriptor.max_retries + 1):
        try:
            response = backend.complete(prompt.as_wire_messages())
            label, explanation = parse_verdict(response)
        except (BackendError, ParseError) as exc:
            log.warning("reasoning call failed for (%s, %s): %s", query.a.key, query.b.key, exc)
            continue
        return CorrelationVerdict(
            pair=(query.a, query.b),
            label=label,
            source=VerdictSource.LLM_REASONING,
            explanation=explanation or "no reason given",
        )
    return CorrelationVerdict(
        pair=(query.a, query.b),
        label=VerdictLabel.NOT_CORRELATED,
        source=VerdictSource.LLM_REASONING,
        explanation="llm-unparseable",
    )
