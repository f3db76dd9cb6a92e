"""Decoding schedulers: request fan-out, parsing, scoring, latency accounting.

The pair scheduler runs the two-step protocol: one count request per label,
then one request per (label, mention index), every step-two prompt rebuilt
from scratch so backends stay stateless.  "multi" issues each sequence as
its own call and charges a document the slowest count+mention sum; "batch"
groups each step into one logical backend batch and charges the sum of the
two batch walls.  The baseline schedulers decode one sequence per document
(autoreg) or per label (onestep).

Parsing or backend failures for one sequence degrade to defect records; a
document never hard-fails.
"""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from parner.backends.base import (
    BackendError,
    CompletionBackend,
    CompletionRequest,
    CompletionResult,
)
from parner.corpus import Document, LabelSet
from parner.templates import (
    CountParseError,
    PromptTemplate,
    build_autoreg_prompt,
    build_count_prompt,
    build_mention_prompt,
    build_onestep_prompt,
    parse_augmented,
    parse_count,
    parse_mention,
    parse_onestep,
    parse_structured,
    visible_text,
)

__all__ = [
    "MODES",
    "SequenceTrace",
    "ScoredMention",
    "DecodeOutcome",
    "span_probability",
    "decode_pair",
    "decode_onestep",
    "decode_autoreg",
    "decode_document",
    "run_corpus",
]

MODES = ("pair-multi", "pair-batch", "onestep", "autoreg-aug", "autoreg-struct")

_FAN_OUT_WIDTH = 16


@dataclass(frozen=True)
class SequenceTrace:
    """One decoded sequence with its request, result and attributed latency.

    For step-two sequences ``latency_ms`` includes the label's step-one
    latency (the mention could not start before its count arrived), so the
    per-document latency is simply the max over traces.
    """

    seq_id: str
    label: Optional[str]
    kind: str  # count | mention | onestep | autoreg
    mention_index: Optional[int]
    request: CompletionRequest
    result: CompletionResult
    latency_ms: float


@dataclass(frozen=True)
class ScoredMention:
    """A raw predicted mention scored by its decoding probability.

    The probability is exp of the summed token logprobs over the mention's
    span.  Formats that do not expose per-mention spans score 1.0.
    """

    label: str
    text: str
    probability: float
    seq_id: str


@dataclass
class DecodeOutcome:
    """Everything one document's decode produced, before de-duplication."""

    doc_id: str
    raw_mentions: List[ScoredMention]
    traces: List[SequenceTrace]
    example_latency_ms: float
    step1_batch_size: int
    step2_batch_size: int
    defects: List[str] = field(default_factory=list)
    repeat_latencies: Optional[List[float]] = None


def span_probability(
    token_logprobs: Sequence[float], span: Optional[Tuple[int, int]]
) -> float:
    """Probability of a token span: exp of its summed natural-log probs.

    Returns 1.0 when no logprobs or no span are available, keeping the
    result in (0, 1] either way.
    """
    if span is None or not token_logprobs:
        return 1.0
    start, end = span
    return min(1.0, math.exp(math.fsum(token_logprobs[start : end + 1])))


_CallOutcome = Union[CompletionResult, BackendError]


def _fan_out(
    backend: CompletionBackend,
    requests: Sequence[CompletionRequest],
    parallel: bool,
) -> List[_CallOutcome]:
    """Issue requests (concurrently when asked), keeping request order.

    Backend errors are captured per item so one failed sequence cannot
    take down its siblings.
    """

    def one(request: CompletionRequest) -> _CallOutcome:
        try:
            return backend.generate(request)
        except BackendError as exc:
            return exc

    if not parallel or len(requests) <= 1:
        return [one(r) for r in requests]
    with ThreadPoolExecutor(max_workers=min(len(requests), _FAN_OUT_WIDTH)) as pool:
        return list(pool.map(one, requests))


def _batch(
    backend: CompletionBackend, requests: Sequence[CompletionRequest]
) -> Union[List[CompletionResult], BackendError]:
    try:
        return backend.generate_batch(requests)
    except BackendError as exc:
        return exc


def _mention_request(
    count_prompt: str, count: int, index: int, t: PromptTemplate, max_new_tokens: int
) -> CompletionRequest:
    return CompletionRequest(
        prompt=build_mention_prompt(count_prompt, count, index, t),
        max_new_tokens=max_new_tokens,
    )


def decode_pair(
    doc: Document,
    labels: LabelSet,
    backend: CompletionBackend,
    t: PromptTemplate,
    batch: bool = False,
    max_new_tokens: int = 512,
) -> DecodeOutcome:
    """Two-step decode of one document.

    Step one asks every label for its mention count; an empty completion
    counts as zero and skips step two for that label.  Step two asks for
    each indexed mention.  In multi mode the document's latency is the max
    over per-sequence latencies (count-only labels included); in batch mode
    it is the sum of the two batch walls, where a batch's wall is the max
    latency among its members (lockstep decoding).
    """
    traces: List[SequenceTrace] = []
    defects: List[str] = []
    mentions: List[ScoredMention] = []

    count_prompts = {label: build_count_prompt(doc, labels.surface(label), t)
                     for label in labels}
    count_requests = [
        CompletionRequest(prompt=count_prompts[label], max_new_tokens=max_new_tokens)
        for label in labels
    ]

    if batch:
        got = _batch(backend, count_requests)
        if isinstance(got, BackendError):
            defects.append(f"count batch failed: {got}")
            got = [None] * len(count_requests)
        count_results: List[Optional[_CallOutcome]] = list(got)
    else:
        count_results = list(_fan_out(backend, count_requests, parallel=True))

    counts: Dict[str, int] = {}
    step1_latency: Dict[str, float] = {}
    for label, request, result in zip(labels, count_requests, count_results):
        if result is None:
            continue
        if isinstance(result, BackendError):
            defects.append(f"count request failed for label {label}: {result}")
            continue
        traces.append(SequenceTrace(
            seq_id=f"{doc.id}/{label}/count",
            label=label,
            kind="count",
            mention_index=None,
            request=request,
            result=result,
            latency_ms=result.latency_ms,
        ))
        step1_latency[label] = result.latency_ms
        try:
            counts[label] = parse_count(result, t).value
        except CountParseError as exc:
            defects.append(f"count unparseable for label {label}: {exc}")

    mention_keys: List[Tuple[str, int]] = []
    mention_requests: List[CompletionRequest] = []
    for label in labels:
        count = counts.get(label, 0)
        for index in range(1, count + 1):
            mention_keys.append((label, index))
            mention_requests.append(
                _mention_request(count_prompts[label], count, index, t, max_new_tokens)
            )

    if batch:
        got = _batch(backend, mention_requests)
        if isinstance(got, BackendError):
            defects.append(f"mention batch failed: {got}")
            got = [None] * len(mention_requests)
        mention_results: List[Optional[_CallOutcome]] = list(got)
    else:
        mention_results = list(_fan_out(backend, mention_requests, parallel=True))

    step1_wall = max(step1_latency.values(), default=0.0)
    step2_wall = 0.0
    for (label, index), request, result in zip(mention_keys, mention_requests, mention_results):
        if result is None:
            continue
        if isinstance(result, BackendError):
            defects.append(f"mention request failed for {label} index {index}: {result}")
            continue
        step2_wall = max(step2_wall, result.latency_ms)
        upstream = step1_wall if batch else step1_latency[label]
        seq_id = f"{doc.id}/{label}/mention{index}"
        traces.append(SequenceTrace(
            seq_id=seq_id,
            label=label,
            kind="mention",
            mention_index=index,
            request=request,
            result=result,
            latency_ms=upstream + result.latency_ms,
        ))
        parsed = parse_mention(result, t)
        text = parsed.text.strip()
        if not text:
            defects.append(f"empty mention for label {label} index {index}")
            continue
        mentions.append(ScoredMention(
            label=label,
            text=text,
            probability=span_probability(result.token_logprobs, parsed.token_span),
            seq_id=seq_id,
        ))

    if batch:
        example_latency = step1_wall + step2_wall
    else:
        example_latency = max((tr.latency_ms for tr in traces), default=0.0)

    return DecodeOutcome(
        doc_id=doc.id,
        raw_mentions=mentions,
        traces=traces,
        example_latency_ms=example_latency,
        step1_batch_size=len(labels),
        step2_batch_size=sum(counts.values()),
        defects=defects,
    )


def decode_onestep(
    doc: Document,
    labels: LabelSet,
    backend: CompletionBackend,
    t: PromptTemplate,
    batch: bool = False,
    max_new_tokens: int = 512,
) -> DecodeOutcome:
    """One JSON-list sequence per label, decoded in parallel.

    The document's latency is the max over the label sequences (multi) or
    the single batch wall (batch); both reduce to the slowest label.
    """
    traces: List[SequenceTrace] = []
    defects: List[str] = []
    mentions: List[ScoredMention] = []

    requests = [
        CompletionRequest(
            prompt=build_onestep_prompt(doc, labels.surface(label), t),
            max_new_tokens=max_new_tokens,
        )
        for label in labels
    ]
    if batch:
        got = _batch(backend, requests)
        if isinstance(got, BackendError):
            defects.append(f"onestep batch failed: {got}")
            got = [None] * len(requests)
        results: List[Optional[_CallOutcome]] = list(got)
    else:
        results = list(_fan_out(backend, requests, parallel=True))

    for label, request, result in zip(labels, requests, results):
        if result is None:
            continue
        if isinstance(result, BackendError):
            defects.append(f"onestep request failed for label {label}: {result}")
            continue
        seq_id = f"{doc.id}/{label}/onestep"
        traces.append(SequenceTrace(
            seq_id=seq_id,
            label=label,
            kind="onestep",
            mention_index=None,
            request=request,
            result=result,
            latency_ms=result.latency_ms,
        ))
        parsed, parse_defects = parse_onestep(result, t)
        defects.extend(f"label {label}: {d}" for d in parse_defects)
        for item in parsed:
            text = item.text.strip()
            if not text:
                defects.append(f"empty mention in onestep list for label {label}")
                continue
            mentions.append(ScoredMention(
                label=label,
                text=text,
                probability=span_probability(result.token_logprobs, item.token_span),
                seq_id=seq_id,
            ))

    example_latency = max((tr.latency_ms for tr in traces), default=0.0)
    return DecodeOutcome(
        doc_id=doc.id,
        raw_mentions=mentions,
        traces=traces,
        example_latency_ms=example_latency,
        step1_batch_size=len(labels),
        step2_batch_size=0,
        defects=defects,
    )


def decode_autoreg(
    doc: Document,
    labels: LabelSet,
    backend: CompletionBackend,
    t: PromptTemplate,
    fmt: str,
    max_new_tokens: int = 512,
) -> DecodeOutcome:
    """Single-sequence baseline decode in the aug or struct format.

    These formats expose no per-mention token spans, so every mention is
    scored with probability 1.0 and de-duplication falls back to the
    label-order tie-break.
    """
    request = CompletionRequest(
        prompt=build_autoreg_prompt(doc, fmt, labels, t),
        max_new_tokens=max_new_tokens,
    )
    defects: List[str] = []
    try:
        result = backend.generate(request)
    except BackendError as exc:
        return DecodeOutcome(
            doc_id=doc.id,
            raw_mentions=[],
            traces=[],
            example_latency_ms=0.0,
            step1_batch_size=1,
            step2_batch_size=0,
            defects=[f"autoreg request failed: {exc}"],
        )
    seq_id = f"{doc.id}/autoreg"
    trace = SequenceTrace(
        seq_id=seq_id,
        label=None,
        kind="autoreg",
        mention_index=None,
        request=request,
        result=result,
        latency_ms=result.latency_ms,
    )
    text = visible_text(result, t)
    if fmt == "struct":
        parsed, parse_defects = parse_structured(text, labels)
    else:
        parsed, parse_defects = parse_augmented(text, labels)
    defects.extend(parse_defects)
    mentions = []
    for m in parsed:
        stripped = m.text.strip()
        if not stripped:
            defects.append(f"empty mention surface under label {m.label}")
            continue
        mentions.append(ScoredMention(m.label, stripped, 1.0, seq_id))
    return DecodeOutcome(
        doc_id=doc.id,
        raw_mentions=mentions,
        traces=[trace],
        example_latency_ms=result.latency_ms,
        step1_batch_size=1,
        step2_batch_size=0,
        defects=defects,
    )


def decode_document(
    doc: Document,
    labels: LabelSet,
    backend: CompletionBackend,
    t: PromptTemplate,
    mode: str,
    max_new_tokens: int = 512,
) -> DecodeOutcome:
    """Decode one document in any supported mode."""
    if mode == "pair-multi":
        return decode_pair(doc, labels, backend, t, batch=False, max_new_tokens=max_new_tokens)
    if mode == "pair-batch":
        return decode_pair(doc, labels, backend, t, batch=True, max_new_tokens=max_new_tokens)
    if mode == "onestep":
        return decode_onestep(doc, labels, backend, t, max_new_tokens=max_new_tokens)
    if mode == "autoreg-aug":
        return decode_autoreg(doc, labels, backend, t, "aug", max_new_tokens=max_new_tokens)
    if mode == "autoreg-struct":
        return decode_autoreg(doc, labels, backend, t, "struct", max_new_tokens=max_new_tokens)
    raise ValueError(f"unknown decode mode: {mode!r} (expected one of {MODES})")


def run_corpus(
    docs: Sequence[Document],
    labels: LabelSet,
    backend: CompletionBackend,
    t: PromptTemplate,
    mode: str,
    parallelism: int = 4,
    repeats: int = 1,
    max_new_tokens: int = 512,
) -> List[DecodeOutcome]:
    """Decode a corpus with bounded document parallelism.

    Output order always equals input order regardless of completion order.
    With ``repeats`` > 1 each document is decoded that many times and the
    reported example latency is the mean; mentions and traces come from the
    first run (deterministic backends reproduce them exactly anyway).
    """
    if mode not in MODES:
        raise ValueError(f"unknown decode mode: {mode!r} (expected one of {MODES})")
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")

    def decode_with_repeats(doc: Document) -> DecodeOutcome:
        runs = [
            decode_document(doc, labels, backend, t, mode, max_new_tokens=max_new_tokens)
            for _ in range(repeats)
        ]
        outcome = runs[0]
        if repeats > 1:
            latencies = [r.example_latency_ms for r in runs]
            outcome.repeat_latencies = latencies
            outcome.example_latency_ms = statistics.fmean(latencies)
        return outcome

    if parallelism == 1 or len(docs) <= 1:
        return [decode_with_repeats(doc) for doc in docs]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(decode_with_repeats, docs))
