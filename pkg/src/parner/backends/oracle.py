"""Gold-replay oracle backend with seeded error injection.

The oracle recognizes every prompt the schedulers can build over its
reference corpus and answers from gold: counts as digit tokens, mentions
as the indexed gold surface, baseline prompts as the serialized gold
annotation.  Optional error injection perturbs counts by one or swaps a
mention for another label's surface, which is how cross-label duplicates
and count mistakes are manufactured on demand.

Every random decision is derived by hashing the seed with the decision's
identity (document, label, index), never from shared RNG state, so answers
are a pure function of the request and identical under any call order or
concurrency.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from parner.backends.base import (
    CompletionBackend,
    CompletionRequest,
    CompletionResult,
    CostModel,
    UnknownPromptError,
    apply_request_limits,
    simple_tokenize,
)
from parner.corpus import Document, GoldAnnotation, LabelSet
from parner.templates import (
    PromptTemplate,
    TemplateError,
    build_autoreg_prompt,
    build_count_prompt,
    build_onestep_prompt,
    emit_aug,
    emit_onestep,
    emit_struct,
)

__all__ = ["ErrorInjection", "OracleBackend"]


@dataclass(frozen=True)
class ErrorInjection:
    """Controlled mistakes for the replay oracle.

    ``p_count`` perturbs a label's mention count by +-1 (never below zero);
    ``p_index`` replaces a mention answer with a surface taken from another
    label of the same document.  The ``forced_*`` maps override specific
    answers deterministically: counts keyed by (doc_id, label), mention
    surfaces keyed by (doc_id, label, index).  Forced and swapped answers
    are scored with the low token probability.
    """

    p_count: float = 0.0
    p_index: float = 0.0
    forced_counts: Dict[Tuple[str, str], int] = field(default_factory=dict)
    forced_mentions: Dict[Tuple[str, str, int], str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, p in (("p_count", self.p_count), ("p_index", self.p_index)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")


class OracleBackend(CompletionBackend):
    """Answers protocol prompts from a gold corpus with simulated latency.

    With zero error rates and no forced overrides the oracle inverts
    corpus reformulation exactly: decoding any document in any format
    reproduces its gold mentions.  Token probabilities are synthesized
    near ``hi_token_prob`` for faithful answers and near ``lo_token_prob``
    for injected errors, with a small seeded jitter.

    The instance is immutable after construction and safe for concurrent
    use.
    """

    def __init__(
        self,
        pairs: Iterable[Tuple[Document, GoldAnnotation]],
        labels: LabelSet,
        template: Optional[PromptTemplate] = None,
        cost: Optional[CostModel] = None,
        errors: Optional[ErrorInjection] = None,
        seed: int = 0,
        hi_token_prob: float = 0.93,
        lo_token_prob: float = 0.61,
        prob_jitter: float = 0.02,
    ):
        self._labels = labels
        self._t = template or PromptTemplate()
        self._cost = cost or CostModel()
        self._errors = errors or ErrorInjection()
        self._seed = seed
        self._hi = hi_token_prob
        self._lo = lo_token_prob
        self._jitter = prob_jitter
        for name, p in (("hi_token_prob", self._hi), ("lo_token_prob", self._lo)):
            if not 0.0 < p < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {p}")

        t = self._t
        # prompt -> ("count", doc, gold, label) | ("onestep", ...) | ("autoreg", doc, gold, output)
        self._exact: Dict[str, tuple] = {}
        for doc, gold in pairs:
            for label in labels:
                surface = labels.surface(label)
                self._exact[build_count_prompt(doc, surface, t)] = ("count", doc, gold, label)
                self._exact[build_onestep_prompt(doc, surface, t)] = ("onestep", doc, gold, label)
            self._exact[build_autoreg_prompt(doc, "struct", labels, t)] = (
                "autoreg", doc, gold, emit_struct(gold, labels))
            try:
                aug_output = emit_aug(doc, gold, labels)
            except TemplateError:
                aug_output = None  # mention not verbatim in text; format unbuildable
            self._exact[build_autoreg_prompt(doc, "aug", labels, t)] = (
                "autoreg", doc, gold, aug_output)

        marker_pre, marker_post = t.mention_marker.split("{n}")
        self._mention_tail = re.compile(
            r"(\d+)" + re.escape(t.count_terminator)
            + re.escape(marker_pre) + r"(\d+)" + re.escape(marker_post) + r"\Z"
        )

    # -- seeded, order-independent randomness --------------------------------

    def _unit(self, *parts: object) -> float:
        """Uniform [0, 1) derived from the seed and the decision identity."""
        material = "\x1f".join(str(p) for p in (self._seed, *parts))
        digest = hashlib.sha256(material.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") / 2.0**64

    def _logprob(self, erroneous: bool, *key: object) -> float:
        base = self._lo if erroneous else self._hi
        if self._jitter:
            base += (self._unit("jitter", *key) * 2.0 - 1.0) * self._jitter
        return math.log(min(max(base, 1e-6), 1.0 - 1e-9))

    # -- answers --------------------------------------------------------------

    def generate(self, request: CompletionRequest) -> CompletionResult:
        return self._answer(request, batch_size=1)

    def generate_batch(self, requests: Sequence[CompletionRequest]) -> List[CompletionResult]:
        return [self._answer(r, batch_size=len(requests)) for r in requests]

    def _answer(self, request: CompletionRequest, batch_size: int) -> CompletionResult:
        entry = self._exact.get(request.prompt)
        if entry is not None:
            kind = entry[0]
            if kind == "count":
                tokens, logprobs = self._count_answer(entry[1], entry[2], entry[3])
            elif kind == "onestep":
                _, doc, gold, label = entry
                tokens, logprobs = self._serialized_answer(
                    emit_onestep(gold, label), doc.id, f"onestep/{label}")
            else:
                _, doc, _, output = entry
                if output is None:
                    raise UnknownPromptError(
                        f"augmented answer unbuildable for document {doc.id}"
                    )
                tokens, logprobs = self._serialized_answer(output, doc.id, "autoreg")
            return self._finish(tokens, logprobs, request, batch_size)

        mention = self._match_mention_prompt(request.prompt)
        if mention is None:
            raise UnknownPromptError(
                f"prompt does not match any document/label in the oracle corpus: "
                f"{request.prompt[-120:]!r}"
            )
        doc, gold, label, index = mention
        tokens, logprobs = self._mention_answer(doc, gold, label, index)
        return self._finish(tokens, logprobs, request, batch_size)

    def _finish(
        self,
        tokens: List[str],
        logprobs: List[float],
        request: CompletionRequest,
        batch_size: int,
    ) -> CompletionResult:
        tokens, logprobs, text, reason = apply_request_limits(tokens, logprobs, request)
        return CompletionResult(
            tokens=tuple(tokens),
            token_logprobs=tuple(logprobs) if request.want_logprobs else (),
            text=text,
            stop_reason=reason,
            latency_ms=self._cost.latency_ms(len(tokens), batch_size),
        )

    def _match_mention_prompt(
        self, prompt: str
    ) -> Optional[Tuple[Document, GoldAnnotation, str, int]]:
        head, sep, _ = prompt.rpartition(self._t.count_marker)
        if not sep:
            return None
        count_prompt = head + sep
        entry = self._exact.get(count_prompt)
        if entry is None or entry[0] != "count":
            return None
        tail = prompt[len(count_prompt):]
        match = self._mention_tail.fullmatch(tail)
        if match is None:
            return None
        _, doc, gold, label = entry
        return doc, gold, label, int(match.group(2))

    def _count_answer(
        self, doc: Document, gold: GoldAnnotation, label: str
    ) -> Tuple[List[str], List[float]]:
        t = self._t
        gold_m = len(gold.for_label(label))
        forced = self._errors.forced_counts.get((doc.id, label))
        if forced is not None:
            m = forced
        else:
            m = gold_m
            if self._errors.p_count > 0 and self._unit("count?", doc.id, label) < self._errors.p_count:
                delta = 1 if gold_m == 0 or self._unit("count+-", doc.id, label) < 0.5 else -1
                m = gold_m + delta
        erroneous = m != gold_m
        if m <= 0:
            tokens = [t.eos_literal]
        else:
            tokens = list(str(m)) + [t.count_terminator]
        logprobs = [self._logprob(erroneous, doc.id, label, "count", i)
                    for i in range(len(tokens))]
        return tokens, logprobs

    def _mention_answer(
        self, doc: Document, gold: GoldAnnotation, label: str, index: int
    ) -> Tuple[List[str], List[float]]:
        mentions = gold.for_label(label)
        forced = self._errors.forced_mentions.get((doc.id, label, index))
        if forced is not None:
            surface, erroneous = forced, True
        elif 1 <= index <= len(mentions):
            surface, erroneous = mentions[index - 1].text, False
            if self._errors.p_index > 0 and self._unit("index?", doc.id, label, index) < self._errors.p_index:
                swapped = self._cross_label_surface(doc, gold, label, index)
                if swapped is not None:
                    surface, erroneous = swapped, True
        elif mentions:
            # count was overestimated: repeat the last known mention
            surface, erroneous = mentions[-1].text, True
        else:
            surface = self._cross_label_surface(doc, gold, label, index) or "unknown"
            erroneous = True
        tokens = simple_tokenize(surface) + [self._t.eos_literal]
        logprobs = [self._logprob(erroneous, doc.id, label, "mention", index, i)
                    for i in range(len(tokens) - 1)]
        logprobs.append(self._logprob(False, doc.id, label, "mention-eos", index))
        return tokens, logprobs

    def _cross_label_surface(
        self, doc: Document, gold: GoldAnnotation, label: str, index: int
    ) -> Optional[str]:
        candidates = [m.text for m in gold.mentions if m.label != label]
        if not candidates:
            return None
        pick = int(self._unit("swap", doc.id, label, index) * len(candidates))
        return candidates[min(pick, len(candidates) - 1)]

    def _serialized_answer(
        self, output: str, doc_id: str, key: str
    ) -> Tuple[List[str], List[float]]:
        tokens = simple_tokenize(output) + [self._t.eos_literal]
        logprobs = [self._logprob(False, doc_id, key, i) for i in range(len(tokens))]
        return tokens, logprobs
