"""Backend-neutral completion types, errors and the simulated cost model."""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence, Tuple

__all__ = [
    "BackendError",
    "TransportError",
    "MissingFixtureError",
    "UnknownPromptError",
    "CompletionRequest",
    "CompletionResult",
    "CostModel",
    "CompletionBackend",
    "apply_request_limits",
    "simple_tokenize",
]

STOP_REASONS = ("eos", "stop_string", "length")


class BackendError(RuntimeError):
    """Base class for completion-backend failures."""


class TransportError(BackendError):
    """HTTP transport failure or protocol violation, after retries."""


class MissingFixtureError(BackendError):
    """A scripted backend was asked for a prompt it has no entry for."""


class UnknownPromptError(BackendError):
    """A replay oracle received a prompt it cannot map to its gold corpus."""


@dataclass(frozen=True)
class CompletionRequest:
    """One text-completion call.

    ``greedy`` requests deterministic single-path decoding (beam size 1);
    all bundled backends are deterministic regardless.
    """

    prompt: str
    max_new_tokens: int = 512
    temperature: float = 1.0
    stop: Tuple[str, ...] = ()
    want_logprobs: bool = True
    greedy: bool = True

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")


@dataclass(frozen=True)
class CompletionResult:
    """Generated tokens with aligned natural-log probabilities.

    ``text`` is always the exact concatenation of ``tokens``; parsers rely
    on that alignment to map character ranges back to token spans.
    """

    tokens: Tuple[str, ...]
    token_logprobs: Tuple[float, ...]
    text: str
    stop_reason: str
    latency_ms: float

    @property
    def generated_token_count(self) -> int:
        return len(self.tokens)

    def __post_init__(self) -> None:
        if self.stop_reason not in STOP_REASONS:
            raise ValueError(f"unknown stop_reason: {self.stop_reason!r}")
        if self.token_logprobs and len(self.token_logprobs) != len(self.tokens):
            raise ValueError(
                f"{len(self.token_logprobs)} logprobs for {len(self.tokens)} tokens"
            )


@dataclass(frozen=True)
class CostModel:
    """Affine latency model for simulated backends.

    A call generating n tokens in a batch of b costs
    ``fixed_overhead_ms + ms_per_token * n * penalty(b)`` where
    ``penalty(b) = 1 + alpha * (b - 1)``: batching never helps a single
    sequence, it taxes it mildly.
    """

    ms_per_token: float = 10.0
    fixed_overhead_ms: float = 0.0
    batch_penalty_alpha: float = 0.05

    def penalty(self, batch_size: int) -> float:
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        return 1.0 + self.batch_penalty_alpha * (batch_size - 1)

    def latency_ms(self, token_count: int, batch_size: int = 1) -> float:
        return self.fixed_overhead_ms + self.ms_per_token * token_count * self.penalty(batch_size)


class CompletionBackend:
    """Interface for stateless prompt -> completion generation.

    Implementations must be safe for concurrent ``generate`` calls and
    immutable once constructed, so that results are a pure function of the
    request (plus any configured seed), never of call order.
    """

    def generate(self, request: CompletionRequest) -> CompletionResult:
        raise NotImplementedError

    def generate_batch(self, requests: Sequence[CompletionRequest]) -> List[CompletionResult]:
        """One logical batch; the default fans out concurrently.

        Simulated backends override batch accounting to tax every member
        with the batch-size penalty.  The batch's wall latency is the max
        of the member latencies (lockstep decode: early finishers wait for
        the longest sequence).
        """
        if not requests:
            return []
        if len(requests) == 1:
            return [self.generate(requests[0])]
        with ThreadPoolExecutor(max_workers=min(len(requests), 16)) as pool:
            return list(pool.map(self.generate, requests))


def apply_request_limits(
    tokens: List[str],
    logprobs: List[float],
    request: CompletionRequest,
    default_reason: str = "eos",
) -> Tuple[List[str], List[float], str, str]:
    """Apply stop strings and the token budget to a would-be completion.

    Stop strings are honored at their first occurrence in the concatenated
    text (a token straddling the cut is kept truncated, preserving
    text/token alignment), then ``max_new_tokens`` caps the length.
    Returns (tokens, logprobs, text, stop_reason).
    """
    text = "".join(tokens)
    reason = default_reason
    cut = min((i for i in (text.find(s) for s in request.stop if s) if i >= 0), default=-1)
    if cut >= 0:
        kept_tokens: List[str] = []
        kept_logprobs: List[float] = []
        pos = 0
        for tok, lp in zip(tokens, logprobs):
            if pos >= cut:
                break
            kept_tokens.append(tok if pos + len(tok) <= cut else tok[: cut - pos])
            kept_logprobs.append(lp)
            pos += len(tok)
        tokens, logprobs, text = kept_tokens, kept_logprobs, text[:cut]
        reason = "stop_string"
    if len(tokens) > request.max_new_tokens:
        tokens = tokens[: request.max_new_tokens]
        logprobs = logprobs[: request.max_new_tokens]
        text = "".join(tokens)
        reason = "length"
    return tokens, logprobs, text, reason


_TOKEN_RE = re.compile(r"\s*\S+|\s+")


def simple_tokenize(text: str) -> List[str]:
    """Whitespace-attached word tokens whose concatenation is exactly ``text``.

    Leading whitespace sticks to the following word, mirroring how subword
    vocabularies carry space markers:

        >>> simple_tokenize("Jacques Moret")
        ['Jacques', ' Moret']

    Unspaced scripts come out as one token per run; that coarsens the cost
    model for such text but keeps alignment exact.
    """
    return _TOKEN_RE.findall(text)
