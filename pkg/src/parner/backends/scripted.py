"""Deterministic backend replaying completions from fixture entries."""

from __future__ import annotations

import json
from typing import Dict, Iterable

from parner.backends.base import (
    CompletionBackend,
    CompletionRequest,
    CompletionResult,
    MissingFixtureError,
    apply_request_limits,
)

__all__ = ["ScriptedBackend"]


class ScriptedBackend(CompletionBackend):
    """Replays fixture completions keyed by the exact prompt string.

    Fixture entries are JSON objects::

        {"prompt": "...", "tokens": ["..."], "logprobs": [-0.01],
         "finish": "eos", "latency_ms": 10.0}

    ``logprobs`` defaults to 0.0 per token, ``finish`` to "eos" and
    ``latency_ms`` to 0.0.  Stop strings and ``max_new_tokens`` from the
    request are applied to the replayed tokens.
    """

    def __init__(self, entries: Iterable[Dict]):
        self._fixtures: Dict[str, Dict] = {}
        for entry in entries:
            if "prompt" not in entry or "tokens" not in entry:
                raise ValueError(f"fixture entry needs 'prompt' and 'tokens': {entry!r}")
            self._fixtures[entry["prompt"]] = dict(entry)

    @classmethod
    def from_jsonl(cls, path: str) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as handle:
            return cls(json.loads(line) for line in handle if line.strip())

    def __len__(self) -> int:
        return len(self._fixtures)

    def generate(self, request: CompletionRequest) -> CompletionResult:
        entry = self._fixtures.get(request.prompt)
        if entry is None:
            preview = request.prompt[-120:]
            raise MissingFixtureError(f"no fixture for prompt ending {preview!r}")
        tokens = [str(t) for t in entry["tokens"]]
        logprobs = [float(x) for x in entry.get("logprobs") or [0.0] * len(tokens)]
        if len(logprobs) != len(tokens):
            raise ValueError(f"fixture logprobs misaligned for prompt {request.prompt[-80:]!r}")
        tokens, logprobs, text, stop_reason = apply_request_limits(
            tokens, logprobs, request, default_reason=entry.get("finish", "eos")
        )
        return CompletionResult(
            tokens=tuple(tokens),
            token_logprobs=tuple(logprobs) if request.want_logprobs else (),
            text=text,
            stop_reason=stop_reason,
            latency_ms=float(entry.get("latency_ms", 0.0)),
        )
