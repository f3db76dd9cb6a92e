"""Pluggable text-completion backends sharing one request/result contract."""

from parner.backends.base import (
    BackendError,
    CompletionBackend,
    CompletionRequest,
    CompletionResult,
    CostModel,
    MissingFixtureError,
    TransportError,
    UnknownPromptError,
    simple_tokenize,
)
from parner.backends.http import HttpBackend
from parner.backends.oracle import ErrorInjection, OracleBackend
from parner.backends.scripted import ScriptedBackend

__all__ = [
    "BackendError",
    "CompletionBackend",
    "CompletionRequest",
    "CompletionResult",
    "CostModel",
    "ErrorInjection",
    "HttpBackend",
    "MissingFixtureError",
    "OracleBackend",
    "ScriptedBackend",
    "TransportError",
    "UnknownPromptError",
    "simple_tokenize",
]
