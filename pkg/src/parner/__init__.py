"""Parallel per-label NER decoding over pluggable text-completion backends."""

from parner.corpus import Document, GoldAnnotation, LabelSet, Mention

__version__ = "0.1.0"

__all__ = ["Document", "GoldAnnotation", "LabelSet", "Mention", "__version__"]
