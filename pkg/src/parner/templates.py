"""Prompt construction and completion parsing for every decoding format.

The two-step (pair) format asks for a mention count first, then for each
indexed mention in its own sequence.  The baseline formats decode a whole
document (or a whole label) in one autoregressive pass: an inline-bracket
augmented text, a parenthesized per-label annotation, or a JSON list per
label.  Emitters and parsers for each format live side by side here so the
round-trip contract (parse(emit(gold)) == gold) is easy to state and test.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple

from parner.corpus import CorpusError, Document, GoldAnnotation, LabelSet, Mention

__all__ = [
    "TemplateError",
    "CountParseError",
    "PromptTemplate",
    "chinese_template",
    "Completion",
    "ParsedCount",
    "ParsedMention",
    "build_count_prompt",
    "build_mention_prompt",
    "build_autoreg_prompt",
    "build_onestep_prompt",
    "mention_marker",
    "parse_count",
    "parse_mention",
    "emit_struct",
    "parse_structured",
    "emit_aug",
    "parse_augmented",
    "emit_onestep",
    "parse_onestep",
    "visible_text",
]


class TemplateError(ValueError):
    """Raised for invalid template configuration or unbuildable prompts."""


class CountParseError(TemplateError):
    """A count completion held something other than digits; carries the raw text."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class Completion(Protocol):
    """Structural view of a backend completion: text, aligned tokens, stop reason."""

    text: str
    tokens: Sequence[str]
    stop_reason: str


@dataclass(frozen=True)
class PromptTemplate:
    """All literal strings that frame prompts and completions.

    Defaults reproduce the English two-step layout::

        text:
        <document text>
        entity type:
        PER
        <num>

    ``mention_marker`` must contain exactly one ``{n}`` placeholder for the
    1-based mention index.  The autoregressive/one-step headers below the
    divider frame the baseline formats; they are fixture strings of this
    implementation, not part of the two-step protocol itself.
    """

    text_header: str = "text:\n"
    entity_header: str = "\nentity type:\n"
    count_marker: str = "\n<num>\n"
    count_terminator: str = "\n"
    mention_marker: str = "<mention {n}>"
    eos_literal: str = "<eos>"
    max_count: int = 100
    # baseline (single-sequence) framing
    label_list_header: str = "\nentity types:\n"
    aug_answer_header: str = "\nannotated text:\n"
    struct_answer_header: str = "\nannotation:\n"
    onestep_entity_marker: str = "<entity>"
    onestep_text_marker: str = "<text>"

    def __post_init__(self) -> None:
        if self.mention_marker.count("{n}") != 1:
            raise TemplateError(
                f"mention_marker needs exactly one {{n}} placeholder: {self.mention_marker!r}"
            )
        if not self.count_terminator:
            raise TemplateError("count_terminator must be non-empty")
        if self.max_count < 1:
            raise TemplateError("max_count must be at least 1")


def chinese_template() -> PromptTemplate:
    """Template variant for unspaced Chinese corpora."""
    return PromptTemplate(
        text_header="文本(text):\n",
        entity_header="\n指定NER标签(entity type):\n",
        count_marker="\n<数量>(<num>)\n",
        mention_marker="<第{n}文段>",
    )


# ---------------------------------------------------------------------------
# Two-step prompts
# ---------------------------------------------------------------------------

def build_count_prompt(doc: Document, label_surface: str, t: PromptTemplate) -> str:
    """Prompt asking how many mentions of one label the document holds."""
    return t.text_header + doc.text + t.entity_header + label_surface + t.count_marker


def mention_marker(index: int, t: PromptTemplate) -> str:
    if index < 1:
        raise TemplateError(f"mention index must be >= 1, got {index}")
    return t.mention_marker.format(n=index)


def build_mention_prompt(count_prompt: str, count: int, index: int, t: PromptTemplate) -> str:
    """Extend a count prompt with the decoded count and one mention marker.

    The result is a strict extension of ``count_prompt``, so a stateless
    backend re-reads the full context on every step-two request.

    Raises:
        TemplateError: unless 1 <= index <= count.
    """
    if count < 1:
        raise TemplateError(f"count must be >= 1 to ask for a mention, got {count}")
    if not 1 <= index <= count:
        raise TemplateError(f"mention index {index} out of range 1..{count}")
    return count_prompt + str(count) + t.count_terminator + mention_marker(index, t)


def build_autoreg_prompt(doc: Document, fmt: str, labels: LabelSet, t: PromptTemplate) -> str:
    """Single-sequence baseline prompt for the aug or struct format."""
    if fmt == "aug":
        answer_header = t.aug_answer_header
    elif fmt == "struct":
        answer_header = t.struct_answer_header
    else:
        raise TemplateError(f"unknown autoregressive format: {fmt!r}")
    label_list = ", ".join(labels.surface(l) for l in labels)
    return t.text_header + doc.text + t.label_list_header + label_list + answer_header


def build_onestep_prompt(doc: Document, label_surface: str, t: PromptTemplate) -> str:
    """Per-label prompt whose answer is a JSON list of mention surfaces."""
    return t.onestep_entity_marker + label_surface + t.onestep_text_marker + doc.text


# ---------------------------------------------------------------------------
# Two-step completion parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParsedCount:
    """Decoded mention count; ``empty`` marks an immediate end-of-sequence.

    An empty completion is the trained "no mentions" signal and is
    equivalent to a count of zero.
    """

    value: int
    empty: bool = False


@dataclass(frozen=True)
class ParsedMention:
    """Decoded mention surface plus the inclusive token span that produced it.

    ``token_span`` indexes into the completion's token list and excludes the
    end-of-sequence token; it is ``None`` for an empty mention.
    """

    text: str
    token_span: Optional[Tuple[int, int]]

    @property
    def is_empty(self) -> bool:
        return self.text == ""


def visible_text(completion: Completion, t: PromptTemplate) -> str:
    """Generated text up to (excluding) the end-of-sequence literal."""
    text = completion.text
    cut = text.find(t.eos_literal)
    return text[:cut] if cut >= 0 else text


def parse_count(completion: Completion, t: PromptTemplate) -> ParsedCount:
    """Read the mention count from a step-one completion.

    The count is the digit run before the terminator; leading zeros are
    fine ("007" -> 7).  An immediate end-of-sequence (no digits at all)
    parses as the empty marker.

    Raises:
        CountParseError: for non-digit content (the raw completion text is
            attached) or a count above ``t.max_count``.
    """
    visible = visible_text(completion, t)
    idx = visible.find(t.count_terminator)
    digits = visible[:idx] if idx >= 0 else visible
    if digits == "":
        return ParsedCount(0, empty=True)
    if not (digits.isascii() and digits.isdigit()):
        raise CountParseError(
            f"expected a digit run before the terminator, got {completion.text!r}",
            raw_text=completion.text,
        )
    value = int(digits)
    if value > t.max_count:
        raise CountParseError(
            f"mention count {value} exceeds maximum {t.max_count}",
            raw_text=completion.text,
        )
    return ParsedCount(value)


def _tokens_overlapping(tokens: Sequence[str], char_end: int) -> Optional[Tuple[int, int]]:
    """Inclusive span of tokens overlapping the char range [0, char_end)."""
    if char_end <= 0:
        return None
    offset = 0
    last = None
    for i, tok in enumerate(tokens):
        if offset >= char_end:
            break
        if offset + len(tok) > 0 and offset < char_end and tok:
            last = i
        offset += len(tok)
    if last is None:
        return None
    return (0, last)


def parse_mention(completion: Completion, t: PromptTemplate) -> ParsedMention:
    """Read one mention surface from a step-two completion.

    The surface is everything before the end-of-sequence literal, with a
    trailing terminator trimmed.  The token span covers the surface and
    excludes the end-of-sequence token, so it is the right range for
    probability scoring.

    Example:
        tokens ["Ital", "y", "<eos>"] -> ParsedMention("Italy", (0, 1))
        tokens ["<eos>"]              -> ParsedMention("", None) (empty mention)
    """
    visible = visible_text(completion, t)
    while visible.endswith(t.count_terminator):
        visible = visible[: -len(t.count_terminator)]
    span = _tokens_overlapping(completion.tokens, len(visible))
    if visible == "":
        return ParsedMention("", None)
    return ParsedMention(visible, span)


# ---------------------------------------------------------------------------
# Structured annotation format: ((PER): (Cuttitta), ..., (ORG): (NULL))
# ---------------------------------------------------------------------------

_NULL_BODY = "NULL"


def emit_struct(gold: GoldAnnotation, labels: LabelSet) -> str:
    """Serialize gold mentions as a parenthesized per-label annotation.

    Labels appear in label-set order; a label with no mentions gets the
    NULL body.  Example::

        ((PER): (Cuttitta), (MISC): (1995 World Cup), (LOC): (Italy, England), (ORG): (NULL))
    """
    groups = []
    for label in labels:
        texts = [m.text for m in gold.for_label(label)]
        body = ", ".join(texts) if texts else _NULL_BODY
        groups.append(f"({labels.surface(label)}): ({body})")
    return "(" + ", ".join(groups) + ")"


def parse_structured(text: str, labels: LabelSet) -> Tuple[List[Mention], List[str]]:
    """Parse a structured annotation back into mentions (best effort).

    Mention bodies are comma-separated, so surfaces containing ", " cannot
    round-trip; that is a limit of the format itself.  Anything unparseable
    is reported as a defect string while the well-formed prefix is kept.
    Repeated label groups accumulate.
    """
    mentions: List[Mention] = []
    defects: List[str] = []
    stripped = text.strip()
    if not stripped.startswith("("):
        defects.append(f"annotation not wrapped in parentheses: {text!r}")
        return mentions, defects
    inner = stripped[1:]
    if inner.endswith(")"):
        inner = inner[:-1]
    else:
        defects.append(f"annotation not closed: {text!r}")
    pos = 0
    while pos < len(inner):
        if not inner.startswith("(", pos):
            defects.append(f"unparseable tail at offset {pos}: {inner[pos:]!r}")
            break
        head_end = inner.find("): (", pos)
        if head_end < 0:
            defects.append(f"unterminated label group at offset {pos}: {inner[pos:]!r}")
            break
        surface = inner[pos + 1 : head_end]
        body_start = head_end + len("): (")
        next_group = inner.find("), (", body_start)
        if next_group >= 0:
            body = inner[body_start:next_group]
            pos = next_group + len("), ")
        else:
            close = inner.rfind(")", body_start)
            if close < 0:
                defects.append(f"unterminated mention body at offset {body_start}")
                break
            body = inner[body_start:close]
            tail = inner[close + 1 :]
            if tail:
                defects.append(f"unparseable tail after final group: {tail!r}")
            pos = len(inner)
        try:
            label = labels.canonical(surface)
        except CorpusError:
            defects.append(f"unknown label surface {surface!r}")
            continue
        if body == _NULL_BODY:
            continue
        for part in body.split(", "):
            if part == "":
                defects.append(f"empty mention surface under label {label!r}")
                continue
            mentions.append(Mention(label, part))
    return mentions, defects


# ---------------------------------------------------------------------------
# Augmented-text format: brackets inline in a copy of the input
# ---------------------------------------------------------------------------

def emit_aug(doc: Document, gold: GoldAnnotation, labels: LabelSet) -> str:
    """Copy the document text, wrapping each gold mention as [surface | LABEL].

    Mentions are matched left to right, each search starting after the
    previous match, which assumes gold order follows source order.

    Raises:
        TemplateError: when a mention surface does not occur verbatim in the
            remaining text, making the format unbuildable for this document.
    """
    out = []
    cursor = 0
    for m in gold.mentions:
        idx = doc.text.find(m.text, cursor) if m.text else -1
        if idx < 0:
            raise TemplateError(
                f"mention {m.text!r} not found verbatim in document {doc.id} after offset {cursor}"
            )
        out.append(doc.text[cursor:idx])
        out.append(f"[{m.text} | {labels.surface(m.label)}]")
        cursor = idx + len(m.text)
    out.append(doc.text[cursor:])
    return "".join(out)


def parse_augmented(text: str, labels: LabelSet) -> Tuple[List[Mention], List[str]]:
    """Extract every well-formed [surface | LABEL] bracket in reading order.

    Malformed brackets (unclosed, missing separator, unknown label) are
    skipped and reported as defects; zero well-formed brackets is a valid
    empty result.
    """
    mentions: List[Mention] = []
    defects: List[str] = []
    pos = 0
    while True:
        start = text.find("[", pos)
        if start < 0:
            break
        end = text.find("]", start + 1)
        if end < 0:
            defects.append(f"unclosed bracket at offset {start}")
            break
        content = text[start + 1 : end]
        pos = end + 1
        if " | " not in content:
            defects.append(f"bracket without label separator: {content!r}")
            continue
        surface, label_surface = content.rsplit(" | ", 1)
        try:
            label = labels.canonical(label_surface)
        except CorpusError:
            defects.append(f"unknown label surface {label_surface!r} in bracket")
            continue
        if surface == "":
            defects.append("bracket with empty mention surface")
            continue
        mentions.append(Mention(label, surface))
    return mentions, defects


# ---------------------------------------------------------------------------
# One-step per-label format: a JSON list of surfaces
# ---------------------------------------------------------------------------

_QUOTED = re.compile(r'"((?:[^"\\]|\\.)*)"')


def emit_onestep(gold: GoldAnnotation, label: str) -> str:
    """JSON list of one label's mention surfaces, in gold order."""
    return json.dumps([m.text for m in gold.for_label(label)], ensure_ascii=False)


def parse_onestep(completion: Completion, t: PromptTemplate) -> Tuple[List[ParsedMention], List[str]]:
    """Parse a JSON-list completion, recovering each surface's token span.

    Spans are recovered by mapping every quoted string's character range
    onto the completion's token offsets, which keeps probability scoring
    possible for individual mentions inside the single sequence.  A
    completion that is not a well-formed JSON list is still scanned for
    quoted strings, with a defect recorded.
    """
    visible = visible_text(completion, t)
    defects: List[str] = []
    try:
        loaded = json.loads(visible)
        if not isinstance(loaded, list) or not all(isinstance(x, str) for x in loaded):
            defects.append(f"completion is not a JSON list of strings: {visible!r}")
    except (json.JSONDecodeError, ValueError):
        defects.append(f"completion is not well-formed JSON: {visible!r}")

    # token char offsets; completion.text is the token concatenation
    offsets: List[Tuple[int, int]] = []
    pos = 0
    for tok in completion.tokens:
        offsets.append((pos, pos + len(tok)))
        pos += len(tok)

    mentions: List[ParsedMention] = []
    for match in _QUOTED.finditer(visible):
        try:
            surface = json.loads(match.group(0))
        except json.JSONDecodeError:
            defects.append(f"undecodable string literal: {match.group(0)!r}")
            continue
        if surface == "":
            defects.append("empty mention surface in list")
            continue
        a, b = match.start() + 1, match.end() - 1
        covering = [i for i, (s, e) in enumerate(offsets) if s < b and e > a]
        span = (covering[0], covering[-1]) if covering else None
        mentions.append(ParsedMention(surface, span))
    return mentions, defects
