"""Core data model: anchors, tag records, edit operations, annotation files.

Offsets everywhere are counts of Unicode scalar values from the start of the
decoded document (Python string indices), never bytes or UTF-16 units.
"""

from __future__ import annotations

import hashlib
import re
import uuid
from dataclasses import dataclass, field, replace
from typing import Any

# Snippet of surrounding text cached with each anchor, in scalar values.
CONTEXT_WINDOW = 64

STATUS_ATTACHED = "attached"
STATUS_ORPHANED = "orphaned"
STATUS_PROPOSED = "proposed"
STATUSES = (STATUS_ATTACHED, STATUS_ORPHANED, STATUS_PROPOSED)

_UUID4_RE = re.compile(
    r"^[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}$"
)


@dataclass(frozen=True)
class Anchor:
    """Half-open character range [start, end) within a document."""

    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start

    @property
    def is_empty(self) -> bool:
        return self.start == self.end


@dataclass(frozen=True)
class DocumentRef:
    """A document identified by repo-relative path plus a digest of its bytes."""

    path: str
    digest: str


@dataclass(frozen=True)
class AnchorContext:
    """Text snapshot taken at last attachment: the anchored text plus up to
    CONTEXT_WINDOW scalar values on each side."""

    anchor_text: str
    prefix: str
    suffix: str


@dataclass
class TagRecord:
    """One annotation: identity, anchor, cached context, renderer name, opaque
    payload, and attachment status.

    ``data`` is owned by the annotation type and treated as an opaque JSON
    value by the engine. ``extra`` holds unknown fields found in stored
    records so they survive a load/save round trip.
    """

    id: str
    anchor: Anchor
    context: AnchorContext
    annotation_type: str
    data: Any = None
    status: str = STATUS_ATTACHED
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class EditOperation:
    """A single replace-range edit against a known document state.

    ``deleted_length`` scalar values starting at ``position`` are removed and
    ``inserted_text`` is put in their place. No-op edits are rejected.
    """

    position: int
    deleted_length: int
    inserted_text: str

    def __post_init__(self) -> None:
        if self.position < 0:
            raise ValueError("edit position must be non-negative")
        if self.deleted_length < 0:
            raise ValueError("deleted length must be non-negative")
        if self.deleted_length == 0 and not self.inserted_text:
            raise ValueError("no-op edit (nothing deleted, nothing inserted)")

    @property
    def delta(self) -> int:
        return len(self.inserted_text) - self.deleted_length

    def apply_to(self, text: str) -> str:
        if self.position + self.deleted_length > len(text):
            raise ValueError(
                f"edit range [{self.position}, {self.position + self.deleted_length})"
                f" exceeds document length {len(text)}"
            )
        return (
            text[: self.position]
            + self.inserted_text
            + text[self.position + self.deleted_length :]
        )


@dataclass
class AnnotationFile:
    """The sidecar document: format version, document reference, tag records."""

    document: DocumentRef
    annotations: list[TagRecord] = field(default_factory=list)
    format_version: int = 1
    extra: dict[str, Any] = field(default_factory=dict)
    document_extra: dict[str, Any] = field(default_factory=dict)

    def get(self, tag_id: str) -> TagRecord | None:
        for tag in self.annotations:
            if tag.id == tag_id:
                return tag
        return None


def new_tag_id() -> str:
    return str(uuid.uuid4())


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def text_digest(text: str) -> str:
    """Digest of the document as it would appear on disk (UTF-8 bytes)."""
    return sha256_hex(text.encode("utf-8"))


def capture_context(text: str, start: int, end: int) -> AnchorContext:
    """Snapshot the anchor text and its surrounding CONTEXT_WINDOW scalars."""
    if not (0 <= start <= end <= len(text)):
        raise ValueError(f"anchor [{start}, {end}) out of bounds for length {len(text)}")
    return AnchorContext(
        anchor_text=text[start:end],
        prefix=text[max(0, start - CONTEXT_WINDOW) : start],
        suffix=text[end : end + CONTEXT_WINDOW],
    )


def refresh_tag_context(tag: TagRecord, text: str) -> TagRecord:
    """Return a copy of ``tag`` with context recaptured from ``text``."""
    ctx = capture_context(text, tag.anchor.start, tag.anchor.end)
    return replace(tag, context=ctx)


def is_valid_tag_id(tag_id: str) -> bool:
    return isinstance(tag_id, str) and bool(_UUID4_RE.match(tag_id))


def validate_tag(record: TagRecord, document_text: str) -> list[str]:
    """Report every invariant the record violates against ``document_text``.

    Violations are data, not failures: the empty list means the record is
    valid. Calling this twice on identical inputs yields identical reports.
    """
    violations: list[str] = []
    anchor = record.anchor
    in_bounds = 0 <= anchor.start <= anchor.end <= len(document_text)
    if not in_bounds:
        violations.append("anchor out of bounds")
    if record.status == STATUS_ATTACHED and in_bounds:
        if record.context.anchor_text != document_text[anchor.start : anchor.end]:
            violations.append("anchor text mismatch")
    if not is_valid_tag_id(record.id):
        violations.append("bad id format")
    if not record.annotation_type:
        violations.append("empty annotation type")
    if record.status not in STATUSES:
        violations.append("unknown status")
    return violations
