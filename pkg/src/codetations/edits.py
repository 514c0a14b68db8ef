"""Maps anchors through edit operations with Word-comment-like semantics.

The rules, for an edit replacing ``d`` scalars at position ``p`` with ``i``
inserted scalars:

* positions strictly before ``p`` stay put; positions strictly after the
  deleted range shift by ``i - d``;
* positions inside the deleted range clamp to the replacement: ``p`` when
  left-biased, ``p + i`` when right-biased;
* a position exactly at ``p`` stays (left bias) or lands after the insertion
  (right bias); a position at the far edge of a non-empty deletion lands
  after the insertion for either bias.

Anchors map start right-biased and end left-biased, so insertions exactly at
either boundary are excluded from the anchor while insertions strictly inside
grow it. A non-empty anchor wholly swallowed by a deletion becomes orphaned:
it collapses to a zero-width anchor at the deletion site and keeps its cached
context for later re-anchoring.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .model import (
    STATUS_ATTACHED,
    STATUS_ORPHANED,
    Anchor,
    AnnotationFile,
    EditOperation,
    TagRecord,
    refresh_tag_context,
    text_digest,
)

BIAS_LEFT = "left"
BIAS_RIGHT = "right"

OUTCOME_UNCHANGED = "unchanged"
OUTCOME_SHIFTED = "shifted"
OUTCOME_RESIZED = "resized"
OUTCOME_ORPHANED = "orphaned"


@dataclass(frozen=True)
class AnchorUpdate:
    """Result of mapping one tag through one edit (or one batch)."""

    new_anchor: Anchor
    outcome: str


def map_position(x: int, edit: EditOperation, bias: str) -> int:
    """Map a single offset through ``edit`` with the given boundary bias."""
    if x < 0:
        raise ValueError("position must be non-negative")
    if bias not in (BIAS_LEFT, BIAS_RIGHT):
        raise ValueError(f"unknown bias {bias!r}")
    p = edit.position
    d = edit.deleted_length
    i = len(edit.inserted_text)
    if x < p:
        return x
    if x > p + d:
        return x + i - d
    # x is on or inside the edited range [p, p + d].
    if x == p:
        return p + i if bias == BIAS_RIGHT else p
    if x == p + d:  # d > 0 here, since x > p
        return p + i
    return p + i if bias == BIAS_RIGHT else p


def apply_edit(
    tag: TagRecord, edit: EditOperation, post_edit_text: str
) -> tuple[TagRecord, AnchorUpdate]:
    """Map ``tag`` through ``edit``; ``post_edit_text`` is the document after it.

    Attached tags get their context refreshed from the post-edit text; a tag
    orphaned by this edit keeps the context it had before. Tags that were
    already orphaned (or proposed) keep both status and context, and their
    collapsed anchor tracks the edit as a left-biased point.
    """
    pre_len = len(post_edit_text) - edit.delta
    if edit.position + edit.deleted_length > pre_len:
        raise ValueError("edit is inconsistent with the post-edit document length")
    anchor = tag.anchor
    if anchor.start < 0 or anchor.end > pre_len or anchor.start > anchor.end:
        raise ValueError("tag anchor is inconsistent with the pre-edit document length")

    if anchor.is_empty or tag.status != STATUS_ATTACHED:
        # Zero-width anchors track a single point; the start-right/end-left
        # rule would invert them when text is inserted exactly at the point.
        s = map_position(anchor.start, edit, BIAS_LEFT)
        e = map_position(anchor.end, edit, BIAS_LEFT) if not anchor.is_empty else s
        new_anchor = Anchor(s, max(s, e))
        outcome = OUTCOME_UNCHANGED if new_anchor == anchor else OUTCOME_SHIFTED
        new_tag = replace(tag, anchor=new_anchor)
        if tag.status == STATUS_ATTACHED:
            new_tag = refresh_tag_context(new_tag, post_edit_text)
        return new_tag, AnchorUpdate(new_anchor, outcome)

    new_start = map_position(anchor.start, edit, BIAS_RIGHT)
    new_end = map_position(anchor.end, edit, BIAS_LEFT)

    if new_start >= new_end:
        # The deletion swallowed the whole anchor.
        s = map_position(anchor.start, edit, BIAS_LEFT)
        new_anchor = Anchor(s, s)
        new_tag = replace(tag, anchor=new_anchor, status=STATUS_ORPHANED)
        return new_tag, AnchorUpdate(new_anchor, OUTCOME_ORPHANED)

    new_anchor = Anchor(new_start, new_end)
    new_tag = refresh_tag_context(replace(tag, anchor=new_anchor), post_edit_text)
    if new_anchor == anchor:
        outcome = OUTCOME_UNCHANGED
    elif new_anchor.length == anchor.length:
        outcome = OUTCOME_SHIFTED
    else:
        outcome = OUTCOME_RESIZED
    return new_tag, AnchorUpdate(new_anchor, outcome)


def _batch_outcome(before: TagRecord, after: TagRecord) -> str:
    if after.status == STATUS_ORPHANED and before.status != STATUS_ORPHANED:
        return OUTCOME_ORPHANED
    if after.anchor == before.anchor:
        return OUTCOME_UNCHANGED
    if after.anchor.length == before.anchor.length:
        return OUTCOME_SHIFTED
    return OUTCOME_RESIZED


def apply_edit_batch(
    file: AnnotationFile,
    initial_text: str,
    edits: list[EditOperation],
    final_text: str | None = None,
) -> tuple[AnnotationFile, list[AnchorUpdate]]:
    """Fold ``apply_edit`` over a sequential batch for every tag in ``file``.

    Each edit addresses the document produced by the previous one, starting
    from ``initial_text``. When ``final_text`` is given, the document computed
    from the edits must match it. Any inconsistency raises before anything is
    changed; the input file is never mutated. Returns the updated file (digest
    re-hashed from the final text) and one cumulative update per tag, in file
    order.
    """
    # Materialize every intermediate document first: any out-of-bounds edit
    # aborts the batch before a single tag is touched.
    steps: list[tuple[EditOperation, str]] = []
    text = initial_text
    for edit in edits:
        text = edit.apply_to(text)
        steps.append((edit, text))
    if final_text is not None and text != final_text:
        raise ValueError("edits do not produce the supplied final text")
    end_text = text

    new_tags: list[TagRecord] = []
    updates: list[AnchorUpdate] = []
    for tag in file.annotations:
        current = tag
        for edit, post_text in steps:
            current, _ = apply_edit(current, edit, post_text)
        new_tags.append(current)
        updates.append(AnchorUpdate(current.anchor, _batch_outcome(tag, current)))

    new_file = replace(
        file,
        annotations=new_tags,
        document=replace(file.document, digest=text_digest(end_text)),
    )
    return new_file, updates
