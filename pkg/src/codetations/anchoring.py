"""Re-attaches annotations after the document changed outside the engine.

Two deterministic phases plus an optional provider-assisted one:

1. exact: the cached anchor text occurs verbatim somewhere in the new
   document; nearest occurrence to the old offset wins.
2. fuzzy: every window whose length is within ``max_window_slack`` of the
   cached anchor text is scored by a weighted blend of anchor, prefix and
   suffix similarity; the best window becomes a proposal if it clears the
   threshold, otherwise the tag stays orphaned.
3. semantic: a completion provider is asked for the text of the region in the
   new document; its output is never trusted as an offset source and is
   re-located with the same exact/fuzzy machinery.

Proposals are permission-gated: nothing changes until ``confirm``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .model import (
    CONTEXT_WINDOW,
    STATUS_ATTACHED,
    Anchor,
    AnchorContext,
    AnnotationFile,
    TagRecord,
    capture_context,
    text_digest,
)
from .providers import CompletionProvider, CompletionRequest, ProviderError

logger = logging.getLogger(__name__)

STRATEGY_EXACT = "exact"
STRATEGY_FUZZY = "fuzzy"
STRATEGY_SEMANTIC = "semantic"

# Never a valid Unicode scalar; pads windows that run off the document.
_SENTINEL = np.uint32(0xFFFFFFFF)

SEMANTIC_LOCATE_INSTRUCTIONS = (
    "The document below has changed since a region of it was annotated. "
    "Reply with only the exact text of the region in the current document "
    "that corresponds to the annotated region; reply with an empty string "
    "if the region is gone."
)


class StaleProposalError(ValueError):
    """The document changed since the proposal was scored."""


@dataclass(frozen=True)
class ReattachConfig:
    """Weights and limits for fuzzy re-anchoring.

    The three weights must sum to 1. ``max_window_slack`` bounds how far a
    candidate window's length may deviate from the cached anchor text's.
    """

    weight_anchor: float = 0.6
    weight_prefix: float = 0.2
    weight_suffix: float = 0.2
    threshold: float = 0.65
    max_window_slack: int = 8

    def __post_init__(self) -> None:
        total = self.weight_anchor + self.weight_prefix + self.weight_suffix
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"similarity weights sum to {total}, expected 1.0")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")
        if self.max_window_slack < 0:
            raise ValueError("max_window_slack must be non-negative")


@dataclass
class ReattachProposal:
    """A staged candidate anchor awaiting user confirmation."""

    tag_id: str
    candidate: Anchor
    candidate_text: str
    score: float
    strategy: str
    accepted: bool = False


def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit insert/delete/substitute costs."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        append = cur.append
        for j, cb in enumerate(b, 1):
            append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity(a: str, b: str) -> float:
    """Normalized similarity in [0, 1]: 1 - distance / max length."""
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def score_candidate(
    context: AnchorContext, document: str, candidate: Anchor, config: ReattachConfig
) -> float:
    """Blend of anchor/prefix/suffix similarity for one candidate window."""
    if not (0 <= candidate.start <= candidate.end <= len(document)):
        raise ValueError(
            f"candidate [{candidate.start}, {candidate.end}) out of bounds"
            f" for document length {len(document)}"
        )
    window = document[candidate.start : candidate.end]
    preceding = document[max(0, candidate.start - CONTEXT_WINDOW) : candidate.start]
    following = document[candidate.end : candidate.end + CONTEXT_WINDOW]
    return (
        config.weight_anchor * similarity(context.anchor_text, window)
        + config.weight_prefix * similarity(context.prefix, preceding)
        + config.weight_suffix * similarity(context.suffix, following)
    )


def locate_exact(needle: str, document: str, old_start: int) -> Anchor | None:
    """Nearest verbatim occurrence of ``needle``; ties prefer the smaller start."""
    if not needle:
        return None
    best: Anchor | None = None
    best_key: tuple[int, int] | None = None
    pos = document.find(needle)
    while pos != -1:
        key = (abs(pos - old_start), pos)
        if best_key is None or key < best_key:
            best = Anchor(pos, pos + len(needle))
            best_key = key
        pos = document.find(needle, pos + 1)
    return best


def _codes(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)


def _pattern_vs_windows(
    doc: np.ndarray, pattern: np.ndarray, starts: np.ndarray, l_min: int, l_max: int
) -> np.ndarray:
    """Edit distance of ``pattern`` against doc[s : s + l] for every start ``s``
    and every length l in [l_min, l_max].

    Returns an int matrix of shape (len(starts), l_max - l_min + 1); cells
    whose window would run past the document hold -1.
    """
    n = len(doc)
    m = len(pattern)
    num = len(starts)
    padded = np.concatenate([doc, np.full(l_max, _SENTINEL, dtype=np.uint32)])
    prev = np.repeat(np.arange(m + 1, dtype=np.int64)[:, None], num, axis=1)
    cur = np.empty_like(prev)
    out = np.full((num, l_max - l_min + 1), -1, dtype=np.int64)
    for j in range(1, l_max + 1):
        wchar = padded[starts + (j - 1)]
        cur[0] = j
        for i in range(1, m + 1):
            sub = prev[i - 1] + (pattern[i - 1] != wchar)
            step = np.minimum(prev[i] + 1, sub)
            np.minimum(cur[i - 1] + 1, step, out=cur[i])
        if j >= l_min:
            valid = starts + j <= n
            out[valid, j - l_min] = cur[m][valid]
        prev, cur = cur, prev
    return out


def _pattern_vs_preceding(
    doc: np.ndarray, pattern: np.ndarray, starts: np.ndarray, window: int
) -> np.ndarray:
    """Edit distance of ``pattern`` against the up-to-``window`` scalars that
    precede each start. Runs the DP on reversed strings so every start reads
    the document backwards from its own position."""
    m = len(pattern)
    num = len(starts)
    rev = pattern[::-1].copy()
    limit = np.minimum(starts, window)
    prev = np.repeat(np.arange(m + 1, dtype=np.int64)[:, None], num, axis=1)
    cur = np.empty_like(prev)
    out = np.empty(num, dtype=np.int64)
    out[limit == 0] = m
    for j in range(1, int(limit.max(initial=0)) + 1):
        idx = starts - j
        wchar = np.where(idx >= 0, doc[np.maximum(idx, 0)], _SENTINEL)
        cur[0] = j
        for i in range(1, m + 1):
            sub = prev[i - 1] + (rev[i - 1] != wchar)
            step = np.minimum(prev[i] + 1, sub)
            np.minimum(cur[i - 1] + 1, step, out=cur[i])
        sel = limit == j
        out[sel] = cur[m][sel]
        prev, cur = cur, prev
    return out


def _pattern_vs_following(
    doc: np.ndarray, pattern: np.ndarray, ends: np.ndarray, window: int
) -> np.ndarray:
    """Edit distance of ``pattern`` against the up-to-``window`` scalars that
    follow each end position."""
    n = len(doc)
    m = len(pattern)
    num = len(ends)
    padded = np.concatenate([doc, np.full(window, _SENTINEL, dtype=np.uint32)])
    limit = np.minimum(n - ends, window)
    prev = np.repeat(np.arange(m + 1, dtype=np.int64)[:, None], num, axis=1)
    cur = np.empty_like(prev)
    out = np.empty(num, dtype=np.int64)
    out[limit == 0] = m
    for j in range(1, int(limit.max(initial=0)) + 1):
        wchar = padded[ends + (j - 1)]
        cur[0] = j
        for i in range(1, m + 1):
            sub = prev[i - 1] + (pattern[i - 1] != wchar)
            step = np.minimum(prev[i] + 1, sub)
            np.minimum(cur[i - 1] + 1, step, out=cur[i])
        sel = limit == j
        out[sel] = cur[m][sel]
        prev, cur = cur, prev
    return out


def locate_fuzzy(
    context: AnchorContext, document: str, old_start: int, config: ReattachConfig
) -> tuple[Anchor, float] | None:
    """Best-scoring window over the whole document, before any threshold gate.

    Scans every start offset and every window length within the configured
    slack of the cached anchor text's length. Ties break toward (smaller
    distance from the old start, smaller start, smaller length). Scores are
    computed with the same arithmetic as ``score_candidate``, so the winner's
    score is bit-identical to scoring it individually.
    """
    n = len(document)
    anchor_len = len(context.anchor_text)
    if anchor_len == 0:
        raise ValueError("cached anchor text is empty; nothing to match")
    l_min = max(1, anchor_len - config.max_window_slack)
    l_max = anchor_len + config.max_window_slack
    if n == 0 or l_min > n:
        return None

    doc = _codes(document)
    starts = np.arange(0, n - l_min + 1, dtype=np.int64)
    lengths = np.arange(l_min, l_max + 1, dtype=np.int64)

    anchor_dist = _pattern_vs_windows(doc, _codes(context.anchor_text), starts, l_min, l_max)
    prefix_dist = _pattern_vs_preceding(doc, _codes(context.prefix), starts, CONTEXT_WINDOW)
    all_ends = np.arange(0, n + 1, dtype=np.int64)
    suffix_dist_by_end = _pattern_vs_following(doc, _codes(context.suffix), all_ends, CONTEXT_WINDOW)

    ends = starts[:, None] + lengths[None, :]
    valid = ends <= n
    ends_c = np.minimum(ends, n)

    den_anchor = np.maximum(anchor_len, lengths)[None, :]
    sim_anchor = 1.0 - anchor_dist / den_anchor

    prefix_window = np.minimum(starts, CONTEXT_WINDOW)
    den_prefix = np.maximum(len(context.prefix), prefix_window)
    sim_prefix = np.where(den_prefix > 0, 1.0 - prefix_dist / np.maximum(den_prefix, 1), 1.0)

    suffix_window = np.minimum(n - ends_c, CONTEXT_WINDOW)
    den_suffix = np.maximum(len(context.suffix), suffix_window)
    sim_suffix = np.where(
        den_suffix > 0, 1.0 - suffix_dist_by_end[ends_c] / np.maximum(den_suffix, 1), 1.0
    )

    score = (
        config.weight_anchor * sim_anchor
        + config.weight_prefix * sim_prefix[:, None]
        + config.weight_suffix * sim_suffix
    )
    score[~valid] = -np.inf

    best = score.max()
    if best == -np.inf:
        return None
    ties = np.argwhere(score == best)
    def tie_key(entry: np.ndarray) -> tuple[int, int, int]:
        start = int(starts[entry[0]])
        length = int(lengths[entry[1]])
        return (abs(start - old_start), start, length)
    s_idx, l_idx = min(ties, key=tie_key)
    start = int(starts[s_idx])
    length = int(lengths[l_idx])
    return Anchor(start, start + length), float(best)


def _locate(
    context: AnchorContext, document: str, old_start: int, config: ReattachConfig
) -> tuple[Anchor, float, str] | None:
    """Exact-then-fuzzy location of ``context`` in ``document``."""
    exact = locate_exact(context.anchor_text, document, old_start)
    if exact is not None:
        return exact, 1.0, STRATEGY_EXACT
    found = locate_fuzzy(context, document, old_start, config)
    if found is None:
        return None
    anchor, score = found
    if score < config.threshold:
        return None
    return anchor, score, STRATEGY_FUZZY


def reattach(
    tag: TagRecord, new_document: str, config: ReattachConfig | None = None
) -> ReattachProposal | None:
    """Propose a new anchor for ``tag`` in ``new_document``, or None if no
    candidate clears the threshold (the tag stays orphaned)."""
    config = config or ReattachConfig()
    if not tag.context.anchor_text:
        raise ValueError("tag has no cached anchor text; nothing to match")
    located = _locate(tag.context, new_document, tag.anchor.start, config)
    if located is None:
        return None
    anchor, score, strategy = located
    return ReattachProposal(
        tag_id=tag.id,
        candidate=anchor,
        candidate_text=new_document[anchor.start : anchor.end],
        score=score,
        strategy=strategy,
    )


def semantic_reattach(
    tag: TagRecord,
    new_document: str,
    provider: CompletionProvider,
    config: ReattachConfig | None = None,
) -> ReattachProposal | None:
    """Ask the provider for the region's new text, then locate that text.

    The provider's output is re-located with the exact/fuzzy machinery rather
    than trusted for offsets. Provider failures, empty output, and locations
    below threshold all fall back to plain ``reattach``.
    """
    config = config or ReattachConfig()
    if not tag.context.anchor_text:
        raise ValueError("tag has no cached anchor text; nothing to match")
    try:
        output = provider.complete(
            CompletionRequest(
                instructions=SEMANTIC_LOCATE_INSTRUCTIONS,
                document=new_document,
                anchor_context=tag.context,
            )
        )
    except Exception as exc:  # provider failures are recorded, never fatal
        logger.warning("semantic re-anchor provider failed (%s); falling back", exc)
        return reattach(tag, new_document, config)
    if not output:
        return reattach(tag, new_document, config)

    substituted = replace(tag.context, anchor_text=output)
    located = _locate(substituted, new_document, tag.anchor.start, config)
    if located is None:
        return reattach(tag, new_document, config)
    anchor, score, _ = located
    return ReattachProposal(
        tag_id=tag.id,
        candidate=anchor,
        candidate_text=new_document[anchor.start : anchor.end],
        score=score,
        strategy=STRATEGY_SEMANTIC,
    )


def confirm(
    proposal: ReattachProposal, file: AnnotationFile, new_document: str
) -> AnnotationFile:
    """Apply a confirmed proposal: move the tag, refresh its context, mark it
    attached, and re-digest the file against ``new_document``.

    Raises StaleProposalError when the document no longer carries the
    proposal's text at the candidate range. This also accepts caller-built
    proposals (manual moves): any candidate whose text matches the document
    confirms cleanly.
    """
    tag = file.get(proposal.tag_id)
    if tag is None:
        raise ValueError(f"tag {proposal.tag_id} not present in annotation file")
    cand = proposal.candidate
    if not (0 <= cand.start <= cand.end <= len(new_document)):
        raise StaleProposalError("candidate range out of bounds for the document")
    if new_document[cand.start : cand.end] != proposal.candidate_text:
        raise StaleProposalError("document changed since the proposal was scored")

    updated = replace(
        tag,
        anchor=cand,
        context=capture_context(new_document, cand.start, cand.end),
        status=STATUS_ATTACHED,
    )
    annotations = [updated if t.id == tag.id else t for t in file.annotations]
    return replace(
        file,
        annotations=annotations,
        document=replace(file.document, digest=text_digest(new_document)),
    )
