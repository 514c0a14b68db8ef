"""Document-external annotations that stay attached through edits.

Annotations live in sidecar files, anchor to character ranges, track online
edits deterministically, survive offline document changes through exact and
fuzzy re-anchoring (optionally assisted by a pluggable completion provider),
and can weave named layers of auxiliary text into an alternate codebase.
"""

from .model import (
    CONTEXT_WINDOW,
    STATUS_ATTACHED,
    STATUS_ORPHANED,
    STATUS_PROPOSED,
    Anchor,
    AnchorContext,
    AnnotationFile,
    DocumentRef,
    EditOperation,
    TagRecord,
    capture_context,
    new_tag_id,
    text_digest,
    validate_tag,
)
from .edits import (
    AnchorUpdate,
    apply_edit,
    apply_edit_batch,
    map_position,
)
from .anchoring import (
    ReattachConfig,
    ReattachProposal,
    StaleProposalError,
    confirm,
    levenshtein,
    reattach,
    score_candidate,
    semantic_reattach,
    similarity,
)
from .providers import (
    CompletionProvider,
    CompletionRequest,
    HttpProvider,
    MockProvider,
    ProviderError,
    ScriptedProvider,
    resolve_provider,
)
from .store import Freshness, StoreError, StoreRoot, check, load, save, sidecar_path
from .layers import (
    ApplyReport,
    LayerInsertion,
    LayerSelection,
    StaleSourceError,
    apply_layers,
    collect_layers,
)

__version__ = "0.1.0"

__all__ = [
    "Anchor",
    "AnchorContext",
    "AnchorUpdate",
    "AnnotationFile",
    "ApplyReport",
    "CompletionProvider",
    "CompletionRequest",
    "CONTEXT_WINDOW",
    "DocumentRef",
    "EditOperation",
    "Freshness",
    "HttpProvider",
    "LayerInsertion",
    "LayerSelection",
    "MockProvider",
    "ProviderError",
    "ReattachConfig",
    "ReattachProposal",
    "ScriptedProvider",
    "StaleProposalError",
    "StaleSourceError",
    "StoreError",
    "StoreRoot",
    "STATUS_ATTACHED",
    "STATUS_ORPHANED",
    "STATUS_PROPOSED",
    "TagRecord",
    "apply_edit",
    "apply_edit_batch",
    "apply_layers",
    "capture_context",
    "check",
    "collect_layers",
    "confirm",
    "levenshtein",
    "load",
    "map_position",
    "new_tag_id",
    "reattach",
    "resolve_provider",
    "save",
    "score_candidate",
    "semantic_reattach",
    "sidecar_path",
    "similarity",
    "text_digest",
    "validate_tag",
]
