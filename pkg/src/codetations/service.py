"""The host engine: owns document text and annotation state for a repository,
and carries out every operation the wire protocol exposes.

State model per open path:

* ``text`` is the current document (pushed edits update it; out-of-band disk
  changes are adopted by ``notify_external_change``);
* the in-memory annotation file's digest records which document version the
  anchors are valid against, so the session is *stale* whenever that digest
  differs from the current text's;
* staged re-anchor proposals live only in memory: between
  ``notify_external_change`` and ``confirm_proposals``/``reject_proposals``
  the sidecar bytes on disk do not change.

Anchor-mutating operations (add, move, applying edits) refuse to run while
the session is stale, because they would mix document versions; resolve the
staleness through the proposal flow first.

Concurrency contract: callers serialize operations per document path and may
run different paths concurrently. Blocking provider calls happen while only
that path is held, so they never stall other documents. Every persisted
mutation emits exactly one event through the registered sinks, in call order.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from . import anchoring as reanchor
from . import store
from .edits import apply_edit_batch
from .model import (
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
)
from .providers import CompletionProvider, CompletionRequest, ProviderError
from .anchoring import ReattachConfig, ReattachProposal

LM_UNIT_TEST_TYPE = "lm-unit-test"

LM_UNIT_TEST_INSTRUCTIONS = (
    "Answer YES or NO on the first line. The question below is about the"
    " annotated region of the document. If the answer is NO, write on the"
    " following lines replacement text for the annotated region that would"
    " change the answer to YES."
)


class EngineError(RuntimeError):
    code = "engine_error"


class BadRequest(EngineError):
    code = "bad_request"


class NotFound(EngineError):
    code = "not_found"


class StaleAnnotations(EngineError):
    code = "stale_annotations"


class ProviderUnavailable(EngineError):
    code = "provider_unavailable"


def proposal_to_dict(proposal: ReattachProposal) -> dict[str, Any]:
    return {
        "tagId": proposal.tag_id,
        "candidate": {"start": proposal.candidate.start, "end": proposal.candidate.end},
        "candidateText": proposal.candidate_text,
        "score": proposal.score,
        "strategy": proposal.strategy,
        "accepted": proposal.accepted,
    }


@dataclass
class DocSession:
    path: str
    text: str
    file: AnnotationFile
    pending: dict[str, ReattachProposal] = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return text_digest(self.text)

    @property
    def is_stale(self) -> bool:
        return self.file.document.digest != self.digest


class AnnotationEngine:
    """All protocol operations, independent of any transport."""

    def __init__(
        self,
        repo_root: str | Path,
        provider: CompletionProvider | None = None,
        reattach_config: ReattachConfig | None = None,
    ):
        self.root = store.StoreRoot(Path(repo_root).resolve())
        self.provider = provider
        self.reattach_config = reattach_config or ReattachConfig()
        self._sessions: dict[str, DocSession] = {}
        self._map_lock = threading.Lock()
        self._event_sinks: list[Callable[[dict[str, Any]], None]] = []

    # -- events ---------------------------------------------------------

    def add_event_sink(self, sink: Callable[[dict[str, Any]], None]) -> None:
        self._event_sinks.append(sink)

    def _emit(self, event: dict[str, Any]) -> None:
        for sink in self._event_sinks:
            sink(event)

    def _emit_annotations_changed(self, session: DocSession) -> None:
        self._emit(
            {
                "event": "annotationsChanged",
                "path": session.path,
                "annotations": [store.tag_to_dict(t) for t in session.file.annotations],
            }
        )

    # -- sessions -------------------------------------------------------

    def _read_disk_text(self, path: str) -> str:
        full = self.root.repo_root / path
        try:
            return full.read_text(encoding="utf-8")
        except FileNotFoundError as exc:
            raise NotFound(f"no such document: {path}") from exc
        except (OSError, UnicodeDecodeError) as exc:
            raise EngineError(f"cannot read {path}: {exc}") from exc

    def session(self, path: str) -> DocSession:
        try:
            path = store.check_source_path(path)
        except store.StoreError as exc:
            raise BadRequest(str(exc)) from exc
        with self._map_lock:
            existing = self._sessions.get(path)
        if existing is not None:
            return existing
        text = self._read_disk_text(path)
        file = store.load(path, self.root)
        if file is None:
            file = AnnotationFile(document=DocumentRef(path=path, digest=text_digest(text)))
        session = DocSession(path=path, text=text, file=file)
        with self._map_lock:
            return self._sessions.setdefault(path, session)

    def open_paths(self) -> list[str]:
        with self._map_lock:
            return sorted(self._sessions)

    def _persist(self, session: DocSession) -> None:
        store.save(session.file, self.root)

    def _require_not_stale(self, session: DocSession) -> None:
        if session.is_stale:
            raise StaleAnnotations(
                f"{session.path}: annotations were anchored against an older"
                " version of the document; run the re-attach flow first"
            )

    def _find_tag(self, tag_id: str, path: str | None) -> tuple[DocSession, TagRecord]:
        if path is not None:
            session = self.session(path)
            tag = session.file.get(tag_id)
            if tag is None:
                raise NotFound(f"tag {tag_id} not found in {path}")
            return session, tag
        with self._map_lock:
            open_sessions = list(self._sessions.values())
        for session in open_sessions:
            tag = session.file.get(tag_id)
            if tag is not None:
                return session, tag
        for source, file in store.iter_sidecars(self.root):
            if file.get(tag_id) is not None:
                session = self.session(source)
                tag = session.file.get(tag_id)
                if tag is not None:
                    return session, tag
        raise NotFound(f"tag {tag_id} not found")

    def find_tag_path(self, tag_id: str) -> str:
        session, _ = self._find_tag(tag_id, None)
        return session.path

    # -- protocol operations --------------------------------------------

    def list_annotations(self, path: str) -> dict[str, Any]:
        session = self.session(path)
        return {
            "path": session.path,
            "digest": session.digest,
            "stale": session.is_stale,
            "annotations": [store.tag_to_dict(t) for t in session.file.annotations],
        }

    def add_annotation(
        self, path: str, start: int, end: int, annotation_type: str, data: Any = None
    ) -> dict[str, Any]:
        _require_int(start, "start")
        _require_int(end, "end")
        if not isinstance(annotation_type, str) or not annotation_type:
            raise BadRequest("annotationType must be a non-empty string")
        session = self.session(path)
        self._require_not_stale(session)
        if not (0 <= start <= end <= len(session.text)):
            raise BadRequest(
                f"anchor [{start}, {end}) out of bounds for document of length"
                f" {len(session.text)}"
            )
        tag = TagRecord(
            id=new_tag_id(),
            anchor=Anchor(start, end),
            context=capture_context(session.text, start, end),
            annotation_type=annotation_type,
            data=data,
            status=STATUS_ATTACHED,
        )
        session.file.annotations.append(tag)
        self._persist(session)
        self._emit_annotations_changed(session)
        return store.tag_to_dict(tag)

    def move_annotation(
        self, path: str, tag_id: str, new_start: int, new_end: int
    ) -> dict[str, Any]:
        _require_int(new_start, "newStart")
        _require_int(new_end, "newEnd")
        session, tag = self._find_tag(tag_id, path)
        self._require_not_stale(session)
        if not (0 <= new_start <= new_end <= len(session.text)):
            raise BadRequest(
                f"anchor [{new_start}, {new_end}) out of bounds for document of"
                f" length {len(session.text)}"
            )
        # Also the manual recovery path for orphaned tags: re-anchors against
        # the current text and re-attaches.
        updated = replace(
            tag,
            anchor=Anchor(new_start, new_end),
            context=capture_context(session.text, new_start, new_end),
            status=STATUS_ATTACHED,
        )
        self._replace_tag(session, updated)
        session.pending.pop(tag_id, None)
        self._persist(session)
        self._emit_annotations_changed(session)
        return store.tag_to_dict(updated)

    def remove_annotation(self, path: str, tag_id: str) -> dict[str, Any]:
        session, tag = self._find_tag(tag_id, path)
        session.file.annotations = [t for t in session.file.annotations if t.id != tag_id]
        session.pending.pop(tag_id, None)
        self._persist(session)
        self._emit_annotations_changed(session)
        return {"removed": tag_id}

    def get_annotation_data(self, tag_id: str, path: str | None = None) -> dict[str, Any]:
        _, tag = self._find_tag(tag_id, path)
        return {"tagId": tag_id, "data": tag.data}

    def set_annotation_data(
        self, tag_id: str, data: Any, path: str | None = None
    ) -> dict[str, Any]:
        session, tag = self._find_tag(tag_id, path)
        self._replace_tag(session, replace(tag, data=data))
        self._persist(session)
        self._emit_annotations_changed(session)
        return {"tagId": tag_id, "data": data}

    def get_document_text(self, path: str) -> dict[str, Any]:
        session = self.session(path)
        return {"path": session.path, "text": session.text, "digest": session.digest}

    def set_document_text(self, path: str, edits: list[Any]) -> dict[str, Any]:
        session = self.session(path)
        self._require_not_stale(session)
        operations = [_parse_edit(e) for e in edits]
        try:
            new_file, updates = apply_edit_batch(session.file, session.text, operations)
        except ValueError as exc:
            raise BadRequest(str(exc)) from exc
        new_text = session.text
        for op in operations:
            new_text = op.apply_to(new_text)
        full = self.root.repo_root / session.path
        full.write_text(new_text, encoding="utf-8")
        session.text = new_text
        session.file = new_file
        self._persist(session)
        update_payload = [
            {
                "tagId": tag.id,
                "anchor": {"start": upd.new_anchor.start, "end": upd.new_anchor.end},
                "outcome": upd.outcome,
                "status": tag.status,
            }
            for tag, upd in zip(new_file.annotations, updates)
        ]
        self._emit(
            {
                "event": "documentChanged",
                "path": session.path,
                "digest": session.digest,
                "text": session.text,
                "updates": update_payload,
                "annotations": [store.tag_to_dict(t) for t in session.file.annotations],
            }
        )
        return {"path": session.path, "digest": session.digest, "updates": update_payload}

    def llm_complete(
        self,
        instructions: str,
        document: str = "",
        anchor_context: Any = None,
    ) -> dict[str, Any]:
        if self.provider is None:
            raise ProviderUnavailable("provider unavailable")
        if not isinstance(instructions, str):
            raise BadRequest("instructions must be a string")
        context = _parse_context(anchor_context) if anchor_context else None
        try:
            text = self.provider.complete(
                CompletionRequest(
                    instructions=instructions, document=document, anchor_context=context
                )
            )
        except ProviderError as exc:
            raise EngineError(f"provider error: {exc}") from exc
        return {"text": text}

    def notify_external_change(self, path: str, strategy: str = "fuzzy") -> dict[str, Any]:
        if strategy not in ("fuzzy", "semantic"):
            raise BadRequest(f"unknown re-attach strategy {strategy!r}")
        session = self.session(path)
        disk_text = self._read_disk_text(path)
        session.text = disk_text
        status = "stale" if session.is_stale else "fresh"
        needs_work = [
            t for t in session.file.annotations if not self._anchor_matches(t, disk_text)
        ]
        if status == "fresh" and not needs_work:
            return {"path": path, "status": "fresh", "proposals": [], "orphaned": []}
        if strategy == "semantic" and self.provider is None:
            strategy = "fuzzy"

        # On a stale document every non-matching tag is re-anchored; on a
        # fresh one this re-attempts tags orphaned earlier (their text may
        # have been retyped since).
        session.pending.clear()
        proposals: list[ReattachProposal] = []
        orphaned: list[str] = []
        new_tags: list[TagRecord] = []
        for tag in session.file.annotations:
            if self._anchor_matches(tag, disk_text):
                new_tags.append(tag)
                continue
            proposal = self._compute_proposal(tag, disk_text, strategy)
            if proposal is not None:
                proposals.append(proposal)
                session.pending[tag.id] = proposal
                new_tags.append(replace(tag, status=STATUS_PROPOSED))
            else:
                orphaned.append(tag.id)
                new_tags.append(replace(tag, status=STATUS_ORPHANED))
        session.file = replace(session.file, annotations=new_tags)
        for tag in new_tags:
            if tag.status in (STATUS_PROPOSED, STATUS_ORPHANED):
                staged = session.pending.get(tag.id)
                self._emit(
                    {
                        "event": "orphanDetected",
                        "path": path,
                        "tagId": tag.id,
                        "proposal": proposal_to_dict(staged) if staged else None,
                    }
                )
        return {
            "path": path,
            "status": status,
            "strategy": strategy,
            "proposals": [proposal_to_dict(p) for p in proposals],
            "orphaned": orphaned,
        }

    def confirm_proposals(self, path: str, tag_ids: list[str]) -> dict[str, Any]:
        session = self.session(path)
        if not isinstance(tag_ids, list):
            raise BadRequest("tagIds must be an array of tag ids")
        # Validate the whole batch before applying any of it.
        staged: list[ReattachProposal] = []
        for tag_id in tag_ids:
            proposal = session.pending.get(tag_id)
            if proposal is None:
                raise NotFound(f"no pending proposal for tag {tag_id}")
            cand = proposal.candidate
            text = session.text
            if (
                not (0 <= cand.start <= cand.end <= len(text))
                or text[cand.start : cand.end] != proposal.candidate_text
            ):
                session.pending.pop(tag_id, None)
                raise reanchor.StaleProposalError(
                    f"document changed since the proposal for {tag_id} was scored"
                )
            staged.append(proposal)
        for proposal in staged:
            session.file = reanchor.confirm(proposal, session.file, session.text)
            session.pending.pop(proposal.tag_id, None)
            proposal.accepted = True
        self._reconcile_and_persist(session)
        self._emit_annotations_changed(session)
        return self.list_annotations(path)

    def reject_proposals(self, path: str, tag_ids: list[str]) -> dict[str, Any]:
        session = self.session(path)
        for tag_id in tag_ids:
            if session.pending.pop(tag_id, None) is None:
                raise NotFound(f"no pending proposal for tag {tag_id}")
            tag = session.file.get(tag_id)
            if tag is not None:
                self._replace_tag(session, replace(tag, status=STATUS_ORPHANED))
        self._reconcile_and_persist(session)
        self._emit_annotations_changed(session)
        return self.list_annotations(path)

    def run_lm_unit_test(self, tag_id: str, path: str | None = None) -> dict[str, Any]:
        session, tag = self._find_tag(tag_id, path)
        if tag.annotation_type != LM_UNIT_TEST_TYPE:
            raise BadRequest(
                f"tag {tag_id} is {tag.annotation_type!r}, not {LM_UNIT_TEST_TYPE!r}"
            )
        if not isinstance(tag.data, dict) or not isinstance(tag.data.get("question"), str):
            raise BadRequest("lm-unit-test tag data must carry a question string")
        if self.provider is None:
            raise ProviderUnavailable("provider unavailable")
        question = tag.data["question"]
        instructions = (
            f"{LM_UNIT_TEST_INSTRUCTIONS}\n"
            f"Question: {question}\n"
            f"Annotated region:\n{tag.context.anchor_text}"
        )
        try:
            reply = self.provider.complete(
                CompletionRequest(
                    instructions=instructions,
                    document=session.text,
                    anchor_context=tag.context,
                )
            )
        except ProviderError as exc:
            raise EngineError(f"provider error: {exc}") from exc

        first, _, rest = reply.partition("\n")
        verdict = first.strip()
        if verdict == "YES":
            result: dict[str, Any] = {"pass": True, "suggestion": None}
        elif verdict == "NO":
            result = {"pass": False, "suggestion": rest}
        else:
            result = {"error": "malformed provider reply", "reply": reply}
        data = dict(tag.data)
        data["lastResult"] = result
        self._replace_tag(session, replace(tag, data=data))
        self._persist(session)
        self._emit_annotations_changed(session)
        if "error" in result:
            raise EngineError("malformed provider reply (expected YES or NO first line)")
        return result

    # -- helpers ---------------------------------------------------------

    def _replace_tag(self, session: DocSession, updated: TagRecord) -> None:
        session.file.annotations = [
            updated if t.id == updated.id else t for t in session.file.annotations
        ]

    @staticmethod
    def _anchor_matches(tag: TagRecord, text: str) -> bool:
        anchor = tag.anchor
        if tag.status != STATUS_ATTACHED:
            return False
        if not (0 <= anchor.start <= anchor.end <= len(text)):
            return False
        return text[anchor.start : anchor.end] == tag.context.anchor_text

    def _compute_proposal(
        self, tag: TagRecord, text: str, strategy: str
    ) -> ReattachProposal | None:
        if not tag.context.anchor_text:
            return None  # nothing to match against; manual move required
        if strategy == "semantic" and self.provider is not None:
            return reanchor.semantic_reattach(tag, text, self.provider, self.reattach_config)
        return reanchor.reattach(tag, text, self.reattach_config)

    def _reconcile_and_persist(self, session: DocSession) -> None:
        """Persist the session against its current text. Tags whose proposals
        are still pending stay ``proposed`` on disk; the digest now names the
        current document version."""
        session.file = replace(
            session.file,
            document=replace(session.file.document, digest=session.digest),
        )
        self._persist(session)

    def poll_path(self, path: str) -> dict[str, Any] | None:
        """Watcher hook: if the bytes on disk no longer match the session's
        text, run the notify flow for this path."""
        session = self.session(path)
        try:
            disk = self._read_disk_text(path)
        except EngineError:
            return None
        if disk != session.text:
            return self.notify_external_change(path)
        return None


def _require_int(value: Any, name: str) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise BadRequest(f"{name} must be an integer")


def _parse_edit(raw: Any) -> EditOperation:
    if not isinstance(raw, dict):
        raise BadRequest("each edit must be an object")
    position = raw.get("position")
    deleted = raw.get("deletedLength", 0)
    inserted = raw.get("insertedText", "")
    _require_int(position, "edit position")
    _require_int(deleted, "edit deletedLength")
    if not isinstance(inserted, str):
        raise BadRequest("edit insertedText must be a string")
    try:
        return EditOperation(position=position, deleted_length=deleted, inserted_text=inserted)
    except ValueError as exc:
        raise BadRequest(str(exc)) from exc


def _parse_context(raw: Any) -> AnchorContext:
    if not isinstance(raw, dict):
        raise BadRequest("anchorContext must be an object")
    return AnchorContext(
        anchor_text=str(raw.get("anchorText", "")),
        prefix=str(raw.get("prefix", "")),
        suffix=str(raw.get("suffix", "")),
    )
