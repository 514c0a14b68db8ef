"""Sidecar persistence: one annotation file per source file, mirrored under a
hidden store directory at the repo root.

``src/main.c`` is annotated by ``.codetations/src/main.c.annotations.json``.
The tree is created lazily on first write. Files are written in a canonical
form (sorted keys, records ordered by anchor start then id, two-space indent,
trailing newline) so identical logical content is always byte-identical and
diffs stay clean under version control. Writes are atomic: a temp file is
renamed over the target, so readers never see a truncated sidecar.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterator

from .model import (
    Anchor,
    AnchorContext,
    AnnotationFile,
    DocumentRef,
    TagRecord,
    sha256_hex,
)

STORE_DIR_NAME = ".codetations"
SIDECAR_SUFFIX = ".annotations.json"
SUPPORTED_FORMAT_VERSION = 1

_TAG_KEYS = {"id", "anchor", "context", "annotationType", "status", "data"}
_FILE_KEYS = {"formatVersion", "document", "annotations"}
_DOC_KEYS = {"path", "digest"}
_HEX = set("0123456789abcdef")


class StoreError(RuntimeError):
    """Unreadable, malformed, or structurally invalid annotation data."""


class Freshness(str, Enum):
    FRESH = "fresh"
    STALE = "stale"
    ABSENT = "absent"


@dataclass(frozen=True)
class StoreRoot:
    """The annotated repository; the store lives in a hidden dir at its root."""

    repo_root: Path

    @property
    def store_dir(self) -> Path:
        return self.repo_root / STORE_DIR_NAME


def check_source_path(source: str) -> str:
    """Validate a repo-relative source path (forward slashes, no escapes)."""
    if not source or source.startswith("/") or "\\" in source:
        raise StoreError(f"not a repo-relative path: {source!r}")
    segments = source.split("/")
    if any(seg in ("", ".", "..") for seg in segments):
        raise StoreError(f"path escapes the repository root: {source!r}")
    return source


def sidecar_path(source: str) -> str:
    """Repo-relative sidecar location for a source file."""
    return f"{STORE_DIR_NAME}/{check_source_path(source)}{SIDECAR_SUFFIX}"


def _sidecar_file(source: str, root: StoreRoot) -> Path:
    return root.repo_root / sidecar_path(source)


def tag_to_dict(tag: TagRecord) -> dict[str, Any]:
    out = dict(tag.extra)
    out.update(
        {
            "id": tag.id,
            "anchor": {"start": tag.anchor.start, "end": tag.anchor.end},
            "context": {
                "anchorText": tag.context.anchor_text,
                "prefix": tag.context.prefix,
                "suffix": tag.context.suffix,
            },
            "annotationType": tag.annotation_type,
            "status": tag.status,
            "data": tag.data,
        }
    )
    return out


def _expect(cond: bool, where: str, what: str) -> None:
    if not cond:
        raise StoreError(f"{where}: {what}")


def tag_from_dict(raw: Any, where: str = "tag record") -> TagRecord:
    _expect(isinstance(raw, dict), where, "tag record is not an object")
    _expect(isinstance(raw.get("id"), str), where, "tag id missing or not a string")
    anchor = raw.get("anchor")
    _expect(
        isinstance(anchor, dict)
        and isinstance(anchor.get("start"), int)
        and isinstance(anchor.get("end"), int)
        and not isinstance(anchor.get("start"), bool)
        and not isinstance(anchor.get("end"), bool),
        where,
        "anchor must carry integer start/end",
    )
    ctx = raw.get("context")
    _expect(
        isinstance(ctx, dict)
        and all(isinstance(ctx.get(k), str) for k in ("anchorText", "prefix", "suffix")),
        where,
        "context must carry anchorText/prefix/suffix strings",
    )
    _expect(
        isinstance(raw.get("annotationType"), str), where, "annotationType missing"
    )
    _expect(isinstance(raw.get("status"), str), where, "status missing")
    extra = {k: v for k, v in raw.items() if k not in _TAG_KEYS}
    return TagRecord(
        id=raw["id"],
        anchor=Anchor(anchor["start"], anchor["end"]),
        context=AnchorContext(
            anchor_text=ctx["anchorText"], prefix=ctx["prefix"], suffix=ctx["suffix"]
        ),
        annotation_type=raw["annotationType"],
        status=raw["status"],
        data=raw.get("data"),
        extra=extra,
    )


def file_to_dict(file: AnnotationFile) -> dict[str, Any]:
    doc = dict(file.document_extra)
    doc.update({"path": file.document.path, "digest": file.document.digest})
    out = dict(file.extra)
    out.update(
        {
            "formatVersion": file.format_version,
            "document": doc,
            "annotations": [
                tag_to_dict(tag)
                for tag in sorted(file.annotations, key=lambda t: (t.anchor.start, t.id))
            ],
        }
    )
    return out


def file_from_dict(raw: Any, where: str = "annotation file") -> AnnotationFile:
    _expect(isinstance(raw, dict), where, "top level is not an object")
    version = raw.get("formatVersion")
    _expect(
        isinstance(version, int) and not isinstance(version, bool),
        where,
        "formatVersion missing",
    )
    if version > SUPPORTED_FORMAT_VERSION:
        raise StoreError(
            f"{where}: formatVersion {version} is newer than supported"
            f" ({SUPPORTED_FORMAT_VERSION})"
        )
    doc = raw.get("document")
    _expect(
        isinstance(doc, dict)
        and isinstance(doc.get("path"), str)
        and isinstance(doc.get("digest"), str),
        where,
        "document reference missing path/digest",
    )
    annotations = raw.get("annotations")
    _expect(isinstance(annotations, list), where, "annotations must be an array")
    return AnnotationFile(
        document=DocumentRef(path=doc["path"], digest=doc["digest"]),
        annotations=[
            tag_from_dict(t, where=f"{where}, annotation {i}")
            for i, t in enumerate(annotations)
        ],
        format_version=version,
        extra={k: v for k, v in raw.items() if k not in _FILE_KEYS},
        document_extra={k: v for k, v in doc.items() if k not in _DOC_KEYS},
    )


def canonical_bytes(file: AnnotationFile) -> bytes:
    """The bit-exact serialized form: a pure function of logical content."""
    text = json.dumps(
        file_to_dict(file),
        ensure_ascii=False,
        sort_keys=True,
        indent=2,
        separators=(",", ": "),
    )
    return (text + "\n").encode("utf-8")


def _check_structure(file: AnnotationFile) -> None:
    check_source_path(file.document.path)
    digest = file.document.digest
    if len(digest) != 64 or not set(digest) <= _HEX:
        raise StoreError(f"document digest is not 64 lowercase hex chars: {digest!r}")
    seen: set[str] = set()
    for tag in file.annotations:
        if tag.id in seen:
            raise StoreError(f"duplicate tag id {tag.id}")
        seen.add(tag.id)
        if tag.anchor.start < 0 or tag.anchor.start > tag.anchor.end:
            raise StoreError(f"tag {tag.id} has a malformed anchor {tag.anchor}")


def save(file: AnnotationFile, root: StoreRoot) -> Path:
    """Atomically write the canonical sidecar; creates the tree lazily."""
    _check_structure(file)
    target = _sidecar_file(file.document.path, root)
    target.parent.mkdir(parents=True, exist_ok=True)
    data = canonical_bytes(file)
    fd, tmp_name = tempfile.mkstemp(
        dir=target.parent, prefix=target.name, suffix=".tmp"
    )
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, target)
    except OSError as exc:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise StoreError(f"failed to write {target}: {exc}") from exc
    return target


def load(source: str, root: StoreRoot) -> AnnotationFile | None:
    """Parse the sidecar for ``source``; a missing sidecar is None, not an error."""
    path = _sidecar_file(source, root)
    if not path.exists():
        return None
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise StoreError(f"cannot parse {path}: {exc}") from exc
    return file_from_dict(raw, where=str(path))


def source_digest(source: str, root: StoreRoot) -> str:
    path = root.repo_root / check_source_path(source)
    try:
        return sha256_hex(path.read_bytes())
    except OSError as exc:
        raise StoreError(f"cannot read source file {path}: {exc}") from exc


def check(source: str, root: StoreRoot) -> Freshness:
    """Stale iff a sidecar exists and its digest differs from the file bytes."""
    file = load(source, root)
    if file is None:
        return Freshness.ABSENT
    return (
        Freshness.FRESH
        if file.document.digest == source_digest(source, root)
        else Freshness.STALE
    )


def iter_sidecars(root: StoreRoot) -> Iterator[tuple[str, AnnotationFile]]:
    """Yield (source path, parsed file) for every sidecar, in path order."""
    store = root.store_dir
    if not store.is_dir():
        return
    for path in sorted(store.rglob(f"*{SIDECAR_SUFFIX}")):
        rel = path.relative_to(store).as_posix()
        source = rel[: -len(SIDECAR_SUFFIX)]
        file = load(source, root)
        if file is not None:
            yield source, file
