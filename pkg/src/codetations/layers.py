"""Layered documents: "add-layer" annotations name a layer and carry text to
splice at their anchor, and ``apply_layers`` materializes an alternate version
of the codebase with a chosen set of layers woven in.

Insertion offsets are interpreted against the ORIGINAL text: the splice
engine sorts by original offset and applies everything in one pass, so later
insertions never shift earlier-declared ones. Same-offset insertions order by
the layer's position in the active selection, then by tag id. Source files
and sidecars are never modified; output goes to a separate directory.
"""

from __future__ import annotations

import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from .model import STATUS_ATTACHED, TagRecord
from . import store
from .store import Freshness, StoreRoot

ADD_LAYER_TYPE = "add-layer"

_EXCLUDED_DIRS = {store.STORE_DIR_NAME, ".git"}


class StaleSourceError(RuntimeError):
    """A source file changed since its annotations were anchored; splicing at
    recorded offsets would corrupt the output."""


class LayerError(RuntimeError):
    """Bad selection or unusable output directory."""


@dataclass(frozen=True)
class LayerInsertion:
    """Interpreted payload of an add-layer tag."""

    layer_name: str
    insert_text: str


@dataclass(frozen=True)
class LayerSelection:
    """Ordered list of active layer names (command-line order)."""

    active_layers: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.active_layers)) != len(self.active_layers):
            raise LayerError("active layer names must be unique")


@dataclass(frozen=True)
class PlannedInsertion:
    source: str
    offset: int
    text: str
    tag_id: str
    layer: str


@dataclass(frozen=True)
class AppliedInsertion:
    source: str
    tag_id: str
    layer: str
    offset: int
    output_start: int
    output_end: int


@dataclass
class ApplyReport:
    files_written: list[str] = field(default_factory=list)
    insertions: list[AppliedInsertion] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def parse_layer_insertion(tag: TagRecord) -> LayerInsertion:
    """Extract the layer payload; raises ValueError when fields are missing."""
    data = tag.data
    if not isinstance(data, dict):
        raise ValueError("add-layer data is not an object")
    name = data.get("layerName")
    text = data.get("insertText")
    if not isinstance(name, str) or not name:
        raise ValueError("add-layer data is missing a non-empty layerName")
    if not isinstance(text, str):
        raise ValueError("add-layer data is missing insertText")
    return LayerInsertion(layer_name=name, insert_text=text)


def collect_layers(
    root: StoreRoot,
) -> tuple[dict[str, list[PlannedInsertion]], list[str]]:
    """Gather every attached add-layer tag across the store, keyed by layer.

    Orphaned or otherwise unattached add-layer tags are reported and skipped,
    as are tags with malformed payloads; the second element collects those
    warnings.
    """
    layers: dict[str, list[PlannedInsertion]] = {}
    warnings: list[str] = []
    for source, file in store.iter_sidecars(root):
        for tag in file.annotations:
            if tag.annotation_type != ADD_LAYER_TYPE:
                continue
            if tag.status != STATUS_ATTACHED:
                warnings.append(
                    f"{source}: add-layer tag {tag.id} is {tag.status}; skipped"
                )
                continue
            try:
                insertion = parse_layer_insertion(tag)
            except ValueError as exc:
                warnings.append(f"{source}: add-layer tag {tag.id} skipped: {exc}")
                continue
            layers.setdefault(insertion.layer_name, []).append(
                PlannedInsertion(
                    source=source,
                    offset=tag.anchor.start,
                    text=insertion.insert_text,
                    tag_id=tag.id,
                    layer=insertion.layer_name,
                )
            )
    return layers, warnings


def splice(text: str, insertions: list[PlannedInsertion], layer_order: dict[str, int]) -> tuple[str, list[AppliedInsertion]]:
    """Apply all insertions for one file in a single pass over the original text."""
    for ins in insertions:
        if ins.offset > len(text):
            raise StaleSourceError(
                f"{ins.source}: tag {ins.tag_id} anchors at {ins.offset}, beyond"
                f" document length {len(text)}"
            )
    ordered = sorted(
        insertions, key=lambda ins: (ins.offset, layer_order[ins.layer], ins.tag_id)
    )
    pieces: list[str] = []
    applied: list[AppliedInsertion] = []
    cursor = 0
    written = 0
    for ins in ordered:
        pieces.append(text[cursor : ins.offset])
        written += ins.offset - cursor
        pieces.append(ins.text)
        applied.append(
            AppliedInsertion(
                source=ins.source,
                tag_id=ins.tag_id,
                layer=ins.layer,
                offset=ins.offset,
                output_start=written,
                output_end=written + len(ins.text),
            )
        )
        written += len(ins.text)
        cursor = ins.offset
    pieces.append(text[cursor:])
    return "".join(pieces), applied


def _repo_files(root: StoreRoot, exclude: Path | None) -> list[str]:
    """Every repo-relative file path outside the store, VCS dirs, and the
    output directory, sorted for deterministic reports."""
    found: list[str] = []
    base = root.repo_root
    for dirpath, dirnames, filenames in os.walk(base):
        dirnames[:] = sorted(
            d
            for d in dirnames
            if d not in _EXCLUDED_DIRS
            and (exclude is None or (Path(dirpath) / d).resolve() != exclude)
        )
        for name in sorted(filenames):
            found.append((Path(dirpath) / name).relative_to(base).as_posix())
    return sorted(found)


def apply_layers(
    root: StoreRoot, selection: LayerSelection, output_dir: str | Path
) -> ApplyReport:
    """Write an alternate version of the codebase with the selected layers.

    Touched files must be fresh in the store (splicing at recorded offsets
    against changed text would silently corrupt output, so staleness is a hard
    error). Untouched files are copied byte-for-byte.
    """
    out_base = Path(output_dir)
    if out_base.exists():
        if not out_base.is_dir() or any(out_base.iterdir()):
            raise LayerError(f"output directory {out_base} is not empty")
    layers, warnings = collect_layers(root)

    layer_order = {name: i for i, name in enumerate(selection.active_layers)}
    unknown = [name for name in selection.active_layers if name not in layers]
    for name in unknown:
        warnings.append(f"layer {name!r} has no attached insertions")

    by_source: dict[str, list[PlannedInsertion]] = {}
    for name in selection.active_layers:
        for ins in layers.get(name, []):
            by_source.setdefault(ins.source, []).append(ins)

    for source in sorted(by_source):
        if store.check(source, root) is not Freshness.FRESH:
            raise StaleSourceError(
                f"{source} changed since its annotations were anchored;"
                " re-attach annotations before applying layers"
            )

    report = ApplyReport(warnings=warnings)
    out_base.mkdir(parents=True, exist_ok=True)
    exclude = out_base.resolve() if out_base.resolve().is_relative_to(
        root.repo_root.resolve()
    ) else None

    for rel in _repo_files(root, exclude):
        src = root.repo_root / rel
        dst = out_base / rel
        dst.parent.mkdir(parents=True, exist_ok=True)
        if rel in by_source:
            text = src.read_text(encoding="utf-8")
            woven, applied = splice(text, by_source[rel], layer_order)
            dst.write_text(woven, encoding="utf-8")
            report.insertions.extend(applied)
        else:
            shutil.copyfile(src, dst)
        report.files_written.append(rel)
    return report
