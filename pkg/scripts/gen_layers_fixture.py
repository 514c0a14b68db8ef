#!/usr/bin/env python3
"""Regenerate the committed layer-weaving fixture and its golden trees.

The golden outputs are written from hand-computed literals, NOT by running
the weaver, so the tests compare the engine against an independent statement
of the expected bytes.
"""

from __future__ import annotations

import shutil
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from codetations import Anchor, AnnotationFile, DocumentRef, StoreRoot, TagRecord
from codetations.model import capture_context, text_digest
from codetations.store import save

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"

APP_C = "a();\nb();\n"
UTIL_C = "x();\ny();\n"

# Stable ids keep the committed sidecars and goldens reproducible.
ID_APP_DEBUG = "00000000-0000-4000-8000-000000000001"
ID_APP_PERF = "00000000-0000-4000-8000-000000000002"
ID_UTIL_DEBUG = "00000000-0000-4000-8000-000000000003"

GOLDEN = {
    "none": {"app.c": APP_C, "util.c": UTIL_C},
    "debug": {
        "app.c": "a();\nlog();\nb();\n",
        "util.c": "trace();\nx();\ny();\n",
    },
    "debug_perf": {
        "app.c": "a();\nlog();\ntick();\nb();\n",
        "util.c": "trace();\nx();\ny();\n",
    },
}


def layer_tag(tag_id: str, doc: str, offset: int, layer: str, text: str) -> TagRecord:
    return TagRecord(
        id=tag_id,
        anchor=Anchor(offset, offset),
        context=capture_context(doc, offset, offset),
        annotation_type="add-layer",
        data={"layerName": layer, "insertText": text},
    )


def main() -> None:
    repo = DATA / "layers_repo"
    if repo.exists():
        shutil.rmtree(repo)
    repo.mkdir(parents=True)
    (repo / "app.c").write_text(APP_C, encoding="utf-8")
    (repo / "util.c").write_text(UTIL_C, encoding="utf-8")

    root = StoreRoot(repo)
    save(
        AnnotationFile(
            document=DocumentRef(path="app.c", digest=text_digest(APP_C)),
            annotations=[
                layer_tag(ID_APP_DEBUG, APP_C, 5, "debug", "log();\n"),
                layer_tag(ID_APP_PERF, APP_C, 5, "perf", "tick();\n"),
            ],
        ),
        root,
    )
    save(
        AnnotationFile(
            document=DocumentRef(path="util.c", digest=text_digest(UTIL_C)),
            annotations=[layer_tag(ID_UTIL_DEBUG, UTIL_C, 0, "debug", "trace();\n")],
        ),
        root,
    )

    golden_base = DATA / "layers_golden"
    if golden_base.exists():
        shutil.rmtree(golden_base)
    for selection, files in GOLDEN.items():
        for rel, content in files.items():
            target = golden_base / selection / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(content, encoding="utf-8")
    print(f"wrote fixture under {repo} and goldens under {golden_base}")


if __name__ == "__main__":
    main()
