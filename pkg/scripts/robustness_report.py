#!/usr/bin/env python3
"""Re-anchoring robustness experiment.

Generates code-like documents, attaches anchors to statements, perturbs the
documents in several ways, and reports how often each strategy re-attaches to
a window that still contains every non-whitespace character of the original
anchor. Run directly:

    python scripts/robustness_report.py [--files 100] [--seed 7]
"""

from __future__ import annotations

import argparse
import random
import sys
import time
from collections import defaultdict
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from codetations import Anchor, ReattachConfig, TagRecord, capture_context, new_tag_id, reattach

from perturb import (
    perturb_delete_lines,
    perturb_insert_lines,
    perturb_typos,
    perturb_whitespace,
    random_code_document,
)

PERTURBATIONS = {
    "whitespace": lambda rng, text: perturb_whitespace(rng, text),
    "insert-lines": lambda rng, text: perturb_insert_lines(rng, text, rng.randint(1, 3)),
    "delete-lines": lambda rng, text: perturb_delete_lines(rng, text, rng.randint(1, 2)),
    "typos": lambda rng, text: perturb_typos(rng, text, max(1, len(text) // 40)),
}


def anchors_for(rng: random.Random, doc: str, count: int):
    lines = [ln for ln in doc.split("\n") if len(ln.strip()) >= 10]
    rng.shuffle(lines)
    for line in lines[:count]:
        start = doc.find(line) + (len(line) - len(line.lstrip()))
        yield start, start + len(line.strip())


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--files", type=int, default=100)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--threshold", type=float, default=0.65)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    config = ReattachConfig(threshold=args.threshold)
    stats = defaultdict(lambda: {"total": 0, "contained": 0, "exact": 0, "orphaned": 0})
    started = time.perf_counter()

    for _ in range(args.files):
        doc = random_code_document(rng, rng.randint(8, 30))
        tags = []
        for start, end in anchors_for(rng, doc, 3):
            tags.append(
                TagRecord(
                    id=new_tag_id(),
                    anchor=Anchor(start, end),
                    context=capture_context(doc, start, end),
                    annotation_type="probe",
                )
            )
        for name, perturb in PERTURBATIONS.items():
            new_doc = perturb(rng, doc)
            bucket = stats[name]
            for tag in tags:
                bucket["total"] += 1
                proposal = reattach(tag, new_doc, config)
                if proposal is None:
                    bucket["orphaned"] += 1
                    continue
                if proposal.strategy == "exact":
                    bucket["exact"] += 1
                stripped = "".join(tag.context.anchor_text.split())
                if stripped in "".join(proposal.candidate_text.split()):
                    bucket["contained"] += 1

    elapsed = time.perf_counter() - started
    print(f"files={args.files} anchors/file=3 threshold={config.threshold}")
    print(f"{'perturbation':<14} {'tags':>5} {'contained':>10} {'exact':>7} {'orphaned':>9}")
    for name, bucket in stats.items():
        total = bucket["total"]
        print(
            f"{name:<14} {total:>5} {bucket['contained'] / total:>9.1%}"
            f" {bucket['exact'] / total:>7.1%} {bucket['orphaned'] / total:>9.1%}"
        )
    print(f"elapsed: {elapsed:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
