"""Command-line front door: init, add, list, show, move, remove, check,
reattach, apply-layers, serve.

Exit codes are stable: 0 success, 1 operation error, 2 usage error, 3 when a
report-mode command (check, reattach) found stale files or orphaned tags.
Every command that takes ``--json`` emits machine-readable output on stdout;
the shapes are documented in docs/cli.md.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

from . import config as config_mod
from . import store
from .layers import LayerError, LayerSelection, StaleSourceError, apply_layers
from .model import STATUS_ORPHANED, STATUS_PROPOSED
from .providers import resolve_provider
from .anchoring import StaleProposalError
from .server import AnnotationServer
from .service import AnnotationEngine, EngineError
from .store import Freshness, StoreError, StoreRoot

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_FINDINGS = 3


def find_repo_root(start: Path | None = None) -> Path:
    """Walk upward until a directory holding the store or a git repo appears;
    fall back to the starting directory."""
    current = (start or Path.cwd()).resolve()
    for candidate in (current, *current.parents):
        if (candidate / store.STORE_DIR_NAME).is_dir() or (candidate / ".git").exists():
            return candidate
    return current


def _root(args: argparse.Namespace) -> StoreRoot:
    repo = Path(args.repo).resolve() if args.repo else find_repo_root()
    return StoreRoot(repo)


def _engine(args: argparse.Namespace, provider_name: str | None = "none") -> AnnotationEngine:
    root = _root(args)
    settings = config_mod.load_config(root.repo_root)
    threshold = getattr(args, "threshold", None)
    return AnnotationEngine(
        root.repo_root,
        provider=resolve_provider(provider_name, config_mod.provider_settings(settings)),
        reattach_config=config_mod.reattach_config_from(settings, threshold),
    )


def _emit(args: argparse.Namespace, payload, human: str | None = None) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True))
    elif human is not None:
        print(human)


def _resolve_anchor(args: argparse.Namespace, text: str) -> tuple[int, int]:
    """Anchor from --start/--end or from a unique --match literal."""
    if args.match is not None:
        first = text.find(args.match)
        if first == -1:
            raise EngineError(f"--match text not found: {args.match!r}")
        if text.find(args.match, first + 1) != -1:
            raise EngineError(f"--match text is ambiguous (occurs more than once)")
        return first, first + len(args.match)
    if args.start is None or args.end is None:
        raise EngineError("provide either --match or both --start and --end")
    return args.start, args.end


# -- commands ---------------------------------------------------------------


def cmd_init(args: argparse.Namespace) -> int:
    root = _root(args)
    path = config_mod.write_default_config(root.repo_root)
    _emit(args, {"configPath": str(path)}, f"initialized annotation store: {path}")
    return EXIT_OK


def cmd_add(args: argparse.Namespace) -> int:
    engine = _engine(args)
    text = engine.session(args.path).text
    start, end = _resolve_anchor(args, text)
    data = json.loads(args.data) if args.data else None
    tag = engine.add_annotation(args.path, start, end, args.type, data)
    _emit(
        args,
        tag,
        f"added {tag['id']} [{start},{end}) type {args.type} on {args.path}",
    )
    return EXIT_OK


def cmd_list(args: argparse.Namespace) -> int:
    root = _root(args)
    file = store.load(args.path, root)
    if file is None:
        _emit(args, {"path": args.path, "status": "absent", "annotations": []},
              f"{args.path}: no annotations")
        return EXIT_OK
    status = store.check(args.path, root).value
    payload = {
        "path": args.path,
        "status": status,
        "annotations": [store.tag_to_dict(t) for t in file.annotations],
    }
    if args.json:
        _emit(args, payload)
    else:
        print(f"{args.path}: {len(file.annotations)} annotation(s), {status}")
        for tag in file.annotations:
            print(
                f"  {tag.id} [{tag.anchor.start},{tag.anchor.end})"
                f" {tag.annotation_type} {tag.status}"
            )
    return EXIT_OK


def cmd_show(args: argparse.Namespace) -> int:
    root = _root(args)
    file = store.load(args.path, root)
    tag = file.get(args.tag_id) if file is not None else None
    if tag is None:
        raise EngineError(f"tag {args.tag_id} not found in {args.path}")
    payload = store.tag_to_dict(tag)
    if args.json:
        _emit(args, payload)
    else:
        print(f"{tag.id} on {args.path}")
        print(f"  anchor: [{tag.anchor.start},{tag.anchor.end}) status {tag.status}")
        print(f"  type:   {tag.annotation_type}")
        print(f"  text:   {tag.context.anchor_text!r}")
        print(f"  data:   {json.dumps(tag.data, ensure_ascii=False)}")
    return EXIT_OK


def cmd_move(args: argparse.Namespace) -> int:
    engine = _engine(args)
    text = engine.session(args.path).text
    start, end = _resolve_anchor(args, text)
    tag = engine.move_annotation(args.path, args.tag_id, start, end)
    _emit(args, tag, f"moved {args.tag_id} to [{start},{end}) on {args.path}")
    return EXIT_OK


def cmd_remove(args: argparse.Namespace) -> int:
    engine = _engine(args)
    result = engine.remove_annotation(args.path, args.tag_id)
    _emit(args, result, f"removed {args.tag_id} from {args.path}")
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    root = _root(args)
    paths = args.paths or [source for source, _ in store.iter_sidecars(root)]
    entries = []
    findings = False
    for path in paths:
        status = store.check(path, root)
        file = store.load(path, root)
        annotations = file.annotations if file else []
        orphaned = sum(1 for t in annotations if t.status == STATUS_ORPHANED)
        proposed = sum(1 for t in annotations if t.status == STATUS_PROPOSED)
        if status is Freshness.STALE or orphaned or proposed:
            findings = True
        entries.append(
            {
                "path": path,
                "status": status.value,
                "annotations": len(annotations),
                "orphaned": orphaned,
                "proposed": proposed,
            }
        )
    if args.json:
        _emit(args, {"files": entries, "findings": findings})
    else:
        if not entries:
            print("no annotation files")
        for entry in entries:
            extras = []
            if entry["orphaned"]:
                extras.append(f"{entry['orphaned']} orphaned")
            if entry["proposed"]:
                extras.append(f"{entry['proposed']} proposed")
            suffix = f" ({', '.join(extras)})" if extras else ""
            print(
                f"{entry['path']}: {entry['status']},"
                f" {entry['annotations']} annotation(s){suffix}"
            )
    return EXIT_FINDINGS if findings else EXIT_OK


def cmd_reattach(args: argparse.Namespace) -> int:
    root = _root(args)
    if store.load(args.path, root) is None:
        raise EngineError(f"no annotations for {args.path}")
    strategy = args.strategy
    engine = _engine(args, provider_name=args.provider)
    if strategy == "semantic" and engine.provider is None:
        print("warning: no provider configured; falling back to fuzzy", file=sys.stderr)
        strategy = "fuzzy"

    before = {t["id"]: t for t in engine.list_annotations(args.path)["annotations"]}
    result = engine.notify_external_change(
        args.path, "semantic" if strategy == "semantic" else "fuzzy"
    )
    proposals = result["proposals"]
    if strategy == "exact":
        keep, drop = [], []
        for p in proposals:
            (keep if p["strategy"] == "exact" else drop).append(p)
        if drop:
            engine.reject_proposals(args.path, [p["tagId"] for p in drop])
            result["orphaned"].extend(p["tagId"] for p in drop)
        proposals = keep

    confirmed: list[str] = []
    rejected: list[str] = []
    for proposal in proposals:
        old = before.get(proposal["tagId"], {}).get("anchor", {})
        line = (
            f"{proposal['tagId']}: [{old.get('start')},{old.get('end')}) ->"
            f" [{proposal['candidate']['start']},{proposal['candidate']['end']})"
            f" score {proposal['score']:.3f} ({proposal['strategy']})"
        )
        if args.yes:
            print(line, file=sys.stderr if args.json else sys.stdout)
            confirmed.append(proposal["tagId"])
        else:
            answer = input(f"{line}\napply? [y/N] ").strip().lower()
            (confirmed if answer in ("y", "yes") else rejected).append(proposal["tagId"])
    if confirmed or (result["status"] == "stale" and not rejected):
        # Also covers the zero-proposal stale case: every anchor still
        # matches, so persisting just records the new document digest.
        engine.confirm_proposals(args.path, confirmed)
    if rejected:
        engine.reject_proposals(args.path, rejected)

    after = engine.list_annotations(args.path)["annotations"]
    orphaned = [t["id"] for t in after if t["status"] == STATUS_ORPHANED]
    payload = {
        "path": args.path,
        "status": result["status"],
        "proposals": proposals,
        "confirmed": confirmed,
        "rejected": rejected,
        "orphaned": orphaned,
    }
    if args.json:
        _emit(args, payload)
    else:
        print(
            f"{len(proposals)} proposal(s), {len(confirmed)} confirmed,"
            f" {len(rejected)} rejected, {len(orphaned)} orphaned"
        )
    return EXIT_FINDINGS if orphaned else EXIT_OK


def cmd_apply_layers(args: argparse.Namespace) -> int:
    root = _root(args)
    names = tuple(name for name in (args.layers or "").split(",") if name)
    report = apply_layers(root, LayerSelection(names), args.out)
    payload = {
        "filesWritten": report.files_written,
        "insertions": [
            {
                "source": ins.source,
                "tagId": ins.tag_id,
                "layer": ins.layer,
                "offset": ins.offset,
                "outputStart": ins.output_start,
                "outputEnd": ins.output_end,
            }
            for ins in report.insertions
        ],
        "warnings": report.warnings,
    }
    if args.json:
        _emit(args, payload)
    else:
        print(
            f"wrote {len(report.files_written)} file(s) with"
            f" {len(report.insertions)} insertion(s) to {args.out}"
        )
        for warning in report.warnings:
            print(f"warning: {warning}", file=sys.stderr)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    root = _root(args)
    settings = config_mod.load_config(root.repo_root)
    provider = resolve_provider(args.provider, config_mod.provider_settings(settings))
    engine = AnnotationEngine(
        root.repo_root,
        provider=provider,
        reattach_config=config_mod.reattach_config_from(settings),
    )
    server = AnnotationServer(
        engine, port=args.port, watch_interval=args.watch if args.watch > 0 else None
    )

    async def run() -> None:
        await server.start()
        print(f"repo root: {root.repo_root}")
        print(f"protocol (ndjson/tcp): 127.0.0.1:{server.port}")
        print(f"http shim (rpc/events): 127.0.0.1:{server.http_port}")
        provider_label = type(provider).__name__ if provider else "none"
        print(f"provider: {provider_label}", flush=True)
        await server.serve_forever()

    try:
        asyncio.run(run())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _anchor_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--start", type=int, help="anchor start offset (scalar values)")
    sub.add_argument("--end", type=int, help="anchor end offset (exclusive)")
    sub.add_argument("--match", help="anchor to the unique occurrence of this text")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codetations",
        description="Document-external annotations that stay attached through edits.",
    )
    parser.add_argument("--repo", help="repository root (default: discovered upward)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create the annotation store and default config")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("add", help="attach an annotation to a text range")
    p.add_argument("path", help="repo-relative file path")
    _anchor_flags(p)
    p.add_argument("--type", required=True, help="annotation type name")
    p.add_argument("--data", help="opaque JSON payload for the annotation")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_add)

    p = sub.add_parser("list", help="list annotations on a file")
    p.add_argument("path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("show", help="show one annotation")
    p.add_argument("path")
    p.add_argument("tag_id")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_show)

    p = sub.add_parser("move", help="re-anchor an annotation manually")
    p.add_argument("path")
    p.add_argument("tag_id")
    _anchor_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_move)

    p = sub.add_parser("remove", help="delete an annotation")
    p.add_argument("path")
    p.add_argument("tag_id")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_remove)

    p = sub.add_parser("check", help="report fresh/stale/absent and orphan counts")
    p.add_argument("paths", nargs="*", help="files to check (default: all annotated)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("reattach", help="re-anchor annotations after offline changes")
    p.add_argument("path")
    p.add_argument(
        "--strategy", choices=("exact", "fuzzy", "semantic"), default="fuzzy"
    )
    p.add_argument("--yes", action="store_true", help="confirm every proposal")
    p.add_argument("--threshold", type=float, help="override the score threshold")
    p.add_argument("--provider", help="provider for --strategy semantic (mock|http|none)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_reattach)

    p = sub.add_parser("apply-layers", help="weave layers into an output tree")
    p.add_argument("--layers", default="", help="comma-separated layer names, in order")
    p.add_argument("--out", required=True, help="output directory (empty or absent)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_apply_layers)

    p = sub.add_parser("serve", help="run the local annotation service")
    p.add_argument("--port", type=int, default=8377, help="ndjson port (0 = ephemeral)")
    p.add_argument("--provider", help="completion provider (mock|http|none)")
    p.add_argument(
        "--watch", type=float, default=0.0,
        help="poll open documents for out-of-band changes every N seconds",
    )
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        EngineError,
        StoreError,
        LayerError,
        StaleSourceError,
        StaleProposalError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
