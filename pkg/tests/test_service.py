"""Engine-level behavior of the host service (transport-free)."""

import json

import pytest

from codetations import ScriptedProvider, validate_tag
from codetations.service import (
    AnnotationEngine,
    BadRequest,
    NotFound,
    ProviderUnavailable,
    StaleAnnotations,
)
from codetations.store import StoreRoot, load, sidecar_path, tag_from_dict


@pytest.fixture
def engine(repo: StoreRoot, write_source):
    write_source("notes.txt", "hello world\n")
    eng = AnnotationEngine(repo.repo_root)
    eng.events = []
    eng.add_event_sink(eng.events.append)
    return eng


def sidecar_bytes(engine: AnnotationEngine, path: str) -> bytes | None:
    full = engine.root.repo_root / sidecar_path(path)
    return full.read_bytes() if full.exists() else None


class TestAddAndList:
    def test_add_captures_context_and_persists(self, engine):
        tag = engine.add_annotation("notes.txt", 6, 11, "comment", {"n": 1})
        assert tag["context"]["anchorText"] == "world"
        assert tag["status"] == "attached"
        listed = engine.list_annotations("notes.txt")
        assert [t["id"] for t in listed["annotations"]] == [tag["id"]]
        stored = load("notes.txt", StoreRoot(engine.root.repo_root))
        assert stored.get(tag["id"]) is not None
        assert engine.events[-1]["event"] == "annotationsChanged"

    def test_add_out_of_bounds_rejected(self, engine):
        with pytest.raises(BadRequest):
            engine.add_annotation("notes.txt", 6, 99, "comment")

    def test_add_inverted_anchor_rejected(self, engine):
        with pytest.raises(BadRequest):
            engine.add_annotation("notes.txt", 5, 2, "comment")

    def test_unknown_path_rejected(self, engine):
        with pytest.raises(NotFound):
            engine.add_annotation("missing.txt", 0, 1, "comment")

    def test_path_escape_rejected(self, engine):
        with pytest.raises(BadRequest):
            engine.list_annotations("../etc/passwd")

    def test_two_adds_both_persisted(self, engine):
        a = engine.add_annotation("notes.txt", 0, 5, "comment")
        b = engine.add_annotation("notes.txt", 6, 11, "comment")
        stored = load("notes.txt", StoreRoot(engine.root.repo_root))
        assert {t.id for t in stored.annotations} == {a["id"], b["id"]}


class TestMoveAndData:
    def test_move_recaptures_context(self, engine):
        tag = engine.add_annotation("notes.txt", 0, 5, "comment")
        moved = engine.move_annotation("notes.txt", tag["id"], 6, 11)
        assert moved["context"]["anchorText"] == "world"
        assert moved["status"] == "attached"

    def test_data_round_trip(self, engine):
        tag = engine.add_annotation("notes.txt", 0, 5, "comment", {"a": 1})
        engine.set_annotation_data(tag["id"], {"a": 2})
        assert engine.get_annotation_data(tag["id"])["data"] == {"a": 2}

    def test_find_by_tag_id_without_path_searches_store(self, repo, write_source):
        write_source("notes.txt", "hello world\n")
        first = AnnotationEngine(repo.repo_root)
        tag = first.add_annotation("notes.txt", 0, 5, "comment")
        fresh = AnnotationEngine(repo.repo_root)
        assert fresh.get_annotation_data(tag["id"])["data"] is None

    def test_remove(self, engine):
        tag = engine.add_annotation("notes.txt", 0, 5, "comment")
        engine.remove_annotation("notes.txt", tag["id"])
        assert engine.list_annotations("notes.txt")["annotations"] == []


class TestSetDocumentText:
    def test_edits_track_anchors_and_write_file(self, engine):
        tag = engine.add_annotation("notes.txt", 6, 11, "comment")
        result = engine.set_document_text(
            "notes.txt", [{"position": 0, "deletedLength": 0, "insertedText": "big "}]
        )
        assert result["updates"][0]["anchor"] == {"start": 10, "end": 15}
        on_disk = (engine.root.repo_root / "notes.txt").read_text()
        assert on_disk == "big hello world\n"
        listed = engine.list_annotations("notes.txt")
        for raw in listed["annotations"]:
            assert validate_tag(tag_from_dict(raw), on_disk) == []
        assert engine.events[-1]["event"] == "documentChanged"

    def test_sequential_edit_semantics(self, engine):
        engine.add_annotation("notes.txt", 6, 11, "comment")
        engine.set_document_text(
            "notes.txt",
            [
                {"position": 0, "deletedLength": 5, "insertedText": "HI"},
                {"position": 2, "deletedLength": 1, "insertedText": "-"},
            ],
        )
        assert (engine.root.repo_root / "notes.txt").read_text() == "HI-world\n"

    def test_bad_edit_aborts_everything(self, engine):
        engine.add_annotation("notes.txt", 6, 11, "comment")
        before = sidecar_bytes(engine, "notes.txt")
        with pytest.raises(BadRequest):
            engine.set_document_text(
                "notes.txt", [{"position": 400, "deletedLength": 1, "insertedText": ""}]
            )
        assert sidecar_bytes(engine, "notes.txt") == before
        assert (engine.root.repo_root / "notes.txt").read_text() == "hello world\n"


class TestExternalChangeFlow:
    def seed(self, engine):
        tag = engine.add_annotation("notes.txt", 6, 11, "comment")
        (engine.root.repo_root / "notes.txt").write_text("# note\nhello world\n")
        return tag

    def test_notify_stages_without_persisting(self, engine):
        tag = self.seed(engine)
        before = sidecar_bytes(engine, "notes.txt")
        result = engine.notify_external_change("notes.txt")
        assert result["status"] == "stale"
        assert [p["tagId"] for p in result["proposals"]] == [tag["id"]]
        assert result["proposals"][0]["strategy"] == "exact"
        assert sidecar_bytes(engine, "notes.txt") == before
        listed = engine.list_annotations("notes.txt")
        assert listed["annotations"][0]["status"] == "proposed"
        orphan_events = [e for e in engine.events if e["event"] == "orphanDetected"]
        assert len(orphan_events) == 1 and orphan_events[0]["tagId"] == tag["id"]

    def test_confirm_persists_and_freshens(self, engine):
        tag = self.seed(engine)
        engine.notify_external_change("notes.txt")
        engine.confirm_proposals("notes.txt", [tag["id"]])
        from codetations.store import check, Freshness

        assert check("notes.txt", StoreRoot(engine.root.repo_root)) is Freshness.FRESH
        listed = engine.list_annotations("notes.txt")
        record = listed["annotations"][0]
        assert record["status"] == "attached"
        assert record["anchor"] == {"start": 13, "end": 18}

    def test_reject_leaves_orphan_persisted(self, engine):
        tag = self.seed(engine)
        engine.notify_external_change("notes.txt")
        engine.reject_proposals("notes.txt", [tag["id"]])
        stored = load("notes.txt", StoreRoot(engine.root.repo_root))
        assert stored.get(tag["id"]).status == "orphaned"
        # Context retained for manual recovery.
        assert stored.get(tag["id"]).context.anchor_text == "world"

    def test_anchor_mutations_blocked_while_stale(self, engine):
        self.seed(engine)
        engine.notify_external_change("notes.txt")
        with pytest.raises(StaleAnnotations):
            engine.add_annotation("notes.txt", 0, 3, "comment")
        with pytest.raises(StaleAnnotations):
            engine.set_document_text(
                "notes.txt", [{"position": 0, "deletedLength": 1, "insertedText": ""}]
            )

    def test_confirm_without_pending_proposal_is_not_found(self, engine):
        tag = self.seed(engine)
        with pytest.raises(NotFound):
            engine.confirm_proposals("notes.txt", [tag["id"]])

    def test_fresh_document_reports_no_proposals(self, engine):
        engine.add_annotation("notes.txt", 6, 11, "comment")
        result = engine.notify_external_change("notes.txt")
        assert result == {
            "path": "notes.txt", "status": "fresh", "proposals": [], "orphaned": []
        }

    def test_deleted_anchor_reports_orphan(self, engine):
        tag = engine.add_annotation("notes.txt", 6, 11, "comment")
        (engine.root.repo_root / "notes.txt").write_text("nothing like it\n")
        result = engine.notify_external_change("notes.txt")
        assert result["proposals"] == []
        assert result["orphaned"] == [tag["id"]]
        # Not persisted yet; confirm of the empty set reconciles.
        engine.confirm_proposals("notes.txt", [])
        stored = load("notes.txt", StoreRoot(engine.root.repo_root))
        assert stored.get(tag["id"]).status == "orphaned"

    def test_event_replay_reproduces_list(self, engine):
        tag = self.seed(engine)
        engine.notify_external_change("notes.txt")
        engine.confirm_proposals("notes.txt", [tag["id"]])
        engine.set_annotation_data(tag["id"], {"k": "v"})
        replayed = None
        for event in engine.events:
            if "annotations" in event and event["path"] == "notes.txt":
                replayed = event["annotations"]
        assert replayed == engine.list_annotations("notes.txt")["annotations"]


class TestProviderPaths:
    def test_provider_absent_mode(self, engine):
        tag = engine.add_annotation("notes.txt", 6, 11, "lm-unit-test",
                                    {"question": "ok?"})
        with pytest.raises(ProviderUnavailable):
            engine.llm_complete("hi")
        with pytest.raises(ProviderUnavailable):
            engine.run_lm_unit_test(tag["id"])
        # Everything non-LLM still works, including semantic falling back.
        (engine.root.repo_root / "notes.txt").write_text("# x\nhello world\n")
        result = engine.notify_external_change("notes.txt", strategy="semantic")
        assert result["strategy"] == "fuzzy"
        assert result["proposals"]

    def test_llm_complete_passthrough(self, repo, write_source):
        write_source("notes.txt", "hello world\n")
        provider = ScriptedProvider(["completed text"])
        engine = AnnotationEngine(repo.repo_root, provider=provider)
        assert engine.llm_complete("do a thing") == {"text": "completed text"}

    def test_semantic_strategy_uses_provider(self, repo, write_source):
        write_source("notes.txt", "hello world\n")
        provider = ScriptedProvider(
            lambda req: "wxrld" if "changed" in req.instructions else "YES"
        )
        engine = AnnotationEngine(repo.repo_root, provider=provider)
        tag = engine.add_annotation("notes.txt", 6, 11, "comment")
        (engine.root.repo_root / "notes.txt").write_text("hello wxrld\n")
        result = engine.notify_external_change("notes.txt", strategy="semantic")
        assert result["proposals"][0]["strategy"] == "semantic"
        assert result["proposals"][0]["candidateText"] == "wxrld"
        engine.confirm_proposals("notes.txt", [tag["id"]])
        assert engine.list_annotations("notes.txt")["annotations"][0]["anchor"] == {
            "start": 6, "end": 11,
        }


class TestLmUnitTestLoop:
    def test_no_then_fix_then_yes(self, repo, write_source):
        doc = "# adds one to x\nx = x + 2\n"
        write_source("code.py", doc)

        def scripted(req):
            if not req.instructions.startswith("Answer YES or NO"):
                return ""
            if "# adds two to x" in req.document:
                return "YES"
            return "NO\n# adds two to x"

        engine = AnnotationEngine(repo.repo_root, provider=ScriptedProvider(scripted))
        tag = engine.add_annotation(
            "code.py", 0, 15, "lm-unit-test",
            {"question": "Does the comment describe the code?"},
        )
        first = engine.run_lm_unit_test(tag["id"])
        assert first == {"pass": False, "suggestion": "# adds two to x"}
        stored = engine.get_annotation_data(tag["id"])["data"]["lastResult"]
        assert stored["pass"] is False

        # Apply the suggestion over the annotated region, then re-run.
        anchor = engine.list_annotations("code.py")["annotations"][0]["anchor"]
        engine.set_document_text(
            "code.py",
            [{
                "position": anchor["start"],
                "deletedLength": anchor["end"] - anchor["start"],
                "insertedText": first["suggestion"],
            }],
        )
        second = engine.run_lm_unit_test(tag["id"])
        assert second == {"pass": True, "suggestion": None}

    def test_missing_question_is_a_precondition_error(self, engine):
        tag = engine.add_annotation("notes.txt", 0, 5, "lm-unit-test", {})
        engine.provider = ScriptedProvider(["YES"])
        with pytest.raises(BadRequest):
            engine.run_lm_unit_test(tag["id"])

    def test_wrong_type_rejected(self, engine):
        tag = engine.add_annotation("notes.txt", 0, 5, "comment")
        engine.provider = ScriptedProvider(["YES"])
        with pytest.raises(BadRequest):
            engine.run_lm_unit_test(tag["id"])

    def test_malformed_reply_recorded_and_raised(self, repo, write_source):
        write_source("c.txt", "stuff\n")
        engine = AnnotationEngine(repo.repo_root, provider=ScriptedProvider(["MAYBE?"]))
        tag = engine.add_annotation("c.txt", 0, 5, "lm-unit-test", {"question": "q"})
        with pytest.raises(Exception, match="malformed"):
            engine.run_lm_unit_test(tag["id"])
        last = engine.get_annotation_data(tag["id"])["data"]["lastResult"]
        assert last["error"] == "malformed provider reply"
        assert last["reply"] == "MAYBE?"

class TestPartialConfirmation:
    def test_partial_confirm_persists_proposed_and_recovers_after_restart(
        self, repo, write_source
    ):
        write_source("f.txt", "alpha one\nbeta two\ngamma three\n")
        engine = AnnotationEngine(repo.repo_root)
        a = engine.add_annotation("f.txt", 0, 9, "comment")
        b = engine.add_annotation("f.txt", 10, 18, "comment")

        (repo.repo_root / "f.txt").write_text("# head\nalpha one\nbeta two\ngamma three\n")
        result = engine.notify_external_change("f.txt")
        assert len(result["proposals"]) == 2

        engine.confirm_proposals("f.txt", [a["id"]])
        stored = load("f.txt", StoreRoot(engine.root.repo_root))
        statuses = {t.id: t.status for t in stored.annotations}
        assert statuses[a["id"]] == "attached"
        assert statuses[b["id"]] == "proposed"

        # A fresh engine (restart) recomputes the pending proposal and can
        # finish the job.
        fresh = AnnotationEngine(repo.repo_root)
        recomputed = fresh.notify_external_change("f.txt")
        assert recomputed["status"] == "fresh"
        assert [p["tagId"] for p in recomputed["proposals"]] == [b["id"]]
        fresh.confirm_proposals("f.txt", [b["id"]])
        final = load("f.txt", StoreRoot(fresh.root.repo_root))
        text = (repo.repo_root / "f.txt").read_text()
        for tag in final.annotations:
            assert tag.status == "attached"
            assert validate_tag(tag, text) == []
