"""Wire-protocol tests: ndjson over TCP, the HTTP shim, and event delivery."""

import asyncio
import json

import pytest

from codetations import ScriptedProvider
from codetations.server import AnnotationServer
from codetations.service import AnnotationEngine


class Client:
    """Minimal ndjson protocol client for tests."""

    def __init__(self, reader, writer):
        self.reader = reader
        self.writer = writer
        self.events: list[dict] = []
        self._counter = 0

    @classmethod
    async def connect(cls, port: int) -> "Client":
        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        return cls(reader, writer)

    async def call(self, op: str, **params) -> dict:
        self._counter += 1
        request_id = f"r{self._counter}"
        payload = {"op": op, "requestId": request_id, **params}
        self.writer.write(json.dumps(payload).encode() + b"\n")
        await self.writer.drain()
        while True:
            line = await asyncio.wait_for(self.reader.readline(), timeout=5)
            message = json.loads(line)
            if "event" in message:
                self.events.append(message)
                continue
            assert message["requestId"] == request_id
            return message

    async def next_event(self) -> dict:
        if self.events:
            return self.events.pop(0)
        while True:
            line = await asyncio.wait_for(self.reader.readline(), timeout=5)
            message = json.loads(line)
            if "event" in message:
                return message

    def close(self) -> None:
        self.writer.close()


def run_with_server(test_body, repo_root, provider=None):
    async def main():
        engine = AnnotationEngine(repo_root, provider=provider)
        server = AnnotationServer(engine, port=0)
        await server.start()
        try:
            await test_body(server)
        finally:
            server.stop()
            await server._shutdown()

    asyncio.run(main())


def test_request_response_and_events(repo, write_source):
    write_source("doc.txt", "hello world\n")

    async def body(server):
        client = await Client.connect(server.port)
        pong = await client.call("ping")
        assert pong["ok"] and pong["result"] == {"pong": True}

        added = await client.call(
            "add_annotation", path="doc.txt", start=6, end=11,
            annotationType="comment", data={"x": 1},
        )
        assert added["ok"]
        tag = added["result"]
        assert tag["context"]["anchorText"] == "world"

        event = await client.next_event()
        assert event["event"] == "annotationsChanged"
        assert event["path"] == "doc.txt"
        assert [t["id"] for t in event["annotations"]] == [tag["id"]]

        listed = await client.call("list_annotations", path="doc.txt")
        assert [t["id"] for t in listed["result"]["annotations"]] == [tag["id"]]
        client.close()

    run_with_server(body, repo.repo_root)


def test_error_codes_on_the_wire(repo, write_source):
    write_source("doc.txt", "hello world\n")

    async def body(server):
        client = await Client.connect(server.port)
        resp = await client.call("add_annotation", path="doc.txt", start=5, end=2,
                                 annotationType="c")
        assert not resp["ok"] and resp["error"]["code"] == "bad_request"

        resp = await client.call("get_annotation_data", tagId="0" * 36)
        assert not resp["ok"] and resp["error"]["code"] == "not_found"

        resp = await client.call("llm_complete", instructions="hi")
        assert not resp["ok"] and resp["error"]["code"] == "provider_unavailable"

        resp = await client.call("frobnicate", path="doc.txt")
        assert not resp["ok"] and resp["error"]["code"] == "bad_request"

        resp = await client.call("ext.run_compiler", path="doc.txt")
        assert not resp["ok"] and "reserved" in resp["error"]["message"]
        client.close()

    run_with_server(body, repo.repo_root)


def test_malformed_line_gets_error_response(repo):
    async def body(server):
        reader, writer = await asyncio.open_connection("127.0.0.1", server.port)
        writer.write(b"this is not json\n")
        await writer.drain()
        reply = json.loads(await asyncio.wait_for(reader.readline(), timeout=5))
        assert reply["ok"] is False and reply["error"]["code"] == "bad_request"
        writer.close()

    run_with_server(body, repo.repo_root)


def test_concurrent_requests_on_different_paths(repo, write_source):
    write_source("a.txt", "aaaa\n")
    write_source("b.txt", "bbbb\n")

    async def body(server):
        client = await Client.connect(server.port)
        # Fire two adds without awaiting in between, on one connection.
        self_counter = [0]

        async def call(op, **params):
            self_counter[0] += 1
            rid = f"c{self_counter[0]}"
            client.writer.write(
                json.dumps({"op": op, "requestId": rid, **params}).encode() + b"\n"
            )
            await client.writer.drain()
            return rid

        rid_a = await call("add_annotation", path="a.txt", start=0, end=4,
                           annotationType="t")
        rid_b = await call("add_annotation", path="b.txt", start=0, end=4,
                           annotationType="t")
        got = {}
        while len(got) < 2:
            line = await asyncio.wait_for(client.reader.readline(), timeout=5)
            message = json.loads(line)
            if "event" in message:
                continue
            got[message["requestId"]] = message
        assert got[rid_a]["ok"] and got[rid_b]["ok"]
        client.close()

    run_with_server(body, repo.repo_root)


def test_full_reattach_flow_over_the_wire(repo, write_source):
    write_source("doc.txt", "alpha beta gamma\n")

    async def body(server):
        client = await Client.connect(server.port)
        added = await client.call("add_annotation", path="doc.txt", start=6, end=10,
                                  annotationType="comment")
        tag_id = added["result"]["id"]

        # Out-of-band rewrite, then the notify/confirm flow.
        (repo.repo_root / "doc.txt").write_text("# intro\nalpha beta gamma\n")
        notified = await client.call("notify_external_change", path="doc.txt")
        proposals = notified["result"]["proposals"]
        assert [p["tagId"] for p in proposals] == [tag_id]
        event = await client.next_event()
        while event["event"] != "orphanDetected":  # skip the add's event
            event = await client.next_event()
        assert event["proposal"] is not None

        confirmed = await client.call("confirm_proposals", path="doc.txt",
                                      tagIds=[tag_id])
        record = confirmed["result"]["annotations"][0]
        assert record["status"] == "attached"
        assert record["anchor"] == {"start": 14, "end": 18}
        client.close()

    run_with_server(body, repo.repo_root)


def test_http_shim_rpc_and_health(repo, write_source):
    write_source("doc.txt", "hello world\n")

    async def http_request(port, method, target, body=None):
        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        payload = json.dumps(body).encode() if body is not None else b""
        head = (
            f"{method} {target} HTTP/1.1\r\nHost: localhost\r\n"
            f"Content-Length: {len(payload)}\r\nContent-Type: application/json\r\n\r\n"
        )
        writer.write(head.encode() + payload)
        await writer.drain()
        raw = await asyncio.wait_for(reader.read(), timeout=5)
        writer.close()
        header_blob, _, response_body = raw.partition(b"\r\n\r\n")
        status = int(header_blob.split()[1])
        return status, header_blob.decode("latin-1"), response_body

    async def body(server):
        status, headers, response = await http_request(
            server.http_port, "POST", "/rpc",
            {"op": "add_annotation", "requestId": "h1", "path": "doc.txt",
             "start": 0, "end": 5, "annotationType": "comment"},
        )
        assert status == 200
        assert "Access-Control-Allow-Origin: *" in headers
        parsed = json.loads(response)
        assert parsed["ok"] and parsed["result"]["context"]["anchorText"] == "hello"

        status, _, response = await http_request(server.http_port, "GET", "/health")
        assert status == 200 and json.loads(response)["service"] == "codetations"

        status, _, _ = await http_request(server.http_port, "GET", "/nope")
        assert status == 404

    run_with_server(body, repo.repo_root)


def test_http_events_stream(repo, write_source):
    write_source("doc.txt", "hello world\n")

    async def body(server):
        reader, writer = await asyncio.open_connection("127.0.0.1", server.http_port)
        writer.write(b"GET /events HTTP/1.1\r\nHost: x\r\n\r\n")
        await writer.drain()
        # Headers + initial comment frame.
        head = await asyncio.wait_for(reader.readuntil(b"\n\n"), timeout=5)
        assert b"text/event-stream" in head

        client = await Client.connect(server.port)
        await client.call("add_annotation", path="doc.txt", start=0, end=5,
                          annotationType="comment")
        frame = await asyncio.wait_for(reader.readuntil(b"\n\n"), timeout=5)
        assert frame.startswith(b"data: ")
        event = json.loads(frame[len(b"data: "):].strip())
        assert event["event"] == "annotationsChanged"
        client.close()
        writer.close()

    run_with_server(body, repo.repo_root)


def test_semantic_over_wire_with_scripted_provider(repo, write_source):
    write_source("doc.txt", "the quick brown fox\n")
    provider = ScriptedProvider(lambda req: "quikc brwn")

    async def body(server):
        client = await Client.connect(server.port)
        added = await client.call("add_annotation", path="doc.txt", start=4, end=15,
                                  annotationType="comment")
        tag_id = added["result"]["id"]
        (repo.repo_root / "doc.txt").write_text("the quikc brwn fox\n")
        notified = await client.call("notify_external_change", path="doc.txt",
                                     strategy="semantic")
        proposal = notified["result"]["proposals"][0]
        assert proposal["strategy"] == "semantic"
        assert proposal["tagId"] == tag_id
        assert proposal["candidateText"] == "quikc brwn"
        client.close()

    run_with_server(body, repo.repo_root, provider=provider)
