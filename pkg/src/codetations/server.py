"""Wire transports for the annotation engine.

Two listeners on the loopback interface:

* newline-delimited JSON over TCP (the primary protocol): requests
  ``{"op", "requestId", ...params}``, responses ``{"requestId", "ok",
  result|error}``; every connection also receives all events as they happen;
* an HTTP shim one port above: ``POST /rpc`` carries a single request object,
  ``GET /events`` streams the same events as server-sent events so browsers
  can subscribe.

See docs/protocol.md for the exact shapes. Operations on the same document
path are serialized; different paths run concurrently. Engine work runs in
worker threads so a slow completion provider never stalls other documents.
"""

from __future__ import annotations

import asyncio
import json
import logging
from collections import defaultdict
from typing import Any

from .providers import ProviderError
from .anchoring import StaleProposalError
from .service import AnnotationEngine, BadRequest, EngineError
from .store import StoreError

logger = logging.getLogger(__name__)

PROTOCOL_LINE_LIMIT = 16 * 1024 * 1024

_CORS_HEADERS = (
    "Access-Control-Allow-Origin: *\r\n"
    "Access-Control-Allow-Headers: Content-Type\r\n"
    "Access-Control-Allow-Methods: GET, POST, OPTIONS\r\n"
)


class AnnotationServer:
    """Hosts an engine over the ndjson and HTTP listeners."""

    def __init__(
        self,
        engine: AnnotationEngine,
        host: str = "127.0.0.1",
        port: int = 8377,
        http_port: int | None = None,
        watch_interval: float | None = None,
    ):
        self.engine = engine
        self.host = host
        self.port = port
        self.http_port = http_port if http_port is not None else (port + 1 if port else 0)
        self.watch_interval = watch_interval
        self._locks: dict[str, asyncio.Lock] = defaultdict(asyncio.Lock)
        self._subscribers: set[asyncio.Queue] = set()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._stop = asyncio.Event()
        self._tcp_server: asyncio.AbstractServer | None = None
        self._http_server: asyncio.AbstractServer | None = None
        self._watch_task: asyncio.Task | None = None
        engine.add_event_sink(self._sink)

    # -- lifecycle --------------------------------------------------------

    async def start(self) -> None:
        self._loop = asyncio.get_running_loop()
        self._tcp_server = await asyncio.start_server(
            self._handle_tcp, self.host, self.port, limit=PROTOCOL_LINE_LIMIT
        )
        self.port = self._tcp_server.sockets[0].getsockname()[1]
        self._http_server = await asyncio.start_server(
            self._handle_http, self.host, self.http_port, limit=PROTOCOL_LINE_LIMIT
        )
        self.http_port = self._http_server.sockets[0].getsockname()[1]
        if self.watch_interval:
            self._watch_task = asyncio.create_task(self._watch_loop())

    async def serve_forever(self) -> None:
        if self._tcp_server is None:
            await self.start()
        await self._stop.wait()
        await self._shutdown()

    def stop(self) -> None:
        self._stop.set()

    async def _shutdown(self) -> None:
        if self._watch_task:
            self._watch_task.cancel()
        for server in (self._tcp_server, self._http_server):
            if server is not None:
                server.close()
                await server.wait_closed()

    async def _watch_loop(self) -> None:
        while True:
            await asyncio.sleep(self.watch_interval)
            for path in self.engine.open_paths():
                try:
                    async with self._locks[path]:
                        await asyncio.to_thread(self.engine.poll_path, path)
                except Exception as exc:  # keep watching the other paths
                    logger.warning("watcher failed on %s: %s", path, exc)

    # -- events -----------------------------------------------------------

    def _sink(self, event: dict[str, Any]) -> None:
        # Engine ops run in worker threads; hop onto the loop to broadcast.
        if self._loop is not None:
            self._loop.call_soon_threadsafe(self._broadcast, event)

    def _broadcast(self, event: dict[str, Any]) -> None:
        for queue in self._subscribers:
            queue.put_nowait(event)

    def _subscribe(self) -> asyncio.Queue:
        queue: asyncio.Queue = asyncio.Queue()
        self._subscribers.add(queue)
        return queue

    def _unsubscribe(self, queue: asyncio.Queue) -> None:
        self._subscribers.discard(queue)

    # -- dispatch ---------------------------------------------------------

    async def dispatch(self, request: Any) -> dict[str, Any]:
        if not isinstance(request, dict):
            return _error_response(None, "bad_request", "request must be a JSON object")
        request_id = request.get("requestId")
        if not isinstance(request_id, str) or not request_id:
            return _error_response(None, "bad_request", "requestId must be a string")
        op = request.get("op")
        if not isinstance(op, str):
            return _error_response(request_id, "bad_request", "op must be a string")
        try:
            result = await self._run_op(op, request)
            return {"requestId": request_id, "ok": True, "result": result}
        except EngineError as exc:
            return _error_response(request_id, exc.code, str(exc))
        except StaleProposalError as exc:
            return _error_response(request_id, "stale_proposal", str(exc))
        except StoreError as exc:
            return _error_response(request_id, "store_error", str(exc))
        except ProviderError as exc:
            return _error_response(request_id, "provider_error", str(exc))
        except (ValueError, KeyError, TypeError) as exc:
            return _error_response(request_id, "bad_request", str(exc))
        except Exception as exc:  # pragma: no cover - last resort
            logger.exception("operation %s failed", op)
            return _error_response(request_id, "internal", str(exc))

    async def _run_op(self, op: str, request: dict[str, Any]) -> Any:
        engine = self.engine

        if op == "ping":
            return {"pong": True}
        if op == "shutdown":
            asyncio.get_running_loop().call_soon(self.stop)
            return {"stopping": True}
        if op == "llm_complete":
            return await asyncio.to_thread(
                engine.llm_complete,
                request.get("instructions"),
                request.get("document", ""),
                request.get("anchorContext"),
            )

        if op.startswith("ext."):
            raise BadRequest(
                f"operation namespace 'ext.*' is reserved but {op!r} is not defined"
            )

        path = request.get("path")
        if path is not None and not isinstance(path, str):
            raise BadRequest("path must be a string")

        if op in ("get_annotation_data", "set_annotation_data", "run_lm_unit_test"):
            tag_id = _required_str(request, "tagId")
            if path is None:
                path = await asyncio.to_thread(engine.find_tag_path, tag_id)
            async with self._locks[path]:
                if op == "get_annotation_data":
                    return await asyncio.to_thread(engine.get_annotation_data, tag_id, path)
                if op == "set_annotation_data":
                    return await asyncio.to_thread(
                        engine.set_annotation_data, tag_id, request.get("data"), path
                    )
                return await asyncio.to_thread(engine.run_lm_unit_test, tag_id, path)

        if path is None:
            raise BadRequest(f"operation {op!r} requires a path")

        async with self._locks[path]:
            if op == "list_annotations":
                return await asyncio.to_thread(engine.list_annotations, path)
            if op == "add_annotation":
                return await asyncio.to_thread(
                    engine.add_annotation,
                    path,
                    request.get("start"),
                    request.get("end"),
                    request.get("annotationType"),
                    request.get("data"),
                )
            if op == "move_annotation":
                return await asyncio.to_thread(
                    engine.move_annotation,
                    path,
                    _required_str(request, "tagId"),
                    request.get("newStart"),
                    request.get("newEnd"),
                )
            if op == "remove_annotation":
                return await asyncio.to_thread(
                    engine.remove_annotation, path, _required_str(request, "tagId")
                )
            if op == "get_document_text":
                return await asyncio.to_thread(engine.get_document_text, path)
            if op == "set_document_text":
                edits = request.get("edits")
                if not isinstance(edits, list):
                    raise BadRequest("edits must be an array")
                return await asyncio.to_thread(engine.set_document_text, path, edits)
            if op == "notify_external_change":
                return await asyncio.to_thread(
                    engine.notify_external_change, path, request.get("strategy", "fuzzy")
                )
            if op == "confirm_proposals":
                return await asyncio.to_thread(
                    engine.confirm_proposals, path, request.get("tagIds")
                )
            if op == "reject_proposals":
                return await asyncio.to_thread(
                    engine.reject_proposals, path, request.get("tagIds")
                )
        raise BadRequest(f"unknown operation {op!r}")

    # -- ndjson transport ---------------------------------------------------

    async def _handle_tcp(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        queue = self._subscribe()
        send_lock = asyncio.Lock()

        async def send(obj: dict[str, Any]) -> None:
            async with send_lock:
                writer.write(json.dumps(obj, ensure_ascii=False).encode("utf-8") + b"\n")
                await writer.drain()

        async def pump_events() -> None:
            while True:
                await send(await queue.get())

        pump = asyncio.create_task(pump_events())
        pending: set[asyncio.Task] = set()
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                if not line.strip():
                    continue
                try:
                    request = json.loads(line)
                except json.JSONDecodeError as exc:
                    await send(_error_response(None, "bad_request", f"invalid JSON: {exc}"))
                    continue

                async def handle(req: Any) -> None:
                    await send(await self.dispatch(req))

                task = asyncio.create_task(handle(request))
                pending.add(task)
                task.add_done_callback(pending.discard)
        except (ConnectionResetError, asyncio.IncompleteReadError):
            pass
        finally:
            self._unsubscribe(queue)
            pump.cancel()
            for task in pending:
                task.cancel()
            writer.close()

    # -- HTTP shim ------------------------------------------------------------

    async def _handle_http(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        try:
            request_line = await reader.readline()
            if not request_line:
                writer.close()
                return
            parts = request_line.decode("latin-1").split()
            if len(parts) < 2:
                writer.close()
                return
            method, target = parts[0], parts[1]
            headers: dict[str, str] = {}
            while True:
                line = await reader.readline()
                if line in (b"\r\n", b"\n", b""):
                    break
                name, _, value = line.decode("latin-1").partition(":")
                headers[name.strip().lower()] = value.strip()

            if method == "OPTIONS":
                await self._http_respond(writer, 204, "")
            elif method == "POST" and target == "/rpc":
                length = int(headers.get("content-length", "0"))
                body = await reader.readexactly(length) if length else b""
                try:
                    request = json.loads(body)
                except json.JSONDecodeError as exc:
                    response = _error_response(None, "bad_request", f"invalid JSON: {exc}")
                else:
                    response = await self.dispatch(request)
                await self._http_respond(
                    writer, 200, json.dumps(response, ensure_ascii=False)
                )
            elif method == "GET" and target == "/events":
                await self._serve_events(writer)
            elif method == "GET" and target in ("/", "/health"):
                info = json.dumps(
                    {"service": "codetations", "protocol": 1, "events": "/events"}
                )
                await self._http_respond(writer, 200, info)
            else:
                await self._http_respond(writer, 404, '{"error": "not found"}')
        except (ConnectionResetError, asyncio.IncompleteReadError, ValueError):
            pass
        finally:
            if not writer.is_closing():
                writer.close()

    async def _http_respond(
        self, writer: asyncio.StreamWriter, status: int, body: str
    ) -> None:
        reason = {200: "OK", 204: "No Content", 404: "Not Found"}.get(status, "OK")
        payload = body.encode("utf-8")
        head = (
            f"HTTP/1.1 {status} {reason}\r\n"
            "Content-Type: application/json; charset=utf-8\r\n"
            f"Content-Length: {len(payload)}\r\n"
            f"{_CORS_HEADERS}"
            "Connection: close\r\n\r\n"
        )
        writer.write(head.encode("latin-1") + payload)
        await writer.drain()

    async def _serve_events(self, writer: asyncio.StreamWriter) -> None:
        queue = self._subscribe()
        head = (
            "HTTP/1.1 200 OK\r\n"
            "Content-Type: text/event-stream\r\n"
            "Cache-Control: no-cache\r\n"
            f"{_CORS_HEADERS}"
            "Connection: keep-alive\r\n\r\n"
        )
        writer.write(head.encode("latin-1") + b": connected\n\n")
        try:
            await writer.drain()
            while True:
                event = await queue.get()
                data = json.dumps(event, ensure_ascii=False)
                writer.write(f"data: {data}\n\n".encode("utf-8"))
                await writer.drain()
        except (ConnectionResetError, OSError):
            pass
        finally:
            self._unsubscribe(queue)


def _required_str(request: dict[str, Any], key: str) -> str:
    value = request.get(key)
    if not isinstance(value, str) or not value:
        raise BadRequest(f"{key} must be a non-empty string")
    return value


def _error_response(request_id: str | None, code: str, message: str) -> dict[str, Any]:
    return {
        "requestId": request_id,
        "ok": False,
        "error": {"code": code, "message": message},
    }
