"""Ingestion service: framed TCP publishers in, tagged points into the store."""

from __future__ import annotations

import asyncio
import logging
import socket
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from ..errors import MessageError, OutOfOrderError, StoreError
from .registry import DeviceRegistry, augment
from .store import DUPLICATE, LineStore
from .wire import MAX_FRAME, Status, WireMessage, decode_body, encode_frame, parse_sensor_message

log = logging.getLogger(__name__)


@dataclass
class Stats:
    accepted: int = 0
    duplicates: int = 0
    rejected: int = 0
    out_of_order: int = 0
    store_errors: int = 0
    unregistered: int = 0
    rejected_by_kind: Counter = field(default_factory=Counter)
    last_timestamp_ns: dict[str, int] = field(default_factory=dict)

    @property
    def received(self) -> int:
        return self.accepted + self.duplicates + self.rejected + self.out_of_order + self.store_errors

    @property
    def malformed_rate(self) -> float:
        return self.rejected / self.received if self.received else 0.0

    def as_dict(self) -> dict:
        return {
            "received": self.received,
            "accepted": self.accepted,
            "duplicates": self.duplicates,
            "rejected": self.rejected,
            "out_of_order": self.out_of_order,
            "store_errors": self.store_errors,
            "unregistered": self.unregistered,
            "malformed_rate": self.malformed_rate,
            "rejected_by_kind": dict(self.rejected_by_kind),
            "last_timestamp_ns": dict(self.last_timestamp_ns),
        }


class IngestService:
    """parse -> augment -> append for every incoming message.

    Writes go through one worker thread, so the store keeps a single writer
    no matter how many publishers are connected. Each publisher waits for
    the status byte of a frame before its next frame is read, which bounds
    in-flight work per connection.
    """

    def __init__(self, registry: DeviceRegistry, store: LineStore):
        self.registry = registry
        self.store = store
        self.stats = Stats()
        self._lock = threading.Lock()
        self._writer = ThreadPoolExecutor(max_workers=1, thread_name_prefix="store-writer")
        self._server: asyncio.AbstractServer | None = None

    def ingest(self, msg: WireMessage) -> Status:
        try:
            m = parse_sensor_message(msg)
        except MessageError as exc:
            with self._lock:
                self.stats.rejected += 1
                self.stats.rejected_by_kind[exc.kind] += 1
            log.info("rejected message on %r: %s", msg.topic, exc)
            return Status.REJECTED
        point = augment(m, self.registry)
        try:
            outcome = self.store.append(point)
        except OutOfOrderError as exc:
            with self._lock:
                self.stats.out_of_order += 1
            log.info("%s", exc)
            return Status.OUT_OF_ORDER
        except StoreError as exc:
            with self._lock:
                self.stats.store_errors += 1
            log.error("store failure, applying backpressure: %s", exc)
            return Status.BACKPRESSURE
        with self._lock:
            if outcome == DUPLICATE:
                self.stats.duplicates += 1
                return Status.DUPLICATE
            self.stats.accepted += 1
            if point.warning:
                self.stats.unregistered += 1
            prev = self.stats.last_timestamp_ns.get(m.device_id)
            if prev is None or m.timestamp_ns > prev:
                self.stats.last_timestamp_ns[m.device_id] = m.timestamp_ns
        return Status.ACCEPTED

    def reject_frame(self, reason: str) -> None:
        with self._lock:
            self.stats.rejected += 1
            self.stats.rejected_by_kind["bad_frame"] += 1
        log.info("rejected frame: %s", reason)

    async def ingest_async(self, msg: WireMessage) -> Status:
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self._writer, self.ingest, msg)

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        peer = writer.get_extra_info("peername")
        try:
            while True:
                try:
                    head = await reader.readexactly(4)
                except asyncio.IncompleteReadError:
                    break
                n = int.from_bytes(head, "big")
                if n > MAX_FRAME:
                    self.reject_frame(f"{n}-byte frame from {peer} exceeds limit")
                    writer.write(bytes([Status.REJECTED]))
                    await writer.drain()
                    break
                try:
                    body = await reader.readexactly(n)
                except asyncio.IncompleteReadError:
                    self.reject_frame(f"connection from {peer} closed mid-frame")
                    break
                try:
                    msg = decode_body(body)
                except ValueError as exc:
                    self.reject_frame(str(exc))
                    status = Status.REJECTED
                else:
                    status = await self.ingest_async(msg)
                writer.write(bytes([status]))
                await writer.drain()
        except (ConnectionError, OSError) as exc:
            log.info("publisher %s dropped: %s", peer, exc)
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    async def start(self, host: str, port: int) -> asyncio.AbstractServer:
        self._server = await asyncio.start_server(self._handle, host, port)
        return self._server

    @property
    def port(self) -> int | None:
        if self._server is None or not self._server.sockets:
            return None
        return self._server.sockets[0].getsockname()[1]

    def shutdown(self):
        self._writer.shutdown(wait=True)


def parse_bind(text: str, default_port: int = 1884) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host:
        return text or "127.0.0.1", default_port
    return host.strip("[]"), int(port)


async def serve_forever(
    service: IngestService,
    bind: str,
    http_bind: str | None = None,
    app=None,
    ready: threading.Event | None = None,
):
    """Run the framed ingestion listener, plus the HTTP API when ``http_bind`` is given."""
    host, port = parse_bind(bind)
    server = await service.start(host, port)
    log.info("ingestion listening on %s:%d", host, service.port)
    tasks = [asyncio.create_task(server.serve_forever())]
    if http_bind:
        import uvicorn

        h, p = parse_bind(http_bind, 8080)
        config = uvicorn.Config(app, host=h, port=p, log_level="warning")
        tasks.append(asyncio.create_task(uvicorn.Server(config).serve()))
        log.info("http api on %s:%d", h, p)
    if ready is not None:
        ready.set()
    try:
        await asyncio.gather(*tasks)
    finally:
        server.close()


class ServiceThread:
    """Run an :class:`IngestService` listener on a background event loop."""

    def __init__(self, service: IngestService, host: str = "127.0.0.1", port: int = 0):
        self.service = service
        self.host = host
        self._port = port
        self._loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._loop.run_forever, daemon=True)

    def start(self) -> ServiceThread:
        self._thread.start()
        asyncio.run_coroutine_threadsafe(self.service.start(self.host, self._port), self._loop).result(5)
        return self

    @property
    def port(self) -> int:
        return self.service.port

    def stop(self):
        async def _close():
            if self.service._server is not None:
                self.service._server.close()
                await self.service._server.wait_closed()

        asyncio.run_coroutine_threadsafe(_close(), self._loop).result(5)
        self._loop.call_soon_threadsafe(self._loop.stop)
        self._thread.join(5)
        self.service.shutdown()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class Publisher:
    """Blocking client: sends one frame, waits for its status byte."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def publish(self, msg: WireMessage) -> Status:
        return self.publish_raw(encode_frame(msg))

    def publish_raw(self, frame: bytes) -> Status:
        self.sock.sendall(frame)
        b = self.sock.recv(1)
        if not b:
            raise ConnectionError("ingestion service closed the connection")
        return Status(b[0])

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
