"""Length-prefixed JSON wire protocol, offboard pipeline server and onboard payload client.

Frame layout: 4-byte big-endian body length, then a UTF-8 JSON body
``{"type", "sequence", "timestamp", "body"}``.
"""

from __future__ import annotations

import json
import logging
import math
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from .embedding import Embedder, HashingEmbedder
from .impedance import GainScheduler, ImpedancePayload, fallback_payload
from .perception import (
    DescriptorError,
    MockVLMClient,
    NormalizedDescriptor,
    VLMClient,
    VLMUnavailable,
    normalize,
    parse_descriptor,
    to_query_text,
)
from .retrieval import RetrievalConfig, RetrievalResult, ScenarioIndex, build_index, format_payload, retrieve
from .safety import SafetyLimits, SsmParams, apply_guards
from .scenario_db import ScenarioDatabase

log = logging.getLogger(__name__)

MESSAGE_TYPES = ("scene_query", "payload_reply", "heartbeat", "error")
HEADER = struct.Struct(">I")
MAX_FRAME = 1 << 20


class ProtocolError(Exception):
    pass


class FramingError(ProtocolError):
    """The byte stream does not contain a complete, well-sized frame."""


class ParseError(ProtocolError):
    """A frame arrived intact but its body is not a valid message."""


@dataclass(frozen=True)
class WireMessage:
    type: str
    sequence: int
    timestamp: int  # ms since epoch
    body: dict = field(default_factory=dict)


def now_ms() -> int:
    return int(time.time() * 1000)


def encode(msg: WireMessage) -> bytes:
    if msg.type not in MESSAGE_TYPES:
        raise ValueError(f"unknown message type {msg.type!r}")
    doc = {"type": msg.type, "sequence": msg.sequence, "timestamp": msg.timestamp, "body": msg.body}
    body = json.dumps(doc, separators=(",", ":"), sort_keys=True, allow_nan=False).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise ValueError(f"message body of {len(body)} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(body)) + body


def decode_body(body: bytes) -> WireMessage:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed body: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("body is not a JSON object")
    try:
        mtype, seq, ts, payload = doc["type"], doc["sequence"], doc["timestamp"], doc["body"]
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}") from None
    if mtype not in MESSAGE_TYPES:
        raise ParseError(f"unknown message type {mtype!r}")
    for name, v in (("sequence", seq), ("timestamp", ts)):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ParseError(f"{name} must be an integer")
    if not isinstance(payload, dict):
        raise ParseError("body must be an object")
    return WireMessage(mtype, seq, ts, payload)


def decode(data: bytes) -> WireMessage:
    """Decode exactly one frame."""
    if len(data) < HEADER.size:
        raise FramingError("truncated frame header")
    (n,) = HEADER.unpack_from(data)
    if n == 0:
        raise FramingError("zero-length frame")
    if n > MAX_FRAME:
        raise FramingError(f"frame length {n} exceeds {MAX_FRAME}")
    if len(data) < HEADER.size + n:
        raise FramingError(f"truncated frame: expected {n} body bytes, got {len(data) - HEADER.size}")
    if len(data) > HEADER.size + n:
        raise FramingError("trailing bytes after frame")
    return decode_body(data[HEADER.size:])


class FrameDecoder:
    """Incremental decoder for a byte stream; bad frames become error items, not exceptions."""

    def __init__(self):
        self._buf = bytearray()
        self._skip = 0

    def feed(self, data: bytes) -> list[WireMessage | ProtocolError]:
        self._buf += data
        out: list[WireMessage | ProtocolError] = []
        while True:
            if self._skip:
                k = min(self._skip, len(self._buf))
                del self._buf[:k]
                self._skip -= k
                if self._skip:
                    break
            if len(self._buf) < HEADER.size:
                break
            (n,) = HEADER.unpack_from(self._buf)
            if n == 0:
                del self._buf[:HEADER.size]
                out.append(FramingError("zero-length frame"))
                continue
            if n > MAX_FRAME:
                # drain the oversized body so the stream stays aligned
                del self._buf[:HEADER.size]
                self._skip = n
                out.append(FramingError(f"frame length {n} exceeds {MAX_FRAME}"))
                continue
            if len(self._buf) < HEADER.size + n:
                break
            body = bytes(self._buf[HEADER.size:HEADER.size + n])
            del self._buf[:HEADER.size + n]
            try:
                out.append(decode_body(body))
            except ParseError as exc:
                out.append(exc)
        return out


# ---------------------------------------------------------------- pipeline

@dataclass
class PipelineOutcome:
    payload: ImpedancePayload
    result: RetrievalResult | None
    scene: NormalizedDescriptor | None
    error: str | None = None


class Pipeline:
    """describe -> normalize -> embed -> retrieve -> format -> guard. Read-only after construction."""

    def __init__(
        self,
        db: ScenarioDatabase,
        embedder: Embedder | None = None,
        vlm: VLMClient | None = None,
        retrieval_cfg: RetrievalConfig | None = None,
        limits: SafetyLimits | None = None,
        ssm: SsmParams | None = None,
        index: ScenarioIndex | None = None,
    ):
        self.db = db
        self.embedder = embedder or HashingEmbedder()
        self.vlm = vlm or MockVLMClient()
        self.retrieval_cfg = retrieval_cfg or RetrievalConfig()
        self.limits = limits or SafetyLimits()
        self.ssm = ssm or SsmParams()
        self.index = index or build_index(db, self.embedder)

    def run_descriptor(self, descriptor) -> PipelineOutcome:
        scene = normalize(descriptor)
        query = self.embedder.embed(to_query_text(scene))
        result = retrieve(self.index, query, self.retrieval_cfg)
        payload = format_payload(result, self.db)
        payload = apply_guards(payload, scene, None, self.limits, self.ssm)
        return PipelineOutcome(payload, result, scene)

    def process(self, body: dict) -> PipelineOutcome:
        """Run one scene_query body; failures yield the fallback payload with reason ``error``."""
        try:
            if "descriptor" in body:
                descriptor = parse_descriptor(body["descriptor"])
            elif "stub" in body:
                descriptor = self.vlm.describe(str(body["stub"]))
            elif "image" in body:
                import base64

                descriptor = self.vlm.describe(base64.b64decode(body["image"]))
            else:
                raise DescriptorError("scene_query needs 'stub', 'descriptor' or 'image'")
            return self.run_descriptor(descriptor)
        except (DescriptorError, VLMUnavailable, ValueError, TypeError) as exc:
            return PipelineOutcome(fallback_payload("error"), None, None, f"{type(exc).__name__}: {exc}")


# ---------------------------------------------------------------- server

class _Handler(socketserver.BaseRequestHandler):
    server: "PipelineServer"

    def setup(self):
        self._seq = 0
        self._send_lock = threading.Lock()

    def _send(self, mtype: str, body: dict) -> None:
        with self._send_lock:
            self._seq += 1
            self.request.sendall(encode(WireMessage(mtype, self._seq, now_ms(), body)))

    def handle(self):
        decoder = FrameDecoder()
        sock = self.request
        sock.settimeout(0.2)
        while not self.server.stopping.is_set():
            try:
                chunk = sock.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            if not chunk:
                break
            for item in decoder.feed(chunk):
                try:
                    self._dispatch(item)
                except OSError:
                    return

    def _dispatch(self, item):
        if isinstance(item, ProtocolError):
            self.server.count("errors")
            self._send("error", {"error": str(item), "payload": fallback_payload("error").to_dict()})
            return
        msg = item
        if msg.type == "heartbeat":
            self._send("heartbeat", {"echo": msg.sequence})
            return
        if msg.type != "scene_query":
            self._send("error", {"error": f"unexpected message type {msg.type!r}", "query_sequence": msg.sequence})
            return
        threading.Thread(target=self._answer, args=(msg,), daemon=True).start()

    def _answer(self, msg: WireMessage) -> None:
        delay = self.server.latency_s
        injected = msg.body.get("inject_latency_s")
        if isinstance(injected, (int, float)) and not isinstance(injected, bool) and math.isfinite(injected):
            delay = max(delay, float(injected))
        if delay > 0:
            time.sleep(delay)
        outcome = self.server.pipeline.process(msg.body)
        self.server.count("queries")
        body = {"query_sequence": msg.sequence, "payload": outcome.payload.to_dict()}
        if outcome.result is not None and math.isfinite(outcome.result.distance):
            body["distance"] = outcome.result.distance
        try:
            if outcome.error:
                body["error"] = outcome.error
                self._send("error", body)
            else:
                self._send("payload_reply", body)
        except OSError:
            pass


class PipelineServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    """One handler thread per connection; the pipeline is shared read-only state."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], pipeline: Pipeline, latency_s: float = 0.0):
        super().__init__(address, _Handler)
        self.pipeline = pipeline
        self.latency_s = latency_s
        self.stopping = threading.Event()
        self.stats = {"queries": 0, "errors": 0}
        self._stats_lock = threading.Lock()

    def count(self, key: str) -> None:
        with self._stats_lock:
            self.stats[key] += 1

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
        t.start()
        return t

    def stop(self) -> None:
        self.stopping.set()
        self.shutdown()
        self.server_close()


def server_loop(address: tuple[str, int], pipeline: Pipeline, latency_s: float = 0.0) -> None:
    """Serve until interrupted."""
    with PipelineServer(address, pipeline, latency_s) as srv:
        log.info("serving on %s:%d", *srv.server_address)
        try:
            srv.serve_forever(poll_interval=0.1)
        except KeyboardInterrupt:
            pass
        finally:
            srv.stopping.set()


# ---------------------------------------------------------------- client side

@dataclass(frozen=True)
class FreshnessPolicy:
    staleness_timeout: float = 3.0
    stream_rate: float = 1.0
    control_rate: float = 50.0
    heartbeat_interval: float = 1.0

    def __post_init__(self):
        if not 1.0 <= self.stream_rate <= 2.0:
            raise ValueError("stream_rate must lie in [1, 2] Hz")
        if self.staleness_timeout <= 1.4:
            raise ValueError("staleness_timeout must exceed the 1.4 s worst-case latency budget")

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate


@dataclass(frozen=True)
class Received:
    sequence: int
    payload: ImpedancePayload
    received_at: float


class PayloadSlot:
    """Single-writer freshest-payload holder.

    The writer replaces the whole ``Received`` tuple in one reference
    assignment, so readers never see a partial payload and never wait.
    """

    def __init__(self):
        self._latest: Received | None = None
        self._write_lock = threading.Lock()

    def offer(self, sequence: int, payload: ImpedancePayload, received_at: float) -> bool:
        with self._write_lock:
            cur = self._latest
            if cur is not None and sequence <= cur.sequence:
                return False
            self._latest = Received(sequence, payload, received_at)
            return True

    def latest(self) -> Received | None:
        return self._latest

    def clear(self) -> None:
        with self._write_lock:
            self._latest = None


class ClientState:
    """Onboard view: freshest payload plus the gain scheduler feeding the controller."""

    def __init__(self, policy: FreshnessPolicy | None = None, slew_duration: float = 0.3,
                 fallback: ImpedancePayload | None = None):
        self.policy = policy or FreshnessPolicy()
        self.fallback = fallback or fallback_payload()
        self.slot = PayloadSlot()
        self.scheduler = GainScheduler(self.fallback, slew_duration)

    def desired(self, now: float) -> ImpedancePayload:
        rec = self.slot.latest()
        if rec is None:
            return self.fallback
        if now - rec.received_at < self.policy.staleness_timeout:
            return rec.payload
        return self.fallback.with_reason("stale")


def client_tick(state: ClientState, now: float) -> ImpedancePayload:
    """Effective payload for this control tick; never blocks."""
    state.scheduler.set_target(state.desired(now))
    return state.scheduler.step(state.policy.dt)


class RemoteLink:
    """TCP connection to a pipeline server with a background receive thread.

    Replies are offered to ``slot`` stamped by ``clock()``; everything else is counted.
    """

    def __init__(self, host: str, port: int, slot: PayloadSlot, clock: Callable[[], float] = time.monotonic,
                 connect_timeout: float = 5.0):
        self.host, self.port = host, port
        self.slot = slot
        self.clock = clock
        self.connect_timeout = connect_timeout
        self._sock: socket.socket | None = None
        self._reader: threading.Thread | None = None
        self._seq = 0
        self._send_lock = threading.Lock()
        self.replies: list[WireMessage] = []
        self.errors: list[Any] = []

    @property
    def connected(self) -> bool:
        return self._sock is not None

    def connect(self) -> None:
        sock = socket.create_connection((self.host, self.port), timeout=self.connect_timeout)
        sock.settimeout(None)
        self._sock = sock
        self._reader = threading.Thread(target=self._read_loop, args=(sock,), daemon=True)
        self._reader.start()

    def close(self) -> None:
        sock, self._sock = self._sock, None
        if sock is not None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        if self._reader is not None:
            self._reader.join(timeout=2.0)
            self._reader = None

    def send(self, mtype: str, body: dict) -> int:
        with self._send_lock:
            if self._sock is None:
                raise ConnectionError("not connected")
            self._seq += 1
            self._sock.sendall(encode(WireMessage(mtype, self._seq, now_ms(), body)))
            return self._seq

    def send_raw(self, data: bytes) -> None:
        with self._send_lock:
            if self._sock is None:
                raise ConnectionError("not connected")
            self._sock.sendall(data)

    def query(self, body: dict) -> int:
        return self.send("scene_query", body)

    def _read_loop(self, sock: socket.socket) -> None:
        decoder = FrameDecoder()
        while True:
            try:
                chunk = sock.recv(65536)
            except OSError:
                return
            if not chunk:
                return
            for item in decoder.feed(chunk):
                if isinstance(item, ProtocolError):
                    self.errors.append(item)
                    continue
                self.replies.append(item)
                if item.type == "payload_reply":
                    try:
                        payload = ImpedancePayload.from_dict(item.body["payload"])
                    except (KeyError, ValueError, TypeError) as exc:
                        self.errors.append(exc)
                        continue
                    self.slot.offer(int(item.body.get("query_sequence", item.sequence)), payload, self.clock())
                elif item.type == "error":
                    self.errors.append(item)
                    # pipeline failures carry the server-side fallback profile
                    if "query_sequence" in item.body and "payload" in item.body:
                        try:
                            payload = ImpedancePayload.from_dict(item.body["payload"])
                        except (KeyError, ValueError, TypeError):
                            continue
                        self.slot.offer(int(item.body["query_sequence"]), payload, self.clock())
