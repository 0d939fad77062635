from __future__ import annotations

import socket
import struct
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gainrag.comms import (
    HEADER, MAX_FRAME, ClientState, FrameDecoder, FramingError, FreshnessPolicy, ParseError, PayloadSlot,
    PipelineServer, RemoteLink, WireMessage, client_tick, decode, encode,
)
from gainrag.impedance import ImpedancePayload, fallback_payload


def wait_for(pred, timeout=5.0):
    end = time.monotonic() + timeout
    while time.monotonic() < end:
        if pred():
            return True
        time.sleep(0.01)
    return False


json_scalar = st.one_of(st.none(), st.booleans(), st.integers(-2**53, 2**53),
                        st.floats(allow_nan=False, allow_infinity=False), st.text(max_size=20))
json_value = st.recursive(json_scalar, lambda c: st.one_of(st.lists(c, max_size=4),
                                                           st.dictionaries(st.text(max_size=8), c, max_size=4)),
                          max_leaves=12)
messages = st.builds(WireMessage, st.sampled_from(["scene_query", "payload_reply", "heartbeat", "error"]),
                     st.integers(0, 2**40), st.integers(0, 2**45),
                     st.dictionaries(st.text(max_size=10), json_value, max_size=5))


@settings(max_examples=300, deadline=None)
@given(messages)
def test_round_trip(msg):
    assert decode(encode(msg)) == msg


def test_payload_reply_bit_exact():
    rng = np.random.default_rng(0)
    kp = rng.uniform(10, 60, 14)
    kd = rng.uniform(0.1, 2, 14)
    p = ImpedancePayload(kp, kd, "mid", "s", "ok")
    msg = WireMessage("payload_reply", 3, 1, {"query_sequence": 2, "payload": p.to_dict()})
    back = decode(encode(msg))
    values = back.body["payload"]["values"]
    assert len(values) == 29 and all(isinstance(v, float) for v in values)
    assert [struct.pack(">d", v) for v in values] == [struct.pack(">d", v) for v in p.to_vector()]
    assert ImpedancePayload.from_dict(back.body["payload"]) == p


@pytest.mark.parametrize("data", [b"", b"\x00\x00", HEADER.pack(0), HEADER.pack(10) + b"abc",
                                  HEADER.pack(MAX_FRAME + 1) + b"x", HEADER.pack(2) + b"{}x"])
def test_framing_errors(data):
    with pytest.raises(FramingError):
        decode(data)


@pytest.mark.parametrize("body", [b"not json", b"[1]", b'{"type":"x","sequence":1,"timestamp":1,"body":{}}',
                                  b'{"type":"heartbeat","sequence":"1","timestamp":1,"body":{}}',
                                  b'{"type":"heartbeat","sequence":1,"timestamp":1}', b"\xff\xfe"])
def test_parse_errors(body):
    with pytest.raises(ParseError):
        decode(HEADER.pack(len(body)) + body)


def test_encode_rejects_nan():
    with pytest.raises(ValueError):
        encode(WireMessage("heartbeat", 1, 1, {"x": float("nan")}))


def test_stream_decoder_recovers():
    good = encode(WireMessage("heartbeat", 1, 0, {}))
    junk = HEADER.pack(5) + b"nojso"
    big = HEADER.pack(MAX_FRAME + 10) + b"\x00" * (MAX_FRAME + 10)
    stream = good + HEADER.pack(0) + junk + big + good
    dec = FrameDecoder()
    items = []
    for i in range(0, len(stream), 7919):
        items += dec.feed(stream[i:i + 7919])
    kinds = [type(x).__name__ for x in items]
    assert kinds == ["WireMessage", "FramingError", "ParseError", "FramingError", "WireMessage"]


def test_freshness_policy_bounds():
    with pytest.raises(ValueError):
        FreshnessPolicy(stream_rate=3.0)
    with pytest.raises(ValueError):
        FreshnessPolicy(staleness_timeout=1.0)


def test_slot_discards_older():
    slot = PayloadSlot()
    a, b = fallback_payload(), fallback_payload("tie")
    assert slot.offer(5, a, 0.0)
    assert not slot.offer(4, b, 1.0)
    assert not slot.offer(5, b, 1.0)
    assert slot.latest().payload == a


def _ok(kp=50.0):
    return ImpedancePayload((kp,) * 14, (0.5,) * 14, "normal", "x", "ok")


def test_client_tick_fresh_and_stale():
    st_ = ClientState(FreshnessPolicy(3.0), slew_duration=0.3)
    st_.slot.offer(1, _ok(), 0.0)
    for k in range(25):
        out = client_tick(st_, k * 0.02)
    assert out == _ok()
    # age 0.5 s: still the received payload
    assert client_tick(st_, 0.5) == _ok()
    # age 3.5 s: fallback slewing in
    first = client_tick(st_, 3.5)
    assert first.reason == "ok" and 10.0 < first.kp[0] < 50.0
    for k in range(1, 16):
        out = client_tick(st_, 3.5 + 0.02 * k)
    assert out.kp == (10.0,) * 14 and out.reason == "stale"
    # reconnect: slew back to the retrieved payload
    st_.slot.offer(2, _ok(), 4.0)
    outs = [client_tick(st_, 4.0 + 0.02 * k) for k in range(16)]
    assert outs[0].kp[0] > 10.0 and outs[-1] == _ok()


@pytest.fixture
def server(pipeline):
    srv = PipelineServer(("127.0.0.1", 0), pipeline)
    srv.start()
    yield srv
    srv.stop()


def test_server_answers_query(server, db):
    slot = PayloadSlot()
    link = RemoteLink("127.0.0.1", server.port, slot)
    link.connect()
    try:
        seq = link.query({"stub": "wipe_no_human"})
        assert wait_for(lambda: slot.latest() is not None)
        got = slot.latest()
        assert got.sequence == seq
        assert got.payload.scenario_id == "g1_11_wipe_surface" and got.payload.reason == "ok"
        reply = next(m for m in link.replies if m.type == "payload_reply")
        assert reply.body["query_sequence"] == seq and len(reply.body["payload"]["values"]) == 29
    finally:
        link.close()


def test_one_reply_per_query_in_order(server):
    slot = PayloadSlot()
    link = RemoteLink("127.0.0.1", server.port, slot)
    link.connect()
    try:
        seqs = [link.query({"stub": s}) for s in ("wipe_no_human", "cube_no_human", "pin_with_hand")]
        assert wait_for(lambda: len([m for m in link.replies if m.type == "payload_reply"]) == 3)
        time.sleep(0.1)
        replies = [m for m in link.replies if m.type == "payload_reply"]
        assert sorted(m.body["query_sequence"] for m in replies) == seqs
        out_seq = [m.sequence for m in replies]
        assert out_seq == sorted(out_seq) and len(set(out_seq)) == 3
        assert slot.latest().sequence == seqs[-1]
    finally:
        link.close()


def test_malformed_frames_keep_connection(server):
    slot = PayloadSlot()
    link = RemoteLink("127.0.0.1", server.port, slot)
    link.connect()
    try:
        link.send_raw(HEADER.pack(4) + b"oops")
        link.send_raw(HEADER.pack(0))
        link.query({"nothing": 1})
        link.query({"stub": "no_such_scene"})
        seq = link.query({"stub": "cube_with_hand"})
        assert wait_for(lambda: slot.latest() is not None and slot.latest().sequence == seq)
        errors = [m for m in link.replies if m.type == "error"]
        assert len(errors) == 4
        for e in errors:
            assert ImpedancePayload.from_dict(e.body["payload"]).kp == (10.0,) * 14
        assert slot.latest().payload.reason == "ok"
        assert server.stats["errors"] == 2
    finally:
        link.close()


def test_heartbeat_echo(server):
    link = RemoteLink("127.0.0.1", server.port, PayloadSlot())
    link.connect()
    try:
        seq = link.send("heartbeat", {})
        assert wait_for(lambda: any(m.type == "heartbeat" for m in link.replies))
        hb = next(m for m in link.replies if m.type == "heartbeat")
        assert hb.body == {"echo": seq}
    finally:
        link.close()


def test_injected_latency_does_not_block_other_queries(server):
    slot = PayloadSlot()
    link = RemoteLink("127.0.0.1", server.port, slot)
    link.connect()
    try:
        t0 = time.monotonic()
        slow = link.query({"stub": "wipe_with_hand", "inject_latency_s": 1.4})
        fast = link.query({"stub": "wipe_no_human"})
        assert wait_for(lambda: slot.latest() is not None and slot.latest().sequence == fast, 1.0)
        assert time.monotonic() - t0 < 1.0
        # the late reply is older than what is applied and gets discarded
        assert wait_for(lambda: any(m.body.get("query_sequence") == slow for m in link.replies), 3.0)
        assert time.monotonic() - t0 >= 1.4
        assert slot.latest().sequence == fast
    finally:
        link.close()


def test_client_keeps_previous_payload_during_delay(server):
    slot = PayloadSlot()
    link = RemoteLink("127.0.0.1", server.port, slot, clock=time.monotonic)
    link.connect()
    state = ClientState()
    state.slot = slot
    try:
        link.query({"stub": "wipe_no_human"})
        assert wait_for(lambda: slot.latest() is not None)
        link.query({"stub": "wipe_with_hand", "inject_latency_s": 1.4})
        t_end = time.monotonic() + 1.0
        while time.monotonic() < t_end:
            out = client_tick(state, time.monotonic())
            time.sleep(0.02)
        assert out.scenario_id == "g1_11_wipe_surface"
        assert wait_for(lambda: slot.latest().payload.scenario_id == "g1_12_wipe_near_hand", 2.0)
    finally:
        link.close()


def test_server_survives_abrupt_disconnect(server):
    s = socket.create_connection(("127.0.0.1", server.port))
    s.sendall(HEADER.pack(100) + b"partial")
    s.close()
    slot = PayloadSlot()
    link = RemoteLink("127.0.0.1", server.port, slot)
    link.connect()
    try:
        link.query({"stub": "wipe_no_human"})
        assert wait_for(lambda: slot.latest() is not None)
    finally:
        link.close()
