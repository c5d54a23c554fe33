import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icsrange.plcrt import PLC
from icsrange.simnet import (ACK, ARP_REP, BROADCAST, DATA, DELIVERED, DISPOSITIONS, DROP,
                             DROPPED_DOS, DROPPED_MITM, MODIFY, PASS, SYN, SYNACK,
                             UNROUTABLE, CaptureError, Frame, Hook, Network, Timeout,
                             Unresolvable, capture_digest, load_topology, read_capture,
                             tag_service, tagproto, write_capture)

HMI_MAC, PLC_MAC, ATT_MAC = "02:00:00:00:00:01", "02:00:00:00:00:02", "02:00:00:00:00:66"


def lab(seed=0, **kw):
    net = Network(seed=seed, **kw)
    net.add_link("L1")
    hmi = net.add_host("HMI", HMI_MAC, "10.0.1.10", "HMI", ["L1"])
    plc = net.add_host("PLC3", PLC_MAC, "10.0.1.3", "PLC", ["L1"])
    att = net.add_host("ATT", ATT_MAC, "10.0.1.66", "ATTACKER", ["L1"])
    dev = PLC("PLC3")
    dev.define("HB", 2)
    dev.define("README:2", "CTF{readme}", writable=False)
    plc.service = tag_service(dev)
    return net, hmi, plc, att, dev


class TestRouting:
    def test_direct_delivery_and_tap(self):
        net, hmi, plc, att, dev = lab()
        tapped = []
        net.add_tap("L1", tapped.append)
        conn = net.open_flow(hmi, plc.ip)
        resp = net.tag_request(hmi, conn, tagproto.READ, "HB")
        assert resp.status == tagproto.ST_OK and tagproto.decode_value(resp.value) == 2
        assert len(tapped) == len(net.capture)
        assert all(f.disposition in DISPOSITIONS for f in net.capture)

    def test_unknown_segment(self):
        net, hmi, *_ = lab()
        net.send(Frame(0.0, "L9", HMI_MAC, PLC_MAC, hmi.ip, "10.0.1.3", DATA))
        net.run_until(1.0)
        assert net.capture[-1].disposition == UNROUTABLE
        assert net.routing_faults and "L9" in net.routing_faults[0][1]

    def test_poisoned_entry_routes_to_attacker(self):
        net, hmi, plc, att, dev = lab()
        conn = net.open_flow(hmi, plc.ip)
        net.forge_arp(att, hmi.ip, plc, "L1")
        net.run_until(net.now + 0.01)
        assert plc.resolve(hmi.ip) == ATT_MAC
        seen = []
        att.sniffer = seen.append
        n = len(net.capture)
        for v in range(20):
            net.send_payload(hmi, conn, tagproto.encode_request(tagproto.READ, "HB"))
            net.run_until(net.now + 0.01)
        replies = [f for f in net.capture[n:] if f.kind == DATA and f.dst_ip == hmi.ip]
        assert len(replies) == 20 and all(f.dst_mac == ATT_MAC for f in replies)
        assert len([f for f in seen if f.kind == DATA]) == 20
        assert conn.inbox == []
        # re-learning from the real owner restores the binding
        net.announce(hmi)
        net.run_until(net.now + 0.01)
        assert plc.resolve(hmi.ip) == HMI_MAC

    def test_drop_hook(self):
        net, hmi, plc, att, dev = lab()
        conn = net.open_flow(hmi, plc.ip)
        between = lambda f: {f.src_ip, f.dst_ip} == {hmi.ip, plc.ip}  # noqa: E731
        net.add_hook(Hook("drop", "L1", between, lambda f: (DROP, f)))
        received = []
        plc.sniffer = received.append
        with pytest.raises(Timeout):
            net.tag_request(hmi, conn, tagproto.WRITE, "HB", 2)
        assert received == []
        assert net.capture[-1].disposition == DROPPED_MITM
        net.remove_hook("drop")
        assert net.tag_request(hmi, conn, tagproto.READ, "HB").status == tagproto.ST_OK

    def test_modify_hook_alters_client_view_only(self):
        net, hmi, plc, att, dev = lab()
        conn = net.open_flow(hmi, plc.ip)

        def flip(frame):
            msg = tagproto.decode_any(frame.payload)
            if isinstance(msg, tagproto.Response) and msg.value:
                forged = tagproto.encode_response(msg.op, msg.status,
                                                  tagproto.decode_value(msg.value) + 40)
                return MODIFY, frame.with_(payload=forged)
            return PASS, frame

        net.add_hook(Hook("flip", "L1", lambda f: f.kind == DATA and f.src_ip == plc.ip, flip))
        resp = net.tag_request(hmi, conn, tagproto.READ, "HB")
        assert tagproto.decode_value(resp.value) == 42
        assert dev.read_tag("HB") == 2

    def test_taps_are_passive(self):
        def run(with_tap):
            net, hmi, plc, *_ = lab(seed=5)
            if with_tap:
                net.add_tap("L1", lambda f: None)
            conn = net.open_flow(hmi, plc.ip)
            for v in range(5):
                net.tag_request(hmi, conn, tagproto.WRITE, "HB", v)
            return capture_digest(net.capture)
        assert run(True) == run(False)

    def test_unresolvable(self):
        net, hmi, *_ = lab()
        with pytest.raises(Unresolvable):
            net.open_flow(hmi, "10.0.1.200")


class TestHandshake:
    def test_three_frames(self):
        net, hmi, plc, *_ = lab()
        net.resolve(hmi, plc.ip, "L1")
        n = len(net.capture)
        net.open_flow(hmi, plc.ip)
        kinds = [f.kind for f in net.capture[n:]]
        assert kinds == [SYN, SYNACK, ACK]
        syn, synack, ack = net.capture[n:]
        assert synack.ack == (syn.seq + 1) % (1 << 32)
        assert ack.seq == synack.ack and ack.ack == (synack.seq + 1) % (1 << 32)

    def test_seeded_isns(self):
        a = lab(seed=3)
        b = lab(seed=3)
        for net, hmi, plc, *_ in (a, b):
            net.open_flow(hmi, plc.ip)
        assert capture_digest(a[0].capture) == capture_digest(b[0].capture)

    def test_slot_exhaustion_and_expiry(self):
        net, hmi, plc, att, dev = lab(half_open_capacity=8, half_open_timeout=5.0)
        for _ in range(8):
            net.send_syn(att, plc.ip)
        net.run_until(net.now + 0.01)
        assert len(plc.half_open) == 8
        with pytest.raises(Timeout):
            net.open_flow(hmi, plc.ip)
        assert any(f.disposition == DROPPED_DOS for f in net.capture)
        net.run_until(net.now + 5.0)
        net.open_flow(hmi, plc.ip)

    def test_seq_increases_per_direction(self):
        net, hmi, plc, *_ = lab()
        conn = net.open_flow(hmi, plc.ip)
        for v in range(10):
            net.tag_request(hmi, conn, tagproto.WRITE, "HB", v)
        for src in (hmi.ip, plc.ip):
            seqs = [f.seq for f in net.capture if f.kind == DATA and f.src_ip == src]
            assert len(seqs) == 10
            assert all(b > a for a, b in zip(seqs, seqs[1:]))


class TestTagProtocol:
    def test_readme_and_read_only(self):
        net, hmi, plc, *_ = lab()
        conn = net.open_flow(hmi, plc.ip)
        resp = net.tag_request(hmi, conn, tagproto.READ, "README:2")
        assert tagproto.decode_value(resp.value) == "CTF{readme}"
        assert net.tag_request(hmi, conn, tagproto.WRITE, "README:2", "x").status == \
            tagproto.ST_READ_ONLY
        assert net.tag_request(hmi, conn, tagproto.READ, "NOPE").status == tagproto.ST_UNKNOWN_TAG

    def test_write_then_read(self):
        net, hmi, plc, *_ = lab()
        conn = net.open_flow(hmi, plc.ip)
        assert net.tag_request(hmi, conn, tagproto.WRITE, "HB", 3).status == tagproto.ST_OK
        assert tagproto.decode_value(net.tag_request(hmi, conn, tagproto.READ, "HB").value) == 3

    def test_malformed(self):
        net, hmi, plc, *_ = lab()
        conn = net.open_flow(hmi, plc.ip)
        raw = net.request(hmi, conn, b"\x01\x09AB")
        assert tagproto.decode_response(raw).status == tagproto.ST_MALFORMED

    def test_bit_exact_layout(self):
        assert tagproto.encode_request(tagproto.READ, "HB") == b"\x01\x02HB\x00\x00"
        raw = tagproto.encode_request(tagproto.WRITE, "HB", 3)
        req = tagproto.decode_request(raw)
        assert raw[:4] == b"\x02\x02HB" and req.name == "HB"
        assert int.from_bytes(raw[4:6], "big") == len(raw) - 6

    @given(name=st.text(min_size=1, max_size=40).filter(lambda s: len(s.encode()) < 256),
           value=st.integers(-2**31, 2**31 - 1) | st.from_regex(r"[A-Za-z_{}]{0,30}", fullmatch=True)
           | st.floats(allow_nan=False, allow_infinity=False))
    def test_request_round_trip(self, name, value):
        req = tagproto.decode_request(tagproto.encode_request(tagproto.WRITE, name, value))
        assert req.name == name and tagproto.decode_value(req.value) == value


frames = st.builds(
    Frame, ts=st.floats(0, 1e6, allow_nan=False), link=st.sampled_from(["L0-1", "L1"]),
    src_mac=st.just(HMI_MAC), dst_mac=st.sampled_from([PLC_MAC, BROADCAST]),
    src_ip=st.just("10.0.1.10"), dst_ip=st.just("10.0.1.3"),
    kind=st.sampled_from([ARP_REP, SYN, DATA]), seq=st.integers(0, 2**32 - 1),
    ack=st.integers(0, 2**32 - 1), payload=st.binary(max_size=32),
    disposition=st.sampled_from(DISPOSITIONS))


class TestCapture:
    def test_empty(self, tmp_path):
        write_capture([], tmp_path / "c.jsonl")
        assert (tmp_path / "c.jsonl").read_text() == ""
        assert read_capture(tmp_path / "c.jsonl") == []

    def test_handshake_round_trip(self, tmp_path):
        net, hmi, plc, *_ = lab()
        net.open_flow(hmi, plc.ip)
        write_capture(net.capture, tmp_path / "c.jsonl")
        assert read_capture(tmp_path / "c.jsonl") == net.capture

    @settings(max_examples=50, deadline=None)
    @given(log=st.lists(frames, max_size=30))
    def test_round_trip_property(self, tmp_path_factory, log):
        path = tmp_path_factory.mktemp("cap") / "c.jsonl"
        write_capture(log, path)
        assert read_capture(path) == log

    def test_large_log_hash(self, tmp_path):
        log = [Frame(i * 0.001, "L1", HMI_MAC, PLC_MAC, "10.0.1.10", "10.0.1.3", DATA,
                     i % (1 << 32), 0, i.to_bytes(4, "big"), DELIVERED) for i in range(100_000)]
        write_capture(log, tmp_path / "big.jsonl")
        again = read_capture(tmp_path / "big.jsonl")
        assert capture_digest(again) == capture_digest(log)

    def test_corrupt_line_position(self, tmp_path):
        path = tmp_path / "c.jsonl"
        good = Frame(0.0, "L1", HMI_MAC, PLC_MAC, "a", "b", DATA, disposition=DELIVERED)
        write_capture([good, good], path)
        lines = path.read_text().splitlines()
        path.write_text(lines[0] + "\n" + lines[1].replace('"kind"', '"kynd"') + "\n")
        with pytest.raises(CaptureError) as exc:
            read_capture(path)
        assert exc.value.line == 2

    def test_every_frame_has_terminal_disposition(self):
        net, hmi, plc, att, dev = lab()
        conn = net.open_flow(hmi, plc.ip)
        net.forge_arp(att, hmi.ip, None, "L1")
        for v in range(3):
            # replies now go to the attacker
            with pytest.raises(Timeout):
                net.tag_request(hmi, conn, tagproto.WRITE, "HB", v)
        net.run_until(net.now + 1)
        assert net.pending() == 0
        assert all(f.disposition in DISPOSITIONS for f in net.capture)


class TestTopology:
    def test_default_topology(self):
        topo = load_topology()
        rings = [lid for lid, kind in topo.links.items() if kind == "ring"]
        assert len(rings) == 6 and topo.links["L1"] == "star"
        net = topo.build(seed=1)
        assert set(net.links["L1"].hosts) >= {"PLC1", "PLC6", "HMI", "SCADA"}
        assert net.links["L0-3"].hosts == ["PLC3", "RIO3"]
        assert topo.in_ics("192.168.1.10") and not topo.in_ics("10.0.0.1")
