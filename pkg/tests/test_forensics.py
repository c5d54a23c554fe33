import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from icsrange.forensics import (KINDS, NotFound, decrypt_flow, enumerate_hosts, find_flag,
                                find_poisoning_interval, generate, list_flows, printable_ratio,
                                rank_single_byte_keys, solve_composite, xor_bytes, xor_decrypt)
from icsrange.forensics import cli
from icsrange.forensics.generate import gen_arp_interval
from icsrange.simnet import (ARP_REP, BROADCAST, DATA, DELIVERED, Frame, read_capture,
                             write_capture)

SEEDS = range(100)


def resimulated_interval(frames, owners, victim_flow):
    """Replay ARP learning per host and collect victim-flow frames sent on a forged binding."""
    mac_of_ip = {ip: mac for ip, mac in owners.items()}
    tables = {mac: {} for mac in mac_of_ip.values()}
    poisoned = []
    for f in frames:
        if f.kind == ARP_REP and f.disposition == DELIVERED:
            receivers = [m for m in tables if m != f.src_mac] if f.dst_mac == BROADCAST \
                else [f.dst_mac]
            for m in receivers:
                if m in tables:
                    tables[m][f.src_ip] = f.src_mac
        elif f.kind == DATA and (f.src_ip, f.dst_ip) == tuple(victim_flow):
            believed = tables[f.src_mac].get(f.dst_ip)
            if believed is not None and believed != mac_of_ip[f.dst_ip]:
                assert f.dst_mac == believed
                poisoned.append(f.seq)
    return poisoned


class TestDuality:
    def test_hosts(self):
        for seed in SEEDS:
            ch = generate("hosts", seed)
            hosts = enumerate_hosts(ch.frames)
            assert [h.as_dict() for h in hosts] == ch.truth["hosts"], seed
            inside = sum(h.in_ics for h in hosts)
            assert ch.flag == f"CTF{{hosts_{inside}_in_{len(hosts) - inside}_out}}"

    def test_arp_interval(self):
        for seed in SEEDS:
            ch = generate("arp-interval", seed)
            found = find_poisoning_interval(ch.frames)
            assert found.flag == ch.flag, seed
            assert found.attacker_mac == ch.truth["attacker_mac"]
            seqs = resimulated_interval(ch.frames, ch.truth["owners"], ch.truth["victim_flow"])
            assert f"ascflag{{{seqs[0]}-{seqs[-1]}}}" == ch.flag, seed
            assert len(seqs) == ch.truth["relayed"]

    @pytest.mark.parametrize("kind", ["xor", "xor-brute"])
    def test_xor(self, kind):
        for seed in SEEDS:
            ch = generate(kind, seed)
            t = ch.truth
            if kind == "xor":
                decs = decrypt_flow(ch.frames, t["flow"], key_len=t["key_len"])
            else:
                decs = decrypt_flow(ch.frames, t["flow"], brute=True)
            flags = {find_flag(d.plaintext) for d in decs} - {None}
            assert flags == {ch.flag}, seed
            if kind == "xor":
                assert any(d.key.hex() == t["key"] for d in decs)

    def test_composite(self):
        for seed in SEEDS:
            ch = generate("composite", seed)
            assert solve_composite(ch.frames) == ch.flag, seed

    def test_generator_is_seeded(self):
        for kind in KINDS:
            a, b = generate(kind, 5), generate(kind, 5)
            assert a.frames == b.frames and a.flag == b.flag

    @pytest.mark.parametrize("gap", [True, False])
    def test_relearn_gap_both_ways(self, gap):
        for seed in range(10):
            ch = gen_arp_interval(seed, relearn_gap=gap)
            assert find_poisoning_interval(ch.frames).flag == ch.flag


class TestHosts:
    def test_sorted_numerically(self):
        frames = [Frame(0.0, "L1", "aa:00:00:00:00:0a", BROADCAST, ip, ip, ARP_REP)
                  for ip in ("192.168.1.10", "192.168.1.9", "8.8.8.8")]
        hosts = enumerate_hosts(frames)
        assert [h.ip for h in hosts] == ["8.8.8.8", "192.168.1.9", "192.168.1.10"]
        assert [h.in_ics for h in hosts] == [False, True, True]

    def test_spoofed_pair_visible(self):
        frames = [Frame(0.0, "L1", "aa:00:00:00:00:01", BROADCAST, "192.168.1.1", "192.168.1.1", ARP_REP),
                  Frame(1.0, "L1", "aa:00:00:00:00:66", BROADCAST, "192.168.1.1", "192.168.1.1", ARP_REP)]
        assert len(enumerate_hosts(frames)) == 2

    def test_no_poisoning(self):
        ch = generate("hosts", 1)
        with pytest.raises(NotFound):
            find_poisoning_interval(ch.frames)


class TestXor:
    @given(data=st.binary(max_size=200), key=st.binary(min_size=1, max_size=16))
    def test_involution(self, data, key):
        assert xor_bytes(xor_bytes(data, key), key) == data

    @given(data=st.binary(max_size=200), key=st.binary(min_size=1, max_size=16))
    def test_matches_reference(self, data, key):
        assert xor_bytes(data, key) == bytes(b ^ key[i % len(key)] for i, b in enumerate(data))

    @given(msg=st.text(alphabet=st.characters(min_codepoint=0x20, max_codepoint=0x7E),
                       min_size=1, max_size=80), key=st.binary(min_size=1, max_size=8))
    def test_key_prefix_mode(self, msg, key):
        plain = msg.encode()
        dec = xor_decrypt(key + xor_bytes(plain, key), key_len=len(key))
        assert dec.plaintext == plain and dec.key == key and dec.score == 1.0

    @given(cipher=st.binary(min_size=1, max_size=100))
    def test_ranking_matches_naive(self, cipher):
        naive = sorted(((sum(0x20 <= (b ^ k) <= 0x7E for b in cipher), k) for k in range(256)),
                       key=lambda t: (-t[0], t[1]))
        assert rank_single_byte_keys(cipher) == naive

    def test_errors(self):
        with pytest.raises(ValueError):
            xor_bytes(b"abc", b"")
        with pytest.raises(ValueError):
            xor_decrypt(b"")
        with pytest.raises(ValueError):
            xor_decrypt(b"abc", key_len=3)

    def test_printable_ratio(self):
        assert printable_ratio(b"") == 0.0
        assert printable_ratio(b"ab\x00\x01") == 0.5

    def test_find_flag(self):
        assert find_flag(b"xx CTF{abc_1} yy") == "CTF{abc_1}"
        assert find_flag(b"ascflag{12-34}") == "ascflag{12-34}"
        assert find_flag(b"CTF{bad-flag}") is None


class TestFlows:
    def test_numbering_and_selection(self):
        ch = generate("xor", 3)
        flows = list_flows(ch.frames)
        assert [f.id for f in flows] == [f"F{i}" for i in range(1, len(flows) + 1)]
        target = next(f for f in flows if f.id == ch.truth["flow"])
        by_name = decrypt_flow(ch.frames, f"{target.src_ip}->{target.dst_ip}",
                               key_len=ch.truth["key_len"])
        assert ch.flag in {find_flag(d.plaintext) for d in by_name}
        with pytest.raises(NotFound):
            decrypt_flow(ch.frames, "F999", key_len=1)


class TestCli:
    def write(self, tmp_path, kind, seed):
        ch = generate(kind, seed)
        path = tmp_path / f"{kind}.jsonl"
        write_capture(ch.frames, path)
        return ch, str(path)

    def test_hosts(self, tmp_path, capsys):
        ch, path = self.write(tmp_path, "hosts", 2)
        assert cli.main(["hosts", path]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert [ln.split("\t")[0] for ln in lines] == [h["ip"] for h in ch.truth["hosts"]]

    def test_arp_interval(self, tmp_path, capsys):
        ch, path = self.write(tmp_path, "arp-interval", 2)
        assert cli.main(["arp-interval", path]) == 0
        assert capsys.readouterr().out.strip() == ch.flag
        _, clean = self.write(tmp_path, "hosts", 2)
        assert cli.main(["arp-interval", clean]) == 1
        assert capsys.readouterr().out.strip() == "not-found"

    def test_xor(self, tmp_path, capsys):
        ch, path = self.write(tmp_path, "xor", 2)
        assert cli.main(["xor", path, "--flow", ch.truth["flow"],
                         "--key-len", str(ch.truth["key_len"])]) == 0
        assert capsys.readouterr().out.strip() == ch.flag
        ch, path = self.write(tmp_path, "xor-brute", 2)
        assert cli.main(["xor", path, "--flow", ch.truth["flow"], "--brute"]) == 0
        assert capsys.readouterr().out.strip() == ch.flag

    def test_flows(self, tmp_path, capsys):
        ch, path = self.write(tmp_path, "xor", 4)
        assert cli.main(["flows", path]) == 0
        assert capsys.readouterr().out.startswith("F1\t")

    def test_generate(self, tmp_path, capsys):
        out = tmp_path / "g.jsonl"
        assert cli.main(["generate", "composite", "--seed", "8", "--out", str(out), "--truth"]) == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["flag"] == generate("composite", 8).flag
        assert solve_composite(read_capture(out)) == rec["flag"]

    def test_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json}\n")
        assert cli.main(["hosts", str(bad)]) == 2
        assert "line 1" in capsys.readouterr().err
        _, path = self.write(tmp_path, "xor", 1)
        assert cli.main(["xor", path, "--flow", "F1"]) == 2
        assert cli.main(["hosts", str(tmp_path / "missing.jsonl")]) == 2


def test_pack_captures_solve_to_pack_flags():
    from icsrange.gameserver import load_pack
    for c in load_pack():
        if c.category == "FORENSICS":
            assert generate(c.capture["kind"], c.capture["seed"]).flag == c.flag, c.id
