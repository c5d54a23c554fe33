"""Link-layer frames and the line-delimited capture format."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Iterator

ARP_REQ, ARP_REP = "ARP_REQ", "ARP_REP"
SYN, SYNACK, ACK, DATA, FIN = "SYN", "SYNACK", "ACK", "DATA", "FIN"
KINDS = (ARP_REQ, ARP_REP, SYN, SYNACK, ACK, DATA, FIN)

DELIVERED = "DELIVERED"
DROPPED_MITM = "DROPPED_MITM"
DROPPED_DOS = "DROPPED_DOS"
UNROUTABLE = "UNROUTABLE"
DISPOSITIONS = (DELIVERED, DROPPED_MITM, DROPPED_DOS, UNROUTABLE)

BROADCAST = "ff:ff:ff:ff:ff:ff"
U32 = 1 << 32

CAPTURE_KEYS = ("ts", "link", "src_mac", "dst_mac", "src_ip", "dst_ip", "kind",
                "seq", "ack", "disposition", "payload_hex")


@dataclass(frozen=True)
class Frame:
    ts: float
    link: str
    src_mac: str
    dst_mac: str
    src_ip: str
    dst_ip: str
    kind: str
    seq: int = 0
    ack: int = 0
    payload: bytes = b""
    disposition: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown frame kind {self.kind!r}")
        if not (0 <= self.seq < U32 and 0 <= self.ack < U32):
            raise ValueError("seq/ack must be u32")

    def with_(self, **changes) -> "Frame":
        return replace(self, **changes)


class CaptureError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def frame_to_line(frame: Frame) -> str:
    rec = {
        "ts": frame.ts, "link": frame.link, "src_mac": frame.src_mac,
        "dst_mac": frame.dst_mac, "src_ip": frame.src_ip, "dst_ip": frame.dst_ip,
        "kind": frame.kind, "seq": frame.seq, "ack": frame.ack,
        "disposition": frame.disposition, "payload_hex": frame.payload.hex(),
    }
    return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))


def line_to_frame(line: str, lineno: int = 1) -> Frame:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CaptureError(f"not a JSON record ({exc.msg} at column {exc.colno})", lineno) from None
    if not isinstance(rec, dict):
        raise CaptureError("record is not an object", lineno)
    if tuple(rec.keys()) != CAPTURE_KEYS:
        raise CaptureError(f"expected keys {','.join(CAPTURE_KEYS)}", lineno)
    if rec["disposition"] not in DISPOSITIONS:
        raise CaptureError(f"bad disposition {rec['disposition']!r}", lineno)
    if not isinstance(rec["ts"], (int, float)) or isinstance(rec["ts"], bool):
        raise CaptureError("ts must be a number", lineno)
    for key in ("seq", "ack"):
        if not isinstance(rec[key], int) or isinstance(rec[key], bool):
            raise CaptureError(f"{key} must be an integer", lineno)
    try:
        payload = bytes.fromhex(rec.pop("payload_hex"))
        return Frame(payload=payload, **{k: v for k, v in rec.items()})
    except (ValueError, TypeError) as exc:
        raise CaptureError(str(exc), lineno) from None


def write_capture(log: Iterable[Frame], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame in log:
            fh.write(frame_to_line(frame))
            fh.write("\n")


def iter_capture(path: str | Path) -> Iterator[Frame]:
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                raise CaptureError("empty line", lineno)
            yield line_to_frame(line, lineno)


def read_capture(path: str | Path) -> list[Frame]:
    return list(iter_capture(path))


def capture_digest(log: Iterable[Frame]) -> str:
    h = hashlib.sha256()
    for frame in log:
        h.update(frame_to_line(frame).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


FRAME_FIELDS = tuple(f.name for f in fields(Frame))
