"""``forensics`` command line over capture files."""
from __future__ import annotations

import argparse
import json
import sys

from ..simnet import CaptureError, read_capture, write_capture
from . import analysis
from .generate import KINDS, generate


def cmd_hosts(args) -> int:
    for h in analysis.enumerate_hosts(read_capture(args.capture), args.prefix):
        print(f"{h.ip}\t{h.mac}\t{'ics' if h.in_ics else 'external'}")
    return 0


def cmd_arp_interval(args) -> int:
    try:
        found = analysis.find_poisoning_interval(read_capture(args.capture))
    except analysis.NotFound:
        print("not-found")
        return 1
    print(found.flag)
    return 0


def cmd_flows(args) -> int:
    for fl in analysis.list_flows(read_capture(args.capture)):
        print(f"{fl.id}\t{fl.src_ip}->{fl.dst_ip}\t{len(fl.frames)}")
    return 0


def cmd_xor(args) -> int:
    frames = read_capture(args.capture)
    if not args.brute and args.key_len is None:
        print("error: give --key-len or --brute", file=sys.stderr)
        return 2
    results = analysis.decrypt_flow(frames, args.flow, args.key_len, args.brute)
    for dec in results:
        flag = analysis.find_flag(dec.plaintext)
        if flag:
            print(flag)
            return 0
    for dec in results:
        print(dec.plaintext.decode("latin-1"))
    return 1


def cmd_generate(args) -> int:
    ch = generate(args.kind, args.seed)
    if args.out:
        write_capture(ch.frames, args.out)
    print(json.dumps({"kind": ch.kind, "seed": ch.seed, "flag": ch.flag,
                      "frames": len(ch.frames), **({"truth": ch.truth} if args.truth else {})}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forensics", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("hosts", help="enumerate hosts and classify them")
    p.add_argument("capture")
    p.add_argument("--prefix", default=analysis.DEFAULT_ICS_PREFIX)
    p.set_defaults(func=cmd_hosts)
    p = sub.add_parser("arp-interval", help="locate the ARP poisoning episode")
    p.add_argument("capture")
    p.set_defaults(func=cmd_arp_interval)
    p = sub.add_parser("flows", help="list DATA flows")
    p.add_argument("capture")
    p.set_defaults(func=cmd_flows)
    p = sub.add_parser("xor", help="decrypt the payloads of one flow")
    p.add_argument("capture")
    p.add_argument("--flow", required=True, help="flow id (F1...) or src->dst")
    p.add_argument("--key-len", type=int, default=None)
    p.add_argument("--brute", action="store_true")
    p.set_defaults(func=cmd_xor)
    p = sub.add_parser("generate", help="generate a challenge capture")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--truth", action="store_true", help="also print the ground truth")
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CaptureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (analysis.NotFound, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
