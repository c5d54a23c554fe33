"""Capture-analysis challenges: solvers and seeded generators."""
from .analysis import (HostEntry, NotFound, PoisonInterval, decrypt_flow, enumerate_hosts,
                       find_flag, find_poisoning_interval, list_flows, printable_ratio,
                       rank_single_byte_keys, solve_composite, xor_bytes, xor_decrypt)
from .generate import KINDS, Challenge, generate

__all__ = [
    "KINDS", "Challenge", "HostEntry", "NotFound", "PoisonInterval", "decrypt_flow",
    "enumerate_hosts", "find_flag", "find_poisoning_interval", "generate", "list_flows",
    "printable_ratio", "rank_single_byte_keys", "solve_composite", "xor_bytes", "xor_decrypt",
]
