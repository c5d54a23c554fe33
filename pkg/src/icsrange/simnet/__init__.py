from . import tagproto
from .frames import (ACK, ARP_REP, ARP_REQ, BROADCAST, DATA, DELIVERED, DISPOSITIONS,
                     DROPPED_DOS, DROPPED_MITM, FIN, KINDS, SYN, SYNACK, UNROUTABLE,
                     CaptureError, Frame, capture_digest, read_capture, write_capture)
from .network import (DROP, MODIFY, PASS, Conn, Hook, Host, Link, Network, NetworkError,
                      Timeout, Unresolvable, tag_service)
from .topology import Topology, load_topology

__all__ = [
    "ACK", "ARP_REP", "ARP_REQ", "BROADCAST", "DATA", "DELIVERED", "DISPOSITIONS",
    "DROP", "DROPPED_DOS", "DROPPED_MITM", "FIN", "KINDS", "MODIFY", "PASS", "SYN",
    "SYNACK", "UNROUTABLE", "CaptureError", "Conn", "Frame", "Hook", "Host", "Link",
    "Network", "NetworkError", "Timeout", "Topology", "Unresolvable", "capture_digest",
    "load_topology", "read_capture", "tag_service", "tagproto", "write_capture",
]
