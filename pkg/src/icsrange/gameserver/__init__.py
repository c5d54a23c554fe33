"""CTF game service: challenge pack, flag ledger, live sessions and HTTP API."""
from .pack import CATEGORIES, Challenge, PackError, load_pack, valid_flag
from .service import (CORRECT, DUPLICATE, LOCKED, WRONG, AuthError, Conflict, Forbidden,
                      GameError, GameServer, Invalid, LockoutPolicy, NotFound, SubmissionResult)
from .store import Store

__all__ = [
    "CATEGORIES", "CORRECT", "DUPLICATE", "LOCKED", "WRONG", "AuthError", "Challenge",
    "Conflict", "Forbidden", "GameError", "GameServer", "Invalid", "LockoutPolicy", "NotFound",
    "PackError", "Store", "SubmissionResult", "load_pack", "valid_flag",
]
