from .lang import (ControlProgram, InvariantRule, ParseError, Rung, format_program,
                   parse_program, parse_rules)
from .runtime import (PLC, Ack, Command, DeviceOffline, Historian, ScanResult, TagError,
                      TagRecord, format_tag_name, parse_tag_name, predict_levels,
                      residual_check)

__all__ = [
    "PLC", "Ack", "Command", "ControlProgram", "DeviceOffline", "Historian",
    "InvariantRule", "ParseError", "Rung", "ScanResult", "TagError", "TagRecord",
    "format_program", "format_tag_name", "parse_program", "parse_rules",
    "parse_tag_name", "predict_levels", "residual_check",
]
