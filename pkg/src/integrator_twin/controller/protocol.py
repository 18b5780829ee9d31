"""Line protocol of the integrator controller.

Requests are newline-terminated, case-sensitive ASCII records::

    ALLd;d;d;d;d;d;d;d     set the gain code of all 8 channels
    READAll                read the gain codes back
    RCm;d                  set channel m (1-8) to gain code d
    INTEd                  set every channel to gain code d
    Initialization         reset accumulators, back to normal mode
    StandardSignal         integrate the +/-2.5 V, 10 ms bipolar pulse
    PulseSignal            integrate the single 2.5 V pulse (1 s by default)
    IntHold                hold the integration value
    NET a.b.c.d;a.b.c.d;a.b.c.d   store IP, mask and gateway
    QUIT                   close the session

Every request gets exactly one reply line: ``OK``, ``OK <payload>`` or
``ERR <code>``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

N_CHANNELS = 8
GAIN_CODES = range(8)
MAX_LINE = 4096

_QUAD = re.compile(r"(?:0|[1-9][0-9]{0,2})(?:\.(?:0|[1-9][0-9]{0,2})){3}")
_CODE = re.compile(r"[0-9]+")


class ErrorCode(enum.Enum):
    UNKNOWN = "unknown"
    ARITY = "arity"
    RANGE = "range"
    ADDR = "addr"
    BUSY = "busy"


class ProtocolError(Exception):
    def __init__(self, code: ErrorCode, detail: str = ""):
        super().__init__(f"{code.value}: {detail}" if detail else code.value)
        self.code = code
        self.detail = detail


@dataclass(frozen=True)
class SetAllGains:
    gains: tuple[int, ...]


@dataclass(frozen=True)
class ReadAll:
    pass


@dataclass(frozen=True)
class SetModuleGain:
    module: int  # 1-based
    gain: int


@dataclass(frozen=True)
class SetUniformGain:
    gain: int


@dataclass(frozen=True)
class Initialization:
    pass


@dataclass(frozen=True)
class StandardSignal:
    pass


@dataclass(frozen=True)
class PulseSignal:
    pass


@dataclass(frozen=True)
class IntHold:
    pass


@dataclass(frozen=True)
class NetConfig:
    ip: str
    mask: str
    gateway: str


@dataclass(frozen=True)
class Quit:
    pass


Command = (
    SetAllGains | ReadAll | SetModuleGain | SetUniformGain | Initialization
    | StandardSignal | PulseSignal | IntHold | NetConfig | Quit
)

_BARE = {
    "READAll": ReadAll,
    "Initialization": Initialization,
    "StandardSignal": StandardSignal,
    "PulseSignal": PulseSignal,
    "IntHold": IntHold,
    "QUIT": Quit,
}


@dataclass(frozen=True)
class Response:
    ok: bool
    payload: str | None = None
    error: ErrorCode | None = None

    @classmethod
    def success(cls, payload: str | None = None) -> Response:
        return cls(True, payload)

    @classmethod
    def failure(cls, code: ErrorCode) -> Response:
        return cls(False, None, code)

    def to_line(self) -> str:
        if self.ok:
            return "OK" if self.payload is None else f"OK {self.payload}"
        return f"ERR {self.error.value}"

    @classmethod
    def from_line(cls, line: str) -> Response:
        line = line.rstrip("\r\n")
        if line == "OK":
            return cls.success()
        if line.startswith("OK "):
            return cls.success(line[3:])
        if line.startswith("ERR "):
            return cls.failure(ErrorCode(line[4:]))
        raise ValueError(f"malformed response line {line!r}")


def _gain(token: str) -> int:
    if not _CODE.fullmatch(token) or len(token) > 3 or int(token) not in GAIN_CODES:
        raise ProtocolError(ErrorCode.RANGE, f"gain code {token!r} not in 0..7")
    return int(token)


def _address(token: str) -> str:
    if not _QUAD.fullmatch(token) or any(int(part) > 255 for part in token.split(".")):
        raise ProtocolError(ErrorCode.ADDR, f"bad dotted-quad address {token!r}")
    return token


def parse_command(line: str | bytes) -> Command:
    """Parse one request record; raises :class:`ProtocolError` on any bad input."""
    if isinstance(line, (bytes, bytearray)):
        try:
            line = bytes(line).decode("ascii")
        except UnicodeDecodeError:
            raise ProtocolError(ErrorCode.UNKNOWN, "non-ASCII bytes") from None
    if line.endswith("\n"):
        line = line[:-1]
    if line.endswith("\r"):
        line = line[:-1]
    if len(line) > MAX_LINE:
        raise ProtocolError(ErrorCode.UNKNOWN, "line too long")
    if not line.isascii():
        raise ProtocolError(ErrorCode.UNKNOWN, "non-ASCII characters")

    if line in _BARE:
        return _BARE[line]()
    for keyword in _BARE:
        if line.startswith(keyword):
            raise ProtocolError(ErrorCode.ARITY, f"{keyword} takes no arguments")

    if line.startswith("ALL"):
        tokens = line[3:].split(";")
        if len(tokens) != N_CHANNELS:
            raise ProtocolError(ErrorCode.ARITY, f"ALL needs {N_CHANNELS} gain codes, got {len(tokens)}")
        return SetAllGains(tuple(_gain(tok) for tok in tokens))

    if line.startswith("RC"):
        tokens = line[2:].split(";")
        if len(tokens) != 2:
            raise ProtocolError(ErrorCode.ARITY, "RC needs <module>;<gain>")
        module, gain = tokens
        if not _CODE.fullmatch(module) or len(module) > 2 or not 1 <= int(module) <= N_CHANNELS:
            raise ProtocolError(ErrorCode.RANGE, f"module {module!r} not in 1..{N_CHANNELS}")
        return SetModuleGain(int(module), _gain(gain))

    if line.startswith("INTE"):
        tokens = line[4:].split(";")
        if len(tokens) != 1:
            raise ProtocolError(ErrorCode.ARITY, "INTE takes one gain code")
        return SetUniformGain(_gain(tokens[0]))

    if line.startswith("NET"):
        rest = line[3:]
        if rest.startswith(" "):
            rest = rest[1:]
        tokens = rest.split(";")
        if len(tokens) != 3:
            raise ProtocolError(ErrorCode.ARITY, "NET needs ip;mask;gateway")
        return NetConfig(*(_address(tok) for tok in tokens))

    raise ProtocolError(ErrorCode.UNKNOWN, f"unknown instruction {line[:32]!r}")


def format_command(cmd: Command) -> str:
    """Wire form of a command; ``parse_command(format_command(c)) == c``."""
    match cmd:
        case SetAllGains(gains):
            return "ALL" + ";".join(str(g) for g in gains)
        case SetModuleGain(module, gain):
            return f"RC{module};{gain}"
        case SetUniformGain(gain):
            return f"INTE{gain}"
        case NetConfig(ip, mask, gateway):
            return f"NET {ip};{mask};{gateway}"
    for keyword, kind in _BARE.items():
        if isinstance(cmd, kind):
            return keyword
    raise TypeError(f"not a command: {cmd!r}")
