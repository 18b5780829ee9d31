"""Controller state and its bounded binary parameter store (24C08 EEPROM twin).

Image layout, all little-endian::

    u16  format version
    8 x u8   gain codes
    u8   mode
    3 x 4 bytes   ip, mask, gateway
    u16  gain-table entry count
    n x (u16 code, f64 multiplier)
    u32  CRC-32 of everything above

The whole image must fit in 1024 bytes.
"""

from __future__ import annotations

import enum
import ipaddress
import math
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .protocol import GAIN_CODES, N_CHANNELS

EEPROM_BYTES = 1024  # 8 Kbit
STORE_VERSION = 1

DEFAULT_GAIN_TABLE = {0: 1.0, 1: 2.0, 2: 4.0, 3: 5.0, 4: 8.0, 5: 10.0, 6: 16.0, 7: 20.0}

_HEAD = struct.Struct("<H8BB4s4s4sH")
_ENTRY = struct.Struct("<Hd")
_CRC = struct.Struct("<I")


class StoreError(Exception):
    pass


class StoreOverflowError(StoreError):
    """Serialized state does not fit in the EEPROM."""


class ControllerMode(enum.IntEnum):
    NORMAL = 0
    HOLD = 1
    STANDARD_SIGNAL_TEST = 2
    PULSE_SIGNAL_TEST = 3


@dataclass(frozen=True)
class NetSettings:
    ip: str = "127.0.0.1"
    mask: str = "255.0.0.0"
    gateway: str = "127.0.0.1"


@dataclass(frozen=True)
class ControllerState:
    gains: tuple[int, ...] = (0,) * N_CHANNELS
    mode: ControllerMode = ControllerMode.NORMAL
    net: NetSettings = NetSettings()
    gain_table: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_GAIN_TABLE))

    def __post_init__(self) -> None:
        gains = tuple(int(g) for g in self.gains)
        if len(gains) != N_CHANNELS or any(g not in GAIN_CODES for g in gains):
            raise ValueError(f"need {N_CHANNELS} gain codes in 0..7, got {self.gains}")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "mode", ControllerMode(self.mode))
        table = {int(k): float(v) for k, v in dict(self.gain_table).items()}
        for code, mult in table.items():
            if not 0 <= code <= 0xFFFF or not math.isfinite(mult):
                raise ValueError(f"bad gain table entry {code}: {mult}")
        object.__setattr__(self, "gain_table", MappingProxyType(table))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ControllerState):
            return NotImplemented
        return (
            self.gains == other.gains
            and self.mode == other.mode
            and self.net == other.net
            and dict(self.gain_table) == dict(other.gain_table)
        )

    __hash__ = None  # type: ignore[assignment]

    def multiplier(self, channel: int) -> float:
        return self.gain_table.get(self.gains[channel], 1.0)

    def evolve(self, **changes) -> ControllerState:
        return replace(self, **changes)


def serialize(state: ControllerState) -> bytes:
    table = sorted(state.gain_table.items())
    size = _HEAD.size + len(table) * _ENTRY.size + _CRC.size
    if size > EEPROM_BYTES:
        raise StoreOverflowError(f"state needs {size} bytes, EEPROM holds {EEPROM_BYTES}")
    net = state.net
    parts = [
        _HEAD.pack(
            STORE_VERSION,
            *state.gains,
            int(state.mode),
            ipaddress.IPv4Address(net.ip).packed,
            ipaddress.IPv4Address(net.mask).packed,
            ipaddress.IPv4Address(net.gateway).packed,
            len(table),
        )
    ]
    try:
        parts.extend(_ENTRY.pack(code, mult) for code, mult in table)
    except struct.error as exc:
        raise StoreError(f"gain table entry does not fit the store format: {exc}") from None
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def deserialize(image: bytes) -> ControllerState:
    if len(image) > EEPROM_BYTES:
        raise StoreOverflowError(f"image of {len(image)} bytes exceeds {EEPROM_BYTES}")
    if len(image) < _HEAD.size + _CRC.size:
        raise StoreError("parameter image truncated")
    body, (crc,) = image[: -_CRC.size], _CRC.unpack(image[-_CRC.size :])
    if zlib.crc32(body) != crc:
        raise StoreError("parameter image CRC mismatch")
    version, *rest = _HEAD.unpack_from(body)
    if version != STORE_VERSION:
        raise StoreError(f"unsupported store version {version}")
    gains, mode, ip, mask, gw, count = rest[:8], rest[8], rest[9], rest[10], rest[11], rest[12]
    if len(body) != _HEAD.size + count * _ENTRY.size:
        raise StoreError("gain table length does not match image size")
    table = dict(_ENTRY.iter_unpack(body[_HEAD.size :]))
    try:
        return ControllerState(
            gains=tuple(gains),
            mode=ControllerMode(mode),
            net=NetSettings(*(str(ipaddress.IPv4Address(a)) for a in (ip, mask, gw))),
            gain_table=table,
        )
    except ValueError as exc:
        raise StoreError(f"corrupt parameter image: {exc}") from None


class ParameterStore:
    """One binary file holding the serialized controller state."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)

    def save(self, state: ControllerState) -> None:
        image = serialize(state)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=self.path.name + ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(image)
            os.replace(tmp, self.path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise

    def load(self, default: ControllerState | None = None) -> ControllerState:
        try:
            image = self.path.read_bytes()
        except FileNotFoundError:
            return default if default is not None else ControllerState()
        return deserialize(image)

    def size(self) -> int:
        return self.path.stat().st_size


def store_roundtrip(state: ControllerState, store: ParameterStore) -> ControllerState:
    store.save(state)
    return store.load()
