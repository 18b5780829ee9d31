"""Network-facing twin of the integrator controller."""

from .protocol import (
    Command,
    ErrorCode,
    ProtocolError,
    Response,
    format_command,
    parse_command,
)
from .server import DEFAULT_PORT, ControllerServer
from .service import ChannelBank, Controller, execute
from .state import (
    EEPROM_BYTES,
    ControllerMode,
    ControllerState,
    NetSettings,
    ParameterStore,
    StoreError,
    StoreOverflowError,
    deserialize,
    serialize,
    store_roundtrip,
)

__all__ = [
    "ChannelBank",
    "Command",
    "Controller",
    "ControllerMode",
    "ControllerServer",
    "ControllerState",
    "DEFAULT_PORT",
    "EEPROM_BYTES",
    "ErrorCode",
    "NetSettings",
    "ParameterStore",
    "ProtocolError",
    "Response",
    "StoreError",
    "StoreOverflowError",
    "deserialize",
    "execute",
    "format_command",
    "parse_command",
    "serialize",
    "store_roundtrip",
]
