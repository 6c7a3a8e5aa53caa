"""Modbus/TCP frame codec with a CRC-16/MODBUS trailer.

Wire layout::

    transaction_id:u16  protocol_id:u16  length:u16  unit_id:u8   (MBAP, big-endian)
    PDU
    checksum:u16 (big-endian, CRC-16/MODBUS over MBAP + PDU)

Supported PDUs:

* fc 3 request  -- fc, reference:u16, count:u16
* fc 3 response -- fc, byte_count:u8, count * u16   (no reference on the wire)
* fc 16 request -- fc, reference:u16, count:u16, byte_count:u8, count * u16
* fc 16 response-- fc, reference:u16, count:u16
* exception     -- fc | 0x80, exception_code:u8

Plain Modbus/TCP carries no CRC. The trailer exists so that frames with a
corrupted checksum are representable; :func:`decode` reports a mismatch
instead of rejecting the frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

READ_HOLDING_REGISTERS = 3
WRITE_MULTIPLE_REGISTERS = 16
EXCEPTION_BIT = 0x80
SUPPORTED_FUNCTIONS = (READ_HOLDING_REGISTERS, WRITE_MULTIPLE_REGISTERS)

MBAP_SIZE = 7
TRAILER_SIZE = 2
MAX_READ_COUNT = 125
MAX_WRITE_COUNT = 123

_MBAP = struct.Struct(">HHHB")
_REF_COUNT = struct.Struct(">HH")


class ModbusError(Exception):
    pass


class MalformedFrameError(ModbusError):
    """Frame fields violate the frame invariants; nothing was encoded."""


class DecodeError(ModbusError):
    """Byte sequence cannot be parsed as a frame."""


def _make_table() -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0xA001 if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _make_table()


def crc16(data: bytes) -> int:
    """CRC-16/MODBUS (reflected poly 0xA001, init 0xFFFF, no final xor)."""
    crc = 0xFFFF
    for byte in data:
        crc = (crc >> 8) ^ _CRC_TABLE[(crc ^ byte) & 0xFF]
    return crc


@dataclass(frozen=True)
class ModbusFrame:
    transaction_id: int
    function_code: int
    reference_number: int = 0
    register_count: int = 0
    data: tuple[int, ...] = ()
    exception_code: int | None = None
    unit_id: int = 1
    protocol_id: int = 0
    checksum_mismatch: bool = field(default=False, compare=False)

    @property
    def is_exception(self) -> bool:
        return self.exception_code is not None

    @property
    def base_function(self) -> int:
        return self.function_code & ~EXCEPTION_BIT

    @property
    def is_response(self) -> bool:
        if self.is_exception:
            return True
        if self.function_code == READ_HOLDING_REGISTERS:
            return bool(self.data)
        return not self.data

    @property
    def length(self) -> int:
        """Value of the MBAP length field: unit id + PDU bytes."""
        return 1 + len(_pdu(self))


def request_read(tid: int, ref: int, count: int = 1, unit_id: int = 1) -> ModbusFrame:
    return ModbusFrame(tid, READ_HOLDING_REGISTERS, ref, count, unit_id=unit_id)


def response_read(tid: int, values, unit_id: int = 1) -> ModbusFrame:
    values = tuple(int(v) for v in values)
    return ModbusFrame(tid, READ_HOLDING_REGISTERS, 0, len(values), values, unit_id=unit_id)


def request_write(tid: int, ref: int, values, unit_id: int = 1) -> ModbusFrame:
    values = tuple(int(v) for v in values)
    return ModbusFrame(tid, WRITE_MULTIPLE_REGISTERS, ref, len(values), values, unit_id=unit_id)


def response_write(tid: int, ref: int, count: int, unit_id: int = 1) -> ModbusFrame:
    return ModbusFrame(tid, WRITE_MULTIPLE_REGISTERS, ref, count, unit_id=unit_id)


def exception_response(tid: int, function_code: int, code: int, unit_id: int = 1) -> ModbusFrame:
    return ModbusFrame(tid, function_code | EXCEPTION_BIT, exception_code=code, unit_id=unit_id)


def _u16(name, value):
    if not isinstance(value, int) or not 0 <= value <= 0xFFFF:
        raise MalformedFrameError(f"{name}={value!r} is not a u16")


def validate(frame: ModbusFrame) -> None:
    """Raise :class:`MalformedFrameError` unless ``frame`` is encodable."""
    _u16("transaction_id", frame.transaction_id)
    _u16("reference_number", frame.reference_number)
    _u16("register_count", frame.register_count)
    if frame.protocol_id != 0:
        raise MalformedFrameError("protocol_id must be 0")
    if not 0 <= frame.unit_id <= 0xFF:
        raise MalformedFrameError(f"unit_id={frame.unit_id!r} is not a u8")
    for v in frame.data:
        _u16("data", v)

    if frame.exception_code is not None:
        if not frame.function_code & EXCEPTION_BIT:
            raise MalformedFrameError("exception frame needs the function high bit set")
        if frame.base_function not in SUPPORTED_FUNCTIONS:
            raise MalformedFrameError(f"unsupported function {frame.base_function}")
        if frame.data or frame.reference_number or frame.register_count:
            raise MalformedFrameError("exception frame carries no data")
        if not 1 <= frame.exception_code <= 0xFF:
            raise MalformedFrameError(f"exception_code={frame.exception_code!r}")
        return

    fc = frame.function_code
    if fc not in SUPPORTED_FUNCTIONS:
        raise MalformedFrameError(f"unsupported function code {fc}")
    n = len(frame.data)
    if fc == READ_HOLDING_REGISTERS:
        if n:
            if frame.reference_number != 0 or frame.register_count != n or n > MAX_READ_COUNT:
                raise MalformedFrameError("read response: reference 0, count == len(data) <= 125")
        elif not 1 <= frame.register_count <= MAX_READ_COUNT:
            raise MalformedFrameError("read request count must be in [1, 125]")
    else:
        if n:
            if frame.register_count != n or n > MAX_WRITE_COUNT:
                raise MalformedFrameError("write request: count == len(data) <= 123")
        elif not 1 <= frame.register_count <= MAX_WRITE_COUNT:
            raise MalformedFrameError("write response count must be in [1, 123]")


def _pdu(frame: ModbusFrame) -> bytes:
    if frame.exception_code is not None:
        return bytes((frame.function_code, frame.exception_code))
    fc = frame.function_code
    values = struct.pack(f">{len(frame.data)}H", *frame.data)
    if fc == READ_HOLDING_REGISTERS and frame.data:
        return bytes((fc, len(values))) + values
    head = bytes((fc,)) + _REF_COUNT.pack(frame.reference_number, frame.register_count)
    if fc == WRITE_MULTIPLE_REGISTERS and frame.data:
        return head + bytes((len(values),)) + values
    return head


def encode(frame: ModbusFrame) -> bytes:
    validate(frame)
    pdu = _pdu(frame)
    body = _MBAP.pack(frame.transaction_id, frame.protocol_id, 1 + len(pdu), frame.unit_id) + pdu
    return body + crc16(body).to_bytes(2, "big")


def corrupt_checksum(raw: bytes, delta: int = 1) -> bytes:
    """Return ``raw`` with its checksum trailer replaced by a wrong value."""
    if len(raw) < MBAP_SIZE + TRAILER_SIZE:
        raise DecodeError("frame too short to carry a trailer")
    good = int.from_bytes(raw[-2:], "big")
    bad = (good + (delta % 0xFFFF or 1)) & 0xFFFF
    return raw[:-2] + bad.to_bytes(2, "big")


def _registers(buf: bytes, n: int) -> tuple[int, ...]:
    return struct.unpack(f">{n}H", buf)


def decode(raw: bytes) -> ModbusFrame:
    """Parse one frame; the checksum is checked but a mismatch is only flagged."""
    raw = bytes(raw)
    if len(raw) < MBAP_SIZE:
        raise DecodeError(f"truncated MBAP header ({len(raw)} bytes)")
    tid, proto, length, unit = _MBAP.unpack_from(raw)
    if proto != 0:
        raise DecodeError(f"protocol_id {proto} != 0")
    if length < 2:
        raise DecodeError(f"length field {length} too small")
    total = MBAP_SIZE - 1 + length + TRAILER_SIZE
    if len(raw) < total:
        raise DecodeError(f"truncated frame: need {total} bytes, have {len(raw)}")
    if len(raw) > total:
        raise DecodeError(f"length mismatch: {len(raw) - total} bytes beyond declared frame")
    body = raw[:total - TRAILER_SIZE]
    pdu = body[MBAP_SIZE:]
    mismatch = crc16(body) != int.from_bytes(raw[total - TRAILER_SIZE:total], "big")

    fc = pdu[0]
    try:
        if fc & EXCEPTION_BIT:
            if len(pdu) != 2:
                raise DecodeError("exception PDU must be 2 bytes")
            frame = ModbusFrame(tid, fc, exception_code=pdu[1], unit_id=unit,
                                checksum_mismatch=mismatch)
        elif fc == READ_HOLDING_REGISTERS and len(pdu) == 5:
            ref, count = _REF_COUNT.unpack_from(pdu, 1)
            frame = ModbusFrame(tid, fc, ref, count, unit_id=unit, checksum_mismatch=mismatch)
        elif fc == READ_HOLDING_REGISTERS:
            nbytes = pdu[1] if len(pdu) > 1 else -1
            if nbytes != len(pdu) - 2 or nbytes % 2:
                raise DecodeError("read response byte count mismatch")
            values = _registers(pdu[2:], nbytes // 2)
            frame = ModbusFrame(tid, fc, 0, len(values), values, unit_id=unit,
                                checksum_mismatch=mismatch)
        elif fc == WRITE_MULTIPLE_REGISTERS and len(pdu) == 5:
            ref, count = _REF_COUNT.unpack_from(pdu, 1)
            frame = ModbusFrame(tid, fc, ref, count, unit_id=unit, checksum_mismatch=mismatch)
        elif fc == WRITE_MULTIPLE_REGISTERS:
            if len(pdu) < 6:
                raise DecodeError("write request PDU too short")
            ref, count = _REF_COUNT.unpack_from(pdu, 1)
            nbytes = pdu[5]
            if nbytes != len(pdu) - 6 or nbytes != 2 * count:
                raise DecodeError("write request byte count mismatch")
            frame = ModbusFrame(tid, fc, ref, count, _registers(pdu[6:], count), unit_id=unit,
                                checksum_mismatch=mismatch)
        else:
            raise DecodeError(f"unsupported function code {fc}")
        validate(frame)
    except MalformedFrameError as exc:
        raise DecodeError(str(exc)) from exc
    return frame
