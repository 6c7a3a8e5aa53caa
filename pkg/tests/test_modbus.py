import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omni_ids import modbus
from omni_ids.modbus import DecodeError, MalformedFrameError


def crc16_bitwise(data: bytes) -> int:
    """Bit-serial CRC-16/MODBUS, written independently of the table version."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            lsb = crc & 1
            crc >>= 1
            if lsb:
                crc ^= 0xA001
    return crc


def test_crc_check_value():
    assert modbus.crc16(b"123456789") == 0x4B37


def test_crc_empty_is_init():
    assert modbus.crc16(b"") == 0xFFFF


@given(st.binary(max_size=300))
def test_crc_matches_bitwise(data):
    assert modbus.crc16(data) == crc16_bitwise(data)


@given(st.binary(max_size=200))
def test_crc_residue_zero(data):
    # appending the CRC low byte first leaves a zero remainder
    crc = modbus.crc16(data)
    assert modbus.crc16(data + crc.to_bytes(2, "little")) == 0


def test_read_request_bytes():
    raw = modbus.encode(modbus.request_read(1, 42210, 1))
    body = bytes.fromhex("0001 0000 0006 01 03 A4E2 0001".replace(" ", ""))
    assert raw[:-2] == body
    assert raw[-2:] == crc16_bitwise(body).to_bytes(2, "big")


def test_write_request_bytes():
    raw = modbus.encode(modbus.request_write(0x1234, 32210, [7, 0xBEEF]))
    body = bytes.fromhex("1234 0000 000B 01 10 7DD2 0002 04 0007 BEEF".replace(" ", ""))
    assert raw[:-2] == body


def test_read_response_has_no_reference_on_wire():
    raw = modbus.encode(modbus.response_read(5, [300]))
    assert raw[7:-2] == bytes([3, 2]) + struct.pack(">H", 300)


def test_exception_bytes():
    raw = modbus.encode(modbus.exception_response(9, 16, 2))
    assert raw[7:-2] == bytes([0x90, 0x02])


def test_length_field():
    f = modbus.request_write(1, 42212, [1, 2, 3])
    raw = modbus.encode(f)
    assert struct.unpack(">H", raw[4:6])[0] == f.length == len(raw) - 6 - 2


u16 = st.integers(0, 0xFFFF)
u8 = st.integers(0, 0xFF)


@st.composite
def frames(draw):
    tid = draw(u16)
    unit = draw(u8)
    kind = draw(st.sampled_from(["rreq", "rresp", "wreq", "wresp", "exc"]))
    if kind == "rreq":
        return modbus.request_read(tid, draw(u16), draw(st.integers(1, 125)), unit)
    if kind == "rresp":
        return modbus.response_read(tid, draw(st.lists(u16, min_size=1, max_size=125)), unit)
    if kind == "wreq":
        return modbus.request_write(tid, draw(u16), draw(st.lists(u16, min_size=1, max_size=123)), unit)
    if kind == "wresp":
        return modbus.response_write(tid, draw(u16), draw(st.integers(1, 123)), unit)
    return modbus.exception_response(tid, draw(st.sampled_from([3, 16])), draw(st.integers(1, 255)), unit)


@settings(max_examples=10_000, deadline=None)
@given(frames())
def test_roundtrip_10k(frame):
    raw = modbus.encode(frame)
    back = modbus.decode(raw)
    assert back == frame
    assert not back.checksum_mismatch
    assert modbus.encode(back) == raw


@settings(max_examples=500, deadline=None)
@given(frames(), st.data())
def test_truncation_raises_decode_error(frame, data):
    raw = modbus.encode(frame)
    cut = data.draw(st.integers(0, len(raw) - 1))
    with pytest.raises(DecodeError):
        modbus.decode(raw[:cut])


@settings(max_examples=2000, deadline=None)
@given(st.binary(max_size=64))
def test_random_bytes_never_crash(raw):
    try:
        frame = modbus.decode(raw)
    except DecodeError:
        return
    modbus.validate(frame)


@settings(max_examples=300, deadline=None)
@given(frames(), st.integers(1, 0xFFFE))
def test_corrupt_checksum_flagged(frame, delta):
    raw = modbus.corrupt_checksum(modbus.encode(frame), delta)
    back = modbus.decode(raw)
    assert back.checksum_mismatch
    assert back == frame  # fields untouched


def test_extra_bytes_rejected():
    raw = modbus.encode(modbus.request_read(1, 0, 1))
    with pytest.raises(DecodeError, match="length mismatch"):
        modbus.decode(raw + b"\x00")


def test_protocol_id_rejected():
    raw = bytearray(modbus.encode(modbus.request_read(1, 0, 1)))
    raw[3] = 1
    with pytest.raises(DecodeError):
        modbus.decode(bytes(raw))


def test_unsupported_function_rejected():
    body = struct.pack(">HHHB", 1, 0, 6, 1) + bytes([4, 0, 0, 0, 1])
    raw = body + modbus.crc16(body).to_bytes(2, "big")
    with pytest.raises(DecodeError, match="unsupported"):
        modbus.decode(raw)


@pytest.mark.parametrize("frame", [
    modbus.ModbusFrame(1, 3, 0, 0),                       # zero-count read
    modbus.ModbusFrame(1, 3, 0, 126),                     # read too large
    modbus.ModbusFrame(1, 16, 0, 2, (1,)),                # count != len(data)
    modbus.ModbusFrame(1, 16, 0, 124, tuple(range(124))),
    modbus.ModbusFrame(1, 5, 0, 1),                       # unsupported function
    modbus.ModbusFrame(70000, 3, 0, 1),                   # tid not u16
    modbus.ModbusFrame(1, 3, 0, 1, protocol_id=1),
    modbus.ModbusFrame(1, 3, 0, 1, (70000,)),
    modbus.ModbusFrame(1, 3, exception_code=2),           # exception without high bit
])
def test_malformed_frames_rejected(frame):
    with pytest.raises(MalformedFrameError):
        modbus.encode(frame)


def test_is_response():
    assert not modbus.request_read(1, 0).is_response
    assert modbus.response_read(1, [0]).is_response
    assert not modbus.request_write(1, 0, [1]).is_response
    assert modbus.response_write(1, 0, 1).is_response
    assert modbus.exception_response(1, 3, 2).is_response
