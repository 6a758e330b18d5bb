from random import Random

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ofkit import gatt
from ofkit.crypto import derive_subkey, unhex
from ofkit.gatt import (AuthFailure, CrcMismatch, Decision, FirmwareChunk, FirmwareInfo, GattCommand,
                        MalformedCommand, TranscriptEntry, auth_run, cmd_decode, cmd_encode, crc16, dump_transcript,
                        fw_chunk_decode, fw_chunk_encode, fw_info_decode, fw_info_encode, load_transcript,
                        owner_accept, remote_ring_detect, replay, tag_accept)

FW_FIXTURE = unhex("00A4BD0200E29307312E30322E30360A")


def sessions(seed=0):
    rng = Random(seed)
    ms = rng.randbytes(16)
    return auth_run(ms, ms, rng)


# --- authentication ----------------------------------------------------------

def test_auth_equal_secrets():
    rng = Random(1)
    for _ in range(100):
        ms = rng.randbytes(16)
        owner, tag = auth_run(ms, ms, rng)
        assert owner.gatt_key == tag.gatt_key == derive_subkey(ms, owner.nonce_tag)
        assert owner.auth_key == derive_subkey(ms, b"smartthings")


def test_auth_unequal_secrets():
    rng = Random(2)
    for _ in range(100):
        with pytest.raises(AuthFailure) as exc:
            auth_run(rng.randbytes(16), rng.randbytes(16), rng)
        assert exc.value.stage == "owner-proof"


def test_auth_message_flow():
    log = []
    owner, _ = auth_run(bytes(16), bytes(16), Random(0), log)
    assert [(m.direction, m.characteristic) for m in log] == [
        ("owner->tag", gatt.NONCE), ("tag->owner", gatt.NONCE),
        ("owner->tag", gatt.ENONCE), ("tag->owner", gatt.ENONCE)]
    assert log[0].value == owner.nonce_owner and log[1].value == owner.nonce_tag
    auth = derive_subkey(bytes(16), b"smartthings")
    assert log[2].value == oracles.cbc_encrypt(auth, owner.nonce_tag, b"smartthings")
    assert log[3].value == oracles.cbc_encrypt(auth, owner.nonce_owner, b"smartthings")
    assert len(log[2].value) == 16


# --- commands ----------------------------------------------------------------

def test_command_wire_form():
    assert GattCommand(1, 0x01, b"\xaa").to_bytes() == bytes.fromhex("01000000" "01" "aa")
    assert GattCommand.from_bytes(bytes.fromhex("0201000001")) == GattCommand(0x102, 1)
    with pytest.raises(MalformedCommand):
        GattCommand.from_bytes(bytes(4))


def test_command_encryption_and_counters():
    owner, tag = sessions()
    counters = []
    for _ in range(20):
        ct = cmd_encode(owner, gatt.ALARM_ON)
        assert ct == oracles.cbc_encrypt(owner.gatt_key, owner.nonce_tag,
                                         GattCommand(owner.sent_count, gatt.ALARM_ON).to_bytes())
        cmd = cmd_decode(tag, ct)
        counters.append(cmd.counter)
        assert tag_accept(tag, cmd, gatt.OWNER_ALARM) == Decision.EXECUTE
    assert counters == list(range(1, 21))


@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 255), st.binary(max_size=40))
def test_command_roundtrip(counter, opcode, args):
    cmd = GattCommand(counter, opcode, args)
    assert GattCommand.from_bytes(cmd.to_bytes()) == cmd


def test_owner_counter_rule():
    owner, _ = sessions()
    assert owner_accept(owner, GattCommand(3, 1)) == Decision.EXECUTE
    assert owner_accept(owner, GattCommand(3, 1)) == Decision.DISCARD
    assert owner_accept(owner, GattCommand(2, 1)) == Decision.DISCARD
    assert owner_accept(owner, GattCommand(4, 1)) == Decision.EXECUTE
    assert owner.max_counter_seen == 4


@given(st.lists(st.integers(0, 100), max_size=30))
def test_owner_max_counter_monotone(counters):
    owner, _ = sessions()
    prev = 0
    for c in counters:
        owner_accept(owner, GattCommand(c, 1))
        assert owner.max_counter_seen >= prev
        prev = owner.max_counter_seen


def test_tag_ignores_counter():
    _, tag = sessions()
    for c in (5, 5, 1, 0):
        assert tag_accept(tag, GattCommand(c, gatt.ALARM_OFF), gatt.OWNER_ALARM) == Decision.EXECUTE


@pytest.mark.parametrize("char,cmd", [
    (gatt.OWNER_ALARM, GattCommand(1, 0x07)),
    (gatt.OWNER_ALARM, GattCommand(1, gatt.ALARM_ON, b"\x00")),
    (gatt.FACTORY_RESET, GattCommand(1, 0x02)),
    (gatt.FIRMWARE, GattCommand(1, 0x05)),
    (gatt.FIRMWARE, GattCommand(1, gatt.FW_INFO, b"\x00")),
    ("dee300ff-182d-5496-b1ad-14f216324184", GattCommand(1, 1)),
])
def test_tag_rejects_malformed(char, cmd):
    _, tag = sessions()
    with pytest.raises(MalformedCommand):
        tag_accept(tag, cmd, char)


def test_tag_accepts_firmware_frames():
    _, tag = sessions()
    info = fw_info_encode(FirmwareInfo(179620, 37858, "1.02.06", 10))
    assert tag_accept(tag, GattCommand(1, info[0], info[1:]), gatt.FIRMWARE) == Decision.EXECUTE
    chunk = fw_chunk_encode(FirmwareChunk(0, b"abc"))
    assert tag_accept(tag, GattCommand(2, chunk[0], chunk[1:]), gatt.FIRMWARE) == Decision.EXECUTE


# --- replay ------------------------------------------------------------------

def _record(sender, opcode, char):
    ct = cmd_encode(sender, opcode)
    return TranscriptEntry("sender", char, ct)


def test_replay_asymmetry():
    owner, tag = sessions(3)
    to_tag = [_record(owner, gatt.ALARM_ON, gatt.OWNER_ALARM), _record(owner, gatt.ALARM_OFF, gatt.OWNER_ALARM)]
    first = replay(tag, to_tag)
    again = replay(tag, load_transcript(dump_transcript(to_tag)))
    assert first.executed == again.executed == 2

    to_owner = [_record(tag, gatt.BUTTON_PUSHED, gatt.REMOTE_RING)]
    assert replay(owner, to_owner).executed == 1
    assert replay(owner, to_owner).decisions == [Decision.DISCARD]


def test_transcript_json_roundtrip():
    e = TranscriptEntry("owner->tag", gatt.OWNER_ALARM, b"\x01\x02", b"\x03")
    assert load_transcript(dump_transcript([e, TranscriptEntry("tag->owner", gatt.REMOTE_RING, b"\x09")])) == [
        e, TranscriptEntry("tag->owner", gatt.REMOTE_RING, b"\x09")]
    assert set(e.to_json()) == {"direction", "characteristic", "ciphertext_hex", "plaintext_hex"}


# --- remote ring -------------------------------------------------------------

@pytest.mark.parametrize("seq,expected", [
    ([(4, 0x01), (5, 0x03)], True),
    ([(5, 0x01), (5, 0x03)], False),
    ([(4, 0x03)], False),
    ([(4, 0x03), (5, 0x01)], False),
    ([(9, 0x01), (3, 0x01), (5, 0x03)], True),
])
def test_remote_ring(seq, expected):
    assert remote_ring_detect([GattCommand(c, op) for c, op in seq]) is expected


# --- firmware frames ---------------------------------------------------------

def test_fw_info_fixture():
    assert fw_info_encode(FirmwareInfo(179620, 37858, "1.02.06", 10)) == FW_FIXTURE
    assert fw_info_decode(FW_FIXTURE) == FirmwareInfo(179620, 37858, "1.02.06", 10)


@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 0xFFFF), st.text(max_size=40), st.integers(0, 255))
def test_fw_info_roundtrip(size, crc, version, window):
    info = FirmwareInfo(size, crc, version, window)
    if len(version.encode()) > 255:
        return
    assert fw_info_decode(fw_info_encode(info)) == info


def test_fw_info_version_too_long():
    with pytest.raises(ValueError):
        fw_info_encode(FirmwareInfo(1, 1, "x" * 256, 1))


@given(st.integers(0, 2 ** 32 - 1), st.binary(max_size=300))
def test_fw_chunk_roundtrip(offset, data):
    frame = fw_chunk_encode(FirmwareChunk(offset, data))
    assert fw_chunk_decode(frame) == FirmwareChunk(offset, data)
    assert int.from_bytes(frame[-2:], "little") == oracles.crc16_ccitt_false(frame[1:-2])


def test_fw_chunk_crc_mismatch():
    frame = bytearray(fw_chunk_encode(FirmwareChunk(16, b"firmware")))
    frame[8] ^= 0xFF
    with pytest.raises(CrcMismatch):
        fw_chunk_decode(bytes(frame))
    with pytest.raises(MalformedCommand):
        fw_chunk_decode(bytes(frame[:-1]))


def test_crc16_check_value():
    assert crc16(b"123456789") == 0x29B1


def test_crc16_matches_oracle():
    rng = Random(8)
    for _ in range(1000):
        data = rng.randbytes(rng.randrange(64))
        assert crc16(data) == oracles.crc16_ccitt_false(data)
