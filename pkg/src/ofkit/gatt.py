"""Owner <-> tag authenticated GATT session and the command vocabulary."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from random import Random
from typing import Iterable, Optional, Sequence

from .crypto import (LABEL_AUTH, PaddingError, aes_cbc_decrypt, aes_cbc_encrypt, derive_subkey,
                     require_len)

PROOF_PLAINTEXT = b"smartthings"

# Characteristic UUIDs of the SmartTag command service
OWNER_ALARM = "dee30001-182d-5496-b1ad-14f216324184"
REMOTE_RING = "dee30003-182d-5496-b1ad-14f216324184"
FACTORY_RESET = "dee30006-182d-5496-b1ad-14f216324184"
FIRMWARE = "dee3000c-182d-5496-b1ad-14f216324184"
NONCE = "nonce"
ENONCE = "enonce"

ALARM_OFF, ALARM_ON = 0x00, 0x01
BUTTON_PUSHED, BUTTON_HELD, BUTTON_PUSHED_2X = 0x01, 0x02, 0x03
FW_INFO, FW_DATA = 0x00, 0x01
RESET = 0x01

# CRC-16/CCITT-FALSE
CRC16_POLY = 0x1021
CRC16_INIT = 0xFFFF


class AuthFailure(Exception):
    def __init__(self, stage: str):
        super().__init__(f"authentication failed at {stage}")
        self.stage = stage


class MalformedCommand(ValueError):
    pass


class CrcMismatch(MalformedCommand):
    pass


class Role(str, enum.Enum):
    OWNER = "owner"
    TAG = "tag"


class Decision(str, enum.Enum):
    EXECUTE = "execute"
    DISCARD = "discard"


def crc16(data: bytes, crc: int = CRC16_INIT) -> int:
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ CRC16_POLY) if crc & 0x8000 else crc << 1
            crc &= 0xFFFF
    return crc


@dataclass
class AuthSession:
    role: Role
    nonce_owner: bytes
    nonce_tag: bytes
    auth_key: bytes
    gatt_key: bytes
    max_counter_seen: int = 0
    sent_count: int = 0


@dataclass
class AuthMessage:
    direction: str  # "owner->tag" or "tag->owner"
    characteristic: str
    value: bytes


def auth_run(owner_secret: bytes, tag_secret: bytes, rng: Random,
             log: Optional[list] = None) -> tuple[AuthSession, AuthSession]:
    """Four-step nonce challenge; each side proves knowledge of authKey.

    ``log`` (if given) collects the over-the-air messages.
    """
    owner_auth = derive_subkey(owner_secret, LABEL_AUTH)
    tag_auth = derive_subkey(tag_secret, LABEL_AUTH)
    sent = log if log is not None else []

    nonce_owner = rng.randbytes(16)
    sent.append(AuthMessage("owner->tag", NONCE, nonce_owner))
    nonce_tag = rng.randbytes(16)
    sent.append(AuthMessage("tag->owner", NONCE, nonce_tag))

    owner_proof = aes_cbc_encrypt(owner_auth, nonce_tag, PROOF_PLAINTEXT)
    sent.append(AuthMessage("owner->tag", ENONCE, owner_proof))
    if not _proof_ok(tag_auth, nonce_tag, owner_proof):
        raise AuthFailure("owner-proof")

    tag_proof = aes_cbc_encrypt(tag_auth, nonce_owner, PROOF_PLAINTEXT)
    sent.append(AuthMessage("tag->owner", ENONCE, tag_proof))
    if not _proof_ok(owner_auth, nonce_owner, tag_proof):
        raise AuthFailure("tag-proof")

    owner = AuthSession(Role.OWNER, nonce_owner, nonce_tag, owner_auth, derive_subkey(owner_secret, nonce_tag))
    tag = AuthSession(Role.TAG, nonce_owner, nonce_tag, tag_auth, derive_subkey(tag_secret, nonce_tag))
    return owner, tag


def _proof_ok(key: bytes, iv: bytes, proof: bytes) -> bool:
    try:
        return aes_cbc_decrypt(key, iv, proof) == PROOF_PLAINTEXT
    except PaddingError:
        return False


@dataclass(frozen=True)
class GattCommand:
    counter: int
    opcode: int
    args: bytes = b""

    def to_bytes(self) -> bytes:
        return self.counter.to_bytes(4, "little") + bytes([self.opcode]) + bytes(self.args)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "GattCommand":
        if len(raw) < 5:
            raise MalformedCommand(f"command frame is {len(raw)} bytes, need at least 5")
        return cls(int.from_bytes(raw[:4], "little"), raw[4], bytes(raw[5:]))


def cmd_encode(session: AuthSession, opcode: int, args: bytes = b"") -> bytes:
    session.sent_count += 1
    cmd = GattCommand(session.sent_count, opcode, args)
    return aes_cbc_encrypt(session.gatt_key, session.nonce_tag, cmd.to_bytes())


def cmd_decode(session: AuthSession, ciphertext: bytes) -> GattCommand:
    # the IV is nonce_tag for every message of the session
    return GattCommand.from_bytes(aes_cbc_decrypt(session.gatt_key, session.nonce_tag, ciphertext))


def owner_accept(session: AuthSession, cmd: GattCommand) -> Decision:
    if cmd.counter > session.max_counter_seen:
        session.max_counter_seen = cmd.counter
        return Decision.EXECUTE
    return Decision.DISCARD


def tag_accept(session: AuthSession, cmd: GattCommand, characteristic: str) -> Decision:
    """The tag checks opcode and argument shape only; the counter is ignored."""
    validate_command(characteristic, cmd)
    return Decision.EXECUTE


def validate_command(characteristic: str, cmd: GattCommand) -> None:
    char = characteristic.lower()
    if char == OWNER_ALARM:
        if cmd.opcode not in (ALARM_OFF, ALARM_ON) or cmd.args:
            raise MalformedCommand(f"bad alarm command {cmd.opcode:#04x} {cmd.args.hex()}")
    elif char == FACTORY_RESET:
        if cmd.opcode != RESET or cmd.args:
            raise MalformedCommand(f"bad reset command {cmd.opcode:#04x}")
    elif char == FIRMWARE:
        frame = bytes([cmd.opcode]) + cmd.args
        if cmd.opcode == FW_INFO:
            fw_info_decode(frame)
        elif cmd.opcode == FW_DATA:
            fw_chunk_decode(frame)
        else:
            raise MalformedCommand(f"unknown firmware opcode {cmd.opcode:#04x}")
    else:
        raise MalformedCommand(f"unsupported characteristic {characteristic}")


@dataclass(frozen=True)
class FirmwareInfo:
    total_size: int
    total_crc16: int
    version: str
    transfer_window: int


def fw_info_encode(info: FirmwareInfo) -> bytes:
    version = info.version.encode()
    if len(version) > 0xFF:
        raise ValueError("firmware version string longer than 255 bytes")
    return (bytes([FW_INFO]) + info.total_size.to_bytes(4, "little") + info.total_crc16.to_bytes(2, "little")
            + bytes([len(version)]) + version + bytes([info.transfer_window]))


def fw_info_decode(frame: bytes) -> FirmwareInfo:
    if len(frame) < 9 or frame[0] != FW_INFO:
        raise MalformedCommand("not a transferFirmwareInformation frame")
    n = frame[7]
    if len(frame) != 9 + n:
        raise MalformedCommand(f"frame length {len(frame)} inconsistent with version length {n}")
    return FirmwareInfo(
        total_size=int.from_bytes(frame[1:5], "little"),
        total_crc16=int.from_bytes(frame[5:7], "little"),
        version=frame[8:8 + n].decode(),
        transfer_window=frame[8 + n],
    )


@dataclass(frozen=True)
class FirmwareChunk:
    offset: int
    data: bytes


def fw_chunk_encode(chunk: FirmwareChunk) -> bytes:
    if len(chunk.data) > 0xFFFF:
        raise ValueError("firmware segment longer than 65535 bytes")
    args = chunk.offset.to_bytes(4, "little") + len(chunk.data).to_bytes(2, "little") + chunk.data
    return bytes([FW_DATA]) + args + crc16(args).to_bytes(2, "little")


def fw_chunk_decode(frame: bytes) -> FirmwareChunk:
    if len(frame) < 9 or frame[0] != FW_DATA:
        raise MalformedCommand("not a transferFirmwareData frame")
    n = int.from_bytes(frame[5:7], "little")
    if len(frame) != 9 + n:
        raise MalformedCommand(f"frame length {len(frame)} inconsistent with data length {n}")
    args = frame[1:7 + n]
    if crc16(args) != int.from_bytes(frame[7 + n:], "little"):
        raise CrcMismatch("argument CRC-16 mismatch")
    return FirmwareChunk(int.from_bytes(frame[1:5], "little"), bytes(frame[7:7 + n]))


def remote_ring_detect(indications: Sequence[GattCommand]) -> bool:
    """True if a pushed_2x indication follows a pushed one with a larger counter."""
    lowest_push: Optional[int] = None
    for ind in indications:
        if ind.opcode == BUTTON_PUSHED_2X and lowest_push is not None and ind.counter > lowest_push:
            return True
        if ind.opcode == BUTTON_PUSHED:
            lowest_push = ind.counter if lowest_push is None else min(lowest_push, ind.counter)
    return False


# --- transcripts -----------------------------------------------------------

@dataclass
class TranscriptEntry:
    direction: str
    characteristic: str
    ciphertext: bytes
    plaintext: Optional[bytes] = None

    def to_json(self) -> dict:
        d = {"direction": self.direction, "characteristic": self.characteristic,
             "ciphertext_hex": self.ciphertext.hex()}
        if self.plaintext is not None:
            d["plaintext_hex"] = self.plaintext.hex()
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TranscriptEntry":
        pt = obj.get("plaintext_hex")
        return cls(obj["direction"], obj["characteristic"], bytes.fromhex(obj["ciphertext_hex"]),
                   bytes.fromhex(pt) if pt is not None else None)


def dump_transcript(entries: Iterable[TranscriptEntry]) -> str:
    return "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in entries)


def load_transcript(text: str) -> list[TranscriptEntry]:
    return [TranscriptEntry.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


@dataclass
class ReplayOutcome:
    decisions: list = field(default_factory=list)

    @property
    def executed(self) -> int:
        return sum(d == Decision.EXECUTE for d in self.decisions)


def replay(session: AuthSession, entries: Iterable[TranscriptEntry]) -> ReplayOutcome:
    """Deliver recorded ciphertexts to ``session`` using its own validation rule."""
    out = ReplayOutcome()
    for e in entries:
        cmd = cmd_decode(session, e.ciphertext)
        if session.role == Role.TAG:
            out.decisions.append(tag_accept(session, cmd, e.characteristic))
        else:
            out.decisions.append(owner_accept(session, cmd))
    return out
