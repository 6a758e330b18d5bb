"""Find My Mobile lost-mode identifiers and the 14-byte advertisement payload."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .crypto import aes_cbc_encrypt, require_len, unhex

STANDARD_IV = base64.b64decode("+IABCfvBZHJYFUek8vp3Gg==")
POOL_SIZE = 51
ADV_LEN = 14
SERVICE_UUID = 0xFD69
ROTATION_SECONDS = 3600


class AmbiguousMatch(LookupError):
    """An identifier was found in more than one device's pool."""


@dataclass(frozen=True)
class PrivateIdConfig:
    secret_key: bytes
    iv: bytes = STANDARD_IV
    pool_size: int = POOL_SIZE

    def __post_init__(self):
        require_len(self.secret_key, 16, "secret_key")
        require_len(self.iv, 16, "iv")
        if self.pool_size < 1 or self.pool_size > 0xFFFF:
            raise ValueError(f"pool_size out of range: {self.pool_size}")

    def to_json(self) -> dict:
        return {
            "secret_key_hex": self.secret_key.hex(),
            "iv_b64": base64.b64encode(self.iv).decode(),
            "pool_size": self.pool_size,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PrivateIdConfig":
        return cls(
            secret_key=unhex(obj["secret_key_hex"]),
            iv=base64.b64decode(obj["iv_b64"]) if "iv_b64" in obj else STANDARD_IV,
            pool_size=int(obj.get("pool_size", POOL_SIZE)),
        )


@dataclass(frozen=True)
class FmmPrivateId:
    value: bytes
    index: int


def fmm_preimage(secret_key: bytes, i: int) -> bytes:
    """The 20-byte block ``(i>>8)&255, i&255, key, (i>>8)&255, i&255``."""
    hi, lo = (i >> 8) & 0xFF, i & 0xFF
    return bytes([hi, lo]) + secret_key + bytes([hi, lo])


def fmm_private_id(config: PrivateIdConfig, i: int) -> FmmPrivateId:
    if not 1 <= i <= config.pool_size:
        raise IndexError(f"index {i} outside 1..{config.pool_size}")
    ct = aes_cbc_encrypt(config.secret_key, config.iv, fmm_preimage(config.secret_key, i))
    return FmmPrivateId(ct[:12], i)


@dataclass(frozen=True)
class FmmPool:
    device_id: str
    ids: tuple[FmmPrivateId, ...]
    _by_value: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_value", {p.value: p.index for p in self.ids})

    def index_of(self, private_id: bytes) -> Optional[int]:
        return self._by_value.get(bytes(private_id))

    def __contains__(self, private_id: bytes) -> bool:
        return bytes(private_id) in self._by_value

    def __len__(self) -> int:
        return len(self.ids)

    def hex_ids(self) -> list[str]:
        return [p.value.hex() for p in self.ids]


def fmm_pool(config: PrivateIdConfig, device_id: str = "") -> FmmPool:
    return FmmPool(device_id, tuple(fmm_private_id(config, k) for k in range(1, config.pool_size + 1)))


@dataclass(frozen=True)
class FmmAdvertisement:
    op_mode: int
    private_id: bytes
    flags: int

    def __post_init__(self):
        require_len(self.private_id, 12, "private_id")
        for name in ("op_mode", "flags"):
            if not 0 <= getattr(self, name) <= 0xFF:
                raise ValueError(f"{name} must fit in one byte")

    def to_json(self) -> dict:
        return {"op_mode": self.op_mode, "private_id": self.private_id.hex(), "flags": self.flags}

    @classmethod
    def from_json(cls, obj: dict) -> "FmmAdvertisement":
        return cls(int(obj.get("op_mode", 0)), unhex(obj["private_id"]), int(obj["flags"]))


def fmm_encode_adv(adv: FmmAdvertisement) -> bytes:
    return bytes([adv.op_mode]) + adv.private_id + bytes([adv.flags])


def fmm_decode_adv(data: bytes) -> FmmAdvertisement:
    if len(data) != ADV_LEN:
        raise ValueError(f"FMM advertisement must be {ADV_LEN} bytes, got {len(data)}")
    return FmmAdvertisement(data[0], bytes(data[1:13]), data[13])


def fmm_match(adv: FmmAdvertisement, pools: Iterable[FmmPool]) -> Optional[tuple[str, int]]:
    hits = [(p.device_id, p.index_of(adv.private_id)) for p in pools if adv.private_id in p]
    if len(hits) > 1:
        raise AmbiguousMatch(f"private id {adv.private_id.hex()} in pools {[h[0] for h in hits]}")
    return hits[0] if hits else None


def load_config(path) -> PrivateIdConfig:
    with open(path) as fh:
        return PrivateIdConfig.from_json(json.load(fh))
