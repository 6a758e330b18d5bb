"""SmartTag offline-finding advertisement: privacy-ID pool, aging counter,
signature, 20-byte payload codec, tag state machine and rotation policy."""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field, replace
from random import Random
from typing import Optional, Union

from .crypto import aes_cbc_encrypt, require_len, unhex

AGING_EPOCH = 1593648000
AGING_INTERVAL = 900
OVERMATURE_PID_INTERVAL = 86400
POOL_SIZE = 1000
ADV_LEN = 20
SERVICE_UUID = 0xFD5A
UNREG_SERVICE_UUID = 0xFD59
DEFAULT_FRESHNESS_WINDOW = 2

PREMATURE_TO_OFFLINE = 900
OFFLINE_TO_OVERMATURE = 86400


class DecodeWarning(UserWarning):
    pass


class TagState(enum.IntEnum):
    PREMATURE_OFFLINE = 1
    OFFLINE = 2
    OVERMATURE_OFFLINE = 3
    PAIRED = 4
    CONNECTED_ONE = 5
    CONNECTED_TWO = 6

    @property
    def reportable(self) -> bool:
        return self in (TagState.OFFLINE, TagState.OVERMATURE_OFFLINE)


@dataclass(frozen=True)
class PrivacyConfig:
    pid_key: bytes
    sign_key: bytes
    seed: bytes
    iv: bytes
    pool_size: int = POOL_SIZE
    region: int = 0

    def __post_init__(self):
        require_len(self.pid_key, 16, "pid_key")
        require_len(self.sign_key, 16, "sign_key")
        require_len(self.seed, 8, "seed")
        require_len(self.iv, 16, "iv")
        if not 0 <= self.region <= 15:
            raise ValueError(f"region code must fit in 4 bits, got {self.region}")
        if not 1 <= self.pool_size <= 0x10000:
            raise ValueError(f"pool_size out of range: {self.pool_size}")

    def to_json(self) -> dict:
        return {
            "pid_key_hex": self.pid_key.hex(),
            "sign_key_hex": self.sign_key.hex(),
            "seed_hex": self.seed.hex(),
            "iv_hex": self.iv.hex(),
            "pool_size": self.pool_size,
            "region": self.region,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PrivacyConfig":
        seed = unhex(obj["seed_hex"])
        if len(seed) == 12:
            # the tag's seed characteristic carries 12 bytes; only 8 feed the pool
            warnings.warn("12-byte privacy ID seed truncated to 8 bytes", DecodeWarning, stacklevel=2)
            seed = seed[:8]
        return cls(
            pid_key=unhex(obj["pid_key_hex"]),
            sign_key=unhex(obj["sign_key_hex"]),
            seed=seed,
            iv=unhex(obj["iv_hex"]),
            pool_size=int(obj.get("pool_size", POOL_SIZE)),
            region=int(obj.get("region", 0)),
        )


def load_config(path) -> PrivacyConfig:
    with open(path) as fh:
        return PrivacyConfig.from_json(json.load(fh))


def pool_input(seed: bytes, i: int) -> bytes:
    hi, lo = (i >> 8) & 0xFF, i & 0xFF
    return bytes([hi, lo]) + require_len(seed, 8, "seed") + bytes([hi, lo])


@dataclass(frozen=True)
class SmartTagPrivacyPool:
    ids: tuple[bytes, ...]
    device_id: str = ""
    _by_prefix: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_prefix", {pid[:8]: i for i, pid in enumerate(self.ids)})

    def prefix(self, index: int) -> bytes:
        return self.ids[index][:8]

    def index_of(self, prefix: bytes) -> Optional[int]:
        return self._by_prefix.get(bytes(prefix))

    def __contains__(self, prefix: bytes) -> bool:
        return bytes(prefix) in self._by_prefix

    def __len__(self) -> int:
        return len(self.ids)

    def hex_ids(self) -> list[str]:
        return [pid.hex() for pid in self.ids]


def st_privacy_pool(cfg: PrivacyConfig, device_id: str = "") -> SmartTagPrivacyPool:
    ids = tuple(aes_cbc_encrypt(cfg.pid_key, cfg.iv, pool_input(cfg.seed, i))[:16] for i in range(cfg.pool_size))
    return SmartTagPrivacyPool(ids, device_id)


def aging_counter(tag_time: int) -> int:
    if tag_time < AGING_EPOCH:
        raise ValueError(f"tag time {tag_time} precedes the aging-counter epoch {AGING_EPOCH}")
    return ((int(tag_time) - AGING_EPOCH) // AGING_INTERVAL) & 0xFFFFFF


def aging_time(counter: int) -> int:
    return AGING_EPOCH + counter * AGING_INTERVAL


def st_signature(sign_key: bytes, iv: bytes, payload16: bytes) -> bytes:
    return aes_cbc_encrypt(sign_key, iv, require_len(payload16, 16, "signed payload"))[:4]


@dataclass(frozen=True)
class SmartTagAdvertisement:
    version: int
    adv_type: int
    state: int
    aging_counter: int
    privacy_id: bytes
    region: int
    encryption_flag: int = 0
    uwb_flag: int = 0
    battery: int = 3
    reserved: bytes = bytes(3)
    signature: bytes = bytes(4)

    def __post_init__(self):
        limits = {"version": 15, "adv_type": 1, "state": 7, "aging_counter": 0xFFFFFF,
                  "region": 15, "encryption_flag": 1, "uwb_flag": 1, "battery": 3}
        for name, hi in limits.items():
            if not 0 <= getattr(self, name) <= hi:
                raise ValueError(f"{name}={getattr(self, name)} out of range 0..{hi}")
        require_len(self.privacy_id, 8, "privacy_id")
        require_len(self.reserved, 3, "reserved")
        require_len(self.signature, 4, "signature")

    @property
    def tag_state(self) -> Optional[TagState]:
        try:
            return TagState(self.state)
        except ValueError:
            return None

    def signed_part(self) -> bytes:
        b0 = (self.version << 4) | (self.adv_type << 3) | self.state
        b12 = (self.region << 4) | (self.encryption_flag << 3) | (self.uwb_flag << 2) | self.battery
        return (bytes([b0]) + self.aging_counter.to_bytes(3, "little") + self.privacy_id
                + bytes([b12]) + self.reserved)

    def to_bytes(self) -> bytes:
        """Pack verbatim, without recomputing the signature."""
        return self.signed_part() + self.signature

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "adv_type": self.adv_type,
            "state": self.state,
            "aging_counter": self.aging_counter,
            "privacy_id": self.privacy_id.hex(),
            "region": self.region,
            "encryption_flag": self.encryption_flag,
            "uwb_flag": self.uwb_flag,
            "battery": self.battery,
            "reserved": self.reserved.hex(),
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SmartTagAdvertisement":
        return cls(
            version=int(obj["version"]),
            adv_type=int(obj.get("adv_type", 0)),
            state=int(obj["state"]),
            aging_counter=int(obj["aging_counter"]),
            privacy_id=unhex(obj["privacy_id"]),
            region=int(obj["region"]),
            encryption_flag=int(obj.get("encryption_flag", 0)),
            uwb_flag=int(obj.get("uwb_flag", 0)),
            battery=int(obj.get("battery", 3)),
            reserved=unhex(obj.get("reserved", "000000")),
            signature=unhex(obj.get("signature", "00000000")),
        )


def st_encode_adv(adv: SmartTagAdvertisement, cfg: PrivacyConfig) -> bytes:
    head = adv.signed_part()
    return head + st_signature(cfg.sign_key, cfg.iv, head)


def st_decode_adv(data: bytes) -> SmartTagAdvertisement:
    if len(data) != ADV_LEN:
        raise ValueError(f"SmartTag advertisement must be {ADV_LEN} bytes, got {len(data)}")
    b0, b12 = data[0], data[12]
    state = b0 & 0x07
    if state not in TagState._value2member_map_:
        warnings.warn(f"unknown tag state code {state}", DecodeWarning, stacklevel=2)
    return SmartTagAdvertisement(
        version=b0 >> 4,
        adv_type=(b0 >> 3) & 1,
        state=state,
        aging_counter=int.from_bytes(data[1:4], "little"),
        privacy_id=bytes(data[4:12]),
        region=b12 >> 4,
        encryption_flag=(b12 >> 3) & 1,
        uwb_flag=(b12 >> 2) & 1,
        battery=b12 & 0x03,
        reserved=bytes(data[13:16]),
        signature=bytes(data[16:20]),
    )


class Verdict(str, enum.Enum):
    OK = "ok"
    BAD_SIGNATURE = "bad-signature"
    STALE_COUNTER = "stale-counter"
    UNKNOWN_ID = "unknown-id"


def st_verify_adv(data: bytes, cfg: PrivacyConfig, server_counter: Optional[int],
                  window: Optional[int] = DEFAULT_FRESHNESS_WINDOW,
                  pool: Optional[SmartTagPrivacyPool] = None) -> Verdict:
    """Check the signature, pool membership and counter freshness, in that order.

    The signature covers the prefix too, so any corruption of bytes 0-15 is
    reported as ``bad-signature`` rather than ``unknown-id``.
    ``window=None`` or ``server_counter=None`` disables the freshness check.
    """
    if len(data) != ADV_LEN:
        return Verdict.BAD_SIGNATURE
    if st_signature(cfg.sign_key, cfg.iv, data[:16]) != bytes(data[16:20]):
        return Verdict.BAD_SIGNATURE
    if pool is None:
        pool = st_privacy_pool(cfg)
    if bytes(data[4:12]) not in pool:
        return Verdict.UNKNOWN_ID
    if window is not None and server_counter is not None:
        counter = int.from_bytes(data[1:4], "little")
        if abs(counter - server_counter) > window:
            return Verdict.STALE_COUNTER
    return Verdict.OK


# --- tag state machine -----------------------------------------------------

@dataclass(frozen=True)
class Connected:
    devices: int = 1


@dataclass(frozen=True)
class Disconnected:
    pass


@dataclass(frozen=True)
class Rebooted:
    pass


@dataclass(frozen=True)
class Tick:
    elapsed: float  # seconds spent in the current state


TagEvent = Union[Connected, Disconnected, Rebooted, Tick]


def st_state_step(current: TagState, event: TagEvent) -> TagState:
    if isinstance(event, (Disconnected, Rebooted)):
        return TagState.PREMATURE_OFFLINE
    if isinstance(event, Connected):
        if event.devices >= 2:
            return TagState.CONNECTED_TWO
        return TagState.CONNECTED_ONE if event.devices == 1 else TagState.PAIRED
    if isinstance(event, Tick):
        if current == TagState.PREMATURE_OFFLINE and event.elapsed >= PREMATURE_TO_OFFLINE:
            return TagState.OFFLINE
        if current == TagState.OFFLINE and event.elapsed >= OFFLINE_TO_OVERMATURE:
            return TagState.OVERMATURE_OFFLINE
        return current
    raise TypeError(f"unknown tag event {event!r}")


def st_rotate(adv: SmartTagAdvertisement, cfg: PrivacyConfig, pool: SmartTagPrivacyPool,
              now: int, last_pid_change: int, rng: Random,
              current_index: Optional[int] = None) -> tuple[Optional[int], SmartTagAdvertisement]:
    """One 15-minute advertisement update.

    Returns ``(new_index, new_adv)``; ``new_index`` is None when the privacy ID
    is kept (Overmature state within 24 h of the last change). The aging
    counter and signature are always refreshed.
    """
    state = adv.tag_state
    new_index = None
    if state != TagState.OVERMATURE_OFFLINE or now - last_pid_change >= OVERMATURE_PID_INTERVAL:
        new_index = rng.randrange(len(pool))
        if current_index is not None and len(pool) > 1:
            while new_index == current_index:
                new_index = rng.randrange(len(pool))
    updated = replace(
        adv,
        aging_counter=aging_counter(now),
        privacy_id=pool.prefix(new_index) if new_index is not None else adv.privacy_id,
    )
    return new_index, st_decode_adv(st_encode_adv(updated, cfg))


@dataclass
class SmartTagBeacon:
    """A registered tag's advertising side: state, current pool index, clocks."""

    cfg: PrivacyConfig
    pool: SmartTagPrivacyPool
    state: TagState = TagState.CONNECTED_ONE
    state_since: int = AGING_EPOCH
    index: int = 0
    last_pid_change: int = AGING_EPOCH
    battery: int = 3
    version: int = 1
    adv: Optional[SmartTagAdvertisement] = None

    def event(self, ev: TagEvent, now: int) -> TagState:
        new = st_state_step(self.state, ev)
        if new != self.state or not isinstance(ev, Tick):
            self.state_since = now
        self.state = new
        return new

    def advance(self, now: int) -> TagState:
        # chained: a long tick can carry Premature -> Offline -> Overmature
        while True:
            new = st_state_step(self.state, Tick(now - self.state_since))
            if new == self.state:
                return new
            step = PREMATURE_TO_OFFLINE if self.state == TagState.PREMATURE_OFFLINE else OFFLINE_TO_OVERMATURE
            self.state_since += step
            self.state = new

    def current(self, now: int) -> SmartTagAdvertisement:
        self.advance(now)
        base = SmartTagAdvertisement(
            version=self.version, adv_type=0, state=int(self.state), aging_counter=aging_counter(now),
            privacy_id=self.pool.prefix(self.index), region=self.cfg.region, battery=self.battery,
        )
        self.adv = st_decode_adv(st_encode_adv(base, self.cfg))
        return self.adv

    def rotate(self, now: int, rng: Random) -> Optional[int]:
        adv = self.current(now)
        new_index, self.adv = st_rotate(adv, self.cfg, self.pool, now, self.last_pid_change, rng, self.index)
        if new_index is not None:
            self.index = new_index
            self.last_pid_change = now
        return new_index

    def payload(self, now: int) -> bytes:
        if self.adv is None or self.adv.aging_counter != aging_counter(now) or self.adv.state != int(self.state):
            self.current(now)
        return st_encode_adv(self.adv, self.cfg)


# --- unregistered (onboarding) advertisement -------------------------------

UNREG_LEN = 14
UNREG_HEADER = 0x01
UNREG_MIDDLE = bytes([0x01, 0x05, 0x01])


@dataclass(frozen=True)
class UnregisteredAdvertisement:
    mn_id: str = "0AFD"
    setup_id: str = "430"
    mac_suffix: bytes = b"000"  # ASCII of the MAC's last hex digits, 3 bytes on air

    def __post_init__(self):
        if len(self.mn_id.encode()) != 4 or len(self.setup_id.encode()) != 3:
            raise ValueError("mnId must encode to 4 bytes and setupId to 3")
        require_len(self.mac_suffix, 3, "mac_suffix")

    @classmethod
    def for_mac(cls, mac: str, mn_id: str = "0AFD", setup_id: str = "430") -> "UnregisteredAdvertisement":
        """``3D:D1`` -> ASCII ``3DD1``, truncated to the 3 bytes the layout holds."""
        digits = mac.replace(":", "").upper()[-4:]
        return cls(mn_id, setup_id, digits.encode()[:3])


def st_unreg_encode(adv: UnregisteredAdvertisement) -> bytes:
    return (bytes([UNREG_HEADER]) + adv.mn_id.encode() + adv.setup_id.encode()
            + UNREG_MIDDLE + adv.mac_suffix)


def st_unreg_decode(data: bytes) -> UnregisteredAdvertisement:
    if len(data) != UNREG_LEN:
        raise ValueError(f"unregistered advertisement must be {UNREG_LEN} bytes, got {len(data)}")
    if data[0] != UNREG_HEADER:
        warnings.warn(f"byte 0 is {data[0]:#04x}, expected 0x01", DecodeWarning, stacklevel=2)
    if bytes(data[8:11]) != UNREG_MIDDLE:
        warnings.warn(f"bytes 8-10 are {data[8:11].hex()}, expected 010501", DecodeWarning, stacklevel=2)
    return UnregisteredAdvertisement(
        mn_id=data[1:5].decode("latin-1"),
        setup_id=data[5:8].decode("latin-1"),
        mac_suffix=bytes(data[11:14]),
    )
