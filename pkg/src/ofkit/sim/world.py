"""Simulated actors (lost phones, tags, owners, sniffers, replayers) and the
world that wires them to one clock, one server and a radio range."""

from __future__ import annotations

from dataclasses import dataclass, field
from random import Random
from typing import Optional

from .. import fmm, smarttag
from ..crypto import (DerivedKeySet, Keypair25519, ecdh_establish, master_secret, random_prand,
                      rpa_generate)
from ..gatt import auth_run
from ..scanlog import DFU_SERVICE_UUID, ScanRecord
from ..smarttag import (Disconnected, PrivacyConfig, SmartTagBeacon, TagState, UnregisteredAdvertisement,
                        st_privacy_pool, st_unreg_encode)
from .clock import SimClock, Transcript
from .helper import HelperDevice
from .server import Finalization, LocationServer, distance_km, hashed_serial

SIM_START = 1_700_000_000
DEFAULT_RADIO_KM = 0.1


def random_static_mac(rng: Random) -> bytes:
    m = bytearray(rng.randbytes(6))
    m[0] |= 0xC0
    return bytes(m)


@dataclass
class FmmLostDevice:
    device_id: str
    config: fmm.PrivateIdConfig
    flags: int
    position: tuple[float, float]
    rng: Random
    index: int = 1
    mac: bytes = bytes(6)
    lost: bool = True

    def rotate(self) -> int:
        self.index = self.rng.randint(1, self.config.pool_size)
        self.mac = random_static_mac(self.rng)
        return self.index

    def payload(self) -> bytes:
        pid = fmm.fmm_private_id(self.config, self.index).value
        return fmm.fmm_encode_adv(fmm.FmmAdvertisement(0x00, pid, self.flags))

    def advertisements(self, now: float) -> list[tuple[int, bytes, bytes]]:
        return [(fmm.SERVICE_UUID, self.payload(), self.mac)] if self.lost else []


@dataclass
class SimTag:
    serial: str
    identity_address: bytes
    keypair: Keypair25519
    irk: bytes
    position: tuple[float, float]
    rng: Random
    master: Optional[bytes] = None
    beacon: Optional[SmartTagBeacon] = None
    rpa: bytes = bytes(6)
    dfu: bool = False

    @classmethod
    def manufacture(cls, rng: Random, position) -> "SimTag":
        addr = random_static_mac(rng)
        tag = cls(addr.hex().upper(), addr, Keypair25519.generate(rng), rng.randbytes(16), position, rng)
        tag.rpa = rpa_generate(tag.irk, random_prand(rng))
        return tag

    def accept_public_params(self, server_public: bytes, x: bytes) -> None:
        self.master = master_secret(ecdh_establish(self.keypair.private, server_public, x))

    def configure(self, fin: Finalization, now: int) -> None:
        keys = DerivedKeySet.from_master(self.master)
        cfg = PrivacyConfig(keys.pid_key, keys.sign_key, fin.privacy_id_seed, fin.privacy_id_iv,
                            fin.privacy_id_pool_size, fin.region_code)
        self.beacon = SmartTagBeacon(cfg, st_privacy_pool(cfg), TagState.CONNECTED_ONE, now,
                                     self.rng.randrange(cfg.pool_size), now)

    def disconnect(self, now: int) -> None:
        self.beacon.event(Disconnected(), now)

    def rotate(self, now: int) -> Optional[int]:
        self.rpa = rpa_generate(self.irk, random_prand(self.rng))
        return self.beacon.rotate(now, self.rng) if self.beacon else None

    def advertisements(self, now: float) -> list[tuple[int, bytes, bytes]]:
        if self.dfu:
            # static DFU address is the identity address plus one
            addr = ((int.from_bytes(self.identity_address, "big") + 1) % (1 << 48)).to_bytes(6, "big")
            return [(DFU_SERVICE_UUID, b"DFUTarg", addr)]
        if self.beacon is None:
            unreg = UnregisteredAdvertisement.for_mac(self.serial)
            return [(smarttag.UNREG_SERVICE_UUID, st_unreg_encode(unreg), self.identity_address)]
        return [(smarttag.SERVICE_UUID, self.beacon.payload(int(now)), self.rpa)]


@dataclass
class Owner:
    account: str
    server: LocationServer
    rng: Random
    transcript: Optional[Transcript] = None
    masters: dict = field(default_factory=dict)

    def __post_init__(self):
        self.token = self.server.login(self.account)

    def register_tag(self, tag: SimTag, now: int) -> str:
        """Shared-secret establishment, BLE authentication and finalization."""
        x = self.rng.randbytes(32)
        blob = self.server.server_blob(self.account, hashed_serial(tag.serial), x)
        tag.accept_public_params(blob.server_public, x)
        owner_master = master_secret(blob.shared_secret)
        auth_run(owner_master, tag.master, self.rng)
        fin = self.server.server_finalize(self.account, tag.serial, blob.shared_secret)
        tag.configure(fin, now)
        self.masters[fin.device_id] = owner_master
        if self.transcript is not None:
            self.transcript.emit(self.account, "registered-tag", device=fin.device_id, serial=tag.serial)
        return fin.device_id

    def register_fmm(self, device_id: str, position, flags: int, rng: Random) -> FmmLostDevice:
        config = self.server.server_register_fmm(self.account, device_id)
        dev = FmmLostDevice(device_id, config, flags, position, rng)
        dev.rotate()
        return dev

    def locations(self, device_id: str, start: float, end: float, limit: int = 200):
        return self.server.server_query_locations(self.token, device_id, start, end, limit)


@dataclass
class Sniffer:
    """Passive scanner writing a scan log (the adversary's or a detector's)."""

    name: str
    position: tuple[float, float]
    records: list = field(default_factory=list)


@dataclass
class Replayer:
    """Re-broadcasts captured FMM payloads on the OF service UUID."""

    position: tuple[float, float]
    rng: Random
    payloads: list = field(default_factory=list)

    def advertisements(self, now: float) -> list[tuple[int, bytes, bytes]]:
        return [(fmm.SERVICE_UUID if len(p) == fmm.ADV_LEN else smarttag.SERVICE_UUID, p,
                 random_static_mac(self.rng)) for p in self.payloads]


class World:
    def __init__(self, seed: int, start: int = SIM_START, radio_km: float = DEFAULT_RADIO_KM, **server_kw):
        self.seed = seed
        self.clock = SimClock(now=start)
        self.transcript = Transcript(self.clock)
        self.server = LocationServer(self.rng("server"), self.clock, self.transcript, **server_kw)
        self.radio_km = radio_km
        self.broadcasters: list = []
        self.helpers: list[HelperDevice] = []
        self.db_violations: list[str] = []

    def rng(self, label: str) -> Random:
        return Random(f"{self.seed}:{label}")

    @property
    def now(self) -> int:
        return int(self.clock.now)

    def in_range(self, a, b) -> bool:
        return distance_km(a, b) <= self.radio_km

    def audible(self, position) -> list[tuple[int, bytes, bytes]]:
        return [adv for b in self.broadcasters if self.in_range(b.position, position)
                for adv in b.advertisements(self.clock.now)]

    def add_helper(self, name: str, position, **kw) -> HelperDevice:
        h = HelperDevice.create(name, self.rng(f"helper:{name}"), position, self.server, self.transcript, **kw)
        self.helpers.append(h)
        return h

    def helper_cycle(self, helper: HelperDevice) -> None:
        now = self.clock.now
        helper.helper_scan_step(now, [(uuid, payload) for uuid, payload, _ in self.audible(helper.position)])
        self.db_violations += helper.db.violations(now)
        helper.helper_report_step(now)
        if len(helper.db.entries) > helper.db.capacity:
            self.db_violations.append(f"{helper.name} over capacity")

    def sniff(self, sniffer: Sniffer) -> None:
        for uuid, payload, mac in self.audible(sniffer.position):
            sniffer.records.append(ScanRecord(self.clock.now, mac, uuid, payload))
