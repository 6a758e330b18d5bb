"""Offline tracker detection and de-anonymisation over scan logs."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from . import fmm, smarttag
from .crypto import format_mac, require_len, rpa_resolve
from .fmm import AmbiguousMatch, FmmPool
from .scanlog import DFU_SERVICE_UUID, ScanRecord
from .smarttag import SmartTagPrivacyPool

DEFAULT_WINDOW = 8 * 3600
DEFAULT_MIN_SIGHTINGS = 4


class Kind(str, enum.Enum):
    FMM_LOST = "fmm-lost"
    SMARTTAG_REGISTERED = "smarttag-registered"
    SMARTTAG_UNREGISTERED = "smarttag-unregistered"
    DFU_MODE = "dfu-mode"
    OTHER = "other"


class AddressWrapWarning(UserWarning):
    pass


def classify(record: ScanRecord) -> Kind:
    uuid, n = record.service_uuid, len(record.payload)
    if uuid == fmm.SERVICE_UUID and n == fmm.ADV_LEN:
        return Kind.FMM_LOST
    if uuid == smarttag.SERVICE_UUID and n == smarttag.ADV_LEN:
        return Kind.SMARTTAG_REGISTERED
    if uuid == smarttag.UNREG_SERVICE_UUID and n == smarttag.UNREG_LEN:
        return Kind.SMARTTAG_UNREGISTERED
    if uuid == DFU_SERVICE_UUID:
        return Kind.DFU_MODE
    return Kind.OTHER


@dataclass
class CandidatePool:
    """Private IDs seen with one flags byte, in first-seen order."""

    flags: int
    ids: list = field(default_factory=list)
    first_seen: float = 0.0
    last_seen: float = 0.0
    sightings: int = 0
    pool_size: int = fmm.POOL_SIZE

    @property
    def complete(self) -> bool:
        return len(self.ids) >= self.pool_size

    @property
    def ambiguous(self) -> bool:
        # more distinct IDs than one device can emit: several devices share the flags byte
        return len(self.ids) > self.pool_size

    def as_pool(self, device_id: Optional[str] = None) -> FmmPool:
        return FmmPool(device_id or f"harvested-{self.flags:02x}",
                       tuple(fmm.FmmPrivateId(v, 0) for v in self.ids))

    def to_json(self) -> dict:
        return {"flags": self.flags, "ids": [v.hex() for v in self.ids], "complete": self.complete,
                "ambiguous": self.ambiguous, "first_seen": self.first_seen, "last_seen": self.last_seen,
                "sightings": self.sightings}


def harvest_fmm_pools(records: Iterable[ScanRecord], pool_size: int = fmm.POOL_SIZE) -> list[CandidatePool]:
    groups: dict[int, CandidatePool] = {}
    seen: dict[int, set] = {}
    for r in records:
        if classify(r) != Kind.FMM_LOST:
            continue
        adv = fmm.fmm_decode_adv(r.payload)
        g = groups.get(adv.flags)
        if g is None:
            g = groups[adv.flags] = CandidatePool(adv.flags, first_seen=r.t, pool_size=pool_size)
            seen[adv.flags] = set()
        g.sightings += 1
        g.last_seen = max(g.last_seen, r.t)
        if adv.private_id not in seen[adv.flags]:
            seen[adv.flags].add(adv.private_id)
            g.ids.append(adv.private_id)
    return [groups[k] for k in sorted(groups)]


def match_known_pool(record: ScanRecord, fmm_pools: Sequence[FmmPool] = (),
                     tag_pools: Sequence[SmartTagPrivacyPool] = ()) -> Optional[str]:
    kind = classify(record)
    if kind == Kind.FMM_LOST:
        key = fmm.fmm_decode_adv(record.payload).private_id
        hits = [p.device_id for p in fmm_pools if key in p]
    elif kind == Kind.SMARTTAG_REGISTERED:
        key = bytes(record.payload[4:12])
        hits = [p.device_id for p in tag_pools if key in p]
    else:
        return None
    if len(hits) > 1:
        raise AmbiguousMatch(f"{key.hex()} found in pools {hits}")
    return hits[0] if hits else None


def resolve_with_irk(records: Iterable[ScanRecord], irk: bytes) -> list[ScanRecord]:
    return [r for r in records if rpa_resolve(irk, r.mac)]


def dfu_identity(dfu_addr: bytes) -> bytes:
    """Identity address of a tag seen in DFU mode (its DFU address minus one)."""
    value = int.from_bytes(require_len(dfu_addr, 6, "address"), "big")
    if value == 0:
        warnings.warn("DFU address 00:00:00:00:00:00 wraps to FF:FF:FF:FF:FF:FF", AddressWrapWarning,
                      stacklevel=2)
    return ((value - 1) % (1 << 48)).to_bytes(6, "big")


@dataclass
class TrackerHypothesis:
    cluster_id: str
    evidence: str  # matched-pool | resolved-irk | dfu-identity | persistence
    first_seen: float
    last_seen: float
    record_count: int
    trail: list = field(default_factory=list)

    @property
    def span(self) -> float:
        return self.last_seen - self.first_seen

    def to_json(self) -> dict:
        return {"cluster_id": self.cluster_id, "evidence": self.evidence, "first_seen": self.first_seen,
                "last_seen": self.last_seen, "record_count": self.record_count, "trail": self.trail}


@dataclass
class _TagChain:
    cid: int
    byte12: int
    last_prefix: bytes
    last_counter: int
    prefixes: set


class _TagLinker:
    """Links rotating SmartTag prefixes across consecutive aging-counter windows
    when the byte-12 field (region/flags/battery) is identical and exactly one
    open chain qualifies."""

    def __init__(self, max_counter_gap: int = 1):
        self.max_gap = max_counter_gap
        self.chains: list[_TagChain] = []
        self.by_prefix: dict[bytes, _TagChain] = {}

    def key(self, payload: bytes) -> str:
        prefix, b12 = bytes(payload[4:12]), payload[12]
        counter = int.from_bytes(payload[1:4], "little")
        chain = self.by_prefix.get(prefix)
        if chain is None:
            cands = [c for c in self.chains if c.byte12 == b12 and c.last_prefix != prefix
                     and 0 <= counter - c.last_counter <= self.max_gap]
            if len(cands) == 1:
                chain = cands[0]
            else:
                chain = _TagChain(len(self.chains), b12, prefix, counter, set())
                self.chains.append(chain)
            chain.prefixes.add(prefix)
            self.by_prefix[prefix] = chain
        chain.last_prefix = prefix
        chain.last_counter = max(chain.last_counter, counter)
        return f"smarttag-chain:{chain.cid}"


def cluster_records(records: Iterable[ScanRecord], fmm_pools: Sequence[FmmPool] = (),
                    tag_pools: Sequence[SmartTagPrivacyPool] = (), irks: Mapping[str, bytes] | None = None,
                    link_tags: bool = True) -> list[TrackerHypothesis]:
    """Group records by the strongest linkage key available for each."""
    irks = dict(irks or {})
    linker = _TagLinker() if link_tags else None
    clusters: dict[str, TrackerHypothesis] = {}
    for r in sorted(records, key=lambda r: r.t):
        kind = classify(r)
        key = evidence = None
        try:
            dev = match_known_pool(r, fmm_pools, tag_pools)
        except AmbiguousMatch:
            dev = None
        if dev is not None:
            key, evidence = f"device:{dev}", "matched-pool"
        else:
            name = next((n for n, irk in irks.items() if rpa_resolve(irk, r.mac)), None)
            if name is not None:
                key, evidence = f"irk:{name}", "resolved-irk"
            elif kind == Kind.DFU_MODE:
                key, evidence = f"identity:{format_mac(dfu_identity(r.mac))}", "dfu-identity"
            elif kind == Kind.FMM_LOST:
                key, evidence = f"fmm-flags:{r.payload[13]:02x}", "persistence"
            elif kind == Kind.SMARTTAG_REGISTERED:
                key = linker.key(r.payload) if linker else f"smarttag-prefix:{r.payload[4:12].hex()}"
                evidence = "persistence"
            elif kind == Kind.SMARTTAG_UNREGISTERED:
                key, evidence = f"unregistered:{r.payload.hex()}", "persistence"
        if key is None:
            continue
        h = clusters.get(key)
        if h is None:
            h = clusters[key] = TrackerHypothesis(key, evidence, r.t, r.t, 0)
        h.record_count += 1
        h.last_seen = max(h.last_seen, r.t)
        h.trail.append({"t": r.t, "mac": format_mac(r.mac), "kind": kind.value})
    return list(clusters.values())


def detect_following(records: Iterable[ScanRecord], window: float = DEFAULT_WINDOW,
                     min_sightings: int = DEFAULT_MIN_SIGHTINGS, **cluster_kw) -> list[TrackerHypothesis]:
    """Clusters that span at least ``window`` seconds with ``min_sightings`` records."""
    return [h for h in cluster_records(records, **cluster_kw)
            if h.span >= window and h.record_count >= min_sightings]
