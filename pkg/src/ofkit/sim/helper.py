"""Helper (finder) device: BLE scan database and location-report batching."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from random import Random
from typing import Callable, Iterable, Optional

from .. import fmm, smarttag
from ..smarttag import TagState
from .clock import Transcript
from .server import AccessToken, IngestResult, LocationReport, LocationServer, reporter_id

DB_CAPACITY = 1000
EXPIRY_SECONDS = 900
FRESH_SECONDS = 60
MAX_BATCH = 5
RE_REPORT_TIMEOUT = 1200


@dataclass
class HelperEntry:
    key: bytes
    kind: str
    first_seen: float
    last_seen: float
    payload: bytes
    reportable: bool
    reported_at: Optional[float] = None


@dataclass
class HelperDb:
    """Lost devices seen by one helper, keyed by privacy ID.

    Entries idle for ``expiry`` seconds are dropped; when full, the entry with
    the oldest ``last_seen`` makes room for a new one. Report times are kept
    for ``report_memory`` seconds independently of the entries, so a device
    that is evicted and seen again still waits out its re-report timeout.
    """

    capacity: int = DB_CAPACITY
    expiry: float = EXPIRY_SECONDS
    report_memory: float = RE_REPORT_TIMEOUT
    entries: dict = field(default_factory=dict)
    last_reported: dict = field(default_factory=dict)

    def expire(self, now: float) -> list[bytes]:
        gone = [k for k, e in self.entries.items() if now - e.last_seen >= self.expiry]
        for k in gone:
            del self.entries[k]
        for k in [k for k, t in self.last_reported.items() if now - t >= self.report_memory]:
            del self.last_reported[k]
        return gone

    def mark_reported(self, entry: HelperEntry, now: float) -> None:
        entry.reported_at = now
        self.last_reported[entry.key] = now

    def observe(self, key: bytes, kind: str, payload: bytes, now: float, reportable: bool) -> HelperEntry:
        e = self.entries.get(key)
        if e is not None:
            e.last_seen, e.payload, e.reportable = now, payload, reportable
            return e
        if len(self.entries) >= self.capacity:
            oldest = min(self.entries.values(), key=lambda x: (x.last_seen, x.key))
            del self.entries[oldest.key]
        e = HelperEntry(key, kind, now, now, payload, reportable, self.last_reported.get(key))
        self.entries[key] = e
        return e

    def select_for_report(self, now: float, timeout: float = RE_REPORT_TIMEOUT,
                          fresh: float = FRESH_SECONDS, limit: int = MAX_BATCH) -> list[HelperEntry]:
        due = [e for e in self.entries.values()
               if e.reportable and e.last_seen >= now - fresh
               and (e.reported_at is None or now - e.reported_at >= timeout)]
        due.sort(key=lambda e: (-e.last_seen, e.first_seen, e.key))
        return due[:limit]

    def violations(self, now: float) -> list[str]:
        out = []
        if len(self.entries) > self.capacity:
            out.append(f"{len(self.entries)} entries exceed capacity {self.capacity}")
        out += [f"entry {k.hex()} idle {now - e.last_seen}s" for k, e in self.entries.items()
                if now - e.last_seen >= self.expiry]
        return out


def parse_observation(service_uuid: int, payload: bytes) -> Optional[tuple[bytes, str, bool]]:
    """(db key, kind, report-eligible) for an OF advertisement, else None."""
    if service_uuid == fmm.SERVICE_UUID and len(payload) == fmm.ADV_LEN:
        return fmm.fmm_decode_adv(payload).private_id, "fmm", True
    if service_uuid == smarttag.SERVICE_UUID and len(payload) == smarttag.ADV_LEN:
        state = payload[0] & 0x07
        return bytes(payload[4:12]), "smarttag", state in (TagState.OFFLINE, TagState.OVERMATURE_OFFLINE)
    return None


@dataclass
class HelperDevice:
    name: str
    android_id: bytes
    credential: str
    position: tuple[float, float]
    server: LocationServer
    transcript: Optional[Transcript] = None
    re_report_timeout: float = RE_REPORT_TIMEOUT
    db: Optional[HelperDb] = None
    token: Optional[AccessToken] = None
    tamper: Optional[Callable[[LocationReport], LocationReport]] = None
    results: list = field(default_factory=list)

    def __post_init__(self):
        if self.db is None:
            self.db = HelperDb(report_memory=self.re_report_timeout)

    @classmethod
    def create(cls, name: str, rng: Random, position, server, transcript=None,
               credential: Optional[str] = None, **kw) -> "HelperDevice":
        android_id = rng.randbytes(8)
        return cls(name, android_id, credential or f"cred-{rng.randbytes(4).hex()}", position, server,
                   transcript, **kw)

    @property
    def reporter_id(self) -> str:
        return reporter_id(self.android_id)

    def _log(self, action: str, **detail) -> None:
        if self.transcript is not None:
            self.transcript.emit(self.name, action, **detail)

    def helper_scan_step(self, now: float, observations: Iterable[tuple[int, bytes]]) -> None:
        self.db.expire(now)
        for uuid, payload in observations:
            parsed = parse_observation(uuid, payload)
            if parsed is None:
                continue
            key, kind, reportable = parsed
            self.db.observe(key, kind, bytes(payload), now, reportable)

    def ensure_token(self, now: float) -> AccessToken:
        if self.token is None or not self.token.valid_at(now):
            nonce = self.server.server_nonce()
            self.token = self.server.server_token(self.credential, nonce)
            self._log("token", subject=self.token.subject_id, expires_at=self.token.expires_at)
        return self.token

    def helper_report_step(self, now: float) -> list[LocationReport]:
        batch = self.db.select_for_report(now, timeout=self.re_report_timeout)
        if not batch:
            return []
        token = self.ensure_token(now)
        sent = []
        for e in batch:
            report = LocationReport(self.reporter_id, token, e.payload, self.position[0], self.position[1], now)
            if self.tamper is not None:
                report = self.tamper(report)
            result: IngestResult = self.server.server_ingest_report(report)
            self.db.mark_reported(e, now)
            self.results.append((report, result))
            self._log("report", key=e.key, lat=report.latitude, lon=report.longitude,
                      accepted=result.accepted, reason=result.reason.value if result.reason else None)
            sent.append(report)
        return sent


def move_report(lat: float, lon: float) -> Callable[[LocationReport], LocationReport]:
    """A MitM rewrite that relocates every outgoing report."""
    return lambda r: replace(r, latitude=lat, longitude=lon)
