"""In-process model of the vendor back end: account/registration services and
the Location Server (nonce, access token, geolocation reports, history)."""

from __future__ import annotations

import base64
import enum
import hashlib
import math
from dataclasses import dataclass, field
from random import Random
from typing import Optional

from ..crypto import DerivedKeySet, Keypair25519, ecdh_establish, master_secret
from ..fmm import STANDARD_IV, FmmPool, PrivateIdConfig, fmm_decode_adv, fmm_pool
from ..smarttag import (PrivacyConfig, SmartTagPrivacyPool, Verdict, aging_counter, st_privacy_pool,
                        st_verify_adv)
from .clock import SimClock, Transcript

TOKEN_LIFETIME = 32 * 3600
QUERY_LIMIT = 200
KM_PER_DEGREE = 111.195
DEFAULT_MAX_SPEED_KMH = 1000.0


class ServerError(Exception):
    pass


class BadNonce(ServerError):
    pass


class NotOwner(ServerError):
    pass


class UnknownDevice(ServerError):
    pass


class OwnershipConflict(ServerError):
    pass


class Ownership(str, enum.Enum):
    NOT_FOUND = "not-found"
    OWNED_BY_REQUESTER = "owned-by-requester"
    OWNED_BY_OTHER = "owned-by-other"


class Rejection(str, enum.Enum):
    INVALID_TOKEN = "invalid-token"
    EXPIRED_TOKEN = "expired-token"
    UNKNOWN_ID = "unknown-id"
    AMBIGUOUS_ID = "ambiguous-id"
    BAD_SIGNATURE = "bad-signature"
    STALE_COUNTER = "stale-counter"
    IMPLAUSIBLE_LOCATION = "implausible-location"


@dataclass(frozen=True)
class AccessToken:
    value: str
    subject_id: str
    issued_at: float
    valid_for: Optional[float] = TOKEN_LIFETIME

    @property
    def expires_at(self) -> float:
        return math.inf if self.valid_for is None else self.issued_at + self.valid_for

    def valid_at(self, now: float) -> bool:
        return self.issued_at <= now < self.expires_at


def reporter_id(android_id: bytes) -> str:
    """``androidId[0:4] || SHA256(androidId || "findMyMobile")`` over the hex form."""
    aid = android_id.hex()
    return aid[:4] + hashlib.sha256((aid + "findMyMobile").encode()).hexdigest()


def distance_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1]) * KM_PER_DEGREE


@dataclass(frozen=True)
class LocationReport:
    reporter_id: str
    token: AccessToken
    payload: bytes
    latitude: float
    longitude: float
    reported_at: float


@dataclass(frozen=True)
class StoredReport:
    device_id: str
    latitude: float
    longitude: float
    t: float
    reporter_id: str
    token_subject: str
    token_expires_at: float
    privacy_key: bytes

    def to_json(self) -> dict:
        return {"device_id": self.device_id, "lat": self.latitude, "lon": self.longitude, "t": self.t,
                "reporter_id": self.reporter_id, "token_subject": self.token_subject}


@dataclass
class IngestResult:
    accepted: bool
    device_id: Optional[str] = None
    reason: Optional[Rejection] = None


@dataclass
class DeviceProfile:
    device_id: str
    kind: str  # "fmm" or "smarttag"
    owner_account: str
    fmm_config: Optional[PrivateIdConfig] = None
    tag_config: Optional[PrivacyConfig] = None
    shared_secret: bytes = b""
    serial: Optional[str] = None
    mn_id: Optional[str] = None
    setup_id: Optional[str] = None
    fmm_pool: Optional[FmmPool] = None
    tag_pool: Optional[SmartTagPrivacyPool] = None

    def __post_init__(self):
        if (self.kind == "fmm") != (self.fmm_config is not None) or \
                (self.kind == "smarttag") != (self.tag_config is not None):
            raise ValueError("exactly one of fmm_config/tag_config must match kind")


@dataclass(frozen=True)
class BlobResponse:
    shared_secret: bytes
    server_public: bytes


@dataclass(frozen=True)
class Finalization:
    device_id: str
    region_code: int
    privacy_id_pool_size: int
    privacy_id_seed: bytes
    privacy_id_iv: bytes

    def to_json(self) -> dict:
        return {"deviceId": self.device_id, "metadata": {
            "regionCode": self.region_code,
            "privacyIdPoolSize": self.privacy_id_pool_size,
            "privacyIdSeed": base64.b64encode(self.privacy_id_seed).decode(),
            "privacyIdInitialVector": base64.b64encode(self.privacy_id_iv).decode(),
        }}


def hashed_serial(serial: str) -> str:
    return base64.b64encode(hashlib.sha256(serial.encode()).digest()[:6]).decode()


@dataclass
class LocationServer:
    rng: Random
    clock: SimClock
    transcript: Optional[Transcript] = None
    strict: bool = False
    max_speed_kmh: float = DEFAULT_MAX_SPEED_KMH
    freshness_window: Optional[int] = None  # aging-counter intervals; None = not enforced
    region_code: int = 12

    profiles: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)
    _nonces: set = field(default_factory=set)
    _tokens: dict = field(default_factory=dict)
    _token_credential: dict = field(default_factory=dict)
    _bearer: dict = field(default_factory=dict)
    _fmm_secrets: dict = field(default_factory=dict)  # device -> (account, secret)
    _provisioned: dict = field(default_factory=dict)  # hashed serial -> (serial, public key)
    _blobs: dict = field(default_factory=dict)
    _fmm_index: dict = field(default_factory=dict)
    _tag_index: dict = field(default_factory=dict)

    def _log(self, action: str, **detail) -> None:
        if self.transcript is not None:
            self.transcript.emit("server", action, **detail)

    def _new_id(self, prefix: str) -> str:
        return f"{prefix}-{self.rng.randbytes(8).hex()}"

    # --- accounts ----------------------------------------------------------

    def login(self, account: str) -> AccessToken:
        """OAuth bearer token for an account; not expired within the simulation."""
        tok = AccessToken(self._new_id("bearer"), account, self.clock.now, valid_for=None)
        self._bearer[tok.value] = tok
        return tok

    # --- token flow --------------------------------------------------------

    def server_nonce(self) -> bytes:
        nonce = self.rng.randbytes(16)
        self._nonces.add(nonce)
        self._log("GET /nonce", nonce=nonce)
        return nonce

    def server_token(self, credential: str, nonce: bytes) -> AccessToken:
        if nonce not in self._nonces:
            self._log("POST /accesstoken", status=401, nonce=nonce)
            raise BadNonce("unknown or already used nonce")
        self._nonces.discard(nonce)
        tok = AccessToken(self._new_id("jwe"), self._new_id("sub"), self.clock.now)
        self._tokens[tok.value] = tok
        self._token_credential[tok.value] = credential
        self._log("POST /accesstoken", status=200, subject=tok.subject_id, credential=credential,
                  expires_at=tok.expires_at)
        return tok

    def credential_of(self, token: AccessToken) -> Optional[str]:
        return self._token_credential.get(token.value)

    # --- FMM registration --------------------------------------------------

    def server_register_fmm(self, account: str, device_id: str) -> PrivateIdConfig:
        prev = self._fmm_secrets.get(device_id)
        if prev is not None and prev[0] == account:
            secret = prev[1]
        else:
            secret = self.rng.randbytes(16)
            self._fmm_secrets[device_id] = (account, secret)
        config = PrivateIdConfig(secret, STANDARD_IV, 51)
        self._drop_profile(device_id)
        profile = DeviceProfile(device_id, "fmm", account, fmm_config=config, shared_secret=secret,
                                fmm_pool=fmm_pool(config, device_id))
        self._add_profile(profile)
        self._log("POST registerDevice", device=device_id, account=account)
        return config

    def server_deregister_fmm(self, device_id: str) -> None:
        # the (device, account) secret mapping is retained
        self._drop_profile(device_id)
        self._log("POST unRegisterDevice", device=device_id)

    # --- SmartTag registration ---------------------------------------------

    def provision_tag(self, serial: str, public_key: bytes) -> None:
        self._provisioned[hashed_serial(serial)] = (serial, bytes(public_key))

    def server_ownership_check(self, serial: str, mn_id: str, setup_id: str, requester: str) -> Ownership:
        for p in self.profiles.values():
            if p.kind == "smarttag" and p.serial == serial and p.mn_id == mn_id and p.setup_id == setup_id:
                result = Ownership.OWNED_BY_REQUESTER if p.owner_account == requester else Ownership.OWNED_BY_OTHER
                break
        else:
            result = Ownership.NOT_FOUND
        self._log("GET /chaser/trackers/lostmessage", serial=serial,
                  status=404 if result == Ownership.NOT_FOUND else 200, result=result.value)
        return result

    def server_blob(self, account: str, hashed_sn: str, x: bytes) -> BlobResponse:
        if hashed_sn not in self._provisioned:
            raise UnknownDevice(f"no provisioned tag for hashed serial {hashed_sn}")
        _, tag_public = self._provisioned[hashed_sn]
        eph = Keypair25519.generate(self.rng)
        secret = ecdh_establish(eph.private, tag_public, x)
        self._blobs[(account, hashed_sn)] = secret
        self._log("POST /identity/easysetup/blob", account=account, keyid=hashed_sn)
        return BlobResponse(secret, eph.public)

    def server_finalize(self, account: str, serial: str, shared_secret: bytes,
                        mn_id: str = "0AFD", setup_id: str = "430") -> Finalization:
        owner = self.server_ownership_check(serial, mn_id, setup_id, account)
        if owner == Ownership.OWNED_BY_OTHER:
            raise OwnershipConflict(f"tag {serial} is registered to another account")
        keys = DerivedKeySet.from_master(master_secret(shared_secret))
        fin = Finalization(self._new_id("dev"), self.region_code, 1000, self.rng.randbytes(8),
                           self.rng.randbytes(16))
        cfg = PrivacyConfig(keys.pid_key, keys.sign_key, fin.privacy_id_seed, fin.privacy_id_iv,
                            fin.privacy_id_pool_size, fin.region_code)
        for p in list(self.profiles.values()):
            if p.kind == "smarttag" and p.serial == serial:
                self._drop_profile(p.device_id)
        self._add_profile(DeviceProfile(fin.device_id, "smarttag", account, tag_config=cfg,
                                        shared_secret=shared_secret, serial=serial, mn_id=mn_id,
                                        setup_id=setup_id, tag_pool=st_privacy_pool(cfg, fin.device_id)))
        self._log("POST /miniature/mobile", account=account, device=fin.device_id)
        return fin

    def server_register_tag(self, account: str, serial: str, x: bytes,
                            mn_id: str = "0AFD", setup_id: str = "430") -> tuple[BlobResponse, Finalization]:
        """Blob and finalization in one call, as relayed by an honest owner app."""
        if self.server_ownership_check(serial, mn_id, setup_id, account) == Ownership.OWNED_BY_OTHER:
            raise OwnershipConflict(f"tag {serial} is registered to another account")
        blob = self.server_blob(account, hashed_serial(serial), x)
        return blob, self.server_finalize(account, serial, blob.shared_secret, mn_id, setup_id)

    def remove_device(self, account: str, device_id: str) -> None:
        p = self.profiles.get(device_id)
        if p is None:
            raise UnknownDevice(device_id)
        if p.owner_account != account:
            raise NotOwner(device_id)
        self._drop_profile(device_id)
        self._log("DELETE /devices", device=device_id)

    def _add_profile(self, p: DeviceProfile) -> None:
        self.profiles[p.device_id] = p
        if p.fmm_pool is not None:
            for pid in p.fmm_pool.ids:
                self._fmm_index.setdefault(pid.value, []).append(p.device_id)
        if p.tag_pool is not None:
            for i in range(len(p.tag_pool)):
                self._tag_index.setdefault(p.tag_pool.prefix(i), []).append(p.device_id)

    def _drop_profile(self, device_id: str) -> None:
        p = self.profiles.pop(device_id, None)
        if p is None:
            return
        for index, keys in ((self._fmm_index, [x.value for x in p.fmm_pool.ids] if p.fmm_pool else []),
                            (self._tag_index, [p.tag_pool.prefix(i) for i in range(len(p.tag_pool))]
                             if p.tag_pool else [])):
            for k in keys:
                owners = index.get(k, [])
                if device_id in owners:
                    owners.remove(device_id)
                if not owners:
                    index.pop(k, None)

    # --- reports -----------------------------------------------------------

    def server_ingest_report(self, report: LocationReport) -> IngestResult:
        result = self._ingest(report)
        self._log("POST /geolocations", reporter=report.reporter_id, subject=report.token.subject_id,
                  payload=report.payload, lat=report.latitude, lon=report.longitude,
                  accepted=result.accepted, device=result.device_id,
                  reason=result.reason.value if result.reason else None)
        return result

    def _ingest(self, report: LocationReport) -> IngestResult:
        now = self.clock.now
        tok = self._tokens.get(report.token.value)
        if tok is None:
            return IngestResult(False, reason=Rejection.INVALID_TOKEN)
        if not tok.valid_at(now):
            return IngestResult(False, reason=Rejection.EXPIRED_TOKEN)

        payload = report.payload
        if len(payload) == 14:
            key = fmm_decode_adv(payload).private_id
            owners = self._fmm_index.get(key, [])
        elif len(payload) == 20:
            key = bytes(payload[4:12])
            owners = self._tag_index.get(key, [])
        else:
            return IngestResult(False, reason=Rejection.UNKNOWN_ID)
        if not owners:
            return IngestResult(False, reason=Rejection.UNKNOWN_ID)
        if len(owners) > 1:
            return IngestResult(False, reason=Rejection.AMBIGUOUS_ID)
        profile = self.profiles[owners[0]]

        if profile.kind == "smarttag":
            verdict = st_verify_adv(payload, profile.tag_config, aging_counter(int(now)),
                                    window=self.freshness_window, pool=profile.tag_pool)
            if verdict == Verdict.BAD_SIGNATURE:
                return IngestResult(False, profile.device_id, Rejection.BAD_SIGNATURE)
            if verdict == Verdict.STALE_COUNTER:
                return IngestResult(False, profile.device_id, Rejection.STALE_COUNTER)

        if self.strict and not self._plausible(profile.device_id, report):
            return IngestResult(False, profile.device_id, Rejection.IMPLAUSIBLE_LOCATION)

        self.reports.append(StoredReport(profile.device_id, report.latitude, report.longitude,
                                         report.reported_at, report.reporter_id, tok.subject_id,
                                         tok.expires_at, key))
        return IngestResult(True, profile.device_id)

    def _plausible(self, device_id: str, report: LocationReport) -> bool:
        prior = [r for r in self.reports if r.device_id == device_id]
        if not prior:
            return True
        last = max(prior, key=lambda r: r.t)
        dist = distance_km((last.latitude, last.longitude), (report.latitude, report.longitude))
        hours = abs(report.reported_at - last.t) / 3600
        if hours == 0:
            return dist == 0
        return dist / hours <= self.max_speed_kmh

    def server_query_locations(self, owner_token: AccessToken, device_id: str, start: float, end: float,
                               limit: int = QUERY_LIMIT) -> list[StoredReport]:
        tok = self._bearer.get(owner_token.value)
        if tok is None or not tok.valid_at(self.clock.now):
            raise NotOwner("invalid bearer token")
        p = self.profiles.get(device_id)
        if p is None:
            raise UnknownDevice(device_id)
        if p.owner_account != tok.subject_id:
            raise NotOwner(f"{tok.subject_id} does not own {device_id}")
        hits = sorted((r for r in self.reports if r.device_id == device_id and start <= r.t <= end),
                      key=lambda r: r.t)
        out = hits[:max(0, min(limit, QUERY_LIMIT))]
        self._log("GET /trackers/geolocations", device=device_id, start=start, end=end, limit=limit,
                  returned=len(out))
        return out

    def audit(self) -> list[str]:
        """Store-level invariant violations (empty when consistent)."""
        problems = []
        for r in self.reports:
            if r.t >= r.token_expires_at:
                problems.append(f"report at {r.t} stored with token expired at {r.token_expires_at}")
            p = self.profiles.get(r.device_id)
            if p is None:
                continue
            in_pool = (r.privacy_key in p.fmm_pool) if p.fmm_pool else (r.privacy_key in p.tag_pool)
            if not in_pool:
                problems.append(f"report for {r.device_id} carries foreign id {r.privacy_key.hex()}")
        return problems
