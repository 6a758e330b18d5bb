"""Scan-log interchange: one JSON object per line,
``{t, mac_hex, service_uuid, payload_hex, rssi?}``.

``mac_hex`` is the address in display order (most significant byte first);
``service_uuid`` is the 16-bit UUID as a 4-digit hex string such as ``"FD69"``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Optional

log = logging.getLogger(__name__)

DFU_SERVICE_UUID = 0xFE59


@dataclass(frozen=True)
class ScanRecord:
    t: float
    mac: bytes
    service_uuid: int
    payload: bytes
    rssi: Optional[int] = None

    def to_json(self) -> dict:
        d = {"t": self.t, "mac_hex": self.mac.hex(), "service_uuid": f"{self.service_uuid:04X}",
             "payload_hex": self.payload.hex()}
        if self.rssi is not None:
            d["rssi"] = self.rssi
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ScanRecord":
        uuid = obj["service_uuid"]
        mac = bytes.fromhex(obj["mac_hex"].replace(":", ""))
        if len(mac) != 6:
            raise ValueError(f"mac_hex must be 6 bytes, got {len(mac)}")
        return cls(
            t=obj["t"],
            mac=mac,
            service_uuid=int(uuid, 16) if isinstance(uuid, str) else int(uuid),
            payload=bytes.fromhex(obj["payload_hex"]),
            rssi=obj.get("rssi"),
        )


def write_scanlog(records: Iterable[ScanRecord], fh: IO[str]) -> None:
    for r in records:
        fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def read_scanlog(fh: IO[str], strict: bool = False) -> Iterator[ScanRecord]:
    """Yield records; malformed lines are skipped with a warning unless ``strict``."""
    for lineno, line in enumerate(fh, 1):
        if not line.strip():
            continue
        try:
            yield ScanRecord.from_json(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            if strict:
                raise
            log.warning("skipping malformed scan-log line %d: %s", lineno, exc)
