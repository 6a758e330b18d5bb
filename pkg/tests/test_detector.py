import io
import logging
import warnings
from random import Random

import pytest
from hypothesis import given, strategies as st

from ofkit import detector, fmm, smarttag
from ofkit.crypto import random_prand, rpa_generate, unhex
from ofkit.detector import (AddressWrapWarning, Kind, classify, cluster_records, detect_following, dfu_identity,
                            harvest_fmm_pools, match_known_pool, resolve_with_irk)
from ofkit.fmm import AmbiguousMatch, FmmAdvertisement, FmmPool, PrivateIdConfig, fmm_encode_adv, fmm_pool
from ofkit.scanlog import DFU_SERVICE_UUID, ScanRecord, read_scanlog, write_scanlog
from ofkit.sim import run_scenario
from ofkit.smarttag import (PrivacyConfig, SmartTagAdvertisement, TagState, aging_counter, st_encode_adv,
                            st_privacy_pool)

MAC = bytes(6)


def fmm_record(t, pid, flags=0x42, mac=MAC):
    return ScanRecord(t, mac, fmm.SERVICE_UUID, fmm_encode_adv(FmmAdvertisement(0, pid, flags)))


def tag_record(t, cfg, pool, index, state=TagState.OFFLINE, mac=MAC):
    adv = SmartTagAdvertisement(1, 0, int(state), aging_counter(int(t)), pool.prefix(index), cfg.region)
    return ScanRecord(t, mac, smarttag.SERVICE_UUID, st_encode_adv(adv, cfg))


# --- classify ----------------------------------------------------------------

@pytest.mark.parametrize("uuid,n,kind", [
    (0xFD69, 14, Kind.FMM_LOST), (0xFD5A, 20, Kind.SMARTTAG_REGISTERED), (0xFD59, 14, Kind.SMARTTAG_UNREGISTERED),
    (0xFE59, 7, Kind.DFU_MODE), (0x1234, 14, Kind.OTHER), (0xFD69, 20, Kind.OTHER), (0xFD5A, 14, Kind.OTHER),
])
def test_classify(uuid, n, kind):
    assert classify(ScanRecord(0, MAC, uuid, bytes(n))) == kind


@given(st.integers(0, 0xFFFF), st.binary(max_size=32))
def test_classify_total(uuid, payload):
    r = ScanRecord(0, MAC, uuid, payload)
    assert classify(r) == classify(r) and isinstance(classify(r), Kind)


# --- harvest -----------------------------------------------------------------

def test_harvest_groups_by_flags():
    a = fmm_pool(PrivateIdConfig(b"\x01" * 16))
    b = fmm_pool(PrivateIdConfig(b"\x02" * 16))
    rng = Random(0)
    recs = []
    for t in range(3000):
        recs.append(fmm_record(t, a.ids[rng.randrange(51)].value, 0x42))
        recs.append(fmm_record(t, b.ids[rng.randrange(51)].value, 0x17))
    cands = {c.flags: c for c in harvest_fmm_pools(recs)}
    assert set(cands) == {0x17, 0x42}
    assert set(cands[0x42].ids) == {p.value for p in a.ids} and cands[0x42].complete
    assert set(cands[0x17].ids) == {p.value for p in b.ids}
    assert not cands[0x42].ambiguous


def test_harvest_empty():
    assert harvest_fmm_pools([]) == []


def test_harvest_ambiguous_when_flags_shared():
    a = fmm_pool(PrivateIdConfig(b"\x01" * 16))
    b = fmm_pool(PrivateIdConfig(b"\x02" * 16))
    recs = [fmm_record(i, p.value) for i, p in enumerate(a.ids + b.ids)]
    (cand,) = harvest_fmm_pools(recs)
    assert cand.ambiguous and len(cand.ids) == 102


# --- matching ----------------------------------------------------------------

def test_match_known_pools():
    pool = fmm_pool(PrivateIdConfig(b"\x03" * 16), "phone")
    cfg = PrivacyConfig(b"\x22" * 16, b"\x44" * 16, b"\x33" * 8, bytes(16))
    tpool = st_privacy_pool(cfg, "tag")
    assert match_known_pool(fmm_record(0, pool.ids[3].value), [pool]) == "phone"
    assert match_known_pool(tag_record(1_700_000_000, cfg, tpool, 17), tag_pools=[tpool]) == "tag"
    assert match_known_pool(ScanRecord(0, MAC, 0x1234, b""), [pool], [tpool]) is None


def test_match_random_payloads_miss():
    rng = Random(1)
    pool = fmm_pool(PrivateIdConfig(rng.randbytes(16)), "phone")
    cfg = PrivacyConfig(rng.randbytes(16), rng.randbytes(16), rng.randbytes(8), rng.randbytes(16))
    tpool = st_privacy_pool(cfg, "tag")
    for _ in range(10_000):
        assert match_known_pool(ScanRecord(0, MAC, fmm.SERVICE_UUID, rng.randbytes(14)), [pool], [tpool]) is None
        assert match_known_pool(ScanRecord(0, MAC, smarttag.SERVICE_UUID, rng.randbytes(20)), [pool], [tpool]) is None


def test_match_ambiguous():
    pool = fmm_pool(PrivateIdConfig(b"\x03" * 16), "a")
    with pytest.raises(AmbiguousMatch):
        match_known_pool(fmm_record(0, pool.ids[0].value), [pool, FmmPool("b", pool.ids)])


# --- IRK and DFU -------------------------------------------------------------

def test_resolve_with_irk():
    rng = Random(2)
    irk, other = rng.randbytes(16), rng.randbytes(16)
    mine = [ScanRecord(i, rpa_generate(irk, random_prand(rng)), 0xFD5A, b"") for i in range(50)]
    theirs = [ScanRecord(i, rpa_generate(other, random_prand(rng)), 0xFD5A, b"") for i in range(50)]
    assert resolve_with_irk(mine + theirs, irk) == mine
    assert resolve_with_irk([], irk) == []


@pytest.mark.parametrize("dfu,identity", [
    ("112233445566", "112233445565"),
    ("112233445500", "1122334454ff"),
    ("010000000000", "00ffffffffff"),
])
def test_dfu_identity(dfu, identity):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert dfu_identity(unhex(dfu)).hex() == identity


def test_dfu_identity_wraps_with_warning():
    with pytest.warns(AddressWrapWarning):
        assert dfu_identity(bytes(6)) == b"\xff" * 6


# --- following detection -----------------------------------------------------

def test_planted_tracker_flagged():
    pool = fmm_pool(PrivateIdConfig(b"\x04" * 16), "phone")
    rng = Random(3)
    recs = [fmm_record(3600 * h, pool.ids[rng.randrange(51)].value) for h in range(24)]
    (hyp,) = detect_following(recs)
    assert hyp.evidence == "persistence" and hyp.record_count == 24
    (hyp,) = detect_following(recs, fmm_pools=[pool])
    assert hyp.evidence == "matched-pool" and hyp.cluster_id == "device:phone"
    assert hyp.last_seen >= hyp.first_seen and hyp.span == 23 * 3600


def test_transient_not_flagged():
    pool = fmm_pool(PrivateIdConfig(b"\x04" * 16))
    assert detect_following([fmm_record(0, pool.ids[0].value), fmm_record(300, pool.ids[0].value)]) == []


def test_overmature_tag_flagged_by_prefix_persistence():
    cfg = PrivacyConfig(b"\x05" * 16, b"\x06" * 16, b"\x07" * 8, bytes(16), region=12)
    pool = st_privacy_pool(cfg)
    t0 = 1_700_000_000
    # Overmature: one prefix for the whole day, seen every 2 h, new RPA each time
    rng = Random(4)
    recs = [tag_record(t0 + 7200 * k, cfg, pool, 99, TagState.OVERMATURE_OFFLINE, mac=rng.randbytes(6))
            for k in range(10)]
    hyps = detect_following(recs, link_tags=False)
    assert len(hyps) == 1 and hyps[0].record_count == 10


def test_offline_tag_linked_across_rotations():
    cfg = PrivacyConfig(b"\x05" * 16, b"\x06" * 16, b"\x07" * 8, bytes(16), region=12)
    pool = st_privacy_pool(cfg)
    t0 = 1_700_000_100
    rng = Random(5)
    recs = [tag_record(t0 + 900 * k, cfg, pool, rng.randrange(1000)) for k in range(40)]
    assert detect_following(recs, link_tags=False) == []
    (hyp,) = detect_following(recs)
    assert hyp.cluster_id.startswith("smarttag-chain") and hyp.record_count == 40


def test_irk_and_dfu_evidence():
    rng = Random(6)
    irk = rng.randbytes(16)
    recs = [ScanRecord(3600 * k, rpa_generate(irk, random_prand(rng)), 0xFD5A, bytes(20)) for k in range(10)]
    (hyp,) = detect_following(recs, irks={"alice": irk})
    assert hyp.evidence == "resolved-irk"
    dfu = [ScanRecord(3600 * k, unhex("112233445566"), DFU_SERVICE_UUID, b"DFUTarg") for k in range(10)]
    (hyp,) = detect_following(dfu)
    assert hyp.evidence == "dfu-identity" and hyp.cluster_id == "identity:11:22:33:44:55:65"


def test_cluster_unregistered_and_other():
    recs = [ScanRecord(k, MAC, 0xFD59, bytes(14)) for k in range(3)] + [ScanRecord(0, MAC, 0x1111, b"")]
    (h,) = cluster_records(recs)
    assert h.record_count == 3


# --- end to end --------------------------------------------------------------

def test_harvest_scenario_log_recovers_generated_pool():
    res = run_scenario("pool_harvest", 11, {"rotations": 1000, "later_rotations": 20})
    cands = {c.flags: c for c in harvest_fmm_pools(res.scanlog)}
    assert sorted(x.hex() for x in cands[0x42].ids) == res.data["true_pool"]


def test_zero_false_negatives_on_simulated_logs():
    res = run_scenario("pool_harvest", 12, {"rotations": 300, "later_rotations": 0, "bystander": False})
    true_ids = {unhex(h) for h in res.data["true_pool"]}
    truth = FmmPool("victim", tuple(fmm.FmmPrivateId(v, 0) for v in true_ids))
    assert all(match_known_pool(r, [truth]) == "victim" for r in res.scanlog)


# --- scan-log format ---------------------------------------------------------

def test_scanlog_roundtrip():
    recs = [ScanRecord(1.5, bytes(range(6)), 0xFD69, bytes(14), -70), ScanRecord(2, b"\xff" * 6, 0xFD5A, bytes(20))]
    buf = io.StringIO()
    write_scanlog(recs, buf)
    first = buf.getvalue().splitlines()[0]
    assert '"service_uuid": "FD69"' in first and '"mac_hex": "000102030405"' in first
    assert list(read_scanlog(io.StringIO(buf.getvalue()))) == recs


def test_scanlog_skips_malformed(caplog):
    text = '{"t": 1, "mac_hex": "000000000000", "service_uuid": "FD69", "payload_hex": "00"}\nnot json\n' \
           '{"t": 2, "mac_hex": "00", "service_uuid": "FD69", "payload_hex": ""}\n\n'
    with caplog.at_level(logging.WARNING):
        recs = list(read_scanlog(io.StringIO(text)))
    assert len(recs) == 1 and len(caplog.records) == 2
    with pytest.raises(ValueError):
        list(read_scanlog(io.StringIO(text), strict=True))
