import json
from random import Random

import pytest
from hypothesis import given, strategies as st

import oracles
from ofkit import fmm
from ofkit.crypto import unhex
from ofkit.fmm import (AmbiguousMatch, FmmAdvertisement, FmmPool, PrivateIdConfig, fmm_decode_adv,
                       fmm_encode_adv, fmm_match, fmm_pool, fmm_preimage, fmm_private_id)

keys = st.binary(min_size=16, max_size=16)


def test_standard_iv():
    assert fmm.STANDARD_IV.hex() == "f8800109fbc16472581547a4f2fa771a"


def test_preimage_layout():
    key = bytes(range(16))
    assert fmm_preimage(key, 1) == b"\x00\x01" + key + b"\x00\x01"
    assert fmm_preimage(key, 0x1234) == b"\x12\x34" + key + b"\x12\x34"
    assert fmm_preimage(key, 51)[18:] == b"\x00\x33"


def test_private_id_known_value():
    cfg = PrivateIdConfig(b"\x11" * 16)
    assert fmm_private_id(cfg, 1).value.hex() == "f0c2a282b53d9bf7f1cf0d9d"


def test_private_id_matches_oracle():
    rng = Random(2)
    for _ in range(20):
        cfg = PrivateIdConfig(rng.randbytes(16))
        i = rng.randint(1, 51)
        expected = oracles.cbc_encrypt(cfg.secret_key, fmm.STANDARD_IV, fmm_preimage(cfg.secret_key, i))[:12]
        assert fmm_private_id(cfg, i).value == expected


@pytest.mark.parametrize("i", [0, 52, -1])
def test_private_id_index_range(i):
    with pytest.raises(IndexError):
        fmm_private_id(PrivateIdConfig(bytes(16)), i)


@given(keys)
def test_pool_size_and_distinct(key):
    pool = fmm_pool(PrivateIdConfig(key))
    values = [p.value for p in pool.ids]
    assert len(values) == 51 and len(set(values)) == 51
    assert all(len(v) == 12 for v in values)
    assert [p.index for p in pool.ids] == list(range(1, 52))


@given(keys, st.integers(1, 51), st.binary(min_size=2, max_size=2))
def test_trailing_preimage_bytes_do_not_matter(key, i, tail):
    pre = fmm_preimage(key, i)
    a = oracles.cbc_encrypt(key, fmm.STANDARD_IV, pre)[:12]
    b = oracles.cbc_encrypt(key, fmm.STANDARD_IV, pre[:18] + tail)[:12]
    assert a == b == fmm_private_id(PrivateIdConfig(key), i).value


def test_config_json_roundtrip():
    cfg = PrivateIdConfig(bytes(range(16)))
    obj = cfg.to_json()
    assert obj["iv_b64"] == "+IABCfvBZHJYFUek8vp3Gg=="
    assert PrivateIdConfig.from_json(json.loads(json.dumps(obj))) == cfg


def test_config_rejects_bad_lengths():
    with pytest.raises(ValueError):
        PrivateIdConfig(bytes(15))
    with pytest.raises(ValueError):
        PrivateIdConfig(bytes(16), iv=bytes(8))


def test_load_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"secret_key_hex": "11" * 16}))
    cfg = fmm.load_config(path)
    assert cfg.iv == fmm.STANDARD_IV and cfg.pool_size == 51


@given(st.integers(0, 255), st.binary(min_size=12, max_size=12), st.integers(0, 255))
def test_adv_roundtrip(op, pid, flags):
    adv = FmmAdvertisement(op, pid, flags)
    raw = fmm_encode_adv(adv)
    assert len(raw) == 14 and raw[1:13] == pid and raw[13] == flags
    assert fmm_decode_adv(raw) == adv
    assert FmmAdvertisement.from_json(adv.to_json()) == adv


@pytest.mark.parametrize("n", [0, 13, 15, 20])
def test_adv_decode_wrong_length(n):
    with pytest.raises(ValueError):
        fmm_decode_adv(bytes(n))


def test_match_by_construction():
    pool = fmm_pool(PrivateIdConfig(b"\x05" * 16), "dev-a")
    adv = FmmAdvertisement(0, pool.ids[6].value, 0x42)
    assert fmm_match(adv, [pool]) == ("dev-a", 7)
    assert fmm_match(adv, []) is None


def test_match_random_ids_miss():
    rng = Random(9)
    pools = [fmm_pool(PrivateIdConfig(rng.randbytes(16)), f"d{i}") for i in range(10)]
    hits = sum(fmm_match(FmmAdvertisement(0, rng.randbytes(12), 0), pools) is not None for _ in range(10_000))
    assert hits == 0


def test_match_ambiguous():
    pool = fmm_pool(PrivateIdConfig(b"\x05" * 16), "a")
    twin = FmmPool("b", pool.ids)
    with pytest.raises(AmbiguousMatch):
        fmm_match(FmmAdvertisement(0, pool.ids[0].value, 0), [pool, twin])


def test_rotation_draws_only_from_pool():
    from ofkit.sim.world import FmmLostDevice
    cfg = PrivateIdConfig(Random(4).randbytes(16))
    pool = fmm_pool(cfg)
    dev = FmmLostDevice("d", cfg, 0x42, (0.0, 0.0), Random(4))
    for _ in range(10_000):
        dev.rotate()
        assert fmm_decode_adv(dev.payload()).private_id in pool


def test_coupon_collector_1000_rotations():
    # P(miss any of 51 after 1000 uniform draws) <= 51 * (50/51)^1000 ~ 1e-7
    incomplete = 0
    for seed in range(200):
        rng = Random(seed)
        if len({rng.randint(1, 51) for _ in range(1000)}) < 51:
            incomplete += 1
    assert incomplete == 0
    assert 51 * (50 / 51) ** 1000 < 1e-6


def test_hex_ids_and_index_of():
    pool = fmm_pool(PrivateIdConfig(bytes(16)))
    assert pool.index_of(unhex(pool.hex_ids()[10])) == 11
    assert pool.index_of(bytes(12)) is None
    assert len(pool) == 51
