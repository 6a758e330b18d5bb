"""Cryptographic primitives shared by the FMM and SmartTag protocol code.

AES-CBC here is built from single-block AES so that the chaining and the
PKCS#7 handling are explicit; the block cipher and the curve25519 scalar
multiplication come from ``cryptography``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from random import Random

from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

BLOCK = 16
KDF_COUNTER = b"\x00\x00\x00\x01"

LABEL_AUTH = b"smartthings"
LABEL_PRIVACY = b"privacy"
LABEL_SIGNING = b"signing"


class PaddingError(ValueError):
    """Ciphertext did not decrypt to valid PKCS#7 padding."""


class LowOrderPointError(ValueError):
    """The curve25519 exchange produced the all-zero point."""


def require_len(value: bytes, n: int, what: str) -> bytes:
    value = bytes(value)
    if len(value) != n:
        raise ValueError(f"{what} must be {n} bytes, got {len(value)}")
    return value


def unhex(s: str) -> bytes:
    """Parse hex, tolerating whitespace and ``:`` separators."""
    return bytes.fromhex("".join(s.replace(":", "").split()))


def pkcs7_pad(data: bytes) -> bytes:
    n = BLOCK - len(data) % BLOCK
    return bytes(data) + bytes([n]) * n


def pkcs7_unpad(data: bytes) -> bytes:
    if not data or len(data) % BLOCK:
        raise PaddingError(f"padded length {len(data)} is not a positive multiple of {BLOCK}")
    n = data[-1]
    if not 1 <= n <= BLOCK or data[-n:] != bytes([n]) * n:
        raise PaddingError("invalid PKCS#7 padding")
    return bytes(data[:-n])


def aes_ecb_encrypt(key: bytes, block: bytes) -> bytes:
    require_len(block, BLOCK, "block")
    enc = Cipher(algorithms.AES(require_len(key, 16, "key")), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def aes_cbc_encrypt(key: bytes, iv: bytes, plaintext: bytes) -> bytes:
    """AES-128-CBC with PKCS#7 padding: ``C_j = E_k(P_j xor C_{j-1})``, ``C_-1 = IV``."""
    key = require_len(key, 16, "key")
    prev = require_len(iv, BLOCK, "iv")
    padded = pkcs7_pad(plaintext)
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    out = bytearray()
    for off in range(0, len(padded), BLOCK):
        prev = enc.update(_xor(padded[off:off + BLOCK], prev))
        out += prev
    return bytes(out)


def aes_cbc_decrypt(key: bytes, iv: bytes, ciphertext: bytes) -> bytes:
    key = require_len(key, 16, "key")
    prev = require_len(iv, BLOCK, "iv")
    if not ciphertext or len(ciphertext) % BLOCK:
        raise PaddingError(f"ciphertext length {len(ciphertext)} is not a positive multiple of {BLOCK}")
    dec = Cipher(algorithms.AES(key), modes.ECB()).decryptor()
    out = bytearray()
    for off in range(0, len(ciphertext), BLOCK):
        block = ciphertext[off:off + BLOCK]
        out += _xor(dec.update(block), prev)
        prev = block
    return pkcs7_unpad(bytes(out))


def derive_subkey(master_secret: bytes, label: bytes) -> bytes:
    """First 16 bytes of SHA256(masterSecret || 00000001 || label)."""
    ms = require_len(master_secret, 16, "masterSecret")
    return hashlib.sha256(ms + KDF_COUNTER + bytes(label)).digest()[:16]


@dataclass(frozen=True)
class DerivedKeySet:
    auth_key: bytes
    pid_key: bytes
    sign_key: bytes

    @classmethod
    def from_master(cls, master_secret: bytes) -> "DerivedKeySet":
        return cls(
            auth_key=derive_subkey(master_secret, LABEL_AUTH),
            pid_key=derive_subkey(master_secret, LABEL_PRIVACY),
            sign_key=derive_subkey(master_secret, LABEL_SIGNING),
        )


def master_secret(shared_secret: bytes) -> bytes:
    return require_len(shared_secret, 32, "shared secret")[:16]


@dataclass(frozen=True)
class Keypair25519:
    private: bytes
    public: bytes

    @classmethod
    def from_private(cls, private: bytes) -> "Keypair25519":
        sk = X25519PrivateKey.from_private_bytes(require_len(private, 32, "private key"))
        return cls(bytes(private), sk.public_key().public_bytes_raw())

    @classmethod
    def generate(cls, rng: Random) -> "Keypair25519":
        return cls.from_private(rng.randbytes(32))


def x25519(scalar: bytes, point: bytes) -> bytes:
    """Raw curve25519 scalar multiplication (RFC 7748 X25519)."""
    sk = X25519PrivateKey.from_private_bytes(require_len(scalar, 32, "scalar"))
    pk = X25519PublicKey.from_public_bytes(require_len(point, 32, "point"))
    try:
        return sk.exchange(pk)
    except ValueError as exc:
        raise LowOrderPointError("shared point is all-zero (low-order public key)") from exc


def ecdh_establish(local_private: bytes, remote_public: bytes, x: bytes) -> bytes:
    """SHA256(X25519(local, remote) || x): the registration shared secret."""
    shared = x25519(local_private, remote_public)
    if shared == bytes(32):
        raise LowOrderPointError("shared point is all-zero (low-order public key)")
    return hashlib.sha256(shared + require_len(x, 32, "session random")).digest()


# Bluetooth addresses are handled in display order: byte 0 is the most
# significant octet, as printed in "11:22:33:44:55:66".

def rpa_hash(irk: bytes, prand: bytes) -> bytes:
    """Bluetooth ``ah``: AES-ECB(IRK, 0^13 || prand) mod 2^24."""
    r = bytes(13) + require_len(prand, 3, "prand")
    return aes_ecb_encrypt(require_len(irk, 16, "IRK"), r)[-3:]


def rpa_generate(irk: bytes, prand: bytes) -> bytes:
    return bytes(prand) + rpa_hash(irk, prand)


def rpa_resolve(irk: bytes, addr: bytes) -> bool:
    addr = require_len(addr, 6, "address")
    return rpa_hash(irk, addr[:3]) == addr[3:]


def random_prand(rng: Random) -> bytes:
    """Random 24-bit prand with the resolvable-private type bits (0b01) set."""
    p = bytearray(rng.randbytes(3))
    p[0] = (p[0] & 0x3F) | 0x40
    return bytes(p)


def format_mac(addr: bytes) -> str:
    return ":".join(f"{b:02X}" for b in require_len(addr, 6, "address"))
