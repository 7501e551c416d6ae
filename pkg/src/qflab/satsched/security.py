"""Simulated QKD key agreement and authenticated model envelopes.

The envelope cipher is an HMAC-SHA256 keystream XOR with an HMAC-SHA256 tag
over (key id, nonce, ciphertext).  It models authenticated-encryption
behaviour for protocol tests and is not a vetted cipher construction.
"""
from __future__ import annotations

import hashlib
import hmac
import struct
import zlib
from dataclasses import dataclass

import numpy as np

QBER_ABORT_THRESHOLD = 0.11
NONCE_BYTES = 12
TAG_BYTES = 32
KEY_BYTES = 32


class EavesdropDetected(RuntimeError):
    def __init__(self, link: str, qber: float, threshold: float):
        super().__init__(f"QKD on {link} aborted: estimated error rate {qber:.3f} > {threshold}")
        self.link, self.qber, self.threshold = link, qber, threshold


class AuthenticationError(ValueError):
    pass


@dataclass(frozen=True)
class KeyMaterial:
    key_id: str
    key: bytes
    established_at: float = 0.0
    qber: float = 0.0


def link_name(a: str, b: str) -> str:
    return "|".join(sorted((a, b)))


def _bits_to_bytes(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8)).tobytes()


def _derive_key(link: str, seed: int, bits: np.ndarray) -> bytes:
    link_seed = struct.pack(">Q", seed & 0xFFFFFFFFFFFFFFFF) + link.encode()
    return hmac.new(link_seed, b"qkd-key" + _bits_to_bytes(bits), hashlib.sha256).digest()


def qkd_establish(link: str, flip_rate: float, seed: int, t: float = 0.0, n_raw: int = 1024,
                  check_fraction: float = 0.25, threshold: float = QBER_ABORT_THRESHOLD) -> KeyMaterial:
    """Prepare-and-measure key exchange with an intercepting adversary.

    Sender and receiver pick random bits and bases; positions with matching
    bases are kept.  The adversary flips each kept bit with probability
    ``flip_rate``.  A random ``check_fraction`` of kept bits is disclosed to
    estimate the error rate; above ``threshold`` the session aborts with
    :class:`EavesdropDetected`.  Otherwise the receiver's remaining bits are
    reconciled and both ends hash them into the same key.
    """
    if not 0.0 <= flip_rate <= 1.0:
        raise ValueError("flip_rate must lie in [0, 1]")
    rng = np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(link.encode())])
    alice_bits = rng.integers(0, 2, n_raw)
    alice_basis = rng.integers(0, 2, n_raw)
    bob_basis = rng.integers(0, 2, n_raw)
    kept = alice_basis == bob_basis
    sent = alice_bits[kept]
    flips = rng.random(sent.size) < flip_rate
    received = sent ^ flips.astype(sent.dtype)

    n_check = max(1, int(round(check_fraction * sent.size)))
    check = np.zeros(sent.size, dtype=bool)
    check[rng.choice(sent.size, n_check, replace=False)] = True
    qber = float(np.mean(sent[check] != received[check]))
    if qber > threshold:
        raise EavesdropDetected(link, qber, threshold)

    alice_key_bits = sent[~check]
    bob_key_bits = received[~check].copy()
    # error correction is abstracted: mismatches are repaired in place
    bob_key_bits[bob_key_bits != alice_key_bits] = alice_key_bits[bob_key_bits != alice_key_bits]
    alice_key = _derive_key(link, seed, alice_key_bits)
    bob_key = _derive_key(link, seed, bob_key_bits)
    if alice_key != bob_key:
        raise RuntimeError("key reconciliation failed")
    key_id = hashlib.sha256(b"id" + alice_key).hexdigest()[:16]
    return KeyMaterial(key_id=f"{link}#{key_id}", key=alice_key, established_at=t, qber=qber)


@dataclass(frozen=True)
class Envelope:
    key_id: str
    nonce: bytes
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        kid = self.key_id.encode()
        return (struct.pack(">H", len(kid)) + kid + self.nonce
                + struct.pack(">I", len(self.ciphertext)) + self.ciphertext + self.tag)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Envelope":
        try:
            (n_kid,) = struct.unpack_from(">H", blob, 0)
            i = 2
            kid = blob[i:i + n_kid].decode()
            i += n_kid
            nonce = blob[i:i + NONCE_BYTES]
            i += NONCE_BYTES
            (n_ct,) = struct.unpack_from(">I", blob, i)
            i += 4
            ct = blob[i:i + n_ct]
            i += n_ct
            tag = blob[i:]
        except (struct.error, UnicodeDecodeError) as exc:
            raise AuthenticationError(f"malformed envelope: {exc}") from exc
        if len(nonce) != NONCE_BYTES or len(ct) != n_ct or len(tag) != TAG_BYTES:
            raise AuthenticationError("malformed envelope")
        return cls(kid, nonce, ct, tag)


def _subkey(key: KeyMaterial, label: bytes) -> bytes:
    return hmac.new(key.key, label, hashlib.sha256).digest()


def _keystream(enc_key: bytes, nonce: bytes, n: int) -> bytes:
    blocks = []
    for counter in range((n + 31) // 32):
        blocks.append(hmac.new(enc_key, nonce + struct.pack(">Q", counter), hashlib.sha256).digest())
    return b"".join(blocks)[:n]


def _xor(data: bytes, stream: bytes) -> bytes:
    n = len(data)
    return (int.from_bytes(data, "big") ^ int.from_bytes(stream, "big")).to_bytes(n, "big")


def _tag(key: KeyMaterial, key_id: str, nonce: bytes, ciphertext: bytes) -> bytes:
    msg = key_id.encode() + b"\x00" + nonce + ciphertext
    return hmac.new(_subkey(key, b"mac"), msg, hashlib.sha256).digest()


def seal(key: KeyMaterial, payload: bytes, nonce: bytes) -> Envelope:
    if len(nonce) != NONCE_BYTES:
        raise ValueError(f"nonce must be {NONCE_BYTES} bytes")
    stream = _keystream(_subkey(key, b"enc"), nonce, len(payload))
    ct = _xor(payload, stream)
    return Envelope(key.key_id, nonce, ct, _tag(key, key.key_id, nonce, ct))


def open_envelope(key: KeyMaterial, envelope: Envelope) -> bytes:
    if envelope.key_id != key.key_id:
        raise AuthenticationError("envelope was sealed under a different key")
    expected = _tag(key, envelope.key_id, envelope.nonce, envelope.ciphertext)
    if not hmac.compare_digest(expected, envelope.tag):
        raise AuthenticationError("authentication tag mismatch")
    stream = _keystream(_subkey(key, b"enc"), envelope.nonce, len(envelope.ciphertext))
    return _xor(envelope.ciphertext, stream)


def make_nonce(*parts) -> bytes:
    """Deterministic per-transfer nonce from identifying fields."""
    text = "/".join(str(p) for p in parts).encode()
    return hashlib.sha256(b"nonce" + text).digest()[:NONCE_BYTES]
