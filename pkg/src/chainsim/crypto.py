"""Cryptographic substrate: hashing, nonce puzzles, keys, signatures, addresses.

Everything here is a pure function of its inputs.  All randomness used
elsewhere in the package flows through :class:`HashStream`, a counter-mode
SHA-256 generator, so that entire simulation runs are reproducible from a
single integer seed.
"""

from __future__ import annotations

import hashlib
import multiprocessing
import os
import struct
from dataclasses import dataclass
from math import log

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DIGEST_SIZE = 32
ADDRESS_PAYLOAD_SIZE = 20
ADDRESS_CHECKSUM_SIZE = 4
ADDRESS_SIZE = 1 + ADDRESS_PAYLOAD_SIZE + ADDRESS_CHECKSUM_SIZE

USER_ADDRESS_VERSION = 0x00
CONTRACT_ADDRESS_VERSION = 0x01

# The hash algorithm is a named parameter so a future rule change could swap
# it out; only SHA-256 is wired in.
HASH_ALGORITHMS = {"sha256": hashlib.sha256}
DEFAULT_HASH = "sha256"


class KeystoreError(Exception):
    pass


def sha256(data: bytes, algorithm: str = DEFAULT_HASH) -> bytes:
    """FIPS 180-4 digest of ``data`` (32 bytes)."""
    try:
        ctor = HASH_ALGORITHMS[algorithm]
    except KeyError:
        raise ValueError(f"unknown hash algorithm: {algorithm!r}") from None
    return ctor(data).digest()


def sha256_hex(data: bytes) -> str:
    """Digest displayed as the usual 64-character lowercase hex string."""
    return sha256(data).hex()


# ---------------------------------------------------------------------------
# Nonce puzzles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PuzzleSolution:
    nonce: int
    digest: bytes
    attempts: int


def _meets_difficulty(digest: bytes, difficulty: int) -> bool:
    half, odd = divmod(difficulty, 2)
    if not digest.startswith(b"\x00" * half):
        return False
    return not odd or digest[half] < 0x10


def _scan(prefix: bytes, difficulty: int, start: int, stop: int):
    """First (nonce, digest) in [start, stop) meeting difficulty, else None."""
    base = hashlib.sha256(prefix)
    half, odd = divmod(difficulty, 2)
    zeros = b"\x00" * half
    for nonce in range(start, stop):
        h = base.copy()
        h.update(b"%d" % nonce)
        d = h.digest()
        if d.startswith(zeros) and (not odd or d[half] < 0x10):
            return nonce, d
    return None


def _scan_chunk(args):
    return _scan(*args)


def solve_string_puzzle(
    prefix: str,
    difficulty: int,
    start_nonce: int = 0,
    end_nonce: int | None = None,
    workers: int | None = 1,
) -> PuzzleSolution | None:
    """Scan nonces ascending until sha256(prefix + str(nonce)) has at least
    ``difficulty`` leading zero hex digits.

    The nonce is rendered as unpadded base-10 ASCII appended to ``prefix``.
    Returns None when ``end_nonce`` is exhausted.  ``workers`` > 1 shards the
    range into ordered chunks across processes; the result is always the
    lowest solving nonce in the scanned range, so sharding never changes the
    answer.
    """
    if not 0 <= difficulty <= 64:
        raise ValueError("difficulty must be in [0, 64]")
    if start_nonce < 0:
        raise ValueError("start_nonce must be non-negative")
    prefix_bytes = prefix.encode()
    stop = end_nonce if end_nonce is not None else (1 << 63)
    if workers is None:
        workers = os.cpu_count() or 1

    if workers <= 1 or (end_nonce is not None and stop - start_nonce < 200_000):
        found = _scan(prefix_bytes, difficulty, start_nonce, stop)
    else:
        found = None
        chunk = 1 << 20
        starts = range(start_nonce, stop, chunk)
        tasks = ((prefix_bytes, difficulty, s, min(s + chunk, stop)) for s in starts)
        with multiprocessing.Pool(workers) as pool:
            for result in pool.imap(_scan_chunk, tasks):
                if result is not None:
                    found = result
                    pool.terminate()
                    break

    if found is None:
        return None
    nonce, digest = found
    return PuzzleSolution(nonce=nonce, digest=digest, attempts=nonce - start_nonce + 1)


# ---------------------------------------------------------------------------
# Keys and signatures (Ed25519; deterministic by construction)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeyPair:
    seed: bytes
    public_key: bytes

    def __repr__(self) -> str:  # never leak the seed in logs
        return f"KeyPair(public_key={self.public_key.hex()})"


def keypair_generate(entropy: bytes) -> KeyPair:
    """Derive a signing key pair from a 32-byte seed.  Same seed, same pair."""
    if len(entropy) != 32:
        raise ValueError("entropy must be exactly 32 bytes")
    sk = Ed25519PrivateKey.from_private_bytes(entropy)
    pk = sk.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return KeyPair(seed=entropy, public_key=pk)


def sign(keypair: KeyPair, message: bytes) -> bytes:
    """Sign sha256(message); deterministic for a given (seed, message)."""
    sk = Ed25519PrivateKey.from_private_bytes(keypair.seed)
    return sk.sign(sha256(message))


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff ``signature`` is valid for (public_key, message).

    Malformed keys or signatures verify false rather than raising.
    """
    try:
        pk = Ed25519PublicKey.from_public_bytes(public_key)
        pk.verify(signature, sha256(message))
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False


# ---------------------------------------------------------------------------
# Addresses
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Address:
    """version byte + 20-byte truncated key hash + 4-byte checksum."""

    version: int
    payload: bytes
    checksum: bytes

    @classmethod
    def make(cls, version: int, payload: bytes) -> "Address":
        if len(payload) != ADDRESS_PAYLOAD_SIZE:
            raise ValueError("payload must be 20 bytes")
        checksum = sha256(bytes([version]) + payload)[:ADDRESS_CHECKSUM_SIZE]
        return cls(version=version, payload=payload, checksum=checksum)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Address":
        if len(raw) != ADDRESS_SIZE:
            raise ValueError(f"address must be {ADDRESS_SIZE} bytes")
        addr = cls(version=raw[0], payload=raw[1:21], checksum=raw[21:])
        if not addr.checksum_ok():
            raise ValueError("address checksum mismatch")
        return addr

    @classmethod
    def from_hex(cls, text: str) -> "Address":
        return cls.from_bytes(bytes.fromhex(text.removeprefix("0x")))

    def to_bytes(self) -> bytes:
        return bytes([self.version]) + self.payload + self.checksum

    def hex(self) -> str:
        return self.to_bytes().hex()

    def checksum_ok(self) -> bool:
        expect = sha256(bytes([self.version]) + self.payload)[:ADDRESS_CHECKSUM_SIZE]
        return self.checksum == expect

    def __str__(self) -> str:
        return self.hex()


def derive_address(public_key: bytes, version: int = USER_ADDRESS_VERSION) -> Address:
    """public key -> sha256 -> first 20 bytes, wrapped with version+checksum."""
    return Address.make(version, sha256(public_key)[:ADDRESS_PAYLOAD_SIZE])


# ---------------------------------------------------------------------------
# Deterministic randomness
# ---------------------------------------------------------------------------


class HashStream:
    """Counter-mode SHA-256 random stream: sha256(seed || tag || counter).

    Each (seed, tag) pair is an independent stream; no OS entropy is ever
    consumed, so any consumer seeded this way replays identically.
    """

    def __init__(self, seed: int | bytes, tag: str | bytes = ""):
        if isinstance(seed, int):
            seed = seed.to_bytes(8, "big", signed=False)
        if isinstance(tag, str):
            tag = tag.encode()
        self._prefix = seed + tag
        self._counter = 0

    def u64(self) -> int:
        block = sha256(self._prefix + struct.pack(">Q", self._counter))
        self._counter += 1
        return int.from_bytes(block[:8], "big")

    def random(self) -> float:
        """Uniform float in [0, 1)."""
        return self.u64() / 2**64

    def randrange(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randrange bound must be positive")
        return self.u64() % n

    def expovariate(self, mean: float) -> float:
        """Exponential deviate with the given mean."""
        u = self.random()
        return -mean * log(1.0 - u)

    def bytes(self, n: int = 32) -> bytes:
        out = b""
        while len(out) < n:
            out += sha256(self._prefix + struct.pack(">Q", self._counter))
            self._counter += 1
        return out[:n]


def uniform_from_digest(data: bytes) -> float:
    """Map arbitrary bytes to a uniform float in [0, 1) via one hash."""
    return int.from_bytes(sha256(data)[:8], "big") / 2**64


# ---------------------------------------------------------------------------
# Key store
# ---------------------------------------------------------------------------

KEYSTORE_FORMAT_VERSION = 1


@dataclass
class KeystoreRecord:
    seed: bytes
    address_version: int
    label: str


def save_keystore(path, records: list[KeystoreRecord]) -> None:
    """Plaintext key store: format byte, record count, then records."""
    out = bytearray([KEYSTORE_FORMAT_VERSION])
    out += struct.pack(">I", len(records))
    for rec in records:
        out += struct.pack(">I", len(rec.seed)) + rec.seed
        out.append(rec.address_version)
        label = rec.label.encode()
        out += struct.pack(">I", len(label)) + label
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(out))
    os.replace(tmp, path)


def load_keystore(path) -> list[KeystoreRecord]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw or raw[0] != KEYSTORE_FORMAT_VERSION:
        raise KeystoreError("unsupported key store format")
    (count,) = struct.unpack_from(">I", raw, 1)
    offset = 5
    records = []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from(">I", raw, offset)
            offset += 4
            seed = raw[offset : offset + n]
            if len(seed) != n:
                raise KeystoreError(f"truncated key store at offset {offset}")
            offset += n
            version = raw[offset]
            offset += 1
            (m,) = struct.unpack_from(">I", raw, offset)
            offset += 4
            label = raw[offset : offset + m].decode()
            offset += m
            records.append(KeystoreRecord(seed=seed, address_version=version, label=label))
    except (struct.error, IndexError):
        raise KeystoreError(f"truncated key store at offset {offset}") from None
    return records
