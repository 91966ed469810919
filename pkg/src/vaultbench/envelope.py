"""Authenticated ciphertext container for datasets and results.

Binary layout (bit-exact, all integers big-endian):

    magic "ICRS" (4) | version 0x01 (1) | key_id (16) | nonce (12) |
    plaintext_length (8) | plaintext_digest (32) | ciphertext||tag

The payload is AES-256-GCM with a 96-bit random nonce and a 128-bit tag.
``plaintext_digest`` is the SHA-256 of the plaintext, computed before
encryption; it gives an end-to-end integrity check that survives
re-wrapping and a cheap equality oracle in tests.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import IntegrityError, NotAnEnvelopeError, WrongKeyError

MAGIC = b"ICRS"
VERSION = 1
NONCE_LEN = 12
KEY_ID_LEN = 16
TAG_LEN = 16
HEADER_LEN = 4 + 1 + KEY_ID_LEN + NONCE_LEN + 8 + 32  # 73 bytes


@dataclass(frozen=True)
class EncryptedEnvelope:
    version: int
    key_id: bytes
    nonce: bytes
    plaintext_length: int
    plaintext_digest: bytes
    ciphertext_and_tag: bytes

    def encode(self) -> bytes:
        return (
            MAGIC
            + bytes([self.version])
            + self.key_id
            + self.nonce
            + struct.pack(">Q", self.plaintext_length)
            + self.plaintext_digest
            + self.ciphertext_and_tag
        )


def is_envelope(data: bytes) -> bool:
    return data[:4] == MAGIC


def decode(data: bytes) -> EncryptedEnvelope:
    """Parses the binary layout; raises not-an-envelope / integrity-failure."""
    if len(data) < HEADER_LEN or data[:4] != MAGIC:
        raise NotAnEnvelopeError("payload does not start with the envelope magic")
    version = data[4]
    if version != VERSION:
        raise IntegrityError(f"unsupported envelope version {version}")
    offset = 5
    key_id = data[offset : offset + KEY_ID_LEN]
    offset += KEY_ID_LEN
    nonce = data[offset : offset + NONCE_LEN]
    offset += NONCE_LEN
    (plaintext_length,) = struct.unpack(">Q", data[offset : offset + 8])
    offset += 8
    digest = data[offset : offset + 32]
    offset += 32
    body = data[offset:]
    if len(body) < TAG_LEN or len(body) != plaintext_length + TAG_LEN:
        raise IntegrityError("envelope body length does not match header")
    return EncryptedEnvelope(version, key_id, nonce, plaintext_length, digest, body)


def read_header(data: bytes) -> EncryptedEnvelope:
    """Header-only parse (no body-length check); for key_id lookups."""
    if len(data) < HEADER_LEN or data[:4] != MAGIC:
        raise NotAnEnvelopeError("payload does not start with the envelope magic")
    version = data[4]
    if version != VERSION:
        raise IntegrityError(f"unsupported envelope version {version}")
    key_id = data[5 : 5 + KEY_ID_LEN]
    nonce = data[21 : 21 + NONCE_LEN]
    (plaintext_length,) = struct.unpack(">Q", data[33:41])
    digest = data[41:73]
    return EncryptedEnvelope(version, key_id, nonce, plaintext_length, digest, b"")


def seal(key_bytes: bytes, key_id: bytes, plaintext: bytes, nonce: bytes | None = None) -> bytes:
    """Encrypts ``plaintext`` and returns the encoded envelope.

    ``nonce`` is generated fresh from the OS random source unless a fixed
    value is supplied (known-answer tests only).
    """
    if len(key_bytes) != 32:
        raise ValueError("key must be exactly 32 bytes")
    if len(key_id) != KEY_ID_LEN:
        raise ValueError("key_id must be exactly 16 bytes")
    if nonce is None:
        nonce = os.urandom(NONCE_LEN)
    if len(nonce) != NONCE_LEN:
        raise ValueError("nonce must be exactly 12 bytes")
    digest = hashlib.sha256(plaintext).digest()
    body = AESGCM(key_bytes).encrypt(nonce, plaintext, None)
    env = EncryptedEnvelope(VERSION, key_id, nonce, len(plaintext), digest, body)
    return env.encode()


def unseal(data: bytes, key_bytes: bytes, key_id: bytes) -> bytes:
    """Decrypts an encoded envelope.

    Plaintext is returned only if the authentication tag verifies *and*
    the recovered plaintext hashes to ``plaintext_digest``.
    """
    env = decode(data)
    if env.key_id != key_id:
        raise WrongKeyError("envelope was sealed under a different key")
    try:
        plaintext = AESGCM(key_bytes).decrypt(env.nonce, env.ciphertext_and_tag, None)
    except InvalidTag as exc:
        raise IntegrityError("authentication tag verification failed") from exc
    if len(plaintext) != env.plaintext_length:
        raise IntegrityError("plaintext length does not match header")
    if hashlib.sha256(plaintext).digest() != env.plaintext_digest:
        raise IntegrityError("plaintext digest does not match header")
    return plaintext
