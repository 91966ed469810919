"""Authenticated confidential channel for key-release traffic.

Key material never crosses a connection in the clear: both ends run an
ephemeral X25519 exchange and derive a channel key that also binds the
caller's bearer secret (session token or sandbox capability token).  An
active intermediary that does not hold the bearer secret cannot derive
the channel key, so the construction gives mutual authentication plus
confidentiality — the role client-certificate TLS plays in a full
deployment.

Application records are length-prefixed JSON documents (4-byte big-endian
length + UTF-8 text), sealed with AES-256-GCM under the channel key with
a direction tag in the associated data.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import os
import struct
import threading
import time
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import ChannelError
from .util import new_id128

_INFO = b"vaultbench-channel-v1"
_CHANNEL_TTL_S = 600.0


def _derive_key(shared: bytes, bearer: str, client_pub: bytes, server_pub: bytes) -> bytes:
    salt = hashlib.sha256(bearer.encode()).digest()
    return HKDF(algorithm=SHA256(), length=32, salt=salt, info=_INFO + client_pub + server_pub).derive(shared)


def _server_proof(channel_key: bytes, channel_id: str) -> bytes:
    return hmac.new(channel_key, b"server-confirm" + channel_id.encode(), hashlib.sha256).digest()


def _frame(record: dict) -> bytes:
    text = json.dumps(record, separators=(",", ":")).encode()
    return struct.pack(">I", len(text)) + text


def _unframe(data: bytes) -> dict:
    if len(data) < 4:
        raise ChannelError("truncated channel record")
    (length,) = struct.unpack(">I", data[:4])
    if len(data) != 4 + length:
        raise ChannelError("channel record length mismatch")
    return json.loads(data[4 : 4 + length].decode())


def _seal(key: bytes, record: dict, aad: bytes) -> tuple[bytes, bytes]:
    nonce = os.urandom(12)
    return nonce, AESGCM(key).encrypt(nonce, _frame(record), aad)


def _open(key: bytes, nonce: bytes, sealed: bytes, aad: bytes) -> dict:
    try:
        return _unframe(AESGCM(key).decrypt(nonce, sealed, aad))
    except InvalidTag as exc:
        raise ChannelError("sealed channel record failed authentication") from exc


@dataclass
class _ServerChannel:
    key: bytes
    peer_id: str
    opened_at: float


class ChannelServer:
    """Coordinator-side channel endpoint.

    The caller is responsible for resolving the bearer secret to a
    principal before invoking :meth:`open` — the channel then proves the
    peer holds that secret.
    """

    def __init__(self) -> None:
        self._channels: dict[str, _ServerChannel] = {}
        self._lock = threading.Lock()

    def open(self, client_pub_b64: str, bearer: str, peer_id: str) -> dict:
        self._prune()
        client_pub = base64.b64decode(client_pub_b64)
        server_priv = X25519PrivateKey.generate()
        server_pub = server_priv.public_key().public_bytes_raw()
        shared = server_priv.exchange(X25519PublicKey.from_public_bytes(client_pub))
        key = _derive_key(shared, bearer, client_pub, server_pub)
        channel_id = new_id128()
        with self._lock:
            self._channels[channel_id] = _ServerChannel(key, peer_id, time.monotonic())
        return {
            "channel_id": channel_id,
            "server_pub_b64": base64.b64encode(server_pub).decode(),
            "proof_b64": base64.b64encode(_server_proof(key, channel_id)).decode(),
        }

    def receive(self, channel_id: str, nonce_b64: str, sealed_b64: str) -> tuple[str, dict]:
        channel = self._get(channel_id)
        record = _open(
            channel.key,
            base64.b64decode(nonce_b64),
            base64.b64decode(sealed_b64),
            channel_id.encode() + b"|c2s",
        )
        return channel.peer_id, record

    def respond(self, channel_id: str, record: dict) -> dict:
        channel = self._get(channel_id)
        nonce, sealed = _seal(channel.key, record, channel_id.encode() + b"|s2c")
        return {
            "nonce_b64": base64.b64encode(nonce).decode(),
            "sealed_b64": base64.b64encode(sealed).decode(),
        }

    def _get(self, channel_id: str) -> _ServerChannel:
        with self._lock:
            channel = self._channels.get(channel_id)
        if channel is None:
            raise ChannelError(f"unknown or expired channel {channel_id}")
        return channel

    def _prune(self) -> None:
        cutoff = time.monotonic() - _CHANNEL_TTL_S
        with self._lock:
            stale = [cid for cid, ch in self._channels.items() if ch.opened_at < cutoff]
            for cid in stale:
                del self._channels[cid]


class ChannelClient:
    """Client half; ``transport`` posts a JSON body to the open/message
    endpoints and returns the parsed JSON response."""

    def __init__(self, bearer: str, open_fn, message_fn):
        self._bearer = bearer
        self._open_fn = open_fn
        self._message_fn = message_fn
        self._channel_id: str | None = None
        self._key: bytes | None = None

    def ensure_open(self) -> None:
        if self._channel_id is not None:
            return
        priv = X25519PrivateKey.generate()
        client_pub = priv.public_key().public_bytes_raw()
        reply = self._open_fn({"client_pub_b64": base64.b64encode(client_pub).decode()})
        server_pub = base64.b64decode(reply["server_pub_b64"])
        shared = priv.exchange(X25519PublicKey.from_public_bytes(server_pub))
        key = _derive_key(shared, self._bearer, client_pub, server_pub)
        channel_id = reply["channel_id"]
        expected = _server_proof(key, channel_id)
        if not hmac.compare_digest(expected, base64.b64decode(reply["proof_b64"])):
            raise ChannelError("server failed channel authentication")
        self._channel_id = channel_id
        self._key = key

    def exchange(self, record: dict) -> dict:
        """Sends one sealed record and opens the sealed response."""
        self.ensure_open()
        assert self._channel_id is not None and self._key is not None
        nonce, sealed = _seal(self._key, record, self._channel_id.encode() + b"|c2s")
        reply = self._message_fn(
            {
                "channel_id": self._channel_id,
                "nonce_b64": base64.b64encode(nonce).decode(),
                "sealed_b64": base64.b64encode(sealed).decode(),
            }
        )
        return _open(
            self._key,
            base64.b64decode(reply["nonce_b64"]),
            base64.b64decode(reply["sealed_b64"]),
            self._channel_id.encode() + b"|s2c",
        )
