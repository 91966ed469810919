"""Key registry, sharing agreements, and the agreement-gated key release.

The coordinator is the key authority: dataset keys are generated here,
held in a registry persisted only in sealed form (wrapped under a local
master key), and handed out exclusively through :meth:`KeyService.release_key`,
which enforces the sharing-agreement policy and appends one audit entry
per request regardless of outcome.
"""

from __future__ import annotations

import base64
import json
import os
import threading
from dataclasses import dataclass
from typing import Callable, Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import EntropyUnavailableError, NotActiveError, NotOwnerError, VaultbenchError
from .util import atomic_write, new_id128, now_ms

AGREEMENT_ACTIVE = "active"
AGREEMENT_REVOKED = "revoked"
AGREEMENT_EXPIRED = "expired"

DENIED_NO_AGREEMENT = "denied-no-agreement"
DENIED_REVOKED = "denied-revoked"
DENIED_EXPIRED = "denied-expired"
DENIED_UNAUTHENTICATED = "denied-unauthenticated"


@dataclass(frozen=True)
class SymmetricKey:
    key_id: bytes  # 16 bytes
    key_bytes: bytes  # 32 bytes, never serialized in the clear
    owner_id: str
    created_at_ms: int

    def __repr__(self) -> str:  # key material must never reach logs
        return f"SymmetricKey(key_id={self.key_id.hex()}, owner={self.owner_id!r})"


@dataclass
class SharingAgreement:
    agreement_id: str
    dataset_id: str
    provider_id: str
    consumer_id: str
    granted_at_ms: int
    expires_at_ms: int
    status: str = AGREEMENT_ACTIVE

    def to_record(self) -> dict:
        return {
            "agreement_id": self.agreement_id,
            "dataset_id": self.dataset_id,
            "provider_id": self.provider_id,
            "consumer_id": self.consumer_id,
            "granted_at_ms": self.granted_at_ms,
            "expires_at_ms": self.expires_at_ms,
            "status": self.status,
        }


@dataclass(frozen=True)
class ChannelContext:
    """What the transport layer proved about the requesting peer."""

    peer_id: Optional[str]
    authenticated: bool
    confidential: bool


@dataclass(frozen=True)
class KeyReleaseRequest:
    key_id: bytes
    requester_id: str
    agreement_id: Optional[str]
    request_nonce: bytes  # 16 bytes

    def to_record(self) -> dict:
        return {
            "key_id": self.key_id.hex(),
            "requester_id": self.requester_id,
            "agreement_id": self.agreement_id,
            "request_nonce": self.request_nonce.hex(),
        }

    @classmethod
    def from_record(cls, record: dict) -> "KeyReleaseRequest":
        return cls(
            key_id=bytes.fromhex(record["key_id"]),
            requester_id=record["requester_id"],
            agreement_id=record.get("agreement_id"),
            request_nonce=bytes.fromhex(record["request_nonce"]),
        )


@dataclass(frozen=True)
class KeyReleaseResponse:
    request_nonce: bytes
    granted: bool
    key_bytes: Optional[bytes] = None  # present only on grant, in-channel only
    denial_reason: Optional[str] = None

    def to_record(self) -> dict:
        record = {
            "request_nonce": self.request_nonce.hex(),
            "granted": self.granted,
        }
        if self.granted:
            record["key_b64"] = base64.b64encode(self.key_bytes or b"").decode()
        else:
            record["denial_reason"] = self.denial_reason
        return record

    @classmethod
    def from_record(cls, record: dict) -> "KeyReleaseResponse":
        if record.get("granted"):
            return cls(
                request_nonce=bytes.fromhex(record["request_nonce"]),
                granted=True,
                key_bytes=base64.b64decode(record["key_b64"]),
            )
        return cls(
            request_nonce=bytes.fromhex(record["request_nonce"]),
            granted=False,
            denial_reason=record.get("denial_reason"),
        )


@dataclass(frozen=True)
class AuditEntry:
    timestamp_ms: int
    requester_id: str
    key_id: str
    agreement_id: Optional[str]
    outcome: str  # granted | denied
    reason: str


class KeyService:
    """Encryption/decryption authority: keys, agreements, audited release.

    ``dataset_owner`` resolves a dataset_id to its owning principal (wired
    to the catalogue by the coordinator); ``dataset_key`` resolves a
    dataset_id to the key_id its envelope was sealed under.
    """

    def __init__(
        self,
        state_dir: str,
        dataset_owner: Callable[[str], Optional[str]],
        dataset_key: Callable[[str], Optional[bytes]],
    ):
        self._lock = threading.RLock()
        self._state_dir = state_dir
        self._dataset_owner = dataset_owner
        self._dataset_key = dataset_key
        self._keys: dict[bytes, SymmetricKey] = {}
        self._agreements: dict[str, SharingAgreement] = {}
        self._audit: list[AuditEntry] = []
        os.makedirs(state_dir, exist_ok=True)
        self._master_path = os.path.join(state_dir, "master.key")
        self._keystore_path = os.path.join(state_dir, "keystore.sealed")
        self._agreements_path = os.path.join(state_dir, "agreements.jsonl")
        self._audit_path = os.path.join(state_dir, "audit.jsonl")
        self._master = self._load_or_create_master()
        self._load_keystore()
        self._load_agreements()
        self._load_audit()

    # -- persistence ---------------------------------------------------------

    def _load_or_create_master(self) -> bytes:
        if os.path.exists(self._master_path):
            with open(self._master_path, "rb") as fh:
                return bytes.fromhex(fh.read().decode().strip())
        master = os.urandom(32)
        atomic_write(self._master_path, master.hex().encode())
        os.chmod(self._master_path, 0o600)
        return master

    def _load_keystore(self) -> None:
        if not os.path.exists(self._keystore_path):
            return
        with open(self._keystore_path, "rb") as fh:
            blob = fh.read()
        nonce, sealed = blob[:12], blob[12:]
        try:
            raw = AESGCM(self._master).decrypt(nonce, sealed, b"keystore-v1")
        except InvalidTag as exc:
            raise VaultbenchError("keystore is corrupt or master key mismatch") from exc
        for record in json.loads(raw.decode()):
            key = SymmetricKey(
                key_id=bytes.fromhex(record["key_id"]),
                key_bytes=base64.b64decode(record["key_b64"]),
                owner_id=record["owner_id"],
                created_at_ms=record["created_at_ms"],
            )
            self._keys[key.key_id] = key

    def _save_keystore(self) -> None:
        records = [
            {
                "key_id": key.key_id.hex(),
                "key_b64": base64.b64encode(key.key_bytes).decode(),
                "owner_id": key.owner_id,
                "created_at_ms": key.created_at_ms,
            }
            for key in self._keys.values()
        ]
        nonce = os.urandom(12)
        sealed = AESGCM(self._master).encrypt(nonce, json.dumps(records).encode(), b"keystore-v1")
        atomic_write(self._keystore_path, nonce + sealed)

    def _load_agreements(self) -> None:
        if not os.path.exists(self._agreements_path):
            return
        with open(self._agreements_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                agreement = SharingAgreement(
                    agreement_id=record["agreement_id"],
                    dataset_id=record["dataset_id"],
                    provider_id=record["provider_id"],
                    consumer_id=record["consumer_id"],
                    granted_at_ms=record["granted_at_ms"],
                    expires_at_ms=record["expires_at_ms"],
                    status=record["status"],
                )
                self._agreements[agreement.agreement_id] = agreement

    def _append_agreement_event(self, agreement: SharingAgreement) -> None:
        with open(self._agreements_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(agreement.to_record()) + "\n")

    def _load_audit(self) -> None:
        if not os.path.exists(self._audit_path):
            return
        with open(self._audit_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                self._audit.append(AuditEntry(**record))

    def _append_audit(self, entry: AuditEntry) -> None:
        self._audit.append(entry)
        with open(self._audit_path, "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "timestamp_ms": entry.timestamp_ms,
                        "requester_id": entry.requester_id,
                        "key_id": entry.key_id,
                        "agreement_id": entry.agreement_id,
                        "outcome": entry.outcome,
                        "reason": entry.reason,
                    }
                )
                + "\n"
            )

    # -- key registry ---------------------------------------------------------

    def generate_key(self, owner_id: str) -> SymmetricKey:
        """Fresh 256-bit key registered under a fresh 128-bit key_id."""
        try:
            key_id = os.urandom(16)
            key_bytes = os.urandom(32)
        except OSError as exc:
            raise EntropyUnavailableError("OS random source unavailable") from exc
        key = SymmetricKey(key_id=key_id, key_bytes=key_bytes, owner_id=owner_id, created_at_ms=now_ms())
        with self._lock:
            self._keys[key.key_id] = key
            self._save_keystore()
        return key

    def get_key_for_owner(self, key_id: bytes, owner_id: str) -> SymmetricKey:
        """Internal owner-path lookup (used by the platform on behalf of the
        key owner); external consumers go through release_key."""
        with self._lock:
            key = self._keys.get(key_id)
        if key is None or key.owner_id != owner_id:
            raise NotOwnerError("key does not exist or belongs to another principal")
        return key

    def known_key_ids(self) -> list[bytes]:
        with self._lock:
            return list(self._keys.keys())

    def known_key_material(self) -> list[bytes]:
        """Raw key bytes for leak-scanning persisted state in the
        verification harness.  Never expose through any API surface."""
        with self._lock:
            return [key.key_bytes for key in self._keys.values()]

    # -- agreements -----------------------------------------------------------

    def grant_agreement(
        self, provider_id: str, consumer_id: str, dataset_id: str, ttl_ms: int
    ) -> SharingAgreement:
        owner = self._dataset_owner(dataset_id)
        if owner is None or owner != provider_id:
            raise NotOwnerError(f"{provider_id} does not own dataset {dataset_id}")
        if ttl_ms <= 0:
            raise VaultbenchError("agreement ttl must be positive", code="out-of-range")
        granted = now_ms()
        agreement = SharingAgreement(
            agreement_id=new_id128(),
            dataset_id=dataset_id,
            provider_id=provider_id,
            consumer_id=consumer_id,
            granted_at_ms=granted,
            expires_at_ms=granted + ttl_ms,
        )
        with self._lock:
            self._agreements[agreement.agreement_id] = agreement
            self._append_agreement_event(agreement)
        return agreement

    def revoke_agreement(self, agreement_id: str, by_principal: str | None = None) -> SharingAgreement:
        with self._lock:
            agreement = self._agreements.get(agreement_id)
            if agreement is None:
                raise NotActiveError(f"unknown agreement {agreement_id}")
            if by_principal is not None and agreement.provider_id != by_principal:
                raise NotOwnerError("only the provider may revoke an agreement")
            self._refresh_expiry(agreement)
            if agreement.status != AGREEMENT_ACTIVE:
                raise NotActiveError(f"agreement is {agreement.status}, not active")
            agreement.status = AGREEMENT_REVOKED
            self._append_agreement_event(agreement)
            return agreement

    def get_agreement(self, agreement_id: str) -> Optional[SharingAgreement]:
        with self._lock:
            agreement = self._agreements.get(agreement_id)
            if agreement is not None:
                self._refresh_expiry(agreement)
            return agreement

    def list_agreements(self, principal_id: str | None = None) -> list[SharingAgreement]:
        with self._lock:
            out = []
            for agreement in self._agreements.values():
                self._refresh_expiry(agreement)
                if principal_id is None or principal_id in (
                    agreement.provider_id,
                    agreement.consumer_id,
                ):
                    out.append(agreement)
            return out

    def _refresh_expiry(self, agreement: SharingAgreement) -> None:
        if agreement.status == AGREEMENT_ACTIVE and now_ms() >= agreement.expires_at_ms:
            agreement.status = AGREEMENT_EXPIRED
            self._append_agreement_event(agreement)

    # -- release protocol -------------------------------------------------------

    def release_key(self, request: KeyReleaseRequest, channel: ChannelContext) -> KeyReleaseResponse:
        """Agreement-gated key handover.

        Key material is returned only when the channel is mutually
        authenticated and confidential, and either the requester owns the
        key or an active, unexpired agreement binds the requester as
        consumer of the dataset sealed under this key.  Every request
        appends exactly one audit entry.
        """
        outcome, reason, key = self._decide_release(request, channel)
        self._append_audit(
            AuditEntry(
                timestamp_ms=now_ms(),
                requester_id=request.requester_id,
                key_id=request.key_id.hex(),
                agreement_id=request.agreement_id,
                outcome="granted" if outcome else "denied",
                reason=reason,
            )
        )
        if outcome:
            return KeyReleaseResponse(request.request_nonce, True, key_bytes=key.key_bytes)
        return KeyReleaseResponse(request.request_nonce, False, denial_reason=reason)

    def _decide_release(
        self, request: KeyReleaseRequest, channel: ChannelContext
    ) -> tuple[bool, str, Optional[SymmetricKey]]:
        if not channel.authenticated or not channel.confidential or channel.peer_id != request.requester_id:
            return False, DENIED_UNAUTHENTICATED, None
        with self._lock:
            key = self._keys.get(request.key_id)
            if key is None:
                return False, DENIED_NO_AGREEMENT, None
            if key.owner_id == request.requester_id:
                return True, "owner-access", key
            if not request.agreement_id:
                return False, DENIED_NO_AGREEMENT, None
            agreement = self._agreements.get(request.agreement_id)
            if agreement is None:
                return False, DENIED_NO_AGREEMENT, None
            self._refresh_expiry(agreement)
            if agreement.consumer_id != request.requester_id:
                return False, DENIED_NO_AGREEMENT, None
            bound_key = self._dataset_key(agreement.dataset_id)
            if bound_key != request.key_id:
                return False, DENIED_NO_AGREEMENT, None
            if agreement.status == AGREEMENT_REVOKED:
                return False, DENIED_REVOKED, None
            if agreement.status == AGREEMENT_EXPIRED:
                return False, DENIED_EXPIRED, None
            return True, "agreement-" + agreement.agreement_id, key

    # -- audit ------------------------------------------------------------------

    def audit_entries(self) -> list[AuditEntry]:
        with self._lock:
            return list(self._audit)
