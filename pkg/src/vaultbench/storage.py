"""Encrypted object store with per-owner private spaces and the dataset
catalogue.

Objects live at ``<data_root>/spaces/<space_id>/<path>``.  Access is
gated by 256-bit bearer capability tokens compared in constant time;
every token is bound to exactly one space.  Paths under the ``datasets/``
and ``results/`` prefixes must hold envelope bytes (magic-checked on
put), which makes the plaintext-never-persisted contract mechanically
enforceable at the storage boundary.

The catalogue is metadata only — one JSON record per line in
``catalogue.jsonl`` — and never contains payload bytes.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import threading
from dataclasses import dataclass
from typing import Optional

from . import envelope
from .errors import (
    AccessDeniedError,
    DanglingEnvelopeError,
    DuplicateSpaceError,
    InvalidPathError,
    InvalidSchemaError,
    NotAnEnvelopeError,
    NotFoundError,
)
from .table import Schema, validate_schema
from .util import atomic_write, new_id128, now_ms

ENVELOPE_ONLY_PREFIXES = ("datasets/", "results/")


@dataclass(frozen=True)
class PrivateSpace:
    space_id: str
    owner_id: str
    root: str
    created_at_ms: int


@dataclass(frozen=True)
class StorageObject:
    path: str
    digest: str  # SHA-256, lowercase hex
    length: int


@dataclass
class DatasetDescriptor:
    dataset_id: str
    owner_id: str
    name: str
    schema: Schema
    row_count: int
    envelope_ref: str
    created_at_ms: int

    def to_record(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "owner_id": self.owner_id,
            "name": self.name,
            "schema": [[n, t] for n, t in self.schema],
            "row_count": self.row_count,
            "envelope_ref": self.envelope_ref,
            "created_at_ms": self.created_at_ms,
        }

    @classmethod
    def from_record(cls, record: dict) -> "DatasetDescriptor":
        return cls(
            dataset_id=record["dataset_id"],
            owner_id=record["owner_id"],
            name=record["name"],
            schema=[(n, t) for n, t in record["schema"]],
            row_count=record["row_count"],
            envelope_ref=record["envelope_ref"],
            created_at_ms=record["created_at_ms"],
        )


def _validate_relative_path(path: str) -> str:
    if not path or path.startswith("/") or "\\" in path or "\x00" in path:
        raise InvalidPathError(f"invalid object path {path!r}")
    segments = path.split("/")
    if any(segment in ("", ".", "..") for segment in segments):
        raise InvalidPathError(f"path {path!r} escapes its namespace")
    return path


class ObjectStore:
    """Namespace-per-owner object store with capability-token access.

    Space tokens are derived from a store-local secret with HMAC-SHA256,
    so they survive a coordinator restart without any token ever being
    written to disk.
    """

    def __init__(self, data_root: str):
        self._data_root = data_root
        self._spaces_dir = os.path.join(data_root, "spaces")
        self._registry_path = os.path.join(data_root, "spaces.jsonl")
        self._secret_path = os.path.join(data_root, "store.secret")
        self._lock = threading.RLock()
        self._spaces: dict[str, PrivateSpace] = {}
        self._by_owner: dict[str, str] = {}
        os.makedirs(self._spaces_dir, exist_ok=True)
        self._secret = self._load_or_create_secret()
        self._load_registry()

    def _load_or_create_secret(self) -> bytes:
        if os.path.exists(self._secret_path):
            with open(self._secret_path, "rb") as fh:
                return bytes.fromhex(fh.read().decode().strip())
        secret = os.urandom(32)
        atomic_write(self._secret_path, secret.hex().encode())
        os.chmod(self._secret_path, 0o600)
        return secret

    def _load_registry(self) -> None:
        if not os.path.exists(self._registry_path):
            return
        with open(self._registry_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                space = PrivateSpace(
                    space_id=record["space_id"],
                    owner_id=record["owner_id"],
                    root=record["root"],
                    created_at_ms=record["created_at_ms"],
                )
                self._spaces[space.space_id] = space
                self._by_owner[space.owner_id] = space.space_id

    def _token_of(self, space_id: str) -> str:
        return hmac.new(self._secret, b"space-token:" + space_id.encode(), hashlib.sha256).hexdigest()

    # -- spaces ----------------------------------------------------------------

    def create_space(self, owner_id: str) -> tuple[PrivateSpace, str]:
        """Creates the owner's private space and issues its bearer token."""
        with self._lock:
            if owner_id in self._by_owner:
                raise DuplicateSpaceError(f"owner {owner_id!r} already has a space")
            space = PrivateSpace(
                space_id=new_id128(),
                owner_id=owner_id,
                root=os.path.join(self._spaces_dir, ""),
                created_at_ms=now_ms(),
            )
            space = PrivateSpace(
                space_id=space.space_id,
                owner_id=owner_id,
                root=os.path.join(self._spaces_dir, space.space_id),
                created_at_ms=space.created_at_ms,
            )
            os.makedirs(space.root, exist_ok=True)
            with open(self._registry_path, "a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {
                            "space_id": space.space_id,
                            "owner_id": space.owner_id,
                            "root": space.root,
                            "created_at_ms": space.created_at_ms,
                        }
                    )
                    + "\n"
                )
            self._spaces[space.space_id] = space
            self._by_owner[owner_id] = space.space_id
            return space, self._token_of(space.space_id)

    def space_for_owner(self, owner_id: str) -> Optional[PrivateSpace]:
        with self._lock:
            space_id = self._by_owner.get(owner_id)
            return self._spaces.get(space_id) if space_id else None

    def token_for_owner(self, owner_id: str) -> str:
        """Authority-side token lookup (coordinator only)."""
        space = self.space_for_owner(owner_id)
        if space is None:
            raise NotFoundError(f"owner {owner_id!r} has no space")
        return self._token_of(space.space_id)

    def _check_access(self, space_id: str, token: str) -> PrivateSpace:
        with self._lock:
            space = self._spaces.get(space_id)
        if space is None:
            raise NotFoundError(f"unknown space {space_id}")
        expected = self._token_of(space_id)
        if not isinstance(token, str) or not hmac.compare_digest(expected, token):
            raise AccessDeniedError("token is not bound to this space")
        return space

    def _object_path(self, space: PrivateSpace, path: str) -> str:
        rel = _validate_relative_path(path)
        full = os.path.normpath(os.path.join(space.root, rel))
        if not full.startswith(os.path.normpath(space.root) + os.sep):
            raise InvalidPathError(f"path {path!r} escapes its namespace")
        return full

    # -- objects -----------------------------------------------------------------

    def put_object(self, space_id: str, path: str, data: bytes, token: str) -> StorageObject:
        """Atomic whole-object write (temp file + rename)."""
        space = self._check_access(space_id, token)
        full = self._object_path(space, path)
        if path.startswith(ENVELOPE_ONLY_PREFIXES) and not envelope.is_envelope(data):
            raise NotAnEnvelopeError(
                f"objects under {ENVELOPE_ONLY_PREFIXES} must be envelopes: {path!r}"
            )
        atomic_write(full, data)
        return StorageObject(path=path, digest=hashlib.sha256(data).hexdigest(), length=len(data))

    def get_object(self, space_id: str, path: str, token: str) -> bytes:
        space = self._check_access(space_id, token)
        full = self._object_path(space, path)
        if not os.path.isfile(full):
            raise NotFoundError(f"no object at {path!r}")
        with open(full, "rb") as fh:
            return fh.read()

    def list_objects(self, space_id: str, token: str) -> list[str]:
        space = self._check_access(space_id, token)
        found = []
        for root, _dirs, files in os.walk(space.root):
            for name in files:
                full = os.path.join(root, name)
                found.append(os.path.relpath(full, space.root).replace(os.sep, "/"))
        return sorted(found)

    def object_exists(self, space_id: str, path: str) -> bool:
        """Metadata-level existence check (no payload access)."""
        with self._lock:
            space = self._spaces.get(space_id)
        if space is None:
            return False
        try:
            return os.path.isfile(self._object_path(space, path))
        except InvalidPathError:
            return False


class Catalogue:
    """Dataset catalogue: payload-free descriptors, one JSON record per line."""

    def __init__(self, data_root: str, store: ObjectStore):
        self._path = os.path.join(data_root, "catalogue.jsonl")
        self._store = store
        self._lock = threading.Lock()
        self._datasets: dict[str, DatasetDescriptor] = {}
        self._load()

    def _load(self) -> None:
        if not os.path.exists(self._path):
            return
        with open(self._path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                descriptor = DatasetDescriptor.from_record(json.loads(line))
                self._datasets[descriptor.dataset_id] = descriptor

    def register_dataset(self, descriptor: DatasetDescriptor, token: str) -> str:
        """Adds a descriptor after checking the schema and that the
        envelope object is already stored in the owner's space."""
        validate_schema(descriptor.schema)
        if descriptor.row_count < 0:
            raise InvalidSchemaError("row_count must be non-negative")
        space = self._store.space_for_owner(descriptor.owner_id)
        if space is None:
            raise NotFoundError(f"owner {descriptor.owner_id!r} has no space")
        # token must belong to the owner's space
        self._store._check_access(space.space_id, token)
        if not self._store.object_exists(space.space_id, descriptor.envelope_ref):
            raise DanglingEnvelopeError(f"envelope_ref {descriptor.envelope_ref!r} is not stored")
        with self._lock:
            self._datasets[descriptor.dataset_id] = descriptor
            with open(self._path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(descriptor.to_record()) + "\n")
        return descriptor.dataset_id

    def list_datasets(self, owner_filter: str | None = None) -> list[DatasetDescriptor]:
        with self._lock:
            out = [
                d
                for d in self._datasets.values()
                if owner_filter is None or d.owner_id == owner_filter
            ]
        return sorted(out, key=lambda d: (d.created_at_ms, d.dataset_id))

    def get(self, dataset_id: str) -> Optional[DatasetDescriptor]:
        with self._lock:
            return self._datasets.get(dataset_id)

    def owner_of(self, dataset_id: str) -> Optional[str]:
        descriptor = self.get(dataset_id)
        return descriptor.owner_id if descriptor else None
