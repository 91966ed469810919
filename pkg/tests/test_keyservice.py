"""Key registry, agreements, and the audited release protocol."""

import os
import time

import pytest

from vaultbench.errors import NotActiveError, NotOwnerError
from vaultbench.keyservice import (
    DENIED_EXPIRED,
    DENIED_NO_AGREEMENT,
    DENIED_REVOKED,
    DENIED_UNAUTHENTICATED,
    ChannelContext,
    KeyReleaseRequest,
    KeyService,
)

AUTH = ChannelContext(peer_id="consumer", authenticated=True, confidential=True)
UNAUTH = ChannelContext(peer_id=None, authenticated=False, confidential=False)


@pytest.fixture
def svc(tmp_path):
    owners = {"ds1": "provider"}
    keys: dict[str, bytes] = {}
    service = KeyService(
        str(tmp_path / "keys"),
        dataset_owner=owners.get,
        dataset_key=keys.get,
    )
    service._test_dataset_keys = keys  # wiring hook for tests
    return service


def _bind(svc, dataset_id, key):
    svc._test_dataset_keys[dataset_id] = key.key_id


def _request(svc, key, agreement_id, requester="consumer"):
    return KeyReleaseRequest(
        key_id=key.key_id,
        requester_id=requester,
        agreement_id=agreement_id,
        request_nonce=os.urandom(16),
    )


def test_generate_key_properties(svc):
    a = svc.generate_key("provider")
    b = svc.generate_key("provider")
    assert len(a.key_bytes) == 32
    assert a.key_id != b.key_id
    assert a.key_bytes != b.key_bytes


def test_generated_key_ids_unique(svc):
    ids = {svc.generate_key("provider").key_id for _ in range(1000)}
    assert len(ids) == 1000


def test_repr_redacts_key_bytes(svc):
    key = svc.generate_key("provider")
    assert key.key_bytes.hex() not in repr(key)


def test_grant_requires_ownership(svc):
    with pytest.raises(NotOwnerError):
        svc.grant_agreement("consumer", "other", "ds1", ttl_ms=60_000)


def test_grant_lists_for_both_parties(svc):
    agreement = svc.grant_agreement("provider", "consumer", "ds1", ttl_ms=60_000)
    assert agreement.status == "active"
    assert agreement.expires_at_ms > agreement.granted_at_ms
    assert any(a.agreement_id == agreement.agreement_id for a in svc.list_agreements("provider"))
    assert any(a.agreement_id == agreement.agreement_id for a in svc.list_agreements("consumer"))
    assert not svc.list_agreements("stranger")


def test_revoke_twice_errors(svc):
    agreement = svc.grant_agreement("provider", "consumer", "ds1", ttl_ms=60_000)
    revoked = svc.revoke_agreement(agreement.agreement_id)
    assert revoked.status == "revoked"
    with pytest.raises(NotActiveError):
        svc.revoke_agreement(agreement.agreement_id)


def test_revoke_by_non_provider_rejected(svc):
    agreement = svc.grant_agreement("provider", "consumer", "ds1", ttl_ms=60_000)
    with pytest.raises(NotOwnerError):
        svc.revoke_agreement(agreement.agreement_id, by_principal="consumer")


def test_release_happy_path(svc):
    key = svc.generate_key("provider")
    _bind(svc, "ds1", key)
    agreement = svc.grant_agreement("provider", "consumer", "ds1", ttl_ms=60_000)
    request = _request(svc, key, agreement.agreement_id)
    response = svc.release_key(request, AUTH)
    assert response.granted
    assert response.key_bytes == key.key_bytes
    assert response.request_nonce == request.request_nonce
    entries = svc.audit_entries()
    assert len(entries) == 1 and entries[0].outcome == "granted"


def test_release_no_agreement(svc):
    key = svc.generate_key("provider")
    _bind(svc, "ds1", key)
    response = svc.release_key(_request(svc, key, None), AUTH)
    assert not response.granted
    assert response.denial_reason == DENIED_NO_AGREEMENT
    assert response.key_bytes is None


def test_release_revoked(svc):
    key = svc.generate_key("provider")
    _bind(svc, "ds1", key)
    agreement = svc.grant_agreement("provider", "consumer", "ds1", ttl_ms=60_000)
    svc.revoke_agreement(agreement.agreement_id)
    response = svc.release_key(_request(svc, key, agreement.agreement_id), AUTH)
    assert not response.granted
    assert response.denial_reason == DENIED_REVOKED


def test_release_expired(svc):
    key = svc.generate_key("provider")
    _bind(svc, "ds1", key)
    agreement = svc.grant_agreement("provider", "consumer", "ds1", ttl_ms=1)
    time.sleep(0.01)
    response = svc.release_key(_request(svc, key, agreement.agreement_id), AUTH)
    assert not response.granted
    assert response.denial_reason == DENIED_EXPIRED


def test_release_unauthenticated(svc):
    key = svc.generate_key("provider")
    _bind(svc, "ds1", key)
    agreement = svc.grant_agreement("provider", "consumer", "ds1", ttl_ms=60_000)
    response = svc.release_key(_request(svc, key, agreement.agreement_id), UNAUTH)
    assert not response.granted
    assert response.denial_reason == DENIED_UNAUTHENTICATED


def test_release_peer_mismatch_is_unauthenticated(svc):
    key = svc.generate_key("provider")
    _bind(svc, "ds1", key)
    agreement = svc.grant_agreement("provider", "consumer", "ds1", ttl_ms=60_000)
    wrong_peer = ChannelContext(peer_id="intruder", authenticated=True, confidential=True)
    response = svc.release_key(_request(svc, key, agreement.agreement_id), wrong_peer)
    assert response.denial_reason == DENIED_UNAUTHENTICATED


def test_owner_path_grants_without_agreement(svc):
    key = svc.generate_key("provider")
    _bind(svc, "ds1", key)
    owner_channel = ChannelContext(peer_id="provider", authenticated=True, confidential=True)
    response = svc.release_key(_request(svc, key, None, requester="provider"), owner_channel)
    assert response.granted


def test_release_monotonic_after_revoke(svc):
    key = svc.generate_key("provider")
    _bind(svc, "ds1", key)
    agreement = svc.grant_agreement("provider", "consumer", "ds1", ttl_ms=60_000)
    assert svc.release_key(_request(svc, key, agreement.agreement_id), AUTH).granted
    svc.revoke_agreement(agreement.agreement_id)
    for _ in range(5):
        assert not svc.release_key(_request(svc, key, agreement.agreement_id), AUTH).granted


def test_audit_count_equals_request_count(svc):
    key = svc.generate_key("provider")
    _bind(svc, "ds1", key)
    agreement = svc.grant_agreement("provider", "consumer", "ds1", ttl_ms=60_000)
    requests = 0
    for context in (AUTH, UNAUTH, AUTH):
        svc.release_key(_request(svc, key, agreement.agreement_id), context)
        requests += 1
    svc.release_key(_request(svc, key, None), AUTH)
    requests += 1
    assert len(svc.audit_entries()) == requests


def test_persistence_across_restart(tmp_path):
    owners = {"ds1": "provider"}
    keys: dict[str, bytes] = {}
    svc = KeyService(str(tmp_path / "keys"), owners.get, keys.get)
    key = svc.generate_key("provider")
    keys["ds1"] = key.key_id
    agreement = svc.grant_agreement("provider", "consumer", "ds1", ttl_ms=600_000)

    reloaded = KeyService(str(tmp_path / "keys"), owners.get, keys.get)
    request = KeyReleaseRequest(key.key_id, "consumer", agreement.agreement_id, os.urandom(16))
    response = reloaded.release_key(request, AUTH)
    assert response.granted
    assert response.key_bytes == key.key_bytes


def test_key_bytes_never_persisted_raw(tmp_path):
    svc = KeyService(str(tmp_path / "keys"), lambda d: None, lambda d: None)
    generated = [svc.generate_key("provider") for _ in range(5)]
    for root, _dirs, files in os.walk(tmp_path):
        for name in files:
            with open(os.path.join(root, name), "rb") as fh:
                blob = fh.read()
            for key in generated:
                assert key.key_bytes not in blob
                assert key.key_bytes.hex().encode() not in blob
