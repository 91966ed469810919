"""Authenticated confidential channel handshake and sealing."""

import base64

import pytest

from vaultbench.errors import ChannelError
from vaultbench.securechannel import ChannelClient, ChannelServer


def _wire(server: ChannelServer, bearer: str, peer_id: str, server_bearer: str | None = None):
    """Directly connects a client to a server, simulating the transport."""
    actual = server_bearer if server_bearer is not None else bearer

    def open_fn(body):
        return server.open(body["client_pub_b64"], actual, peer_id)

    def message_fn(body):
        cid = body["channel_id"]
        _peer, record = server.receive(cid, body["nonce_b64"], body["sealed_b64"])
        return server.respond(cid, {"echo": record})

    return ChannelClient(bearer, open_fn, message_fn)


def test_exchange_round_trip():
    server = ChannelServer()
    client = _wire(server, "secret-token", "worker-1")
    reply = client.exchange({"op": "ping", "value": 42})
    assert reply == {"echo": {"op": "ping", "value": 42}}


def test_bearer_mismatch_fails_handshake():
    server = ChannelServer()
    client = _wire(server, "client-token", "worker-1", server_bearer="different-token")
    with pytest.raises(ChannelError):
        client.exchange({"op": "ping"})


def test_tampered_record_rejected():
    server = ChannelServer()
    opened = {}

    def open_fn(body):
        reply = server.open(body["client_pub_b64"], "tok", "peer")
        opened.update(reply)
        return reply

    def message_fn(body):
        sealed = bytearray(base64.b64decode(body["sealed_b64"]))
        sealed[0] ^= 0xFF
        body = dict(body, sealed_b64=base64.b64encode(bytes(sealed)).decode())
        cid = body["channel_id"]
        _peer, record = server.receive(cid, body["nonce_b64"], body["sealed_b64"])
        return server.respond(cid, record)

    client = ChannelClient("tok", open_fn, message_fn)
    with pytest.raises(ChannelError):
        client.exchange({"op": "ping"})


def test_unknown_channel_rejected():
    server = ChannelServer()
    with pytest.raises(ChannelError):
        server.receive("no-such-channel", "AAAA", "AAAA")


def test_server_peer_identity_attached():
    server = ChannelServer()
    captured = {}

    def open_fn(body):
        return server.open(body["client_pub_b64"], "tok", "sandbox-77")

    def message_fn(body):
        peer, record = server.receive(body["channel_id"], body["nonce_b64"], body["sealed_b64"])
        captured["peer"] = peer
        return server.respond(body["channel_id"], {"ok": True})

    ChannelClient("tok", open_fn, message_fn).exchange({"op": "x"})
    assert captured["peer"] == "sandbox-77"
