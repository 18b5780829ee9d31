import socket
import time

import pytest

from integrator_twin.controller import ChannelBank, Controller, ControllerServer
from integrator_twin.harness import ClientConnectionError, ControlClient, client_send, replay


def connect_when_free(address, timeout=2.0):
    """The server may still be reaping the previous session for a few ms."""
    deadline = time.monotonic() + timeout
    while True:
        client = ControlClient(address)
        reply = client.send("READAll")
        if reply.to_line() != "ERR busy" or time.monotonic() > deadline:
            return client, reply
        client.close()
        time.sleep(0.02)


def test_session_read_and_quit(server):
    with ControlClient(server.address) as c:
        assert c.send("READAll").to_line() == "OK 0;0;0;0;0;0;0;0"
        assert c.send("QUIT").to_line() == "OK"
        assert c.reader.readline() == b""  # server closed cleanly


def test_state_survives_sessions(server):
    transcript = replay(server.address, ["ALL1;1;1;1;1;1;1;1", "QUIT"])
    assert transcript == [("ALL1;1;1;1;1;1;1;1", "OK"), ("QUIT", "OK")]
    client, reply = connect_when_free(server.address)
    with client:
        assert reply.payload == "1;1;1;1;1;1;1;1"


def test_abrupt_disconnect_keeps_state(server):
    raw = socket.create_connection(server.address)
    raw.sendall(b"INTE5\nREA")  # second request cut mid-line
    assert raw.makefile("rb").readline() == b"OK\n"
    raw.close()
    client, reply = connect_when_free(server.address)
    with client:
        assert reply.payload == "5;5;5;5;5;5;5;5"


def test_second_connection_refused_busy(server):
    with ControlClient(server.address) as first:
        assert first.send("READAll").ok
        second = socket.create_connection(server.address, timeout=2)
        assert second.makefile("rb").readline() == b"ERR busy\n"
        second.close()
        assert first.send("READAll").ok


def test_overlong_line_gets_one_error(server):
    with ControlClient(server.address) as c:
        c.sock.sendall(b"A" * 10_000 + b"\n")
        assert c.reader.readline() == b"ERR unknown\n"
        assert c.send("READAll").ok


def test_client_send_one_shot(server):
    assert client_send(server.address, "ALL9;0;0;0;0;0;0;0").to_line() == "ERR range"


def test_client_refused_connection():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(ClientConnectionError):
        client_send(("127.0.0.1", port), "READAll", timeout=1)


def test_net_command_rebinds_after_session(store):
    controller = Controller(store, ChannelBank())
    with ControllerServer(controller, port=0) as srv:
        host, port = srv.address
        assert host == "127.0.0.1"
        with ControlClient(srv.address) as c:
            assert c.send("NET 127.0.0.2;255.0.0.0;127.0.0.1").ok
            # the issuing session carries on
            assert c.send("READAll").ok
            assert srv.address == ("127.0.0.1", port)
            c.send("QUIT")
        deadline = time.monotonic() + 3
        while srv.address[0] != "127.0.0.2" and time.monotonic() < deadline:
            time.sleep(0.02)
        assert srv.address == ("127.0.0.2", port)
        assert client_send(("127.0.0.2", port), "READAll").ok


def test_unbindable_net_address_keeps_old_listener(store):
    controller = Controller(store, ChannelBank())
    with ControllerServer(controller, port=0) as srv:
        old = srv.address
        replay(old, ["NET 203.0.113.9;255.255.255.0;203.0.113.1", "QUIT"])
        time.sleep(0.2)
        assert srv.address == old
        client, reply = connect_when_free(old)
        client.close()
        assert reply.ok
