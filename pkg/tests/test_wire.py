import sys
import threading

import pytest

from sensaudit.corpus import Note
from sensaudit.errors import ProtocolError, ProviderError, RemoteTimeout
from sensaudit.wire import (
    Channel,
    ExternalClassifier,
    ExternalContextProvider,
    classifier_handler,
    provider_handler,
    serve_tcp,
)


@pytest.fixture
def length_server():
    endpoint, server = serve_tcp(classifier_handler(lambda toks: len(toks) / 10))
    yield endpoint
    server.shutdown()
    server.server_close()


def test_tcp_classifier(length_server):
    f = ExternalClassifier(length_server, timeout=5)
    try:
        assert f.predict(Note("x", ("a", "b", "c"))) == pytest.approx(0.3)
        notes = [Note(str(i), ("a",) * i) for i in range(10)]
        assert f.predict_many(notes) == pytest.approx([i / 10 for i in range(10)])
    finally:
        f.close()


def test_concurrent_callers_get_own_answers(length_server):
    f = ExternalClassifier(length_server, timeout=5)
    errors = []

    def work(i):
        got = f.predict(Note(str(i), ("a",) * i))
        if got != pytest.approx(i / 10):
            errors.append((i, got))

    threads = [threading.Thread(target=work, args=(i % 10,)) for i in range(40)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    f.close()
    assert errors == []


def test_exec_endpoint():
    cmd = f"exec:{sys.executable} -m sensaudit.wire constant 0.42"
    f = ExternalClassifier(cmd, timeout=10)
    try:
        assert f.predict(Note("x", ("a",))) == 0.42
    finally:
        f.close()


def test_out_of_range_probability_rejected():
    endpoint, server = serve_tcp(classifier_handler(lambda toks: 1.5))
    f = ExternalClassifier(endpoint, timeout=5)
    try:
        with pytest.raises(ProtocolError, match="outside"):
            f.predict(Note("x", ("a",)))
    finally:
        f.close()
        server.shutdown()
        server.server_close()


def test_timeout():
    ev = threading.Event()

    def slow(toks):
        ev.wait(5)
        return 0.5

    endpoint, server = serve_tcp(classifier_handler(slow))
    f = ExternalClassifier(endpoint, timeout=0.2)
    try:
        with pytest.raises(RemoteTimeout):
            f.predict(Note("x", ("a",)))
    finally:
        ev.set()
        f.close()
        server.shutdown()
        server.server_close()


def test_provider_roundtrip():
    endpoint, server = serve_tcp(provider_handler(lambda toks, i, k: [f"{toks[i]}{j}" for j in range(k)]))
    p = ExternalContextProvider(endpoint, timeout=5)
    try:
        assert p.replacements(["a", "b"], 1, 3) == ["b0", "b1", "b2"]
    finally:
        p.close()
        server.shutdown()
        server.server_close()


def test_provider_malformed_reply():
    endpoint, server = serve_tcp(lambda req: {"replacements": "nope"})
    p = ExternalContextProvider(endpoint, timeout=5)
    try:
        with pytest.raises(ProviderError):
            p.replacements(["a"], 0, 2)
    finally:
        p.close()
        server.shutdown()
        server.server_close()
