"""Line-delimited JSON protocol for out-of-process classifiers and providers.

Both sides first send ``{"proto": "sensaudit/1"}``. Afterwards the client sends
requests carrying a string ``id`` and the server answers with objects carrying
the same ``id``, in any order::

    classifier   {"id": "7", "tokens": [...]}                     -> {"id": "7", "p": 0.42}
    provider     {"id": "8", "tokens": [...], "mask_index": 3, "k": 5}
                                                                  -> {"id": "8", "replacements": [...]}

Endpoints are ``tcp://host:port`` or ``exec:<command line>``; the latter
spawns the command and talks over its stdin/stdout.
"""

from __future__ import annotations

import itertools
import json
import math
import shlex
import socket
import subprocess
import sys
import threading
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout

from .classifiers import Classifier
from .errors import ProtocolError, ProviderError, RemoteTimeout

PROTO = "sensaudit/1"
HANDSHAKE = {"proto": PROTO}


def encode(obj) -> bytes:
    return (json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def decode(line: bytes):
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed line {line[:80]!r}: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError(f"expected a JSON object, got {type(obj).__name__}")
    return obj


class Channel:
    """Client side of a connection: id allocation, pipelining, reply matching."""

    def __init__(self, rfile, wfile, timeout: float = 30.0, on_close=None):
        self._r = rfile
        self._w = wfile
        self.timeout = timeout
        self._on_close = on_close
        self._ids = itertools.count(1)
        self._pending: dict[str, Future] = {}
        self._lock = threading.Lock()
        self._wlock = threading.Lock()
        self._failure: Exception | None = None
        self._ready = threading.Event()
        self._closed = False

        self._send(HANDSHAKE)
        self._reader = threading.Thread(target=self._read_loop, name="sensaudit-wire", daemon=True)
        self._reader.start()
        if not self._ready.wait(timeout):
            self.close()
            raise RemoteTimeout(f"no handshake within {timeout}s")
        if self._failure is not None:
            raise self._failure

    @classmethod
    def connect(cls, endpoint: str, timeout: float = 30.0) -> "Channel":
        if endpoint.startswith("tcp://"):
            host, _, port = endpoint[len("tcp://"):].rpartition(":")
            try:
                sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
            except socket.timeout:
                raise RemoteTimeout(f"connecting to {endpoint} timed out") from None
            sock.settimeout(None)
            rfile, wfile = sock.makefile("rb"), sock.makefile("wb")

            def close():
                # unblocks the reader thread, which holds rfile's lock inside readline
                try:
                    sock.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                for f in (wfile, rfile):
                    try:
                        f.close()
                    except OSError:
                        pass
                sock.close()

            return cls(rfile, wfile, timeout, on_close=close)
        if endpoint.startswith("exec:"):
            proc = subprocess.Popen(shlex.split(endpoint[len("exec:"):]), stdin=subprocess.PIPE,
                                    stdout=subprocess.PIPE)

            def close():
                try:
                    proc.stdin.close()
                except OSError:
                    pass
                try:
                    proc.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    proc.kill()
                    proc.wait()
                proc.stdout.close()

            return cls(proc.stdout, proc.stdin, timeout, on_close=close)
        raise ValueError(f"unsupported endpoint {endpoint!r} (expected tcp://host:port or exec:<cmd>)")

    def _send(self, obj):
        data = encode(obj)
        with self._wlock:
            try:
                self._w.write(data)
                self._w.flush()
            except (OSError, ValueError) as exc:
                raise ProtocolError(f"connection lost while sending: {exc}") from None

    def _fail_all(self, exc: Exception):
        with self._lock:
            if self._failure is None:
                self._failure = exc
            pending, self._pending = self._pending, {}
        for fut in pending.values():
            if not fut.done():
                fut.set_exception(exc)
        self._ready.set()

    def _read_loop(self):
        try:
            line = self._r.readline()
            if not line:
                raise ProtocolError("connection closed before handshake")
            hello = decode(line)
            if hello.get("proto") != PROTO:
                raise ProtocolError(f"unexpected handshake {hello!r}, wanted {HANDSHAKE!r}")
            self._ready.set()
            for line in iter(self._r.readline, b""):
                if not line.strip():
                    continue
                msg = decode(line)
                rid = msg.get("id")
                if not isinstance(rid, str):
                    raise ProtocolError(f"response without string id: {msg!r}")
                with self._lock:
                    fut = self._pending.pop(rid, None)
                if fut is None:
                    raise ProtocolError(f"response for unknown id {rid!r}")
                fut.set_result(msg)
            raise ProtocolError("connection closed by remote")
        except ProtocolError as exc:
            self._fail_all(exc)
        except (OSError, ValueError) as exc:
            self._fail_all(ProtocolError(f"connection error: {exc}"))

    def submit(self, payload: dict) -> Future:
        rid = str(next(self._ids))
        fut: Future = Future()
        with self._lock:
            if self._failure is not None:
                raise self._failure
            self._pending[rid] = fut
        try:
            self._send({"id": rid, **payload})
        except ProtocolError:
            with self._lock:
                self._pending.pop(rid, None)
            raise
        return fut

    def wait(self, fut: Future) -> dict:
        try:
            return fut.result(self.timeout)
        except FutureTimeout:
            raise RemoteTimeout(f"no response within {self.timeout}s") from None

    def call(self, payload: dict) -> dict:
        return self.wait(self.submit(payload))

    def close(self):
        if self._closed:
            return
        self._closed = True
        if self._on_close is not None:
            self._on_close()
        else:
            for f in (self._w, self._r):
                try:
                    f.close()
                except (OSError, ValueError):
                    pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _check_probability(msg) -> float:
    p = msg.get("p")
    if isinstance(p, bool) or not isinstance(p, (int, float)):
        raise ProtocolError(f"response {msg.get('id')!r} has non-numeric p: {p!r}")
    p = float(p)
    if math.isnan(p) or not 0.0 <= p <= 1.0:
        raise ProtocolError(f"response {msg.get('id')!r} has probability {p} outside [0, 1]")
    return p


class ExternalClassifier(Classifier):
    """A classifier running in another process, reached over the wire protocol."""

    concurrent_safe = True

    def __init__(self, endpoint: str | Channel, timeout: float = 30.0, identifier: str | None = None):
        if isinstance(endpoint, Channel):
            self.channel = endpoint
            name = "external"
        else:
            self.channel = Channel.connect(endpoint, timeout)
            name = f"external:{endpoint}"
        self.identifier = identifier or name

    def predict(self, note):
        return _check_probability(self.channel.call({"tokens": list(note.tokens)}))

    def predict_many(self, notes):
        futs = [self.channel.submit({"tokens": list(n.tokens)}) for n in notes]
        return [_check_probability(self.channel.wait(f)) for f in futs]

    def close(self):
        self.channel.close()


def external_classifier(endpoint: str, timeout: float = 30.0) -> ExternalClassifier:
    return ExternalClassifier(endpoint, timeout)


class ExternalContextProvider:
    """Masked-position replacement candidates from an out-of-process model."""

    def __init__(self, endpoint: str | Channel, timeout: float = 30.0):
        self.channel = endpoint if isinstance(endpoint, Channel) else Channel.connect(endpoint, timeout)
        self.name = f"external:{endpoint}" if isinstance(endpoint, str) else "external"

    def replacements(self, tokens, mask_index: int, k: int) -> list[str]:
        try:
            msg = self.channel.call({"tokens": list(tokens), "mask_index": int(mask_index), "k": int(k)})
        except (ProtocolError, RemoteTimeout) as exc:
            raise ProviderError(f"context provider failed: {exc}") from exc
        reps = msg.get("replacements")
        if not isinstance(reps, list) or not all(isinstance(r, str) for r in reps):
            raise ProviderError(f"malformed replacements in {msg!r}")
        return reps

    def close(self):
        self.channel.close()


# --------------------------------------------------------------------------
# server side

def serve(rfile, wfile, handler) -> None:
    """Answer requests from ``rfile`` until EOF, one response per request.

    ``handler`` receives the request object and returns the response fields
    (without ``id``).
    """
    wfile.write(encode(HANDSHAKE))
    wfile.flush()
    hello = rfile.readline()
    if not hello or decode(hello).get("proto") != PROTO:
        return
    for line in iter(rfile.readline, b""):
        if not line.strip():
            continue
        req = decode(line)
        resp = handler(req)
        wfile.write(encode({"id": req.get("id"), **resp}))
        wfile.flush()


def classifier_handler(fn):
    """Wrap ``tokens -> probability`` as a request handler."""
    return lambda req: {"p": float(fn(req["tokens"]))}


def provider_handler(fn):
    """Wrap ``(tokens, mask_index, k) -> [replacement, ...]`` as a request handler."""
    return lambda req: {"replacements": list(fn(req["tokens"], req["mask_index"], req["k"]))}


def serve_tcp(handler, host="127.0.0.1", port=0):
    """Start a threaded TCP server; returns ``(endpoint, server)``."""
    import socketserver

    class _Handler(socketserver.StreamRequestHandler):
        def handle(self):
            try:
                serve(self.rfile, self.wfile, handler)
            except (OSError, ProtocolError):
                pass

    class _Server(socketserver.ThreadingTCPServer):
        daemon_threads = True
        allow_reuse_address = True

    server = _Server((host, port), _Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    h, p = server.server_address[:2]
    return f"tcp://{h}:{p}", server


def main(argv=None):
    """Serve a model over stdio: ``python -m sensaudit.wire constant 0.4`` or ``... model path.csv``."""
    import argparse

    ap = argparse.ArgumentParser(prog="python -m sensaudit.wire")
    sub = ap.add_subparsers(dest="kind", required=True)
    c = sub.add_parser("constant")
    c.add_argument("value", type=float)
    m = sub.add_parser("model")
    m.add_argument("path")
    args = ap.parse_args(argv)

    if args.kind == "constant":
        fn = lambda tokens: args.value  # noqa: E731
    else:
        from .classifiers import load_model
        from .corpus import Note

        model = load_model(args.path)
        fn = lambda tokens: model.predict(Note("remote", tuple(tokens)))  # noqa: E731
    serve(sys.stdin.buffer, sys.stdout.buffer, classifier_handler(fn))


if __name__ == "__main__":
    main()
