"""Server side of the newline-delimited JSON scoring protocol.

A model exposed this way can be used by ``itb attribute/evaluate`` through
``--scorer external:cmd:<program>`` or ``--scorer external:tcp:<host>:<port>``.
"""

import json
import socket
import sys

import numpy as np

PROTOCOL_VERSION = 1


def _handle(lines, write, fn, n_classes, channels, steps):
    hello = json.loads(next(lines))
    if hello.get("type") != "hello" or hello.get("version") != PROTOCOL_VERSION:
        write({"type": "error", "id": 0, "msg": "expected hello version %d" % PROTOCOL_VERSION})
        return
    write({"type": "ready", "n_classes": n_classes, "m": channels, "t": steps})
    for line in lines:
        if not line.strip():
            continue
        req = json.loads(line)
        rid = req.get("id", 0)
        try:
            batch = int(req["batch"])
            x = np.asarray(req["x"], dtype=np.float64).reshape(batch, channels, steps)
            y = np.asarray(fn(x), dtype=np.float64).reshape(batch, n_classes)
            write({"type": "logits", "id": rid, "y": y.ravel().tolist()})
        except Exception as exc:  # reported to the client, the server keeps going
            write({"type": "error", "id": rid, "msg": str(exc)})


def _writer(stream):
    def write(obj):
        stream.write(json.dumps(obj) + "\n")
        stream.flush()

    return write


def serve_stdio(fn, n_classes, channels, steps, stdin=None, stdout=None):
    """Serves ``fn`` ((B, M, T) array -> (B, K) logits) over stdin/stdout."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    _handle(iter(stdin.readline, ""), _writer(stdout), fn, n_classes, channels, steps)


def serve_tcp(fn, n_classes, channels, steps, host="127.0.0.1", port=0, on_listen=None):
    """Serves one client over TCP. ``on_listen(port)`` fires once bound."""
    with socket.create_server((host, port)) as srv:
        if on_listen is not None:
            on_listen(srv.getsockname()[1])
        conn, _ = srv.accept()
        with conn, conn.makefile("r") as rfile, conn.makefile("w") as wfile:
            _handle(iter(rfile.readline, ""), _writer(wfile), fn, n_classes, channels, steps)
