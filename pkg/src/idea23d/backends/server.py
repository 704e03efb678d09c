"""Local HTTP server exposing backend objects over the wire protocol.

Used as a deterministic test double for remote services.  ``faults`` maps a
route to a list of HTTP status codes returned, in order, before the route
starts answering normally, so tests can count retries exactly.
"""

from __future__ import annotations

import json
import threading
from collections import defaultdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping, Optional, Sequence

from . import wire
from .gateway import BuiltinMatting


class BackendServer:
    def __init__(self, lmm=None, t2i=None, i23d=None, embedder=None, matting=None,
                 faults: Optional[Mapping[str, Sequence[int]]] = None,
                 host: str = "127.0.0.1", port: int = 0):
        self.backends = {"lmm": lmm, "t2i": t2i, "i23d": i23d, "embed": embedder,
                         "rembg": matting or BuiltinMatting()}
        self.faults = {route: list(codes) for route, codes in (faults or {}).items()}
        self.hits: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()
        self._httpd = ThreadingHTTPServer((host, port), self._handler())
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def _dispatch(self, route: str, doc: dict) -> dict:
        b = self.backends.get(route)
        if b is None:
            raise KeyError(route)
        if route == "lmm":
            return {"text": b.complete(wire.decode_request(doc))}
        if route == "t2i":
            return {"images": [wire.encode_image(i) for i in b.generate(doc["prompt"], doc["n_images"], doc["seed"])]}
        if route == "rembg":
            return {"image": wire.encode_image(b.remove(wire.decode_image(doc["image"])))}
        if route == "i23d":
            return {"mesh": wire.encode_mesh(b.generate(wire.decode_image(doc["image"]), doc["seed"]))}
        kind = doc["kind"]
        if kind == "text":
            vec = b.embed_text(doc["text"])
        elif kind == "image":
            vec = b.embed_image(wire.decode_image(doc["image"]))
        else:
            vec = b.embed_mesh(wire.decode_mesh(doc["mesh"]))
        return {"embedding": wire.encode_vector(vec)}

    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _reply(self, code: int, doc: dict):
                body = json.dumps(doc).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_POST(self):
                route = self.path.strip("/")
                doc = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))) or b"{}")
                with server._lock:
                    server.hits[route] += 1
                    pending = server.faults.get(route)
                    code = pending.pop(0) if pending else None
                if code is not None:
                    self._reply(code, {"error": f"injected {code}"})
                    return
                try:
                    self._reply(200, server._dispatch(route, doc))
                except KeyError:
                    self._reply(404, {"error": f"no backend for /{route}"})
                except Exception as exc:  # surfaced to the client as a 500
                    self._reply(500, {"error": f"{type(exc).__name__}: {exc}"})

        return Handler

    def start(self) -> "BackendServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
