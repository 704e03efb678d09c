"""HTTP-JSON clients: one POST endpoint per backend role.

Endpoints and payloads (all bodies JSON, media base64-encoded):

========  ==========================================  =========================
route     request                                     response
========  ==========================================  =========================
/lmm      encoded LmmRequest                          {"text": str}
/t2i      {"prompt", "n_images", "seed"}              {"images": [image, ...]}
/rembg    {"image": image}                            {"image": image}
/i23d     {"image": image, "seed"}                    {"mesh": mesh}
/embed    {"kind": text|image|mesh, "text"/...}       {"embedding": [float]}
========  ==========================================  =========================
"""

from __future__ import annotations

import os
from typing import Optional

import httpx

from ..errors import BackendContractViolation, ConfigError, TransportError
from . import wire


class HttpBackend:
    def __init__(self, url: str, model_name: str = "", api_key_env: Optional[str] = None,
                 timeout_s: float = 120.0, client: Optional[httpx.Client] = None):
        self.url = url.rstrip("/")
        self.model_name = model_name
        self.timeout_s = timeout_s
        self.headers = {}
        if api_key_env:
            key = os.environ.get(api_key_env)
            if not key:
                raise ConfigError(f"environment variable {api_key_env} is not set")
            self.headers["Authorization"] = f"Bearer {key}"
        self._client = client

    def _post(self, route: str, payload: dict) -> dict:
        body = dict(payload, model=self.model_name)
        try:
            if self._client is not None:
                resp = self._client.post(f"{self.url}/{route}", json=body, headers=self.headers,
                                         timeout=self.timeout_s)
            else:
                resp = httpx.post(f"{self.url}/{route}", json=body, headers=self.headers,
                                  timeout=self.timeout_s)
        except httpx.TimeoutException as exc:
            raise TransportError(f"timeout after {self.timeout_s}s on /{route}") from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"/{route}: {exc}") from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransportError(f"/{route}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise TransportError(f"/{route}: HTTP {resp.status_code} {resp.text[:200]}", retryable=False)
        try:
            return resp.json()
        except ValueError as exc:
            raise BackendContractViolation(f"/{route}: response is not JSON") from exc


class HttpLMM(HttpBackend):
    def complete(self, req) -> str:
        return self._post("lmm", wire.encode_request(req)).get("text", "")


class HttpT2I(HttpBackend):
    def generate(self, prompt: str, n_images: int, seed: int):
        doc = self._post("t2i", {"prompt": prompt, "n_images": n_images, "seed": seed})
        return [wire.decode_image(d) for d in doc.get("images", [])]


class HttpMatting(HttpBackend):
    def remove(self, img):
        return wire.decode_image(self._post("rembg", {"image": wire.encode_image(img)})["image"])


class HttpI23D(HttpBackend):
    def generate(self, img, seed: int):
        doc = self._post("i23d", {"image": wire.encode_image(img), "seed": seed})
        return wire.decode_mesh(doc["mesh"])


class HttpEmbedder(HttpBackend):
    def embed_text(self, text: str):
        return self._post("embed", {"kind": "text", "text": text})["embedding"]

    def embed_image(self, img):
        return self._post("embed", {"kind": "image", "image": wire.encode_image(img)})["embedding"]

    def embed_mesh(self, mesh):
        return self._post("embed", {"kind": "mesh", "mesh": wire.encode_mesh(mesh)})["embedding"]
