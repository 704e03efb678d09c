"""Uniform access to the LMM, T2I, matting, I23D and embedding backends.

Every call goes through :meth:`Gateway._call`, which enforces the per-role
concurrency limit, retries transport failures with exponential backoff and
emits exactly one record describing the call to the gateway's sink.
"""

from __future__ import annotations

import copy
import hashlib
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence, Union

import numpy as np

from ..assets import ImageAsset, MeshAsset
from ..errors import (BackendContractViolation, EmptyResponse, PreconditionError,
                      TransportError)
from ..matting import remove_background as builtin_remove_background

MAX_IMAGES_PER_REQUEST = 16
ROLES = ("lmm", "t2i", "matting", "i23d", "embed")


@dataclass(frozen=True)
class BackendPolicy:
    timeout_s: float = 120.0
    max_retries: int = 2
    backoff_s: float = 2.0
    parallel_limit: int = 4

    def __post_init__(self):
        if not self.timeout_s > 0:
            raise PreconditionError("timeout_s must be positive")
        if self.max_retries < 0:
            raise PreconditionError("max_retries must be non-negative")
        if self.parallel_limit < 1:
            raise PreconditionError("parallel_limit must be at least 1")

    def delay(self, retry: int) -> float:
        """Sleep before the ``retry``-th retry (1-based): backoff_s * 2**(retry-1)."""
        return self.backoff_s * 2 ** (retry - 1)


@dataclass(frozen=True)
class TextPart:
    text: str
    label: str = ""


@dataclass(frozen=True)
class ImagePart:
    image: ImageAsset
    label: str = ""


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class LmmRequest:
    system_prompt: str
    parts: tuple
    max_output_chars: int = 4000
    temperature: float = 0.0
    role: str = "gen"
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise PreconditionError("an LMM request needs at least one part")
        n_images = sum(isinstance(p, ImagePart) for p in self.parts)
        if n_images > MAX_IMAGES_PER_REQUEST:
            raise PreconditionError(
                f"{n_images} images exceed the per-request limit of {MAX_IMAGES_PER_REQUEST}")
        if self.temperature < 0:
            raise PreconditionError("temperature must be non-negative")

    @property
    def images(self) -> list[ImagePart]:
        return [p for p in self.parts if isinstance(p, ImagePart)]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.role.encode())
        h.update(self.system_prompt.encode())
        for p in self.parts:
            h.update(p.label.encode())
            h.update(p.text.encode() if isinstance(p, TextPart) else p.image.digest().encode())
        return h.hexdigest()


class BuiltinMatting:
    """Default matting backend: corner flood-fill heuristic."""

    def remove(self, img: ImageAsset) -> ImageAsset:
        return builtin_remove_background(img)


def _unit(vec, what: str) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64).reshape(-1)
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise BackendContractViolation(f"{what}: non-finite or empty embedding")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise BackendContractViolation(f"{what}: zero-norm embedding")
    return v / norm


class Gateway:
    """Shared front-end for all backends.

    ``sink`` receives one dict per backend call.  :meth:`with_sink` returns a
    view that shares backends, semaphores and counters but reports to a
    different sink; the refine loop uses it to keep concurrent draft records
    in prompt order.
    """

    def __init__(self, lmm=None, t2i=None, i23d=None, embedder=None, matting=None,
                 policies: Optional[Mapping[str, BackendPolicy]] = None,
                 sink: Optional[Callable[[dict], None]] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.backends = {"lmm": lmm, "t2i": t2i, "i23d": i23d, "embed": embedder,
                         "matting": matting or BuiltinMatting()}
        policies = dict(policies or {})
        self.policies = {role: policies.get(role, BackendPolicy()) for role in ROLES}
        self._sems = {role: threading.BoundedSemaphore(p.parallel_limit)
                      for role, p in self.policies.items()}
        self._lock = threading.Lock()
        self.active = {role: 0 for role in ROLES}
        self.peak = {role: 0 for role in ROLES}
        self.sink = sink
        self._sleep = sleep
        self._embed_dim: Optional[int] = None

    def with_sink(self, sink) -> "Gateway":
        view = copy.copy(self)
        view.sink = sink
        return view

    def _backend(self, role: str):
        backend = self.backends.get(role)
        if backend is None:
            raise PreconditionError(f"no {role} backend configured")
        return backend

    def _call(self, role: str, op: str, fn: Callable[[], Any], info: dict,
              describe: Callable[[Any], dict] = lambda r: {}):
        policy = self.policies[role]
        record = {"event": "backend_call", "role": role, "op": op, **info}
        attempts = 0
        start = time.perf_counter()
        with self._sems[role]:
            with self._lock:
                self.active[role] += 1
                self.peak[role] = max(self.peak[role], self.active[role])
            try:
                while True:
                    attempts += 1
                    try:
                        result = fn()
                        break
                    except TransportError as exc:
                        if attempts > policy.max_retries or not getattr(exc, "retryable", True):
                            record.update(ok=False, error=f"TransportError: {exc}")
                            raise TransportError(f"{role}.{op} failed after {attempts} attempt(s): {exc}") from exc
                        self._sleep(policy.delay(attempts))
                    except Exception as exc:
                        record.update(ok=False, error=f"{type(exc).__name__}: {exc}")
                        raise
                record.update(ok=True, error=None, **describe(result))
                return result
            finally:
                with self._lock:
                    self.active[role] -= 1
                record.update(attempts=attempts, retries=attempts - 1,
                              latency_s=round(time.perf_counter() - start, 6))
                if self.sink is not None:
                    self.sink(record)

    # ---------------------------------------------------------------- LMM
    def lmm_complete(self, req: LmmRequest, **ctx) -> str:
        if len(req.images) > MAX_IMAGES_PER_REQUEST:
            raise PreconditionError("too many images in LMM request")
        backend = self._backend("lmm")
        info = {"agent": req.role, "request_digest": req.digest(), "n_images": len(req.images),
                "temperature": req.temperature, **ctx}

        def run():
            text = backend.complete(req)
            if not isinstance(text, str) or not text.strip():
                raise EmptyResponse(f"empty completion for {req.role} request")
            return text[: req.max_output_chars]

        return self._call("lmm", "complete", run, info, lambda t: {"response": t})

    # ---------------------------------------------------------------- T2I
    def t2i_generate(self, prompt: str, n_images: int = 1, seed: int = 0, **ctx) -> list[ImageAsset]:
        if not prompt or not prompt.strip():
            raise PreconditionError("T2I prompt must be non-empty")
        if n_images < 1:
            raise PreconditionError("n_images must be at least 1")
        backend = self._backend("t2i")

        def run():
            images = list(backend.generate(prompt, n_images, seed))
            if not images:
                raise BackendContractViolation("T2I backend returned no images")
            if len(images) != n_images:
                raise BackendContractViolation(f"T2I returned {len(images)} images, expected {n_images}")
            return images

        return self._call("t2i", "generate", run,
                          {"prompt": prompt, "n_images": n_images, "seed": seed, **ctx},
                          lambda imgs: {"response_digests": [i.digest() for i in imgs]})

    # ------------------------------------------------------------ matting
    def remove_background(self, img: ImageAsset, **ctx) -> ImageAsset:
        backend = self._backend("matting")

        def run():
            out = backend.remove(img)
            if (out.width, out.height) != (img.width, img.height):
                raise BackendContractViolation("matting changed the image size")
            return out

        return self._call("matting", "remove_background", run,
                          {"image_digest": img.digest(), **ctx},
                          lambda out: {"response_digest": out.digest()})

    # --------------------------------------------------------------- I23D
    def i23d_generate(self, img: ImageAsset, seed: int = 0, **ctx) -> MeshAsset:
        if not np.any(img.alpha > 0):
            raise PreconditionError("I23D input has no foreground")
        backend = self._backend("i23d")

        def run():
            mesh = backend.generate(img, seed)
            bad = mesh.violations()
            if bad:
                raise BackendContractViolation("; ".join(bad))
            return mesh

        return self._call("i23d", "generate", run,
                          {"image_digest": img.digest(), "seed": seed, **ctx},
                          lambda m: {"response_digest": m.digest().hex()})

    # ---------------------------------------------------------- embedding
    def _embed(self, op: str, payload, info: dict) -> np.ndarray:
        backend = self._backend("embed")

        def run():
            vec = _unit(getattr(backend, op)(payload), op)
            with self._lock:
                if self._embed_dim is None:
                    self._embed_dim = vec.size
            if vec.size != self._embed_dim:
                raise BackendContractViolation(f"{op}: dimension {vec.size} != {self._embed_dim}")
            return vec

        return self._call("embed", op, run, info, lambda v: {"dim": int(v.size)})

    def embed_text(self, text: str, **ctx) -> np.ndarray:
        return self._embed("embed_text", text, {"text": text, **ctx})

    def embed_image(self, img: ImageAsset, **ctx) -> np.ndarray:
        return self._embed("embed_image", img, {"image_digest": img.digest(), **ctx})

    def embed_mesh(self, mesh: MeshAsset, **ctx) -> np.ndarray:
        return self._embed("embed_mesh", mesh, {"mesh_digest": mesh.digest().hex(), **ctx})


class ListSink(list):
    """Sink that collects records in memory."""

    def __call__(self, record: dict) -> None:
        self.append(record)


def count_calls(records: Sequence[dict], role: str) -> int:
    return sum(1 for r in records if r.get("event") == "backend_call" and r.get("role") == role)
