"""JSON wire format shared by the HTTP clients and the stub server."""

from __future__ import annotations

import base64
import tempfile
from pathlib import Path

import numpy as np

from ..assets import ImageAsset, MeshAsset
from ..errors import BackendContractViolation
from ..meshio import glb_to_mesh, mesh_to_glb, read_obj
from .gateway import ImagePart, LmmRequest, TextPart

PNG = "image/png"
GLB = "model/gltf-binary"
OBJ = "model/obj"


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def encode_image(img: ImageAsset) -> dict:
    return {"id": img.id, "media_type": PNG, "data": _b64(img.to_png())}


def decode_image(doc: dict) -> ImageAsset:
    if doc.get("media_type") != PNG:
        raise BackendContractViolation(f"unsupported image media type {doc.get('media_type')!r}")
    return ImageAsset.from_png(base64.b64decode(doc["data"]), doc.get("id", "image"))


def encode_mesh(mesh: MeshAsset) -> dict:
    return {"id": mesh.id, "media_type": GLB, "data": _b64(mesh_to_glb(mesh))}


def decode_mesh(doc: dict) -> MeshAsset:
    kind, raw = doc.get("media_type"), base64.b64decode(doc["data"])
    mesh_id = doc.get("id", "mesh")
    if kind == GLB:
        return glb_to_mesh(raw, mesh_id)
    if kind == OBJ:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "mesh.obj"
            path.write_bytes(raw)
            return read_obj(path, mesh_id)
    raise BackendContractViolation(f"unsupported mesh media type {kind!r}")


def encode_request(req: LmmRequest) -> dict:
    parts = []
    for p in req.parts:
        if isinstance(p, TextPart):
            parts.append({"type": "text", "label": p.label, "text": p.text})
        else:
            parts.append({"type": "image", "label": p.label, "image": encode_image(p.image)})
    return {"system_prompt": req.system_prompt, "parts": parts, "max_output_chars": req.max_output_chars,
            "temperature": req.temperature, "role": req.role, "meta": dict(req.meta)}


def decode_request(doc: dict) -> LmmRequest:
    parts = [TextPart(p["text"], p.get("label", "")) if p["type"] == "text"
             else ImagePart(decode_image(p["image"]), p.get("label", "")) for p in doc["parts"]]
    return LmmRequest(doc["system_prompt"], tuple(parts), doc.get("max_output_chars", 4000),
                      doc.get("temperature", 0.0), doc.get("role", "gen"), doc.get("meta", {}))


def encode_vector(vec) -> list[float]:
    return [float(x) for x in np.asarray(vec, np.float64)]
