"""Multimodal IDEA input and the intermediate data model of a run."""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Optional

from .assets import ImageAsset, MeshAsset
from .errors import PreconditionError, ValidationError
from .meshio import glb_to_mesh, load_mesh, mesh_to_glb, write_glb

ASSET_TOKEN = re.compile(r"<asset:([^>\s]+)>")


@dataclass(frozen=True)
class Idea:
    text_directives: tuple[str, ...] = ()
    image_assets: tuple[ImageAsset, ...] = ()
    mesh_assets: tuple[MeshAsset, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "text_directives", tuple(self.text_directives))
        object.__setattr__(self, "image_assets", tuple(self.image_assets))
        object.__setattr__(self, "mesh_assets", tuple(self.mesh_assets))

    @property
    def asset_ids(self) -> list[str]:
        return [a.id for a in self.image_assets] + [m.id for m in self.mesh_assets]

    @property
    def modality(self) -> str:
        """One of text_only, text_image, text_mesh, text_image_mesh (or a non-text variant)."""
        parts = [name for name, present in (("text", self.text_directives), ("image", self.image_assets),
                                            ("mesh", self.mesh_assets)) if present]
        return "_".join(parts) + ("_only" if parts == ["text"] else "") if parts else "empty"


def validate_idea(idea: Idea) -> list[str]:
    """All invariant violations of ``idea``; an empty list means valid."""
    out = []
    if not (idea.text_directives or idea.image_assets or idea.mesh_assets):
        out.append("all components empty")
    seen: set[str] = set()
    for asset_id in idea.asset_ids:
        if asset_id in seen:
            out.append(f"duplicate asset id {asset_id}")
        seen.add(asset_id)
    for mesh in idea.mesh_assets:
        out.extend(mesh.violations())
    for text in idea.text_directives:
        for ref in ASSET_TOKEN.findall(text):
            if ref not in seen:
                out.append(f"unknown asset reference {ref}")
    return out


def strip_asset_tokens(text: str) -> str:
    return re.sub(r"\s{2,}", " ", ASSET_TOKEN.sub("", text)).strip()


# ----------------------------------------------------------------- manifest

def load_idea_manifest(path) -> Idea:
    """Read ``{"text": [...], "images": [{"id","path"}], "meshes": [{"id","path"}]}``.

    Asset paths are resolved relative to the manifest file.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    return idea_from_manifest_dict(doc, path.parent)


def idea_from_manifest_dict(doc: Mapping, base_dir) -> Idea:
    base_dir = Path(base_dir)
    missing = []
    images, meshes = [], []
    for entry in doc.get("images", []):
        p = base_dir / entry["path"]
        if not p.exists():
            missing.append(f"missing image file {entry['path']}")
            continue
        images.append(ImageAsset.load(p, entry["id"]))
    for entry in doc.get("meshes", []):
        p = base_dir / entry["path"]
        if not p.exists():
            missing.append(f"missing mesh file {entry['path']}")
            continue
        meshes.append(load_mesh(p, entry["id"]))
    if missing:
        raise ValidationError(missing)
    return Idea(tuple(doc.get("text", [])), tuple(images), tuple(meshes))


def save_idea(idea: Idea, directory) -> Path:
    """Write assets (PNG / GLB) and ``idea.json`` under ``directory``."""
    directory = Path(directory)
    (directory / "assets").mkdir(parents=True, exist_ok=True)
    doc = {"text": list(idea.text_directives), "images": [], "meshes": []}
    for img in idea.image_assets:
        img.save(directory / "assets" / f"{img.id}.png")
        doc["images"].append({"id": img.id, "path": f"assets/{img.id}.png"})
    for mesh in idea.mesh_assets:
        write_glb(mesh, directory / "assets" / f"{mesh.id}.glb")
        doc["meshes"].append({"id": mesh.id, "path": f"assets/{mesh.id}.glb"})
    out = directory / "idea.json"
    out.write_text(json.dumps(doc, indent=2))
    return out


def idea_to_json(idea: Idea) -> str:
    """Self-contained serialization with base64-embedded PNG and GLB payloads."""
    doc = {
        "text": list(idea.text_directives),
        "images": [{"id": i.id, "media_type": "image/png",
                    "data": base64.b64encode(i.to_png()).decode()} for i in idea.image_assets],
        "meshes": [{"id": m.id, "media_type": "model/gltf-binary",
                    "data": base64.b64encode(mesh_to_glb(m)).decode()} for m in idea.mesh_assets],
    }
    return json.dumps(doc, sort_keys=True)


def idea_from_json(text: str) -> Idea:
    doc = json.loads(text)
    return Idea(
        tuple(doc["text"]),
        tuple(ImageAsset.from_png(base64.b64decode(e["data"]), e["id"]) for e in doc["images"]),
        tuple(glb_to_mesh(base64.b64decode(e["data"]), e["id"]) for e in doc["meshes"]),
    )


# -------------------------------------------------------- derived structures

@dataclass(frozen=True)
class AugmentedIdea:
    """Text plus original images followed by the rendered six views of each mesh."""

    text_directives: tuple[str, ...]
    images: tuple[ImageAsset, ...]
    view_provenance: Mapping[str, tuple[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "text_directives", tuple(self.text_directives))
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "view_provenance", MappingProxyType(dict(self.view_provenance)))
        ids = {im.id for im in self.images}
        stray = set(self.view_provenance) - ids
        if stray:
            raise PreconditionError(f"provenance for unknown images: {sorted(stray)}")

    @property
    def original_images(self) -> tuple[ImageAsset, ...]:
        return tuple(im for im in self.images if im.id not in self.view_provenance)

    @property
    def mesh_ids(self) -> list[str]:
        out: list[str] = []
        for mesh_id, _ in self.view_provenance.values():
            if mesh_id not in out:
                out.append(mesh_id)
        return out

    def views_of(self, mesh_id: str) -> list[ImageAsset]:
        return [im for im in self.images if self.view_provenance.get(im.id, ("",))[0] == mesh_id]


@dataclass(frozen=True)
class DraftModel:
    draft_id: str
    prompt: str
    gen_image: ImageAsset
    fg_image: ImageAsset
    mesh: MeshAsset
    views: "object"  # render.ViewSet
    iteration: int
    seed: Optional[int] = None

    def __post_init__(self):
        if self.iteration < 0:
            raise PreconditionError("iteration must be non-negative")
        if not (self.fg_image.alpha > 0).any():
            raise PreconditionError(f"draft {self.draft_id}: foreground image is empty")
