"""Raster and mesh value types.

Both types are immutable: their numpy buffers are marked read-only at
construction, so they can be shared across threads without copying.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    if out is arr:
        out = out.copy()
    out.flags.writeable = False
    return out


def _opt_equal(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and np.array_equal(a, b)


@dataclass(frozen=True, eq=False)
class ImageAsset:
    """An 8-bit RGBA raster with a stable id. ``pixels`` has shape (H, W, 4)."""

    id: str
    pixels: np.ndarray
    source_path: Optional[str] = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = np.stack([px, px, px, np.full_like(px, 255)], axis=-1)
        elif px.ndim == 3 and px.shape[2] == 3:
            px = np.concatenate([px, np.full(px.shape[:2] + (1,), 255, px.dtype)], axis=-1)
        if px.ndim != 3 or px.shape[2] != 4:
            raise ValueError(f"image {self.id!r}: expected (H, W, 4) pixels, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image {self.id!r}: empty raster")
        if px.dtype != np.uint8:
            px = np.clip(np.rint(px), 0, 255)
        object.__setattr__(self, "pixels", _frozen(px, np.uint8))

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def alpha(self) -> np.ndarray:
        return self.pixels[..., 3]

    def __eq__(self, other):
        if not isinstance(other, ImageAsset):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.pixels, other.pixels)

    __hash__ = None

    def with_id(self, new_id: str) -> "ImageAsset":
        return ImageAsset(new_id, self.pixels, self.source_path)

    def to_png(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(np.asarray(self.pixels), "RGBA").save(buf, format="PNG")
        return buf.getvalue()

    def save(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_png())
        return path

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.pixels.shape, dtype=np.int64).tobytes())
        h.update(self.pixels.tobytes())
        return h.hexdigest()

    @classmethod
    def from_png(cls, data: bytes, id: str, source_path=None) -> "ImageAsset":
        with Image.open(io.BytesIO(data)) as im:
            return cls(id, np.asarray(im.convert("RGBA")), source_path)

    @classmethod
    def load(cls, path, id: Optional[str] = None) -> "ImageAsset":
        path = Path(path)
        with Image.open(path) as im:
            px = np.asarray(im.convert("RGBA"))
        return cls(id or path.stem, px, str(path))


@dataclass(frozen=True, eq=False)
class MeshAsset:
    """Indexed triangle mesh.

    positions: (V, 3) float32 model units; faces: (F, 3) uint32 indices;
    normals: optional (V, 3) float32; uvs: optional (V, 2) float32 in image
    convention (u right, v down, origin at the texture's top-left texel);
    texture: optional (H, W, 4) uint8 RGBA.
    """

    id: str
    positions: np.ndarray
    faces: np.ndarray
    normals: Optional[np.ndarray] = None
    uvs: Optional[np.ndarray] = None
    texture: Optional[np.ndarray] = None
    source_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(np.reshape(self.positions, (-1, 3)), np.float32))
        faces = np.asarray(self.faces)
        if faces.size and faces.min() < 0:
            raise ValueError(f"mesh {self.id!r}: negative face index")
        object.__setattr__(self, "faces", _frozen(np.reshape(faces, (-1, 3)), np.uint32))
        if self.normals is not None:
            object.__setattr__(self, "normals", _frozen(np.reshape(self.normals, (-1, 3)), np.float32))
        if self.uvs is not None:
            object.__setattr__(self, "uvs", _frozen(np.reshape(self.uvs, (-1, 2)), np.float32))
        if self.texture is not None:
            tex = self.texture.pixels if isinstance(self.texture, ImageAsset) else self.texture
            object.__setattr__(self, "texture", ImageAsset("_tex", tex).pixels)

    @property
    def n_vertices(self) -> int:
        return int(self.positions.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    def violations(self) -> list[str]:
        out = []
        if self.n_faces < 1:
            out.append(f"mesh {self.id}: no triangles")
        if self.faces.size and int(self.faces.max()) >= self.n_vertices:
            out.append(f"mesh {self.id}: face index out of range")
        if not np.all(np.isfinite(self.positions)):
            out.append(f"mesh {self.id}: non-finite positions")
        for name in ("normals", "uvs"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != self.n_vertices:
                out.append(f"mesh {self.id}: {name} count does not match vertex count")
        return out

    def __eq__(self, other):
        if not isinstance(other, MeshAsset):
            return NotImplemented
        return (
            self.id == other.id
            and _opt_equal(self.positions, other.positions)
            and _opt_equal(self.faces, other.faces)
            and _opt_equal(self.normals, other.normals)
            and _opt_equal(self.uvs, other.uvs)
            and _opt_equal(self.texture, other.texture)
        )

    __hash__ = None

    def with_id(self, new_id: str) -> "MeshAsset":
        return MeshAsset(new_id, self.positions, self.faces, self.normals, self.uvs,
                         self.texture, self.source_path)

    def scaled(self, s: float) -> "MeshAsset":
        return MeshAsset(self.id, self.positions * np.float32(s), self.faces, self.normals,
                         self.uvs, self.texture, self.source_path)

    def digest(self) -> bytes:
        """32-byte content hash over the canonical buffers (id excluded)."""
        h = hashlib.sha256()
        for tag, arr in (("p", self.positions), ("f", self.faces), ("n", self.normals),
                         ("t", self.uvs), ("x", self.texture)):
            if arr is None:
                continue
            h.update(tag.encode())
            h.update(np.asarray(arr.shape, dtype=np.int64).tobytes())
            h.update(arr.tobytes())
        return h.digest()
