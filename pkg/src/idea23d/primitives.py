"""Procedural meshes: boxes, spheres, quads and silhouette extrusions."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .assets import MeshAsset


def box(id: str = "box", size=(1.0, 1.0, 1.0)) -> MeshAsset:
    sx, sy, sz = (s / 2 for s in size)
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)], np.float32)
    f = [[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
         [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]]
    return MeshAsset(id, v, f)


def quad(id: str = "quad", size: float = 1.0, texture: Optional[np.ndarray] = None) -> MeshAsset:
    """Unit square in the z=0 plane facing +z; UVs map the full texture."""
    h = size / 2
    v = np.array([[-h, -h, 0], [h, -h, 0], [h, h, 0], [-h, h, 0]], np.float32)
    uv = np.array([[0, 1], [1, 1], [1, 0], [0, 0]], np.float32)
    return MeshAsset(id, v, [[0, 1, 2], [0, 2, 3]], uvs=uv if texture is not None else None,
                     texture=texture)


def uv_sphere(id: str = "sphere", n_lat: int = 12, n_lon: int = 16,
              lattice: Optional[int] = None) -> MeshAsset:
    """Unit-radius UV sphere.

    With ``lattice`` set, coordinates are rounded to multiples of 1/lattice;
    poles and equator keep the extent exactly 2 on every axis.
    """
    theta = np.linspace(0, np.pi, n_lat + 1)[1:-1]
    phi = np.arange(n_lon) * 2 * np.pi / n_lon
    ring = np.stack([np.outer(np.sin(theta), np.cos(phi)),
                     np.repeat(np.cos(theta)[:, None], n_lon, 1),
                     np.outer(np.sin(theta), np.sin(phi))], -1).reshape(-1, 3)
    v = np.vstack([[0, 1, 0], ring, [0, -1, 0]])
    if lattice:
        v = np.round(v * lattice) / lattice
    faces = []
    for k in range(n_lon):
        faces.append([0, 1 + (k + 1) % n_lon, 1 + k])
    for r in range(n_lat - 2):
        a, b = 1 + r * n_lon, 1 + (r + 1) * n_lon
        for k in range(n_lon):
            k2 = (k + 1) % n_lon
            faces.append([a + k, a + k2, b + k2])
            faces.append([a + k, b + k2, b + k])
    south = len(v) - 1
    last = 1 + (n_lat - 2) * n_lon
    for k in range(n_lon):
        faces.append([south, last + k, last + (k + 1) % n_lon])
    return MeshAsset(id, v.astype(np.float32), faces)


def planar_uvs(positions: np.ndarray, bbox_uv=(0.0, 0.0, 1.0, 1.0)) -> np.ndarray:
    """Project xy onto the texture rectangle ``bbox_uv`` = (u0, v0, u1, v1); +y maps to v0."""
    p = np.asarray(positions, np.float64)
    lo, hi = p[:, :2].min(0), p[:, :2].max(0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    s = (p[:, :2] - lo) / span
    u0, v0, u1, v1 = bbox_uv
    return np.stack([u0 + s[:, 0] * (u1 - u0), v0 + (1 - s[:, 1]) * (v1 - v0)], 1).astype(np.float32)


def extrude_mask(mask: np.ndarray, id: str = "extrusion", depth: float = 0.25) -> MeshAsset:
    """Extrude a boolean raster (row 0 = top) into a closed slab.

    Each run of occupied cells in a row becomes one front and one back quad;
    side walls are emitted per boundary cell edge.  Coordinates are in cell
    units with +y up; the slab spans ``depth * max(rows, cols)`` along z.
    """
    mask = np.asarray(mask, bool)
    rows, cols = mask.shape
    if not mask.any():
        raise ValueError("cannot extrude an empty mask")
    zf = depth * max(rows, cols) / 2
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []

    def quad4(a, b, c, d):
        n = len(verts)
        verts.extend((a, b, c, d))
        faces.extend(((n, n + 1, n + 2), (n, n + 2, n + 3)))

    for r in range(rows):
        y0, y1 = rows - r - 1, rows - r
        line = mask[r]
        c = 0
        while c < cols:
            if not line[c]:
                c += 1
                continue
            start = c
            while c < cols and line[c]:
                c += 1
            x0, x1 = start, c
            quad4((x0, y0, zf), (x1, y0, zf), (x1, y1, zf), (x0, y1, zf))
            quad4((x0, y0, -zf), (x0, y1, -zf), (x1, y1, -zf), (x1, y0, -zf))
    padded = np.pad(mask, 1)
    for r in range(rows):
        for c in range(cols):
            if not mask[r, c]:
                continue
            x0, x1, y0, y1 = c, c + 1, rows - r - 1, rows - r
            if not padded[r + 1, c]:      # left
                quad4((x0, y0, -zf), (x0, y0, zf), (x0, y1, zf), (x0, y1, -zf))
            if not padded[r + 1, c + 2]:  # right
                quad4((x1, y0, zf), (x1, y0, -zf), (x1, y1, -zf), (x1, y1, zf))
            if not padded[r, c + 1]:      # top
                quad4((x0, y1, zf), (x1, y1, zf), (x1, y1, -zf), (x0, y1, -zf))
            if not padded[r + 2, c + 1]:  # bottom
                quad4((x0, y0, -zf), (x1, y0, -zf), (x1, y0, zf), (x0, y0, zf))
    return MeshAsset(id, np.asarray(verts, np.float32), np.asarray(faces, np.int64))
