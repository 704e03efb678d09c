"""Six-view orthographic software rasterizer and grid composition.

Rendering is a pure function of (mesh, config).  Positions are normalized
(bounding-box center to the origin, largest extent to 1) and snapped to a
2**-16 lattice; screen coordinates are integers in 1/256 pixel units and
coverage uses inclusive integer edge functions.  Together these make the
output byte-reproducible and make opposite views exact mirror images.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .assets import ImageAsset, MeshAsset
from .errors import PreconditionError, RenderError

VIEW_NAMES = ("front", "back", "left", "right", "top", "bottom")
GRID_ORDER = (("front", "back", "left"), ("right", "top", "bottom"))
METRIC_VIEWS = ("front", "back", "left", "right")

# (right, up, forward) per view; forward is the viewing direction.
CAMERAS = {
    "front": ((1, 0, 0), (0, 1, 0), (0, 0, -1)),
    "back": ((-1, 0, 0), (0, 1, 0), (0, 0, 1)),
    "left": ((0, 0, 1), (0, 1, 0), (1, 0, 0)),
    "right": ((0, 0, -1), (0, 1, 0), (-1, 0, 0)),
    "top": ((-1, 0, 0), (0, 0, 1), (0, -1, 0)),
    "bottom": ((1, 0, 0), (0, 0, 1), (0, 1, 0)),
}

QUANT = 1 << 16
SUBPIXEL = 256
BASE_COLOR = (200.0, 200.0, 200.0)
MIN_LIGHT, MAX_LIGHT = 0.25, 1.0
BANNER_PX = 24
BANNER_BG = (40, 40, 40, 255)
BANNER_FG = (255, 255, 255, 255)
_CHUNK = 1 << 21


class RenderWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RenderConfig:
    resolution: tuple[int, int] = (512, 512)
    margin_fraction: float = 0.05
    projection: str = "orthographic"
    background: str = "transparent"
    shading: str = "flat-headlight"

    def __post_init__(self):
        w, h = self.resolution
        object.__setattr__(self, "resolution", (int(w), int(h)))
        if w < 16 or h < 16:
            raise PreconditionError(f"resolution must be at least 16x16, got {w}x{h}")
        if not 0 <= self.margin_fraction < 0.5:
            raise PreconditionError(f"margin_fraction must lie in [0, 0.5), got {self.margin_fraction}")
        if self.projection != "orthographic":
            raise PreconditionError("only orthographic projection is supported")

    @property
    def scale_px(self) -> float:
        """Pixels per normalized model unit."""
        return (1.0 - 2.0 * self.margin_fraction) * min(self.resolution)

    def to_dict(self) -> dict:
        return {"resolution": list(self.resolution), "margin_fraction": self.margin_fraction}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RenderConfig":
        return cls(tuple(d.get("resolution", (512, 512))), float(d.get("margin_fraction", 0.05)))


@dataclass(frozen=True)
class ViewSet:
    views: Mapping[str, ImageAsset]
    resolution: tuple[int, int] = field(default=(0, 0))

    def __post_init__(self):
        missing = [v for v in VIEW_NAMES if v not in self.views]
        if missing:
            raise PreconditionError(f"view set lacks views: {missing}")
        sizes = {(im.width, im.height) for im in self.views.values()}
        if len(sizes) != 1:
            raise PreconditionError(f"views differ in resolution: {sorted(sizes)}")
        object.__setattr__(self, "views", MappingProxyType({v: self.views[v] for v in VIEW_NAMES}))
        object.__setattr__(self, "resolution", sizes.pop())

    def __getitem__(self, name: str) -> ImageAsset:
        return self.views[name]

    def __eq__(self, other):
        if not isinstance(other, ViewSet):
            return NotImplemented
        return all(self.views[v] == other.views[v] for v in VIEW_NAMES)

    __hash__ = None


# ------------------------------------------------------------ rasterization

def normalize_positions(mesh: MeshAsset) -> np.ndarray:
    """Integer lattice coordinates of the centered, unit-extent mesh."""
    pos = mesh.positions.astype(np.float64)
    if len(pos) == 0 or not np.all(np.isfinite(pos)):
        raise RenderError("degenerate geometry")
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    extent = float(np.max(hi - lo))
    if not extent > 0:
        raise RenderError("degenerate geometry")
    center = (lo + hi) / 2.0
    return np.rint((pos - center) / extent * QUANT).astype(np.int64)


def _project(q: np.ndarray, view: str, cfg: RenderConfig):
    right, up, fwd = (np.asarray(a, dtype=np.int64) for a in CAMERAS[view])
    w, h = cfg.resolution
    s = cfg.scale_px * SUBPIXEL / QUANT
    sx = np.rint((q @ right) * s).astype(np.int64)
    sy = np.rint((q @ up) * s).astype(np.int64)
    X = w * SUBPIXEL // 2 + sx
    Y = h * SUBPIXEL // 2 - sy
    return X, Y, q @ fwd


def _edges(X, Y, px, py):
    """Edge functions (w0, w1, w2) of triangles X, Y (shape (n, 3)) at points px, py."""
    w0 = (X[:, 2] - X[:, 1]) * (py - Y[:, 1]) - (Y[:, 2] - Y[:, 1]) * (px - X[:, 1])
    w1 = (X[:, 0] - X[:, 2]) * (py - Y[:, 2]) - (Y[:, 0] - Y[:, 2]) * (px - X[:, 2])
    w2 = (X[:, 1] - X[:, 0]) * (py - Y[:, 0]) - (Y[:, 1] - Y[:, 0]) * (px - X[:, 0])
    return w0, w1, w2


def _edge_coefficients(TX, TY):
    """Per-triangle (A, B, C) with w_k = A*px + B*py + C, oriented so every area is >= 0."""
    A = np.empty_like(TX)
    B = np.empty_like(TX)
    C = np.empty_like(TX)
    for k, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        A[:, k] = -(TY[:, b] - TY[:, a])
        B[:, k] = TX[:, b] - TX[:, a]
        C[:, k] = (TY[:, b] - TY[:, a]) * TX[:, a] - (TX[:, b] - TX[:, a]) * TY[:, a]
    area = ((TX[:, 1] - TX[:, 0]) * (TY[:, 2] - TY[:, 0])
            - (TY[:, 1] - TY[:, 0]) * (TX[:, 2] - TX[:, 0]))
    flip = np.where(area < 0, -1, 1)[:, None]
    return A * flip, B * flip, C * flip, np.abs(area)


def _rasterize(X, Y, D, faces, width, height):
    """Per-pixel winning triangle index (-1 where empty) under a less-than depth test."""
    TX, TY, TD = X[faces], Y[faces], D[faces].astype(np.float64)
    A, B, C, area = _edge_coefficients(TX, TY)
    half = SUBPIXEL // 2
    i0 = np.clip((TX.min(axis=1) - half + SUBPIXEL - 1) // SUBPIXEL, 0, width)
    i1 = np.clip((TX.max(axis=1) - half) // SUBPIXEL, -1, width - 1)
    j0 = np.clip((TY.min(axis=1) - half + SUBPIXEL - 1) // SUBPIXEL, 0, height)
    j1 = np.clip((TY.max(axis=1) - half) // SUBPIXEL, -1, height - 1)
    nx = np.maximum(i1 - i0 + 1, 0)
    ny = np.maximum(j1 - j0 + 1, 0)
    counts = np.where(area != 0, nx * ny, 0)

    depth = np.full(width * height, np.inf)
    winner = np.full(width * height, -1, dtype=np.int64)
    tri_ids = np.flatnonzero(counts)
    if len(tri_ids) == 0:
        return winner.reshape(height, width)
    cum = np.cumsum(counts[tri_ids])
    start = 0
    while start < len(tri_ids):
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + _CHUNK, side="right"))
        stop = max(stop, start + 1)
        ids = tri_ids[start:stop]
        c = counts[ids]
        t = np.repeat(ids, c)
        k = np.arange(int(c.sum())) - np.repeat(np.cumsum(c) - c, c)
        nxt = nx[t]
        i = i0[t] + k % nxt
        j = j0[t] + k // nxt
        px = i * SUBPIXEL + half
        py = j * SUBPIXEL + half
        inside = np.ones(len(t), dtype=bool)
        w = []
        for e in range(3):
            we = A[t, e] * px + B[t, e] * py + C[t, e]
            inside &= we >= 0
            w.append(we)
        t, i, j = t[inside], i[inside], j[inside]
        z = (w[0][inside] * TD[t, 0] + w[1][inside] * TD[t, 1] + w[2][inside] * TD[t, 2]) / area[t]
        pix = j * width + i
        # nearest depth per pixel, then the lowest triangle index among exact ties
        zmin = np.full(width * height, np.inf)
        np.minimum.at(zmin, pix, z)
        hit = z == zmin[pix]
        tmin = np.full(width * height, np.iinfo(np.int64).max)
        np.minimum.at(tmin, pix[hit], t[hit])
        touched = np.flatnonzero(np.isfinite(zmin))
        better = zmin[touched] < depth[touched]
        upd = touched[better]
        depth[upd] = zmin[upd]
        winner[upd] = tmin[upd]
        start = stop
    return winner.reshape(height, width)


def sample_bilinear(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Clamp-to-edge bilinear lookup of RGB at uv (image convention); returns float64 (n, 3)."""
    th, tw = texture.shape[:2]
    rgb = texture[..., :3].astype(np.float64)
    x = uv[:, 0] * tw - 0.5
    y = uv[:, 1] * th - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xa, xb = np.clip(x0, 0, tw - 1), np.clip(x0 + 1, 0, tw - 1)
    ya, yb = np.clip(y0, 0, th - 1), np.clip(y0 + 1, 0, th - 1)
    top = rgb[ya, xa] * (1 - fx) + rgb[ya, xb] * fx
    bot = rgb[yb, xa] * (1 - fx) + rgb[yb, xb] * fx
    return top * (1 - fy) + bot * fy


def _render(mesh: MeshAsset, q: np.ndarray, view: str, cfg: RenderConfig) -> ImageAsset:
    width, height = cfg.resolution
    X, Y, D = _project(q, view, cfg)
    faces = mesh.faces.astype(np.int64)
    winner = _rasterize(X, Y, D, faces, width, height)
    out = np.zeros((height, width, 4), dtype=np.uint8)
    jj, ii = np.nonzero(winner >= 0)
    if len(jj):
        t = winner[jj, ii]
        tri = faces[t]
        w0, w1, w2 = _edges(X[tri], Y[tri], ii * SUBPIXEL + SUBPIXEL // 2, jj * SUBPIXEL + SUBPIXEL // 2)
        area = (w0 + w1 + w2).astype(np.float64)
        bary = np.stack([w0, w1, w2], axis=1) / area[:, None]

        qf = q.astype(np.float64)
        normal = np.cross(qf[tri[:, 1]] - qf[tri[:, 0]], qf[tri[:, 2]] - qf[tri[:, 0]])
        fwd = np.asarray(CAMERAS[view][2], dtype=np.float64)
        light = np.abs(normal @ fwd) / np.linalg.norm(normal, axis=1)
        light = np.clip(light, MIN_LIGHT, MAX_LIGHT)[:, None]

        if mesh.uvs is not None and mesh.texture is not None:
            uv = np.einsum("nk,nkc->nc", bary, mesh.uvs.astype(np.float64)[tri])
            color = sample_bilinear(mesh.texture, uv)
        else:
            color = np.broadcast_to(np.asarray(BASE_COLOR), (len(t), 3))
        out[jj, ii, :3] = np.clip(np.rint(color * light), 0, 255).astype(np.uint8)
        out[jj, ii, 3] = 255
    return ImageAsset(f"{mesh.id}:{view}", out)


def render_views(mesh: MeshAsset, cfg: RenderConfig, names: Sequence[str] = VIEW_NAMES) -> dict[str, ImageAsset]:
    bad = mesh.violations()
    if bad:
        raise PreconditionError("; ".join(bad))
    q = normalize_positions(mesh)
    if mesh.uvs is not None and mesh.texture is None:
        warnings.warn(f"mesh {mesh.id} has UVs but no texture; using base color", RenderWarning, stacklevel=2)
    return {name: _render(mesh, q, name, cfg) for name in names}


def cm2i(mesh: MeshAsset, cfg: RenderConfig | None = None) -> ViewSet:
    """Render ``mesh`` into its six canonical views."""
    return ViewSet(render_views(mesh, cfg or RenderConfig()))


def silhouette(img: ImageAsset) -> np.ndarray:
    return img.alpha > 0


# ------------------------------------------------------------------ banners

# Classic 5x7 column-major glyphs; bit 0 is the top row.
_GLYPHS = {
    " ": (0x00, 0x00, 0x00, 0x00, 0x00), "-": (0x08, 0x08, 0x08, 0x08, 0x08),
    ".": (0x00, 0x60, 0x60, 0x00, 0x00), ":": (0x00, 0x36, 0x36, 0x00, 0x00),
    "_": (0x40, 0x40, 0x40, 0x40, 0x40),
    "0": (0x3E, 0x51, 0x49, 0x45, 0x3E), "1": (0x00, 0x42, 0x7F, 0x40, 0x00),
    "2": (0x42, 0x61, 0x51, 0x49, 0x46), "3": (0x21, 0x41, 0x45, 0x4B, 0x31),
    "4": (0x18, 0x14, 0x12, 0x7F, 0x10), "5": (0x27, 0x45, 0x45, 0x45, 0x39),
    "6": (0x3C, 0x4A, 0x49, 0x49, 0x30), "7": (0x01, 0x71, 0x09, 0x05, 0x03),
    "8": (0x36, 0x49, 0x49, 0x49, 0x36), "9": (0x06, 0x49, 0x49, 0x29, 0x1E),
    "a": (0x20, 0x54, 0x54, 0x54, 0x78), "b": (0x7F, 0x48, 0x44, 0x44, 0x38),
    "c": (0x38, 0x44, 0x44, 0x44, 0x20), "d": (0x38, 0x44, 0x44, 0x48, 0x7F),
    "e": (0x38, 0x54, 0x54, 0x54, 0x18), "f": (0x08, 0x7E, 0x09, 0x01, 0x02),
    "g": (0x0C, 0x52, 0x52, 0x52, 0x3E), "h": (0x7F, 0x08, 0x04, 0x04, 0x78),
    "i": (0x00, 0x44, 0x7D, 0x40, 0x00), "j": (0x20, 0x40, 0x44, 0x3D, 0x00),
    "k": (0x7F, 0x10, 0x28, 0x44, 0x00), "l": (0x00, 0x41, 0x7F, 0x40, 0x00),
    "m": (0x7C, 0x04, 0x18, 0x04, 0x78), "n": (0x7C, 0x08, 0x04, 0x04, 0x78),
    "o": (0x38, 0x44, 0x44, 0x44, 0x38), "p": (0x7C, 0x14, 0x14, 0x14, 0x08),
    "q": (0x08, 0x14, 0x14, 0x18, 0x7C), "r": (0x7C, 0x08, 0x04, 0x04, 0x08),
    "s": (0x48, 0x54, 0x54, 0x54, 0x20), "t": (0x04, 0x3F, 0x44, 0x40, 0x20),
    "u": (0x3C, 0x40, 0x40, 0x20, 0x7C), "v": (0x1C, 0x20, 0x40, 0x20, 0x1C),
    "w": (0x3C, 0x40, 0x30, 0x40, 0x3C), "x": (0x44, 0x28, 0x10, 0x28, 0x44),
    "y": (0x0C, 0x50, 0x50, 0x50, 0x3C), "z": (0x44, 0x64, 0x54, 0x4C, 0x44),
}
_GLYPH_SCALE = 2


def text_mask(text: str) -> np.ndarray:
    """Boolean bitmap of ``text`` at 2x scale (14 px tall, 12 px per character)."""
    cols = []
    for ch in text.lower():
        glyph = _GLYPHS.get(ch, _GLYPHS["_"])
        cols.extend(glyph)
        cols.append(0)
    if not cols:
        return np.zeros((7 * _GLYPH_SCALE, 0), dtype=bool)
    bits = np.array([[(c >> r) & 1 for c in cols] for r in range(7)], dtype=bool)
    return np.kron(bits, np.ones((_GLYPH_SCALE, _GLYPH_SCALE), dtype=bool))


def banner(text: str, width: int, height: int = BANNER_PX) -> np.ndarray:
    out = np.empty((height, width, 4), dtype=np.uint8)
    out[:] = BANNER_BG
    mask = text_mask(text)[:height - 2, :max(width - 4, 0)]
    top = (height - mask.shape[0]) // 2
    sub = out[top:top + mask.shape[0], 4:4 + mask.shape[1]]
    sub[mask] = BANNER_FG
    return out


def compose_view_grid(views: ViewSet, banner_px: int = BANNER_PX) -> ImageAsset:
    """3x2 grid (front, back, left / right, top, bottom), each cell under a name banner."""
    w, h = views.resolution
    out = np.zeros((2 * (h + banner_px), 3 * w, 4), dtype=np.uint8)
    for r, row in enumerate(GRID_ORDER):
        for c, name in enumerate(row):
            y, x = r * (h + banner_px), c * w
            out[y:y + banner_px, x:x + w] = banner(name, w, banner_px)
            out[y + banner_px:y + banner_px + h, x:x + w] = views[name].pixels
    mesh_id = views["front"].id.rsplit(":", 1)[0]
    return ImageAsset(f"{mesh_id}:grid", out)


def compose_lineup(grids: Sequence[ImageAsset], banner_px: int = BANNER_PX) -> ImageAsset:
    if not 1 <= len(grids) <= 8:
        raise PreconditionError(f"lineup takes 1 to 8 drafts, got {len(grids)}")
    sizes = {(g.width, g.height) for g in grids}
    if len(sizes) != 1:
        raise PreconditionError("resolution mismatch")
    gw, gh = sizes.pop()
    out = np.zeros((gh + banner_px, gw * len(grids), 4), dtype=np.uint8)
    for k, g in enumerate(grids):
        out[:banner_px, k * gw:(k + 1) * gw] = banner(f"draft {k}", gw, banner_px)
        out[banner_px:, k * gw:(k + 1) * gw] = g.pixels
    return ImageAsset("lineup", out)


def compose_draft_lineup(drafts, banner_px: int = BANNER_PX) -> ImageAsset:
    """Side-by-side view grids of ``drafts``, each headed by its 0-based index."""
    if not 1 <= len(drafts) <= 8:
        raise PreconditionError(f"lineup takes 1 to 8 drafts, got {len(drafts)}")
    if len({d.views.resolution for d in drafts}) != 1:
        raise PreconditionError("resolution mismatch")
    return compose_lineup([compose_view_grid(d.views, banner_px) for d in drafts], banner_px)
