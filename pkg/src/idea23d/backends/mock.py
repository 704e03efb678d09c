"""Deterministic offline backends.

The mocks share a small closed world: each word of :data:`VOCAB` owns a hue
(index * 7.5 degrees).  The T2I mock paints a shape striped with the hues of
the vocabulary words in its prompt, the I23D mock lifts the foreground into a
textured primitive, the embedder reads hue histograms back as word vectors
and the LMM mock decodes images into words to play the three agent roles.
Because every stage preserves hue, feedback that names a missing word really
does improve the next draft, which makes the refine loop observable end to
end without any model weights.
"""

from __future__ import annotations

import colorsys
import hashlib
import re
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ..assets import ImageAsset, MeshAsset
from ..primitives import box, extrude_mask, uv_sphere
from ..render import RenderConfig, cm2i

VOCAB = (
    "rabbit", "doughnut", "car", "cat", "dog", "hat", "chair", "table",
    "robot", "dragon", "castle", "tree", "flower", "boat", "plane", "house",
    "lamp", "cup", "teapot", "guitar", "bird", "fish", "horse", "owl",
    "frog", "bear", "apple", "banana", "cake", "book", "clock", "shoe",
    "sword", "shield", "crown", "helmet", "wheel", "wing", "tail", "horn",
    "scarf", "glasses", "umbrella", "backpack", "candle", "pumpkin", "mushroom", "rocket",
)
WORD_INDEX = {w: i for i, w in enumerate(VOCAB)}
HUE_STEP = 360.0 / len(VOCAB)
EMBED_DIM = 64
CHROMA_MIN = 24
PRESENCE = 0.05
HINTS = ("centered", "front view", "studio lighting", "simple shapes",
         "high detail", "soft colors", "plain backdrop", "clean outline")
PRIMITIVES = ("sphere", "box", "extrusion")


def _h32(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:4], "little")


def words_in(text: str) -> list[str]:
    """Vocabulary words of ``text`` in order of first appearance (plural 's' tolerated)."""
    out: list[str] = []
    for tok in re.findall(r"[a-z]+", (text or "").lower()):
        w = tok if tok in WORD_INDEX else tok[:-1] if tok.endswith("s") and tok[:-1] in WORD_INDEX else None
        if w and w not in out:
            out.append(w)
    return out


def word_color(word: str) -> tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb(WORD_INDEX[word] * HUE_STEP / 360.0, 1.0, 0.9)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def hue_histogram(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-word pixel counts over chromatic visible pixels, plus a 16-bin gray histogram."""
    px = np.asarray(pixels)
    vis = px[..., 3] > 0
    rgb = px[..., :3][vis].astype(np.float64)
    mx, mn = rgb.max(1), rgb.min(1)
    chroma = mx - mn
    chromatic = chroma >= CHROMA_MIN
    c = rgb[chromatic]
    cmax, crange = mx[chromatic], chroma[chromatic]
    r, g, b = c[:, 0], c[:, 1], c[:, 2]
    hue = np.where(cmax == r, ((g - b) / crange) % 6,
                   np.where(cmax == g, (b - r) / crange + 2, (r - g) / crange + 4)) * 60.0
    pos = hue / HUE_STEP
    bins = np.rint(pos).astype(int) % len(VOCAB)
    exact = np.abs(pos - np.rint(pos)) * HUE_STEP <= 3.0
    counts = np.bincount(bins[exact], minlength=len(VOCAB)).astype(np.float64)
    gray = mx[~chromatic]
    gray_counts = np.bincount(np.minimum(gray // 16, 15).astype(int), minlength=16).astype(np.float64)
    return counts, gray_counts


def decode_words(img: ImageAsset, min_fraction: float = 0.05) -> list[str]:
    """Vocabulary words whose hue covers at least ``min_fraction`` of chromatic pixels."""
    counts, _ = hue_histogram(img.pixels)
    total = counts.sum()
    if total == 0:
        return []
    frac = counts / total
    order = sorted((i for i in range(len(VOCAB)) if frac[i] >= min_fraction), key=lambda i: (-frac[i], i))
    return [VOCAB[i] for i in order]


# ------------------------------------------------------------------- T2I

class MockT2I:
    """Procedural text-to-image: a striped shape on white, one stripe hue per vocabulary word."""

    def __init__(self, size: int = 256, stripe: int = 14, gap: int = 2):
        self.size, self.stripe, self.gap = size, stripe, gap

    def render(self, prompt: str, seed: int, k: int = 0) -> ImageAsset:
        n = self.size
        rng = np.random.default_rng([_h32(prompt), seed & 0xFFFFFFFF, k])
        kind = ("disk", "ellipse", "rect")[int(rng.integers(3))]
        cy, cx = n / 2 + rng.uniform(-0.05, 0.05, 2) * n
        yy, xx = np.mgrid[0:n, 0:n] + 0.5
        if kind == "disk":
            r = rng.uniform(0.27, 0.39) * n
            inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        elif kind == "ellipse":
            ry, rx = rng.uniform(0.24, 0.41, 2) * n
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            hy, hx = rng.uniform(0.23, 0.39, 2) * n
            inside = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
        out = np.full((n, n, 4), 255, np.uint8)
        words = words_in(prompt)
        if not words:
            out[inside, :3] = 128
        else:
            period = self.stripe + self.gap
            rows = np.arange(n)
            palette = np.array([word_color(w) for w in words], np.uint8)
            row_color = palette[(rows // period) % len(words)]
            row_color[rows % period >= self.stripe] = 0
            fill = np.broadcast_to(row_color[:, None, :], (n, n, 3))
            out[inside, :3] = fill[inside]
        return ImageAsset(f"t2i-{_h32(prompt, seed, k):08x}", out)

    def generate(self, prompt: str, n_images: int, seed: int) -> list[ImageAsset]:
        return [self.render(prompt, seed, k) for k in range(n_images)]


# ------------------------------------------------------------------ I23D

class MockI23D:
    """Lifts a matted image into a primitive textured by planar projection of that image."""

    def __init__(self, primitives: Sequence[str] = PRIMITIVES, grid: int = 64):
        bad = set(primitives) - set(PRIMITIVES)
        if bad or not primitives:
            raise ValueError(f"unknown primitives {sorted(bad)}")
        self.primitives = tuple(primitives)
        self.grid = grid

    def generate(self, img: ImageAsset, seed: int) -> MeshAsset:
        mask = img.alpha > 0
        H, W = mask.shape
        ys, xs = np.nonzero(mask)
        y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
        ch, cw = y1 - y0, x1 - x0
        kind = self.primitives[_h32(img.digest(), seed) % len(self.primitives)]
        mesh_id = f"i23d-{_h32(img.digest(), seed):08x}"
        if kind == "extrusion":
            cell = max(ch, cw) / self.grid
            rows, cols = max(1, int(np.ceil(ch / cell))), max(1, int(np.ceil(cw / cell)))
            ry = np.minimum(y0 + ((np.arange(rows) + 0.5) * cell).astype(int), H - 1)
            rx = np.minimum(x0 + ((np.arange(cols) + 0.5) * cell).astype(int), W - 1)
            base = extrude_mask(mask[np.ix_(ry, rx)], mesh_id)
            p = base.positions.astype(np.float64) * cell      # pixels, origin at crop bottom-left
            px_x, px_y = x0 + p[:, 0], y0 + rows * cell - p[:, 1]
            positions = p
        else:
            base = uv_sphere(mesh_id, 16, 24) if kind == "sphere" else box(mesh_id)
            p = base.positions.astype(np.float64)
            span = p.max(0) - p.min(0)
            depth = min(ch, cw)
            positions = (p - p.min(0)) / span * np.array([cw, ch, depth]) - np.array([0, 0, depth / 2])
            px_x, px_y = x0 + positions[:, 0], y1 - positions[:, 1]
        uvs = np.stack([px_x / W, px_y / H], 1)
        return MeshAsset(mesh_id, positions.astype(np.float32), base.faces,
                         uvs=np.clip(uvs, 0, 1).astype(np.float32), texture=img.pixels)


# -------------------------------------------------------------- embedder

class MockEmbedder:
    """64-d embeddings: dims 0..47 are vocabulary words, 48..63 a fallback channel.

    Text sets one dimension per vocabulary word.  Images weigh each word's hue
    by its share of the chromatic area, saturating at 5%, so a caption scores
    higher against an image the more of its words the image shows.

    ``affinities`` maps an image or mesh digest to a text whose embedding is
    returned for it, which lets tests script arbitrary alignments.
    """

    dim = EMBED_DIM

    def __init__(self, affinities: Optional[Mapping[str, str]] = None, render_px: int = 64):
        self.affinities = dict(affinities or {})
        self.render_cfg = RenderConfig((render_px, render_px))

    def embed_text(self, text: str) -> np.ndarray:
        v = np.zeros(EMBED_DIM)
        words = words_in(text)
        for w in words:
            v[WORD_INDEX[w]] = 1.0
        if not words:
            for tok in re.findall(r"[a-z0-9]+", (text or "").lower()):
                v[len(VOCAB) + _h32(tok) % (EMBED_DIM - len(VOCAB))] += 1.0
        if not v.any():
            v[-1] = 1.0
        return v / np.linalg.norm(v)

    def embed_image(self, img: ImageAsset) -> np.ndarray:
        key = img.digest()
        if key in self.affinities:
            return self.embed_text(self.affinities[key])
        counts, gray = hue_histogram(img.pixels)
        v = np.zeros(EMBED_DIM)
        if counts.any():
            # presence saturates: any word covering >= PRESENCE of the chromatic area counts fully
            v[:len(VOCAB)] = np.minimum(1.0, counts / counts.sum() / PRESENCE)
        elif gray.any():
            v[len(VOCAB):] = gray
        else:
            v[-1] = 1.0
        return v / np.linalg.norm(v)

    def embed_mesh(self, mesh: MeshAsset) -> np.ndarray:
        key = mesh.digest().hex()
        if key in self.affinities:
            return self.embed_text(self.affinities[key])
        views = cm2i(mesh, self.render_cfg)
        v = np.mean([self.embed_image(views[name]) for name in views.views], axis=0)
        n = np.linalg.norm(v)
        return v / n if n > 0 else self.embed_text("")


# ------------------------------------------------------------------- LMM

def _idea_words(req) -> list[str]:
    words = words_in(req.meta.get("idea_text", ""))
    for part in req.images:
        if part.label.startswith("idea:"):
            words += [w for w in decode_words(part.image) if w not in words]
    return words


def _split_columns(img: ImageAsset, n: int) -> list[ImageAsset]:
    w = img.width // n
    return [ImageAsset(f"{img.id}:{k}", img.pixels[:, k * w:(k + 1) * w]) for k in range(n)]


class HueLMM:
    """Role-aware LMM mock that reads the hue world.

    gen: prompts naming the idea's text words, the words mentioned in
    feedback and memory, plus ``attention`` newly decoded image words.
    select: the lineup column that shows the most idea words (and fewest others).
    feedback: ACCEPT when every idea word is visible in the draft grid,
    otherwise REFINE naming the first missing word.
    caption: the words decoded from all attached images.
    """

    def __init__(self, attention: int = 1):
        self.attention = attention

    def complete(self, req) -> str:
        return getattr(self, f"_{req.role}")(req)

    def _gen(self, req) -> str:
        n = int(req.meta.get("n", 1))
        words = words_in(req.meta.get("idea_text", ""))
        known = list(words)
        for w in words_in(req.meta.get("feedback") or "") + words_in(req.meta.get("memory_digest") or ""):
            if w not in known:
                known.append(w)
        fresh = [w for w in _idea_words(req) if w not in known][: self.attention]
        chosen = words + fresh + [w for w in known if w not in words]
        body = " ".join(chosen) or re.sub(r"\[[^\]]*\]", "", req.meta.get("idea_text", "")).strip() or "object"
        return "\n".join(f"{i + 1}. a {body}, {HINTS[i % len(HINTS)]}" for i in range(n))

    def _select(self, req) -> str:
        n = int(req.meta.get("n", 1))
        target = set(_idea_words(req))
        lineup = next(p.image for p in req.images if p.label == "lineup")
        scores = []
        for col in _split_columns(lineup, n):
            seen = set(decode_words(col, 0.03))
            scores.append(len(seen & target) - len(seen - target))
        return f"BEST: {int(np.argmax(scores))}"

    def _feedback(self, req) -> str:
        grid = next(p.image for p in req.images if p.label == "draft:best")
        seen = set(decode_words(grid, 0.03))
        missing = [w for w in _idea_words(req) if w not in seen]
        if not missing:
            return "VERDICT: ACCEPT\nThe draft matches the idea."
        return f"VERDICT: REFINE\nThe draft is missing the {missing[0]}."

    def _caption(self, req) -> str:
        words: list[str] = []
        for part in req.images:
            words += [w for w in decode_words(part.image) if w not in words]
        return "a " + " ".join(words) if words else "an object"


class ScriptedLMM:
    """Replays fixed replies per agent role; the last reply of a role repeats.

    Roles without a script are delegated to ``fallback`` (a :class:`HueLMM`
    by default).  Every request is kept in ``requests`` for inspection.
    """

    def __init__(self, scripts: Optional[Mapping[str, Iterable[str]]] = None, fallback=None):
        self.scripts = {role: list(replies) for role, replies in (scripts or {}).items()}
        self._pos = {role: 0 for role in self.scripts}
        self.fallback = fallback if fallback is not None else HueLMM()
        self.requests: list = []

    def complete(self, req) -> str:
        self.requests.append(req)
        replies = self.scripts.get(req.role)
        if not replies:
            return self.fallback.complete(req)
        k = min(self._pos[req.role], len(replies) - 1)
        self._pos[req.role] += 1
        return replies[k]


def mock_backends(lmm=None, primitives: Sequence[str] = PRIMITIVES, t2i_size: int = 256,
                  embed_render_px: int = 64) -> dict:
    """Keyword arguments for :class:`Gateway` wiring the full mock stack."""
    return {"lmm": lmm if lmm is not None else HueLMM(), "t2i": MockT2I(t2i_size),
            "i23d": MockI23D(primitives), "embedder": MockEmbedder(render_px=embed_render_px)}
