"""Built-in background removal: corner flood-fill over near-uniform color."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .assets import ImageAsset
from .errors import EmptyForeground

TAU = 12 / 255
PREMATTED_FRACTION = 0.05


def remove_background(img: ImageAsset, tau: float = TAU) -> ImageAsset:
    """Make the background of ``img`` transparent.

    Images that already have at least 5% fully transparent pixels are
    treated as matted and returned unchanged.  Otherwise each corner seeds a
    4-connected flood fill over pixels whose 3x3-median-filtered color stays
    within ``tau`` (per channel) of that corner's mean patch color.

    Raises EmptyForeground when nothing would remain visible.
    """
    alpha = img.alpha
    if np.mean(alpha == 0) >= PREMATTED_FRACTION:
        if not np.any(alpha > 0):
            raise EmptyForeground(f"image {img.id} has no foreground")
        return img

    h, w = alpha.shape
    rgb = ndimage.median_filter(img.pixels[..., :3].astype(np.int16), size=(3, 3, 1), mode="nearest")
    k = max(1, min(h, w) // 32)
    limit = tau * 255 + 1e-9
    background = np.zeros((h, w), dtype=bool)
    for r0, c0, rr, cc in ((0, 0, 0, 0), (0, w - k, 0, w - 1), (h - k, 0, h - 1, 0),
                           (h - k, w - k, h - 1, w - 1)):
        ref = rgb[r0:r0 + k, c0:c0 + k].reshape(-1, 3).mean(axis=0)
        near = np.all(np.abs(rgb - ref) <= limit, axis=-1)
        if not near[rr, cc] or background[rr, cc]:
            continue
        labels, _ = ndimage.label(near)
        background |= labels == labels[rr, cc]

    out = img.pixels.copy()
    out[background, 3] = 0
    if not np.any(out[..., 3] > 0):
        raise EmptyForeground(f"image {img.id} is all background")
    return ImageAsset(img.id, out, img.source_path)
