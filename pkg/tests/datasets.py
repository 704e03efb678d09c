"""Dataset builders for evaluation tests."""

import json
from pathlib import Path

import numpy as np

from idea23d.meshio import write_glb
from idea23d.primitives import box

MINI = Path(__file__).resolve().parents[1] / "data" / "mini" / "manifest.json"
MODALITY_198 = {"text_only": 9, "text_image": 57, "text_mesh": 68, "text_image_mesh": 64}
TAGS_198 = {0: 9, 1: 62, 2: 127}
TAG_NAMES = ("shape", "color", "style", "composition")


def subset(path: Path, ids, out_dir: Path) -> Path:
    """Copy of a manifest restricted to ``ids`` with absolute asset paths."""
    doc = json.loads(Path(path).read_text())
    base = Path(path).parent
    cases = []
    for case in doc["cases"]:
        if case["id"] in ids:
            case = dict(case)
            for key in ("images", "meshes"):
                case[key] = [dict(e, path=str(base / e["path"])) for e in case[key]]
            cases.append(case)
    out = Path(out_dir) / "manifest.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"cases": cases}))
    return out


def synthetic_198(out_dir: Path) -> Path:
    """A manifest with the benchmark's modality and tag counts, sharing two tiny assets."""
    out_dir = Path(out_dir)
    (out_dir / "assets").mkdir(parents=True, exist_ok=True)
    from idea23d.assets import ImageAsset
    ImageAsset("img", np.full((8, 8, 4), 255, np.uint8)).save(out_dir / "assets" / "img.png")
    write_glb(box("mesh"), out_dir / "assets" / "mesh.glb")
    modalities = [m for m, n in MODALITY_198.items() for _ in range(n)]
    tag_counts = [k for k, n in TAGS_198.items() for _ in range(n)]
    # interleave so tags are not correlated with modality
    tag_counts = tag_counts[::2] + tag_counts[1::2]
    cases = []
    for i, (mod, nt) in enumerate(zip(modalities, tag_counts)):
        cid = f"case-{i + 1:03d}"
        case = {"id": cid, "text": [f"an object {i}"], "images": [], "meshes": [], "gt_caption": f"object {i}",
                "tags": list(TAG_NAMES[i % 4: i % 4 + nt]) if i % 4 + nt <= 4 else list(TAG_NAMES[:nt])}
        if "image" in mod:
            case["images"].append({"id": f"i{i}", "path": "assets/img.png"})
        if "mesh" in mod:
            case["meshes"].append({"id": f"m{i}", "path": "assets/mesh.glb"})
        cases.append(case)
    out = out_dir / "manifest.json"
    out.write_text(json.dumps({"cases": cases}))
    return out
