"""Build the 12-case miniature evaluation set under data/mini/.

The modality mix (1 text-only, 3 text+image, 4 text+mesh, 4 text+image+mesh)
and tag mix (1/4/7 cases with 0/1/2 tags) scale the 198-case benchmark's
9/57/68/64 and 9/62/127 down to 12 cases.  Assets are drawn in the mock
backends' hue world so every referenced object is recoverable from pixels.

    python3 scripts/make_mini_dataset.py [--out data/mini]
"""

import argparse
import json
from pathlib import Path

from idea23d.assets import MeshAsset
from idea23d.backends.mock import MockT2I
from idea23d.meshio import write_glb
from idea23d.primitives import box, planar_uvs, uv_sphere

# (id, text, image words, mesh words, tags, ground-truth caption)
CASES = [
    ("mini-01", "a robot with a dragon tail", None, None, [], "a robot with a dragon tail"),
    ("mini-02", "a rabbit in the colors of <asset:img02>", "doughnut hat", None, ["color"],
     "a rabbit with a doughnut and a hat"),
    ("mini-03", "a teapot shaped like <asset:img03>", "owl frog", None, ["shape", "color"],
     "a teapot shaped like an owl and a frog"),
    ("mini-04", "a castle with the palette of <asset:img04>", "tree flower boat", None, ["style", "color"],
     "a castle with a tree, a flower and a boat"),
    ("mini-05", "a lamp styled after <asset:mesh05>", None, "cup guitar", ["style"],
     "a lamp styled like a cup and a guitar"),
    ("mini-06", "a horse carrying <asset:mesh06>", None, "backpack candle", ["composition", "shape"],
     "a horse carrying a backpack and a candle"),
    ("mini-07", "a bear next to <asset:mesh07>", None, "apple banana cake", ["composition"],
     "a bear next to an apple, a banana and a cake"),
    ("mini-08", "a clock mounted on <asset:mesh08>", None, "book shoe", ["shape", "composition"],
     "a clock mounted on a book and a shoe"),
    ("mini-09", "a knight <asset:mesh09> holding <asset:img09>", "sword shield", "helmet crown",
     ["composition", "style"], "a knight with a helmet and a crown holding a sword and a shield"),
    ("mini-10", "a car with <asset:img10> on <asset:mesh10>", "wheel wing", "plane", ["shape"],
     "a car with a wheel and a wing on a plane"),
    ("mini-11", "a fish wearing <asset:img11> beside <asset:mesh11>", "scarf glasses", "umbrella",
     ["style", "color"], "a fish wearing a scarf and glasses beside an umbrella"),
    ("mini-12", "a cat under <asset:mesh12> with <asset:img12>", "pumpkin", "mushroom rocket",
     ["composition", "color"], "a cat under a mushroom and a rocket with a pumpkin"),
]


def textured_mesh(mesh_id: str, words: str, seed: int) -> MeshAsset:
    tex = MockT2I(128).render(words, seed)
    base = uv_sphere(mesh_id, 12, 16) if seed % 2 else box(mesh_id, (1.0, 0.75, 0.5))
    return MeshAsset(mesh_id, base.positions, base.faces, uvs=planar_uvs(base.positions, (0.2, 0.2, 0.8, 0.8)),
                     texture=tex.pixels)


def build(out: Path) -> Path:
    assets = out / "assets"
    assets.mkdir(parents=True, exist_ok=True)
    cases = []
    for n, (cid, text, img_words, mesh_words, tags, caption) in enumerate(CASES):
        suffix = cid.split("-")[1]
        entry = {"id": cid, "text": [text], "images": [], "meshes": [], "gt_caption": caption, "tags": tags}
        if img_words:
            img = MockT2I(256).render(img_words, n).with_id(f"img{suffix}")
            img.save(assets / f"img{suffix}.png")
            entry["images"].append({"id": f"img{suffix}", "path": f"assets/img{suffix}.png"})
        if mesh_words:
            write_glb(textured_mesh(f"mesh{suffix}", mesh_words, n), assets / f"mesh{suffix}.glb")
            entry["meshes"].append({"id": f"mesh{suffix}", "path": f"assets/mesh{suffix}.glb"})
        cases.append(entry)
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"cases": cases}, indent=2) + "\n")
    return manifest


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "data" / "mini")
    args = ap.parse_args()
    print(build(args.out))


if __name__ == "__main__":
    main()
