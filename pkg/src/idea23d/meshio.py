"""OBJ (+MTL, one diffuse texture) and binary glTF reading/writing.

Both formats are normalized to :class:`MeshAsset`. Internally UVs use the
glTF/image convention (v grows downwards), so GLB round-trips are bit-exact.
OBJ stores ``1 - v``; values are written with float64 shortest-repr so the
flip survives a round-trip exactly as well.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .assets import ImageAsset, MeshAsset

log = logging.getLogger(__name__)

GLB_MAGIC = 0x46546C67
CHUNK_JSON = 0x4E4F534A
CHUNK_BIN = 0x004E4942

_COMPONENTS = {5120: np.int8, 5121: np.uint8, 5122: np.int16, 5123: np.uint16,
               5125: np.uint32, 5126: np.float32}
_WIDTH = {"SCALAR": 1, "VEC2": 2, "VEC3": 3, "VEC4": 4}


# --------------------------------------------------------------------- OBJ

def _obj_index(tok: str, n: int) -> int:
    i = int(tok)
    return i - 1 if i > 0 else n + i


def read_obj(path, id: Optional[str] = None) -> MeshAsset:
    path = Path(path)
    v, vt, vn = [], [], []
    corners: list[tuple[int, int, int]] = []
    tris: list[tuple[int, int, int]] = []
    mtllibs: list[str] = []
    lookup: dict[tuple[int, int, int], int] = {}
    for raw in path.read_text().splitlines():
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        key, args = parts[0], parts[1:]
        if key == "v":
            v.append([float(a) for a in args[:3]])
        elif key == "vt":
            vt.append([float(a) for a in args[:2]] + [0.0] * (2 - len(args[:2])))
        elif key == "vn":
            vn.append([float(a) for a in args[:3]])
        elif key == "mtllib":
            mtllibs.append(" ".join(args))
        elif key == "f":
            poly = []
            for tok in args:
                fields = tok.split("/") + ["", ""]
                c = (_obj_index(fields[0], len(v)),
                     _obj_index(fields[1], len(vt)) if fields[1] else -1,
                     _obj_index(fields[2], len(vn)) if fields[2] else -1)
                if c not in lookup:
                    lookup[c] = len(corners)
                    corners.append(c)
                poly.append(lookup[c])
            for k in range(1, len(poly) - 1):
                tris.append((poly[0], poly[k], poly[k + 1]))

    # canonical vertex order: corners sorted by (v, vt, vn) index, so a file
    # written by write_obj reads back with its original vertex numbering
    order = sorted(range(len(corners)), key=corners.__getitem__)
    rank = np.empty(len(corners), dtype=np.int64)
    rank[order] = np.arange(len(corners))
    corners = [corners[i] for i in order]
    tris = [tuple(int(rank[i]) for i in tri) for tri in tris]

    pos = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    idx = np.asarray(corners, dtype=np.int64).reshape(-1, 3)
    positions = pos[idx[:, 0]] if len(idx) else np.zeros((0, 3))
    uvs = normals = None
    if vt and np.any(idx[:, 1] >= 0):
        t = np.asarray(vt, dtype=np.float64)
        uvs = np.where(idx[:, 1:2] >= 0, t[np.maximum(idx[:, 1], 0)], 0.0)
        uvs[:, 1] = 1.0 - uvs[:, 1]
    if vn and np.all(idx[:, 2] >= 0):
        normals = np.asarray(vn, dtype=np.float64)[idx[:, 2]]

    texture = None
    for lib in mtllibs:
        texture = _read_mtl_texture(path.parent / lib)
        if texture is not None:
            break
    return MeshAsset(id or path.stem, positions, np.asarray(tris, dtype=np.int64),
                     normals=normals, uvs=uvs, texture=texture, source_path=str(path))


def _read_mtl_texture(mtl_path: Path) -> Optional[np.ndarray]:
    if not mtl_path.exists():
        log.warning("material library %s not found", mtl_path)
        return None
    for raw in mtl_path.read_text().splitlines():
        parts = raw.split("#", 1)[0].split()
        if parts and parts[0] == "map_Kd" and len(parts) > 1:
            tex_path = mtl_path.parent / parts[-1]
            if tex_path.exists():
                return ImageAsset.load(tex_path).pixels
            log.warning("texture %s not found", tex_path)
    return None


def _num(x) -> str:
    return repr(float(x))


def write_obj(mesh: MeshAsset, path) -> Path:
    """Write ``mesh`` to ``path``; a texture goes to ``<stem>.png`` via ``<stem>.mtl``."""
    path = Path(path)
    lines = [f"# {mesh.id}"]
    if mesh.texture is not None:
        ImageAsset("tex", mesh.texture).save(path.with_suffix(".png"))
        path.with_suffix(".mtl").write_text(
            f"newmtl material0\nKd 1 1 1\nmap_Kd {path.with_suffix('.png').name}\n")
        lines.append(f"mtllib {path.with_suffix('.mtl').name}")
        lines.append("usemtl material0")
    lines += [f"v {_num(a)} {_num(b)} {_num(c)}" for a, b, c in mesh.positions]
    if mesh.uvs is not None:
        lines += [f"vt {_num(u)} {_num(1.0 - float(t))}" for u, t in mesh.uvs]
    if mesh.normals is not None:
        lines += [f"vn {_num(a)} {_num(b)} {_num(c)}" for a, b, c in mesh.normals]
    for tri in mesh.faces.astype(np.int64) + 1:
        if mesh.uvs is not None and mesh.normals is not None:
            lines.append("f " + " ".join(f"{i}/{i}/{i}" for i in tri))
        elif mesh.uvs is not None:
            lines.append("f " + " ".join(f"{i}/{i}" for i in tri))
        elif mesh.normals is not None:
            lines.append("f " + " ".join(f"{i}//{i}" for i in tri))
        else:
            lines.append("f " + " ".join(str(i) for i in tri))
    path.write_text("\n".join(lines) + "\n")
    return path


# --------------------------------------------------------------------- GLB

def _pad4(b: bytes, fill: bytes) -> bytes:
    return b + fill * (-len(b) % 4)


def mesh_to_glb(mesh: MeshAsset) -> bytes:
    blobs: list[bytes] = []
    views: list[dict] = []
    accessors: list[dict] = []

    def add_view(data: bytes, target=None) -> int:
        offset = sum(len(b) for b in blobs)
        view = {"buffer": 0, "byteOffset": offset, "byteLength": len(data)}
        if target:
            view["target"] = target
        views.append(view)
        blobs.append(_pad4(data, b"\0"))
        return len(views) - 1

    def add_accessor(arr: np.ndarray, ctype: int, kind: str, target: int, bounds=False) -> int:
        acc = {"bufferView": add_view(arr.tobytes(), target), "componentType": ctype,
               "count": int(arr.shape[0]), "type": kind}
        if bounds:
            acc["min"] = [float(x) for x in arr.min(axis=0)]
            acc["max"] = [float(x) for x in arr.max(axis=0)]
        accessors.append(acc)
        return len(accessors) - 1

    attrs = {"POSITION": add_accessor(mesh.positions, 5126, "VEC3", 34962, bounds=True)}
    if mesh.normals is not None:
        attrs["NORMAL"] = add_accessor(mesh.normals, 5126, "VEC3", 34962)
    if mesh.uvs is not None:
        attrs["TEXCOORD_0"] = add_accessor(mesh.uvs, 5126, "VEC2", 34962)
    indices = add_accessor(mesh.faces.reshape(-1), 5125, "SCALAR", 34963)
    prim = {"attributes": attrs, "indices": indices, "mode": 4}
    doc = {
        "asset": {"version": "2.0", "generator": "idea23d"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0, "name": mesh.id}],
        "meshes": [{"name": mesh.id, "primitives": [prim]}],
        "accessors": accessors,
        "bufferViews": views,
    }
    if mesh.texture is not None:
        img_view = add_view(ImageAsset("tex", mesh.texture).to_png())
        doc["images"] = [{"bufferView": img_view, "mimeType": "image/png"}]
        doc["samplers"] = [{"magFilter": 9729, "minFilter": 9729, "wrapS": 33071, "wrapT": 33071}]
        doc["textures"] = [{"source": 0, "sampler": 0}]
        doc["materials"] = [{"pbrMetallicRoughness": {"baseColorTexture": {"index": 0},
                                                      "metallicFactor": 0.0}}]
        prim["material"] = 0
    binary = b"".join(blobs)
    doc["buffers"] = [{"byteLength": len(binary)}]
    js = _pad4(json.dumps(doc, separators=(",", ":"), sort_keys=True).encode(), b" ")
    total = 12 + 8 + len(js) + 8 + len(binary)
    return b"".join([
        struct.pack("<III", GLB_MAGIC, 2, total),
        struct.pack("<II", len(js), CHUNK_JSON), js,
        struct.pack("<II", len(binary), CHUNK_BIN), binary,
    ])


def _read_accessor(doc: dict, binary: bytes, index: int) -> np.ndarray:
    acc = doc["accessors"][index]
    dtype = np.dtype(_COMPONENTS[acc["componentType"]])
    width = _WIDTH[acc["type"]]
    count = acc["count"]
    view = doc["bufferViews"][acc["bufferView"]]
    if view.get("buffer", 0) != 0:
        raise ValueError("only the embedded GLB buffer is supported")
    start = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
    stride = view.get("byteStride", 0) or dtype.itemsize * width
    if stride == dtype.itemsize * width:
        arr = np.frombuffer(binary, dtype=dtype, count=count * width, offset=start)
    else:
        rows = [np.frombuffer(binary, dtype=dtype, count=width, offset=start + i * stride)
                for i in range(count)]
        arr = np.concatenate(rows) if rows else np.zeros(0, dtype)
    return arr.reshape(count, width) if width > 1 else arr


def glb_to_mesh(data: bytes, id: str = "mesh", source_path=None) -> MeshAsset:
    """Parse a binary glTF; all triangle primitives are merged, node transforms ignored."""
    magic, version, _ = struct.unpack_from("<III", data, 0)
    if magic != GLB_MAGIC or version != 2:
        raise ValueError("not a glTF 2.0 binary")
    offset, doc, binary = 12, None, b""
    while offset < len(data):
        length, ctype = struct.unpack_from("<II", data, offset)
        chunk = data[offset + 8: offset + 8 + length]
        if ctype == CHUNK_JSON:
            doc = json.loads(chunk)
        elif ctype == CHUNK_BIN:
            binary = chunk
        offset += 8 + length
    if doc is None:
        raise ValueError("GLB without JSON chunk")

    pos, nrm, uv, faces = [], [], [], []
    have_nrm = True
    texture = None
    base = 0
    for m in doc.get("meshes", []):
        for prim in m.get("primitives", []):
            if prim.get("mode", 4) != 4:
                log.warning("skipping non-triangle primitive (mode %s)", prim.get("mode"))
                continue
            attrs = prim["attributes"]
            p = _read_accessor(doc, binary, attrs["POSITION"]).astype(np.float32)
            n = len(p)
            pos.append(p)
            if "NORMAL" in attrs:
                nrm.append(_read_accessor(doc, binary, attrs["NORMAL"]).astype(np.float32))
            else:
                have_nrm = False
            if "TEXCOORD_0" in attrs:
                uv.append(_read_accessor(doc, binary, attrs["TEXCOORD_0"]).astype(np.float32))
            else:
                uv.append(np.zeros((n, 2), np.float32))
            if "indices" in prim:
                idx = _read_accessor(doc, binary, prim["indices"]).astype(np.int64)
            else:
                idx = np.arange(n, dtype=np.int64)
            faces.append(idx.reshape(-1, 3) + base)
            base += n
            if texture is None and "material" in prim:
                texture = _material_texture(doc, binary, prim["material"])
    if not pos:
        raise ValueError("GLB contains no triangle primitives")
    any_uv = any("TEXCOORD_0" in p["attributes"] for m in doc.get("meshes", [])
                 for p in m.get("primitives", []))
    return MeshAsset(
        id,
        np.concatenate(pos),
        np.concatenate(faces),
        normals=np.concatenate(nrm) if have_nrm and nrm else None,
        uvs=np.concatenate(uv) if any_uv else None,
        texture=texture,
        source_path=source_path,
    )


def _material_texture(doc, binary, material_index) -> Optional[np.ndarray]:
    try:
        tex_index = doc["materials"][material_index]["pbrMetallicRoughness"]["baseColorTexture"]["index"]
        image = doc["images"][doc["textures"][tex_index]["source"]]
        view = doc["bufferViews"][image["bufferView"]]
    except (KeyError, IndexError):
        return None
    start = view.get("byteOffset", 0)
    return ImageAsset.from_png(binary[start: start + view["byteLength"]], "tex").pixels


def read_glb(path, id: Optional[str] = None) -> MeshAsset:
    path = Path(path)
    return glb_to_mesh(path.read_bytes(), id or path.stem, str(path))


def write_glb(mesh: MeshAsset, path) -> Path:
    path = Path(path)
    path.write_bytes(mesh_to_glb(mesh))
    return path


def load_mesh(path, id: Optional[str] = None) -> MeshAsset:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return read_obj(path, id)
    if suffix == ".glb":
        return read_glb(path, id)
    raise ValueError(f"unsupported mesh format: {path.suffix} (expected .obj or .glb)")
