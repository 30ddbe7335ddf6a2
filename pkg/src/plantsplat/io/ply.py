"""Binary PLY persistence for scenes and point clouds.

Scenes use the common Gaussian-splat vertex layout (x y z nx ny nz f_dc_*
f_rest_* opacity scale_* rot_*), little-endian float32, so checkpoints load
in third-party viewers. ``f_rest`` is channel-major: all red coefficients,
then green, then blue.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import sh as shlib
from ..errors import ParseError
from ..scene import GaussianScene

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def scene_properties(sh_degree):
    n_rest = 3 * (shlib.num_coeffs(sh_degree) - 1)
    return (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
            + [f"f_rest_{i}" for i in range(n_rest)]
            + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"])


def _header(n, props):
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    lines += [f"property {t} {name}" for name, t in props]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def export_scene_ply(scene, path):
    n = len(scene)
    names = scene_properties(scene.sh_degree)
    data = np.zeros(n, dtype=[(name, "<f4") for name in names])
    pos = scene.positions.astype(np.float32)
    for i, axis in enumerate("xyz"):
        data[axis] = pos[:, i]
    sh = scene.sh.astype(np.float32)
    for c in range(3):
        data[f"f_dc_{c}"] = sh[:, 0, c]
    k = sh.shape[1] - 1
    for c in range(3):
        for j in range(k):
            data[f"f_rest_{c * k + j}"] = sh[:, 1 + j, c]
    data["opacity"] = scene.opacity_logits.astype(np.float32)
    for i in range(3):
        data[f"scale_{i}"] = scene.log_scales[:, i].astype(np.float32)
    for i in range(4):
        data[f"rot_{i}"] = scene.rotations[:, i].astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(_header(n, [(name, "float") for name in names]))
        fh.write(data.tobytes())


def export_cloud_ply(points, path, colors=None):
    """Plain point cloud: float32 xyz plus optional uchar rgb (colors in [0, 1])."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    props = [("x", "float"), ("y", "float"), ("z", "float")]
    dtype = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if colors is not None:
        props += [("red", "uchar"), ("green", "uchar"), ("blue", "uchar")]
        dtype += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    data = np.zeros(len(points), dtype=dtype)
    for i, axis in enumerate("xyz"):
        data[axis] = points[:, i]
    if colors is not None:
        rgb = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
        for i, ch in enumerate(("red", "green", "blue")):
            data[ch] = rgb[:, i]
    with open(path, "wb") as fh:
        fh.write(_header(len(points), props))
        fh.write(data.tobytes())


def export_ply(obj, path, colors=None):
    """Write a GaussianScene or an (N, 3) array."""
    if isinstance(obj, GaussianScene):
        export_scene_ply(obj, path)
    else:
        export_cloud_ply(obj, path, colors)


@dataclass
class PlyContent:
    points: np.ndarray
    colors: np.ndarray = None
    scene: GaussianScene = None
    properties: tuple = ()

    @property
    def is_scene(self):
        """False for foreign point clouds lacking splat attributes."""
        return self.scene is not None


def _parse_header(fh, path):
    first = fh.readline()
    if first.strip() != b"ply":
        raise ParseError("not a PLY file", path=path, offset=0)
    fmt = None
    elements = []  # (name, count, [(prop, dtype)])
    while True:
        line = fh.readline()
        if not line:
            raise ParseError("header ended before end_header", path=path, offset=fh.tell())
        tok = line.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before element", path=path, offset=fh.tell())
            if tok[1] == "list":
                raise ParseError(f"list property {tok[-1]!r} is not supported", path=path,
                                 offset=fh.tell())
            if tok[1] not in PLY_TYPES:
                raise ParseError(f"unknown property type {tok[1]!r}", path=path,
                                 offset=fh.tell())
            elements[-1][2].append((tok[2], PLY_TYPES[tok[1]]))
        elif tok[0] == "end_header":
            break
    return fmt, elements


def import_ply(path):
    """Read a binary (little or big endian) or ASCII PLY vertex element.

    Files carrying the full splat attribute set come back with ``scene``
    populated; anything else is treated as a bare point cloud.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh, path)
        start = fh.tell()
        raw = fh.read()
    if fmt not in ("binary_little_endian", "binary_big_endian", "ascii"):
        raise ParseError(f"unsupported PLY format {fmt!r}", path=path)
    verts = None
    offset = start
    for name, count, props in elements:
        if fmt == "ascii":
            if name != "vertex":
                raise ParseError("ASCII PLY with non-vertex elements is not supported",
                                 path=path)
            verts = _read_ascii(raw, count, props, path, start)
            break
        endian = "<" if fmt == "binary_little_endian" else ">"
        dtype = np.dtype([(p, endian + t) for p, t in props])
        need = dtype.itemsize * count
        rel = offset - start
        if len(raw) - rel < need:
            raise ParseError(
                f"truncated {name} data: expected {need} bytes, found {len(raw) - rel}",
                path=path, offset=start + len(raw))
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=rel)
        offset += need
        if name == "vertex":
            verts = arr
    if verts is None:
        raise ParseError("no vertex element", path=path)
    return _content_from_vertices(verts)


def _read_ascii(raw, count, props, path, start):
    lines = raw.decode("ascii", errors="replace").splitlines()
    if len(lines) < count:
        raise ParseError(f"truncated ASCII data: expected {count} rows, found {len(lines)}",
                         path=path, offset=start + len(raw))
    dtype = np.dtype([(p, t) for p, t in props])
    out = np.zeros(count, dtype=dtype)
    for i in range(count):
        vals = lines[i].split()
        if len(vals) != len(props):
            raise ParseError(f"row {i} has {len(vals)} values, expected {len(props)}",
                             path=path)
        for (p, t), v in zip(props, vals):
            out[p][i] = float(v) if t.startswith("f") else int(v)
    return out


def _content_from_vertices(v):
    names = v.dtype.names
    points = np.stack([v["x"], v["y"], v["z"]], axis=1)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.float64) / 255.0
    needed = ["f_dc_0", "f_dc_1", "f_dc_2", "opacity"] + [f"scale_{i}" for i in range(3)] \
        + [f"rot_{i}" for i in range(4)]
    if not all(n in names for n in needed):
        return PlyContent(points=points.astype(np.float64), colors=colors, properties=names)
    n_rest = sum(1 for n in names if n.startswith("f_rest_"))
    k = n_rest // 3 + 1
    degree = int(round(np.sqrt(k))) - 1
    if shlib.num_coeffs(degree) != k or n_rest % 3:
        raise ParseError(f"{n_rest} f_rest properties do not match any SH degree")
    dt = v["x"].dtype.newbyteorder("=")
    n = len(v)
    sh = np.zeros((n, k, 3), dtype=dt)
    for c in range(3):
        sh[:, 0, c] = v[f"f_dc_{c}"]
        for j in range(k - 1):
            sh[:, 1 + j, c] = v[f"f_rest_{c * (k - 1) + j}"]
    scene = GaussianScene(
        positions=points.astype(dt),
        rotations=np.stack([v[f"rot_{i}"] for i in range(4)], axis=1).astype(dt),
        log_scales=np.stack([v[f"scale_{i}"] for i in range(3)], axis=1).astype(dt),
        opacity_logits=np.asarray(v["opacity"]).astype(dt),
        sh=sh,
        sh_degree=degree,
    )
    return PlyContent(points=points.astype(np.float64), colors=colors, scene=scene,
                      properties=names)


def load_scene(path):
    content = import_ply(path)
    if not content.is_scene:
        raise ParseError("PLY file holds a point cloud, not a splat scene", path=path)
    return content.scene
