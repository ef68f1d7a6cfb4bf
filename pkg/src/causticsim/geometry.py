"""Rigid transforms, triangle meshes, and the procedural shapes in the default catalog.

Quaternions are stored scalar-first, ``(w, x, y, z)``.  World space is z-up
and cameras look down their local -z axis with +y up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]

IDENTITY_QUAT: Quat = (1.0, 0.0, 0.0, 0.0)


# quaternions -----------------------------------------------------------------

def quat_mul(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_normalize(q) -> Quat:
    n = math.sqrt(sum(c * c for c in q))
    return tuple(float(c) / n for c in q)  # type: ignore[return-value]


def quat_from_axis_angle(axis, angle: float) -> Quat:
    ax = np.asarray(axis, dtype=float)
    ax = ax / np.linalg.norm(ax)
    s = math.sin(angle / 2.0)
    return (math.cos(angle / 2.0), float(ax[0] * s), float(ax[1] * s), float(ax[2] * s))


def quat_rotate(q: Quat, v) -> Vec3:
    """Rotate ``v`` by unit quaternion ``q``.

    Uses ``v + 2w(u x v) + 2u x (u x v)`` so components along the rotation
    axis come back bit-exact.
    """
    w, x, y, z = q
    vx, vy, vz = (float(c) for c in v)
    cx = y * vz - z * vy
    cy = z * vx - x * vz
    cz = x * vy - y * vx
    ccx = y * cz - z * cy
    ccy = z * cx - x * cz
    ccz = x * cy - y * cx
    return (vx + 2.0 * (w * cx + ccx), vy + 2.0 * (w * cy + ccy), vz + 2.0 * (w * cz + ccz))


def quat_to_matrix(q: Quat) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> Quat:
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
    q = quat_normalize(q)
    if q[0] < 0:
        q = tuple(-c for c in q)
    return q  # type: ignore[return-value]


def quat_between(a, b) -> Quat:
    """Shortest-arc rotation taking direction ``a`` onto direction ``b``."""
    a = np.asarray(a, float) / np.linalg.norm(a)
    b = np.asarray(b, float) / np.linalg.norm(b)
    d = float(np.dot(a, b))
    if d > 1.0 - 1e-12:
        return IDENTITY_QUAT
    if d < -1.0 + 1e-12:
        ortho = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(ortho) < 1e-6:
            ortho = np.cross(a, [0.0, 1.0, 0.0])
        return quat_from_axis_angle(ortho, math.pi)
    c = np.cross(a, b)
    return quat_normalize((1.0 + d, c[0], c[1], c[2]))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Quat:
    """Camera rotation whose -z axis points from ``eye`` to ``target``."""
    eye = np.asarray(eye, float)
    fwd = np.asarray(target, float) - eye
    fwd /= np.linalg.norm(fwd)
    upv = np.asarray(up, float)
    if abs(float(np.dot(fwd, upv))) > 1.0 - 1e-9:
        upv = np.array([0.0, 1.0, 0.0]) if abs(fwd[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    right = np.cross(fwd, upv)
    right /= np.linalg.norm(right)
    cam_up = np.cross(right, fwd)
    m = np.stack([right, cam_up, -fwd], axis=1)
    return quat_from_matrix(m)


# meshes ------------------------------------------------------------------------

@dataclass(eq=False)
class Mesh:
    """Indexed triangle mesh with per-vertex normals."""

    vertices: np.ndarray  # (V, 3) float64
    normals: np.ndarray  # (V, 3) float64, unit
    faces: np.ndarray  # (F, 3) int64, counter-clockwise seen from outside

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)

    @property
    def bounding_radius(self) -> float:
        return float(np.sqrt((self.vertices**2).sum(axis=1)).max())

    def transformed(self, translation, rotation: Quat, scale: float) -> tuple[np.ndarray, np.ndarray]:
        """World-space vertices and normals under a rigid transform + uniform scale."""
        r = quat_to_matrix(rotation)
        verts = (self.vertices * scale) @ r.T + np.asarray(translation, float)
        norms = self.normals @ r.T
        norms /= np.linalg.norm(norms, axis=1, keepdims=True)
        return verts, norms

    def volume_centroid(self) -> np.ndarray:
        v = self.vertices[self.faces]
        signed = np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])) / 6.0
        vol = signed.sum()
        if abs(vol) < 1e-15:
            return self.vertices.mean(axis=0)
        return (signed[:, None] * v.sum(axis=1) / 4.0).sum(axis=0) / vol


def _merge_by_position(verts: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    keys = np.round(verts, 12)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)[faces]


def icosphere(radius: float = 1.0, subdivisions: int = 3) -> Mesh:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    for _ in range(subdivisions):
        a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
        ab, bc, ca = a + b, b + c, c + a
        ab /= np.linalg.norm(ab, axis=1, keepdims=True)
        bc /= np.linalg.norm(bc, axis=1, keepdims=True)
        ca /= np.linalg.norm(ca, axis=1, keepdims=True)
        tri = np.stack(
            [
                np.stack([a, ab, ca], 1),
                np.stack([ab, b, bc], 1),
                np.stack([ca, bc, c], 1),
                np.stack([ab, bc, ca], 1),
            ],
            1,
        ).reshape(-1, 3, 3)
        verts, faces = _merge_by_position(tri.reshape(-1, 3), np.arange(len(tri) * 3).reshape(-1, 3))
        verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    return Mesh(verts * radius, verts.copy(), faces)


def _flat_mesh(polys: list[np.ndarray]) -> Mesh:
    """Mesh with flat shading from a list of convex CCW polygons."""
    verts, norms, faces = [], [], []
    for poly in polys:
        poly = np.asarray(poly, float)
        n = np.cross(poly[1] - poly[0], poly[2] - poly[0])
        n /= np.linalg.norm(n)
        base = len(verts)
        verts.extend(poly)
        norms.extend([n] * len(poly))
        for k in range(1, len(poly) - 1):
            faces.append([base, base + k, base + k + 1])
    return Mesh(np.array(verts), np.array(norms), np.array(faces))


def box(size=(1.0, 1.0, 1.0)) -> Mesh:
    hx, hy, hz = (s / 2.0 for s in size)
    c = np.array([[sx * hx, sy * hy, sz * hz] for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)])
    quads = [
        [0, 2, 3, 1], [4, 5, 7, 6],  # -z, +z
        [0, 1, 5, 4], [2, 6, 7, 3],  # -y, +y
        [0, 4, 6, 2], [1, 3, 7, 5],  # -x, +x
    ]
    return _flat_mesh([c[q] for q in quads])


def cylinder(radius: float = 0.5, height: float = 1.0, segments: int = 48) -> Mesh:
    """Closed cylinder centered at the origin; smooth sides, flat caps."""
    ang = np.linspace(0.0, 2 * math.pi, segments, endpoint=False)
    ring = np.stack([np.cos(ang), np.sin(ang), np.zeros_like(ang)], 1)
    h = height / 2.0
    verts, norms, faces = [], [], []
    for i in range(segments):
        j = (i + 1) % segments
        base = len(verts)
        for k in (i, j):
            verts.append(ring[k] * radius + [0, 0, -h])
            verts.append(ring[k] * radius + [0, 0, h])
            norms.extend([ring[k], ring[k]])
        faces.extend([[base, base + 2, base + 3], [base, base + 3, base + 1]])
    for sign in (-1.0, 1.0):
        center = len(verts)
        verts.append([0, 0, sign * h])
        norms.append([0, 0, sign])
        first = len(verts)
        for k in range(segments):
            verts.append(ring[k] * radius + [0, 0, sign * h])
            norms.append([0, 0, sign])
        for k in range(segments):
            a, b = first + k, first + (k + 1) % segments
            faces.append([center, a, b] if sign > 0 else [center, b, a])
    return Mesh(np.array(verts, float), np.array(norms, float), np.array(faces))


def cone(radius: float = 0.5, height: float = 1.0, segments: int = 48) -> Mesh:
    """Closed cone with its base centroid offset so the volume centroid sits near the origin."""
    ang = np.linspace(0.0, 2 * math.pi, segments, endpoint=False)
    z0 = -height / 4.0
    apex = np.array([0.0, 0.0, z0 + height])
    slope = radius / height
    verts, norms, faces = [], [], []
    for i in range(segments):
        j = (i + 1) % segments
        base = len(verts)
        for k in (i, j):
            d = np.array([math.cos(ang[k]), math.sin(ang[k]), 0.0])
            n = np.array([d[0], d[1], slope])
            n /= np.linalg.norm(n)
            verts.append(d * radius + [0, 0, z0])
            norms.append(n)
        mid = 0.5 * (ang[i] + (ang[j] if j else 2 * math.pi))
        na = np.array([math.cos(mid), math.sin(mid), slope])
        verts.append(apex)
        norms.append(na / np.linalg.norm(na))
        faces.append([base, base + 1, base + 2])
    center = len(verts)
    verts.append([0, 0, z0])
    norms.append([0, 0, -1])
    first = len(verts)
    for k in range(segments):
        verts.append([radius * math.cos(ang[k]), radius * math.sin(ang[k]), z0])
        norms.append([0, 0, -1])
    for k in range(segments):
        faces.append([center, first + (k + 1) % segments, first + k])
    return Mesh(np.array(verts, float), np.array(norms, float), np.array(faces))


def wedge(width: float = 1.0, depth: float = 1.0, height: float = 1.0) -> Mesh:
    """Triangular prism: isosceles cross-section in the xz plane, extruded along y."""
    hw, hd = width / 2.0, depth / 2.0
    zb, zt = -height / 3.0, 2.0 * height / 3.0
    a0, b0, c0 = [-hw, -hd, zb], [hw, -hd, zb], [0.0, -hd, zt]
    a1, b1, c1 = [-hw, hd, zb], [hw, hd, zb], [0.0, hd, zt]
    polys = [
        [a0, b0, c0],
        [a1, c1, b1],
        [a0, a1, b1, b0],
        [b0, b1, c1, c0],
        [a0, c0, c1, a1],
    ]
    return _flat_mesh([np.array(p) for p in polys])


def plane(size: float = 6.0) -> Mesh:
    """Square in the z=0 plane facing +z."""
    h = size / 2.0
    return _flat_mesh([np.array([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]])])


# OBJ ------------------------------------------------------------------------------

def write_obj(mesh: Mesh, path: str | Path) -> None:
    lines = ["# triangle mesh: positions, per-vertex normals"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"vn {x!r} {y!r} {z!r}" for x, y, z in mesh.normals.tolist()]
    lines += [f"f {a + 1}//{a + 1} {b + 1}//{b + 1} {c + 1}//{c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path: str | Path) -> Mesh:
    """Read positions, normals, and faces from a Wavefront OBJ file.

    Faces must reference a normal for every corner, or none at all (area
    weighted normals are then computed).  Polygons are fan-triangulated.
    Vertices are split per distinct (position, normal) pair.
    """
    pos: list[list[float]] = []
    nrm: list[list[float]] = []
    corners: dict[tuple[int, int], int] = {}
    out_v: list[list[float]] = []
    out_n: list[int] = []
    faces: list[list[int]] = []
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "v":
                pos.append([float(c) for c in rest[:3]])
            elif head == "vn":
                nrm.append([float(c) for c in rest[:3]])
            elif head == "f":
                idx = []
                for tok in rest:
                    parts = tok.split("/")
                    vi = int(parts[0])
                    vi = vi - 1 if vi > 0 else len(pos) + vi
                    ni = -1
                    if len(parts) >= 3 and parts[2]:
                        ni = int(parts[2])
                        ni = ni - 1 if ni > 0 else len(nrm) + ni
                    key = (vi, ni)
                    if key not in corners:
                        corners[key] = len(out_v)
                        out_v.append(pos[vi])
                        out_n.append(ni)
                    idx.append(corners[key])
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}:{lineno}: malformed OBJ record {raw!r}") from exc
    if not faces:
        raise ParseError(f"{path}: no faces")
    verts = np.array(out_v, float)
    faces_a = np.array(faces, np.int64)
    if any(n < 0 for n in out_n):
        if not all(n < 0 for n in out_n):
            raise ParseError(f"{path}: faces mix corners with and without normals")
        normals = np.zeros_like(verts)
        tri = verts[faces_a]
        fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        for k in range(3):
            np.add.at(normals, faces_a[:, k], fn)
    else:
        normals = np.array([nrm[n] for n in out_n], float)
    lens = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.divide(normals, lens, out=np.tile([0.0, 0.0, 1.0], (len(normals), 1)), where=lens > 0)
    return Mesh(verts, normals, faces_a)
