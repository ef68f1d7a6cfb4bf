"""Bounding volume hierarchy over a flat triangle soup."""

from __future__ import annotations

import logging
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import RenderError
from .optics import JIT

log = logging.getLogger(__name__)

LEAF_SIZE = 4
# triangles with twice-area below this (relative to squared edge scale) are skipped
DEGENERATE_REL = 1e-14


@dataclass(eq=False)
class Bvh:
    """Flattened tree.  ``left < 0`` marks a leaf owning ``perm[start:start+count]``."""

    node_min: np.ndarray
    node_max: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    axis: np.ndarray
    perm: np.ndarray
    degenerate_count: int

    @property
    def n_nodes(self) -> int:
        return len(self.left)


# arrays handed to kernels: triangle soup (v0 plus edge vectors) and the tree
Tris = namedtuple("Tris", "v0 e1 e2 node_min node_max left right start count axis perm")


def as_tris(bvh: "Bvh", v0, v1, v2) -> Tris:
    v0 = np.ascontiguousarray(v0, np.float64)
    return Tris(
        v0,
        np.ascontiguousarray(np.asarray(v1, np.float64) - v0),
        np.ascontiguousarray(np.asarray(v2, np.float64) - v0),
        bvh.node_min, bvh.node_max, bvh.left, bvh.right, bvh.start, bvh.count, bvh.axis, bvh.perm,
    )


@njit(**JIT)
def _build(lo_b, hi_b, cent, valid):
    n = valid.shape[0]
    cap = max(1, 2 * n)
    node_min = np.empty((cap, 3))
    node_max = np.empty((cap, 3))
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    start = np.zeros(cap, np.int32)
    count = np.zeros(cap, np.int32)
    axis = np.zeros(cap, np.int8)
    perm = valid.copy()
    stack_node = np.empty(cap, np.int32)
    stack_lo = np.empty(cap, np.int32)
    stack_hi = np.empty(cap, np.int32)
    sp = 0
    n_nodes = 1
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        bmin = np.full(3, np.inf)
        bmax = np.full(3, -np.inf)
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for i in range(lo, hi):
            t = perm[i]
            for k in range(3):
                bmin[k] = min(bmin[k], lo_b[t, k])
                bmax[k] = max(bmax[k], hi_b[t, k])
                cmin[k] = min(cmin[k], cent[t, k])
                cmax[k] = max(cmax[k], cent[t, k])
        node_min[node] = bmin
        node_max[node] = bmax
        if hi - lo <= LEAF_SIZE:
            start[node] = lo
            count[node] = hi - lo
            continue
        ax = 0
        ext = cmax[0] - cmin[0]
        for k in range(1, 3):
            if cmax[k] - cmin[k] > ext:
                ext = cmax[k] - cmin[k]
                ax = k
        sub = perm[lo:hi].copy()
        keys = np.empty(hi - lo)
        for i in range(hi - lo):
            keys[i] = cent[sub[i], ax]
        order = np.argsort(keys, kind="mergesort")
        for i in range(hi - lo):
            perm[lo + i] = sub[order[i]]
        mid = (lo + hi) // 2
        axis[node] = ax
        l_node = n_nodes
        r_node = n_nodes + 1
        n_nodes += 2
        left[node] = l_node
        right[node] = r_node
        stack_node[sp] = r_node
        stack_lo[sp] = mid
        stack_hi[sp] = hi
        sp += 1
        stack_node[sp] = l_node
        stack_lo[sp] = lo
        stack_hi[sp] = mid
        sp += 1
    return (node_min[:n_nodes].copy(), node_max[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), start[:n_nodes].copy(), count[:n_nodes].copy(),
            axis[:n_nodes].copy(), perm)


def build_bvh(v0: np.ndarray, v1: np.ndarray, v2: np.ndarray) -> Bvh:
    """Build a BVH over triangles ``(v0[i], v1[i], v2[i])``.

    Zero-area triangles are left out of the tree and counted in
    ``degenerate_count``.
    """
    v0 = np.ascontiguousarray(v0, np.float64)
    v1 = np.ascontiguousarray(v1, np.float64)
    v2 = np.ascontiguousarray(v2, np.float64)
    if len(v0) == 0:
        raise RenderError("cannot build a BVH over empty geometry")
    if not (np.all(np.isfinite(v0)) and np.all(np.isfinite(v1)) and np.all(np.isfinite(v2))):
        raise RenderError("triangle vertices must be finite")
    e1, e2 = v1 - v0, v2 - v0
    area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
    scale = np.maximum((e1**2).sum(1), (e2**2).sum(1))
    degenerate = area2 <= DEGENERATE_REL * np.maximum(scale, 1e-300)
    valid = np.flatnonzero(~degenerate).astype(np.int32)
    n_bad = int(degenerate.sum())
    if n_bad:
        log.warning("skipped %d degenerate triangle(s)", n_bad)
    if len(valid) == 0:
        raise RenderError("all triangles are degenerate")
    lo = np.minimum(np.minimum(v0, v1), v2)
    hi = np.maximum(np.maximum(v0, v1), v2)
    cent = (v0 + v1 + v2) / 3.0
    arrays = _build(lo, hi, cent, valid)
    return Bvh(*arrays, degenerate_count=n_bad)


@njit(**JIT)
def nb_intersect(g, ox, oy, oz, dx, dy, dz, tmax):
    """Nearest hit along a ray: ``(tri, t, u, v)`` with ``tri = -1`` on a miss.

    Ties in ``t`` resolve to the lower triangle index.
    """
    v0, e1, e2 = g.v0, g.e1, g.e2
    node_min, node_max, left, right = g.node_min, g.node_max, g.left, g.right
    start, count, perm = g.start, g.count, g.perm
    idx = 1.0 / dx
    idy = 1.0 / dy
    idz = 1.0 / dz
    best_t = tmax
    best = -1
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(64, np.int32)
    sp = 0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        tx1 = (node_min[node, 0] - ox) * idx
        tx2 = (node_max[node, 0] - ox) * idx
        t0 = min(tx1, tx2)
        t1 = max(tx1, tx2)
        ty1 = (node_min[node, 1] - oy) * idy
        ty2 = (node_max[node, 1] - oy) * idy
        t0 = max(t0, min(ty1, ty2))
        t1 = min(t1, max(ty1, ty2))
        tz1 = (node_min[node, 2] - oz) * idz
        tz2 = (node_max[node, 2] - oz) * idz
        t0 = max(t0, min(tz1, tz2))
        t1 = min(t1, max(tz1, tz2))
        # NaN slabs (origin on a slab plane with zero direction) fall through as hits
        if t1 < t0 or t1 < 0.0 or t0 > best_t:
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                tri = perm[i]
                ax, ay, az = e1[tri, 0], e1[tri, 1], e1[tri, 2]
                bx, by, bz = e2[tri, 0], e2[tri, 1], e2[tri, 2]
                px = dy * bz - dz * by
                py = dz * bx - dx * bz
                pz = dx * by - dy * bx
                det = ax * px + ay * py + az * pz
                if det == 0.0:
                    continue
                inv = 1.0 / det
                sx = ox - v0[tri, 0]
                sy = oy - v0[tri, 1]
                sz = oz - v0[tri, 2]
                u = (sx * px + sy * py + sz * pz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qx = sy * az - sz * ay
                qy = sz * ax - sx * az
                qz = sx * ay - sy * ax
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (bx * qx + by * qy + bz * qz) * inv
                if t <= 0.0 or t > best_t:
                    continue
                if t == best_t and (best < 0 or tri > best):
                    continue
                best_t = t
                best = tri
                best_u = u
                best_v = v
        else:
            # children split at the median along g.axis; visit the near one first
            split = g.axis[node]
            d_ax = dx if split == 0 else (dy if split == 1 else dz)
            near, far = (left[node], right[node]) if d_ax >= 0.0 else (right[node], left[node])
            stack[sp] = far
            sp += 1
            stack[sp] = near
            sp += 1
    return best, best_t, best_u, best_v


@njit(**JIT)
def nb_occluded(g, ox, oy, oz, dx, dy, dz, tmax):
    """True if anything lies strictly between the origin and ``tmax``."""
    v0, e1, e2 = g.v0, g.e1, g.e2
    node_min, node_max, left, right = g.node_min, g.node_max, g.left, g.right
    start, count, perm = g.start, g.count, g.perm
    idx = 1.0 / dx
    idy = 1.0 / dy
    idz = 1.0 / dz
    stack = np.empty(64, np.int32)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        tx1 = (node_min[node, 0] - ox) * idx
        tx2 = (node_max[node, 0] - ox) * idx
        t0 = min(tx1, tx2)
        t1 = max(tx1, tx2)
        ty1 = (node_min[node, 1] - oy) * idy
        ty2 = (node_max[node, 1] - oy) * idy
        t0 = max(t0, min(ty1, ty2))
        t1 = min(t1, max(ty1, ty2))
        tz1 = (node_min[node, 2] - oz) * idz
        tz2 = (node_max[node, 2] - oz) * idz
        t0 = max(t0, min(tz1, tz2))
        t1 = min(t1, max(tz1, tz2))
        if t1 < t0 or t1 < 0.0 or t0 > tmax:
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                tri = perm[i]
                ax, ay, az = e1[tri, 0], e1[tri, 1], e1[tri, 2]
                bx, by, bz = e2[tri, 0], e2[tri, 1], e2[tri, 2]
                px = dy * bz - dz * by
                py = dz * bx - dx * bz
                pz = dx * by - dy * bx
                det = ax * px + ay * py + az * pz
                if det == 0.0:
                    continue
                inv = 1.0 / det
                sx = ox - v0[tri, 0]
                sy = oy - v0[tri, 1]
                sz = oz - v0[tri, 2]
                u = (sx * px + sy * py + sz * pz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qx = sy * az - sz * ay
                qy = sz * ax - sx * az
                qz = sx * ay - sy * ax
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (bx * qx + by * qy + bz * qz) * inv
                if t > 0.0 and t < tmax:
                    return True
        else:
            stack[sp] = right[node]
            sp += 1
            stack[sp] = left[node]
            sp += 1
    return False


@njit(**JIT)
def _intersect_many(g, orig, dirs, out_tri, out_t, out_u, out_v):
    for r in range(orig.shape[0]):
        tri, t, u, v = nb_intersect(g, orig[r, 0], orig[r, 1], orig[r, 2], dirs[r, 0], dirs[r, 1], dirs[r, 2],
                                    np.inf)
        out_tri[r] = tri
        out_t[r] = t
        out_u[r] = u
        out_v[r] = v


def intersect_rays(bvh: Bvh, v0, v1, v2, origins, directions):
    """Batch nearest-hit query.  Returns ``(tri_index, t)`` arrays; misses have index -1."""
    g = as_tris(bvh, v0, v1, v2)
    o = np.ascontiguousarray(origins, np.float64).reshape(-1, 3)
    d = np.ascontiguousarray(directions, np.float64).reshape(-1, 3)
    n = len(o)
    tri = np.empty(n, np.int64)
    t = np.empty(n)
    u = np.empty(n)
    v = np.empty(n)
    _intersect_many(g, o, d, tri, t, u, v)
    t[tri < 0] = np.inf
    return tri, t
