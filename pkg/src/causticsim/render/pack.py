"""Flatten a Scene into the array bundles the numba kernels consume."""

from __future__ import annotations

import math
import threading
from collections import OrderedDict, namedtuple
from dataclasses import dataclass

import numpy as np

from ..assets import AssetCatalog
from ..errors import RenderError
from ..geometry import quat_to_matrix
from ..scene import Camera, DiffuseMaterial, GlassMaterial, Scene, check_assets
from .bvh import Bvh, Tris, as_tris, build_bvh

CLASS_CODES = {"transparent": 1, "prop": 2, "backdrop": 3}

Shading = namedtuple("Shading", "n0 n1 n2 ng tri_obj")
Mats = namedtuple(
    "Mats",
    "obj_id obj_class is_glass albedo tex_id tex_scale ior rough tint spec thin dispersive "
    "tex_data tex_off tex_w tex_h",
)
Lights = namedtuple("Lights", "center radius direction cos_cone intensity")
Env = namedtuple("Env", "image rot scale")
Cam = namedtuple("Cam", "origin rot forward tan_half aspect width height")


@dataclass(eq=False)
class PackedGeometry:
    tris: Tris
    shading: Shading
    bvh: Bvh
    # world bounding sphere per object slot, used to aim photons
    obj_center: np.ndarray
    obj_radius: np.ndarray


@dataclass(eq=False)
class PackedScene:
    geometry: PackedGeometry
    mats: Mats
    lights: Lights
    env: Env

    @property
    def tris(self) -> Tris:
        return self.geometry.tris

    @property
    def shading(self) -> Shading:
        return self.geometry.shading


_GEOM_CACHE: "OrderedDict[tuple, PackedGeometry]" = OrderedDict()
_GEOM_LOCK = threading.Lock()
_GEOM_CACHE_SIZE = 16


def _geometry_key(scene: Scene, catalog: AssetCatalog) -> tuple:
    return (str(catalog.root),) + tuple(
        (inst.object_id, inst.mesh, inst.transform) for inst in scene.instances()
    )


def pack_geometry(scene: Scene, catalog: AssetCatalog) -> PackedGeometry:
    """World-space triangle soup and BVH.  Cached on geometry only, so
    material and lighting changes reuse the same tree."""
    key = _geometry_key(scene, catalog)
    with _GEOM_LOCK:
        hit = _GEOM_CACHE.get(key)
        if hit is not None:
            _GEOM_CACHE.move_to_end(key)
            return hit
    verts, norms, owner = [], [], []
    centers, radii = [], []
    for slot, inst in enumerate(scene.instances()):
        mesh = catalog.mesh(inst.mesh)
        t = inst.transform
        wv, wn = mesh.transformed(t.translation, t.rotation, t.scale)
        f = mesh.faces
        verts.append(wv[f])
        norms.append(wn[f])
        owner.append(np.full(len(f), slot, np.int32))
        lo, hi = wv.min(0), wv.max(0)
        c = 0.5 * (lo + hi)
        centers.append(c)
        radii.append(float(np.sqrt(((wv - c) ** 2).sum(1)).max()))
    tri_v = np.concatenate(verts)
    tri_n = np.concatenate(norms)
    v0, v1, v2 = (np.ascontiguousarray(tri_v[:, k]) for k in range(3))
    bvh = build_bvh(v0, v1, v2)
    tris = as_tris(bvh, v0, v1, v2)
    ng = np.cross(tris.e1, tris.e2)
    ln = np.linalg.norm(ng, axis=1, keepdims=True)
    ng = np.divide(ng, ln, out=np.zeros_like(ng), where=ln > 0)
    shading = Shading(
        np.ascontiguousarray(tri_n[:, 0]),
        np.ascontiguousarray(tri_n[:, 1]),
        np.ascontiguousarray(tri_n[:, 2]),
        np.ascontiguousarray(ng),
        np.concatenate(owner),
    )
    geom = PackedGeometry(tris, shading, bvh, np.array(centers), np.array(radii))
    with _GEOM_LOCK:
        _GEOM_CACHE[key] = geom
        while len(_GEOM_CACHE) > _GEOM_CACHE_SIZE:
            _GEOM_CACHE.popitem(last=False)
    return geom


def pack_materials(scene: Scene, catalog: AssetCatalog) -> Mats:
    insts = scene.instances()
    n = len(insts)
    obj_id = np.array([i.object_id for i in insts], np.int32)
    obj_class = np.array([CLASS_CODES[i.semantic_class] for i in insts], np.int8)
    is_glass = np.zeros(n, np.uint8)
    albedo = np.zeros((n, 3))
    tex_id = np.full(n, -1, np.int32)
    tex_scale = np.ones(n)
    ior = np.ones((n, 3))
    rough = np.zeros(n)
    tint = np.ones((n, 3))
    spec = np.ones(n)
    thin = np.zeros(n, np.uint8)
    dispersive = np.zeros(n, np.uint8)
    tex_keys: list[str] = []
    for k, inst in enumerate(insts):
        m = inst.material
        if isinstance(m, GlassMaterial):
            is_glass[k] = 1
            ior[k] = m.band_iors
            rough[k] = m.roughness
            tint[k] = m.tint
            spec[k] = m.specular_scale
            thin[k] = m.thickness_mode == "thin-walled"
            dispersive[k] = m.abbe_number is not None
        else:
            assert isinstance(m, DiffuseMaterial)
            albedo[k] = m.albedo
            if m.texture is not None:
                if m.texture not in tex_keys:
                    tex_keys.append(m.texture)
                tex_id[k] = tex_keys.index(m.texture)
                tex_scale[k] = m.texture_scale_m
    images = [catalog.texture_image(key) for key in tex_keys]
    if images:
        tex_data = np.ascontiguousarray(np.concatenate([im.reshape(-1, 3) for im in images]))
        sizes = np.array([im.shape[0] * im.shape[1] for im in images], np.int64)
        tex_off = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        tex_w = np.array([im.shape[1] for im in images], np.int64)
        tex_h = np.array([im.shape[0] for im in images], np.int64)
    else:
        tex_data = np.zeros((1, 3))
        tex_off = np.zeros(1, np.int64)
        tex_w = np.ones(1, np.int64)
        tex_h = np.ones(1, np.int64)
    return Mats(obj_id, obj_class, is_glass, albedo, tex_id, tex_scale, ior, rough, tint, spec, thin,
                dispersive, tex_data, tex_off, tex_w, tex_h)


def pack_lights(scene: Scene) -> Lights:
    on = [l for l in scene.lights if l.enabled]
    return Lights(
        np.array([l.center for l in on], np.float64).reshape(-1, 3),
        np.array([l.radius for l in on], np.float64),
        np.array([l.direction for l in on], np.float64).reshape(-1, 3),
        np.array([math.cos(l.cone_half_angle) for l in on], np.float64),
        np.array([l.radiant_intensity for l in on], np.float64).reshape(-1, 3),
    )


def pack_environment(scene: Scene, catalog: AssetCatalog) -> Env:
    img = np.ascontiguousarray(catalog.environment_image(scene.environment.id), np.float64)
    return Env(img, math.radians(scene.environment.rotation_deg), float(scene.environment.scale))


def pack_scene(scene: Scene, catalog: AssetCatalog) -> PackedScene:
    check_assets(scene, catalog)
    return PackedScene(
        pack_geometry(scene, catalog),
        pack_materials(scene, catalog),
        pack_lights(scene),
        pack_environment(scene, catalog),
    )


def pack_camera(camera: Camera) -> Cam:
    r = quat_to_matrix(camera.pose.rotation)
    return Cam(
        np.array(camera.pose.translation, np.float64),
        np.ascontiguousarray(r),
        np.ascontiguousarray(-r[:, 2]),
        math.tan(camera.vertical_fov / 2.0),
        camera.width / camera.height,
        camera.width,
        camera.height,
    )


def camera_of(scene: Scene, index: int) -> Camera:
    if isinstance(index, bool) or not isinstance(index, (int, np.integer)) or not 0 <= index < len(scene.cameras):
        raise RenderError(f"camera index {index} out of range (scene has {len(scene.cameras)})")
    return scene.cameras[int(index)]
