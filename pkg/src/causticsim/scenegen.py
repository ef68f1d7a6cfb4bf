"""Procedural scene composition: bank draws, dropped glass objects, props.

Physics is replaced by a settle proxy per mesh.  A dropped object snaps to
one of the mesh's stable rest poses (convex-hull faces whose support
polygon contains the centre-of-mass projection), takes a random yaw, and
is nudged sideways by the impulse.  Overlaps are rejection-sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import ConvexHull

from .assets import AssetCatalog
from .errors import PlacementError, ValidationError
from .geometry import IDENTITY_QUAT, Mesh, Quat, look_at, quat_between, quat_from_axis_angle, quat_mul, quat_rotate
from .rng import Stream
from .scene import (
    AreaLight,
    Camera,
    DiffuseMaterial,
    EnvironmentMap,
    GlassMaterial,
    ObjectInstance,
    Scene,
    Transform,
    camera_from_dict,
    camera_to_dict,
    light_from_dict,
    light_to_dict,
    material_from_dict,
    material_to_dict,
)

OVERLAP_TOLERANCE = 0.1  # fraction of the smaller footprint radius
MAX_REST_POSES = 24
BACKDROP_ID = 1


@dataclass(frozen=True)
class CatalogItem:
    mesh: str
    weight: float = 1.0

    def __post_init__(self):
        if not isinstance(self.mesh, str) or not self.mesh:
            raise ValidationError("mesh", "must be a catalog key")
        w = self.weight
        if isinstance(w, bool) or not isinstance(w, (int, float)) or not math.isfinite(w) or w <= 0:
            raise ValidationError("weight", "must be a positive real")
        object.__setattr__(self, "weight", float(w))


def ring_rig(n: int = 12, width: int = 1920, height: int = 1080, radius: float = 1.0,
             vertical_fov: float = math.radians(50.0)) -> tuple[Camera, ...]:
    """``n`` cameras on a ring around the origin, alternating between two heights."""
    cams = []
    for i in range(n):
        az = 2.0 * math.pi * i / n
        el = math.radians(30.0 if i % 2 == 0 else 50.0)
        eye = (radius * math.cos(el) * math.cos(az), radius * math.cos(el) * math.sin(az), radius * math.sin(el))
        cams.append(Camera(Transform(eye, look_at(eye, (0.0, 0.0, 0.03))), width, height, vertical_fov))
    return tuple(cams)


def _range(name: str, r) -> tuple[int, int]:
    try:
        lo, hi = r
    except (TypeError, ValueError):
        raise ValidationError(name, "expected [min, max]") from None
    for v in (lo, hi):
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise ValidationError(name, "bounds must be unsigned integers")
    if lo > hi:
        raise ValidationError(name, "min must not exceed max")
    return (lo, hi)


@dataclass(frozen=True)
class GenerationConfig:
    object_catalog: tuple[CatalogItem, ...] = (
        CatalogItem("ball"), CatalogItem("cube"), CatalogItem("tumbler"), CatalogItem("cone"), CatalogItem("wedge"),
    )
    object_count_range: tuple[int, int] = (1, 4)
    spawn_region: tuple[tuple[float, float, float], tuple[float, float, float]] = ((-0.25, -0.25, 0.0), (0.25, 0.25, 0.3))
    drop_height_m: float = 0.2
    impulse_intensity: float = 0.5
    prop_catalog: tuple[CatalogItem, ...] = (CatalogItem("prop_block"), CatalogItem("prop_can"))
    prop_count_range: tuple[int, int] = (0, 2)
    backdrop_bank: tuple[str, ...] = tuple(f"backdrop_{i:02d}" for i in range(33))
    hdri_bank: tuple[str, ...] = tuple(f"sky_{i:02d}" for i in range(33))
    camera_rig: tuple[Camera, ...] = field(default_factory=ring_rig)
    light_template: AreaLight = AreaLight(
        center=(0.4, 0.3, 1.2), radius=0.02, direction=tuple(-np.array([0.4, 0.3, 1.2]) / math.sqrt(1.69)),
        radiant_intensity=(2.0, 2.0, 2.0),
    )
    glass_material: GlassMaterial = GlassMaterial()
    max_attempts: int = 200

    def __post_init__(self):
        for name in ("object_catalog", "prop_catalog"):
            items = tuple(getattr(self, name))
            if not all(isinstance(i, CatalogItem) for i in items):
                raise ValidationError(name, "entries must be catalog items")
            object.__setattr__(self, name, items)
        object.__setattr__(self, "object_count_range", _range("object_count_range", self.object_count_range))
        object.__setattr__(self, "prop_count_range", _range("prop_count_range", self.prop_count_range))
        if self.object_count_range[1] > 0 and not self.object_catalog:
            raise ValidationError("object_catalog", "empty catalog but objects requested")
        if self.prop_count_range[1] > 0 and not self.prop_catalog:
            raise ValidationError("prop_catalog", "empty catalog but props requested")
        try:
            lo, hi = (tuple(float(c) for c in corner) for corner in self.spawn_region)
        except (TypeError, ValueError):
            raise ValidationError("spawn_region", "expected [[xmin, ymin, zmin], [xmax, ymax, zmax]]") from None
        if len(lo) != 3 or len(hi) != 3 or not all(math.isfinite(c) for c in lo + hi):
            raise ValidationError("spawn_region", "corners must be finite 3-vectors")
        if not all(h > l for l, h in zip(lo, hi)):
            raise ValidationError("spawn_region", "must have positive volume")
        object.__setattr__(self, "spawn_region", (lo, hi))
        for name in ("drop_height_m", "impulse_intensity"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValidationError(name, "must be a finite real")
            object.__setattr__(self, name, float(v))
        if self.drop_height_m <= 0:
            raise ValidationError("drop_height_m", "must be > 0")
        if self.impulse_intensity < 0:
            raise ValidationError("impulse_intensity", "must be >= 0")
        for name in ("backdrop_bank", "hdri_bank"):
            bank = tuple(getattr(self, name))
            if not bank or not all(isinstance(k, str) and k for k in bank):
                raise ValidationError(name, "must be a non-empty list of catalog keys")
            object.__setattr__(self, name, bank)
        rig = tuple(self.camera_rig)
        if not rig or not all(isinstance(c, Camera) for c in rig):
            raise ValidationError("camera_rig", "must be a non-empty list of cameras")
        object.__setattr__(self, "camera_rig", rig)
        if not isinstance(self.light_template, AreaLight):
            raise ValidationError("light_template", "must be an area light")
        if not isinstance(self.glass_material, GlassMaterial):
            raise ValidationError("glass_material", "must be a glass material")
        if isinstance(self.max_attempts, bool) or not isinstance(self.max_attempts, int) or self.max_attempts < 1:
            raise ValidationError("max_attempts", "must be an integer >= 1")

    def to_dict(self) -> dict:
        return {
            "object_catalog": [{"mesh": i.mesh, "weight": i.weight} for i in self.object_catalog],
            "object_count_range": list(self.object_count_range),
            "spawn_region": [list(c) for c in self.spawn_region],
            "drop_height_m": self.drop_height_m,
            "impulse_intensity": self.impulse_intensity,
            "prop_catalog": [{"mesh": i.mesh, "weight": i.weight} for i in self.prop_catalog],
            "prop_count_range": list(self.prop_count_range),
            "backdrop_bank": list(self.backdrop_bank),
            "hdri_bank": list(self.hdri_bank),
            "camera_rig": [camera_to_dict(c) for c in self.camera_rig],
            "light_template": light_to_dict(self.light_template),
            "glass_material": material_to_dict(self.glass_material),
            "max_attempts": self.max_attempts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationConfig":
        if not isinstance(d, dict):
            raise ValidationError("generation", "expected a table")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"generation.{sorted(unknown)[0]}", "unknown field")
        kw = dict(d)
        try:
            for name in ("object_catalog", "prop_catalog"):
                if name in kw:
                    kw[name] = tuple(CatalogItem(**i) if isinstance(i, dict) else CatalogItem(i) for i in kw[name])
            for name in ("object_count_range", "prop_count_range"):
                if name in kw:
                    kw[name] = tuple(kw[name])
            if "camera_rig" in kw:
                kw["camera_rig"] = tuple(camera_from_dict(c) for c in kw["camera_rig"])
            if "light_template" in kw:
                kw["light_template"] = light_from_dict(kw["light_template"])
            if "glass_material" in kw:
                kw["glass_material"] = material_from_dict(kw["glass_material"])
            return cls(**kw)
        except ValidationError as exc:
            raise ValidationError(f"generation.{exc.field}", str(exc).split(": ", 1)[-1]) from None
        except TypeError as exc:
            raise ValidationError("generation", str(exc)) from None


# settle proxies ----------------------------------------------------------------------

@dataclass(frozen=True)
class SettleProxy:
    object_id: int
    bounding_radius_m: float
    rest_orientations: tuple[Quat, ...]
    # height of the mesh origin above the support plane for each rest orientation
    rest_heights: tuple[float, ...]

    def __post_init__(self):
        if not self.bounding_radius_m > 0:
            raise ValidationError("bounding_radius_m", "must be > 0")
        if not self.rest_orientations:
            raise ValidationError("rest_orientations", "need at least one rest pose")
        if len(self.rest_heights) != len(self.rest_orientations):
            raise ValidationError("rest_heights", "one height per rest orientation")
        for q in self.rest_orientations:
            if abs(math.sqrt(sum(c * c for c in q)) - 1.0) > 1e-6:
                raise ValidationError("rest_orientations", "quaternions must be unit-norm")


def _inside_polygon(pts: np.ndarray, p: np.ndarray, margin: float) -> bool:
    """Whether 2D point ``p`` lies inside the convex hull of ``pts`` by at least ``margin``."""
    try:
        hull = ConvexHull(pts)
    except Exception:  # degenerate (collinear) support
        return False
    # equations: normal . x + offset <= 0 inside
    return bool(np.all(hull.equations[:, :2] @ p + hull.equations[:, 2] < -margin))


def stable_poses(mesh: Mesh, scale: float = 1.0) -> list[tuple[Quat, float]]:
    """Rest orientations (hull face turned to face -z) and the matching origin heights."""
    v = mesh.vertices * scale
    hull = ConvexHull(v)
    com = mesh.volume_centroid() * scale
    size = float(np.ptp(v, axis=0).max())
    planes: dict[tuple, list[int]] = {}
    for eq, simplex in zip(hull.equations, hull.simplices):
        key = tuple(np.round(eq / np.linalg.norm(eq[:3]) / [1, 1, 1, size], 6))
        planes.setdefault(key, []).extend(simplex.tolist())
    poses = []
    for key, idx in planes.items():
        n = np.array(key[:3])
        n /= np.linalg.norm(n)
        pts = v[sorted(set(idx))]
        t = np.cross(n, [1.0, 0.0, 0.0])
        if np.linalg.norm(t) < 0.5:
            t = np.cross(n, [0.0, 1.0, 0.0])
        t /= np.linalg.norm(t)
        b = np.cross(n, t)
        pts2 = np.stack([pts @ t, pts @ b], axis=1)
        c2 = np.array([com @ t, com @ b])
        if not _inside_polygon(pts2, c2, 1e-6 * size):
            continue
        area = ConvexHull(pts2).volume
        q = quat_between(n, (0.0, 0.0, -1.0))
        poses.append((area, q))
    poses.sort(key=lambda aq: -aq[0])
    out = []
    for _, q in poses[:MAX_REST_POSES]:
        z = np.array([quat_rotate(q, p)[2] for p in v[hull.vertices]])
        out.append((q, float(-z.min())))
    return out


def make_proxy(mesh: Mesh, object_id: int, scale: float = 1.0) -> SettleProxy:
    poses = stable_poses(mesh, scale)
    if not poses:
        # every convex body has a stable face; this only trips on numerically flat hulls
        poses = [(IDENTITY_QUAT, float(-(mesh.vertices[:, 2] * scale).min()))]
    return SettleProxy(
        object_id,
        mesh.bounding_radius * scale,
        tuple(q for q, _ in poses),
        tuple(h for _, h in poses),
    )


def _cached_proxy(catalog: AssetCatalog, key: str) -> SettleProxy:
    return catalog._cached("proxy", key, lambda: make_proxy(catalog.mesh(key), 1))


def settle_drop(proxy: SettleProxy, spawn_xy, impulse: float, rng_stream: Stream) -> Transform:
    """Rest transform for a dropped object.

    Draw order from the stream: rest pose index, yaw, impulse radius,
    impulse direction.
    """
    k = rng_stream.integers(0, len(proxy.rest_orientations) - 1)
    yaw = rng_stream.angle()
    rho = impulse * proxy.bounding_radius_m * math.sqrt(rng_stream.uniform())
    phi = rng_stream.angle()
    q = quat_mul(quat_from_axis_angle((0.0, 0.0, 1.0), yaw), proxy.rest_orientations[k])
    x = float(spawn_xy[0]) + rho * math.cos(phi)
    y = float(spawn_xy[1]) + rho * math.sin(phi)
    return Transform((x, y, proxy.rest_heights[k]), q, 1.0)


def _overlaps(xy, r, placed) -> bool:
    for pxy, pr in placed:
        d = math.hypot(xy[0] - pxy[0], xy[1] - pxy[1])
        if r + pr - d > OVERLAP_TOLERANCE * min(r, pr):
            return True
    return False


def _drop_many(items, count, first_id, config, catalog, stream_for, placed, material_for, semantic):
    out = []
    (x0, y0, _), (x1, y1, _) = config.spawn_region
    weights = [i.weight for i in items]
    for i in range(count):
        s = stream_for(i)
        item = items[s.choice_weighted(weights)]
        proxy = replace(_cached_proxy(catalog, item.mesh), object_id=first_id + i)
        material = material_for(s)
        for _ in range(config.max_attempts):
            spawn = (s.uniform(x0, x1), s.uniform(y0, y1))
            t = settle_drop(proxy, spawn, config.impulse_intensity, s)
            xy = t.translation[:2]
            if not _overlaps(xy, proxy.bounding_radius_m, placed):
                break
        else:
            raise PlacementError(
                f"could not place {semantic} {i} ({item.mesh}) after {config.max_attempts} attempts; "
                "spawn_region is too small for the requested count"
            )
        placed.append((xy, proxy.bounding_radius_m))
        out.append(ObjectInstance(first_id + i, item.mesh, t, material, semantic))
    return out


def _footprints(scene: Scene, catalog: AssetCatalog) -> list:
    return [
        (o.transform.translation[:2], catalog.mesh(o.mesh).bounding_radius * o.transform.scale)
        for o in scene.objects + scene.props
    ]


def _prop_material(s: Stream) -> DiffuseMaterial:
    return DiffuseMaterial(tuple(s.uniform(0.15, 0.85) for _ in range(3)))


def place_props(scene: Scene, config: GenerationConfig, rng_stream: Stream, catalog: AssetCatalog | None = None) -> Scene:
    """Add props to a scene whose glass objects are already settled."""
    catalog = catalog or AssetCatalog.default()
    lo, hi = config.prop_count_range
    count = rng_stream.child("count").integers(lo, hi)
    if count == 0:
        return scene
    first = max(scene.object_ids) + 1
    props = _drop_many(
        config.prop_catalog, count, first, config, catalog, lambda j: rng_stream.child(j),
        _footprints(scene, catalog), _prop_material, "prop",
    )
    return scene.replace(props=scene.props + tuple(props))


def generate_scene(config: GenerationConfig, seed: int, catalog: AssetCatalog | None = None) -> Scene:
    """A randomized scene, a pure function of ``(config, seed)`` and the catalog contents."""
    catalog = catalog or AssetCatalog.default()
    bank = Stream(seed, "bank")
    backdrop_key = config.backdrop_bank[bank.integers(0, len(config.backdrop_bank) - 1)]
    hdri_key = config.hdri_bank[bank.integers(0, len(config.hdri_bank) - 1)]
    env_rotation = bank.uniform(0.0, 360.0)
    if backdrop_key not in catalog.backdrops:
        raise ValidationError("backdrop_bank", f"unknown backdrop {backdrop_key!r}")
    entry = catalog.backdrops[backdrop_key]
    backdrop = ObjectInstance(BACKDROP_ID, entry.mesh, Transform(), entry.material, "backdrop")
    lo, hi = config.object_count_range
    count = Stream(seed, "objects.count").integers(lo, hi)
    objects = _drop_many(
        config.object_catalog, count, BACKDROP_ID + 1, config, catalog, lambda i: Stream(seed, "objects", i),
        [], lambda s: config.glass_material, "transparent",
    )
    scene = Scene(
        seed=seed,
        backdrop=backdrop,
        environment=EnvironmentMap(hdri_key, rotation_deg=env_rotation),
        objects=tuple(objects),
        lights=(config.light_template,),
        cameras=config.camera_rig,
    )
    return place_props(scene, config, Stream(seed, "props"), catalog)


def with_rig(config: GenerationConfig, width: int, height: int) -> GenerationConfig:
    """Same config with every rig camera resized."""
    return replace(config, camera_rig=tuple(replace(c, width=width, height=height) for c in config.camera_rig))
