"""Scene description types and their canonical on-disk form.

All types are frozen dataclasses validated at construction, so no other
module can observe an invalid scene.  Object and prop lists are
canonicalized by ``object_id``.  Files are JSON with sorted keys and
``repr`` float formatting, which makes ``load -> save`` a byte-exact
round trip.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Union

from .errors import DomainError, MissingAssetError, ParseError, ValidationError
from .geometry import IDENTITY_QUAT, Quat, Vec3

if TYPE_CHECKING:
    from .assets import AssetCatalog

SCENE_FORMAT = "causticsim.scene/1"
SEMANTIC_CLASSES = ("transparent", "prop", "backdrop")
THICKNESS_MODES = ("solid", "thin-walled")


def _finite(name: str, value, n: int | None = None) -> tuple[float, ...] | float:
    if n is None:
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise ValidationError(name, f"expected a number, got {value!r}") from None
        if not math.isfinite(v):
            raise ValidationError(name, "must be finite")
        return v
    try:
        vals = tuple(float(c) for c in value)
    except (TypeError, ValueError):
        raise ValidationError(name, f"expected {n} numbers, got {value!r}") from None
    if len(vals) != n:
        raise ValidationError(name, f"expected {n} components, got {len(vals)}")
    if not all(math.isfinite(c) for c in vals):
        raise ValidationError(name, "must be finite")
    return vals


def _set(obj, name, value):
    object.__setattr__(obj, name, value)


def dispersion_band_iors(base_ior: float, abbe_number: float | None) -> tuple[float, float, float]:
    """Red, green and blue refractive indices for a glass.

    The green band carries ``base_ior``; the red-to-blue spread is
    ``(base_ior - 1) / abbe_number`` split symmetrically.  ``None`` or an
    infinite Abbe number means no dispersion.
    """
    if not base_ior > 1.0:
        raise DomainError(f"base_ior must exceed 1, got {base_ior}")
    if abbe_number is None or abbe_number == math.inf:
        return (base_ior, base_ior, base_ior)
    if not abbe_number > 0.0:
        raise DomainError(f"abbe_number must be positive, got {abbe_number}")
    spread = (base_ior - 1.0) / abbe_number
    return (base_ior - spread / 2.0, base_ior, base_ior + spread / 2.0)


@dataclass(frozen=True)
class Transform:
    translation: Vec3 = (0.0, 0.0, 0.0)
    rotation: Quat = IDENTITY_QUAT
    scale: float = 1.0

    def __post_init__(self):
        _set(self, "translation", _finite("translation", self.translation, 3))
        rot = _finite("rotation", self.rotation, 4)
        if abs(math.sqrt(sum(c * c for c in rot)) - 1.0) > 1e-6:
            raise ValidationError("rotation", "quaternion must have unit norm within 1e-6")
        _set(self, "rotation", rot)
        scale = _finite("scale", self.scale)
        if not scale > 0.0:
            raise ValidationError("scale", "must be positive")
        _set(self, "scale", scale)


@dataclass(frozen=True)
class GlassMaterial:
    base_ior: float = 1.5
    abbe_number: float | None = 30.0
    roughness: float = 0.0
    tint: Vec3 = (1.0, 1.0, 1.0)
    specular_scale: float = 1.0
    thickness_mode: str = "solid"

    def __post_init__(self):
        ior = _finite("base_ior", self.base_ior)
        if not ior > 1.0:
            raise ValidationError("base_ior", "must exceed 1")
        _set(self, "base_ior", ior)
        if self.abbe_number is not None:
            abbe = float(self.abbe_number)
            if math.isnan(abbe) or not abbe > 0.0:
                raise ValidationError("abbe_number", "must be positive or absent")
            _set(self, "abbe_number", None if abbe == math.inf else abbe)
        rough = _finite("roughness", self.roughness)
        if not 0.0 <= rough <= 1.0:
            raise ValidationError("roughness", "must lie in [0, 1]")
        _set(self, "roughness", rough)
        tint = _finite("tint", self.tint, 3)
        if not all(0.0 <= c <= 1.0 for c in tint):
            raise ValidationError("tint", "components must lie in [0, 1]")
        _set(self, "tint", tint)
        spec = _finite("specular_scale", self.specular_scale)
        if not 0.0 <= spec <= 1.0:
            raise ValidationError("specular_scale", "must lie in [0, 1]")
        _set(self, "specular_scale", spec)
        if self.thickness_mode not in THICKNESS_MODES:
            raise ValidationError("thickness_mode", f"must be one of {THICKNESS_MODES}")

    @property
    def band_iors(self) -> tuple[float, float, float]:
        return dispersion_band_iors(self.base_ior, self.abbe_number)


@dataclass(frozen=True)
class DiffuseMaterial:
    albedo: Vec3 = (0.8, 0.8, 0.8)
    texture: str | None = None
    texture_scale_m: float = 1.0  # world size of one texture tile (planar xy mapping)

    def __post_init__(self):
        alb = _finite("albedo", self.albedo, 3)
        if not all(0.0 <= c <= 1.0 for c in alb):
            raise ValidationError("albedo", "components must lie in [0, 1]")
        _set(self, "albedo", alb)
        ts = _finite("texture_scale_m", self.texture_scale_m)
        if not ts > 0.0:
            raise ValidationError("texture_scale_m", "must be positive")
        _set(self, "texture_scale_m", ts)


Material = Union[GlassMaterial, DiffuseMaterial]


@dataclass(frozen=True)
class ObjectInstance:
    object_id: int
    mesh: str
    transform: Transform
    material: Material
    semantic_class: str

    def __post_init__(self):
        if isinstance(self.object_id, bool) or not isinstance(self.object_id, int) or self.object_id < 1:
            raise ValidationError("object_id", "must be an integer >= 1 (0 is reserved)")
        if self.object_id > 65535:
            raise ValidationError("object_id", "must fit the 16-bit mask encoding")
        if not isinstance(self.mesh, str) or not self.mesh:
            raise ValidationError("mesh", "must be a catalog key")
        if self.semantic_class not in SEMANTIC_CLASSES:
            raise ValidationError("semantic_class", f"must be one of {SEMANTIC_CLASSES}")
        if not isinstance(self.transform, Transform):
            raise ValidationError("transform", "must be a Transform")
        if not isinstance(self.material, (GlassMaterial, DiffuseMaterial)):
            raise ValidationError("material", "must be a glass or diffuse material")

    @property
    def is_glass(self) -> bool:
        return isinstance(self.material, GlassMaterial)


@dataclass(frozen=True)
class AreaLight:
    """Disc emitter; ``radius == 0`` is a point light."""

    center: Vec3 = (0.0, 0.0, 2.0)
    radius: float = 0.0
    direction: Vec3 = (0.0, 0.0, -1.0)
    cone_half_angle: float = math.pi / 2.0
    radiant_intensity: Vec3 = (1.0, 1.0, 1.0)
    enabled: bool = True

    def __post_init__(self):
        _set(self, "center", _finite("center", self.center, 3))
        r = _finite("radius", self.radius)
        if r < 0.0:
            raise ValidationError("radius", "must be >= 0")
        _set(self, "radius", r)
        d = _finite("direction", self.direction, 3)
        if abs(math.sqrt(sum(c * c for c in d)) - 1.0) > 1e-6:
            raise ValidationError("direction", "must be a unit vector")
        _set(self, "direction", d)
        cone = _finite("cone_half_angle", self.cone_half_angle)
        if not 0.0 < cone <= math.pi / 2.0 + 1e-12:
            raise ValidationError("cone_half_angle", "must lie in (0, pi/2]")
        _set(self, "cone_half_angle", cone)
        inten = _finite("radiant_intensity", self.radiant_intensity, 3)
        if any(c < 0.0 for c in inten):
            raise ValidationError("radiant_intensity", "components must be >= 0")
        _set(self, "radiant_intensity", inten)
        _set(self, "enabled", bool(self.enabled))


@dataclass(frozen=True)
class EnvironmentMap:
    """Reference to an equirectangular HDR image in the asset catalog."""

    id: str
    rotation_deg: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("id", "must be a catalog key")
        _set(self, "rotation_deg", _finite("rotation_deg", self.rotation_deg))
        s = _finite("scale", self.scale)
        if s < 0.0:
            raise ValidationError("scale", "must be >= 0")
        _set(self, "scale", s)


@dataclass(frozen=True)
class Camera:
    pose: Transform = field(default_factory=Transform)
    width: int = 1920
    height: int = 1080
    vertical_fov: float = math.radians(50.0)
    exposure_ev: float = 0.0

    def __post_init__(self):
        if not isinstance(self.pose, Transform):
            raise ValidationError("pose", "must be a Transform")
        if self.pose.scale != 1.0:
            raise ValidationError("pose.scale", "camera poses are rigid (scale 1)")
        for name in ("width", "height"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ValidationError(name, "must be an integer >= 1")
        fov = _finite("vertical_fov", self.vertical_fov)
        if not 0.0 < fov < math.pi:
            raise ValidationError("vertical_fov", "must lie in (0, pi)")
        _set(self, "vertical_fov", fov)
        _set(self, "exposure_ev", _finite("exposure_ev", self.exposure_ev))


def _prefixed(prefix: str, fn, *args):
    try:
        return fn(*args)
    except ValidationError as exc:
        raise ValidationError(f"{prefix}.{exc.field}", str(exc).split(": ", 1)[-1]) from None


@dataclass(frozen=True)
class Scene:
    seed: int
    backdrop: ObjectInstance
    environment: EnvironmentMap
    objects: tuple[ObjectInstance, ...] = ()
    props: tuple[ObjectInstance, ...] = ()
    lights: tuple[AreaLight, ...] = ()
    cameras: tuple[Camera, ...] = ()
    depth_range_m: float = 10.0

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ValidationError("seed", "must be a 64-bit unsigned integer")
        _set(self, "objects", tuple(sorted(self.objects, key=lambda o: o.object_id)))
        _set(self, "props", tuple(sorted(self.props, key=lambda o: o.object_id)))
        _set(self, "lights", tuple(self.lights))
        _set(self, "cameras", tuple(self.cameras))
        for i, o in enumerate(self.objects):
            if o.semantic_class != "transparent":
                raise ValidationError(f"objects[{i}].semantic_class", "objects must be transparent")
        for i, o in enumerate(self.props):
            if o.semantic_class != "prop":
                raise ValidationError(f"props[{i}].semantic_class", "props must have class 'prop'")
        if self.backdrop.semantic_class != "backdrop":
            raise ValidationError("backdrop.semantic_class", "must be 'backdrop'")
        seen: set[int] = set()
        for path, inst in self.labeled_instances():
            if inst.object_id in seen:
                raise ValidationError(f"{path}.object_id", f"duplicate object_id {inst.object_id}")
            seen.add(inst.object_id)
        dr = _finite("depth_range_m", self.depth_range_m)
        if not dr > 0.0:
            raise ValidationError("depth_range_m", "must be positive")
        _set(self, "depth_range_m", dr)

    def labeled_instances(self):
        yield "backdrop", self.backdrop
        for i, o in enumerate(self.objects):
            yield f"objects[{i}]", o
        for i, o in enumerate(self.props):
            yield f"props[{i}]", o

    def instances(self) -> list[ObjectInstance]:
        return [inst for _, inst in self.labeled_instances()]

    def instance(self, object_id: int) -> ObjectInstance | None:
        for inst in self.instances():
            if inst.object_id == object_id:
                return inst
        return None

    @property
    def object_ids(self) -> set[int]:
        return {inst.object_id for inst in self.instances()}

    def replace(self, **changes) -> "Scene":
        return replace(self, **changes)


# dict conversion -------------------------------------------------------------------

def transform_to_dict(t: Transform) -> dict:
    return {"translation": list(t.translation), "rotation": list(t.rotation), "scale": t.scale}


def transform_from_dict(d: dict) -> Transform:
    _expect_keys(d, {"translation", "rotation", "scale"}, {"translation", "rotation"})
    return Transform(tuple(d["translation"]), tuple(d["rotation"]), d.get("scale", 1.0))


def material_to_dict(m: Material) -> dict:
    if isinstance(m, GlassMaterial):
        return {
            "kind": "glass",
            "base_ior": m.base_ior,
            "abbe_number": m.abbe_number,
            "roughness": m.roughness,
            "tint": list(m.tint),
            "specular_scale": m.specular_scale,
            "thickness_mode": m.thickness_mode,
        }
    return {"kind": "diffuse", "albedo": list(m.albedo), "texture": m.texture, "texture_scale_m": m.texture_scale_m}


def material_from_dict(d: dict) -> Material:
    if not isinstance(d, dict):
        raise ValidationError("kind", "material must be a table")
    kind = d.get("kind")
    body = {k: v for k, v in d.items() if k != "kind"}
    if kind == "glass":
        _expect_keys(body, {"base_ior", "abbe_number", "roughness", "tint", "specular_scale", "thickness_mode"})
        if "tint" in body:
            body["tint"] = tuple(body["tint"])
        return GlassMaterial(**body)
    if kind == "diffuse":
        _expect_keys(body, {"albedo", "texture", "texture_scale_m"})
        if "albedo" in body:
            body["albedo"] = tuple(body["albedo"])
        return DiffuseMaterial(**body)
    raise ValidationError("kind", f"unknown material kind {kind!r}")


def instance_to_dict(o: ObjectInstance) -> dict:
    return {
        "object_id": o.object_id,
        "mesh": o.mesh,
        "transform": transform_to_dict(o.transform),
        "material": material_to_dict(o.material),
        "semantic_class": o.semantic_class,
    }


def instance_from_dict(d: dict) -> ObjectInstance:
    _expect_keys(d, {"object_id", "mesh", "transform", "material", "semantic_class"},
                 {"object_id", "mesh", "transform", "material", "semantic_class"})
    return ObjectInstance(
        object_id=d["object_id"],
        mesh=d["mesh"],
        transform=_prefixed("transform", transform_from_dict, d["transform"]),
        material=_prefixed("material", material_from_dict, d["material"]),
        semantic_class=d["semantic_class"],
    )


def light_to_dict(l: AreaLight) -> dict:
    return {
        "center": list(l.center),
        "radius": l.radius,
        "direction": list(l.direction),
        "cone_half_angle": l.cone_half_angle,
        "radiant_intensity": list(l.radiant_intensity),
        "enabled": l.enabled,
    }


def light_from_dict(d: dict) -> AreaLight:
    _expect_keys(d, {"center", "radius", "direction", "cone_half_angle", "radiant_intensity", "enabled"})
    body = dict(d)
    for k in ("center", "direction", "radiant_intensity"):
        if k in body:
            body[k] = tuple(body[k])
    return AreaLight(**body)


def camera_to_dict(c: Camera) -> dict:
    pose = transform_to_dict(c.pose)
    del pose["scale"]
    return {
        "pose": pose,
        "width": c.width,
        "height": c.height,
        "vertical_fov": c.vertical_fov,
        "exposure_ev": c.exposure_ev,
    }


def camera_from_dict(d: dict) -> Camera:
    _expect_keys(d, {"pose", "width", "height", "vertical_fov", "exposure_ev"}, {"pose"})
    body = dict(d)
    body["pose"] = _prefixed("pose", transform_from_dict, d["pose"])
    return Camera(**body)


def environment_to_dict(e: EnvironmentMap) -> dict:
    return {"id": e.id, "rotation_deg": e.rotation_deg, "scale": e.scale}


def environment_from_dict(d: dict) -> EnvironmentMap:
    _expect_keys(d, {"id", "rotation_deg", "scale"}, {"id"})
    return EnvironmentMap(**d)


def scene_to_dict(s: Scene) -> dict:
    return {
        "format": SCENE_FORMAT,
        "seed": s.seed,
        "depth_range_m": s.depth_range_m,
        "environment": environment_to_dict(s.environment),
        "backdrop": instance_to_dict(s.backdrop),
        "objects": [instance_to_dict(o) for o in s.objects],
        "props": [instance_to_dict(o) for o in s.props],
        "lights": [light_to_dict(l) for l in s.lights],
        "cameras": [camera_to_dict(c) for c in s.cameras],
    }


def scene_from_dict(d: Any) -> Scene:
    if not isinstance(d, dict):
        raise ParseError("scene file must hold a table at top level")
    if d.get("format", SCENE_FORMAT) != SCENE_FORMAT:
        raise ParseError(f"unsupported scene format {d.get('format')!r}")
    _expect_keys(d, {"format", "seed", "depth_range_m", "environment", "backdrop", "objects", "props",
                     "lights", "cameras"}, {"seed", "environment", "backdrop"})

    def many(key, fn):
        return tuple(_prefixed(f"{key}[{i}]", fn, item) for i, item in enumerate(d.get(key, [])))

    return Scene(
        seed=d["seed"],
        backdrop=_prefixed("backdrop", instance_from_dict, d["backdrop"]),
        environment=_prefixed("environment", environment_from_dict, d["environment"]),
        objects=many("objects", instance_from_dict),
        props=many("props", instance_from_dict),
        lights=many("lights", light_from_dict),
        cameras=many("cameras", camera_from_dict),
        depth_range_m=d.get("depth_range_m", 10.0),
    )


def _expect_keys(d: dict, allowed: set[str], required: set[str] = frozenset()) -> None:
    if not isinstance(d, dict):
        raise ValidationError("<table>", f"expected a table, got {type(d).__name__}")
    for k in d:
        if k not in allowed:
            raise ValidationError(k, "unknown field")
    for k in required:
        if k not in d:
            raise ValidationError(k, "missing required field")


# files ---------------------------------------------------------------------------------

def canonical_json(tree: Any) -> str:
    """Key-sorted, NaN-free JSON text with a trailing newline."""
    return json.dumps(tree, sort_keys=True, indent=2, allow_nan=False) + "\n"


def dumps_scene(scene: Scene) -> str:
    if not isinstance(scene, Scene):
        raise ValidationError("scene", "expected a Scene")
    # re-validate: a Scene built with object.__setattr__ tricks must still be rejected
    tree = scene_to_dict(scene)
    scene_from_dict(json.loads(canonical_json(tree)))
    return canonical_json(tree)


def loads_scene(text: str) -> Scene:
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed scene file: {exc}") from exc
    return scene_from_dict(tree)


def save_scene(scene: Scene, path: str | os.PathLike) -> None:
    text = dumps_scene(scene)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def load_scene(path: str | os.PathLike, catalog: "AssetCatalog | None" = None) -> Scene:
    """Parse, validate and (when a catalog is available) resolve a scene file."""
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not a text file") from exc
    scene = loads_scene(text)
    if catalog is None:
        from .assets import AssetCatalog

        catalog = AssetCatalog.default(required=False)
    if catalog is not None:
        check_assets(scene, catalog)
    return scene


def check_assets(scene: Scene, catalog: "AssetCatalog") -> None:
    for path, inst in scene.labeled_instances():
        if inst.mesh not in catalog.meshes:
            raise MissingAssetError(f"{path}.mesh: unknown mesh {inst.mesh!r}")
        if isinstance(inst.material, DiffuseMaterial) and inst.material.texture is not None:
            if inst.material.texture not in catalog.textures:
                raise MissingAssetError(f"{path}.material.texture: unknown texture {inst.material.texture!r}")
    if scene.environment.id not in catalog.hdri:
        raise MissingAssetError(f"environment.id: unknown HDRI {scene.environment.id!r}")


def structural_diff(a: Any, b: Any, path: str = "") -> list[str]:
    """Paths at which two scene trees differ.

    Scenes are compared through their dict form; numeric vectors count as
    single leaves.
    """
    if isinstance(a, Scene):
        a = scene_to_dict(a)
    if isinstance(b, Scene):
        b = scene_to_dict(b)
    if isinstance(a, dict) and isinstance(b, dict):
        out = []
        for k in sorted(set(a) | set(b)):
            sub = f"{path}.{k}" if path else k
            if k not in a or k not in b:
                out.append(sub)
            else:
                out.extend(structural_diff(a[k], b[k], sub))
        return out
    is_vec = lambda v: isinstance(v, list) and all(isinstance(c, (int, float)) for c in v)  # noqa: E731
    if isinstance(a, list) and isinstance(b, list) and not (is_vec(a) and is_vec(b)):
        if len(a) != len(b):
            return [path]
        out = []
        for i, (x, y) in enumerate(zip(a, b)):
            out.extend(structural_diff(x, y, f"{path}[{i}]"))
        return out
    return [] if a == b else [path]
