"""Composition-preserving scene deltas.

A delta may touch lights, glass appearance, the backdrop material, the
HDRI, cameras and render settings.  It has no way to name an object
transform, a mesh, a semantic class or the object set, so applying one
can never move or relabel geometry.  Overrides are absolute; the light
rotation is the one relative field.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ParseError, ValidationError
from .geometry import quat_from_axis_angle, quat_rotate
from .render.frame import RenderSettings
from .scene import (
    DiffuseMaterial,
    GlassMaterial,
    Scene,
    Transform,
    canonical_json,
    material_from_dict,
    material_to_dict,
    transform_from_dict,
    transform_to_dict,
)

GLASS_FIELDS = ("roughness", "tint", "specular_scale", "base_ior", "abbe_number")
# named so the parse error can say why they are refused
GEOMETRY_FIELDS = {
    "transform", "translation", "rotation", "scale", "mesh", "objects", "props", "object_id",
    "semantic_class", "backdrop", "backdrop_mesh", "geometry",
}
TAG_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.+-]*$")


def _vec(name, v, n=3) -> tuple[float, ...]:
    try:
        out = tuple(float(c) for c in v)
    except (TypeError, ValueError):
        raise ValidationError(name, f"expected {n} numbers") from None
    if len(out) != n or not all(math.isfinite(c) for c in out):
        raise ValidationError(name, f"expected {n} finite numbers")
    return out


@dataclass(frozen=True)
class LightRotation:
    """Rotate a light's centre and direction by ``angle_deg`` about ``axis`` through ``pivot``."""

    angle_deg: float
    pivot: tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        a = self.angle_deg
        if isinstance(a, bool) or not isinstance(a, (int, float)) or not math.isfinite(a):
            raise ValidationError("angle_deg", "must be a finite real")
        object.__setattr__(self, "angle_deg", float(a))
        object.__setattr__(self, "pivot", _vec("pivot", self.pivot))
        ax = _vec("axis", self.axis)
        if math.sqrt(sum(c * c for c in ax)) < 1e-12:
            raise ValidationError("axis", "must be non-zero")
        object.__setattr__(self, "axis", ax)


@dataclass(frozen=True)
class CameraOverride:
    """Override for one camera (``index``) or, with ``index=None``, for all of them."""

    index: int | None = None
    exposure_ev: float | None = None
    pose: Transform | None = None

    def __post_init__(self):
        if self.index is not None and (isinstance(self.index, bool) or not isinstance(self.index, int) or self.index < 0):
            raise ValidationError("index", "must be a camera index >= 0")
        if self.exposure_ev is not None:
            e = self.exposure_ev
            if isinstance(e, bool) or not isinstance(e, (int, float)) or not math.isfinite(e):
                raise ValidationError("exposure_ev", "must be a finite real")
            object.__setattr__(self, "exposure_ev", float(e))
        if self.pose is not None and (not isinstance(self.pose, Transform) or self.pose.scale != 1.0):
            raise ValidationError("pose", "must be a rigid transform")

    @property
    def moves_camera(self) -> bool:
        return self.pose is not None


def _check_glass_patch(oid, patch: dict) -> dict:
    if not isinstance(patch, dict):
        raise ValidationError(f"glass_overrides.{oid}", "expected a table")
    for k in patch:
        if k in GEOMETRY_FIELDS:
            raise ValidationError(f"glass_overrides.{oid}.{k}", "deltas cannot change geometry")
        if k not in GLASS_FIELDS:
            raise ValidationError(f"glass_overrides.{oid}.{k}", "unknown glass field")
    out = dict(patch)
    if "tint" in out:
        out["tint"] = tuple(out["tint"])
    # trial construction surfaces range errors at parse time
    try:
        GlassMaterial(**out)
    except ValidationError as exc:
        raise ValidationError(f"glass_overrides.{oid}.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    return out


@dataclass(frozen=True)
class AblationDelta:
    tag: str | None = None
    light_index: int = 0
    light_rotation: LightRotation | None = None
    light_color: tuple[float, float, float] | None = None
    light_radius_m: float | None = None
    hdri_id: str | None = None
    backdrop_material: DiffuseMaterial | None = None
    glass_overrides: dict = field(default_factory=dict)
    camera_overrides: tuple[CameraOverride, ...] = ()
    render_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tag is not None and (not isinstance(self.tag, str) or not TAG_RE.match(self.tag)):
            raise ValidationError("tag", "must be a non-empty file-name-safe string")
        if isinstance(self.light_index, bool) or not isinstance(self.light_index, int) or self.light_index < 0:
            raise ValidationError("light_index", "must be an integer >= 0")
        if self.light_rotation is not None and not isinstance(self.light_rotation, LightRotation):
            raise ValidationError("light_rotation", "expected a light rotation")
        if self.light_color is not None:
            c = _vec("light_color", self.light_color)
            if any(v < 0 for v in c):
                raise ValidationError("light_color", "components must be >= 0")
            object.__setattr__(self, "light_color", c)
        if self.light_radius_m is not None:
            r = self.light_radius_m
            if isinstance(r, bool) or not isinstance(r, (int, float)) or not math.isfinite(r) or r < 0:
                raise ValidationError("light_radius_m", "must be a finite real >= 0")
            object.__setattr__(self, "light_radius_m", float(r))
        if self.hdri_id is not None and (not isinstance(self.hdri_id, str) or not self.hdri_id):
            raise ValidationError("hdri_id", "must be a catalog key")
        if self.backdrop_material is not None and not isinstance(self.backdrop_material, DiffuseMaterial):
            raise ValidationError("backdrop_material", "backdrops take diffuse materials")
        overrides = {}
        for oid, patch in dict(self.glass_overrides).items():
            try:
                key = int(oid)
            except (TypeError, ValueError):
                raise ValidationError(f"glass_overrides.{oid}", "keys are object ids") from None
            overrides[key] = _check_glass_patch(key, patch)
        object.__setattr__(self, "glass_overrides", overrides)
        cams = tuple(self.camera_overrides)
        if not all(isinstance(c, CameraOverride) for c in cams):
            raise ValidationError("camera_overrides", "expected camera override entries")
        object.__setattr__(self, "camera_overrides", cams)
        ro = dict(self.render_overrides)
        known = set(RenderSettings.__dataclass_fields__)
        for k in ro:
            if k not in known:
                raise ValidationError(f"render_overrides.{k}", "unknown render setting")
        object.__setattr__(self, "render_overrides", ro)

    @property
    def moves_camera(self) -> bool:
        return any(c.moves_camera for c in self.camera_overrides)


# (de)serialization -------------------------------------------------------------------

DELTA_KEYS = {
    "tag", "light_index", "light_rotation", "light_color", "light_radius_m", "hdri_id", "backdrop_material",
    "glass_overrides", "camera_overrides", "render_overrides",
}


def delta_from_dict(d: dict) -> AblationDelta:
    if not isinstance(d, dict):
        raise ValidationError("delta", "expected a table")
    for k in d:
        if k in GEOMETRY_FIELDS:
            raise ValidationError(k, "deltas cannot change geometry")
        if k not in DELTA_KEYS:
            raise ValidationError(k, "unknown delta field")
    kw = dict(d)
    if kw.get("light_rotation") is not None:
        lr = kw["light_rotation"]
        if not isinstance(lr, dict) or set(lr) - {"angle_deg", "pivot", "axis"} or "angle_deg" not in lr:
            raise ValidationError("light_rotation", "expected {angle_deg, pivot?, axis?}")
        kw["light_rotation"] = LightRotation(**lr)
    if kw.get("backdrop_material") is not None:
        try:
            kw["backdrop_material"] = material_from_dict(kw["backdrop_material"])
        except ValidationError as exc:
            raise ValidationError(f"backdrop_material.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    cams = []
    for i, c in enumerate(kw.get("camera_overrides") or []):
        if not isinstance(c, dict) or set(c) - {"index", "exposure_ev", "pose"}:
            raise ValidationError(f"camera_overrides[{i}]", "expected {index?, exposure_ev?, pose?}")
        c = dict(c)
        if c.get("pose") is not None:
            pose = dict(c["pose"])
            pose.setdefault("scale", 1.0)
            c["pose"] = transform_from_dict(pose)
        cams.append(CameraOverride(**c))
    kw["camera_overrides"] = tuple(cams)
    for k in ("glass_overrides", "render_overrides"):
        if kw.get(k) is None:
            kw[k] = {}
        elif not isinstance(kw[k], dict):
            raise ValidationError(k, "expected a table")
    return AblationDelta(**kw)


def delta_to_dict(delta: AblationDelta) -> dict:
    out: dict = {}
    if delta.tag is not None:
        out["tag"] = delta.tag
    if delta.light_index:
        out["light_index"] = delta.light_index
    if delta.light_rotation is not None:
        lr = delta.light_rotation
        out["light_rotation"] = {"angle_deg": lr.angle_deg, "pivot": list(lr.pivot), "axis": list(lr.axis)}
    if delta.light_color is not None:
        out["light_color"] = list(delta.light_color)
    if delta.light_radius_m is not None:
        out["light_radius_m"] = delta.light_radius_m
    if delta.hdri_id is not None:
        out["hdri_id"] = delta.hdri_id
    if delta.backdrop_material is not None:
        out["backdrop_material"] = material_to_dict(delta.backdrop_material)
    if delta.glass_overrides:
        out["glass_overrides"] = {
            str(k): {f: (list(v) if f == "tint" else v) for f, v in p.items()} for k, p in delta.glass_overrides.items()
        }
    if delta.camera_overrides:
        cams = []
        for c in delta.camera_overrides:
            entry: dict = {}
            if c.index is not None:
                entry["index"] = c.index
            if c.exposure_ev is not None:
                entry["exposure_ev"] = c.exposure_ev
            if c.pose is not None:
                pose = transform_to_dict(c.pose)
                del pose["scale"]
                entry["pose"] = pose
            cams.append(entry)
        out["camera_overrides"] = cams
    if delta.render_overrides:
        out["render_overrides"] = dict(delta.render_overrides)
    return out


def load_deltas(path) -> list[AblationDelta]:
    """A delta file holds one delta table or ``{"deltas": [...]}``."""
    try:
        tree = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if isinstance(tree, dict) and set(tree) == {"deltas"}:
        items = tree["deltas"]
        if not isinstance(items, list):
            raise ValidationError("deltas", "expected a list")
        out = []
        for i, d in enumerate(items):
            try:
                out.append(delta_from_dict(d))
            except ValidationError as exc:
                raise ValidationError(f"deltas[{i}].{exc.field}", str(exc).split(": ", 1)[-1]) from None
        return out
    return [delta_from_dict(tree)]


def dumps_deltas(deltas) -> str:
    return canonical_json({"deltas": [delta_to_dict(d) for d in deltas]})


# application -------------------------------------------------------------------------

def _rotate_about(p, rot, pivot):
    q = quat_from_axis_angle(rot.axis, math.radians(rot.angle_deg))
    rel = tuple(a - b for a, b in zip(p, pivot))
    r = quat_rotate(q, rel)
    return tuple(a + b for a, b in zip(r, pivot))


def apply_delta(scene: Scene, delta: AblationDelta) -> Scene:
    """New scene with the delta's overrides; objects keep their exact transforms and meshes."""
    changes: dict = {}
    if delta.light_rotation is not None or delta.light_color is not None or delta.light_radius_m is not None:
        if delta.light_index >= len(scene.lights):
            raise ValidationError("light_index", f"scene has {len(scene.lights)} lights")
        lights = list(scene.lights)
        light = lights[delta.light_index]
        if delta.light_rotation is not None:
            rot = delta.light_rotation
            q = quat_from_axis_angle(rot.axis, math.radians(rot.angle_deg))
            center = _rotate_about(light.center, rot, rot.pivot)
            d = quat_rotate(q, light.direction)
            n = math.sqrt(sum(c * c for c in d))
            direction = tuple(c / n for c in d) if abs(n - 1.0) > 1e-12 else d
            light = replace(light, center=center, direction=direction)
        if delta.light_color is not None:
            light = replace(light, radiant_intensity=delta.light_color)
        if delta.light_radius_m is not None:
            light = replace(light, radius=delta.light_radius_m)
        lights[delta.light_index] = light
        changes["lights"] = tuple(lights)
    if delta.hdri_id is not None:
        changes["environment"] = replace(scene.environment, id=delta.hdri_id)
    if delta.backdrop_material is not None:
        changes["backdrop"] = replace(scene.backdrop, material=delta.backdrop_material)
    if delta.glass_overrides:
        objects = list(scene.objects)
        index = {o.object_id: i for i, o in enumerate(objects)}
        for oid, patch in sorted(delta.glass_overrides.items()):
            if oid not in index:
                raise ValidationError(f"glass_overrides.{oid}", f"unknown object_id {oid}")
            inst = objects[index[oid]]
            if not isinstance(inst.material, GlassMaterial):
                raise ValidationError(f"glass_overrides.{oid}", "object is not glass")
            objects[index[oid]] = replace(inst, material=replace(inst.material, **patch))
        changes["objects"] = tuple(objects)
    if delta.camera_overrides:
        cams = list(scene.cameras)
        for k, co in enumerate(delta.camera_overrides):
            if co.index is not None and co.index >= len(cams):
                raise ValidationError(f"camera_overrides[{k}].index", f"scene has {len(cams)} cameras")
            targets = range(len(cams)) if co.index is None else [co.index]
            for i in targets:
                c = cams[i]
                if co.exposure_ev is not None:
                    c = replace(c, exposure_ev=co.exposure_ev)
                if co.pose is not None:
                    c = replace(c, pose=co.pose)
                cams[i] = c
        changes["cameras"] = tuple(cams)
    return scene.replace(**changes) if changes else scene


def apply_render_overrides(settings: RenderSettings, delta: AblationDelta) -> RenderSettings:
    if not delta.render_overrides:
        return settings
    try:
        return replace(settings, **delta.render_overrides)
    except ValidationError as exc:
        raise ValidationError(f"render_overrides.{exc.field}", str(exc).split(": ", 1)[-1]) from None


def delta_tag(delta: AblationDelta, index: int) -> str:
    return delta.tag if delta.tag is not None else f"d{index:03d}"


@dataclass(frozen=True)
class SweepItem:
    scene: Scene
    tag: str
    settings: RenderSettings

    def __iter__(self):
        # unpacks as (scene, tag) like a plain pair
        return iter((self.scene, self.tag))


def sweep(scene: Scene, deltas, settings: RenderSettings | None = None) -> list[SweepItem]:
    """One independently derived scene per delta (deltas do not compose)."""
    settings = settings or RenderSettings()
    deltas = list(deltas)
    tags = [delta_tag(d, i) for i, d in enumerate(deltas)]
    seen: set[str] = set()
    for i, t in enumerate(tags):
        if t in seen:
            raise ValidationError(f"deltas[{i}].tag", f"duplicate tag {t!r}")
        seen.add(t)
    return [SweepItem(apply_delta(scene, d), t, apply_render_overrides(settings, d)) for d, t in zip(deltas, tags)]


def angle_tag(angle_deg: float) -> str:
    """File-name-safe tag for a light angle: 30 -> ``light+030.0``."""
    return f"light{angle_deg:+06.1f}"


def light_angle_deltas(angles_deg, pivot=(0.0, 0.0, 0.0), axis=(0.0, 0.0, 1.0), light_index: int = 0):
    return [
        AblationDelta(tag=angle_tag(a), light_index=light_index, light_rotation=LightRotation(a, pivot, axis))
        for a in angles_deg
    ]
