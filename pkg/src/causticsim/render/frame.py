"""Frame-level rendering API: settings, photon map, radiance + G-buffer, tone mapping."""

from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..assets import AssetCatalog
from ..errors import RenderError, ValidationError
from ..rng import MASK64, derive_key
from ..scene import Camera, Scene, canonical_json, dumps_scene
from . import kernels
from .pack import PackedScene, camera_of, pack_camera, pack_scene

log = logging.getLogger(__name__)

TONEMAPS = ("gamma_srgb", "linear_clamp")
LUMA = np.array([0.2126, 0.7152, 0.0722])


@dataclass(frozen=True)
class RenderSettings:
    samples_per_pixel: int = 16
    max_bounces: int = 8
    caustics_enabled: bool = True
    photon_count: int = 200_000
    photon_gather_radius_m: float = 0.01
    frame_seed: int = 0
    tonemap: str = "gamma_srgb"
    exposure_ev: float = 0.0

    def __post_init__(self):
        for name in ("samples_per_pixel", "max_bounces", "photon_count", "frame_seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ValidationError(name, f"expected an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.samples_per_pixel < 1:
            raise ValidationError("samples_per_pixel", "must be >= 1")
        if self.max_bounces < 0:
            raise ValidationError("max_bounces", "must be >= 0")
        if self.photon_count < 0:
            raise ValidationError("photon_count", "must be >= 0")
        if not 0 <= self.frame_seed <= MASK64:
            raise ValidationError("frame_seed", "must fit in 64 unsigned bits")
        if not isinstance(self.caustics_enabled, bool):
            raise ValidationError("caustics_enabled", "expected true or false")
        if self.caustics_enabled and self.photon_count == 0:
            raise ValidationError("photon_count", "must be > 0 when caustics are enabled")
        r = self.photon_gather_radius_m
        if isinstance(r, bool) or not isinstance(r, (int, float)) or not math.isfinite(r) or r <= 0:
            raise ValidationError("photon_gather_radius_m", "must be a finite real > 0")
        object.__setattr__(self, "photon_gather_radius_m", float(r))
        if self.tonemap not in TONEMAPS:
            raise ValidationError("tonemap", f"must be one of {', '.join(TONEMAPS)}")
        ev = self.exposure_ev
        if isinstance(ev, bool) or not isinstance(ev, (int, float)) or not math.isfinite(ev):
            raise ValidationError("exposure_ev", "must be a finite real")
        object.__setattr__(self, "exposure_ev", float(ev))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RenderSettings":
        if not isinstance(d, dict):
            raise ValidationError("render", "expected a table")
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValidationError(f"render.{sorted(unknown)[0]}", "unknown field")
        return cls(**d)

    def with_overrides(self, **kw) -> "RenderSettings":
        return replace(self, **kw)


def settings_hash(settings: RenderSettings) -> str:
    return hashlib.sha256(canonical_json(settings.to_dict()).encode()).hexdigest()[:16]


def pair_key(scene: Scene, camera_index: int, settings: RenderSettings) -> str:
    """Identity of a render up to the caustics toggle; equal keys make a valid on/off pair."""
    d = settings.to_dict()
    for k in ("caustics_enabled", "photon_count", "photon_gather_radius_m"):
        d.pop(k)
    h = hashlib.sha256()
    h.update(dumps_scene(scene).encode())
    h.update(canonical_json({"camera": camera_index, "settings": d}).encode())
    return h.hexdigest()[:16]


@dataclass(eq=False)
class RadianceImage:
    """Linear RGB radiance, shape (H, W, 3)."""

    texels: np.ndarray
    caustics_enabled: bool = False
    settings_hash: str = ""
    pair_key: str = ""
    camera_exposure_ev: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.texels, np.float64)
        if t.ndim != 3 or t.shape[2] != 3:
            raise ValidationError("texels", f"expected (H, W, 3), got {t.shape}")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise ValidationError("texels", "radiance must be finite and >= 0")
        self.texels = t

    @property
    def width(self) -> int:
        return self.texels.shape[1]

    @property
    def height(self) -> int:
        return self.texels.shape[0]

    def luminance(self) -> np.ndarray:
        return self.texels @ LUMA


@dataclass(eq=False)
class GBuffer:
    """First camera-ray hit per pixel (pixel-center rays).

    ``object_id`` 0 is a miss; misses carry depth ``inf``, normal 0 and
    position NaN.  ``semantic_class`` uses the codes in ``pack.CLASS_CODES``
    (0 for a miss).
    """

    object_id: np.ndarray
    depth_m: np.ndarray
    world_normal: np.ndarray
    world_position: np.ndarray
    is_transparent_hit: np.ndarray
    semantic_class: np.ndarray
    camera: Camera = field(default_factory=Camera)

    @property
    def shape(self) -> tuple[int, int]:
        return self.object_id.shape

    @property
    def hit(self) -> np.ndarray:
        return self.object_id > 0


@dataclass(eq=False)
class CausticPhotonMap:
    """Caustic photons (light -> glass+ -> diffuse) in implicit balanced kd order."""

    arrays: kernels.PhotonArrays
    band: np.ndarray
    emitted_power: np.ndarray
    n_emitted: int

    @property
    def positions(self) -> np.ndarray:
        return self.arrays.pos

    @property
    def directions(self) -> np.ndarray:
        return self.arrays.dir

    @property
    def powers(self) -> np.ndarray:
        return self.arrays.power

    def __len__(self) -> int:
        return self.arrays.pos.shape[0]

    @classmethod
    def empty(cls) -> "CausticPhotonMap":
        arrays = kernels.PhotonArrays(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, np.int8))
        return cls(arrays, np.zeros(0, np.int8), np.zeros(3), 0)


def _resolve_catalog(catalog: AssetCatalog | None) -> AssetCatalog:
    return catalog if catalog is not None else AssetCatalog.default(required=True)


# photons -----------------------------------------------------------------------------

AIM_MARGIN = 1.02


def _emission_pairs(packed: PackedScene, photon_count: int):
    """(light, glass object) cones that photons are aimed into, with per-pair counts."""
    lights = packed.lights
    mats = packed.mats
    geom = packed.geometry
    light_idx, axes, cosmax, weight = [], [], [], []
    for l in range(len(lights.radius)):
        c = lights.center[l]
        ldir = lights.direction[l]
        cone = math.acos(min(1.0, max(-1.0, lights.cos_cone[l])))
        lum = float(lights.intensity[l] @ LUMA)
        if lum <= 0:
            continue
        for k in np.flatnonzero(mats.is_glass):
            v = geom.obj_center[k] - c
            dist = float(np.linalg.norm(v))
            reach = geom.obj_radius[k] * AIM_MARGIN + lights.radius[l]
            if dist <= reach:
                axis, half = ldir.copy(), math.pi
            else:
                axis, half = v / dist, math.asin(reach / dist)
            between = math.acos(min(1.0, max(-1.0, float(axis @ ldir))))
            if between - half >= cone:
                continue
            light_idx.append(l)
            axes.append(axis)
            cosmax.append(math.cos(half))
            weight.append(lum * 2.0 * math.pi * (1.0 - math.cos(half)))
    if not light_idx:
        return None
    w = np.array(weight)
    share = w / w.sum() * photon_count
    counts = np.floor(share).astype(np.int64)
    # largest remainder, ties to the lower index
    rest = photon_count - int(counts.sum())
    for i in np.argsort(-(share - counts), kind="stable")[:rest]:
        counts[i] += 1
    cm = np.array(cosmax)
    omega = 2.0 * math.pi * (1.0 - cm)
    first = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    return (np.array(light_idx, np.int64), np.ascontiguousarray(np.array(axes)), cm, counts, omega, first)


def trace_photons(
    scene: Scene,
    settings: RenderSettings,
    catalog: AssetCatalog | None = None,
    packed: PackedScene | None = None,
) -> CausticPhotonMap:
    """Shoot ``photon_count`` photons at the glass objects and keep the caustic ones."""
    if not settings.caustics_enabled:
        raise RenderError("trace_photons needs caustics_enabled")
    if packed is None:
        packed = pack_scene(scene, _resolve_catalog(catalog))
    pairs = _emission_pairs(packed, settings.photon_count)
    if pairs is None:
        return CausticPhotonMap.empty()
    light_idx, axes, cosmax, counts, omega, first = pairs
    n = int(counts.sum())
    pos = np.zeros((n, 3))
    dirs = np.zeros((n, 3))
    power = np.zeros((n, 3))
    band = np.full(n, -1, np.int8)
    stored = np.zeros(n, np.bool_)
    emitted = np.zeros((n, 3))
    key = np.uint64(derive_key(settings.frame_seed, "photons"))
    kernels.trace_photon_batch(
        packed.tris, packed.shading, packed.mats, packed.lights, light_idx, axes, cosmax, counts, omega,
        first, key, settings.max_bounces, pos, dirs, power, band, stored, emitted,
    )
    pos, dirs, power, band = pos[stored], dirs[stored], power[stored], band[stored]
    order, axis = kernels.kd_order(pos)
    arrays = kernels.PhotonArrays(
        np.ascontiguousarray(pos[order]),
        np.ascontiguousarray(dirs[order]),
        np.ascontiguousarray(power[order]),
        axis,
    )
    log.debug("photons: %d emitted, %d stored", n, len(order))
    return CausticPhotonMap(arrays, band[order], emitted.sum(axis=0), n)


# frames ------------------------------------------------------------------------------


def _tiles(width: int, height: int, tile: int):
    for y0 in range(0, height, tile):
        for x0 in range(0, width, tile):
            yield x0, min(width, x0 + tile), y0, min(height, y0 + tile)


def _run_tiles(fn, width, height, tile_size, workers):
    tiles = list(_tiles(width, height, tile_size))
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(tiles) == 1:
        for t in tiles:
            fn(t)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # list() re-raises the first worker exception
        list(pool.map(fn, tiles))


def render_gbuffer(
    scene: Scene,
    camera_index: int,
    catalog: AssetCatalog | None = None,
    packed: PackedScene | None = None,
    tile_size: int = 64,
    workers: int | None = None,
) -> GBuffer:
    camera = camera_of(scene, camera_index)
    if packed is None:
        packed = pack_scene(scene, _resolve_catalog(catalog))
    cam = pack_camera(camera)
    h, w = camera.height, camera.width
    slot = np.empty((h, w), np.int32)
    depth = np.empty((h, w))
    normal = np.empty((h, w, 3))
    pos = np.empty((h, w, 3))

    def run(t):
        kernels.gbuffer_tile(packed.tris, packed.shading, packed.mats, cam, *t, slot, depth, normal, pos)

    _run_tiles(run, w, h, tile_size, workers)
    hit = slot >= 0
    safe = np.where(hit, slot, 0)
    object_id = np.where(hit, packed.mats.obj_id[safe], 0).astype(np.uint16)
    klass = np.where(hit, packed.mats.obj_class[safe], 0).astype(np.int8)
    transparent = hit & (packed.mats.is_glass[safe] == 1)
    return GBuffer(object_id, depth, normal, pos, transparent, klass, camera)


def render_frame(
    scene: Scene,
    camera_index: int,
    settings: RenderSettings,
    catalog: AssetCatalog | None = None,
    *,
    packed: PackedScene | None = None,
    photon_map: CausticPhotonMap | None = None,
    tile_size: int = 32,
    workers: int | None = None,
) -> tuple[RadianceImage, GBuffer]:
    """Render radiance and the G-buffer for one camera.

    ``packed`` and ``photon_map`` may be passed in to share them across
    cameras of the same scene; the photon map must come from the same
    scene and settings.
    """
    camera = camera_of(scene, camera_index)
    if tile_size < 1:
        raise ValidationError("tile_size", "must be >= 1")
    if packed is None:
        packed = pack_scene(scene, _resolve_catalog(catalog))
    if settings.caustics_enabled:
        if photon_map is None:
            photon_map = trace_photons(scene, settings, packed=packed)
    else:
        photon_map = CausticPhotonMap.empty()
    cam = pack_camera(camera)
    h, w = camera.height, camera.width
    out = np.zeros((h, w, 3))
    key = np.uint64(derive_key(settings.frame_seed, "radiance", camera_index))

    def run(t):
        kernels.render_tile(
            packed.tris, packed.shading, packed.mats, packed.lights, packed.env, cam, photon_map.arrays,
            *t, settings.samples_per_pixel, settings.max_bounces, key, settings.caustics_enabled,
            settings.photon_gather_radius_m, out,
        )

    _run_tiles(run, w, h, tile_size, workers)
    if not np.all(np.isfinite(out)):
        raise RenderError("renderer produced non-finite radiance")
    image = RadianceImage(
        out,
        caustics_enabled=settings.caustics_enabled,
        settings_hash=settings_hash(settings),
        pair_key=pair_key(scene, camera_index, settings),
        camera_exposure_ev=camera.exposure_ev,
    )
    gbuf = render_gbuffer(scene, camera_index, packed=packed, tile_size=max(tile_size, 16), workers=workers)
    return image, gbuf


# display -----------------------------------------------------------------------------


def srgb_encode(v: np.ndarray) -> np.ndarray:
    v = np.clip(v, 0.0, 1.0)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * np.power(v, 1.0 / 2.4) - 0.055)


def tone_map(image: RadianceImage, settings: RenderSettings) -> np.ndarray:
    """8-bit display raster: exposure scale, transfer curve, clamp, round.

    Exposure is the sum of the settings' and the camera's compensation.
    """
    t = image.texels
    if not np.all(np.isfinite(t)):
        raise ValidationError("texels", "cannot tone-map non-finite radiance")
    v = t * 2.0 ** (settings.exposure_ev + image.camera_exposure_ev)
    if settings.tonemap == "gamma_srgb":
        v = srgb_encode(v)
    else:
        v = np.clip(v, 0.0, 1.0)
    return np.round(v * 255.0).astype(np.uint8)
