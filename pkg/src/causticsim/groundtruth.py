"""Pixel-aligned annotation passes computed from a G-buffer and radiance pairs.

Every pass here is a fixed-stencil function of its inputs, so the same
G-buffer always yields the same rasters bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter

from .encoding import encode_png8, encode_png16
from .errors import DimensionError, PairingError, ValidationError
from .geometry import quat_to_matrix
from .render.frame import GBuffer, RadianceImage
from .render.pack import CLASS_CODES
from .scene import Camera

BOUNDARY_NONE, BOUNDARY_CONTACT, BOUNDARY_OCCLUSION = 0, 1, 2
CAUSTIC_NONE, CAUSTIC_LOCAL, CAUSTIC_NON_LOCAL = 0, 1, 2
# 8-bit file encodings of the two enum rasters
ENUM_PNG_LEVELS = np.array([0, 128, 255], np.uint8)

DEFAULT_TAU = 0.01
DEFAULT_DEPTH_JUMP_M = 0.005

PASS_FILES = {
    "depth": "depth.png",
    "normals_world": "normals_world.png",
    "normals_camera": "normals_camera.png",
    "mask": "mask.png",
    "outline": "outline.png",
    "boundary": "boundary.png",
    "caustics": "caustics.png",
}
PASS_NAMES = tuple(PASS_FILES)


def depth_pass(gbuffer: GBuffer, depth_range_m: float) -> np.ndarray:
    """Planar depth over ``depth_range_m``, clamped to [0, 1]; misses are 1."""
    if not depth_range_m > 0:
        raise ValidationError("depth_range_m", "must be > 0")
    d = np.where(gbuffer.hit, gbuffer.depth_m, np.inf) / depth_range_m
    return np.clip(d, 0.0, 1.0)


def _encode_normals(n: np.ndarray, hit: np.ndarray) -> np.ndarray:
    return np.where(hit[..., None], (n + 1.0) / 2.0, 0.0)


def normals_world_pass(gbuffer: GBuffer) -> np.ndarray:
    """``(n + 1) / 2`` per channel; misses are black."""
    return _encode_normals(gbuffer.world_normal, gbuffer.hit)


def normals_camera_pass(gbuffer: GBuffer, camera: Camera | None = None) -> np.ndarray:
    camera = camera or gbuffer.camera
    r = quat_to_matrix(camera.pose.rotation)
    # row vectors: n_cam = R^T n  ->  n @ R
    return _encode_normals(gbuffer.world_normal @ r, gbuffer.hit)


def decode_normals(encoded: np.ndarray) -> np.ndarray:
    return encoded * 2.0 - 1.0


def mask_pass(gbuffer: GBuffer, classes="transparent") -> np.ndarray:
    """Object ids whose semantic class passes the filter, else 0.

    ``classes`` is a class name, an iterable of names, or ``"all"``.
    """
    if classes == "all":
        return gbuffer.object_id.astype(np.uint16)
    names = {classes} if isinstance(classes, str) else set(classes)
    unknown = names - set(CLASS_CODES)
    if unknown:
        raise ValidationError("classes", f"unknown semantic class {sorted(unknown)[0]!r}")
    keep = np.isin(gbuffer.semantic_class, [CLASS_CODES[c] for c in names])
    return np.where(keep, gbuffer.object_id, 0).astype(np.uint16)


def transitions(labels: np.ndarray) -> np.ndarray:
    """Pixels with at least one 4-neighbour of a different label."""
    t = np.zeros(labels.shape, bool)
    dv = labels[1:, :] != labels[:-1, :]
    dh = labels[:, 1:] != labels[:, :-1]
    t[1:, :] |= dv
    t[:-1, :] |= dv
    t[:, 1:] |= dh
    t[:, :-1] |= dh
    return t


def outline_pass(mask: np.ndarray, thickness_px: int) -> np.ndarray:
    """Band of width ``2 * ceil(t / 2)`` straddling every label transition.

    A pixel is set when its chessboard distance to the transition (measured
    between pixel centres, so the adjacent pixels sit at 1/2) is at most
    ``ceil(t / 2)``.
    """
    if isinstance(thickness_px, bool) or not isinstance(thickness_px, (int, np.integer)) or thickness_px < 1:
        raise ValidationError("thickness_px", "must be an integer >= 1")
    edge = transitions(np.asarray(mask))
    grow = math.ceil(thickness_px / 2) - 1
    if grow == 0:
        return edge
    return maximum_filter(edge, size=2 * grow + 1, mode="constant", cval=False)


def boundary_pass(gbuffer: GBuffer, mask: np.ndarray, depth_jump_threshold_m: float = DEFAULT_DEPTH_JUMP_M) -> np.ndarray:
    """Classify mask transitions as contact or occlusion edges by depth jump.

    For each transition pixel the largest ``|depth difference|`` to a
    4-neighbour with a different label decides: above the threshold is an
    occlusion edge, otherwise a contact edge.  Misses have infinite depth.
    """
    if not depth_jump_threshold_m > 0:
        raise ValidationError("depth_jump_threshold_m", "must be > 0")
    mask = np.asarray(mask)
    if mask.shape != gbuffer.shape:
        raise DimensionError(f"mask {mask.shape} vs gbuffer {gbuffer.shape}")
    depth = np.where(gbuffer.hit, gbuffer.depth_m, np.inf)
    jump = np.full(mask.shape, -1.0)

    def pair(a_sl, b_sl):
        differ = mask[a_sl] != mask[b_sl]
        with np.errstate(invalid="ignore"):
            d = np.abs(depth[a_sl] - depth[b_sl])
        # two misses that differ in label cannot happen (both are 0)
        d = np.where(np.isnan(d), np.inf, d)
        d = np.where(differ, d, -1.0)
        np.maximum(jump[a_sl], d, out=jump[a_sl])
        np.maximum(jump[b_sl], d, out=jump[b_sl])

    pair((slice(1, None), slice(None)), (slice(None, -1), slice(None)))
    pair((slice(None), slice(1, None)), (slice(None), slice(None, -1)))
    out = np.full(mask.shape, BOUNDARY_NONE, np.uint8)
    out[(jump >= 0) & (jump <= depth_jump_threshold_m)] = BOUNDARY_CONTACT
    out[jump > depth_jump_threshold_m] = BOUNDARY_OCCLUSION
    return out


def check_pair(img_on: RadianceImage, img_off: RadianceImage) -> None:
    if img_on.texels.shape != img_off.texels.shape:
        raise DimensionError(f"radiance shapes differ: {img_on.texels.shape} vs {img_off.texels.shape}")
    if img_on.pair_key != img_off.pair_key:
        raise PairingError("images were not rendered from the same scene, camera and settings")
    if not img_on.caustics_enabled or img_off.caustics_enabled:
        raise PairingError("need one render with caustics on and one with caustics off")


def caustics_pass(img_on: RadianceImage, img_off: RadianceImage, gbuffer: GBuffer, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Luminance-difference caustic labels, split by whether the pixel sees glass."""
    if not tau > 0:
        raise ValidationError("tau", "must be > 0")
    check_pair(img_on, img_off)
    if img_on.texels.shape[:2] != gbuffer.shape:
        raise DimensionError(f"radiance {img_on.texels.shape[:2]} vs gbuffer {gbuffer.shape}")
    lit = (img_on.luminance() - img_off.luminance()) > tau
    out = np.full(gbuffer.shape, CAUSTIC_NONE, np.uint8)
    out[lit & gbuffer.is_transparent_hit] = CAUSTIC_LOCAL
    out[lit & ~gbuffer.is_transparent_hit] = CAUSTIC_NON_LOCAL
    return out


# frames ------------------------------------------------------------------------------

@dataclass(eq=False)
class AnnotationFrame:
    """One capture: display RGB plus whichever passes were requested."""

    rgb: np.ndarray
    depth_norm: np.ndarray | None = None
    normals_world: np.ndarray | None = None
    normals_camera: np.ndarray | None = None
    mask: np.ndarray | None = None
    outline: np.ndarray | None = None
    boundaries: np.ndarray | None = None
    caustics: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = self.rgb.shape[:2]
        for name in ("depth_norm", "normals_world", "normals_camera", "mask", "outline", "boundaries", "caustics"):
            v = getattr(self, name)
            if v is not None and v.shape[:2] != shape:
                raise DimensionError(f"{name} is {v.shape[:2]}, rgb is {shape}")

    def encoded(self) -> dict[str, bytes]:
        """PNG bytes for every present pass, keyed by file name."""
        out = {"rgb.png": encode_png8(self.rgb)}
        if self.depth_norm is not None:
            out["depth.png"] = encode_png16(np.round(self.depth_norm * 65535.0).astype(np.uint16))
        if self.normals_world is not None:
            out["normals_world.png"] = encode_png8(quantize8(self.normals_world))
        if self.normals_camera is not None:
            out["normals_camera.png"] = encode_png8(quantize8(self.normals_camera))
        if self.mask is not None:
            out["mask.png"] = encode_png16(self.mask)
        if self.outline is not None:
            out["outline.png"] = encode_png8(self.outline.astype(np.uint8) * 255)
        if self.boundaries is not None:
            out["boundary.png"] = encode_png8(ENUM_PNG_LEVELS[self.boundaries])
        if self.caustics is not None:
            out["caustics.png"] = encode_png8(ENUM_PNG_LEVELS[self.caustics])
        return out


def quantize8(v: np.ndarray) -> np.ndarray:
    return np.round(np.clip(v, 0.0, 1.0) * 255.0).astype(np.uint8)


def decode_enum_png(raster: np.ndarray) -> np.ndarray:
    """Inverse of the 0/128/255 enum encoding."""
    out = np.full(raster.shape, 255, np.uint8)
    for code, level in enumerate(ENUM_PNG_LEVELS):
        out[raster == level] = code
    if np.any(out == 255):
        raise ValidationError("raster", "values outside the 0/128/255 enum encoding")
    return out


def annotate(
    rgb: np.ndarray,
    gbuffer: GBuffer,
    passes,
    *,
    depth_range_m: float = 10.0,
    outline_px: int = 1,
    depth_jump_threshold_m: float = DEFAULT_DEPTH_JUMP_M,
    tau: float = DEFAULT_TAU,
    img_on: RadianceImage | None = None,
    img_off: RadianceImage | None = None,
    meta: dict | None = None,
) -> AnnotationFrame:
    passes = set(passes)
    unknown = passes - set(PASS_NAMES)
    if unknown:
        raise ValidationError("passes", f"unknown pass {sorted(unknown)[0]!r}")
    need_mask = passes & {"mask", "outline"}
    mask = mask_pass(gbuffer, "transparent") if need_mask else None
    frame = AnnotationFrame(rgb=rgb, meta=dict(meta or {}))
    if "depth" in passes:
        frame.depth_norm = depth_pass(gbuffer, depth_range_m)
    if "normals_world" in passes:
        frame.normals_world = normals_world_pass(gbuffer)
    if "normals_camera" in passes:
        frame.normals_camera = normals_camera_pass(gbuffer)
    if "mask" in passes:
        frame.mask = mask
    if "outline" in passes:
        frame.outline = outline_pass(mask, outline_px)
    if "boundary" in passes:
        frame.boundaries = boundary_pass(gbuffer, mask_pass(gbuffer, "all"), depth_jump_threshold_m)
    if "caustics" in passes:
        if img_on is None or img_off is None:
            raise ValidationError("passes", "the caustics pass needs an on/off radiance pair")
        frame.caustics = caustics_pass(img_on, img_off, gbuffer, tau)
    frame.__post_init__()
    return frame
