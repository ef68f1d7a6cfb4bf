"""CPU path tracer with a caustic photon map."""

from .bvh import Bvh, build_bvh, intersect_rays
from .frame import (
    CausticPhotonMap,
    GBuffer,
    RadianceImage,
    RenderSettings,
    pair_key,
    render_frame,
    render_gbuffer,
    settings_hash,
    tone_map,
    trace_photons,
)
from .optics import fresnel_reflectance, refract
from .pack import CLASS_CODES, pack_scene

__all__ = [
    "Bvh",
    "CLASS_CODES",
    "CausticPhotonMap",
    "GBuffer",
    "RadianceImage",
    "RenderSettings",
    "build_bvh",
    "fresnel_reflectance",
    "intersect_rays",
    "pack_scene",
    "pair_key",
    "refract",
    "render_frame",
    "render_gbuffer",
    "settings_hash",
    "tone_map",
    "trace_photons",
]
