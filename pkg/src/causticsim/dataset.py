"""Capture plans, the on-disk dataset layout and its manifest.

Layout under the output root::

    manifest.json
    scene_<seed>/scene.json
    scene_<seed>/frame_<frame_id>/rgb.png, rgb.pfm, <pass>.png ..., frame.json

``frame.json`` is the per-frame sidecar.  It is written after the frame's
rasters, so a frame with a sidecar whose input hash matches is complete
and is skipped on a re-run.  ``manifest.json`` is written last of all.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .ablation import AblationDelta, angle_tag, delta_from_dict, delta_to_dict, light_angle_deltas, sweep
from .assets import AssetCatalog
from .encoding import decode_pfm, decode_png, encode_pfm, write_bytes_atomic
from .errors import CausticSimError, ParseError, ValidationError
from .groundtruth import (
    DEFAULT_DEPTH_JUMP_M,
    DEFAULT_TAU,
    PASS_FILES,
    PASS_NAMES,
    annotate,
)
from .render.frame import RenderSettings, render_frame, settings_hash, tone_map, trace_photons
from .render.pack import pack_scene
from .rng import derive_key
from .scene import Scene, canonical_json, dumps_scene, load_scene, loads_scene
from .scenegen import GenerationConfig, generate_scene

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SIDECAR = "frame.json"
SCENE_FILE = "scene.json"
MANIFEST_FORMAT = "causticsim.manifest/1"
ALWAYS_FILES = {"rgb": "rgb.png", "rgb_linear": "rgb.pfm"}


@dataclass(frozen=True)
class AnnotationOptions:
    outline_px: int = 1
    tau: float = DEFAULT_TAU
    depth_jump_threshold_m: float = DEFAULT_DEPTH_JUMP_M

    def __post_init__(self):
        if isinstance(self.outline_px, bool) or not isinstance(self.outline_px, int) or self.outline_px < 1:
            raise ValidationError("outline_px", "must be an integer >= 1")
        for name in ("tau", "depth_jump_threshold_m"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise ValidationError(name, "must be > 0")
            object.__setattr__(self, name, float(v))

    def to_dict(self) -> dict:
        return {"outline_px": self.outline_px, "tau": self.tau, "depth_jump_threshold_m": self.depth_jump_threshold_m}


@dataclass(frozen=True)
class CapturePlan:
    scene_seeds: tuple[int, ...]
    cameras_per_scene: int
    light_angles_deg: tuple[float, ...]
    passes: frozenset[str]
    settings: RenderSettings
    output_root: Path
    generation: GenerationConfig | None = None
    # load scene_<seed>.json from here instead of generating
    scenes_dir: Path | None = None
    resolution: tuple[int, int] | None = None
    annotation: AnnotationOptions = field(default_factory=AnnotationOptions)
    light_pivot: tuple[float, float, float] = (0.0, 0.0, 0.0)
    light_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        seeds = tuple(self.scene_seeds)
        for s in seeds:
            if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2**64:
                raise ValidationError("scene_seeds", f"{s!r} is not a 64-bit unsigned seed")
        if len(set(seeds)) != len(seeds):
            raise ValidationError("scene_seeds", "seeds must be unique")
        object.__setattr__(self, "scene_seeds", seeds)
        c = self.cameras_per_scene
        if isinstance(c, bool) or not isinstance(c, int) or c < 0:
            raise ValidationError("cameras_per_scene", "must be an unsigned integer")
        angles = tuple(float(a) for a in self.light_angles_deg)
        if not all(np.isfinite(angles)):
            raise ValidationError("light_angles_deg", "angles must be finite")
        tags = [angle_tag(a) for a in angles]
        if len(set(tags)) != len(tags):
            raise ValidationError("light_angles_deg", "angles must be distinct at 0.1 degree resolution")
        object.__setattr__(self, "light_angles_deg", angles)
        passes = frozenset(self.passes)
        unknown = passes - set(PASS_NAMES)
        if unknown:
            raise ValidationError("passes", f"unknown pass {sorted(unknown)[0]!r}; known: {', '.join(PASS_NAMES)}")
        object.__setattr__(self, "passes", passes)
        if not isinstance(self.settings, RenderSettings):
            raise ValidationError("settings", "expected render settings")
        if "caustics" in passes and not self.settings.caustics_enabled:
            raise ValidationError("passes", "the caustics pass needs caustics_enabled")
        object.__setattr__(self, "output_root", Path(self.output_root))
        if self.scenes_dir is not None:
            object.__setattr__(self, "scenes_dir", Path(self.scenes_dir))
        elif self.generation is None:
            object.__setattr__(self, "generation", GenerationConfig())
        if self.generation is not None and self.scenes_dir is None and c > len(self.generation.camera_rig):
            raise ValidationError("cameras_per_scene", f"rig has only {len(self.generation.camera_rig)} cameras")
        if self.resolution is not None:
            w, h = self.resolution
            if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in (w, h)):
                raise ValidationError("resolution", "expected [width, height] >= 1")
            object.__setattr__(self, "resolution", (w, h))

    def to_dict(self) -> dict:
        """Plan inputs that determine dataset content (no output paths)."""
        return {
            "scene_seeds": list(self.scene_seeds),
            "cameras_per_scene": self.cameras_per_scene,
            "light_angles_deg": list(self.light_angles_deg),
            "passes": sorted(self.passes),
            "settings": self.settings.to_dict(),
            "generation": None if self.generation is None else self.generation.to_dict(),
            "resolution": None if self.resolution is None else list(self.resolution),
            "annotation": self.annotation.to_dict(),
            "light_pivot": list(self.light_pivot),
            "light_axis": list(self.light_axis),
        }


PLAN_KEYS = {
    "scene_seeds", "cameras_per_scene", "light_angles_deg", "passes", "settings", "output_root", "generation",
    "scenes_dir", "resolution", "annotation", "light_pivot", "light_axis",
}


def plan_from_dict(d: dict, base_dir: Path | None = None) -> CapturePlan:
    """Build a plan from its file form; relative paths resolve against ``base_dir``."""
    if not isinstance(d, dict):
        raise ValidationError("plan", "expected a table")
    for k in d:
        if k not in PLAN_KEYS:
            raise ValidationError(k, "unknown plan field")
    for k in ("scene_seeds", "cameras_per_scene", "light_angles_deg", "passes", "output_root"):
        if k not in d:
            raise ValidationError(k, "missing required field")
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    def path(v):
        p = Path(v)
        return p if p.is_absolute() else base / p

    try:
        return CapturePlan(
            scene_seeds=tuple(d["scene_seeds"]),
            cameras_per_scene=d["cameras_per_scene"],
            light_angles_deg=tuple(d["light_angles_deg"]),
            passes=frozenset(d["passes"]),
            settings=RenderSettings.from_dict(d.get("settings") or {}),
            output_root=path(d["output_root"]),
            generation=GenerationConfig.from_dict(d["generation"]) if d.get("generation") else None,
            scenes_dir=path(d["scenes_dir"]) if d.get("scenes_dir") else None,
            resolution=tuple(d["resolution"]) if d.get("resolution") else None,
            annotation=AnnotationOptions(**(d.get("annotation") or {})),
            light_pivot=tuple(d.get("light_pivot", (0.0, 0.0, 0.0))),
            light_axis=tuple(d.get("light_axis", (0.0, 0.0, 1.0))),
        )
    except TypeError as exc:
        raise ValidationError("plan", str(exc)) from None


def load_plan(path) -> CapturePlan:
    path = Path(path)
    try:
        tree = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return plan_from_dict(tree, path.parent)


# planning ----------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameSpec:
    frame_id: str
    scene_seed: int
    camera_index: int
    delta_tag: str
    light_angle_deg: float


def make_frame_id(seed: int, camera: int, tag: str) -> str:
    return f"{seed:016x}_{camera:02}_{tag}"


def count_frames(plan: CapturePlan) -> int:
    return len(plan.scene_seeds) * plan.cameras_per_scene * len(plan.light_angles_deg)


def plan_frames(plan: CapturePlan) -> list[FrameSpec]:
    """Scene-major, then camera, then light angle."""
    if not plan.scene_seeds or plan.cameras_per_scene == 0 or not plan.light_angles_deg:
        raise ValidationError("plan", "scene_seeds, cameras_per_scene and light_angles_deg must all be non-empty")
    return [
        FrameSpec(make_frame_id(seed, cam, angle_tag(a)), seed, cam, angle_tag(a), a)
        for seed in plan.scene_seeds
        for cam in range(plan.cameras_per_scene)
        for a in plan.light_angles_deg
    ]


# execution ---------------------------------------------------------------------------

@dataclass
class Manifest:
    frames: list[dict]
    errors: list[dict]
    plan: dict
    generator_version: str = __version__
    # frames rendered by this run (not persisted)
    rendered: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "generator_version": self.generator_version,
            "plan": self.plan,
            "frames": self.frames,
            "errors": self.errors,
        }

    @property
    def ok(self) -> bool:
        return not self.errors


def scene_dir_name(seed: int) -> str:
    return f"scene_{seed}"


def frame_dir_name(frame_id: str) -> str:
    return f"frame_{frame_id}"


def _hash(tree) -> str:
    return hashlib.sha256(canonical_json(tree).encode()).hexdigest()[:16]


def frame_settings(plan_settings: RenderSettings, scene_seed: int) -> RenderSettings:
    """Per-scene render seed: every camera and delta of a scene shares noise."""
    return replace(plan_settings, frame_seed=derive_key(plan_settings.frame_seed, "frame", scene_seed))


def _load_or_generate(plan: CapturePlan, seed: int, catalog: AssetCatalog) -> Scene:
    if plan.scenes_dir is not None:
        return load_scene(plan.scenes_dir / f"scene_{seed}.json", catalog)
    return generate_scene(plan.generation, seed, catalog)


def _resize(scene: Scene, resolution) -> Scene:
    if resolution is None:
        return scene
    w, h = resolution
    return scene.replace(cameras=tuple(replace(c, width=w, height=h) for c in scene.cameras))


def _clean_partials(d: Path) -> None:
    if d.is_dir():
        for p in d.iterdir():
            if p.name.endswith((".part", ".tmp")):
                p.unlink()


def _write_if_changed(path: Path, data: bytes) -> None:
    if path.exists() and path.read_bytes() == data:
        return
    write_bytes_atomic(path, data)


def _frame_files(passes) -> dict[str, str]:
    files = dict(ALWAYS_FILES)
    for p in sorted(passes):
        files[p] = PASS_FILES[p]
    return files


def _frame_record(spec: FrameSpec, scene: Scene, delta: AblationDelta, settings: RenderSettings,
                  plan: CapturePlan, scene_rel: str, frame_rel: str) -> dict:
    light = scene.lights[0] if scene.lights else None
    files = {k: f"{frame_rel}/{v}" for k, v in _frame_files(plan.passes).items()}
    record = {
        "frame_id": spec.frame_id,
        "scene_seed": spec.scene_seed,
        "camera_index": spec.camera_index,
        "delta_tag": spec.delta_tag,
        "settings_hash": settings_hash(settings),
        "depth_range_m": scene.depth_range_m,
        "files": files,
        "generator_version": __version__,
    }
    inputs = {
        "scene": scene_rel,
        "delta": delta_to_dict(delta),
        "settings": settings.to_dict(),
        "passes": sorted(plan.passes),
        "annotation": plan.annotation.to_dict(),
        "light": None if light is None else {"center": list(light.center), "direction": list(light.direction)},
    }
    record["inputs"] = inputs
    record["input_hash"] = _hash({"inputs": inputs, "scene": dumps_scene(scene), "version": __version__})
    return record


def _sidecar_matches(root: Path, record: dict) -> bool:
    path = root / Path(record["files"]["rgb"]).parent / SIDECAR
    try:
        old = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return False
    if old.get("input_hash") != record["input_hash"]:
        return False
    return all((root / rel).is_file() for rel in record["files"].values())


def render_frame_files(scene: Scene, camera_index: int, settings: RenderSettings, passes, annotation: AnnotationOptions,
                       catalog: AssetCatalog, *, packed=None, photon_map=None, workers=None) -> dict[str, bytes]:
    """All raster files of one frame as bytes, keyed by file name."""
    img_on, gbuf = render_frame(scene, camera_index, settings, catalog, packed=packed, photon_map=photon_map,
                                workers=workers)
    img_off = None
    if "caustics" in passes:
        off = replace(settings, caustics_enabled=False)
        img_off, _ = render_frame(scene, camera_index, off, catalog, packed=packed, workers=workers)
    rgb = tone_map(img_on, settings)
    frame = annotate(
        rgb, gbuf, passes, depth_range_m=scene.depth_range_m, outline_px=annotation.outline_px,
        depth_jump_threshold_m=annotation.depth_jump_threshold_m, tau=annotation.tau,
        img_on=img_on, img_off=img_off,
    )
    files = frame.encoded()
    files["rgb.pfm"] = encode_pfm(img_on.texels.astype(np.float32))
    return files


def execute_plan(
    plan: CapturePlan,
    catalog: AssetCatalog | None = None,
    workers: int = 1,
    progress: Callable[[FrameSpec], None] | None = None,
) -> Manifest:
    """Render every planned frame (skipping complete ones) and write the manifest."""
    catalog = catalog or AssetCatalog.default()
    specs = plan_frames(plan)
    root = plan.output_root
    root.mkdir(parents=True, exist_ok=True)
    manifest_path = root / MANIFEST
    if manifest_path.exists():
        manifest_path.unlink()
    deltas = light_angle_deltas(plan.light_angles_deg, plan.light_pivot, plan.light_axis)
    by_tag = {d.tag: d for d in deltas}
    records: dict[str, dict] = {}
    errors: list[dict] = []
    jobs = []  # (seed, sweep item, [specs])
    for seed in plan.scene_seeds:
        sdir = root / scene_dir_name(seed)
        try:
            scene = _resize(_load_or_generate(plan, seed, catalog), plan.resolution)
            if plan.cameras_per_scene > len(scene.cameras):
                raise ValidationError("cameras_per_scene", f"scene {seed} has {len(scene.cameras)} cameras")
        except (CausticSimError, OSError) as exc:
            if isinstance(exc, OSError) and not isinstance(exc, FileNotFoundError):
                raise
            for spec in specs:
                if spec.scene_seed == seed:
                    errors.append({"frame_id": spec.frame_id, "error": f"{type(exc).__name__}: {exc}"})
            continue
        sdir.mkdir(exist_ok=True)
        _clean_partials(sdir)
        _write_if_changed(sdir / SCENE_FILE, dumps_scene(scene).encode())
        settings = frame_settings(plan.settings, seed)
        for item in sweep(scene, deltas, settings):
            mine = [s for s in specs if s.scene_seed == seed and s.delta_tag == item.tag]
            jobs.append((seed, item, mine))

    rendered: list[str] = []

    def run(job):
        seed, item, mine = job
        scene_rel = f"{scene_dir_name(seed)}/{SCENE_FILE}"
        todo = []
        for spec in mine:
            rel = f"{scene_dir_name(seed)}/{frame_dir_name(spec.frame_id)}"
            rec = _frame_record(spec, item.scene, by_tag[item.tag], item.settings, plan, scene_rel, rel)
            records[spec.frame_id] = rec
            # leftovers from an interrupted write, even next to complete outputs
            _clean_partials(root / rel)
            if not _sidecar_matches(root, rec):
                todo.append((spec, rec))
        if not todo:
            return
        packed = None
        photon_map = None
        try:
            packed = pack_scene(item.scene, catalog)
            if item.settings.caustics_enabled:
                photon_map = trace_photons(item.scene, item.settings, packed=packed)
        except CausticSimError as exc:
            for spec, _ in todo:
                errors.append({"frame_id": spec.frame_id, "error": f"{type(exc).__name__}: {exc}"})
                records.pop(spec.frame_id, None)
            return
        for spec, rec in todo:
            fdir = root / rec["files"]["rgb"].rsplit("/", 1)[0]
            fdir.mkdir(parents=True, exist_ok=True)
            _clean_partials(fdir)
            sidecar = fdir / SIDECAR
            if sidecar.exists():
                sidecar.unlink()
            try:
                files = render_frame_files(
                    item.scene, spec.camera_index, item.settings, plan.passes, plan.annotation, catalog,
                    packed=packed, photon_map=photon_map, workers=1 if workers > 1 else None,
                )
            except CausticSimError as exc:
                errors.append({"frame_id": spec.frame_id, "error": f"{type(exc).__name__}: {exc}"})
                records.pop(spec.frame_id, None)
                continue
            for name, data in files.items():
                write_bytes_atomic(fdir / name, data)
            write_bytes_atomic(sidecar, canonical_json(rec).encode())
            rendered.append(spec.frame_id)
            if progress is not None:
                progress(spec)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)

    order = {s.frame_id: i for i, s in enumerate(specs)}
    frames = [records[f] for f in sorted(records, key=order.__getitem__)]
    errors.sort(key=lambda e: order.get(e["frame_id"], -1))
    manifest = Manifest(frames, errors, plan.to_dict(), rendered=sorted(rendered, key=order.__getitem__))
    write_bytes_atomic(manifest_path, canonical_json(manifest.to_dict()).encode())
    return manifest


# reading back ------------------------------------------------------------------------

def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    try:
        tree = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(tree, dict) or tree.get("format") != MANIFEST_FORMAT:
        raise ParseError(f"{path}: not a dataset manifest")
    return tree


def _decode(path: Path):
    data = path.read_bytes()
    return decode_pfm(data) if path.suffix == ".pfm" else decode_png(data)


@dataclass
class VerifyReport:
    frames: int
    problems: list[str]

    @property
    def ok(self) -> bool:
        return not self.problems


def verify(root) -> VerifyReport:
    """Check that every manifest entry's files exist and decode."""
    root = Path(root)
    problems: list[str] = []
    try:
        tree = read_manifest(root)
    except FileNotFoundError:
        return VerifyReport(0, [f"{root / MANIFEST}: missing"])
    except ParseError as exc:
        return VerifyReport(0, [str(exc)])
    frames = tree.get("frames", [])
    ids = [f.get("frame_id") for f in frames]
    if len(set(ids)) != len(ids):
        problems.append("duplicate frame ids in manifest")
    for f in frames:
        shape = None
        for name, rel in sorted(f.get("files", {}).items()):
            p = root / rel
            if not p.is_file():
                problems.append(f"{f['frame_id']}: {rel} missing")
                continue
            try:
                arr = _decode(p)
            except (ParseError, ValueError) as exc:
                problems.append(f"{f['frame_id']}: {rel} does not decode ({exc})")
                continue
            if shape is None:
                shape = arr.shape[:2]
            elif arr.shape[:2] != shape:
                problems.append(f"{f['frame_id']}: {rel} has shape {arr.shape[:2]}, expected {shape}")
        sidecar = root / Path(f["files"]["rgb"]).parent / SIDECAR
        if not sidecar.is_file():
            problems.append(f"{f['frame_id']}: sidecar missing")
    for e in tree.get("errors", []):
        problems.append(f"{e.get('frame_id')}: render error recorded: {e.get('error')}")
    return VerifyReport(len(frames), problems)


def rerender_frame(root, frame_id: str, catalog: AssetCatalog | None = None, workers=None) -> dict[str, bytes]:
    """Re-render one frame from its sidecar alone; returns file bytes keyed by file name."""
    catalog = catalog or AssetCatalog.default()
    root = Path(root)
    matches = list(root.glob(f"scene_*/{frame_dir_name(frame_id)}/{SIDECAR}"))
    if not matches:
        raise FileNotFoundError(f"no sidecar for frame {frame_id} under {root}")
    rec = json.loads(matches[0].read_text())
    inp = rec["inputs"]
    base = loads_scene((root / inp["scene"]).read_text())
    delta = delta_from_dict(inp["delta"])
    settings = RenderSettings.from_dict(inp["settings"])
    (item,) = sweep(base, [delta], settings)
    return render_frame_files(
        item.scene, rec["camera_index"], settings, frozenset(inp["passes"]), AnnotationOptions(**inp["annotation"]),
        catalog, workers=workers,
    )
