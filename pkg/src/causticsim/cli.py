"""``causticsim`` command line: generate, render, gt, ablate, capture, verify, eval, inspect.

Exit codes: 0 success, 1 validation error (including bad usage), 2 runtime
or render error, 3 I/O error.  Diagnostics go to stderr; results go to
files (``inspect`` and ``capture --dry-run`` print their summaries).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import apply_delta, load_deltas
from .assets import build_default_catalog
from .config import ToolConfig, load_config
from .dataset import (
    ALWAYS_FILES,
    SIDECAR,
    AnnotationOptions,
    count_frames,
    execute_plan,
    load_plan,
    render_frame_files,
    verify,
)
from .encoding import decode_pfm, decode_png, encode_pfm, encode_png16, encode_png8, write_bytes_atomic
from .errors import (
    CausticSimError,
    DimensionError,
    DomainError,
    MissingAssetError,
    PairingError,
    ParseError,
    ValidationError,
)
from .groundtruth import CAUSTIC_LOCAL, CAUSTIC_NON_LOCAL, PASS_FILES, PASS_NAMES, decode_enum_png
from .metrics import evaluate_dataset, write_report
from .render.frame import render_frame, tone_map
from .scene import load_scene, save_scene
from .scenegen import generate_scene

log = logging.getLogger("causticsim")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("must be a 64-bit unsigned integer")
    return v


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _tool_config(args) -> ToolConfig:
    return load_config(args.config) if args.config else ToolConfig()


def _settings(cfg: ToolConfig, args):
    """Config defaults with any render flags applied on top."""
    s = cfg.render
    kw = {}
    for flag, name in (("spp", "samples_per_pixel"), ("seed", "frame_seed"), ("bounces", "max_bounces"),
                       ("photons", "photon_count"), ("caustics", "caustics_enabled")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[name] = v
    return replace(s, **kw) if kw else s


# subcommands -------------------------------------------------------------------------

def cmd_assets(args, cfg) -> int:
    build_default_catalog(args.out, n_hdri=args.hdri, n_backdrops=args.backdrops)
    log.info("wrote asset catalog to %s", args.out)
    return EXIT_OK


def cmd_generate(args, cfg) -> int:
    catalog = cfg.catalog(args.assets)
    gen = cfg.generation
    if args.width or args.height:
        gen = replace(gen, camera_rig=tuple(
            replace(c, width=args.width or c.width, height=args.height or c.height) for c in gen.camera_rig))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        seed = args.seed + i
        scene = generate_scene(gen, seed, catalog)
        save_scene(scene, out / f"scene_{seed}.json")
        log.info("scene %d: %d objects, %d props", seed, len(scene.objects), len(scene.props))
    return EXIT_OK


def cmd_render(args, cfg) -> int:
    catalog = cfg.catalog(args.assets)
    scene = load_scene(args.scene, catalog)
    settings = _settings(cfg, args)
    img, gbuf = render_frame(scene, args.camera, settings, catalog, workers=args.workers or cfg.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bytes_atomic(out / "rgb.png", encode_png8(tone_map(img, settings)))
    write_bytes_atomic(out / "rgb.pfm", encode_pfm(img.texels.astype(np.float32)))
    write_bytes_atomic(out / "depth.pfm", encode_pfm(np.where(gbuf.hit, gbuf.depth_m, np.inf).astype(np.float32)))
    write_bytes_atomic(out / "normal.pfm", encode_pfm(gbuf.world_normal.astype(np.float32)))
    write_bytes_atomic(out / "id.png", encode_png16(gbuf.object_id))
    return EXIT_OK


def cmd_gt(args, cfg) -> int:
    catalog = cfg.catalog(args.assets)
    scene = load_scene(args.scene, catalog)
    settings = _settings(cfg, args)
    passes = frozenset(args.passes.split(",")) if args.passes else cfg.passes
    unknown = passes - set(PASS_NAMES)
    if unknown:
        raise ValidationError("passes", f"unknown pass {sorted(unknown)[0]!r}")
    ann = cfg.annotation
    ann = AnnotationOptions(
        outline_px=args.outline if args.outline is not None else ann.outline_px,
        tau=args.tau if args.tau is not None else ann.tau,
        depth_jump_threshold_m=args.depth_jump if args.depth_jump is not None else ann.depth_jump_threshold_m,
    )
    files = render_frame_files(scene, args.camera, settings, passes, ann, catalog, workers=args.workers or cfg.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        write_bytes_atomic(out / name, data)
    return EXIT_OK


def cmd_ablate(args, cfg) -> int:
    scene = load_scene(args.scene)
    deltas = load_deltas(args.delta)
    if len(deltas) != 1:
        raise ValidationError("delta", f"ablate applies exactly one delta, file holds {len(deltas)}")
    save_scene(apply_delta(scene, deltas[0]), args.out)
    return EXIT_OK


def cmd_capture(args, cfg) -> int:
    plan = load_plan(args.plan)
    if args.dry_run:
        n = count_frames(plan)
        print(f"{len(plan.scene_seeds)} scenes x {plan.cameras_per_scene} cameras x "
              f"{len(plan.light_angles_deg)} light angles = {n} frames")
        return EXIT_OK
    catalog = cfg.catalog(args.assets)
    manifest = execute_plan(plan, catalog, workers=args.workers or cfg.workers)
    log.info("%d frames in manifest, %d rendered this run, %d errors",
             len(manifest.frames), len(manifest.rendered), len(manifest.errors))
    for e in manifest.errors:
        log.error("%s: %s", e["frame_id"], e["error"])
    return EXIT_OK if manifest.ok else EXIT_RUNTIME


def cmd_verify(args, cfg) -> int:
    report = verify(args.root)
    for p in report.problems:
        log.error("%s", p)
    log.info("%d frames checked, %d problems", report.frames, len(report.problems))
    return EXIT_OK if report.ok else EXIT_RUNTIME


def cmd_eval(args, cfg) -> int:
    report = evaluate_dataset(args.pred, args.gt, args.mode, args.target)
    for m in report.missing:
        log.warning("missing prediction for frame %s", m)
    write_report(report, args.report)
    return EXIT_OK


def inspect_frame(frame_dir) -> tuple[str, list[str]]:
    """Summary text and the list of problems for one frame directory."""
    frame_dir = Path(frame_dir)
    problems: list[str] = []
    lines = [f"frame: {frame_dir}"]
    try:
        meta = json.loads((frame_dir / SIDECAR).read_text())
    except FileNotFoundError:
        return "\n".join(lines) + "\n", [f"{SIDECAR} missing"]
    except json.JSONDecodeError as exc:
        return "\n".join(lines) + "\n", [f"{SIDECAR} corrupt: {exc}"]
    passes = meta.get("inputs", {}).get("passes", list(PASS_NAMES))
    expected = list(ALWAYS_FILES.values()) + [PASS_FILES[p] for p in PASS_FILES if p in passes]
    lines.append(f"frame_id: {meta.get('frame_id')}  scene_seed: {meta.get('scene_seed')}  "
                 f"camera: {meta.get('camera_index')}  tag: {meta.get('delta_tag')}")
    lines.append("inventory:")
    rasters = {}
    for name in expected:
        p = frame_dir / name
        if not p.is_file():
            lines.append(f"  {name:<20} MISSING")
            problems.append(f"{name} missing")
            continue
        try:
            if name.endswith(".png"):
                arr = decode_png(p.read_bytes())
                rasters[name] = arr
            else:
                arr = decode_pfm(p.read_bytes())
        except (ParseError, ValueError) as exc:
            lines.append(f"  {name:<20} CORRUPT")
            problems.append(f"{name} corrupt: {exc}")
            continue
        lines.append(f"  {name:<20} {arr.shape[1]}x{arr.shape[0]} {arr.dtype}")
    if "depth.png" in rasters:
        d = rasters["depth.png"].astype(np.float64) / 65535.0 * float(meta.get("depth_range_m", 10.0))
        hit = rasters["depth.png"] < 65535
        if hit.any():
            lines.append(f"depth range: {d[hit].min():.4f} .. {d[hit].max():.4f} m ({int(hit.sum())} hit pixels)")
        else:
            lines.append("depth range: no hits")
    if "mask.png" in rasters:
        ids, counts = np.unique(rasters["mask.png"], return_counts=True)
        lines.append("mask id histogram: " + ", ".join(f"{i}:{c}" for i, c in zip(ids.tolist(), counts.tolist())))
    if "caustics.png" in rasters:
        try:
            c = decode_enum_png(rasters["caustics.png"])
            lines.append(f"caustic pixels: local {int((c == CAUSTIC_LOCAL).sum())}, "
                         f"non_local {int((c == CAUSTIC_NON_LOCAL).sum())}")
        except ValidationError as exc:
            problems.append(f"caustics.png corrupt: {exc}")
    for p in problems:
        lines.append(f"problem: {p}")
    return "\n".join(lines) + "\n", problems


def cmd_inspect(args, cfg) -> int:
    text, problems = inspect_frame(args.frame)
    sys.stdout.write(text)
    for p in problems:
        log.error("%s", p)
    return EXIT_RUNTIME if problems else EXIT_OK


# wiring ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def common_flags(default):
        # subcommands must not reset options given before the command name
        c = _Parser(add_help=False)
        c.add_argument("--config", default=default, help="tool config file (JSON)")
        c.add_argument("--assets", default=default, help="asset catalog root (overrides env and config)")
        c.add_argument("-v", "--verbose", action="store_true", default=default)
        return c

    common = common_flags(argparse.SUPPRESS)

    render_flags = _Parser(add_help=False)
    render_flags.add_argument("--scene", required=True)
    render_flags.add_argument("--camera", type=int, default=0)
    render_flags.add_argument("--spp", type=int)
    render_flags.add_argument("--seed", type=_u64)
    render_flags.add_argument("--caustics", type=_on_off, metavar="on|off")
    render_flags.add_argument("--bounces", type=int)
    render_flags.add_argument("--photons", type=int)
    render_flags.add_argument("--workers", type=int)
    render_flags.add_argument("--out", required=True)

    p = _Parser(prog="causticsim", description=__doc__.split("\n")[0], parents=[common_flags(None)])
    p.add_argument("--version", action="version", version=f"causticsim {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("assets", parents=[common], help="write the procedural asset catalog")
    s.add_argument("--out", required=True)
    s.add_argument("--hdri", type=int, default=33)
    s.add_argument("--backdrops", type=int, default=33)
    s.set_defaults(fn=cmd_assets)

    s = sub.add_parser("generate", parents=[common], help="generate scene files")
    s.add_argument("--seed", type=_u64, required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_generate)

    s = sub.add_parser("render", parents=[common, render_flags], help="render radiance and raw G-buffer")
    s.set_defaults(fn=cmd_render)

    s = sub.add_parser("gt", parents=[common, render_flags], help="render one frame with ground-truth passes")
    s.add_argument("--passes", help=f"comma-separated subset of {','.join(PASS_NAMES)}")
    s.add_argument("--outline", type=int)
    s.add_argument("--tau", type=float)
    s.add_argument("--depth-jump", type=float)
    s.set_defaults(fn=cmd_gt)

    s = sub.add_parser("ablate", parents=[common], help="apply a delta to a scene file")
    s.add_argument("--scene", required=True)
    s.add_argument("--delta", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("capture", parents=[common], help="execute a capture plan")
    s.add_argument("--plan", required=True)
    s.add_argument("--dry-run", action="store_true")
    s.add_argument("--workers", type=int)
    s.set_defaults(fn=cmd_capture)

    s = sub.add_parser("verify", parents=[common], help="check a dataset tree against its manifest")
    s.add_argument("--root", required=True)
    s.set_defaults(fn=cmd_verify)

    s = sub.add_parser("eval", parents=[common], help="score predicted masks against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--mode", default="mean", choices=["mean", "pooled", "mean_over_frames", "pooled_pixels"])
    s.add_argument("--target", default="mask", choices=["mask", "caustics", "outline"])
    s.add_argument("--report", required=True)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("inspect", parents=[common], help="summarize one frame directory")
    s.add_argument("frame")
    s.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"causticsim: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s", force=True)
    try:
        cfg = _tool_config(args)
        return args.fn(args, cfg)
    except (ValidationError, ParseError, DomainError, DimensionError, PairingError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except MissingAssetError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except CausticSimError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
