"""Tool configuration file (JSON): assets, default render settings, generation, passes.

Resolution order for the asset root: ``--assets`` flag, then the
``CAUSTICSIM_ASSET_ROOT`` environment variable, then ``asset_root`` in the
config file.  Relative paths in the file resolve against its directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .assets import ASSET_ROOT_ENV, AssetCatalog
from .dataset import AnnotationOptions
from .errors import MissingAssetError, ParseError, ValidationError
from .groundtruth import PASS_NAMES
from .render.frame import RenderSettings
from .scene import canonical_json
from .scenegen import GenerationConfig

CONFIG_KEYS = {"asset_root", "render", "generation", "passes", "annotation", "workers"}


@dataclass(frozen=True)
class ToolConfig:
    asset_root: Path | None = None
    render: RenderSettings = field(default_factory=RenderSettings)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    passes: frozenset[str] = frozenset(PASS_NAMES)
    annotation: AnnotationOptions = field(default_factory=AnnotationOptions)
    workers: int = 1

    def __post_init__(self):
        if self.asset_root is not None:
            root = Path(self.asset_root)
            if not root.is_dir():
                raise ValidationError("asset_root", f"{root} is not a directory")
            object.__setattr__(self, "asset_root", root)
        passes = frozenset(self.passes)
        if passes - set(PASS_NAMES):
            raise ValidationError("passes", f"unknown pass {sorted(passes - set(PASS_NAMES))[0]!r}")
        object.__setattr__(self, "passes", passes)
        if isinstance(self.workers, bool) or not isinstance(self.workers, int) or not 1 <= self.workers <= 1024:
            raise ValidationError("workers", "must be an integer in [1, 1024]")

    def resolved_asset_root(self, override: str | os.PathLike | None = None) -> Path:
        for candidate in (override, os.environ.get(ASSET_ROOT_ENV), self.asset_root):
            if candidate:
                return Path(candidate)
        raise MissingAssetError(f"no asset root: pass --assets, set {ASSET_ROOT_ENV}, or set asset_root in the config")

    def catalog(self, override=None) -> AssetCatalog:
        return AssetCatalog.open(self.resolved_asset_root(override))

    def to_dict(self) -> dict:
        return {
            "asset_root": None if self.asset_root is None else str(self.asset_root),
            "render": self.render.to_dict(),
            "generation": self.generation.to_dict(),
            "passes": sorted(self.passes),
            "annotation": self.annotation.to_dict(),
            "workers": self.workers,
        }


def config_from_dict(d: dict, base_dir: Path | None = None) -> ToolConfig:
    if not isinstance(d, dict):
        raise ValidationError("config", "expected a table")
    for k in d:
        if k not in CONFIG_KEYS:
            raise ValidationError(k, "unknown config field")
    kw: dict = {}
    if d.get("asset_root"):
        p = Path(d["asset_root"])
        kw["asset_root"] = p if p.is_absolute() or base_dir is None else base_dir / p
    if "render" in d:
        kw["render"] = RenderSettings.from_dict(d["render"])
    if "generation" in d:
        kw["generation"] = GenerationConfig.from_dict(d["generation"])
    if "passes" in d:
        kw["passes"] = frozenset(d["passes"])
    if "annotation" in d:
        try:
            kw["annotation"] = AnnotationOptions(**d["annotation"])
        except TypeError as exc:
            raise ValidationError("annotation", str(exc)) from None
    if "workers" in d:
        kw["workers"] = d["workers"]
    return ToolConfig(**kw)


def load_config(path) -> ToolConfig:
    path = Path(path)
    try:
        tree = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(tree, path.parent)


def dumps_config(cfg: ToolConfig) -> str:
    return canonical_json(cfg.to_dict())
