"""On-disk asset catalog: OBJ meshes, PFM HDRIs and textures, backdrop bank.

Layout::

    root/catalog.json
    root/meshes/<key>.obj
    root/hdri/<key>.pfm
    root/textures/<key>.pfm

``catalog.json`` maps keys to relative paths and defines the backdrop
bank (a mesh key plus a diffuse material per entry).
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from .encoding import read_pfm, write_pfm
from .errors import MissingAssetError, ParseError, ValidationError
from .geometry import Mesh
from .rng import Stream
from .scene import DiffuseMaterial, canonical_json, material_from_dict, material_to_dict

ASSET_ROOT_ENV = "CAUSTICSIM_ASSET_ROOT"
CATALOG_FILE = "catalog.json"


@dataclass(frozen=True)
class BackdropEntry:
    mesh: str
    material: DiffuseMaterial


@dataclass(eq=False)
class AssetCatalog:
    root: Path
    meshes: dict[str, str]
    hdri: dict[str, str]
    textures: dict[str, str] = field(default_factory=dict)
    backdrops: dict[str, BackdropEntry] = field(default_factory=dict)

    def __post_init__(self):
        self._cache: dict[tuple[str, str], object] = {}
        self._lock = threading.Lock()

    @classmethod
    def open(cls, root: str | os.PathLike) -> "AssetCatalog":
        root = Path(root)
        path = root / CATALOG_FILE
        try:
            tree = json.loads(path.read_text())
        except FileNotFoundError:
            raise MissingAssetError(f"no asset catalog at {path}") from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        backdrops = {}
        for key, entry in tree.get("backdrops", {}).items():
            try:
                backdrops[key] = BackdropEntry(entry["mesh"], material_from_dict(entry["material"]))
            except (KeyError, TypeError) as exc:
                raise ParseError(f"{path}: backdrop {key!r} is malformed") from exc
            if not isinstance(backdrops[key].material, DiffuseMaterial):
                raise ValidationError(f"backdrops.{key}.material", "backdrops must be diffuse")
        cat = cls(
            root=root,
            meshes=dict(tree.get("meshes", {})),
            hdri=dict(tree.get("hdri", {})),
            textures=dict(tree.get("textures", {})),
            backdrops=backdrops,
        )
        for key, entry in cat.backdrops.items():
            if entry.mesh not in cat.meshes:
                raise MissingAssetError(f"backdrop {key!r} uses unknown mesh {entry.mesh!r}")
        return cat

    @classmethod
    def default(cls, required: bool = True) -> "AssetCatalog | None":
        """Catalog named by ``$CAUSTICSIM_ASSET_ROOT``."""
        root = os.environ.get(ASSET_ROOT_ENV)
        if not root:
            if required:
                raise MissingAssetError(f"set {ASSET_ROOT_ENV} or pass an asset root")
            return None
        return cls.open(root)

    def save(self) -> None:
        tree = {
            "meshes": self.meshes,
            "hdri": self.hdri,
            "textures": self.textures,
            "backdrops": {
                k: {"mesh": v.mesh, "material": material_to_dict(v.material)} for k, v in self.backdrops.items()
            },
        }
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / CATALOG_FILE).write_text(canonical_json(tree))

    def _cached(self, kind: str, key: str, loader):
        with self._lock:
            hit = self._cache.get((kind, key))
        if hit is None:
            hit = loader()
            with self._lock:
                self._cache[(kind, key)] = hit
        return hit

    def mesh(self, key: str) -> Mesh:
        if key not in self.meshes:
            raise MissingAssetError(f"unknown mesh {key!r}")
        return self._cached("mesh", key, lambda: geometry.read_obj(self.root / self.meshes[key]))

    def _image(self, table: dict[str, str], kind: str, key: str) -> np.ndarray:
        if key not in table:
            raise MissingAssetError(f"unknown {kind} {key!r}")

        def load():
            img = read_pfm(self.root / table[key]).astype(np.float64)
            if img.ndim == 2:
                img = np.repeat(img[:, :, None], 3, axis=2)
            if not np.all(np.isfinite(img)) or np.any(img < 0):
                raise ValidationError(f"{kind}.{key}", "texels must be finite and >= 0")
            return img

        return self._cached(kind, key, load)

    def environment_image(self, key: str) -> np.ndarray:
        return self._image(self.hdri, "hdri", key)

    def texture_image(self, key: str) -> np.ndarray:
        return self._image(self.textures, "texture", key)


# default catalog ---------------------------------------------------------------------

DEFAULT_GLASS_MESHES = {
    "ball": lambda: geometry.icosphere(0.05, 3),
    "small_ball": lambda: geometry.icosphere(0.03, 3),
    "cube": lambda: geometry.box((0.06, 0.06, 0.06)),
    "tumbler": lambda: geometry.cylinder(0.03, 0.10, 40),
    "cone": lambda: geometry.cone(0.04, 0.09, 40),
    "wedge": lambda: geometry.wedge(0.08, 0.06, 0.06),
}
DEFAULT_PROP_MESHES = {
    "prop_block": lambda: geometry.box((0.05, 0.08, 0.04)),
    "prop_can": lambda: geometry.cylinder(0.025, 0.07, 24),
}


def sky_hdri(index: int, width: int = 64, height: int = 32) -> np.ndarray:
    """Procedural equirectangular sky: horizon gradient, ground tone and a sun lobe."""
    s = Stream(index, "hdri")
    zenith = np.array([s.uniform(0.2, 0.6), s.uniform(0.3, 0.7), s.uniform(0.6, 1.0)])
    horizon = np.array([s.uniform(0.6, 1.0), s.uniform(0.6, 1.0), s.uniform(0.6, 1.0)])
    ground = np.array([s.uniform(0.1, 0.3), s.uniform(0.1, 0.3), s.uniform(0.1, 0.3)])
    sun_az = s.angle()
    sun_el = s.uniform(0.2, 1.2)
    sun_power = s.uniform(5.0, 30.0)
    v = (np.arange(height) + 0.5) / height
    u = (np.arange(width) + 0.5) / width
    theta = v[:, None] * math.pi
    phi = u[None, :] * 2.0 * math.pi
    z = np.cos(theta) * np.ones_like(phi)
    d = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), z], axis=-1)
    sun = np.array([math.cos(sun_el) * math.cos(sun_az), math.cos(sun_el) * math.sin(sun_az), math.sin(sun_el)])
    up = np.clip(z, 0.0, 1.0)[..., None]
    img = np.where(z[..., None] >= 0.0, horizon * (1 - up) + zenith * up, ground)
    lobe = np.clip(d @ sun, 0.0, 1.0) ** 64
    img = img + sun_power * lobe[..., None]
    return img.astype(np.float32)


def checker_texture(index: int, size: int = 32, tiles: int = 4) -> np.ndarray:
    s = Stream(index, "texture")
    a = np.array([s.uniform(0.2, 0.9) for _ in range(3)])
    b = np.array([s.uniform(0.05, 0.5) for _ in range(3)])
    ij = np.add.outer(np.arange(size) * tiles // size, np.arange(size) * tiles // size) % 2
    return np.where(ij[..., None] == 0, a, b).astype(np.float32)


def build_default_catalog(
    root: str | os.PathLike,
    n_hdri: int = 33,
    n_backdrops: int = 33,
    extra_meshes: dict[str, Mesh] | None = None,
) -> AssetCatalog:
    """Write the procedural catalog (meshes, HDRI bank, backdrop bank) under ``root``."""
    root = Path(root)
    for sub in ("meshes", "hdri", "textures"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    meshes: dict[str, str] = {}
    builders = {**DEFAULT_GLASS_MESHES, **DEFAULT_PROP_MESHES, "backdrop_plane": lambda: geometry.plane(6.0)}
    for key, make in builders.items():
        geometry.write_obj(make(), root / "meshes" / f"{key}.obj")
        meshes[key] = f"meshes/{key}.obj"
    for key, mesh in (extra_meshes or {}).items():
        geometry.write_obj(mesh, root / "meshes" / f"{key}.obj")
        meshes[key] = f"meshes/{key}.obj"
    hdri = {}
    for i in range(n_hdri):
        key = f"sky_{i:02d}"
        write_pfm(root / "hdri" / f"{key}.pfm", sky_hdri(i))
        hdri[key] = f"hdri/{key}.pfm"
    textures, backdrops = {}, {}
    for i in range(n_backdrops):
        key = f"backdrop_{i:02d}"
        s = Stream(i, "backdrop")
        if i % 2:
            tex = f"checker_{i:02d}"
            write_pfm(root / "textures" / f"{tex}.pfm", checker_texture(i))
            textures[tex] = f"textures/{tex}.pfm"
            mat = DiffuseMaterial(albedo=(1.0, 1.0, 1.0), texture=tex, texture_scale_m=s.uniform(0.1, 0.5))
        else:
            mat = DiffuseMaterial(albedo=tuple(s.uniform(0.2, 0.9) for _ in range(3)))
        backdrops[key] = BackdropEntry("backdrop_plane", mat)
    cat = AssetCatalog(root, meshes, hdri, textures, backdrops)
    cat.save()
    return cat


def add_constant_hdri(catalog: AssetCatalog, key: str, radiance, size=(16, 8)) -> None:
    """Register a uniform environment (used by energy checks)."""
    w, h = size
    img = np.empty((h, w, 3), np.float32)
    img[...] = np.asarray(radiance, np.float32)
    write_pfm(catalog.root / "hdri" / f"{key}.pfm", img)
    catalog.hdri[key] = f"hdri/{key}.pfm"
    catalog.save()


def add_mesh(catalog: AssetCatalog, key: str, mesh: Mesh) -> None:
    (catalog.root / "meshes").mkdir(parents=True, exist_ok=True)
    geometry.write_obj(mesh, catalog.root / "meshes" / f"{key}.obj")
    catalog.meshes[key] = f"meshes/{key}.obj"
    with catalog._lock:
        catalog._cache.pop(("mesh", key), None)
    catalog.save()
