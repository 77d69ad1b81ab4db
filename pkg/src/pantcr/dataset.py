"""Tiling synthetic scenes into splits described by a ``dataset.json`` manifest."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .cloudsim import MORPHOLOGIES, make_sample
from .errors import CapacityError, FormatError
from .raster import SamplePair, load_raster, save_raster

MANIFEST_NAME = "dataset.json"
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test_reduced", "test_full")
# full-resolution tiles are placed first so large requests are not starved
_PLACEMENT_ORDER = ("test_full", "test_reduced", "val", "train")
_FILE_ROLES = ("lrmsi", "pan", "target", "clean_lrmsi", "clean_pan")


@dataclass
class SynthConfig:
    r: int = 4
    train_size: int = 64
    val_size: int = 64
    reduced_size: int = 128
    full_size: int = 512
    thickness_min: float = 0.2
    thickness_max: float = 0.9
    seed: int = 0

    def patch_size(self, split: str) -> int:
        return {
            "train": self.train_size,
            "val": self.val_size,
            "test_reduced": self.reduced_size,
            "test_full": self.full_size,
        }[split]


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("PANTCR_THREADS", "1")))
    except ValueError:
        return 1


def _place_tiles(scene_dims, counts, cfg: SynthConfig):
    """Greedy non-overlapping tile placement on an occupancy grid per scene."""
    sizes = [cfg.patch_size(s) for s in SPLITS]
    unit = math.gcd(*sizes)
    occupancy = [np.zeros((h // unit, w // unit), dtype=bool) for h, w in scene_dims]
    placements = {s: [] for s in SPLITS}
    for split in _PLACEMENT_ORDER:
        need = int(counts.get(split, 0))
        size = cfg.patch_size(split)
        if size % cfg.r:
            raise ValueError(f"{split} patch size {size} not divisible by r={cfg.r}")
        n = size // unit
        for scene_idx, occ in enumerate(occupancy):
            if len(placements[split]) >= need:
                break
            gh, gw = occ.shape
            for gy in range(0, gh - n + 1, n):
                for gx in range(0, gw - n + 1, n):
                    if len(placements[split]) >= need:
                        break
                    if occ[gy:gy + n, gx:gx + n].any():
                        continue
                    occ[gy:gy + n, gx:gx + n] = True
                    y0, x0 = gy * unit, gx * unit
                    placements[split].append((scene_idx, (y0, x0, y0 + size, x0 + size)))
        if len(placements[split]) < need:
            raise CapacityError(
                f"only room for {len(placements[split])} of {need} {split} patches of {size}x{size}"
            )
    return placements


def _patch_seed(master: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([master, SPLITS.index(split), index])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def synth_dataset(source_scenes, counts, config: SynthConfig, out_dir) -> dict:
    """Tile clean source scenes into cloudy/clean sample files and write ``dataset.json``.

    ``source_scenes`` is a list of ``(hrmsi, pan)`` raster pairs; ``counts``
    maps split names to patch counts.  Every patch occupies its own region of
    a source scene, so no two entries overlap.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    unknown = set(counts) - set(SPLITS)
    if unknown:
        raise ValueError(f"unknown splits {sorted(unknown)}")
    dims = [(hr.h, hr.w) for hr, _ in source_scenes]
    placements = _place_tiles(dims, counts, config)

    jobs = []
    for split in SPLITS:
        for i, (scene_idx, bbox) in enumerate(placements[split]):
            jobs.append((split, i, scene_idx, bbox))

    def build(job):
        split, i, scene_idx, (y0, x0, y1, x1) = job
        seed = _patch_seed(config.seed, split, i)
        rng = np.random.default_rng(seed)
        morphology = MORPHOLOGIES[int(rng.integers(len(MORPHOLOGIES)))]
        thickness = float(rng.uniform(config.thickness_min, config.thickness_max))
        hr, pan = source_scenes[scene_idx]
        sample_id = f"{split}_{i:04d}"
        sample = make_sample(
            hr.replace(hr.data[y0:y1, x0:x1]),
            pan.replace(pan.data[y0:y1, x0:x1]),
            cloud_seed=seed,
            thickness_scale=thickness,
            r=config.r,
            morphology=morphology,
            sample_id=sample_id,
        )
        files = {}
        for role, raster in zip(_FILE_ROLES, (
            sample.cloudy_lrmsi, sample.cloudy_pan, sample.clean_hrmsi,
            sample.clean_lrmsi, sample.clean_pan,
        )):
            name = f"{sample_id}_{role}.mbr"
            save_raster(raster, out_dir / name)
            files[role] = name
        return split, {
            "id": sample_id,
            "files": files,
            "cloud": {"seed": seed, "morphology": morphology, "thickness": thickness},
            "source": scene_idx,
            "bbox": [y0, x0, y1, x1],
            "dims": [y1 - y0, x1 - x0],
        }

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        results = list(pool.map(build, jobs))

    manifest = {
        "version": MANIFEST_VERSION,
        "r": config.r,
        "config": asdict(config),
        "splits": {s: [] for s in SPLITS},
    }
    for split, entry in results:
        manifest["splits"][split].append(entry)
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest


def write_manifest(manifest: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid manifest ({exc})") from exc
    for key in ("version", "r", "splits"):
        if key not in manifest:
            raise FormatError(f"{path}: manifest missing {key!r}")
    manifest["_root"] = str(path.parent)
    return manifest


def load_sample(manifest: dict, entry: dict) -> SamplePair:
    root = Path(manifest.get("_root", "."))
    f = entry["files"]
    opt = lambda role: load_raster(root / f[role]) if role in f else None  # noqa: E731
    return SamplePair(
        cloudy_lrmsi=load_raster(root / f["lrmsi"]),
        cloudy_pan=load_raster(root / f["pan"]),
        clean_hrmsi=load_raster(root / f["target"]),
        scale_ratio=int(manifest["r"]),
        id=entry["id"],
        clean_lrmsi=opt("clean_lrmsi"),
        clean_pan=opt("clean_pan"),
    )


def load_split(manifest: dict, split: str):
    return [load_sample(manifest, e) for e in manifest["splits"].get(split, [])]
