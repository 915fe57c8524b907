"""Procedural ambiguous-segmentation datasets and their on-disk layout.

Each record is a grey-level image containing one soft-edged superellipse
"lesion" plus ``experts`` binary masks. Every simulated expert dilates or
erodes the true region by its own signed bias and adds a smooth boundary
wobble; both scale with ``ambiguity``. The image depends only on
``(seed, index)``, so datasets that differ only in ambiguity share images.

Layout::

    manifest.json
    img/<id>.pgm
    masks/<id>_e<k>.pgm      (k = 1..experts, 0/255)
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import rng as rngmod
from .pgm import PGMError, atomic_write_bytes, read_pgm, write_pgm

GENERATOR_VERSION = "1"
FORMAT_VERSION = 1

RADIUS_SCALE = 0.4   # max expert bias, as a fraction of the minor radius
JITTER_SCALE = 0.15  # max boundary wobble, same units
HARMONICS = 4


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    count: int = 100
    grid_size: int = 32
    experts: int = 4
    ambiguity: float = 0.5
    split: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.grid_size < 8:
            raise ValueError("grid_size must be >= 8")
        if self.experts < 1:
            raise ValueError("need at least one expert")
        if not 0.0 <= self.ambiguity <= 1.0:
            raise ValueError("ambiguity must lie in [0, 1]")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must lie strictly between 0 and 1")

    @property
    def n_train(self) -> int:
        return math.floor(self.count * self.split)


@dataclass
class DatasetRecord:
    id: str
    image: np.ndarray                 # (S, S) float64 in [0, 1]
    expert_masks: np.ndarray          # (M, S, S) uint8 in {0, 1}
    provenance: dict = field(default_factory=dict)
    split: str = "train"


def record_id(index: int) -> str:
    return f"r{index:05d}"


def _geometry(cfg: DatasetConfig, index: int):
    g = rngmod.stream(cfg.seed, rngmod.IMAGE, index)
    s = cfg.grid_size
    return {
        "cy": g.uniform(0.35, 0.65) * s, "cx": g.uniform(0.35, 0.65) * s,
        "ra": g.uniform(0.15, 0.28) * s, "rb": g.uniform(0.15, 0.28) * s,
        "theta": g.uniform(0.0, math.pi), "power": g.uniform(1.6, 3.5),
        "soft": g.uniform(0.6, 1.6), "contrast": g.uniform(0.35, 0.55),
        "base": g.uniform(0.15, 0.3), "ramp": g.uniform(0.0, 0.15),
        "ramp_dir": g.uniform(0.0, 2 * math.pi),
        "texture": g.standard_normal((s, s)), "grain": g.standard_normal((s, s)),
    }


def _normalized_radius(geo, yy, xx):
    dy, dx = yy - geo["cy"], xx - geo["cx"]
    c, s = math.cos(geo["theta"]), math.sin(geo["theta"])
    u = (c * dx + s * dy) / geo["ra"]
    v = (-s * dx + c * dy) / geo["rb"]
    p = geo["power"]
    return (np.abs(u) ** p + np.abs(v) ** p) ** (1.0 / p)


def _signed_distance(region: np.ndarray) -> np.ndarray:
    """Pixel-centre signed distance to the region boundary (negative inside)."""
    if not region.any():
        return np.full(region.shape, np.inf)
    d_out = ndimage.distance_transform_edt(~region)
    d_in = ndimage.distance_transform_edt(region)
    return np.where(region, 0.5 - d_in, d_out - 0.5)


def _expert_offsets(cfg: DatasetConfig, index: int, minor: float, angle: np.ndarray):
    m = cfg.experts
    biases = np.linspace(-1.0, 1.0, m) if m > 1 else np.zeros(1)
    weights = 1.0 / np.arange(1, HARMONICS + 1)
    out = []
    for k in range(m):
        g = rngmod.stream(cfg.seed, rngmod.EXPERT, index, k)
        amps = g.uniform(-1.0, 1.0, HARMONICS) * weights
        phases = g.uniform(0.0, 2 * math.pi, HARMONICS)
        wobble = sum(a * np.cos((h + 1) * angle + ph)
                     for h, (a, ph) in enumerate(zip(amps, phases))) / weights.sum()
        offset = cfg.ambiguity * minor * (RADIUS_SCALE * biases[k] + JITTER_SCALE * wobble)
        out.append(offset)
    return out


def gen_record(cfg: DatasetConfig, index: int) -> DatasetRecord:
    if not 0 <= index < max(cfg.count, 1):
        raise ValueError(f"index {index} outside dataset of {cfg.count}")
    s = cfg.grid_size
    geo = _geometry(cfg, index)
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64) + 0.5
    rho = _normalized_radius(geo, yy, xx)
    minor = min(geo["ra"], geo["rb"])

    blob = 1.0 / (1.0 + np.exp(-(1.0 - rho) * minor / geo["soft"]))
    ramp = geo["ramp"] * ((xx * math.cos(geo["ramp_dir"]) + yy * math.sin(geo["ramp_dir"])) / s)
    texture = ndimage.gaussian_filter(geo["texture"], sigma=2.0, mode="wrap")
    texture /= texture.std() + 1e-12
    image = geo["base"] + ramp + 0.05 * texture + geo["contrast"] * blob + 0.03 * geo["grain"]
    image = np.clip(image, 0.0, 1.0)

    region = rho <= 1.0
    sdf = _signed_distance(region)
    angle = np.arctan2(yy - geo["cy"], xx - geo["cx"])
    masks = np.empty((cfg.experts, s, s), dtype=np.uint8)
    centre = (min(int(geo["cy"]), s - 1), min(int(geo["cx"]), s - 1))
    for k, offset in enumerate(_expert_offsets(cfg, index, minor, angle)):
        m = sdf <= offset
        if not m.any():
            m[centre] = True
        masks[k] = m
    return DatasetRecord(
        id=record_id(index), image=image, expert_masks=masks,
        provenance={"seed": cfg.seed, "index": index, "generator_version": GENERATOR_VERSION},
        split="train" if index < cfg.n_train else "test",
    )


def generate(cfg: DatasetConfig) -> list[DatasetRecord]:
    return [gen_record(cfg, i) for i in range(cfg.count)]


# -- file I/O -----------------------------------------------------------------

def quantize_image(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_dataset(cfg: DatasetConfig, root) -> Path:
    root = Path(root)
    entries = []
    for rec in generate(cfg):
        img_rel = f"img/{rec.id}.pgm"
        write_pgm(root / img_rel, quantize_image(rec.image))
        mask_rels = []
        for k, m in enumerate(rec.expert_masks, start=1):
            rel = f"masks/{rec.id}_e{k}.pgm"
            write_pgm(root / rel, (m * 255).astype(np.uint8))
            mask_rels.append(rel)
        entries.append({"id": rec.id, "image": img_rel, "masks": mask_rels, "split": rec.split})
    manifest = {
        "format_version": FORMAT_VERSION,
        "generator_version": GENERATOR_VERSION,
        "config": asdict(cfg),
        "records": entries,
    }
    atomic_write_bytes(root / "manifest.json",
                       (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return root


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise DatasetError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported format_version {manifest.get('format_version')!r}")
    for key in ("config", "records"):
        if key not in manifest:
            raise DatasetError(f"{path}: missing '{key}'")
    return manifest


def load_dataset(root, split: str | None = None) -> list[DatasetRecord]:
    """Load records, optionally only those of one split ("train"/"test")."""
    root = Path(root)
    manifest = read_manifest(root)
    records = []
    for entry in manifest["records"]:
        if split is not None and entry["split"] != split:
            continue
        try:
            img = read_pgm(root / entry["image"])
            masks = [read_pgm(root / rel) for rel in entry["masks"]]
        except PGMError as exc:
            raise DatasetError(str(exc)) from None
        for rel, m in zip(entry["masks"], masks):
            if m.shape != img.shape:
                raise DatasetError(f"{root / rel}: shape {m.shape} != image shape {img.shape}")
        records.append(DatasetRecord(
            id=entry["id"],
            image=img.astype(np.float64) / 255.0,
            expert_masks=(np.stack(masks) >= 128).astype(np.uint8) if masks
            else np.zeros((0,) + img.shape, np.uint8),
            provenance={"generator_version": manifest.get("generator_version"),
                        "seed": manifest["config"].get("seed")},
            split=entry["split"],
        ))
    return records
