"""Region features and visual concepts: loading precomputed detector output or
synthesizing it for the desk-scale world."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_REGIONS = 36
DEFAULT_OBJ_DIM = 2048
SYNTHETIC_OBJ_DIM = 64


class RegionShapeError(ValueError):
    pass


def normalize_tag(tag):
    """Detector tags become single vocabulary tokens: ``"traffic light"`` -> ``"traffic_light"``."""
    return "_".join(tag.strip().lower().split())


@dataclass(frozen=True, eq=False)
class RegionSet:
    """K region feature vectors with one concept tag each (and optional boxes)."""

    image_id: str
    features: np.ndarray
    concepts: tuple
    boxes: np.ndarray | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise RegionShapeError(f"{self.image_id}: features must be a non-empty K x d matrix")
        if len(self.concepts) != feats.shape[0]:
            raise RegionShapeError(
                f"{self.image_id}: {feats.shape[0]} features but {len(self.concepts)} concepts"
            )
        if not np.all(np.isfinite(feats)):
            raise RegionShapeError(f"{self.image_id}: non-finite feature values")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "concepts", tuple(self.concepts))
        if self.boxes is not None:
            boxes = np.asarray(self.boxes, dtype=np.float64)
            if boxes.shape != (feats.shape[0], 4):
                raise RegionShapeError(f"{self.image_id}: boxes must be K x 4, got {boxes.shape}")
            boxes.setflags(write=False)
            object.__setattr__(self, "boxes", boxes)

    @property
    def K(self):
        return self.features.shape[0]

    @property
    def d_obj(self):
        return self.features.shape[1]

    def global_feature(self):
        """Image-level feature for retrieval: the mean of the region features."""
        return self.features.mean(axis=0)

    def __eq__(self, other):
        if not isinstance(other, RegionSet):
            return NotImplemented
        if self.image_id != other.image_id or self.concepts != other.concepts:
            return False
        if not np.array_equal(self.features, other.features):
            return False
        if (self.boxes is None) != (other.boxes is None):
            return False
        return self.boxes is None or np.array_equal(self.boxes, other.boxes)

    def to_json(self):
        rec = {
            "image_id": self.image_id,
            "features": self.features.tolist(),
            "concepts": list(self.concepts),
        }
        if self.boxes is not None:
            rec["boxes"] = self.boxes.tolist()
        return rec

    @classmethod
    def from_json(cls, rec):
        return cls(
            image_id=str(rec["image_id"]),
            features=np.asarray(rec["features"], dtype=np.float64),
            concepts=tuple(rec["concepts"]),
            boxes=None if rec.get("boxes") is None else np.asarray(rec["boxes"], dtype=np.float64),
        )


def load_regions(path):
    """Read ``regions.jsonl`` into ``{image_id: RegionSet}``."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            image_id = rec.get("image_id", f"<line {lineno}>")
            feats = rec.get("features") or []
            if any(len(row) != len(feats[0]) for row in feats):
                raise RegionShapeError(f"{path}:{lineno}: {image_id}: ragged feature rows")
            try:
                rs = RegionSet.from_json(rec)
            except RegionShapeError as exc:
                raise RegionShapeError(f"{path}:{lineno}: {exc}") from None
            if rs.image_id in out:
                raise ValueError(f"{path}:{lineno}: duplicate image_id {rs.image_id}")
            out[rs.image_id] = rs
    return out


def write_regions(path, region_sets):
    with open(path, "w", encoding="utf-8") as fh:
        for rs in region_sets:
            fh.write(json.dumps(rs.to_json()) + "\n")


def read_tags(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def write_tags(path, tags):
    with open(path, "w", encoding="utf-8") as fh:
        for t in tags:
            fh.write(t + "\n")


def stable_seed(seed, key):
    return [int(seed), zlib.crc32(key.encode("utf-8"))]


def synthetic_detect(image, world, K=DEFAULT_REGIONS, noise=0.0, seed=0):
    """Emit K detections for an image of the synthetic world.

    Every concept in the image's bag is detected at least once when K allows;
    the remaining slots are filled by sampling the bag with replacement.
    Feature rows are the concept latent plus Gaussian noise of scale ``noise``.
    """
    if K <= 0:
        raise ValueError("K must be positive")
    if image.image_id not in world.image_concepts:
        raise KeyError(f"image {image.image_id} is not part of this world")
    bag = list(world.image_concepts[image.image_id])
    rng = np.random.default_rng(stable_seed(seed, image.image_id))
    if K <= len(bag):
        picks = list(rng.choice(len(bag), size=K, replace=False))
    else:
        picks = list(range(len(bag))) + list(rng.integers(0, len(bag), size=K - len(bag)))
        rng.shuffle(picks)
    concepts = tuple(bag[int(p)] for p in picks)
    latents = np.stack([world.latent(c) for c in concepts])
    feats = latents + noise * rng.standard_normal(latents.shape) if noise > 0 else latents.copy()
    xy = rng.random((K, 2)) * 0.7
    wh = 0.05 + rng.random((K, 2)) * 0.25
    boxes = np.concatenate([xy, xy + wh], axis=1)
    return RegionSet(image.image_id, feats, concepts, boxes)
