"""On-disk dataset format, preprocessing of both modalities, and the 6:2:2 split.

Manifest format (UTF-8, one JSON object per line)::

    {"metadata": {"K": ..., "n_rx": ..., "image_size": ..., "seed": ...,
                  "generator_version": ..., "noise_floor": ...}}
    {"id": "000000", "gps": [lat, lon], "image_path": "images/000000.ppm",
     "powers": [...K floats...], "label": 17}
    ...

Image paths are relative to the manifest file.  Images are binary PPM (P6).
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ValidationError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
REQUIRED_METADATA = ("K", "n_rx", "image_size", "seed", "generator_version")


@dataclass
class ManifestRecord:
    id: str
    gps: list[float]
    image_path: str
    powers: list[float]
    label: int


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    metadata: dict
    root: str | None = None  # directory that image paths are relative to

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_beams(self) -> int:
        return int(self.metadata["K"])

    def image_file(self, record: ManifestRecord) -> str:
        return os.path.join(self.root or ".", record.image_path)

    def gps_array(self, indices=None) -> np.ndarray:
        recs = self.records if indices is None else [self.records[i] for i in indices]
        return np.array([r.gps for r in recs], dtype=np.float64).reshape(-1, 2)

    def powers_array(self, indices=None) -> np.ndarray:
        recs = self.records if indices is None else [self.records[i] for i in indices]
        return np.array([r.powers for r in recs], dtype=np.float64)

    def labels_array(self, indices=None) -> np.ndarray:
        recs = self.records if indices is None else [self.records[i] for i in indices]
        return np.array([r.label for r in recs], dtype=np.int64)


# ---------------------------------------------------------------------------
# PPM


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValidationError(f"PPM needs an (H, W, 3) uint8 array, got {image.shape} {image.dtype}")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image).tobytes())


_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def _parse_ppm_header(blob: bytes, path) -> tuple[int, int, int]:
    m = _PPM_HEADER.match(blob)
    if not m:
        raise ValidationError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = (int(v) for v in m.groups())
    if maxval != 255:
        raise ValidationError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    return w, h, m.end()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    w, h, offset = _parse_ppm_header(blob, path)
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=offset)
    return data.reshape(h, w, 3).copy()


def ppm_size(path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(512)
    w, h, _ = _parse_ppm_header(head, path)
    return w, h


# ---------------------------------------------------------------------------
# manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = [json.dumps({"metadata": manifest.metadata}, sort_keys=True)]
    lines += [json.dumps(asdict(r)) for r in manifest.records]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _validate_record(rec: ManifestRecord, k: int) -> None:
    if len(rec.gps) != 2:
        raise ValidationError(f"record {rec.id}: gps must have 2 entries")
    if len(rec.powers) != k:
        raise ValidationError(f"record {rec.id}: {len(rec.powers)} powers but K={k}")
    powers = np.asarray(rec.powers, dtype=np.float64)
    if not np.all(np.isfinite(powers)) or np.any(powers < 0):
        raise ValidationError(f"record {rec.id}: powers must be finite and nonnegative")
    if rec.label != int(np.argmax(powers)):
        raise ValidationError(f"record {rec.id}: label {rec.label} != argmax(powers) {int(np.argmax(powers))}")


def load_manifest(path, check_images: bool = True) -> DatasetManifest:
    """Parse and validate a manifest.

    With ``check_images`` every referenced PPM header is read and its size
    compared with ``metadata.image_size``.
    """
    root = os.path.dirname(os.path.abspath(path))
    metadata = None
    records: list[ManifestRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if metadata is None:
                if "metadata" not in obj:
                    raise ValidationError(f"{path}:{lineno}: first line must hold the metadata object")
                metadata = obj["metadata"]
                missing = [k for k in REQUIRED_METADATA if k not in metadata]
                if missing:
                    raise ValidationError(f"{path}: metadata lacks {missing}")
                continue
            try:
                rec = ManifestRecord(id=str(obj["id"]), gps=list(obj["gps"]), image_path=obj["image_path"],
                                     powers=list(obj["powers"]), label=int(obj["label"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed record ({exc})") from exc
            _validate_record(rec, int(metadata["K"]))
            records.append(rec)
    if metadata is None:
        raise ValidationError(f"{path}: empty manifest")
    manifest = DatasetManifest(records=records, metadata=metadata, root=root)
    if check_images:
        size = int(metadata["image_size"])
        for rec in records:
            try:
                w, h = ppm_size(manifest.image_file(rec))
            except OSError as exc:
                raise ValidationError(f"record {rec.id}: cannot read image {rec.image_path} ({exc})") from exc
            if (w, h) != (size, size):
                raise ValidationError(f"record {rec.id}: image is {w}x{h}, expected {size}x{size}")
    return manifest


# ---------------------------------------------------------------------------
# preprocessing


@dataclass
class GpsNormalizer:
    """Per-coordinate min-max scaling fitted on the training split."""

    minimum: np.ndarray = field(default_factory=lambda: np.zeros(2))
    maximum: np.ndarray = field(default_factory=lambda: np.ones(2))

    @classmethod
    def fit(cls, gps) -> "GpsNormalizer":
        gps = np.asarray(gps, dtype=np.float64).reshape(-1, 2)
        return cls(minimum=gps.min(axis=0), maximum=gps.max(axis=0))

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d) -> "GpsNormalizer":
        return cls(minimum=np.asarray(d["min"], dtype=np.float64), maximum=np.asarray(d["max"], dtype=np.float64))


def normalize_gps(gps, normalizer: GpsNormalizer) -> np.ndarray:
    """(v - min) / (max - min) per coordinate; no clipping; 0.5 where max == min."""
    gps = np.asarray(gps, dtype=np.float64)
    span = normalizer.maximum - normalizer.minimum
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (gps - normalizer.minimum) / safe, 0.5)


def _resize_axis(n_in: int, n_out: int):
    """Source indices and weights for half-pixel-centered linear resampling."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_image(image, target_size: int) -> np.ndarray:
    """Bilinear resize to ``target_size`` x ``target_size``; returns float64 in the input's range."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise ValidationError(f"cannot resize a {h}x{w} image")
    if (h, w) == (target_size, target_size):
        return img.copy()
    r0, r1, rt = _resize_axis(h, target_size)
    c0, c1, ct = _resize_axis(w, target_size)
    rows = img[r0] * (1 - rt)[:, None, None] + img[r1] * rt[:, None, None]
    return rows[:, c0] * (1 - ct)[None, :, None] + rows[:, c1] * ct[None, :, None]


def standardize_channels(image, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    """(H, W, 3) intensities in [0, 255] -> (3, H, W) standardized array."""
    img = np.asarray(image, dtype=np.float64) / 255.0
    out = (img - np.asarray(mean)) / np.asarray(std)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def unstandardize_channels(tensor, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    chw = np.asarray(tensor, dtype=np.float64)
    img = chw.transpose(1, 2, 0) * np.asarray(std) + np.asarray(mean)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


@dataclass
class ImagePreprocessor:
    target_size: int = 32
    channel_means: tuple = IMAGENET_MEAN
    channel_stds: tuple = IMAGENET_STD

    def __call__(self, image) -> np.ndarray:
        return standardize_channels(resize_image(image, self.target_size), self.channel_means, self.channel_stds)


# ---------------------------------------------------------------------------
# split


@dataclass
class SplitIndices:
    train: list[int]
    validation: list[int]
    test: list[int]
    seed: int

    def get(self, name: str) -> list[int]:
        names = {"train": self.train, "validation": self.validation, "val": self.validation, "test": self.test}
        if name not in names:
            raise ValidationError(f"unknown split {name!r}")
        return names[name]


def split_dataset(manifest, seed: int) -> SplitIndices:
    """Seeded shuffle, then a contiguous 60/20/20 cut."""
    n = manifest if isinstance(manifest, int) else len(manifest)
    if n < 5:
        raise ValidationError(f"need at least 5 samples to split 6:2:2, got {n}")
    perm = np.random.default_rng(seed).permutation(n).tolist()
    n_train = round(0.6 * n)
    n_val = round(0.2 * n)
    return SplitIndices(train=perm[:n_train], validation=perm[n_train:n_train + n_val],
                        test=perm[n_train + n_val:], seed=seed)


# ---------------------------------------------------------------------------
# model-ready arrays


@dataclass
class PreparedSplit:
    indices: list[int]
    gps: np.ndarray  # (N, 2) normalized
    images: np.ndarray | None  # (N, H, W, 3) standardized, channels-last
    labels: np.ndarray
    powers: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def prepare_split(manifest: DatasetManifest, indices, normalizer: GpsNormalizer,
                  preprocessor: ImagePreprocessor | None) -> PreparedSplit:
    """Load and preprocess one split; images are skipped when ``preprocessor`` is None."""
    indices = list(indices)
    images = None
    if preprocessor is not None:
        images = np.stack([preprocessor(read_ppm(manifest.image_file(manifest.records[i]))).transpose(1, 2, 0)
                           for i in indices]) if indices else None
    return PreparedSplit(indices=indices,
                         gps=normalize_gps(manifest.gps_array(indices), normalizer),
                         images=images,
                         labels=manifest.labels_array(indices),
                         powers=manifest.powers_array(indices))
