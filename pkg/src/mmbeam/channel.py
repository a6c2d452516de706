"""Synthetic V2V mmWave ground truth: codebook, LOS channels, beam sweeps, paired sensor data.

The receiver sits at the origin with a front-facing half-wavelength ULA whose
boresight points along +y (longitudinal, north); x is lateral (east).  The
single-antenna transmitter is somewhere ahead.  Angles are measured from
boresight, positive towards +x.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError

SPEED_OF_LIGHT = 299_792_458.0
METERS_PER_DEGREE = 111_320.0
GENERATOR_VERSION = "mmbeam-synth-1"


@dataclass
class ScenarioConfig:
    n_rx: int = 16
    n_tx: int = 1
    n_beams: int = 64
    subcarriers: int = 8
    subcarrier_spacing_hz: float = 1.0e6
    symbol_power: float = 1.0
    noise_variance: float = 1e-4
    # defaults to subcarriers * noise_variance (expected noise energy of one beam sweep)
    noise_floor: float | None = None
    fov_deg: float = 60.0
    lateral_range: tuple[float, float] = (-30.0, 30.0)
    longitudinal_range: tuple[float, float] = (4.0, 40.0)
    second_path_gain: float = 0.0
    gps_origin: tuple[float, float] = (33.4255, -111.9400)
    gps_jitter_m: float = 0.0
    # a fraction of fixes is degraded to uniform error of ±gps_outlier_m
    gps_outlier_prob: float = 0.0
    gps_outlier_m: float = 20.0
    image_size: int = 32
    image_bearing_jitter_deg: float = 0.0
    # a fraction of frames does not show the transmitter at all
    image_occlusion_prob: float = 0.0
    max_distractors: int = 3
    pixel_noise_std: float = 6.0
    seed: int = 0

    def __post_init__(self):
        self.lateral_range = tuple(float(v) for v in self.lateral_range)
        self.longitudinal_range = tuple(float(v) for v in self.longitudinal_range)
        self.gps_origin = tuple(float(v) for v in self.gps_origin)
        if self.noise_floor is None:
            self.noise_floor = self.subcarriers * self.noise_variance
        if self.n_rx < 1:
            raise ValidationError("n_rx must be >= 1")
        if self.n_beams < max(2, self.n_rx):
            raise ValidationError(f"codebook size {self.n_beams} must be >= max(2, n_rx={self.n_rx})")
        if self.subcarriers < 1:
            raise ValidationError("need at least one subcarrier")
        if self.noise_variance < 0 or self.symbol_power <= 0:
            raise ValidationError("noise_variance must be >= 0 and symbol_power > 0")
        if self.image_size < 16:
            raise ValidationError("image_size must be >= 16")
        for name in ("gps_outlier_prob", "image_occlusion_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Codebook:
    vectors: np.ndarray  # (K, n_rx) complex
    steering_angles: np.ndarray  # (K,) radians

    @property
    def size(self) -> int:
        return len(self.steering_angles)

    @property
    def sin_angles(self) -> np.ndarray:
        return np.sin(self.steering_angles)


@dataclass
class ChannelRealization:
    h: np.ndarray  # (Q, n_rx) complex
    true_angle: float
    path_gain: float


@dataclass
class V2VSample:
    gps: tuple[float, float]
    image: np.ndarray  # (H, W, 3) uint8
    powers: np.ndarray  # (K,)
    label: int
    position: tuple[float, float] = field(default=(0.0, 0.0))


def steering_vector(angle: float, n_rx: int) -> np.ndarray:
    """Half-wavelength ULA response, unit norm: exp(j*pi*m*sin(angle)) / sqrt(n_rx)."""
    m = np.arange(n_rx)
    return np.exp(1j * np.pi * m * np.sin(angle)) / np.sqrt(n_rx)


def build_codebook(config: ScenarioConfig) -> Codebook:
    """K beams uniformly spaced in sin(angle) across the field of view."""
    k = config.n_beams
    if k < 2:
        raise ValidationError("codebook needs at least two beams")
    edge = math.sin(math.radians(config.fov_deg))
    sines = np.linspace(-edge, edge, k)
    angles = np.arcsin(sines)
    vectors = np.exp(1j * np.pi * np.outer(sines, np.arange(config.n_rx))) / np.sqrt(config.n_rx)
    return Codebook(vectors=vectors, steering_angles=angles)


def los_channel(relative_position, config: ScenarioConfig, rng: np.random.Generator | None = None
                ) -> ChannelRealization:
    """Single-path LOS channel with 1/d amplitude and per-subcarrier delay phase.

    With ``config.second_path_gain > 0`` a weaker reflected path at a random
    angle is added (needs ``rng``).
    """
    x, y = float(relative_position[0]), float(relative_position[1])
    dist = math.hypot(x, y)
    if dist <= 0:
        raise ValidationError("transmitter and receiver positions coincide")
    angle = math.atan2(x, y)
    gain = 1.0 / dist
    q = np.arange(config.subcarriers)
    tau = dist / SPEED_OF_LIGHT
    phase = np.exp(-2j * np.pi * q * tau * config.subcarrier_spacing_hz)
    h = gain * np.sqrt(config.n_rx) * np.outer(phase, steering_vector(angle, config.n_rx))
    if config.second_path_gain > 0:
        if rng is None:
            raise ValidationError("a second path needs an rng")
        fov = math.radians(config.fov_deg)
        angle2 = rng.uniform(-fov, fov)
        extra = rng.uniform(5.0, 20.0)
        phase2 = np.exp(-2j * np.pi * q * (dist + extra) / SPEED_OF_LIGHT * config.subcarrier_spacing_hz)
        h = h + config.second_path_gain * gain * np.sqrt(config.n_rx) * np.outer(
            phase2, steering_vector(angle2, config.n_rx))
    return ChannelRealization(h=h, true_angle=angle, path_gain=gain)


def received_signal(h_q: np.ndarray, c: np.ndarray, s: complex, noise: complex) -> complex:
    """r = hᴴ c s + n for one subcarrier (ᴴ: conjugate transpose)."""
    h_q, c = np.asarray(h_q), np.asarray(c)
    if h_q.shape != c.shape:
        raise DimensionError(f"channel length {h_q.shape} != beam length {c.shape}")
    return complex(np.vdot(h_q, c) * s + noise)


def received_power_vector(channel: ChannelRealization, codebook: Codebook, config: ScenarioConfig,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Measured power of every beam, summed over subcarriers, with one noise draw per beam and subcarrier."""
    s = math.sqrt(config.symbol_power)
    # (Q, K): row q is conj(h[q]) · c_k for all k
    y = channel.h.conj() @ codebook.vectors.T * s
    if config.noise_variance > 0:
        if rng is None:
            raise ValidationError("noisy measurements need an rng")
        scale = math.sqrt(config.noise_variance / 2.0)
        y = y + scale * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return (np.abs(y) ** 2).sum(axis=0)


def optimal_beam(powers) -> int:
    powers = np.asarray(powers, dtype=np.float64)
    if powers.size == 0:
        raise ValidationError("empty power vector")
    return int(np.argmax(powers))


# ---------------------------------------------------------------------------
# paired sensor modalities

ROAD = np.array([86.0, 88.0, 92.0])
TARGET = np.array([250.0, 215.0, 40.0])
DISTRACTORS = np.array([[40.0, 90.0, 230.0], [220.0, 50.0, 50.0], [60.0, 200.0, 90.0]])


def _range_bounds(config: ScenarioConfig) -> tuple[float, float]:
    lo = config.longitudinal_range[0]
    hi = math.hypot(max(abs(v) for v in config.lateral_range), config.longitudinal_range[1])
    return lo, hi


def _disc(img: np.ndarray, row: float, col: float, radius: float, color: np.ndarray) -> None:
    size = img.shape[0]
    rr, cc = np.mgrid[0:size, 0:size]
    dist = np.hypot(rr - row, cc - col)
    alpha = np.clip(radius + 0.5 - dist, 0.0, 1.0)[..., None]
    img *= 1.0 - alpha
    img += alpha * color


def scene_pixel(relative_position, config: ScenarioConfig, bearing_offset: float = 0.0) -> tuple[float, float]:
    """(row, col) of the transmitter disc: column from bearing, row from range."""
    x, y = float(relative_position[0]), float(relative_position[1])
    size = config.image_size
    margin = size / 8.0
    edge = math.sin(math.radians(config.fov_deg))
    bearing = math.atan2(x, y) + bearing_offset
    col = (size - 1) / 2.0 + float(np.clip(math.sin(bearing) / edge, -1, 1)) * ((size - 1) / 2.0 - margin)
    lo, hi = _range_bounds(config)
    frac = float(np.clip((math.hypot(x, y) - lo) / (hi - lo), 0.0, 1.0))
    row = (size - 1) - margin - frac * (size - 1 - 2 * margin)
    return row, col


def render_scene_image(relative_position, distractors: int, config: ScenarioConfig,
                       rng: np.random.Generator, occluded: bool = False) -> np.ndarray:
    """Top-down scene: road background, the transmitter as a bright disc, optional distractors, pixel noise.

    An ``occluded`` frame is rendered without the transmitter disc.
    """
    size = config.image_size
    img = np.broadcast_to(ROAD, (size, size, 3)).copy()
    radius = max(1.5, size / 16.0)
    for i in range(distractors):
        r, c = rng.uniform(radius, size - 1 - radius, size=2)
        _disc(img, r, c, radius, DISTRACTORS[i % len(DISTRACTORS)])
    jitter = math.radians(config.image_bearing_jitter_deg) * rng.standard_normal() \
        if config.image_bearing_jitter_deg > 0 else 0.0
    if not occluded:
        row, col = scene_pixel(relative_position, config, jitter)
        _disc(img, row, col, radius, TARGET)
    if config.pixel_noise_std > 0:
        img = img + config.pixel_noise_std * rng.standard_normal(img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def gps_from_position(relative_position, config: ScenarioConfig,
                      rng: np.random.Generator | None = None, degraded: bool = False) -> tuple[float, float]:
    """Equirectangular (lat, lon) of the transmitter, optionally with uniform jitter per axis.

    The jitter half-width is ``gps_jitter_m``, or ``gps_outlier_m`` for a ``degraded`` fix.
    """
    x, y = float(relative_position[0]), float(relative_position[1])
    half_width = config.gps_outlier_m if degraded else config.gps_jitter_m
    if half_width > 0 and rng is not None:
        x += rng.uniform(-half_width, half_width)
        y += rng.uniform(-half_width, half_width)
    lat0, lon0 = config.gps_origin
    lat = lat0 + y / METERS_PER_DEGREE
    lon = lon0 + x / (METERS_PER_DEGREE * math.cos(math.radians(lat0)))
    return lat, lon


def position_from_gps(gps, config: ScenarioConfig) -> tuple[float, float]:
    lat0, lon0 = config.gps_origin
    y = (gps[0] - lat0) * METERS_PER_DEGREE
    x = (gps[1] - lon0) * METERS_PER_DEGREE * math.cos(math.radians(lat0))
    return x, y


def sample_position(config: ScenarioConfig, rng: np.random.Generator) -> tuple[float, float]:
    """Uniform position inside the geometry bounds and the field of view."""
    fov = math.radians(config.fov_deg)
    while True:
        x = rng.uniform(*config.lateral_range)
        y = rng.uniform(*config.longitudinal_range)
        if abs(math.atan2(x, y)) <= fov:
            return x, y


def generate_sample(config: ScenarioConfig, index: int, codebook: Codebook | None = None) -> V2VSample:
    """Sample ``index`` drawn from its own generator seeded with ``config.seed + index``."""
    codebook = codebook if codebook is not None else build_codebook(config)
    rng = np.random.default_rng(config.seed + index)
    pos = sample_position(config, rng)
    channel = los_channel(pos, config, rng)
    powers = received_power_vector(channel, codebook, config, rng)
    # the corruption draws are skipped when disabled so plain scenarios keep their streams
    degraded = config.gps_outlier_prob > 0 and rng.random() < config.gps_outlier_prob
    gps = gps_from_position(pos, config, rng, degraded)
    n_distractors = int(rng.integers(0, config.max_distractors + 1))
    occluded = config.image_occlusion_prob > 0 and rng.random() < config.image_occlusion_prob
    image = render_scene_image(pos, n_distractors, config, rng, occluded)
    return V2VSample(gps=gps, image=image, powers=powers, label=optimal_beam(powers), position=pos)


def generate_dataset(config: ScenarioConfig, n_samples: int, out_dir: str | os.PathLike | None = None,
                     provenance: dict | None = None):
    """Draw ``n_samples`` samples; when ``out_dir`` is given also write images and ``manifest.jsonl``.

    Returns ``(samples, manifest)``.
    """
    from .data import DatasetManifest, ManifestRecord, save_manifest, write_ppm

    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    codebook = build_codebook(config)
    samples = [generate_sample(config, i, codebook) for i in range(n_samples)]
    records = [ManifestRecord(id=f"{i:06d}", gps=[float(s.gps[0]), float(s.gps[1])],
                              image_path=f"images/{i:06d}.ppm", powers=[float(p) for p in s.powers],
                              label=s.label)
               for i, s in enumerate(samples)]
    metadata = {
        "K": config.n_beams,
        "n_rx": config.n_rx,
        "image_size": config.image_size,
        "seed": config.seed,
        "generator_version": GENERATOR_VERSION,
        "noise_floor": config.noise_floor,
        "scenario": config.to_dict(),
    }
    if provenance is not None:
        metadata["provenance"] = provenance
    manifest = DatasetManifest(records=records, metadata=metadata, root=None)
    if out_dir is not None:
        out_dir = os.fspath(out_dir)
        try:
            os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
            for rec, s in zip(records, samples):
                write_ppm(os.path.join(out_dir, rec.image_path), s.image)
        except OSError as exc:
            raise OSError(f"cannot write dataset images under {out_dir}: {exc}") from exc
        save_manifest(manifest, os.path.join(out_dir, "manifest.jsonl"))
    return samples, manifest
