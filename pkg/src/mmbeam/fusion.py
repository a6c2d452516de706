"""Feature fusion, the MLP beam head, the assembled predictor and its checkpoint file."""

from __future__ import annotations

import hashlib
import io
import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, ValidationError
from .nn import LayerNorm, Linear, Module
from .position import PositionEncoder, PositionEncoderConfig
from .tensor import Tensor
from .visual import VisualEncoder, VisualEncoderConfig

VARIANTS = ("fusion", "position-only", "vision-only")


def fuse_features(z_g: Tensor | None, z_v: Tensor | None) -> Tensor:
    """Concatenate position then visual features along the last axis."""
    if z_g is None or z_v is None:
        raise ContractError("fusion needs both position and visual features")
    return T.concat([z_g, z_v], axis=-1)


class FusionHead(Module):
    """Two Linear -> LayerNorm -> ReLU layers, then a linear map to K logits."""

    def __init__(self, rng, d_in: int, k: int, hidden: int | None = None):
        hidden = hidden or d_in
        self.fc1 = Linear(rng, d_in, hidden)
        self.norm1 = LayerNorm(hidden)
        self.fc2 = Linear(rng, hidden, hidden)
        self.norm2 = LayerNorm(hidden)
        self.fc3 = Linear(rng, hidden, k)

    def forward(self, z: Tensor) -> Tensor:
        h = T.relu(self.norm1(self.fc1(z)))
        h = T.relu(self.norm2(self.fc2(h)))
        return self.fc3(h)


def head_forward(z: Tensor, head: FusionHead) -> Tensor:
    return head(z)


def predict_top_k(logits, k: int) -> np.ndarray:
    """Indices of the k largest logits, best first; ties go to the lower index.

    Accepts a single logit vector or a ``(N, K)`` batch.
    """
    logits = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    n_beams = logits.shape[-1]
    if not 1 <= k <= n_beams:
        raise ValidationError(f"k={k} outside [1, {n_beams}]")
    order = np.argsort(-logits, axis=-1, kind="stable")
    return order[..., :k]


@dataclass
class PredictorConfig:
    variant: str = "fusion"
    n_beams: int = 64
    position: PositionEncoderConfig = field(default_factory=PositionEncoderConfig)
    visual: VisualEncoderConfig = field(default_factory=VisualEncoderConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if isinstance(self.position, dict):
            self.position = PositionEncoderConfig(**self.position)
        if isinstance(self.visual, dict):
            self.visual = VisualEncoderConfig(**self.visual)

    @property
    def uses_position(self) -> bool:
        return self.variant in ("fusion", "position-only")

    @property
    def uses_vision(self) -> bool:
        return self.variant in ("fusion", "vision-only")

    def to_dict(self) -> dict:
        return asdict(self)


class BeamPredictor(Module):
    """Position encoder and/or visual encoder feeding a shared head design."""

    def __init__(self, config: PredictorConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.position_encoder = PositionEncoder(config.position, rng) if config.uses_position else None
        self.visual_encoder = VisualEncoder(config.visual, rng) if config.uses_vision else None
        self.head = FusionHead(rng, self.feature_dim, config.n_beams)

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def feature_dim(self) -> int:
        d = 0
        if self.position_encoder is not None:
            d += self.position_encoder.out_dim
        if self.visual_encoder is not None:
            d += self.visual_encoder.out_dim
        return d

    def sections(self) -> "OrderedDict[str, Module]":
        out = OrderedDict()
        if self.position_encoder is not None:
            out["position-encoder"] = self.position_encoder
        if self.visual_encoder is not None:
            out["visual-encoder"] = self.visual_encoder
        out["head"] = self.head
        return out

    def forward(self, gps: Tensor | None, images: Tensor | None) -> Tensor:
        """Logits ``(B, K)`` from normalized GPS ``(B, 2)`` and images ``(B, H, W, 3)``."""
        if self.config.uses_position and gps is None:
            raise ContractError(f"{self.variant} predictor needs GPS input")
        if self.config.uses_vision and images is None:
            raise ContractError(f"{self.variant} predictor needs image input")
        if self.variant == "fusion":
            z = fuse_features(self.position_encoder(gps), self.visual_encoder(images))
        elif self.variant == "position-only":
            z = self.position_encoder(gps)
        else:
            z = self.visual_encoder(images)
        return self.head(z)


def model_forward(sample: dict, predictor: BeamPredictor) -> np.ndarray:
    """Logits ``[K]`` for one preprocessed sample (``gps`` 2-vector, ``image`` [3, H, W])."""
    gps = images = None
    if predictor.config.uses_position:
        gps = Tensor(np.asarray(sample["gps"], dtype=np.float64).reshape(1, 2))
    if predictor.config.uses_vision:
        images = Tensor(np.asarray(sample["image"]).transpose(1, 2, 0)[None])
    with T.no_grad():
        return predictor(gps, images).data[0]


# ---------------------------------------------------------------------------
# checkpoint file
#
#   magic "MMBEAMCK" | u32 version | u32 meta_len | meta JSON (utf-8)
#   u32 n_sections, then per section:
#     u16 name_len | name | u32 n_arrays, then per array:
#       u16 key_len | key | u8 ndim | ndim * u32 shape | float64 LE data
#   32-byte SHA-256 of everything above

MAGIC = b"MMBEAMCK"
CHECKPOINT_VERSION = 1


def _pack_str(buf: io.BytesIO, s: str, fmt: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack(fmt, len(b)))
    buf.write(b)


def encode_checkpoint(sections: "OrderedDict[str, OrderedDict[str, np.ndarray]]", metadata: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(sections)))
    for name, arrays in sections.items():
        _pack_str(buf, name, "<H")
        buf.write(struct.pack("<I", len(arrays)))
        for key, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            _pack_str(buf, key, "<H")
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(blob: bytes):
    """Return ``(sections, metadata)``; raises ValidationError on any corruption."""
    if len(blob) < len(MAGIC) + 32 or blob[:len(MAGIC)] != MAGIC:
        raise ValidationError("not a checkpoint file (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ValidationError("checkpoint checksum mismatch")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, body, pos)
        pos += struct.calcsize(fmt)
        return vals

    version, meta_len = take("<II")
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    metadata = json.loads(body[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len

    def take_str(fmt):
        nonlocal pos
        (n,) = take(fmt)
        s = body[pos:pos + n].decode("utf-8")
        pos += n
        return s

    sections = OrderedDict()
    (n_sections,) = take("<I")
    for _ in range(n_sections):
        name = take_str("<H")
        (n_arrays,) = take("<I")
        arrays = OrderedDict()
        for _ in range(n_arrays):
            key = take_str("<H")
            (ndim,) = take("<B")
            shape = take(f"<{ndim}I") if ndim else ()
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            arrays[key] = arr.astype(np.float64)
        sections[name] = arrays
    if pos != len(body):
        raise ValidationError("trailing bytes in checkpoint")
    return sections, metadata


def save_checkpoint(path, predictor: BeamPredictor, extra_metadata: dict | None = None) -> bytes:
    metadata = {
        "variant": predictor.variant,
        "predictor": predictor.config.to_dict(),
        "feature_dim": predictor.feature_dim,
        "z_v_dim": predictor.visual_encoder.out_dim if predictor.visual_encoder else None,
    }
    metadata.update(extra_metadata or {})
    sections = OrderedDict((name, mod.state_dict()) for name, mod in predictor.sections().items())
    blob = encode_checkpoint(sections, metadata)
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def load_checkpoint(path) -> tuple[BeamPredictor, dict]:
    with open(path, "rb") as fh:
        sections, metadata = decode_checkpoint(fh.read())
    predictor = BeamPredictor(PredictorConfig(**metadata["predictor"]))
    mods = predictor.sections()
    if list(mods) != list(sections):
        raise ValidationError(f"checkpoint sections {list(sections)} do not match variant {predictor.variant}")
    for name, mod in mods.items():
        mod.load_state_dict(sections[name])
    return predictor, metadata
