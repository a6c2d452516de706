"""Mini-batch Adam training on cross-entropy, best-validation model selection, evaluation."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import (DatasetManifest, GpsNormalizer, ImagePreprocessor, PreparedSplit, SplitIndices,
                   prepare_split)
from .errors import NumericError, ValidationError
from .fusion import BeamPredictor, PredictorConfig
from .optim import Adam
from .position import PositionEncoderConfig
from .tensor import Tensor
from .visual import VisualEncoderConfig

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    variant: str = "fusion"
    eval_batch_size: int = 128
    position: PositionEncoderConfig = field(default_factory=PositionEncoderConfig)
    visual: VisualEncoderConfig = field(default_factory=VisualEncoderConfig)

    def __post_init__(self):
        if isinstance(self.position, dict):
            self.position = PositionEncoderConfig(**self.position)
        if isinstance(self.visual, dict):
            self.visual = VisualEncoderConfig(**self.visual)
        if self.learning_rate < 0 or self.weight_decay < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("learning_rate, weight_decay, epochs must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)

    def append(self, **entry) -> None:
        self.epochs.append(entry)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_top1", "seconds"])
        for e in self.epochs:
            w.writerow([e["epoch"], f"{e['train_loss']:.8f}", f"{e['val_loss']:.8f}",
                        f"{e['val_top1']:.6f}", f"{e['seconds']:.3f}"])
        return buf.getvalue()

    def losses(self, key: str = "train_loss") -> list[float]:
        return [e[key] for e in self.epochs]


@dataclass
class TrainResult:
    predictor: BeamPredictor
    log: TrainLog
    normalizer: GpsNormalizer
    best_epoch: int  # 0 means the initial weights


def _inputs(predictor: BeamPredictor, split: PreparedSplit, idx) -> tuple[Tensor | None, Tensor | None]:
    gps = Tensor(split.gps[idx]) if predictor.config.uses_position else None
    images = Tensor(split.images[idx]) if predictor.config.uses_vision else None
    return gps, images


def predict_logits(predictor: BeamPredictor, split: PreparedSplit, batch_size: int = 128) -> np.ndarray:
    out = []
    with T.no_grad():
        for start in range(0, len(split), batch_size):
            idx = np.arange(start, min(start + batch_size, len(split)))
            out.append(predictor(*_inputs(predictor, split, idx)).data)
    if not out:
        return np.zeros((0, predictor.config.n_beams))
    return np.concatenate(out)


def _loss_and_top1(logits: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    with T.no_grad():
        loss = T.cross_entropy(Tensor(logits), labels).item()
    top1 = float((np.argmax(logits, axis=1) == labels).mean())
    return loss, top1


def fit(predictor: BeamPredictor, train_split: PreparedSplit, val_split: PreparedSplit,
        config: TrainConfig) -> tuple[TrainLog, int]:
    """Train in place; on return the predictor holds the lowest-validation-loss weights.

    Returns the log and the selected epoch (0 = initial weights).
    """
    params = predictor.parameters()
    opt = Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    train_log = TrainLog()

    best_state = [p.data.copy() for p in params]
    best_loss, best_epoch = math.inf, 0
    if config.epochs > 0 and len(val_split):
        best_loss, _ = _loss_and_top1(predict_logits(predictor, val_split, config.eval_batch_size),
                                      val_split.labels)

    n = len(train_split)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            where = f"epoch {epoch}, batch {b} (samples {idx.tolist()})"
            try:
                logits = predictor(*_inputs(predictor, train_split, idx))
                loss = T.cross_entropy(logits, train_split.labels[idx])
            except NumericError as exc:
                raise NumericError(f"{exc} at {where}") from exc
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite loss at {where}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        train_loss = total / n
        if len(val_split):
            val_loss, val_top1 = _loss_and_top1(
                predict_logits(predictor, val_split, config.eval_batch_size), val_split.labels)
        else:
            val_loss, val_top1 = train_loss, float("nan")
        train_log.append(epoch=epoch, train_loss=train_loss, val_loss=val_loss, val_top1=val_top1,
                         seconds=time.perf_counter() - t0)
        log.info("epoch %d train_loss=%.4f val_loss=%.4f val_top1=%.3f",
                 epoch, train_loss, val_loss, val_top1)
        if val_loss < best_loss:
            best_loss, best_epoch = val_loss, epoch
            best_state = [p.data.copy() for p in params]

    for p, s in zip(params, best_state):
        p.data = s
    return train_log, best_epoch


def train(manifest: DatasetManifest, splits: SplitIndices, config: TrainConfig) -> TrainResult:
    """Fit preprocessing on the training split, build the predictor and optimize it."""
    if config.batch_size > len(splits.train):
        raise ValidationError(f"batch_size {config.batch_size} exceeds training set size {len(splits.train)}")
    normalizer = GpsNormalizer.fit(manifest.gps_array(splits.train))
    pcfg = PredictorConfig(variant=config.variant, n_beams=manifest.n_beams,
                           position=config.position, visual=config.visual)
    preprocessor = ImagePreprocessor(config.visual.image_size) if pcfg.uses_vision else None
    train_split = prepare_split(manifest, splits.train, normalizer, preprocessor)
    val_split = prepare_split(manifest, splits.validation, normalizer, preprocessor)
    predictor = BeamPredictor(pcfg, seed=config.seed)
    train_log, best_epoch = fit(predictor, train_split, val_split, config)
    return TrainResult(predictor=predictor, log=train_log, normalizer=normalizer, best_epoch=best_epoch)


@dataclass
class EvaluationBundle:
    indices: list[int]
    logits: np.ndarray
    labels: np.ndarray
    powers: np.ndarray


def evaluate(predictor: BeamPredictor, manifest: DatasetManifest, indices, normalizer: GpsNormalizer,
             batch_size: int = 128) -> EvaluationBundle:
    """Deterministic forward pass over ``indices`` bundled with labels and full power vectors."""
    if manifest.n_beams != predictor.config.n_beams:
        raise ValidationError(f"checkpoint predicts {predictor.config.n_beams} beams but manifest has K={manifest.n_beams}")
    preprocessor = ImagePreprocessor(predictor.config.visual.image_size) if predictor.config.uses_vision else None
    split = prepare_split(manifest, indices, normalizer, preprocessor)
    return EvaluationBundle(indices=list(indices), logits=predict_logits(predictor, split, batch_size),
                            labels=split.labels, powers=split.powers)
