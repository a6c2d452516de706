"""Top-k accuracy, average power loss and search-space reduction."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NumericError, ValidationError

APL_CONVENTION = "best measured power among the top-k predicted beams"
ACCURACY_CONVENTION = "ground-truth beam contained in the top-k predicted set"


def _check_k(k: int, n_beams: int) -> None:
    if not 1 <= k <= n_beams:
        raise ValidationError(f"k={k} outside [1, {n_beams}]")


def top_k_accuracy(predictions, labels, k: int, n_beams: int | None = None) -> float:
    """Fraction of samples whose label is among the first ``k`` ranked predictions."""
    preds = np.asarray(predictions)
    labels = np.asarray(labels)
    _check_k(k, n_beams if n_beams is not None else preds.shape[1])
    if k > preds.shape[1]:
        raise ValidationError(f"rankings hold only {preds.shape[1]} beams, k={k}")
    return float((preds[:, :k] == labels[:, None]).any(axis=1).mean())


def average_power_loss_db(predictions, power_vectors, labels, p_o: float, k: int) -> float:
    """-10 log10 of the mean noise-referenced power ratio between the best of the top-k beams and the true beam."""
    preds = np.asarray(predictions)
    powers = np.asarray(power_vectors, dtype=np.float64)
    labels = np.asarray(labels)
    _check_k(k, powers.shape[1])
    rows = np.arange(len(labels))
    p_gt = powers[rows, labels]
    denom = p_gt - p_o
    bad = np.flatnonzero(denom <= 0)
    if bad.size:
        raise ValidationError(f"sample {int(bad[0])}: ground-truth power {p_gt[bad[0]]} does not exceed p_o={p_o}")
    p_hat = np.take_along_axis(powers, preds[:, :k], axis=1).max(axis=1)
    ratio = float(np.mean((p_hat - p_o) / denom))
    if ratio <= 0:
        raise NumericError(f"mean power ratio {ratio} is not positive; APL undefined")
    return -10.0 * math.log10(ratio)


def search_space_reduction(n_beams: int, k: int) -> float:
    _check_k(k, n_beams)
    return (n_beams - k) / n_beams


@dataclass
class MetricsReport:
    ks: list[int]
    accuracy: list[float]
    apl_db: list[float]
    reduction: list[float]
    n_test: int
    n_beams: int
    variant: str = ""
    provenance: dict = field(default_factory=dict)
    conventions: dict = field(default_factory=lambda: {"accuracy": ACCURACY_CONVENTION, "apl": APL_CONVENTION})

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "accuracy", "apl_db", "reduction"])
        for row in zip(self.ks, self.accuracy, self.apl_db, self.reduction):
            k, acc, apl, red = row
            w.writerow([k, f"{acc:.6f}", f"{apl:.6f}", f"{100 * red:.2f}"])
        return buf.getvalue()


def compute_report(logits, labels, power_vectors, p_o: float, k_max: int = 15,
                   variant: str = "", provenance: dict | None = None) -> MetricsReport:
    logits = np.asarray(logits, dtype=np.float64)
    n_beams = logits.shape[1]
    k_max = min(k_max, n_beams)
    ranking = np.argsort(-logits, axis=1, kind="stable")
    ks = list(range(1, k_max + 1))
    return MetricsReport(
        ks=ks,
        accuracy=[top_k_accuracy(ranking, labels, k) for k in ks],
        apl_db=[average_power_loss_db(ranking, power_vectors, labels, p_o, k) for k in ks],
        reduction=[search_space_reduction(n_beams, k) for k in ks],
        n_test=int(len(labels)),
        n_beams=int(n_beams),
        variant=variant,
        provenance=provenance or {},
    )
