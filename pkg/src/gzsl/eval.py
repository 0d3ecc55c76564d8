"""GZSL evaluation: calibrated stacking, per-class accuracies, the harmonic
mean, the gamma sweep, and report assembly.

Scores are cosine similarities divided by the same temperature used in
training; calibration subtracts a constant gamma from every seen-class
score before the argmax, which is equivalent to shifting the seen logits
inside the softmax.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import TEST, Dataset, SPLIT_NAMES
from .errors import ShapeError, ValidationError
from .linalg import EPS_NORM, as_matrix
from .model import MapperParams, forward
from .prototypes import PrototypeSet, average_linkage

GAMMA_GRID = np.linspace(0.0, 1.0, 41)

THREADS_ENV = "GZSL_THREADS"


@dataclass
class GzslReport:
    u: float
    s: float
    h: float
    gamma: float
    temperature: float
    linkage: float
    per_class: dict = field(default_factory=dict)
    split: str = "test"
    seed: int | None = None
    config: dict = field(default_factory=dict)
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "u": self.u,
            "s": self.s,
            "h": self.h,
            "gamma": self.gamma,
            "temperature": self.temperature,
            "linkage": self.linkage,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "split": self.split,
            "seed": self.seed,
            "config": self.config,
            "n_samples": self.n_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def harmonic_mean(s: float, u: float) -> float:
    """H = 2su / (s + u), defined as 0 when both accuracies vanish."""
    if s < 0 or u < 0:
        raise ValidationError(f"accuracies must be >= 0, got s={s} u={u}")
    if s + u == 0:
        return 0.0
    return 2.0 * s * u / (s + u)


def calibrated_predict(scores, seen_mask, gamma: float) -> np.ndarray:
    """Argmax over classes of (score - gamma * [class is seen]).

    Ties resolve to the lowest class index (columns are ordered by class
    id). Accepts one row or a batch; returns column indices.
    """
    scores = np.asarray(scores, dtype=np.float64)
    single = scores.ndim == 1
    if single:
        scores = scores[None, :]
    scores = as_matrix(scores, "scores")
    if scores.shape[1] == 0:
        raise ValidationError("empty score row")
    if gamma < 0:
        raise ValidationError(f"gamma must be >= 0, got {gamma}")
    mask = np.asarray(seen_mask, dtype=bool)
    if mask.shape != (scores.shape[1],):
        raise ShapeError(f"seen mask of length {mask.shape} does not match "
                         f"{scores.shape[1]} classes")
    adjusted = scores - gamma * mask.astype(np.float64)
    picks = np.argmax(adjusted, axis=1)
    return picks[0] if single else picks


def per_class_accuracy(predictions, labels, class_set) -> float:
    """Mean over classes of within-class top-1 accuracy, in percent.

    Every class in ``class_set`` must appear in ``labels`` at least once;
    class sizes do not weight the average.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ShapeError("predictions and labels must align")
    class_set = np.unique(np.asarray(class_set, dtype=np.int64))
    if class_set.size == 0:
        raise ValidationError("empty class set")
    accs = []
    for c in class_set:
        members = labels == c
        count = int(members.sum())
        if count == 0:
            raise ValidationError(f"class {int(c)} has no samples")
        accs.append((predictions[members] == c).sum() / count)
    return 100.0 * float(np.mean(accs))


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------
def _eval_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        n = int(raw) if raw else 1
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    return max(1, n)


def score_matrix(params: MapperParams, features, protos: PrototypeSet,
                 temperature: float) -> np.ndarray:
    """Temperature-scaled cosine scores of every sample against the joint
    prototype universe. Chunks are processed across GZSL_THREADS threads and
    concatenated in order, so results do not depend on the thread count."""
    if temperature <= 0:
        raise ValidationError(f"temperature must be > 0, got {temperature}")
    features = as_matrix(features, "features")
    proto_unit = protos.matrix / np.linalg.norm(protos.matrix, axis=0)

    def score_chunk(chunk):
        emb, _ = forward(params, chunk)
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        norms = np.maximum(norms, EPS_NORM)
        return (emb / norms) @ proto_unit / temperature

    threads = _eval_threads()
    n = features.shape[0]
    if threads == 1 or n < 2 * threads:
        return score_chunk(features)
    bounds = np.linspace(0, n, threads + 1, dtype=int)
    chunks = [features[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(score_chunk, chunks))
    return np.concatenate(parts, axis=0)


def evaluate(params: MapperParams, dataset: Dataset, protos: PrototypeSet,
             temperature: float, gamma: float, split_tag: int = TEST,
             seed: int | None = None, config: dict | None = None) -> GzslReport:
    """Score one split against the joint universe and assemble the report."""
    features, labels = dataset.subset(split_tag)
    if features.shape[0] == 0:
        raise ValidationError(f"empty {SPLIT_NAMES[split_tag]} split")
    missing = np.setdiff1d(np.unique(labels), protos.class_ids)
    if missing.size:
        raise ValidationError(f"labels without a prototype: {missing.tolist()}")

    scores = score_matrix(params, features, protos, temperature)
    picks = calibrated_predict(scores, protos.seen_mask, gamma)
    predicted_ids = protos.class_ids[picks]

    seen_present = np.intersect1d(np.unique(labels), protos.seen_ids)
    unseen_present = np.intersect1d(np.unique(labels), protos.unseen_ids)
    s = per_class_accuracy(predicted_ids, labels, seen_present) if seen_present.size else 0.0
    u = per_class_accuracy(predicted_ids, labels, unseen_present) if unseen_present.size else 0.0

    per_class = {}
    for c in np.unique(labels):
        members = labels == c
        per_class[int(c)] = 100.0 * float((predicted_ids[members] == c).mean())

    linkage = 0.0
    if protos.seen_ids.size and protos.unseen_ids.size:
        linkage = average_linkage(protos.seen_matrix, protos.unseen_matrix)

    return GzslReport(
        u=u, s=s, h=harmonic_mean(s, u), gamma=float(gamma),
        temperature=float(temperature), linkage=linkage, per_class=per_class,
        split=SPLIT_NAMES[split_tag], seed=seed, config=config or {},
        n_samples=int(features.shape[0]),
    )


def sweep_gamma(params: MapperParams, dataset: Dataset, protos: PrototypeSet,
                temperature: float, split_tag: int,
                gammas=GAMMA_GRID) -> list[dict]:
    """(gamma, u, s, H) rows over a gamma grid on one split."""
    features, labels = dataset.subset(split_tag)
    if features.shape[0] == 0:
        raise ValidationError(f"empty {SPLIT_NAMES[split_tag]} split")
    scores = score_matrix(params, features, protos, temperature)
    seen_present = np.intersect1d(np.unique(labels), protos.seen_ids)
    unseen_present = np.intersect1d(np.unique(labels), protos.unseen_ids)
    rows = []
    for gamma in gammas:
        picks = calibrated_predict(scores, protos.seen_mask, float(gamma))
        predicted_ids = protos.class_ids[picks]
        s = per_class_accuracy(predicted_ids, labels, seen_present) if seen_present.size else 0.0
        u = per_class_accuracy(predicted_ids, labels, unseen_present) if unseen_present.size else 0.0
        rows.append({"gamma": float(gamma), "u": u, "s": s, "h": harmonic_mean(s, u)})
    return rows


def select_gamma(sweep_rows: list[dict]) -> float:
    """Gamma with the highest H; the first (smallest) gamma wins ties."""
    if not sweep_rows:
        raise ValidationError("empty gamma sweep")
    best = max(sweep_rows, key=lambda r: r["h"])
    for row in sweep_rows:
        if row["h"] == best["h"]:
            return row["gamma"]
    return best["gamma"]
