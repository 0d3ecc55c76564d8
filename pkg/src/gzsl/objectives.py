"""Probabilistic model over class prototypes and the training objectives.

The model places a softmax over temperature-scaled cosine similarities
between embeddings and prototype columns. On top of it sit the seen-only
cross-entropy, the joint seen+unseen cross-entropy, directional (seen /
unseen) Shannon entropies, the margin hinge regularizers in both
directions, and the combined final loss. Every loss also returns its
analytic gradient with respect to the embeddings, which the trainer feeds
into the mapper's backward pass.

Low temperatures scale similarity gaps by 1/T (20x at T = 0.05), so all
softmax work happens in log space with max subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError, ShapeError, ValidationError
from .linalg import EPS_NORM, as_matrix
from .prototypes import PrototypeSet


@dataclass(frozen=True)
class ProbModelConfig:
    temperature: float = 0.05
    class_universe: str = "joint"  # "seen" or "joint"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")
        if self.class_universe not in ("seen", "joint"):
            raise ValidationError(f"unknown class universe {self.class_universe!r}")


@dataclass(frozen=True)
class RegConfig:
    margin: float = 0.2
    lambda_ent: float = 0.1
    # "both" applies the seen and unseen hinges; "seen"/"unseen" keep a
    # single direction (ablation support), "none" disables the term.
    direction: str = "both"

    def __post_init__(self):
        if self.margin < 0:
            raise ValidationError(f"margin must be >= 0, got {self.margin}")
        if self.lambda_ent < 0:
            raise ValidationError(f"lambda_ent must be >= 0, got {self.lambda_ent}")
        if self.direction not in ("both", "seen", "unseen", "none"):
            raise ValidationError(f"unknown regularizer direction {self.direction!r}")

    @property
    def use_seen(self) -> bool:
        return self.direction in ("both", "seen")

    @property
    def use_unseen(self) -> bool:
        return self.direction in ("both", "unseen")


@dataclass
class BatchLossResult:
    loss: float
    probabilities: np.ndarray
    grad_embeddings: np.ndarray
    probabilities_gen: np.ndarray | None = None
    grad_embeddings_gen: np.ndarray | None = None
    mean_hs_real: float | None = None
    mean_hs_gen: float | None = None
    mean_hu_real: float | None = None
    mean_hu_gen: float | None = None
    r_s: float | None = None
    r_u: float | None = None


# ---------------------------------------------------------------------------
# Scores and probabilities
# ---------------------------------------------------------------------------
def _unit_columns(matrix: np.ndarray) -> np.ndarray:
    return matrix / np.linalg.norm(matrix, axis=0)


def _cosine_scores(embeddings: np.ndarray, proto_unit: np.ndarray):
    """Row-wise cosine similarities against unit prototype columns.

    Returns (scores, unit_embeddings, row_norms); the latter two feed the
    backward pass.
    """
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    if np.any(norms < EPS_NORM):
        raise DegenerateVectorError("embedding row with (near-)zero norm")
    unit = embeddings / norms
    return unit @ proto_unit, unit, norms


def _scores_backward(d_scores: np.ndarray, proto_unit: np.ndarray,
                     scores: np.ndarray, unit: np.ndarray,
                     norms: np.ndarray) -> np.ndarray:
    # d cos(e, phi_c) / d e = (phi_c - cos * e/|e|) / |e|
    return (d_scores @ proto_unit.T - (d_scores * scores).sum(axis=1, keepdims=True) * unit) / norms


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def class_probabilities(embeddings, prototypes: PrototypeSet,
                        cfg: ProbModelConfig) -> np.ndarray:
    """Row-stochastic class probabilities for a batch of embeddings.

    Each row is softmax(cos(f(x), phi_c) / T) over the configured universe
    (seen prototypes only, or the seen+unseen union).
    """
    embeddings = as_matrix(embeddings, "embeddings")
    proto, _ = prototypes.universe(cfg.class_universe)
    if embeddings.shape[1] != proto.shape[0]:
        raise ShapeError(
            f"embedding dim {embeddings.shape[1]} vs prototype dim {proto.shape[0]}"
        )
    scores, _, _ = _cosine_scores(embeddings, _unit_columns(proto))
    return np.exp(_log_softmax(scores / cfg.temperature))


# ---------------------------------------------------------------------------
# Directional entropy and the margin hinges
# ---------------------------------------------------------------------------
def _entropy_terms(probs: np.ndarray) -> np.ndarray:
    # -p log p with the 0 log 0 := 0 convention (softmax can underflow to 0).
    out = np.zeros_like(probs)
    pos = probs > 0
    out[pos] = -probs[pos] * np.log(probs[pos])
    return out


def directional_entropy(probs_joint, subset_indices) -> float:
    """Subset-direction Shannon entropy of one probability row.

    H = (-1/|subset|) * sum_{c in subset} p_c log p_c, where the row spans
    the joint universe and the subset picks the seen or unseen positions.
    """
    row = np.asarray(probs_joint, dtype=np.float64)
    if row.ndim != 1:
        raise ShapeError("directional_entropy expects a single probability row")
    idx = np.asarray(subset_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValidationError("empty class subset")
    return float(_entropy_terms(row[idx]).sum() / idx.size)


def _entropy_rows(probs: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return _entropy_terms(probs[:, idx]).sum(axis=1) / idx.size


def _entropy_rows_grad(probs: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """d H_subset / d p over the full universe (zero outside the subset)."""
    grad = np.zeros_like(probs)
    sub = probs[:, idx]
    g = np.zeros_like(sub)
    pos = sub > 0
    g[pos] = -(np.log(sub[pos]) + 1.0) / idx.size
    grad[:, idx] = g
    return grad


def margin_regularizers(mean_hs_real: float, mean_hs_gen: float,
                        mean_hu_real: float, mean_hu_gen: float,
                        margin: float) -> tuple[float, float]:
    """Hinge penalties enforcing an entropy margin in both directions.

    R_s = [m + Hs(real) - Hs(gen)]_+ pushes seen-direction entropy of
    generated inputs above that of real inputs; R_u mirrors it for the
    unseen direction with the roles of real and generated swapped.
    """
    if margin < 0:
        raise ValidationError(f"margin must be >= 0, got {margin}")
    r_s = max(0.0, margin + mean_hs_real - mean_hs_gen)
    r_u = max(0.0, margin + mean_hu_gen - mean_hu_real)
    return r_s, r_u


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------
def _softmax_backward(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    # dL/dlogits given dL/dprobs for a row-wise softmax.
    return probs * (d_probs - (d_probs * probs).sum(axis=1, keepdims=True))


def loss_seen(embeddings, labels, prototypes: PrototypeSet,
              cfg: ProbModelConfig | None = None) -> BatchLossResult:
    """Mean cross-entropy of the seen-only probability model (stand-alone
    training), with the gradient w.r.t. the embeddings."""
    cfg = cfg or ProbModelConfig(class_universe="seen")
    embeddings = as_matrix(embeddings, "embeddings")
    proto, _ = prototypes.universe(cfg.class_universe)
    targets = prototypes.column_indices(labels, cfg.class_universe)
    if embeddings.shape[0] != targets.shape[0]:
        raise ShapeError("one label per embedding row required")
    if embeddings.shape[0] == 0:
        raise ValidationError("empty batch")

    proto_unit = _unit_columns(proto)
    scores, unit, norms = _cosine_scores(embeddings, proto_unit)
    logp = _log_softmax(scores / cfg.temperature)
    probs = np.exp(logp)
    n = embeddings.shape[0]
    loss = float(-logp[np.arange(n), targets].mean())

    d_logits = probs.copy()
    d_logits[np.arange(n), targets] -= 1.0
    d_scores = d_logits / (n * cfg.temperature)
    grad = _scores_backward(d_scores, proto_unit, scores, unit, norms)
    return BatchLossResult(loss=loss, probabilities=probs, grad_embeddings=grad)


def loss_final(embeddings_real, labels_real, embeddings_gen, labels_gen,
               prototypes: PrototypeSet, prob_cfg: ProbModelConfig,
               reg_cfg: RegConfig) -> BatchLossResult:
    """Joint cross-entropy plus the bidirectional entropy margin penalty.

    Real rows carry seen labels, generated rows carry unseen labels, and
    both are scored against the joint universe. Gradients flow through the
    cross-entropy terms, the directional entropies, and the hinges (with
    subgradient 0 at the kink), for the real and generated paths separately.
    """
    if prob_cfg.class_universe != "joint":
        raise ValidationError("loss_final requires the joint class universe")
    emb_r = as_matrix(embeddings_real, "embeddings_real")
    labels_real = np.asarray(labels_real, dtype=np.int64)
    if emb_r.shape[0] != labels_real.shape[0]:
        raise ShapeError("one label per real embedding row required")
    if emb_r.shape[0] == 0:
        raise ValidationError("empty real batch")
    seen_ids = set(int(c) for c in prototypes.seen_ids)
    if not set(labels_real.tolist()) <= seen_ids:
        raise ValidationError("real batch labels must be seen classes")

    emb_g = as_matrix(embeddings_gen, "embeddings_gen") if embeddings_gen is not None \
        and len(embeddings_gen) else np.zeros((0, emb_r.shape[1]))
    labels_gen = np.asarray(labels_gen, dtype=np.int64) if labels_gen is not None \
        else np.zeros(0, dtype=np.int64)
    if emb_g.shape[0] != labels_gen.shape[0]:
        raise ShapeError("one label per generated embedding row required")
    unseen_ids = set(int(c) for c in prototypes.unseen_ids)
    if not set(labels_gen.tolist()) <= unseen_ids:
        raise ValidationError("generated batch labels must be unseen classes")
    if emb_g.shape[0] == 0 and reg_cfg.lambda_ent > 0 and reg_cfg.direction != "none":
        raise ValidationError(
            "entropy regularization needs a non-empty generated batch"
        )

    proto, ids = prototypes.universe("joint")
    proto_unit = _unit_columns(proto)
    t = prob_cfg.temperature
    n = emb_r.shape[0]
    n_gen = emb_g.shape[0]
    idx_s = np.flatnonzero(prototypes.seen_mask)
    idx_u = np.flatnonzero(~prototypes.seen_mask)

    targets_r = prototypes.column_indices(labels_real, "joint")
    scores_r, unit_r, norms_r = _cosine_scores(emb_r, proto_unit)
    logp_r = _log_softmax(scores_r / t)
    probs_r = np.exp(logp_r)
    ce = float(-logp_r[np.arange(n), targets_r].mean())

    d_logits_r = probs_r.copy()
    d_logits_r[np.arange(n), targets_r] -= 1.0
    d_logits_r /= n

    if n_gen:
        targets_g = prototypes.column_indices(labels_gen, "joint")
        scores_g, unit_g, norms_g = _cosine_scores(emb_g, proto_unit)
        logp_g = _log_softmax(scores_g / t)
        probs_g = np.exp(logp_g)
        ce += float(-logp_g[np.arange(n_gen), targets_g].mean())
        d_logits_g = probs_g.copy()
        d_logits_g[np.arange(n_gen), targets_g] -= 1.0
        d_logits_g /= n_gen
    else:
        probs_g = np.zeros((0, proto.shape[1]))
        d_logits_g = np.zeros_like(probs_g)

    hs_r = _entropy_rows(probs_r, idx_s)
    hu_r = _entropy_rows(probs_r, idx_u) if idx_u.size else np.zeros(n)
    mean_hs_real = float(hs_r.mean())
    mean_hu_real = float(hu_r.mean())
    if n_gen:
        hs_g = _entropy_rows(probs_g, idx_s)
        hu_g = _entropy_rows(probs_g, idx_u) if idx_u.size else np.zeros(n_gen)
        mean_hs_gen = float(hs_g.mean())
        mean_hu_gen = float(hu_g.mean())
    else:
        mean_hs_gen = 0.0
        mean_hu_gen = 0.0

    r_s, r_u = margin_regularizers(mean_hs_real, mean_hs_gen,
                                   mean_hu_real, mean_hu_gen, reg_cfg.margin)
    reg = 0.0
    if reg_cfg.use_seen:
        reg += r_s
    if reg_cfg.use_unseen:
        reg += r_u
    loss = ce + reg_cfg.lambda_ent * reg

    # Hinge subgradients: weight on each sample's entropy, zero at the kink.
    lam = reg_cfg.lambda_ent
    w_s = lam if (reg_cfg.use_seen and r_s > 0) else 0.0
    w_u = lam if (reg_cfg.use_unseen and r_u > 0) else 0.0
    if lam > 0 and n_gen and (w_s or w_u):
        d_probs_r = (w_s / n) * _entropy_rows_grad(probs_r, idx_s)
        if idx_u.size:
            d_probs_r -= (w_u / n) * _entropy_rows_grad(probs_r, idx_u)
        d_probs_g = -(w_s / n_gen) * _entropy_rows_grad(probs_g, idx_s)
        if idx_u.size:
            d_probs_g += (w_u / n_gen) * _entropy_rows_grad(probs_g, idx_u)
        d_logits_r += _softmax_backward(probs_r, d_probs_r)
        d_logits_g += _softmax_backward(probs_g, d_probs_g)

    grad_r = _scores_backward(d_logits_r / t, proto_unit, scores_r, unit_r, norms_r)
    grad_g = None
    if n_gen:
        grad_g = _scores_backward(d_logits_g / t, proto_unit, scores_g, unit_g, norms_g)

    return BatchLossResult(
        loss=loss,
        probabilities=probs_r,
        grad_embeddings=grad_r,
        probabilities_gen=probs_g if n_gen else None,
        grad_embeddings_gen=grad_g,
        mean_hs_real=mean_hs_real,
        mean_hs_gen=mean_hs_gen,
        mean_hu_real=mean_hu_real,
        mean_hu_gen=mean_hu_gen,
        r_s=r_s,
        r_u=r_u,
    )
