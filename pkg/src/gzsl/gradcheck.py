"""Finite-difference verification of the analytic gradients.

Central differences with step h perturb every parameter entry of a small
mapper; the relative error against backpropagated gradients must stay
below a tolerance for both the seen-only and the joint+entropy losses.
Dropout makes the computation graph stochastic, so checking is refused
unless it is disabled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .linalg import Rng
from .model import MapperParams, ModelConfig, backward, forward, init_params
from .objectives import ProbModelConfig, RegConfig, loss_final, loss_seen
from .prototypes import PrototypeSet


@dataclass(frozen=True)
class GradCheckConfig:
    input_dim: int = 8
    embed_dim: int = 5
    hidden1: int = 16
    hidden2: int = 8
    num_seen: int = 3
    num_unseen: int = 2
    batch: int = 6
    temperature: float = 0.05
    lambda_ent: float = 0.1
    margin: float = 0.2
    dropout: float = 0.0
    step: float = 1e-5
    tolerance: float = 1e-4
    seed: int = 7


@dataclass
class GradCheckReport:
    max_rel_error_seen: float
    max_rel_error_final: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return (self.max_rel_error_seen < self.tolerance
                and self.max_rel_error_final < self.tolerance)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray,
                    floor: float = 1e-8) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(loss_fn, params: MapperParams, h: float) -> dict:
    """Central finite differences of loss_fn over every parameter entry."""
    grads = {}
    for name, arr in params.tensors():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = loss_fn(params)
            flat[i] = original - h
            down = loss_fn(params)
            flat[i] = original
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def _toy_instance(cfg: GradCheckConfig):
    rng = Rng(cfg.seed)
    model_cfg = ModelConfig(input_dim=cfg.input_dim, embed_dim=cfg.embed_dim,
                            hidden1=cfg.hidden1, hidden2=cfg.hidden2,
                            dropout=cfg.dropout)
    params = init_params(model_cfg, rng.derive(0))
    num_classes = cfg.num_seen + cfg.num_unseen
    proto = rng.derive(1).standard_normal((cfg.embed_dim, num_classes))
    seen_mask = np.zeros(num_classes, dtype=bool)
    seen_mask[: cfg.num_seen] = True
    protos = PrototypeSet(matrix=proto, class_ids=np.arange(num_classes),
                          seen_mask=seen_mask, domain="toy")
    x_real = rng.derive(2).standard_normal((cfg.batch, cfg.input_dim))
    y_real = rng.derive(3).integers(0, cfg.num_seen, cfg.batch)
    x_gen = rng.derive(4).standard_normal((cfg.batch, cfg.input_dim))
    y_gen = cfg.num_seen + rng.derive(5).integers(0, cfg.num_unseen, cfg.batch)
    return params, protos, x_real, y_real, x_gen, y_gen


def run_gradcheck(cfg: GradCheckConfig | None = None,
                  corrupt: bool = False) -> GradCheckReport:
    """Check backprop gradients of both losses on a toy mapper.

    ``corrupt`` perturbs one analytic gradient entry before comparison; it
    exists as a negative control so the harness itself can be validated.
    """
    cfg = cfg or GradCheckConfig()
    if cfg.dropout > 0:
        raise ValidationError(
            "gradient checking needs dropout disabled; the stochastic graph "
            "is not reproducible under parameter perturbation"
        )
    params, protos, x_real, y_real, x_gen, y_gen = _toy_instance(cfg)
    prob_seen = ProbModelConfig(temperature=cfg.temperature, class_universe="seen")
    prob_joint = ProbModelConfig(temperature=cfg.temperature, class_universe="joint")
    reg = RegConfig(margin=cfg.margin, lambda_ent=cfg.lambda_ent)

    def seen_loss(p: MapperParams) -> float:
        emb, _ = forward(p, x_real)
        return loss_seen(emb, y_real, protos, prob_seen).loss

    def final_loss(p: MapperParams) -> float:
        emb_r, _ = forward(p, x_real)
        emb_g, _ = forward(p, x_gen)
        return loss_final(emb_r, y_real, emb_g, y_gen, protos, prob_joint, reg).loss

    # Analytic gradients via the training path.
    emb_r, trace_r = forward(params, x_real, train=True)
    seen_result = loss_seen(emb_r, y_real, protos, prob_seen)
    analytic_seen = dict(backward(trace_r, seen_result.grad_embeddings, params).tensors())

    emb_g, trace_g = forward(params, x_gen, train=True)
    final_result = loss_final(emb_r, y_real, emb_g, y_gen, protos, prob_joint, reg)
    grads_r = backward(trace_r, final_result.grad_embeddings, params)
    grads_g = backward(trace_g, final_result.grad_embeddings_gen, params)
    analytic_final = {name: arr + dict(grads_g.tensors())[name]
                      for name, arr in grads_r.tensors()}
    if corrupt:
        analytic_final["w2"] = analytic_final["w2"].copy()
        analytic_final["w2"][0, 0] += 1e-3

    numeric_seen = numeric_gradient(seen_loss, params, cfg.step)
    numeric_final = numeric_gradient(final_loss, params, cfg.step)

    max_seen = max(float(relative_errors(analytic_seen[n], numeric_seen[n]).max())
                   for n in numeric_seen)
    max_final = max(float(relative_errors(analytic_final[n], numeric_final[n]).max())
                    for n in numeric_final)
    return GradCheckReport(max_rel_error_seen=max_seen,
                           max_rel_error_final=max_final,
                           tolerance=cfg.tolerance)
