"""The mapper f: a 3-layer perceptron from feature space into the semantic
embedding space, with ReLU hidden layers, inverted dropout, and hand-rolled
reverse-mode gradients.

Checkpoints are directories holding one GZM1 file per tensor plus a JSON
manifest with the configuration, seed, and epoch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ShapeError, ValidationError
from .linalg import Rng, as_matrix, load_matrix, save_matrix


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    embed_dim: int
    hidden1: int = 2048
    hidden2: int = 1024
    dropout: float = 0.5
    capacity_multiplier: int = 1

    def __post_init__(self):
        for name in ("input_dim", "embed_dim", "hidden1", "hidden2"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.capacity_multiplier not in (1, 2):
            raise ValidationError("capacity_multiplier must be 1 or 2")

    @property
    def h1(self) -> int:
        return self.hidden1 * self.capacity_multiplier

    @property
    def h2(self) -> int:
        return self.hidden2 * self.capacity_multiplier


@dataclass
class MapperParams:
    """Weights and biases of the three linear layers (W: out x in)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def tensors(self):
        """Ordered (name, array) pairs; the canonical tensor ordering."""
        return (
            ("w1", self.w1), ("b1", self.b1),
            ("w2", self.w2), ("b2", self.b2),
            ("w3", self.w3), ("b3", self.b3),
        )

    def copy(self) -> "MapperParams":
        return MapperParams(**{name: arr.copy() for name, arr in self.tensors()})

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.w3.shape[0]


# Gradients share the container layout with the parameters.
MapperGrads = MapperParams


@dataclass
class ForwardTrace:
    """Intermediate values recorded by a train-mode forward pass."""

    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    mask1: np.ndarray | None = None
    mask2: np.ndarray | None = None


def init_params(config: ModelConfig, rng: Rng) -> MapperParams:
    """Zero-mean normal weights scaled by sqrt(2 / fan_in); zero biases.

    The draw order (w1, w2, w3) is fixed, so equal seeds give identical
    parameters.
    """
    d, a, h1, h2 = config.input_dim, config.embed_dim, config.h1, config.h2
    w1 = rng.standard_normal((h1, d)) * np.sqrt(2.0 / d)
    w2 = rng.standard_normal((h2, h1)) * np.sqrt(2.0 / h1)
    w3 = rng.standard_normal((a, h2)) * np.sqrt(2.0 / h2)
    return MapperParams(
        w1=w1, b1=np.zeros(h1),
        w2=w2, b2=np.zeros(h2),
        w3=w3, b3=np.zeros(a),
    )


def _dropout_mask(shape, rate: float, rng: Rng) -> np.ndarray:
    # Inverted dropout: kept units are scaled by 1/(1-rate) at train time,
    # so the eval path needs no rescaling.
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


def forward(
    params: MapperParams,
    x_batch,
    *,
    train: bool = False,
    dropout: float = 0.0,
    rng: Rng | None = None,
) -> tuple[np.ndarray, ForwardTrace | None]:
    """Map a batch of feature rows to embedding rows.

    In eval mode (train=False) dropout is skipped and no trace is recorded;
    the result is a pure function of (params, x_batch). In train mode a
    ForwardTrace for backward() is returned; dropout masks are drawn from
    ``rng`` when ``dropout`` > 0.
    """
    x = as_matrix(x_batch, "x_batch")
    if x.shape[1] != params.input_dim:
        raise ShapeError(
            f"input has {x.shape[1]} columns, model expects {params.input_dim}"
        )
    use_dropout = train and dropout > 0.0
    if use_dropout and rng is None:
        raise ValidationError("train-mode forward with dropout needs an rng")

    z1 = x @ params.w1.T + params.b1
    a1 = np.maximum(z1, 0.0)
    mask1 = None
    if use_dropout:
        mask1 = _dropout_mask(a1.shape, dropout, rng)
        a1 = a1 * mask1

    z2 = a1 @ params.w2.T + params.b2
    a2 = np.maximum(z2, 0.0)
    mask2 = None
    if use_dropout:
        mask2 = _dropout_mask(a2.shape, dropout, rng)
        a2 = a2 * mask2

    embeddings = a2 @ params.w3.T + params.b3
    if not train:
        return embeddings, None
    return embeddings, ForwardTrace(x=x, z1=z1, a1=a1, z2=z2, a2=a2,
                                    mask1=mask1, mask2=mask2)


def backward(trace: ForwardTrace, grad_embeddings, params: MapperParams) -> MapperGrads:
    """Accumulate parameter gradients for a recorded forward pass.

    ``grad_embeddings`` is dL/d(embeddings) for the same batch. Dropout
    masks stored in the trace are reused, so the gradient matches the exact
    stochastic forward pass.
    """
    de = as_matrix(grad_embeddings, "grad_embeddings")
    if de.shape != (trace.x.shape[0], params.embed_dim):
        raise ShapeError(
            f"grad_embeddings shape {de.shape} does not match batch "
            f"{trace.x.shape[0]} x embed_dim {params.embed_dim}"
        )
    if trace.a2.shape[1] != params.w3.shape[1]:
        raise ShapeError("trace does not match params (hidden2 width differs)")
    if trace.a1.shape[1] != params.w2.shape[1]:
        raise ShapeError("trace does not match params (hidden1 width differs)")

    gw3 = de.T @ trace.a2
    gb3 = de.sum(axis=0)
    da2 = de @ params.w3
    if trace.mask2 is not None:
        da2 = da2 * trace.mask2
    dz2 = da2 * (trace.z2 > 0.0)

    gw2 = dz2.T @ trace.a1
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ params.w2
    if trace.mask1 is not None:
        da1 = da1 * trace.mask1
    dz1 = da1 * (trace.z1 > 0.0)

    gw1 = dz1.T @ trace.x
    gb1 = dz1.sum(axis=0)
    return MapperGrads(w1=gw1, b1=gb1, w2=gw2, b2=gb2, w3=gw3, b3=gb3)


def add_grads(a: MapperGrads, b: MapperGrads) -> MapperGrads:
    return MapperGrads(**{name: arr + dict(b.tensors())[name] for name, arr in a.tensors()})


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
def save_checkpoint(directory, params: MapperParams, config: ModelConfig,
                    seed: int | None = None, epoch: int | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "gzsl-checkpoint-v1",
        "config": asdict(config),
        "seed": seed,
        "epoch": epoch,
        "tensors": {},
    }
    for name, arr in params.tensors():
        mat = arr if arr.ndim == 2 else arr.reshape(1, -1)
        save_matrix(directory / f"{name}.gzm", mat)
        manifest["tensors"][name] = list(arr.shape)
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory) -> tuple[MapperParams, ModelConfig, dict]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    config = ModelConfig(**manifest["config"])
    arrays = {}
    for name, shape in manifest["tensors"].items():
        mat = load_matrix(directory / f"{name}.gzm")
        arrays[name] = mat.reshape(shape)
    params = MapperParams(**arrays)
    return params, config, manifest
