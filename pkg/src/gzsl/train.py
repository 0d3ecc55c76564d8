"""Training loops for the stand-alone (seen-only) and joint (seen plus
generated unseen) regimes, run configuration handling, and JSON-lines
epoch logging.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field, fields, replace
from pathlib import Path

import numpy as np

from .data import (
    TRAIN,
    Dataset,
    GeneratedCycler,
    GeneratedSet,
    SynthConfig,
    batch_iter,
)
from .errors import NumericalError, ValidationError
from .linalg import Rng
from .model import (
    MapperParams,
    ModelConfig,
    add_grads,
    backward,
    forward,
    init_params,
    save_checkpoint,
)
from .objectives import ProbModelConfig, RegConfig, loss_final, loss_seen
from .optimizer import OptState, ScheduleConfig, cosine_lr, step
from .prototypes import PrototypeSet


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one training/evaluation run."""

    mode: str = "standalone"  # "standalone" or "joint"
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.01
    eta_min: float = 0.0
    momentum: float = 0.9
    temperature: float = 0.05
    lambda_ent: float = 0.1
    margin: float = 0.2
    reg_direction: str = "both"
    lambda_beta: float = 1.0
    hidden1: int = 2048
    hidden2: int = 1024
    dropout: float = 0.5
    capacity_multiplier: int = 1
    gamma: float | None = None  # None selects gamma by validation sweep
    seeds: tuple = (0,)
    synth: SynthConfig | None = None

    def __post_init__(self):
        if self.mode not in ("standalone", "joint"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not self.seeds:
            raise ValidationError("at least one seed required")

    def model_config(self, input_dim: int, embed_dim: int) -> ModelConfig:
        return ModelConfig(
            input_dim=input_dim, embed_dim=embed_dim,
            hidden1=self.hidden1, hidden2=self.hidden2,
            dropout=self.dropout, capacity_multiplier=self.capacity_multiplier,
        )

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(lr0=self.lr, eta_min=self.eta_min, momentum=self.momentum)

    def prob_config(self, universe: str) -> ProbModelConfig:
        return ProbModelConfig(temperature=self.temperature, class_universe=universe)

    def reg_config(self) -> RegConfig:
        return RegConfig(margin=self.margin, lambda_ent=self.lambda_ent,
                         direction=self.reg_direction)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["seeds"] = list(self.seeds)
        return out


def apply_preset(cfg: RunConfig, preset: str) -> RunConfig:
    """Named hyper-parameter variants. ``low-lr`` drops the learning rate to
    1e-4 and raises the entropy weight to 0.5 with the margin unchanged."""
    if preset == "low-lr":
        return replace(cfg, lr=0.0001, lambda_ent=0.5)
    raise ValidationError(f"unknown preset {preset!r}")


def run_config_from_dict(raw: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config fields: {sorted(unknown)}")
    raw = dict(raw)
    if isinstance(raw.get("synth"), dict):
        raw["synth"] = SynthConfig(**raw["synth"])
    if "seeds" in raw:
        raw["seeds"] = tuple(int(s) for s in raw["seeds"])
    return RunConfig(**raw)


@dataclass
class TrainResult:
    params: MapperParams
    config: RunConfig
    model_config: ModelConfig
    seed: int
    log: list = field(default_factory=list)


def _epoch_record(epoch: int, totals: dict, batches: int, lr_now: float) -> dict:
    record = {"epoch": epoch, "lr": lr_now}
    for key, value in totals.items():
        record[key] = value / batches if batches else 0.0
    return record


def train_model(dataset: Dataset, protos: PrototypeSet, cfg: RunConfig,
                seed: int, generated: GeneratedSet | None = None) -> TrainResult:
    """Run one training regime to completion.

    Stand-alone mode minimizes the seen-only cross-entropy; joint mode
    draws an equal-size generated batch per step and minimizes the joint
    cross-entropy plus the entropy-margin penalty. Raises NumericalError on
    a non-finite loss, keeping ``last_good`` parameters on the exception.
    """
    if cfg.mode == "joint":
        if generated is None:
            raise ValidationError("joint mode needs a generated set")
        generated.validate_against(protos.unseen_ids)

    x_train, _ = dataset.subset(TRAIN)
    if x_train.shape[0] == 0:
        raise ValidationError("empty train split")
    model_cfg = cfg.model_config(dataset.feature_dim, protos.dim)
    rng = Rng(seed)
    params = init_params(model_cfg, rng.derive(1))
    dropout_rng = rng.derive(2)

    batches_per_epoch = -(-x_train.shape[0] // cfg.batch_size)
    total_steps = max(1, cfg.epochs * batches_per_epoch)
    state = OptState.init(params, total_steps)
    schedule = cfg.schedule_config()
    prob_cfg = cfg.prob_config("seen" if cfg.mode == "standalone" else "joint")
    reg_cfg = cfg.reg_config()
    cycler = GeneratedCycler(generated, rng.derive(3)) if cfg.mode == "joint" else None

    log: list[dict] = []
    last_good = params.copy()
    for epoch in range(cfg.epochs):
        totals: dict[str, float] = {}
        batches = 0
        for x, y in batch_iter(dataset, cfg.batch_size, rng, epoch):
            embeddings, trace = forward(params, x, train=True,
                                        dropout=cfg.dropout, rng=dropout_rng)
            if cfg.mode == "standalone":
                result = loss_seen(embeddings, y, protos, prob_cfg)
                grads = backward(trace, result.grad_embeddings, params)
            else:
                gx, gy = cycler.next_batch(x.shape[0])
                emb_gen, trace_gen = forward(params, gx, train=True,
                                             dropout=cfg.dropout, rng=dropout_rng)
                result = loss_final(embeddings, y, emb_gen, gy, protos,
                                    prob_cfg, reg_cfg)
                grads = backward(trace, result.grad_embeddings, params)
                grads = add_grads(grads, backward(trace_gen,
                                                  result.grad_embeddings_gen, params))
            if not np.isfinite(result.loss):
                err = NumericalError(
                    f"non-finite loss at epoch {epoch}, step {state.step_count}"
                )
                err.last_good = last_good  # type: ignore[attr-defined]
                raise err
            totals["loss"] = totals.get("loss", 0.0) + result.loss
            if cfg.mode == "joint":
                for key, value in (("h_s_real", result.mean_hs_real),
                                   ("h_s_gen", result.mean_hs_gen),
                                   ("h_u_real", result.mean_hu_real),
                                   ("h_u_gen", result.mean_hu_gen),
                                   ("r_s", result.r_s), ("r_u", result.r_u)):
                    totals[key] = totals.get(key, 0.0) + value
            lr_now = cosine_lr(schedule, state.step_count, total_steps)
            step(params, grads, state, schedule)
            batches += 1
        log.append(_epoch_record(epoch, totals, batches, lr_now))
        last_good = params.copy()
    return TrainResult(params=params, config=cfg, model_config=model_cfg,
                       seed=seed, log=log)


def write_log(path, log: list[dict]) -> None:
    """One JSON record per epoch, keys sorted for reproducible bytes."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def save_run(directory, result: TrainResult) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    checkpoint_dir = directory / "checkpoint"
    save_checkpoint(checkpoint_dir, result.params, result.model_config,
                    seed=result.seed, epoch=result.config.epochs)
    write_log(directory / "train_log.jsonl", result.log)
    with open(directory / "config.json", "w", encoding="utf-8") as fh:
        json.dump(result.config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return checkpoint_dir
