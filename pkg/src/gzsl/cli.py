"""Command-line interface.

Subcommands: synth (write a synthetic dataset), train (either regime),
eval (score a checkpoint), linkage (bias diagnostic), swap (cross-domain
prototype regression), gradcheck (finite-difference verification).

Config precedence: explicit flags > --config JSON > --preset > defaults.
The fully resolved configuration is echoed into every artifact. Exit
codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .data import SynthConfig, load_dataset, load_generated, save_dataset, synth_generate
from .errors import DataFormatError, GzslError, NumericalError, ValidationError
from .eval import GAMMA_GRID, evaluate, select_gamma, sweep_gamma
from .gradcheck import GradCheckConfig, run_gradcheck
from .linalg import Rng, load_matrix, save_matrix
from .model import load_checkpoint
from .prototypes import (
    PrototypeSet,
    average_linkage,
    linkage_pairs,
    load_prototypes,
    save_prototypes,
    swap_unseen,
)
from .train import RunConfig, apply_preset, run_config_from_dict, save_run, train_model

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; map those onto the validation code.
    def error(self, message):
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _add_data_source(parser: argparse.ArgumentParser):
    parser.add_argument("--synth-config", help="JSON file with the synthetic task")
    parser.add_argument("--features", help="feature matrix (GZM1 or CSV)")
    parser.add_argument("--labels", help="labels, one integer per line")
    parser.add_argument("--prototypes", help="prototype matrix with JSON sidecar")
    parser.add_argument("--split", help="split tags, one integer per line")
    parser.add_argument("--gen-features", help="generated feature matrix")
    parser.add_argument("--gen-labels", help="generated labels")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gzsl", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--config", help="SynthConfig JSON file")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="train the mapper")
    _add_data_source(p_train)
    p_train.add_argument("--mode", choices=("standalone", "joint"), default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--momentum", type=float, default=None)
    p_train.add_argument("--batch", type=int, default=None)
    p_train.add_argument("--temperature", type=float, default=None)
    p_train.add_argument("--lambda-ent", type=float, default=None)
    p_train.add_argument("--margin", type=float, default=None)
    p_train.add_argument("--dropout", type=float, default=None)
    p_train.add_argument("--hidden1", type=int, default=None)
    p_train.add_argument("--hidden2", type=int, default=None)
    p_train.add_argument("--capacity-multiplier", type=int, default=None)
    p_train.add_argument("--lambda-beta", type=float, default=None)
    p_train.add_argument("--seed", default=None,
                         help="seed or comma-separated seed list")
    p_train.add_argument("--gamma", type=float, default=None,
                         help="fixed calibration; omit to sweep on validation")
    p_train.add_argument("--gamma-sweep", action="store_true",
                         help="select gamma on the validation split (default)")
    p_train.add_argument("--config", help="RunConfig JSON file")
    p_train.add_argument("--preset", choices=("low-lr",), default=None)
    p_train.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_data_source(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--temperature", type=float, default=None,
                        help="defaults to the run default 0.05")
    p_eval.add_argument("--gamma", type=float, default=None)
    p_eval.add_argument("--gamma-sweep", action="store_true")
    p_eval.add_argument("--out", default=None, help="output directory")

    p_link = sub.add_parser("linkage", help="seen/unseen average linkage")
    p_link.add_argument("--prototypes", required=True)
    p_link.add_argument("--sidecar", default=None)
    p_link.add_argument("--out", default=None, help="per-pair CSV path")

    p_swap = sub.add_parser("swap", help="regress unseen prototypes across domains")
    p_swap.add_argument("--proto-a", required=True,
                        help="domain-A prototypes (seen and unseen)")
    p_swap.add_argument("--proto-b", required=True,
                        help="domain-B prototypes (seen classes used for the fit)")
    p_swap.add_argument("--sidecar-a", default=None)
    p_swap.add_argument("--sidecar-b", default=None)
    p_swap.add_argument("--lambda-beta", type=float, default=1.0)
    p_swap.add_argument("--stacked", action="store_true",
                        help="també write domain-B seen plus regressed unseen")
    p_swap.add_argument("--out", required=True, help="output matrix path")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p_grad.add_argument("--dropout", type=float, default=0.0)
    p_grad.add_argument("--corrupt", action="store_true",
                        help="negative control: perturb one gradient entry")

    return parser


# ---------------------------------------------------------------------------
# Data loading shared by train/eval
# ---------------------------------------------------------------------------
def _resolve_data(args):
    if args.synth_config:
        cfg = SynthConfig.from_json(args.synth_config)
        dataset, generated, protos = synth_generate(cfg)
        return dataset, protos, generated, cfg
    required = ("features", "labels", "prototypes", "split")
    missing = [f"--{name}" for name in required if getattr(args, name) is None]
    if missing:
        raise ValidationError(
            f"need --synth-config or all of {', '.join('--' + n for n in required)}; "
            f"missing {', '.join(missing)}"
        )
    dataset, protos = load_dataset(args.features, args.labels, args.prototypes,
                                   args.split)
    generated = None
    if args.gen_features or args.gen_labels:
        if not (args.gen_features and args.gen_labels):
            raise ValidationError("--gen-features and --gen-labels go together")
        generated = load_generated(args.gen_features, args.gen_labels,
                                   protos.unseen_ids)
    return dataset, protos, generated, None


def _resolve_run_config(args) -> RunConfig:
    raw = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{args.config}: invalid JSON: {exc}") from exc
    cfg = run_config_from_dict(raw)
    if args.preset:
        cfg = apply_preset(cfg, args.preset)
    overrides = {
        "mode": args.mode,
        "epochs": args.epochs,
        "lr": args.lr,
        "momentum": args.momentum,
        "batch_size": args.batch,
        "temperature": args.temperature,
        "lambda_ent": args.lambda_ent,
        "margin": args.margin,
        "dropout": args.dropout,
        "hidden1": args.hidden1,
        "hidden2": args.hidden2,
        "capacity_multiplier": args.capacity_multiplier,
        "lambda_beta": args.lambda_beta,
        "gamma": args.gamma,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.seed is not None:
        overrides["seeds"] = tuple(int(s) for s in str(args.seed).split(","))
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _echo(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_sweep_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gamma", "u", "s", "h"])
        for row in rows:
            writer.writerow([repr(row["gamma"]), repr(row["u"]),
                             repr(row["s"]), repr(row["h"])])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_synth(args) -> int:
    cfg = SynthConfig.from_json(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    dataset, generated, protos = synth_generate(cfg)
    out = Path(args.out)
    save_dataset(out, dataset, protos, generated)
    cfg.to_json(out / "synth_config.json")
    print(f"wrote {dataset.num_samples} samples, "
          f"{generated.num_samples} generated samples, "
          f"{protos.num_classes} prototypes to {out}")
    return EXIT_OK


def _evaluate_run(result, dataset, protos, run_cfg, gamma_arg, out_dir, synth_cfg):
    config_echo = {"run": run_cfg.to_dict()}
    if synth_cfg is not None:
        config_echo["synth"] = json.loads(json.dumps(synth_cfg.__dict__))
    sweep_rows = None
    if gamma_arg is None:
        sweep_rows = sweep_gamma(result.params, dataset, protos,
                                 run_cfg.temperature, data_mod.VAL)
        gamma = select_gamma(sweep_rows)
    else:
        gamma = gamma_arg
    report = evaluate(result.params, dataset, protos, run_cfg.temperature,
                      gamma, data_mod.TEST, seed=result.seed, config=config_echo)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    if sweep_rows is not None:
        _write_sweep_csv(out_dir / "gamma_sweep.csv", sweep_rows)
    return report


def cmd_train(args) -> int:
    run_cfg = _resolve_run_config(args)
    dataset, protos, generated, synth_cfg = _resolve_data(args)
    if run_cfg.mode == "joint" and generated is None:
        raise ValidationError("joint mode needs --gen-features/--gen-labels "
                              "or a synthetic source")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo(out / "config.json", {"run": run_cfg.to_dict(),
                                "synth": synth_cfg.__dict__ if synth_cfg else None})
    reports = []
    for seed in run_cfg.seeds:
        seed_dir = out / f"seed_{seed}"
        try:
            result = train_model(dataset, protos, run_cfg, seed, generated)
        except NumericalError as err:
            last_good = getattr(err, "last_good", None)
            if last_good is not None:
                from .model import save_checkpoint
                save_checkpoint(seed_dir / "last_good",
                                last_good,
                                run_cfg.model_config(dataset.feature_dim, protos.dim),
                                seed=seed)
                print(f"seed {seed}: aborted ({err}); "
                      f"last good checkpoint in {seed_dir / 'last_good'}",
                      file=sys.stderr)
            raise
        save_run(seed_dir, result)
        report = _evaluate_run(result, dataset, protos, run_cfg, run_cfg.gamma,
                               seed_dir, synth_cfg)
        reports.append(report)
        print(f"seed {seed}: u={report.u:.2f} s={report.s:.2f} "
              f"h={report.h:.2f} gamma={report.gamma:.4f}")
    if len(reports) > 1:
        summary = {
            "seeds": list(run_cfg.seeds),
            "mean_u": float(np.mean([r.u for r in reports])),
            "mean_s": float(np.mean([r.s for r in reports])),
            "mean_h": float(np.mean([r.h for r in reports])),
        }
        _echo(out / "summary.json", summary)
        print(f"mean over {len(reports)} seeds: "
              f"u={summary['mean_u']:.2f} s={summary['mean_s']:.2f} "
              f"h={summary['mean_h']:.2f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, model_cfg, manifest = load_checkpoint(args.checkpoint)
    dataset, protos, _, synth_cfg = _resolve_data(args)
    if dataset.feature_dim != model_cfg.input_dim:
        raise ValidationError(
            f"data has {dataset.feature_dim} feature dims, "
            f"checkpoint expects {model_cfg.input_dim}"
        )
    if protos.dim != model_cfg.embed_dim:
        raise ValidationError(
            f"prototypes have dim {protos.dim}, checkpoint maps to "
            f"{model_cfg.embed_dim}"
        )
    temperature = args.temperature if args.temperature is not None else 0.05
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    config_echo = {"checkpoint": str(args.checkpoint),
                   "model": manifest.get("config", {}),
                   "synth": synth_cfg.__dict__ if synth_cfg else None}
    sweep_rows = None
    if args.gamma is None:
        sweep_rows = sweep_gamma(params, dataset, protos, temperature, data_mod.VAL)
        gamma = select_gamma(sweep_rows)
    else:
        gamma = args.gamma
    report = evaluate(params, dataset, protos, temperature, gamma,
                      data_mod.TEST, seed=manifest.get("seed"), config=config_echo)
    text = report.to_json()
    sys.stdout.write(text)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        fh.write(text)
    if sweep_rows is not None:
        _write_sweep_csv(out / "gamma_sweep.csv", sweep_rows)
    return EXIT_OK


def cmd_linkage(args) -> int:
    protos = load_prototypes(args.prototypes, args.sidecar)
    value = average_linkage(protos.seen_matrix, protos.unseen_matrix)
    print(f"average linkage: {value:.6f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seen_id", "unseen_id", "cosine"])
            for sid, uid, sim in linkage_pairs(protos):
                writer.writerow([sid, uid, repr(sim)])
    return EXIT_OK


def cmd_swap(args) -> int:
    protos_a = load_prototypes(args.proto_a, args.sidecar_a)
    protos_b = load_prototypes(args.proto_b, args.sidecar_b)
    if not np.array_equal(protos_a.seen_ids, protos_b.seen_ids):
        raise ValidationError("domain A and B seen classes must match")
    regressed = swap_unseen(protos_a.seen_matrix, protos_b.seen_matrix,
                            protos_a.unseen_matrix, args.lambda_beta)
    out = Path(args.out)
    if args.stacked:
        matrix = np.concatenate([protos_b.seen_matrix, regressed], axis=1)
        ids = np.concatenate([protos_b.seen_ids, protos_a.unseen_ids])
        mask = np.concatenate([np.ones(protos_b.seen_ids.size, dtype=bool),
                               np.zeros(protos_a.unseen_ids.size, dtype=bool)])
        stacked = PrototypeSet(matrix=matrix, class_ids=ids, seen_mask=mask,
                               domain=protos_b.domain)
        save_prototypes(out, stacked)
    else:
        unseen_only = PrototypeSet(
            matrix=regressed, class_ids=protos_a.unseen_ids,
            seen_mask=np.zeros(protos_a.unseen_ids.size, dtype=bool),
            domain=protos_b.domain)
        save_prototypes(out, unseen_only)
    print(f"wrote regressed prototypes ({regressed.shape[0]}x{regressed.shape[1]}) "
          f"to {out} (lambda_beta={args.lambda_beta})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = GradCheckConfig(dropout=args.dropout)
    report = run_gradcheck(cfg, corrupt=args.corrupt)
    print(f"max relative error, seen-only loss: {report.max_rel_error_seen:.3e}")
    print(f"max relative error, joint+entropy loss: {report.max_rel_error_final:.3e}")
    print(f"tolerance: {report.tolerance:.1e} -> "
          f"{'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_NUMERICAL


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "linkage": cmd_linkage,
    "swap": cmd_swap,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, OSError, DataFormatError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, GzslError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
