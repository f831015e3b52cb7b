"""Command-line entry point: preprocess, train, eval, inspect.

Every flag mirrors a RunConfig key (``--max-epochs`` <-> ``max_epochs``);
values may also come from a ``--config`` file or TKGE_* environment
variables, with precedence flags > env > file > defaults.  All commands are
deterministic given identical inputs, config, and seed (``--threads 1``),
exit 0 on success and nonzero on any validated failure, and write artifacts
atomically (write-then-rename).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import data as datamod
from .config import RunConfig, format_config, resolve
from .errors import ConfigError, TkgeError
from .evaluation import build_filter_index, evaluate
from .io import atomic_write
from .model import ModelConfig
from .training import (
    TrainConfig,
    check_compatible,
    load_checkpoint,
    save_checkpoint,
    train,
)

logger = logging.getLogger(__name__)

_FLAGS = {
    "preprocess": ["train_file", "valid_file", "test_file", "file_format",
                   "granularity", "n_bins", "reciprocal", "out_dir"],
    "train": ["bundle", "out_dir", "dim", "variant", "c_min", "c_max", "lr",
              "batch_size", "negatives", "margin", "adv_temp", "max_epochs",
              "patience", "eval_every", "seed", "reciprocal", "threads", "resume"],
    "eval": ["checkpoint", "bundle", "split", "raw_setting", "dump_ranks", "threads"],
    "inspect": ["checkpoint", "bundle", "out_dir"],
}


def _add_flags(parser: argparse.ArgumentParser, keys: list[str]) -> None:
    parser.add_argument("--config", default=None, help="key = value config file")
    booleans = {"reciprocal", "raw_setting"}
    defaults = RunConfig()
    for key in keys:
        flag = "--" + key.replace("_", "-")
        default = getattr(defaults, key)
        if key in booleans:
            parser.add_argument(flag, dest=key, default=None,
                                action=argparse.BooleanOptionalAction,
                                help=f"(default {default})")
        else:
            parser.add_argument(flag, dest=key, default=None, type=str,
                                help=f"(default {default!r})")


def _resolve(args: argparse.Namespace, command: str) -> RunConfig:
    from .config import coerce

    overrides = {}
    for key in _FLAGS[command]:
        value = getattr(args, key)
        if value is None:
            continue
        overrides[key] = value if isinstance(value, bool) else coerce(key, value)
    return resolve(file_path=args.config, overrides=overrides)


def _read_facts(path: str, file_format: str) -> list[datamod.RawFact]:
    from .errors import DataError, ParseError

    with open(path, encoding="utf-8") as f:
        lines = f.readlines()
    if file_format == "auto":
        first = next((ln for ln in lines if ln.strip()), None)
        if first is None:
            raise DataError(f"{path} is empty")
        file_format = "interval" if len(first.rstrip("\n").split("\t")) == 5 else "point"
    try:
        if file_format == "point":
            return datamod.parse_point_file(lines)
        return datamod.parse_interval_file(lines)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None


def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "preprocess")
    for key in ("train_file", "valid_file", "test_file", "out_dir"):
        if not getattr(cfg, key):
            raise ConfigError(f"preprocess requires {key}")
    splits = {}
    digests = {}
    for name in ("train", "valid", "test"):
        path = getattr(cfg, f"{name}_file")
        splits[name] = _read_facts(path, cfg.file_format)
        digests[name] = {"path": os.path.basename(path), "sha256": datamod.file_digest(path)}
    n_bins = cfg.n_bins if cfg.n_bins > 0 else None
    bundle = datamod.assemble_bundle(
        splits["train"], splits["valid"], splits["test"],
        granularity=cfg.granularity, n_bins=n_bins, reciprocal=cfg.reciprocal,
        provenance={"sources": digests,
                    "binning": {"granularity": cfg.granularity, "n_bins": n_bins}},
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    datamod.save_bundle(bundle, os.path.join(cfg.out_dir, "bundle.json"))
    vocab = bundle.vocabulary
    stats = [
        ("entities", vocab.n_entities),
        ("relations", vocab.n_relations),
        ("time_steps", vocab.timeline.n_steps),
        ("train", bundle.train.shape[0]),
        ("valid", bundle.valid.shape[0]),
        ("test", bundle.test.shape[0]),
    ]
    report = "".join(f"{k}\t{v}\n" for k, v in stats)
    atomic_write(os.path.join(cfg.out_dir, "stats.tsv"), report)
    sys.stdout.write(report)
    return 0


def _model_config(cfg: RunConfig, vocab: datamod.Vocabulary) -> ModelConfig:
    return ModelConfig(
        n_entities=vocab.n_entities,
        n_relations=vocab.n_relation_slots,
        n_steps=vocab.timeline.n_steps,
        dim=cfg.dim,
        variant=cfg.variant,
        c_min=cfg.c_min,
        c_max=cfg.c_max,
    )


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=cfg.lr, batch_size=cfg.batch_size, negatives=cfg.negatives,
        margin=cfg.margin, adv_temp=cfg.adv_temp, max_epochs=cfg.max_epochs,
        patience=cfg.patience, eval_every=cfg.eval_every, seed=cfg.seed,
        reciprocal=cfg.reciprocal, variant=cfg.variant,
    )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "train")
    if not cfg.bundle or not cfg.out_dir:
        raise ConfigError("train requires --bundle and --out-dir")
    bundle = datamod.load_bundle(cfg.bundle)
    model_config = _model_config(cfg, bundle.vocabulary)
    train_config = _train_config(cfg)
    resume = load_checkpoint(cfg.resume) if cfg.resume else None
    os.makedirs(cfg.out_dir, exist_ok=True)
    atomic_write(os.path.join(cfg.out_dir, "config.used"), format_config(cfg))
    log_path = os.path.join(cfg.out_dir, "train.log")
    with open(log_path, "a", encoding="utf-8") as log:
        result = train(
            bundle, model_config, train_config, log=log, resume=resume,
            checkpoint_path=os.path.join(cfg.out_dir, "last.ckpt"),
            threads=cfg.threads,
        )
    save_checkpoint(result.best, os.path.join(cfg.out_dir, "best.ckpt"))
    save_checkpoint(result.final, os.path.join(cfg.out_dir, "last.ckpt"))
    best_mrr = result.best.best_valid_mrr
    mrr_text = f"{best_mrr:.4f}" if best_mrr is not None else "n/a"
    sys.stdout.write(
        f"trained {result.final.epoch} epochs, best validation MRR {mrr_text}\n"
        f"checkpoints written to {cfg.out_dir}\n"
    )
    return 0


def _load_pair(cfg: RunConfig):
    if not cfg.checkpoint or not cfg.bundle:
        raise ConfigError("this command requires --checkpoint and --bundle")
    ckpt = load_checkpoint(cfg.checkpoint)
    bundle = datamod.load_bundle(cfg.bundle)
    check_compatible(ckpt, bundle.vocabulary)
    return ckpt, bundle


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "eval")
    ckpt, bundle = _load_pair(cfg)
    facts = bundle.split(cfg.split)
    filter_index = build_filter_index(bundle)
    collect = [] if cfg.dump_ranks else None
    metrics = evaluate(
        ckpt.params, facts, filter_index,
        reciprocal=ckpt.train_config.reciprocal,
        filtered=not cfg.raw_setting,
        threads=cfg.threads,
        collect=collect,
    )
    if cfg.dump_ranks:
        lines = [
            f"{r.direction}\t{r.fact.s}\t{r.fact.p}\t{r.fact.o}"
            f"\t{r.fact.t_start}\t{r.fact.t_end}\t{r.rank}\n"
            for r in collect
        ]
        atomic_write(cfg.dump_ranks, "".join(lines))
    sys.stdout.write(metrics.report())
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "inspect")
    ckpt, bundle = _load_pair(cfg)
    params = ckpt.params
    vocab = bundle.vocabulary
    lines = ["relation\talpha_abs\tbeta_mean_abs\tomega_mean_abs\n"]
    for p, label in enumerate(vocab.relations):  # base relations only, no inverses
        alpha = abs(float(params.rel_alpha[p]))
        beta = float(np.mean(np.abs(params.rel_beta[p])))
        omega = float(np.mean(np.abs(params.rel_omega[p])))
        lines.append(f"{label}\t{alpha:.6f}\t{beta:.6f}\t{omega:.6f}\n")
    table = "".join(lines)
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        atomic_write(os.path.join(cfg.out_dir, "relations.tsv"), table)
    sys.stdout.write(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tkge",
        description="Temporal KG embeddings: Gaussian entities/relations with "
                    "additive time-series means.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "preprocess": (cmd_preprocess, "parse fact files into a dataset bundle"),
        "train": (cmd_train, "train a model on a preprocessed bundle"),
        "eval": (cmd_eval, "rank link-prediction queries and report MRR/Hits@k"),
        "inspect": (cmd_inspect, "dump per-relation evolution parameters"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        _add_flags(p, _FLAGS[name])
        p.set_defaults(fn=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.fn(args)
    except TkgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
