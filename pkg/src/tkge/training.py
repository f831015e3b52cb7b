"""Negative-sampling training with self-adversarial weighting and sparse Adam.

Each iteration draws a minibatch of positive quadruples, corrupts subject or
object to make eta negatives per positive, and minimizes

    sum_pos [ -log sigmoid(margin - f(pos))
              - sum_j w_j * log sigmoid(f(neg_j) - margin) ]

where f is the variant's score (lower = more plausible) and the w_j are a
softmax over negative plausibility (treated as constants, not differentiated).
After every Adam step the unit-norm and covariance constraints are re-applied,
so the parameter invariants hold after every iteration.  Training stops at
max_epochs or after ``patience`` validations without an MRR improvement.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, asdict
from typing import IO

import numpy as np

from . import rng as rngmod
from .data import DatasetBundle, Vocabulary, expand_split
from .errors import CheckpointError, ConfigError, DataError
from .io import atomic_write
from .model import (
    ALL_FIELDS,
    GradientRecord,
    ModelConfig,
    ModelParams,
    ScoredBatch,
    VARIANTS,
    init_params,
    normalize_step,
    project_constraints,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "tkge-checkpoint"
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-5
    batch_size: int = 512
    negatives: int = 10          # eta, negatives per positive
    margin: float = 1.0          # gamma
    adv_temp: float = 1.0        # self-adversarial temperature; 0 = uniform
    max_epochs: int = 5000
    patience: int = 20           # stale validations before early stop
    eval_every: int = 25         # epochs between validations
    seed: int = 0
    reciprocal: bool = True
    variant: str = "full"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.negatives < 1:
            raise ConfigError("negatives must be >= 1")
        if self.margin <= 0:
            raise ConfigError("margin must be > 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.adv_temp < 0:
            raise ConfigError("adv_temp must be >= 0")
        if self.max_epochs < 0 or self.patience < 1 or self.eval_every < 1:
            raise ConfigError("max_epochs >= 0, patience >= 1, eval_every >= 1 required")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")


# ---------------------------------------------------------------------------
# dataset augmentation

def add_reciprocal(bundle: DatasetBundle) -> DatasetBundle:
    """Append the inverse fact (o, p + n_r, s, [ts, te]) for every fact."""
    vocab = bundle.vocabulary
    if not vocab.reciprocal:
        raise DataError("bundle vocabulary was built without the reciprocal flag")
    n_r = vocab.n_relations

    def augment(arr: np.ndarray) -> np.ndarray:
        inverse = arr.copy()
        inverse[:, 0] = arr[:, 2]
        inverse[:, 2] = arr[:, 0]
        inverse[:, 1] = arr[:, 1] + n_r
        return np.concatenate([arr, inverse])

    return DatasetBundle(
        vocabulary=vocab,
        train=augment(bundle.train),
        valid=augment(bundle.valid),
        test=augment(bundle.test),
        provenance=bundle.provenance,
    )


# ---------------------------------------------------------------------------
# sampling and loss

def sample_negatives(batch: np.ndarray, eta: int, n_entities: int,
                     rng: np.random.Generator) -> np.ndarray:
    """eta corrupted copies per positive, shape (b, eta, 4).

    Each negative replaces the subject or the object (picked uniformly) with
    an entity drawn uniformly from the others; predicate and step are kept.
    No filtering against true facts is done.
    """
    if n_entities < 2:
        raise DataError("negative sampling needs at least two entities")
    b = batch.shape[0]
    side = rng.integers(0, 2, size=(b, eta))          # 0 = subject, 1 = object
    draw = rng.integers(0, n_entities - 1, size=(b, eta))
    negatives = np.repeat(batch[:, None, :], eta, axis=1)
    original = np.where(side == 0, negatives[:, :, 0], negatives[:, :, 2])
    corrupted = draw + (draw >= original)              # uniform over != original
    negatives[:, :, 0] = np.where(side == 0, corrupted, negatives[:, :, 0])
    negatives[:, :, 2] = np.where(side == 1, corrupted, negatives[:, :, 2])
    return negatives


def adversarial_weights(neg_scores: np.ndarray, adv_temp: float) -> np.ndarray:
    """Softmax of -adv_temp * score along the last axis (sums to 1).

    Lower score = more plausible = harder negative = larger weight;
    adv_temp 0 gives uniform weights.
    """
    logits = -adv_temp * np.asarray(neg_scores, dtype=np.float64)
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def loss_from_scores(pos_scores: np.ndarray, neg_scores: np.ndarray, margin: float,
                     adv_temp: float, frozen_weights: np.ndarray | None = None,
                     ) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss value plus its partials w.r.t. the positive and negative scores.

    neg_scores has shape (b, eta).  The adversarial weights are treated as
    constants; ``frozen_weights`` overrides them (used by gradient checks).
    """
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    w = adversarial_weights(neg_scores, adv_temp) if frozen_weights is None else frozen_weights
    loss = float(
        np.sum(-_log_sigmoid(margin - pos_scores))
        + np.sum(-w * _log_sigmoid(neg_scores - margin))
    )
    d_pos = _sigmoid(pos_scores - margin)
    d_neg = -w * _sigmoid(margin - neg_scores)
    return loss, d_pos, d_neg


def batch_loss(params: ModelParams, positives: np.ndarray, negatives: np.ndarray,
               margin: float, adv_temp: float,
               frozen_weights: np.ndarray | None = None,
               ) -> tuple[float, GradientRecord]:
    """Self-adversarial negative-sampling loss and its analytic gradients."""
    b, eta = negatives.shape[0], negatives.shape[1]
    all_rows = np.concatenate([positives, negatives.reshape(b * eta, 4)])
    t = normalize_step(all_rows[:, 3], params.config.n_steps)
    batch = ScoredBatch(params, all_rows[:, 0], all_rows[:, 1], all_rows[:, 2], t)
    loss, d_pos, d_neg = loss_from_scores(
        batch.scores[:b], batch.scores[b:].reshape(b, eta), margin, adv_temp,
        frozen_weights,
    )
    upstream = np.concatenate([d_pos, d_neg.reshape(-1)])
    return loss, batch.gradients(upstream)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    """First/second-moment tables mirroring ModelParams, plus the step count."""

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        m = {f"{table}_{name}": np.zeros_like(arr) for table, name, arr in params.arrays()}
        v = {key: np.zeros_like(val) for key, val in m.items()}
        return cls(step=0, m=m, v=v)


def adam_step(params: ModelParams, grads: GradientRecord, state: AdamState,
              lr: float) -> None:
    """One bias-corrected Adam update touching only rows present in grads."""
    state.step += 1
    bc1 = 1.0 - ADAM_BETA1**state.step
    bc2 = 1.0 - ADAM_BETA2**state.step
    for table, name, ids, g in grads.entries():
        key = f"{table}_{name}"
        m, v = state.m[key], state.v[key]
        m[ids] = ADAM_BETA1 * m[ids] + (1.0 - ADAM_BETA1) * g
        v[ids] = ADAM_BETA2 * v[ids] + (1.0 - ADAM_BETA2) * np.square(g)
        m_hat = m[ids] / bc1
        v_hat = v[ids] / bc2
        target = params.array(table, name)
        target[ids] = target[ids] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    params: ModelParams
    train_config: TrainConfig
    adam: AdamState
    epoch: int
    best_valid_mrr: float | None
    rng_state: dict          # name -> generator state
    vocab_digest: str
    stale_validations: int = 0

    @property
    def model_config(self) -> ModelConfig:
        return self.params.config


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Binary container: one JSON header line, then raw little-endian arrays.

    The header records format/version, scalar fields, and for every array its
    name, dtype, shape, and byte offset into the payload; a sha256 of the
    payload guards against truncation.  Round-trips are bit-exact.
    """
    arrays: list[tuple[str, np.ndarray]] = []
    for table, name, arr in ckpt.params.arrays():
        arrays.append((f"params.{table}_{name}", arr))
    for key, arr in ckpt.adam.m.items():
        arrays.append((f"adam.m.{key}", arr))
    for key, arr in ckpt.adam.v.items():
        arrays.append((f"adam.v.{key}", arr))

    blobs, index, offset = [], [], 0
    for name, arr in arrays:
        blob = np.ascontiguousarray(arr, dtype=np.float64).tobytes()
        index.append({"name": name, "dtype": "float64", "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)

    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(ckpt.params.config),
        "train_config": asdict(ckpt.train_config),
        "epoch": ckpt.epoch,
        "best_valid_mrr": ckpt.best_valid_mrr,
        "stale_validations": ckpt.stale_validations,
        "adam_step": ckpt.adam.step,
        "rng_state": ckpt.rng_state,
        "vocab_digest": ckpt.vocab_digest,
        "arrays": index,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    atomic_write(path, head + b"\n" + payload)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"corrupt checkpoint {path}: missing header")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
    payload = raw[newline + 1:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"checksum mismatch in {path}: file is corrupt")

    tensors: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        arr = np.frombuffer(payload[start:stop], dtype=entry["dtype"]).copy()
        tensors[entry["name"]] = arr.reshape(entry["shape"])

    config = ModelConfig(**header["model_config"])
    expected = {(t, n) for t in ("ent", "rel") for n in ALL_FIELDS}
    param_kwargs = {}
    for table, name in expected:
        key = f"params.{table}_{name}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint missing array {key}")
        param_kwargs[f"{table}_{name}"] = tensors[key]
    params = ModelParams(config=config, **param_kwargs)
    _check_shapes(params)
    adam = AdamState(
        step=header["adam_step"],
        m={k.removeprefix("adam.m."): v for k, v in tensors.items() if k.startswith("adam.m.")},
        v={k.removeprefix("adam.v."): v for k, v in tensors.items() if k.startswith("adam.v.")},
    )
    return Checkpoint(
        params=params,
        train_config=TrainConfig(**header["train_config"]),
        adam=adam,
        epoch=header["epoch"],
        best_valid_mrr=header["best_valid_mrr"],
        rng_state=header["rng_state"],
        vocab_digest=header["vocab_digest"],
        stale_validations=header.get("stale_validations", 0),
    )


def _check_shapes(params: ModelParams) -> None:
    cfg = params.config
    for table, n in (("ent", cfg.n_entities), ("rel", cfg.n_relations)):
        for name in ALL_FIELDS:
            arr = params.array(table, name)
            want = (n,) if name == "alpha" else (n, cfg.dim)
            if arr.shape != want:
                raise CheckpointError(
                    f"{table}_{name} has shape {arr.shape}, expected {want}"
                )


def check_compatible(ckpt: Checkpoint, vocab: Vocabulary) -> None:
    """Reject checkpoints trained against a different vocabulary or id space."""
    if ckpt.vocab_digest != vocab.digest():
        raise CheckpointError("checkpoint vocabulary digest does not match the bundle")
    cfg = ckpt.params.config
    if cfg.n_entities != vocab.n_entities or cfg.n_relations != vocab.n_relation_slots:
        raise CheckpointError("checkpoint table sizes do not match the bundle")
    if cfg.n_steps != vocab.timeline.n_steps:
        raise CheckpointError("checkpoint timeline length does not match the bundle")


# ---------------------------------------------------------------------------
# training loop

@dataclass
class ValidationPoint:
    epoch: int
    loss: float
    mrr: float
    seconds: float


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    epoch_losses: list[float] = field(default_factory=list)
    validations: list[ValidationPoint] = field(default_factory=list)


def _snapshot(params, train_config, adam, epoch, best_mrr, streams, vocab_digest,
              stale) -> Checkpoint:
    return Checkpoint(
        params=params.copy(),
        train_config=train_config,
        adam=AdamState(adam.step, {k: v.copy() for k, v in adam.m.items()},
                       {k: v.copy() for k, v in adam.v.items()}),
        epoch=epoch,
        best_valid_mrr=best_mrr,
        rng_state={name: rngmod.stream_state(gen) for name, gen in streams.items()},
        vocab_digest=vocab_digest,
        stale_validations=stale,
    )


def train(bundle: DatasetBundle, model_config: ModelConfig, train_config: TrainConfig,
          *, log: IO[str] | None = None, resume: Checkpoint | None = None,
          checkpoint_path=None, threads: int = 1) -> TrainResult:
    """Optimize on the bundle's train split; return best + final checkpoints.

    Validation MRR (time-wise filtered, on the original validation facts) is
    computed every ``eval_every`` epochs; the best checkpoint is kept and
    training stops early after ``patience`` stale validations.  With identical
    seeds, inputs, and single-threaded mode the run is bit-reproducible, and
    resuming from the final checkpoint of a shorter run reproduces the longer
    run exactly.
    """
    from .evaluation import build_filter_index, evaluate

    vocab = bundle.vocabulary
    if train_config.reciprocal != vocab.reciprocal:
        raise ConfigError(
            "reciprocal setting of the run does not match the bundle vocabulary"
        )
    train_arr = bundle.train
    if train_config.reciprocal:
        train_arr = add_reciprocal(bundle).train
    quadruples = expand_split(train_arr)
    if quadruples.shape[0] == 0:
        raise ConfigError("training split is empty")

    vocab_digest = vocab.digest()
    if resume is not None:
        check_compatible(resume, vocab)
        if resume.params.config != model_config:
            raise CheckpointError("resume checkpoint has a different model config")
        params = resume.params.copy()
        adam = AdamState(resume.adam.step,
                         {k: v.copy() for k, v in resume.adam.m.items()},
                         {k: v.copy() for k, v in resume.adam.v.items()})
        streams = {name: rngmod.restore_stream(state)
                   for name, state in resume.rng_state.items()}
        start_epoch = resume.epoch
        best_mrr = resume.best_valid_mrr
        stale = resume.stale_validations
    else:
        streams = {
            "sampling": rngmod.substream(train_config.seed, "sampling"),
            "shuffle": rngmod.substream(train_config.seed, "shuffle"),
        }
        params = init_params(model_config, rngmod.substream(train_config.seed, "init"))
        adam = AdamState.zeros(params)
        start_epoch = 0
        best_mrr = None
        stale = 0

    filter_index = build_filter_index(bundle)
    valid_facts = bundle.valid
    best = _snapshot(params, train_config, adam, start_epoch, best_mrr, streams,
                     vocab_digest, stale)
    result = TrainResult(best=best, final=best)

    n = quadruples.shape[0]
    b = train_config.batch_size
    started = time.monotonic()
    last_epoch = start_epoch
    for epoch in range(start_epoch + 1, train_config.max_epochs + 1):
        last_epoch = epoch
        order = streams["shuffle"].permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, b):
            batch = quadruples[order[lo:lo + b]]
            negatives = sample_negatives(
                batch, train_config.negatives, vocab.n_entities, streams["sampling"]
            )
            loss, grads = batch_loss(
                params, batch, negatives, train_config.margin, train_config.adv_temp
            )
            adam_step(params, grads, adam, train_config.lr)
            project_constraints(params)
            epoch_loss += loss
        mean_loss = epoch_loss / n
        result.epoch_losses.append(mean_loss)

        if epoch % train_config.eval_every == 0 and valid_facts.shape[0] > 0:
            metrics = evaluate(params, valid_facts, filter_index,
                               reciprocal=train_config.reciprocal, threads=threads)
            elapsed = time.monotonic() - started
            point = ValidationPoint(epoch, mean_loss, metrics.mrr, elapsed)
            result.validations.append(point)
            if log is not None:
                log.write(f"{epoch}\t{mean_loss:.6f}\t{metrics.mrr:.6f}\t{elapsed:.3f}\n")
                log.flush()
            logger.info("epoch %d loss %.6f valid MRR %.4f", epoch, mean_loss, metrics.mrr)
            if best_mrr is None or metrics.mrr > best_mrr:
                best_mrr = metrics.mrr
                stale = 0
                result.best = _snapshot(params, train_config, adam, epoch, best_mrr,
                                        streams, vocab_digest, stale)
            else:
                stale += 1
            if checkpoint_path is not None:
                save_checkpoint(
                    _snapshot(params, train_config, adam, epoch, best_mrr, streams,
                              vocab_digest, stale),
                    checkpoint_path,
                )
            if stale >= train_config.patience:
                logger.info("early stop after %d stale validations", stale)
                break

    result.final = _snapshot(params, train_config, adam, last_epoch, best_mrr,
                             streams, vocab_digest, stale)
    if not result.validations:
        # no validation ever ran; the final state is the best we know
        result.best = result.final
    return result
