"""Training loop: mirroring augmentation, random context slicing, AdamW with
linear warmup then linear decay."""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn, seq
from .errors import InputError
from .model import ProteinLM, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int
    warmup_steps: int
    peak_lr: float = 3e-4
    weight_decay: float = 1e-4
    mirror_prob: float = 0.5
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables intermediate checkpoints
    val_fraction: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: Optional[float] = None  # max global norm; None disables clipping

    def __post_init__(self):
        if not 0.0 <= self.mirror_prob <= 1.0:
            raise InputError("mirror_prob must be in [0, 1]")
        if not 0 <= self.warmup_steps < self.steps:
            raise InputError("warmup_steps must satisfy 0 <= warmup < steps")
        if not 0.0 <= self.val_fraction < 1.0:
            raise InputError("val_fraction must be in [0, 1)")

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        d = json.loads(text)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> peak over warmup_steps, then linear decay to 0 at
    cfg.steps. Piecewise linear, continuous, peaks exactly once."""
    if not 0 <= step <= cfg.steps:
        raise InputError(f"step {step} outside 0..{cfg.steps}")
    if step <= cfg.warmup_steps:
        if cfg.warmup_steps == 0:
            return cfg.peak_lr if step > 0 else 0.0
        return cfg.peak_lr * step / cfg.warmup_steps
    return cfg.peak_lr * (cfg.steps - step) / (cfg.steps - cfg.warmup_steps)


def make_training_example(
    s: seq.ProteinSequence,
    max_context: int,
    rng: np.random.Generator,
    mirror_prob: float = 0.5,
) -> np.ndarray:
    """One training token stream: impute, maybe mirror, slice to fit.

    Imputation draws first so a mirrored example is exactly the mirror of
    the unmirrored one under the same generator state. Over-length
    sequences contribute a uniformly random contiguous slice of
    max_context - 2 residues before BOS/EOS are attached.
    """
    s = seq.impute_indeterminates(s, rng)
    if mirror_prob > 0 and rng.random() < mirror_prob:
        s = seq.mirror(s)
    budget = max_context - 2
    if len(s.residues) > budget:
        start = int(rng.integers(len(s.residues) - budget + 1))
        s = seq.ProteinSequence(id=s.id, residues=s.residues[start : start + budget])
    return seq.tokenize(s)


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(t.data) for k, t in params.items()},
            v={k: np.zeros_like(t.data) for k, t in params.items()},
        )


def adamw_step(
    params: dict,
    grads: dict,
    state: AdamWState,
    step: int,
    cfg: TrainConfig,
    lr: Optional[float] = None,
) -> None:
    """One decoupled-weight-decay Adam update, in place.

    ``step`` is 1-based and drives both bias correction and the learning
    rate schedule unless ``lr`` is given explicitly.
    """
    if lr is None:
        lr = lr_schedule(step, cfg)
    b1, b2 = cfg.betas
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise InputError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p.data = p.data - lr * update - lr * cfg.weight_decay * p.data


@dataclass
class LossTrace:
    records: list = field(default_factory=list)  # (step, lr, loss) tuples
    trained_ids: set = field(default_factory=set)
    validation_ids: list = field(default_factory=list)

    def append(self, step: int, lr: float, loss: float) -> None:
        self.records.append((step, lr, loss))

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "lr", "loss"])
            for step, lr, loss in self.records:
                w.writerow([step, f"{lr:.10g}", f"{loss:.10g}"])

    @classmethod
    def load_csv(cls, path) -> "LossTrace":
        trace = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                trace.append(int(row["step"]), float(row["lr"]), float(row["loss"]))
        return trace


def split_validation(
    corpus: list[seq.ProteinSequence], fraction: float, rng: np.random.Generator
) -> tuple[list[seq.ProteinSequence], list[seq.ProteinSequence]]:
    """Hold out a validation slice; sequences with indeterminates are never
    eligible for validation."""
    eligible = [i for i, s in enumerate(corpus) if not set(s.residues) & seq.INDETERMINATE_AAS]
    n_val = int(round(len(corpus) * fraction))
    n_val = min(n_val, len(eligible))
    if n_val == 0:
        return list(corpus), []
    chosen = set(rng.choice(eligible, size=n_val, replace=False).tolist())
    train_set = [s for i, s in enumerate(corpus) if i not in chosen]
    val_set = [corpus[i] for i in sorted(chosen)]
    return train_set, val_set


def _batch_order(n: int, batch_size: int, lengths: list[int], rng: np.random.Generator):
    """Yield index batches forever: shuffle, sort within macro-chunks by
    length (so padding stays small), then shuffle the batch order."""
    chunk = max(batch_size * 8, batch_size)
    while True:
        perm = rng.permutation(n)
        batches = []
        for c0 in range(0, n, chunk):
            part = sorted(perm[c0 : c0 + chunk], key=lambda i: lengths[i])
            for b0 in range(0, len(part), batch_size):
                batches.append(part[b0 : b0 + batch_size])
        order = rng.permutation(len(batches))
        for bi in order:
            yield batches[bi]


def _pad_batch(token_rows: list[np.ndarray]) -> np.ndarray:
    width = max(len(r) for r in token_rows)
    out = np.full((len(token_rows), width), seq.PAD_ID, dtype=np.int64)
    for i, r in enumerate(token_rows):
        out[i, : len(r)] = r
    return out


def batch_loss(model: ProteinLM, ids: np.ndarray) -> nn.Tensor:
    """Next-token cross-entropy in nats, ignoring PAD targets."""
    logits = model.forward(ids)
    return nn.cross_entropy(logits[:, :-1, :], ids[:, 1:], ignore_id=seq.PAD_ID)


def corpus_loss(model: ProteinLM, corpus: list[seq.ProteinSequence], batch_size: int = 32) -> float:
    """Mean nats/token over a corpus without augmentation (indeterminates
    must already be resolved)."""
    total, count = 0.0, 0
    with nn.no_grad():
        for b0 in range(0, len(corpus), batch_size):
            rows = [seq.tokenize(s) for s in corpus[b0 : b0 + batch_size]]
            ids = _pad_batch(rows)
            loss = batch_loss(model, ids)
            n = sum(len(r) - 1 for r in rows)
            total += float(loss.data) * n
            count += n
    return total / count


def train(
    corpus: list[seq.ProteinSequence],
    model: ProteinLM,
    cfg: TrainConfig,
    checkpoint_dir=None,
) -> tuple[ProteinLM, LossTrace]:
    """Run the optimizer for cfg.steps steps; deterministic given the seed."""
    if not corpus:
        raise InputError("training corpus is empty after filtering")
    rng = np.random.default_rng(cfg.seed)
    train_set, val_set = split_validation(corpus, cfg.val_fraction, rng)
    if not train_set:
        raise InputError("no sequences left for training after validation split")

    state = AdamWState.for_params(model.params)
    trace = LossTrace(validation_ids=[s.id for s in val_set])
    lengths = [len(s.residues) for s in train_set]
    batches = _batch_order(len(train_set), cfg.batch_size, lengths, rng)

    for step in range(1, cfg.steps + 1):
        idxs = next(batches)
        trace.trained_ids.update(train_set[i].id for i in idxs)
        rows = [
            make_training_example(train_set[i], model.config.max_context, rng, cfg.mirror_prob)
            for i in idxs
        ]
        ids = _pad_batch(rows)
        nn.zero_grads(model.params.values())
        loss = batch_loss(model, ids)
        nn.backward(loss)
        grads = {k: t.grad for k, t in model.params.items() if t.grad is not None}
        if cfg.grad_clip is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > cfg.grad_clip:
                scale = cfg.grad_clip / norm
                grads = {k: g * scale for k, g in grads.items()}
        lr = lr_schedule(step, cfg)
        adamw_step(model.params, grads, state, step, cfg, lr=lr)
        trace.append(step, lr, float(loss.data))
        if checkpoint_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(model, f"{checkpoint_dir}/checkpoint_step{step}.ckpt", step=step)

    return model, trace
