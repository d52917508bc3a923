"""Autoregressive protein language model.

Attention heads are split into four contiguous groups. Group 1 attends at
single-residue resolution; groups 2-4 apply causal depthwise convolutions
of width 3, 5 and 7 to their query/key/value projections so heads
specialize to k-mer patterns at different scales. Position information
comes from per-group linear distance biases on the attention scores
(ALiBi-style) instead of added position embeddings, so the model remains
usable beyond its training context.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn, seq
from .errors import InputError
from .nn import Tensor

CHECKPOINT_MAGIC = b"PFITCKP1"
CHECKPOINT_VERSION = 1

KERNEL_SIZES = (1, 3, 5, 7)


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    d_model: int
    d_ff: int
    vocab_size: int = seq.VOCAB_SIZE
    max_context: int = 1024
    kernel_sizes: tuple = KERNEL_SIZES
    precision: str = "float64"
    seed: int = 0
    disable_convs: bool = False
    position_mode: str = "grouped_alibi"  # "learned" exists for ablation tests only
    slope_groups: Optional[tuple] = None  # per-group slope override

    def __post_init__(self):
        if self.n_heads % 4 != 0 or self.n_heads <= 0:
            raise InputError(f"n_heads must be a positive multiple of 4, got {self.n_heads}")
        if self.d_model % self.n_heads != 0:
            raise InputError("d_model must be divisible by n_heads")
        if self.max_context < 4:
            raise InputError("max_context must be at least 4")
        if tuple(self.kernel_sizes) != KERNEL_SIZES:
            raise InputError(f"kernel_sizes are fixed at {KERNEL_SIZES}")
        if self.precision not in ("float64", "float32"):
            raise InputError("precision must be 'float64' or 'float32'")
        if self.position_mode not in ("grouped_alibi", "learned"):
            raise InputError("position_mode must be 'grouped_alibi' or 'learned'")
        if self.slope_groups is not None and len(self.slope_groups) != 4:
            raise InputError("slope_groups override must list 4 groups")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def heads_per_group(self) -> int:
        return self.n_heads // 4

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        if self.slope_groups is not None:
            d["slope_groups"] = [list(g) for g in self.slope_groups]
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["kernel_sizes"] = tuple(d.get("kernel_sizes", KERNEL_SIZES))
        if d.get("slope_groups") is not None:
            d["slope_groups"] = tuple(tuple(g) for g in d["slope_groups"])
        return cls(**d)


def alibi_slopes(n_heads: int) -> list[tuple[float, ...]]:
    """Distance-penalty slopes, one tuple per head group.

    With h heads per group, slopes follow the geometric sequence
    2^(-8i/h) for i = 1..h; the same set is instantiated in each of the
    four groups.
    """
    if n_heads % 4 != 0 or n_heads <= 0:
        raise InputError(f"n_heads must be a positive multiple of 4, got {n_heads}")
    h = n_heads // 4
    group = tuple(2.0 ** (-8.0 * (i + 1) / h) for i in range(h))
    return [group, group, group, group]


def flat_slopes(config: ModelConfig) -> np.ndarray:
    groups = config.slope_groups if config.slope_groups is not None else alibi_slopes(config.n_heads)
    flat = [s for g in groups for s in g]
    if len(flat) != config.n_heads:
        raise InputError("slope override does not cover every head")
    arr = np.asarray(flat, dtype=config.dtype)
    if not (arr > 0).all():
        raise InputError("distance-bias slopes must be positive")
    return arr


def grouped_alibi_bias(slopes: np.ndarray, seq_len: int, dtype=np.float64) -> np.ndarray:
    """Additive attention bias [n_heads, seq, seq].

    Zero on the diagonal, -slope*(i-j) for j < i, -inf above the diagonal
    so future positions are unreachable.
    """
    i = np.arange(seq_len)
    dist = (i[:, None] - i[None, :]).astype(dtype)
    bias = -slopes.astype(dtype)[:, None, None] * dist[None, :, :]
    bias[:, dist < 0] = -np.inf
    return bias


def causal_bias(seq_len: int, dtype=np.float64) -> np.ndarray:
    i = np.arange(seq_len)
    bias = np.zeros((seq_len, seq_len), dtype=dtype)
    bias[i[:, None] < i[None, :]] = -np.inf
    return bias


def _param_specs(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    d, ff, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    gw = d // 4  # channel width of one head group
    specs: list[tuple[str, tuple]] = [("tok_embed", (v, d))]
    if cfg.position_mode == "learned":
        specs.append(("pos_embed", (cfg.max_context, d)))
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        specs += [
            (f"{p}.ln1.g", (d,)),
            (f"{p}.ln1.b", (d,)),
            (f"{p}.attn.wq", (d, d)),
            (f"{p}.attn.bq", (d,)),
            (f"{p}.attn.wk", (d, d)),
            (f"{p}.attn.bk", (d,)),
            (f"{p}.attn.wv", (d, d)),
            (f"{p}.attn.bv", (d,)),
            (f"{p}.attn.wo", (d, d)),
            (f"{p}.attn.bo", (d,)),
        ]
        for proj in ("q", "k", "v"):
            for g, k in enumerate(cfg.kernel_sizes[1:], start=1):
                specs.append((f"{p}.attn.conv.{proj}.g{g}", (k, gw)))
        specs += [
            (f"{p}.ln2.g", (d,)),
            (f"{p}.ln2.b", (d,)),
            (f"{p}.mlp.w1", (d, ff)),
            (f"{p}.mlp.b1", (ff,)),
            (f"{p}.mlp.w2", (ff, d)),
            (f"{p}.mlp.b2", (d,)),
        ]
    specs += [
        ("final_ln.g", (d,)),
        ("final_ln.b", (d,)),
        ("head.w", (d, v)),
        ("head.b", (v,)),
    ]
    return specs


def _init_param(name: str, shape: tuple, rng: np.random.Generator, dtype) -> np.ndarray:
    if name.endswith(".g") and len(shape) == 1:  # layer-norm gain
        return np.ones(shape, dtype=dtype)
    if len(shape) == 1:  # biases and layer-norm shifts
        return np.zeros(shape, dtype=dtype)
    if ".conv." in name:
        # near-impulse kernels: initial behavior close to conv-free attention
        k = shape[0]
        arr = rng.normal(0.0, 0.02, size=shape)
        arr[k - 1, :] += 1.0
        return arr.astype(dtype)
    return (rng.normal(0.0, 0.02, size=shape)).astype(dtype)


class ProteinLM:
    """Decoder-only language model over the amino-acid token vocabulary."""

    def __init__(self, config: ModelConfig, params: Optional[dict] = None):
        self.config = config
        if params is None:
            rng = np.random.default_rng(config.seed)
            params = {
                name: Tensor(_init_param(name, shape, rng, config.dtype), requires_grad=True)
                for name, shape in _param_specs(config)
            }
        else:
            expected = dict(_param_specs(config))
            if set(params) != set(expected):
                raise InputError("parameter names do not match the model config")
            for name, t in params.items():
                if tuple(t.data.shape) != expected[name]:
                    raise InputError(
                        f"parameter {name} has shape {t.data.shape}, "
                        f"config implies {expected[name]}"
                    )
        self.params = params
        self._slopes = flat_slopes(config)
        self._bias_cache: dict[int, np.ndarray] = {}

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def _bias(self, s: int) -> np.ndarray:
        cached = self._bias_cache.get(s)
        if cached is None:
            if self.config.position_mode == "grouped_alibi":
                cached = grouped_alibi_bias(self._slopes, s, self.config.dtype)
            else:
                cached = causal_bias(s, self.config.dtype)
            if len(self._bias_cache) >= 8:
                self._bias_cache.pop(next(iter(self._bias_cache)))
            self._bias_cache[s] = cached
        return cached

    def _group_conv(self, t: Tensor, layer: int, proj: str) -> Tensor:
        """Apply each group's depthwise kernel to its channel block."""
        gw = self.config.d_model // 4
        pieces = [t[:, :, 0:gw]]  # group 1: no mixing across tokens
        for g in range(1, 4):
            kern = self.params[f"layers.{layer}.attn.conv.{proj}.g{g}"]
            block = t[:, :, g * gw : (g + 1) * gw]
            pieces.append(nn.causal_depthwise_conv1d(block, kern))
        return nn.concat(pieces, axis=2)

    def _attention_heads(self, h: Tensor, layer: int, bias: np.ndarray) -> Tensor:
        """Scaled dot-product attention; returns the concatenated head
        outputs before the output projection, shape [b, s, d_model]."""
        p = self.params
        cfg = self.config
        q = nn.linear(h, p[f"layers.{layer}.attn.wq"], p[f"layers.{layer}.attn.bq"])
        k = nn.linear(h, p[f"layers.{layer}.attn.wk"], p[f"layers.{layer}.attn.bk"])
        v = nn.linear(h, p[f"layers.{layer}.attn.wv"], p[f"layers.{layer}.attn.bv"])
        if not cfg.disable_convs:
            q = self._group_conv(q, layer, "q")
            k = self._group_conv(k, layer, "k")
            v = self._group_conv(v, layer, "v")
        b, s = q.data.shape[0], q.data.shape[1]
        hd = cfg.head_dim
        def heads(t):
            return t.reshape((b, s, cfg.n_heads, hd)).swapaxes(1, 2)
        qh, kh, vh = heads(q), heads(k), heads(v)
        scores = nn.mul(nn.matmul(qh, kh.swapaxes(-1, -2)), 1.0 / np.sqrt(hd))
        probs = nn.softmax_lastaxis(scores, bias)
        ctx = nn.matmul(probs, vh)  # [b, H, s, hd]
        return ctx.swapaxes(1, 2).reshape((b, s, cfg.d_model))

    def _attention(self, h: Tensor, layer: int, bias: np.ndarray) -> Tensor:
        ctx = self._attention_heads(h, layer, bias)
        p = self.params
        return nn.linear(ctx, p[f"layers.{layer}.attn.wo"], p[f"layers.{layer}.attn.bo"])

    def forward(self, ids: np.ndarray, enforce_context: bool = True) -> Tensor:
        """Logits [batch, seq, vocab]; position t parameterizes the next token."""
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise InputError("forward expects a [batch, seq] token array")
        s = ids.shape[1]
        if s > self.config.max_context and (
            enforce_context or self.config.position_mode == "learned"
        ):
            raise InputError(
                f"sequence of {s} tokens exceeds max_context {self.config.max_context}"
            )
        p = self.params
        x = nn.embedding(p["tok_embed"], ids)
        if self.config.position_mode == "learned":
            x = nn.add(x, p["pos_embed"][0:s])
        bias = self._bias(s)
        for layer in range(self.config.n_layers):
            h = nn.layer_norm(x, p[f"layers.{layer}.ln1.g"], p[f"layers.{layer}.ln1.b"])
            x = nn.add(x, self._attention(h, layer, bias))
            h = nn.layer_norm(x, p[f"layers.{layer}.ln2.g"], p[f"layers.{layer}.ln2.b"])
            m = nn.linear(h, p[f"layers.{layer}.mlp.w1"], p[f"layers.{layer}.mlp.b1"])
            m = nn.squared_relu(m)
            m = nn.linear(m, p[f"layers.{layer}.mlp.w2"], p[f"layers.{layer}.mlp.b2"])
            x = nn.add(x, m)
        x = nn.layer_norm(x, p["final_ln.g"], p["final_ln.b"])
        return nn.linear(x, p["head.w"], p["head.b"])


def sequence_log_prob(
    s: seq.ProteinSequence, model: ProteinLM, include_eos: bool = True
) -> tuple[float, list[float]]:
    """Log-probability of a sequence under the chain rule.

    Returns (total, per_position); per_position holds one entry per
    residue plus, unless disabled, one for the end-of-sequence token.
    The total is exactly the sum of the entries.
    """
    out = batched_log_probs([s.residues], model, include_eos=include_eos)
    return out[0]


def batched_log_probs(
    residue_strings: list[str],
    model: ProteinLM,
    include_eos: bool = True,
    max_batch: int = 64,
) -> list[tuple[float, list[float]]]:
    """Chain-rule log-probabilities for many sequences, batched by length."""
    for r in residue_strings:
        if len(r) + 2 > model.config.max_context:
            raise InputError(
                f"sequence of {len(r)} residues exceeds the scoring context "
                f"({model.config.max_context - 2}); select a window first"
            )
    by_len: dict[int, list[int]] = {}
    for idx, r in enumerate(residue_strings):
        by_len.setdefault(len(r), []).append(idx)

    results: list = [None] * len(residue_strings)
    with nn.no_grad():
        for _, idxs in sorted(by_len.items()):
            for start in range(0, len(idxs), max_batch):
                chunk = idxs[start : start + max_batch]
                ids = np.stack(
                    [
                        seq.tokenize(seq.ProteinSequence(id=str(i), residues=residue_strings[i]))
                        for i in chunk
                    ]
                )
                logits = model.forward(ids)
                lp = nn.log_softmax_lastaxis(logits.data)
                n_targets = ids.shape[1] - 1  # residues plus EOS
                take = n_targets if include_eos else n_targets - 1
                rows = np.arange(take)
                for row, i in enumerate(chunk):
                    per = lp[row, rows, ids[row, 1 : take + 1]]
                    per_list = [float(x) for x in per]
                    results[i] = (sum(per_list), per_list)
    return results


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(model: ProteinLM, path, step: int = 0) -> None:
    """Versioned binary container: config header, parameter blobs in name
    order, trailing SHA-256 checksum."""
    names = sorted(model.params)
    header = {
        "format": "protfit-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": json.loads(model.config.to_json()),
        "step": int(step),
        "params": [
            {
                "name": n,
                "shape": list(model.params[n].data.shape),
                "dtype": str(model.params[n].data.dtype),
            }
            for n in names
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    digest = hashlib.sha256()
    with open(path, "wb") as fh:
        for piece in (CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
                      struct.pack("<Q", len(header_bytes)), header_bytes):
            fh.write(piece)
            digest.update(piece)
        for n in names:
            blob = np.ascontiguousarray(model.params[n].data).tobytes()
            fh.write(blob)
            digest.update(blob)
        fh.write(digest.digest())


def load_checkpoint(path) -> tuple[ProteinLM, int]:
    """Rebuild a model from a checkpoint; verifies checksum and config."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 12 + 32 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise InputError(f"{path}: not a checkpoint file")
    body, stored_digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != stored_digest:
        raise InputError(f"{path}: checksum mismatch, file is corrupted")
    off = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", body, off)
    off += 8
    header = json.loads(body[off : off + hlen].decode("utf-8"))
    off += hlen
    config = ModelConfig.from_json(json.dumps(header["config"]))
    expected = dict(_param_specs(config))
    params: dict[str, Tensor] = {}
    for meta in header["params"]:
        name, shape = meta["name"], tuple(meta["shape"])
        if name not in expected or expected[name] != shape:
            raise InputError(
                f"{path}: parameter {name} with shape {shape} does not match the "
                "stored config"
            )
        dtype = np.dtype(meta["dtype"])
        nbytes = int(np.prod(shape)) * dtype.itemsize
        arr = np.frombuffer(body[off : off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
        params[name] = Tensor(arr, requires_grad=True)
    if off != len(body):
        raise InputError(f"{path}: trailing bytes after parameter blobs")
    return ProteinLM(config, params=params), int(header["step"])
