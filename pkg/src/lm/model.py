"""
Decoder-only transformer language model on the numcore tape.

Pre-LayerNorm blocks, learned absolute positions, multi-head causal attention,
untied input/output embeddings.  Row t of the output is log P(. | x_<t): the
model reads [BOS, x_1, ..., x_{T-1}] and never sees x_t or anything after it.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from src.domain.errors import ConfigError
from src.numcore import tape as nc
from src.numcore.rng import Rng
from src.numcore.tape import Tape, Var

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int
    max_len: int
    d_model: int = 16
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 32
    prob_floor: float = 1e-4   # applied only where a bounded per-token loss is needed
    init_std: float = 0.02
    bos_id: int | None = None  # None: a reserved input-only id, vocab_size

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        if min(self.d_model, self.n_layers, self.n_heads, self.d_ff) < 1:
            raise ConfigError("d_model, n_layers, n_heads and d_ff must all be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.prob_floor <= 0.01:
            raise ConfigError(f"prob_floor must lie in [0, 0.01], got {self.prob_floor}")
        if self.init_std < 0.0:
            raise ConfigError(f"init_std must be non-negative, got {self.init_std}")
        if self.bos_id is not None and not 0 <= self.bos_id <= self.vocab_size - 1:
            raise ConfigError(f"bos_id {self.bos_id} outside vocabulary of size {self.vocab_size}")

    @property
    def bos(self) -> int:
        return self.vocab_size if self.bos_id is None else self.bos_id

    @property
    def input_vocab_size(self) -> int:
        """Rows of tok_emb: one extra when BOS is not a data id."""
        return self.vocab_size + 1 if self.bos_id is None else self.vocab_size

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        d, f, v = self.d_model, self.d_ff, self.vocab_size
        shapes = {"tok_emb": (self.input_vocab_size, d), "pos_emb": (self.max_len, d)}
        for layer in range(self.n_layers):
            p = f"blocks.{layer}."
            shapes.update({
                p + "ln1.gain": (d,), p + "ln1.bias": (d,),
                p + "attn.w_qkv": (d, 3 * d), p + "attn.b_qkv": (3 * d,),
                p + "attn.w_out": (d, d), p + "attn.b_out": (d,),
                p + "ln2.gain": (d,), p + "ln2.bias": (d,),
                p + "mlp.w_in": (d, f), p + "mlp.b_in": (f,),
                p + "mlp.w_out": (f, d), p + "mlp.b_out": (d,),
            })
        shapes.update({"ln_f.gain": (d,), "ln_f.bias": (d,), "head.w": (d, v), "head.b": (v,)})
        return shapes

    @property
    def param_count(self) -> int:
        return sum(math.prod(s) for s in self.param_shapes().values())


@dataclass
class LmModel:
    config: LmConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "LmModel":
        return LmModel(self.config, {k: v.copy() for k, v in self.params.items()})


def _is_gain(name: str) -> bool:
    return name.endswith(".gain")


def _is_bias(name: str) -> bool:
    return name.endswith(".bias") or name.rsplit(".", 1)[-1].startswith("b")


def init_model(config: LmConfig, rng: Rng) -> LmModel:
    """Weights ~ N(0, init_std^2); LayerNorm gains 1; every bias 0.  Deterministic in rng."""
    gen = rng.generator()
    params = {}
    for name, shape in config.param_shapes().items():
        if _is_gain(name):
            params[name] = np.ones(shape)
        elif _is_bias(name):
            params[name] = np.zeros(shape)
        else:
            params[name] = gen.normal(0.0, 1.0, size=shape) * config.init_std
    log.debug("init_model params=%d init_std=%g", config.param_count, config.init_std)
    return LmModel(config, params)


def check_tokens(config: LmConfig, tokens) -> np.ndarray:
    """Validate a [B, T] (or [T]) integer batch against the config; returns it as 2-D int64."""
    arr = np.asarray(tokens)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise ValueError(f"expected token ids of shape [B, T] with T >= 1, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"token ids must be integers, got dtype {arr.dtype}")
    if arr.shape[1] > config.max_len:
        raise ValueError(f"sequence length {arr.shape[1]} exceeds max_len {config.max_len}")
    if arr.size and (arr.min() < 0 or arr.max() >= config.vocab_size):
        raise ValueError(f"token ids must lie in [0, {config.vocab_size}), got [{arr.min()}, {arr.max()}]")
    return arr.astype(np.int64)


def model_variables(tape: Tape, model: LmModel, trainable: bool = True) -> dict[str, Var]:
    """Put the model's parameters on `tape`, as parameters or as constants."""
    if trainable:
        return {name: tape.param(name, value) for name, value in model.params.items()}
    return {name: tape.constant(value) for name, value in model.params.items()}


def _affine_norm(x: Var, gain: Var, bias: Var) -> Var:
    return nc.layer_norm(x) * gain + bias


def _attention(x: Var, w: dict[str, Var], prefix: str, config: LmConfig) -> Var:
    d, dh = config.d_model, config.head_dim
    qkv = x @ w[prefix + "attn.w_qkv"] + w[prefix + "attn.b_qkv"]
    heads = []
    for h in range(config.n_heads):
        q = nc.slice_axis(qkv, -1, h * dh, (h + 1) * dh)
        k = nc.slice_axis(qkv, -1, d + h * dh, d + (h + 1) * dh)
        v = nc.slice_axis(qkv, -1, 2 * d + h * dh, 2 * d + (h + 1) * dh)
        scores = nc.causal_mask((q @ nc.transpose(k)) * (1.0 / math.sqrt(dh)))
        weights = nc.exp(nc.row_log_softmax(scores))
        heads.append(weights @ v)
    merged = heads[0] if len(heads) == 1 else nc.concat(heads, axis=-1)
    return merged @ w[prefix + "attn.w_out"] + w[prefix + "attn.b_out"]


def _mlp(x: Var, w: dict[str, Var], prefix: str) -> Var:
    hidden = nc.gelu(x @ w[prefix + "mlp.w_in"] + w[prefix + "mlp.b_in"])
    return hidden @ w[prefix + "mlp.w_out"] + w[prefix + "mlp.b_out"]


def build_log_probs(tape: Tape, w: dict[str, Var], config: LmConfig, tokens) -> Var:
    """Record the forward pass for a [B, T] batch; returns log-probabilities [B, T, V]."""
    x = check_tokens(config, tokens)
    batch, length = x.shape
    inputs = np.concatenate([np.full((batch, 1), config.bos, dtype=np.int64), x[:, :-1]], axis=1)
    h = nc.embedding_lookup(w["tok_emb"], inputs) + nc.embedding_lookup(w["pos_emb"], np.arange(length))
    for layer in range(config.n_layers):
        p = f"blocks.{layer}."
        h = h + _attention(_affine_norm(h, w[p + "ln1.gain"], w[p + "ln1.bias"]), w, p, config)
        h = h + _mlp(_affine_norm(h, w[p + "ln2.gain"], w[p + "ln2.bias"]), w, p)
    h = _affine_norm(h, w["ln_f.gain"], w["ln_f.bias"])
    return nc.row_log_softmax(h @ w["head.w"] + w["head.b"])


def forward_log_probs_batch(model: LmModel, tokens) -> np.ndarray:
    tape = Tape()
    return build_log_probs(tape, model_variables(tape, model, trainable=False), model.config, tokens).value


def forward_log_probs(model: LmModel, x) -> np.ndarray:
    """[T, V] matrix of log P(v | x_<t) for a single sequence."""
    return forward_log_probs_batch(model, check_tokens(model.config, x))[0]


def greedy_next(model: LmModel, prefix) -> int:
    """argmax of P(. | prefix); ties go to the smallest token id."""
    prefix = [int(t) for t in np.asarray(prefix).reshape(-1)]
    if len(prefix) >= model.config.max_len:
        raise ValueError(f"prefix length {len(prefix)} must be < max_len {model.config.max_len}")
    row = forward_log_probs(model, prefix + [0])[-1]
    return int(np.argmax(row))


def sequence_log_likelihood(model: LmModel, x) -> float:
    """sum_t log P(x_t | x_<t); never positive."""
    x = check_tokens(model.config, x)[0]
    rows = forward_log_probs(model, x)
    return float(rows[np.arange(len(x)), x].sum())
