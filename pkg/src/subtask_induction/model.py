"""Pre-LN GPT-2 style decoder over 4-token arithmetic sequences."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Mapping, Optional

import numpy as np

from . import numerics as nx
from .numerics import Tensor

SEQ_LEN = 4
ANSWER_POS = 2  # logits at the sep token predict the answer

ModelParams = OrderedDict  # name -> float32 array, stable order


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    vocab_size: int = 101
    seq_len: int = SEQ_LEN
    init_std: float = 0.02

    def __post_init__(self):
        if not 1 <= self.n_layers:
            raise ValueError("n_layers must be >= 1")
        if self.d_model <= 0 or self.d_ff <= 0 or self.n_heads <= 0:
            raise ValueError("model dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.seq_len != SEQ_LEN:
            raise ValueError("sequences are exactly 4 tokens: <a> <b> <sep> <c>")
        if self.vocab_size < 2:
            raise ValueError("vocab_size too small")
        if self.init_std < 0:
            raise ValueError("init_std must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**dict(d))


def param_shapes(config: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    d, f, V = config.d_model, config.d_ff, config.vocab_size
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    shapes["tok_embed"] = (V, d)
    shapes["pos_embed"] = (config.seq_len, d)
    for i in range(config.n_layers):
        p = f"h{i}."
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        shapes[p + "attn.qkv.weight"] = (d, 3 * d)
        shapes[p + "attn.qkv.bias"] = (3 * d,)
        shapes[p + "attn.out.weight"] = (d, d)
        shapes[p + "attn.out.bias"] = (d,)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
        shapes[p + "mlp.in.weight"] = (d, f)
        shapes[p + "mlp.in.bias"] = (f,)
        shapes[p + "mlp.out.weight"] = (f, d)
        shapes[p + "mlp.out.bias"] = (d,)
    shapes["ln_f.gain"] = (d,)
    shapes["ln_f.bias"] = (d,)
    shapes["unembed"] = (V, d)
    return shapes


def is_maskable(name: str) -> bool:
    """Attention and feed-forward weights and biases; never embeddings or LN."""
    return ".attn." in name or ".mlp." in name


def build_model(config: ModelConfig, seed: int) -> "OrderedDict[str, np.ndarray]":
    """Fresh parameters: matrices ~ N(0, init_std), biases 0, LN gains 1."""
    rng = nx.seeded_rng(seed)
    params: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, shape in param_shapes(config).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape, dtype=nx.DTYPE)
        elif name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=nx.DTYPE)
        else:
            params[name] = nx.normal_init(shape, 0.0, config.init_std, rng)
    return params


def n_params(params: Mapping[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def copy_params(params: Mapping[str, np.ndarray]) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((k, v.copy()) for k, v in params.items())



def _as_batch(tokens) -> np.ndarray:
    tok = np.asarray(tokens, dtype=np.int64)
    if tok.ndim == 1:
        tok = tok[None, :]
    if tok.ndim != 2 or tok.shape[1] != SEQ_LEN:
        raise ValueError(f"token rows must have length {SEQ_LEN}")
    return tok


def _lookup(params, mask_override):
    def P(name):
        if mask_override is not None and name in mask_override:
            return mask_override[name]
        return params[name]
    return P


def _rows(t, n: int) -> Tensor:
    t = nx.as_tensor(t)

    def backward(g):
        full = np.zeros_like(t.data)
        full[:n] = g
        nx._accumulate(t, full)

    return nx._result(t.data[:n], (t,), backward)


def _transposed(t) -> Tensor:
    t = nx.as_tensor(t)

    def backward(g):
        nx._accumulate(t, g.T)

    return nx._result(np.ascontiguousarray(t.data.T), (t,), backward)


def _trunk(P, tok: np.ndarray, config: ModelConfig) -> Tensor:
    """Hidden states after the final layer norm for a (B, T<=4) id block."""
    T = tok.shape[1]
    pos = P("pos_embed")
    if T < config.seq_len:
        pos = _rows(pos, T)
    x = nx.add(nx.embedding_lookup(P("tok_embed"), tok), pos)
    for i in range(config.n_layers):
        p = f"h{i}."
        h = nx.layer_norm(x, P(p + "ln1.gain"), P(p + "ln1.bias"))
        qkv = nx.linear(h, P(p + "attn.qkv.weight"), P(p + "attn.qkv.bias"))
        att = nx.causal_attention(qkv, config.n_heads)
        x = nx.add(x, nx.linear(att, P(p + "attn.out.weight"), P(p + "attn.out.bias")))
        h = nx.layer_norm(x, P(p + "ln2.gain"), P(p + "ln2.bias"))
        h = nx.gelu(nx.linear(h, P(p + "mlp.in.weight"), P(p + "mlp.in.bias")))
        x = nx.add(x, nx.linear(h, P(p + "mlp.out.weight"), P(p + "mlp.out.bias")))
    return nx.layer_norm(x, P("ln_f.gain"), P("ln_f.bias"))


def _check_ids(tok: np.ndarray, config: ModelConfig) -> None:
    if tok.size and (tok.min() < 0 or tok.max() >= config.vocab_size):
        raise IndexError(f"token id out of range [0, {config.vocab_size})")


def forward(params: Mapping[str, np.ndarray | Tensor], tokens, config: ModelConfig,
            mask_override: Optional[Mapping[str, np.ndarray | Tensor]] = None) -> Tensor:
    """Logits of shape (B, 4, vocab), or (4, vocab) for a single row.

    Groups present in ``mask_override`` are read from it instead of
    ``params``; this is how soft or binary masked weights are injected.
    """
    single = np.asarray(tokens).ndim == 1
    tok = _as_batch(tokens)
    _check_ids(tok, config)
    P = _lookup(params, mask_override)
    logits = nx.matmul(_trunk(P, tok, config), _transposed(P("unembed")))
    if single:
        logits = nx.reshape(logits, (tok.shape[1], config.vocab_size))
    if not np.isfinite(logits.data).all():
        raise nx.NonFiniteError("non-finite logits")
    return logits


def sequence_loss(params, batch, config: ModelConfig, mask_override=None) -> Tensor:
    """Mean next-token cross-entropy over the three predictable positions."""
    tok = _as_batch(batch)
    if tok.shape[0] == 0:
        raise ValueError("empty batch")
    _check_ids(tok, config)
    P = _lookup(params, mask_override)
    # causal: the final position's logits predict nothing, so it is skipped
    logits = nx.matmul(_trunk(P, tok[:, :-1], config), _transposed(P("unembed")))
    return nx.softmax_cross_entropy(logits, tok[:, 1:])


def predict_answers(params, tokens, config: ModelConfig, mask_override=None,
                    batch_size: int = 1024) -> np.ndarray:
    tok = _as_batch(tokens)
    _check_ids(tok, config)
    P = _lookup(params, mask_override)
    u = P("unembed")
    u = u.data if isinstance(u, Tensor) else u
    out = np.empty(tok.shape[0], dtype=np.int64)
    for start in range(0, tok.shape[0], batch_size):
        chunk = tok[start:start + batch_size, :ANSWER_POS + 1]
        h = _trunk(P, chunk, config).data[:, ANSWER_POS]
        out[start:start + batch_size] = (h @ u.T).argmax(axis=-1)
    return out


def answer_accuracy(params, tokens, config: ModelConfig, mask_override=None) -> float:
    """Fraction of rows whose argmax at the sep position equals the answer token."""
    tok = _as_batch(tokens)
    if tok.shape[0] == 0:
        raise ValueError("empty dataset")
    pred = predict_answers(params, tok, config, mask_override)
    return float((pred == tok[:, 3]).mean())
