"""Reusable neural blocks: linear layers, multi-head (cross-)attention, and
pre-norm transformer encoder layers."""

from __future__ import annotations

import math

import numpy as np

from emofuse import tensor as T
from emofuse.tensor import Parameter, ShapeError, Tensor


class RngSource:
    """Shared mutable RNG holder so dropout state can be checkpointed."""

    def __init__(self, gen: np.random.Generator):
        self.gen = gen

    def state(self) -> dict:
        return self.gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        gen = np.random.default_rng()
        gen.bit_generator.state = state
        self.gen = gen


class Module:
    """Base class giving blocks a stable named-parameter tree and a train flag."""

    def __init__(self):
        self.training = True

    def named_parameters(self, prefix: str = ""):
        for attr, val in vars(self).items():
            path = f"{prefix}.{attr}" if prefix else attr
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Parameter):
                        yield f"{path}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        self.training = mode
        for val in vars(self).values():
            if isinstance(val, Module):
                val.train(mode)
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        item.train(mode)
        return self

    def eval(self):
        return self.train(False)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class LinearLayer(Module):
    """Affine map y = act(xW + b) with activation in {none, relu}."""

    def __init__(self, in_dim, out_dim, activation="none", rng=None, dtype=np.float32):
        super().__init__()
        if activation not in ("none", "relu"):
            raise ValueError(f"unsupported activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.weight = Parameter(xavier_uniform(rng, in_dim, out_dim, dtype))
        self.bias = Parameter(np.zeros(out_dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"linear expects last extent {self.in_dim}, got {x.shape}")
        out = T.add(T.matmul(x, self.weight), self.bias)
        if self.activation == "relu":
            out = T.relu(out)
        return out

    __call__ = forward


class Dropout(Module):
    def __init__(self, rate: float, rng_src: RngSource):
        super().__init__()
        self.rate = rate
        self.rng_src = rng_src

    def forward(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.rate, self.rng_src.gen, self.training)

    __call__ = forward


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)

    __call__ = forward


class MultiHeadAttention(Module):
    """Scaled dot-product attention with h heads over width-d inputs.

    Queries come from ``q_in``, keys and values from ``kv_in``, so the same
    block serves both self- and cross-modal attention. Projections are plain
    d x d matrices. The post-softmax weights of the latest forward pass are
    kept on ``last_weights`` (leading dims, heads, T_q, T_kv) for inspection.
    """

    def __init__(self, dim, heads, dropout_rate=0.0, rng=None, rng_src=None, dtype=np.float32):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.w_q = Parameter(xavier_uniform(rng, dim, dim, dtype))
        self.w_k = Parameter(xavier_uniform(rng, dim, dim, dtype))
        self.w_v = Parameter(xavier_uniform(rng, dim, dim, dtype))
        self.w_o = Parameter(xavier_uniform(rng, dim, dim, dtype))
        self.drop = Dropout(dropout_rate, rng_src) if rng_src is not None and dropout_rate > 0 else None
        self.last_weights = None

    def _split_heads(self, x: Tensor) -> Tensor:
        t = x.shape[-2]
        lead = x.shape[:-2]
        x = T.reshape(x, lead + (t, self.heads, self.head_dim))
        return T.swapaxes(x, -3, -2)  # (..., heads, t, head_dim)

    def forward(self, q_in: Tensor, kv_in: Tensor) -> Tensor:
        if q_in.shape[-1] != self.dim or kv_in.shape[-1] != self.dim:
            raise ShapeError(f"attention width {self.dim} != inputs {q_in.shape} / {kv_in.shape}")
        if q_in.shape[:-2] != kv_in.shape[:-2]:
            raise ShapeError(f"attention leading extents differ: {q_in.shape} vs {kv_in.shape}")
        t_q = q_in.shape[-2]
        lead = q_in.shape[:-2]

        q = self._split_heads(T.matmul(q_in, self.w_q))
        k = self._split_heads(T.matmul(kv_in, self.w_k))
        v = self._split_heads(T.matmul(kv_in, self.w_v))

        scores = T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(self.head_dim))
        weights = T.softmax_rows(scores)
        self.last_weights = weights.data
        if self.drop is not None:
            weights = self.drop(weights)
        ctx = T.matmul(weights, v)  # (..., heads, t_q, head_dim)
        ctx = T.reshape(T.swapaxes(ctx, -3, -2), lead + (t_q, self.dim))
        return T.matmul(ctx, self.w_o)

    __call__ = forward


def cross_attention(block: MultiHeadAttention, q_in: Tensor, kv_in: Tensor) -> Tensor:
    """Attend from q_in positions over kv_in positions; output matches q_in rows."""
    return block(q_in, kv_in)


class TransformerEncoderLayer(Module):
    """Pre-norm residual encoder layer: x + attn(norm(x)), then + ffn(norm(.))."""

    def __init__(self, dim, heads, ffn_factor=4, dropout_rate=0.1, rng=None, rng_src=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, dropout_rate, rng=rng, rng_src=rng_src, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.ff1 = LinearLayer(dim, ffn_factor * dim, activation="relu", rng=rng, dtype=dtype)
        self.ff2 = LinearLayer(ffn_factor * dim, dim, activation="none", rng=rng, dtype=dtype)
        self.drop1 = Dropout(dropout_rate, rng_src) if rng_src is not None and dropout_rate > 0 else None
        self.drop2 = Dropout(dropout_rate, rng_src) if rng_src is not None and dropout_rate > 0 else None

    def forward(self, x: Tensor) -> Tensor:
        n = self.norm1(x)
        a = self.attn(n, n)
        if self.drop1 is not None:
            a = self.drop1(a)
        h = T.add(x, a)
        f = self.ff2(self.ff1(self.norm2(h)))
        if self.drop2 is not None:
            f = self.drop2(f)
        return T.add(h, f)

    __call__ = forward


def encoder_forward(layer: TransformerEncoderLayer, x: Tensor) -> Tensor:
    return layer(x)
