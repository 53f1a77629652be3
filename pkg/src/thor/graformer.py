"""The graph-transformer network for pose and shape regression on graphs.

Each block runs a graph attention layer (multi-head self-attention whose
output projection is a graph convolution with a trainable adjacency
matrix) followed by a pair of spectral Chebyshev graph convolutions,
with pre-LayerNorm residual wiring. Stacked blocks sit between a linear
embedding and a final Chebyshev layer that maps to the output width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .graphs import GraphTopology, cheb_basis_apply
from .rng import Rng
from .tensor import Tensor


@dataclass
class GraFormerConfig:
    input_dim: int
    output_dim: int = 3
    d_model: int = 128
    num_heads: int = 4
    num_blocks: int = 5
    cheb_order: int = 2
    use_attention: bool = True  # test hook: graph-conv-only ablation

    def __post_init__(self):
        for name in ("input_dim", "output_dim", "d_model", "num_heads",
                     "num_blocks", "cheb_order"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.num_heads:
            raise ValueError(
                f"d_model {self.d_model} not divisible by {self.num_heads} heads")

    def to_json(self) -> dict:
        return asdict(self)


class Module:
    """Minimal parameter container with named traversal."""

    def named_parameters(self, prefix: str = ""):
        out = []
        for name, value in vars(self).items():
            key = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(key))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{key}.{i}"))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def load_state(self, named_arrays: dict, prefix: str = ""):
        for name, param in self.named_parameters(prefix):
            if name not in named_arrays:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            arr = np.asarray(named_arrays[name])
            if arr.shape != param.data.shape:
                raise ValueError(
                    f"parameter '{name}': checkpoint shape {arr.shape} != {param.data.shape}")
            param.data = arr.astype(np.float64).copy()

    def state(self, prefix: str = "") -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters(prefix)}


def xavier(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return np.asarray(rng.normal((fan_in, fan_out), std=std))


class Linear(Module):
    def __init__(self, rng: Rng, d_in: int, d_out: int, bias: bool = True):
        self.weight = Tensor(xavier(rng, d_in, d_out), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        d_in, d_out = self.weight.shape
        lead = x.shape[:-1]
        flat = T.reshape(x, (-1, d_in))
        out = T.matmul(flat, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return T.reshape(out, lead + (d_out,))


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class LamGconv(Module):
    """Graph convolution with a trainable adjacency matrix.

    Y = sigmoid((A + A^T) / 2) X W. Adjacency logits start at +2 on the
    static graph's edges and self-loops and -2 elsewhere, so the layer
    begins near the known topology but remains fully learnable.
    """

    def __init__(self, rng: Rng, num_nodes: int, d_in: int, d_out: int,
                 topology: GraphTopology | None = None):
        logits = -2.0 * np.ones((num_nodes, num_nodes))
        if topology is not None:
            adj = topology.adjacency()
            logits[adj > 0] = 2.0
        np.fill_diagonal(logits, 2.0)
        self.adj_logits = Tensor(logits, requires_grad=True)
        self.weight = Tensor(xavier(rng, d_in, d_out), requires_grad=True)

    def effective_adjacency(self) -> Tensor:
        sym = 0.5 * (self.adj_logits + T.transpose(self.adj_logits))
        return T.sigmoid(sym)

    def __call__(self, x: Tensor) -> Tensor:
        n = self.adj_logits.shape[0]
        if x.shape[-2] != n:
            raise T.ShapeError(f"node count {x.shape[-2]} != adjacency size {n}")
        return T.matmul(T.matmul(self.effective_adjacency(), x), self.weight)


class GraAttention(Module):
    """Multi-head self-attention over graph nodes; the output projection is
    a LamGconv instead of a plain linear layer, then a residual add."""

    def __init__(self, rng: Rng, num_nodes: int, d_model: int, num_heads: int,
                 topology: GraphTopology | None):
        self.norm = LayerNorm(d_model)
        self.wq = Linear(rng.child("wq"), d_model, d_model)
        self.wk = Linear(rng.child("wk"), d_model, d_model)
        self.wv = Linear(rng.child("wv"), d_model, d_model)
        self.out = LamGconv(rng.child("lam"), num_nodes, d_model, d_model, topology)
        self.num_heads = num_heads
        self.d_head = d_model // num_heads

    def attention_weights(self, x: Tensor) -> Tensor:
        """(B, H, N, N) softmax attention for inspection and tests."""
        xn = self.norm(x)
        q = _split_heads(self.wq(xn), self.num_heads)
        k = _split_heads(self.wk(xn), self.num_heads)
        return T.attention_probabilities(q, k, 1.0 / math.sqrt(self.d_head))

    def __call__(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        xn = self.norm(x)
        q = _split_heads(self.wq(xn), self.num_heads)
        k = _split_heads(self.wk(xn), self.num_heads)
        v = _split_heads(self.wv(xn), self.num_heads)
        ctx = T.scaled_attention(q, k, v, 1.0 / math.sqrt(self.d_head))  # (B,H,N,dh)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
        return x + self.out(merged)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return T.transpose(T.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


class ChebGConv(Module):
    """Spectral graph convolution: sum_k T_k(L) X theta_k + bias."""

    def __init__(self, rng: Rng, d_in: int, d_out: int, order: int):
        self.thetas = [Tensor(xavier(rng.child(("theta", k)), d_in, d_out), requires_grad=True)
                       for k in range(order)]
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)
        self.order = order

    def named_parameters(self, prefix: str = ""):
        out = []
        for k, th in enumerate(self.thetas):
            out.append((f"{prefix}.theta{k}" if prefix else f"theta{k}", th))
        out.append((f"{prefix}.bias" if prefix else "bias", self.bias))
        return out

    def __call__(self, scaled_lap: Tensor, x: Tensor) -> Tensor:
        terms = cheb_basis_apply(scaled_lap, x, self.order)
        out = None
        for term, theta in zip(terms, self.thetas):
            piece = T.matmul(term, theta)
            out = piece if out is None else out + piece
        return out + self.bias


class GraFormerBlock(Module):
    def __init__(self, rng: Rng, num_nodes: int, cfg: GraFormerConfig,
                 topology: GraphTopology | None):
        self.use_attention = cfg.use_attention
        if cfg.use_attention:
            self.attn = GraAttention(rng.child("attn"), num_nodes, cfg.d_model,
                                     cfg.num_heads, topology)
        self.norm = LayerNorm(cfg.d_model)
        self.cheb1 = ChebGConv(rng.child("cheb1"), cfg.d_model, cfg.d_model, cfg.cheb_order)
        self.cheb2 = ChebGConv(rng.child("cheb2"), cfg.d_model, cfg.d_model, cfg.cheb_order)

    def __call__(self, scaled_lap: Tensor, x: Tensor) -> Tensor:
        if self.use_attention:
            x = self.attn(x)
        h = self.norm(x)
        h = self.cheb2(scaled_lap, T.gelu(self.cheb1(scaled_lap, h)))
        return x + h


class GraFormer(Module):
    """Embedding, stacked attention + Chebyshev blocks, and the output head."""

    def __init__(self, rng: Rng, topology: GraphTopology, cfg: GraFormerConfig):
        self.cfg = cfg
        self.topology = topology
        self.embed = Linear(rng.child("embed"), cfg.input_dim, cfg.d_model)
        self.blocks = [GraFormerBlock(rng.child(("block", i)), topology.num_nodes, cfg, topology)
                       for i in range(cfg.num_blocks)]
        self.final_norm = LayerNorm(cfg.d_model)
        self.head = ChebGConv(rng.child("head"), cfg.d_model, cfg.output_dim, cfg.cheb_order)

    def __call__(self, x) -> Tensor:
        xt = x if isinstance(x, Tensor) else Tensor(x)
        single = xt.ndim == 2
        if single:
            xt = T.reshape(xt, (1,) + xt.shape)
        if xt.shape[-2] != self.topology.num_nodes:
            raise T.ShapeError(
                f"input rows {xt.shape[-2]} != topology nodes {self.topology.num_nodes}")
        if xt.shape[-1] != self.cfg.input_dim:
            raise T.ShapeError(
                f"input width {xt.shape[-1]} != configured {self.cfg.input_dim}")
        lap = self.topology.scaled_laplacian_tensor()
        h = self.embed(xt)
        for block in self.blocks:
            h = block(lap, h)
        out = self.head(lap, self.final_norm(h))
        return T.reshape(out, out.shape[1:]) if single else out
