"""Multi-head attention with optional topology bias and local windows.

Three flavors share one core: plain scaled dot-product attention, a biased
variant that multiplies pre-softmax logits by a structure matrix B and adds
a reachability term D_inter before the softmax then rescales the resulting
probabilities by D_outer, and a local variant that restricts each query to
its e nearest keys by Euclidean distance. All per-head bias coefficients are
learnable scalars (a length-C vector for the boundary-marking gate).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    layer_norm,
    matmul,
    multiply,
    relu,
    reshape,
    row_softmax,
    scale,
    uniform_init,
)
from .topology import TopologyMatrices

__all__ = [
    "AttentionConfig",
    "AttentionWeights",
    "BiasWeights",
    "BiasSet",
    "FeedForwardWeights",
    "LayerWeights",
    "init_attention_weights",
    "init_bias_weights",
    "init_layer_weights",
    "compose_bias_matrices",
    "nearest_neighbor_mask",
    "standard_attention",
    "biased_attention",
    "local_attention",
    "transformer_layer",
    "capture_softmax",
]


@dataclass
class AttentionConfig:
    d_model: int
    heads: int
    d_k: int = 0

    def __post_init__(self):
        if self.d_k == 0:
            self.d_k = self.d_model // self.heads
        if self.heads < 1 or self.d_model < 1:
            raise ValueError("heads and d_model must be positive")
        if self.heads * self.d_k != self.d_model:
            raise ValueError(
                f"heads * d_k must equal d_model ({self.heads} * {self.d_k} "
                f"!= {self.d_model})")


@dataclass
class AttentionWeights:
    """Per-head projection matrices plus the shared output projection."""

    wq: list
    wk: list
    wv: list
    wo: Tensor


@dataclass
class BiasWeights:
    """Learnable scalars composing the bias matrices, one set per head.

    wp/ws/wl/wr weight the relation closeness matrices inside B, wc gates
    lateral closeness by boundary-marking category, and the four spd
    scalars weight the reachability matrices inside D_inter and D_outer.
    """

    wp: list
    ws: list
    wl: list
    wr: list
    wc: list
    wpre_inter: list
    wsuc_inter: list
    wpre_outer: list
    wsuc_outer: list


@dataclass
class BiasSet:
    """Composed per-head bias matrices ready for biased_attention.

    b entries multiply scaled logits, d_inter entries add to them, d_outer
    entries rescale the softmax probabilities. Each list holds one Tensor
    of shape (N_l, N_l) per head.
    """

    b: list
    d_inter: list
    d_outer: list

    @property
    def heads(self) -> int:
        return len(self.b)


@dataclass
class FeedForwardWeights:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class LayerWeights:
    attn: AttentionWeights
    ffn: FeedForwardWeights
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


def init_attention_weights(rng: np.random.Generator, cfg: AttentionConfig) -> AttentionWeights:
    d, dk = cfg.d_model, cfg.d_k
    make = lambda: Tensor(uniform_init(rng, d, (d, dk)), requires_grad=True)
    return AttentionWeights(
        wq=[make() for _ in range(cfg.heads)],
        wk=[make() for _ in range(cfg.heads)],
        wv=[make() for _ in range(cfg.heads)],
        wo=Tensor(uniform_init(rng, d, (d, d)), requires_grad=True),
    )


def init_bias_weights(heads: int, n_categories: int) -> BiasWeights:
    # every coefficient starts at 1 so the raw structure matrices pass through
    one = lambda: Tensor(np.ones((1, 1)), requires_grad=True)
    return BiasWeights(
        wp=[one() for _ in range(heads)],
        ws=[one() for _ in range(heads)],
        wl=[one() for _ in range(heads)],
        wr=[one() for _ in range(heads)],
        wc=[Tensor(np.ones((n_categories, 1)), requires_grad=True) for _ in range(heads)],
        wpre_inter=[one() for _ in range(heads)],
        wsuc_inter=[one() for _ in range(heads)],
        wpre_outer=[one() for _ in range(heads)],
        wsuc_outer=[one() for _ in range(heads)],
    )


def init_feed_forward(rng: np.random.Generator, d_model: int, d_ff: int) -> FeedForwardWeights:
    return FeedForwardWeights(
        w1=Tensor(uniform_init(rng, d_model, (d_model, d_ff)), requires_grad=True),
        b1=Tensor(np.zeros((1, d_ff)), requires_grad=True),
        w2=Tensor(uniform_init(rng, d_ff, (d_ff, d_model)), requires_grad=True),
        b2=Tensor(np.zeros((1, d_model)), requires_grad=True),
    )


def init_layer_weights(rng: np.random.Generator, cfg: AttentionConfig) -> LayerWeights:
    d = cfg.d_model
    return LayerWeights(
        attn=init_attention_weights(rng, cfg),
        ffn=init_feed_forward(rng, d, 2 * d),
        ln1_gain=Tensor(np.ones((1, d)), requires_grad=True),
        ln1_bias=Tensor(np.zeros((1, d)), requires_grad=True),
        ln2_gain=Tensor(np.ones((1, d)), requires_grad=True),
        ln2_bias=Tensor(np.zeros((1, d)), requires_grad=True),
    )


# ---------------------------------------------------------------------------
# bias composition

def compose_bias_matrices(bw: BiasWeights, topo: TopologyMatrices,
                          use_relations: bool = True,
                          use_reachability: bool = True) -> BiasSet:
    """Combine structure matrices with their learnable coefficients.

    A disabled group substitutes its neutral element (all-ones B and
    d_outer, all-zero d_inter), which reduces biased_attention to the
    standard form.
    """
    heads = len(bw.wp)
    n = topo.n_lanes
    c = len(topo.categories)
    m_p = Tensor(topo.m_p)
    m_s = Tensor(topo.m_s)
    m_l = Tensor(topo.m_l)
    m_r = Tensor(topo.m_r)
    m_c_flat = Tensor(topo.m_c.reshape(n * n, c))
    m_pre = Tensor(topo.m_pre_spd)
    m_suc = Tensor(topo.m_suc_spd)
    ones = Tensor(np.ones((n, n)))
    zeros = Tensor(np.zeros((n, n)))

    b_list, inter_list, outer_list = [], [], []
    for h in range(heads):
        if use_relations:
            gate = reshape(matmul(m_c_flat, bw.wc[h]), (n, n))
            lateral = multiply(gate, add(multiply(bw.wl[h], m_l), multiply(bw.wr[h], m_r)))
            b = add(add(multiply(bw.wp[h], m_p), multiply(bw.ws[h], m_s)), lateral)
        else:
            b = ones
        if use_reachability:
            d_inter = add(multiply(bw.wpre_inter[h], m_pre), multiply(bw.wsuc_inter[h], m_suc))
            d_outer = add(multiply(bw.wpre_outer[h], m_pre), multiply(bw.wsuc_outer[h], m_suc))
        else:
            d_inter, d_outer = zeros, ones
        b_list.append(b)
        inter_list.append(d_inter)
        outer_list.append(d_outer)
    return BiasSet(b=b_list, d_inter=inter_list, d_outer=outer_list)


# ---------------------------------------------------------------------------
# softmax probe

_SOFTMAX_TRACE: list | None = None


@contextlib.contextmanager
def capture_softmax():
    """Collect every attention probability matrix computed inside the block."""
    global _SOFTMAX_TRACE
    prev, _SOFTMAX_TRACE = _SOFTMAX_TRACE, []
    try:
        yield _SOFTMAX_TRACE
    finally:
        _SOFTMAX_TRACE = prev


def _record_softmax(p: Tensor) -> None:
    if _SOFTMAX_TRACE is not None:
        _SOFTMAX_TRACE.append(p.data.copy())


# ---------------------------------------------------------------------------
# attention ops

def _attention_core(q: Tensor, k: Tensor, v: Tensor, w: AttentionWeights,
                    cfg: AttentionConfig, mask: np.ndarray | None,
                    biases: BiasSet | None) -> Tensor:
    inv_sqrt_dk = 1.0 / np.sqrt(cfg.d_k)
    head_outputs = []
    for h in range(cfg.heads):
        qh = matmul(q, w.wq[h])
        kh = matmul(k, w.wk[h])
        vh = matmul(v, w.wv[h])
        logits = scale(matmul(qh, kh, transpose_b=True), inv_sqrt_dk)
        if biases is not None:
            logits = add(multiply(logits, biases.b[h]), biases.d_inter[h])
        p = row_softmax(logits, mask=mask)
        _record_softmax(p)
        if biases is not None:
            p = multiply(p, biases.d_outer[h])
        head_outputs.append(matmul(p, vh))
    joined = head_outputs[0] if cfg.heads == 1 else concat(head_outputs, axis=1)
    return matmul(joined, w.wo)


def standard_attention(q: Tensor, k: Tensor, v: Tensor, w: AttentionWeights,
                       cfg: AttentionConfig, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention; mask rows are query x key keep flags."""
    return _attention_core(q, k, v, w, cfg, mask, None)


def biased_attention(q: Tensor, k: Tensor, v: Tensor, w: AttentionWeights,
                     cfg: AttentionConfig, biases: BiasSet) -> Tensor:
    """Attention with logits shaped by B and D_inter, output by D_outer.

    Per head: softmax((QK^T / sqrt(d_k)) * B + D_inter) * D_outer, applied
    to V. No masking; the bias matrices carry all structure.
    """
    if biases.heads != cfg.heads:
        raise ValueError(f"bias set has {biases.heads} heads, config {cfg.heads}")
    return _attention_core(q, k, v, w, cfg, None, biases)


def nearest_neighbor_mask(q_pos: np.ndarray, k_pos: np.ndarray, e: int) -> np.ndarray:
    """Keep flags for each query's e nearest keys by Euclidean distance.

    Ties break toward the lower key index. e at or above the key count
    keeps everything.
    """
    if e < 1:
        raise ValueError(f"neighborhood size must be at least 1, got {e}")
    n_k = len(k_pos)
    if n_k == 0:
        raise ValueError("no keys to attend to")
    if e >= n_k:
        return np.ones((len(q_pos), n_k), dtype=bool)
    d = np.linalg.norm(q_pos[:, None, :] - k_pos[None, :, :], axis=2)
    order = np.argsort(d, axis=1, kind="stable")
    mask = np.zeros((len(q_pos), n_k), dtype=bool)
    np.put_along_axis(mask, order[:, :e], True, axis=1)
    return mask


def local_attention(q: Tensor, k: Tensor, v: Tensor, w: AttentionWeights,
                    cfg: AttentionConfig, q_pos: np.ndarray, k_pos: np.ndarray,
                    e: int) -> Tensor:
    """Standard attention restricted to each query's e nearest keys."""
    mask = nearest_neighbor_mask(np.asarray(q_pos), np.asarray(k_pos), e)
    return _attention_core(q, k, v, w, cfg, mask, None)


def _feed_forward(x: Tensor, w: FeedForwardWeights) -> Tensor:
    return add(matmul(relu(add(matmul(x, w.w1), w.b1)), w.w2), w.b2)


def transformer_layer(x_q: Tensor, x_kv: Tensor, w: LayerWeights, cfg: AttentionConfig,
                      mask: np.ndarray | None = None,
                      biases: BiasSet | None = None) -> Tensor:
    """Residual attention block with post-norm and a two-layer feed-forward."""
    att = _attention_core(x_q, x_kv, x_kv, w.attn, cfg, mask, biases)
    h1 = layer_norm(add(x_q, att), w.ln1_gain, w.ln1_bias)
    return layer_norm(add(h1, _feed_forward(h1, w.ffn)), w.ln2_gain, w.ln2_bias)
