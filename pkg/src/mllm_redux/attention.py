"""Multi-head self-attention and the pre-norm transformer block."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .linalg import NEG_INF, as_matrix, gelu, matmul, row_sums, softmax_rows

LN_EPS = 1e-5


@dataclass
class AttentionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    n_heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"{name} must be {d}x{d}, got {getattr(self, name).shape}")
        if self.n_heads < 1 or d % self.n_heads:
            raise ShapeError(f"d_model {d} not divisible by n_heads {self.n_heads}")

    @property
    def d_model(self):
        return self.w_q.shape[0]

    @property
    def d_head(self):
        return self.d_model // self.n_heads


@dataclass
class BlockParams:
    attention: AttentionParams
    mlp_in: np.ndarray
    mlp_out: np.ndarray
    ln1_scale: np.ndarray
    ln1_shift: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray

    def __post_init__(self):
        d = self.attention.d_model
        d_ff = self.mlp_in.shape[1]
        if self.mlp_in.shape != (d, d_ff) or self.mlp_out.shape != (d_ff, d):
            raise ShapeError(f"mlp shapes {self.mlp_in.shape}, {self.mlp_out.shape} inconsistent with d_model {d}")
        for name in ("ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift"):
            if getattr(self, name).shape != (d,):
                raise ShapeError(f"{name} must have length {d}")


@dataclass
class AttentionRecord:
    """Post-softmax weights per head, their head mean, and the mean pre-softmax scores."""

    per_head_weights: list
    averaged_weights: np.ndarray
    averaged_scores: np.ndarray


def causal_mask(seq_len):
    if seq_len < 1:
        raise ShapeError("seq_len must be at least 1")
    return np.triu(np.full((seq_len, seq_len), NEG_INF), k=1)


def zero_mask(seq_len):
    return np.zeros((seq_len, seq_len))


def _head_mean(mats):
    acc = np.zeros_like(mats[0])
    for m in mats:
        acc = acc + m
    return acc / len(mats)


def multi_head_self_attention(x, params, mask):
    x = as_matrix(x, "x")
    seq, d = x.shape
    if d != params.d_model:
        raise ShapeError(f"x has {d} features, params expect {params.d_model}")
    if np.shape(mask) != (seq, seq):
        raise ShapeError(f"mask must be {seq}x{seq}, got {np.shape(mask)}")
    q = matmul(x, params.w_q)
    k = matmul(x, params.w_k)
    v = matmul(x, params.w_v)
    dh = params.d_head
    scale = np.sqrt(dh)
    weights, scores, heads = [], [], []
    for h in range(params.n_heads):
        cols = slice(h * dh, (h + 1) * dh)
        s = matmul(q[:, cols], k[:, cols].T) / scale
        w = softmax_rows(s, mask)
        scores.append(s)
        weights.append(w)
        heads.append(matmul(w, v[:, cols]))
    out = matmul(np.concatenate(heads, axis=1), params.w_o)
    return out, AttentionRecord(weights, _head_mean(weights), _head_mean(scores))


def layer_norm(x, scale, shift):
    x = as_matrix(x, "x")
    if x.shape[1] < 1:
        raise ShapeError("layer_norm needs at least one column")
    n = x.shape[1]
    mean = row_sums(x) / n
    centered = x - mean[:, None]
    var = row_sums(centered * centered) / n
    return centered / np.sqrt(var + LN_EPS)[:, None] * scale + shift


def attention_sublayer(x, params, mask, literal_mode=False):
    """Residual attention half of a block: ``x + MSA(norm(x))``."""
    h = x if literal_mode else layer_norm(x, params.ln1_scale, params.ln1_shift)
    a, record = multi_head_self_attention(h, params.attention, mask)
    return x + a, record


def mlp_sublayer(x, params, literal_mode=False):
    """Residual feed-forward half of a block: ``x + MLP(norm(x))``."""
    h = x if literal_mode else layer_norm(x, params.ln2_scale, params.ln2_shift)
    return x + matmul(gelu(matmul(h, params.mlp_in)), params.mlp_out)


def transformer_block(x, params, mask, literal_mode=False):
    """One encoder/decoder block.

    The default applies pre-layer-normalization before each sublayer;
    ``literal_mode`` drops both normalizations so that the block is
    exactly ``z' = MSA(z) + z`` followed by ``z = MLP(z') + z'``.
    """
    z_prime, record = attention_sublayer(x, params, mask, literal_mode)
    return mlp_sublayer(z_prime, params, literal_mode), record
