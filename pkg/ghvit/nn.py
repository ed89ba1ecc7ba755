"""Transformer blocks shared by both hierarchy levels.

Linear maps are written x @ W + b with W stored as [in, out].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from ghvit.errors import ShapeError
from ghvit.tensor import Tensor, gelu, layer_norm, matmul, softmax

MLP_RATIO = 4


@dataclass(frozen=True)
class AttentionParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    b_q: Tensor
    b_k: Tensor
    b_v: Tensor
    b_o: Tensor
    heads: int

    def __post_init__(self) -> None:
        d = self.w_q.shape[0]
        if self.heads < 1 or d % self.heads:
            raise ShapeError(f"embed dim {d} is not divisible by {self.heads} heads")
        for name in ("w_q", "w_k", "w_v", "w_o"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"attention {name} must be ({d}, {d}), got {getattr(self, name).shape}")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str, heads: int) -> "AttentionParams":
        return cls(
            w_q=params[f"{prefix}.w_q"],
            w_k=params[f"{prefix}.w_k"],
            w_v=params[f"{prefix}.w_v"],
            w_o=params[f"{prefix}.w_o"],
            b_q=params[f"{prefix}.b_q"],
            b_k=params[f"{prefix}.b_k"],
            b_v=params[f"{prefix}.b_v"],
            b_o=params[f"{prefix}.b_o"],
            heads=heads,
        )


@dataclass(frozen=True)
class EncoderLayerParams:
    attention: AttentionParams
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    mlp_w1: Tensor  # [D, 4D]
    mlp_b1: Tensor
    mlp_w2: Tensor  # [4D, D]
    mlp_b2: Tensor

    def __post_init__(self) -> None:
        d = self.attention.dim
        if self.mlp_w1.shape != (d, MLP_RATIO * d) or self.mlp_w2.shape != (MLP_RATIO * d, d):
            raise ShapeError(
                f"MLP weights must be ({d}, {MLP_RATIO * d}) and ({MLP_RATIO * d}, {d}), "
                f"got {self.mlp_w1.shape} and {self.mlp_w2.shape}"
            )

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str, heads: int) -> "EncoderLayerParams":
        return cls(
            attention=AttentionParams.from_params(params, f"{prefix}.attn", heads),
            ln1_gamma=params[f"{prefix}.ln1.gamma"],
            ln1_beta=params[f"{prefix}.ln1.beta"],
            ln2_gamma=params[f"{prefix}.ln2.gamma"],
            ln2_beta=params[f"{prefix}.ln2.beta"],
            mlp_w1=params[f"{prefix}.mlp.w1"],
            mlp_b1=params[f"{prefix}.mlp.b1"],
            mlp_w2=params[f"{prefix}.mlp.w2"],
            mlp_b2=params[f"{prefix}.mlp.b2"],
        )


def _split_heads(t: Tensor, heads: int) -> Tensor:
    b, n, d = t.shape
    return t.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _attend(x: Tensor, p: AttentionParams) -> tuple[Tensor, Tensor]:
    if x.ndim != 3 or x.shape[-1] != p.dim:
        raise ShapeError(f"attention expects [B, N, {p.dim}] input, got {x.shape}")
    b, n, d = x.shape
    q = _split_heads(matmul(x, p.w_q) + p.b_q, p.heads)
    k = _split_heads(matmul(x, p.w_k) + p.b_k, p.heads)
    v = _split_heads(matmul(x, p.w_v) + p.b_v, p.heads)
    scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(p.head_dim))
    probs = softmax(scores)  # [B, H, N, N]
    context = matmul(probs, v).transpose(0, 2, 1, 3).reshape(b, n, d)
    return matmul(context, p.w_o) + p.b_o, probs


def mhsa(x: Tensor, p: AttentionParams) -> Tensor:
    """Multi-head scaled dot-product self-attention, no mask."""
    out, _ = _attend(x, p)
    return out


def attention_probs(x: Tensor, p: AttentionParams) -> Tensor:
    """Per-head attention weights [B, H, N, N] for the same input."""
    _, probs = _attend(x, p)
    return probs


def mlp(x: Tensor, p: EncoderLayerParams) -> Tensor:
    return matmul(gelu(matmul(x, p.mlp_w1) + p.mlp_b1), p.mlp_w2) + p.mlp_b2


def encoder_layer(x: Tensor, p: EncoderLayerParams) -> Tensor:
    """Pre-LN residual block: attention then MLP, each behind its own LayerNorm."""
    x = x + mhsa(layer_norm(x, p.ln1_gamma, p.ln1_beta), p.attention)
    return x + mlp(layer_norm(x, p.ln2_gamma, p.ln2_beta), p)
