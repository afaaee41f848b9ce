"""Unitary-attention joint embedding of image features and class-name vectors.

A full bilinear interaction between the flattened feature map and the stacked
class embeddings would need a rank-3 tensor over (d_f*f, d_e*k, d_j) entries,
which is kept here only as a tiny-dimension reference.  The factorized form
scores every (region channel, class channel) couple with a shared d_f x d_e
map, softmax-normalizes all f*k scores jointly into the attention map M, and
takes the M-weighted sum of per-couple joint vectors produced by a shared
d_f x d_e x d_j tensor.  The weighted sum is computed as a single contraction
(weight F against E through M first, then contract with the couple tensor),
so no per-couple joint vector is ever materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, astensor, matmul, reshape, softmax, transpose

FULL_BILINEAR_BUDGET = 100_000


@dataclass
class AttentionMap:
    """Couple weights M (f, k): positive, jointly normalized to total sum 1."""

    M: Tensor

    @property
    def f(self) -> int:
        return self.M.shape[0]

    @property
    def k(self) -> int:
        return self.M.shape[1]


@dataclass
class JointRepresentation:
    """Attention-weighted joint vector J (d_j,)."""

    J: Tensor

    @property
    def d_j(self) -> int:
        return self.J.shape[0]


def init_joint_params(
    d_f: int, d_e: int, d_j: int, rng: np.random.Generator, dtype=np.float64
) -> dict[str, Tensor]:
    """Couple tensor and attention map tensor, uniform in +-(d_f*d_e)^-0.5.

    The scale keeps initial attention logits O(1), so the first attention
    maps are near uniform.
    """
    s = float((d_f * d_e) ** -0.5)
    return {
        "t_u": Tensor(rng.uniform(-s, s, size=(d_f, d_e, d_j)).astype(dtype), requires_grad=True),
        "t_m": Tensor(rng.uniform(-s, s, size=(d_f, d_e)).astype(dtype), requires_grad=True),
    }


def _check_2d(name: str, t: Tensor, rows: int | None = None):
    if t.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {t.shape}")
    if rows is not None and t.shape[0] != rows:
        raise ValueError(f"{name} has {t.shape[0]} rows, expected {rows}")


def attention_logits_batch(feat_flat: Tensor, embeds: Tensor, t_m: Tensor) -> Tensor:
    """(B, d_f, f), (B, d_e, k) -> couple scores (B, f, k)."""
    return matmul(matmul(transpose(feat_flat, (0, 2, 1)), t_m), embeds)


def attention_map_batch(feat_flat: Tensor, embeds: Tensor, t_m: Tensor) -> Tensor:
    """Jointly softmax-normalized couple weights, per batch element."""
    logits = attention_logits_batch(feat_flat, embeds, t_m)
    b, f, k = logits.shape
    return reshape(softmax(reshape(logits, (b, f * k)), axis=-1), (b, f, k))


def attention_map(feat_flat, embeds, t_m) -> AttentionMap:
    """Couple attention for one image: softmax over all f*k scores of F^T T_M E."""
    feat_flat, embeds, t_m = astensor(feat_flat), astensor(embeds), astensor(t_m)
    _check_2d("flattened feature map", feat_flat)
    _check_2d("class embedding matrix", embeds)
    d_f, d_e = t_m.shape
    _check_2d("flattened feature map", feat_flat, rows=d_f)
    _check_2d("class embedding matrix", embeds, rows=d_e)
    batched = attention_map_batch(
        reshape(feat_flat, (1,) + tuple(feat_flat.shape)),
        reshape(embeds, (1,) + tuple(embeds.shape)),
        t_m,
    )
    return AttentionMap(M=batched[0])


def couple_joint(feat_col, embed_col, t_u) -> Tensor:
    """Joint vector of one (region channel, class channel) couple.

    out[c] = sum_ab t_u[a, b, c] * feat_col[a] * embed_col[b]
    """
    feat_col, embed_col, t_u = astensor(feat_col), astensor(embed_col), astensor(t_u)
    if t_u.ndim != 3:
        raise ValueError(f"couple tensor must be 3-D, got shape {t_u.shape}")
    d_f, d_e, d_j = t_u.shape
    if feat_col.shape != (d_f,):
        raise ValueError(f"feature column shape {feat_col.shape} does not match tensor {t_u.shape}")
    if embed_col.shape != (d_e,):
        raise ValueError(f"embedding column shape {embed_col.shape} does not match tensor {t_u.shape}")
    partial = reshape(matmul(feat_col, reshape(t_u, (d_f, d_e * d_j))), (d_e, d_j))
    return matmul(embed_col, partial)


def joint_representation_batch(
    feat_flat: Tensor, embeds: Tensor, t_u: Tensor, attn: Tensor
) -> Tensor:
    """(B, d_f, f), (B, d_e, k), attention (B, f, k) -> joint vectors (B, d_j).

    Contracts as (F M) E^T first, giving a (d_f, d_e) mixture per image, then
    applies the couple tensor once; equivalent to the attention-weighted sum
    of all f*k couple joints without materializing any of them.
    """
    d_f, d_e, d_j = t_u.shape
    mixed = matmul(matmul(feat_flat, attn), transpose(embeds, (0, 2, 1)))  # (B, d_f, d_e)
    b = mixed.shape[0]
    return matmul(reshape(mixed, (b, d_f * d_e)), reshape(t_u, (d_f * d_e, d_j)))


def joint_representation(feat_flat, embeds, t_u, attn) -> JointRepresentation:
    """Attention-weighted joint vector for one image."""
    feat_flat, embeds, t_u = astensor(feat_flat), astensor(embeds), astensor(t_u)
    m = attn.M if isinstance(attn, AttentionMap) else astensor(attn)
    f, k = feat_flat.shape[1], embeds.shape[1]
    if m.shape != (f, k):
        raise ValueError(f"attention map shape {m.shape} does not match couples ({f}, {k})")
    out = joint_representation_batch(
        reshape(feat_flat, (1,) + tuple(feat_flat.shape)),
        reshape(embeds, (1,) + tuple(embeds.shape)),
        t_u,
        reshape(m, (1, f, k)),
    )
    return JointRepresentation(J=out[0])


def full_bilinear_reference(feat_flat, embeds, t_full) -> JointRepresentation:
    """Unfactored bilinear joint vector, for tiny dimensions only.

    J^T = (T x_1 vec(F)) x_2 vec(E); the factorized path approximates this
    with far fewer parameters, so no numerical equality is implied.
    """
    feat_flat, embeds, t_full = astensor(feat_flat), astensor(embeds), astensor(t_full)
    if t_full.ndim != 3:
        raise ValueError(f"full tensor must be 3-D, got shape {t_full.shape}")
    d_big_f, d_big_e, d_j = t_full.shape
    if t_full.size > FULL_BILINEAR_BUDGET:
        raise ValueError(
            f"full bilinear tensor with {t_full.size} entries exceeds the "
            f"{FULL_BILINEAR_BUDGET}-entry budget"
        )
    if feat_flat.size != d_big_f:
        raise ValueError(f"vec(F) length {feat_flat.size} does not match tensor {t_full.shape}")
    if embeds.size != d_big_e:
        raise ValueError(f"vec(E) length {embeds.size} does not match tensor {t_full.shape}")
    vec_f = reshape(feat_flat, (d_big_f,))
    vec_e = reshape(embeds, (d_big_e,))
    partial = reshape(matmul(vec_f, reshape(t_full, (d_big_f, d_big_e * d_j))), (d_big_e, d_j))
    return JointRepresentation(J=matmul(vec_e, partial))


def factorized_param_count(d_f: int, d_e: int, d_j: int) -> int:
    return d_f * d_e * d_j + d_f * d_e


def full_param_count(d_f: int, d_e: int, d_j: int, f: int, k: int) -> int:
    return (d_f * f) * (d_e * k) * d_j
