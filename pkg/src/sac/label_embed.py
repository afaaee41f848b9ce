"""Class-name encoding: word embeddings plus a gated recurrent encoder.

Each class name is lowercased, split on non-alphanumeric runs, trimmed or
zero-padded to exactly 4 tokens, mapped through a learned 300-D word table
(row 0 is a frozen all-zero padding row), and folded by a GRU into a single
1024-D class vector.  Everything is trained end to end with the rest of the
model; no pretrained vectors are involved.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, embedding_lookup, matmul, mul, sigmoid, tanh

MAX_WORDS = 4
PAD_ID = 0
PAD_TOKEN = "<pad>"

_SPLIT = re.compile(r"[^a-z0-9]+")

GRU_PARAM_NAMES = (
    "w_xz", "w_hz", "b_z",
    "w_xr", "w_hr", "b_r",
    "w_xh", "w_hh", "b_h",
)


def tokenize(class_name: str) -> list[str]:
    toks = [t for t in _SPLIT.split(class_name.lower()) if t]
    if not toks:
        raise ValueError(f"class name {class_name!r} has no tokens after normalization")
    return toks


@dataclass(frozen=True)
class Vocabulary:
    """token -> id mapping over a closed class-name set; id 0 is padding."""

    tokens: tuple[str, ...]  # tokens[0] == PAD_TOKEN

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != PAD_TOKEN:
            raise ValueError(f"vocabulary must reserve id 0 for {PAD_TOKEN!r}")

    @classmethod
    def from_class_names(cls, names) -> "Vocabulary":
        seen: set[str] = set()
        for name in names:
            seen.update(tokenize(name))
        return cls(tokens=(PAD_TOKEN, *sorted(seen)))

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._index()[token]
        except KeyError:
            raise KeyError(f"unknown token {token!r}: the class-name set is closed") from None

    def _index(self) -> dict[str, int]:
        idx = getattr(self, "_cached_index", None)
        if idx is None:
            idx = {t: i for i, t in enumerate(self.tokens)}
            object.__setattr__(self, "_cached_index", idx)
        return idx

    def serialize(self) -> str:
        return "\n".join(self.tokens)

    @classmethod
    def deserialize(cls, text: str) -> "Vocabulary":
        return cls(tokens=tuple(text.split("\n")))


def tokenize_pad(class_name: str, vocab: Vocabulary) -> np.ndarray:
    """First MAX_WORDS token ids, zero-padded at the tail."""
    ids = [vocab.id_of(t) for t in tokenize(class_name)[:MAX_WORDS]]
    ids += [PAD_ID] * (MAX_WORDS - len(ids))
    return np.asarray(ids, dtype=np.intp)


def token_table(names: dict[int, str] | list[str], vocab: Vocabulary) -> np.ndarray:
    """Precomputed (N, MAX_WORDS) id matrix for a full class-id -> name map."""
    if isinstance(names, dict):
        n = len(names)
        if sorted(names) != list(range(n)):
            raise ValueError("class ids must be contiguous from 0")
        names = [names[i] for i in range(n)]
    return np.stack([tokenize_pad(nm, vocab) for nm in names])


def init_embed_params(
    vocab_size: int,
    word_dim: int,
    hidden_dim: int,
    rng: np.random.Generator,
    dtype=np.float64,
    scale: float = 0.08,
) -> dict[str, Tensor]:
    """Word table and GRU weights uniform in [-scale, scale]; biases zero.

    The padding row of the table starts at zero and is never touched by
    gradients (see ``embedding_lookup``), so it stays exactly zero.
    """
    table = rng.uniform(-scale, scale, size=(vocab_size, word_dim)).astype(dtype)
    table[PAD_ID] = 0.0
    params = {"table": Tensor(table, requires_grad=True)}
    for gate in "zrh":
        params[f"w_x{gate}"] = Tensor(
            rng.uniform(-scale, scale, size=(word_dim, hidden_dim)).astype(dtype),
            requires_grad=True,
        )
        params[f"w_h{gate}"] = Tensor(
            rng.uniform(-scale, scale, size=(hidden_dim, hidden_dim)).astype(dtype),
            requires_grad=True,
        )
        params[f"b_{gate}"] = Tensor(np.zeros(hidden_dim, dtype=dtype), requires_grad=True)
    return params


def embed_tokens(seq_ids: np.ndarray, params: dict[str, Tensor]) -> Tensor:
    """(..., 4) token ids -> (..., 4, word_dim) rows; padding rows are zero."""
    ids = np.asarray(seq_ids, dtype=np.intp)
    if ids.shape[-1] != MAX_WORDS:
        raise ValueError(f"token sequences must have length {MAX_WORDS}, got {ids.shape}")
    return embedding_lookup(params["table"], ids)


def gru_encode(seq_emb: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Run the gated recurrent cell over the word axis; return the last hidden state.

    seq_emb: (T, word_dim) for one name or (B, T, word_dim) for a batch.
    Update gate z and reset gate r use sigmoid; the candidate state uses tanh
    with the reset gate applied to the hidden term.  h starts at zero, so
    every entry of the output lies in (-1, 1).
    """
    single = seq_emb.ndim == 2
    x = seq_emb.reshape((1,) + tuple(seq_emb.shape)) if single else seq_emb
    b, t, _ = x.shape
    hidden = params["w_hz"].shape[0]
    h = Tensor(np.zeros((b, hidden), dtype=x.dtype))
    for step in range(t):
        xt = x[:, step, :]
        z = sigmoid(matmul(xt, params["w_xz"]) + matmul(h, params["w_hz"]) + params["b_z"])
        r = sigmoid(matmul(xt, params["w_xr"]) + matmul(h, params["w_hr"]) + params["b_r"])
        cand = tanh(matmul(xt, params["w_xh"]) + matmul(mul(r, h), params["w_hh"]) + params["b_h"])
        h = mul(z, h) + mul(1.0 - z, cand)
    if not np.isfinite(h.data).all():
        raise ValueError("non-finite hidden state in recurrent encoding")
    return h[0] if single else h


@dataclass
class ClassEmbeddingSet:
    """Class-name vectors for a top-k list, one column per candidate class."""

    E: Tensor  # (d_e, k)

    @property
    def d_e(self) -> int:
        return self.E.shape[0]

    @property
    def k(self) -> int:
        return self.E.shape[1]


def encode_names(ids_matrix: np.ndarray, params: dict[str, Tensor]) -> Tensor:
    """(N, 4) token ids -> (N, d_e) encoded name vectors."""
    return gru_encode(embed_tokens(ids_matrix, params), params)


def embed_topk(
    topk_classes, names: dict[int, str] | list[str], vocab: Vocabulary, params: dict[str, Tensor]
) -> ClassEmbeddingSet:
    """Encode the names of the top-k candidate classes into columns of E."""
    classes = np.asarray(
        topk_classes.classes if hasattr(topk_classes, "classes") else topk_classes, dtype=np.intp
    )
    lookup = names if isinstance(names, dict) else {i: nm for i, nm in enumerate(names)}
    try:
        ids = np.stack([tokenize_pad(lookup[int(c)], vocab) for c in classes])
    except KeyError as e:
        raise KeyError(f"no name for class id {e.args[0]}") from None
    encoded = encode_names(ids, params)  # (k, d_e)
    return ClassEmbeddingSet(E=encoded.transpose())
