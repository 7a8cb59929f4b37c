"""Word-attention text encoder and news-tweet attention.

Weight names: ``text.embedding`` (|V|, d), ``text.W_a`` (d,), ``text.B_a``
(scalar). The positional table is fixed and not stored with the weights.
"""

from __future__ import annotations

import bisect
import math
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

PAD = 0
UNK = 1

_URL = re.compile(r"(https?://\S+|www\.\S+)")
_MENTION = re.compile(r"@\w+")
_SPLIT = re.compile(r"[^0-9a-z]+")


class Vocab:
    """Token to index map; 0 is padding and 1 is the unknown token."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens = ["<pad>", "<unk>"]
        self.index: dict[str, int] = {}
        for tok in tokens:
            if tok in self.index or tok in ("<pad>", "<unk>"):
                continue
            self.index[tok] = len(self.tokens)
            self.tokens.append(tok)

    @classmethod
    def from_mapping(cls, mapping: dict[str, int]) -> "Vocab":
        ordered = sorted(mapping.items(), key=lambda kv: kv[1])
        expected = list(range(2, 2 + len(ordered)))
        if [i for _, i in ordered] != expected:
            raise ValueError("vocab indices must be dense starting at 2")
        return cls(tok for tok, _ in ordered)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def lookup(self, tok: str) -> int:
        return self.index.get(tok, UNK)


@dataclass(frozen=True)
class NewsRecord:
    time: float
    headline: str
    source: str = ""


def clean_tokens(text: str) -> list[str]:
    """Lowercase, drop URLs and @-mentions, split on non-alphanumerics."""
    text = _MENTION.sub(" ", _URL.sub(" ", text.lower()))
    return [tok for tok in _SPLIT.split(text) if tok]


def tokenize(text: str, vocab: Vocab, max_len: int) -> tuple[np.ndarray, int]:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    toks = clean_tokens(text)[:max_len]
    ids = np.zeros(max_len, dtype=np.int64)
    for i, tok in enumerate(toks):
        ids[i] = vocab.lookup(tok)
    return ids, len(toks)


def positional_encoding(L_max: int, d: int, base: float | None = None) -> np.ndarray:
    """Sinusoidal table with angle ``i * base^(-2k/d)`` at columns 2k, 2k+1.

    ``base`` defaults to ``L_max``.
    """
    if d % 2:
        raise ValueError(f"embedding dimension must be even, got {d}")
    base = float(L_max if base is None else base)
    if base <= 1:
        raise ValueError("positional base must exceed 1")
    i = np.arange(L_max, dtype=np.float64)[:, None]
    k = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = i * base ** (-2.0 * k / d)
    table = np.empty((L_max, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def load_embedding_file(path, vocab: Vocab, d: int, out: np.ndarray | None = None) -> np.ndarray:
    """Fill rows of an embedding matrix from a ``token v1 ... vd`` text file.

    Tokens missing from the vocabulary are skipped; rows for vocabulary
    tokens absent from the file keep their existing values.
    """
    emb = np.zeros((len(vocab), d)) if out is None else out
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d} values, got {len(parts) - 1}")
            idx = vocab.index.get(parts[0])
            if idx is not None:
                emb[idx] = [float(v) for v in parts[1:]]
    return emb


def news_in_window(news: Sequence[NewsRecord], times: Sequence[float], t0: float,
                   half_width_s: float, cap: int) -> list[int]:
    """Indices of articles with time in [t0 - w, t0 + w], at most ``cap`` most recent.

    ``news`` must be sorted by time and ``times`` the matching time list.
    """
    lo = bisect.bisect_left(times, t0 - half_width_s)
    hi = bisect.bisect_right(times, t0 + half_width_s)
    return list(range(max(lo, hi - cap), hi))


# ---------------------------------------------------------------------------
# single-text API


def _masked_softmax(scores, mask):
    if scores.shape[-1] == 0:
        return np.zeros(scores.shape)
    scores = np.where(mask, scores, -np.inf)
    top = np.max(scores, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(scores - top), 0.0)
    total = e.sum(axis=-1, keepdims=True)
    return np.where(total > 0, e / np.where(total > 0, total, 1.0), 0.0)


def encode_text(ids, length: int, weights, P: np.ndarray, return_attention: bool = False):
    """Attention-pooled representation of one tokenized text."""
    ids = np.asarray(ids, dtype=np.int64)
    if length > ids.shape[0]:
        raise ValueError("length exceeds token list")
    X, cache = encode_texts(ids[None, :], np.array([length]), weights, P)
    if return_attention:
        return X[0], cache["alpha"][0, :length]
    return X[0]


def news_tweet_attention(x_tweet, news_vecs, return_weights: bool = False):
    """Scaled dot-product attention of one tweet vector over news vectors."""
    x = np.asarray(x_tweet, dtype=np.float64)
    n = np.asarray(news_vecs, dtype=np.float64).reshape(-1, x.shape[0])
    idx = np.arange(n.shape[0])[None, :]
    out, cache = attention_forward(x[None, :], n, idx)
    if return_weights:
        return out[0], cache["beta"][0]
    return out[0]


# ---------------------------------------------------------------------------
# batched forward/backward


def scatter_rows(n_rows, idx, vals):
    """Sum rows of ``vals`` into an (n_rows, d) array at row indices ``idx``."""
    out = np.zeros((n_rows, vals.shape[-1]))
    if idx.size == 0:
        return out
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    uniq, starts = np.unique(sorted_idx, return_index=True)
    out[uniq] = np.add.reduceat(vals[order], starts, axis=0)
    return out


def encode_texts(ids, lengths, W, P):
    """Encode N texts (N, L) at once; returns (N, d) and a cache."""
    N, L = ids.shape
    V = W["text.embedding"][ids]
    Vp = V + P[:L][None, :, :]
    scores = V @ W["text.W_a"] + W["text.B_a"]
    mask = np.arange(L)[None, :] < np.asarray(lengths)[:, None]
    alpha = _masked_softmax(scores, mask)
    X = np.einsum("nl,nld->nd", alpha, Vp)
    return X, {"ids": ids, "mask": mask, "V": V, "Vp": Vp, "alpha": alpha}


def encode_texts_backward(dX, cache, W, grads):
    alpha, V, Vp, mask, ids = cache["alpha"], cache["V"], cache["Vp"], cache["mask"], cache["ids"]
    dalpha = np.einsum("nd,nld->nl", dX, Vp)
    ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    dV = alpha[:, :, None] * dX[:, None, :] + ds[:, :, None] * W["text.W_a"][None, None, :]
    g_wa = np.einsum("nl,nld->d", ds, V)
    g_ba = ds.sum()
    dE = scatter_rows(W["text.embedding"].shape[0], ids[mask], dV[mask])
    grads["text.embedding"] = grads.get("text.embedding", 0.0) + dE
    grads["text.W_a"] = grads.get("text.W_a", 0.0) + g_wa
    grads["text.B_a"] = grads.get("text.B_a", 0.0) + g_ba


def attention_forward(X, Nv, index):
    """Each row of X attends over ``Nv[index[b]]``; -1 entries are padding."""
    B, d = X.shape
    valid = index >= 0
    G = Nv[np.where(valid, index, 0)] if Nv.shape[0] else np.zeros(index.shape + (d,))
    scores = np.einsum("bd,bjd->bj", X, G) / math.sqrt(d)
    beta = _masked_softmax(scores, valid)
    out = np.einsum("bj,bjd->bd", beta, G)
    return out, {"X": X, "G": G, "beta": beta, "valid": valid, "index": index}


def attention_backward(dout, cache, n_news):
    X, G, beta, valid, index = cache["X"], cache["G"], cache["beta"], cache["valid"], cache["index"]
    d = X.shape[1]
    dbeta = np.einsum("bd,bjd->bj", dout, G)
    dsc = beta * (dbeta - (beta * dbeta).sum(axis=1, keepdims=True)) / math.sqrt(d)
    dX = np.einsum("bj,bjd->bd", dsc, G)
    dG = beta[:, :, None] * dout[:, None, :] + dsc[:, :, None] * X[:, None, :]
    return dX, scatter_rows(n_news, index[valid], dG[valid])
