import math

import numpy as np
import pytest

from gammacas.text import (
    NewsRecord,
    Vocab,
    attention_backward,
    attention_forward,
    clean_tokens,
    encode_text,
    encode_texts,
    encode_texts_backward,
    load_embedding_file,
    news_in_window,
    news_tweet_attention,
    positional_encoding,
    tokenize,
)


def weights(V, d, rng=None, scale=0.3):
    rng = rng or np.random.default_rng(0)
    return {"text.embedding": scale * rng.standard_normal((V, d)),
            "text.W_a": scale * rng.standard_normal(d), "text.B_a": np.array(0.1)}


class TestTokenize:
    vocab = Vocab.from_mapping({"hello": 2, "world": 3})

    def test_basic(self):
        ids, n = tokenize("Hello, WORLD", self.vocab, 4)
        assert ids.tolist() == [2, 3, 0, 0] and n == 2

    def test_empty(self):
        ids, n = tokenize("", self.vocab, 4)
        assert ids.tolist() == [0, 0, 0, 0] and n == 0

    def test_unknown(self):
        ids, n = tokenize("xyzzy", self.vocab, 4)
        assert ids.tolist() == [1, 0, 0, 0] and n == 1

    def test_truncates(self):
        ids, n = tokenize("hello world hello world hello", self.vocab, 3)
        assert ids.tolist() == [2, 3, 2] and n == 3

    def test_cleaning(self):
        assert clean_tokens("RT @bob: see https://t.co/x1 NOW!! www.ex.com ok") == ["rt", "see",
                                                                                     "now", "ok"]

    def test_vocab_reserved(self):
        v = Vocab(["a", "b", "a"])
        assert v.tokens[:2] == ["<pad>", "<unk>"] and v.lookup("b") == 3 and len(v) == 4
        with pytest.raises(ValueError):
            Vocab.from_mapping({"a": 1})


class TestPositional:
    def test_row_zero(self):
        P = positional_encoding(10, 8)
        assert np.array_equal(P[0, 0::2], np.zeros(4)) and np.array_equal(P[0, 1::2], np.ones(4))

    def test_d2_base4(self):
        P = positional_encoding(4, 2, base=4)
        np.testing.assert_allclose(P[1], [math.sin(1), math.cos(1)], rtol=1e-15)

    def test_formula_and_range(self):
        L, d = 36, 16
        P = positional_encoding(L, d)
        i, k = 7, 3
        ang = i * L ** (-2 * k / d)
        assert P[i, 2 * k] == pytest.approx(math.sin(ang)) and P[i, 2 * k + 1] == pytest.approx(
            math.cos(ang))
        assert np.abs(P).max() <= 1.0

    def test_odd_dimension(self):
        with pytest.raises(ValueError):
            positional_encoding(4, 3)


class TestEncodeText:
    def test_single_token(self):
        W = weights(5, 4)
        P = positional_encoding(6, 4)
        x, a = encode_text(np.array([3, 0, 0]), 1, W, P, return_attention=True)
        assert a.tolist() == [1.0]
        np.testing.assert_allclose(x, W["text.embedding"][3] + P[0], rtol=1e-15)

    def test_equal_scores(self):
        W = weights(5, 4)
        P = positional_encoding(6, 4)
        _, a = encode_text(np.array([2, 2]), 2, W, P, return_attention=True)
        np.testing.assert_allclose(a, [0.5, 0.5], rtol=1e-15)

    def test_ln3_scores(self):
        d = 2
        W = {"text.embedding": np.array([[0, 0], [0, 0], [math.log(3), 0.0], [0.0, 0.0]]),
             "text.W_a": np.array([1.0, 0.0]), "text.B_a": np.array(0.0)}
        _, a = encode_text(np.array([2, 3]), 2, W, np.zeros((4, d)), return_attention=True)
        np.testing.assert_allclose(a, [0.75, 0.25], rtol=1e-14)

    def test_zero_length(self):
        W = weights(5, 4)
        x = encode_text(np.zeros(3, dtype=int), 0, W, positional_encoding(3, 4))
        assert np.array_equal(x, np.zeros(4))

    def test_padding_gets_no_mass(self):
        W = weights(9, 6)
        _, cache = encode_texts(np.array([[2, 3, 4, 0, 0]]), np.array([3]), W,
                                positional_encoding(5, 6))
        assert np.all(cache["alpha"][0, 3:] == 0.0)
        assert cache["alpha"][0].sum() == pytest.approx(1.0, abs=1e-12)

    def test_permutation_without_positions(self):
        rng = np.random.default_rng(1)
        W = weights(12, 8, rng)
        P = np.zeros((5, 8))
        ids = rng.integers(2, 12, 5)
        perm = rng.permutation(5)
        x1, a1 = encode_text(ids, 5, W, P, return_attention=True)
        x2, a2 = encode_text(ids[perm], 5, W, P, return_attention=True)
        np.testing.assert_allclose(x1, x2, rtol=1e-12)
        np.testing.assert_allclose(a1[perm], a2, rtol=1e-12)


class TestNewsAttention:
    def test_single_item(self):
        n = np.array([[0.3, -1.0, 2.0, 0.5]])
        np.testing.assert_allclose(news_tweet_attention(np.ones(4), n), n[0])

    def test_identical_items(self):
        n = np.array([[1.0, 2.0], [1.0, 2.0]])
        out, b = news_tweet_attention(np.array([0.5, -3.0]), n, return_weights=True)
        np.testing.assert_allclose(b, [0.5, 0.5])
        np.testing.assert_allclose(out, n[0])

    def test_scaled_dot_product(self):
        n = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
        out, b = news_tweet_attention(np.array([2.0, 0, 0, 0]), n, return_weights=True)
        b1 = math.e / (math.e + 1)
        np.testing.assert_allclose(b, [b1, 1 - b1], rtol=1e-14)
        np.testing.assert_allclose(out, b1 * n[0] + (1 - b1) * n[1], rtol=1e-14)

    def test_no_news(self):
        out = news_tweet_attention(np.ones(4), np.zeros((0, 4)))
        assert np.array_equal(out, np.zeros(4))

    def test_window_closed_and_capped(self):
        news = [NewsRecord(t, f"h{t}") for t in (0.0, 10.0, 20.0, 30.0)]
        times = [n.time for n in news]
        assert news_in_window(news, times, 20.0, 10.0, 64) == [1, 2, 3]
        assert news_in_window(news, times, 20.0, 10.0, 2) == [2, 3]


def _fd(loss, arr, eps=1e-6):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + eps
        hi = loss()
        arr[idx] = old - eps
        lo = loss()
        arr[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def test_encoder_and_attention_gradients():
    rng = np.random.default_rng(7)
    V, d = 10, 6
    W = weights(V, d, rng, scale=0.8)
    W["text.B_a"] = np.array(0.3)
    P = positional_encoding(5, d)
    ids = np.array([[2, 3, 4, 0, 0], [5, 5, 9, 8, 1]])
    lens = np.array([3, 5])
    nids = np.array([[6, 7, 0, 0, 0], [2, 9, 3, 0, 0], [4, 0, 0, 0, 0]])
    nlens = np.array([2, 3, 1])
    index = np.array([[0, 1, -1], [2, 0, 1]])
    G = rng.standard_normal((2, d))

    def loss():
        x, _ = encode_texts(ids, lens, W, P)
        nv, _ = encode_texts(nids, nlens, W, P)
        out, _ = attention_forward(x, nv, index)
        return float(np.sum(out * G))

    x, tc = encode_texts(ids, lens, W, P)
    nv, nc = encode_texts(nids, nlens, W, P)
    _, ac = attention_forward(x, nv, index)
    grads = {}
    dx, dn = attention_backward(G, ac, nv.shape[0])
    encode_texts_backward(dn, nc, W, grads)
    encode_texts_backward(dx, tc, W, grads)
    for name in ("text.embedding", "text.W_a", "text.B_a"):
        W[name] = np.array(W[name], dtype=float)
        np.testing.assert_allclose(grads[name], _fd(loss, W[name]), rtol=1e-4, atol=1e-8,
                                   err_msg=name)


def test_embedding_file(tmp_path):
    vocab = Vocab(["cat", "dog"])
    path = tmp_path / "vec.txt"
    path.write_text("cat 1 2\nemu 5 5\n\ndog -1 0.5\n")
    emb = load_embedding_file(path, vocab, 2)
    np.testing.assert_array_equal(emb[2:], [[1, 2], [-1, 0.5]])
    path.write_text("cat 1 2 3\n")
    with pytest.raises(ValueError, match=":1:"):
        load_embedding_file(path, vocab, 2)
