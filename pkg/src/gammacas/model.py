"""The full cascade-size predictor.

Bins and follower sums go through the recurrent encoder; each bin's hidden
state is mapped to (A'_m, gamma_m, lambda_m); the tweet/news text path
produces a non-negative modulation that scales every A'_m; the per-bin
triples are mean-pooled and integrated to each prediction horizon. The
per-bin triples also forecast the next bin's retweet count, which feeds an
auxiliary squared-error term.

Everything runs on batches of featurized samples (:class:`Samples`); the
single-cascade helpers wrap a batch of one.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import sequence, text
from .growth import GrowthParams, QuadratureConfig, integrate_batch
from .sequence import CascadeRecord
from .text import NewsRecord, Vocab

MODES = ("full", "text_only", "cascade_only", "plain_lstm")
DEFAULT_HORIZONS = (12.0, 18.0, 24.0, 36.0, 48.0, 72.0, 120.0, 240.0, 360.0)


class WeightFormatError(ValueError):
    """Malformed, truncated or mismatched weight file."""


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "full"
    bin_width: float = 1.0 / 12.0
    window: float = 6.0
    horizons: tuple = DEFAULT_HORIZONS
    zeta: float = 0.25
    quad_steps: int = 256
    quad_grading: int = 3
    state_size: int = 16
    embed_dim: int = 256
    tweet_len: int = 30
    news_len: int = 36
    news_cap: int = 64
    vocab_size: int = 2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.bin_width <= 0 or self.window <= 0:
            raise ValueError("bin_width and window must be positive")
        M = round(self.window / self.bin_width)
        if M < 1 or abs(M * self.bin_width - self.window) > 1e-9:
            raise ValueError("window must be an integer multiple of bin_width")
        object.__setattr__(self, "horizons", tuple(float(h) for h in self.horizons))
        if not self.horizons or any(h <= self.window for h in self.horizons):
            raise ValueError("every horizon must exceed the observation window")
        if not (0 <= self.zeta < 1):
            raise ValueError("zeta must lie in [0, 1)")
        if self.embed_dim % 2 or self.embed_dim < 2:
            raise ValueError("embed_dim must be even")
        if min(self.state_size, self.tweet_len, self.news_len, self.news_cap, self.quad_steps) < 1:
            raise ValueError("sizes must be positive")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must include padding and unknown")

    @property
    def n_bins(self) -> int:
        return round(self.window / self.bin_width)

    @property
    def quadrature(self) -> QuadratureConfig:
        return QuadratureConfig(self.quad_steps, self.quad_grading)

    @property
    def uses_text(self) -> bool:
        return self.mode != "cascade_only"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["horizons"] = list(self.horizons)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["horizons"] = tuple(d.get("horizons", DEFAULT_HORIZONS))
        return cls(**d)


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    s, d = cfg.state_size, cfg.embed_dim
    shapes: dict[str, tuple] = {k: () for k in sequence.NORM_KEYS}
    if cfg.mode == "plain_lstm":
        for gate in "ifoc":
            shapes[f"lstm.W_{gate}"] = (2 + s, s)
            shapes[f"lstm.B_{gate}"] = (s,)
    else:
        for gate in ("g", "in", "c"):
            shapes[f"cell.W_{gate}"] = (1 + s, s)
            shapes[f"cell.B_{gate}"] = (s,)
        shapes["cell.W_f"] = (1, s)
        shapes["cell.B_f"] = (s,)
        shapes["cell.W_h"] = (s, s)
        shapes["cell.B_h"] = (s,)
    for head in ("A", "gamma", "lambda"):
        shapes[f"head.W_{head}"] = (s,)
        shapes[f"head.B_{head}"] = ()
    if cfg.uses_text:
        shapes["text.embedding"] = (cfg.vocab_size, d)
        shapes["text.W_a"] = (d,)
        shapes["text.B_a"] = ()
        shapes["head.W_mu"] = (d,)
        shapes["head.B_mu"] = ()
    return shapes


@functools.lru_cache(maxsize=8)
def _positions(L: int, d: int) -> np.ndarray:
    table = text.positional_encoding(L, d)
    table.setflags(write=False)
    return table


def positions_for(cfg: ModelConfig) -> np.ndarray:
    # one table for tweets and headlines; its base is the longest allowed text
    return _positions(max(cfg.tweet_len, cfg.news_len, 2), cfg.embed_dim)


# ---------------------------------------------------------------------------
# featurization


@dataclass
class Samples:
    """Featurized cascades ready for batched evaluation."""

    ids: list
    counts: np.ndarray          # (N, M) retweets per bin
    followers: np.ndarray       # (N, M) follower sums per bin
    tweet_ids: np.ndarray       # (N, tweet_len)
    tweet_len: np.ndarray       # (N,)
    news_ids: np.ndarray        # (K, news_len)
    news_len: np.ndarray        # (K,)
    news_index: np.ndarray      # (N, J), -1 padded, rows of news_ids
    targets: np.ndarray         # (N, H) realized sizes at the config horizons
    root_followers: np.ndarray  # (N,)
    news_source: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.ids)

    def subset(self, idx) -> "Samples":
        idx = np.asarray(idx, dtype=np.int64)
        nidx = self.news_index[idx]
        used = np.unique(nidx[nidx >= 0])
        remap = np.full(max(self.news_ids.shape[0], 1), -1, dtype=np.int64)
        remap[used] = np.arange(used.shape[0])
        new_index = np.where(nidx >= 0, remap[np.where(nidx >= 0, nidx, 0)], -1)
        return Samples(
            ids=[self.ids[i] for i in idx],
            counts=self.counts[idx],
            followers=self.followers[idx],
            tweet_ids=self.tweet_ids[idx],
            tweet_len=self.tweet_len[idx],
            news_ids=self.news_ids[used],
            news_len=self.news_len[used],
            news_index=new_index,
            targets=self.targets[idx],
            root_followers=self.root_followers[idx],
            news_source=self.news_source[used] if self.news_source.size else used,
        )


def featurize(cascades: Sequence[CascadeRecord], news: Sequence[NewsRecord], vocab: Vocab,
              cfg: ModelConfig) -> Samples:
    """Bin, tokenize and window every cascade. ``news`` must be time-sorted."""
    M = cfg.n_bins
    N = len(cascades)
    counts = np.zeros((N, M))
    followers = np.zeros((N, M))
    tweet_ids = np.zeros((N, cfg.tweet_len), dtype=np.int64)
    tweet_len = np.zeros(N, dtype=np.int64)
    targets = np.zeros((N, len(cfg.horizons)))
    root_followers = np.zeros(N)
    news_times = [n.time for n in news]
    window_s = cfg.window * 3600.0
    rows = []
    for i, c in enumerate(cascades):
        b = sequence.bin_cascade(c, cfg.bin_width, M)
        counts[i] = b.retweet_counts
        followers[i] = b.follower_sums
        tweet_ids[i], tweet_len[i] = text.tokenize(c.root_text, vocab, cfg.tweet_len)
        times = c.event_times_hours()
        targets[i] = np.searchsorted(times, np.asarray(cfg.horizons), side="right")
        root_followers[i] = c.root_followers
        rows.append(text.news_in_window(news, news_times, c.root_time, window_s, cfg.news_cap)
                    if cfg.uses_text else [])
    used = sorted({j for r in rows for j in r})
    pos = {j: k for k, j in enumerate(used)}
    J = max((len(r) for r in rows), default=0)
    news_index = np.full((N, max(J, 1)), -1, dtype=np.int64)
    for i, r in enumerate(rows):
        news_index[i, :len(r)] = [pos[j] for j in r]
    news_ids = np.zeros((len(used), cfg.news_len), dtype=np.int64)
    news_len = np.zeros(len(used), dtype=np.int64)
    for k, j in enumerate(used):
        news_ids[k], news_len[k] = text.tokenize(news[j].headline, vocab, cfg.news_len)
    return Samples([c.id for c in cascades], counts, followers, tweet_ids, tweet_len, news_ids,
                   news_len, news_index, targets, root_followers, np.array(used, dtype=np.int64))


# ---------------------------------------------------------------------------
# single-bin helpers


def relu(x):
    return np.maximum(x, 0.0)


def softplus(x):
    return np.logaddexp(0.0, x)


def per_bin_params(h_m, weights) -> tuple[float, float, float]:
    h_m = np.asarray(h_m, dtype=np.float64)
    if h_m.shape != weights["head.W_A"].shape:
        raise ValueError(f"hidden vector shape {h_m.shape} does not match heads")
    a = float(relu(h_m @ weights["head.W_A"] + weights["head.B_A"]))
    g = float(relu(h_m @ weights["head.W_gamma"] + weights["head.B_gamma"]))
    lam = float(softplus(h_m @ weights["head.W_lambda"] + weights["head.B_lambda"]))
    return a, g, lam


def modulate_scale(a_prime: float, x_exo, weights) -> float:
    x_exo = np.asarray(x_exo, dtype=np.float64)
    if x_exo.shape != weights["head.W_mu"].shape:
        raise ValueError("exogenous vector does not match modulation head")
    return float(a_prime * relu(x_exo @ weights["head.W_mu"] + weights["head.B_mu"]))


def pool_params(per_bin) -> GrowthParams:
    arr = np.asarray(per_bin, dtype=np.float64).reshape(-1, 3)
    if arr.shape[0] < 1:
        raise ValueError("need at least one bin")
    A, g, lam = arr.mean(axis=0)
    return GrowthParams(float(A), float(g), float(lam))


def ar_times(M: int, bin_width: float) -> np.ndarray:
    """Midpoints of bins 2..M (hours from the root)."""
    return (np.arange(M - 1) + 1.5) * bin_width


def autoregressive_forecast(per_bin, bin_width: float) -> np.ndarray:
    """Forecast bin m+1's count from bin m's triple at bin m+1's midpoint."""
    arr = np.asarray(per_bin, dtype=np.float64).reshape(-1, 3)
    M = arr.shape[0]
    if M < 2:
        raise ValueError("autoregressive forecast needs M >= 2")
    t = ar_times(M, bin_width)
    A, g, lam = arr[:-1, 0], arr[:-1, 1], arr[:-1, 2]
    return A * t**g * np.exp(-lam * t) * bin_width


# ---------------------------------------------------------------------------
# batched forward / loss / backward


def forward_batch(S: Samples, W, cfg: ModelConfig, horizons=None):
    """Evaluate the model on a batch; returns (outputs dict, cache)."""
    horizons = cfg.horizons if horizons is None else tuple(horizons)
    M = cfg.n_bins
    lc = np.log1p(S.counts)
    lf = np.log1p(S.followers)
    r = W["norm.r_w"] * lc + W["norm.r_b"]
    f = W["norm.f_w"] * lf + W["norm.f_b"]
    if cfg.mode == "plain_lstm":
        H, seq_cache = sequence.lstm_forward(r, f, W)
    else:
        H, seq_cache = sequence.modified_forward(r, f, W)
    pre_a = H @ W["head.W_A"] + W["head.B_A"]
    pre_g = H @ W["head.W_gamma"] + W["head.B_gamma"]
    pre_l = H @ W["head.W_lambda"] + W["head.B_lambda"]
    a_prime = relu(pre_a)
    gam = relu(pre_g)
    lam = softplus(pre_l)
    out = {"H": H, "a_prime": a_prime}
    cache = {"seq": seq_cache, "lc": lc, "lf": lf, "pre_a": pre_a, "pre_g": pre_g, "pre_l": pre_l}
    if cfg.uses_text:
        P = positions_for(cfg)
        x_tweet, tcache = text.encode_texts(S.tweet_ids, S.tweet_len, W, P)
        cache["tweet"] = tcache
        out["alpha"] = tcache["alpha"]
        if cfg.mode == "text_only":
            x_exo = x_tweet
        else:
            n_vecs, ncache = text.encode_texts(S.news_ids, S.news_len, W, P)
            x_exo, acache = text.attention_forward(x_tweet, n_vecs, S.news_index)
            cache["news"] = ncache
            cache["att"] = acache
            out["beta"] = acache["beta"]
        pre_mu = x_exo @ W["head.W_mu"] + W["head.B_mu"]
        mu = relu(pre_mu)
        A_m = a_prime * mu[:, None]
        cache.update(x_exo=x_exo, pre_mu=pre_mu, mu=mu)
        out["mu"] = mu
    else:
        A_m = a_prime
    A, G, L = A_m.mean(axis=1), gam.mean(axis=1), lam.mean(axis=1)
    Y, dYdA, dYdG, dYdL = integrate_batch(A, G, L, horizons, cfg.quadrature)
    if M >= 2:
        t = ar_times(M, cfg.bin_width)
        base = t[None, :] ** gam[:, :-1] * np.exp(-lam[:, :-1] * t[None, :]) * cfg.bin_width
        c_hat = A_m[:, :-1] * base
    else:
        base = c_hat = np.zeros((len(S), 0))
    out.update(A_m=A_m, gamma_m=gam, lambda_m=lam, A=A, gamma=G, lam=L, Y=Y, ar=c_hat,
               horizons=horizons)
    cache.update(dYdA=dYdA, dYdG=dYdG, dYdL=dYdL, ar_base=base)
    return out, cache


def _sample_losses(out, S: Samples, cfg: ModelConfig):
    actual = S.targets
    if np.any(actual <= 0):
        raise ValueError("actual sizes must be positive at every horizon")
    mape = (np.abs(actual - out["Y"]) / actual).mean(axis=1)
    M = cfg.n_bins
    if M >= 2:
        resid = S.counts[:, 1:] - out["ar"]
        ar = (resid**2).sum(axis=1) / (M - 1)
    else:
        resid = np.zeros((len(S), 0))
        ar = np.zeros(len(S))
    return mape + cfg.zeta * ar, mape, resid


def loss_and_grads(S: Samples, W, cfg: ModelConfig):
    """Batch-mean loss and its exact gradient with respect to every array in ``W``.

    Returns (loss, grads, per-sample losses).
    """
    out, cache = forward_batch(S, W, cfg)
    J, _, resid = _sample_losses(out, S, cfg)
    B = len(S)
    M = cfg.n_bins
    actual = S.targets
    n_h = actual.shape[1]
    grads: dict = {}

    dY = -np.sign(actual - out["Y"]) / (actual * n_h * B)
    dA = (dY * cache["dYdA"]).sum(axis=1)
    dG = (dY * cache["dYdG"]).sum(axis=1)
    dL = (dY * cache["dYdL"]).sum(axis=1)
    dA_m = np.repeat(dA[:, None] / M, M, axis=1)
    dgam = np.repeat(dG[:, None] / M, M, axis=1)
    dlam = np.repeat(dL[:, None] / M, M, axis=1)
    if M >= 2:
        t = ar_times(M, cfg.bin_width)[None, :]
        dchat = -2.0 * cfg.zeta * resid / ((M - 1) * B)
        c_hat = out["ar"]
        dA_m[:, :-1] += dchat * cache["ar_base"]
        dgam[:, :-1] += dchat * c_hat * np.log(t)
        dlam[:, :-1] -= dchat * c_hat * t

    if cfg.uses_text:
        mu = cache["mu"]
        da_prime = dA_m * mu[:, None]
        dmu = (dA_m * out["a_prime"]).sum(axis=1)
        dpre_mu = dmu * (cache["pre_mu"] > 0)
        grads["head.W_mu"] = cache["x_exo"].T @ dpre_mu
        grads["head.B_mu"] = dpre_mu.sum()
        dx_exo = dpre_mu[:, None] * W["head.W_mu"][None, :]
        if cfg.mode == "text_only":
            dx_tweet = dx_exo
        else:
            dx_tweet, dn = text.attention_backward(dx_exo, cache["att"], S.news_ids.shape[0])
            text.encode_texts_backward(dn, cache["news"], W, grads)
        text.encode_texts_backward(dx_tweet, cache["tweet"], W, grads)
    else:
        da_prime = dA_m

    dpre_a = da_prime * (cache["pre_a"] > 0)
    dpre_g = dgam * (cache["pre_g"] > 0)
    dpre_l = dlam * expit(cache["pre_l"])
    H = out["H"]
    dH = np.zeros_like(H)
    for name, dpre in (("A", dpre_a), ("gamma", dpre_g), ("lambda", dpre_l)):
        grads[f"head.W_{name}"] = np.einsum("bm,bms->s", dpre, H)
        grads[f"head.B_{name}"] = dpre.sum()
        dH += dpre[:, :, None] * W[f"head.W_{name}"][None, None, :]

    if cfg.mode == "plain_lstm":
        dr, df = sequence.lstm_backward(dH, cache["seq"], W, grads)
    else:
        dr, df = sequence.modified_backward(dH, cache["seq"], W, grads)
    grads["norm.r_w"] = (dr * cache["lc"]).sum()
    grads["norm.r_b"] = dr.sum()
    grads["norm.f_w"] = (df * cache["lf"]).sum()
    grads["norm.f_b"] = df.sum()

    grads = {k: np.asarray(grads.get(k, np.zeros_like(v)), dtype=np.float64).reshape(np.shape(v))
             for k, v in W.items()}
    return float(J.mean()), grads, J


def batch_loss(S: Samples, W, cfg: ModelConfig) -> float:
    out, _ = forward_batch(S, W, cfg)
    return float(_sample_losses(out, S, cfg)[0].mean())


def predict_sizes(S: Samples, W, cfg: ModelConfig, horizons=None, batch_size: int = 512):
    """Predicted sizes (N, H) and pooled parameters (N, 3)."""
    horizons = cfg.horizons if horizons is None else tuple(horizons)
    Ys, params = [], []
    for start in range(0, len(S), batch_size):
        sub = S.subset(np.arange(start, min(start + batch_size, len(S))))
        out, _ = forward_batch(sub, W, cfg, horizons)
        Ys.append(out["Y"])
        params.append(np.stack([out["A"], out["gamma"], out["lam"]], axis=1))
    if not Ys:
        return np.zeros((0, len(horizons))), np.zeros((0, 3))
    return np.concatenate(Ys), np.concatenate(params)


# ---------------------------------------------------------------------------
# single-cascade API


@dataclass
class ForwardOutput:
    pooled: GrowthParams
    per_bin: np.ndarray                 # (M, 3) modulated A_m, gamma_m, lambda_m
    predictions: dict                   # horizon -> predicted size
    ar_forecasts: np.ndarray            # (M-1,)
    alpha: np.ndarray | None = None     # word attention over the tweet tokens
    beta: np.ndarray | None = None      # attention over windowed news items
    tokens: list = field(default_factory=list)
    news_rows: list = field(default_factory=list)


def forward(cascade: CascadeRecord, news: Sequence[NewsRecord], weights, cfg: ModelConfig,
            vocab: Vocab, horizons=None) -> ForwardOutput:
    S = featurize([cascade], news, vocab, cfg)
    out, _ = forward_batch(S, weights, cfg, horizons)
    per_bin = np.stack([out["A_m"][0], out["gamma_m"][0], out["lambda_m"][0]], axis=1)
    alpha = beta = None
    tokens = text.clean_tokens(cascade.root_text)[:cfg.tweet_len]
    if "alpha" in out:
        alpha = out["alpha"][0, :int(S.tweet_len[0])]
    rows = [int(S.news_source[k]) for k in S.news_index[0] if k >= 0]
    if "beta" in out:
        beta = out["beta"][0, :len(rows)]
    return ForwardOutput(
        pooled=GrowthParams(float(out["A"][0]), float(out["gamma"][0]), float(out["lam"][0])),
        per_bin=per_bin,
        predictions={h: float(y) for h, y in zip(out["horizons"], out["Y"][0])},
        ar_forecasts=out["ar"][0],
        alpha=alpha, beta=beta, tokens=tokens, news_rows=rows,
    )


def loss(output: ForwardOutput, actual_sizes: dict, actual_bins, zeta: float) -> float:
    """Mean absolute percentage error over horizons plus zeta times the AR MSE."""
    terms = []
    for h, a in actual_sizes.items():
        if a <= 0:
            raise ValueError(f"actual size at {h} h must be positive, got {a}")
        terms.append(abs(a - output.predictions[h]) / a)
    if not terms:
        raise ValueError("no horizons to score")
    bins = np.asarray(actual_bins, dtype=np.float64)
    resid = bins[1:] - np.asarray(output.ar_forecasts)
    ar = float((resid**2).sum() / resid.shape[0]) if resid.shape[0] else 0.0
    return float(np.mean(terms)) + zeta * ar


# ---------------------------------------------------------------------------
# weight file

_MAGIC = b"GCAS"
_VERSION = 1


def save_weights(weights, path) -> None:
    """Write arrays as little-endian float32, sorted by name."""
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(weights))]
    for name in sorted(weights):
        arr = np.asarray(weights[name])
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_weights(path, cfg: ModelConfig | None = None) -> dict:
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise WeightFormatError(f"{path}: truncated weight file")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != _MAGIC:
        raise WeightFormatError(f"{path}: bad magic bytes")
    version, count = struct.unpack("<II", take(8))
    if version != _VERSION:
        raise WeightFormatError(f"{path}: unsupported version {version}")
    weights = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = math.prod(shape)
        data = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape)
        weights[name] = data.astype(np.float64)
    if pos != len(buf):
        raise WeightFormatError(f"{path}: trailing bytes after {count} arrays")
    if cfg is not None:
        expected = expected_shapes(cfg)
        if set(expected) != set(weights):
            raise WeightFormatError(f"{path}: array names do not match the {cfg.mode} config")
        for name, shape in expected.items():
            if weights[name].shape != shape:
                raise WeightFormatError(f"{path}: {name} has shape {weights[name].shape}, "
                                        f"expected {shape}")
    return weights


def with_mode(cfg: ModelConfig, mode: str) -> ModelConfig:
    return replace(cfg, mode=mode)
