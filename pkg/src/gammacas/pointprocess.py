"""Synthetic cascades and the exponential-kernel Hawkes baseline.

Synthetic cascades are inhomogeneous Poisson processes whose intensity is
the growth rate itself, so their expected size at any horizon is the
closed-form integral. The Hawkes baseline fits ``mu + alpha * sum
exp(-beta (t - t_i))`` by maximum likelihood on the observation window.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .growth import DomainError, GrowthParams, cascade_size_closed_form
from .sequence import CascadeRecord
from .text import NewsRecord

log = logging.getLogger(__name__)

STANDARD_HORIZONS = (12.0, 18.0, 24.0, 36.0, 48.0, 72.0, 120.0, 240.0, 360.0)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# gamma-rate cascades


def rate_envelope(params: GrowthParams, horizon: float) -> float:
    """Maximum of the rate on [0, horizon]; the peak sits at gamma / lambda."""
    A, g, lam = params.as_tuple()
    if A == 0.0:
        return 0.0
    if g == 0.0:
        return A
    t_star = min(g / lam, horizon)
    return A * t_star**g * math.exp(-lam * t_star)


def simulate_gamma_cascade(params: GrowthParams, horizon: float, seed=None) -> np.ndarray:
    """Event times (hours, sorted, < horizon) by thinning a homogeneous envelope."""
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    rng = _rng(seed)
    peak = rate_envelope(params, horizon)
    if peak <= 0.0:
        return np.zeros(0)
    n = rng.poisson(peak * horizon)
    cand = rng.uniform(0.0, horizon, size=n)
    A, g, lam = params.as_tuple()
    with np.errstate(divide="ignore"):
        r = A * np.power(cand, g) * np.exp(-lam * cand)
    keep = rng.uniform(0.0, peak, size=n) < r
    return np.sort(cand[keep])


def attach_followers(times_h, exponent: float, min_f: int, seed=None) -> list[tuple[float, int]]:
    """Pair each event time (hours) with a discrete Pareto follower count.

    Counts are ``floor(min_f * U^(-1/(exponent-1)))`` so the tail
    probability decays like ``x^(1 - exponent)``. Times come back in seconds.
    """
    if not exponent > 1:
        raise ValueError("Pareto exponent must exceed 1")
    rng = _rng(seed)
    times_h = np.asarray(times_h, dtype=np.float64)
    counts = pareto_counts(rng, exponent, min_f, times_h.shape[0])
    return [(float(t * 3600.0), int(c)) for t, c in zip(times_h, counts)]


def pareto_counts(rng, exponent: float, min_f: int, size: int) -> np.ndarray:
    u = 1.0 - rng.uniform(0.0, 1.0, size=size)  # (0, 1]
    if math.isinf(exponent):
        return np.full(size, min_f, dtype=np.int64)
    vals = np.floor(min_f * u ** (-1.0 / (exponent - 1.0)))
    return np.minimum(vals, 1e15).astype(np.int64)


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic corpus generator settings.

    Each cascade's scale is ``A = base * topic multiplier`` with ``base``
    log-uniform in ``A_range``. The growth exponent rises with the root's
    follower count (``follower_gamma_weight`` of its range is driven by the
    follower percentile, the rest is noise); the decay rate is uniform.
    Tweets carry one topic keyword pair; a ``news_topic_rate`` fraction of
    headlines carry topic keywords too.
    """

    n_cascades: int = 2000
    A_range: tuple = (12.0, 16.0)
    gamma_range: tuple = (1.0, 1.4)
    lambda_range: tuple = (0.6, 0.9)
    follower_exponent: float = 2.5
    follower_min: int = 1
    root_follower_exponent: float = 1.6
    root_follower_min: int = 50
    follower_gamma_weight: float = 0.6
    topics: tuple = (("sports", 1.0), ("weather", 2.0), ("election", 4.0), ("vaccine", 8.0))
    news_rate: float = 6.0
    news_topic_rate: float = 0.7
    horizon: float = 360.0
    span_days: float = 30.0
    start_time: float = 1_600_000_000.0
    seed: int = 0

    def __post_init__(self):
        for lo, hi in (self.A_range, self.gamma_range, self.lambda_range):
            if not (0 <= lo <= hi):
                raise ValueError("parameter ranges must satisfy 0 <= lo <= hi")
        if self.lambda_range[0] <= 0:
            raise ValueError("lambda range must be positive")
        if self.n_cascades < 1 or self.horizon <= 0:
            raise ValueError("need n_cascades >= 1 and horizon > 0")
        if not self.topics:
            raise ValueError("at least one topic is required")


_FILLER = ("just", "saw", "this", "today", "people", "really", "what", "think", "new", "look",
           "wow", "big", "news", "update", "thread", "read", "more", "here", "again", "now")
_NEWS_FILLER = ("markets", "report", "officials", "says", "city", "week", "local", "study",
                "plan", "announced", "latest", "council", "review", "data", "court", "policy")


def _topic_words(name: str) -> tuple[str, str, str]:
    return (name, f"{name}talk", f"{name}fans")


@dataclass
class SynthCorpus:
    cascades: list
    news: list
    truth: list = field(default_factory=list)   # dicts: id, A, gamma, lambda, sizes..., topic


def synth_corpus(cfg: SynthConfig, horizons=STANDARD_HORIZONS) -> SynthCorpus:
    root_ss, news_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    child = root_ss.spawn(cfg.n_cascades)
    span_s = cfg.span_days * 86400.0
    cascades, truth = [], []
    log_lo, log_hi = math.log(cfg.A_range[0]), math.log(cfg.A_range[1])
    fmin = cfg.root_follower_min
    for i in range(cfg.n_cascades):
        rng = np.random.default_rng(child[i])
        topic, mult = cfg.topics[int(rng.integers(len(cfg.topics)))]
        base = math.exp(rng.uniform(log_lo, log_hi))
        root_f = int(pareto_counts(rng, cfg.root_follower_exponent, fmin, 1)[0])
        # follower percentile under the root Pareto law
        pct = 1.0 - (root_f / fmin) ** (1.0 - cfg.root_follower_exponent)
        w = cfg.follower_gamma_weight
        u = w * pct + (1.0 - w) * rng.uniform()
        g_lo, g_hi = cfg.gamma_range
        gamma = g_lo + (g_hi - g_lo) * u
        lam = rng.uniform(*cfg.lambda_range)
        params = GrowthParams(base * mult, gamma, lam)
        times = simulate_gamma_cascade(params, cfg.horizon, rng)
        events = attach_followers(times, cfg.follower_exponent, cfg.follower_min, rng)
        words = list(rng.choice(_FILLER, size=int(rng.integers(3, 7))))
        kw = _topic_words(topic)
        words.insert(int(rng.integers(len(words) + 1)), kw[int(rng.integers(3))])
        words.insert(int(rng.integers(len(words) + 1)), kw[0])
        cid = f"c{i:06d}"
        cascades.append(CascadeRecord(
            id=cid,
            root_time=cfg.start_time + float(rng.uniform(0.0, span_s)),
            root_text=" ".join(words),
            root_followers=root_f,
            events=events,
        ))
        row = {"id": cid, "A": params.A, "gamma": gamma, "lambda": lam, "topic": topic}
        for h in horizons:
            row[f"size_{h:g}h"] = cascade_size_closed_form(params, h)
        truth.append(row)
    news = synth_news(cfg, np.random.default_rng(news_ss))
    return SynthCorpus(cascades, news, truth)


def synth_news(cfg: SynthConfig, rng) -> list[NewsRecord]:
    margin = 86400.0
    t0 = cfg.start_time - margin
    t1 = cfg.start_time + cfg.span_days * 86400.0 + margin
    n = rng.poisson(cfg.news_rate * (t1 - t0) / 3600.0)
    times = np.sort(rng.uniform(t0, t1, size=n))
    out = []
    for t in times:
        words = list(rng.choice(_NEWS_FILLER, size=int(rng.integers(4, 9))))
        if rng.uniform() < cfg.news_topic_rate:
            topic, _ = cfg.topics[int(rng.integers(len(cfg.topics)))]
            kw = _topic_words(topic)
            words.insert(int(rng.integers(len(words) + 1)), kw[0])
            words.insert(int(rng.integers(len(words) + 1)), kw[int(rng.integers(3))])
        out.append(NewsRecord(time=float(t), headline=" ".join(words).capitalize(),
                              source=f"wire{int(rng.integers(5))}"))
    return out


# ---------------------------------------------------------------------------
# Hawkes baseline


@dataclass(frozen=True)
class HawkesParams:
    mu: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.mu > 0 and self.alpha >= 0 and self.beta > 0):
            raise DomainError(f"invalid Hawkes parameters {self}")
        if not all(map(math.isfinite, (self.mu, self.alpha, self.beta))):
            raise DomainError(f"non-finite Hawkes parameters {self}")

    @property
    def branching_ratio(self) -> float:
        return self.alpha / self.beta


@dataclass(frozen=True)
class HawkesFit:
    params: HawkesParams
    loglik: float
    converged: bool


def _check_events(events, T):
    t = np.ascontiguousarray(events, dtype=np.float64)
    if t.ndim != 1:
        raise ValueError("events must be 1-d")
    if t.size and (np.any(np.diff(t) < 0) or t[0] < 0 or t[-1] > T):
        raise ValueError("events must be sorted within [0, T]")
    return t


def hawkes_loglik(events, T: float, params: HawkesParams) -> float:
    t = _check_events(events, T)
    return float(kernels.hawkes_loglik_grad(t, float(T), params.mu, params.alpha, params.beta)[0])


def hawkes_loglik_grad(events, T: float, params: HawkesParams):
    """Log-likelihood and its gradient with respect to (mu, alpha, beta)."""
    t = _check_events(events, T)
    ll, gm, ga, gb = kernels.hawkes_loglik_grad(t, float(T), params.mu, params.alpha, params.beta)
    return float(ll), np.array([gm, ga, gb])


def simulate_hawkes(params: HawkesParams, T: float, seed=None) -> np.ndarray:
    """Ogata thinning on [0, T)."""
    rng = _rng(seed)
    mu, alpha, beta = params.mu, params.alpha, params.beta
    t = 0.0
    excite = 0.0
    out = []
    while True:
        bound = mu + excite
        w = rng.exponential(1.0 / bound)
        t += w
        if t >= T:
            break
        excite *= math.exp(-beta * w)
        if rng.uniform() * bound <= mu + excite:
            out.append(t)
            excite += alpha
    return np.array(out)


def fit_hawkes(events, T: float, n_starts: int = 8, max_iter: int = 500, seed: int = 0) -> HawkesFit:
    """Multi-start maximum likelihood over log-parameters.

    Each start runs L-BFGS on the negative log-likelihood with the analytic
    gradient; the best start wins. ``converged`` is False when no start
    reported success (the best point found is still returned).
    """
    t = _check_events(events, T)
    if t.size < 5:
        raise ValueError("need at least 5 events to fit")
    rng = np.random.default_rng(seed)
    base_rate = t.size / T

    def objective(theta):
        mu, alpha, beta = np.exp(np.clip(theta, -50.0, 50.0))
        ll, gm, ga, gb = kernels.hawkes_loglik_grad(t, float(T), mu, alpha, beta)
        if not math.isfinite(ll):
            return 1e300, np.zeros(3)
        return -ll, -np.array([gm * mu, ga * alpha, gb * beta])

    best = None
    any_ok = False
    for _ in range(n_starts):
        beta0 = base_rate * math.exp(rng.uniform(math.log(0.1), math.log(10.0)))
        n0 = rng.uniform(0.05, 0.9)
        mu0 = base_rate * (1.0 - n0)
        theta0 = np.log([mu0, n0 * beta0, beta0])
        res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                       bounds=[(-30.0, 30.0)] * 3, options={"maxiter": max_iter})
        any_ok |= bool(res.success)
        if best is None or res.fun < best.fun:
            best = res
    mu, alpha, beta = np.exp(best.x)
    if not any_ok:
        log.warning("Hawkes fit did not converge; returning best point found")
    return HawkesFit(HawkesParams(float(mu), float(alpha), float(beta)), float(-best.fun), any_ok)


def hawkes_predict_size(params: HawkesParams, observed, obs_window: float, horizon: float) -> float:
    """Expected size at ``horizon`` from the branching-structure closure.

    Returns ``inf`` for a supercritical fit (branching ratio >= 1).
    """
    if horizon < obs_window:
        raise ValueError("horizon must not precede the observation window")
    t = np.asarray(observed, dtype=np.float64)
    t = t[t <= obs_window]
    n = params.branching_ratio
    if n >= 1.0:
        log.warning("supercritical Hawkes fit (n=%.3f): overshoot risk", n)
        return math.inf
    residual = params.alpha / params.beta * np.exp(-params.beta * (obs_window - t)).sum()
    future = params.mu * (horizon - obs_window) + residual
    return float(t.size + future / (1.0 - n))
