"""Initialization, Adam, gradient checking and the training loop."""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .model import ModelConfig, Samples, batch_loss, expected_shapes, loss_and_grads, predict_sizes

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Loss or gradient became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 0.0025
    epochs: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    clip_norm: float = 5.0
    dev_fraction: float = 0.1
    # initial biases of the hidden-state modulation and of the relu heads; see init_weights
    hidden_bias_init: float = 3.0
    head_bias_init: float = 1.0

    def __post_init__(self):
        if min(self.batch_size, self.epochs) < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")
        if not (0 < self.dev_fraction < 0.5):
            raise ValueError("dev_fraction must lie in (0, 0.5)")


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def _glorot(rng, shape):
    if len(shape) == 2:
        fan_in, fan_out = shape
    else:
        fan_in, fan_out = shape[0], 1
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_weights(cfg: ModelConfig, seed: int, embeddings: np.ndarray | None = None,
                 hidden_bias_init: float = 3.0, head_bias_init: float = 1.0) -> dict:
    """Glorot-uniform matrices, zero biases, unit normalizer slopes.

    Exceptions: ``head.B_mu = 1`` so the initial modulation is close to the
    identity; ``cell.B_h = hidden_bias_init`` so ``tanh(.)`` starts near 1
    and the multiplicative hidden update does not collapse to zero within
    the first few bins; ``head.B_A = head.B_gamma = head_bias_init`` so the
    relu heads start active (at zero they can start, and stay, dead). The
    embedding table is uniform in [-0.05, 0.05] unless ``embeddings`` is
    given.
    """
    rng = np.random.default_rng(seed)
    W = {}
    for name, shape in expected_shapes(cfg).items():
        if name == "text.embedding":
            W[name] = rng.uniform(-0.05, 0.05, size=shape)
            if embeddings is not None:
                W[name][:] = embeddings
        elif name in ("norm.r_w", "norm.f_w"):
            W[name] = np.array(1.0)
        elif ".W_" in name:
            W[name] = _glorot(rng, shape)
        elif name == "head.B_mu":
            W[name] = np.array(1.0)
        elif name in ("head.B_A", "head.B_gamma"):
            W[name] = np.array(float(head_bias_init))
        elif name == "cell.B_h":
            W[name] = np.full(shape, float(hidden_bias_init))
        else:
            W[name] = np.zeros(shape)
    return W


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads, clip_norm: float):
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return grads, norm


def adam_step(weights, grads, opt: OptimizerState, tcfg: TrainConfig):
    """Clip, then one bias-corrected Adam update. Returns (weights, state)."""
    grads, _ = clip_by_global_norm(grads, tcfg.clip_norm)
    step = opt.step + 1
    b1, b2 = tcfg.beta1, tcfg.beta2
    new_w, new_m, new_v = {}, {}, {}
    for name, w in weights.items():
        g = grads[name]
        m = b1 * opt.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * opt.v.get(name, 0.0) + (1 - b2) * g * g
        m_hat = m / (1 - b1**step)
        v_hat = v / (1 - b2**step)
        new_w[name] = np.asarray(w - tcfg.learning_rate * m_hat / (np.sqrt(v_hat) + tcfg.eps))
        new_m[name] = m
        new_v[name] = v
    return new_w, OptimizerState(new_m, new_v, step)


def backward(batch: Samples, weights, cfg: ModelConfig):
    """Batch-mean loss and exact gradients; raises NumericError if non-finite."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    J, grads, _ = loss_and_grads(batch, weights, cfg)
    if not math.isfinite(J) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        raise NumericError(f"non-finite loss {J} (non-finite gradients: {bad})")
    return J, grads


def grad_check(weights, batch: Samples, cfg: ModelConfig, eps: float = 1e-5,
               fraction: float = 0.01, min_coords: int = 4, seed: int = 0,
               grads=None) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients, per array.

    A random ``fraction`` of each array's coordinates is checked (at least
    ``min_coords``; ``fraction=1`` checks all). Half of the sample is drawn
    from coordinates with a non-zero analytic gradient so sparse arrays such
    as the embedding table are exercised. The error is
    ``|analytic - numeric| / max(|numeric|, 1e-6 * max(1, |J|))``.
    """
    rng = np.random.default_rng(seed)
    J0, analytic, _ = loss_and_grads(batch, weights, cfg)
    if grads is not None:
        analytic = grads
    floor = 1e-6 * max(1.0, abs(J0))
    report = {}
    for name in sorted(weights):
        w = np.asarray(weights[name], dtype=np.float64)
        size = w.size
        k = min(size, max(min_coords, math.ceil(fraction * size)))
        if k == size:
            coords = np.arange(size)
        else:
            nz = np.flatnonzero(np.asarray(analytic[name]).ravel())
            take_nz = min(k // 2, nz.size)
            picked = rng.choice(nz, size=take_nz, replace=False) if take_nz else np.array([], int)
            rest = np.setdiff1d(np.arange(size), picked)
            coords = np.concatenate([picked, rng.choice(rest, size=k - take_nz, replace=False)])
        worst = 0.0
        for flat in coords:
            idx = np.unravel_index(int(flat), w.shape) if w.ndim else ()
            trial = dict(weights)
            orig = float(w[idx])
            plus = w.copy()
            plus[idx] = orig + eps
            trial[name] = plus
            jp = batch_loss(batch, trial, cfg)
            minus = w.copy()
            minus[idx] = orig - eps
            trial[name] = minus
            jm = batch_loss(batch, trial, cfg)
            numeric = (jp - jm) / (2 * eps)
            a = float(np.asarray(analytic[name])[idx])
            worst = max(worst, abs(a - numeric) / max(abs(numeric), floor))
        report[name] = worst
    return report


def _dev_scores(dev: Samples, W, cfg: ModelConfig) -> tuple[float, float]:
    Y, _ = predict_sizes(dev, W, cfg, horizons=(24.0,))
    if 24.0 in cfg.horizons:
        actual = dev.targets[:, cfg.horizons.index(24.0)]
    else:
        raise ValueError("model selection needs 24 h among the training horizons")
    mape = metrics.mape_arrays(Y[:, 0], actual)
    try:
        tau = metrics.kendall_tau(Y[:, 0], actual)
    except ValueError:  # too few dev rows or all ties
        tau = float("nan")
    return mape, tau


def split_dev(n: int, dev_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_dev = max(1, int(round(dev_fraction * n)))
    if n - n_dev < 1:
        raise ValueError("dataset too small to hold out a development split")
    return np.sort(perm[n_dev:]), np.sort(perm[:n_dev])


def train(samples: Samples, cfg: ModelConfig, tcfg: TrainConfig, log_path=None,
          embeddings: np.ndarray | None = None, init=None):
    """Mini-batch Adam with best-dev-snapshot selection on 24 h MAPE.

    Returns (weights, log rows). Deterministic given data, configs and seed.
    """
    if len(samples) == 0:
        raise ValueError("empty training set")
    if np.any(samples.targets < 1):
        raise ValueError("every sample needs an actual size >= 1 at all training horizons")
    rng = np.random.default_rng(tcfg.seed)
    train_idx, dev_idx = split_dev(len(samples), tcfg.dev_fraction, rng)
    dev = samples.subset(dev_idx)
    W = init if init is not None else init_weights(cfg, tcfg.seed, embeddings,
                                                   tcfg.hidden_bias_init, tcfg.head_bias_init)
    opt = OptimizerState()
    best_W, best_mape = copy.deepcopy(W), math.inf
    rows = []
    bad_streak = 0
    for epoch in range(1, tcfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(train_idx)
        losses = []
        for start in range(0, order.shape[0], tcfg.batch_size):
            batch = samples.subset(np.sort(order[start:start + tcfg.batch_size]))
            try:
                J, grads = backward(batch, W, cfg)
            except NumericError as exc:
                bad_streak += 1
                log.warning("epoch %d: skipped batch (%s)", epoch, exc)
                if bad_streak >= 3:
                    raise NumericError(f"3 consecutive non-finite batches at epoch {epoch}") from exc
                continue
            bad_streak = 0
            losses.append(J)
            W, opt = adam_step(W, grads, opt, tcfg)
        dev_mape, dev_tau = _dev_scores(dev, W, cfg)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else math.nan,
               "dev_mape24": dev_mape, "dev_tau24": dev_tau,
               "seconds": time.perf_counter() - t0}
        rows.append(row)
        log.info("epoch %d  train J %.4f  dev MAPE@24h %.2f  dev tau@24h %.3f  (%.1fs)",
                 epoch, row["train_loss"], dev_mape, dev_tau, row["seconds"])
        if dev_mape < best_mape:
            best_mape, best_W = dev_mape, copy.deepcopy(W)
    if log_path is not None:
        write_log(rows, log_path)
    return best_W, rows


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "dev_mape24", "dev_tau24",
                                                "seconds"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
