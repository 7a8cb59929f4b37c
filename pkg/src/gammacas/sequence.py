"""Observation-window binning and the follower-gated recurrent cell.

Weights live in a flat ``dict[str, ndarray]``. Names used here:

``norm.r_w, norm.r_b, norm.f_w, norm.f_b``
    scalar affines applied to ``log1p`` of the bin counts.
``cell.W_g, cell.W_in, cell.W_c``  (1+s, s) and ``cell.B_*`` (s,)
    gates over ``[r_m : h_{m-1}]`` (row vector convention, row 0 is r_m).
``cell.W_f`` (1, s), ``cell.B_f``
    follower gate.
``cell.W_h`` (s, s), ``cell.B_h``
    hidden-state modulation ``h_m = h_{m-1} * tanh(c_m W_h + B_h)``.
``lstm.W_i, lstm.W_f, lstm.W_o, lstm.W_c`` (2+s, s) and ``lstm.B_*``
    standard LSTM over ``[r_m : f_m : h_{m-1}]`` for the plain_lstm ablation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

MODIFIED_CELL_KEYS = ("cell.W_g", "cell.B_g", "cell.W_in", "cell.B_in", "cell.W_c", "cell.B_c",
                      "cell.W_f", "cell.B_f", "cell.W_h", "cell.B_h")
PLAIN_LSTM_KEYS = ("lstm.W_i", "lstm.B_i", "lstm.W_f", "lstm.B_f", "lstm.W_o", "lstm.B_o",
                   "lstm.W_c", "lstm.B_c")
NORM_KEYS = ("norm.r_w", "norm.r_b", "norm.f_w", "norm.f_b")


@dataclass
class CascadeRecord:
    """A root post and its reshares.

    ``events`` holds ``(seconds since root, follower count)`` pairs in
    non-decreasing time order.
    """

    id: str
    root_time: float
    root_text: str
    root_followers: int
    events: list[tuple[float, int]] = field(default_factory=list)

    def __post_init__(self):
        prev = 0.0
        for k, (t, fol) in enumerate(self.events):
            if not math.isfinite(t) or t < 0:
                raise ValueError(f"event {k}: time must be finite and >= 0, got {t}")
            if t < prev:
                raise ValueError(f"event {k}: events not sorted by time ({t} < {prev})")
            if fol < 0:
                raise ValueError(f"event {k}: negative follower count {fol}")
            prev = t
        if self.root_followers < 0:
            raise ValueError("negative root_followers")

    def event_times_hours(self) -> np.ndarray:
        return np.array([t for t, _ in self.events], dtype=np.float64) / 3600.0

    def size_at(self, hours: float) -> int:
        """Number of reshares with arrival time <= ``hours``."""
        times = self.event_times_hours()
        return int(np.searchsorted(times, hours, side="right"))


@dataclass
class BinnedObservation:
    retweet_counts: np.ndarray
    follower_sums: np.ndarray
    bin_width: float
    window: float


@dataclass
class CellState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def initial(cls, s: int) -> "CellState":
        # zero h would be absorbing under h_m = h_{m-1} * tanh(.)
        return cls(c=np.zeros(s), h=np.ones(s))


def bin_cascade(cascade: CascadeRecord, bin_width: float, M: int,
                include_root: bool = True) -> BinnedObservation:
    """Counts and follower sums in ``M`` half-open bins of ``bin_width`` hours.

    The root author's followers are added to bin 0's follower sum when
    ``include_root`` is set.
    """
    if bin_width <= 0 or M < 1:
        raise ValueError("bin_width must be > 0 and M >= 1")
    # work in seconds rounded to the nanosecond so 5 min is exactly 300 s
    width_s = round(bin_width * 3600.0, 9)
    counts = np.zeros(M, dtype=np.int64)
    followers = np.zeros(M, dtype=np.int64)
    for t, fol in cascade.events:
        idx = int(math.floor(t / width_s))
        if idx >= M:
            break
        counts[idx] += 1
        followers[idx] += fol
    if include_root:
        followers[0] += cascade.root_followers
    return BinnedObservation(counts, followers, bin_width, bin_width * M)


def normalize_counts(binned: BinnedObservation, weights) -> tuple[np.ndarray, np.ndarray]:
    r = weights["norm.r_w"] * np.log1p(binned.retweet_counts) + weights["norm.r_b"]
    f = weights["norm.f_w"] * np.log1p(binned.follower_sums) + weights["norm.f_b"]
    return np.asarray(r, dtype=np.float64), np.asarray(f, dtype=np.float64)


def state_size(weights) -> int:
    if "cell.W_h" in weights:
        return weights["cell.W_h"].shape[0]
    return weights["lstm.B_i"].shape[0]


def _check_cell_shapes(weights, s):
    for name in ("cell.W_g", "cell.W_in", "cell.W_c"):
        if weights[name].shape != (1 + s, s):
            raise ValueError(f"{name} has shape {weights[name].shape}, expected {(1 + s, s)}")
    if weights["cell.W_f"].shape != (1, s) or weights["cell.W_h"].shape != (s, s):
        raise ValueError("cell.W_f / cell.W_h shape mismatch")


def cell_step(r_m: float, f_m: float, state: CellState, weights) -> CellState:
    """One step of the follower-gated cell for a single cascade."""
    s = state.h.shape[0]
    _check_cell_shapes(weights, s)
    if state.c.shape != (s,):
        raise ValueError("cell and hidden vectors differ in length")
    r = np.array([r_m], dtype=np.float64)
    f = np.array([f_m], dtype=np.float64)
    c, h, _ = _modified_step(r, f, state.c[None, :], state.h[None, :], weights)
    return CellState(c=c[0], h=h[0])


def encode_sequence(r, f, weights, state0: CellState | None = None) -> list[np.ndarray]:
    """Fold the cell over the M bins and return every hidden vector."""
    r = np.asarray(r, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if r.ndim != 1 or r.shape != f.shape or r.shape[0] < 1:
        raise ValueError("r and f must be 1-d with equal length >= 1")
    s = state_size(weights)
    _check_cell_shapes(weights, s)
    state0 = state0 or CellState.initial(s)
    H, _ = modified_forward(r[None, :], f[None, :], weights, state0.c[None, :], state0.h[None, :])
    return [H[0, m] for m in range(r.shape[0])]


# ---------------------------------------------------------------------------
# batched forward/backward used by the model


def _modified_step(r, f, c_prev, h_prev, W):
    zg = r[:, None] * W["cell.W_g"][0] + h_prev @ W["cell.W_g"][1:] + W["cell.B_g"]
    zi = r[:, None] * W["cell.W_in"][0] + h_prev @ W["cell.W_in"][1:] + W["cell.B_in"]
    zc = r[:, None] * W["cell.W_c"][0] + h_prev @ W["cell.W_c"][1:] + W["cell.B_c"]
    zf = f[:, None] * W["cell.W_f"][0] + W["cell.B_f"]
    xg = expit(zg)
    xi = expit(zi)
    xc = np.tanh(zc)
    xf = expit(zf)
    c = c_prev * xg + xi * xc * xf
    q = np.tanh(c @ W["cell.W_h"] + W["cell.B_h"])
    h = h_prev * q
    return c, h, (xg, xi, xc, xf, q)


def modified_forward(r, f, W, c0=None, h0=None):
    """Run the modified cell over (B, M) inputs; returns H (B, M, s) and a cache."""
    B, M = r.shape
    s = W["cell.W_h"].shape[0]
    c = np.zeros((B, s)) if c0 is None else np.broadcast_to(c0, (B, s)).copy()
    h = np.ones((B, s)) if h0 is None else np.broadcast_to(h0, (B, s)).copy()
    H = np.empty((B, M, s))
    C = np.empty((B, M, s))
    gates = []
    cs_prev = [c]
    hs_prev = [h]
    for m in range(M):
        c, h, g = _modified_step(r[:, m], f[:, m], c, h, W)
        H[:, m] = h
        C[:, m] = c
        gates.append(g)
        cs_prev.append(c)
        hs_prev.append(h)
    cache = {"r": r, "f": f, "C": C, "gates": gates, "c_prev": cs_prev, "h_prev": hs_prev}
    return H, cache


def modified_backward(dH, cache, W, grads):
    """Backprop through time. Accumulates into ``grads``; returns (dr, df)."""
    r, f = cache["r"], cache["f"]
    B, M = r.shape
    s = W["cell.W_h"].shape[0]
    dr = np.zeros((B, M))
    df = np.zeros((B, M))
    dh_next = np.zeros((B, s))
    dc_next = np.zeros((B, s))
    Wg, Wi, Wc = W["cell.W_g"], W["cell.W_in"], W["cell.W_c"]
    gWg = np.zeros_like(Wg)
    gWi = np.zeros_like(Wi)
    gWc = np.zeros_like(Wc)
    gWf = np.zeros_like(W["cell.W_f"])
    gWh = np.zeros_like(W["cell.W_h"])
    gBg = np.zeros(s)
    gBi = np.zeros(s)
    gBc = np.zeros(s)
    gBf = np.zeros(s)
    gBh = np.zeros(s)
    for m in range(M - 1, -1, -1):
        xg, xi, xc, xf, q = cache["gates"][m]
        c_prev = cache["c_prev"][m]
        h_prev = cache["h_prev"][m]
        c = cache["C"][:, m]
        dh = dH[:, m] + dh_next
        dq = dh * h_prev
        dh_prev = dh * q
        dzh = dq * (1.0 - q * q)
        gWh += c.T @ dzh
        gBh += dzh.sum(axis=0)
        dc = dc_next + dzh @ W["cell.W_h"].T
        dc_next = dc * xg
        dzg = dc * c_prev * xg * (1.0 - xg)
        dzi = dc * xc * xf * xi * (1.0 - xi)
        dzc = dc * xi * xf * (1.0 - xc * xc)
        dzf = dc * xi * xc * xf * (1.0 - xf)
        rm = r[:, m]
        gWg[0] += rm @ dzg
        gWi[0] += rm @ dzi
        gWc[0] += rm @ dzc
        gWg[1:] += h_prev.T @ dzg
        gWi[1:] += h_prev.T @ dzi
        gWc[1:] += h_prev.T @ dzc
        gBg += dzg.sum(axis=0)
        gBi += dzi.sum(axis=0)
        gBc += dzc.sum(axis=0)
        gWf[0] += f[:, m] @ dzf
        gBf += dzf.sum(axis=0)
        dh_prev += dzg @ Wg[1:].T + dzi @ Wi[1:].T + dzc @ Wc[1:].T
        dr[:, m] = dzg @ Wg[0] + dzi @ Wi[0] + dzc @ Wc[0]
        df[:, m] = dzf @ W["cell.W_f"][0]
        dh_next = dh_prev
    for name, g in (("cell.W_g", gWg), ("cell.W_in", gWi), ("cell.W_c", gWc), ("cell.W_f", gWf),
                    ("cell.W_h", gWh), ("cell.B_g", gBg), ("cell.B_in", gBi), ("cell.B_c", gBc),
                    ("cell.B_f", gBf), ("cell.B_h", gBh)):
        grads[name] = grads.get(name, 0.0) + g
    return dr, df


def lstm_forward(r, f, W):
    """Standard four-gate LSTM over ``[r_m : f_m : h_{m-1}]``, zero initial state."""
    B, M = r.shape
    s = W["lstm.B_i"].shape[0]
    c = np.zeros((B, s))
    h = np.zeros((B, s))
    H = np.empty((B, M, s))
    steps = []
    for m in range(M):
        x = np.concatenate([r[:, m:m + 1], f[:, m:m + 1], h], axis=1)
        i = expit(x @ W["lstm.W_i"] + W["lstm.B_i"])
        fg = expit(x @ W["lstm.W_f"] + W["lstm.B_f"])
        o = expit(x @ W["lstm.W_o"] + W["lstm.B_o"])
        g = np.tanh(x @ W["lstm.W_c"] + W["lstm.B_c"])
        c_prev = c
        c = fg * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        H[:, m] = h
        steps.append((x, i, fg, o, g, c_prev, tc))
    return H, {"steps": steps}


def lstm_backward(dH, cache, W, grads):
    B, M, s = dH.shape
    dr = np.zeros((B, M))
    df = np.zeros((B, M))
    dh_next = np.zeros((B, s))
    dc_next = np.zeros((B, s))
    acc = {k: np.zeros_like(W[k]) for k in PLAIN_LSTM_KEYS}
    for m in range(M - 1, -1, -1):
        x, i, fg, o, g, c_prev, tc = cache["steps"][m]
        dh = dH[:, m] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        dfg = dc * c_prev
        dc_next = dc * fg
        dzi = di * i * (1.0 - i)
        dzf = dfg * fg * (1.0 - fg)
        dzo = do * o * (1.0 - o)
        dzg = dg * (1.0 - g * g)
        dx = np.zeros_like(x)
        for gate, dz in (("i", dzi), ("f", dzf), ("o", dzo), ("c", dzg)):
            acc[f"lstm.W_{gate}"] += x.T @ dz
            acc[f"lstm.B_{gate}"] += dz.sum(axis=0)
            dx += dz @ W[f"lstm.W_{gate}"].T
        dr[:, m] = dx[:, 0]
        df[:, m] = dx[:, 1]
        dh_next = dx[:, 2:]
    for k, v in acc.items():
        grads[k] = grads.get(k, 0.0) + v
    return dr, df


def modified_cell_param_count(s: int) -> int:
    """Trainable entries of the follower-gated cell (normalizers excluded)."""
    return 3 * ((1 + s) * s + s) + (s + s) + (s * s + s)


def standard_lstm_param_count(s: int, n_inputs: int = 2) -> int:
    return 4 * ((n_inputs + s) * s + s)
