"""Size-prediction metrics and parameter/feature correlation diagnostics."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from . import kernels


class UndefinedCorrelation(ValueError):
    """Correlation undefined because one input has no variation."""


@dataclass(frozen=True)
class PredictionRow:
    id: str
    horizon: float
    predicted: float
    actual: float


@dataclass(frozen=True)
class BucketScheme:
    """Ascending size-range edges; bucket index = number of edges <= value."""

    edges: tuple

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.float64)
        if e.ndim != 1 or e.size == 0 or np.any(np.diff(e) <= 0):
            raise ValueError("bucket edges must be non-empty and strictly increasing")

    @classmethod
    def powers_of_two(cls, start: float = 10.0, upto: float = 1e7) -> "BucketScheme":
        edges = [start]
        while edges[-1] < upto:
            edges.append(edges[-1] * 2)
        return cls(tuple(edges))

    def index(self, values) -> np.ndarray:
        return np.searchsorted(np.asarray(self.edges), np.asarray(values, dtype=np.float64),
                               side="right")


DEFAULT_BUCKETS = BucketScheme.powers_of_two()


def mape_arrays(predicted, actual) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.size == 0:
        raise ValueError("MAPE of an empty set")
    if np.any(actual <= 0):
        raise ValueError("actual sizes must be positive")
    return float(100.0 * np.mean(np.abs(actual - predicted) / actual))


def mape(rows: Iterable[PredictionRow]) -> float:
    rows = list(rows)
    return mape_arrays([r.predicted for r in rows], [r.actual for r in rows])


def _pairs_tied(values) -> int:
    _, counts = np.unique(values, return_counts=True, axis=0)
    return int(sum(int(c) * (int(c) - 1) // 2 for c in counts))


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("inputs must be 1-d with equal length")
    if x.shape[0] < 2:
        raise ValueError("need at least two observations")
    return x, y


def kendall_tau(x, y) -> float:
    """Kendall's tau-b in O(n log n) (sort by x, count inversions in y)."""
    x, y = _check_pair(x, y)
    n = x.shape[0]
    order = np.lexsort((y, x))
    ys = np.ascontiguousarray(y[order])
    n0 = n * (n - 1) // 2
    n1 = _pairs_tied(x)
    n2 = _pairs_tied(y)
    n3 = _pairs_tied(np.stack([x, y], axis=1))
    if n0 == n1 or n0 == n2:
        raise UndefinedCorrelation("Kendall's tau undefined: an input is constant")
    swaps = int(kernels.count_inversions(ys))
    num = n0 - n1 - n2 + n3 - 2 * swaps
    return num / math.sqrt((n0 - n1) * (n0 - n2))


def spearman_rho(x, y) -> float:
    """Pearson correlation of mid-ranks."""
    x, y = _check_pair(x, y)
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float(np.sum(dx * dx))
    syy = float(np.sum(dy * dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("Spearman's rho undefined: an input is constant")
    return float(np.sum(dx * dy)) / math.sqrt(sxx * syy)


def step_tau(predicted, actual, scheme: BucketScheme = DEFAULT_BUCKETS) -> float:
    """Kendall's tau-b between bucket indices of predicted and actual sizes."""
    return kendall_tau(scheme.index(predicted).astype(np.float64),
                       scheme.index(actual).astype(np.float64))


def _safe(fn, *args):
    try:
        return fn(*args)
    except UndefinedCorrelation:
        return None


def metrics_report(rows: Iterable[PredictionRow], scheme: BucketScheme = DEFAULT_BUCKETS) -> dict:
    """One metrics block per horizon; undefined correlations are reported as None."""
    by_h: dict[float, list[PredictionRow]] = defaultdict(list)
    for r in rows:
        by_h[float(r.horizon)].append(r)
    report = {}
    for h in sorted(by_h):
        group = by_h[h]
        pred = np.array([r.predicted for r in group])
        act = np.array([r.actual for r in group])
        block = {"mape": mape_arrays(pred, act), "kendall_tau": None, "spearman_rho": None,
                 "step_tau": None, "n": len(group)}
        if len(group) >= 2:
            block["kendall_tau"] = _safe(kendall_tau, pred, act)
            block["spearman_rho"] = _safe(spearman_rho, pred, act)
            block["step_tau"] = _safe(step_tau, pred, act, scheme)
        report[f"{h:g}"] = block
    return report


def spearman_pvalue(rho: float, n: int) -> float:
    """Two-sided p-value from the large-sample approximation rho*sqrt(n-1) ~ N(0, 1)."""
    z = abs(rho) * math.sqrt(n - 1)
    return math.erfc(z / math.sqrt(2.0))


def feature_param_correlation(features: Mapping[str, float], params: Mapping, n_bins: int = 5,
                              min_overlap: int = 30) -> dict:
    """Spearman rho (with normal-approximation p-value) of a feature against A, gamma, lambda.

    ``params`` maps id to an object with ``A``, ``gamma``, ``lam`` attributes
    or to an (A, gamma, lambda) triple. Each entry also carries per-bin
    min/mean/max/std of the parameter over feature quantile bins.
    """
    ids = sorted(set(features) & set(params))
    if len(ids) < min_overlap:
        raise ValueError(f"need at least {min_overlap} overlapping ids, got {len(ids)}")
    feat = np.array([float(features[i]) for i in ids])
    triples = []
    for i in ids:
        p = params[i]
        triples.append((p.A, p.gamma, p.lam) if hasattr(p, "lam") else tuple(p))
    triples = np.asarray(triples, dtype=np.float64)
    edges = np.quantile(feat, np.linspace(0, 1, n_bins + 1))
    which = np.clip(np.searchsorted(edges[1:-1], feat, side="right"), 0, n_bins - 1)
    report = {"n": len(ids), "p_value_method": "normal approximation, rho*sqrt(n-1)"}
    for col, name in enumerate(("A", "gamma", "lambda")):
        vals = triples[:, col]
        rho = _safe(spearman_rho, feat, vals)
        bins = []
        for b in range(n_bins):
            sel = vals[which == b]
            if sel.size == 0:
                continue
            bins.append({"lo": float(edges[b]), "hi": float(edges[b + 1]), "n": int(sel.size),
                         "min": float(sel.min()), "mean": float(sel.mean()),
                         "max": float(sel.max()), "std": float(sel.std())})
        report[name] = {"rho": rho,
                        "p_value": None if rho is None else spearman_pvalue(rho, len(ids)),
                        "bins": bins}
    return report


def rows_from_arrays(ids: Sequence[str], horizons: Sequence[float], predicted, actual):
    """PredictionRow list from (N, H) arrays."""
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    return [PredictionRow(ids[i], float(h), float(predicted[i, j]), float(actual[i, j]))
            for i in range(len(ids)) for j, h in enumerate(horizons)]
