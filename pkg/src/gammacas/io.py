"""JSONL/CSV ingestion and serialization, vocabularies and model bundles."""

from __future__ import annotations

import bisect
import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import PredictionRow
from .model import ModelConfig, load_weights, save_weights
from .sequence import CascadeRecord
from .text import NewsRecord, Vocab, clean_tokens


class DataError(ValueError):
    """Malformed input file; the message names the file and line."""


@dataclass
class SkipReport:
    kept: int = 0
    dropped_small: list = field(default_factory=list)

    def summary(self, min_size: int) -> str:
        return (f"kept {self.kept} cascades, dropped {len(self.dropped_small)} "
                f"with fewer than {min_size} retweets")


def _records(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def _field(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise DataError(f"{where}: missing field {key!r}")
    val = obj[key]
    ok = isinstance(val, kind) and not isinstance(val, bool)
    if not ok:
        raise DataError(f"{where}: field {key!r} has type {type(val).__name__}")
    return val


def cascade_from_json(obj, where="<record>") -> CascadeRecord:
    events = _field(obj, "events", list, where)
    parsed = []
    for k, ev in enumerate(events):
        if (not isinstance(ev, list) or len(ev) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in ev)):
            raise DataError(f"{where}: event {k} must be [t_rel_s, followers]")
        if ev[1] < 0 or int(ev[1]) != ev[1]:
            raise DataError(f"{where}: event {k} has invalid follower count {ev[1]!r}")
        parsed.append((float(ev[0]), int(ev[1])))
    root_f = _field(obj, "root_followers", int, where)
    try:
        return CascadeRecord(
            id=_field(obj, "id", str, where),
            root_time=float(_field(obj, "root_time", (int, float), where)),
            root_text=_field(obj, "root_text", str, where),
            root_followers=root_f,
            events=parsed,
        )
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{where}: {exc}") from None


def cascade_to_json(c: CascadeRecord) -> dict:
    return {"id": c.id, "root_time": c.root_time, "root_text": c.root_text,
            "root_followers": c.root_followers, "events": [[t, f] for t, f in c.events]}


def load_cascades_report(path, min_size: int = 10) -> tuple[list[CascadeRecord], SkipReport]:
    out, report = [], SkipReport()
    for lineno, obj in _records(path):
        rec = cascade_from_json(obj, f"{path}:{lineno}")
        if len(rec.events) < min_size:
            report.dropped_small.append(rec.id)
            continue
        out.append(rec)
    report.kept = len(out)
    return out, report


def load_cascades(path, min_size: int = 10) -> list[CascadeRecord]:
    return load_cascades_report(path, min_size)[0]


def dump_cascades(cascades, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in cascades:
            fh.write(json.dumps(cascade_to_json(c), ensure_ascii=False) + "\n")


def news_from_json(obj, where="<record>") -> NewsRecord:
    t = float(_field(obj, "time", (int, float), where))
    if not math.isfinite(t):
        raise DataError(f"{where}: non-finite time")
    source = obj.get("source", "")
    if not isinstance(source, str):
        raise DataError(f"{where}: field 'source' must be a string")
    return NewsRecord(time=t, headline=_field(obj, "headline", str, where), source=source)


def load_news(path) -> list[NewsRecord]:
    """News records sorted by time (stable for equal times)."""
    items = [news_from_json(obj, f"{path}:{lineno}") for lineno, obj in _records(path)]
    items.sort(key=lambda n: n.time)
    return items


def dump_news(news, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for n in news:
            fh.write(json.dumps({"time": n.time, "headline": n.headline, "source": n.source},
                                ensure_ascii=False) + "\n")


class NewsIndex:
    """Time-sorted news with closed-interval window queries."""

    def __init__(self, news):
        self.items = sorted(news, key=lambda n: n.time)
        self.times = [n.time for n in self.items]

    def __len__(self):
        return len(self.items)

    def window(self, center: float, half_width: float) -> list[NewsRecord]:
        lo = bisect.bisect_left(self.times, center - half_width)
        hi = bisect.bisect_right(self.times, center + half_width)
        return self.items[lo:hi]


def build_vocab(cascade_path, news_path=None, min_freq: int = 1) -> Vocab:
    """Tokens with frequency >= min_freq, by descending count then lexicographically."""
    counts: Counter = Counter()
    for lineno, obj in _records(cascade_path):
        counts.update(clean_tokens(_field(obj, "root_text", str, f"{cascade_path}:{lineno}")))
    if news_path is not None:
        for lineno, obj in _records(news_path):
            counts.update(clean_tokens(_field(obj, "headline", str, f"{news_path}:{lineno}")))
    kept = [tok for tok, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    return Vocab(kept)


def save_vocab(vocab: Vocab, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens[2:]:
            fh.write(tok + "\n")


def load_vocab(path) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        return Vocab(line.rstrip("\n") for line in fh if line.strip())


# ---------------------------------------------------------------------------
# model bundle: binary weights plus a JSON sidecar with config and vocabulary


def sidecar_path(model_path) -> Path:
    return Path(str(model_path) + ".json")


def save_model(path, weights, cfg: ModelConfig, vocab: Vocab) -> None:
    save_weights(weights, path)
    meta = {"config": cfg.to_dict(), "vocab": vocab.tokens[2:]}
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)


def load_model(path):
    """Returns (weights, config, vocab)."""
    try:
        with open(sidecar_path(path), encoding="utf-8") as fh:
            meta = json.load(fh)
        cfg = ModelConfig.from_dict(meta["config"])
        vocab = Vocab(meta["vocab"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{sidecar_path(path)}: bad model sidecar ({exc})") from None
    return load_weights(path, cfg), cfg, vocab


# ---------------------------------------------------------------------------
# CSV tables

_PRED_FIELDS = ["id", "horizon", "predicted", "actual"]


def write_predictions(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_PRED_FIELDS)
        for r in rows:
            w.writerow([r.id, repr(float(r.horizon)), repr(float(r.predicted)),
                        repr(float(r.actual))])


def read_predictions(path) -> list[PredictionRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(_PRED_FIELDS) <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns {','.join(_PRED_FIELDS)}")
        for lineno, rec in enumerate(reader, 2):
            try:
                rows.append(PredictionRow(rec["id"], float(rec["horizon"]),
                                          float(rec["predicted"]), float(rec["actual"])))
            except (TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: unparseable prediction row") from None
    return rows


def write_truth(truth, horizons, path) -> None:
    cols = ["id", "A", "gamma", "lambda"] + [f"size_{h:g}h" for h in horizons]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in truth:
            w.writerow([row["id"]] + [repr(float(row[c])) for c in cols[1:]])


def read_truth(path) -> dict[str, dict]:
    """id -> {"A", "gamma", "lambda", horizon(float) -> size}."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for lineno, rec in enumerate(reader, 2):
            try:
                entry = {"A": float(rec["A"]), "gamma": float(rec["gamma"]),
                         "lambda": float(rec["lambda"])}
                for key, val in rec.items():
                    if key.startswith("size_") and key.endswith("h"):
                        entry[float(key[5:-1])] = float(val)
            except (KeyError, TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: malformed ground-truth row") from None
            out[rec["id"]] = entry
    return out
