"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io, metrics, model, pointprocess, trainer
from .growth import DomainError
from .model import DEFAULT_HORIZONS, ModelConfig, WeightFormatError
from .text import load_embedding_file

log = logging.getLogger("gammacas")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# excluded from the top-words summary of ``inspect`` only; the model sees every token
STOPWORDS = frozenset("""a an and are as at be but by for from has have he her his i in is it its
me my not of on or our rt she so that the their them they this to was we were what when which who
will with you your just""".split())


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _horizons(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad horizon list {text!r}") from None
    if not vals or any(not (math.isfinite(v) and v > 0) for v in vals):
        raise argparse.ArgumentTypeError("horizons must be positive reals")
    return vals


def _edges(text: str) -> metrics.BucketScheme:
    try:
        return metrics.BucketScheme(tuple(float(v) for v in text.split(",")))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _model_args(p):
    d = ModelConfig()
    p.add_argument("--mode", choices=model.MODES, default=d.mode)
    p.add_argument("--window", type=float, default=d.window, help="observation window (hours)")
    p.add_argument("--bin-width", type=float, default=d.bin_width, help="bin width (hours)")
    p.add_argument("--horizons", type=_horizons, default=d.horizons,
                   help="training horizons in hours, comma separated")
    p.add_argument("--zeta", type=float, default=d.zeta)
    p.add_argument("--state-size", type=int, default=d.state_size)
    p.add_argument("--embed-dim", type=int, default=d.embed_dim)
    p.add_argument("--tweet-len", type=int, default=d.tweet_len)
    p.add_argument("--news-len", type=int, default=d.news_len)
    p.add_argument("--news-cap", type=int, default=d.news_cap)
    p.add_argument("--quad-steps", type=int, default=d.quad_steps)


def _train_args(p):
    d = trainer.TrainConfig()
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--clip-norm", type=float, default=d.clip_norm)
    p.add_argument("--dev-fraction", type=float, default=d.dev_fraction)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gammacas", description="Cascade-size prediction with a gamma-form rate")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic corpus")
    p.add_argument("--out-dir", required=True, type=Path)
    sd = pointprocess.SynthConfig()
    p.add_argument("--n-cascades", type=int, default=sd.n_cascades)
    p.add_argument("--seed", type=int, default=sd.seed)
    p.add_argument("--news-rate", type=float, default=sd.news_rate, help="headlines per hour")
    p.add_argument("--news-topic-rate", type=float, default=sd.news_topic_rate)
    p.add_argument("--horizon", type=float, default=sd.horizon, help="simulated hours per cascade")
    p.add_argument("--span-days", type=float, default=sd.span_days)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--cascades", required=True, type=Path)
    p.add_argument("--news", type=Path)
    p.add_argument("--vocab", type=Path, help="vocabulary file; built from the corpus if absent")
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--embeddings", type=Path, help="pre-trained 'token v1 ... vd' text file")
    p.add_argument("--model", required=True, type=Path, help="output weight file")
    p.add_argument("--log", type=Path, help="per-epoch CSV log")
    p.add_argument("--min-size", type=int, default=10)
    _model_args(p)
    _train_args(p)

    p = sub.add_parser("predict", help="predict sizes")
    p.add_argument("--cascades", required=True, type=Path)
    p.add_argument("--news", type=Path)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--horizons", type=_horizons, help="defaults to the model's training horizons")
    p.add_argument("--truth", type=Path, help="ground-truth CSV; its sizes become the actuals")
    p.add_argument("--min-size", type=int, default=10)

    p = sub.add_parser("evaluate", help="metrics report from a prediction CSV")
    p.add_argument("--predictions", required=True, type=Path)
    p.add_argument("--out", type=Path, help="report path (default: stdout)")
    p.add_argument("--buckets", type=_edges, default=metrics.DEFAULT_BUCKETS,
                   help="step-tau bucket edges, comma separated")

    p = sub.add_parser("fit-hawkes", help="per-cascade Hawkes fits and predictions")
    p.add_argument("--cascades", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--window", type=float, default=6.0)
    p.add_argument("--horizons", type=_horizons, default=DEFAULT_HORIZONS)
    p.add_argument("--truth", type=Path)
    p.add_argument("--min-size", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("inspect", help="dump learned parameters and attention per cascade")
    p.add_argument("--cascades", required=True, type=Path)
    p.add_argument("--news", type=Path)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--ids", help="comma-separated cascade ids (default: all)")
    p.add_argument("--out", type=Path, help="JSON output (default: stdout)")
    p.add_argument("--min-size", type=int, default=0)
    p.add_argument("--top-words", type=int, default=5, help="size of the stopword-free summary")

    p = sub.add_parser("gradcheck", help="finite-difference check on a toy instance")
    p.add_argument("--mode", choices=model.MODES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


# ---------------------------------------------------------------------------
# commands


def _emit(text: str, path):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_simulate(args) -> int:
    cfg = pointprocess.SynthConfig(n_cascades=args.n_cascades, seed=args.seed,
                                   news_rate=args.news_rate, news_topic_rate=args.news_topic_rate,
                                   horizon=args.horizon, span_days=args.span_days)
    corpus = pointprocess.synth_corpus(cfg)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    io.dump_cascades(corpus.cascades, args.out_dir / "cascades.jsonl")
    io.dump_news(corpus.news, args.out_dir / "news.jsonl")
    io.write_truth(corpus.truth, pointprocess.STANDARD_HORIZONS, args.out_dir / "truth.csv")
    log.info("wrote %d cascades and %d headlines to %s", len(corpus.cascades), len(corpus.news),
             args.out_dir)
    return EXIT_OK


def _load_inputs(args):
    cascades, report = io.load_cascades_report(args.cascades, args.min_size)
    log.info("%s", report.summary(args.min_size))
    news = io.load_news(args.news) if args.news else []
    return cascades, news


def cmd_train(args) -> int:
    cascades, news = _load_inputs(args)
    if not cascades:
        raise io.DataError(f"{args.cascades}: no cascades left after filtering")
    vocab = io.load_vocab(args.vocab) if args.vocab else io.build_vocab(args.cascades, args.news,
                                                                         args.min_freq)
    cfg = ModelConfig(mode=args.mode, window=args.window, bin_width=args.bin_width,
                      horizons=args.horizons, zeta=args.zeta, quad_steps=args.quad_steps,
                      state_size=args.state_size, embed_dim=args.embed_dim,
                      tweet_len=args.tweet_len, news_len=args.news_len, news_cap=args.news_cap,
                      vocab_size=len(vocab))
    tcfg = trainer.TrainConfig(batch_size=args.batch_size, learning_rate=args.lr,
                               epochs=args.epochs, seed=args.seed, clip_norm=args.clip_norm,
                               dev_fraction=args.dev_fraction)
    short = [c.id for c in cascades if c.size_at(max(cfg.horizons)) < 1]
    if short:
        log.warning("dropping %d cascades with no reshares by the last horizon", len(short))
        cascades = [c for c in cascades if c.size_at(max(cfg.horizons)) >= 1]
    emb = None
    if args.embeddings and cfg.uses_text:
        rng = np.random.default_rng(args.seed)
        emb = rng.uniform(-0.05, 0.05, size=(len(vocab), cfg.embed_dim))
        load_embedding_file(args.embeddings, vocab, cfg.embed_dim, emb)
    samples = model.featurize(cascades, news, vocab, cfg)
    weights, _ = trainer.train(samples, cfg, tcfg, log_path=args.log, embeddings=emb)
    io.save_model(args.model, weights, cfg, vocab)
    log.info("saved model to %s", args.model)
    return EXIT_OK


def _actuals(cascades, horizons, truth_path):
    if truth_path is None:
        return np.array([[c.size_at(h) for h in horizons] for c in cascades], dtype=np.float64)
    truth = io.read_truth(truth_path)
    out = np.zeros((len(cascades), len(horizons)))
    for i, c in enumerate(cascades):
        entry = truth.get(c.id)
        if entry is None:
            raise io.DataError(f"{truth_path}: no ground truth for cascade {c.id}")
        for j, h in enumerate(horizons):
            if h not in entry:
                raise io.DataError(f"{truth_path}: no size column for horizon {h:g} h")
            out[i, j] = entry[h]
    return out


def cmd_predict(args) -> int:
    cascades, news = _load_inputs(args)
    weights, cfg, vocab = io.load_model(args.model)
    horizons = args.horizons or cfg.horizons
    if any(h <= cfg.window for h in horizons):
        raise UsageError("prediction horizons must exceed the observation window")
    samples = model.featurize(cascades, news, vocab, cfg)
    Y, _ = model.predict_sizes(samples, weights, cfg, horizons)
    if not np.all(np.isfinite(Y)):
        raise trainer.NumericError("non-finite predictions")
    actual = _actuals(cascades, horizons, args.truth)
    io.write_predictions(metrics.rows_from_arrays(samples.ids, horizons, Y, actual), args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    rows = io.read_predictions(args.predictions)
    if not rows:
        raise io.DataError(f"{args.predictions}: no prediction rows")
    if any(r.actual <= 0 for r in rows):
        raise io.DataError(f"{args.predictions}: actual sizes must be positive")
    report = metrics.metrics_report(rows, args.buckets)
    _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_fit_hawkes(args) -> int:
    cascades, _ = io.load_cascades_report(args.cascades, args.min_size)
    horizons = args.horizons
    if any(h < args.window for h in horizons):
        raise UsageError("horizons must not precede the observation window")
    actual = _actuals(cascades, horizons, args.truth)
    lines = ["id,horizon,predicted,actual,mu,alpha,beta,branching,converged"]
    for i, c in enumerate(cascades):
        t = c.event_times_hours()
        obs = t[t <= args.window]
        if obs.size < 5:
            log.warning("%s: %d events in the window, too few to fit; skipped", c.id, obs.size)
            continue
        fit = pointprocess.fit_hawkes(obs, args.window, seed=args.seed)
        p = fit.params
        for j, h in enumerate(horizons):
            pred = pointprocess.hawkes_predict_size(p, obs, args.window, h)
            lines.append(",".join([c.id, repr(float(h)), repr(pred), repr(float(actual[i, j])),
                                   repr(p.mu), repr(p.alpha), repr(p.beta),
                                   repr(p.branching_ratio), str(int(fit.converged))]))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_inspect(args) -> int:
    cascades, news = _load_inputs(args)
    weights, cfg, vocab = io.load_model(args.model)
    if args.ids:
        wanted = set(args.ids.split(","))
        cascades = [c for c in cascades if c.id in wanted]
        missing = wanted - {c.id for c in cascades}
        if missing:
            raise io.DataError(f"unknown cascade ids: {', '.join(sorted(missing))}")
    dump = []
    for c in cascades:
        out = model.forward(c, news, weights, cfg, vocab)
        entry = {
            "id": c.id,
            "pooled": {"A": out.pooled.A, "gamma": out.pooled.gamma, "lambda": out.pooled.lam},
            "per_bin": [{"A": a, "gamma": g, "lambda": lam} for a, g, lam in out.per_bin.tolist()],
            "predictions": {f"{h:g}": y for h, y in out.predictions.items()},
        }
        if out.alpha is not None:
            pairs = [(tok, float(a)) for tok, a in zip(out.tokens, out.alpha)]
            entry["word_attention"] = [list(p) for p in pairs]
            content = sorted((p for p in pairs if p[0] not in STOPWORDS), key=lambda p: -p[1])
            entry["top_words"] = [tok for tok, _ in content[:args.top_words]]
        if out.beta is not None:
            entry["news_attention"] = [{"time": news[k].time, "headline": news[k].headline,
                                        "weight": float(b)}
                                       for k, b in zip(out.news_rows, out.beta)]
        dump.append(entry)
    _emit(json.dumps(dump, indent=1) + "\n", args.out)
    return EXIT_OK


def toy_batch(mode: str, seed: int = 0):
    """Toy instance for gradient checks: M=8, s=4, d=8, two headlines."""
    from .sequence import CascadeRecord
    from .text import NewsRecord, Vocab

    rng = np.random.default_rng(seed)
    words = ["storm", "rain", "vote", "poll", "goal", "match"]
    vocab = Vocab(words)
    cfg = ModelConfig(mode=mode, bin_width=1.0 / 12.0, window=8.0 / 12.0, horizons=(1.0, 2.0, 6.0),
                      state_size=4, embed_dim=8, tweet_len=6, news_len=6, news_cap=2,
                      vocab_size=len(vocab))
    cascades = []
    for i in range(3):
        times = np.sort(rng.uniform(0.0, 6.0 * 3600.0, size=int(rng.integers(15, 40))))
        events = [(float(t), int(f)) for t, f in zip(times, rng.integers(0, 500, size=times.size))]
        text = " ".join(rng.choice(words, size=4))
        cascades.append(CascadeRecord(f"toy{i}", 1000.0 * i, text, int(rng.integers(10, 1000)),
                                      events))
    news = [NewsRecord(-600.0, "storm rain poll"), NewsRecord(900.0, "goal match vote storm")]
    samples = model.featurize(cascades, news, vocab, cfg)
    weights = trainer.init_weights(cfg, seed)
    weights = {k: np.asarray(v + 0.1 * rng.standard_normal(np.shape(v))) for k, v in weights.items()}
    return samples, weights, cfg


def cmd_gradcheck(args) -> int:
    modes = model.MODES if args.mode == "all" else (args.mode,)
    worst = 0.0
    for mode in modes:
        samples, weights, cfg = toy_batch(mode, args.seed)
        report = trainer.grad_check(weights, samples, cfg, eps=args.eps, fraction=args.fraction,
                                    seed=args.seed)
        for name, err in sorted(report.items()):
            print(f"{mode:13s} {name:16s} {err:.3e}")
        worst = max(worst, max(report.values()))
    print(f"max relative error {worst:.3e} (tolerance {args.tol:g})")
    if worst > args.tol:
        raise trainer.NumericError(f"gradient check failed: {worst:.3e} > {args.tol:g}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "train": cmd_train, "predict": cmd_predict,
    "evaluate": cmd_evaluate, "fit-hawkes": cmd_fit_hawkes, "inspect": cmd_inspect,
    "gradcheck": cmd_gradcheck,
}


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (trainer.NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.DataError, WeightFormatError, DomainError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_cli())
