"""Command-line entry point: ``labgraph <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .pipeline import SWEEP_HEADER, DataError
from .tensor import NumericError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

log = logging.getLogger("labgraph")


def worker_count() -> int:
    raw = os.environ.get("LABGRAPH_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"LABGRAPH_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("LABGRAPH_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def run_config(args, saved=False) -> RunConfig:
    """Config file (or the run directory's saved config when ``saved``), then flag overrides."""
    path = args.config
    if path is None and saved and args.out and (Path(args.out) / "config.ini").exists():
        path = Path(args.out) / "config.ini"
    cfg = load_config(path) if path else RunConfig()
    for attr, key in (("corpus", "data.corpus"), ("graph", "data.graph")):
        if getattr(args, attr, None):
            cfg.set(key, getattr(args, attr))
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.rounds is not None:
        if args.rounds < 0:
            raise ConfigError("--rounds must be >= 0")
        cfg.train.rounds = args.rounds
    for flag in ("arcl", "mim", "mhr_cnn", "aat"):
        if getattr(args, f"no_{flag}"):
            setattr(cfg.train, flag, False)
    return cfg


def out_dir(args, cfg) -> Path:
    return Path(args.out or cfg.data.out)


# ---------------------------------------------------------------- subcommands

def _read_words(path):
    try:
        return Path(path).read_text(encoding="utf-8").split()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def cmd_build_graph(args):
    from .graph import build_graph
    from .synth import load_corpus

    if args.codes.endswith(".jsonl"):
        try:
            docs = load_corpus(args.codes)
        except OSError as exc:
            raise DataError(f"cannot read {args.codes}: {exc}") from None
        codes = sorted({c for d in docs for c in d.codes})
    else:
        codes = _read_words(args.codes)
    ranges = _read_words(args.ranges) if args.ranges else []
    exclusions = []
    if args.exclusions:
        words = _read_words(args.exclusions)
        if len(words) % 2:
            raise DataError(f"{args.exclusions}: exclusions must come in pairs")
        exclusions = list(zip(words[::2], words[1::2]))
    g = build_graph(codes, ranges, exclusions)
    path = Path(args.out or "graph.tsv")
    path.parent.mkdir(parents=True, exist_ok=True)
    g.save(path)
    print(f"wrote {path}: {len(g)} nodes, {len(g.leaves())} leaves, depth {g.depth}")


def cmd_synth_data(args):
    from .synth import SynthSpec, generate

    spec = SynthSpec(seed=7 if args.seed is None else args.seed, n_train=args.n_train, n_dev=args.n_dev,
                     n_test=args.n_test, noise=args.noise)
    if args.branching:
        spec.branching = tuple(int(b) for b in args.branching.split(","))
    corpus = generate(spec)
    out = Path(args.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    corpus.write(out / "corpus.jsonl", out / "graph.tsv")
    (out / "keywords.tsv").write_text(
        "".join(f"{c}\t{' '.join(kw)}\n" for c, kw in sorted(corpus.keywords.items())), encoding="utf-8")
    print(f"wrote {out}: {len(corpus.documents)} documents, {len(corpus.keywords)} coded labels")


def cmd_train(args):
    from .pipeline import train

    cfg = run_config(args)
    out = out_dir(args, cfg)
    trainer = train(cfg, out=out)
    print(f"trained {len(trainer.history)} rounds; best dev micro-F1 {trainer.best_dev():.4f}; saved to {out}")


def cmd_eval(args):
    from .pipeline import evaluate

    cfg = run_config(args, saved=True)
    out = out_dir(args, cfg)
    rep = evaluate(cfg, out, args.split)
    (out / f"report.{args.split}.tsv").write_text(rep.to_tsv(), encoding="utf-8")
    (out / f"report.{args.split}.txt").write_text(rep.to_table(), encoding="utf-8")
    print(rep.to_table(), end="")


def cmd_predict(args):
    from .pipeline import predict_texts

    cfg = run_config(args, saved=True)
    try:
        text = sys.stdin.read() if args.input == "-" else Path(args.input).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc}") from None
    if not text.split():
        raise DataError("input document is empty")
    row = predict_texts(cfg, out_dir(args, cfg), [text], args.top_k)[0]
    print(json.dumps(row))


def cmd_bench(args):
    from .bench import bench

    branching = tuple(int(b) for b in args.branching.split(","))
    rep = bench(branching, args.docs, 0 if args.seed is None else args.seed)
    text = rep.to_text()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "bench.tsv").write_text(text, encoding="utf-8")
    print(text, end="")
    bad = [m.mode for m in rep.modes if not m.within_bound]
    if bad:
        print(f"candidate count exceeded L*k_max in mode(s): {', '.join(bad)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_sweep(args):
    from .pipeline import sweep

    cfg = run_config(args)
    kind = int if args.param == "residual_blocks" else float
    try:
        values = [kind(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values for {args.param} must be {kind.__name__}s: {args.values!r}") from None
    rows = sweep(cfg, args.param, values, workers=worker_count())
    text = f"{SWEEP_HEADER}\n" + "".join(r.to_tsv() + "\n" for r in rows)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / f"sweep.{args.param}.tsv").write_text(text, encoding="utf-8")
    print(text, end="")


# ---------------------------------------------------------------- parser

def _common(p, training=True):
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    if training:
        p.add_argument("--config", help="run configuration file ([section] key = value)")
        p.add_argument("--rounds", type=int)
        p.add_argument("--corpus", help="overrides data.corpus")
        p.add_argument("--graph", help="overrides data.graph")
        for flag in ("arcl", "mim", "mhr-cnn", "aat"):
            p.add_argument(f"--no-{flag}", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="labgraph", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = sub.add_parser("build-graph", parents=[verbose], help="build a code graph from code, range and exclusion lists")
    p.add_argument("--codes", required=True, help="whitespace-separated codes, or a corpus .jsonl")
    p.add_argument("--ranges", help="file of declared ranges such as 390-459")
    p.add_argument("--exclusions", help="file of mutually exclusive code pairs, one pair per line")
    p.add_argument("--out", help="graph file to write (default graph.tsv)")
    p.set_defaults(fn=cmd_build_graph)

    p = sub.add_parser("synth-data", parents=[verbose], help="write a planted synthetic corpus and its graph")
    _common(p, training=False)
    p.add_argument("--n-train", type=int, default=500)
    p.add_argument("--n-dev", type=int, default=100)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--branching", help="comma-separated fan-outs, e.g. 4,3,2")
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", parents=[verbose], help="train a model and save it to --out")
    _common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", parents=[verbose], help="evaluate a trained model and write report files")
    _common(p)
    p.add_argument("--split", default="dev")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", parents=[verbose], help="predict codes for one document")
    _common(p)
    p.add_argument("--input", default="-", help="document text file ('-' for stdin)")
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("bench", parents=[verbose], help="candidate-evaluation and memory benchmark")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--branching", default="10,10,10")
    p.add_argument("--docs", type=int, default=20)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("sweep", parents=[verbose], help="retrain across values of one hyperparameter")
    _common(p)
    p.add_argument("--param", required=True, choices=["epsilon", "residual_blocks"])
    p.add_argument("--values", default="", help="comma-separated values; empty gives an empty table")
    p.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        code = args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
