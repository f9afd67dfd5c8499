"""Command-line interface: model I/O, inference, fitting, benchmarking.

Exit codes: 0 success, 1 malformed model file, 2 malformed corpus,
3 model/corpus dimension mismatch (e.g. token outside the vocabulary).
Stochastic commands require an explicit ``--seed`` and print byte-identical
output across runs.  ``LRINFER_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import hmm as hmm_mod
from . import hsmm as hsmm_mod
from . import pcfg as pcfg_mod
from .modelio import ModelFileError, load_model, save_model

log = logging.getLogger("lrinfer")

EXIT_OK = 0
EXIT_BAD_MODEL = 1
EXIT_BAD_CORPUS = 2
EXIT_DIM_MISMATCH = 3


class CorpusError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def load_token_corpus(path) -> list[np.ndarray]:
    """One sequence per line: whitespace-separated nonnegative integers."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus: {exc}") from exc
    seqs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            tokens = [int(tok) for tok in line.split()]
        except ValueError:
            raise CorpusError(f"line {lineno}: tokens must be integers")
        if any(t < 0 for t in tokens):
            raise CorpusError(f"line {lineno}: tokens must be nonnegative")
        seqs.append((lineno, np.array(tokens, dtype=np.int64)))
    return seqs


def load_frame_corpus(path) -> list:
    """Directory of per-sequence CSV files, one frame per line."""
    root = Path(path)
    if not root.is_dir():
        raise CorpusError(f"{path} is not a directory (frame corpora are directories of CSVs)")
    seqs = []
    for file in sorted(root.glob("*.csv")):
        rows = []
        for lineno, line in enumerate(file.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise CorpusError(f"{file.name} line {lineno}: expected comma-separated reals")
            if len(rows[-1]) != len(rows[0]):
                raise CorpusError(f"{file.name} line {lineno}: inconsistent frame width")
        if not rows:
            raise CorpusError(f"{file.name}: empty frame file")
        seqs.append((file.name, np.array(rows)))
    return seqs


def _validate_tokens(seqs, vocab: int, min_len: int) -> None:
    for lineno, seq in seqs:
        if seq.size < min_len:
            raise DimensionMismatchError(
                f"line {lineno}: sequence length {seq.size} below the minimum {min_len}"
            )
        if np.any(seq >= vocab):
            bad = int(seq[np.argmax(seq >= vocab)])
            raise DimensionMismatchError(f"line {lineno}: token {bad} >= vocab size {vocab}")


def cmd_marginal(args) -> int:
    family, model = load_model(args.model)
    if family == "hsmm":
        seqs = load_frame_corpus(args.corpus)
        for _, frames in seqs:
            if frames.shape[1] != model.frame_dim:
                raise DimensionMismatchError(
                    f"frame dim {frames.shape[1]} does not match the model's {model.frame_dim}"
                )
        compute = lambda item: hsmm_mod.log_marginal(model, item[1])
    else:
        seqs = load_token_corpus(args.corpus)
        if family == "hmm":
            vocab = model.emission.vocab if hasattr(model.emission, "vocab") else None
            if vocab is None:
                raise CorpusError("token corpora require a categorical-emission model")
            _validate_tokens(seqs, vocab, min_len=1)
            compute = lambda item: hmm_mod.log_marginal(model, item[1])
        else:
            _validate_tokens(seqs, model.vocab, min_len=2)
            compute = lambda item: pcfg_mod.log_inside(model, item[1])

    if args.threads > 1 and len(seqs) > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            values = list(pool.map(compute, seqs))
    else:
        values = [compute(item) for item in seqs]
    for v in values:
        print(_fmt(v))
    print(f"total {_fmt(sum(values))}")
    return EXIT_OK


def cmd_fit(args) -> int:
    seqs = load_token_corpus(args.corpus)
    if not seqs:
        raise CorpusError("fit needs a nonempty corpus")
    data = [seq for _, seq in seqs]
    vocab = args.V if args.V is not None else int(max(int(s.max()) for s in data)) + 1
    _validate_tokens(seqs, vocab, min_len=1)
    result = hmm_mod.em_fit(data, args.L, vocab, iters=args.iters, seed=args.seed)
    for ll in result.log_likelihoods:
        print(_fmt(ll))
    if args.out:
        save_model(result.model, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = bench_mod.BenchConfig(
        family=args.family,
        L_grid=tuple(args.L),
        ratio_grid=tuple(args.ratio),
        n_grid=tuple(args.n),
        T=args.T,
        batch=args.batch,
        repeats=args.repeats,
        warmup=args.warmup,
        seed=args.seed,
        budget_bytes=args.budget_bytes,
    )
    records = bench_mod.run_grid(cfg)
    bench_mod.frontier_csv(records, args.out)
    log.info("wrote %d records to %s", len(records), args.out)
    return EXIT_OK


def cmd_rank(args) -> int:
    family, model = load_model(args.model)
    rows = bench_mod.rank_report([(Path(args.model).name, model)])
    text = bench_mod.rank_table_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_expressivity(args) -> int:
    report = hmm_mod.expressivity_report(
        restarts=args.restarts, iters=args.iters, seed=args.seed
    )
    print("target two-step marginal table:")
    for row in report.target_table:
        print(" ".join(_fmt(v) for v in row))
    print(f"transition rank: {report.transition_rank}")
    print(f"best 2-state TV distance over {args.restarts} restarts: {_fmt(report.best_tv)}")
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lrinfer",
        description="Exact inference for HMM/HSMM/PCFG models with swappable scoring backends.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("marginal", help="per-sequence log evidence for a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_marginal)

    p = sub.add_parser("fit", help="EM fit of a dense HMM to a token corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--V", type=int, default=None)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("bench", help="time dense vs low-rank inference over a grid")
    p.add_argument("--family", choices=("hmm", "hsmm", "pcfg"), required=True)
    p.add_argument("--L", type=_int_list, required=True)
    p.add_argument("--ratio", type=_int_list, default=[8])
    p.add_argument("--n", type=_int_list, default=[])
    p.add_argument("--T", type=int, default=32)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--budget-bytes", type=int, default=8 << 30)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("rank", help="numerical rank report for a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("expressivity", help="reference-model fit study")
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(fn=cmd_expressivity)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LRINFER_LOG", "WARNING"))
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ModelFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_MODEL
    except CorpusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CORPUS
    except DimensionMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIM_MISMATCH


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
