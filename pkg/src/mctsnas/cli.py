"""Command line entry point: search, bench, serve, worker, enumerate, surrogate.

Exit codes: 0 success, 2 configuration error, 3 evaluator mismatch,
4 protocol error, 5 snapshot error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    NotInTable,
    ProtocolError,
    SearchError,
    SnapshotError,
    SpaceTooLarge,
    TableError,
)
from .evaluators import TabularBenchmark, export_tabular, make_evaluator
from .harness import ALGORITHMS, BenchSettings, emit_report, run_trials, summarize
from .mcts import MCTS, SearchConfig
from .space import SpaceLimits, encode, encoding_text, enumerate_space
from .trace import TrialTrace

EXIT_CONFIG, EXIT_NOT_IN_TABLE, EXIT_PROTOCOL, EXIT_SNAPSHOT = 2, 3, 4, 5


def _space_args(p: argparse.ArgumentParser):
    p.add_argument("--space", choices=("dag", "cell"), default="dag")
    p.add_argument("--max-nodes", type=int, default=5)
    p.add_argument("--ops", type=int, default=3)
    p.add_argument("--evaluator", default="synthetic:0",
                   help="synthetic:<seed> or tabular:<path>")


def _search_args(p: argparse.ArgumentParser):
    _space_args(p)
    p.add_argument("--budget", type=int, default=200, help="unique evaluations")
    p.add_argument("--c", type=float, default=0.5)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-meta-dnn", action="store_true")
    p.add_argument("--retrain-every", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-2, help="surrogate learning rate")
    p.add_argument("--epochs", type=int, default=20, help="surrogate epochs per retrain")
    p.add_argument("--hidden", default="32", help="surrogate hidden widths, comma separated")
    p.add_argument("--target", type=float, default=None, help="stop at this accuracy")
    p.add_argument("--snapshot-every", type=int, default=0)
    p.add_argument("--snapshot", type=Path, default=None)
    p.add_argument("--resume", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mctsnas", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    _search_args(sub.add_parser("search", help="run one search"))

    p = sub.add_parser("bench", help="repeated seeded trials of several algorithms")
    _space_args(p)
    p.add_argument("--algos", default="mcts,mcts-nm,rs,re")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--target", default="auto", help="auto or an accuracy")
    p.add_argument("--tolerance", type=float, default=0.0)
    p.add_argument("--budget", type=int, default=5000)
    p.add_argument("--c", type=float, default=BenchSettings.c)
    p.add_argument("--k", type=int, default=BenchSettings.k)
    p.add_argument("--retrain-every", type=int, default=BenchSettings.retrain_every)
    p.add_argument("--reference", default="mcts")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", type=Path, default=Path("bench-out"))
    p.add_argument("--svg", action="store_true")

    p = sub.add_parser("serve", help="run the search as a master for remote workers")
    _search_args(p)
    p.add_argument("--listen", default="127.0.0.1:7733")
    p.add_argument("--workers", type=int, default=1, help="expected workers; sizes the job queue")
    p.add_argument("--queue-bound", type=int, default=None)
    p.add_argument("--local-workers", type=int, default=0)
    p.add_argument("--sync", action="store_true")

    p = sub.add_parser("worker", help="evaluate jobs for a master")
    _space_args(p)
    p.add_argument("--connect", default="127.0.0.1:7733")
    p.add_argument("--retries", type=int, default=5)

    p = sub.add_parser("enumerate", help="list every complete DAG in a small space")
    p.add_argument("--max-nodes", type=int, default=4)
    p.add_argument("--ops", type=int, default=3)
    p.add_argument("--evaluator", default="synthetic:0")
    p.add_argument("--export", type=Path, default=None, help="write an encoding,accuracy CSV")

    p = sub.add_parser("surrogate", help="fit the accuracy predictor to a table")
    p.add_argument("--train", type=Path, required=True, help="encoding,accuracy CSV")
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--multi-stage", action="store_true")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", default="64,128,64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save", type=Path, default=None, help="binary checkpoint path")
    p.add_argument("--report", type=Path, default=None, help="write metrics as JSON")
    return parser


def _hidden(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(w) for w in text.split(",") if w)
    except ValueError:
        raise ValueError(f"bad hidden widths {text!r}") from None
    if not widths or min(widths) < 1:
        raise ValueError("hidden widths must be positive")
    return widths


def _limits(args) -> SpaceLimits:
    if getattr(args, "space", "dag") == "cell":
        return SpaceLimits(domain="cell")
    return SpaceLimits(max_nodes=args.max_nodes, num_ops=args.ops)


def _engine(args, limits: SpaceLimits) -> MCTS:
    if args.resume is not None:
        from .distributed import snapshot_restore

        return snapshot_restore(args.resume)
    from .surrogate import Surrogate, TrainConfig

    meta = not args.no_meta_dnn
    cfg = SearchConfig(c=args.c, k=args.k, seed=args.seed, meta_dnn_enabled=meta,
                       retrain_every=args.retrain_every)
    sur = None
    if meta:
        tc = TrainConfig(epochs=args.epochs, learning_rate=args.lr)
        sur = Surrogate(limits.encoding_length, limits.max_digit, tc, hidden=_hidden(args.hidden), seed=args.seed)
    return MCTS(limits, cfg, sur)


def _print_rows(rows):
    for row in rows:
        print("\t".join(str(x) for x in row))


def _finish_search(engine: MCTS, args, started: float):
    from .evaluators import simulated_cost_ledger

    ledger = simulated_cost_ledger(e.cost_epochs for e in engine.events)
    _print_rows([("index", "encoding", "accuracy", "cost_epochs")])
    _print_rows((e.index, encoding_text(e.encoding), repr(e.accuracy), e.cost_epochs) for e in engine.events)
    enc, acc = engine.best()
    print("---")
    _print_rows([
        ("best", encoding_text(enc) if enc else "", repr(acc)),
        ("evaluations", len(engine.events)),
        ("iterations", engine.iterations),
        ("cost_with_transfer", ledger.with_transfer),
        ("cost_without_transfer", ledger.without_transfer),
    ])
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        trace = TrialTrace("mcts" if engine.cfg.meta_dnn_enabled else "mcts-nm", engine.cfg.seed)
        for e in engine.events:
            trace.add(e.encoding, e.accuracy, e.cost_epochs)
        emit_report([trace], args.out, ("csv",), reference=None,
                    meta={"wall_seconds": round(time.time() - started, 3), "command": sys.argv[1:]})
        (args.out / "tree.tsv").write_text(engine.tree.dump())


def cmd_search(args) -> int:
    started = time.time()
    limits = _limits(args)
    engine = _engine(args, limits)
    evaluator = make_evaluator(args.evaluator, engine.limits)
    budget = args.budget
    while engine.dispatched < budget and not engine.stalled:
        job = engine.step()
        if args.snapshot_every and args.snapshot and engine.iterations % args.snapshot_every == 0:
            from .distributed import snapshot_save

            snapshot_save(engine, args.snapshot)
        if job is None:
            continue
        acc = evaluator.accuracy_of_encoding(job.encoding)
        engine.apply_result(job.job_id, acc)
        if args.target is not None and acc >= args.target:
            break
    if args.snapshot is not None:
        from .distributed import snapshot_save

        snapshot_save(engine, args.snapshot)
    _finish_search(engine, args, started)
    return 0


def _auto_target(evaluator, limits: SpaceLimits) -> float:
    if isinstance(evaluator, TabularBenchmark):
        return evaluator.best[1]
    return max(evaluator.accuracy(a) for a in enumerate_space(limits))


def cmd_bench(args) -> int:
    started = time.time()
    limits = _limits(args)
    evaluator = make_evaluator(args.evaluator, limits)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    unknown = [a for a in algos if a not in ALGORITHMS]
    if unknown:
        raise ValueError(f"unknown algorithms {unknown}; choose from {list(ALGORITHMS)}")
    target = _auto_target(evaluator, limits) if args.target == "auto" else float(args.target)
    settings = BenchSettings(budget=args.budget, target=target, tolerance=args.tolerance,
                             c=args.c, k=args.k, retrain_every=args.retrain_every)
    traces = []
    for algo in algos:
        traces += run_trials(algo, limits, evaluator, args.trials, args.base_seed, settings, args.jobs)
    formats = ("csv", "svg") if args.svg else ("csv",)
    reference = args.reference if args.reference in algos else None
    emit_report(traces, args.out_dir, formats, reference=reference, censor_at=args.budget + 1,
                meta={"wall_seconds": round(time.time() - started, 3), "target": target,
                      "command": sys.argv[1:]})
    report = summarize(traces, reference, args.budget + 1)
    _print_rows([("algorithm", "trials", "reached", "q1", "median", "q3", "speedup", "p_value")])
    for s in report.summaries.values():
        _print_rows([(s.algorithm, s.trials, s.reached, s.q1, s.median, s.q3, s.speedup, s.p_value)])
    return 0


def cmd_serve(args) -> int:
    from .distributed import master_loop

    started = time.time()
    limits = _limits(args)
    engine = _engine(args, limits)
    evaluator = make_evaluator(args.evaluator, engine.limits) if args.local_workers else None
    workers = max(args.workers, args.local_workers, 1)
    master_loop(engine, args.budget, args.listen, target=args.target, workers=workers,
                local_evaluator=evaluator, sync=args.sync, queue_bound=args.queue_bound,
                snapshot_every=args.snapshot_every, snapshot_path=args.snapshot)
    _finish_search(engine, args, started)
    return 0


def cmd_worker(args) -> int:
    from .distributed import worker_loop

    evaluator = make_evaluator(args.evaluator, _limits(args))
    return worker_loop(args.connect, evaluator, max_retries=args.retries)


def cmd_enumerate(args) -> int:
    limits = SpaceLimits(max_nodes=args.max_nodes, num_ops=args.ops)
    evaluator = make_evaluator(args.evaluator, limits)
    rows = [(encode(a, limits), evaluator.accuracy(a)) for a in enumerate_space(limits)]
    best = max(rows, key=lambda r: r[1])  # first maximum in enumeration order
    if args.export is not None:
        export_tabular(rows, args.export)
    _print_rows([("count", len(rows)), ("best", encoding_text(best[0]), repr(best[1]))])
    return 0


def cmd_surrogate(args) -> int:
    from .evaluators import load_tabular
    from .space import parse_encoding
    from .surrogate import Surrogate, TrainConfig, pearson, save_checkpoint, spearman

    if not 0.0 <= args.holdout < 1.0:
        raise ValueError("holdout must lie in [0, 1)")
    bench = load_tabular(args.train)
    keys = list(bench.table)
    X = [parse_encoding(k) for k in keys]
    y = np.array([bench.table[k] for k in keys])
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(keys))
    n_test = int(round(args.holdout * len(keys)))
    test, train = order[:n_test], order[n_test:]
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr)
    sur = Surrogate(bench.limits.encoding_length, bench.limits.max_digit, cfg,
                    hidden=_hidden(args.hidden), multi_stage=args.multi_stage, seed=args.seed)
    for i in train:
        sur.record(X[i], y[i])
    history = sur.retrain()
    metrics = {"train_size": len(train), "holdout_size": len(test), "final_loss": history[-1] if history else None}
    for name, idx in (("train", train), ("holdout", test)):
        if len(idx) >= 2:
            preds = sur.predict([X[i] for i in idx])
            metrics[f"{name}_pearson"] = pearson(preds, y[idx])
            metrics[f"{name}_spearman"] = spearman(preds, y[idx])
            metrics[f"{name}_mse"] = float(np.mean((preds - y[idx]) ** 2))
    _print_rows(sorted(metrics.items()))
    if args.save is not None:
        save_checkpoint(sur.model, args.save)
    if args.report is not None:
        args.report.write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return 0


COMMANDS = {
    "search": cmd_search,
    "bench": cmd_bench,
    "serve": cmd_serve,
    "worker": cmd_worker,
    "enumerate": cmd_enumerate,
    "surrogate": cmd_surrogate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NotInTable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_IN_TABLE
    except ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except SnapshotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SNAPSHOT
    except (ValueError, TableError, SpaceTooLarge, SearchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
