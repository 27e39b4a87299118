"""Seeded repeated trials, samples-to-target statistics and report files."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import mannwhitneyu

from .baselines import BaselineConfig, run_baseline
from .evaluators import simulated_cost_ledger
from .mcts import MCTS, SearchConfig
from .space import SpaceLimits, encoding_text
from .surrogate import Surrogate, TrainConfig
from .trace import TrialTrace

ALGORITHMS = ("mcts", "mcts-nm", "rs", "re", "hc", "ql")


@dataclass(frozen=True)
class BenchSettings:
    """Everything a trial needs besides the space, evaluator and seed."""

    budget: int = 5000
    target: float | None = None
    tolerance: float = 0.0
    # search
    c: float = 0.1
    k: int = 10
    retrain_every: int = 1
    stall_limit: int = 20_000
    # surrogate used by the bench: small and fast to train
    learning_rate: float = 1e-2
    epochs: int = 20
    hidden: tuple = (32,)
    # baselines
    population_size: int = 500
    tournament_size: int = 50
    epsilon: float = 0.2
    alpha: float = 0.2
    gamma: float = 1.0
    q_init: float = 0.5

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be at least 1")

    def search_config(self, seed: int, meta: bool) -> SearchConfig:
        return SearchConfig(c=self.c, k=self.k, seed=seed, meta_dnn_enabled=meta,
                            retrain_every=self.retrain_every, stall_limit=self.stall_limit)

    def surrogate(self, limits: SpaceLimits, seed: int) -> Surrogate:
        cfg = TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate)
        return Surrogate(limits.encoding_length, limits.max_digit, cfg, hidden=self.hidden, seed=seed)

    def baseline_config(self, algorithm: str, seed: int) -> BaselineConfig:
        return BaselineConfig(
            algorithm, seed=seed, budget=self.budget, target=self.target, tolerance=self.tolerance,
            population_size=self.population_size, tournament_size=self.tournament_size,
            epsilon=self.epsilon, alpha=self.alpha, gamma=self.gamma, q_init=self.q_init,
        )


def config_hash(algorithm: str, limits: SpaceLimits, settings: BenchSettings, evaluator=None) -> str:
    payload = {
        "algorithm": algorithm,
        "limits": {k: v for k, v in asdict(limits).items() if not k.startswith("_")},
        "settings": asdict(settings),
        "evaluator": evaluator.describe() if evaluator is not None else None,
    }
    text = json.dumps(payload, sort_keys=True, default=list)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


# --------------------------------------------------------------------------
# trials


def run_mcts_trial(limits: SpaceLimits, evaluator, seed: int, settings: BenchSettings,
                   meta: bool = True) -> TrialTrace:
    """One sequential search with immediate evaluation of every job."""
    sur = settings.surrogate(limits, seed) if meta else None
    engine = MCTS(limits, settings.search_config(seed, meta), sur)
    trace = TrialTrace("mcts" if meta else "mcts-nm", seed,
                       target=settings.target, tolerance=settings.tolerance)
    while engine.dispatched < settings.budget and not engine.stalled and not trace.reached:
        job = engine.step()
        if job is None:
            continue
        acc = evaluator.accuracy_of_encoding(job.encoding)
        engine.apply_result(job.job_id, acc)
        trace.add(job.encoding, acc, job.cost_epochs)
    return trace


def run_trial(algorithm: str, limits: SpaceLimits, evaluator, seed: int,
              settings: BenchSettings) -> TrialTrace:
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if algorithm in ("mcts", "mcts-nm"):
        trace = run_mcts_trial(limits, evaluator, seed, settings, meta=algorithm == "mcts")
    else:
        trace = run_baseline(limits, evaluator, settings.baseline_config(algorithm, seed))
    trace.config_hash = config_hash(algorithm, limits, settings, evaluator)
    return trace


def _trial_task(args):
    return run_trial(*args)


def run_trials(algorithm: str, limits: SpaceLimits, evaluator, trials: int, base_seed: int = 0,
               settings: BenchSettings = BenchSettings(), jobs: int = 1) -> list[TrialTrace]:
    """Trial ``i`` uses seed ``base_seed + i``; traces come back in seed order."""
    tasks = [(algorithm, limits, evaluator, base_seed + i, settings) for i in range(trials)]
    if jobs > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(_trial_task, tasks))
    else:
        traces = [_trial_task(t) for t in tasks]
    return sorted(traces, key=lambda t: t.seed)


# --------------------------------------------------------------------------
# statistics


def quantile(values, q: float) -> float | None:
    """Linearly interpolated quantile; ``None`` if it depends on an infinite value.

    Unreached trials enter as ``inf`` so a median exists only when at least
    half of the trials reached the target.
    """
    xs = sorted(values)
    if not xs:
        return None
    pos = q * (len(xs) - 1)
    lo, hi = math.floor(pos), math.ceil(pos)
    if math.isinf(xs[lo]) or math.isinf(xs[hi]):
        return None
    return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)


def mean_best_curve(traces: list[TrialTrace], length: int | None = None) -> list[float]:
    """Mean best-so-far at sample indices ``1..length``; short traces carry their last value."""
    length = length or max((len(t.events) for t in traces), default=0)
    rows = []
    for t in traces:
        if not t.events:
            continue
        best = [e.best_so_far for e in t.events[:length]]
        rows.append(best + [best[-1]] * (length - len(best)))
    if not rows:
        return []
    return [float(v) for v in np.mean(np.array(rows), axis=0)]


@dataclass
class AlgorithmSummary:
    algorithm: str
    trials: int
    reached: int
    q1: float | None
    median: float | None
    q3: float | None
    samples: list = field(default_factory=list)
    speedup: float | None = None
    p_value: float | None = None
    curve: list = field(default_factory=list)
    cost_with_transfer: int = 0
    cost_without_transfer: int = 0


@dataclass
class BenchReport:
    reference: str | None
    summaries: dict[str, AlgorithmSummary]

    def __getitem__(self, algorithm: str) -> AlgorithmSummary:
        return self.summaries[algorithm]


def summarize(traces: list[TrialTrace], reference: str | None = "mcts",
              censor_at: int | None = None) -> BenchReport:
    """Per-algorithm quartiles of samples-to-target, speedups and p-values.

    ``speedup`` is ``median(algorithm) / median(reference)``.  ``p_value``
    is a one-sided Mann-Whitney test that the reference needs fewer samples;
    unreached trials count as ``censor_at`` (default: longest trace + 1).
    """
    groups: dict[str, list[TrialTrace]] = {}
    for t in traces:
        groups.setdefault(t.algorithm, []).append(t)
    if censor_at is None:
        censor_at = 1 + max((len(t.events) for t in traces), default=0)
    summaries = {}
    for name, group in groups.items():
        hits = [t.samples_to_target for t in group]
        vals = [h if h is not None else math.inf for h in hits]
        with_t = without_t = 0
        for t in group:
            ledger = simulated_cost_ledger(t.costs)
            with_t += ledger.with_transfer
            without_t += ledger.without_transfer
        summaries[name] = AlgorithmSummary(
            name, len(group), sum(h is not None for h in hits),
            quantile(vals, 0.25), quantile(vals, 0.5), quantile(vals, 0.75),
            samples=sorted(h for h in hits if h is not None),
            curve=mean_best_curve(group),
            cost_with_transfer=with_t, cost_without_transfer=without_t,
        )
    ref = summaries.get(reference) if reference else None
    if ref is not None:
        ref_vals = _censored(groups[reference], censor_at)
        for name, s in summaries.items():
            if ref.median is not None and s.median is not None:
                s.speedup = s.median / ref.median
            if name != reference and ref_vals:
                other = _censored(groups[name], censor_at)
                s.p_value = float(mannwhitneyu(ref_vals, other, alternative="less").pvalue)
    return BenchReport(reference if ref is not None else None, summaries)


def _censored(group: list[TrialTrace], censor_at: int) -> list[int]:
    return [t.samples_to_target if t.reached else censor_at for t in group]


# --------------------------------------------------------------------------
# report files


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def write_trials_csv(traces: list[TrialTrace], path) -> int:
    rows = 0
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["algorithm", "seed", "config_hash", "index", "encoding",
                    "accuracy", "best_so_far", "cumulative_cost"])
        for t in traces:
            for e in t.events:
                w.writerow([t.algorithm, t.seed, t.config_hash, e.index, encoding_text(e.encoding),
                            repr(e.accuracy), repr(e.best_so_far), e.cumulative_cost])
                rows += 1
    return rows


def write_summary_csv(report: BenchReport, path):
    ref = report.reference or "reference"
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["algorithm", "trials", "reached", "q1", "median", "q3",
                    f"speedup_vs_{ref}", f"p_{ref}_fewer", "cost_with_transfer", "cost_without_transfer"])
        for s in report.summaries.values():
            w.writerow([s.algorithm, s.trials, s.reached, _num(s.q1), _num(s.median), _num(s.q3),
                        _num(s.speedup), _num(s.p_value), s.cost_with_transfer, s.cost_without_transfer])


def emit_report(traces: list[TrialTrace], out_dir, formats=("csv",), reference: str | None = "mcts",
                censor_at: int | None = None, meta: dict | None = None) -> list[Path]:
    """Write trials.csv, summary.csv, meta.json and optionally the SVG figures.

    Data files depend only on ``traces``; run metadata such as wall time
    goes to meta.json alone.
    """
    if not traces:
        raise ValueError("no traces to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = summarize(traces, reference, censor_at)
    written = []
    if "csv" in formats:
        write_trials_csv(traces, out / "trials.csv")
        write_summary_csv(report, out / "summary.csv")
        written += [out / "trials.csv", out / "summary.csv"]
    if "svg" in formats:
        from .plotting import boxplot_svg, progression_svg

        progression_svg(report, out / "progression.svg")
        boxplot_svg(report, out / "boxplot.svg")
        written += [out / "progression.svg", out / "boxplot.svg"]
    info = {
        "config_hashes": sorted({t.config_hash for t in traces}),
        "versions": run_versions(),
    }
    info.update(meta or {})
    (out / "meta.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    written.append(out / "meta.json")
    return written


def run_versions() -> dict:
    import matplotlib
    import scipy

    from . import __version__

    return {
        "package": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }
