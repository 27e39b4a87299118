"""Ground-truth evaluators and the transfer-learning cost model.

Two evaluators share one interface, ``evaluate(arch, parent=None)``:

* ``SyntheticOracle`` -- a closed-form, hash-seeded accuracy that is
  bit-exact across platforms, so tiny spaces have a brute-forceable optimum.
* ``TabularBenchmark`` -- a lookup table loaded from ``encoding,accuracy`` CSV.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    AccuracyOutOfRange,
    DuplicateKey,
    IncompleteArchitecture,
    InvalidEncoding,
    InvalidTableEncoding,
    NotInTable,
    ParseError,
)
from .space import (
    CellArchitecture,
    DagArchitecture,
    SpaceLimits,
    decode,
    encode,
    encoding_text,
    is_complete,
    limits_for_encoding,
    longest_path,
    parse_encoding,
    validate,
    edit_distance,
)

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211
MASK64 = (1 << 64) - 1
NOISE_BITS = 24

FULL_EPOCHS = 70
TRANSFER_EPOCHS = 20


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def noise_unit(digits: Sequence[int], seed: int) -> float:
    """Deterministic value in [0, 1) with 2**-24 resolution."""
    payload = encoding_text(digits).encode("utf-8") + struct.pack("<Q", seed & MASK64)
    return (fnv1a64(payload) % (1 << NOISE_BITS)) / (1 << NOISE_BITS)


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    cost_epochs: int
    from_transfer: bool


def transfer_cost(parent_available: bool) -> int:
    return TRANSFER_EPOCHS if parent_available else FULL_EPOCHS


@dataclass(frozen=True)
class SyntheticOracleConfig:
    seed: int = 0
    w_depth: float = 0.20
    w_ops: float = 0.15
    w_noise: float = 0.10
    w_edges: float = 0.05
    limits: SpaceLimits = field(default_factory=lambda: SpaceLimits(max_nodes=5))

    def __post_init__(self):
        if min(self.w_depth, self.w_ops, self.w_noise, self.w_edges) < 0:
            raise ValueError("oracle weights must be nonnegative")


def synthetic_accuracy(arch, cfg: SyntheticOracleConfig) -> float:
    """Closed-form accuracy of a complete architecture.

    For DAGs: ``0.5 + w_depth*L/(max_nodes-1) + w_ops*D/num_ops
    - w_edges*E/E_max + w_noise*u`` clamped to [0, 1], with L the longest
    input-output path, D the number of distinct intermediate ops, E the edge
    count and u the hash noise.  The evaluation order of the sum is fixed.
    """
    if not is_complete(arch):
        raise IncompleteArchitecture("only complete architectures can be evaluated")
    lim = cfg.limits
    digits = encode(arch, lim)
    u = noise_unit(digits, cfg.seed)
    if isinstance(arch, DagArchitecture):
        depth = longest_path(arch)
        distinct = len(set(arch.node_ops))
        n_edges = len(arch.edges)
        e_max = lim.max_nodes * (lim.max_nodes - 1) // 2
        acc = (
            0.50
            + cfg.w_depth * depth / (lim.max_nodes - 1)
            + cfg.w_ops * distinct / lim.num_ops
            - cfg.w_edges * n_edges / e_max
            + cfg.w_noise * u
        )
    else:
        acc = _cell_accuracy(arch, cfg, u)
    return min(1.0, max(0.0, acc))


def _cell_accuracy(arch: CellArchitecture, cfg: SyntheticOracleConfig, u: float) -> float:
    lim = cfg.limits
    blocks = arch.normal_cell + arch.reduction_cell
    layers = [code for b in blocks for code in (b.left_layer, b.right_layer) if code]
    empty = sum(1 for b in blocks for code in (b.left_layer, b.right_layer) if not code)
    return (
        0.50
        + cfg.w_depth * len(blocks) / (2 * lim.max_blocks)
        + cfg.w_ops * len(set(layers)) / lim.num_layers
        - cfg.w_edges * empty / (4 * lim.max_blocks)
        + cfg.w_noise * u
    )


class SyntheticOracle:
    def __init__(self, cfg: SyntheticOracleConfig):
        self.cfg = cfg
        self.limits = cfg.limits

    def accuracy(self, arch) -> float:
        return synthetic_accuracy(arch, self.cfg)

    def accuracy_of_encoding(self, digits: Sequence[int]) -> float:
        return self.accuracy(decode(digits, self.limits))

    def evaluate(self, arch, parent=None) -> Evaluation:
        return Evaluation(self.accuracy(arch), transfer_cost(parent is not None), parent is not None)

    def describe(self) -> str:
        return f"synthetic:{self.cfg.seed}"


class TabularBenchmark:
    """Accuracy lookup keyed by hyphenated encoding text."""

    def __init__(self, table: dict[str, float], limits: SpaceLimits, source: str = ""):
        self.table = table
        self.limits = limits
        self.source = source
        self.best_encoding, self.best_accuracy = None, None
        for key, acc in table.items():  # first occurrence wins ties
            if self.best_accuracy is None or acc > self.best_accuracy:
                self.best_encoding, self.best_accuracy = key, acc

    def __len__(self):
        return len(self.table)

    @property
    def best(self) -> tuple[str, float]:
        return self.best_encoding, self.best_accuracy

    def accuracy(self, arch) -> float:
        key = encoding_text(encode(arch, self.limits))
        try:
            return self.table[key]
        except KeyError:
            raise NotInTable(f"architecture {key} is not in the table") from None

    def accuracy_of_encoding(self, digits: Sequence[int]) -> float:
        key = encoding_text(digits)
        try:
            return self.table[key]
        except KeyError:
            raise NotInTable(f"architecture {key} is not in the table") from None

    def evaluate(self, arch, parent=None) -> Evaluation:
        return Evaluation(self.accuracy(arch), transfer_cost(parent is not None), parent is not None)

    def describe(self) -> str:
        return f"tabular:{self.source}"


def load_tabular(path, num_ops: int | None = None) -> TabularBenchmark:
    """Parse an ``encoding,accuracy`` CSV and validate every row.

    The DAG op vocabulary is read from the INPUT code of the first row
    unless ``num_ops`` is given.
    """
    path = Path(path)
    table: dict[str, float] = {}
    limits = None
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["encoding", "accuracy"]:
            raise ParseError("expected header 'encoding,accuracy'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line=lineno)
            try:
                digits = parse_encoding(row[0])
            except InvalidEncoding as exc:
                raise InvalidTableEncoding(str(exc), line=lineno) from None
            try:
                acc = float(row[1])
            except ValueError:
                raise ParseError(f"accuracy {row[1]!r} is not a number", line=lineno) from None
            if limits is None:
                limits = _infer_limits(digits, num_ops, lineno)
            try:
                arch = decode(digits, limits)
            except InvalidEncoding as exc:
                raise InvalidTableEncoding(str(exc), line=lineno) from None
            if any(v.kind == "bounds" for v in validate(arch, limits)) or not is_complete(arch):
                raise InvalidTableEncoding("architecture is not complete and valid", line=lineno)
            if not 0.0 <= acc <= 1.0:
                raise AccuracyOutOfRange(f"accuracy {acc} outside [0, 1]", line=lineno)
            key = encoding_text(digits)
            if key in table:
                raise DuplicateKey(f"encoding {key} repeated", line=lineno)
            table[key] = acc
    if not table:
        raise ParseError("table has no rows", line=1)
    return TabularBenchmark(table, limits, source=str(path))


def _infer_limits(digits, num_ops, lineno) -> SpaceLimits:
    try:
        limits = limits_for_encoding(len(digits))
    except InvalidEncoding as exc:
        raise InvalidTableEncoding(str(exc), line=lineno) from None
    if limits.domain == "dag":
        m = limits.max_nodes
        ops = num_ops if num_ops is not None else digits[m * m] - 1
        if ops < 1:
            raise InvalidTableEncoding("cannot infer the op vocabulary", line=lineno)
        limits = SpaceLimits(domain="dag", max_nodes=m, num_ops=ops)
    return limits


def export_tabular(rows: Iterable[tuple[Sequence[int], float]], path, precision: int = 6) -> int:
    """Write ``(encoding, accuracy)`` rows in the tabular CSV format."""
    path = Path(path)
    count = 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write("encoding,accuracy\n")
        for digits, acc in rows:
            fh.write(f"{encoding_text(digits)},{acc:.{precision}f}\n")
            count += 1
    return count


def make_evaluator(source: str, limits: SpaceLimits, oracle_kwargs=None):
    """Build an evaluator from ``synthetic:<seed>`` or ``tabular:<path>``."""
    kind, _, arg = source.partition(":")
    if kind == "synthetic":
        seed = int(arg) if arg else 0
        return SyntheticOracle(SyntheticOracleConfig(seed=seed, limits=limits, **(oracle_kwargs or {})))
    if kind == "tabular":
        bench = load_tabular(arg, num_ops=limits.num_ops if limits.domain == "dag" else None)
        if bench.limits.encoding_length != limits.encoding_length:
            raise ValueError(
                f"table encodes {bench.limits.encoding_length} digits but the space uses "
                f"{limits.encoding_length}"
            )
        return bench
    raise ValueError(f"unknown evaluator {source!r}")


# --------------------------------------------------------------------------
# transfer learning


def find_transfer_parent(tree, node_id: int, evaluated, target=None) -> tuple | None:
    """Nearest-by-edit-distance evaluated ancestor of ``node_id`` (inclusive).

    Distances are measured to ``target`` (default: the node's own encoding).
    ``evaluated`` maps encodings to true accuracies.  Returns
    ``(encoding, distance)`` or ``None``; ties go to the closer ancestor.
    """
    if target is None:
        target = tree.nodes[node_id].encoding
    best = None
    current = node_id
    while current is not None:
        node = tree.nodes[current]
        if node.encoding in evaluated:
            d = edit_distance(node.encoding, target)
            if best is None or d < best[1]:
                best = (node.encoding, d)
        current = node.parent
    return best


@dataclass(frozen=True)
class CostLedger:
    evaluations: int
    transferred: int
    with_transfer: int
    without_transfer: int


def simulated_cost_ledger(costs: Iterable[int]) -> CostLedger:
    """Totals of per-evaluation costs with and without weight transfer."""
    costs = list(costs)
    transferred = sum(1 for c in costs if c == TRANSFER_EPOCHS)
    return CostLedger(len(costs), transferred, sum(costs), FULL_EPOCHS * len(costs))
