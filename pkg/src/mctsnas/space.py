"""Design spaces: DAG (NASBench-style) and two-cell (NASNet-style) architectures.

Both domains share the same surface: ``enumerate_actions``, ``apply_action``,
``encode``/``decode``, ``validate`` and ``is_complete``.  States are frozen
dataclasses and can be hashed, shared between threads and used as dict keys.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterator, Sequence, Union

from .errors import IllegalAction, InvalidEncoding, LengthMismatch, SpaceTooLarge

# name -> code, as used by the cell encoding
LAYER_CODES = {
    "3x3 avg pool": 1,
    "5x5 avg pool": 2,
    "7x7 avg pool": 3,
    "3x3 max pool": 4,
    "5x5 max pool": 5,
    "7x7 max pool": 6,
    "3x3 conv": 7,
    "5x5 conv": 8,
    "identity": 9,
    "3x3 depth-separable conv": 10,
    "5x5 depth-separable conv": 11,
    "7x7 depth-separable conv": 12,
}
LAYER_NAMES = {code: name for name, code in LAYER_CODES.items()}

CELLS = ("normal", "reduction")
BLOCK_DIGITS = 6


@dataclass(frozen=True)
class SpaceLimits:
    """Bounds of a design space.

    ``domain`` is ``"dag"`` or ``"cell"``.  The DAG fields are ignored for the
    cell domain and vice versa.
    """

    domain: str = "dag"
    max_nodes: int = 7
    num_ops: int = 3
    max_edges: int | None = None
    max_blocks: int = 5
    max_block_depth: int = 2
    num_layers: int = 12
    _hash: int = field(init=False, repr=False, compare=False)

    def __hash__(self):
        return self._hash

    def __post_init__(self):
        object.__setattr__(self, "_hash", hash((self.domain, self.max_nodes, self.num_ops, self.max_edges,
                                                self.max_blocks, self.max_block_depth, self.num_layers)))
        if self.domain not in ("dag", "cell"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.max_nodes < 2:
            raise ValueError("max_nodes must be at least 2")
        if self.num_ops < 1:
            raise ValueError("num_ops must be positive")
        if self.max_edges is not None and self.max_edges < 1:
            raise ValueError("max_edges must be positive")

    @property
    def input_code(self) -> int:
        return self.num_ops + 1

    @property
    def output_code(self) -> int:
        return self.num_ops + 2

    @property
    def edge_cap(self) -> int:
        full = self.max_nodes * (self.max_nodes - 1) // 2
        return full if self.max_edges is None else min(full, self.max_edges)

    @property
    def encoding_length(self) -> int:
        if self.domain == "dag":
            return self.max_nodes * self.max_nodes + self.max_nodes
        return 2 * self.max_blocks * BLOCK_DIGITS

    @property
    def max_digit(self) -> int:
        """Largest digit value the encoding can hold (used to scale inputs)."""
        if self.domain == "dag":
            return self.output_code
        return max(self.num_layers, self.max_blocks + 1)

    @property
    def max_actions(self) -> int:
        """Most non-terminating actions needed to build the largest state."""
        if self.domain == "dag":
            return (self.max_nodes - 2) + self.edge_cap
        return 2 * self.max_blocks * 3


# --------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class Terminate:
    def __str__(self):
        return "terminate"


@dataclass(frozen=True)
class AddNode:
    op: int

    def __str__(self):
        return f"add_node:{self.op}"


@dataclass(frozen=True)
class AddEdge:
    i: int
    j: int

    def __str__(self):
        return f"add_edge:{self.i}:{self.j}"


@dataclass(frozen=True)
class NewBlock:
    cell: str
    left_input: int
    right_input: int

    def __str__(self):
        return f"new_block:{self.cell}:{self.left_input}:{self.right_input}"


@dataclass(frozen=True)
class AddLayerLeft:
    cell: str
    block: int
    layer: int

    def __str__(self):
        return f"layer_left:{self.cell}:{self.block}:{self.layer}"


@dataclass(frozen=True)
class AddLayerRight:
    cell: str
    block: int
    layer: int

    def __str__(self):
        return f"layer_right:{self.cell}:{self.block}:{self.layer}"


Action = Union[Terminate, AddNode, AddEdge, NewBlock, AddLayerLeft, AddLayerRight]

TERMINATE = Terminate()

_ACTION_TYPES = {
    "terminate": Terminate,
    "add_node": AddNode,
    "add_edge": AddEdge,
    "new_block": NewBlock,
    "layer_left": AddLayerLeft,
    "layer_right": AddLayerRight,
}


def parse_action(text: str) -> Action:
    """Inverse of ``str(action)``."""
    name, *args = text.split(":")
    try:
        cls = _ACTION_TYPES[name]
    except KeyError:
        raise ValueError(f"unknown action {text!r}") from None
    if cls in (NewBlock, AddLayerLeft, AddLayerRight):
        return cls(args[0], *(int(a) for a in args[1:]))
    return cls(*(int(a) for a in args))


# --------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class DagArchitecture:
    """A DAG whose node 0 is INPUT and node ``num_nodes - 1`` is OUTPUT.

    ``edges`` is a sorted tuple of ``(i, j)`` pairs with ``i < j``, so the
    graph is acyclic by construction.  ``node_ops`` holds the op codes of the
    intermediate nodes ``1 .. num_nodes - 2``.
    """

    num_nodes: int = 2
    edges: tuple[tuple[int, int], ...] = ()
    node_ops: tuple[int, ...] = ()
    terminal: bool = False
    _hash: int = field(init=False, repr=False, compare=False)
    _memo: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_memo", {})
        if len(self.node_ops) != self.num_nodes - 2:
            raise ValueError("node_ops must cover exactly the intermediate nodes")
        for i, j in self.edges:
            if not 0 <= i < j < self.num_nodes:
                raise ValueError(f"edge ({i}, {j}) is not forward within the graph")
        if list(self.edges) != sorted(set(self.edges)):
            raise ValueError("edges must be sorted and unique")
        object.__setattr__(self, "_hash", hash((self.num_nodes, self.edges, self.node_ops, self.terminal)))

    def __hash__(self):
        return self._hash

    @property
    def adjacency(self) -> list[list[bool]]:
        adj = [[False] * self.num_nodes for _ in range(self.num_nodes)]
        for i, j in self.edges:
            adj[i][j] = True
        return adj

    @property
    def output(self) -> int:
        return self.num_nodes - 1

    @classmethod
    def from_matrix(cls, matrix: Sequence[Sequence[int]], node_ops: Sequence[int], terminal=False):
        n = len(matrix)
        edges = tuple((i, j) for i in range(n) for j in range(n) if matrix[i][j])
        return cls(n, edges, tuple(node_ops), terminal)


@dataclass(frozen=True)
class Block:
    """One block of a cell; a layer code of 0 means the branch is empty."""

    left_input: int
    right_input: int
    left_layer: int = 0
    right_layer: int = 0

    def digits(self) -> tuple[int, ...]:
        return (self.left_layer, 0, self.right_layer, 0, self.left_input, self.right_input)


@dataclass(frozen=True)
class CellArchitecture:
    normal_cell: tuple[Block, ...] = ()
    reduction_cell: tuple[Block, ...] = ()
    terminal: bool = False
    _hash: int = field(init=False, repr=False, compare=False)
    _memo: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_memo", {})
        object.__setattr__(self, "_hash", hash((self.normal_cell, self.reduction_cell, self.terminal)))

    def __hash__(self):
        return self._hash

    def cell(self, name: str) -> tuple[Block, ...]:
        if name == "normal":
            return self.normal_cell
        if name == "reduction":
            return self.reduction_cell
        raise ValueError(f"unknown cell {name!r}")

    def with_cell(self, name: str, blocks: tuple[Block, ...]) -> "CellArchitecture":
        if name == "normal":
            return replace(self, normal_cell=blocks)
        return replace(self, reduction_cell=blocks)


State = Union[DagArchitecture, CellArchitecture]


@lru_cache(maxsize=64)
def root_state(limits: SpaceLimits) -> State:
    return DagArchitecture() if limits.domain == "dag" else CellArchitecture()


def state_depth(state: State) -> int:
    """Number of non-terminating actions taken to reach ``state`` from the root."""
    if isinstance(state, DagArchitecture):
        return state.num_nodes - 2 + len(state.edges)
    count = 0
    for blocks in (state.normal_cell, state.reduction_cell):
        for b in blocks:
            count += 1 + (b.left_layer > 0) + (b.right_layer > 0)
    return count


# --------------------------------------------------------------------------
# DAG helpers


def _reachable(num_nodes: int, edges, start: int, forward: bool) -> set[int]:
    nbrs: dict[int, list[int]] = {k: [] for k in range(num_nodes)}
    for i, j in edges:
        if forward:
            nbrs[i].append(j)
        else:
            nbrs[j].append(i)
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in nbrs[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def dangling_nodes(arch: DagArchitecture) -> list[int]:
    """Intermediate nodes that do not lie on any INPUT -> OUTPUT path."""
    fwd = _reachable(arch.num_nodes, arch.edges, 0, True)
    bwd = _reachable(arch.num_nodes, arch.edges, arch.output, False)
    return [k for k in range(1, arch.num_nodes - 1) if k not in fwd or k not in bwd]


def longest_path(arch: DagArchitecture) -> int:
    """Length in edges of the longest INPUT -> OUTPUT path (0 if none)."""
    best = [-1] * arch.num_nodes
    best[0] = 0
    for i, j in arch.edges:  # sorted by source, which is a topological order
        if best[i] >= 0:
            best[j] = max(best[j], best[i] + 1)
    return max(best[arch.output], 0)


def _block_depth(blocks: Sequence[Block], index: int) -> int:
    b = blocks[index]
    deps = [c - 2 for c in (b.left_input, b.right_input) if c >= 2]
    return 1 + max((_block_depth(blocks, d) for d in deps), default=0)


def _input_depth(blocks: Sequence[Block], code: int) -> int:
    return 0 if code < 2 else _block_depth(blocks, code - 2)


@lru_cache(maxsize=1 << 18)
def is_complete(state: State) -> bool:
    """Whether ``state`` describes a network that may be evaluated."""
    if isinstance(state, DagArchitecture):
        if state.output not in _reachable(state.num_nodes, state.edges, 0, True):
            return False
        return not dangling_nodes(state)
    return bool(state.normal_cell) and bool(state.reduction_cell)


# --------------------------------------------------------------------------
# actions


@lru_cache(maxsize=1 << 18)
def _dag_actions(state: DagArchitecture, limits: SpaceLimits) -> tuple:
    actions: list = [TERMINATE]
    if state.num_nodes < limits.max_nodes:
        actions.extend(AddNode(op) for op in range(1, limits.num_ops + 1))
    if len(state.edges) < limits.edge_cap:
        present = set(state.edges)
        n = state.num_nodes
        actions.extend(
            AddEdge(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in present
        )
    return tuple(actions)


@lru_cache(maxsize=1 << 18)
def _cell_actions(state: CellArchitecture, limits: SpaceLimits) -> tuple:
    actions: list = [TERMINATE]
    layers = range(1, limits.num_layers + 1)
    for name in CELLS:
        blocks = state.cell(name)
        if len(blocks) < limits.max_blocks:
            codes = range(len(blocks) + 2)
            for left, right in itertools.product(codes, codes):
                # a layerless (0, 0) block would encode like an absent block
                if left == 0 and right == 0:
                    continue
                depth = 1 + max(_input_depth(blocks, left), _input_depth(blocks, right))
                if depth <= limits.max_block_depth:
                    actions.append(NewBlock(name, left, right))
        for b, block in enumerate(blocks):
            if block.left_layer == 0:
                actions.extend(AddLayerLeft(name, b, code) for code in layers)
            if block.right_layer == 0:
                actions.extend(AddLayerRight(name, b, code) for code in layers)
    return tuple(actions)


def enumerate_actions(state: State, limits: SpaceLimits) -> tuple[Action, ...]:
    """Legal actions from ``state`` in canonical order, ``Terminate`` first.

    A terminal state has no actions.
    """
    if state.terminal:
        return ()
    if isinstance(state, DagArchitecture):
        return _dag_actions(state, limits)
    return _cell_actions(state, limits)


# Transition tables memoised on interned states; capped so that rollouts
# through huge spaces cannot pin unbounded memory.
MAX_MEMO_STATES = 1 << 21
_interned: dict = {}


def transitions(state: State, limits: SpaceLimits):
    """``(actions, successors)`` for ``state``; successors fill in lazily."""
    entry = state._memo.get(limits)
    if entry is None:
        entry = (enumerate_actions(state, limits), [None] * len(enumerate_actions(state, limits)))
        if len(_interned) < MAX_MEMO_STATES:
            state._memo[limits] = entry
    return entry


def successor(state: State, index: int, limits: SpaceLimits) -> State:
    """Successor under the ``index``-th legal action (no legality re-check)."""
    actions, succ = transitions(state, limits)
    nxt = succ[index]
    if nxt is None:
        nxt = _apply_unchecked(state, actions[index])
        if len(_interned) < MAX_MEMO_STATES:
            nxt = _interned.setdefault(nxt, nxt)
        succ[index] = nxt
    return nxt


@lru_cache(maxsize=1 << 16)
def _legal_set(state: State, limits: SpaceLimits) -> frozenset:
    return frozenset(enumerate_actions(state, limits))


def apply_action(state: State, action: Action, limits: SpaceLimits) -> State:
    """Return the successor of ``state`` under ``action``."""
    if action not in _legal_set(state, limits):
        raise IllegalAction(f"{action} is not legal here")
    return _apply_unchecked(state, action)


def _apply_unchecked(state: State, action: Action) -> State:
    if isinstance(action, Terminate):
        return replace(state, terminal=True)
    if isinstance(action, AddNode):
        # the new node takes OUTPUT's slot; edges into OUTPUT follow it
        out = state.output
        edges = tuple(sorted((i, j + 1 if j == out else j) for i, j in state.edges))
        return DagArchitecture(state.num_nodes + 1, edges, state.node_ops + (action.op,))
    if isinstance(action, AddEdge):
        edges = tuple(sorted(state.edges + ((action.i, action.j),)))
        return DagArchitecture(state.num_nodes, edges, state.node_ops)
    blocks = state.cell(action.cell)
    if isinstance(action, NewBlock):
        return state.with_cell(action.cell, blocks + (Block(action.left_input, action.right_input),))
    old = blocks[action.block]
    if isinstance(action, AddLayerLeft):
        new = replace(old, left_layer=action.layer)
    else:
        new = replace(old, right_layer=action.layer)
    return state.with_cell(action.cell, blocks[: action.block] + (new,) + blocks[action.block + 1 :])


# --------------------------------------------------------------------------
# encoding

Encoding = tuple[int, ...]


@lru_cache(maxsize=1 << 18)
def encode(state: State, limits: SpaceLimits) -> Encoding:
    """Fixed-length digit vector; the terminal flag is not encoded."""
    if isinstance(state, DagArchitecture):
        m = limits.max_nodes
        if state.num_nodes > m:
            raise InvalidEncoding(f"{state.num_nodes} nodes do not fit max_nodes={m}")
        digits = [0] * (m * m + m)
        for i, j in state.edges:
            digits[i * m + j] = 1
        ops = (limits.input_code,) + state.node_ops + (limits.output_code,)
        digits[m * m : m * m + len(ops)] = ops
        return tuple(digits)
    digits = []
    for name in CELLS:
        blocks = state.cell(name)
        if len(blocks) > limits.max_blocks:
            raise InvalidEncoding(f"{name} cell has more than {limits.max_blocks} blocks")
        for slot in range(limits.max_blocks):
            digits.extend(blocks[slot].digits() if slot < len(blocks) else (0,) * BLOCK_DIGITS)
    return tuple(digits)


def decode(digits: Sequence[int], limits: SpaceLimits) -> State:
    """Inverse of ``encode``; raises ``InvalidEncoding`` on malformed input."""
    digits = tuple(int(d) for d in digits)
    if len(digits) != limits.encoding_length:
        raise InvalidEncoding(f"expected {limits.encoding_length} digits, got {len(digits)}")
    if any(d < 0 for d in digits):
        raise InvalidEncoding("negative digit")
    if limits.domain == "dag":
        return _decode_dag(digits, limits)
    return _decode_cell(digits, limits)


def _decode_dag(digits: Encoding, limits: SpaceLimits) -> DagArchitecture:
    m = limits.max_nodes
    nodelist = digits[m * m :]
    n = 0
    while n < m and nodelist[n] != 0:
        n += 1
    if any(nodelist[n:]):
        raise InvalidEncoding("gap in node list")
    if n < 2 or nodelist[0] != limits.input_code or nodelist[n - 1] != limits.output_code:
        raise InvalidEncoding("node list must start with INPUT and end with OUTPUT")
    ops = nodelist[1 : n - 1]
    if any(not 1 <= op <= limits.num_ops for op in ops):
        raise InvalidEncoding("intermediate op code out of range")
    edges = []
    for i in range(m):
        for j in range(m):
            bit = digits[i * m + j]
            if bit == 0:
                continue
            if bit != 1 or not i < j < n:
                raise InvalidEncoding(f"bad adjacency digit at ({i}, {j})")
            edges.append((i, j))
    return DagArchitecture(n, tuple(edges), tuple(ops))


def _decode_cell(digits: Encoding, limits: SpaceLimits) -> CellArchitecture:
    cells = {}
    per_cell = limits.max_blocks * BLOCK_DIGITS
    for c, name in enumerate(CELLS):
        blocks: list[Block] = []
        ended = False
        for slot in range(limits.max_blocks):
            chunk = digits[c * per_cell + slot * BLOCK_DIGITS : c * per_cell + (slot + 1) * BLOCK_DIGITS]
            if not any(chunk):
                ended = True
                continue
            if ended:
                raise InvalidEncoding(f"{name} cell has a block after an absent slot")
            left, left2, right, right2, lin, rin = chunk
            if left2 or right2:
                raise InvalidEncoding("a branch holds at most one layer")
            if left > limits.num_layers or right > limits.num_layers:
                raise InvalidEncoding("layer code out of range")
            if lin >= slot + 2 or rin >= slot + 2:
                raise InvalidEncoding("block input references a later block")
            blocks.append(Block(lin, rin, left, right))
        cells[name] = tuple(blocks)
    return CellArchitecture(cells["normal"], cells["reduction"])


def encoding_text(digits: Sequence[int]) -> str:
    return "-".join(str(d) for d in digits)


def parse_encoding(text: str) -> Encoding:
    try:
        return tuple(int(tok) for tok in text.strip().split("-"))
    except ValueError:
        raise InvalidEncoding(f"not a hyphenated digit string: {text!r}") from None


def limits_for_encoding(length: int, num_ops: int | None = None) -> SpaceLimits:
    """Infer the domain limits from an encoding length (and op count for DAGs)."""
    if length == 2 * 5 * BLOCK_DIGITS:
        return SpaceLimits(domain="cell")
    m = 2
    while m * m + m < length:
        m += 1
    if m * m + m != length:
        raise InvalidEncoding(f"no domain has encodings of length {length}")
    return SpaceLimits(domain="dag", max_nodes=m, num_ops=num_ops or 3)


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Hamming distance between two encodings of equal length."""
    if len(a) != len(b):
        raise LengthMismatch(f"encodings of length {len(a)} and {len(b)}")
    return sum(x != y for x, y in zip(a, b))


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    kind: str  # "bounds" or "completeness"
    detail: str

    def __str__(self):
        return self.detail


def validate(state: State, limits: SpaceLimits) -> list[Violation]:
    """All rule violations of ``state``; an empty list means the state is fine."""
    out: list[Violation] = []
    if isinstance(state, DagArchitecture):
        if state.num_nodes > limits.max_nodes:
            out.append(Violation("bounds", f"node count {state.num_nodes} exceeds {limits.max_nodes}"))
        if limits.max_edges is not None and len(state.edges) > limits.max_edges:
            out.append(Violation("bounds", f"edge count {len(state.edges)} exceeds {limits.max_edges}"))
        for k, op in enumerate(state.node_ops, start=1):
            if not 1 <= op <= limits.num_ops:
                out.append(Violation("bounds", f"node {k} has op code {op} outside 1..{limits.num_ops}"))
        if state.output not in _reachable(state.num_nodes, state.edges, 0, True):
            out.append(Violation("completeness", "output not reachable from input"))
        for k in dangling_nodes(state):
            out.append(Violation("completeness", f"node {k} not on any input-output path"))
        return out
    for name in CELLS:
        blocks = state.cell(name)
        if len(blocks) > limits.max_blocks:
            out.append(Violation("bounds", f"{name} cell has {len(blocks)} blocks, max {limits.max_blocks}"))
        if not blocks:
            out.append(Violation("completeness", f"{name} cell has no blocks"))
        for b, block in enumerate(blocks):
            for code in (block.left_layer, block.right_layer):
                if not 0 <= code <= limits.num_layers:
                    out.append(Violation("bounds", f"{name} block {b} layer code {code} out of range"))
            for code in (block.left_input, block.right_input):
                if not 0 <= code < b + 2:
                    out.append(Violation("bounds", f"{name} block {b} input {code} is a forward reference"))
            if not any(block.digits()):
                out.append(Violation("bounds", f"{name} block {b} is indistinguishable from an absent block"))
        if not any(v.kind == "bounds" for v in out):
            for b in range(len(blocks)):
                if _block_depth(blocks, b) > limits.max_block_depth:
                    out.append(Violation("bounds", f"{name} block {b} exceeds depth {limits.max_block_depth}"))
    return out


# --------------------------------------------------------------------------
# enumeration


def estimate_space_size(limits: SpaceLimits) -> int:
    """Upper bound on the number of DAG states (complete or not)."""
    total = 0
    for n in range(2, limits.max_nodes + 1):
        total += 2 ** (n * (n - 1) // 2) * limits.num_ops ** (n - 2)
    return total


def enumerate_space(
    limits: SpaceLimits, cap: int = 1_000_000, dedup_isomorphic: bool = False
) -> Iterator[DagArchitecture]:
    """Yield every complete DAG within ``limits`` exactly once.

    Order: by node count, then edge bitmask over row-major pairs, then op
    tuple in lexicographic order.
    """
    if limits.domain != "dag":
        raise SpaceTooLarge("only the DAG domain can be enumerated")
    estimate = estimate_space_size(limits)
    if estimate > cap:
        raise SpaceTooLarge(f"about {estimate} states exceeds the cap of {cap}")
    seen: set[str] = set()
    for n in range(2, limits.max_nodes + 1):
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        for mask in range(1 << len(pairs)):
            edges = tuple(p for k, p in enumerate(pairs) if mask >> k & 1)
            if limits.max_edges is not None and len(edges) > limits.max_edges:
                continue
            skeleton = DagArchitecture(n, edges, (1,) * (n - 2))
            if not is_complete(skeleton):
                continue
            for ops in itertools.product(range(1, limits.num_ops + 1), repeat=n - 2):
                arch = DagArchitecture(n, edges, ops)
                if dedup_isomorphic:
                    key = graph_hash(arch)
                    if key in seen:
                        continue
                    seen.add(key)
                yield arch


def graph_hash(arch: DagArchitecture) -> str:
    """Isomorphism-invariant hash by iterated neighbourhood label hashing."""
    n = arch.num_nodes
    labels = [-1] + list(arch.node_ops) + [-2]
    ins = [[] for _ in range(n)]
    outs = [[] for _ in range(n)]
    for i, j in arch.edges:
        outs[i].append(j)
        ins[j].append(i)

    def md5(text):
        return hashlib.md5(text.encode("utf-8")).hexdigest()

    hashes = [md5(str((len(outs[v]), len(ins[v]), labels[v]))) for v in range(n)]
    for _ in range(n):
        hashes = [
            md5("".join(sorted(hashes[w] for w in ins[v])) + "|"
                + "".join(sorted(hashes[w] for w in outs[v])) + "|" + hashes[v])
            for v in range(n)
        ]
    return md5(str(sorted(hashes)))


def random_walk(limits: SpaceLimits, rng, max_steps: int | None = None) -> list[State]:
    """States visited by uniform-random actions from the root until Terminate."""
    state = root_state(limits)
    states = [state]
    steps = max_steps if max_steps is not None else limits.max_actions + 1
    for _ in range(steps):
        actions = enumerate_actions(state, limits)
        if not actions:
            break
        state = successor(state, int(rng.random() * len(actions)), limits)
        states.append(state)
    return states
