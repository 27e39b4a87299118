"""Reference search algorithms sharing the space and evaluator contracts.

Every algorithm counts its budget in unique evaluated architectures and
returns a ``TrialTrace``.  All randomness flows from one ``random.Random``
seeded by ``cfg.seed``.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, replace

from .errors import NoValidTerminal, SpaceTooLarge
from .mcts import simulate
from .space import (
    CELLS,
    AddNode,
    Block,
    CellArchitecture,
    DagArchitecture,
    SpaceLimits,
    _apply_unchecked,
    decode,
    encode,
    enumerate_actions,
    estimate_space_size,
    is_complete,
    root_state,
    state_depth,
    successor,
    transitions,
    validate,
)
from .trace import BudgetedEvaluator, TrialTrace

ALGORITHMS = ("rs", "re", "hc", "ql")


@dataclass(frozen=True)
class BaselineConfig:
    algorithm: str = "rs"
    seed: int = 0
    budget: int = 1000
    target: float | None = None
    tolerance: float = 0.0
    # regularized evolution
    population_size: int = 500
    tournament_size: int = 50
    mutation_retries: int = 100
    # Q-learning
    epsilon: float = 0.2
    alpha: float = 0.2
    gamma: float = 1.0
    q_init: float = 0.5
    space_cap: int = 1_000_000
    # hill climbing
    restart_on_revisit: bool = True
    # give up after this many steps (rollouts, episodes, children, restarts)
    # without a new evaluation
    stall_limit: int = 20000

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament size must lie in [1, population size]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


def _start(cfg: BaselineConfig, limits: SpaceLimits, evaluator, name: str):
    trace = TrialTrace(name, cfg.seed, target=cfg.target, tolerance=cfg.tolerance)
    return trace, BudgetedEvaluator(evaluator, limits, trace, cfg.budget)


def _sample_complete(limits: SpaceLimits, rng: random.Random):
    """A random complete architecture drawn with the MCTS rollout rule."""
    while True:
        try:
            enc = simulate(root_state(limits), limits, rng)
        except NoValidTerminal:
            continue
        return replace(decode(enc, limits), terminal=False)


# --------------------------------------------------------------------------
# random search


def random_search(limits: SpaceLimits, evaluator, cfg: BaselineConfig) -> TrialTrace:
    """Uniform-random rollouts from the root until the budget of unique evaluations."""
    rng = random.Random(cfg.seed)
    trace, ev = _start(cfg, limits, evaluator, "rs")
    idle = 0
    while not ev.done and idle < cfg.stall_limit:
        try:
            enc = simulate(root_state(limits), limits, rng)
        except NoValidTerminal:
            idle += 1
            continue
        _, new = ev.by_encoding(enc)
        idle = 0 if new else idle + 1
    return trace


# --------------------------------------------------------------------------
# edits shared by evolution and hill climbing


def remove_node(arch: DagArchitecture, k: int) -> DagArchitecture:
    """Drop intermediate node ``k`` with its edges and renumber the rest."""
    if not 0 < k < arch.output:
        raise ValueError(f"node {k} is not an intermediate node")
    edges = tuple(sorted(
        (i - (i > k), j - (j > k)) for i, j in arch.edges if k not in (i, j)
    ))
    ops = arch.node_ops[: k - 1] + arch.node_ops[k:]
    return DagArchitecture(arch.num_nodes - 1, edges, ops)


def _valid(state, limits: SpaceLimits) -> bool:
    return is_complete(state) and not validate(state, limits)


def _decrements(state, limits: SpaceLimits) -> list:
    out = []
    if isinstance(state, DagArchitecture):
        for e in state.edges:
            out.append(DagArchitecture(state.num_nodes, tuple(x for x in state.edges if x != e),
                                       state.node_ops))
        out.extend(remove_node(state, k) for k in range(1, state.output))
        return out
    for name in CELLS:
        blocks = state.cell(name)
        if blocks:
            out.append(state.with_cell(name, blocks[:-1]))
        for b, block in enumerate(blocks):
            for side in ("left_layer", "right_layer"):
                if getattr(block, side):
                    new = replace(block, **{side: 0})
                    out.append(state.with_cell(name, blocks[:b] + (new,) + blocks[b + 1:]))
    return out


def neighbors(state, limits: SpaceLimits) -> list:
    """Complete architectures one edit away from ``state``.

    Edits are every legal non-Terminate action plus the reverse edits that
    remove an edge, node, block or layer.  Order is deterministic.
    """
    state = replace(state, terminal=False)
    own = encode(state, limits)
    seen = {own}
    out = []
    grown = [_apply_unchecked(state, a) for a in enumerate_actions(state, limits)[1:]]
    for cand in grown + _decrements(state, limits):
        if not _valid(cand, limits):
            continue
        enc = encode(cand, limits)
        if enc not in seen:
            seen.add(enc)
            out.append(cand)
    return out


def _dag_mutation(arch: DagArchitecture, limits: SpaceLimits, rng: random.Random):
    kinds = ["flip"]
    if arch.node_ops and limits.num_ops > 1:
        kinds.append("op")
    if arch.num_nodes < limits.max_nodes:
        kinds.append("add")
    removable = [k for k in range(1, arch.output) if is_complete(remove_node(arch, k))]
    if removable:
        kinds.append("remove")
    kind = rng.choice(kinds)
    n = arch.num_nodes
    if kind == "flip":
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        e = rng.choice(pairs)
        edges = set(arch.edges) ^ {e}
        return DagArchitecture(n, tuple(sorted(edges)), arch.node_ops)
    if kind == "op":
        k = rng.randrange(len(arch.node_ops))
        op = rng.choice([o for o in range(1, limits.num_ops + 1) if o != arch.node_ops[k]])
        return DagArchitecture(n, arch.edges, arch.node_ops[:k] + (op,) + arch.node_ops[k + 1:])
    if kind == "add":
        # new node slots in before OUTPUT, fed by a random node, feeding OUTPUT
        grown = _apply_unchecked(arch, AddNode(rng.randint(1, limits.num_ops)))
        src = rng.randrange(n - 1)
        edges = set(grown.edges) | {(src, n - 1), (n - 1, n)}
        return DagArchitecture(n + 1, tuple(sorted(edges)), grown.node_ops)
    return remove_node(arch, rng.choice(removable))


def _cell_mutation(arch: CellArchitecture, limits: SpaceLimits, rng: random.Random):
    name = rng.choice(CELLS)
    blocks = arch.cell(name)
    kinds = []
    if blocks:
        kinds += ["layer", "input"]
    if len(blocks) < limits.max_blocks:
        kinds.append("add")
    if len(blocks) > 1:
        kinds.append("remove")
    kind = rng.choice(kinds)
    if kind == "add":
        n = len(blocks) + 2
        new = Block(rng.randrange(n), rng.randrange(n),
                    rng.randint(0, limits.num_layers), rng.randint(0, limits.num_layers))
        return arch.with_cell(name, blocks + (new,))
    if kind == "remove":
        return arch.with_cell(name, blocks[:-1])
    b = rng.randrange(len(blocks))
    block = blocks[b]
    if kind == "layer":
        side = rng.choice(("left_layer", "right_layer"))
        new = replace(block, **{side: rng.randint(0, limits.num_layers)})
    else:
        side = rng.choice(("left_input", "right_input"))
        new = replace(block, **{side: rng.randrange(b + 2)})
    return arch.with_cell(name, blocks[:b] + (new,) + blocks[b + 1:])


def mutate(arch, limits: SpaceLimits, rng: random.Random, retries: int = 100):
    """One random edit of ``arch``, resampled until the child is complete and valid.

    After ``retries`` failed draws the parent itself is returned.
    """
    edit = _dag_mutation if isinstance(arch, DagArchitecture) else _cell_mutation
    own = encode(arch, limits)
    for _ in range(retries):
        child = edit(arch, limits, rng)
        if _valid(child, limits) and encode(child, limits) != own:
            return child
    return arch


# --------------------------------------------------------------------------
# regularized evolution


def regularized_evolution(limits: SpaceLimits, evaluator, cfg: BaselineConfig) -> TrialTrace:
    """Aging evolution: mutate the tournament's best, retire the oldest."""
    rng = random.Random(cfg.seed)
    trace, ev = _start(cfg, limits, evaluator, "re")
    population: deque = deque()
    # four population turnovers without a new architecture means convergence
    patience = min(cfg.stall_limit, 4 * cfg.population_size)
    idle = 0
    while len(population) < cfg.population_size and not ev.done and idle < patience:
        arch = _sample_complete(limits, rng)
        acc, new = ev(arch)
        population.append((arch, acc))
        idle = 0 if new else idle + 1
    while not ev.done and idle < patience:
        size = min(cfg.tournament_size, len(population))
        contenders = sorted(rng.sample(range(len(population)), size))
        # ties go to the oldest contender
        parent = max(contenders, key=lambda i: population[i][1])
        child = mutate(population[parent][0], limits, rng, cfg.mutation_retries)
        acc, new = ev(child)
        population.append((child, acc))
        if len(population) > cfg.population_size:
            population.popleft()
        idle = 0 if new else idle + 1
    return trace


# --------------------------------------------------------------------------
# hill climbing


def hill_climb(limits: SpaceLimits, evaluator, cfg: BaselineConfig) -> TrialTrace:
    """Steepest ascent over one-edit neighbourhoods with random restarts.

    A climb ends when its best neighbour is not an improvement (moving there
    would lead straight back, a revisit) or is already on the trajectory.
    Without ``restart_on_revisit`` the trial ends with the first climb.
    """
    rng = random.Random(cfg.seed)
    trace, ev = _start(cfg, limits, evaluator, "hc")
    idle = 0
    while not ev.done and idle < cfg.stall_limit:
        before = len(ev.cache)
        current = _sample_complete(limits, rng)
        acc, _ = ev(current)
        visited = {encode(current, limits)}
        while not ev.done:
            best, best_acc = None, acc
            for cand in neighbors(current, limits):
                cand_acc, _ = ev(cand)
                if cand_acc > best_acc:
                    best, best_acc = cand, cand_acc
                if ev.done:
                    break
            if best is None or encode(best, limits) in visited:
                break
            current, acc = best, best_acc
            visited.add(encode(current, limits))
        if not cfg.restart_on_revisit:
            break
        idle = 0 if len(ev.cache) > before else idle + 1
    return trace


# --------------------------------------------------------------------------
# tabular Q-learning


class QTable:
    """Lazily initialised action values keyed by ``(state, action index)``."""

    def __init__(self, q_init: float):
        self.q_init = q_init
        self.values: dict = {}

    def get(self, state, a: int) -> float:
        return self.values.get((state, a), self.q_init)

    def row(self, state, n: int) -> list[float]:
        return [self.get(state, a) for a in range(n)]

    def best_value(self, state, n: int) -> float:
        return max(self.row(state, n)) if n else 0.0


def q_learning(limits: SpaceLimits, evaluator, cfg: BaselineConfig,
               table: QTable | None = None) -> TrialTrace:
    """Epsilon-greedy episodes with one-step Q updates.

    The reward is the accuracy of a complete terminal architecture, 0 for an
    incomplete one and 0 for every intermediate step.
    """
    if limits.domain != "dag" or estimate_space_size(limits) > cfg.space_cap:
        raise SpaceTooLarge("the space is too large for a Q table")
    rng = random.Random(cfg.seed)
    trace, ev = _start(cfg, limits, evaluator, "ql")
    q = table if table is not None else QTable(cfg.q_init)
    max_depth = limits.max_actions + 1
    idle = 0
    while not ev.done and idle < cfg.stall_limit:
        state = root_state(limits)
        depth = state_depth(state)
        new = False
        while not state.terminal:
            n = len(transitions(state, limits)[0])
            if depth >= max_depth - 1:
                a = 0
            elif rng.random() < cfg.epsilon:
                a = int(rng.random() * n)
            else:
                row = q.row(state, n)
                top = max(row)
                ties = [i for i, v in enumerate(row) if v == top]
                a = ties[int(rng.random() * len(ties))]
            nxt = successor(state, a, limits)
            if nxt.terminal:
                reward = 0.0
                if is_complete(nxt):
                    reward, new = ev.by_encoding(encode(nxt, limits))
                target = reward
            else:
                target = cfg.gamma * q.best_value(nxt, len(transitions(nxt, limits)[0]))
            old = q.get(state, a)
            q.values[(state, a)] = old + cfg.alpha * (target - old)
            state, depth = nxt, depth + 1
        idle = 0 if new else idle + 1
    return trace


def run_baseline(limits: SpaceLimits, evaluator, cfg: BaselineConfig) -> TrialTrace:
    runner = {
        "rs": random_search,
        "re": regularized_evolution,
        "hc": hill_climb,
        "ql": q_learning,
    }[cfg.algorithm]
    return runner(limits, evaluator, cfg)
