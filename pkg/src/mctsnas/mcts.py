"""Monte Carlo tree search over architecture design spaces.

Each iteration selects a path with UCB1, expands one node, runs ``k + 1``
random rollouts from it and immediately backpropagates the mean surrogate
prediction of rollouts ``1..k`` (the preemptive pass).  Rollout 0 is sent for
real evaluation; when its accuracy arrives, ``apply_result`` propagates the
difference between the hybrid reward and the preemptive estimate without
touching visit counts (the corrective pass).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .errors import AlreadyExpanded, EmptyPredictions, NoValidTerminal, UnknownOutcome
from .evaluators import find_transfer_parent, transfer_cost
from .space import (
    SpaceLimits,
    encode,
    encoding_text,
    enumerate_actions,
    is_complete,
    root_state,
    state_depth,
    successor,
    transitions,
)


@dataclass
class SearchConfig:
    c: float = 0.5
    k: int = 10
    max_tree_depth: int | None = None
    seed: int = 0
    meta_dnn_enabled: bool = True
    retry_budget: int = 16
    retrain_every: int = 1
    stall_limit: int = 20_000

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if self.k < 1 and self.meta_dnn_enabled:
            raise ValueError("k must be positive when the surrogate is enabled")
        if self.retry_budget < 1 or self.retrain_every < 1:
            raise ValueError("retry_budget and retrain_every must be positive")

    def depth_limit(self, limits: SpaceLimits) -> int:
        if self.max_tree_depth is not None:
            return self.max_tree_depth
        return limits.max_actions + 1

    @property
    def simulations(self) -> int:
        """Surrogate-scored rollouts per iteration."""
        return self.k if self.meta_dnn_enabled else 0


class Node:
    __slots__ = ("id", "parent", "action_index", "state", "encoding", "actions",
                 "children", "q_sum", "visits", "total")

    def __init__(self, node_id, parent, action_index, state, limits):
        self.id = node_id
        self.parent = parent
        self.action_index = action_index
        self.state = state
        self.encoding = encode(state, limits)
        self.actions = enumerate_actions(state, limits)
        self.children: dict[int, int] = {}
        self.q_sum = [0.0] * len(self.actions)
        self.visits = [0] * len(self.actions)
        self.total = 0  # N(s), kept equal to sum(visits)

    @property
    def terminal(self) -> bool:
        return self.state.terminal


class Tree:
    def __init__(self, limits: SpaceLimits, root=None):
        self.limits = limits
        self.nodes: list[Node] = []
        self.nodes.append(Node(0, None, None, root if root is not None else root_state(limits), limits))

    @property
    def root(self) -> Node:
        return self.nodes[0]

    def __len__(self):
        return len(self.nodes)

    def path_to_root(self, node_id: int) -> list[tuple[int, int]]:
        """(parent id, action index) pairs from ``node_id`` up to the root."""
        out = []
        node = self.nodes[node_id]
        while node.parent is not None:
            out.append((node.parent, node.action_index))
            node = self.nodes[node.parent]
        return out

    def dump(self) -> str:
        """One tab-separated line per node: id, parent, action, q_sum, visits, encoding.

        ``q_sum`` and ``visits`` are the statistics of the edge leading into
        the node; the root line carries N(root) and the sum of its Q values.
        """
        lines = []
        for node in self.nodes:
            if node.parent is None:
                parent, action = -1, "root"
                q, n = sum(node.q_sum), node.total
            else:
                p = self.nodes[node.parent]
                parent, action = p.id, str(p.actions[node.action_index])
                q, n = p.q_sum[node.action_index], p.visits[node.action_index]
            term = "T" if node.terminal else ""
            lines.append(f"{node.id}\t{parent}\t{action}\t{q!r}\t{n}\t{encoding_text(node.encoding)}{term}")
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# primitive operations


def ucb_score(q_sum: float, visits: int, parent_visits: int, c: float) -> float:
    """Mean reward plus ``2c * sqrt(2 ln N(s) / N(s, a))``; unvisited is +inf."""
    if visits == 0:
        return math.inf
    return q_sum / visits + 2.0 * c * math.sqrt(2.0 * math.log(parent_visits) / visits)


def best_action(node: Node, c: float) -> int:
    """Argmax of UCB1 over the node's actions, lowest index on ties."""
    best, best_score = 0, -math.inf
    parent_visits = node.total
    for a in range(len(node.actions)):
        n = node.visits[a]
        if n == 0:
            return a  # +inf, and earlier indices are finite
        score = node.q_sum[a] / n + 2.0 * c * math.sqrt(2.0 * math.log(parent_visits) / n)
        if score > best_score:
            best, best_score = a, score
    return best


def select(tree: Tree, c: float) -> list[tuple[int, int]]:
    """Descend from the root by UCB1.

    Returns the (node id, action index) pairs taken.  The walk stops at the
    first action without a child node, or on arriving at a terminal node.
    """
    path = []
    node = tree.root
    while not node.terminal and node.actions:
        a = best_action(node, c)
        path.append((node.id, a))
        child = node.children.get(a)
        if child is None:
            break
        node = tree.nodes[child]
    return path


def expand(tree: Tree, parent_id: int, action_index: int) -> Node:
    parent = tree.nodes[parent_id]
    if action_index in parent.children:
        raise AlreadyExpanded(f"node {parent_id} already has a child for action {action_index}")
    state = successor(parent.state, action_index, tree.limits)
    node = Node(len(tree.nodes), parent_id, action_index, state, tree.limits)
    tree.nodes.append(node)
    parent.children[action_index] = node.id
    return node


def simulate(state, limits: SpaceLimits, rng: random.Random, max_depth: int | None = None,
             retry_budget: int = 16):
    """Roll out uniformly random actions until a complete terminal state.

    Terminate is one of the uniform choices; at ``max_depth`` it is forced.
    Incomplete terminals are re-rolled up to ``retry_budget`` times.
    """
    max_depth = max_depth if max_depth is not None else limits.max_actions + 1
    if state.terminal:
        if is_complete(state):
            return encode(state, limits)
        raise NoValidTerminal("terminal state is incomplete")
    start_depth = state_depth(state)
    draw = rng.random
    for _ in range(retry_budget):
        current = state
        depth = start_depth
        # hot loop: reads the transition memo directly
        while not current.terminal:
            entry = current._memo.get(limits) or transitions(current, limits)
            index = 0 if depth >= max_depth - 1 else int(draw() * len(entry[0]))
            nxt = entry[1][index]
            current = nxt if nxt is not None else successor(current, index, limits)
            depth += 1
        if is_complete(current):
            return encode(current, limits)
    raise NoValidTerminal(f"no complete architecture after {retry_budget} rollouts")


def hybrid_q(true_acc: float, predictions) -> float:
    """Average of the trained accuracy and the mean predicted accuracy."""
    predictions = list(predictions)
    if not predictions:
        raise EmptyPredictions("need at least one prediction")
    return (true_acc + sum(predictions) / len(predictions)) / 2.0


def backpropagate(tree: Tree, node_id: int, q: float, n: int):
    """Add ``q`` to Q(s, a) and ``n`` to N(s, a) on every edge from ``node_id`` to the root."""
    node = tree.nodes[node_id]
    while node.parent is not None:
        parent = tree.nodes[node.parent]
        a = node.action_index
        parent.q_sum[a] += q
        parent.visits[a] += n
        parent.total += n
        node = parent


@dataclass
class SimulationOutcome:
    sampled_arch: tuple | None
    rollout_from: int
    predicted_mean: float
    true_accuracy: float | None = None
    predictions: list = field(default_factory=list)


def search_iteration(tree: Tree, predictor, cfg: SearchConfig, rng: random.Random) -> SimulationOutcome:
    """Select, expand, simulate and preemptively backpropagate once.

    ``predictor`` maps a list of encodings to predicted accuracies; it is
    ignored when the surrogate is disabled, in which case 0 is propagated.
    """
    limits = tree.limits
    path = select(tree, cfg.c)
    if path:
        parent_id, a = path[-1]
        child = tree.nodes[parent_id].children.get(a)
        node = tree.nodes[child] if child is not None else expand(tree, parent_id, a)
    else:
        node = tree.root
    depth = cfg.depth_limit(limits)
    try:
        sampled = simulate(node.state, limits, rng, depth, cfg.retry_budget)
    except NoValidTerminal:
        backpropagate(tree, node.id, 0.0, 1)
        return SimulationOutcome(None, node.id, 0.0)
    preds: list[float] = []
    if cfg.simulations and node.terminal:
        # rollouts from a terminal state all return the state itself
        preds = [float(predictor([sampled])[0])] * cfg.simulations
    elif cfg.simulations:
        sims = []
        for _ in range(cfg.simulations):
            try:
                sims.append(simulate(node.state, limits, rng, depth, cfg.retry_budget))
            except NoValidTerminal:
                sims.append(None)
        valid = [s for s in sims if s is not None]
        scored = iter(predictor(valid)) if valid else iter(())
        preds = [float(next(scored)) if s is not None else 0.0 for s in sims]
    q_hat = sum(preds) / len(preds) if preds else 0.0
    backpropagate(tree, node.id, q_hat, 1)
    return SimulationOutcome(sampled, node.id, q_hat, predictions=preds)


def corrective_delta(outcome: SimulationOutcome, true_acc: float, meta_dnn_enabled: bool) -> float:
    """Amount that turns the propagated estimate into the final reward."""
    if meta_dnn_enabled:
        return (true_acc - outcome.predicted_mean) / 2.0
    return true_acc - outcome.predicted_mean


def apply_result(tree: Tree, outcome: SimulationOutcome, true_acc: float, meta_dnn_enabled=True) -> float:
    """Corrective pass: propagate the delta with ``n = 0``; returns the delta."""
    if not 0.0 <= true_acc <= 1.0:
        raise ValueError(f"accuracy {true_acc} outside [0, 1]")
    delta = corrective_delta(outcome, true_acc, meta_dnn_enabled)
    backpropagate(tree, outcome.rollout_from, delta, 0)
    outcome.true_accuracy = true_acc
    return delta


# --------------------------------------------------------------------------
# the search engine


@dataclass
class Job:
    job_id: int
    encoding: tuple
    parent_encoding: tuple | None
    cost_epochs: int
    outcomes: list = field(default_factory=list)


@dataclass
class EvalEvent:
    index: int
    encoding: tuple
    accuracy: float
    cost_epochs: int


class MCTS:
    """Single owner of a search tree, its RNG, the surrogate and pending jobs.

    ``step`` runs one iteration and returns a ``Job`` when a never-seen
    architecture needs a true evaluation.  Results come back through
    ``apply_result`` in any order.
    """

    def __init__(self, limits: SpaceLimits, cfg: SearchConfig, surrogate=None):
        if cfg.meta_dnn_enabled and surrogate is None:
            raise ValueError("the surrogate is enabled but none was given")
        self.limits = limits
        self.cfg = cfg
        self.surrogate = surrogate if cfg.meta_dnn_enabled else None
        self.tree = Tree(limits)
        self.rng = random.Random(cfg.seed)
        self.evaluated: dict[tuple, float] = {}
        self.pending: dict[int, Job] = {}
        self.in_flight: dict[tuple, int] = {}
        self.events: list[EvalEvent] = []
        self.next_job_id = 1
        self.iterations = 0
        self.dispatched = 0
        self.since_new_job = 0
        self.results_since_retrain = 0

    def _predict(self, encodings):
        return self.surrogate.predict(encodings)

    def step(self) -> Job | None:
        outcome = search_iteration(self.tree, self._predict, self.cfg, self.rng)
        self.iterations += 1
        self.since_new_job += 1
        enc = outcome.sampled_arch
        if enc is None:
            return None
        if enc in self.evaluated:
            apply_result(self.tree, outcome, self.evaluated[enc], self.cfg.meta_dnn_enabled)
            return None
        if enc in self.in_flight:
            self.pending[self.in_flight[enc]].outcomes.append(outcome)
            return None
        parent = find_transfer_parent(self.tree, outcome.rollout_from, self.evaluated, target=enc)
        parent_enc = parent[0] if parent is not None else None
        job = Job(self.next_job_id, enc, parent_enc, transfer_cost(parent is not None), [outcome])
        self.next_job_id += 1
        self.pending[job.job_id] = job
        self.in_flight[enc] = job.job_id
        self.dispatched += 1
        self.since_new_job = 0
        return job

    def apply_result(self, job_id: int, accuracy: float) -> EvalEvent:
        job = self.pending.pop(job_id, None)
        if job is None:
            raise UnknownOutcome(f"no pending job {job_id}")
        del self.in_flight[job.encoding]
        for outcome in job.outcomes:
            apply_result(self.tree, outcome, accuracy, self.cfg.meta_dnn_enabled)
        self.evaluated[job.encoding] = accuracy
        event = EvalEvent(len(self.events) + 1, job.encoding, accuracy, job.cost_epochs)
        self.events.append(event)
        if self.surrogate is not None:
            self.surrogate.record(job.encoding, accuracy)
            self.results_since_retrain += 1
            if self.results_since_retrain >= self.cfg.retrain_every:
                self.surrogate.retrain()
                self.results_since_retrain = 0
        return event

    @property
    def stalled(self) -> bool:
        return self.since_new_job >= self.cfg.stall_limit

    def best(self) -> tuple[tuple | None, float]:
        if not self.events:
            return None, 0.0
        top = max(self.events, key=lambda e: e.accuracy)
        return top.encoding, top.accuracy


def run_sequential(engine: MCTS, evaluator, budget: int, target: float | None = None) -> MCTS:
    """Drive ``engine`` with immediate evaluation until budget, target or stall."""
    while engine.dispatched < budget and not engine.stalled:
        job = engine.step()
        if job is None:
            continue
        acc = evaluator.accuracy_of_encoding(job.encoding)
        engine.apply_result(job.job_id, acc)
        if target is not None and acc >= target:
            break
    return engine
