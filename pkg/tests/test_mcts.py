import math
import random
from types import SimpleNamespace

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mctsnas.errors import AlreadyExpanded, EmptyPredictions, NoValidTerminal, UnknownOutcome
from mctsnas.evaluators import SyntheticOracle, SyntheticOracleConfig
from mctsnas.mcts import (
    MCTS,
    SearchConfig,
    SimulationOutcome,
    Tree,
    apply_result,
    backpropagate,
    best_action,
    corrective_delta,
    expand,
    hybrid_q,
    run_sequential,
    search_iteration,
    select,
    simulate,
    ucb_score,
)
from mctsnas.space import (
    AddEdge,
    DagArchitecture,
    SpaceLimits,
    Terminate,
    apply_action,
    decode,
    encoding_text,
    is_complete,
    root_state,
)
from mctsnas.surrogate import Surrogate, TrainConfig

DAG4 = SpaceLimits(max_nodes=4, num_ops=3)
DAG5 = SpaceLimits(max_nodes=5, num_ops=3)

mpmath.mp.dps = 50


def mp_ucb(q, n, parent, c):
    q, n, parent, c = (mpmath.mpf(x) for x in (q, n, parent, c))
    return q / n + 2 * c * mpmath.sqrt(2 * mpmath.log(parent) / n)


def stub_node(stats):
    """Just enough of a tree node for ``best_action``."""
    return SimpleNamespace(actions=[None] * len(stats), q_sum=[q for q, _ in stats],
                           visits=[n for _, n in stats], total=sum(n for _, n in stats))


def constant_predictor(value):
    return lambda encs: [value] * len(encs)


class TestUcb:
    def test_unvisited_is_infinite(self):
        assert ucb_score(0.7, 0, 5, 0.5) == math.inf

    def test_single_visit_at_root_count_one(self):
        assert ucb_score(0.0, 1, 1, 0.5) == 0.0

    def test_worked_example(self):
        # 0.3 + sqrt(2 ln 10 / 3) = 1.5389740629...; quoted elsewhere as 1.53898
        assert ucb_score(0.9, 3, 10, 0.5) == pytest.approx(1.5389740629499, abs=1e-12)
        assert ucb_score(0.9, 3, 10, 0.5) == pytest.approx(1.53898, abs=1e-5)
        assert ucb_score(0.9, 3, 10, 0.5) == pytest.approx(float(mp_ucb(0.9, 3, 10, 0.5)), rel=1e-14)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0, 1e3), st.integers(1, 10**6), st.integers(0, 10**6), st.floats(0, 200))
    def test_matches_high_precision(self, q, n, extra, c):
        parent = n + extra
        want = mp_ucb(q, n, parent, c)
        got = ucb_score(q, n, parent, c)
        assert abs(got - float(want)) <= 1e-12 * max(1.0, abs(float(want)))


class TestSelect:
    def test_fresh_root_picks_first_action(self):
        tree = Tree(DAG5)
        assert select(tree, 0.5) == [(0, 0)]

    def test_exploration_picks_b(self):
        node = stub_node([(0.9, 3), (0.2, 1)])
        assert ucb_score(0.9, 3, 4, 0.5) == pytest.approx(1.262, abs=1e-3)
        assert ucb_score(0.2, 1, 4, 0.5) == pytest.approx(1.865, abs=1e-3)
        assert best_action(node, 0.5) == 1

    def test_greedy_picks_a(self):
        assert best_action(stub_node([(0.9, 3), (0.2, 1)]), 0.0) == 0

    def test_tie_goes_to_lowest_index(self):
        assert best_action(stub_node([(0.5, 1), (0.5, 1), (0.5, 1)]), 0.3) == 0
        assert best_action(stub_node([(0.9, 2), (0.0, 0), (0.0, 0)]), 0.3) == 1

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(1, 50)), min_size=1, max_size=8))
    def test_greedy_is_argmax_of_mean(self, arms):
        stats = [(m * n, n) for m, n in arms]
        means = [q / n for q, n in stats]
        assert best_action(stub_node(stats), 0.0) == means.index(max(means))

    def test_stops_on_terminal(self):
        tree = Tree(DAG5)
        term = expand(tree, 0, 0)  # Terminate from the root
        assert term.terminal and term.actions == ()
        tree.root.visits = [5, 1, 1, 1, 1]
        tree.root.q_sum = [5.0, 0, 0, 0, 0]
        tree.root.total = 9
        assert select(tree, 0.0) == [(0, 0)]


class TestExpand:
    def test_zero_stats(self):
        tree = Tree(DAG5)
        node = expand(tree, 0, 4)
        assert node.state == apply_action(root_state(DAG5), AddEdge(0, 1), DAG5)
        assert all(v == 0 for v in node.visits) and all(q == 0 for q in node.q_sum)
        assert tree.root.children == {4: node.id}

    def test_twice_raises(self):
        tree = Tree(DAG5)
        expand(tree, 0, 1)
        with pytest.raises(AlreadyExpanded):
            expand(tree, 0, 1)


class TestSimulate:
    def test_golden_rollout(self):
        enc = simulate(root_state(DAG5), DAG5, random.Random(42))
        assert encoding_text(enc) == "0-1-1-1-1-0-0-1-1-1-0-0-0-1-1-0-0-0-0-1-0-0-0-0-0-4-2-3-2-5"

    def test_terminal_returns_itself(self):
        s = apply_action(DagArchitecture(2, ((0, 1),)), Terminate(), DAG5)
        assert decode(simulate(s, DAG5, random.Random(0)), DAG5) == DagArchitecture(2, ((0, 1),))

    def test_incomplete_terminal(self):
        s = apply_action(root_state(DAG5), Terminate(), DAG5)
        with pytest.raises(NoValidTerminal):
            simulate(s, DAG5, random.Random(0))

    def test_only_terminate_left(self):
        lim = SpaceLimits(max_nodes=2, num_ops=1)
        s = DagArchitecture(2, ((0, 1),))
        enc = simulate(s, lim, random.Random(3))
        assert decode(enc, lim) == s

    def test_depth_cap_forces_terminate(self):
        # from the empty root a single step must terminate, which is never complete
        with pytest.raises(NoValidTerminal):
            simulate(root_state(DAG5), DAG5, random.Random(0), max_depth=1, retry_budget=4)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_results_are_complete(self, seed):
        try:
            enc = simulate(root_state(DAG5), DAG5, random.Random(seed))
        except NoValidTerminal:
            return
        assert is_complete(decode(enc, DAG5))


class TestRewards:
    def test_hybrid_examples(self):
        assert hybrid_q(0.9, [0.8]) == pytest.approx(0.85)
        assert hybrid_q(0.93, [0.91, 0.89, 0.90]) == pytest.approx(0.915)
        with pytest.raises(EmptyPredictions):
            hybrid_q(0.5, [])

    @settings(max_examples=100)
    @given(st.floats(0, 1), st.integers(1, 20))
    def test_hybrid_fixed_point(self, x, k):
        assert hybrid_q(x, [x] * k) == pytest.approx(x, abs=1e-15)

    def test_corrective_examples(self):
        o = SimulationOutcome((), 0, 0.8)
        assert corrective_delta(o, 0.9, True) == pytest.approx(0.05)
        assert corrective_delta(SimulationOutcome((), 0, 0.6), 0.4, True) == pytest.approx(-0.1)
        assert corrective_delta(SimulationOutcome((), 0, 0.0), 0.7, False) == 0.7

    def test_preemptive_plus_corrective_equals_sequential(self):
        tree = Tree(DAG5)
        a = expand(tree, 0, 4)
        b = expand(tree, a.id, 1)
        backpropagate(tree, b.id, 0.8, 1)
        apply_result(tree, SimulationOutcome((), b.id, 0.8), 0.9)
        assert tree.root.q_sum[4] == pytest.approx(0.85)
        assert tree.root.visits[4] == 1
        assert a.q_sum[1] == pytest.approx(0.85) and a.visits[1] == 1

    def test_backprop_zero_is_noop(self):
        tree = Tree(DAG5)
        node = expand(tree, 0, 2)
        backpropagate(tree, node.id, 0.0, 0)
        assert tree.root.visits == [0] * 5 and tree.root.q_sum == [0.0] * 5

    def test_apply_result_rejects_bad_accuracy(self):
        tree = Tree(DAG5)
        with pytest.raises(ValueError):
            apply_result(tree, SimulationOutcome((), 0, 0.5), 1.5)


class TestIteration:
    def test_constant_predictions_propagated(self):
        tree = Tree(DAG5)
        cfg = SearchConfig(k=10, seed=0)
        rng = random.Random(0)
        for _ in range(6):
            o = search_iteration(tree, constant_predictor(0.7), cfg, rng)
            if o.sampled_arch is not None:
                assert o.predicted_mean == pytest.approx(0.7)

    def test_no_meta_propagates_zero(self):
        tree = Tree(DAG5)
        cfg = SearchConfig(meta_dnn_enabled=False)
        o = search_iteration(tree, None, cfg, random.Random(0))
        assert o.predicted_mean == 0.0 and tree.root.total == 1
        assert sum(tree.root.q_sum) == 0.0

    def test_identical_seeds_identical_trees(self):
        dumps = []
        for _ in range(2):
            tree = Tree(DAG5)
            rng = random.Random(11)
            cfg = SearchConfig(seed=11)
            for _ in range(30):
                o = search_iteration(tree, constant_predictor(0.6), cfg, rng)
                if o.sampled_arch is not None:
                    apply_result(tree, o, 0.75)
            dumps.append(tree.dump())
        assert dumps[0] == dumps[1]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SearchConfig(c=-1)
        with pytest.raises(ValueError):
            SearchConfig(k=0)
        SearchConfig(k=0, meta_dnn_enabled=False)


def _oracle(limits):
    return SyntheticOracle(SyntheticOracleConfig(seed=3, limits=limits))


def _check_tree(tree):
    for node in tree.nodes:
        assert node.total == sum(node.visits)
        assert all(v >= 0 for v in node.visits)
        if node.parent is not None:
            parent = tree.nodes[node.parent]
            assert parent.total >= node.total
            assert parent.visits[node.action_index] >= node.total


class TestEngine:
    def test_dedup_and_unique_samples(self):
        orc = _oracle(DAG4)
        eng = run_sequential(MCTS(DAG4, SearchConfig(meta_dnn_enabled=False, seed=1)), orc, budget=40)
        encs = [e.encoding for e in eng.events]
        assert len(encs) == len(set(encs)) == 40
        assert eng.iterations >= 40

    def test_in_flight_resample_attaches_to_job(self):
        eng = MCTS(DAG4, SearchConfig(meta_dnn_enabled=False, seed=0))
        jobs, attached = [], 0
        while len(jobs) < 3 or not attached:
            before = {j: len(p.outcomes) for j, p in eng.pending.items()}
            job = eng.step()
            if job is not None:
                jobs.append(job)
            elif any(len(eng.pending[j].outcomes) > n for j, n in before.items()):
                attached += 1
            assert eng.iterations < 500
        orc = _oracle(DAG4)
        for job in jobs:
            eng.apply_result(job.job_id, orc.accuracy_of_encoding(job.encoding))
        assert not eng.pending and not eng.in_flight
        assert eng.tree.root.total == eng.iterations
        _check_tree(eng.tree)

    def test_unknown_job(self):
        eng = MCTS(DAG4, SearchConfig(meta_dnn_enabled=False))
        with pytest.raises(UnknownOutcome):
            eng.apply_result(99, 0.5)

    def test_surrogate_required(self):
        with pytest.raises(ValueError):
            MCTS(DAG4, SearchConfig())

    def test_surrogate_training_buffer(self):
        sur = Surrogate(DAG4.encoding_length, DAG4.max_digit, TrainConfig(epochs=2, learning_rate=1e-2),
                        hidden=(8,), seed=0)
        eng = MCTS(DAG4, SearchConfig(k=3, seed=0, retrain_every=2), sur)
        run_sequential(eng, _oracle(DAG4), budget=6)
        assert len(sur.buffer_x) == 6
        assert [tuple(x) for x in sur.buffer_x] == [e.encoding for e in eng.events]

    def test_stall_limit(self):
        lim = SpaceLimits(max_nodes=3, num_ops=1)  # three complete DAGs
        eng = MCTS(lim, SearchConfig(meta_dnn_enabled=False, stall_limit=50))
        run_sequential(eng, _oracle(lim), budget=10)
        assert len(eng.events) == 3 and eng.stalled

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from([0.1, 0.5, 2.0]))
    def test_invariants_after_every_iteration(self, seed, c):
        orc = _oracle(DAG4)
        eng = MCTS(DAG4, SearchConfig(c=c, meta_dnn_enabled=False, seed=seed))
        for i in range(50):
            job = eng.step()
            if job is not None:
                eng.apply_result(job.job_id, orc.accuracy_of_encoding(job.encoding))
            assert eng.tree.root.total == i + 1
            _check_tree(eng.tree)
            for node in eng.tree.nodes:
                for q, n in zip(node.q_sum, node.visits):
                    if n:
                        assert -1e-12 <= q / n <= 1 + 1e-12


def test_dump_format():
    tree = Tree(DAG5)
    expand(tree, 0, 4)
    lines = tree.dump().splitlines()
    assert lines[0].split("\t")[:3] == ["0", "-1", "root"]
    assert lines[1].split("\t")[:3] == ["1", "0", "add_edge:0:1"]
