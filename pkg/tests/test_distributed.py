import json
import socket
import threading

import pytest

from mctsnas.distributed import (
    MAX_LINE,
    Master,
    decode_message,
    encode_message,
    engine_state,
    hello,
    job_assign,
    job_failure,
    job_result,
    master_loop,
    parse_endpoint,
    shutdown,
    snapshot_load,
    snapshot_restore,
    snapshot_save,
    snapshot_text,
    worker_loop,
)
from mctsnas.errors import CorruptSnapshot, NotInTable, ProtocolError, SnapshotError, VersionMismatch
from mctsnas.evaluators import SyntheticOracle, SyntheticOracleConfig, export_tabular, load_tabular
from mctsnas.mcts import MCTS, Job, SearchConfig, run_sequential
from mctsnas.space import SpaceLimits, encode, enumerate_space
from mctsnas.surrogate import Surrogate, TrainConfig

DAG4 = SpaceLimits(max_nodes=4, num_ops=3)
DAG5 = SpaceLimits(max_nodes=5, num_ops=3)


def oracle(limits):
    return SyntheticOracle(SyntheticOracleConfig(seed=7, limits=limits))


def engine(limits, seed, meta=True, c=0.5):
    sur = None
    if meta:
        sur = Surrogate(limits.encoding_length, limits.max_digit,
                        TrainConfig(epochs=5, learning_rate=1e-2), hidden=(16,), seed=seed)
    return MCTS(limits, SearchConfig(c=c, k=4, seed=seed, meta_dnn_enabled=meta), sur)


def drive(eng, iterations, evaluator):
    for _ in range(iterations):
        job = eng.step()
        if job is not None:
            eng.apply_result(job.job_id, evaluator.accuracy_of_encoding(job.encoding))


class TestProtocol:
    def test_round_trips(self):
        job = Job(3, (0, 1, 2), None, 70)
        for msg in (hello("w1"), job_assign(job), job_result(3, 0.5), job_failure(3, "missing"),
                    shutdown("budget")):
            assert decode_message(encode_message(msg)) == msg

    def test_one_line_each(self):
        data = encode_message(job_result(1, 0.25))
        assert data.endswith(b"\n") and data.count(b"\n") == 1

    @pytest.mark.parametrize("line", [
        b"not json\n",
        b"[1, 2]\n",
        b'{"type": "ping"}\n',
        b'{"type": "hello", "worker_id": "w", "protocol_version": 2}\n',
        b'{"type": "hello", "protocol_version": 1}\n',
        b'{"type": "job_result", "job_id": -1, "accuracy": 0.5}\n',
        b'{"type": "job_result", "job_id": 1, "accuracy": 1.5}\n',
        b'{"type": "job_result", "job_id": 1, "accuracy": null}\n',
        b'{"type": "job_assign", "job_id": 1}\n',
        b'{"type": "shutdown", "reason": "x", "extra": 1}\n',
        b"\xff\xfe\n",
    ])
    def test_rejects(self, line):
        with pytest.raises(ProtocolError):
            decode_message(line)

    def test_line_limit(self):
        with pytest.raises(ProtocolError):
            decode_message(b" " * (MAX_LINE + 1))
        with pytest.raises(ProtocolError):
            encode_message(shutdown("x" * MAX_LINE))

    def test_parse_endpoint(self):
        assert parse_endpoint("example.org:5000") == ("example.org", 5000)
        assert parse_endpoint(":7") == ("127.0.0.1", 7)
        with pytest.raises(ValueError):
            parse_endpoint("nohost")


class TestMaster:
    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("meta", [False, True])
    def test_sync_master_equals_sequential(self, seed, meta):
        orc = oracle(DAG4)
        seq = run_sequential(engine(DAG4, seed, meta), orc, budget=30)
        dist = engine(DAG4, seed, meta)
        report = master_loop(dist, 30, local_evaluator=orc, sync=True, timeout=60)
        assert report.reason in ("budget", "stalled")
        assert dist.tree.dump() == seq.tree.dump()
        assert [e.encoding for e in dist.events] == [e.encoding for e in seq.events]

    def test_async_workers_finish_budget(self):
        orc = oracle(DAG5)
        eng = engine(DAG5, 0, meta=False)
        report = master_loop(eng, 40, local_evaluator=orc, workers=3, timeout=60)
        assert len(report.events) == 40 and not eng.pending
        assert len({e.encoding for e in report.events}) == 40

    def test_target_stops_search(self):
        orc = oracle(DAG4)
        report = master_loop(engine(DAG4, 1, meta=False), 97, local_evaluator=orc, target=0.0, timeout=60)
        assert report.reason == "target"

    def test_dead_worker_job_is_requeued(self):
        orc = oracle(DAG5)
        eng = engine(DAG5, 2, meta=False)
        master = Master(eng, budget=5, workers=1, sync=True)
        host, port = master.listen()
        out = {}
        runner = threading.Thread(target=lambda: out.setdefault("report", master.run(timeout=60)))
        runner.start()
        # a worker that takes a job and dies without answering
        sock = socket.create_connection((host, port))
        sock.sendall(encode_message(hello("doomed")))
        lost = decode_message(sock.makefile("rb").readline())
        assert lost["type"] == "job_assign"
        sock.close()
        assert worker_loop(f"{host}:{port}", orc, worker_id="good") == 0
        runner.join(timeout=60)
        events = out["report"].events
        assert len(events) == 5
        assert events[0].encoding == tuple(lost["encoding"])

    def test_missing_table_entry_aborts(self, tmp_path):
        orc = oracle(DAG4)
        archs = list(enumerate_space(DAG4))[:5]
        path = tmp_path / "partial.csv"
        export_tabular([(encode(a, DAG4), orc.accuracy(a)) for a in archs], path)
        with pytest.raises(NotInTable):
            master_loop(engine(DAG4, 0, meta=False), 97, local_evaluator=load_tabular(path, num_ops=3), timeout=60)

    def test_worker_gives_up_without_master(self):
        with socket.create_server(("127.0.0.1", 0)) as probe:
            port = probe.getsockname()[1]
        assert worker_loop(f"127.0.0.1:{port}", oracle(DAG4), max_retries=2, backoff=0.01) == 1


class TestSnapshots:
    @pytest.mark.parametrize("meta", [False, True])
    def test_round_trip_state(self, tmp_path, meta):
        eng = engine(DAG5, 0, meta)
        drive(eng, 40, oracle(DAG5))
        eng.step()  # may leave a job pending
        snapshot_save(eng, tmp_path / "s.json")
        back = snapshot_restore(tmp_path / "s.json")
        assert engine_state(back) == engine_state(eng)

    @pytest.mark.parametrize("seed", range(3))
    def test_resume_equals_straight_run(self, tmp_path, seed):
        orc = oracle(DAG5)
        straight = engine(DAG5, seed)
        drive(straight, 100, orc)
        first = engine(DAG5, seed)
        drive(first, 50, orc)
        snapshot_save(first, tmp_path / "s.json")
        resumed = snapshot_restore(tmp_path / "s.json")
        drive(resumed, 50, orc)
        assert resumed.tree.dump() == straight.tree.dump()
        assert engine_state(resumed) == engine_state(straight)

    def test_version_mismatch(self, tmp_path):
        state = engine_state(engine(DAG4, 0, meta=False))
        state["format_version"] = 99
        (tmp_path / "s.json").write_text(snapshot_text(state))
        with pytest.raises(VersionMismatch):
            snapshot_restore(tmp_path / "s.json")

    def test_corrupt_checksum(self, tmp_path):
        path = tmp_path / "s.json"
        snapshot_save(engine(DAG4, 0, meta=False), path)
        text = path.read_text()
        path.write_text(text.replace('"iterations": 0', '"iterations": 1'))
        with pytest.raises(CorruptSnapshot):
            snapshot_load(path)

    def test_missing_checksum_and_file(self, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps({"format_version": 1}))
        with pytest.raises(CorruptSnapshot):
            snapshot_load(tmp_path / "s.json")
        with pytest.raises(SnapshotError):
            snapshot_load(tmp_path / "absent.json")

    def test_inconsistent_content(self, tmp_path):
        state = engine_state(engine(DAG4, 0, meta=False))
        del state["tree"]
        (tmp_path / "s.json").write_text(snapshot_text(state))
        with pytest.raises(CorruptSnapshot):
            snapshot_restore(tmp_path / "s.json")

    def test_no_temp_files_left(self, tmp_path):
        snapshot_save(engine(DAG4, 0, meta=False), tmp_path / "s.json")
        assert [p.name for p in tmp_path.iterdir()] == ["s.json"]
