"""Master/worker search over newline-delimited JSON on TCP, plus snapshots.

The master is the only owner of the tree, surrogate and RNG.  Connection
threads only parse lines and post them to one event queue; every mutation
of search state happens on the thread running ``Master.run``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import queue
import random
import socket
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import CorruptSnapshot, NotInTable, ProtocolError, SnapshotError, VersionMismatch
from .mcts import MCTS, EvalEvent, Job, SearchConfig, SimulationOutcome, Node
from .space import SpaceLimits, successor
from .surrogate import Surrogate, TrainConfig

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
MAX_LINE = 1 << 20
MESSAGE_TYPES = ("hello", "job_assign", "job_result", "shutdown")
FIELDS = ("type", "worker_id", "protocol_version", "job_id", "encoding",
          "parent_encoding", "accuracy", "reason")


# --------------------------------------------------------------------------
# wire protocol


def hello(worker_id: str) -> dict:
    return {"type": "hello", "worker_id": worker_id, "protocol_version": PROTOCOL_VERSION}


def job_assign(job: Job) -> dict:
    return {"type": "job_assign", "job_id": job.job_id, "encoding": list(job.encoding),
            "parent_encoding": list(job.parent_encoding) if job.parent_encoding is not None else None}


def job_result(job_id: int, accuracy: float) -> dict:
    return {"type": "job_result", "job_id": job_id, "accuracy": accuracy}


def job_failure(job_id: int, reason: str) -> dict:
    """A result that carries an error instead of an accuracy."""
    return {"type": "job_result", "job_id": job_id, "accuracy": None, "reason": reason}


def shutdown(reason: str) -> dict:
    return {"type": "shutdown", "reason": reason}


def encode_message(msg: dict) -> bytes:
    data = (json.dumps(msg, separators=(",", ":"), sort_keys=True) + "\n").encode("utf-8")
    if len(data) > MAX_LINE:
        raise ProtocolError(f"message of {len(data)} bytes exceeds the line limit")
    return data


def decode_message(line: bytes) -> dict:
    """Parse and check one line; raises ``ProtocolError`` on anything malformed."""
    if len(line) > MAX_LINE:
        raise ProtocolError("line exceeds 1 MiB")
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"not a JSON line: {exc}") from None
    if not isinstance(msg, dict) or msg.get("type") not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message {msg!r:.80}")
    extra = set(msg) - set(FIELDS)
    if extra:
        raise ProtocolError(f"unexpected fields {sorted(extra)}")
    kind = msg["type"]
    if kind == "hello":
        if msg.get("protocol_version") != PROTOCOL_VERSION:
            raise ProtocolError(f"protocol version {msg.get('protocol_version')} is not {PROTOCOL_VERSION}")
        if not isinstance(msg.get("worker_id"), str):
            raise ProtocolError("hello needs a worker_id string")
    elif kind in ("job_assign", "job_result"):
        if not isinstance(msg.get("job_id"), int) or msg["job_id"] < 0:
            raise ProtocolError("job_id must be a nonnegative integer")
        if kind == "job_assign" and not isinstance(msg.get("encoding"), list):
            raise ProtocolError("job_assign needs an encoding list")
        if kind == "job_result":
            acc = msg.get("accuracy")
            if acc is None:
                if not isinstance(msg.get("reason"), str):
                    raise ProtocolError("a failed result needs a reason")
            elif not isinstance(acc, (int, float)) or not 0.0 <= acc <= 1.0:
                raise ProtocolError(f"accuracy {acc!r} outside [0, 1]")
    return msg


class LineChannel:
    """Buffered line reader and locked writer over one socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.reader = sock.makefile("rb")
        self.lock = threading.Lock()

    def send(self, msg: dict):
        data = encode_message(msg)
        with self.lock:
            self.sock.sendall(data)

    def receive(self) -> dict | None:
        """Next message, or ``None`` once the peer has closed."""
        line = self.reader.readline(MAX_LINE + 1)
        if not line:
            return None
        if not line.endswith(b"\n") and len(line) > MAX_LINE:
            raise ProtocolError("line exceeds 1 MiB")
        return decode_message(line)

    def close(self):
        for f in (self.reader.close, lambda: self.sock.shutdown(socket.SHUT_RDWR), self.sock.close):
            try:
                f()
            except OSError:
                pass


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint {text!r} is not host:port")
    return host or "127.0.0.1", int(port)


# --------------------------------------------------------------------------
# snapshots

SNAPSHOT_VERSION = 1


def _outcome_state(o: SimulationOutcome) -> dict:
    return {"sampled_arch": list(o.sampled_arch) if o.sampled_arch is not None else None,
            "rollout_from": o.rollout_from, "predicted_mean": o.predicted_mean,
            "true_accuracy": o.true_accuracy, "predictions": list(o.predictions)}


def _outcome_from(d: dict) -> SimulationOutcome:
    arch = tuple(d["sampled_arch"]) if d["sampled_arch"] is not None else None
    return SimulationOutcome(arch, d["rollout_from"], d["predicted_mean"], d["true_accuracy"],
                             list(d["predictions"]))


def _limits_state(limits: SpaceLimits) -> dict:
    return {k: v for k, v in asdict(limits).items() if not k.startswith("_")}


def engine_state(engine: MCTS) -> dict:
    """Everything needed to continue ``engine`` exactly where it stands."""
    version, internal, gauss = engine.rng.getstate()
    sur = engine.surrogate
    return {
        "format_version": SNAPSHOT_VERSION,
        "limits": _limits_state(engine.limits),
        "config": asdict(engine.cfg),
        "rng": [version, list(internal), gauss],
        "counters": {"iterations": engine.iterations, "dispatched": engine.dispatched,
                     "since_new_job": engine.since_new_job, "next_job_id": engine.next_job_id,
                     "results_since_retrain": engine.results_since_retrain},
        "tree": [[n.parent, n.action_index, n.q_sum, n.visits, n.total] for n in engine.tree.nodes],
        "evaluated": [[list(k), v] for k, v in engine.evaluated.items()],
        "events": [[e.index, list(e.encoding), e.accuracy, e.cost_epochs] for e in engine.events],
        "pending": [
            {"job_id": j.job_id, "encoding": list(j.encoding),
             "parent_encoding": list(j.parent_encoding) if j.parent_encoding is not None else None,
             "cost_epochs": j.cost_epochs, "outcomes": [_outcome_state(o) for o in j.outcomes]}
            for j in engine.pending.values()
        ],
        "surrogate": None if sur is None else {
            "input_dim": sur.input_dim, "max_digit": sur.max_digit, "train": asdict(sur.cfg),
            "hidden": list(sur.hidden), "multi_stage": sur.multi_stage,
            "from_scratch": sur.from_scratch, "state": sur.state_dict(),
        },
    }


def engine_from_state(state: dict) -> MCTS:
    if state.get("format_version") != SNAPSHOT_VERSION:
        raise VersionMismatch(f"snapshot version {state.get('format_version')} is not {SNAPSHOT_VERSION}")
    try:
        limits = SpaceLimits(**state["limits"])
        cfg = SearchConfig(**state["config"])
        sur = None
        if state["surrogate"] is not None:
            s = state["surrogate"]
            sur = Surrogate(s["input_dim"], s["max_digit"], TrainConfig(**s["train"]),
                            hidden=tuple(s["hidden"]), multi_stage=s["multi_stage"],
                            from_scratch=s["from_scratch"])
            sur.load_state_dict(s["state"])
        engine = MCTS(limits, cfg, sur)
        version, internal, gauss = state["rng"]
        engine.rng.setstate((version, tuple(internal), gauss))
        for name, value in state["counters"].items():
            setattr(engine, name, value)
        nodes = engine.tree.nodes
        for i, (parent, action, q_sum, visits, total) in enumerate(state["tree"]):
            if i == 0:
                node = nodes[0]
            else:
                node = Node(i, parent, action, successor(nodes[parent].state, action, limits), limits)
                nodes.append(node)
                nodes[parent].children[action] = i
            node.q_sum = [float(q) for q in q_sum]
            node.visits = list(visits)
            node.total = total
        engine.evaluated = {tuple(k): v for k, v in state["evaluated"]}
        engine.events = [EvalEvent(i, tuple(enc), acc, cost) for i, enc, acc, cost in state["events"]]
        for j in state["pending"]:
            parent = tuple(j["parent_encoding"]) if j["parent_encoding"] is not None else None
            job = Job(j["job_id"], tuple(j["encoding"]), parent, j["cost_epochs"],
                      [_outcome_from(o) for o in j["outcomes"]])
            engine.pending[job.job_id] = job
            engine.in_flight[job.encoding] = job.job_id
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CorruptSnapshot(f"snapshot content is inconsistent: {exc}") from None
    return engine


def snapshot_text(state: dict) -> str:
    body = json.dumps(state, sort_keys=True, indent=1)
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return f"{body}\nsha256:{digest}\n"


def snapshot_save(engine: MCTS, path, extra: dict | None = None):
    """Write a snapshot atomically (temp file in the same directory, then rename)."""
    state = engine_state(engine)
    if extra:
        state["extra"] = extra
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(snapshot_text(state))
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def snapshot_load(path) -> dict:
    """Read and verify a snapshot file; returns the raw state dict."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SnapshotError(f"cannot read snapshot: {exc}") from None
    body, sep, tail = text.rstrip("\n").rpartition("\nsha256:")
    if not sep:
        raise CorruptSnapshot("snapshot has no checksum line")
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != tail.strip():
        raise CorruptSnapshot("snapshot checksum does not match")
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise CorruptSnapshot(f"snapshot is not valid JSON: {exc}") from None


def snapshot_restore(path) -> MCTS:
    return engine_from_state(snapshot_load(path))


# --------------------------------------------------------------------------
# master


@dataclass
class RunReport:
    events: list = field(default_factory=list)
    iterations: int = 0
    best_encoding: tuple | None = None
    best_accuracy: float = 0.0
    reason: str = ""


@dataclass
class _Worker:
    name: str
    channel: LineChannel
    job_id: int | None = None


class Master:
    """Drives an ``MCTS`` engine, handing jobs to connected workers.

    ``queue_bound`` caps jobs created but not yet answered (default twice
    the expected worker count).  With ``sync`` set, the engine only steps
    when no job is outstanding, which replays the sequential driver exactly.
    """

    def __init__(self, engine: MCTS, budget: int, target: float | None = None,
                 workers: int = 1, queue_bound: int | None = None, sync: bool = False,
                 snapshot_every: int = 0, snapshot_path=None):
        self.engine = engine
        self.budget = budget
        self.target = target
        self.queue_bound = 1 if sync else (queue_bound or 2 * max(1, workers))
        self.sync = sync
        self.snapshot_every = snapshot_every
        self.snapshot_path = snapshot_path
        # jobs restored from a snapshot are handed out again
        self.queued: list[Job] = sorted(engine.pending.values(), key=lambda j: j.job_id)
        self.workers: dict[int, _Worker] = {}
        self.applied: set[int] = set()
        self.events: queue.Queue = queue.Queue()
        self.reached = False
        self._server: socket.socket | None = None
        self._next_conn = 0

    # search side -----------------------------------------------------------

    @property
    def outstanding(self) -> int:
        return len(self.engine.pending)

    @property
    def finished_searching(self) -> bool:
        e = self.engine
        return self.reached or e.dispatched >= self.budget or e.stalled

    def fill(self):
        """Step the engine until the job queue is at its bound or the search ends."""
        while not self.finished_searching and self.outstanding < self.queue_bound:
            job = self.engine.step()
            if self.snapshot_every and self.engine.iterations % self.snapshot_every == 0:
                self.save_snapshot()
            if job is not None:
                self.queued.append(job)

    def apply(self, job_id: int, accuracy: float) -> bool:
        """Apply one result; repeats and unknown ids are ignored."""
        if job_id in self.applied or job_id not in self.engine.pending:
            log.warning("ignoring result for job %s", job_id)
            return False
        self.applied.add(job_id)
        self.engine.apply_result(job_id, accuracy)
        if self.target is not None and accuracy >= self.target:
            self.reached = True
        return True

    def save_snapshot(self):
        if self.snapshot_path is not None:
            snapshot_save(self.engine, self.snapshot_path)

    def report(self, reason: str) -> RunReport:
        enc, acc = self.engine.best()
        return RunReport(list(self.engine.events), self.engine.iterations, enc, acc, reason)

    # network side ----------------------------------------------------------

    def listen(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        self._server = socket.create_server((host, port))
        threading.Thread(target=self._accept, daemon=True).start()
        return self._server.getsockname()[:2]

    def _accept(self):
        while True:
            try:
                sock, _ = self._server.accept()
            except OSError:
                return
            conn = self._next_conn
            self._next_conn += 1
            threading.Thread(target=self._read, args=(conn, LineChannel(sock)), daemon=True).start()

    def _read(self, conn: int, channel: LineChannel):
        try:
            while True:
                msg = channel.receive()
                if msg is None:
                    break
                self.events.put((conn, channel, msg))
        except ProtocolError as exc:
            log.error("dropping connection %s: %s", conn, exc)
        except OSError:
            pass
        channel.close()
        self.events.put((conn, channel, None))

    def _assign(self):
        for w in self.workers.values():
            if not self.queued:
                return
            if w.job_id is None:
                job = self.queued.pop(0)
                try:
                    w.channel.send(job_assign(job))
                    w.job_id = job.job_id
                except OSError:
                    self.queued.insert(0, job)

    def _handle(self, conn: int, channel: LineChannel, msg: dict | None):
        worker = self.workers.get(conn)
        if msg is None:
            if worker is not None:
                del self.workers[conn]
                if worker.job_id is not None and worker.job_id in self.engine.pending:
                    # back to the front so the order of results stays stable
                    self.queued.insert(0, self.engine.pending[worker.job_id])
            return
        kind = msg["type"]
        if kind == "hello":
            self.workers[conn] = _Worker(msg["worker_id"], channel)
        elif kind == "job_result" and worker is not None:
            job_id = msg["job_id"]
            if worker.job_id == job_id:
                worker.job_id = None
            if msg.get("accuracy") is None:
                raise NotInTable(f"worker {worker.name} failed job {job_id}: {msg.get('reason')}")
            self.apply(job_id, float(msg["accuracy"]))
        else:
            log.error("unexpected %s message from connection %s", kind, conn)

    def run(self, timeout: float | None = None) -> RunReport:
        """Event loop; call ``listen`` first.  Returns when the search is over."""
        deadline = None if timeout is None else time.monotonic() + timeout
        reason = "budget"
        try:
            while True:
                self.fill()
                if self.finished_searching and not self.outstanding:
                    break
                self._assign()
                if deadline is not None and time.monotonic() > deadline:
                    reason = "timeout"
                    break
                try:
                    conn, channel, msg = self.events.get(timeout=0.5)
                except queue.Empty:
                    continue
                self._handle(conn, channel, msg)
        except NotInTable:
            self.close("evaluator mismatch")
            raise
        if reason != "timeout":
            reason = "target" if self.reached else ("stalled" if self.engine.stalled else "budget")
        if self.snapshot_every:
            self.save_snapshot()
        self.close(reason)
        return self.report(reason)

    def close(self, reason: str):
        for w in list(self.workers.values()):
            try:
                w.channel.send(shutdown(reason))
            except OSError:
                pass
        if self._server is not None:
            self._server.close()
            self._server = None


def master_loop(engine: MCTS, budget: int, endpoint: str = "127.0.0.1:0", target: float | None = None,
                workers: int = 1, local_evaluator=None, sync: bool = False, queue_bound: int | None = None,
                snapshot_every: int = 0, snapshot_path=None, timeout: float | None = None) -> RunReport:
    """Serve ``engine`` on ``endpoint``.

    With ``local_evaluator`` set, ``workers`` in-process worker threads are
    started against the listening socket.
    """
    master = Master(engine, budget, target, workers, queue_bound, sync, snapshot_every, snapshot_path)
    if budget <= 0:
        return master.report("budget")
    host, port = master.listen(*parse_endpoint(endpoint))
    threads = []
    if local_evaluator is not None:
        for i in range(workers):
            t = threading.Thread(target=worker_loop, args=(f"{host}:{port}", local_evaluator),
                                 kwargs={"worker_id": f"local-{i}"}, daemon=True)
            t.start()
            threads.append(t)
    report = master.run(timeout)
    for t in threads:
        t.join(timeout=5)
    return report


# --------------------------------------------------------------------------
# worker


def worker_loop(endpoint: str, evaluator, worker_id: str | None = None, max_retries: int = 5,
                backoff: float = 0.1, max_backoff: float = 5.0) -> int:
    """Evaluate jobs until the master says to stop; returns an exit code.

    A dropped connection is retried with exponential backoff; after
    ``max_retries`` consecutive failures the worker gives up with 1.
    """
    host, port = parse_endpoint(endpoint)
    worker_id = worker_id or f"worker-{os.getpid()}-{random.randrange(1 << 30)}"
    failures = 0
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=10)
            sock.settimeout(None)
        except OSError:
            failures += 1
            if failures > max_retries:
                return 1
            time.sleep(min(backoff * 2 ** (failures - 1), max_backoff))
            continue
        failures = 0
        channel = LineChannel(sock)
        try:
            channel.send(hello(worker_id))
            while True:
                msg = channel.receive()
                if msg is None:
                    break
                if msg["type"] == "shutdown":
                    return 0
                if msg["type"] != "job_assign":
                    continue
                try:
                    acc = evaluator.accuracy_of_encoding(tuple(msg["encoding"]))
                except NotInTable as exc:
                    channel.send(job_failure(msg["job_id"], str(exc)))
                    continue
                channel.send(job_result(msg["job_id"], float(acc)))
        except (OSError, ProtocolError):
            pass
        finally:
            channel.close()
