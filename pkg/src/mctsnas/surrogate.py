"""Dense-network accuracy predictor trained from scratch with Adam.

Inputs are architecture encodings divided by the largest digit value, the
output is a sigmoid so predictions stay inside (0, 1).  ``MultiStageModel``
routes each input to one of several experts, one per accuracy range.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateVariance, DimensionMismatch, EmptyDataset, SnapshotError

PAPER_HIDDEN = (512, 2048, 2048, 512)
DESK_HIDDEN = (64, 128, 64)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_range: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("training hyperparameters must be positive")


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class DenseNet:
    """Fully connected network; ``hidden`` and ``output`` name the activations.

    Hidden: ``"relu"`` or ``"identity"``.  Output: ``"sigmoid"``,
    ``"identity"`` (regression) or ``"logits"`` (softmax cross-entropy).
    """

    def __init__(self, layer_dims: Sequence[int], rng=None, init_range=0.1,
                 hidden="relu", output="sigmoid"):
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise ValueError("layer_dims needs at least an input and an output width")
        self.layer_dims = tuple(int(d) for d in layer_dims)
        self.hidden = hidden
        self.output = output
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = [
            rng.uniform(-init_range, init_range, size=(a, b))
            for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:])
        ]
        self.biases = [np.zeros(b) for b in self.layer_dims[1:]]
        self.adam = None

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat_parameters(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_params:
            raise DimensionMismatch(f"expected {self.num_params} parameters, got {flat.size}")
        pos = 0
        for p in self.parameters():
            p[...] = flat[pos : pos + p.size].reshape(p.shape)
            pos += p.size

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.layer_dims[0]:
            raise DimensionMismatch(f"expected {self.layer_dims[0]} inputs, got {X.shape[1]}")
        return X

    def forward(self, X):
        """Return (output, activations) where activations[i] feeds layer i."""
        X = self._check(X)
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                h = np.maximum(z, 0.0) if self.hidden == "relu" else z
            elif self.output == "sigmoid":
                h = _sigmoid(z)
            else:
                h = z
            acts.append(h)
        return h, acts

    def predict(self, X) -> np.ndarray:
        out, _ = self.forward(X)
        return out[:, 0] if out.shape[1] == 1 else out

    def loss_and_gradients(self, X, y):
        """Mean loss over the batch and gradients for ``parameters()``.

        Regression nets use mean squared error; ``"logits"`` nets use softmax
        cross-entropy with integer class targets.
        """
        out, acts = self.forward(X)
        n = out.shape[0]
        if self.output == "logits":
            y = np.asarray(y, dtype=np.int64)
            probs = _softmax(out)
            loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
            delta = probs
            delta[np.arange(n), y] -= 1.0
            delta /= n
        else:
            y = np.asarray(y, dtype=np.float64).reshape(n, -1)
            diff = out - y
            loss = float(np.mean(diff * diff))
            delta = 2.0 * diff / diff.size
            if self.output == "sigmoid":
                delta = delta * out * (1.0 - out)
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
                if self.hidden == "relu":
                    delta = delta * (acts[i] > 0)
        return loss, grads


class Adam:
    def __init__(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, cfg: TrainConfig):
        self.t += 1
        lr = cfg.learning_rate
        c1 = 1.0 - cfg.beta1 ** self.t
        c2 = 1.0 - cfg.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def _fit_net(net: DenseNet, X, y, cfg: TrainConfig, rng) -> list[float]:
    n = X.shape[0]
    if net.adam is None:
        net.adam = Adam(net.parameters())
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = net.loss_and_gradients(X[idx], y[idx])
            total += loss * len(idx)
            if cfg.learning_rate > 0:
                net.adam.step(net.parameters(), grads, cfg)
        history.append(total / n)
    return history


@dataclass
class MultiStageModel:
    """Experts for accuracy ranges plus a router choosing among them."""

    bins: list[tuple[float, float]]
    experts: list[DenseNet]
    router: DenseNet
    router_history: list[float] = field(default_factory=list)

    @classmethod
    def build(cls, input_dim, hidden=DESK_HIDDEN, n_bins=4, rng=None, init_range=0.1):
        rng = rng if rng is not None else np.random.default_rng(0)
        edges = np.linspace(0.0, 1.0, n_bins + 1)
        bins = [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]
        dims = (input_dim, *hidden)
        experts = [DenseNet(dims + (1,), rng, init_range) for _ in bins]
        router = DenseNet(dims + (n_bins,), rng, init_range, output="logits")
        return cls(bins, experts, router)

    def bin_of(self, y) -> np.ndarray:
        """Index of the bin holding each accuracy; the last bin is closed."""
        y = np.asarray(y, dtype=np.float64)
        uppers = np.array([b for _, b in self.bins[:-1]])
        return np.searchsorted(uppers, y, side="right")

    @property
    def layer_dims(self):
        return self.router.layer_dims

    def route(self, X) -> np.ndarray:
        return np.argmax(self.router.predict(X), axis=1)

    def predict(self, X, routes=None) -> np.ndarray:
        X = self.router._check(X)
        routes = self.route(X) if routes is None else np.asarray(routes)
        out = np.empty(X.shape[0])
        for b, expert in enumerate(self.experts):
            mask = routes == b
            if mask.any():
                out[mask] = expert.predict(X[mask])
        return out

    def nets(self) -> list[DenseNet]:
        return [*self.experts, self.router]


def new_model(input_dim, hidden=DESK_HIDDEN, multi_stage=False, rng=None, init_range=0.1, n_bins=4):
    rng = rng if rng is not None else np.random.default_rng(0)
    if multi_stage:
        return MultiStageModel.build(input_dim, hidden, n_bins, rng, init_range)
    return DenseNet((input_dim, *hidden, 1), rng, init_range)


def predict(model, X) -> np.ndarray:
    return model.predict(X)


def train(model, X, y, cfg: TrainConfig, rng) -> list[float]:
    """Minimise mean squared error with mini-batch Adam; returns per-epoch loss.

    A multi-stage model trains each expert on the samples whose label falls in
    its bin and the router on bin indices; the returned history is the
    sample-weighted mean of the expert losses.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch("inputs and labels differ in length")
    if isinstance(model, DenseNet):
        model._check(X)
        return _fit_net(model, X, y, cfg, rng)
    model.router._check(X)
    labels = model.bin_of(y)
    totals = np.zeros(cfg.epochs)
    for b, expert in enumerate(model.experts):
        mask = labels == b
        if mask.any():
            hist = _fit_net(expert, X[mask], y[mask], cfg, rng)
            totals += np.asarray(hist) * mask.sum()
    model.router_history.extend(_fit_net(model.router, X, labels, cfg, rng))
    return list(totals / X.shape[0])


def pearson(preds, truths) -> float:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape or p.size < 2:
        raise DimensionMismatch("need two equal-length sequences of at least 2 values")
    dp = p - p.mean()
    dt = t - t.mean()
    sp = np.sqrt(np.dot(dp, dp))
    st = np.sqrt(np.dot(dt, dt))
    if sp == 0.0 or st == 0.0:
        raise DegenerateVariance("a sequence has zero variance")
    return float(np.clip(np.dot(dp, dt) / (sp * st), -1.0, 1.0))


def spearman(preds, truths) -> float:
    from scipy.stats import rankdata

    return pearson(rankdata(preds), rankdata(truths))


def gradient_check(net: DenseNet, X, y, epsilon=1e-5) -> float:
    """Largest relative gap between analytic and central-difference gradients."""
    _, grads = net.loss_and_gradients(X, y)
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + epsilon
            up, _ = net.loss_and_gradients(X, y)
            p[idx] = orig - epsilon
            down, _ = net.loss_and_gradients(X, y)
            p[idx] = orig
            numeric = (up - down) / (2 * epsilon)
            denom = max(abs(numeric) + abs(g[idx]), 1e-7)
            worst = max(worst, abs(numeric - g[idx]) / denom)
    return worst


# --------------------------------------------------------------------------
# the predictor the search engine talks to


class Surrogate:
    """A model plus input scaling, a run RNG and the online training buffer."""

    def __init__(self, input_dim, max_digit, cfg: TrainConfig = TrainConfig(),
                 hidden=DESK_HIDDEN, multi_stage=False, seed=0, from_scratch=False):
        self.input_dim = input_dim
        self.max_digit = float(max_digit)
        self.cfg = cfg
        self.hidden = tuple(hidden)
        self.multi_stage = multi_stage
        self.from_scratch = from_scratch
        self.rng = np.random.default_rng(seed)
        self.model = new_model(input_dim, self.hidden, multi_stage, self.rng, cfg.init_range)
        self.buffer_x: list[tuple[int, ...]] = []
        self.buffer_y: list[float] = []
        # predictions are fixed between retrains; the search asks for the
        # same encodings over and over
        self.cache: dict[tuple[int, ...], float] = {}

    def scale(self, encodings) -> np.ndarray:
        X = np.asarray(encodings, dtype=np.float64).reshape(-1, self.input_dim)
        return X / self.max_digit

    def predict(self, encodings) -> np.ndarray:
        keys = [tuple(e) for e in encodings]
        missing = list(dict.fromkeys(k for k in keys if k not in self.cache))
        if missing:
            for k, v in zip(missing, self.model.predict(self.scale(missing))):
                self.cache[k] = float(v)
        return np.array([self.cache[k] for k in keys])

    def record(self, encoding, accuracy):
        self.buffer_x.append(tuple(encoding))
        self.buffer_y.append(float(accuracy))

    def retrain(self) -> list[float]:
        if not self.buffer_x:
            raise EmptyDataset("training buffer is empty")
        self.cache.clear()
        if self.from_scratch:
            self.model = new_model(self.input_dim, self.hidden, self.multi_stage, self.rng, self.cfg.init_range)
        return train(self.model, self.scale(self.buffer_x), np.array(self.buffer_y), self.cfg, self.rng)

    # snapshot support ------------------------------------------------------

    def state_dict(self) -> dict:
        nets = self.model.nets() if isinstance(self.model, MultiStageModel) else [self.model]
        return {
            "rng": self.rng.bit_generator.state,
            "nets": [_net_state(n) for n in nets],
            "router_history": list(getattr(self.model, "router_history", [])),
            "buffer_x": [list(x) for x in self.buffer_x],
            "buffer_y": list(self.buffer_y),
            "cache": [[list(k), v] for k, v in self.cache.items()],
        }

    def load_state_dict(self, state: dict):
        self.rng.bit_generator.state = state["rng"]
        nets = self.model.nets() if isinstance(self.model, MultiStageModel) else [self.model]
        if len(nets) != len(state["nets"]):
            raise SnapshotError("surrogate layout does not match the snapshot")
        for net, ns in zip(nets, state["nets"]):
            _load_net_state(net, ns)
        if isinstance(self.model, MultiStageModel):
            self.model.router_history = list(state["router_history"])
        self.buffer_x = [tuple(x) for x in state["buffer_x"]]
        self.buffer_y = list(state["buffer_y"])
        self.cache = {tuple(k): float(v) for k, v in state.get("cache", [])}


def _net_state(net: DenseNet) -> dict:
    out = {"dims": list(net.layer_dims), "params": net.flat_parameters().tolist()}
    if net.adam is not None:
        out["adam_t"] = net.adam.t
        out["adam_m"] = np.concatenate([m.ravel() for m in net.adam.m]).tolist()
        out["adam_v"] = np.concatenate([v.ravel() for v in net.adam.v]).tolist()
    return out


def _unflatten(flat, like):
    flat = np.asarray(flat, dtype=np.float64)
    out, pos = [], 0
    for p in like:
        out.append(flat[pos : pos + p.size].reshape(p.shape).copy())
        pos += p.size
    return out


def _load_net_state(net: DenseNet, state: dict):
    if tuple(state["dims"]) != net.layer_dims:
        raise SnapshotError("network dimensions do not match the snapshot")
    net.set_flat_parameters(state["params"])
    if "adam_t" in state:
        net.adam = Adam(net.parameters())
        net.adam.t = state["adam_t"]
        net.adam.m = _unflatten(state["adam_m"], net.parameters())
        net.adam.v = _unflatten(state["adam_v"], net.parameters())
    else:
        net.adam = None


# --------------------------------------------------------------------------
# checkpoint files
#
# layout (little-endian): b"MNSG", u32 version, u32 kind (0 dense, 1 multi-stage),
# u32 net count, then per net: u32 n_dims, u32 dims..., u32 output kind,
# f64 params...  Multi-stage files also carry u32 n_bins and f64 bin edges.

CHECKPOINT_MAGIC = b"MNSG"
CHECKPOINT_VERSION = 1
_OUTPUT_KINDS = ["sigmoid", "identity", "logits"]


def save_checkpoint(model, path):
    nets = model.nets() if isinstance(model, MultiStageModel) else [model]
    parts = [CHECKPOINT_MAGIC, struct.pack("<III", CHECKPOINT_VERSION, int(isinstance(model, MultiStageModel)), len(nets))]
    for net in nets:
        parts.append(struct.pack("<I", len(net.layer_dims)))
        parts.append(struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims))
        parts.append(struct.pack("<I", _OUTPUT_KINDS.index(net.output)))
        parts.append(net.flat_parameters().astype("<f8").tobytes())
    if isinstance(model, MultiStageModel):
        edges = [model.bins[0][0]] + [b for _, b in model.bins]
        parts.append(struct.pack("<I", len(model.bins)))
        parts.append(np.asarray(edges, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise SnapshotError("not a surrogate checkpoint")
    version, kind, count = struct.unpack_from("<III", data, 4)
    if version != CHECKPOINT_VERSION:
        raise SnapshotError(f"checkpoint version {version} is not supported")
    pos = 16
    nets = []
    for _ in range(count):
        (nd,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{nd}I", data, pos)
        pos += 4 * nd
        (okind,) = struct.unpack_from("<I", data, pos)
        pos += 4
        net = DenseNet(dims, output=_OUTPUT_KINDS[okind])
        size = net.num_params
        net.set_flat_parameters(np.frombuffer(data, dtype="<f8", count=size, offset=pos))
        pos += 8 * size
        nets.append(net)
    if not kind:
        return nets[0]
    (nb,) = struct.unpack_from("<I", data, pos)
    pos += 4
    edges = np.frombuffer(data, dtype="<f8", count=nb + 1, offset=pos)
    bins = [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]
    return MultiStageModel(bins, nets[:-1], nets[-1])
