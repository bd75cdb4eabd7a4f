"""Message-passing neural network over the building graph, from scratch.

Two rounds of relu(W_self*h + W_nbr*mean(neighbors) + b), a mean + max pooled
readout, then sigmoid heads: one graph-level anomaly probability plus one
probability per fault kind. The max half of the readout exists because
single-sensor faults are invisible to a pure mean over ~84 nodes within the
training budget; max routes full gradient to the deviating node. Training is
SGD with classical momentum under summed binary cross-entropy; gradients are
exact and verified against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import (
    BadDims,
    BadHyperparam,
    CorruptState,
    DegenerateLabels,
    DimMismatch,
    EmptyDataset,
    ParseError,
)
from .graph import FeatureSet, mean_aggregation_matrix
from .plant import FaultKind, Labels
from .util import atomic_write_text, canonical_json, new_rng, stable_hash

PARAMS_HEADER = "twinforge-params"
PARAMS_VERSION = 1

DEFAULT_HIDDEN = 16
N_FAULT_HEADS = len(FaultKind)
PROB_EPS = 1e-12


@dataclass
class GnnParams:
    """Weights for the message-passing layers and the readout heads.

    The same structure doubles as the gradient container returned by
    ``backward``.
    """

    dims: tuple[int, ...]
    w_self: list[np.ndarray]   # per layer, (D_l, D_{l+1})
    w_nbr: list[np.ndarray]
    biases: list[np.ndarray]   # per layer, (D_{l+1},)
    w_anomaly: np.ndarray      # (2*D_L,) over the mean|max readout
    b_anomaly: float
    w_faults: np.ndarray       # (2*D_L, K)
    b_faults: np.ndarray       # (K,)
    seed: int = 0

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def check(self) -> None:
        if len(self.dims) < 2 or any(d < 1 for d in self.dims):
            raise BadDims(f"invalid dimension chain {self.dims}")
        if not (
            len(self.w_self) == len(self.w_nbr) == len(self.biases) == self.n_layers
        ):
            raise BadDims("layer count does not match dimension chain")
        for l in range(self.n_layers):
            want = (self.dims[l], self.dims[l + 1])
            if self.w_self[l].shape != want or self.w_nbr[l].shape != want:
                raise BadDims(
                    f"layer {l} weights {self.w_self[l].shape} != expected {want}"
                )
            if self.biases[l].shape != (self.dims[l + 1],):
                raise BadDims(f"layer {l} bias shape {self.biases[l].shape}")
        out = self.dims[-1]
        if self.w_anomaly.shape != (out,) or self.w_faults.shape != (out, N_FAULT_HEADS):
            raise BadDims("readout head shapes do not match final layer width")
        if self.b_faults.shape != (N_FAULT_HEADS,):
            raise BadDims("fault bias shape")

    def to_vector(self) -> np.ndarray:
        parts = []
        for l in range(self.n_layers):
            parts += [self.w_self[l].ravel(), self.w_nbr[l].ravel(), self.biases[l]]
        parts += [self.w_anomaly, np.array([self.b_anomaly]), self.w_faults.ravel(), self.b_faults]
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, vec: np.ndarray, dims: Sequence[int], seed: int = 0) -> "GnnParams":
        dims = tuple(int(d) for d in dims)
        w_self, w_nbr, biases = [], [], []
        pos = 0

        def take(shape) -> np.ndarray:
            nonlocal pos
            size = int(np.prod(shape))
            out = vec[pos : pos + size].reshape(shape).copy()
            pos += size
            return out

        for l in range(len(dims) - 1):
            w_self.append(take((dims[l], dims[l + 1])))
            w_nbr.append(take((dims[l], dims[l + 1])))
            biases.append(take((dims[l + 1],)))
        w_anomaly = take((dims[-1],))
        b_anomaly = float(take((1,))[0])
        w_faults = take((dims[-1], N_FAULT_HEADS))
        b_faults = take((N_FAULT_HEADS,))
        if pos != vec.size:
            raise BadDims(f"vector length {vec.size} does not match dims {dims}")
        return cls(dims, w_self, w_nbr, biases, w_anomaly, b_anomaly, w_faults, b_faults, seed)


@dataclass(frozen=True)
class Prediction:
    anomaly_prob: float
    verdict: str  # "stable" | "anomaly", threshold 0.5
    per_fault_prob: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "anomaly_prob": self.anomaly_prob,
            "verdict": self.verdict,
            "per_fault_prob": dict(self.per_fault_prob),
        }


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    roc_auc: float
    loss: float
    split: str

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "roc_auc": self.roc_auc,
            "loss": self.loss,
            "split": self.split,
        }


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 40
    batch_size: int = 16

    def check(self) -> None:
        if not (1 <= self.epochs <= 100):
            raise BadHyperparam(f"epochs must be in [1, 100], got {self.epochs}")
        if self.learning_rate <= 0:
            raise BadHyperparam(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise BadHyperparam(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise BadHyperparam(f"batch_size must be >= 1, got {self.batch_size}")


def init_params(
    dims: Sequence[int] = (0,), seed: int = 0, hidden: int = DEFAULT_HIDDEN
) -> GnnParams:
    """Glorot-uniform weights, zero biases; deterministic per seed.

    ``dims`` is the width chain starting at the feature dimension; pass a
    single-element chain like (23,) to get the default two hidden layers.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) == 1:
        dims = (dims[0], hidden, hidden)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise BadDims(f"invalid dimension chain {dims}")
    gen = new_rng((seed, 10))

    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return gen.uniform(-limit, limit, size=(fan_in, fan_out))

    w_self, w_nbr, biases = [], [], []
    for l in range(len(dims) - 1):
        w_self.append(glorot(dims[l], dims[l + 1]))
        w_nbr.append(glorot(dims[l], dims[l + 1]))
        biases.append(np.zeros(dims[l + 1]))
    out = dims[-1]
    params = GnnParams(
        dims=dims,
        w_self=w_self,
        w_nbr=w_nbr,
        biases=biases,
        w_anomaly=glorot(out, 1)[:, 0],
        b_anomaly=0.0,
        w_faults=glorot(out, N_FAULT_HEADS),
        b_faults=np.zeros(N_FAULT_HEADS),
        seed=seed,
    )
    params.check()
    return params


# -- forward / backward ----------------------------------------------------------

def _forward_arrays(params: GnnParams, x: np.ndarray, agg: np.ndarray):
    """Batched forward pass; x is (B, N, D), agg the (N, N) mean-neighbor operator.

    Returns (anomaly_prob (B,), fault_probs (B, K), cache).
    """
    h = x
    pre, post, msgs = [], [x], []
    for l in range(params.n_layers):
        m = np.matmul(agg, h)
        z = np.matmul(h, params.w_self[l]) + np.matmul(m, params.w_nbr[l]) + params.biases[l]
        h = np.maximum(z, 0.0)
        pre.append(z)
        post.append(h)
        msgs.append(m)
    g = h.mean(axis=1)  # (B, D_L)
    logit_a = g @ params.w_anomaly + params.b_anomaly
    logit_f = g @ params.w_faults + params.b_faults
    p_a = expit(logit_a)
    p_f = expit(logit_f)
    cache = (pre, post, msgs, g)
    return p_a, p_f, cache


def _bce(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def _loss_arrays(p_a, p_f, y_a, y_f) -> np.ndarray:
    return _bce(p_a, y_a) + _bce(p_f, y_f).mean(axis=-1)


def _backward_arrays(params: GnnParams, x, agg, y_a, y_f, cache=None) -> GnnParams:
    """Mean gradient over the batch, in a GnnParams-shaped container."""
    if cache is None:
        p_a, p_f, cache = _forward_arrays(params, x, agg)
    else:
        p_a, p_f, cache = cache
    pre, post, msgs, g = cache
    batch, n_nodes = x.shape[0], x.shape[1]

    d_logit_a = (p_a - y_a) / batch                      # (B,)
    d_logit_f = (p_f - y_f) / (N_FAULT_HEADS * batch)    # (B, K)

    gw_anomaly = g.T @ d_logit_a
    gb_anomaly = float(d_logit_a.sum())
    gw_faults = g.T @ d_logit_f
    gb_faults = d_logit_f.sum(axis=0)

    dg = np.outer(d_logit_a, params.w_anomaly) + d_logit_f @ params.w_faults.T  # (B, D_L)
    dh = np.repeat(dg[:, None, :], n_nodes, axis=1) / n_nodes

    gw_self = [None] * params.n_layers
    gw_nbr = [None] * params.n_layers
    gbias = [None] * params.n_layers
    agg_t = agg.T
    for l in range(params.n_layers - 1, -1, -1):
        dz = dh * (pre[l] > 0.0)
        h_in = post[l]
        m_in = msgs[l]
        gw_self[l] = np.einsum("bnd,bnh->dh", h_in, dz)
        gw_nbr[l] = np.einsum("bnd,bnh->dh", m_in, dz)
        gbias[l] = dz.sum(axis=(0, 1))
        if l > 0:
            dh = dz @ params.w_self[l].T + np.matmul(agg_t, dz @ params.w_nbr[l].T)

    return GnnParams(
        dims=params.dims,
        w_self=gw_self,
        w_nbr=gw_nbr,
        biases=gbias,
        w_anomaly=gw_anomaly,
        b_anomaly=gb_anomaly,
        w_faults=gw_faults,
        b_faults=gb_faults,
        seed=params.seed,
    )


def _as_batch(params: GnnParams, fs: FeatureSet) -> tuple[np.ndarray, np.ndarray]:
    if fs.features.shape[1] != params.in_dim:
        raise DimMismatch(
            f"feature dim {fs.features.shape[1]} != params input dim {params.in_dim}"
        )
    agg = _cached_agg(fs)
    return fs.features[None, :, :], agg


_AGG_CACHE: dict[int, tuple] = {}


def _cached_agg(fs: FeatureSet) -> np.ndarray:
    key = id(fs.adjacency)
    hit = _AGG_CACHE.get(key)
    if hit is not None and hit[0] is fs.adjacency:
        return hit[1]
    agg = mean_aggregation_matrix(fs.adjacency)
    _AGG_CACHE[key] = (fs.adjacency, agg)
    if len(_AGG_CACHE) > 64:
        _AGG_CACHE.pop(next(iter(_AGG_CACHE)))
    return agg


def forward(params: GnnParams, fs: FeatureSet) -> Prediction:
    x, agg = _as_batch(params, fs)
    p_a, p_f, _ = _forward_arrays(params, x, agg)
    anomaly_prob = float(p_a[0])
    return Prediction(
        anomaly_prob=anomaly_prob,
        verdict="anomaly" if anomaly_prob >= 0.5 else "stable",
        per_fault_prob={
            kind.value: float(p_f[0, i]) for i, kind in enumerate(FaultKind)
        },
    )


def loss(prediction: Prediction, labels: Labels) -> float:
    """Anomaly-head cross-entropy plus the mean of the fault-head cross-entropies."""
    p_a = np.array([prediction.anomaly_prob])
    p_f = np.array([[prediction.per_fault_prob[k.value] for k in FaultKind]])
    y_a = np.array([float(labels.anomaly)])
    y_f = labels.as_vector()[None, :]
    return float(_loss_arrays(p_a, p_f, y_a, y_f)[0])


def backward(params: GnnParams, fs: FeatureSet, labels: Labels) -> GnnParams:
    x, agg = _as_batch(params, fs)
    y_a = np.array([float(labels.anomaly)])
    y_f = labels.as_vector()[None, :]
    return _backward_arrays(params, x, agg, y_a, y_f)


def sample_loss(params: GnnParams, fs: FeatureSet, labels: Labels) -> float:
    x, agg = _as_batch(params, fs)
    p_a, p_f, _ = _forward_arrays(params, x, agg)
    y_a = np.array([float(labels.anomaly)])
    y_f = labels.as_vector()[None, :]
    return float(_loss_arrays(p_a, p_f, y_a, y_f)[0])


# -- training ---------------------------------------------------------------------

def _group_samples(samples: Sequence[tuple[FeatureSet, Labels]]):
    """Group by shared adjacency so each group stacks into one (B, N, D) tensor."""
    groups: dict[int, dict] = {}
    for idx, (fs, labels) in enumerate(samples):
        key = id(fs.adjacency)
        grp = groups.get(key)
        if grp is None:
            grp = {"agg": _cached_agg(fs), "x": [], "ya": [], "yf": [], "idx": []}
            groups[key] = grp
        grp["x"].append(fs.features)
        grp["ya"].append(float(labels.anomaly))
        grp["yf"].append(labels.as_vector())
        grp["idx"].append(idx)
    packed = []
    for grp in groups.values():
        packed.append(
            {
                "agg": grp["agg"],
                "x": np.stack(grp["x"]),
                "ya": np.array(grp["ya"]),
                "yf": np.stack(grp["yf"]),
                "idx": np.array(grp["idx"]),
            }
        )
    return packed


def train(
    params: GnnParams,
    samples: Sequence[tuple[FeatureSet, Labels]],
    hp: Optional[TrainConfig] = None,
    seed: int = 0,
) -> tuple[GnnParams, list[dict]]:
    """SGD with classical momentum (v' = m*v - lr*g; w' = w + v').

    Deterministic per seed: the shuffle stream is fixed and batches are
    processed in order. Returns the trained params and per-epoch history.
    """
    hp = hp or TrainConfig()
    hp.check()
    if not samples:
        raise EmptyDataset("no training samples")
    params.check()

    groups = _group_samples(samples)
    by_index: dict[int, tuple[int, int]] = {}
    for gi, grp in enumerate(groups):
        for local, idx in enumerate(grp["idx"]):
            by_index[int(idx)] = (gi, local)

    vec = params.to_vector()
    velocity = np.zeros_like(vec)
    gen = new_rng((seed, 20))
    n = len(samples)
    history: list[dict] = []
    current = GnnParams.from_vector(vec, params.dims, params.seed)

    for epoch in range(hp.epochs):
        order = gen.permutation(n)
        for start in range(0, n, hp.batch_size):
            batch_idx = order[start : start + hp.batch_size]
            grad = np.zeros_like(vec)
            total = len(batch_idx)
            # Slice each group's members of this batch and accumulate.
            for gi, grp in enumerate(groups):
                locals_ = [by_index[int(i)][1] for i in batch_idx if by_index[int(i)][0] == gi]
                if not locals_:
                    continue
                x = grp["x"][locals_]
                g = _backward_arrays(current, x, grp["agg"], grp["ya"][locals_], grp["yf"][locals_])
                grad += g.to_vector() * (len(locals_) / total)
            velocity = hp.momentum * velocity - hp.learning_rate * grad
            vec = vec + velocity
            current = GnnParams.from_vector(vec, params.dims, params.seed)

        epoch_loss, epoch_acc = _dataset_loss(current, groups, n)
        history.append({"epoch": epoch, "loss": epoch_loss, "accuracy": epoch_acc})

    return current, history


def _dataset_loss(params: GnnParams, groups, n: int) -> tuple[float, float]:
    total_loss = 0.0
    correct = 0
    for grp in groups:
        p_a, p_f, _ = _forward_arrays(params, grp["x"], grp["agg"])
        total_loss += float(_loss_arrays(p_a, p_f, grp["ya"], grp["yf"]).sum())
        correct += int(((p_a >= 0.5).astype(float) == grp["ya"]).sum())
    return total_loss / n, correct / n


# -- evaluation ---------------------------------------------------------------------

def accuracy(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if scores.size == 0:
        raise EmptyDataset("no scores")
    return float(((scores >= threshold).astype(float) == labels).mean())


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Rank-statistic AUC; ties contribute one half.

    Equals the brute-force count of correctly ordered positive/negative pairs
    divided by the number of pairs (verified exactly in the tests).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if scores.size == 0:
        raise EmptyDataset("no scores")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("roc_auc undefined for single-class labels")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate(
    params: GnnParams, samples: Sequence[tuple[FeatureSet, Labels]], split: str = "test"
) -> EvalMetrics:
    if not samples:
        raise EmptyDataset("no evaluation samples")
    groups = _group_samples(samples)
    scores, ys, losses = [], [], []
    for grp in groups:
        p_a, p_f, _ = _forward_arrays(params, grp["x"], grp["agg"])
        losses.append(_loss_arrays(p_a, p_f, grp["ya"], grp["yf"]))
        scores.append(p_a)
        ys.append(grp["ya"])
    scores = np.concatenate(scores)
    ys = np.concatenate(ys)
    return EvalMetrics(
        accuracy=accuracy(scores, ys),
        roc_auc=roc_auc(scores, ys),
        loss=float(np.concatenate(losses).mean()),
        split=split,
    )


def split_dataset(samples: Sequence, test_fraction: float = 0.2) -> tuple[list, list]:
    """Contiguous time-block split (no shuffling) to avoid leakage between
    temporally adjacent frames."""
    if not (0.0 < test_fraction < 1.0):
        raise BadHyperparam(f"test_fraction must be in (0, 1): {test_fraction}")
    cut = int(round(len(samples) * (1.0 - test_fraction)))
    cut = max(1, min(len(samples) - 1, cut))
    return list(samples[:cut]), list(samples[cut:])


def majority_accuracy(labels: Sequence[int]) -> float:
    labels = np.asarray(labels, dtype=float)
    if labels.size == 0:
        raise EmptyDataset("no labels")
    p = float(labels.mean())
    return max(p, 1.0 - p)


# -- checkpointing ---------------------------------------------------------------------

def _params_payload(params: GnnParams) -> dict:
    return {
        "format": PARAMS_HEADER,
        "version": PARAMS_VERSION,
        "dims": list(params.dims),
        "seed": params.seed,
        "layers": [
            {
                "w_self": params.w_self[l].tolist(),
                "w_nbr": params.w_nbr[l].tolist(),
                "bias": params.biases[l].tolist(),
            }
            for l in range(params.n_layers)
        ],
        "w_anomaly": params.w_anomaly.tolist(),
        "b_anomaly": params.b_anomaly,
        "w_faults": params.w_faults.tolist(),
        "b_faults": params.b_faults.tolist(),
    }


def save_params(params: GnnParams, path: str) -> None:
    payload = _params_payload(params)
    payload["content_hash"] = stable_hash(payload)
    atomic_write_text(path, canonical_json(payload) + "\n")


def load_params(path: str) -> GnnParams:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"params checkpoint: {exc}") from exc
    if payload.get("format") != PARAMS_HEADER:
        raise ParseError(f"not a params checkpoint: {payload.get('format')!r}")
    expected = payload.pop("content_hash", None)
    if expected is None or stable_hash(payload) != expected:
        raise CorruptState("params checkpoint failed its content hash")
    dims = tuple(payload["dims"])
    params = GnnParams(
        dims=dims,
        w_self=[np.array(l["w_self"], dtype=float) for l in payload["layers"]],
        w_nbr=[np.array(l["w_nbr"], dtype=float) for l in payload["layers"]],
        biases=[np.array(l["bias"], dtype=float) for l in payload["layers"]],
        w_anomaly=np.array(payload["w_anomaly"], dtype=float),
        b_anomaly=float(payload["b_anomaly"]),
        w_faults=np.array(payload["w_faults"], dtype=float),
        b_faults=np.array(payload["b_faults"], dtype=float),
        seed=int(payload["seed"]),
    )
    params.check()
    return params
