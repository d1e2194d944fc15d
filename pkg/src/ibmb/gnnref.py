"""Reference GCN in double precision: forward, manual backward, Adam training.

The model is deliberately bias-free and dropout-free so that gradients check
against finite differences at tight tolerances and the closed-form
sensitivity profile of the identity-activation case is exact. Layer l maps
H to act(A_hat @ H @ W_l) where A_hat is the normalization-weighted
adjacency; no activation follows the last layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np
import scipy.sparse as sp

from ._binio import (
    FormatError,
    read_array,
    read_header,
    read_u32,
    read_u64,
    read_u8,
    write_array,
    write_header,
    write_u32,
    write_u64,
    write_u8,
)
from .batchgen import Batch
from .graph import CsrGraph, FeatureMatrix, normalization_weights
from .ppr import ScoreVec, _walk_matrix_t
from .schedule import Schedule, epoch_order

MODEL_MAGIC = b"IBMW"
LOGITS_MAGIC = b"IBML"
_ACT_CODES = {"identity": 0, "relu": 1}
_AGG_CODES = {"row_stochastic": 0, "symmetric": 1}


@dataclass
class GcnModel:
    """Stack of weight matrices plus the activation/aggregation choices."""

    layers: list[np.ndarray]
    activation: str = "relu"
    aggregation: str = "symmetric"

    def __post_init__(self) -> None:
        if self.activation not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.aggregation not in _AGG_CODES:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if not self.layers:
            raise ValueError("model needs at least one layer")
        self.layers = [np.ascontiguousarray(w, dtype=np.float64) for w in self.layers]
        for a, b in zip(self.layers, self.layers[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("consecutive layer dimensions are incompatible")
        for w in self.layers:
            if not np.isfinite(w).all():
                raise ValueError("weights must be finite")

    @property
    def num_layers(self) -> int:
        return len(self.layers)


def init_gcn(
    dims: Sequence[int], activation: str = "relu", aggregation: str = "symmetric", seed: int = 0
) -> GcnModel:
    """Random model with layer shapes dims[0] -> dims[1] -> ... -> dims[-1]."""
    if len(dims) < 2:
        raise ValueError("dims needs at least input and output sizes")
    rng = np.random.default_rng(seed)
    layers = [
        rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        for fan_in, fan_out in zip(dims, dims[1:])
    ]
    return GcnModel(layers, activation, aggregation)


@dataclass
class AdamState:
    """First/second-moment accumulators and hyperparameters."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-3


def init_adam(model: GcnModel, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(w) for w in model.layers],
        v=[np.zeros_like(w) for w in model.layers],
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        lr=lr,
    )


def adam_step(model: GcnModel, state: AdamState, grads: Sequence[np.ndarray]) -> None:
    if len(grads) != model.num_layers:
        raise ValueError("one gradient per layer required")
    state.step += 1
    b1c = 1.0 - state.beta1**state.step
    b2c = 1.0 - state.beta2**state.step
    for w, m, v, g in zip(model.layers, state.m, state.v, grads):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        w -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------


def _as_matrix(x: FeatureMatrix | np.ndarray) -> np.ndarray:
    data = x.data if isinstance(x, FeatureMatrix) else x
    return np.ascontiguousarray(data, dtype=np.float64)


def _aggregator(target: CsrGraph | Batch, model: GcnModel) -> sp.csr_matrix:
    """Weighted adjacency: stored weights if present, else freshly normalized."""
    if isinstance(target, Batch):
        g, weights = target.local_graph, target.global_weights
    else:
        g, weights = target, target.edge_weight
    if weights is None:
        weights = normalization_weights(g, model.aggregation)
    return g.to_scipy(weights=weights)


def _forward_trace(
    model: GcnModel, ahat: sp.csr_matrix, x: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
    """Hidden states, propagated inputs, and pre-activations per layer."""
    hs = [x]
    ss: list[np.ndarray] = []
    zs: list[np.ndarray] = []
    last = model.num_layers - 1
    for l, w in enumerate(model.layers):
        s = ahat @ hs[-1]
        z = s @ w
        ss.append(s)
        zs.append(z)
        if model.activation == "relu" and l < last:
            hs.append(np.maximum(z, 0.0))
        else:
            hs.append(z)
    return hs, ss, zs


def gcn_forward(
    model: GcnModel, target: CsrGraph | Batch, features: FeatureMatrix | np.ndarray
) -> np.ndarray:
    """Logits for the designated output rows.

    For a graph, rows 0..N-1; for a batch, only its output rows (the
    features must already be the batch's local rows).
    """
    x = _as_matrix(features)
    n = target.local_graph.num_nodes if isinstance(target, Batch) else target.num_nodes
    if x.shape[0] != n:
        raise ValueError(f"features have {x.shape[0]} rows, graph has {n}")
    if x.shape[1] != model.layers[0].shape[0]:
        raise ValueError("feature width does not match the first layer")
    _, _, zs = _forward_trace(model, _aggregator(target, model), x)
    logits = zs[-1]
    if isinstance(target, Batch):
        return logits[target.output_mask]
    return logits


def gcn_backward(
    model: GcnModel,
    target: CsrGraph | Batch,
    features: FeatureMatrix | np.ndarray,
    output_labels: np.ndarray,
) -> tuple[float, list[np.ndarray]]:
    """Mean softmax cross-entropy over labeled output rows, with analytic
    per-layer gradients. ``output_labels`` aligns with the rows
    :func:`gcn_forward` would return; entries of -1 are ignored."""
    x = _as_matrix(features)
    ahat = _aggregator(target, model)
    hs, ss, zs = _forward_trace(model, ahat, x)
    logits = zs[-1]
    if isinstance(target, Batch):
        out_rows = target.output_mask
    else:
        out_rows = np.arange(target.num_nodes)
    y = np.asarray(output_labels, dtype=np.int64)
    if y.shape != (out_rows.size,):
        raise ValueError("need one label (or -1) per output row")
    labeled = y >= 0
    if not labeled.any():
        raise ValueError("no labeled outputs: cannot form a loss")
    rows = out_rows[labeled]
    targets = y[labeled]

    z = logits[rows]
    z = z - z.max(axis=1, keepdims=True)
    expz = np.exp(z)
    softmax = expz / expz.sum(axis=1, keepdims=True)
    picked = softmax[np.arange(rows.size), targets]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())

    d_logits = np.zeros_like(logits)
    delta = softmax.copy()
    delta[np.arange(rows.size), targets] -= 1.0
    d_logits[rows] = delta / rows.size

    grads: list[np.ndarray] = [np.empty(0)] * model.num_layers
    dz = d_logits
    for l in range(model.num_layers - 1, -1, -1):
        grads[l] = ss[l].T @ dz
        if l == 0:
            break
        dh = ahat.T @ (dz @ model.layers[l].T)
        if model.activation == "relu":
            dz = dh * (zs[l - 1] > 0.0)
        else:
            dz = dh
    return loss, grads


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------


def train(
    model: GcnModel,
    batches: Sequence[Batch],
    features: FeatureMatrix | np.ndarray,
    labels: np.ndarray,
    sched: Schedule,
    adam: AdamState,
    epochs: int,
    grad_accum: int = 1,
    seed: int = 0,
    distances: np.ndarray | None = None,
    val_batches: Sequence[Batch] | None = None,
) -> list[dict]:
    """Run ``epochs`` scheduled passes, one Adam step per ``grad_accum``
    batches (accumulated gradients are averaged). Returns one record per
    epoch with the mean training loss and, when ``val_batches`` is given,
    validation accuracy computed through the same batch pipeline."""
    if not batches:
        raise ValueError("need at least one batch")
    if grad_accum < 1:
        raise ValueError("grad_accum must be >= 1")
    if sched.num_batches != len(batches):
        raise ValueError("schedule does not cover the batch list")
    x = _as_matrix(features)
    y = np.asarray(labels, dtype=np.int64)
    trace: list[dict] = []
    for epoch in range(epochs):
        order = epoch_order(sched, epoch, distances=distances, extra_seed=seed)
        acc: list[np.ndarray] | None = None
        acc_count = 0
        losses = []

        def flush() -> None:
            nonlocal acc, acc_count
            if acc is not None and acc_count > 0:
                adam_step(model, adam, [g / acc_count for g in acc])
            acc, acc_count = None, 0

        for bid in order:
            batch = batches[int(bid)]
            loss, grads = gcn_backward(model, batch, x[batch.nodes], y[batch.output_nodes])
            losses.append(loss)
            if acc is None:
                acc = [g.copy() for g in grads]
            else:
                for a, g in zip(acc, grads):
                    a += g
            acc_count += 1
            if acc_count == grad_accum:
                flush()
        flush()
        record: dict = {"epoch": epoch, "loss": float(np.mean(losses))}
        if val_batches is not None:
            record["val_acc"] = evaluate(model, val_batches, x, y)
        trace.append(record)
    return trace


def evaluate(
    model: GcnModel,
    batches: Sequence[Batch],
    features: FeatureMatrix | np.ndarray,
    labels: np.ndarray,
) -> float:
    """Argmax accuracy over the labeled output nodes of the given batches."""
    x = _as_matrix(features)
    y = np.asarray(labels, dtype=np.int64)
    hit = 0
    total = 0
    for batch in batches:
        logits = gcn_forward(model, batch, x[batch.nodes])
        yb = y[batch.output_nodes]
        mask = yb >= 0
        hit += int((logits.argmax(axis=1)[mask] == yb[mask]).sum())
        total += int(mask.sum())
    return hit / total if total else 0.0


# --------------------------------------------------------------------------
# Full-graph inference
# --------------------------------------------------------------------------


def full_inference_chunked(
    model: GcnModel, g: CsrGraph, features: FeatureMatrix | np.ndarray, num_chunks: int
) -> np.ndarray:
    """Layer-by-layer full inference with the node dimension processed in
    ``num_chunks`` row blocks; equal to the single-block forward."""
    if num_chunks < 1:
        raise ValueError("num_chunks must be >= 1")
    x = _as_matrix(features)
    ahat = _aggregator(g, model)
    bounds = np.linspace(0, g.num_nodes, num_chunks + 1).astype(np.int64)
    h = x
    last = model.num_layers - 1
    for l, w in enumerate(model.layers):
        z = np.empty((g.num_nodes, w.shape[1]))
        for lo, hi in zip(bounds, bounds[1:]):
            if hi > lo:
                z[lo:hi] = (ahat[lo:hi] @ h) @ w
        h = np.maximum(z, 0.0) if (model.activation == "relu" and l < last) else z
    return h


# --------------------------------------------------------------------------
# Influence oracles
# --------------------------------------------------------------------------


def influence_fd(
    model: GcnModel,
    g: CsrGraph,
    features: FeatureMatrix | np.ndarray,
    u: int,
    v: int,
    step: float = 1e-5,
) -> float:
    """Summed absolute sensitivity of u's logits to v's input features,
    via central finite differences (oracle; small graphs only)."""
    return float(influence_fd_profile(model, g, features, u, np.array([v]), step)[0])


def influence_fd_profile(
    model: GcnModel,
    g: CsrGraph,
    features: FeatureMatrix | np.ndarray,
    u: int,
    candidates: np.ndarray,
    step: float = 1e-5,
) -> np.ndarray:
    """Finite-difference influence of each candidate node on output u."""
    x = _as_matrix(features).copy()  # perturbed in place below
    ahat = _aggregator(g, model)
    if not 0 <= u < g.num_nodes:
        raise ValueError("output node out of range")
    out = np.zeros(len(candidates))
    for idx, v in enumerate(np.asarray(candidates, dtype=np.int64)):
        total = 0.0
        for j in range(x.shape[1]):
            orig = x[v, j]
            x[v, j] = orig + step
            plus = _forward_trace(model, ahat, x)[2][-1][u]
            x[v, j] = orig - step
            minus = _forward_trace(model, ahat, x)[2][-1][u]
            x[v, j] = orig
            total += float(np.abs((plus - minus) / (2.0 * step)).sum())
        out[idx] = total
    return out


def influence_linear_analytic(g: CsrGraph, model: GcnModel, u: int) -> ScoreVec:
    """Closed-form influence profile for identity activation: the L-step
    random-walk row of u scaled by the summed absolute product weight."""
    if model.activation != "identity":
        raise ValueError("closed form only valid for identity activation")
    if model.aggregation != "row_stochastic":
        raise ValueError("closed form assumes row-stochastic aggregation")
    if not 0 <= u < g.num_nodes:
        raise ValueError("output node out of range")
    pt = _walk_matrix_t(g)
    x = np.zeros(g.num_nodes)
    x[u] = 1.0
    for _ in range(model.num_layers):
        x = pt @ x
    prod = model.layers[0]
    for w in model.layers[1:]:
        prod = prod @ w
    return ScoreVec.from_dense(x * float(np.abs(prod).sum()))


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def write_model(model: GcnModel, sink: str | Path | BinaryIO) -> None:
    """Checkpoint file: IBMW v1."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            write_model(model, f)
        return
    write_header(sink, MODEL_MAGIC, 1)
    write_u32(sink, model.num_layers)
    for w in model.layers:
        write_u64(sink, w.shape[0], w.shape[1])
        write_array(sink, w, "<f8")
    write_u8(sink, _ACT_CODES[model.activation])
    write_u8(sink, _AGG_CODES[model.aggregation])


def read_model(source: str | Path | BinaryIO) -> GcnModel:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return read_model(f)
    read_header(source, MODEL_MAGIC)
    num_layers = read_u32(source)
    layers = []
    for _ in range(num_layers):
        rows, cols = read_u64(source, 2)
        layers.append(read_array(source, rows * cols, "<f8").reshape(rows, cols))
    act_code = read_u8(source)
    agg_code = read_u8(source)
    acts = {v: k for k, v in _ACT_CODES.items()}
    aggs = {v: k for k, v in _AGG_CODES.items()}
    if act_code not in acts or agg_code not in aggs:
        raise FormatError("unknown activation or aggregation code")
    try:
        return GcnModel(layers, acts[act_code], aggs[agg_code])
    except ValueError as exc:
        raise FormatError(f"inconsistent model payload: {exc}") from exc


def write_logits(logits: np.ndarray, sink: str | Path | BinaryIO) -> None:
    """Logits file: IBML v1, f64 row-major."""
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError("logits must be a 2-D array")
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            write_logits(logits, f)
        return
    write_header(sink, LOGITS_MAGIC, 1)
    write_u64(sink, logits.shape[0], logits.shape[1])
    write_array(sink, logits, "<f8")


def read_logits(source: str | Path | BinaryIO) -> np.ndarray:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return read_logits(f)
    read_header(source, LOGITS_MAGIC)
    n, c = read_u64(source, 2)
    return read_array(source, n * c, "<f8").reshape(n, c)
