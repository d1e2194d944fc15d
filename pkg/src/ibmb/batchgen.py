"""Auxiliary-node selection and induced-subgraph batch materialization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping

import numpy as np

from ._binio import (
    FormatError,
    read_array,
    read_header,
    read_u8,
    read_u64,
    write_array,
    write_header,
    write_u8,
    write_u64,
)
from .graph import CsrGraph, normalization_weights
from .partition import Partition
from .ppr import PprConfig, ScoreVec, push_ppr, topic_ppr_power, topk

BATCH_MAGIC = b"IBMB"


@dataclass(frozen=True)
class Batch:
    """One training/inference unit: output nodes plus their auxiliary context.

    ``nodes`` are ascending global ids; ``output_mask`` holds local indices
    of the output nodes; ``local_graph`` is the subgraph induced by ``nodes``
    over local indices; ``global_weights`` are the normalization
    coefficients of the surviving edges, copied from the global graph (not
    renormalized to the subgraph).
    """

    batch_id: int
    nodes: np.ndarray
    output_mask: np.ndarray
    local_graph: CsrGraph
    global_weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", np.ascontiguousarray(self.nodes, dtype=np.int64))
        object.__setattr__(
            self, "output_mask", np.ascontiguousarray(self.output_mask, dtype=np.int64)
        )
        if self.global_weights is not None:
            object.__setattr__(
                self, "global_weights", np.ascontiguousarray(self.global_weights, dtype=np.float64)
            )
        if self.batch_id < 0:
            raise ValueError("batch_id must be nonnegative")
        if self.nodes.size == 0:
            raise ValueError("batch must contain at least one node")
        if self.nodes.size > 1 and np.any(np.diff(self.nodes) <= 0):
            raise ValueError("nodes must be strictly ascending")
        if self.output_mask.size == 0:
            raise ValueError("output_mask must be nonempty")
        if self.output_mask.size > 1 and np.any(np.diff(self.output_mask) <= 0):
            raise ValueError("output_mask must be strictly ascending")
        if self.output_mask.min() < 0 or self.output_mask.max() >= self.nodes.size:
            raise ValueError("output_mask indices must be local")
        if self.local_graph.num_nodes != self.nodes.size:
            raise ValueError("local graph size must match node list")
        if self.global_weights is not None and self.global_weights.shape != (
            self.local_graph.num_edges,
        ):
            raise ValueError("global_weights must align with local edges")
        self.nodes.setflags(write=False)
        self.output_mask.setflags(write=False)
        if self.global_weights is not None:
            self.global_weights.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return int(self.nodes.size)

    @property
    def output_nodes(self) -> np.ndarray:
        """Global ids of the batch's output nodes."""
        return self.nodes[self.output_mask]


# --------------------------------------------------------------------------
# Auxiliary-node selection
# --------------------------------------------------------------------------


def select_aux_nodewise(
    group: Iterable[int], ppr_rows: Mapping[int, ScoreVec], k: int
) -> np.ndarray:
    """Union of each output's top-k score entries, outputs force-included."""
    if k < 1:
        raise ValueError("k must be >= 1")
    members = np.unique(np.asarray(list(group), dtype=np.int64))
    if members.size == 0:
        raise ValueError("group must be nonempty")
    parts = [members]
    for u in members:
        if int(u) not in ppr_rows:
            raise KeyError(f"no score row for output node {int(u)}")
        parts.append(topk(ppr_rows[int(u)], k).ids)
    return np.unique(np.concatenate(parts))


def select_aux_batchwise(
    g: CsrGraph, group: Iterable[int], cfg: PprConfig, budget: int
) -> np.ndarray:
    """Top-``budget`` nodes of the group-teleport score vector, plus the group."""
    members = np.unique(np.asarray(list(group), dtype=np.int64))
    if members.size == 0:
        raise ValueError("group must be nonempty")
    if budget < members.size:
        raise ValueError(f"budget {budget} below group size {members.size}")
    pi = topic_ppr_power(g, members, cfg)
    return np.unique(np.concatenate([members, topk(pi, budget).ids]))


# --------------------------------------------------------------------------
# Induced subgraphs
# --------------------------------------------------------------------------


def induce_subgraph(
    g: CsrGraph, nodes: Iterable[int], outputs: Iterable[int], batch_id: int = 0
) -> Batch:
    """Materialize the subgraph induced by ``nodes`` with relabeled ids.

    The local CSR contains (i, j) exactly when (nodes[i], nodes[j]) is a
    global edge. Edge weights, when the global graph carries them, are
    copied over unchanged.
    """
    nodes = np.unique(np.asarray(list(nodes), dtype=np.int64))
    outputs = np.unique(np.asarray(list(outputs), dtype=np.int64))
    if nodes.size == 0:
        raise ValueError("node set must be nonempty")
    if nodes.min() < 0 or nodes.max() >= g.num_nodes:
        raise ValueError("nodes outside the graph")
    mask_pos = np.searchsorted(nodes, outputs)
    if outputs.size == 0 or np.any(mask_pos >= nodes.size) or np.any(
        nodes[np.minimum(mask_pos, nodes.size - 1)] != outputs
    ):
        raise ValueError("outputs must be a nonempty subset of nodes")

    cols_parts: list[np.ndarray] = []
    weight_parts: list[np.ndarray] = []
    counts = np.zeros(nodes.size, dtype=np.int64)
    has_w = g.edge_weight is not None
    for local, node in enumerate(nodes):
        lo, hi = g.row_ptr[node], g.row_ptr[node + 1]
        row = g.col_idx[lo:hi]
        pos = np.searchsorted(nodes, row)
        pos[pos >= nodes.size] = 0
        keep = nodes[pos] == row
        cols_parts.append(pos[keep])
        counts[local] = int(keep.sum())
        if has_w:
            weight_parts.append(g.edge_weight[lo:hi][keep])
    col_idx = np.concatenate(cols_parts) if cols_parts else np.empty(0, dtype=np.int64)
    row_ptr = np.zeros(nodes.size + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    local_graph = CsrGraph(int(nodes.size), int(col_idx.size), row_ptr, col_idx)
    weights = np.concatenate(weight_parts) if has_w and weight_parts else None
    if has_w and weights is None:
        weights = np.empty(0, dtype=np.float64)
    return Batch(batch_id, nodes, mask_pos, local_graph, weights)


def build_batches(
    g: CsrGraph,
    partition: Partition,
    cfg: PprConfig,
    mode: str = "nodewise",
    k: int | None = None,
    budget: int | None = None,
    ppr_rows: Mapping[int, ScoreVec] | None = None,
    renormalize: str | None = None,
) -> list[Batch]:
    """One batch per partition group, batch_id = group index.

    ``nodewise`` unions per-output top-``k`` push scores (rows are computed
    on demand unless ``ppr_rows`` supplies them); ``batchwise`` runs the
    set-teleport power iteration per group with ``budget`` auxiliary nodes
    (default: the group size). ``renormalize`` recomputes normalization
    coefficients on each local subgraph with the named mode instead of
    copying the global ones (ablation path).
    """
    if mode not in ("nodewise", "batchwise"):
        raise ValueError(f"unknown selection mode {mode!r}")
    if mode == "nodewise":
        if k is None:
            raise ValueError("nodewise selection requires k")
        if ppr_rows is None:
            ppr_rows = {int(u): push_ppr(g, int(u), cfg) for u in partition.universe}
    batches = []
    for idx, group in enumerate(partition.groups):
        if mode == "nodewise":
            nodes = select_aux_nodewise(group, ppr_rows, k)
        else:
            nodes = select_aux_batchwise(g, group, cfg, budget if budget is not None else group.size)
        batch = induce_subgraph(g, nodes, group, batch_id=idx)
        if renormalize is not None:
            local_w = normalization_weights(batch.local_graph, renormalize)
            batch = Batch(idx, batch.nodes, batch.output_mask, batch.local_graph, local_w)
        batches.append(batch)
    return batches


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def write_batch(b: Batch, sink: str | Path | BinaryIO) -> None:
    """Batch file: IBMB v1, everything little-endian."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            write_batch(b, f)
        return
    write_header(sink, BATCH_MAGIC, 1)
    write_u64(sink, b.batch_id, b.num_nodes, b.output_mask.size, b.local_graph.num_edges)
    write_array(sink, b.nodes, "<u4")
    write_array(sink, b.output_mask, "<u4")
    write_array(sink, b.local_graph.row_ptr, "<u8")
    write_array(sink, b.local_graph.col_idx, "<u4")
    if b.global_weights is None:
        write_u8(sink, 0)
    else:
        write_u8(sink, 1)
        write_array(sink, b.global_weights, "<f8")


def read_batch(source: str | Path | BinaryIO) -> Batch:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return read_batch(f)
    read_header(source, BATCH_MAGIC)
    batch_id, n_nodes, n_outputs, n_edges = read_u64(source, 4)
    nodes = read_array(source, n_nodes, "<u4").astype(np.int64)
    output_mask = read_array(source, n_outputs, "<u4").astype(np.int64)
    row_ptr = read_array(source, n_nodes + 1, "<u8").astype(np.int64)
    col_idx = read_array(source, n_edges, "<u4").astype(np.int64)
    weights = read_array(source, n_edges, "<f8") if read_u8(source) else None
    try:
        local = CsrGraph(int(n_nodes), int(n_edges), row_ptr, col_idx)
        return Batch(int(batch_id), nodes, output_mask, local, weights)
    except ValueError as exc:
        raise FormatError(f"inconsistent batch payload: {exc}") from exc
