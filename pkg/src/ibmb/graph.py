"""Graph substrate: CSR representation, ingestion, preprocessing, generators.

Every algorithm in this package runs against :class:`CsrGraph`, an immutable
compressed-sparse-row adjacency with optional per-edge normalization weights.
Graphs enter via edge-list text, the binary cache format, or the synthetic
stochastic-block-model generator, and are made symmetric with one self-loop
per node before any propagation method touches them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import BinaryIO, Iterable, TextIO

import numpy as np
import scipy.sparse as sp

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

GRAPH_MAGIC = b"IBMG"
FEATURE_MAGIC = b"IBMF"
UNLABELED = -1

# --------------------------------------------------------------------------
# Core containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CsrGraph:
    """Immutable CSR graph over dense node ids 0..N-1.

    Attributes
    ----------
    num_nodes : int
        Node count N.
    num_edges : int
        Directed edge-slot count E (a symmetric edge occupies two slots).
    row_ptr : int64[N+1]
        Monotone offsets into ``col_idx``; row u spans
        ``col_idx[row_ptr[u]:row_ptr[u+1]]``.
    col_idx : int64[E]
        Neighbor ids, strictly ascending within each row (no duplicates).
    edge_weight : float64[E], optional
        Per-edge normalization coefficients aligned with ``col_idx``.
    """

    num_nodes: int
    num_edges: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    edge_weight: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "row_ptr", np.ascontiguousarray(self.row_ptr, dtype=np.int64))
        object.__setattr__(self, "col_idx", np.ascontiguousarray(self.col_idx, dtype=np.int64))
        if self.edge_weight is not None:
            object.__setattr__(
                self, "edge_weight", np.ascontiguousarray(self.edge_weight, dtype=np.float64)
            )
        self._validate()
        for arr in (self.row_ptr, self.col_idx, self.edge_weight):
            if arr is not None:
                arr.setflags(write=False)

    def _validate(self) -> None:
        n, e = self.num_nodes, self.num_edges
        if n < 0:
            raise ValueError("num_nodes must be nonnegative")
        if self.row_ptr.shape != (n + 1,):
            raise ValueError(f"row_ptr must have length N+1={n + 1}")
        if self.col_idx.shape != (e,):
            raise ValueError(f"col_idx must have length E={e}")
        if n >= 0 and (self.row_ptr[0] != 0 or self.row_ptr[n] != e):
            raise ValueError("row_ptr must start at 0 and end at E")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if e > 0 and (self.col_idx.min() < 0 or self.col_idx.max() >= n):
            raise ValueError("col_idx entries must lie in [0, N)")
        if e > 1:
            ascending = np.diff(self.col_idx) > 0
            # positions that cross a row boundary are exempt from ordering
            bounds = self.row_ptr[1:-1]
            bounds = bounds[(bounds > 0) & (bounds < e)]
            ascending[bounds - 1] = True
            if not ascending.all():
                raise ValueError("col_idx must be strictly ascending within each row")
        if self.edge_weight is not None:
            if self.edge_weight.shape != (e,):
                raise ValueError("edge_weight must have one entry per edge slot")
            if e > 0 and (not np.isfinite(self.edge_weight).all() or self.edge_weight.min() < 0):
                raise ValueError("edge weights must be finite and nonnegative")

    # ---- views -----------------------------------------------------------

    @property
    def degrees(self) -> np.ndarray:
        """Out-degree per node (includes self-loops)."""
        return np.diff(self.row_ptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.col_idx[self.row_ptr[v] : self.row_ptr[v + 1]]

    def to_scipy(self, weights: np.ndarray | None = None) -> sp.csr_matrix:
        """Adjacency as a scipy CSR matrix, with unit data unless weighted."""
        if weights is None:
            weights = self.edge_weight
        data = np.ones(self.num_edges) if weights is None else np.asarray(weights, dtype=np.float64)
        return sp.csr_matrix(
            (data, self.col_idx, self.row_ptr), shape=(self.num_nodes, self.num_nodes)
        )

    def is_preprocessed(self) -> bool:
        """True when symmetric and every node carries a self-loop."""
        n = self.num_nodes
        loops = np.zeros(n, dtype=bool)
        rows = np.repeat(np.arange(n), self.degrees)
        loops[rows[rows == self.col_idx]] = True
        if not loops.all():
            return False
        a = self.to_scipy(weights=np.ones(self.num_edges))
        return (a != a.T).nnz == 0


@dataclass(frozen=True)
class NodeLabels:
    """Per-node class ids in [0, C), with -1 marking unlabeled nodes."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", np.ascontiguousarray(self.labels, dtype=np.int64))
        lab = self.labels
        if lab.size and (lab.max() >= self.num_classes or lab.min() < UNLABELED):
            raise ValueError("labels must be -1 or in [0, num_classes)")
        lab.setflags(write=False)


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense N x F node features, stored float32 to mirror the on-disk layout."""

    rows: int
    cols: int
    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "data", np.ascontiguousarray(self.data, dtype=np.float32).reshape(self.rows, self.cols)
        )
        if not np.isfinite(self.data).all():
            raise ValueError("features must be finite")
        self.data.setflags(write=False)


# --------------------------------------------------------------------------
# Construction
# --------------------------------------------------------------------------


def _csr_from_pairs(src: np.ndarray, dst: np.ndarray, num_nodes: int) -> CsrGraph:
    """Build a CSR graph from directed (src, dst) pairs, collapsing duplicates."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.size:
        code = np.unique(src * np.int64(num_nodes) + dst)
        src = code // num_nodes
        dst = code % num_nodes
    counts = np.bincount(src, minlength=num_nodes)
    row_ptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return CsrGraph(num_nodes, int(dst.size), row_ptr, dst)


def load_edge_list(source: str | Path | TextIO, num_nodes: int | None = None) -> CsrGraph:
    """Parse "u v" edge-list text into a directed CSR graph.

    Lines whose first non-blank character is ``#`` are comments; blank lines
    are skipped; duplicate edges collapse to one slot. Node count is
    ``num_nodes`` when given (ids must fit), else max id + 1.

    Raises
    ------
    ValueError
        On a malformed line (message carries the 1-based line number) or an
        id outside the declared node range.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as f:
            return load_edge_list(f, num_nodes)
    us: list[int] = []
    vs: list[int] = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'u v', got {raw.rstrip()!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer node id in {raw.rstrip()!r}") from None
        if u < 0 or v < 0:
            raise ValueError(f"line {lineno}: negative node id")
        if num_nodes is not None and (u >= num_nodes or v >= num_nodes):
            raise ValueError(f"line {lineno}: node id exceeds declared count {num_nodes}")
        us.append(u)
        vs.append(v)
    n = num_nodes if num_nodes is not None else (max(us + vs) + 1 if us else 0)
    return _csr_from_pairs(np.array(us, dtype=np.int64), np.array(vs, dtype=np.int64), n)


def preprocess(g: CsrGraph) -> CsrGraph:
    """Symmetric closure plus one self-loop per node; idempotent.

    Edge weights are dropped: normalization coefficients are only meaningful
    for the preprocessed structure and are recomputed via
    :func:`normalization_weights`.
    """
    n = g.num_nodes
    src = np.repeat(np.arange(n, dtype=np.int64), g.degrees)
    dst = g.col_idx
    loops = np.arange(n, dtype=np.int64)
    return _csr_from_pairs(
        np.concatenate([src, dst, loops]), np.concatenate([dst, src, loops]), n
    )


def normalization_weights(g: CsrGraph, mode: str) -> np.ndarray:
    """Per-edge aggregation coefficients for a preprocessed graph.

    ``row_stochastic`` assigns 1/deg(u) to edge (u, v) so each row sums to
    one; ``symmetric`` assigns 1/sqrt(deg(u) * deg(v)).
    """
    if mode not in ("row_stochastic", "symmetric"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    deg = g.degrees
    if np.any(deg == 0):
        raise ValueError("normalization requires degree >= 1 everywhere (preprocess first)")
    src = np.repeat(np.arange(g.num_nodes, dtype=np.int64), deg)
    if mode == "row_stochastic":
        return 1.0 / deg[src]
    return 1.0 / np.sqrt(deg[src].astype(np.float64) * deg[g.col_idx])


def with_normalization(g: CsrGraph, mode: str) -> CsrGraph:
    """Copy of ``g`` carrying the chosen normalization as edge weights."""
    return replace(g, edge_weight=normalization_weights(g, mode))


# --------------------------------------------------------------------------
# Synthetic stochastic block model
# --------------------------------------------------------------------------


def _sample_distinct(m: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k distinct integers from [0, m), sorted; rejection-based, seed-stable."""
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k > m:
        raise ValueError("cannot draw more distinct values than the range holds")
    out = np.unique(rng.integers(0, m, size=k, dtype=np.int64))
    while out.size < k:
        extra = rng.integers(0, m, size=2 * (k - out.size) + 8, dtype=np.int64)
        out = np.unique(np.concatenate([out, extra]))
    if out.size > k:
        keep = rng.choice(out.size, size=k, replace=False)
        out = np.sort(out[keep])
    return out


def _decode_triangle(t: np.ndarray, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Map flat upper-triangle indices to (i, j) pairs with i < j < s."""
    i_all = np.arange(s, dtype=np.int64)
    offsets = i_all * (2 * s - i_all - 1) // 2  # pairs with first index < i
    i = np.searchsorted(offsets, t, side="right") - 1
    j = t - offsets[i] + i + 1
    return i, j


def generate_sbm(
    n: int,
    num_classes: int,
    p_in: float,
    p_out: float,
    feature_dim: int,
    noise: float,
    seed: int,
) -> tuple[CsrGraph, NodeLabels, FeatureMatrix]:
    """Equal-block stochastic block model with class-centroid features.

    Blocks are contiguous id ranges of size n / num_classes. Each intra-block
    pair is an edge with probability ``p_in`` and each inter-block pair with
    ``p_out`` (drawn as exact binomial counts over distinct pairs). Features
    are a one-hot class centroid (dimension ``class % feature_dim``) plus
    Gaussian noise of the given scale. The returned graph is already
    preprocessed; everything is deterministic in ``seed``.
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ValueError("need 0 <= p_out <= p_in <= 1")
    if num_classes < 1 or n % num_classes != 0:
        raise ValueError("n must be divisible by num_classes")
    if feature_dim < 1:
        raise ValueError("feature_dim must be >= 1")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    s = n // num_classes
    u_parts: list[np.ndarray] = []
    v_parts: list[np.ndarray] = []
    for c in range(num_classes):
        base = c * s
        m = s * (s - 1) // 2
        t = _sample_distinct(m, int(rng.binomial(m, p_in)), rng)
        i, j = _decode_triangle(t, s)
        u_parts.append(base + i)
        v_parts.append(base + j)
    for c1 in range(num_classes):
        for c2 in range(c1 + 1, num_classes):
            m = s * s
            t = _sample_distinct(m, int(rng.binomial(m, p_out)), rng)
            u_parts.append(c1 * s + t // s)
            v_parts.append(c2 * s + t % s)
    u = np.concatenate(u_parts) if u_parts else np.empty(0, dtype=np.int64)
    v = np.concatenate(v_parts) if v_parts else np.empty(0, dtype=np.int64)
    g = preprocess(_csr_from_pairs(u, v, n))

    labels = NodeLabels(np.repeat(np.arange(num_classes, dtype=np.int64), s), num_classes)
    feats = noise * rng.standard_normal((n, feature_dim))
    feats[np.arange(n), labels.labels % feature_dim] += 1.0
    return g, labels, FeatureMatrix(n, feature_dim, feats.astype(np.float32))


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def write_graph(g: CsrGraph, sink: str | Path | BinaryIO) -> None:
    """Binary CSR cache: IBMG v1."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            write_graph(g, f)
        return
    write_header(sink, GRAPH_MAGIC, 1)
    write_u64(sink, g.num_nodes, g.num_edges)
    write_array(sink, g.row_ptr, "<u8")
    write_array(sink, g.col_idx, "<u4")
    if g.edge_weight is None:
        write_u8(sink, 0)
    else:
        write_u8(sink, 1)
        write_array(sink, g.edge_weight, "<f8")


def read_graph(source: str | Path | BinaryIO) -> CsrGraph:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return read_graph(f)
    read_header(source, GRAPH_MAGIC)
    n, e = read_u64(source, 2)
    row_ptr = read_array(source, n + 1, "<u8").astype(np.int64)
    col_idx = read_array(source, e, "<u4").astype(np.int64)
    weights = read_array(source, e, "<f8") if read_u8(source) else None
    try:
        return CsrGraph(n, e, row_ptr, col_idx, weights)
    except ValueError as exc:
        raise FormatError(f"inconsistent CSR payload: {exc}") from exc


def write_features(fm: FeatureMatrix, sink: str | Path | BinaryIO) -> None:
    """Feature file: IBMF v1, f32 row-major."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            write_features(fm, f)
        return
    write_header(sink, FEATURE_MAGIC, 1)
    write_u64(sink, fm.rows, fm.cols)
    write_array(sink, fm.data, "<f4")


def read_features(source: str | Path | BinaryIO) -> FeatureMatrix:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return read_features(f)
    read_header(source, FEATURE_MAGIC)
    n, c = read_u64(source, 2)
    data = read_array(source, n * c, "<f4").reshape(n, c)
    return FeatureMatrix(n, c, data)


def write_labels(labels: NodeLabels, sink: str | Path) -> None:
    with open(sink, "w", encoding="utf-8") as f:
        for v in labels.labels:
            f.write(f"{int(v)}\n")


def read_labels(source: str | Path, num_classes: int | None = None) -> NodeLabels:
    values: list[int] = []
    with open(source, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError:
                raise ValueError(f"line {lineno}: labels must be integers") from None
    arr = np.array(values, dtype=np.int64)
    if num_classes is None:
        num_classes = int(arr.max()) + 1 if arr.size and arr.max() >= 0 else 1
    return NodeLabels(arr, num_classes)


def iter_edges(g: CsrGraph) -> Iterable[tuple[int, int]]:
    """Yield directed (u, v) edge slots in CSR order (test/debug helper)."""
    for u in range(g.num_nodes):
        for v in g.neighbors(u):
            yield u, int(v)
