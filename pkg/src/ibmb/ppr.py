"""Personalized PageRank: per-root push, set-teleport power iteration, oracles.

All operations share one operator convention: with the row-stochastic walk
matrix P = D^-1 A of a preprocessed graph, the score vector of a teleport
distribution t is the fixed point

    pi = alpha * t + (1 - alpha) * pi P,

which is row ``t`` of the dense resolvent alpha * (I - (1 - alpha) P)^-1.
The push algorithm and the power iteration both approximate that row; the
dense solver below is the exact oracle against which they are tested.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np
import scipy.sparse as sp

from ._binio import (
    FormatError,
    read_array,
    read_f64,
    read_header,
    read_u64,
    write_array,
    write_f64,
    write_header,
    write_u64,
)
from .graph import CsrGraph, _csr_from_pairs

SCORES_MAGIC = b"IBMP"
_NO_ROOT = (1 << 64) - 1
ORACLE_NODE_LIMIT = 2000
POWER_TRUNCATION = 1e-12


@dataclass(frozen=True)
class PprConfig:
    """Teleport probability, push threshold, and power-iteration count."""

    alpha: float = 0.25
    epsilon: float = 2e-4
    power_iters: int = 50

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.power_iters < 1:
            raise ValueError("power_iters must be >= 1")


@dataclass(frozen=True)
class ScoreVec:
    """Sparse nonnegative per-node scores, ids ascending, zeros omitted.

    ``residual_mass`` is the leftover push mass (zero for exact and power
    results), so for push outputs sum(scores) + residual_mass ~ 1.
    """

    ids: np.ndarray
    scores: np.ndarray
    residual_mass: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", np.ascontiguousarray(self.ids, dtype=np.int64))
        object.__setattr__(self, "scores", np.ascontiguousarray(self.scores, dtype=np.float64))
        if self.ids.shape != self.scores.shape or self.ids.ndim != 1:
            raise ValueError("ids and scores must be 1-D arrays of equal length")
        if self.ids.size > 1 and np.any(np.diff(self.ids) <= 0):
            raise ValueError("ids must be strictly ascending")
        if self.ids.size and (self.ids.min() < 0 or self.scores.min() <= 0.0):
            raise ValueError("ids must be nonnegative and scores strictly positive")
        if self.residual_mass < 0.0:
            raise ValueError("residual_mass must be nonnegative")
        self.ids.setflags(write=False)
        self.scores.setflags(write=False)

    @property
    def nnz(self) -> int:
        return int(self.ids.size)

    def total(self) -> float:
        return float(self.scores.sum())

    def to_dense(self, num_nodes: int) -> np.ndarray:
        out = np.zeros(num_nodes)
        out[self.ids] = self.scores
        return out

    def restrict(self, keep: np.ndarray) -> "ScoreVec":
        """Entries whose id is in ``keep`` (sorted array of node ids)."""
        keep = np.asarray(keep, dtype=np.int64)
        pos = np.searchsorted(keep, self.ids)
        pos[pos >= keep.size] = 0
        mask = keep[pos] == self.ids if keep.size else np.zeros(self.nnz, dtype=bool)
        return ScoreVec(self.ids[mask], self.scores[mask], self.residual_mass)

    def items(self) -> Iterable[tuple[int, float]]:
        return zip(self.ids.tolist(), self.scores.tolist())

    @classmethod
    def from_dense(cls, vec: np.ndarray, min_score: float = 0.0, residual: float = 0.0) -> "ScoreVec":
        vec = np.asarray(vec, dtype=np.float64)
        ids = np.nonzero(vec >= min_score if min_score > 0.0 else vec > 0.0)[0]
        ids = ids[vec[ids] > 0.0]
        return cls(ids, vec[ids], residual)


def _walk_matrix_t(g: CsrGraph) -> sp.csr_matrix:
    """Transpose of P = D^-1 A, so that pi P == _walk_matrix_t(g) @ pi."""
    deg = g.degrees
    if np.any(deg == 0):
        raise ValueError("walk matrix needs degree >= 1 everywhere (preprocess first)")
    src = np.repeat(np.arange(g.num_nodes, dtype=np.int64), deg)
    p = sp.csr_matrix(
        (1.0 / deg[src], g.col_idx, g.row_ptr), shape=(g.num_nodes, g.num_nodes)
    )
    return p.T.tocsr()


def _teleport_vector(g: CsrGraph, teleport_set: Iterable[int]) -> np.ndarray:
    members = np.unique(np.asarray(list(teleport_set), dtype=np.int64))
    if members.size == 0:
        raise ValueError("teleport set must be nonempty")
    if members.min() < 0 or members.max() >= g.num_nodes:
        raise ValueError("teleport set contains out-of-range node ids")
    t = np.zeros(g.num_nodes)
    t[members] = 1.0 / members.size
    return t


# --------------------------------------------------------------------------
# Push-flow approximation
# --------------------------------------------------------------------------


def push_ppr_counted(
    g: CsrGraph, root: int, cfg: PprConfig, max_sweeps: int | None = None
) -> tuple[ScoreVec, int]:
    """Push approximation together with the number of push operations.

    Maintains an estimate p and residual r (r starts as the root indicator).
    While some node v has r(v) > epsilon * deg(v): move alpha * r(v) onto
    p(v) and spread the remaining (1 - alpha) * r(v) uniformly over v's
    out-neighbors. Candidates are processed in FIFO order seeded by the
    root, so the run is deterministic; the converged estimate satisfies
    |p(v) - pi(v)| <= epsilon * deg(v) against the exact root row.

    ``max_sweeps`` optionally caps the number of frontier sweeps (one sweep
    drains the candidates present when it starts) for parity experiments
    with fixed-iteration variants; the default runs to convergence.
    """
    n = g.num_nodes
    if not 0 <= root < n:
        raise ValueError(f"root {root} out of range for N={n}")
    deg = g.degrees
    if deg[root] == 0:
        raise ValueError("root has degree 0; preprocess the graph first")
    alpha = cfg.alpha
    thresh = cfg.epsilon * deg
    p = np.zeros(n)
    r = np.zeros(n)
    r[root] = 1.0
    in_queue = np.zeros(n, dtype=bool)
    queue: deque[int] = deque()
    if r[root] > thresh[root]:
        queue.append(root)
        in_queue[root] = True
    pushes = 0
    sweeps = 0
    while queue and (max_sweeps is None or sweeps < max_sweeps):
        for _ in range(len(queue)):
            v = queue.popleft()
            in_queue[v] = False
            rv = r[v]
            if rv <= thresh[v]:
                continue
            r[v] = 0.0
            p[v] += alpha * rv
            pushes += 1
            nbrs = g.col_idx[g.row_ptr[v] : g.row_ptr[v + 1]]
            r[nbrs] += (1.0 - alpha) * rv / deg[v]
            raised = nbrs[(r[nbrs] > thresh[nbrs]) & ~in_queue[nbrs]]
            in_queue[raised] = True
            queue.extend(raised.tolist())
        sweeps += 1
    return ScoreVec.from_dense(p, residual=float(r.sum())), pushes


def push_ppr(g: CsrGraph, root: int, cfg: PprConfig, max_sweeps: int | None = None) -> ScoreVec:
    """Per-root push approximation; see :func:`push_ppr_counted`."""
    return push_ppr_counted(g, root, cfg, max_sweeps)[0]


# --------------------------------------------------------------------------
# Set-teleport power iteration and heat kernel
# --------------------------------------------------------------------------


def topic_ppr_power(g: CsrGraph, teleport_set: Iterable[int], cfg: PprConfig) -> ScoreVec:
    """Power iteration for a teleport distribution spread over a node set.

    Runs ``cfg.power_iters`` steps of pi <- alpha * t + (1 - alpha) * pi P
    from pi = t, then drops entries below 1e-12. The L1 distance to the
    exact fixed point after k steps is at most 2 * (1 - alpha)^k.
    """
    t = _teleport_vector(g, teleport_set)
    pt = _walk_matrix_t(g)
    pi = t.copy()
    for _ in range(cfg.power_iters):
        pi = cfg.alpha * t + (1.0 - cfg.alpha) * (pt @ pi)
    return ScoreVec.from_dense(pi, min_score=POWER_TRUNCATION)


def heat_kernel_power(
    g: CsrGraph, teleport_set: Iterable[int], t: float, terms: int
) -> ScoreVec:
    """Truncated heat-kernel diffusion exp(-t) * sum_k (t^k / k!) P^k applied
    to the teleport distribution; an alternative local scoring method."""
    if t <= 0.0:
        raise ValueError("diffusion time must be positive")
    if terms < 0:
        raise ValueError("terms must be nonnegative")
    vec = _teleport_vector(g, teleport_set)
    pt = _walk_matrix_t(g)
    coef = float(np.exp(-t))
    acc = coef * vec
    for k in range(1, terms + 1):
        vec = pt @ vec
        coef *= t / k
        acc = acc + coef * vec
    return ScoreVec.from_dense(acc)


# --------------------------------------------------------------------------
# Dense oracle and selection helpers
# --------------------------------------------------------------------------


def exact_ppr(g: CsrGraph, alpha: float) -> np.ndarray:
    """Dense N x N resolvent alpha * (I - (1 - alpha) * D^-1 A)^-1.

    Row u is the exact score vector for root u; rows sum to 1. Restricted to
    small graphs: this is the oracle, not the scalable path.
    """
    n = g.num_nodes
    if n > ORACLE_NODE_LIMIT:
        raise ValueError(f"exact solver limited to N <= {ORACLE_NODE_LIMIT}, got {n}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    deg = g.degrees
    if np.any(deg == 0):
        raise ValueError("exact solver needs degree >= 1 everywhere")
    p = g.to_scipy(weights=np.ones(g.num_edges)).toarray() / deg[:, None]
    pi = np.linalg.solve(np.eye(n) - (1.0 - alpha) * p, alpha * np.eye(n))
    return np.maximum(pi, 0.0)


def topk(v: ScoreVec, k: int) -> ScoreVec:
    """The k highest-score entries, ties broken toward smaller node ids."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if v.nnz <= k:
        return ScoreVec(v.ids, v.scores, v.residual_mass)
    order = np.lexsort((v.ids, -v.scores))[:k]
    order.sort()
    return ScoreVec(v.ids[order], v.scores[order], v.residual_mass)


def sample_degree(g: CsrGraph, max_deg: int, seed: int) -> CsrGraph:
    """Downsample rows to at most ``max_deg`` neighbors, deterministically.

    Intended for unusually dense graphs before per-root pushes; the result
    is directed (symmetry is not re-established) and drops edge weights.
    """
    if max_deg < 1:
        raise ValueError("max_deg must be >= 1")
    rng = np.random.default_rng(seed)
    deg = g.degrees
    src_parts: list[np.ndarray] = []
    dst_parts: list[np.ndarray] = []
    for v in range(g.num_nodes):
        nbrs = g.neighbors(v)
        if deg[v] > max_deg:
            nbrs = np.sort(rng.choice(nbrs, size=max_deg, replace=False))
        src_parts.append(np.full(nbrs.size, v, dtype=np.int64))
        dst_parts.append(nbrs)
    return _csr_from_pairs(
        np.concatenate(src_parts) if src_parts else np.empty(0, np.int64),
        np.concatenate(dst_parts) if dst_parts else np.empty(0, np.int64),
        g.num_nodes,
    )


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

_PAIR_DTYPE = np.dtype([("id", "<u4"), ("score", "<f8")])


def write_scores(v: ScoreVec, sink: str | Path | BinaryIO, root: int | None = None) -> None:
    """Score-vector file: IBMP v1."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as f:
            write_scores(v, f, root)
        return
    write_header(sink, SCORES_MAGIC, 1)
    write_u64(sink, _NO_ROOT if root is None else root, v.nnz)
    pairs = np.empty(v.nnz, dtype=_PAIR_DTYPE)
    pairs["id"] = v.ids
    pairs["score"] = v.scores
    sink.write(pairs.tobytes())
    write_f64(sink, v.residual_mass)


def read_scores(source: str | Path | BinaryIO) -> tuple[ScoreVec, int | None]:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return read_scores(f)
    read_header(source, SCORES_MAGIC)
    root_raw, nnz = read_u64(source, 2)
    pairs = read_array(source, nnz, _PAIR_DTYPE)
    residual = read_f64(source)
    try:
        vec = ScoreVec(pairs["id"].astype(np.int64), pairs["score"], residual)
    except ValueError as exc:
        raise FormatError(f"inconsistent score payload: {exc}") from exc
    return vec, None if root_raw == _NO_ROOT else int(root_raw)
