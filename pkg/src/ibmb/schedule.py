"""Batch ordering for training: label distances, max-distance cycles, sampling."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .batchgen import Batch
from .graph import NodeLabels

SCHEDULE_HEADER = "# ibmb-schedule v1 kind={kind} seed={seed}"
SCHEDULE_KINDS = ("fixed_cycle", "weighted_sampling", "input_order")
DEFAULT_SMOOTHING = 1e-6
DEFAULT_COOLING = 0.999


@dataclass(frozen=True)
class Schedule:
    """Batch visiting plan. ``order`` is a permutation of batch ids; for
    ``weighted_sampling`` it only fixes the id universe and the actual order
    is drawn per epoch from ``seed``."""

    kind: str
    order: np.ndarray
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        object.__setattr__(self, "order", np.ascontiguousarray(self.order, dtype=np.int64))
        if not np.array_equal(np.sort(self.order), np.arange(self.order.size)):
            raise ValueError("order must be a permutation of 0..b-1")
        self.order.setflags(write=False)

    @property
    def num_batches(self) -> int:
        return int(self.order.size)


def input_order_schedule(num_batches: int) -> Schedule:
    return Schedule("input_order", np.arange(num_batches, dtype=np.int64))


# --------------------------------------------------------------------------
# Label distributions and distances
# --------------------------------------------------------------------------


def label_distribution(batch: Batch, labels: NodeLabels, smoothing: float) -> np.ndarray:
    """Smoothed class distribution over the batch's labeled output nodes."""
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    y = labels.labels[batch.output_nodes]
    y = y[y >= 0]
    c = labels.num_classes
    counts = np.bincount(y, minlength=c).astype(np.float64)
    total = counts.sum()
    if total == 0 and smoothing == 0:
        raise ValueError("batch has no labeled outputs and smoothing is zero")
    return (counts + smoothing) / (total + c * smoothing)


def pairwise_distances(dists: Sequence[np.ndarray]) -> np.ndarray:
    """Symmetrized KL divergence between every pair of label distributions."""
    mat = np.asarray(dists, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError("expected a list of equal-length probability vectors")
    if np.any(mat <= 0):
        raise ValueError("distributions must be strictly positive; smooth them upstream")
    logs = np.log(mat)
    b = mat.shape[0]
    out = np.zeros((b, b))
    for a in range(b):
        diff = logs[a] - logs  # log(p_a) - log(p_b) for all b
        out[a] = ((mat[a] - mat) * diff).sum(axis=1)
    np.fill_diagonal(out, 0.0)
    return out


def cycle_objective(d: np.ndarray, order: np.ndarray) -> float:
    """Total distance over consecutive pairs of the cycle, wrap-around included."""
    order = np.asarray(order, dtype=np.int64)
    return float(d[order, np.roll(order, -1)].sum())


# --------------------------------------------------------------------------
# Max-distance cycle via simulated annealing
# --------------------------------------------------------------------------


def max_tsp_anneal(
    d: np.ndarray,
    iters: int | None = None,
    t0: float | None = None,
    cooling: float = DEFAULT_COOLING,
    seed: int = 0,
) -> Schedule:
    """Approximate maximum-distance batch cycle.

    Simulated annealing over cyclic permutations using 2-opt segment
    reversals and position swaps; worse moves are accepted with probability
    exp(delta / T) under a geometric temperature ladder. Returns the best
    cycle seen, so the objective never falls below the identity cycle's.
    """
    d = np.asarray(d, dtype=np.float64)
    b = d.shape[0]
    if d.shape != (b, b) or b < 2:
        raise ValueError("need a square distance matrix over at least 2 batches")
    if iters is None:
        iters = 20_000 * b
    if t0 is None:
        off = d[~np.eye(b, dtype=bool)]
        t0 = float(off.mean()) if off.size else 1.0
    if t0 <= 0:
        t0 = 1.0
    rng = np.random.default_rng(seed)
    perm = np.arange(b, dtype=np.int64)
    best = perm.copy()
    cur_obj = cycle_objective(d, perm)
    best_obj = cur_obj
    temp = t0

    def edge(p: int) -> float:
        return d[perm[p], perm[(p + 1) % b]]

    for _ in range(iters):
        i = int(rng.integers(b))
        j = int(rng.integers(b))
        if i == j:
            temp *= cooling
            continue
        if i > j:
            i, j = j, i
        two_opt = rng.random() < 0.5
        if two_opt and j - i >= b - 1:
            temp *= cooling
            continue
        # a 2-opt reversal of perm[i..j] only changes the two boundary edges
        # (distances are symmetric); a swap touches up to four edges
        slots = {(i - 1) % b, j} if two_opt else {(i - 1) % b, i, (j - 1) % b, j}
        before = sum(edge(p) for p in slots)
        if two_opt:
            perm[i : j + 1] = perm[i : j + 1][::-1]
        else:
            perm[i], perm[j] = perm[j], perm[i]
        delta = sum(edge(p) for p in slots) - before
        if delta >= 0 or rng.random() < np.exp(delta / temp):
            cur_obj += delta
            if cur_obj > best_obj:
                best_obj = cur_obj
                best = perm.copy()
        elif two_opt:
            perm[i : j + 1] = perm[i : j + 1][::-1]
        else:
            perm[i], perm[j] = perm[j], perm[i]
        temp *= cooling
    return Schedule("fixed_cycle", best, seed)


# --------------------------------------------------------------------------
# Distance-weighted sampling
# --------------------------------------------------------------------------


def weighted_epoch_order(d: np.ndarray, start: int, seed: int) -> np.ndarray:
    """One epoch's visiting order: each unvisited batch is drawn with
    probability proportional to its distance to the current batch (uniform
    when all remaining distances are zero), so every batch appears once."""
    rng = np.random.default_rng(seed)
    return _weighted_order(np.asarray(d, dtype=np.float64), start, rng)


def _weighted_order(d: np.ndarray, start: int, rng: np.random.Generator) -> np.ndarray:
    b = d.shape[0]
    if not 0 <= start < b:
        raise ValueError("start batch out of range")
    order = np.empty(b, dtype=np.int64)
    order[0] = start
    remaining = np.ones(b, dtype=bool)
    remaining[start] = False
    cur = start
    for step in range(1, b):
        cand = np.nonzero(remaining)[0]
        weights = d[cur, cand]
        total = weights.sum()
        if total <= 0:
            cur = int(cand[int(rng.integers(cand.size))])
        else:
            cur = int(rng.choice(cand, p=weights / total))
        order[step] = cur
        remaining[cur] = False
    return order


def epoch_order(
    sched: Schedule, epoch: int, distances: np.ndarray | None = None, extra_seed: int = 0
) -> np.ndarray:
    """Resolve the batch order for one epoch (fixed kinds ignore the epoch)."""
    if sched.kind in ("fixed_cycle", "input_order"):
        return sched.order
    if distances is None:
        raise ValueError("weighted_sampling needs the batch distance matrix")
    rng = np.random.default_rng([sched.seed, extra_seed, epoch])
    start = int(rng.integers(sched.num_batches))
    return _weighted_order(np.asarray(distances, dtype=np.float64), start, rng)


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def write_schedule(s: Schedule, sink: str | Path) -> None:
    with open(sink, "w", encoding="utf-8") as f:
        f.write(SCHEDULE_HEADER.format(kind=s.kind, seed=s.seed) + "\n")
        for v in s.order:
            f.write(f"{int(v)}\n")


def read_schedule(source: str | Path) -> Schedule:
    with open(source, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        m = re.fullmatch(r"# ibmb-schedule v1 kind=(\w+) seed=(-?\d+)", header)
        if not m:
            raise ValueError(f"bad schedule header: {header!r}")
        order = [int(line.strip()) for line in f if line.strip()]
    return Schedule(m.group(1), np.array(order, dtype=np.int64), int(m.group(2)))
