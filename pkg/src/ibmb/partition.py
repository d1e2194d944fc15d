"""Output-node partitioning: score-driven greedy merging and multilevel cuts."""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .graph import CsrGraph
from .ppr import ScoreVec

PARTITION_HEADER = "# ibmb-partition v1 B={B}"


@dataclass(frozen=True)
class Partition:
    """Disjoint nonempty groups exactly covering ``universe``; sizes <= max_size."""

    groups: tuple[np.ndarray, ...]
    universe: np.ndarray
    max_size: int

    def __post_init__(self) -> None:
        groups = tuple(np.ascontiguousarray(grp, dtype=np.int64) for grp in self.groups)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "universe", np.ascontiguousarray(self.universe, dtype=np.int64))
        if self.max_size < 1:
            raise ValueError("max_size must be >= 1")
        for grp in groups:
            if grp.size == 0:
                raise ValueError("empty group")
            if grp.size > self.max_size:
                raise ValueError(f"group of size {grp.size} exceeds max_size {self.max_size}")
            if grp.size > 1 and np.any(np.diff(grp) <= 0):
                raise ValueError("group members must be strictly ascending")
        allm = np.concatenate(groups) if groups else np.empty(0, dtype=np.int64)
        if allm.size != np.unique(allm).size:
            raise ValueError("groups overlap")
        if not np.array_equal(np.sort(allm), self.universe):
            raise ValueError("groups must cover the universe exactly")
        for arr in (*groups, self.universe):
            arr.setflags(write=False)

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def sizes(self) -> list[int]:
        return [int(grp.size) for grp in self.groups]


class _UnionFind:
    def __init__(self, items: np.ndarray) -> None:
        self.parent = {int(v): int(v) for v in items}
        self.size = {int(v): 1 for v in items}

    def find(self, v: int) -> int:
        root = v
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[v] != root:
            self.parent[v], v = root, self.parent[v]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb] or (self.size[ra] == self.size[rb] and rb < ra):
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def distance_partition(
    ppr_rows: Mapping[int, ScoreVec], outputs: np.ndarray, max_size: int, seed: int
) -> Partition:
    """Greedy merge of output nodes by descending pairwise score.

    Starts from singletons, scans all (u, v, score) entries with both ids in
    ``outputs`` sorted by score descending (ties by ascending (min, max) id
    pair) and merges the containing groups whenever the combined size stays
    within ``max_size``. Leftovers are then merged smallest-two-first, with
    seed-driven uniform choice among size ties, until no pair fits.
    """
    if max_size < 1:
        raise ValueError("max batch size must be >= 1")
    outputs = np.unique(np.asarray(outputs, dtype=np.int64))
    missing = [int(u) for u in outputs if u not in ppr_rows]
    if missing:
        raise KeyError(f"missing score rows for outputs {missing[:5]}")
    us, vs, ss = [], [], []
    for u in outputs:
        row = ppr_rows[int(u)].restrict(outputs)
        keep = row.ids != u
        us.append(np.full(int(keep.sum()), u, dtype=np.int64))
        vs.append(row.ids[keep])
        ss.append(row.scores[keep])
    u_arr = np.concatenate(us) if us else np.empty(0, dtype=np.int64)
    v_arr = np.concatenate(vs) if vs else np.empty(0, dtype=np.int64)
    s_arr = np.concatenate(ss) if ss else np.empty(0)
    lo = np.minimum(u_arr, v_arr)
    hi = np.maximum(u_arr, v_arr)
    order = np.lexsort((hi, lo, -s_arr))

    uf = _UnionFind(outputs)
    for idx in order:
        a, b = int(u_arr[idx]), int(v_arr[idx])
        ra, rb = uf.find(a), uf.find(b)
        if ra != rb and uf.size[ra] + uf.size[rb] <= max_size:
            uf.union(ra, rb)

    # leftover stage: any pair's combined size is bounded below by the two
    # smallest groups, so merging stops exactly when those no longer fit
    rng = np.random.default_rng(seed)
    roots = sorted({uf.find(int(v)) for v in outputs})
    while len(roots) > 1:
        sizes = np.array([uf.size[r] for r in roots])
        first = _pick_smallest(roots, sizes, rng)
        rest = [r for r in roots if r != first]
        sizes_rest = np.array([uf.size[r] for r in rest])
        second = _pick_smallest(rest, sizes_rest, rng)
        if uf.size[first] + uf.size[second] > max_size:
            break
        uf.union(first, second)
        roots = sorted({uf.find(r) for r in roots})

    members: dict[int, list[int]] = {}
    for v in outputs:
        members.setdefault(uf.find(int(v)), []).append(int(v))
    groups = sorted(members.values(), key=lambda grp: grp[0])
    return Partition(tuple(np.array(grp, dtype=np.int64) for grp in groups), outputs, max_size)


def _pick_smallest(roots: list[int], sizes: np.ndarray, rng: np.random.Generator) -> int:
    smallest = np.nonzero(sizes == sizes.min())[0]
    return roots[int(smallest[int(rng.integers(smallest.size))])]


# --------------------------------------------------------------------------
# Multilevel partitioner (heavy-edge matching + boundary refinement)
# --------------------------------------------------------------------------


def multilevel_partition(g: CsrGraph, num_parts: int, imbalance: float = 1.03) -> Partition:
    """Partition all nodes into ``num_parts`` balanced groups of low edge cut.

    Classic multilevel scheme: coarsen by heavy-edge matching until at most
    max(100, 20 * num_parts) supernodes remain, build an initial partition by
    greedy graph growing, then uncoarsen with boundary refinement passes that
    only accept moves keeping every part within ceil(imbalance * N / b)
    original nodes. Fully deterministic (no randomness anywhere).
    """
    n = g.num_nodes
    if num_parts < 1:
        raise ValueError("num_parts must be >= 1")
    if num_parts > n:
        raise ValueError(f"cannot split {n} nodes into {num_parts} parts")
    if imbalance < 1.0:
        raise ValueError("imbalance must be >= 1.0")
    cap = int(np.ceil(imbalance * n / num_parts))
    allnodes = np.arange(n, dtype=np.int64)
    if num_parts == 1:
        return Partition((allnodes,), allnodes, max(cap, n))

    adj = g.to_scipy(weights=np.ones(g.num_edges)).tolil()
    adj.setdiag(0)
    adj = adj.tocsr()
    adj.eliminate_zeros()
    vw = np.ones(n, dtype=np.int64)

    levels: list[tuple[sp.csr_matrix, np.ndarray, np.ndarray]] = []  # (adj, vw, map_to_coarse)
    target = max(100, 20 * num_parts)
    match_cap = max(2, int(np.ceil(imbalance * n / num_parts / 4)))
    while adj.shape[0] > target:
        cmap, new_n = _heavy_edge_matching(adj, vw, match_cap)
        if new_n > 0.95 * adj.shape[0]:
            break
        coarse_adj, coarse_vw = _contract(adj, vw, cmap, new_n)
        levels.append((adj, vw, cmap))
        adj, vw = coarse_adj, coarse_vw

    part = _greedy_grow(adj, vw, num_parts, cap)
    _refine(adj, vw, part, num_parts, cap, strict=not levels)
    for fine_adj, fine_vw, cmap in reversed(levels):
        part = part[cmap]
        adj, vw = fine_adj, fine_vw
        _refine(adj, vw, part, num_parts, cap, strict=(adj.shape[0] == n))

    groups = tuple(np.nonzero(part == i)[0].astype(np.int64) for i in range(num_parts))
    return Partition(groups, allnodes, cap)


def _heavy_edge_matching(
    adj: sp.csr_matrix, vw: np.ndarray, weight_cap: int
) -> tuple[np.ndarray, int]:
    """Match each vertex (ascending id) with its heaviest unmatched neighbor."""
    n = adj.shape[0]
    mate = np.full(n, -1, dtype=np.int64)
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    for v in range(n):
        if mate[v] != -1:
            continue
        cols = indices[indptr[v] : indptr[v + 1]]
        wts = data[indptr[v] : indptr[v + 1]]
        ok = (mate[cols] == -1) & (cols != v) & (vw[cols] + vw[v] <= weight_cap)
        if not ok.any():
            continue
        cols, wts = cols[ok], wts[ok]
        best = cols[wts == wts.max()].min()
        mate[v] = best
        mate[best] = v
    cmap = np.full(n, -1, dtype=np.int64)
    nxt = 0
    for v in range(n):
        if cmap[v] != -1:
            continue
        cmap[v] = nxt
        if mate[v] > v:
            cmap[mate[v]] = nxt
        nxt += 1
    return cmap, nxt


def _contract(
    adj: sp.csr_matrix, vw: np.ndarray, cmap: np.ndarray, new_n: int
) -> tuple[sp.csr_matrix, np.ndarray]:
    src = np.repeat(np.arange(adj.shape[0]), np.diff(adj.indptr))
    coarse = sp.coo_matrix(
        (adj.data, (cmap[src], cmap[adj.indices])), shape=(new_n, new_n)
    ).tocsr()
    coarse = coarse.tolil()
    coarse.setdiag(0)
    coarse = coarse.tocsr()
    coarse.eliminate_zeros()
    new_vw = np.zeros(new_n, dtype=np.int64)
    np.add.at(new_vw, cmap, vw)
    return coarse, new_vw


def _greedy_grow(adj: sp.csr_matrix, vw: np.ndarray, b: int, cap: int) -> np.ndarray:
    n = adj.shape[0]
    part = np.full(n, -1, dtype=np.int64)
    indptr, indices = adj.indptr, adj.indices
    unassigned = n
    remaining_w = int(vw.sum())
    cursor = 0  # smallest-id unassigned scan pointer

    def next_seed() -> int:
        nonlocal cursor
        while part[cursor] != -1:
            cursor += 1
        return cursor

    for i in range(b - 1):
        target = remaining_w / (b - i)
        weight = 0
        queue: deque[int] = deque()

        def assign(v: int) -> None:
            nonlocal weight, unassigned
            part[v] = i
            weight += int(vw[v])
            unassigned -= 1
            queue.append(v)

        assign(next_seed())
        while weight < target and unassigned > (b - 1 - i):
            if not queue:
                assign(next_seed())
                continue
            v = queue.popleft()
            for u in indices[indptr[v] : indptr[v + 1]]:
                if weight >= target or unassigned <= (b - 1 - i):
                    break
                if part[u] == -1 and weight + vw[u] <= cap:
                    assign(int(u))
        remaining_w -= weight
    part[part == -1] = b - 1
    return part


def _refine(
    adj: sp.csr_matrix, vw: np.ndarray, part: np.ndarray, b: int, cap: int, strict: bool
) -> None:
    """Boundary move passes (positive gain only), then strict rebalancing."""
    n = adj.shape[0]
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    part_w = np.zeros(b, dtype=np.int64)
    np.add.at(part_w, part, vw)
    part_cnt = np.bincount(part, minlength=b)

    def connectivity(v: int) -> np.ndarray:
        conn = np.zeros(b)
        cols = indices[indptr[v] : indptr[v + 1]]
        np.add.at(conn, part[cols], data[indptr[v] : indptr[v + 1]])
        return conn

    for _ in range(8):
        moved = False
        for v in range(n):
            p = int(part[v])
            if part_cnt[p] <= 1:
                continue
            cols = indices[indptr[v] : indptr[v + 1]]
            if cols.size == 0 or not np.any(part[cols] != p):
                continue
            conn = connectivity(v)
            internal = conn[p]
            for q in np.argsort(-conn, kind="stable"):
                q = int(q)
                if conn[q] <= internal + 1e-12:
                    break
                if q != p and part_w[q] + vw[v] <= cap:
                    part[v] = q
                    part_w[p] -= vw[v]
                    part_w[q] += vw[v]
                    part_cnt[p] -= 1
                    part_cnt[q] += 1
                    moved = True
                    break
        if not moved:
            break

    if not strict:
        return
    guard = 0
    while part_w.max() > cap and guard < 4 * n:
        guard += 1
        p = int(np.argmax(part_w))
        movers = np.nonzero(part == p)[0]
        best_v, best_q, best_loss = -1, -1, np.inf
        for v in movers:
            if part_cnt[p] <= 1:
                break
            conn = connectivity(v)
            for q in np.argsort(part_w, kind="stable"):
                q = int(q)
                if q == p or part_w[q] + vw[v] > cap:
                    continue
                loss = conn[p] - conn[q]
                if loss < best_loss:
                    best_v, best_q, best_loss = int(v), q, loss
                break
        if best_v < 0:
            break
        part[best_v] = best_q
        part_w[p] -= vw[best_v]
        part_w[best_q] += vw[best_v]
        part_cnt[p] -= 1
        part_cnt[best_q] += 1


def restrict_to_outputs(p: Partition, outputs: np.ndarray) -> Partition:
    """Intersect every group with ``outputs``, dropping groups that vanish."""
    outputs = np.unique(np.asarray(outputs, dtype=np.int64))
    groups = []
    for grp in p.groups:
        inter = np.intersect1d(grp, outputs, assume_unique=True)
        if inter.size:
            groups.append(inter)
    return Partition(tuple(groups), outputs, p.max_size)


def edge_cut(g: CsrGraph, assignment: np.ndarray) -> int:
    """Count undirected non-loop edges whose endpoints land in different parts."""
    assignment = np.asarray(assignment)
    src = np.repeat(np.arange(g.num_nodes, dtype=np.int64), g.degrees)
    dst = g.col_idx
    mask = src != dst
    lo = np.minimum(src[mask], dst[mask])
    hi = np.maximum(src[mask], dst[mask])
    pairs = np.unique(lo * np.int64(g.num_nodes) + hi)
    u = pairs // g.num_nodes
    v = pairs % g.num_nodes
    return int(np.count_nonzero(assignment[u] != assignment[v]))


def assignment_of(p: Partition, num_nodes: int) -> np.ndarray:
    """Group index per node (-1 outside the universe)."""
    out = np.full(num_nodes, -1, dtype=np.int64)
    for i, grp in enumerate(p.groups):
        out[grp] = i
    return out


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def write_partition(p: Partition, sink: str | Path) -> None:
    with open(sink, "w", encoding="utf-8") as f:
        f.write(PARTITION_HEADER.format(B=p.max_size) + "\n")
        for grp in p.groups:
            f.write(" ".join(str(int(v)) for v in grp) + "\n")


def read_partition(source: str | Path) -> Partition:
    with open(source, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        m = re.fullmatch(r"# ibmb-partition v1 B=(\d+)", header)
        if not m:
            raise ValueError(f"bad partition header: {header!r}")
        max_size = int(m.group(1))
        groups = []
        for raw in f:
            line = raw.strip()
            if not line:
                continue
            groups.append(np.array([int(tok) for tok in line.split()], dtype=np.int64))
    universe = np.sort(np.concatenate(groups)) if groups else np.empty(0, dtype=np.int64)
    return Partition(tuple(groups), universe, max_size)
