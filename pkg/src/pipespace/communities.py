"""Weighted graphs, modularity, Louvain optimisation and partition comparison.

Self-loop convention: a loop of weight ``s`` on node ``i`` is stored as
``adj[i, i] = 2 s``, so it adds ``2 s`` to the degree of ``i`` and to the
total weight ``2m``.  With this convention collapsing a community into a
super-node (its internal weight becoming a loop) leaves modularity unchanged.
"""

from __future__ import annotations

import functools
import logging
import random
from dataclasses import dataclass, field

import numpy as np

from .errors import (AllZeroGraph, NegativeWeight, NodeSetMismatch, TooLarge, UncoveredNode,
                     ValidationError)

logger = logging.getLogger(__name__)

GAIN_EPS = 1e-12
BRUTE_FORCE_MAX_NODES = 10


class WeightedGraph:
    """Undirected weighted graph held as a dense adjacency matrix.

    ``w`` is given with raw self-loop weights on its diagonal (zero for the
    correlation graphs); they are doubled on construction.
    """

    def __init__(self, w, labels=None):
        w = np.array(w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] == 0:
            raise ValidationError(f"weight matrix must be square and non-empty, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite")
        if not np.array_equal(w, w.T):
            raise ValidationError("weight matrix must be symmetric")
        if np.any(w < 0):
            raise NegativeWeight("weights must be non-negative")
        adj = w.copy()
        adj[np.diag_indices_from(adj)] *= 2.0
        self._init(adj, labels)

    @classmethod
    def from_adjacency(cls, adj, labels=None) -> "WeightedGraph":
        """Wrap a matrix already in the doubled-loop convention."""
        g = cls.__new__(cls)
        g._init(np.array(adj, dtype=np.float64), labels)
        return g

    def _init(self, adj, labels):
        n = adj.shape[0]
        labels = tuple(str(x) for x in labels) if labels is not None else tuple(str(i) for i in range(n))
        if len(labels) != n:
            raise ValidationError(f"{len(labels)} labels for {n} nodes")
        if adj.sum() <= 0:
            raise AllZeroGraph("graph has no positive edge weight")
        adj.flags.writeable = False
        self.adj = adj
        self.labels = labels
        self.n_clamped = 0

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def w(self) -> np.ndarray:
        """Weights with raw (undoubled) self-loops on the diagonal."""
        w = self.adj.copy()
        w[np.diag_indices_from(w)] /= 2.0
        return w

    @property
    def degrees(self) -> np.ndarray:
        return self.adj.sum(axis=1)

    @property
    def total_weight_2m(self) -> float:
        return float(self.adj.sum())

    def __repr__(self):
        return f"WeightedGraph(n={self.n}, 2m={self.total_weight_2m:g})"


def canonical_labels(assignment) -> tuple:
    """Relabel communities 0..C-1 by first appearance in node order."""
    seen = {}
    return tuple(seen.setdefault(c, len(seen)) for c in assignment)


@dataclass(frozen=True)
class Partition:
    assignment: tuple
    modularity: float = float("nan")
    resolution: float = 1.0
    nodes: tuple = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "assignment", canonical_labels(int(c) for c in self.assignment))
        if self.nodes is not None:
            nodes = tuple(str(x) for x in self.nodes)
            if len(nodes) != len(self.assignment):
                raise ValidationError(f"{len(nodes)} node names for {len(self.assignment)} assignments")
            object.__setattr__(self, "nodes", nodes)

    @property
    def n_communities(self) -> int:
        return max(self.assignment) + 1 if self.assignment else 0

    def communities(self) -> list:
        """Member lists (node names when known, indices otherwise) per community."""
        names = self.nodes if self.nodes is not None else range(len(self.assignment))
        out = [[] for _ in range(self.n_communities)]
        for name, c in zip(names, self.assignment):
            out[c].append(name)
        return out

    def to_json(self, contrast: str, group_id: str, seed) -> dict:
        return {
            "contrast": contrast,
            "group_id": group_id,
            "resolution": self.resolution,
            "seed": seed,
            "modularity": self.modularity,
            "communities": self.communities(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Partition":
        nodes, assignment = [], []
        for c, members in enumerate(obj["communities"]):
            for m in members:
                nodes.append(m)
                assignment.append(c)
        order = sorted(range(len(nodes)), key=lambda i: nodes[i])
        return cls(tuple(assignment[i] for i in order), float(obj.get("modularity", "nan")),
                   float(obj.get("resolution", 1.0)), tuple(nodes[i] for i in order))


def from_similarity(m, clamp_negative: bool = True) -> WeightedGraph:
    """Correlation graph of a SimilarityMatrix; the diagonal is dropped."""
    w = np.array(m.r, dtype=np.float64)
    np.fill_diagonal(w, 0.0)
    neg = w < 0
    n_neg = int(np.triu(neg).sum())
    if n_neg:
        if not clamp_negative:
            raise NegativeWeight(f"{m.contrast}/{m.group_id}: {n_neg} negative correlations")
        logger.warning("%s/%s: clamped %d negative correlations to 0", m.contrast, m.group_id, n_neg)
        w[neg] = 0.0
    if not (w > 0).any():
        raise AllZeroGraph(f"{m.contrast}/{m.group_id}: no positive correlation between pipelines")
    g = WeightedGraph(w, [str(p) for p in m.pipelines])
    g.n_clamped = n_neg
    return g


def _assignment_of(g: WeightedGraph, p) -> np.ndarray:
    assignment = p.assignment if isinstance(p, Partition) else tuple(p)
    if len(assignment) != g.n:
        raise UncoveredNode(f"partition covers {len(assignment)} nodes, graph has {g.n}")
    a = np.asarray(assignment)
    if a.size and (a.min() < 0 or not np.issubdtype(a.dtype, np.integer)):
        raise UncoveredNode("partition labels must be non-negative integers")
    return a


def _q(adj: np.ndarray, labels: np.ndarray, gamma: float) -> float:
    m2 = adj.sum()
    n_comm = int(labels.max()) + 1
    onehot = np.zeros((adj.shape[0], n_comm))
    onehot[np.arange(adj.shape[0]), labels] = 1.0
    inner = np.einsum("ic,ij,jc->c", onehot, adj, onehot)
    tot = onehot.T @ adj.sum(axis=1)
    return float(np.sum(inner / m2 - gamma * (tot / m2) ** 2))


def modularity(g: WeightedGraph, p, gamma: float = 1.0) -> float:
    """Q = sum over communities of in_C/2m - gamma (tot_C/2m)^2."""
    return _q(g.adj, _assignment_of(g, p), gamma)


def _aggregate(adj: np.ndarray, comm: np.ndarray) -> np.ndarray:
    n_comm = int(comm.max()) + 1
    onehot = np.zeros((adj.shape[0], n_comm))
    onehot[np.arange(adj.shape[0]), comm] = 1.0
    return onehot.T @ adj @ onehot


def _local_moves(adj: np.ndarray, gamma: float, order: list) -> tuple:
    """One level of best-gain node moves; returns (community per node, moved?)."""
    n = adj.shape[0]
    k = adj.sum(axis=1)
    m2 = k.sum()
    comm = np.arange(n)
    tot = k.copy()
    size = np.ones(n, dtype=np.intp)
    off_diag = adj.copy()
    np.fill_diagonal(off_diag, 0.0)
    moved_any = False
    while True:
        moves = 0
        for i in order:
            ci = comm[i]
            tot[ci] -= k[i]
            size[ci] -= 1
            k_ic = np.bincount(comm, weights=off_diag[i], minlength=n)
            # modularity gain of inserting the isolated node i into each community
            gain = (k_ic - gamma * tot * k[i] / m2) * (2.0 / m2)
            cand = np.nonzero(k_ic > 0)[0].tolist()
            empty = ci if size[ci] == 0 else int(np.nonzero(size == 0)[0][0])
            gains = {c: gain[c] for c in cand}
            gains[ci] = gain[ci] if size[ci] else 0.0
            gains[empty] = 0.0
            best = max(gains.values())
            if best > gains[ci] + GAIN_EPS:
                target = min(c for c, v in gains.items() if v >= best - GAIN_EPS)
            else:
                target = ci
            comm[i] = target
            tot[target] += k[i]
            size[target] += 1
            if target != ci:
                moves += 1
        if not moves:
            return comm, moved_any
        moved_any = True


def louvain(g: WeightedGraph, gamma: float = 1.0, seed: int = 0) -> Partition:
    """Two-phase Louvain modularity maximisation.

    Phase 1 visits nodes in a seeded shuffled order (fixed within a level)
    and applies the best strictly positive modularity gain, ties going to
    the lowest community label, until a full pass moves nothing.  Phase 2
    collapses communities into super-nodes.  Levels repeat until the
    partition stops changing.
    """
    if gamma <= 0:
        raise ValidationError(f"resolution must be positive, got {gamma}")
    rng = random.Random(seed)
    adj = np.array(g.adj)
    membership = np.arange(g.n)
    while True:
        order = list(range(adj.shape[0]))
        rng.shuffle(order)
        comm, moved = _local_moves(adj, gamma, order)
        if not moved:
            break
        comm = np.asarray(canonical_labels(comm))
        if comm.max() + 1 == adj.shape[0]:
            break
        membership = comm[membership]
        adj = _aggregate(adj, comm)
    assignment = canonical_labels(membership)
    q = _q(g.adj, np.asarray(assignment), gamma)
    return Partition(assignment, q, gamma, g.labels)


@functools.lru_cache(maxsize=None)
def _set_partitions(n: int) -> np.ndarray:
    """All restricted growth strings of length n in lexicographic order."""
    rows = []

    def rec(prefix, top):
        if len(prefix) == n:
            rows.append(tuple(prefix))
            return
        for c in range(top + 2):
            prefix.append(c)
            rec(prefix, max(top, c))
            prefix.pop()

    rec([0], 0) if n else rows.append(())
    out = np.array(rows, dtype=np.intp).reshape(len(rows), n)
    out.flags.writeable = False
    return out


def brute_force_best_partition(g: WeightedGraph, gamma: float = 1.0) -> Partition:
    """Exhaustive modularity optimum over all set partitions (n <= 10).

    Ties go to the lexicographically smallest canonical labelling.
    """
    if g.n > BRUTE_FORCE_MAX_NODES:
        raise TooLarge(f"brute force limited to {BRUTE_FORCE_MAX_NODES} nodes, graph has {g.n}")
    parts = _set_partitions(g.n)
    adj = g.adj
    m2 = adj.sum()
    same = parts[:, :, None] == parts[:, None, :]
    inner = np.einsum("bij,ij->b", same, adj) / m2
    onehot = (parts[:, :, None] == np.arange(g.n)[None, None, :]).astype(np.float64)
    tot = np.einsum("bic,i->bc", onehot, adj.sum(axis=1)) / m2
    q = inner - gamma * np.sum(tot ** 2, axis=1)
    best = int(np.nonzero(q >= q.max() - GAIN_EPS)[0][0])
    assignment = tuple(int(c) for c in parts[best])
    return Partition(assignment, _q(adj, parts[best], gamma), gamma, g.labels)


def _aligned(p: Partition, q: Partition) -> tuple:
    if len(p.assignment) != len(q.assignment):
        raise NodeSetMismatch(f"partitions cover {len(p.assignment)} and {len(q.assignment)} nodes")
    if p.nodes is None or q.nodes is None:
        return np.asarray(p.assignment), np.asarray(q.assignment)
    if set(p.nodes) != set(q.nodes) or len(set(p.nodes)) != len(p.nodes):
        raise NodeSetMismatch("partitions are over different node sets")
    where = {name: c for name, c in zip(q.nodes, q.assignment)}
    return np.asarray(p.assignment), np.asarray([where[name] for name in p.nodes])


def adjusted_rand_index(p: Partition, q: Partition) -> float:
    """Adjusted Rand index from the pair-counting contingency table."""
    a, b = _aligned(p, q)
    n = a.size
    if n < 2:
        return 1.0
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)

    def pairs(x):
        return float(np.sum(x * (x - 1)) / 2)

    index = pairs(table)
    rows = pairs(table.sum(axis=1))
    cols = pairs(table.sum(axis=0))
    expected = rows * cols / (n * (n - 1) / 2)
    maximum = (rows + cols) / 2
    if maximum == expected:
        return 1.0
    return (index - expected) / (maximum - expected)
