"""Cross-group stability of pipeline communities.

Each group's similarity graph is partitioned independently; the number of
groups in which two pipelines share a community becomes the edge weight of
a global graph that is partitioned once more.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .communities import Partition, WeightedGraph, adjusted_rand_index, from_similarity, louvain
from .errors import AllZeroGraph, EmptyList, NodeSetMismatch, PipespaceError, ValidationError
from .resample import Mask, TargetGrid
from .simmatrix import SimilarityMatrix, group_similarity, mean_similarity
from .workflow import auto_mask, default_grid, group_seed, parallel_map

DEFAULT_INSTABILITY_THRESHOLD = 500


@dataclass(frozen=True, eq=False)
class GroupResult:
    similarity: SimilarityMatrix
    partition: Partition
    seed: int


def analyze_groups(index, contrast: str, grid: TargetGrid, mask, gamma: float = 1.0, seed: int = 0,
                   clamp: bool = True, jobs: int = 1) -> list:
    """Similarity matrix and Louvain partition for every group of ``contrast``."""
    groups = index.groups_for(contrast)
    if not groups:
        raise ValidationError(f"contrast {contrast!r} not in dataset")
    if not isinstance(mask, Mask):
        mask = Mask(mask)

    def one(group_id):
        try:
            sim = group_similarity(index, contrast, group_id, grid, mask)
            s = group_seed(seed, group_id)
            return GroupResult(sim, louvain(from_similarity(sim, clamp), gamma, s), s)
        except PipespaceError as exc:
            msg = str(exc)
            if f"{contrast}/{group_id}" not in msg and f"({contrast}, {group_id}" not in msg:
                msg = f"({contrast}, {group_id}): {msg}"
            raise type(exc)(msg) from exc

    return parallel_map(one, groups, jobs)


def per_group_partitions(index, contrast: str, gamma: float = 1.0, seed: int = 0, clamp: bool = True,
                         grid: TargetGrid = None, mask=None, jobs: int = 1) -> list:
    """One Partition per group in sorted group order."""
    grid = grid or default_grid(index)
    mask = mask if mask is not None else auto_mask(index, grid, [contrast], jobs)
    return [r.partition for r in analyze_groups(index, contrast, grid, mask, gamma, seed, clamp, jobs)]


@dataclass(frozen=True, eq=False)
class CoOccurrenceMatrix:
    pipelines: tuple
    counts: np.ndarray
    n_groups: int
    contrast: str = ""

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        p = len(self.pipelines)
        if counts.shape != (p, p):
            raise ValidationError(f"counts shape {counts.shape} does not match {p} pipelines")
        if not np.array_equal(counts, counts.T):
            raise ValidationError("co-occurrence counts must be symmetric")
        if counts.min() < 0 or counts.max() > self.n_groups:
            raise ValidationError(f"counts must lie in [0, {self.n_groups}]")
        if not np.all(np.diag(counts) == self.n_groups):
            raise ValidationError("co-occurrence diagonal must equal n_groups")
        counts.flags.writeable = False
        object.__setattr__(self, "pipelines", tuple(str(x) for x in self.pipelines))
        object.__setattr__(self, "counts", counts)

    @property
    def rates(self) -> np.ndarray:
        return self.counts / self.n_groups

    def to_csv(self, order=None) -> str:
        order = list(range(len(self.pipelines))) if order is None else list(order)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["pipeline"] + [self.pipelines[i] for i in order])
        for i in order:
            w.writerow([self.pipelines[i]] + [int(self.counts[i, j]) for j in order])
        return buf.getvalue()


def _node_names(p: Partition) -> tuple:
    return p.nodes if p.nodes is not None else tuple(str(i) for i in range(len(p.assignment)))


def cooccurrence(parts, contrast: str = "") -> CoOccurrenceMatrix:
    """Count, per pair of nodes, the partitions that put both in one community."""
    parts = list(parts)
    if not parts:
        raise EmptyList("no partitions to count")
    nodes = _node_names(parts[0])
    counts = np.zeros((len(nodes), len(nodes)), dtype=np.int64)
    for p in parts:
        names = _node_names(p)
        if len(names) != len(nodes) or set(names) != set(nodes):
            raise NodeSetMismatch("partitions cover different node sets")
        where = dict(zip(names, p.assignment))
        a = np.array([where[x] for x in nodes])
        counts += a[:, None] == a[None, :]
    return CoOccurrenceMatrix(nodes, counts, len(parts), contrast)


def global_communities(c: CoOccurrenceMatrix, gamma: float = 1.0, seed: int = 0) -> Partition:
    """Louvain on the graph weighted by raw co-occurrence counts."""
    w = c.counts.astype(np.float64)
    np.fill_diagonal(w, 0.0)
    if not (w > 0).any():
        raise AllZeroGraph(f"{c.contrast}: no pair of pipelines ever shares a community")
    return louvain(WeightedGraph(w, c.pipelines), gamma, seed)


def stability_flags(c: CoOccurrenceMatrix, p: Partition, low: float = DEFAULT_INSTABILITY_THRESHOLD) -> list:
    """Same-community pairs (per ``p``) co-clustered in fewer than ``low`` groups.

    Returns ``(pipeline_a, pipeline_b, count)`` tuples in matrix order.
    """
    if not 0 <= low <= c.n_groups:
        raise ValidationError(f"threshold {low} outside [0, {c.n_groups}]")
    where = dict(zip(_node_names(p), p.assignment))
    if set(where) != set(c.pipelines):
        raise NodeSetMismatch("partition and co-occurrence matrix cover different pipelines")
    out = []
    n = len(c.pipelines)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = c.pipelines[i], c.pipelines[j]
            if where[a] == where[b] and c.counts[i, j] < low:
                out.append((a, b, int(c.counts[i, j])))
    return out


@dataclass(frozen=True, eq=False)
class StabilityReport:
    cooccurrence: CoOccurrenceMatrix
    global_partition: Partition
    mean_similarity: SimilarityMatrix = None

    @property
    def contrast(self) -> str:
        return self.cooccurrence.contrast

    @property
    def per_pair_rate(self) -> np.ndarray:
        return self.cooccurrence.rates

    @property
    def pipelines(self) -> tuple:
        return self.cooccurrence.pipelines

    def block_order(self) -> list:
        """Matrix indices grouped by global community, canonical order within."""
        where = dict(zip(_node_names(self.global_partition), self.global_partition.assignment))
        return sorted(range(len(self.pipelines)), key=lambda i: (where[self.pipelines[i]], self.pipelines[i]))

    def to_json(self, seed, threshold=DEFAULT_INSTABILITY_THRESHOLD) -> dict:
        c = self.cooccurrence
        return {
            "contrast": c.contrast,
            "n_groups": c.n_groups,
            "pipelines": list(c.pipelines),
            "cooccurrence": c.counts.tolist(),
            "per_pair_rate": [[round(float(x), 9) for x in row] for row in c.rates],
            "mean_similarity": None if self.mean_similarity is None
            else [[float(f"{x:.9g}") for x in row] for row in self.mean_similarity.r],
            "global_partition": self.global_partition.to_json(c.contrast, "global", seed),
            "instability_threshold": threshold,
            "unstable_pairs": [list(t) for t in stability_flags(c, self.global_partition, min(threshold, c.n_groups))],
            "assumptions": {
                "statistic_scale": "group maps treated as z-values",
                "cross_contrast_measure": "adjusted Rand index of global partitions",
            },
        }


def stability_report(results, gamma: float = 1.0, seed: int = 0) -> StabilityReport:
    """Co-occurrence, global partition and mean similarity from ``analyze_groups`` output."""
    results = list(results)
    if not results:
        raise EmptyList("no group results")
    contrast = results[0].similarity.contrast
    c = cooccurrence([r.partition for r in results], contrast)
    mean = mean_similarity([r.similarity for r in results])
    return StabilityReport(c, global_communities(c, gamma, seed), mean)


def cross_contrast(a: StabilityReport, b: StabilityReport) -> tuple:
    """ARI between global partitions plus the per-pair rate table.

    Table rows are ``(pipeline_a, pipeline_b, rate_a, rate_b, abs_delta)``
    sorted by descending ``abs_delta``, then by pair name.
    """
    if set(a.pipelines) != set(b.pipelines):
        raise NodeSetMismatch(f"contrasts {a.contrast!r} and {b.contrast!r} cover different pipelines")
    ari = adjusted_rand_index(a.global_partition, b.global_partition)
    pos_b = {name: i for i, name in enumerate(b.pipelines)}
    ra, rb = a.per_pair_rate, b.per_pair_rate
    rows = []
    names = sorted(a.pipelines)
    pos_a = {name: i for i, name in enumerate(a.pipelines)}
    for x in range(len(names)):
        for y in range(x + 1, len(names)):
            p, q = names[x], names[y]
            va = float(ra[pos_a[p], pos_a[q]])
            vb = float(rb[pos_b[p], pos_b[q]])
            rows.append((p, q, va, vb, abs(va - vb)))
    rows.sort(key=lambda r: (-r[4], r[0], r[1]))
    return ari, rows

