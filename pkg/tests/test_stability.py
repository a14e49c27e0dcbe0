import numpy as np
import pytest

from conftest import make_volume
from pipespace.communities import Partition, adjusted_rand_index
from pipespace.dataset import DatasetIndex, Entry, all_pipelines, read_manifest
from pipespace.errors import NodeSetMismatch, ValidationError, ZeroVariance
from pipespace.stability import (CoOccurrenceMatrix, analyze_groups, cooccurrence, cross_contrast,
                                 global_communities, per_group_partitions, stability_flags, stability_report)
from pipespace.resample import TargetGrid
from pipespace.volume import write_volume
from pipespace.workflow import auto_mask, default_grid, group_seed

NODES = ("a", "b", "c")


def test_cooccurrence_hand_case():
    parts = [Partition((0, 0, 1), nodes=NODES), Partition((0, 0, 0), nodes=NODES),
             Partition((0, 1, 2), nodes=NODES)]
    c = cooccurrence(parts)
    assert c.counts.tolist() == [[3, 2, 1], [2, 3, 1], [1, 1, 3]]
    parts[2] = Partition((0, 1, 1), nodes=NODES)
    c = cooccurrence(parts)
    assert c.counts[0, 1] == 2 and c.counts[1, 2] == 2 and c.counts[0, 2] == 1
    assert np.all(np.diag(c.counts) == 3)


def test_cooccurrence_aligns_names():
    p = Partition((0, 0, 1), nodes=("a", "b", "c"))
    q = Partition((0, 1, 1), nodes=("c", "a", "b"))
    assert cooccurrence([p, q]).counts[0, 1] == 2
    with pytest.raises(NodeSetMismatch):
        cooccurrence([p, Partition((0, 0, 1), nodes=("a", "b", "d"))])


def _cooc(counts, n_groups, names=None):
    names = names or tuple(str(p) for p in all_pipelines()[:len(counts)])
    return CoOccurrenceMatrix(names, counts, n_groups, "rh")


def test_cooccurrence_validation():
    with pytest.raises(ValidationError):
        _cooc([[2, 3], [3, 2]], 2)
    with pytest.raises(ValidationError):
        _cooc([[2, 1], [0, 2]], 2)
    with pytest.raises(ValidationError):
        _cooc([[1, 1], [1, 2]], 2)


def test_global_communities_blocks():
    blocks = np.repeat([0, 1, 2], 4)
    counts = np.where(blocks[:, None] == blocks[None, :], 95, 3)
    np.fill_diagonal(counts, 100)
    c = _cooc(counts, 100)
    p = global_communities(c)
    assert p.assignment == tuple(blocks)


def test_global_communities_uniform_is_one_block():
    counts = np.full((6, 6), 40)
    np.fill_diagonal(counts, 100)
    assert global_communities(_cooc(counts, 100)).n_communities == 1


def test_stability_flags():
    counts = np.array([[1000, 55, 2], [55, 1000, 972], [2, 972, 1000]])
    c = _cooc(counts, 1000, ("a", "b", "c"))
    p = Partition((0, 0, 0), nodes=("a", "b", "c"))
    assert stability_flags(c, p) == [("a", "b", 55), ("a", "c", 2)]
    assert stability_flags(c, p, 0) == []
    assert stability_flags(c, Partition((0, 0, 1), nodes=("a", "b", "c"))) == [("a", "b", 55)]
    assert stability_flags(c, Partition((0, 1, 1), nodes=("a", "b", "c"))) == []
    with pytest.raises(ValidationError):
        stability_flags(c, p, 1001)


def _write_group(tmp_path, contrast, group, maps):
    entries = []
    for p, data in maps.items():
        path = tmp_path / f"{contrast}-{group}-{str(p).replace(',', '-')}.nii"
        write_volume(make_volume(data), path)
        entries.append(Entry(contrast, group, p, str(path)))
    return entries


def test_identical_maps_form_one_community(tmp_path):
    data = np.random.default_rng(0).normal(size=(4, 4, 4)) + 10
    ps = all_pipelines()[:4]
    idx = DatasetIndex.from_entries(_write_group(tmp_path, "rh", "g1", {p: data for p in ps}))
    parts = per_group_partitions(idx, "rh")
    assert len(parts) == 1 and parts[0].n_communities == 1


def test_constant_map_error_names_group(tmp_path):
    rng = np.random.default_rng(0)
    ps = all_pipelines()[:3]
    maps = {ps[0]: rng.normal(size=(3, 3, 3)) + 5, ps[1]: np.full((3, 3, 3), 2.0), ps[2]: rng.normal(size=(3, 3, 3)) + 5}
    idx = DatasetIndex.from_entries(_write_group(tmp_path, "rh", "g1", maps))
    with pytest.raises(ZeroVariance, match=r"rh.*g1"):
        per_group_partitions(idx, "rh")


def test_planted_dataset_is_stable(planted4):
    cfg, manifest, truth = planted4
    idx = read_manifest(manifest)
    grid = default_grid(idx)
    results = analyze_groups(idx, "right-hand", grid, auto_mask(idx, grid), seed=0)
    assert len(results) == 100
    rep = stability_report(results, seed=0)
    planted = cfg.planted["right-hand"]
    ref = Partition(tuple(planted[p] for p in all_pipelines()), nodes=tuple(str(p) for p in all_pipelines()))
    assert adjusted_rand_index(rep.global_partition, ref) == 1.0
    same = np.array([[planted[a] == planted[b] for b in all_pipelines()] for a in all_pipelines()])
    assert rep.cooccurrence.counts[same].min() >= 95
    assert stability_flags(rep.cooccurrence, rep.global_partition, 50) == []
    order = rep.block_order()
    labels = [rep.global_partition.assignment[i] for i in order]
    assert labels == sorted(labels)


def test_group_seed_independent_of_other_groups():
    assert group_seed(0, "g001") == group_seed(0, "g001")
    assert group_seed(0, "g001") != group_seed(1, "g001")
    assert group_seed(0, "g001") != group_seed(0, "g002")


def test_partitions_do_not_depend_on_group_set(two_contrasts):
    cfg, manifest, _ = two_contrasts
    idx = read_manifest(manifest)
    grid = default_grid(idx)
    mask = auto_mask(idx, grid)
    full = analyze_groups(idx, "right-hand", grid, mask)
    keep = [e for e in idx.entries if e.group_id in ("g003", "g007")]
    sub = analyze_groups(DatasetIndex.from_entries(keep), "right-hand", grid, mask)
    by_id = {r.similarity.group_id: r for r in full}
    for r in sub:
        assert r.partition == by_id[r.similarity.group_id].partition
        assert r.seed == by_id[r.similarity.group_id].seed


def test_cross_contrast(two_contrasts):
    cfg, manifest, _ = two_contrasts
    idx = read_manifest(manifest)
    grid = default_grid(idx)
    mask = auto_mask(idx, grid)
    reps = {c: stability_report(analyze_groups(idx, c, grid, mask)) for c in ("right-hand", "right-foot")}
    ari, rows = cross_contrast(reps["right-hand"], reps["right-foot"])
    assert len(rows) == 276
    assert -1 <= ari < 1
    deltas = [r[4] for r in rows]
    assert deltas == sorted(deltas, reverse=True)
    # pairs whose planted membership differs between the contrasts change most
    pa, pb = cfg.planted["right-hand"], cfg.planted["right-foot"]
    top = rows[0]
    from pipespace.dataset import parse_pipeline_id
    x, y = parse_pipeline_id(top[0]), parse_pipeline_id(top[1])
    assert (pa[x] == pa[y]) != (pb[x] == pb[y])
    same_ari, same_rows = cross_contrast(reps["right-hand"], reps["right-hand"])
    assert same_ari == 1.0 and all(r[4] == 0 for r in same_rows)


def test_moved_pipelines_top_the_delta_table(tmp_path):
    from pipespace.synth import SynthConfig, generate, planted_by
    ps = all_pipelines()
    rh = planted_by(ps, ["software", "hrf"])
    # swap three pipelines between communities 0 and 1 so block sizes stay equal
    a = [p for p in ps if rh[p] == 0][:3]
    b = [p for p in ps if rh[p] == 1][:3]
    moved = set(a) | set(b)
    rf = {p: 1 - k if p in moved else k for p, k in rh.items()}
    cfg = SynthConfig(dims=(10, 10, 10), n_groups=12, seed=21, planted={"right-hand": rh, "right-foot": rf})
    manifest, _ = generate(cfg, tmp_path)
    idx = read_manifest(manifest)
    grid = default_grid(idx)
    mask = auto_mask(idx, grid)
    reps = [stability_report(analyze_groups(idx, c, grid, mask)) for c in ("right-hand", "right-foot")]
    ari, rows = cross_contrast(*reps)
    assert ari < 1.0
    changed = {frozenset((str(a), str(b))) for a in ps for b in ps
               if a != b and (rh[a] == rh[b]) != (rf[a] == rf[b])}
    top = {frozenset(r[:2]) for r in rows[:len(changed)]}
    assert top == changed
    names = {str(p) for p in moved}
    assert all(set(pair) & names for pair in top)
