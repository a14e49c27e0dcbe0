"""``pipespace`` command line: correlate, stability, features, compare, synth.

Settings come from an optional INI file (``--config``, section ``[run]``)
and are overridden by flags.  Exit codes: 0 ok, 2 validation, 3 I/O,
4 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .communities import Partition
from .dataset import read_manifest
from .errors import DataIOError, PipespaceError, ValidationError
from .features import (DEFAULT_Q, DEFAULT_ROI_THRESHOLD, FeatureRow, community_summary, count_active,
                       features_csv, mean_map, roi_mask, threshold_map)
from .heatmap import partition_blocks, render_heatmap
from .resample import Mask, TargetGrid
from .simmatrix import group_similarity, load_group_vectors, mean_similarity
from .stability import (DEFAULT_INSTABILITY_THRESHOLD, StabilityReport, analyze_groups, cross_contrast,
                        stability_flags, stability_report)
from .synth import config_from_parser, generate
from .volume import read_volume, write_volume
from .workflow import auto_mask, default_grid, load_mask, parallel_map

logger = logging.getLogger("pipespace")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4

ASSUMPTIONS = {
    "statistic_scale": "group-level maps are treated as z-values (standard normal under the null)",
    "test": "one-sided upper tail, Benjamini-Hochberg FDR over in-mask voxels",
}


@dataclass
class RunConfig:
    manifest: str = None
    contrasts: list = field(default_factory=list)
    dims: str = None
    affine: str = None
    grid_like: str = None
    mask: str = "auto"
    gamma: float = 1.0
    seed: int = 0
    q: float = DEFAULT_Q
    clamp_negative: bool = True
    instability_threshold: float = DEFAULT_INSTABILITY_THRESHOLD
    jobs: int = 1
    out: str = "pipespace-out"

    def validate(self):
        if not self.gamma > 0:
            raise ValidationError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.q < 1:
            raise ValidationError(f"q must lie in (0, 1), got {self.q}")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        if (self.dims is None) != (self.affine is None):
            raise ValidationError("--dims and --affine must be given together")
        try:
            Path(self.out).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataIOError(f"output directory {self.out!r} is not writable: {exc.strerror or exc}") from exc
        if not os.access(self.out, os.W_OK):
            raise DataIOError(f"output directory {self.out!r} is not writable")


_CONFIG_KEYS = {
    "manifest": str, "contrast": str, "dims": str, "affine": str, "grid_like": str, "mask": str,
    "gamma": float, "seed": int, "q": float, "clamp_negative": None, "instability_threshold": float,
    "jobs": int, "out": str,
}


def _read_ini(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(delimiters=("=",), interpolation=None)
    cp.optionxform = str
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot read config {os.fspath(path)!r}: {exc.strerror or exc}") from exc
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return cp


def build_config(args) -> RunConfig:
    """Merge config-file values with flags; flags win."""
    values = {}
    if getattr(args, "config", None) and args.command != "synth":
        cp = _read_ini(args.config)
        section = cp["run"] if cp.has_section("run") else {}
        for key, raw in dict(section).items():
            if key not in _CONFIG_KEYS:
                raise ValidationError(f"unknown config key {key!r}")
            conv = _CONFIG_KEYS[key]
            try:
                if conv is None:
                    values[key] = raw.strip().lower() in ("1", "true", "yes", "on")
                else:
                    values[key] = conv(raw.strip())
            except ValueError:
                raise ValidationError(f"config key {key}: bad value {raw!r}") from None
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    contrasts = values.pop("contrast", None)
    if isinstance(contrasts, str):
        contrasts = [contrasts]
    cfg = RunConfig(**values)
    cfg.contrasts = sorted({c.strip() for item in contrasts or [] for c in item.split(",") if c.strip()})
    return cfg


# ---------------------------------------------------------------- helpers

def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise DataIOError(f"cannot write {os.fspath(path)!r}: {exc.strerror or exc}") from exc


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerows(rows)
    return buf.getvalue()


class Run:
    """Dataset, grid and mask shared by every step of one invocation."""

    def __init__(self, cfg: RunConfig):
        if not cfg.manifest:
            raise ValidationError("--manifest is required")
        cfg.validate()
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.index = read_manifest(cfg.manifest)
        unknown = [c for c in cfg.contrasts if c not in self.index.contrasts]
        if unknown:
            raise ValidationError(f"contrasts {unknown} not in manifest (have {list(self.index.contrasts)})")
        self.contrasts = cfg.contrasts or list(self.index.contrasts)
        if cfg.dims is not None:
            self.grid = TargetGrid.from_flags(cfg.dims, cfg.affine)
        elif cfg.grid_like:
            self.grid = TargetGrid.like(read_volume(cfg.grid_like))
        else:
            self.grid = default_grid(self.index)
        if cfg.mask in (None, "", "auto", "auto-intersect"):
            mask = auto_mask(self.index, self.grid, jobs=cfg.jobs)
        else:
            mask = load_mask(cfg.mask, self.grid)
        self.mask = Mask(mask)
        if self.mask.n_voxels < 2:
            raise ValidationError(f"mask keeps {self.mask.n_voxels} voxels; need at least 2")
        logger.info("grid %s, mask %d voxels (%s)", self.grid.dims, self.mask.n_voxels, self.mask.hash)

    def stability(self, contrast: str) -> tuple:
        cfg = self.cfg
        results = analyze_groups(self.index, contrast, self.grid, self.mask, cfg.gamma, cfg.seed,
                                 cfg.clamp_negative, cfg.jobs)
        return results, stability_report(results, cfg.gamma, cfg.seed)


# ---------------------------------------------------------------- commands

def cmd_correlate(cfg: RunConfig) -> dict:
    run = Run(cfg)
    written = {}
    for contrast in run.contrasts:
        groups = run.index.groups_for(contrast)
        mats = parallel_map(lambda g: group_similarity(run.index, contrast, g, run.grid, run.mask),
                            groups, cfg.jobs)
        base = run.out / contrast
        for m in mats:
            _write_text(base / "similarity" / f"{m.group_id}.csv", m.to_csv())
        mean = mean_similarity(mats)
        _write_text(base / "mean_similarity.csv", mean.to_csv())
        render_heatmap(mean.r, mean.labels, base / "mean_similarity.svg", vmin=float(mean.r.min()), vmax=1.0,
                       title=f"{contrast}: mean correlation across {len(mats)} groups "
                             f"({mean.n_voxels} voxels)")
        written[contrast] = mean
    return written


def _stability_outputs(run: Run, contrast: str, results, report: StabilityReport):
    cfg = run.cfg
    base = run.out / contrast
    c = report.cooccurrence
    order = report.block_order()
    threshold = min(cfg.instability_threshold, c.n_groups)
    _write_text(base / "cooccurrence.csv", c.to_csv())
    _write_json(base / "global_partition.json", report.global_partition.to_json(contrast, "global", cfg.seed))
    _write_json(base / "group_partitions.json",
                [r.partition.to_json(contrast, r.similarity.group_id, r.seed) for r in results])
    _write_json(base / "stability_report.json", report.to_json(cfg.seed, threshold))
    _write_text(base / "mean_similarity.csv", report.mean_similarity.to_csv())
    flags = stability_flags(c, report.global_partition, threshold)
    _write_text(base / "unstable_pairs.csv",
                _csv_text([["pipeline_a", "pipeline_b", "count", "n_groups"]]
                          + [[a, b, n, c.n_groups] for a, b, n in flags]))
    labels = [c.pipelines[i] for i in order]
    blocks = partition_blocks(report.global_partition.assignment[i] for i in order)
    render_heatmap(c.counts[np.ix_(order, order)], labels, base / "cooccurrence.svg", vmin=0, vmax=c.n_groups,
                   fmt="{:.0f}", blocks=blocks,
                   title=f"{contrast}: same-community count over {c.n_groups} groups "
                         f"(Q = {report.global_partition.modularity:.2f})")
    r = report.mean_similarity.r
    render_heatmap(r[np.ix_(order, order)], labels, base / "mean_similarity_blocks.svg",
                   vmin=float(r.min()), vmax=1.0, blocks=blocks,
                   title=f"{contrast}: mean correlation, global community order")


def cmd_stability(cfg: RunConfig) -> dict:
    run = Run(cfg)
    reports = {}
    for contrast in run.contrasts:
        results, report = run.stability(contrast)
        _stability_outputs(run, contrast, results, report)
        reports[contrast] = report
    return reports


def _load_partition(path) -> tuple:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataIOError(f"cannot read partition {os.fspath(path)!r}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    try:
        return obj.get("contrast"), Partition.from_json(obj)
    except (KeyError, TypeError, AttributeError, ValueError) as exc:
        raise ValidationError(f"{path}: not a partition file ({exc})") from None


def cmd_features(cfg: RunConfig, partitions=(), atlas=None, roi_threshold=DEFAULT_ROI_THRESHOLD,
                 write_maps=False) -> dict:
    run = Run(cfg)
    given = dict(_load_partition(p) for p in partitions)
    roi = roi_mask(read_volume(atlas, nan_policy="reject"), run.grid, roi_threshold) if atlas else None
    out = {}
    for contrast in run.contrasts:
        if contrast in given:
            part = given[contrast]
        elif None in given and len(run.contrasts) == 1:
            part = given[None]
        else:
            default = run.out / contrast / "global_partition.json"
            if not default.exists():
                raise ValidationError(f"no partition for contrast {contrast!r}; pass --partition "
                                      f"or run 'stability' first")
            part = _load_partition(default)[1]
        where = dict(zip(part.nodes, part.assignment))
        pipelines = [str(p) for p in run.index.pipelines]
        if set(where) != set(pipelines):
            raise ValidationError(f"partition for {contrast!r} does not cover the dataset's pipelines")

        groups = run.index.groups_for(contrast)
        per_group = parallel_map(lambda g: load_group_vectors(run.index, contrast, g, run.grid, run.mask),
                                 groups, cfg.jobs)
        rows = []
        for p in run.index.pipelines:
            mean = mean_map(vecs[p] for vecs in per_group)
            active, res = threshold_map(mean, cfg.q)
            whole, in_roi = count_active(active, roi, run.mask)
            rows.append(FeatureRow(contrast, str(p), where[str(p)], whole, in_roi, res.z_threshold, cfg.q))
            if write_maps:
                maps_dir = run.out / contrast / "thresholded"
                maps_dir.mkdir(parents=True, exist_ok=True)
                write_volume(run.mask.unmask(active), maps_dir / f"{str(p).replace(',', '-')}.nii")
        rows.sort(key=lambda r: (r.community, r.pipeline))
        base = run.out / contrast
        _write_text(base / "features.csv", features_csv(rows))
        _write_json(base / "features_summary.json", {
            "contrast": contrast,
            "q": cfg.q,
            "n_groups": len(groups),
            "n_voxels": run.mask.n_voxels,
            "roi": None if roi is None else {"path": os.fspath(atlas), "prob_threshold": roi_threshold},
            "communities": {str(k): v for k, v in community_summary(rows).items()},
            "assumptions": ASSUMPTIONS,
        })
        out[contrast] = rows
    return out


def cmd_compare(cfg: RunConfig, contrast_a: str, contrast_b: str) -> tuple:
    cfg.contrasts = sorted({contrast_a, contrast_b})
    run = Run(cfg)
    reports = {c: run.stability(c)[1] for c in cfg.contrasts}
    a, b = reports[contrast_a], reports[contrast_b]
    ari, rows = cross_contrast(a, b)
    stem = f"compare_{contrast_a}_vs_{contrast_b}"
    _write_text(run.out / f"{stem}.csv",
                _csv_text([["pipeline_a", "pipeline_b", f"rate_{contrast_a}", f"rate_{contrast_b}", "abs_delta"]]
                          + [[p, q, f"{ra:.9g}", f"{rb:.9g}", f"{d:.9g}"] for p, q, ra, rb, d in rows]))
    _write_json(run.out / f"{stem}.json", {
        "contrast_a": contrast_a,
        "contrast_b": contrast_b,
        "adjusted_rand_index": ari,
        "measure": "adjusted Rand index between global partitions",
        "global_partitions": {contrast_a: a.global_partition.to_json(contrast_a, "global", cfg.seed),
                              contrast_b: b.global_partition.to_json(contrast_b, "global", cfg.seed)},
    })
    return ari, rows


def cmd_synth(config_path, out, seed=None, n_groups=None, jobs=1) -> tuple:
    cp = _read_ini(config_path) if config_path else configparser.ConfigParser()
    if config_path and cp.has_section("run") and not cp.has_section("synth"):
        cp["synth"] = dict(cp["run"])
    synth_cfg = config_from_parser(cp, {"seed": seed, "n_groups": n_groups})
    return generate(synth_cfg, out, jobs)


# ---------------------------------------------------------------- argparse

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI file with [run] keys; flags override it")
    p.add_argument("--manifest", help="CSV with contrast,group_id,pipeline_id,path")
    p.add_argument("--contrast", action="append", help="contrast(s) to process (repeat or comma-separate)")
    p.add_argument("--dims", help="target grid nx,ny,nz (with --affine)")
    p.add_argument("--affine", help="16 comma-separated row-major values")
    p.add_argument("--grid-like", dest="grid_like", help="take the target grid from this volume")
    p.add_argument("--mask", help="mask volume, or 'auto' to intersect map supports (default)")
    p.add_argument("--gamma", type=float, help="modularity resolution (default 1)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--q", type=float, help="FDR level (default 0.05)")
    clamp = p.add_mutually_exclusive_group()
    clamp.add_argument("--clamp-negative", dest="clamp_negative", action="store_const", const=True,
                       help="clamp negative correlations to 0 (default)")
    clamp.add_argument("--no-clamp-negative", dest="clamp_negative", action="store_const", const=False,
                       help="fail on negative correlations")
    p.add_argument("--instability-threshold", dest="instability_threshold", type=float,
                   help="flag same-community pairs co-clustered in fewer groups (default 500)")
    p.add_argument("--jobs", type=int, help="worker threads; never changes outputs")
    p.add_argument("--out", help="output directory")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pipespace", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("correlate", help="per-group and mean similarity matrices")
    _common(p)
    p = sub.add_parser("stability", help="per-group communities, co-occurrence, global partition")
    _common(p)
    p = sub.add_parser("features", help="FDR-thresholded activation counts per pipeline")
    _common(p)
    p.add_argument("--partition", action="append", default=[], help="global_partition.json (per contrast)")
    p.add_argument("--atlas", help="probabilistic ROI atlas volume")
    p.add_argument("--roi-threshold", dest="roi_threshold", type=float, default=DEFAULT_ROI_THRESHOLD)
    p.add_argument("--write-maps", dest="write_maps", action="store_true", help="also write thresholded volumes")
    p = sub.add_parser("compare", help="compare global communities of two contrasts")
    _common(p)
    p.add_argument("contrast_a")
    p.add_argument("contrast_b")
    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="INI synth config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-groups", dest="n_groups", type=int)
    p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "synth":
            manifest, truth = cmd_synth(args.config, args.out, args.seed, args.n_groups, args.jobs)
            print(f"wrote {manifest} and {truth}")
            return EXIT_OK
        cfg = build_config(args)
        if args.command == "correlate":
            for contrast, mean in cmd_correlate(cfg).items():
                off = mean.r[~np.eye(len(mean.pipelines), dtype=bool)]
                print(f"{contrast}: mean off-diagonal r = {off.mean():.4f} (min {off.min():.4f}, max {off.max():.4f})")
        elif args.command == "stability":
            for contrast, rep in cmd_stability(cfg).items():
                gp = rep.global_partition
                print(f"{contrast}: {gp.n_communities} global communities, Q = {gp.modularity:.4f}")
        elif args.command == "features":
            for contrast, rows in cmd_features(cfg, args.partition, args.atlas, args.roi_threshold,
                                               args.write_maps).items():
                for k, s in community_summary(rows).items():
                    roi = "" if s["roi"] is None else f", {s['roi']:.1f} ROI"
                    print(f"{contrast}: community {k}: mean active {s['whole']:.1f} whole{roi}")
        elif args.command == "compare":
            ari, rows = cmd_compare(cfg, args.contrast_a, args.contrast_b)
            print(f"ARI({args.contrast_a}, {args.contrast_b}) = {ari:.4f}")
            for p, q, ra, rb, d in rows[:5]:
                print(f"  {p} / {q}: {ra:.3f} vs {rb:.3f}")
    except PipespaceError as exc:
        print(f"pipespace: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"pipespace: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        logger.debug("internal error", exc_info=True)
        print(f"pipespace: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
