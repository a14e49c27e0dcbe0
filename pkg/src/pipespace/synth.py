"""Synthetic multi-pipeline datasets with planted community structure.

Every map is ``scale_p * (blob + G_g + C_{k(p),g} + eps_{p,g})`` where the
group field ``G``, community field ``C`` and pipeline noise ``eps`` are
independent standard normal fields scaled by their configured std.  Pearson
correlations between two maps of one group then have closed forms, which is
what makes the generator useful as an oracle.
"""

from __future__ import annotations

import configparser
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Entry, all_pipelines, canonical_order, parse_pipeline_id, write_manifest
from .errors import DataIOError, ValidationError
from .volume import Volume, write_volume
from .workflow import parallel_map

ATTRIBUTES = ("software", "fwhm_mm", "n_motion", "hrf_deriv")
_ATTR_ALIASES = {"software": "software", "fwhm": "fwhm_mm", "fwhm_mm": "fwhm_mm", "motion": "n_motion",
                 "n_motion": "n_motion", "hrf": "hrf_deriv", "hrf_deriv": "hrf_deriv"}

# noise stream ids
_GROUP, _COMMUNITY, _PIPELINE = 0, 1, 2


@dataclass(frozen=True)
class Blob:
    center: tuple
    radius: float
    amplitude: float


@dataclass
class SynthConfig:
    dims: tuple = (16, 16, 16)
    n_groups: int = 100
    planted: dict = field(default_factory=dict)
    pipelines: list = field(default_factory=all_pipelines)
    sigma_group: float = 3.0
    sigma_community: float = 2.0
    sigma_noise: float = 1.0
    blob: Blob = None
    scale: dict = field(default_factory=dict)
    voxel_size: float = 2.0
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.pipelines = canonical_order(parse_pipeline_id(p) for p in self.pipelines)
        if not self.planted:
            self.planted = {"right-hand": planted_by(self.pipelines, ("software", "hrf_deriv"))}
        self.planted = {c: {parse_pipeline_id(p): int(k) for p, k in part.items()}
                        for c, part in self.planted.items()}
        self.scale = {parse_pipeline_id(p): float(s) for p, s in self.scale.items()}
        self.validate()

    def validate(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValidationError(f"dims must be three positive integers, got {self.dims}")
        if self.n_groups < 1:
            raise ValidationError("n_groups must be at least 1")
        sig = (self.sigma_group, self.sigma_community, self.sigma_noise)
        if min(sig) < 0 or max(sig) == 0:
            raise ValidationError("stds must be >= 0 with at least one > 0")
        if self.blob is not None and not self.blob.radius < min(self.dims) / 2:
            raise ValidationError(f"blob radius {self.blob.radius} must be < min(dims)/2")
        for contrast, part in self.planted.items():
            missing = [str(p) for p in self.pipelines if p not in part]
            if missing:
                raise ValidationError(f"planted partition of {contrast!r} misses {missing}")
        if any(s <= 0 for s in self.scale.values()):
            raise ValidationError("scale multipliers must be positive")

    @property
    def contrasts(self) -> list:
        return sorted(self.planted)

    @property
    def affine(self) -> np.ndarray:
        a = np.diag([self.voxel_size] * 3 + [1.0])
        a[:3, 3] = [-(n - 1) * self.voxel_size / 2 for n in self.dims]
        return a

    def group_ids(self) -> list:
        width = max(3, len(str(self.n_groups - 1)))
        return [f"g{i:0{width}d}" for i in range(self.n_groups)]

    def to_json(self) -> dict:
        return {
            "dims": list(self.dims),
            "n_groups": self.n_groups,
            "pipelines": [str(p) for p in self.pipelines],
            "sigma_group": self.sigma_group,
            "sigma_community": self.sigma_community,
            "sigma_noise": self.sigma_noise,
            "blob": None if self.blob is None else {"center": list(self.blob.center),
                                                   "radius": self.blob.radius,
                                                   "amplitude": self.blob.amplitude},
            "scale": {str(p): s for p, s in sorted(self.scale.items(), key=lambda kv: str(kv[0]))},
            "voxel_size": self.voxel_size,
            "seed": self.seed,
        }


def planted_by(pipelines, attributes) -> dict:
    """Community per pipeline from the distinct values of some attributes.

    Labels follow first appearance in canonical pipeline order.
    """
    attrs = [_ATTR_ALIASES.get(a.strip(), a.strip()) for a in attributes]
    unknown = [a for a in attrs if a not in ATTRIBUTES]
    if unknown:
        raise ValidationError(f"unknown pipeline attributes {unknown}")
    labels = {}
    out = {}
    for p in canonical_order(parse_pipeline_id(x) for x in pipelines):
        key = tuple(getattr(p, a) for a in attrs)
        out[p] = labels.setdefault(key, len(labels))
    return out


def blob_pattern(cfg: SynthConfig) -> np.ndarray:
    """Constant-amplitude voxel-space sphere (zeros when no blob is configured)."""
    if cfg.blob is None:
        return np.zeros(cfg.dims)
    grids = np.meshgrid(*(np.arange(n) for n in cfg.dims), indexing="ij")
    d2 = sum((g - c) ** 2 for g, c in zip(grids, cfg.blob.center))
    return np.where(d2 <= cfg.blob.radius ** 2, float(cfg.blob.amplitude), 0.0)


def blob_voxel_count(cfg: SynthConfig) -> int:
    return int(np.count_nonzero(blob_pattern(cfg))) if cfg.blob is not None else 0


def expected_correlations(cfg: SynthConfig) -> tuple:
    """Expected (within-community, between-community) Pearson r at unit scales.

    A blob enters as a shared deterministic signal whose spatial variance
    over the grid adds to the shared variance of every pair.
    """
    s_blob = float(np.var(blob_pattern(cfg))) if cfg.blob is not None else 0.0
    g2, c2, e2 = cfg.sigma_group ** 2, cfg.sigma_community ** 2, cfg.sigma_noise ** 2
    total = s_blob + g2 + c2 + e2
    return (s_blob + g2 + c2) / total, (s_blob + g2) / total


def _stream(cfg: SynthConfig, contrast: str, group: int, kind: int, idx: int) -> np.random.Generator:
    key = [cfg.seed, zlib.crc32(contrast.encode("utf-8")), group, kind, idx]
    return np.random.default_rng(np.random.SeedSequence(key))


def group_maps(cfg: SynthConfig, contrast: str, group: int) -> dict:
    """All pipeline maps of one (contrast, group) as arrays of shape ``dims``."""
    base = blob_pattern(cfg)
    if cfg.sigma_group:
        base = base + cfg.sigma_group * _stream(cfg, contrast, group, _GROUP, 0).standard_normal(cfg.dims)
    planted = cfg.planted[contrast]
    community = {}
    for k in sorted(set(planted.values())):
        community[k] = (cfg.sigma_community * _stream(cfg, contrast, group, _COMMUNITY, k).standard_normal(cfg.dims)
                        if cfg.sigma_community else 0.0)
    stream_index = {p: i for i, p in enumerate(all_pipelines())}
    out = {}
    for p in cfg.pipelines:
        m = base + community[planted[p]]
        if cfg.sigma_noise:
            m = m + cfg.sigma_noise * _stream(cfg, contrast, group, _PIPELINE, stream_index[p]).standard_normal(cfg.dims)
        out[p] = cfg.scale.get(p, 1.0) * m
    return out


def map_path(out_dir, contrast: str, group_id: str, pipeline) -> Path:
    name = str(pipeline).replace(",", "-")
    return Path(out_dir) / "maps" / contrast / group_id / f"{name}.nii"


def ground_truth(cfg: SynthConfig) -> dict:
    r_within, r_between = expected_correlations(cfg)
    planted = {}
    for contrast in cfg.contrasts:
        part = cfg.planted[contrast]
        comms = {}
        for p in cfg.pipelines:
            comms.setdefault(part[p], []).append(str(p))
        planted[contrast] = [comms[k] for k in sorted(comms)]
    return {
        "config": cfg.to_json(),
        "contrasts": cfg.contrasts,
        "planted": planted,
        "expected_correlations": {"within": r_within, "between": r_between},
        "blob_voxel_count": blob_voxel_count(cfg),
    }


def generate(cfg: SynthConfig, out_dir, jobs: int = 1) -> tuple:
    """Write volumes, ``manifest.csv`` and ``ground_truth.json`` under ``out_dir``.

    Returns ``(manifest_path, ground_truth_path)``.  Output depends only on
    ``cfg``; ``jobs`` changes nothing but wall time.
    """
    out_dir = Path(out_dir)
    affine = cfg.affine
    groups = cfg.group_ids()
    tasks = [(c, gi) for c in cfg.contrasts for gi in range(cfg.n_groups)]

    def one(task):
        contrast, gi = task
        entries = []
        for p, data in group_maps(cfg, contrast, gi).items():
            path = map_path(out_dir, contrast, groups[gi], p)
            path.parent.mkdir(parents=True, exist_ok=True)
            write_volume(Volume(cfg.dims, affine, data.astype(np.float32)), path)
            entries.append(Entry(contrast, groups[gi], p, str(path)))
        return entries

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        entries = [e for batch in parallel_map(one, tasks, jobs) for e in batch]
        manifest = out_dir / "manifest.csv"
        write_manifest(entries, manifest)
        truth = out_dir / "ground_truth.json"
        truth.write_text(json.dumps(ground_truth(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        if isinstance(exc, DataIOError):
            raise
        raise DataIOError(f"cannot write synthetic dataset to {out_dir}: {exc}") from exc
    return manifest, truth


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",")]


def load_config(path) -> SynthConfig:
    """Read an INI synth config.

    ``[synth]`` holds scalar settings; each ``[contrast.NAME]`` section
    plants a partition either with ``planted = attr,attr`` or with explicit
    ``pipeline-id = label`` lines; ``[scale]`` maps a pipeline id or a
    software name to a multiplier.
    """
    cp = configparser.ConfigParser(delimiters=("=",), interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise DataIOError(f"cannot read synth config {path!r}: {exc.strerror or exc}") from exc
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return config_from_parser(cp)


def config_from_parser(cp: configparser.ConfigParser, overrides: dict = None) -> SynthConfig:
    s = dict(cp["synth"]) if cp.has_section("synth") else {}
    s.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    try:
        kw = {}
        if "dims" in s:
            kw["dims"] = tuple(int(x) for x in s["dims"].split(","))
        for key, conv in (("n_groups", int), ("seed", int), ("sigma_group", float),
                          ("sigma_community", float), ("sigma_noise", float), ("voxel_size", float)):
            if key in s:
                kw[key] = conv(s[key])
        pipelines = all_pipelines()
        if s.get("pipelines", "all").strip() != "all":
            pipelines = [parse_pipeline_id(x) for x in s["pipelines"].split(";") if x.strip()]
        kw["pipelines"] = pipelines
        if "blob_amplitude" in s:
            kw["blob"] = Blob(tuple(_floats(s["blob_center"])), float(s["blob_radius"]),
                              float(s["blob_amplitude"]))
        planted = {}
        for sec in cp.sections():
            if not sec.startswith("contrast."):
                continue
            name = sec[len("contrast."):]
            body = dict(cp[sec])
            if "planted" in body:
                planted[name] = planted_by(pipelines, body["planted"].split(","))
            else:
                planted[name] = {parse_pipeline_id(k): int(v) for k, v in body.items()}
        kw["planted"] = planted
        scale = {}
        if cp.has_section("scale"):
            for key, val in cp["scale"].items():
                if key.strip() in ("fsl", "spm"):
                    scale.update({p: float(val) for p in pipelines if p.software == key.strip()})
            for key, val in cp["scale"].items():
                if key.strip() not in ("fsl", "spm"):
                    scale[parse_pipeline_id(key)] = float(val)
        kw["scale"] = scale
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad synth config: {exc}") from None
    return SynthConfig(**kw)
