"""Pipeline identifiers and the (contrast, group, pipeline) -> file index."""

from __future__ import annotations

import csv
import itertools
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

from .errors import BadPipelineId, DataIOError, MalformedManifest, NonRectangularDataset

SOFTWARE = ("fsl", "spm")
FWHM = (5, 8)
MOTION = (0, 6, 24)
HRF = (0, 1)

MANIFEST_HEADER = ["contrast", "group_id", "pipeline_id", "path"]


class PipelineId(NamedTuple):
    software: str
    fwhm_mm: int
    n_motion: int
    hrf_deriv: int

    def __str__(self):
        return f"{self.software},{self.fwhm_mm},{self.n_motion},{self.hrf_deriv}"


_SPLIT = re.compile(r"\s*[,-]\s*")


def parse_pipeline_id(s: str) -> PipelineId:
    """Parse ``"fsl,8,0,0"`` or the hyphenated ``"spm-5-0-0"`` spelling.

    Whitespace around the separators is tolerated; mixing separators is not.
    """
    if isinstance(s, PipelineId):
        return s
    text = str(s).strip()
    if ("," in text) == ("-" in text):
        raise BadPipelineId(f"bad pipeline id {s!r}: expected 4 fields separated by ',' or '-'")
    parts = _SPLIT.split(text)
    if len(parts) != 4:
        raise BadPipelineId(f"bad pipeline id {s!r}: expected 4 fields, got {len(parts)}")
    software, fwhm, motion, hrf = parts
    if software not in SOFTWARE:
        raise BadPipelineId(f"bad pipeline id {s!r}: unknown software {software!r}")
    try:
        fwhm_i, motion_i, hrf_i = int(fwhm), int(motion), int(hrf)
    except ValueError:
        raise BadPipelineId(f"bad pipeline id {s!r}: non-integer field") from None
    if fwhm_i not in FWHM or str(fwhm_i) != fwhm:
        raise BadPipelineId(f"bad pipeline id {s!r}: fwhm must be one of {FWHM}")
    if motion_i not in MOTION or str(motion_i) != motion:
        raise BadPipelineId(f"bad pipeline id {s!r}: motion regressors must be one of {MOTION}")
    if hrf_i not in HRF or str(hrf_i) != hrf:
        raise BadPipelineId(f"bad pipeline id {s!r}: hrf derivative flag must be 0 or 1")
    return PipelineId(software, fwhm_i, motion_i, hrf_i)


def all_pipelines() -> list:
    """The 24 pipelines in canonical (sorted string) order."""
    ids = [PipelineId(*t) for t in itertools.product(SOFTWARE, FWHM, MOTION, HRF)]
    return canonical_order(ids)


def canonical_order(pipelines) -> list:
    return sorted(pipelines, key=str)


class Entry(NamedTuple):
    contrast: str
    group_id: str
    pipeline: PipelineId
    path: str


@dataclass(frozen=True)
class DatasetIndex:
    entries: tuple
    contrasts: tuple
    groups: tuple
    pipelines: tuple

    @classmethod
    def from_entries(cls, entries) -> "DatasetIndex":
        entries = tuple(entries)
        seen = set()
        for e in entries:
            key = (e.contrast, e.group_id, e.pipeline)
            if key in seen:
                raise MalformedManifest(f"duplicate entry for ({e.contrast}, {e.group_id}, {e.pipeline})")
            seen.add(key)
        contrasts = tuple(sorted({e.contrast for e in entries}))
        groups = tuple(sorted({e.group_id for e in entries}))
        pipelines = tuple(canonical_order({e.pipeline for e in entries}))

        # every (contrast, group) that appears must carry the full pipeline set
        present = {}
        for e in entries:
            present.setdefault((e.contrast, e.group_id), set()).add(e.pipeline)
        missing = []
        for (contrast, group), have in present.items():
            missing += [(contrast, group, str(p)) for p in pipelines if p not in have]
        if missing:
            raise NonRectangularDataset(missing)
        return cls(entries, contrasts, groups, pipelines)

    def groups_for(self, contrast: str) -> list:
        return sorted({e.group_id for e in self.entries if e.contrast == contrast})

    def path(self, contrast: str, group_id: str, pipeline: PipelineId) -> str:
        for e in self.entries:
            if e.contrast == contrast and e.group_id == group_id and e.pipeline == pipeline:
                return e.path
        raise KeyError((contrast, group_id, str(pipeline)))

    def paths(self, contrast: str, group_id: str) -> dict:
        """pipeline -> path for one (contrast, group)."""
        return {e.pipeline: e.path for e in self.entries
                if e.contrast == contrast and e.group_id == group_id}


def read_manifest(path) -> DatasetIndex:
    """Load a ``contrast,group_id,pipeline_id,path`` CSV.

    Relative paths are resolved against the manifest's directory.  Volumes
    are not opened here.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataIOError(f"cannot read manifest {os.fspath(path)!r}: {exc.strerror or exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != MANIFEST_HEADER:
        raise MalformedManifest(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
    base = path.parent
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise MalformedManifest(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
        contrast, group, pid, rel = (c.strip() for c in row)
        if not contrast or not group or not rel:
            raise MalformedManifest(f"{path}:{lineno}: empty field")
        try:
            pipeline = parse_pipeline_id(pid)
        except BadPipelineId as exc:
            raise MalformedManifest(f"{path}:{lineno}: {exc}") from None
        entries.append(Entry(contrast, group, pipeline, os.fspath(base / rel)))
    if not entries:
        raise MalformedManifest(f"{path}: no entries")
    return DatasetIndex.from_entries(entries)


def write_manifest(entries, path) -> None:
    """Write entries as a manifest; paths are made relative to its directory."""
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(MANIFEST_HEADER)
        for e in entries:
            rel = os.path.relpath(Path(e.path).resolve(), base)
            w.writerow([e.contrast, e.group_id, str(e.pipeline), Path(rel).as_posix()])
