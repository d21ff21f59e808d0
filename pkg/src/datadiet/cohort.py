"""Dataset manifests, directory scanning and cohort imbalance statistics."""
from __future__ import annotations

import csv
import datetime as dt
import enum
import hashlib
import io
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .distcompare import DistributionSummary
from .errors import DatadietError, EmptyInputError, MalformedIdError
from .metrics import MetricReport
from .nifti import load_nifti

log = logging.getLogger(__name__)

MANIFEST_VERSION = "1"
ID_PATTERN = re.compile(r"^(?P<tracer>[a-z]+)_(?P<hash>[0-9a-f]+)_(?P<date>\d{4}-\d{2}-\d{2})$")
NIFTI_SUFFIXES = (".nii.gz", ".nii")
CT_SUFFIX = "_0000"
PET_SUFFIX = "_0001"
IMAGES_DIR = "imagesTr"
LABELS_DIR = "labelsTr"
PREDS_DIR = "predsTr"
PATH_FIELDS = ("ct_path", "pet_path", "label_path", "pred_path")


class Tracer(str, enum.Enum):
    FDG = "FDG"
    PSMA = "PSMA"


def parse_sample_id(sample_id: str) -> tuple[Tracer, str, str]:
    """Split ``<tracer>_<patient hash>_<YYYY-MM-DD>`` into its parts."""
    m = ID_PATTERN.match(sample_id)
    if not m:
        raise MalformedIdError(f"{sample_id!r} is not <fdg|psma>_<hex>_<YYYY-MM-DD>")
    prefix = m["tracer"]
    if prefix not in ("fdg", "psma"):
        raise MalformedIdError(f"{sample_id!r}: unknown tracer prefix {prefix!r}")
    try:
        dt.date.fromisoformat(m["date"])
    except ValueError as exc:
        raise MalformedIdError(f"{sample_id!r}: bad study date ({exc})") from None
    return Tracer(prefix.upper()), m["hash"], m["date"]


def tracer_of(sample_id: str) -> Tracer:
    return parse_sample_id(sample_id)[0]


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    tracer: Tracer
    patient_hash: str
    study_date: str
    ct_path: Optional[str] = None
    pet_path: Optional[str] = None
    label_path: Optional[str] = None
    pred_path: Optional[str] = None
    metrics: Optional[MetricReport] = None
    is_sick: Optional[bool] = None

    def __post_init__(self):
        tracer, patient_hash, study_date = parse_sample_id(self.sample_id)
        object.__setattr__(self, "tracer", Tracer(self.tracer))
        if (self.tracer, self.patient_hash, self.study_date) != (tracer, patient_hash, study_date):
            raise MalformedIdError(
                f"{self.sample_id!r} disagrees with tracer/patient_hash/study_date fields"
            )

    @classmethod
    def from_id(cls, sample_id: str, **kwargs) -> SampleRecord:
        tracer, patient_hash, study_date = parse_sample_id(sample_id)
        return cls(sample_id, tracer, patient_hash, study_date, **kwargs)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "tracer": self.tracer.value,
            "patient_hash": self.patient_hash,
            "study_date": self.study_date,
            "ct_path": self.ct_path,
            "pet_path": self.pet_path,
            "label_path": self.label_path,
            "pred_path": self.pred_path,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "is_sick": self.is_sick,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SampleRecord:
        d = dict(d)
        if d.get("metrics") is not None:
            d["metrics"] = MetricReport.from_dict(d["metrics"])
        d["tracer"] = Tracer(d["tracer"])
        return cls(**d)


@dataclass(frozen=True)
class CohortManifest:
    """Sorted, duplicate-free collection of sample records."""

    samples: tuple[SampleRecord, ...] = ()
    version: str = MANIFEST_VERSION
    provenance: str = ""

    def __post_init__(self):
        samples = tuple(sorted(self.samples, key=lambda r: r.sample_id))
        for a, b in zip(samples, samples[1:]):
            if a.sample_id == b.sample_id:
                raise DatadietError(f"duplicate sample id {a.sample_id}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def ids(self) -> list[str]:
        return [r.sample_id for r in self.samples]

    def by_tracer(self, tracer: Tracer | str) -> list[SampleRecord]:
        tracer = Tracer(tracer)
        return [r for r in self.samples if r.tracer is tracer]

    def get(self, sample_id: str) -> SampleRecord:
        for r in self.samples:
            if r.sample_id == sample_id:
                return r
        raise KeyError(sample_id)

    def with_samples(self, samples: Iterable[SampleRecord], provenance: str | None = None) -> CohortManifest:
        return CohortManifest(
            tuple(samples),
            version=self.version,
            provenance=self.provenance if provenance is None else provenance,
        )

    def with_metrics(self, reports: Iterable[MetricReport]) -> CohortManifest:
        by_id = {r.sample_id: r for r in reports}
        return self.with_samples(
            replace(r, metrics=by_id[r.sample_id]) if r.sample_id in by_id else r
            for r in self.samples
        )

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "provenance": self.provenance,
            "samples": [r.to_dict() for r in self.samples],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return "sha256:" + hashlib.sha256(canonical.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> CohortManifest:
        return cls(
            tuple(SampleRecord.from_dict(s) for s in d.get("samples", [])),
            version=str(d.get("version", MANIFEST_VERSION)),
            provenance=d.get("provenance", ""),
        )

    def resolve_paths(self, base) -> CohortManifest:
        """Make relative file paths absolute with respect to ``base``."""
        base = Path(base)

        def resolve(rec):
            updates = {}
            for key in PATH_FIELDS:
                value = getattr(rec, key)
                if value is not None and not Path(value).is_absolute():
                    updates[key] = str(base / value)
            return replace(rec, **updates) if updates else rec

        return self.with_samples(resolve(r) for r in self.samples)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> CohortManifest:
        """Read a manifest; relative paths resolve against its directory."""
        path = Path(path)
        with open(path) as fh:
            manifest = cls.from_dict(json.load(fh))
        return manifest.resolve_paths(path.resolve().parent)


@dataclass(frozen=True)
class ScanIssue:
    name: str
    message: str


def _strip_nifti(name: str) -> str | None:
    for suffix in NIFTI_SUFFIXES:
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return None


def _label_is_sick(path: str) -> bool:
    grid = load_nifti(path)
    return bool(np.any(grid.data))


def scan_dataset(root, pred_dir=None, workers: int = 1, load_labels: bool = True):
    """Discover studies under ``root`` and build a manifest.

    Expected layout: ``imagesTr/<id>_0000.nii.gz`` (CT),
    ``imagesTr/<id>_0001.nii.gz`` (PET), ``labelsTr/<id>.nii.gz`` and
    optionally ``predsTr/<id>.nii.gz`` (or ``pred_dir``).  Files directly in
    ``root`` are treated like label files.

    Returns ``(manifest, issues)``; unparsable ids and unreadable labels end
    up in ``issues`` instead of being dropped silently.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatadietError(f"{root} is not a directory")
    found: dict[str, dict[str, str]] = {}
    issues: list[ScanIssue] = []

    def add(sample_id: str, key: str, path: Path):
        found.setdefault(sample_id, {})[key] = str(path)

    sources = [
        (root / IMAGES_DIR, "image"),
        (root / LABELS_DIR, "label_path"),
        (Path(pred_dir) if pred_dir else root / PREDS_DIR, "pred_path"),
        (root, "label_path"),
    ]
    for directory, key in sources:
        if not directory.is_dir():
            continue
        for path in sorted(directory.iterdir()):
            stem = _strip_nifti(path.name)
            if stem is None or not path.is_file():
                continue
            if key == "image":
                if stem.endswith(CT_SUFFIX):
                    add(stem[: -len(CT_SUFFIX)], "ct_path", path)
                elif stem.endswith(PET_SUFFIX):
                    add(stem[: -len(PET_SUFFIX)], "pet_path", path)
                else:
                    issues.append(ScanIssue(path.name, "image without _0000/_0001 channel suffix"))
            else:
                found.setdefault(stem, {}).setdefault(key, str(path))

    records = []
    for sample_id in sorted(found):
        try:
            records.append(SampleRecord.from_id(sample_id, **found[sample_id]))
        except MalformedIdError as exc:
            issues.append(ScanIssue(sample_id, str(exc)))

    if load_labels:
        def sick(rec):
            if rec.label_path is None:
                return rec, None
            try:
                return rec, _label_is_sick(rec.label_path)
            except DatadietError as exc:
                issues.append(ScanIssue(rec.sample_id, f"label unreadable: {exc}"))
                return rec, None

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            records = [replace(rec, is_sick=flag) for rec, flag in pool.map(sick, records)]

    manifest = CohortManifest(tuple(records), provenance=f"scanned from {root}")
    return manifest, sorted(issues, key=lambda i: i.name)


@dataclass(frozen=True)
class CohortStats:
    total: int
    counts: dict
    fractions: dict
    sick_rates: dict
    labelled: dict
    missing_predictions: int = 0

    def rows(self) -> list[dict]:
        out = []
        for tracer in Tracer:
            t = tracer.value
            out.append(
                {
                    "tracer": t,
                    "count": self.counts[t],
                    "fraction": self.fractions[t],
                    "sick_rate": self.sick_rates[t],
                    "labelled": self.labelled[t],
                }
            )
        return out

    def format_table(self) -> str:
        def pct(v):
            return "n/a" if v is None else f"{100 * v:.2f}%"

        lines = [f"total samples: {self.total}", f"{'tracer':<8}{'count':>8}{'fraction':>11}{'sick rate':>11}"]
        for row in self.rows():
            lines.append(
                f"{row['tracer']:<8}{row['count']:>8}{pct(row['fraction']):>11}{pct(row['sick_rate']):>11}"
            )
        if self.missing_predictions:
            lines.append(f"records without predictions: {self.missing_predictions}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["tracer", "count", "fraction", "sick_rate", "labelled"])
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: "" if v is None else v for k, v in row.items()})
        return buf.getvalue()


def cohort_stats(manifest: CohortManifest) -> CohortStats:
    """Tracer split and per-tracer sick rates.

    Fractions and sick rates are ``None`` when their denominator is zero.
    Sick rates only use records whose ``is_sick`` is known.
    """
    total = len(manifest)
    counts, fractions, sick_rates, labelled = {}, {}, {}, {}
    for tracer in Tracer:
        recs = manifest.by_tracer(tracer)
        known = [r for r in recs if r.is_sick is not None]
        counts[tracer.value] = len(recs)
        fractions[tracer.value] = len(recs) / total if total else None
        labelled[tracer.value] = len(known)
        sick_rates[tracer.value] = sum(r.is_sick for r in known) / len(known) if known else None
    missing = sum(1 for r in manifest if r.pred_path is None)
    return CohortStats(total, counts, fractions, sick_rates, labelled, missing)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    distribution: DistributionSummary = field(repr=False)

    @property
    def bin_count(self) -> int:
        return len(self.counts)


def histogram(values, bin_count: int, units: str = "") -> Histogram:
    """Equal-width histogram over ``[min, max]``; the last bin is closed.

    Constant input collapses to a single bin holding every value.
    """
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise EmptyInputError("histogram of an empty sequence")
    dist = DistributionSummary.from_values(arr, units=units)
    lo, hi = float(arr.min()), float(arr.max())
    if lo == hi:
        return Histogram(np.array([lo, hi]), np.array([arr.size]), dist)
    counts, edges = np.histogram(arr, bins=bin_count, range=(lo, hi))
    return Histogram(edges, counts, dist)
