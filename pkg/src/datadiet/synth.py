"""Synthetic masks and cohorts with analytically known properties."""
from __future__ import annotations

import datetime as dt
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .cohort import IMAGES_DIR, LABELS_DIR, PREDS_DIR, CohortManifest, SampleRecord
from .errors import LesionOutOfBoundsError
from .nifti import write_nifti
from .preprocess import CHALLENGE_SPACING
from .volume import Kind, VoxelGrid

MANIFEST_FILE = "manifest.json"

PRESETS = {
    "paper-cohort": dict(n_fdg=1014, n_psma=597, psma_sick_rate=0.90, fdg_sick_rate=0.494),
    "small": dict(n_fdg=12, n_psma=20, psma_sick_rate=0.90, fdg_sick_rate=0.5),
}


class Shape(str, enum.Enum):
    BALL = "ball"
    BOX = "box"


@dataclass(frozen=True)
class Lesion:
    """A ball (Euclidean) or box (per-axis) neighbourhood of ``center``.

    ``center`` may be fractional: a box at center 0.5 with radius 0.5 covers
    voxels 0 and 1 on that axis.
    """

    center: tuple[float, float, float]
    radius: float
    shape: Shape = Shape.BALL


@dataclass(frozen=True)
class SynthSpec:
    dims: tuple[int, int, int] = (32, 32, 32)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    lesions: tuple[Lesion, ...] = ()
    seed: int = 0


def _check_bounds(lesion: Lesion, dims) -> None:
    for c, n in zip(lesion.center, dims):
        if c - lesion.radius < 0 or c + lesion.radius > n - 1:
            raise LesionOutOfBoundsError(f"{lesion} does not fit in dims {tuple(dims)}")


def _paint(fg: np.ndarray, lesion: Lesion) -> None:
    """OR ``lesion`` into ``fg`` in place, touching only its bounding box."""
    _check_bounds(lesion, fg.shape)
    lo = [max(0, int(np.floor(c - lesion.radius))) for c in lesion.center]
    hi = [min(n, int(np.ceil(c + lesion.radius)) + 1) for c, n in zip(lesion.center, fg.shape)]
    grids = np.ogrid[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
    offsets = [g - c for g, c in zip(grids, lesion.center)]
    if Shape(lesion.shape) is Shape.BALL:
        local = (offsets[0] ** 2 + offsets[1] ** 2 + offsets[2] ** 2) <= lesion.radius**2 + 1e-9
    else:
        local = np.ones([h - l for l, h in zip(lo, hi)], dtype=bool)
        for off in offsets:
            local &= np.abs(off) <= lesion.radius + 1e-9
    fg[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] |= local


def lesion_mask(lesion: Lesion, dims) -> np.ndarray:
    fg = np.zeros(tuple(dims), dtype=bool)
    _paint(fg, lesion)
    return fg


def make_mask(spec: SynthSpec) -> VoxelGrid:
    """Union of the spec's lesions as a {0, 1} label grid."""
    fg = np.zeros(tuple(spec.dims), dtype=bool)
    for lesion in spec.lesions:
        _paint(fg, lesion)
    return VoxelGrid(fg.view(np.uint8), spacing=spec.spacing, kind=Kind.LABEL)


def count_for_rate(rate: float, n: int) -> int:
    """Nearest integer to ``rate * n``, halves rounded up."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate {rate} outside [0, 1]")
    return int((Decimal(str(rate)) * n).to_integral_value(rounding=ROUND_HALF_UP))


def _random_ids(rng: np.random.Generator, prefix: str, n: int, taken: set) -> list[str]:
    start = dt.date(2014, 1, 1)
    span = (dt.date(2022, 12, 31) - start).days
    out = []
    while len(out) < n:
        patient = "%016x" % int(rng.integers(0, 2**63))
        day = start + dt.timedelta(days=int(rng.integers(0, span + 1)))
        sid = f"{prefix}_{patient}_{day.isoformat()}"
        if sid not in taken:
            taken.add(sid)
            out.append(sid)
    return out


@dataclass(frozen=True)
class _Job:
    index: int
    sample_id: str
    sick: bool
    psma: bool


def _random_lesions(rng, dims, count) -> list[Lesion]:
    lesions = []
    fit = (min(dims) - 1) // 2  # largest radius that fits around an integer center
    for _ in range(count):
        r = min(float(rng.uniform(1.0, max(1.0, min(dims) / 6))), float(fit))
        center = tuple(float(rng.integers(int(np.ceil(r)), n - int(np.ceil(r)))) for n in dims)
        lesions.append(Lesion(center, r))
    return lesions


def _sample_volumes(job: _Job, seed: int, dims, spacing):
    """CT, PET, label and prediction-probability grids for one study."""
    rng = np.random.default_rng([seed, job.index])
    lesions = _random_lesions(rng, dims, int(rng.integers(1, 4))) if job.sick else []
    label = np.zeros(dims, dtype=bool)
    for les in lesions:
        _paint(label, les)

    ct = rng.normal(40.0, 60.0, dims) + 30.0 * label
    pet = np.abs(rng.normal(1.0, 0.3, dims)) + 8.0 * label

    difficulty = float(rng.uniform())
    prob = np.where(
        label,
        0.97 - 0.45 * difficulty * rng.uniform(size=dims),
        0.01 + 0.2 * difficulty * rng.uniform(size=dims),
    )
    if lesions and rng.uniform() < difficulty / 2:
        prob[lesion_mask(lesions[0], dims)] = 0.1  # missed lesion
    fp_chance = difficulty * (0.8 if job.psma else 0.4)
    if rng.uniform() < fp_chance:
        (blob,) = _random_lesions(rng, dims, 1)
        blob_mask = lesion_mask(blob, dims) & ~label
        prob[blob_mask] = np.maximum(prob[blob_mask], 0.8)

    def grid(arr, kind):
        return VoxelGrid(arr, spacing=spacing, kind=kind)

    return (
        grid(ct, Kind.SCALAR),
        grid(pet, Kind.SCALAR),
        grid(label.view(np.uint8), Kind.LABEL),
        grid(prob, Kind.SCALAR),
    )


def make_cohort(
    out_dir,
    n_fdg: int,
    n_psma: int,
    psma_sick_rate: float,
    seed: int = 0,
    fdg_sick_rate: float = 0.5,
    dims=(8, 8, 8),
    spacing=CHALLENGE_SPACING,
    workers: int = 1,
    compresslevel: int = 1,
) -> CohortManifest:
    """Write a synthetic PET/CT-style cohort under ``out_dir``.

    Exactly ``round(rate * n)`` records per tracer get a nonempty label.  A
    prediction volume is written for every study so the full evaluate ->
    prune -> compare workflow can run.  ``manifest.json`` stores paths
    relative to ``out_dir``; the returned manifest carries absolute paths.
    """
    if n_fdg < 0 or n_psma < 0:
        raise ValueError("counts must be non-negative")
    out_dir = Path(out_dir)
    dims = tuple(int(d) for d in dims)
    for sub in (IMAGES_DIR, LABELS_DIR, PREDS_DIR):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    taken: set = set()
    fdg_ids = _random_ids(rng, "fdg", n_fdg, taken)
    psma_ids = _random_ids(rng, "psma", n_psma, taken)
    fdg_sick = set(rng.permutation(n_fdg)[: count_for_rate(fdg_sick_rate, n_fdg)].tolist())
    psma_sick = set(rng.permutation(n_psma)[: count_for_rate(psma_sick_rate, n_psma)].tolist())

    jobs = [_Job(i, sid, i in fdg_sick, False) for i, sid in enumerate(fdg_ids)]
    jobs += [_Job(n_fdg + i, sid, i in psma_sick, True) for i, sid in enumerate(psma_ids)]

    def build(job: _Job) -> SampleRecord:
        ct, pet, label, prob = _sample_volumes(job, seed, dims, spacing)
        rel = {
            "ct_path": f"{IMAGES_DIR}/{job.sample_id}_0000.nii.gz",
            "pet_path": f"{IMAGES_DIR}/{job.sample_id}_0001.nii.gz",
            "label_path": f"{LABELS_DIR}/{job.sample_id}.nii.gz",
            "pred_path": f"{PREDS_DIR}/{job.sample_id}.nii.gz",
        }
        for key, grid in zip(rel, (ct, pet, label, prob)):
            write_nifti(grid, out_dir / rel[key], compresslevel=compresslevel)
        return SampleRecord.from_id(job.sample_id, is_sick=job.sick, **rel)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        records = list(pool.map(build, jobs))

    provenance = (
        f"synthetic cohort seed={seed} n_fdg={n_fdg} n_psma={n_psma} "
        f"psma_sick_rate={psma_sick_rate} fdg_sick_rate={fdg_sick_rate}"
    )
    relative = CohortManifest(tuple(records), provenance=provenance)
    relative.save(out_dir / MANIFEST_FILE)
    return relative.resolve_paths(out_dir.resolve())


def make_preset(name: str, out_dir, seed: int = 0, **overrides) -> CohortManifest:
    try:
        params = dict(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    params.update(overrides)
    return make_cohort(out_dir, seed=seed, **params)
