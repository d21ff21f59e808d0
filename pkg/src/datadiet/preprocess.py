"""Resampling to a common spacing and intensity normalization to [0, 1]."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidGridError, LabelInterpolationError
from .volume import Kind, VoxelGrid, reorient_to_las

CHALLENGE_SPACING = (2.036, 2.036, 3.0)
DEFAULT_CT_CLIP = (-1024.0, 1024.0)
DEFAULT_PET_CLIP = (0.0, 40.0)


class Interpolation(str, enum.Enum):
    TRILINEAR = "trilinear"
    NEAREST = "nearest"


@dataclass(frozen=True)
class PreprocessConfig:
    target_spacing: tuple[float, float, float] = CHALLENGE_SPACING
    ct_clip: tuple[float, float] = DEFAULT_CT_CLIP
    pet_clip: tuple[float, float] = DEFAULT_PET_CLIP
    interpolation: Interpolation = Interpolation.TRILINEAR

    def __post_init__(self):
        spacing = tuple(float(s) for s in self.target_spacing)
        if len(spacing) != 3 or not all(s > 0 for s in spacing):
            raise ValueError(f"target_spacing must be three positive values, got {self.target_spacing}")
        object.__setattr__(self, "target_spacing", spacing)
        for name in ("ct_clip", "pet_clip"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not lo < hi:
                raise ValueError(f"{name}: lower bound {lo} must be below upper bound {hi}")
            object.__setattr__(self, name, (lo, hi))
        object.__setattr__(self, "interpolation", Interpolation(self.interpolation))

    def to_text(self) -> str:
        def fmt(values):
            return ", ".join(repr(float(v)) for v in values)

        return (
            f"target_spacing = {fmt(self.target_spacing)}\n"
            f"ct_clip = {fmt(self.ct_clip)}\n"
            f"pet_clip = {fmt(self.pet_clip)}\n"
            f"interpolation = {self.interpolation.value}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> PreprocessConfig:
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        kwargs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "interpolation":
                kwargs[key] = Interpolation(value.lower())
            elif key in ("target_spacing", "ct_clip", "pet_clip"):
                kwargs[key] = tuple(float(v) for v in value.replace(",", " ").split())
            else:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> PreprocessConfig:
        with open(path) as fh:
            return cls.from_text(fh.read())

    def to_dict(self) -> dict:
        return {
            "target_spacing": list(self.target_spacing),
            "ct_clip": list(self.ct_clip),
            "pet_clip": list(self.pet_clip),
            "interpolation": self.interpolation.value,
        }


def output_dims(dims, spacing, target_spacing) -> tuple[int, int, int]:
    """``round(n * s / t)`` per axis, halves away from zero, at least 1."""
    return tuple(
        max(1, math.floor(n * s / t + 0.5)) for n, s, t in zip(dims, spacing, target_spacing)
    )


def _source_coords(n_out: int, source: float, target: float) -> np.ndarray:
    # output voxel i sits at the same world position as source index i * t / s
    return np.arange(n_out, dtype=np.float64) * (target / source)


def _linear_axis(arr: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    n = arr.shape[axis]
    coords = np.clip(coords, 0.0, n - 1)
    lo = np.floor(coords).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    w = coords - lo
    shape = [1, 1, 1]
    shape[axis] = -1
    w = w.reshape(shape).astype(arr.dtype)
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, hi, axis=axis)
    # a + w (b - a) is exact when a == b, unlike (1 - w) a + w b
    return a + w * (b - a)


def _nearest_index(coords: np.ndarray, n: int) -> np.ndarray:
    # ties at .5 go to the lower index
    idx = np.ceil(coords - 0.5).astype(np.intp)
    return np.clip(idx, 0, n - 1)


def resample(grid: VoxelGrid, target_spacing, interpolation=Interpolation.TRILINEAR) -> VoxelGrid:
    """Resample ``grid`` onto ``target_spacing`` keeping origin and direction.

    Samples beyond the last source voxel take the edge value.
    """
    interpolation = Interpolation(interpolation)
    target = tuple(float(t) for t in target_spacing)
    if len(target) != 3 or not all(t > 0 for t in target):
        raise InvalidGridError(f"target spacing must be three positive values, got {target_spacing}")
    if grid.kind is Kind.LABEL and interpolation is Interpolation.TRILINEAR:
        raise LabelInterpolationError("label grids can only be resampled with nearest neighbour")

    dims = output_dims(grid.dims, grid.spacing, target)
    coords = [_source_coords(dims[k], grid.spacing[k], target[k]) for k in range(3)]
    if interpolation is Interpolation.NEAREST:
        idx = [_nearest_index(coords[k], grid.dims[k]) for k in range(3)]
        data = grid.data[np.ix_(*idx)]
    else:
        data = grid.data
        if data.dtype != np.float64:
            data = data.astype(np.float64)
        for axis in range(3):
            if dims[axis] == grid.dims[axis] and target[axis] == grid.spacing[axis]:
                continue
            data = _linear_axis(data, coords[axis], axis)
    return VoxelGrid(
        data, spacing=target, origin=grid.origin, direction=grid.direction, kind=grid.kind
    )


def normalize_intensity(grid: VoxelGrid, clip) -> VoxelGrid:
    """Map ``[lo, hi]`` linearly onto ``[0, 1]``, saturating outside it."""
    lo, hi = (float(v) for v in clip)
    if not lo < hi:
        raise ValueError(f"clip lower bound {lo} must be below upper bound {hi}")
    if grid.kind is not Kind.SCALAR:
        raise InvalidGridError("intensity normalization needs a scalar grid")
    v = np.clip(grid.data.astype(np.float64), lo, hi)
    out = (v - lo) / (hi - lo)
    return grid.with_data(out.astype(np.float32))


def preprocess_image(grid: VoxelGrid, clip, config: PreprocessConfig) -> VoxelGrid:
    """Reorient to LAS, resample with the configured interpolation, normalize."""
    grid = reorient_to_las(grid)
    grid = resample(grid, config.target_spacing, config.interpolation)
    return normalize_intensity(grid, clip)


def preprocess_label(grid: VoxelGrid, config: PreprocessConfig) -> VoxelGrid:
    grid = reorient_to_las(grid)
    return resample(grid, config.target_spacing, Interpolation.NEAREST)
