"""In-memory volume representation and orientation handling.

A :class:`VoxelGrid` holds a 3D array indexed ``[x, y, z]`` together with its
geometry.  World coordinates follow the NIfTI RAS+ convention::

    world = direction @ diag(spacing) @ index + origin
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AmbiguousOrientationError, InvalidGridError

ORTHO_TOL = 1e-4
AMBIGUITY_TOL = 1e-6

# Signs of the dominant RAS component for each storage axis in LAS order.
LAS_SIGNS = (-1.0, 1.0, 1.0)


class Kind(str, enum.Enum):
    SCALAR = "scalar"
    LABEL = "label"


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """A 3D scalar or label volume with spatial metadata.

    ``data`` has shape ``(nx, ny, nz)``; :attr:`flat` gives the x-fastest
    buffer.  Scalar grids are stored as float32, label grids keep their
    non-negative integer dtype.  The array is made read-only on construction.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))
    kind: Kind = Kind.SCALAR

    def __post_init__(self):
        kind = Kind(self.kind)
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise InvalidGridError(f"expected a 3D array, got shape {data.shape}")
        if min(data.shape) < 1:
            raise InvalidGridError(f"all dims must be >= 1, got {data.shape}")
        if kind is Kind.SCALAR:
            if data.dtype != np.float32:
                data = data.astype(np.float32)
        else:
            if data.dtype == bool:
                data = data.astype(np.uint8)
            elif not np.issubdtype(data.dtype, np.integer):
                if not np.all(np.equal(np.mod(data, 1), 0)):
                    raise InvalidGridError("label grid contains non-integral values")
                data = data.astype(np.int32)
            if data.size and data.min() < 0:
                raise InvalidGridError("label grid contains negative values")
        if data.flags.writeable:
            data = data.view()
            data.flags.writeable = False

        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or len(origin) != 3:
            raise InvalidGridError("spacing and origin must have three components")
        if not all(s > 0 and np.isfinite(s) for s in spacing):
            raise InvalidGridError(f"spacing must be positive, got {spacing}")
        direction = np.array(self.direction, dtype=np.float64).reshape(3, 3)
        gram = direction.T @ direction
        if not np.allclose(gram, np.eye(3), atol=ORTHO_TOL):
            raise InvalidGridError("direction columns must be orthonormal")
        direction.flags.writeable = False

        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def flat(self) -> np.ndarray:
        return self.data.ravel(order="F")

    @property
    def voxel_volume_ml(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz / 1000.0

    @property
    def affine(self) -> np.ndarray:
        aff = np.eye(4)
        aff[:3, :3] = self.direction * np.asarray(self.spacing)
        aff[:3, 3] = self.origin
        return aff

    def with_data(self, data, kind: Kind | str | None = None) -> VoxelGrid:
        """Copy of this grid's geometry around new voxel data of the same shape."""
        data = np.asarray(data)
        if data.shape != self.data.shape:
            raise InvalidGridError(f"shape {data.shape} does not match {self.data.shape}")
        return replace(self, data=data, kind=self.kind if kind is None else Kind(kind))

    def world_coordinates(self) -> np.ndarray:
        """World position of every voxel, shape ``(nx, ny, nz, 3)``."""
        idx = np.indices(self.dims, dtype=np.float64)
        scaled = self.direction * np.asarray(self.spacing)
        return np.einsum("ij,j...->...i", scaled, idx) + np.asarray(self.origin)


def binary_mask(data, like: VoxelGrid | None = None, **geometry) -> VoxelGrid:
    """Build a {0, 1} label grid from anything truthy/falsy."""
    arr = np.asarray(data).astype(bool).view(np.uint8)
    if like is not None:
        return like.with_data(arr, kind=Kind.LABEL)
    return VoxelGrid(arr, kind=Kind.LABEL, **geometry)


def is_binary(grid: VoxelGrid) -> bool:
    return grid.kind is Kind.LABEL and int(grid.data.max(initial=0)) <= 1


def axis_codes(direction) -> tuple[tuple[int, float], ...]:
    """Nearest world axis and sign for each column of ``direction``.

    Raises AmbiguousOrientationError when a column has two equally dominant
    components or two columns snap to the same world axis.
    """
    direction = np.asarray(direction, dtype=np.float64)
    codes = []
    for j in range(3):
        col = direction[:, j]
        mags = np.abs(col)
        order = np.argsort(mags)[::-1]
        if mags[order[0]] - mags[order[1]] <= AMBIGUITY_TOL:
            raise AmbiguousOrientationError(f"axis {j} has no dominant world component: {col}")
        w = int(order[0])
        codes.append((w, 1.0 if col[w] > 0 else -1.0))
    if len({w for w, _ in codes}) != 3:
        raise AmbiguousOrientationError(f"axes snap to the same world axis: {codes}")
    return tuple(codes)


def orientation_string(direction) -> str:
    letters = (("L", "R"), ("P", "A"), ("I", "S"))
    return "".join(letters[w][sign > 0] for w, sign in axis_codes(direction))


def reorient_to_las(grid: VoxelGrid) -> VoxelGrid:
    """Permute and flip storage axes so they point Left, Anterior, Superior.

    World coordinates of every voxel are unchanged.  A grid that is already
    LAS is returned as is.
    """
    codes = axis_codes(grid.direction)
    # perm[k] = old axis that becomes new axis k
    perm = [0, 0, 0]
    for j, (w, _) in enumerate(codes):
        perm[w] = j
    flips = [codes[perm[k]][1] != LAS_SIGNS[k] for k in range(3)]
    if perm == [0, 1, 2] and not any(flips):
        return grid

    dims = grid.dims
    origin = np.asarray(grid.origin, dtype=np.float64)
    direction = np.empty((3, 3))
    spacing = []
    for k in range(3):
        j = perm[k]
        col = grid.direction[:, j]
        if flips[k]:
            origin = origin + col * grid.spacing[j] * (dims[j] - 1)
            col = -col
        direction[:, k] = col
        spacing.append(grid.spacing[j])

    data = np.transpose(grid.data, perm)
    flip_axes = tuple(k for k in range(3) if flips[k])
    if flip_axes:
        data = np.flip(data, axis=flip_axes)
    return VoxelGrid(
        np.ascontiguousarray(data),
        spacing=tuple(spacing),
        origin=tuple(origin),
        direction=direction,
        kind=grid.kind,
    )
