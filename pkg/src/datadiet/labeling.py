"""3D connected-component labeling with a two-pass union-find.

Labels are numbered 1..K in the order a component is first met when scanning
x fastest, then y, then z.  The label assignment does not depend on how the
work is scheduled, so results are reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .volume import Kind, VoxelGrid

CONNECTIVITIES = (6, 18, 26)


def backward_offsets(connectivity: int) -> np.ndarray:
    """Neighbour offsets ``(dz, dy, dx)`` already visited in scan order."""
    if connectivity not in CONNECTIVITIES:
        raise ValueError(f"connectivity must be one of {CONNECTIVITIES}, got {connectivity}")
    out = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if (dz, dy, dx) >= (0, 0, 0):
                    continue
                order = abs(dz) + abs(dy) + abs(dx)
                if connectivity == 6 and order > 1:
                    continue
                if connectivity == 18 and order > 2:
                    continue
                out.append((dz, dy, dx))
    return np.array(out, dtype=np.int64)


@numba.njit(cache=True, nogil=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@numba.njit(cache=True, nogil=True)
def _label_zyx(mask, offsets, max_labels):
    """Label a C-ordered ``(nz, ny, nx)`` mask; returns (labels, count)."""
    nz, ny, nx = mask.shape
    labels = np.zeros((nz, ny, nx), dtype=np.int32)
    parent = np.empty(max_labels + 1, dtype=np.int32)
    parent[0] = 0
    next_label = 1
    n_off = offsets.shape[0]
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not mask[z, y, x]:
                    continue
                current = 0
                for o in range(n_off):
                    zz = z + offsets[o, 0]
                    yy = y + offsets[o, 1]
                    xx = x + offsets[o, 2]
                    if zz < 0 or yy < 0 or xx < 0 or yy >= ny or xx >= nx:
                        continue
                    lab = labels[zz, yy, xx]
                    if lab == 0:
                        continue
                    if current == 0:
                        current = lab
                    elif lab != current:
                        ra = _find(parent, current)
                        rb = _find(parent, lab)
                        if ra < rb:
                            parent[rb] = ra
                        elif rb < ra:
                            parent[ra] = rb
                if current == 0:
                    current = next_label
                    parent[current] = current
                    next_label += 1
                labels[z, y, x] = current

    # roots are the smallest provisional label of each set, i.e. the label
    # of its first scanned voxel, so numbering roots in order is scan order
    final = np.zeros(next_label, dtype=np.int32)
    count = 0
    for lab in range(1, next_label):
        root = _find(parent, lab)
        if root == lab:
            count += 1
            final[lab] = count
        else:
            final[lab] = final[root]
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                lab = labels[z, y, x]
                if lab:
                    labels[z, y, x] = final[lab]
    return labels, count


@numba.njit(cache=True, nogil=True)
def _component_sizes(labels_flat, count):
    sizes = np.zeros(count + 1, dtype=np.int64)
    for i in range(labels_flat.size):
        sizes[labels_flat[i]] += 1
    return sizes


@numba.njit(cache=True, nogil=True)
def _touched(labels_flat, other_flat, count):
    hit = np.zeros(count + 1, dtype=np.bool_)
    for i in range(labels_flat.size):
        lab = labels_flat[i]
        if lab and other_flat[i]:
            hit[lab] = True
    return hit


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Result of :func:`connected_components`.

    ``labels`` is indexed ``[x, y, z]`` like the input; ``component_sizes[i]``
    is the voxel count of label ``i + 1``.
    """

    labels: np.ndarray
    component_count: int
    component_sizes: np.ndarray
    connectivity: int = 26

    def as_grid(self, like: VoxelGrid) -> VoxelGrid:
        return like.with_data(self.labels, kind=Kind.LABEL)

    def components_touching(self, other) -> np.ndarray:
        """Boolean per component (index 0 = label 1): overlaps ``other``?"""
        other = _as_array(other)
        if other.shape != self.labels.shape:
            raise ValueError(f"shape {other.shape} does not match {self.labels.shape}")
        hit = _touched(
            self.labels.ravel(order="F"),
            other.astype(bool, copy=False).ravel(order="F"),
            self.component_count,
        )
        return hit[1:]


def _as_array(mask) -> np.ndarray:
    return mask.data if isinstance(mask, VoxelGrid) else np.asarray(mask)


def connected_components(mask, connectivity: int = 26) -> ComponentLabeling:
    """Label the foreground of a binary mask.

    ``mask`` may be a :class:`VoxelGrid` or any 3D array; nonzero voxels are
    foreground.  ``connectivity`` is 6 (faces), 18 (faces and edges) or 26
    (faces, edges and corners).
    """
    offsets = backward_offsets(connectivity)
    arr = _as_array(mask)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3D mask, got shape {arr.shape}")
    fg = arr.astype(bool, copy=False)
    # x-fastest scan: work on the (z, y, x) view of an F-ordered copy
    zyx = np.asfortranarray(fg).T
    n_fg = int(np.count_nonzero(zyx))
    labels_zyx, count = _label_zyx(zyx, offsets, n_fg)
    labels = labels_zyx.T
    sizes = _component_sizes(labels_zyx.reshape(-1), count)
    return ComponentLabeling(labels, int(count), sizes[1:], connectivity)
