"""Minimal NIfTI-1 reader and writer for 3D volumes.

Single-file ``.nii`` and gzip-compressed ``.nii.gz`` are supported, in either
byte order.  Geometry comes from the sform when ``sform_code > 0``, else from
the qform quaternion, else from pixdim alone.
"""
from __future__ import annotations

import gzip
import os
from pathlib import Path

import numpy as np

from .errors import DimensionError, NotNiftiError, UnsupportedDatatypeError, VolumeIOError
from .volume import Kind, VoxelGrid

HEADER_SIZE = 348
DEFAULT_VOX_OFFSET = 352
GZIP_MAGIC = b"\x1f\x8b"

HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]

# NIfTI datatype code -> numpy base type
DATATYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    512: np.uint16,
}
DATATYPE_CODES = {np.dtype(t): code for code, t in DATATYPES.items()}


def header_dtype(byteorder: str = "<") -> np.dtype:
    fields = []
    for f in HEADER_FIELDS:
        name, code = f[0], f[1]
        if code[0] in "iuf":
            code = byteorder + code
        fields.append((name, code) + tuple(f[2:]))
    dt = np.dtype(fields)
    assert dt.itemsize == HEADER_SIZE
    return dt


def _open(path: Path):
    try:
        with open(path, "rb") as fh:
            magic = fh.read(2)
        if magic == GZIP_MAGIC:
            return gzip.open(path, "rb")
        return open(path, "rb")
    except OSError as exc:
        raise VolumeIOError(f"cannot open {path}: {exc}") from exc


def _read_exact(fh, n: int, path) -> bytes:
    try:
        buf = fh.read(n)
    except (OSError, EOFError) as exc:  # corrupt gzip stream
        raise VolumeIOError(f"{path}: {exc}") from exc
    if len(buf) != n:
        raise VolumeIOError(f"{path}: truncated, expected {n} bytes, got {len(buf)}")
    return buf


def parse_header(raw: bytes) -> np.ndarray:
    """Decode a 348-byte header, detecting byte order from ``sizeof_hdr``."""
    if len(raw) < HEADER_SIZE:
        raise NotNiftiError(f"header is {len(raw)} bytes, need {HEADER_SIZE}")
    for order in "<>":
        hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=header_dtype(order))[0]
        if int(hdr["sizeof_hdr"]) == HEADER_SIZE:
            break
    else:
        raise NotNiftiError("sizeof_hdr is not 348 in either byte order")
    if bytes(hdr["magic"]) != b"n+1":  # trailing NUL is stripped by the S4 dtype
        raise NotNiftiError(f"bad magic {bytes(hdr['magic'])!r}; only single-file NIfTI-1 is supported")
    return hdr


def quaternion_to_matrix(b: float, c: float, d: float) -> np.ndarray:
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 1e-7 else 0.0
    if a == 0.0:
        # 180 degree rotation: renormalise (b, c, d)
        norm = np.sqrt(b * b + c * c + d * d)
        b, c, d = b / norm, c / norm, d / norm
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )


def matrix_to_quaternion(rot: np.ndarray) -> tuple[float, float, float, float]:
    """Return ``(b, c, d, qfac)`` for an orthonormal direction matrix."""
    rot = np.array(rot, dtype=np.float64)
    qfac = 1.0
    if np.linalg.det(rot) < 0:
        rot[:, 2] = -rot[:, 2]
        qfac = -1.0
    # re-orthonormalise so the quaternion is exact for near-orthogonal input
    u, _, vt = np.linalg.svd(rot)
    rot = u @ vt
    trace = rot[0, 0] + rot[1, 1] + rot[2, 2]
    if trace > 0.5:
        a = 0.5 * np.sqrt(1.0 + trace)
        b = 0.25 * (rot[2, 1] - rot[1, 2]) / a
        c = 0.25 * (rot[0, 2] - rot[2, 0]) / a
        d = 0.25 * (rot[1, 0] - rot[0, 1]) / a
    else:
        xd = 1.0 + rot[0, 0] - (rot[1, 1] + rot[2, 2])
        yd = 1.0 + rot[1, 1] - (rot[0, 0] + rot[2, 2])
        zd = 1.0 + rot[2, 2] - (rot[0, 0] + rot[1, 1])
        if xd > 1.0:
            b = 0.5 * np.sqrt(xd)
            c = 0.25 * (rot[0, 1] + rot[1, 0]) / b
            d = 0.25 * (rot[0, 2] + rot[2, 0]) / b
            a = 0.25 * (rot[2, 1] - rot[1, 2]) / b
        elif yd > 1.0:
            c = 0.5 * np.sqrt(yd)
            b = 0.25 * (rot[0, 1] + rot[1, 0]) / c
            d = 0.25 * (rot[1, 2] + rot[2, 1]) / c
            a = 0.25 * (rot[0, 2] - rot[2, 0]) / c
        else:
            d = 0.5 * np.sqrt(zd)
            b = 0.25 * (rot[0, 2] + rot[2, 0]) / d
            c = 0.25 * (rot[1, 2] + rot[2, 1]) / d
            a = 0.25 * (rot[1, 0] - rot[0, 1]) / d
        if a < 0:
            b, c, d = -b, -c, -d
    return float(b), float(c), float(d), qfac


def header_geometry(hdr) -> tuple[tuple, tuple, np.ndarray]:
    """Spacing, origin and direction from a parsed header."""
    pixdim = hdr["pixdim"].astype(np.float64)
    spacing = tuple(float(abs(p)) if p != 0 else 1.0 for p in pixdim[1:4])
    if int(hdr["sform_code"]) > 0:
        m = np.stack([hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]]).astype(np.float64)
        lin = m[:, :3]
        norms = np.linalg.norm(lin, axis=0)
        if np.all(norms > 0):
            return spacing, tuple(m[:, 3]), lin / norms
    if int(hdr["qform_code"]) > 0:
        rot = quaternion_to_matrix(
            float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"])
        )
        if pixdim[0] < 0:
            rot[:, 2] = -rot[:, 2]
        origin = (float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"]))
        return spacing, origin, rot
    return spacing, (0.0, 0.0, 0.0), np.eye(3)


def _squeezed_dims(hdr) -> tuple[int, int, int]:
    dim = [int(v) for v in hdr["dim"]]
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise DimensionError(f"dim[0]={ndim} is out of range")
    shape = dim[1 : ndim + 1]
    if any(n < 1 for n in shape):
        raise DimensionError(f"non-positive dimension in {shape}")
    while len(shape) > 3 and shape[-1] == 1:
        shape.pop()
    if len(shape) != 3:
        raise DimensionError(f"expected a 3D volume, got dims {shape}")
    return tuple(shape)


def load_nifti(path, kind: Kind | str | None = None) -> VoxelGrid:
    """Read a NIfTI-1 file into a :class:`VoxelGrid`.

    ``kind`` forces scalar or label semantics.  By default float data and any
    data with a non-trivial scl_slope/scl_inter is scalar; integer data is a
    label grid when it is non-negative.
    """
    path = Path(path)
    with _open(path) as fh:
        try:
            raw = fh.read(HEADER_SIZE)
        except (OSError, EOFError) as exc:
            raise VolumeIOError(f"{path}: {exc}") from exc
        if len(raw) < HEADER_SIZE:
            raise NotNiftiError(f"{path}: file is shorter than a NIfTI-1 header")
        hdr = parse_header(raw)
        shape = _squeezed_dims(hdr)
        code = int(hdr["datatype"])
        if code not in DATATYPES:
            raise UnsupportedDatatypeError(f"{path}: datatype code {code}")
        byteorder = "<" if header_dtype("<") == hdr.dtype else ">"
        dtype = np.dtype(DATATYPES[code]).newbyteorder(byteorder)
        count = int(np.prod(shape, dtype=np.int64))
        offset = max(int(hdr["vox_offset"]), HEADER_SIZE)

        if isinstance(fh, gzip.GzipFile):
            _read_exact(fh, offset - HEADER_SIZE, path)
        else:
            size = os.fstat(fh.fileno()).st_size
            if size < offset + count * dtype.itemsize:
                raise VolumeIOError(
                    f"{path}: truncated, header declares {count} voxels but file has "
                    f"{max(size - offset, 0)} data bytes"
                )
            fh.seek(offset)
        buf = _read_exact(fh, count * dtype.itemsize, path)

    data = np.frombuffer(buf, dtype=dtype, count=count).reshape(shape, order="F")
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    scaled = slope != 0 and np.isfinite(slope) and (slope != 1 or inter != 0)
    if scaled:
        data = data.astype(np.float64) * slope + inter

    if kind is None:
        if scaled or np.issubdtype(data.dtype, np.floating):
            kind = Kind.SCALAR
        else:
            kind = Kind.LABEL if data.min(initial=0) >= 0 else Kind.SCALAR
    kind = Kind(kind)
    if kind is Kind.LABEL:
        data = data.astype(data.dtype.newbyteorder("="), copy=False)
    spacing, origin, direction = header_geometry(hdr)
    return VoxelGrid(data, spacing=spacing, origin=origin, direction=direction, kind=kind)


def _label_storage_dtype(data: np.ndarray) -> np.dtype:
    if np.dtype(data.dtype) in DATATYPE_CODES:
        return np.dtype(data.dtype)
    vmax = int(data.max(initial=0))
    for candidate in (np.uint8, np.uint16, np.int32):
        if vmax <= np.iinfo(candidate).max:
            return np.dtype(candidate)
    raise UnsupportedDatatypeError(f"label value {vmax} does not fit in int32")


def build_header(grid: VoxelGrid, dtype: np.dtype) -> np.ndarray:
    hdr = np.zeros((), dtype=header_dtype("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = [3, *grid.dims, 1, 1, 1, 1]
    hdr["datatype"] = DATATYPE_CODES[dtype]
    hdr["bitpix"] = dtype.itemsize * 8
    b, c, d, qfac = matrix_to_quaternion(grid.direction)
    hdr["pixdim"] = [qfac, *grid.spacing, 1, 1, 1, 1]
    hdr["vox_offset"] = DEFAULT_VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2  # mm
    hdr["qform_code"] = 1
    hdr["sform_code"] = 1
    hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"] = b, c, d
    hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"] = grid.origin
    aff = grid.affine
    hdr["srow_x"], hdr["srow_y"], hdr["srow_z"] = aff[0], aff[1], aff[2]
    hdr["descrip"] = b"datadiet"
    hdr["magic"] = b"n+1"
    return hdr


def write_nifti(grid: VoxelGrid, path, compresslevel: int = 6) -> None:
    """Write ``grid`` to ``path``; a ``.gz`` suffix selects gzip compression."""
    path = Path(path)
    if grid.kind is Kind.SCALAR:
        dtype = np.dtype(np.float32)
    else:
        dtype = _label_storage_dtype(grid.data)
    hdr = build_header(grid, dtype)
    body = np.asarray(grid.data, dtype=dtype.newbyteorder("<")).tobytes(order="F")
    payload = hdr.tobytes() + b"\x00" * (DEFAULT_VOX_OFFSET - HEADER_SIZE) + body
    try:
        if path.suffix == ".gz":
            with open(path, "wb") as raw:
                # mtime=0 keeps the output byte-identical across runs
                with gzip.GzipFile(fileobj=raw, mode="wb", compresslevel=compresslevel, mtime=0) as fh:
                    fh.write(payload)
        else:
            with open(path, "wb") as fh:
                fh.write(payload)
    except OSError as exc:
        raise VolumeIOError(f"cannot write {path}: {exc}") from exc
