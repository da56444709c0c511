"""Bit-exact binary persistence plus CSV / PGM / manifest plumbing.

Binary layouts (fixed little-endian, independent of host byte order):

  matrix file:  magic b"SMX1" | n uint32 | m uint32 | n*m float64, row-major
  vector file:  magic b"VEC1" | n uint32 | n float64

CSV is provided for interoperability only: one matrix row per line, ','
separator, '.' decimal point, 17 significant digits.
"""
import struct
from dataclasses import dataclass

import numpy as np

MATRIX_MAGIC = b"SMX1"
VECTOR_MAGIC = b"VEC1"
_U32_MAX = 2**32 - 1


class FormatError(Exception):
    """Raised when a stored artifact does not match its declared layout."""


# ---------------------------------------------------------------------------
# binary matrix / vector files
# ---------------------------------------------------------------------------

def write_matrix(path, A):
    """Write a dense 2-D float64 array bit-exactly.

    Round trip through :func:`read_matrix` reproduces every entry
    bit-for-bit, including signed zeros and NaN payloads.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise FormatError(f"matrix payload must be 2-D, got ndim={A.ndim}")
    n, m = A.shape
    if n < 1 or m < 1:
        raise FormatError(f"matrix dims must be >= 1, got {n}x{m}")
    if n > _U32_MAX or m > _U32_MAX:
        raise FormatError(f"matrix dims {n}x{m} exceed 32-bit range")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<II", n, m))
        fh.write(A.astype("<f8", copy=False).tobytes(order="C"))


def read_matrix(path):
    """Read a matrix file, reporting bad magic / truncation / size mismatch
    as distinct errors."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != MATRIX_MAGIC:
        raise FormatError(f"{path}: bad magic (expected {MATRIX_MAGIC!r})")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    n, m = struct.unpack("<II", data[4:12])
    if n < 1 or m < 1:
        raise FormatError(f"{path}: invalid dims {n}x{m}")
    expected = 12 + 8 * n * m
    if len(data) < expected:
        raise FormatError(
            f"{path}: truncated payload ({len(data) - 12} bytes, "
            f"expected {8 * n * m})"
        )
    if len(data) > expected:
        raise FormatError(
            f"{path}: size mismatch ({len(data) - expected} trailing bytes)"
        )
    flat = np.frombuffer(data, dtype="<f8", count=n * m, offset=12)
    return flat.astype(np.float64).reshape(n, m)


def write_vector(path, v):
    v = np.ascontiguousarray(v, dtype=np.float64).reshape(-1)
    n = v.shape[0]
    if n < 1:
        raise FormatError("vector must have at least one entry")
    if n > _U32_MAX:
        raise FormatError(f"vector length {n} exceeds 32-bit range")
    with open(path, "wb") as fh:
        fh.write(VECTOR_MAGIC)
        fh.write(struct.pack("<I", n))
        fh.write(v.astype("<f8", copy=False).tobytes())


def read_vector(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != VECTOR_MAGIC:
        raise FormatError(f"{path}: bad magic (expected {VECTOR_MAGIC!r})")
    if len(data) < 8:
        raise FormatError(f"{path}: truncated header")
    (n,) = struct.unpack("<I", data[4:8])
    if n < 1:
        raise FormatError(f"{path}: invalid length {n}")
    expected = 8 + 8 * n
    if len(data) < expected:
        raise FormatError(
            f"{path}: truncated payload ({len(data) - 8} bytes, expected {8 * n})"
        )
    if len(data) > expected:
        raise FormatError(
            f"{path}: size mismatch ({len(data) - expected} trailing bytes)"
        )
    return np.frombuffer(data, dtype="<f8", count=n, offset=8).astype(np.float64)


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def write_matrix_csv(path, A):
    """Lossy-by-contract CSV export (17 significant digits)."""
    A = np.asarray(A, dtype=np.float64)
    with open(path, "w") as fh:
        for row in np.atleast_2d(A):
            fh.write(",".join("%.17g" % v for v in row))
            fh.write("\n")


def read_matrix_csv(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split(",")])
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    return np.array(rows, dtype=np.float64)


def write_vector_csv(path, v):
    # column layout: one value per line, diff-friendly
    write_matrix_csv(path, np.asarray(v, dtype=np.float64).reshape(-1, 1))


def read_vector_csv(path):
    return read_matrix_csv(path).reshape(-1)


# ---------------------------------------------------------------------------
# voxel grids and slice images
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VoxelGrid:
    """Regular 3-D voxel grid.

    A concentration vector of length ``nx*ny*nz`` is linearized x-fastest:
    ``v = ix + nx*(iy + ny*iz)``. ``spacing`` and ``origin`` are in mm;
    voxel centers sit at ``origin + (index + 0.5) * spacing``.
    """

    dims: tuple  # (nx, ny, nz)
    spacing: tuple = (1.0, 1.0, 1.0)  # (dx, dy, dz) mm
    origin: tuple = (0.0, 0.0, 0.0)  # mm

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise ValueError(f"grid dims must be three positive ints: {self.dims}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacings must be strictly positive: {self.spacing}")

    @property
    def size(self):
        nx, ny, nz = self.dims
        return int(nx) * int(ny) * int(nz)

    def centers_1d(self, axis):
        n = int(self.dims[axis])
        return self.origin[axis] + (np.arange(n) + 0.5) * self.spacing[axis]

    def voxel_volume(self):
        dx, dy, dz = self.spacing
        return dx * dy * dz


_AXES = {"x": 0, "y": 1, "z": 2}


def export_slice_image(x, grid: VoxelGrid, axis, index, path):
    """Render one grid slice of a concentration vector as a P5 graymap.

    Intensity is ``round(255 * x_v / max(x))`` with the max taken over the
    full volume, so brightness is comparable across slices of one
    reconstruction; an all-zero volume maps to an all-black image.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != grid.size:
        raise ValueError(f"vector length {x.shape[0]} != grid size {grid.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("concentration vector must be componentwise finite")
    ax = _AXES.get(str(axis).lower())
    if ax is None:
        raise ValueError(f"axis must be one of x/y/z, got {axis!r}")
    n_ax = int(grid.dims[ax])
    if not 0 <= index < n_ax:
        raise IndexError(f"slice index {index} out of range [0, {n_ax})")

    vol = x.reshape(grid.dims[2], grid.dims[1], grid.dims[0])  # [iz, iy, ix]
    if ax == 0:
        sl = vol[:, :, index]  # rows=z, cols=y
    elif ax == 1:
        sl = vol[:, index, :]  # rows=z, cols=x
    else:
        sl = vol[index, :, :]  # rows=y, cols=x

    peak = float(x.max())
    if peak > 0.0:
        img = np.rint(255.0 * sl / peak).astype(np.uint8)
    else:
        img = np.zeros_like(sl, dtype=np.uint8)

    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def read_pgm(path):
    """Read back a P5 graymap written by :func:`export_slice_image`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise FormatError(f"{path}: not a P5 graymap")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    img = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return img.reshape(h, w)


# ---------------------------------------------------------------------------
# flat key=value manifests
# ---------------------------------------------------------------------------

def write_manifest(path, entries):
    """Write a flat ``key = value`` manifest (insertion order preserved)."""
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key} = {value}\n")


def read_manifest(path):
    entries = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries
