"""Uniform cell-centered tensor meshes and the discrete operators built on them.

The mesh covers a box [0, L_1] x ... x [0, L_d] (d = 1, 2, 3) with n_a cells of
width h_a = L_a / n_a along axis a.  Scalar fields live at cell centers,
gradients and fluxes live on cell faces.  Boundary faces always carry zero
normal flux (reflecting / mirrored ghost cells), which makes the divergence
telescope exactly: integrating the divergence of any face flux gives zero up
to round-off, and the Neumann Laplacian is self-adjoint with respect to the
midpoint inner product.

Face arrays for axis a have shape equal to the cell shape except n_a + 1
entries along axis a; entry i sits between cells i-1 and i.
"""

from __future__ import annotations

import struct

import numpy as np

DEFAULT_MAX_CELLS = 2**24
MIN_CELLS_PER_AXIS = 4


class GridError(ValueError):
    pass


class Grid:
    """Uniform tensor-product mesh of a 1/2/3-dimensional box."""

    __slots__ = ("cells", "extents", "h", "dim", "cell_volume")

    def __init__(self, cells, extents, max_cells=DEFAULT_MAX_CELLS):
        if np.isscalar(cells):
            cells = (cells,)
        if np.isscalar(extents):
            extents = (extents,)
        cells = tuple(int(c) for c in cells)
        extents = tuple(float(L) for L in extents)
        if not 1 <= len(cells) <= 3:
            raise GridError(f"dimension must be 1, 2 or 3, got {len(cells)}")
        if len(extents) != len(cells):
            raise GridError("cells and extents must have matching length")
        for c in cells:
            if c < MIN_CELLS_PER_AXIS:
                raise GridError(f"need at least {MIN_CELLS_PER_AXIS} cells per axis, got {c}")
        for L in extents:
            if not np.isfinite(L) or L <= 0.0:
                raise GridError(f"extent must be positive and finite, got {L}")
        total = int(np.prod(cells))
        if total > max_cells:
            raise GridError(f"total cell count {total} exceeds limit {max_cells}")
        self.cells = cells
        self.extents = extents
        self.dim = len(cells)
        self.h = tuple(L / c for L, c in zip(extents, cells))
        self.cell_volume = float(np.prod(self.h))

    @property
    def shape(self):
        return self.cells

    @property
    def volume(self):
        return float(np.prod(self.extents))

    def axis_centers(self, axis):
        """Cell-center coordinates along one axis."""
        return (np.arange(self.cells[axis]) + 0.5) * self.h[axis]

    def axis_faces(self, axis):
        """Face coordinates along one axis (n_a + 1 values, 0 to L_a)."""
        return np.arange(self.cells[axis] + 1) * self.h[axis]

    def meshgrid(self):
        """Dense cell-center coordinate arrays, one per axis."""
        axes = [self.axis_centers(a) for a in range(self.dim)]
        return np.meshgrid(*axes, indexing="ij")

    def face_meshgrid(self, axis):
        """Coordinates of the face centers of `axis`-normal faces."""
        axes = [
            self.axis_faces(a) if a == axis else self.axis_centers(a)
            for a in range(self.dim)
        ]
        return np.meshgrid(*axes, indexing="ij")

    def same_mesh(self, other):
        return self.cells == other.cells and self.extents == other.extents

    def __repr__(self):
        return f"Grid(cells={self.cells}, extents={self.extents})"


class Field:
    """Cell-centered scalar field; optionally tagged strictly positive."""

    __slots__ = ("grid", "values", "strictly_positive")

    def __init__(self, grid, values, strictly_positive=False):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != grid.shape:
            raise GridError(f"field shape {values.shape} does not match grid {grid.shape}")
        if not np.isfinite(values).all():
            raise GridError("field contains non-finite values")
        if strictly_positive and values.min() <= 0.0:
            raise GridError("field tagged strictly positive has min <= 0")
        self.grid = grid
        self.values = values
        self.strictly_positive = strictly_positive

    def copy(self):
        return Field(self.grid, self.values.copy(), self.strictly_positive)

    def min(self):
        return float(self.values.min())

    def max(self):
        return float(self.values.max())


# low-level kernels on raw arrays ------------------------------------------------

def lap_values(a, h):
    """Mirrored-ghost (zero-flux) Laplacian stencil on raw cell values."""
    out = np.zeros_like(a)
    for ax, ha in enumerate(h):
        first = [slice(None)] * a.ndim
        last = [slice(None)] * a.ndim
        first[ax] = slice(0, 1)
        last[ax] = slice(a.shape[ax] - 1, a.shape[ax])
        padded = np.concatenate([a[tuple(first)], a, a[tuple(last)]], axis=ax)
        lo = [slice(None)] * a.ndim
        hi = [slice(None)] * a.ndim
        lo[ax] = slice(0, a.shape[ax])
        hi[ax] = slice(2, a.shape[ax] + 2)
        out += (padded[tuple(hi)] - 2.0 * a + padded[tuple(lo)]) / ha**2
    return out


def face_grad_values(a, h, axis):
    """Face-centered gradient along one axis; boundary faces are zero."""
    shape = list(a.shape)
    shape[axis] += 1
    g = np.zeros(shape, dtype=np.float64)
    interior = [slice(None)] * a.ndim
    interior[axis] = slice(1, a.shape[axis])
    g[tuple(interior)] = np.diff(a, axis=axis) / h[axis]
    return g


def face_div_values(fluxes, h, shape):
    """Divergence of per-axis face fluxes back onto cells."""
    out = np.zeros(shape, dtype=np.float64)
    for ax, (flux, ha) in enumerate(zip(fluxes, h)):
        hi = [slice(None)] * len(shape)
        lo = [slice(None)] * len(shape)
        hi[ax] = slice(1, shape[ax] + 1)
        lo[ax] = slice(0, shape[ax])
        out += (flux[tuple(hi)] - flux[tuple(lo)]) / ha
    return out


def face_mean_values(a, axis):
    """Arithmetic mean onto faces; boundary faces take the adjacent cell value."""
    shape = list(a.shape)
    shape[axis] += 1
    m = np.empty(shape, dtype=np.float64)
    interior = [slice(None)] * a.ndim
    interior[axis] = slice(1, a.shape[axis])
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis] = slice(0, a.shape[axis] - 1)
    hi[axis] = slice(1, a.shape[axis])
    m[tuple(interior)] = 0.5 * (a[tuple(lo)] + a[tuple(hi)])
    first_face = [slice(None)] * a.ndim
    first_cell = [slice(None)] * a.ndim
    first_face[axis] = slice(0, 1)
    first_cell[axis] = slice(0, 1)
    m[tuple(first_face)] = a[tuple(first_cell)]
    last_face = [slice(None)] * a.ndim
    last_cell = [slice(None)] * a.ndim
    last_face[axis] = slice(shape[axis] - 1, shape[axis])
    last_cell[axis] = slice(a.shape[axis] - 1, a.shape[axis])
    m[tuple(last_face)] = a[tuple(last_cell)]
    return m


def faces_to_cells(face_array, axis):
    """Average the two bounding faces of each cell along `axis`."""
    lo = [slice(None)] * face_array.ndim
    hi = [slice(None)] * face_array.ndim
    n = face_array.shape[axis] - 1
    lo[axis] = slice(0, n)
    hi[axis] = slice(1, n + 1)
    return 0.5 * (face_array[tuple(lo)] + face_array[tuple(hi)])


# public field operations --------------------------------------------------------

def laplacian_neumann(field):
    """Second-order zero-flux Laplacian of a field."""
    return Field(field.grid, lap_values(field.values, field.grid.h))


def face_gradient(field):
    """Per-axis face gradients of a field (list of face arrays)."""
    return [face_grad_values(field.values, field.grid.h, ax) for ax in range(field.grid.dim)]


def face_divergence(grid, fluxes):
    """Conservative divergence of per-axis face fluxes."""
    if len(fluxes) != grid.dim:
        raise GridError(f"expected {grid.dim} flux arrays, got {len(fluxes)}")
    for ax, flux in enumerate(fluxes):
        want = list(grid.shape)
        want[ax] += 1
        if flux.shape != tuple(want):
            raise GridError(f"flux array {ax} has shape {flux.shape}, expected {tuple(want)}")
    return Field(grid, face_div_values(fluxes, grid.h, grid.shape))


def integrate(field):
    """Midpoint quadrature: cell sum times cell volume."""
    return float(field.values.sum() * field.grid.cell_volume)


def integrate_values(values, grid):
    return float(values.sum() * grid.cell_volume)


def face_square_integral(face_arrays, grid):
    """Sum of squared face values over all axes, weighted by cell volume.

    Boundary faces carry zero gradient, so this is the natural quadrature of
    |grad w|^2 for zero-flux fields.
    """
    total = 0.0
    for g in face_arrays:
        total += float((g * g).sum())
    return total * grid.cell_volume


def gradient_cell_magnitude(values, grid):
    """Cell-centered Euclidean norm of the gradient (face averages per axis)."""
    sq = np.zeros(grid.shape, dtype=np.float64)
    for ax in range(grid.dim):
        g = face_grad_values(values, grid.h, ax)
        c = faces_to_cells(g, ax)
        sq += c * c
    return np.sqrt(sq)


def boundary_min(field):
    """Minimum over cells adjacent to the domain boundary."""
    a = field.values
    best = np.inf
    for ax in range(a.ndim):
        lo = [slice(None)] * a.ndim
        hi = [slice(None)] * a.ndim
        lo[ax] = slice(0, 1)
        hi[ax] = slice(a.shape[ax] - 1, a.shape[ax])
        best = min(best, float(a[tuple(lo)].min()), float(a[tuple(hi)].min()))
    return best


def interior_max_abs(values):
    """Max |value| over cells at least one cell away from the boundary."""
    sl = tuple(slice(1, n - 1) for n in values.shape)
    return float(np.abs(values[sl]).max())


# serialization -------------------------------------------------------------------

# Binary layout, all little-endian:
#   uint32   dim
#   uint64 * dim   cell counts (row-major order of the value block)
#   float64 * dim  cell spacings
#   float64 * prod(counts)  cell values, C order
_MAGIC_NONE = ()


def write_field_binary(field, path):
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", g.dim))
        fh.write(struct.pack(f"<{g.dim}Q", *g.cells))
        fh.write(struct.pack(f"<{g.dim}d", *g.h))
        fh.write(field.values.astype("<f8").tobytes(order="C"))


def read_field_binary(path):
    """Read a field dump; returns (cells, spacings, values)."""
    with open(path, "rb") as fh:
        (dim,) = struct.unpack("<I", fh.read(4))
        cells = struct.unpack(f"<{dim}Q", fh.read(8 * dim))
        spacing = struct.unpack(f"<{dim}d", fh.read(8 * dim))
        count = int(np.prod(cells))
        values = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(cells)
    return cells, spacing, values


def write_field_csv(field, path):
    """Flat CSV: one row per cell, coordinates then value."""
    g = field.grid
    coords = [c.ravel() for c in g.meshgrid()]
    vals = field.values.ravel()
    headers = ["x", "y", "z"][: g.dim] + ["value"]
    with open(path, "w") as fh:
        fh.write(",".join(headers) + "\n")
        for i in range(vals.size):
            row = [format(c[i], ".17g") for c in coords] + [format(vals[i], ".17g")]
            fh.write(",".join(row) + "\n")
