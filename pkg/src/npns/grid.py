"""Uniform box grids, cell/face fields and second-order difference operators.

Scalar fields are plain ``numpy`` arrays of shape ``grid.shape`` holding
cell averages (axis 0 is x).  Two vector layouts are used:

* collocated: an array of shape ``(dim, *grid.shape)``;
* staggered: a tuple of ``dim`` face arrays, component ``a`` living on the
  faces normal to axis ``a``.  Along a wall axis that array has ``n_a + 1``
  entries (face ``k`` is the left face of cell ``k``), along a periodic axis
  it has ``n_a`` entries.

Boundary data is keyed by face names ``"x-"``, ``"x+"``, ``"y-"``, ... and
stored as arrays over the boundary faces (``grid.shape`` with the normal axis
removed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

AXES = "xyz"


@dataclass(frozen=True)
class Grid:
    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...] | None = None
    periodic: tuple[bool, ...] | None = None

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        dim = len(shape)
        if dim not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got dim={dim}")
        if any(n < 3 for n in shape):
            raise ValueError(f"need at least 3 cells per axis, got {shape}")
        spacing = tuple(float(h) for h in np.broadcast_to(self.spacing, (dim,)))
        if any(not h > 0 for h in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        origin = (0.0,) * dim if self.origin is None else tuple(float(o) for o in self.origin)
        periodic = (False,) * dim if self.periodic is None else tuple(bool(p) for p in self.periodic)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "periodic", periodic)

    @classmethod
    def box(cls, cells, lengths=1.0, origin=None, periodic=None):
        cells = tuple(int(n) for n in np.atleast_1d(cells))
        lengths = np.broadcast_to(np.asarray(lengths, dtype=float), (len(cells),))
        return cls(cells, tuple(lengths / np.asarray(cells)), origin, periodic)

    @property
    def dim(self):
        return len(self.shape)

    @property
    def ncells(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def lengths(self):
        return tuple(n * h for n, h in zip(self.shape, self.spacing))

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    @property
    def hmin(self):
        return min(self.spacing)

    @property
    def walled(self):
        return not any(self.periodic)

    def axis_centers(self, a):
        return self.origin[a] + (np.arange(self.shape[a]) + 0.5) * self.spacing[a]

    def axis_nodes(self, a):
        return self.origin[a] + np.arange(self.shape[a] + 1) * self.spacing[a]

    def centers(self):
        """Cell-center coordinates, one array of ``grid.shape`` per axis."""
        return np.meshgrid(*(self.axis_centers(a) for a in range(self.dim)), indexing="ij")

    def face_shape(self, a):
        s = list(self.shape)
        s[a] += 0 if self.periodic[a] else 1
        return tuple(s)

    def face_centers(self, a):
        coords = [self.axis_centers(b) for b in range(self.dim)]
        coords[a] = self.axis_nodes(a)[: self.face_shape(a)[a]]
        return np.meshgrid(*coords, indexing="ij")

    def face_keys(self):
        return [AXES[a] + s for a in range(self.dim) if not self.periodic[a] for s in "-+"]

    def boundary_shape(self, key):
        a = AXES.index(key[0])
        return tuple(n for b, n in enumerate(self.shape) if b != a)

    def boundary_centers(self, key):
        """Coordinates of the face centers on boundary ``key`` (full dim tuple)."""
        a = AXES.index(key[0])
        coords = [self.axis_centers(b) for b in range(self.dim)]
        coords[a] = np.array([self.origin[a] + (0.0 if key[1] == "-" else self.lengths[a])])
        mesh = np.meshgrid(*coords, indexing="ij")
        return [np.take(m, 0, axis=a) for m in mesh]

    def zeros(self):
        return np.zeros(self.shape)

    def zero_faces(self):
        return tuple(np.zeros(self.face_shape(a)) for a in range(self.dim))


def parse_key(key):
    return AXES.index(key[0]), key[1]


def _sl(dim, a, s):
    idx = [slice(None)] * dim
    idx[a] = s
    return tuple(idx)


def boundary_cells(f, key):
    """Values of cell field ``f`` in the layer of cells touching boundary ``key``."""
    a, side = parse_key(key)
    return np.take(f, 0 if side == "-" else -1, axis=a)


def face_slice(grid, key):
    """Index of the boundary faces ``key`` inside a staggered component array."""
    a, side = parse_key(key)
    return _sl(grid.dim, a, 0 if side == "-" else -1)


def constant_boundary(grid, value=0.0):
    return {k: np.full(grid.boundary_shape(k), float(value)) for k in grid.face_keys()}


# ---------------------------------------------------------------- operators


def gradient(f, grid):
    """Collocated gradient: central differences inside, one-sided 2nd order at walls."""
    f = np.asarray(f, dtype=float)
    out = np.empty((grid.dim,) + grid.shape)
    for a in range(grid.dim):
        h = grid.spacing[a]
        if grid.periodic[a]:
            out[a] = (np.roll(f, -1, axis=a) - np.roll(f, 1, axis=a)) / (2 * h)
        else:
            out[a] = np.gradient(f, h, axis=a, edge_order=2)
    return out


def divergence(v, grid):
    """Divergence of a collocated (array) or staggered (tuple) vector field."""
    if isinstance(v, (tuple, list)):
        return face_divergence(v, grid)
    v = np.asarray(v, dtype=float)
    out = np.zeros(grid.shape)
    for a in range(grid.dim):
        h = grid.spacing[a]
        if grid.periodic[a]:
            out += (np.roll(v[a], -1, axis=a) - np.roll(v[a], 1, axis=a)) / (2 * h)
        else:
            out += np.gradient(v[a], h, axis=a, edge_order=2)
    return out


def face_gradient(f, grid, a):
    """Normal derivative of cell field ``f`` on the faces of axis ``a``.

    Wall faces get 0 (homogeneous Neumann); this is the operator whose
    negative adjoint is :func:`face_divergence` on zero-normal-flux fields.
    """
    h = grid.spacing[a]
    if grid.periodic[a]:
        return (f - np.roll(f, 1, axis=a)) / h
    out = np.zeros(grid.face_shape(a))
    d = grid.dim
    out[_sl(d, a, slice(1, -1))] = np.diff(f, axis=a) / h
    return out


def face_gradients(f, grid):
    return tuple(face_gradient(f, grid, a) for a in range(grid.dim))


def face_divergence(F, grid):
    out = np.zeros(grid.shape)
    for a in range(grid.dim):
        h = grid.spacing[a]
        if grid.periodic[a]:
            out += (np.roll(F[a], -1, axis=a) - F[a]) / h
        else:
            out += np.diff(F[a], axis=a) / h
    return out


def cell_to_faces(v, grid):
    """Average a collocated vector field onto the staggered layout (wall faces zeroed)."""
    out = []
    for a in range(grid.dim):
        if grid.periodic[a]:
            out.append(0.5 * (v[a] + np.roll(v[a], 1, axis=a)))
        else:
            fa = np.zeros(grid.face_shape(a))
            fa[_sl(grid.dim, a, slice(1, -1))] = 0.5 * (
                v[a][_sl(grid.dim, a, slice(1, None))] + v[a][_sl(grid.dim, a, slice(None, -1))]
            )
            out.append(fa)
    return tuple(out)


def laplacian_dirichlet(f, grid, bc=0.0):
    """5/7-point Laplacian with the ghost value 2*bc - f at every wall face.

    ``bc`` is a scalar or a dict of boundary-face arrays.
    """
    if any(grid.periodic):
        raise ValueError("Dirichlet Laplacian needs walls on every axis")
    if not isinstance(bc, dict):
        bc = constant_boundary(grid, bc)
    out = np.zeros(grid.shape)
    d = grid.dim
    for a in range(d):
        h2 = grid.spacing[a] ** 2
        lo = np.expand_dims(2 * bc[AXES[a] + "-"] - np.take(f, 0, axis=a), a)
        hi = np.expand_dims(2 * bc[AXES[a] + "+"] - np.take(f, -1, axis=a), a)
        g = np.concatenate([lo, f, hi], axis=a)
        out += (g[_sl(d, a, slice(2, None))] - 2 * f + g[_sl(d, a, slice(None, -2))]) / h2
    return out


def laplacian_neumann(f, grid):
    return face_divergence(face_gradients(f, grid), grid)


def integrate(f, grid):
    """Sum of cell values times cell volume, exactly rounded (``math.fsum``)."""
    return math.fsum(np.asarray(f, dtype=float).ravel().tolist()) * grid.cell_volume


def face_integrate(F, grid):
    """Sum over a staggered field's faces; wall faces carry half weight."""
    total = 0.0
    for a in range(grid.dim):
        w = np.ones(grid.face_shape(a))
        if not grid.periodic[a]:
            w[_sl(grid.dim, a, 0)] = 0.5
            w[_sl(grid.dim, a, -1)] = 0.5
        total += math.fsum((w * F[a]).ravel().tolist())
    return total * grid.cell_volume


def log_mean(a, b):
    """Logarithmic mean (a - b) / (log a - log b), with L(a, a) = a and L(0, b) = 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(s > 0, (a - b) / np.where(s > 0, s, 1.0), 0.0)
        f2 = f * f
        small = np.abs(f) < 1e-2
        # f / atanh(f) via its series for small f
        series = 1.0 / (1.0 + f2 / 3 + f2 * f2 / 5 + f2 ** 3 / 7)
        exact = np.where(np.abs(f) < 1.0, f / np.arctanh(np.where(small, 0.5, f)), 0.0)
        ratio = np.where(small, series, exact)
    return 0.5 * s * ratio


# ---------------------------------------------------------------- sparse forms


def _kron_sum(mats, grid):
    eyes = [sp.identity(n, format="csr") for n in grid.shape]
    total = None
    for a, m in enumerate(mats):
        factors = eyes[:a] + [m] + eyes[a + 1 :]
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(term, f, format="csr")
        total = term if total is None else total + term
    return total.tocsc()


def _second_difference(n, h, kind):
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    m = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if kind == "dirichlet":
        m[0, 0] = m[n - 1, n - 1] = -3.0
    elif kind == "neumann":
        m[0, 0] = m[n - 1, n - 1] = -1.0
    elif kind == "periodic":
        m[0, n - 1] = m[n - 1, 0] = 1.0
    return (m / h**2).tocsr()


def dirichlet_matrix(grid):
    """Sparse Δ_h with zero Dirichlet data (ghost = -f); C-order unknowns."""
    if any(grid.periodic):
        raise ValueError("Dirichlet Laplacian needs walls on every axis")
    return _kron_sum([_second_difference(n, h, "dirichlet") for n, h in zip(grid.shape, grid.spacing)], grid)


def dirichlet_lift(grid, bc):
    """Boundary contribution b so that Δ_h f = L f + b for Dirichlet data ``bc``."""
    b = np.zeros(grid.shape)
    d = grid.dim
    for a in range(d):
        h2 = grid.spacing[a] ** 2
        b[_sl(d, a, 0)] += 2 * bc[AXES[a] + "-"] / h2
        b[_sl(d, a, -1)] += 2 * bc[AXES[a] + "+"] / h2
    return b


def neumann_matrix(grid):
    """Sparse face_divergence(face_gradient(.)); singular, kernel = constants."""
    kinds = ["periodic" if p else "neumann" for p in grid.periodic]
    return _kron_sum([_second_difference(n, h, k) for n, h, k in zip(grid.shape, grid.spacing, kinds)], grid)


# ---------------------------------------------------------------- snapshots


def write_field(path, values, grid, name=None):
    """Write one field as ``NPNSFLD v1`` header line + little-endian float64, x fastest."""
    values = np.asarray(values, dtype=float)
    parts = ["NPNSFLD v1", f"dim={values.ndim}"]
    parts += [f"n{AXES[a]}={values.shape[a]}" for a in range(values.ndim)]
    parts += [f"h{AXES[a]}={grid.spacing[a]!r}" for a in range(grid.dim)]
    parts += [f"o{AXES[a]}={grid.origin[a]!r}" for a in range(grid.dim)]
    if name:
        parts.append(f"name={name}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write((" ".join(parts) + "\n").encode("ascii"))
        fh.write(values.ravel(order="F").astype("<f8").tobytes())


def read_field(path):
    """Inverse of :func:`write_field`; returns ``(values, header_dict)``."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if header[:2] != ["NPNSFLD", "v1"]:
            raise ValueError(f"{path}: not an NPNSFLD v1 file")
        meta = dict(item.split("=", 1) for item in header[2:])
        dim = int(meta["dim"])
        shape = tuple(int(meta[f"n{AXES[a]}"]) for a in range(dim))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {np.prod(shape)} values, found {data.size}")
    return data.reshape(shape, order="F").astype(float), meta
