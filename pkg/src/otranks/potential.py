"""Piecewise-affine convex potentials and their power cells.

A potential is ``psi(u) = max_i <u, X_i> + h_i``.  Its gradient sends the
region where plane ``i`` is on top (the power cell ``W_i``) to the site
``X_i``, so cells and sites are indexed identically.  Indices are 0-based.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels

ACTIVE_SLACK = 1e-12

_EMPTY_HINT = np.empty((0, 0), dtype=np.int64)


class DuplicateSitesError(ValueError):
    """Raised when two sites coincide."""


def as_points(points, d=None, name="points"):
    """Coerce to a C-contiguous float64 ``(n, d)`` array.

    A 1-d array is read as ``n`` scalar observations when ``d`` is 1 or
    unknown and as a single point when ``d`` matches its length.
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if d is not None and d > 1 and arr.shape[0] == d:
            arr = arr.reshape(1, d)
        else:
            arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {arr.shape}")
    if d is not None and arr.shape[1] != d:
        raise ValueError(f"{name} have dimension {arr.shape[1]}, expected {d}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return np.ascontiguousarray(arr)


def find_duplicates(points):
    """Index pairs ``(i, j)``, ``i < j``, of identical rows (first hit per row)."""
    points = np.asarray(points)
    _, first, inverse = np.unique(points, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    dup = np.flatnonzero(first[inverse] != np.arange(len(points)))
    return [(int(first[inverse[j]]), int(j)) for j in dup]


class PiecewiseAffinePotential:
    """``psi(u) = max_i <u, X_i> + h_i`` with distinct sites.

    Parameters
    ----------
    sites : array_like, shape (n, d)
    weights : array_like, shape (n,)
        The intercepts ``h``.  Fitted potentials are gauged to sum zero;
        the constructor stores the values as given.
    """

    def __init__(self, sites, weights):
        X = as_points(sites, name="sites")
        h = np.asarray(weights, dtype=np.float64).reshape(-1)
        if X.shape[0] < 1:
            raise ValueError("a potential needs at least one site")
        if h.shape[0] != X.shape[0]:
            raise ValueError(f"{X.shape[0]} sites but {h.shape[0]} weights")
        if not np.all(np.isfinite(h)):
            raise ValueError("weights must be finite")
        dups = find_duplicates(X)
        if dups:
            i, j = dups[0]
            raise DuplicateSitesError(f"sites {i} and {j} coincide")
        X.setflags(write=False)
        h = h.copy()
        h.setflags(write=False)
        self.sites = X
        self.weights = h

    @property
    def n(self):
        return self.sites.shape[0]

    @property
    def d(self):
        return self.sites.shape[1]

    def __repr__(self):
        return f"PiecewiseAffinePotential(n={self.n}, d={self.d})"

    def _queries(self, u):
        return as_points(u, self.d, name="query points")

    def values(self, u):
        """``psi`` at each row of ``u``."""
        return _kernels.envelope_values(self._queries(u), self.sites, self.weights)

    def eval(self, u):
        """Value at a single point and the active set (indices within 1e-12 of the max)."""
        q = self._queries(u)
        if q.shape[0] != 1:
            raise ValueError("eval takes a single point; use values() for batches")
        planes = self.sites @ q[0] + self.weights
        best = float(planes.max())
        active = np.flatnonzero(planes >= best - ACTIVE_SLACK)
        return best, [int(i) for i in active]

    def assign(self, u):
        """Cell index of each row of ``u`` (lowest index on ties).

        A single point (1-d input of length d) returns an int.
        """
        arr = np.asarray(u, dtype=np.float64)
        single = arr.ndim == 0 or (arr.ndim == 1 and arr.shape[0] == self.d)
        out = _kernels.assign_points(self._queries(u), self.sites, self.weights, ACTIVE_SLACK)
        return int(out[0]) if single else out

    def conjugate_at_site(self, i):
        """Value of the convex conjugate at site ``i``, which is ``-h_i``."""
        if not 0 <= i < self.n:
            raise IndexError(f"site index {i} out of range for n={self.n}")
        return -float(self.weights[i])

    def cells_1d(self, lo=0.0, hi=1.0):
        """Interval cells on ``[lo, hi]`` listed in order of increasing site."""
        if self.d != 1:
            raise ValueError("cells_1d needs d = 1")
        x = self.sites[:, 0]
        order = np.argsort(x, kind="stable")
        left, right, _ = _kernels.power_cells_1d(x, self.weights, order, float(lo), float(hi))
        return [PowerCell(int(i), np.array([left[i], right[i]]), float(right[i] - left[i]))
                for i in order]

    def cells_2d(self, lo=0.0, hi=1.0):
        """Polygonal cells of the box ``[lo, hi]^2``, in site order."""
        geom = cell_geometry_2d(self.sites, self.weights, lo, hi)
        return [PowerCell(i, geom.polygon(i), float(geom.area[i])) for i in range(self.n)]


@dataclass(frozen=True)
class PowerCell:
    """One cell: ``vertices`` is a ccw ``(k, 2)`` polygon in 2-d (empty if
    the cell is empty) or the ``[left, right]`` interval in 1-d."""

    site: int
    vertices: np.ndarray
    measure: float


class CellGeometry2D:
    """All cells of a 2-d power diagram clipped to a box, stored flat.

    Attributes
    ----------
    area, mx, my : ndarray
        Areas and first moments of each cell.
    vertices : ndarray, shape (V, 2)
        Concatenated ccw polygons; cell ``i`` owns rows
        ``offsets[i]:offsets[i+1]``.
    edge_labels : ndarray
        Site (or ``-1..-4`` for the box bottom, right, top, left) carrying
        the edge that leaves each vertex.
    """

    def __init__(self, area, mx, my, vertices, edge_labels, offsets, lo, hi):
        self.area = area
        self.mx = mx
        self.my = my
        self.vertices = vertices
        self.edge_labels = edge_labels
        self.offsets = offsets
        self.lo = lo
        self.hi = hi

    def polygon(self, i):
        return self.vertices[self.offsets[i]:self.offsets[i + 1]].copy()

    def labels(self, i):
        return self.edge_labels[self.offsets[i]:self.offsets[i + 1]]

    def vertex_owner(self):
        """Cell index owning each row of ``vertices``."""
        return np.repeat(np.arange(len(self.area)), np.diff(self.offsets))


def cell_geometry_2d(X, h, lo=0.0, hi=1.0):
    X = np.ascontiguousarray(X, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    area, mx, my, verts, labels, offsets, _, _ = _kernels.power_cells_2d(
        X, h, _EMPTY_HINT, float(lo), float(hi), True)
    return CellGeometry2D(area, mx, my, verts, labels, offsets, float(lo), float(hi))


def polygon_area_centroid(vertices):
    """Shoelace area and centroid of a ccw polygon.

    A degenerate polygon (zero area) reports the vertex mean as centroid.
    """
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
        raise ValueError("need at least three 2-d vertices")
    area, mx, my = _kernels.polygon_moments(v[:, 0].copy(), v[:, 1].copy(), v.shape[0])
    if abs(area) <= 1e-300:
        return 0.0, v.mean(axis=0)
    return float(area), np.array([mx / area, my / area])


def clip_polygon(vertices, normals, offsets):
    """Intersect a convex polygon with halfplanes ``normals @ u + offsets >= 0``."""
    v = np.asarray(vertices, dtype=np.float64)
    A = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 2)
    b = np.ascontiguousarray(offsets, dtype=np.float64).reshape(-1)
    x, y = _kernels.clip_by_halfplanes(v[:, 0].copy(), v[:, 1].copy(), v.shape[0], A, b)
    return np.column_stack([x, y])
