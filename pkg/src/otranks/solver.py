"""Fitting the weights of a semi-discrete transport potential.

Given sites ``X_1..X_n`` with target masses ``w_i`` (``1/n`` for a plain
sample) and a reference law ``mu``, the weights ``h`` minimise the convex
dual

    F(h) = integral of psi_h dmu - sum_i w_i h_i,

whose gradient is ``mu(W_i(h)) - w_i``.  At the minimiser every cell has
exactly its target mass, which makes ``grad psi_h`` the transport map from
``mu`` to the empirical law.
"""

import json
import math
from dataclasses import asdict, dataclass, replace
from functools import cached_property

import numpy as np

from . import _kernels
from .potential import (
    DuplicateSitesError,
    PiecewiseAffinePotential,
    as_points,
    cell_geometry_2d,
    find_duplicates,
)
from .reference import ReferenceMeasure

BACKENDS = ("auto", "exact1d", "exact2d", "montecarlo")
_KIND = {"exact1d": _kernels.EXACT1D, "exact2d": _kernels.EXACT2D,
         "montecarlo": _kernels.MONTECARLO}
FORMAT_VERSION = 1


class ConvergenceError(RuntimeError):
    """The optimiser stopped before the residual reached the tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DuplicatePointsError(DuplicateSitesError):
    """The data contain repeated rows."""


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings.  ``None`` fields are filled in by :meth:`resolve`.

    Parameters
    ----------
    backend : {"auto", "exact1d", "exact2d", "montecarlo"}
        ``auto`` picks exact1d / exact2d on the unit interval / square and
        Monte Carlo otherwise.
    tol : float, optional
        Sup-norm tolerance on ``mu(W_i) - w_i``.  Defaults to 1e-7 for the
        exact backends and ``0.25 / n`` for Monte Carlo, whose quadrature
        cannot resolve masses much finer than ``1 / M``.
    max_iter : int
    M : int, optional
        Monte Carlo quadrature size, default ``max(10_000, 100 n)``.
    seed : int
        Seeds the Monte Carlo quadrature.
    memory : int, optional
        Number of curvature pairs kept by the quasi-Newton direction,
        default ``min(max(n, 10), 300)``.
    """

    backend: str = "auto"
    tol: float = None
    max_iter: int = 10_000
    M: int = None
    seed: int = 0
    memory: int = None

    def resolve(self, n, reference):
        backend = self.backend
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}")
        if backend == "auto":
            if reference.is_cube and reference.d == 1:
                backend = "exact1d"
            elif reference.is_cube and reference.d == 2:
                backend = "exact2d"
            else:
                backend = "montecarlo"
        if backend == "exact1d" and not (reference.is_cube and reference.d == 1):
            raise ValueError("exact1d needs the unit-interval reference")
        if backend == "exact2d" and not (reference.is_cube and reference.d == 2):
            raise ValueError("exact2d needs the unit-square reference")
        tol = self.tol
        if tol is None:
            tol = 0.25 / n if backend == "montecarlo" else 1e-7
        if not tol > 0:
            raise ValueError("tolerance must be positive")
        M = self.M
        if backend == "montecarlo":
            M = int(M) if M is not None else max(10_000, 100 * n)
            if M < n:
                raise ValueError(f"quadrature size M={M} is smaller than n={n}")
        else:
            M = None
        memory = self.memory
        if memory is None:
            # the dual is badly conditioned when sites are (nearly) collinear,
            # curvature scaling like 1/gap; long memory copes and costs little
            memory = min(max(n, 10), 300)
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be positive")
        return replace(self, backend=backend, tol=float(tol), M=M, memory=int(memory),
                       max_iter=int(self.max_iter), seed=int(self.seed))


def quadrature(reference, M, seed):
    """The fixed Monte Carlo sample used by the montecarlo backend."""
    return reference.sample(M, np.random.default_rng(seed))


class FittedTransport:
    """A fitted potential together with its reference law and solver record.

    Attributes
    ----------
    potential : PiecewiseAffinePotential
    reference : ReferenceMeasure
    residual : float
        Achieved ``max_i |mu(W_i) - w_i|``.
    config : SolverConfig
        The resolved configuration.
    iterations : int
    weights : ndarray
        Target cell masses ``w``.
    """

    def __init__(self, potential, reference, residual, config, iterations=0, weights=None):
        self.potential = potential
        self.reference = reference
        self.residual = float(residual)
        self.config = config
        self.iterations = int(iterations)
        n = potential.n
        if weights is None:
            self.weights = np.full(n, 1.0 / n)
            self.uniform = True
        else:
            self.weights = np.asarray(weights, dtype=np.float64).copy()
            self.uniform = False
        self.weights.setflags(write=False)

    @property
    def sites(self):
        return self.potential.sites

    @property
    def h(self):
        return self.potential.weights

    @property
    def n(self):
        return self.potential.n

    @property
    def d(self):
        return self.potential.d

    @property
    def backend(self):
        return self.config.backend

    def __repr__(self):
        return (f"FittedTransport(n={self.n}, d={self.d}, backend={self.backend!r}, "
                f"residual={self.residual:.3g})")

    @cached_property
    def quadrature(self):
        if self.config.M is None:
            M = max(10_000, 100 * self.n)
        else:
            M = self.config.M
        return quadrature(self.reference, M, self.config.seed)

    @cached_property
    def geometry(self):
        """Exact cell geometry (2-d square reference only)."""
        if not (self.reference.is_cube and self.d == 2):
            raise ValueError("exact cell geometry needs the unit-square reference")
        return cell_geometry_2d(self.sites, self.h)

    @cached_property
    def intervals(self):
        """``(left, right)`` cell endpoints on [0, 1] (1-d only), in site order."""
        if not (self.reference.is_cube and self.d == 1):
            raise ValueError("interval cells need the unit-interval reference")
        x = self.sites[:, 0]
        left, right, _ = _kernels.power_cells_1d(
            x, self.h, np.argsort(x, kind="stable"), 0.0, 1.0)
        return left, right

    @property
    def exact_geometry(self):
        return self.reference.is_cube and self.d <= 2

    def assign(self, u):
        return self.potential.assign(u)

    def cell_measures(self):
        if self.backend == "montecarlo":
            return cell_measures(self.potential, self.reference, "montecarlo", self.quadrature)
        return cell_measures(self.potential, self.reference, self.backend)

    def to_dict(self):
        cfg = self.config
        out = {
            "version": FORMAT_VERSION,
            "d": self.d,
            "reference": self.reference.to_dict(),
            "points": self.sites.tolist(),
            "h": self.h.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "config": {"backend": cfg.backend, "tol": cfg.tol, "M": cfg.M, "seed": cfg.seed,
                       "max_iter": cfg.max_iter, "memory": cfg.memory},
        }
        if not self.uniform:
            out["weights"] = self.weights.tolist()
        return out

    def to_json(self):
        # json writes floats with repr, the shortest string that reads back
        # to the same double
        return json.dumps(self.to_dict()) + "\n"

    @classmethod
    def from_dict(cls, data):
        version = data.get("version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {version!r}")
        reference = ReferenceMeasure.from_dict(data["reference"])
        points = np.asarray(data["points"], dtype=np.float64).reshape(-1, int(data["d"]))
        potential = PiecewiseAffinePotential(points, data["h"])
        if reference.d != potential.d:
            raise ValueError("reference and points disagree on the dimension")
        c = data.get("config", {})
        config = SolverConfig(backend=c.get("backend", "auto"), tol=c.get("tol"),
                              max_iter=c.get("max_iter", 10_000), M=c.get("M"),
                              seed=c.get("seed", 0), memory=c.get("memory"))
        config = config.resolve(potential.n, reference)
        return cls(potential, reference, data.get("residual", math.nan), config,
                   data.get("iterations", 0), data.get("weights"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _backend_for(potential, reference, backend):
    return SolverConfig(backend=backend).resolve(potential.n, reference).backend


def cell_measures(potential, reference, backend="auto", quadrature=None):
    """``mu(W_i)`` for every cell.

    Exact backends return interval lengths or polygon areas; Monte Carlo
    returns the fraction of ``quadrature`` points assigned to each cell.
    """
    backend = _backend_for(potential, reference, backend)
    X, h = potential.sites, potential.weights
    if backend == "exact1d":
        x = X[:, 0]
        left, right, _ = _kernels.power_cells_1d(x, h, np.argsort(x, kind="stable"), 0.0, 1.0)
        return right - left
    if backend == "exact2d":
        return cell_geometry_2d(X, h).area
    if quadrature is None:
        raise ValueError("the montecarlo backend needs a quadrature sample")
    U = as_points(quadrature, potential.d, name="quadrature")
    idx = _kernels.assign_points(U, X, h, 0.0)
    return np.bincount(idx, minlength=potential.n) / U.shape[0]


def dual_objective(potential, reference, backend="auto", quadrature=None, weights=None):
    """``F(h) = integral of psi dmu - sum_i w_i h_i`` (``w`` uniform by default)."""
    backend = _backend_for(potential, reference, backend)
    n = potential.n
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    U = _quadrature_arg(backend, potential.d, quadrature)
    x = potential.sites[:, 0]
    value, _, _ = _kernels.objective(_KIND[backend], potential.sites, potential.weights.copy(),
                                     w, np.argsort(x, kind="stable"), U, 0.0, 1.0,
                                     np.empty((0, 0), dtype=np.int64))
    return float(value)


def _quadrature_arg(backend, d, quadrature):
    if backend != "montecarlo":
        return np.empty((0, d))
    if quadrature is None:
        raise ValueError("the montecarlo backend needs a quadrature sample")
    return as_points(quadrature, d, name="quadrature")


def solve_weights(X, w, reference, config, points=None):
    """Run the optimiser; returns ``(h, measures, iterations, status)``.

    ``config`` must already be resolved.  ``points`` replaces the seeded
    Monte Carlo quadrature when given.
    """
    n, d = X.shape
    if n == 1:
        return np.zeros(1), np.ones(1), 0, 0
    if config.backend == "montecarlo":
        if points is None:
            points = quadrature(reference, config.M, config.seed)
        U = as_points(points, d, name="quadrature")
    else:
        U = np.empty((0, d))
    order = np.argsort(X[:, 0], kind="stable")
    return _kernels.lbfgs_fit(_KIND[config.backend], X, np.ascontiguousarray(w, dtype=np.float64),
                              np.zeros(n), order, U, 0.0, 1.0, config.tol, config.max_iter,
                              config.memory)


def _fit_weighted(X, w, reference, config, points=None):
    if reference is None:
        reference = ReferenceMeasure("cube", X.shape[1])
    if reference.d != X.shape[1]:
        raise ValueError(f"data have dimension {X.shape[1]} but the reference has {reference.d}")
    config = config or SolverConfig()
    if points is not None:
        config = replace(config, M=len(points))
    config = config.resolve(X.shape[0], reference)
    h, meas, iterations, status = solve_weights(X, w, reference, config, points)
    residual = float(np.max(np.abs(meas - w)))
    if status != 0 or not residual <= config.tol:
        why = "iteration limit reached" if status == 1 else "line search stalled"
        raise ConvergenceError(
            f"no convergence after {iterations} iterations ({why}); residual {residual:.3g} "
            f"> tolerance {config.tol:.3g}", residual, iterations)
    return reference, config, h, residual, iterations


def fit(points, reference=None, config=None, quadrature=None):
    """Fit the empirical transport potential of a sample of distinct points.

    Parameters
    ----------
    points : array_like, shape (n, d)
    reference : ReferenceMeasure, optional
        Defaults to the unit cube of matching dimension.
    config : SolverConfig, optional
    quadrature : array_like, optional
        Explicit Monte Carlo points for the montecarlo backend, replacing
        the seeded draw.  Such a fit is not reproducible from its saved
        form.

    Returns
    -------
    FittedTransport

    Raises
    ------
    DuplicatePointsError
        If two rows coincide.
    ConvergenceError
        If the residual does not reach the tolerance.
    """
    X = as_points(points)
    if X.shape[0] < 1:
        raise ValueError("need at least one point")
    dups = find_duplicates(X)
    if dups:
        i, j = dups[0]
        raise DuplicatePointsError(f"rows {i} and {j} are identical")
    n = X.shape[0]
    w = np.full(n, 1.0 / n)
    reference, config, h, residual, iterations = _fit_weighted(X, w, reference, config, quadrature)
    fitted = FittedTransport(PiecewiseAffinePotential(X, h), reference, residual, config,
                             iterations)
    if quadrature is not None and config.backend == "montecarlo":
        fitted.__dict__["quadrature"] = as_points(quadrature, X.shape[1], name="quadrature")
    return fitted


def fit_empirical(points, reference=None, config=None):
    """Fit the empirical law of a sample that may contain repeated rows.

    Repeated rows are merged into one site carrying their combined mass.

    Returns
    -------
    fitted : FittedTransport
        Sites are the distinct rows in lexicographic order.
    inverse : ndarray of int
        ``inverse[k]`` is the site of input row ``k``.
    """
    X = as_points(points)
    n = X.shape[0]
    if n < 1:
        raise ValueError("need at least one point")
    sites, inverse, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    sites = np.ascontiguousarray(sites)
    w = counts / n
    reference, config, h, residual, iterations = _fit_weighted(sites, w, reference, config)
    uniform = len(sites) == n
    fitted = FittedTransport(PiecewiseAffinePotential(sites, h), reference, residual, config,
                             iterations, None if uniform else w)
    return fitted, inverse


def transport_cost(fitted):
    """``integral of |u - X_assign(u)|^2 dmu(u)``.

    Exact in 1-d and on the square (each cell polygon is fanned into
    triangles and the quadratic integrated with the edge-midpoint rule,
    which is exact for quadratics); Monte Carlo averages over the fixed
    quadrature.
    """
    X = fitted.sites
    if fitted.backend == "exact1d":
        left, right = fitted.intervals
        x = X[:, 0]
        return float(np.sum(((right - x) ** 3 - (left - x) ** 3) / 3.0))
    if fitted.backend == "exact2d":
        geom = fitted.geometry
        total = 0.0
        for i in range(fitted.n):
            poly = geom.polygon(i)
            if len(poly) < 3:
                continue
            a = poly[0]
            for k in range(1, len(poly) - 1):
                b, c = poly[k], poly[k + 1]
                area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
                mids = np.array([(a + b) / 2, (b + c) / 2, (c + a) / 2]) - X[i]
                total += area * np.sum(mids * mids) / 3.0
        return float(total)
    U = fitted.quadrature
    idx = fitted.potential.assign(U)
    diff = U - X[idx]
    return float(np.mean(np.sum(diff * diff, axis=1)))


def config_dict(config):
    return asdict(config)
