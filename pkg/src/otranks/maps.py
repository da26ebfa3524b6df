"""Quantile and rank maps of a fitted transport, plus derived diagnostics.

The quantile map sends ``u`` in the support to the site of its cell.  The
rank at ``y`` maximises the concave function

    g(u) = <u, y> - psi(u) = min_i <u, y - X_i> - h_i

over the support; its maximum is the convex conjugate ``psi*(y)``.  Every
rank returned here comes with a duality gap: for any probability vector
``lam``, ``sigma_S(y - X^T lam) - lam . h`` bounds ``g`` from above, where
``sigma_S`` is the support function of S (sum of positive parts on the
cube, Euclidean norm on the ball).
"""

import math

import numpy as np
from scipy.optimize import linprog, minimize, nnls

from . import _kernels
from .potential import as_points

TIE_SLACK = 1e-12
CERT_TOL = 1e-8


class RankCertificateError(RuntimeError):
    """The optimiser could not certify a maximiser to the requested gap."""


class ExactGeometryUnavailable(ValueError):
    """The operation needs a unit interval or unit square reference."""


def _as_queries(fitted, y):
    arr = np.asarray(y, dtype=np.float64)
    single = arr.ndim == 0 or (arr.ndim == 1 and arr.shape[0] == fitted.d)
    return as_points(arr, fitted.d, name="queries"), single


def quantile(fitted, u):
    """Site of the cell containing each ``u`` (rows), lowest index on ties."""
    U, single = _as_queries(fitted, u)
    if not np.all(fitted.reference.contains(U)):
        raise ValueError("quantile arguments must lie in the reference support")
    out = fitted.sites[fitted.potential.assign(U)]
    return out[0] if single else out


def concave_value(fitted, y, u):
    """``g(u) = <u, y> - psi(u)`` for a single query ``y`` and point ``u``."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    return float(np.min((y - fitted.sites) @ u - fitted.h))


def _support_function(reference, v):
    if reference.is_cube:
        return float(np.sum(np.maximum(v, 0.0)))
    return float(np.linalg.norm(v))


def duality_gap(fitted, y, u):
    """Certified gap ``upper - g(u) >= 0`` for the candidate rank ``u`` of ``y``.

    The upper bound uses multipliers fitted to the planes active at ``u``
    by nonnegative least squares on the stationarity conditions.  The
    bound is valid for any multipliers, so a small gap proves ``u`` is a
    maximiser to within that gap.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    A = y - fitted.sites
    b = -fitted.h
    planes = A @ u + b
    g = float(planes.min())
    scale = 1.0 + abs(g) + float(np.abs(A).max())
    active = np.flatnonzero(planes <= g + 1e-9 * scale)
    Aa = A[active]
    ref = fitted.reference
    weight = scale * 1e3
    if ref.is_cube:
        free = np.flatnonzero((u > 1e-10) & (u < 1.0 - 1e-10))
        M = np.vstack([Aa[:, free].T, weight * np.ones((1, len(active)))])
    else:
        if np.linalg.norm(u) >= 1.0 - 1e-10:
            M = np.hstack([np.vstack([Aa.T, weight * np.ones((1, len(active)))]),
                           np.concatenate([-u, [0.0]])[:, None]])
        else:
            M = np.vstack([Aa.T, weight * np.ones((1, len(active)))])
    rhs = np.zeros(M.shape[0])
    rhs[-1] = weight
    coef, _ = nnls(M, rhs, maxiter=50 * M.shape[1] + 100)
    lam = coef[:len(active)]
    total = lam.sum()
    if not total > 0:
        lam = np.full(len(active), 1.0 / len(active))
    else:
        lam = lam / total
    upper = _support_function(ref, Aa.T @ lam) + float(lam @ b[active])
    return max(upper - g, 0.0)


class _VertexTable:
    """Every cell vertex (interval endpoint in 1-d) with ``psi`` there.

    ``g`` is affine on each cell, so its maximum over the support is
    attained at one of these points.
    """

    def __init__(self, fitted):
        if fitted.d == 1:
            left, right = fitted.intervals
            V = np.unique(np.concatenate([left, right, [0.0, 1.0]]))[:, None]
        else:
            V = fitted.geometry.vertices
        self.V = np.ascontiguousarray(V)
        self.psi = _kernels.envelope_values(self.V, fitted.sites, fitted.h)

    def argmax(self, Y, chunk=2048):
        out = np.empty((Y.shape[0], self.V.shape[1]))
        vals = np.empty(Y.shape[0])
        for start in range(0, Y.shape[0], chunk):
            G = Y[start:start + chunk] @ self.V.T - self.psi
            best = G.max(axis=1)
            for r in range(G.shape[0]):
                tied = np.flatnonzero(G[r] >= best[r] - TIE_SLACK)
                out[start + r] = _tie_point(self.V[tied])
                vals[start + r] = best[r]
        return out, vals


def _tie_point(P):
    """Mean of the distinct points in ``P`` (merged at 1e-9).

    Concavity of ``g`` makes the mean of maximisers a maximiser, and taking
    the mean keeps the choice independent of vertex order.
    """
    if P.shape[0] == 1:
        return P[0]
    P = P[np.lexsort(P.T[::-1])]
    reps = [P[0]]
    for p in P[1:]:
        if not any(np.max(np.abs(p - q)) <= 1e-9 for q in reps):
            reps.append(p)
    return np.mean(reps, axis=0)


def _vertex_table(fitted):
    table = fitted.__dict__.get("_vertex_table")
    if table is None:
        table = _VertexTable(fitted)
        fitted.__dict__["_vertex_table"] = table
    return table


def _resolve_mode(fitted, mode):
    if mode in ("vertex", "exact2d-vertex", "exact"):
        if not fitted.exact_geometry:
            raise ExactGeometryUnavailable("vertex mode needs the unit interval or square")
        return "vertex"
    if mode == "optimize":
        return "optimize"
    if mode == "auto":
        return "vertex" if fitted.exact_geometry else "optimize"
    raise ValueError(f"unknown rank mode {mode!r}")


def rank(fitted, y, mode="auto"):
    """Empirical rank of each query row.

    Parameters
    ----------
    fitted : FittedTransport
    y : array_like, shape (q, d) or (d,)
    mode : {"auto", "vertex", "exact2d-vertex", "optimize"}
        ``vertex`` scans all cell vertices (exact; unit interval or square
        only) and resolves ties by the mean of the tied vertices.
        ``optimize`` runs projected supergradient ascent, solves the
        problem restricted to the nearly active planes exactly, and
        certifies the result by its duality gap.  ``auto`` prefers
        ``vertex``.

    Returns
    -------
    ndarray
        Points of the support, one per query.
    """
    Y, single = _as_queries(fitted, y)
    mode = _resolve_mode(fitted, mode)
    if mode == "vertex":
        out, _ = _vertex_table(fitted).argmax(Y)
    else:
        out = np.array([rank_optimize(fitted, row)[0] for row in Y])
    return out[0] if single else out


def conjugate(fitted, y, mode="auto"):
    """``psi*(y) = max_u <u, y> - psi(u)`` for each query row."""
    Y, single = _as_queries(fitted, y)
    mode = _resolve_mode(fitted, mode)
    if mode == "vertex":
        _, vals = _vertex_table(fitted).argmax(Y)
    else:
        vals = np.array([rank_optimize(fitted, row)[1] for row in Y])
    return float(vals[0]) if single else vals


def rank_optimize(fitted, y, iters=2000, cert_tol=CERT_TOL):
    """Certified rank of a single query by first-order ascent plus refinement.

    Returns ``(u, value, gap)``.

    Raises
    ------
    RankCertificateError
        If no candidate reaches a duality gap of ``cert_tol``.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    X, h = fitted.sites, fitted.h
    ref = fitted.reference
    ball = not ref.is_cube
    u0 = X.mean(axis=0) if ref.is_cube else np.zeros(fitted.d)
    if ref.is_cube:
        u0 = np.clip(u0, 0.0, 1.0)
    u_bar, g_bar = _kernels.supergradient_ascent(X, h, y, ball, np.ascontiguousarray(u0),
                                                 ref.diameter(), iters)
    u_bar = _into_support(u_bar, ball)
    A = y - X
    b = -h
    planes = A @ u_bar + b
    spread = float(planes.max() - g_bar)
    best = (u_bar, float(g_bar), duality_gap(fitted, y, u_bar))
    if best[2] <= cert_tol:
        return best
    for delta in (1e-8, 1e-6, 1e-4, 1e-2, 1e-1, math.inf):
        width = delta * (1.0 + spread) if math.isfinite(delta) else math.inf
        active = np.flatnonzero(planes <= g_bar + width)
        for _ in range(50):
            u = _restricted_max(A[active], b[active], ball, u_bar)
            if u is None:
                break
            u = _into_support(u, ball)
            full = A @ u + b
            g = float(full.min())
            gap = duality_gap(fitted, y, u)
            if gap < best[2]:
                best = (u, g, gap)
            if gap <= cert_tol:
                return best
            violated = np.flatnonzero(full < g + 1e-12)
            new = np.setdiff1d(violated, active)
            if new.size == 0:
                break
            active = np.union1d(active, new)
    raise RankCertificateError(
        f"rank not certified: best duality gap {best[2]:.3g} > {cert_tol:.3g}")


def _into_support(u, ball):
    """Round a near-feasible point into the closed support."""
    if not ball:
        return np.clip(u, 0.0, 1.0)
    # membership is tested as sum(u^2) <= 1, which can disagree with the norm
    # in the last bit
    if np.sum(u * u) > 1.0:
        u = u / np.linalg.norm(u)
        while np.sum(u * u) > 1.0:
            u = u * (1.0 - 2.0 ** -52)
    return u


def _restricted_max(A, b, ball, start):
    """Maximise ``min_i A_i . u + b_i`` over the support using only these planes."""
    d = A.shape[1]
    if not ball:
        # variables (u, t): maximise t with t <= A_i u + b_i, 0 <= u <= 1
        c = np.zeros(d + 1)
        c[-1] = -1.0
        A_ub = np.hstack([-A, np.ones((A.shape[0], 1))])
        res = linprog(c, A_ub=A_ub, b_ub=b, bounds=[(0.0, 1.0)] * d + [(None, None)],
                      method="highs")
        if res.status != 0:
            return None
        return np.clip(res.x[:d], 0.0, 1.0)
    x0 = np.concatenate([start, [float(np.min(A @ start + b))]])
    cons = [{"type": "ineq", "fun": lambda z: A @ z[:d] + b - z[d],
             "jac": lambda z: np.hstack([A, -np.ones((A.shape[0], 1))])},
            {"type": "ineq", "fun": lambda z: np.array([1.0 - z[:d] @ z[:d]]),
             "jac": lambda z: np.concatenate([-2.0 * z[:d], [0.0]])[None, :]}]
    res = minimize(lambda z: -z[d], x0, jac=lambda z: np.concatenate([np.zeros(d), [-1.0]]),
                   constraints=cons, method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
    u = res.x[:d]
    return _snap_ball(A, b, u)


def _snap_ball(A, b, u):
    """Polish an approximate ball maximiser onto its exact active structure."""
    d = A.shape[1]
    planes = A @ u + b
    g = planes.min()
    order = np.argsort(planes)
    norm = np.linalg.norm(u)
    if norm > 1.0:
        u = u / norm
    candidates = [u]
    for k in range(1, min(len(order), d + 1) + 1):
        I = order[:k]
        if planes[I[-1]] > g + 1e-5 * (1.0 + abs(g)):
            break
        E = A[I[1:]] - A[I[0]]
        r = b[I[0]] - b[I[1:]]
        if k == d + 1:
            try:
                candidates.append(np.linalg.solve(E, r))
            except np.linalg.LinAlgError:
                pass
            continue
        if k > 1:
            c, *_ = np.linalg.lstsq(E, r, rcond=None)
            P = np.eye(d) - np.linalg.pinv(E) @ E
        else:
            c = np.zeros(d)
            P = np.eye(d)
        p = P @ A[I[0]]
        rho2 = 1.0 - c @ c
        pn = np.linalg.norm(p)
        if rho2 >= 0 and pn > 0:
            candidates.append(c + math.sqrt(rho2) * p / pn)
    best = None
    for cand in candidates:
        nc = np.linalg.norm(cand)
        if nc > 1.0:
            cand = cand / nc
        val = float(np.min(A @ cand + b))
        if best is None or val > best[1]:
            best = (cand, val)
    return best[0]


def _site_words(point):
    bits = np.ascontiguousarray(np.asarray(point, dtype=np.float64) + 0.0).view(np.uint64)
    return [int(v) for v in bits]


def site_rng(seed, point, *extra):
    """Random stream keyed by a master seed and a site's coordinates."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + _site_words(point) + [int(e) for e in extra]
    return np.random.default_rng(np.random.SeedSequence(words))


def _cell_sampler(fitted, i):
    if fitted.d == 1 and fitted.exact_geometry:
        left, right = fitted.intervals
        a, b = left[i], right[i]
        if not b > a:
            return None
        return lambda rng: np.array([a + (b - a) * rng.random()])
    if fitted.d == 2 and fitted.exact_geometry:
        poly = fitted.geometry.polygon(i)
        if len(poly) < 3:
            return None
        p0 = poly[0]
        e1 = poly[1:-1] - p0
        e2 = poly[2:] - p0
        areas = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        cum = np.cumsum(areas)
        if not cum[-1] > 0:
            return None

        def draw(rng):
            k = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(cum) - 1)
            r1, r2 = rng.random(2)
            if r1 + r2 > 1.0:
                r1, r2 = 1.0 - r1, 1.0 - r2
            return np.clip(p0 + r1 * e1[k] + r2 * e2[k], 0.0, 1.0)

        return draw
    return "rejection"


def rank_at_sample(fitted, i, rng):
    """Randomised rank of site ``i``: a uniform draw from its cell.

    Exact geometry samples the interval or the fan triangulation of the
    polygon; otherwise proposals from the reference law are accepted when
    they land in cell ``i``.  Draws whose assignment (lowest index on
    ties) is not ``i`` are redrawn.  At most ``10^4 n`` proposals are made.

    Raises
    ------
    RuntimeError
        When the proposal cap is hit, which signals a near-empty cell.
    """
    if not 0 <= i < fitted.n:
        raise IndexError(f"site index {i} out of range")
    rng = np.random.default_rng(rng)
    cap = 10_000 * fitted.n
    sampler = _cell_sampler(fitted, i)
    X, h = fitted.sites, fitted.h
    if sampler is None:
        raise RuntimeError(f"cell {i} is empty")
    if sampler == "rejection":
        batch = max(64, 4 * fitted.n)
        used = 0
        while used < cap:
            m = min(batch, cap - used)
            U = np.ascontiguousarray(fitted.reference.sample(m, rng))
            idx = _kernels.assign_points(U, X, h, TIE_SLACK)
            hit = np.flatnonzero(idx == i)
            if hit.size:
                return U[hit[0]]
            used += m
        raise RuntimeError(f"no proposal landed in cell {i} after {cap} tries")
    for _ in range(cap):
        u = sampler(rng)
        if _kernels.assign_points(u[None, :], X, h, TIE_SLACK)[0] == i:
            return u
    raise RuntimeError(f"no draw stayed in cell {i} after {cap} tries")


def randomized_ranks(fitted, seed, *extra):
    """Randomised ranks of all sites, each drawn from a stream keyed by
    ``(seed, site coordinates, *extra)``, so the draw for a given point does
    not depend on its index or on the other sites' order."""
    out = np.empty((fitted.n, fitted.d))
    for i in range(fitted.n):
        out[i] = rank_at_sample(fitted, i, site_rng(seed, fitted.sites[i], *extra))
    return out


def rank_at_sample_deterministic(fitted, i):
    """Point of the closed cell ``i`` with the largest Euclidean norm.

    Ties are resolved towards the lexicographically smallest vertex.
    """
    if not fitted.exact_geometry:
        raise ExactGeometryUnavailable("needs the unit interval or square reference")
    if fitted.d == 1:
        left, right = fitted.intervals
        ends = np.array([[left[i]], [right[i]]])
        P = ends
    else:
        P = fitted.geometry.polygon(i)
        if len(P) == 0:
            raise RuntimeError(f"cell {i} is empty")
    norms = np.sum(P * P, axis=1)
    top = np.flatnonzero(norms >= norms.max() - 1e-15)
    cand = P[top]
    return cand[np.lexsort(cand.T[::-1])[0]].copy()


def rank_depth(r):
    """``1/2 - |r - 1/2|_inf`` for ranks ``r`` in the unit cube (rows)."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim <= 1:
        return float(0.5 - np.max(np.abs(r - 0.5)))
    return 0.5 - np.max(np.abs(r - 0.5), axis=1)


def depth(fitted, x, mode="auto"):
    """Depth ``1/2 - |rank(x) - 1/2|_inf`` (unit cube reference only)."""
    if not fitted.reference.is_cube:
        raise ValueError("depth is defined for the unit cube reference")
    return rank_depth(rank(fitted, x, mode))


def psi_rate(n, d, q):
    """Rate ``Psi(n, d, q)`` bounding local uniform deviations of the maps.

    Raises
    ------
    ValueError
        For ``q <= 2`` and the excluded pairs ``q = 4`` (``d <= 4``) and
        ``q = d / (d - 2)`` (``d > 4``).
    """
    if not q > 2:
        raise ValueError("moment order q must exceed 2")
    if d < 1 or n < 1:
        raise ValueError("n and d must be positive")
    if d <= 4 and q == 4:
        raise ValueError("q = 4 is excluded when d <= 4")
    if d > 4 and math.isclose(q, d / (d - 2)):
        raise ValueError("q = d/(d-2) is excluded when d > 4")
    moment = n ** (-(q - 2) / (q * (d + 2)))
    if d < 4:
        return n ** (-1.0 / (2 * (d + 2))) + moment
    if d == 4:
        return n ** (-1.0 / 12) * math.log(1 + n) ** (1.0 / 6) + n ** (-(q - 2) / (6 * q))
    return n ** (-2.0 / (d * (d + 2))) + moment


def local_sup_deviation(fitted, center, radius):
    """``sup_{u in B(center, radius)} |X_assign(u) - u|`` on the unit square.

    For each cell meeting the ball the distance to its site is maximised
    over the extreme points of cell-cap-ball: polygon vertices inside the
    ball, edge-circle crossings, and the circle point farthest from the
    site when that lies in the cell.
    """
    if not (fitted.reference.is_cube and fitted.d == 2):
        raise ExactGeometryUnavailable("needs the unit-square reference")
    c = np.asarray(center, dtype=np.float64).reshape(2)
    r = float(radius)
    if not (r > 0 and np.all(c - r > 0) and np.all(c + r < 1)):
        raise ValueError("the ball must lie in the interior of the square")
    geom = fitted.geometry
    X = fitted.sites
    best = -math.inf
    for i in range(fitted.n):
        P = geom.polygon(i)
        if len(P) < 3:
            continue
        val = _cell_ball_max(P, X[i], c, r)
        if val is not None and val > best:
            best = val
    return float(best)


def _inside(P, q, eps=1e-12):
    e = np.roll(P, -1, axis=0) - P
    w = q - P
    return bool(np.all(e[:, 0] * w[:, 1] - e[:, 1] * w[:, 0] >= -eps))


def _cell_ball_max(P, x, c, r):
    pts = []
    r2 = r * r
    for k in range(len(P)):
        a = P[k]
        b = P[(k + 1) % len(P)]
        if np.sum((a - c) ** 2) <= r2:
            pts.append(a)
        dv = b - a
        qa = dv @ dv
        if qa == 0:
            continue
        qb = 2 * dv @ (a - c)
        qc = (a - c) @ (a - c) - r2
        disc = qb * qb - 4 * qa * qc
        if disc < 0:
            continue
        sq = math.sqrt(disc)
        for t in ((-qb - sq) / (2 * qa), (-qb + sq) / (2 * qa)):
            if 0.0 <= t <= 1.0:
                pts.append(a + t * dv)
    off = c - x
    dist = np.linalg.norm(off)
    far = c + r * (off / dist if dist > 0 else np.array([1.0, 0.0]))
    # when x == c every circle point is equally far, and any edge crossing
    # already supplies one
    if _inside(P, far):
        pts.append(far)
    if not pts:
        return None
    pts = np.array(pts)
    return float(np.max(np.linalg.norm(pts - x, axis=1)))
