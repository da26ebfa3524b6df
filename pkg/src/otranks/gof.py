"""Rank-based two-sample and mutual-independence statistics.

Both statistics compare transport ranks.  The two-sample statistic is

    T = E_U |R(Q_X(U)) - R(Q_Y(U))|^2,   U ~ reference,

where ``Q_X`` and ``Q_Y`` are the quantile maps of each sample and ``R``
is the rank map of the pooled sample.  The independence statistic is

    T_n = (1/n) sum_i |R(Z_i) - (R_1(Z_i^1), ..., R_k(Z_i^k))|^2

with ``R`` the joint rank map and ``R_j`` the rank map of block ``j``.
Ranks at data points are randomised: each site's rank is a uniform draw
from its cell, keyed by the master seed and the site's coordinates.

Calibration is by permutation.  Replicate ``b`` draws its permutation from
``SeedSequence(seed, spawn_key=(b,))`` and its rank draws from the rank
seed with ``b + 1`` appended, so every replicate is a pure function of the
seeds and ``b`` whatever the thread count.
"""

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .maps import randomized_ranks
from .potential import as_points
from .reference import ReferenceMeasure
from .solver import fit_empirical
from .synthetic import gauss_mixture_2s

MIN_PERMUTATIONS = 19
MIN_MC = 100
DEFAULT_MC = 10_000


def thread_count():
    """Worker threads for replicate loops, capped by ``OTRANKS_THREADS``."""
    cap = os.environ.get("OTRANKS_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"OTRANKS_THREADS must be an integer, got {cap!r}") from None
    return n


def _map(fn, items, threads=None):
    items = list(items)
    threads = thread_count() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _mean(values):
    values = np.asarray(values, dtype=float)
    return math.fsum(values.tolist()) / len(values)


def _report_json(report):
    return json.dumps(report.to_dict(), separators=(",", ":")) + "\n"


@dataclass
class TwoSampleReport:
    """Result of a two-sample statistic or test.

    ``p_value`` is None and ``replicates`` empty until calibrated.
    ``standard_error`` is the Monte Carlo standard error of ``statistic``
    (0 for the exact evaluation).
    """

    statistic: float
    mc_samples: int
    m: int
    n: int
    seeds: dict
    backend: str = "montecarlo"
    standard_error: float = 0.0
    replicates: list = field(default_factory=list)
    p_value: float = None

    def to_dict(self):
        out = asdict(self)
        out["version"] = 1
        out["kind"] = "two-sample"
        return out

    def to_json(self):
        return _report_json(self)

    @classmethod
    def from_dict(cls, data):
        data = {k: v for k, v in data.items() if k not in ("version", "kind")}
        return cls(**data)


@dataclass
class IndependenceReport:
    """Result of the mutual-independence statistic or test."""

    statistic: float
    contributions: list
    split: list
    seeds: dict
    replicates: list = field(default_factory=list)
    p_value: float = None

    def to_dict(self):
        out = asdict(self)
        out["version"] = 1
        out["kind"] = "independence"
        return out

    def to_json(self):
        return _report_json(self)

    @classmethod
    def from_dict(cls, data):
        data = {k: v for k, v in data.items() if k not in ("version", "kind")}
        return cls(**data)


def _site_map(inv_sample, inv_pool):
    """Pooled site of each site of a sub-sample fit."""
    out = np.empty(inv_sample.max() + 1, dtype=np.int64)
    out[inv_sample] = inv_pool
    return out


class _TwoSample:
    """Pooled fit and Monte Carlo draws shared by the observed statistic
    and every permutation replicate."""

    def __init__(self, X, Y, reference, mc_count, seed, mc_seed, config, exact):
        X = as_points(X, name="X")
        Y = as_points(Y, d=X.shape[1], name="Y")
        smallest = 1 if exact else 2
        if min(X.shape[0], Y.shape[0]) < smallest:
            raise ValueError(f"each sample needs at least {smallest} points")
        d = X.shape[1]
        self.reference = reference if reference is not None else ReferenceMeasure("cube", d)
        if self.reference.d != d:
            raise ValueError(f"reference has dimension {self.reference.d}, data {d}")
        if exact and not (d == 2 and self.reference.is_cube):
            raise ValueError("the exact evaluation needs 2-d data and the unit square")
        if not exact and int(mc_count) < MIN_MC:
            raise ValueError(f"mc_count must be at least {MIN_MC}")
        self.m, self.n = X.shape[0], Y.shape[0]
        self.pooled = np.vstack([X, Y])
        self.config = config
        self.exact = exact
        self.seed = int(seed)
        self.mc_seed = int(mc_seed)
        self.mc_count = 0 if exact else int(mc_count)
        self.pool_fit, self.pool_inv = fit_empirical(self.pooled, self.reference, config)
        self.fixed_ranks = None
        if exact:
            if self.pool_fit.backend != "exact2d":
                raise ValueError("the exact evaluation needs exact2d fits")
            self.U = None
        else:
            rng = np.random.default_rng(self.mc_seed)
            self.U = np.ascontiguousarray(self.reference.sample(self.mc_count, rng))

    def ranks(self, rep):
        if self.fixed_ranks is not None:
            return self.fixed_ranks
        return randomized_ranks(self.pool_fit, self.seed, rep)

    def fix_ranks(self, ranks):
        """Use given ranks of the pooled rows (X rows then Y rows) instead of
        random draws; rows sharing a site must share a rank."""
        ranks = as_points(ranks, self.pooled.shape[1], name="ranks")
        if ranks.shape[0] != self.pooled.shape[0]:
            raise ValueError("need one rank per pooled row")
        if not np.all(self.reference.contains(ranks)):
            raise ValueError("ranks must lie in the reference support")
        site_ranks = np.empty((self.pool_fit.n, ranks.shape[1]))
        site_ranks[self.pool_inv] = ranks
        if not np.array_equal(site_ranks[self.pool_inv], ranks):
            raise ValueError("repeated rows were given different ranks")
        self.fixed_ranks = site_ranks

    def _sub_fit(self, rows):
        fitted, inv = fit_empirical(self.pooled[rows], self.reference, self.config)
        return fitted, _site_map(inv, self.pool_inv[rows])

    def evaluate(self, rows_x, rows_y, rep):
        """Statistic and its Monte Carlo standard error for a split of the
        pooled rows, with rank draws for replicate ``rep``."""
        fx, px = self._sub_fit(rows_x)
        fy, py = self._sub_fit(rows_y)
        R = self.ranks(rep)
        if self.exact:
            return _exact_sum(fx, px, fy, py, R), 0.0
        diff = R[px[fx.assign(self.U)]] - R[py[fy.assign(self.U)]]
        vals = np.einsum("ij,ij->i", diff, diff)
        return _mean(vals), float(np.std(vals, ddof=1) / math.sqrt(len(vals)))

    def observed_rows(self):
        return np.arange(self.m), np.arange(self.m, self.m + self.n)

    def seeds(self, perm_seed=None):
        out = {"fit": self.seed, "mc": self.mc_seed}
        if perm_seed is not None:
            out["permutation"] = int(perm_seed)
        return out


def overlap_matrix(fx, fy):
    """Sparse ``(i, j, area(W_i^X cap W_j^Y))`` for two exact 2-d fits."""
    gx, gy = fx.geometry, fy.geometry
    return _kernels.overlap_areas(gx.vertices, gx.offsets, gy.vertices, gy.offsets)


SLIVER_AREA = 1e-14


def _exact_sum(fx, px, fy, py, R):
    i, j, area = overlap_matrix(fx, fy)
    # shared edges clipped against themselves leave rounding slivers
    keep = area > SLIVER_AREA
    i, j, area = i[keep], j[keep], area[keep]
    total = math.fsum(area.tolist())
    if abs(total - 1.0) > 1e-8:
        raise RuntimeError(f"cell overlaps sum to {total!r}, expected 1")
    diff = R[px[i]] - R[py[j]]
    return math.fsum((np.einsum("ij,ij->i", diff, diff) * area).tolist())


def two_sample_statistic(X, Y, reference=None, mc_count=DEFAULT_MC, seed=0, mc_seed=None,
                         config=None):
    """Monte Carlo two-sample statistic.

    Parameters
    ----------
    X, Y : array_like, shapes (m, d) and (n, d)
    reference : ReferenceMeasure, optional
        Defaults to the unit cube.
    mc_count : int
        Number of reference draws ``U_k`` (at least 100).
    seed : int
        Seed of the randomised ranks at the pooled sites.
    mc_seed : int, optional
        Seed of the reference draws; defaults to ``seed``.
    config : SolverConfig, optional
        Used for all three fits.

    Returns
    -------
    TwoSampleReport
        Without permutation replicates.
    """
    mc_seed = seed if mc_seed is None else mc_seed
    eng = _TwoSample(X, Y, reference, mc_count, seed, mc_seed, config, exact=False)
    T, se = eng.evaluate(*eng.observed_rows(), 0)
    return TwoSampleReport(T, eng.mc_count, eng.m, eng.n, eng.seeds(), "montecarlo", se)


def two_sample_exact_2d(X, Y, seed=0, config=None, ranks=None):
    """Exact two-sample statistic on the unit square.

    ``T = sum_ij |R(X_i) - R(Y_j)|^2 area(W_i^X cap W_j^Y)`` with the cell
    overlaps computed by convex polygon clipping.  Rank draws are the same
    as those of :func:`two_sample_statistic` with the same ``seed``.

    Parameters
    ----------
    ranks : array_like, shape (m + n, 2), optional
        Ranks of the rows of ``X`` then ``Y``, replacing the random draws.
    """
    eng = _TwoSample(X, Y, ReferenceMeasure("cube", 2), 0, seed, seed, config, exact=True)
    if ranks is not None:
        eng.fix_ranks(ranks)
    T, _ = eng.evaluate(*eng.observed_rows(), 0)
    return T


def _check_permutations(B):
    B = int(B)
    if B < MIN_PERMUTATIONS:
        raise ValueError(f"need at least {MIN_PERMUTATIONS} permutations, got {B}")
    return B


def replicate_rng(seed, b):
    """Generator of permutation replicate ``b``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(b),)))


def two_sample_permutation(sizes):
    """Permuter that re-partitions pooled rows into groups of ``sizes``."""
    m, n = (int(s) for s in sizes)

    def permute(rows, rng):
        perm = rng.permutation(m + n)
        return perm[:m], perm[m:]

    return permute


def block_permutation(n, k):
    """Permuter that shuffles the rows of blocks ``1..k-1`` independently."""

    def permute(data, rng):
        return [np.arange(n)] + [rng.permutation(n) for _ in range(k - 1)]

    return permute


def permutation_pvalue(statistic_fn, data, B, seed, permute, observed=None, threads=None):
    """Permutation p-value ``(1 + #{replicate >= observed}) / (B + 1)``.

    Parameters
    ----------
    statistic_fn : callable
        ``statistic_fn(data, rep)`` returns the statistic; ``rep`` is 0 for
        the observed data and ``b + 1`` for replicate ``b``.
    data
        Passed to ``permute`` to make replicate data.
    B : int
        Number of replicates, at least 19.
    seed : int
        Master permutation seed.
    permute : callable
        ``permute(data, rng)`` returns permuted data.
    observed : float, optional
        Observed statistic if already computed.

    Returns
    -------
    p_value : float
    replicates : list of float
    """
    B = _check_permutations(B)
    if observed is None:
        observed = float(statistic_fn(data, 0))

    def one(b):
        return float(statistic_fn(permute(data, replicate_rng(seed, b)), b + 1))

    replicates = _map(one, range(B), threads)
    exceed = sum(r >= observed for r in replicates)
    return (1 + exceed) / (B + 1), replicates


def two_sample_test(X, Y, B=99, reference=None, mc_count=DEFAULT_MC, seed=0, mc_seed=None,
                    perm_seed=None, config=None, exact=False, threads=None):
    """Two-sample statistic calibrated by ``B`` random re-partitions.

    The pooled fit and the reference draws are shared by all replicates;
    each replicate refits both groups and redraws the pooled ranks.
    ``perm_seed`` defaults to ``seed``.
    """
    mc_seed = seed if mc_seed is None else mc_seed
    perm_seed = seed if perm_seed is None else perm_seed
    B = _check_permutations(B)
    eng = _TwoSample(X, Y, reference if not exact else ReferenceMeasure("cube", 2), mc_count,
                     seed, mc_seed, config, exact)
    T, se = eng.evaluate(*eng.observed_rows(), 0)

    def stat(rows, rep):
        return eng.evaluate(rows[0], rows[1], rep)[0]

    p, reps = permutation_pvalue(stat, eng.observed_rows(), B, perm_seed,
                                 two_sample_permutation((eng.m, eng.n)), T, threads)
    return TwoSampleReport(T, eng.mc_count, eng.m, eng.n, eng.seeds(perm_seed),
                           "exact2d" if exact else "montecarlo", se, reps, p)


def parse_split(split, d):
    """Validate a block partition given as block sizes; returns a list of ints."""
    if isinstance(split, str):
        try:
            split = [int(s) for s in split.split(",")]
        except ValueError:
            raise ValueError(f"bad split {split!r}") from None
    split = [int(s) for s in split]
    if len(split) < 2:
        raise ValueError("need at least two blocks")
    if any(s < 1 for s in split):
        raise ValueError("block sizes must be positive")
    if sum(split) != d:
        raise ValueError(f"block sizes sum to {sum(split)}, data have {d} columns")
    return split


class _Independence:
    """Joint and per-block fits; replicates refit only the joint law."""

    def __init__(self, Z, split, seed, config):
        Z = as_points(Z, name="Z")
        if Z.shape[0] < 2:
            raise ValueError("need at least two observations")
        self.Z = Z
        self.n, d = Z.shape
        self.split = parse_split(split, d)
        self.seed = int(seed)
        self.config = config
        bounds = np.cumsum([0] + self.split)
        self.blocks = [slice(bounds[j], bounds[j + 1]) for j in range(len(self.split))]
        self.marginals = [fit_empirical(Z[:, b], ReferenceMeasure("cube", b.stop - b.start),
                                        config) for b in self.blocks]

    def contributions(self, rows, rep):
        Zp = np.column_stack([self.Z[r, b] for r, b in zip(rows, self.blocks)])
        joint, inv = fit_empirical(Zp, ReferenceMeasure("cube", Zp.shape[1]), self.config)
        R = randomized_ranks(joint, self.seed, 0, rep)[inv]
        parts = []
        for j, (r, (fj, invj)) in enumerate(zip(rows, self.marginals)):
            parts.append(randomized_ranks(fj, self.seed, j + 1, rep)[invj[r]])
        diff = R - np.column_stack(parts)
        return np.einsum("ij,ij->i", diff, diff)

    def statistic(self, rows, rep):
        return _mean(self.contributions(rows, rep))

    def observed_rows(self):
        return [np.arange(self.n)] * len(self.split)


def independence_statistic(Z, split, seed=0, config=None):
    """Mutual-independence statistic of the column blocks of ``Z``.

    Parameters
    ----------
    Z : array_like, shape (n, d)
    split : sequence of int or str
        Block sizes in column order, e.g. ``[1, 1]`` or ``"1,1"``.
    seed : int
        Seed of the randomised ranks.

    Returns
    -------
    IndependenceReport
        Without permutation replicates.
    """
    eng = _Independence(Z, split, seed, config)
    c = eng.contributions(eng.observed_rows(), 0)
    return IndependenceReport(_mean(c), c.tolist(), eng.split, {"fit": eng.seed})


def independence_test(Z, split, B=99, seed=0, perm_seed=None, config=None, threads=None):
    """Independence statistic calibrated by permuting the rows of every
    block but the first."""
    perm_seed = seed if perm_seed is None else perm_seed
    B = _check_permutations(B)
    eng = _Independence(Z, split, seed, config)
    c = eng.contributions(eng.observed_rows(), 0)
    T = _mean(c)
    p, reps = permutation_pvalue(eng.statistic, eng.observed_rows(), B, perm_seed,
                                 block_permutation(eng.n, len(eng.split)), T, threads)
    return IndependenceReport(T, c.tolist(), eng.split,
                              {"fit": eng.seed, "permutation": int(perm_seed)}, reps, p)


def normalized_statistic(T, n, center):
    """``(n / log n) (T - center)``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return n / math.log(n) * (T - center)


@dataclass
class HarnessReport:
    """Centred, normalised two-sample statistics under the null for two
    data settings, with QQ data and a two-sample Kolmogorov-Smirnov test."""

    n: int
    replications: int
    settings: list
    statistics: dict
    normalized: dict
    qq: dict
    ks_statistic: float
    p_value: float
    seed: int

    def to_dict(self):
        out = asdict(self)
        out["version"] = 1
        out["kind"] = "null-harness"
        return out

    def to_json(self):
        return _report_json(self)


def null_harness(settings=("i", "iii"), n=1000, replications=200, mc_count=DEFAULT_MC, seed=0,
                 threads=None, progress=None):
    """Replicate the two-sample statistic under the null for each setting.

    Replication ``r`` of setting ``s`` compares two independent samples of
    size ``n`` from the same law.  Each setting's statistics are centred at
    their replication mean and scaled by ``n / log n``; the centred laws of
    the first two settings are compared by a two-sample KS test.
    """
    from scipy import stats

    if len(settings) < 2:
        raise ValueError("need two settings to compare")
    if replications < 2:
        raise ValueError("need at least two replications")
    raw, normed = {}, {}
    for si, s in enumerate(settings):
        def one(r, si=si, s=s):
            X = gauss_mixture_2s(s, n, [seed, si, r, 0])
            Y = gauss_mixture_2s(s, n, [seed, si, r, 1])
            rep_seed = int(np.random.SeedSequence([seed, si, r, 2]).generate_state(1)[0])
            T = two_sample_statistic(X, Y, mc_count=mc_count, seed=rep_seed).statistic
            if progress is not None:
                progress(s, r)
            return T

        T = np.array(_map(one, range(replications), threads))
        center = _mean(T)
        raw[s] = T.tolist()
        normed[s] = [normalized_statistic(t, n, center) for t in T]
    a, b = np.asarray(normed[settings[0]]), np.asarray(normed[settings[1]])
    probs = (np.arange(1, replications + 1) - 0.5) / replications
    qq = {"probability": probs.tolist(),
          settings[0]: np.quantile(a, probs).tolist(),
          settings[1]: np.quantile(b, probs).tolist()}
    ks = stats.ks_2samp(a, b)
    return HarnessReport(int(n), int(replications), list(settings), raw, normed, qq,
                         float(ks.statistic), float(ks.pvalue), int(seed))
