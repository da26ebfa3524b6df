"""Simulation distributions for the two-sample and independence studies.

Every generator is a pure function of ``(n, seed)``.  Independent pieces
(coordinates, mixture labels, component draws) come from separate child
streams of ``numpy.random.SeedSequence(seed)``.

Univariate normals are written ``N(mean, variance)``, matching the
bivariate ``N_2(mean, covariance)`` notation.
"""

import numpy as np

FAMILIES = (
    "banana",
    "standard-normal",
    "correlated-normal",
    "gauss-mixture-2s-ii",
    "lognormal-gamma",
    "gauss-mixture-indep-iii",
)


def _seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _streams(seed, k):
    return [np.random.default_rng(s) for s in _seed_sequence(seed).spawn(k)]


def _check_n(n):
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    return n


def banana_transform(x, phi, z):
    """``(x + R cos phi, x^2 + R sin phi)`` with ``R = 0.2 z (1 + (1 - |x|)/2)``."""
    x = np.asarray(x, dtype=float)
    r = 0.2 * np.asarray(z, dtype=float) * (1.0 + (1.0 - np.abs(x)) / 2.0)
    return np.column_stack([x + r * np.cos(phi), x * x + r * np.sin(phi)])


def banana(n, seed):
    """Banana-shaped law: ``x ~ U[-1, 1]``, ``phi ~ U[0, 2 pi]``, ``z ~ U[0, 1]``."""
    n = _check_n(n)
    sx, sphi, sz = _streams(seed, 3)
    return banana_transform(sx.uniform(-1.0, 1.0, n), sphi.uniform(0.0, 2 * np.pi, n),
                            sz.random(n))


def standard_normal(n, seed, d=2):
    n = _check_n(n)
    return np.column_stack([s.standard_normal(n) for s in _streams(seed, d)])


def correlated_normal(n, seed, rho=0.99):
    """Bivariate normal with unit variances and correlation ``rho``."""
    n = _check_n(n)
    z1, z2 = (s.standard_normal(n) for s in _streams(seed, 2))
    return np.column_stack([z1, rho * z1 + np.sqrt(1.0 - rho * rho) * z2])


def _mixture(n, seed, weights, draw):
    """Labels from one stream, component ``k`` samples from stream ``k + 1``."""
    streams = _streams(seed, len(weights) + 1)
    labels = streams[0].choice(len(weights), size=n, p=weights)
    out = None
    for k in range(len(weights)):
        sample = draw(k, streams[k + 1], n)
        if out is None:
            out = np.empty((n,) + sample.shape[1:])
        mask = labels == k
        out[mask] = sample[mask]
    return out


_MIX_2S_MEANS = (np.array([5.0, 0.0]), np.array([0.0, 5.0]))
_MIX_2S_COVS = (np.array([[2.0, 0.0], [0.0, 2.0]]), np.array([[5.0, 2.0], [2.0, 5.0]]))


def gauss_mixture_2s(setting, n, seed):
    """Two-sample settings: ``i`` standard normal, ``ii`` two-component
    Gaussian mixture, ``iii`` banana."""
    n = _check_n(n)
    if setting == "i":
        return standard_normal(n, seed)
    if setting == "ii":
        def draw(k, rng, m):
            L = np.linalg.cholesky(_MIX_2S_COVS[k])
            return _MIX_2S_MEANS[k] + rng.standard_normal((m, 2)) @ L.T
        return _mixture(n, seed, [0.5, 0.5], draw)
    if setting == "iii":
        return banana(n, seed)
    raise ValueError(f"unknown two-sample setting {setting!r}")


def _normal_mixture_1d(n, seed, weights, means, variances):
    sd = np.sqrt(variances)
    return _mixture(n, seed, weights, lambda k, rng, m: means[k] + sd[k] * rng.standard_normal(m))


def indep_setting(setting, n, seed):
    """Independence settings, two independent columns.

    ``i``: both ``N(0, 1)``.  ``ii``: log-normal with log-mean 0 and
    log-sd 0.5, and Gamma with shape 3 and rate 2.  ``iii``:
    ``1/4 N(-1, 2) + 3/4 N(5, 3)`` and
    ``3/10 N(0, 1/2) + 3/10 N(5, 2) + 2/5 N(-5, 1)``.
    """
    n = _check_n(n)
    sx, sy = _seed_sequence(seed).spawn(2)
    if setting == "i":
        return np.column_stack([np.random.default_rng(sx).standard_normal(n),
                                np.random.default_rng(sy).standard_normal(n)])
    if setting == "ii":
        x = np.random.default_rng(sx).lognormal(0.0, 0.5, n)
        y = np.random.default_rng(sy).gamma(3.0, 1.0 / 2.0, n)
        return np.column_stack([x, y])
    if setting == "iii":
        x = _normal_mixture_1d(n, sx, [0.25, 0.75], np.array([-1.0, 5.0]), np.array([2.0, 3.0]))
        y = _normal_mixture_1d(n, sy, [0.3, 0.3, 0.4], np.array([0.0, 5.0, -5.0]),
                               np.array([0.5, 2.0, 1.0]))
        return np.column_stack([x, y])
    raise ValueError(f"unknown independence setting {setting!r}")


def generate(family, n, seed):
    """Dispatch by family name (see ``FAMILIES``)."""
    if family == "banana":
        return banana(n, seed)
    if family == "standard-normal":
        return standard_normal(n, seed)
    if family == "correlated-normal":
        return correlated_normal(n, seed)
    if family == "gauss-mixture-2s-ii":
        return gauss_mixture_2s("ii", n, seed)
    if family == "lognormal-gamma":
        return indep_setting("ii", n, seed)
    if family == "gauss-mixture-indep-iii":
        return indep_setting("iii", n, seed)
    raise ValueError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")
