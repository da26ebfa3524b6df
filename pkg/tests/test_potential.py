import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection

from otranks import PiecewiseAffinePotential
from otranks.potential import (
    DuplicateSitesError,
    cell_geometry_2d,
    clip_polygon,
    polygon_area_centroid,
)

DIAG = PiecewiseAffinePotential([[0.25, 0.25], [0.75, 0.75]], [0.25, -0.25])
LINE = PiecewiseAffinePotential([[0.2], [0.8]], [0.15, -0.15])


def random_potential(rng, n, scale=0.3):
    X = rng.standard_normal((n, 2))
    h = scale * rng.standard_normal(n)
    return PiecewiseAffinePotential(X, h - h.mean())


def test_eval_examples():
    # indices are 0-based
    assert DIAG.eval([0.0, 0.0]) == (0.25, [0])
    value, active = DIAG.eval([0.5, 0.5])
    assert value == pytest.approx(0.5, abs=1e-15)
    assert active == [0, 1]
    single = PiecewiseAffinePotential([[0.3, -2.0]], [0.0])
    assert single.eval([2.0, 1.0]) == (0.3 * 2.0 - 2.0, [0])


def test_assign_examples():
    assert DIAG.assign([0.4, 0.4]) == 0
    assert DIAG.assign([0.5, 0.5]) == 0
    assert DIAG.assign([0.9, 0.9]) == 1
    assert DIAG.assign(np.array([[0.4, 0.4], [0.9, 0.9]])).tolist() == [0, 1]


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        DIAG.eval([0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        DIAG.assign([[0.1, 0.2, 0.3]])


def test_construction_errors():
    with pytest.raises(DuplicateSitesError):
        PiecewiseAffinePotential([[0.1, 0.2], [0.1, 0.2]], [0.0, 0.0])
    with pytest.raises(ValueError):
        PiecewiseAffinePotential([[0.1, 0.2]], [0.0, 1.0])
    with pytest.raises(ValueError):
        PiecewiseAffinePotential([[0.1, np.nan]], [0.0])


def test_cells_1d_examples():
    cells = LINE.cells_1d()
    assert [c.site for c in cells] == [0, 1]
    assert np.allclose(cells[0].vertices, [0.0, 0.5], atol=1e-15)
    assert np.allclose(cells[1].vertices, [0.5, 1.0], atol=1e-15)
    one = PiecewiseAffinePotential([[0.4]], [0.0]).cells_1d()
    assert one[0].measure == 1.0
    empty = PiecewiseAffinePotential([[0.2], [0.8]], [0.5, -0.5]).cells_1d()
    assert [c.measure for c in empty] == [1.0, 0.0]


def test_cells_1d_listed_by_increasing_site():
    pot = PiecewiseAffinePotential([[0.9], [0.1], [0.5]], [0.0, 0.0, 0.0])
    cells = pot.cells_1d()
    assert [c.site for c in cells] == [1, 2, 0]
    assert sum(c.measure for c in cells) == pytest.approx(1.0, abs=1e-15)


def test_cells_1d_breakpoints_at_i_over_n():
    # closed-form weights put the envelope crossovers at i/n
    rng = np.random.default_rng(4)
    x = np.sort(rng.standard_normal(7))
    n = len(x)
    h = np.zeros(n)
    for i in range(1, n):
        h[i] = h[i - 1] + i * (x[i - 1] - x[i]) / n
    cells = PiecewiseAffinePotential(x[:, None], h - h.mean()).cells_1d()
    right = np.array([c.vertices[1] for c in cells])
    assert np.allclose(right, np.arange(1, n + 1) / n, atol=1e-12)


def test_cells_2d_examples():
    cells = DIAG.cells_2d()
    assert cells[0].measure == pytest.approx(0.5, abs=1e-15)
    tri = cells[0].vertices
    assert {tuple(np.round(v, 12)) for v in tri} == {(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)}
    one = PiecewiseAffinePotential([[3.0, -1.0]], [0.0]).cells_2d()
    assert one[0].measure == 1.0
    # planes tie where <u, X_2 - X_1> = h_1 - h_2, i.e. 0.5 u_1 = h_1 - h_2
    sites = [[0.25, 0.5], [0.75, 0.5]]
    flat = PiecewiseAffinePotential(sites, [0.0, 0.0]).cells_2d()
    assert [c.measure for c in flat] == [0.0, 1.0]
    halves = PiecewiseAffinePotential(sites, [0.125, -0.125]).cells_2d()
    assert [c.measure for c in halves] == pytest.approx([0.5, 0.5], abs=1e-15)


def test_cells_2d_counterclockwise_and_convex():
    pot = random_potential(np.random.default_rng(0), 40)
    for cell in pot.cells_2d():
        P = cell.vertices
        if len(P) < 3:
            continue
        e = np.roll(P, -1, axis=0) - P
        f = np.roll(e, -1, axis=0)
        assert np.all(e[:, 0] * f[:, 1] - e[:, 1] * f[:, 0] >= -1e-12)


def _oracle_area(X, h, i):
    """Cell area by scipy's halfspace intersection (independent route)."""
    # scipy wants A u + b <= 0
    rows = [[-1.0, 0.0, 0.0], [1.0, 0.0, -1.0], [0.0, -1.0, 0.0], [0.0, 1.0, -1.0]]
    for j in range(len(X)):
        if j != i:
            a = X[j] - X[i]
            rows.append([a[0], a[1], h[j] - h[i]])
    H = np.array(rows)
    norm = np.linalg.norm(H[:, :2], axis=1)
    res = linprog([0, 0, -1], A_ub=np.column_stack([H[:, :2], norm]), b_ub=-H[:, 2],
                  bounds=[(None, None), (None, None), (0, None)])
    if res.status != 0 or res.x[2] < 1e-9:
        return 0.0
    pts = HalfspaceIntersection(H, res.x[:2]).intersections
    return ConvexHull(pts).volume


def test_cells_2d_match_halfspace_intersection():
    rng = np.random.default_rng(11)
    for _ in range(3):
        pot = random_potential(rng, 25)
        areas = [c.measure for c in pot.cells_2d()]
        oracle = [_oracle_area(pot.sites, pot.weights, i) for i in range(pot.n)]
        assert np.allclose(areas, oracle, atol=1e-10)


def test_cells_2d_match_monte_carlo():
    rng = np.random.default_rng(5)
    pot = random_potential(rng, 30)
    areas = np.array([c.measure for c in pot.cells_2d()])
    M = 1_000_000
    U = rng.random((M, 2))
    frac = np.bincount(pot.assign(U), minlength=pot.n) / M
    sd = np.sqrt(areas * (1 - areas) / M)
    assert np.all(np.abs(frac - areas) <= 4 * sd + 1e-12)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 200), seed=st.integers(0, 2**32 - 1),
       scale=st.sampled_from([0.0, 0.1, 1.0]))
def test_cells_2d_areas_sum_to_one(n, seed, scale):
    rng = np.random.default_rng(seed)
    pot = random_potential(rng, n, scale)
    geom = cell_geometry_2d(pot.sites, pot.weights)
    assert abs(geom.area.sum() - 1.0) <= 1e-9
    assert np.all(geom.area >= 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_assigned_points_lie_in_their_polygon(seed):
    rng = np.random.default_rng(seed)
    pot = random_potential(rng, 15)
    geom = cell_geometry_2d(pot.sites, pot.weights)
    U = rng.random((200, 2))
    for u, i in zip(U, pot.assign(U)):
        P = geom.polygon(i)
        e = np.roll(P, -1, axis=0) - P
        w = u - P
        assert np.all(e[:, 0] * w[:, 1] - e[:, 1] * w[:, 0] >= -1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.1, 10.0),
       b=st.tuples(st.floats(-5, 5), st.floats(-5, 5)))
def test_affine_equivariance_of_assign(seed, c, b):
    rng = np.random.default_rng(seed)
    pot = random_potential(rng, 12)
    moved = PiecewiseAffinePotential(c * pot.sites + np.array(b), c * pot.weights)
    U = rng.random((300, 2))
    # the shift adds <u, b> to every plane; this can reorder only exact ties
    keep = []
    for u in U:
        _, active = pot.eval(u)
        keep.append(len(active) == 1)
    U = U[np.array(keep)]
    assert np.array_equal(pot.assign(U), moved.assign(U))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_reordering_sites(seed):
    rng = np.random.default_rng(seed)
    pot = random_potential(rng, 10)
    perm = rng.permutation(pot.n)
    shuffled = PiecewiseAffinePotential(pot.sites[perm], pot.weights[perm])
    U = rng.random((100, 2))
    assert np.array_equal(pot.values(U), shuffled.values(U))
    a, b = pot.assign(U), shuffled.assign(U)
    assert np.array_equal(perm[b], a)


def test_conjugate_at_site():
    assert LINE.conjugate_at_site(0) == pytest.approx(-0.15)
    assert LINE.conjugate_at_site(1) == pytest.approx(0.15)
    assert PiecewiseAffinePotential([[0.5]], [0.0]).conjugate_at_site(0) == 0.0
    with pytest.raises(IndexError):
        LINE.conjugate_at_site(2)


def test_polygon_area_centroid():
    area, c = polygon_area_centroid([[0, 0], [1, 0], [1, 1], [0, 1]])
    assert area == 1.0 and np.allclose(c, [0.5, 0.5])
    area, c = polygon_area_centroid([[0, 0], [1, 0], [0, 1]])
    assert area == 0.5 and np.allclose(c, [1 / 3, 1 / 3])
    area, _ = polygon_area_centroid([[0, 0], [1, 1], [2, 2]])
    assert area == 0.0
    with pytest.raises(ValueError):
        polygon_area_centroid([[0, 0], [1, 1]])


def test_clip_polygon():
    square = [[0, 0], [1, 0], [1, 1], [0, 1]]
    # keep u1 + u2 <= 1
    P = clip_polygon(square, [[-1.0, -1.0]], [1.0])
    area, _ = polygon_area_centroid(P)
    assert area == pytest.approx(0.5)
    assert len(clip_polygon(square, [[1.0, 0.0]], [-2.0])) == 0
