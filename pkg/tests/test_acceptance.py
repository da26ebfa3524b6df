"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Seeds are fixed per criterion and disjoint from the pilot runs in
``tests/pilot``.  Criterion 13 takes hours and runs only with
``OTRANKS_RUN_SLOW=1``.
"""

import json
import os
import pathlib
import time

import numpy as np
import pytest
from scipy import stats

from otranks import (
    ReferenceMeasure,
    SolverConfig,
    cli,
    conjugate,
    duality_gap,
    fit,
    independence_statistic,
    independence_test,
    local_sup_deviation,
    null_harness,
    psi_rate,
    quantile,
    rank,
    rank_at_sample,
    synthetic,
    two_sample_exact_2d,
    two_sample_statistic,
    two_sample_test,
)
from otranks.potential import PiecewiseAffinePotential, cell_geometry_2d

PILOT = json.loads((pathlib.Path(__file__).parent / "pilot" / "pilot_results.json").read_text())


def three_cell_vertices(fitted, tol=1e-9):
    """Interior diagram vertices shared by exactly three cells, with their sites."""
    geom = fitted.geometry
    owners = {}
    for i in range(fitted.n):
        for v in geom.polygon(i):
            if np.min(np.minimum(v, 1 - v)) <= tol:
                continue
            key = tuple(np.round(v / tol).astype(np.int64))
            owners.setdefault(key, (v, set()))[1].add(i)
    return [(v, sorted(s)) for v, s in owners.values() if len(s) == 3]


def test_criterion_01_one_dimensional_exactness(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_h = worst_rank = 0.0
    quantiles_exact = True
    for _ in range(50):
        n = int(rng.integers(2, 101))
        x = rng.standard_normal(n)
        f = fit(x[:, None], config=SolverConfig(tol=1e-11))
        order = np.argsort(x)
        xs, hs = x[order], f.h[order]
        i = np.arange(1, n)
        expected = i * (xs[:-1] - xs[1:]) / n
        worst_h = max(worst_h, np.max(np.abs(np.diff(hs) - expected)))
        # off-knot grids: no u is a multiple of 1/n, no y is a data point
        u = (np.arange(3 * n) + 0.5) / (3 * n) + 0.1 / (7 * n)
        u = u[u < 1]
        q = quantile(f, u[:, None])[:, 0]
        quantiles_exact &= bool(np.array_equal(q, xs[np.ceil(n * u).astype(int) - 1]))
        y = np.concatenate([[xs[0] - 1], (xs[:-1] + xs[1:]) / 2, [xs[-1] + 1],
                            rng.normal(scale=2, size=50)])
        y = y[~np.isin(y, xs)]
        counts = np.searchsorted(xs, y, side="right")
        worst_rank = max(worst_rank, np.max(np.abs(rank(f, y[:, None])[:, 0] - counts / n)))
    elapsed = time.perf_counter() - start
    ok = worst_h <= 1e-8 and worst_rank <= 1e-8 and quantiles_exact and elapsed < 5
    criterion(1, ok, f"max weight-gap error {worst_h:.2e}, max rank error {worst_rank:.2e}, "
                     f"quantiles exact {quantiles_exact}, {elapsed:.1f}s")
    assert ok


def test_criterion_02_cell_measure_uniformity(criterion):
    start = time.perf_counter()
    X = synthetic.standard_normal(50, 102)
    exact = fit(X)
    exact_dev = np.max(np.abs(exact.cell_measures() - 1 / 50))
    mc = fit(X, config=SolverConfig(backend="montecarlo", M=100_000, seed=1020))
    mc_dev = np.max(np.abs(mc.cell_measures() - 1 / 50))
    true_dev = np.max(np.abs(cell_geometry_2d(mc.sites, mc.h).area - 1 / 50))
    elapsed = time.perf_counter() - start
    ok = exact.backend == "exact2d" and exact_dev <= 1e-7 and mc_dev <= 0.25 / 50 and elapsed < 30
    criterion(2, ok, f"exact2d max deviation {exact_dev:.2e}, montecarlo {mc_dev:.2e} "
                     f"(polygon areas {true_dev:.2e}), {elapsed:.1f}s")
    assert ok


def duality_models():
    rng = np.random.default_rng(103)
    models = []
    for k in range(20):
        if k < 16:
            ref = ReferenceMeasure("cube", 2)
        elif k < 18:
            ref = ReferenceMeasure("ball", 2)
        else:
            ref = ReferenceMeasure("cube", 3)
        n = int(rng.integers(5, 60))
        models.append(fit(rng.standard_normal((n, ref.d)) * rng.uniform(0.5, 3), ref))
    return models, rng


def test_criterion_03_duality(criterion):
    models, rng = duality_models()
    worst_gap = worst_site = worst_vertex = 0.0
    vertices = 0
    for f in models:
        Y = rng.normal(scale=3.0, size=(100, f.d))
        R = rank(f, Y)
        worst_gap = max(worst_gap, max(duality_gap(f, y, r) for y, r in zip(Y, R)))
        worst_site = max(worst_site, np.max(np.abs(conjugate(f, f.sites) + f.h)))
        if f.exact_geometry and f.d == 2:
            for v, sites in three_cell_vertices(f):
                vertices += 1
                x = f.sites[sites].mean(axis=0)
                worst_vertex = max(worst_vertex, np.max(np.abs(rank(f, x) - v)))
    ok = worst_gap <= 1e-8 and worst_site <= 1e-8 and worst_vertex <= 1e-8 and vertices > 0
    criterion(3, ok, f"max certificate gap {worst_gap:.2e}, max |psi*(X_i)+h_i| "
                     f"{worst_site:.2e}, {vertices} three-cell vertices within {worst_vertex:.2e}")
    assert ok


def test_criterion_04_monotonicity(criterion):
    rng = np.random.default_rng(104)
    worst = 0.0
    lines = 0
    t = np.linspace(0, 1, 101)[:, None]
    for _ in range(20):
        f = fit(rng.standard_normal((int(rng.integers(5, 50)), 2)))
        for _ in range(10):
            x, y = rng.normal(scale=2.5, size=(2, 2))
            s = rank(f, y + t * (x - y)) @ (x - y)
            worst = max(worst, float(np.max(-np.diff(s))))
            lines += 1
    ok = worst <= 1e-9
    criterion(4, ok, f"{lines} lines, largest decrease {max(worst, 0.0):.2e}")
    assert ok


def test_criterion_05_equivariance(criterion):
    rng = np.random.default_rng(105)
    X = rng.standard_normal((40, 2))
    base = fit(X)
    U = rng.random((100_000, 2))
    Q = rng.normal(scale=2, size=(200, 2))
    labels = base.assign(U)
    assign_exact = True
    worst_h = worst_rank = 0.0
    tol = base.config.tol
    for a, b in ((2.0, np.zeros(2)), (0.37, np.array([1.5, -2.0])), (5.5, np.array([-0.3, 7.0]))):
        # aX + b with weights a h: every plane is a times the original plus <u, b>
        moved = PiecewiseAffinePotential(a * X + b, a * base.h)
        assign_exact &= bool(np.array_equal(moved.assign(U), labels))
        refit = fit(a * X + b)
        worst_h = max(worst_h, np.max(np.abs(refit.h - a * base.h)) / (a * tol))
        worst_rank = max(worst_rank, np.max(np.abs(rank(refit, a * Q + b) - rank(base, Q))))
    # orthogonal maps with the rotated quadrature
    ref = ReferenceMeasure("ball", 2)
    th = 1.1
    A = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    otol = 1e-4
    cfg = SolverConfig(tol=otol)
    W = ref.sample(20_000, np.random.default_rng(1050))
    Xb = rng.standard_normal((25, 2))
    orig = fit(Xb, ref, cfg, quadrature=W)
    turned = fit(Xb @ A.T, ref, cfg, quadrature=W @ A.T)
    Yb = rng.standard_normal((30, 2))
    orth = np.max(np.abs(rank(turned, Yb @ A.T) - rank(orig, Yb) @ A.T))
    ok = assign_exact and worst_h <= 10 and worst_rank <= 1e-6 and orth <= 10 * otol
    criterion(5, ok, f"assignments identical {assign_exact}, refit weights within "
                     f"{worst_h:.2f} x a*tol, rank shift {worst_rank:.2e}, "
                     f"orthogonal rank deviation {orth:.2e} (limit {10 * otol:.0e})")
    assert ok


def first_ranks(draw, seed, reps=2000, n=20):
    out = np.empty((reps, 2))
    for r in range(reps):
        X = draw(n, [seed, r])
        f = fit(X)
        assert np.array_equal(f.sites[0], X[0])
        out[r] = rank_at_sample(f, 0, np.random.default_rng([seed, r, 1]))
    return out


def test_criterion_06_distribution_free_ranks(criterion):
    start = time.perf_counter()
    gauss = first_ranks(synthetic.standard_normal, 106)
    banana = first_ranks(synthetic.banana, 1060)
    unif = [stats.kstest(s[:, k], "uniform").pvalue for s in (gauss, banana) for k in range(2)]
    pair = [stats.ks_2samp(gauss[:, k], banana[:, k]).pvalue for k in range(2)]
    elapsed = time.perf_counter() - start
    ok = min(unif) > 1e-3 and min(pair) > 1e-3 and elapsed < 600
    criterion(6, ok, f"uniformity p-values min {min(unif):.3f}, two-setting p-values min "
                     f"{min(pair):.3f}, {elapsed:.0f}s")
    assert ok


GC_SIZES = (100, 400, 1600)


@pytest.fixture(scope="module")
def deviation_medians():
    medians = []
    for n in GC_SIZES:
        vals = [local_sup_deviation(fit(np.random.default_rng([107, n, r]).random((n, 2))),
                                    (0.5, 0.5), 0.3) for r in range(20)]
        medians.append(float(np.median(vals)))
    return np.array(medians)


def test_criterion_07_uniform_convergence_trend(criterion, deviation_medians):
    m = deviation_medians
    ok = bool(np.all(np.diff(m) < 0)) and m[-1] <= 2 / 3 * m[0]
    criterion(7, ok, "medians " + ", ".join(f"n={n}: {v:.4f}" for n, v in zip(GC_SIZES, m))
              + f"; ratio {m[-1] / m[0]:.3f}")
    assert ok


def test_criterion_08_rate_bracket(criterion, deviation_medians):
    logn = np.log(GC_SIZES)
    slope = np.polyfit(logn, np.log(deviation_medians), 1)[0]
    bound = np.polyfit(logn, np.log([psi_rate(n, 2, 6) for n in GC_SIZES]), 1)[0]
    ok = bound - 0.15 <= slope < 0
    criterion(8, ok, f"log-log slope {slope:.3f}, rate-bound slope {bound:.3f}, "
                     f"bracket [{bound - 0.15:.3f}, 0)")
    assert ok


def test_criterion_09_two_sample_level_and_power(criterion):
    start = time.perf_counter()
    level = 0
    for r in range(200):
        X = synthetic.standard_normal(50, [109, r, 0])
        Y = synthetic.standard_normal(50, [109, r, 1])
        level += two_sample_test(X, Y, B=99, seed=10_900 + r).p_value <= 0.1
    power = 0
    for r in range(100):
        X = synthetic.standard_normal(100, [1090, r, 0])
        Y = synthetic.standard_normal(100, [1090, r, 1]) + np.array([2.0, 0.0])
        power += two_sample_test(X, Y, B=19, seed=10_900 + r).p_value <= 0.1
    elapsed = time.perf_counter() - start
    level_rate, power_rate = level / 200, power / 100
    threshold = 0.8
    ok = (0.04 <= level_rate <= 0.17 and power_rate > threshold
          and PILOT["two_sample_power"]["rejection_rate"] > threshold and elapsed < 1800)
    criterion(9, ok, f"level {level_rate:.3f} in [0.04, 0.17], power {power_rate:.2f} > "
                     f"{threshold} (pilot {PILOT['two_sample_power']['rejection_rate']:.2f}), "
                     f"{elapsed:.0f}s")
    assert ok


def test_criterion_10_independence_level_and_power(criterion):
    level = 0
    for r in range(200):
        Z = synthetic.indep_setting("i", 50, [110, r])
        level += independence_test(Z, [1, 1], B=99, seed=11_000 + r).p_value <= 0.1
    null_T, co_T, rejected = [], [], 0
    for r in range(20):
        Z0 = synthetic.indep_setting("i", 200, [1100, r, 0])
        null_T.append(independence_statistic(Z0, [1, 1], seed=11_000 + r).statistic)
        x = synthetic.standard_normal(200, [1100, r, 1], d=1)[:, 0]
        rep = independence_test(np.column_stack([x, x]), [1, 1], B=19, seed=11_000 + r)
        co_T.append(rep.statistic)
        rejected += rep.p_value <= 0.1
    level_rate, power_rate = level / 200, rejected / 20
    ratio = np.median(co_T) / np.median(null_T)
    ok = 0.04 <= level_rate <= 0.17 and ratio > 5 and power_rate > 0.8
    criterion(10, ok, f"level {level_rate:.3f} in [0.04, 0.17], comonotone median ratio "
                      f"{ratio:.1f} > 5 (pilot {PILOT['independence']['ratio']:.1f}), "
                      f"rejection {power_rate:.2f} > 0.8")
    assert ok


def test_criterion_11_backend_agreement(criterion):
    rng = np.random.default_rng(111)
    worst_z = 0.0
    for k in range(20):
        m, n = rng.integers(10, 40, size=2)
        X = rng.standard_normal((m, 2))
        Y = rng.standard_normal((n, 2)) + rng.uniform(-1, 1, size=2)
        rep = two_sample_statistic(X, Y, seed=1110 + k)
        exact = two_sample_exact_2d(X, Y, seed=1110 + k)
        worst_z = max(worst_z, abs(rep.statistic - exact) / rep.standard_error)
    f = fit(rng.standard_normal((60, 2)))
    Q = rng.normal(scale=2, size=(500, 2))
    diff = np.max(np.abs(rank(f, Q, mode="exact2d-vertex") - rank(f, Q, mode="optimize")))
    ok = worst_z <= 4 and diff <= 1e-6
    criterion(11, ok, f"largest exact vs Monte Carlo gap {worst_z:.2f} SE, vertex vs optimize "
                      f"rank {diff:.2e}")
    assert ok


def run_cli(args):
    code = cli.main([str(a) for a in args])
    assert code == 0, args
    return code


def test_criterion_12_cli_round_trip(criterion, tmp_path, capsys):
    X = synthetic.banana(60, 112)
    Q = np.random.default_rng(112).normal(size=(40, 2))
    np.savetxt(tmp_path / "x.csv", X, delimiter=",", fmt="%.17g")
    np.savetxt(tmp_path / "q.csv", Q, delimiter=",", fmt="%.17g")
    np.savetxt(tmp_path / "u.csv", np.random.default_rng(1120).random((40, 2)), delimiter=",",
               fmt="%.17g")
    np.savetxt(tmp_path / "y.csv", synthetic.banana(50, 1121), delimiter=",", fmt="%.17g")
    outputs = {}
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        run_cli(["fit", "--input", tmp_path / "x.csv", "--out", d / "m.json"])
        run_cli(["fit", "--input", tmp_path / "x.csv", "--reference", "ball",
                 "--out", d / "mb.json"])
        run_cli(["rank", "--model", d / "m.json", "--query", tmp_path / "q.csv",
                 "--out", d / "r.csv"])
        run_cli(["rank", "--model", d / "mb.json", "--query", tmp_path / "q.csv",
                 "--out", d / "rb.csv"])
        run_cli(["quantile", "--model", d / "m.json", "--query", tmp_path / "u.csv",
                 "--out", d / "qu.csv"])
        run_cli(["depth", "--model", d / "m.json", "--grid", 15, "--out", d / "d.csv"])
        run_cli(["cells", "--model", d / "m.json", "--out", d / "c.json"])
        run_cli(["test2s", "--x", tmp_path / "x.csv", "--y", tmp_path / "y.csv", "--perms", 19,
                 "--mc", 2000, "--seed", 3, "--out", d / "t.json"])
        run_cli(["testindep", "--input", tmp_path / "x.csv", "--split", "1,1", "--perms", 19,
                 "--seed", 3, "--out", d / "i.json"])
        run_cli(["synth", "gauss-mixture-2s-ii", "--n", 30, "--seed", 4, "--out", d / "s.csv"])
        run_cli(["harness", "--n", 20, "--replications", 3, "--mc", 500, "--out", d / "h.json"])
        outputs[run] = {p.name: p.read_bytes() for p in sorted(d.iterdir())}
    capsys.readouterr()
    deterministic = outputs["a"] == outputs["b"]
    d = tmp_path / "a"
    in_process = fit(X)
    same_rank = np.array_equal(np.loadtxt(d / "r.csv", delimiter=","), rank(in_process, Q))
    same_quant = np.array_equal(np.loadtxt(d / "qu.csv", delimiter=","),
                                quantile(in_process, np.loadtxt(tmp_path / "u.csv", delimiter=",")))
    ball = fit(X, ReferenceMeasure("ball", 2))
    same_ball = np.array_equal(np.loadtxt(d / "rb.csv", delimiter=","), rank(ball, Q))
    saved = json.loads((d / "m.json").read_text())
    same_h = np.array_equal(np.array(saved["h"]), in_process.h)
    ok = deterministic and same_rank and same_quant and same_ball and same_h
    criterion(12, ok, f"{len(outputs['a'])} outputs byte-identical across runs {deterministic}, "
                      f"CLI ranks/quantiles/weights equal to in-process "
                      f"{same_rank and same_quant and same_ball and same_h}")
    assert ok


def test_criterion_13_normalized_harness(criterion):
    if os.environ.get("OTRANKS_RUN_SLOW") != "1":
        criterion(13, None, "n=1000 harness takes hours; set OTRANKS_RUN_SLOW=1 to run it")
        pytest.skip("long-running; set OTRANKS_RUN_SLOW=1")
    report = null_harness(("i", "iii"), n=1000, replications=200, seed=113)
    ok = report.p_value >= 1e-3 and len(report.qq["probability"]) == 200
    criterion(13, ok, f"KS statistic {report.ks_statistic:.3f}, p-value {report.p_value:.4f}")
    assert ok
