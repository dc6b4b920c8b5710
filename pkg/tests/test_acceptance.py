"""Acceptance suite: one test per numbered criterion, each printing a
PASS/FAIL line with its headline numbers and asserting the stated tolerance
and wall-clock budget.  Criterion 12's budget is quoted for an eight-core
desktop; its assertion scales by the cores actually present."""

import json
import math
import os
import time

import numpy as np

from bimlab import brownian as bm
from bimlab import cli
from bimlab import covertime as ct
from bimlab import kernelfun as kf
from bimlab.rng import RngStream

SEED = 20240817


class Stopwatch:
    def __init__(self, budget_s):
        self.budget = budget_s
        self.t0 = time.time()

    @property
    def elapsed(self):
        return time.time() - self.t0


def report(num, ok, detail, watch=None):
    stamp = "PASS" if ok else "FAIL"
    timing = f" [{watch.elapsed:.1f}s / {watch.budget:.0f}s]" if watch else ""
    print(f"[criterion {num:2d}] {stamp}{timing} {detail}")


def random_kernel(np_rng, zeros=0.0):
    nr, nc = np_rng.integers(2, 9, size=2)
    a = np_rng.uniform(0.0, 1.0, size=(nr, nc))
    a[a == 0.0] = 0.5  # entries in (0, 1]
    if zeros:
        a[np_rng.uniform(size=a.shape) < zeros] = 0.0
    return a


def test_criterion_01_identity_oracle():
    watch = Stopwatch(10.0)
    np_rng = np.random.default_rng(SEED)
    ladder = [1e-3, 1e-6, 1e-9]
    worst = 0.0
    for i in range(1100):
        a = random_kernel(np_rng, zeros=0.15 if i >= 1000 else 0.0)
        closed = kf.extremal_tv(a)
        orac = kf.extremal_tv_oracle(a, ladder)
        assert orac <= closed + 1e-12
        worst = max(worst, abs(closed - orac))
    ok = worst <= 1e-6 and watch.elapsed < watch.budget
    report(1, ok, f"max |oracle - closed form| = {worst:.2e} over 1100 kernels", watch)
    assert worst <= 1e-6
    assert watch.elapsed < watch.budget


def test_criterion_02_submultiplicativity():
    watch = Stopwatch(5.0)
    np_rng = np.random.default_rng(SEED + 2)
    bad = 0
    for _ in range(1000):
        ne, nf, ng = np_rng.integers(2, 7, size=3)
        p = np_rng.uniform(1e-6, 1, size=(ne, nf))
        q = np_rng.uniform(1e-6, 1, size=(nf, ng))
        mu = np_rng.uniform(0.05, 1, size=nf)
        nu = np_rng.uniform(0.05, 1, size=ng)
        pn = p / (p @ mu)[:, None]
        qn = q / (q @ nu)[:, None]
        conv = kf.convolve(pn, qn, mu)
        if kf.weighted_tv(conv, nu) > kf.weighted_tv(pn, mu) * kf.weighted_tv(qn, nu) + 1e-12:
            bad += 1
        if kf.extremal_tv(conv.values) > kf.extremal_tv(pn) * kf.extremal_tv(qn) + 1e-12:
            bad += 1
    ok = bad == 0 and watch.elapsed < watch.budget
    report(2, ok, f"{bad} violations over 1000 composable triples", watch)
    assert bad == 0
    assert watch.elapsed < watch.budget


def test_criterion_03_averaging_and_minmax():
    watch = Stopwatch(5.0)
    np_rng = np.random.default_rng(SEED + 3)
    bad_avg = bad_mm = 0
    for _ in range(1000):
        nf, ng, ne = np_rng.integers(2, 7, size=3)
        q = np_rng.uniform(1e-6, 1, size=(nf, ng))
        fam = np_rng.uniform(size=(ne, nf)) + 1e-9
        avg = kf.row_average(q, fam)
        if kf.switching_constant(avg) > kf.switching_constant(q) * (1 + 1e-12):
            bad_avg += 1
        if kf.extremal_tv(avg.values) > kf.extremal_tv(q) + 1e-12:
            bad_avg += 1
    for _ in range(1000):
        n = np_rng.integers(2, 9)
        nu = np_rng.uniform(0.05, 1, size=n)
        f_hi = np_rng.uniform(0.05, 1, size=n)
        g_hi = np_rng.uniform(0.05, 1, size=n)
        f_hi /= f_hi @ nu
        g_hi /= g_hi @ nu
        f = f_hi * np_rng.uniform(size=n)
        g = g_hi * np_rng.uniform(size=n)
        if kf.min_max_slack(f, g, f_hi, g_hi, nu) < -1e-12:
            bad_mm += 1
    ok = bad_avg == 0 and bad_mm == 0 and watch.elapsed < watch.budget
    report(3, ok, f"averaging violations {bad_avg}, min/max violations {bad_mm} (1000 each)", watch)
    assert bad_avg == 0 and bad_mm == 0
    assert watch.elapsed < watch.budget


def test_criterion_04_self_consistency_bound():
    watch = Stopwatch(5.0)
    np_rng = np.random.default_rng(SEED + 4)
    fails = 0
    for _ in range(200):
        ne = nf = int(np_rng.integers(3, 6))
        p = np_rng.uniform(1e-3, 1, size=(ne, nf))
        mu = np_rng.uniform(0.1, 1, size=nf)
        mu /= mu.sum()
        nu = np_rng.uniform(size=(nf, ne))
        scale = ((p * mu[None, :]) @ nu.sum(axis=1)).max()
        nu *= np_rng.uniform(0.05, 0.9) / scale
        s = np_rng.uniform(size=nf)
        rep = kf.verify_tricky(p, nu, s, mu)
        if not (rep.holds and rep.converged and rep.leakage <= 0.9):
            fails += 1
    ok = fails == 0 and watch.elapsed < watch.budget
    report(4, ok, f"{fails} failures over 200 contraction instances (leakage <= 0.9)", watch)
    assert fails == 0
    assert watch.elapsed < watch.budget


def test_criterion_05_maximal_coupling():
    watch = Stopwatch(1.0)
    np_rng = np.random.default_rng(SEED + 5)
    worst = 0.0
    for _ in range(1000):
        n = np_rng.integers(2, 8)
        mu = np_rng.uniform(1e-3, 1, size=n)
        nu = np_rng.uniform(1e-3, 1, size=n)
        j = kf.maximal_coupling(mu, nu)
        gap = abs(np.trace(j) - (1.0 - kf.total_variation(mu, nu)))
        worst = max(worst, gap)
    ok = worst <= 1e-12 and watch.elapsed < watch.budget
    report(5, ok, f"max |diagonal - (1 - TV)| = {worst:.2e} over 1000 pairs", watch)
    assert worst <= 1e-12
    assert watch.elapsed < watch.budget


def test_criterion_06_geometric_sum_machinery():
    watch = Stopwatch(30.0)
    np_rng = np.random.default_rng(SEED + 6)
    # exhaustive shift inequality for n <= 2, m <= 3, r <= 20
    shift_ok = True
    for m in (1, 2, 3):
        for f_scale in (0.6, 1.0):
            model = ct.GeomSumModel(
                np.minimum(f_scale * np.arange(1, m + 1) / m, 1.0))
            for n in (1, 2):
                shift_ok &= ct.exhaustive_shift_check(model, n=n, r_max=20)
    # DP against brute-force enumeration on 50 instances
    worst_dp = 0.0
    for _ in range(50):
        m = int(np_rng.integers(1, 4))
        model = ct.GeomSumModel(np.sort(np_rng.uniform(0.2, 1.0, size=m)))
        counts = list(np_rng.integers(0, m + 1, size=int(np_rng.integers(1, 3))))
        r = int(np_rng.integers(0, 9))
        worst_dp = max(worst_dp, abs(
            ct.geometric_sum_cdf(model, counts, r)
            - ct.enumerate_geometric_tail(model, counts, r)))
    # Chernoff bound dominates every exactly computable tail
    chernoff_ok = True
    for K in (0.3, 0.5):
        cfg = ct.CoverConfig(n=10, m=12, k=1, K=K)
        bound = ct.chernoff_cover_bound(cfg)
        for m in range(bound.m_threshold, min(bound.m_threshold + 3, 13)):
            for n in (5, 10):
                model = ct.GeomSumModel.from_f(cfg.F, m)
                exact = ct.geometric_sum_cdf(model, [m] * n, int(K * m * n))
                chernoff_ok &= exact <= bound.q ** (m * n) + 1e-15
    ok = (shift_ok and worst_dp <= 1e-12 and chernoff_ok
          and watch.elapsed < watch.budget)
    report(6, ok, f"shift exhaustive={shift_ok}, DP vs enumeration max gap "
                  f"{worst_dp:.1e}, chernoff domination={chernoff_ok}", watch)
    assert shift_ok and chernoff_ok
    assert worst_dp <= 1e-12
    assert watch.elapsed < watch.budget


def test_criterion_07_sphere_chain_law():
    watch = Stopwatch(30.0)
    rng = RngStream(SEED + 7)
    ok = True
    details = []
    for p in (1.0, 2.0, 5.0):
        steps = 1_000_000
        levels = bm.simulate_sphere_chain(p, 0, rng.labeled(f"chain{p}"),
                                          steps=steps)
        moves = np.diff(levels)
        down = float(np.mean(moves == -1))
        exact = bm.chain_down_prob(p)
        se = math.sqrt(exact * (1 - exact) / steps)
        ok &= abs(down - exact) <= 3 * se
        vals = np.exp(-moves / (2 * p))
        mgf_se = float(vals.std(ddof=1)) / math.sqrt(steps)
        ok &= abs(vals.mean() - bm.sphere_chain_step_mgf(p)) <= 3 * mgf_se
        details.append(f"p={p:g}: down {down:.5f} vs {exact:.5f}")
    ok = ok and watch.elapsed < watch.budget
    report(7, ok, "; ".join(details), watch)
    assert ok


def test_criterion_08_cylinder_hitting(tmp_path):
    watch = Stopwatch(300.0)
    rc = cli.run("hitting-bench", seed=SEED + 8, out_dir=str(tmp_path),
                 check=True)
    rep = json.load(open(tmp_path / "report.json"))
    vals = {m["name"]: m["value"] for m in rep["metrics"]}
    ok = rc == 0 and watch.elapsed < watch.budget
    report(8, ok, f"scaled hit spread x{vals['scaled_spread']:.3f} "
                  f"(<=1.25), ODE envelopes hold", watch)
    assert rc == 0
    assert vals["scaled_spread"] <= 1.25
    assert watch.elapsed < watch.budget


def test_criterion_09_uncovered_cones(tmp_path):
    watch = Stopwatch(600.0)
    rc = cli.run("cone-search", seed=SEED + 9, out_dir=str(tmp_path),
                 check=True)
    rep = json.load(open(tmp_path / "report.json"))
    vals = {m["name"]: m["value"] for m in rep["metrics"]}
    successes = round(vals["success_rate"] * 100)
    ok = rc == 0 and watch.elapsed < watch.budget
    report(9, ok, f"{successes}/100 certified uncovered cones "
                  f"(verified {vals['verified']:.0f})", watch)
    assert rc == 0
    assert successes >= 99
    assert vals["verified"] == successes
    assert watch.elapsed < watch.budget


def test_criterion_10_layered_coupling(tmp_path):
    watch = Stopwatch(120.0)
    rc = cli.run("coupling-sim", seed=SEED + 10, out_dir=str(tmp_path),
                 check=True)
    rep = json.load(open(tmp_path / "report.json"))
    vals = {m["name"]: m["value"] for m in rep["metrics"]}
    ok = rc == 0 and watch.elapsed < watch.budget
    report(10, ok, f"non-coupling rates m=4: {vals['noncoupling_rate_m=4']:.4f}, "
                   f"m=8: {vals['noncoupling_rate_m=8']:.4f} (<= product bound + 3 sigma)",
           watch)
    assert rc == 0
    assert watch.elapsed < watch.budget


def test_criterion_11_conditional_separation(tmp_path):
    watch = Stopwatch(1200.0)
    rc = cli.run("csl", seed=SEED + 11, out_dir=str(tmp_path), check=True)
    rep = json.load(open(tmp_path / "report.json"))
    vals = {m["name"]: m["value"] for m in rep["metrics"]}
    ok = rc == 0 and watch.elapsed < watch.budget
    report(11, ok, f"{vals['qualified_starts']:.0f} qualified starts, min "
                   f"separation frequency {vals['min_sep_freq']:.3f} at delta 0.05",
           watch)
    assert rc == 0
    assert vals["qualified_starts"] > 0
    assert vals["min_sep_freq"] > 0
    assert watch.elapsed < watch.budget


def test_criterion_12_known_exponent(tmp_path):
    cores = os.cpu_count() or 1
    budget = 3600.0 * 8.0 / min(cores, 8)  # quoted for an 8-core desktop
    watch = Stopwatch(budget)
    rc = cli.run("xi-estimate", seed=SEED + 12, out_dir=str(tmp_path),
                 check=True)
    rep = json.load(open(tmp_path / "report.json"))
    vals = {m["name"]: m["value"] for m in rep["metrics"]}
    slope = vals["slope_extrapolated"]
    ok = rc == 0 and 0.8 <= slope <= 1.2 and watch.elapsed < watch.budget
    report(12, ok, f"extrapolated decay slope {slope:.3f} in [0.8, 1.2] "
                   f"(tube {vals['slope_tube']:.3f}, half {vals['slope_tube_half']:.3f})",
           watch)
    assert rc == 0
    assert 0.8 <= slope <= 1.2
    assert watch.elapsed < watch.budget


def test_criterion_13_escape_polyline(tmp_path):
    watch = Stopwatch(600.0)
    rc = cli.run("escape-polyline", seed=SEED + 13, out_dir=str(tmp_path),
                 check=True)
    rep = json.load(open(tmp_path / "report.json"))
    vals = {m["name"]: m["value"] for m in rep["metrics"]}
    c5s = [v for k, v in vals.items() if k.startswith("c5_trace")]
    ok = (rc == 0 and all(np.isfinite(c5s)) and max(c5s) < 100.0
          and watch.elapsed < watch.budget)
    report(13, ok, f"build rate {vals['build_rate']:.3f}, fitted length "
                   f"constants per trace max {max(c5s):.2f}", watch)
    assert rc == 0
    assert all(np.isfinite(c5s)) and max(c5s) < 100.0
    assert watch.elapsed < watch.budget
