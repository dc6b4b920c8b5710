import math

import numpy as np
import pytest
from scipy import stats

from bimlab import brownian as bm
from bimlab import kernelfun as kf
from bimlab import slitdomain as sd
from bimlab.geometry import PolylineIndex


def empty_index():
    return PolylineIndex(np.empty((0, 3)), np.empty((0, 3)))


class TestBands:
    def test_edges_cover_sphere(self):
        e = sd.equal_area_band_edges(6)
        assert e[0] == 1.0 and e[-1] == -1.0
        assert np.all(np.diff(e) < 0)

    def test_band_assignment_uniform(self, np_rng):
        pts = np_rng.normal(size=(200_000, 3))
        pts /= np.linalg.norm(pts, axis=1)[:, None]
        b = sd.band_of(pts, 8)
        obs = np.bincount(b, minlength=8)
        chi2 = ((obs - len(pts) / 8) ** 2 / (len(pts) / 8)).sum()
        assert chi2 < stats.chi2.ppf(0.999, df=7)


class TestLayerKernel:
    def test_no_slit_rows_match_annulus_oracle(self, rng):
        layer = sd.LayerSpec(-1, empty_index())
        cells = 6
        ek = sd.estimate_layer_kernel(layer, sources=4, cells=cells,
                                      samples_per_source=4000, alpha=0.0,
                                      rng=rng.labeled("oracle"))
        inner, mid, outer = layer.radii
        for si, src in enumerate(ek.sources):
            polar = math.acos(np.clip(src[2] / np.linalg.norm(src), -1, 1))
            probs = sd.annulus_band_probs(inner, mid, outer, cells, polar)
            cond = probs / probs.sum()
            tot = ek.counts[si].sum()
            exp = cond * tot
            mask = exp > 5
            chi2 = ((ek.counts[si][mask] - exp[mask]) ** 2 / exp[mask]).sum()
            assert chi2 < stats.chi2.ppf(0.999, df=max(mask.sum() - 1, 1))

    def test_identical_sources_statistically_equal(self, rng):
        layer = sd.LayerSpec(-1, empty_index())
        _, mid, _ = layer.radii
        src = np.array([[0, 0, mid]])
        counts = []
        for tag in ("a", "b"):
            cfg = bm.WosConfig(capture_eps=1e-3 * math.exp(0),
                               outer_radius=math.exp(0), max_steps=20_000,
                               inner_radius=math.exp(-1))
            exits, flags, _ = bm.walk_on_spheres_many(src, None, cfg,
                                                      rng.labeled(tag), n=3000)
            good = flags == 0
            counts.append(np.bincount(sd.band_of(exits[good], 6), minlength=6))
        a, b = counts
        exp = (a + b) / 2
        mask = exp > 5
        chi2 = (((a - exp) ** 2 / exp)[mask].sum()
                + ((b - exp) ** 2 / exp)[mask].sum())
        assert chi2 < stats.chi2.ppf(0.999, df=max(mask.sum() - 1, 1))

    def test_row_conditioning_discards_absorptions(self, rng):
        from bimlab.brownian import sample_until_exit

        trace = sample_until_exit(np.zeros(3), 1.0, 1e-3, rng.labeled("tr"))
        layer = sd.LayerSpec(-1, trace.index())
        ek = sd.estimate_layer_kernel(layer, sources=4, cells=4,
                                      samples_per_source=300, alpha=0.5,
                                      rng=rng.labeled("cond"))
        total = ek.counts.sum(axis=1) + ek.discarded + ek.step_capped
        assert np.all(total == 300)
        assert ek.discarded.sum() > 0  # the slit and inner sphere do absorb

    def test_annulus_oracle_masses_sum_to_radial_law(self):
        inner, mid, outer = math.exp(-1), math.exp(-0.5), 1.0
        probs = sd.annulus_band_probs(inner, mid, outer, 12, 0.7)
        radial = bm.annulus_exit_prob(inner, mid, outer)
        assert probs.sum() == pytest.approx(1 - radial, abs=1e-9)
        assert np.all(probs > -1e-12)


class TestLayerSwitching:
    def test_uniform_counts_give_one(self):
        ek = sd.EmpiricalKernel(np.zeros((2, 3)), np.full((2, 4), 7), 0.0,
                                np.zeros(2, dtype=int), np.zeros(2, dtype=int))
        assert sd.layer_switching_constant(ek) == 1.0

    def test_single_cross_ratio(self):
        ek = sd.EmpiricalKernel(np.zeros((2, 3)), np.array([[9, 1], [1, 9]]),
                                0.0, np.zeros(2, dtype=int), np.zeros(2, dtype=int))
        assert sd.layer_switching_constant(ek) == pytest.approx(81.0)

    def test_heavy_smoothing_flattens(self):
        counts = np.array([[9, 1], [1, 9]])
        big = sd.EmpiricalKernel(np.zeros((2, 3)), counts, 1e9,
                                 np.zeros(2, dtype=int), np.zeros(2, dtype=int))
        assert sd.layer_switching_constant(big) == pytest.approx(1.0, abs=1e-6)

    def test_zero_rows_dropped_without_smoothing(self):
        counts = np.array([[5, 5], [0, 0]])
        ek = sd.EmpiricalKernel(np.zeros((2, 3)), counts, 0.0,
                                np.zeros(2, dtype=int), np.zeros(2, dtype=int))
        assert sd.layer_switching_constant(ek) == 1.0


class TestComposition:
    def test_two_half_layers_compose_to_full(self, rng):
        # first-hit factorization through the mid sphere, no slit
        inner, mid, outer = math.exp(-1), math.exp(-0.5), 1.0
        cells = 6
        start = np.array([0.0, 0.0, (inner + mid) / 2])
        n_direct = 30_000

        # stage 1: from start to the mid sphere (absorb inner)
        cfg1 = bm.WosConfig(capture_eps=1e-4, outer_radius=mid, max_steps=20_000,
                            inner_radius=inner)
        exits1, flags1, _ = bm.walk_on_spheres_many(start, None, cfg1,
                                                    rng.labeled("h1"), n=n_direct)
        # stage 2 kernel: restart walks from the actual stage-1 hit points in
        # each band (the band-conditional hitting measure), so composing
        # through bands is the law of total probability
        cfg2 = bm.WosConfig(capture_eps=1e-4, outer_radius=outer, max_steps=20_000,
                            inner_radius=inner)
        bands1 = sd.band_of(exits1[flags1 == 0], cells)
        hit_pts = exits1[flags1 == 0]
        k2 = np.zeros((cells, cells))
        surv2 = np.zeros(cells)
        for b in range(cells):
            pts_b = hit_pts[bands1 == b]
            if not len(pts_b):
                continue
            reps = max(1, 8000 // len(pts_b))
            starts = np.repeat(pts_b, reps, axis=0)[:8000]
            e2, f2, _ = bm.walk_on_spheres_many(starts, None, cfg2,
                                                rng.labeled(f"h2{b}"))
            good = f2 == 0
            surv2[b] = good.mean()
            if good.any():
                cond = np.bincount(sd.band_of(e2[good], cells), minlength=cells)
                k2[b] = cond / max(cond.sum(), 1)

        # direct: from start to the outer sphere
        exits3, flags3, _ = bm.walk_on_spheres_many(start, None, cfg2,
                                                    rng.labeled("h3"), n=n_direct)
        good3 = flags3 == 0
        direct = np.bincount(sd.band_of(exits3[good3], cells), minlength=cells)

        # compose: P(mid band) * P(outer survive | band) * P(band' | band)
        good1 = flags1 == 0
        mid_counts = np.bincount(sd.band_of(exits1[good1], cells), minlength=cells)
        p_mid = mid_counts / n_direct
        composed = (p_mid * surv2) @ k2
        exp = composed * n_direct
        mask = exp > 10
        chi2 = ((direct[mask] - exp[mask]) ** 2 / exp[mask]).sum()
        # generous: binning bias beyond Monte Carlo noise stays moderate
        assert chi2 < 3 * stats.chi2.ppf(0.999, df=max(mask.sum() - 1, 1))

    def test_composed_r_bounded_by_product(self, rng):
        # on smoothed empirical kernels the contraction of the extremal TV
        # distance under composition holds exactly via the functionals
        u = rng.uniforms(200)
        p = u[:36].reshape(6, 6) + 0.05
        q = u[36:72].reshape(6, 6) + 0.05
        mu = u[100:106] + 0.1
        conv = kf.convolve(p, q, mu)
        assert kf.extremal_tv(conv.values) <= kf.extremal_tv(p) * kf.extremal_tv(q) + 1e-12


class TestCoupling:
    def test_identical_starts_couple_at_zero(self, rng):
        k = [np.eye(3) + 0.1]
        assert sd.layered_coupling_sim(k, (1, 1), rng) == 0

    def test_single_layer_probability(self, rng):
        mu = np.array([0.7, 0.2, 0.1])
        nu = np.array([0.2, 0.5, 0.3])
        kern = np.vstack([mu, nu, nu])
        hits = 0
        reps = 100_000
        for i in range(reps):
            out = sd.layered_coupling_sim([kern], (0, 1), rng.substream(i))
            hits += out is not None
        tv = kf.total_variation(mu, nu)
        se = math.sqrt(tv * (1 - tv) / reps)
        assert abs(hits / reps - (1 - tv)) <= 3 * se

    def test_coupled_pairs_share_cells(self, rng):
        mu = np.array([0.7, 0.2, 0.1])
        nu = np.array([0.2, 0.5, 0.3])
        for i in range(2000):
            a, b = sd.sample_coupled_step(mu, nu, rng.substream(i).uniforms(3))
            assert 0 <= a < 3 and 0 <= b < 3

    def test_marginals_of_coupled_step(self, rng):
        mu = np.array([0.6, 0.4])
        nu = np.array([0.3, 0.7])
        reps = 60_000
        a_counts = np.zeros(2)
        b_counts = np.zeros(2)
        for i in range(reps):
            a, b = sd.sample_coupled_step(mu, nu, rng.substream(i).uniforms(3))
            a_counts[a] += 1
            b_counts[b] += 1
        assert a_counts[0] / reps == pytest.approx(0.6, abs=3 * 0.5 / math.sqrt(reps))
        assert b_counts[0] / reps == pytest.approx(0.3, abs=3 * 0.5 / math.sqrt(reps))

    def test_noncoupling_bounded_by_r_product(self, rng):
        kernels = []
        u = rng.uniforms(400)
        for l in range(4):
            kernels.append(u[64 * l:64 * l + 36].reshape(6, 6) + 0.05)
        bound = 1.0
        for kk in kernels:
            bound *= kf.extremal_tv(kk)
        rate, se = sd.coupling_failure_rate(kernels, (0, 5), 40_000,
                                            rng.labeled("cf"))
        assert rate <= bound + 3 * se

    def test_composability_mismatch(self, rng):
        with pytest.raises(sd.SlitError):
            sd.layered_coupling_sim([np.ones((2, 3)), np.ones((2, 2))], (0, 1), rng)


class TestCsl:
    def make_trace_index(self, rng):
        path = bm.sample_until_exit(np.zeros(3), 1.0, 1e-3, rng.labeled("trace"))
        return path.index()

    def test_empty_subset_accepts_everything(self, rng):
        idx = empty_index()
        deltas, results = sd.csl_experiment([idx], np.array([[0.2, 0.0, 0.1]]),
                                            [0.2, 0.1], samples=200,
                                            rng=rng.labeled("e"), dt=1e-3)
        (_, _, res) = results[0]
        assert res.acceptance_rate == 1.0

    def test_frequency_antitone_in_delta(self, rng):
        idx = self.make_trace_index(rng)
        grid = sd.csl_start_grid(idx, 3, 2 ** -4)
        deltas, results = sd.csl_experiment([idx], grid, [0.2, 0.1, 0.05],
                                            samples=150, rng=rng.labeled("a"),
                                            dt=1e-3)
        for (_, _, res) in results:
            if res.accepted < 20:
                continue
            freqs = [res.separation_freq(d)[0] for d in deltas]
            assert all(f1 <= f2 + 1e-12 for f1, f2 in zip(freqs, freqs[1:]))

    def test_nested_subsets_acceptance_monotone(self, rng):
        idx = self.make_trace_index(rng)
        grid = sd.csl_start_grid(idx, 2, 2 ** -4)
        rates = []
        for frac in (1.0, 0.5):
            _, results = sd.csl_experiment([idx], grid, [0.1], samples=200,
                                           rng=rng.labeled("n"), dt=1e-3,
                                           subset_fraction=frac)
            rates.append(np.mean([r.acceptance_rate for (_, _, r) in results]))
        # a smaller frozen subset can only be easier to avoid (same streams)
        assert rates[1] >= rates[0] - 1e-12

    def test_start_grid_respects_clearance(self, rng):
        idx = self.make_trace_index(rng)
        grid = sd.csl_start_grid(idx, 10, 2 ** -4)
        for p in grid:
            assert idx.min_dist(p, cutoff=1.0) > 2 ** -4
            assert np.linalg.norm(p) < 0.5


class TestErrorProduct:
    def test_zero_error_term(self):
        # C2 -> 0 sends every factor to 1
        val, clamped = sd.separation_error_product(1, 1.0, 0.5, 1e-300, 50)
        assert val == pytest.approx(1.0) and not clamped

    def test_reference_window(self):
        val, clamped = sd.separation_error_product(40, 1.0, 0.5, 0.5, 200)
        assert 0 < val <= 1.0 and not clamped
        more, _ = sd.separation_error_product(50, 1.0, 0.5, 0.5, 200)
        assert more >= val

    def test_tail_converges(self):
        a, _ = sd.separation_error_product(40, 1.0, 0.5, 0.5, 200)
        b, _ = sd.separation_error_product(40, 1.0, 0.5, 0.5, 400)
        assert abs(a - b) < 1e-12

    def test_small_m0_clamps_to_zero(self):
        val, clamped = sd.separation_error_product(1, 1.0, 0.5, 0.9, 60)
        assert clamped and val == 0.0

    def test_validation(self):
        with pytest.raises(sd.SlitError):
            sd.separation_error_product(0, 1.0, 0.5, 0.5, 10)
        with pytest.raises(sd.SlitError):
            sd.separation_error_product(1, 1.0, 1.5, 0.5, 10)


class TestGoodLayers:
    def test_fraction_monotone_in_threshold(self, rng):
        path = bm.sample_until_exit(np.zeros(3), 1.0, 1e-3, rng.labeled("gl"))
        idx = path.index()
        _, _, ks = sd.good_layer_fraction(idx, [-2, -1], M=1.0,
                                          rng=rng.labeled("glf"),
                                          sources=6, cells=4,
                                          samples_per_source=100)
        for M in (1.0, float(np.median(ks)) + 1.0, float(ks.max()) + 1.0):
            frac = float(np.mean(ks < M))
            assert 0.0 <= frac <= 1.0
        assert np.mean(ks < ks.max() + 1.0) == 1.0

    def test_huge_threshold_gives_fraction_one(self, rng):
        path = bm.sample_until_exit(np.zeros(3), 1.0, 1e-3, rng.labeled("gl2"))
        frac, se, ks = sd.good_layer_fraction(path.index(), [-1], M=1e308,
                                              rng=rng.labeled("glf2"),
                                              sources=4, cells=4,
                                              samples_per_source=60)
        assert frac == 1.0
