"""Agreement between the numba kernels and the pure-numpy fallback.

Both implement the same algorithms over the same Philox streams; integer and
RNG outputs must match exactly, trajectories only up to floating-point
library differences (numpy vectorizes sin/cos/log differently), so path
comparisons use tight relative tolerances over short horizons.
"""

import numpy as np
import pytest

from bimlab import fastpath
from bimlab._backend import HAVE_NUMBA
from bimlab.fastpath import _impl_numpy as npf
from bimlab.geometry import PolylineIndex

pytestmark = pytest.mark.skipif(not HAVE_NUMBA,
                                reason="fallback backend already active")


@pytest.fixture
def segset(np_rng):
    pts = np_rng.normal(size=(400, 3)).cumsum(axis=0) * 0.08
    return PolylineIndex.from_points(pts, cell_size=0.12)


def grid_args(idx):
    return (idx.cell_size, idx._keys, idx._starts, idx._items, idx.A, idx.B)


def coarse_args(idx):
    return (idx._cD, idx._cdims, idx._corigin, idx._ccell)


def test_philox_blocks_identical():
    a = fastpath.philox_block(256, np.uint64(0), np.uint64(99), np.uint64(12345))
    b = npf.philox_block(256, np.uint64(0), np.uint64(99), np.uint64(12345))
    assert np.array_equal(np.asarray(a, np.uint64), np.asarray(b, np.uint64))


def test_point_distances_identical(segset, np_rng):
    # compiled code may fuse multiply-adds, so allow the last ulp
    qs = np_rng.uniform(-3, 3, size=(200, 3))
    a = np.array([fastpath.grid_min_dist_point(*q, *grid_args(segset),
                                               segset._pilots, np.inf)
                  for q in qs])
    b = np.array([npf.grid_min_dist_point(*q, *grid_args(segset),
                                          segset._pilots, np.inf)
                  for q in qs])
    assert np.allclose(a, b, rtol=1e-14, atol=0)


def test_segment_distances_identical(segset, np_rng):
    for _ in range(100):
        p, q = np_rng.uniform(-2, 2, size=(2, 3))
        a = fastpath.grid_seg_min_dist(*p, *q, *grid_args(segset), 0.8)
        b = npf.grid_seg_min_dist(*p, *q, *grid_args(segset), 0.8)
        if min(a, b) <= 0.8:
            assert a == pytest.approx(b, rel=1e-14)


def test_chain_levels_identical():
    a = fastpath.chain_levels(0.3, np.int64(2), 5000, np.uint64(7), np.uint64(9))
    b = npf.chain_levels(0.3, np.int64(2), 5000, np.uint64(7), np.uint64(9))
    assert np.array_equal(np.asarray(a), np.asarray(b))
    ca = fastpath.chain_count_until(0.3, np.int64(0), np.int64(12), 100000,
                                    np.uint64(7), np.uint64(9))
    cb = npf.chain_count_until(0.3, np.int64(0), np.int64(12), 100000,
                               np.uint64(7), np.uint64(9))
    assert int(ca) == int(cb)


def test_exit_paths_match_closely():
    bufA = np.empty((2000, 3))
    bufB = np.empty((2000, 3))
    ra = fastpath.bm_exit_chunk(0.1, -0.2, 0.05, 0.8, 1e-4, np.uint64(5),
                                np.uint64(11), np.uint64(0), bufA)
    rb = npf.bm_exit_chunk(0.1, -0.2, 0.05, 0.8, 1e-4, np.uint64(5),
                           np.uint64(11), np.uint64(0), bufB)
    n = min(ra[0], rb[0])
    assert abs(ra[0] - rb[0]) <= 1
    assert np.allclose(bufA[:n], bufB[:n], rtol=0, atol=1e-10)


def test_survival_classes_match(segset):
    streams = np.arange(40, dtype=np.uint64)
    a = fastpath.bm_survival_many(1.2, 0.0, 0.0, 2.0, 1e-3, np.uint64(3),
                                  streams, 0.05, 0.025, *grid_args(segset), 40_000)
    b = npf.bm_survival_many(1.2, 0.0, 0.0, 2.0, 1e-3, np.uint64(3),
                             streams, 0.05, 0.025, *grid_args(segset), 40_000)
    assert np.array_equal(np.asarray(a[0]), np.asarray(b[0]))


def test_wos_agreement(segset):
    starts = np.tile([0.9, 0.4, -0.2], (30, 1))
    streams = np.arange(30, dtype=np.uint64)
    ea, fa, _ = fastpath.wos_many(starts, 2.0, -1.0, 1e-3, 5000, np.uint64(2),
                                  streams, *grid_args(segset), segset._pilots)
    eb, fb, _ = npf.wos_many(starts, 2.0, -1.0, 1e-3, 5000, np.uint64(2),
                             streams, *grid_args(segset), segset._pilots)
    assert np.array_equal(np.asarray(fa), np.asarray(fb))
    assert np.allclose(ea, eb, atol=1e-8)


def test_zn_wos_flags_match(segset):
    streams = np.arange(60, dtype=np.uint64)
    a = fastpath.zn_wos_many(1.5, 0.0, 0.0, 2.0, 0.05, 0.05 / 16, 20000,
                             np.uint64(4), streams, *grid_args(segset),
                             *coarse_args(segset))
    b = npf.zn_wos_many(1.5, 0.0, 0.0, 2.0, 0.05, 0.05 / 16, 20000,
                        np.uint64(4), streams, *grid_args(segset),
                        *coarse_args(segset))
    assert np.array_equal(np.asarray(a), np.asarray(b))


def test_csl_agreement(segset):
    streams = np.arange(40, dtype=np.uint64)
    aa, da = fastpath.csl_many(0.2, 0.1, 0.0, 1.5, 1e-3, 1e-3, np.uint64(6),
                               streams, *grid_args(segset), segset._pilots,
                               30_000, 0.3)
    ab, db = npf.csl_many(0.2, 0.1, 0.0, 1.5, 1e-3, 1e-3, np.uint64(6),
                          streams, *grid_args(segset), segset._pilots,
                          30_000, 0.3)
    assert np.array_equal(np.asarray(aa), np.asarray(ab))
    both = (np.asarray(aa) == 1)
    da = np.asarray(da)[both]
    db = np.asarray(db)[both]
    capped = (da > 0.3) & (db > 0.3)
    assert np.allclose(da[~capped], db[~capped], atol=1e-8)


def test_conestay_match():
    streams = np.arange(50, dtype=np.uint64)
    args = (0.2, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0, 1.0, 0.7, 0.1, 1.0,
            1e-3, np.uint64(8), streams, 50_000)
    a = fastpath.conestay_many(*args)
    b = npf.conestay_many(*args)
    assert np.array_equal(np.asarray(a), np.asarray(b))


def test_cover_replay_identical(np_rng):
    from bimlab.geometry import build_cone_family

    fam = build_cone_family(10, 2.0)
    pts = np_rng.normal(size=(3000, 3)).cumsum(axis=0) * 0.1
    fv_a = np.full(fam.n * fam.m, -1, dtype=np.int64)
    fv_b = np.full(fam.n * fam.m, -1, dtype=np.int64)
    tdirs = np.ascontiguousarray(fam.tube_dirs.reshape(-1, 3))
    ha = fastpath.cover_replay(pts, fam.group_dirs, tdirs, fam.group_chord,
                               fam.tube_chord, 50, fv_a, 0)
    hb = npf.cover_replay(pts, fam.group_dirs, tdirs, fam.group_chord,
                          fam.tube_chord, 50, fv_b, 0)
    assert int(ha) == int(hb)
    assert np.array_equal(fv_a, fv_b)


def test_cone_block_masks_identical(np_rng):
    from bimlab.geometry import fibonacci_directions

    samples = np_rng.normal(size=(500, 3)) * np_rng.uniform(0.05, 2.0, (500, 1))
    cand = fibonacci_directions(400)
    a = fastpath.cone_block_mask(samples, cand, 0.05, 0.09, 0.25, 2.0)
    b = npf.cone_block_mask(samples, cand, 0.05, 0.09, 0.25, 2.0)
    assert np.array_equal(np.asarray(a), np.asarray(b))


def test_chamfer_identical(np_rng):
    D0 = np.where(np_rng.random((25, 19, 22)) < 0.05, 0, 9999).astype(np.int32)
    D1, D2 = D0.copy(), D0.copy()
    fastpath.chamfer_chebyshev(D1)
    npf.chamfer_chebyshev(D2)
    assert np.array_equal(D1, D2)
