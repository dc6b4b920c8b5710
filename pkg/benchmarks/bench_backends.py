"""Benchmark the numba kernels against the pure-numpy fallback.

Runs each hot kernel on a matched workload under both implementations,
reports wall times and the speedup, and checks that the outputs agree
(exactly for integer/stream outputs, to ~1e-8 for trajectories, where the
two backends' libm/SIMD rounding may differ).

    python benchmarks/bench_backends.py [--quick]
"""

import argparse
import time

import numpy as np

from bimlab import fastpath
from bimlab._backend import BACKEND
from bimlab.fastpath import _impl_numpy as npf
from bimlab.geometry import PolylineIndex
from bimlab.rng import RngStream

if BACKEND != "numba":
    raise SystemExit("run this with the numba backend active (unset BIMLAB_BACKEND)")


def timed(fn, *args, repeat=1):
    fn(*args)  # warm (JIT)
    t0 = time.time()
    for _ in range(repeat):
        out = fn(*args)
    return (time.time() - t0) / repeat, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="smaller workloads")
    args = ap.parse_args()
    scale = 0.25 if args.quick else 1.0

    rng = RngStream(99)
    np_rng = np.random.default_rng(3)
    pts = np_rng.normal(size=(int(4000 * scale), 3)).cumsum(axis=0) * 0.05
    idx = PolylineIndex.from_points(pts, cell_size=0.08)
    grid = (idx.cell_size, idx._keys, idx._starts, idx._items, idx.A, idx.B)
    coarse = (idx._cD, idx._cdims, idx._corigin, idx._ccell)

    rows = []

    def record(name, t_nb, t_np, agree):
        rows.append((name, t_nb, t_np, t_np / t_nb, agree))

    # point distance queries: cutoff-bounded, near the structure, the way the
    # simulation kernels issue them (unbounded far-field queries go through
    # the coarse clearance field instead of the hash)
    qs = pts[:: max(1, len(pts) // int(2000 * scale))] + np_rng.normal(
        scale=0.15, size=(len(pts[:: max(1, len(pts) // int(2000 * scale))]), 3))

    def q_nb():
        return np.array([fastpath.grid_min_dist_point(*q, *grid, idx._pilots, 0.5)
                         for q in qs])

    def q_np():
        return np.array([npf.grid_min_dist_point(*q, *grid, idx._pilots, 0.5)
                         for q in qs])

    t1, a = timed(q_nb)
    t2, b = timed(q_np)
    agree = bool(np.allclose(np.minimum(a, 0.5), np.minimum(b, 0.5), rtol=1e-12))
    record("min-distance queries", t1, t2, agree)

    # path generation
    buf_a = np.empty((200_000, 3))
    buf_b = np.empty((200_000, 3))
    t1, ra = timed(fastpath.bm_exit_chunk, 0.0, 0.0, 0.0, 3.0, 1e-4,
                   np.uint64(1), np.uint64(2), np.uint64(0), buf_a)
    t2, rb = timed(npf.bm_exit_chunk, 0.0, 0.0, 0.0, 3.0, 1e-4,
                   np.uint64(1), np.uint64(2), np.uint64(0), buf_b)
    n = min(ra[0], rb[0])
    record("Brownian path chunk", t1, t2,
           bool(np.allclose(buf_a[:n], buf_b[:n], atol=1e-9)))

    # kill-on-approach survival walks
    streams = np.arange(int(80 * scale) + 8, dtype=np.uint64)
    args_s = (1.2, 0.0, 0.0, 2.0, 1e-3, np.uint64(3), streams, 0.05, 0.025,
              *grid, 40_000)
    t1, ca = timed(fastpath.bm_survival_many, *args_s)
    t2, cb = timed(npf.bm_survival_many, *args_s)
    record("sausage survival walks", t1, t2,
           bool(np.array_equal(np.asarray(ca[0]), np.asarray(cb[0]))))

    # walk-on-spheres
    starts = np.tile([0.9, 0.4, -0.2], (int(60 * scale) + 8, 1))
    wstreams = np.arange(len(starts), dtype=np.uint64)
    args_w = (starts, 2.0, -1.0, 1e-3, 5000, np.uint64(2), wstreams, *grid,
              idx._pilots)
    t1, wa = timed(fastpath.wos_many, *args_w)
    t2, wb = timed(npf.wos_many, *args_w)
    record("walk-on-spheres", t1, t2,
           bool(np.array_equal(np.asarray(wa[1]), np.asarray(wb[1]))))

    # sausage-absorbing survival (scale-decay workhorse)
    zstreams = np.arange(int(200 * scale) + 8, dtype=np.uint64)
    args_z = (1.5, 0.0, 0.0, 2.0, 0.05, 0.05 / 16, 20000, np.uint64(4),
              zstreams, *grid, *coarse)
    t1, za = timed(fastpath.zn_wos_many, *args_z)
    t2, zb = timed(npf.zn_wos_many, *args_z)
    record("avoidance walk-on-spheres", t1, t2,
           bool(np.array_equal(np.asarray(za), np.asarray(zb))))

    # sphere chain
    t1, la = timed(fastpath.chain_levels, 0.3, np.int64(0), 2_000_000,
                   np.uint64(7), np.uint64(9))
    t2, lb = timed(npf.chain_levels, 0.3, np.int64(0), 2_000_000,
                   np.uint64(7), np.uint64(9))
    record("sphere chain (2e6 steps)", t1, t2,
           bool(np.array_equal(np.asarray(la), np.asarray(lb))))

    print(f"\n{'kernel':<28} {'numba':>10} {'numpy':>10} {'speedup':>9}  agree")
    for name, t_nb, t_np, speed, agree in rows:
        print(f"{name:<28} {t_nb * 1e3:>8.1f}ms {t_np * 1e3:>8.1f}ms "
              f"{speed:>8.1f}x  {agree}")
    bad = [r[0] for r in rows if not r[4]]
    if bad:
        raise SystemExit(f"backend disagreement in: {', '.join(bad)}")
    print("\nall kernels agree across backends")
    _ = rng


if __name__ == "__main__":
    main()
