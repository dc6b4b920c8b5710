"""Hot-kernel dispatch: numba when available, numpy fallback otherwise.

Both implementations expose the same functions with the same Philox counter
consumption; see BIMLAB_BACKEND in bimlab._backend.
"""

from .._backend import BACKEND, HAVE_NUMBA

if HAVE_NUMBA:
    from ._impl_numba import (  # noqa: F401
        PARALLEL,
        bm_exit_chunk,
        bm_survival_many,
        brute_min_dist_points,
        chamfer_chebyshev,
        chain_count_until,
        chain_levels,
        cone_block_mask,
        conestay_many,
        cover_replay,
        csl_many,
        cyl_hit_wos_many,
        grid_min_dist_point,
        grid_seg_min_dist,
        philox_block,
        wos_many,
        zn_wos_many,
    )
else:
    from ._impl_numpy import (  # noqa: F401
        PARALLEL,
        bm_exit_chunk,
        bm_survival_many,
        brute_min_dist_points,
        chamfer_chebyshev,
        chain_count_until,
        chain_levels,
        cone_block_mask,
        conestay_many,
        cover_replay,
        csl_many,
        cyl_hit_wos_many,
        grid_min_dist_point,
        grid_seg_min_dist,
        philox_block,
        wos_many,
        zn_wos_many,
    )

__all__ = [
    "BACKEND",
    "PARALLEL",
    "bm_exit_chunk",
    "bm_survival_many",
    "brute_min_dist_points",
    "chamfer_chebyshev",
    "chain_count_until",
    "chain_levels",
    "cone_block_mask",
    "conestay_many",
    "cover_replay",
    "csl_many",
    "cyl_hit_wos_many",
    "grid_min_dist_point",
    "grid_seg_min_dist",
    "philox_block",
    "wos_many",
    "zn_wos_many",
]
