"""Exact functionals on finite nonnegative kernels.

A kernel is a nonnegative matrix p on E x F.  The central objects:

* switching constant K(p): the largest cross-ratio
  p(x1,y1) p(x2,y2) / (p(x1,y2) p(x2,y1)) over 2x2 submatrices, the optimal
  constant for comparing ratios of p-harmonic averages;
* weighted total-variation distance T_mu(p): worst TV distance between two
  rows reweighted and normalized by a measure mu;
* extremal TV distance R(p) = sup_mu T_mu(p), which has the closed form
  1 - 2 / (1 + sqrt(K(p)));
* maximal coupling of two finite measures, with equality mass 1 - TV.

Everything here is a total, pure function of its arguments; double precision
throughout, with 1e-12 comparison tolerances used by the callers.
"""

from dataclasses import dataclass, field

import numpy as np

TOL = 1e-12


class KernelError(ValueError):
    pass


def _as_matrix(values) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise KernelError("kernel must be a 2-d matrix with at least one row and column")
    if not np.all(np.isfinite(a)) or (a < 0).any():
        raise KernelError("kernel entries must be finite and nonnegative")
    return a


@dataclass(frozen=True)
class DiscreteKernel:
    """Nonnegative matrix on row_labels x col_labels."""

    values: np.ndarray
    row_labels: tuple = None
    col_labels: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "values", _as_matrix(self.values))
        if self.row_labels is None:
            object.__setattr__(self, "row_labels", tuple(range(self.values.shape[0])))
        if self.col_labels is None:
            object.__setattr__(self, "col_labels", tuple(range(self.values.shape[1])))
        if len(self.row_labels) != self.values.shape[0]:
            raise KernelError("row label count mismatch")
        if len(self.col_labels) != self.values.shape[1]:
            raise KernelError("col label count mismatch")

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class FiniteMeasure:
    """Nonnegative weights on a finite label set."""

    weights: np.ndarray
    labels: tuple = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise KernelError("measure weights must be a vector")
        if not np.all(np.isfinite(w)) or (w < 0).any():
            raise KernelError("measure weights must be finite and nonnegative")
        object.__setattr__(self, "weights", w)
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(range(len(w))))
        if len(self.labels) != len(w):
            raise KernelError("label count mismatch")

    @property
    def mass(self) -> float:
        return float(self.weights.sum())


def kernel_to_dict(p: DiscreteKernel) -> dict:
    """JSON-ready form matching the CLI conventions (17-digit floats survive
    a round trip exactly)."""
    return {
        "row_labels": list(p.row_labels),
        "col_labels": list(p.col_labels),
        "values": [[float(v) for v in row] for row in p.values],
    }


def kernel_from_dict(d: dict) -> DiscreteKernel:
    return DiscreteKernel(np.asarray(d["values"], dtype=np.float64),
                          tuple(d["row_labels"]), tuple(d["col_labels"]))


def measure_to_dict(mu: FiniteMeasure) -> dict:
    return {"labels": list(mu.labels), "weights": [float(w) for w in mu.weights]}


def measure_from_dict(d: dict) -> FiniteMeasure:
    return FiniteMeasure(np.asarray(d["weights"], dtype=np.float64),
                         tuple(d["labels"]))


def _kernel(p) -> np.ndarray:
    if isinstance(p, DiscreteKernel):
        return p.values
    return _as_matrix(p)


def _measure(mu) -> np.ndarray:
    if isinstance(mu, FiniteMeasure):
        return mu.weights
    w = np.asarray(mu, dtype=np.float64)
    if w.ndim != 1 or (w < 0).any() or not np.all(np.isfinite(w)):
        raise KernelError("measure weights must be a finite nonnegative vector")
    return w


def switching_constant(p) -> float:
    """Max cross-ratio over all 2x2 submatrices; in [1, inf].

    Zero conventions: a zero numerator product is a vacuous constraint
    (contributes 1); a positive numerator over a zero denominator gives inf.
    Exhaustive O(|E|^2 |F|^2) enumeration.
    """
    a = _kernel(p)
    num = a[:, None, :, None] * a[None, :, None, :]   # p(x1,y1) p(x2,y2)
    den = a[:, None, None, :] * a[None, :, :, None]   # p(x1,y2) p(x2,y1)
    pos = num > 0.0
    if np.any(pos & (den == 0.0)):
        return np.inf
    ratio = np.ones_like(num)
    np.divide(num, den, out=ratio, where=pos)
    return max(1.0, float(ratio.max()))


def weighted_tv(p, mu) -> float:
    """(1/2) sup over row pairs of the mu-weighted L1 distance between
    mu-normalized rows.  Rows with zero normalizer are excluded; fewer than
    two valid rows gives 0."""
    a = _kernel(p)
    w = _measure(mu)
    if len(w) != a.shape[1]:
        raise KernelError("measure must live on the kernel's columns")
    if w.sum() <= 0.0:
        raise KernelError("measure must have positive total mass")
    norms = a @ w
    valid = norms > 0.0
    if valid.sum() < 2:
        return 0.0
    dens = a[valid] / norms[valid, None]
    diff = np.abs(dens[:, None, :] - dens[None, :, :]) @ w
    return 0.5 * float(diff.max())


def extremal_tv(p) -> float:
    """sup over positive finite measures mu of weighted_tv(p, mu), via the
    closed form 1 - 2/(1 + sqrt(K(p))); equals 1 when K = inf."""
    k = switching_constant(p)
    if np.isinf(k):
        return 1.0
    return 1.0 - 2.0 / (1.0 + np.sqrt(k))


def extremal_tv_oracle(p, eps_ladder) -> float:
    """Independent lower-bound oracle for extremal_tv.

    For every 2x2 submatrix (x1,x2 | y1,y2) and every eps in the ladder,
    evaluates weighted_tv of the two chosen columns against the two-point
    measure (eps + sqrt(p12 p22), eps + sqrt(p11 p21)) and takes the max.
    Converges to extremal_tv from below as eps -> 0.

    For a two-column kernel with a strictly positive measure the weighted TV
    between normalized rows r, r' is |d(r) - d(r')| mu1 with d = first-column
    density (the two column terms are equal), so the sup over row pairs is
    mu1 (max d - min d); that collapse keeps the scan vectorizable.
    """
    a = _kernel(p)
    ladder = [float(e) for e in eps_ladder]
    if not ladder or any(e <= 0 for e in ladder):
        raise KernelError("eps ladder must be nonempty and positive")
    if any(e0 < e1 for e0, e1 in zip(ladder, ladder[1:])):
        raise KernelError("eps ladder must be decreasing")
    nrow, ncol = a.shape
    if nrow < 2 or ncol < 2:
        return 0.0
    rows1, rows2 = np.triu_indices(nrow, k=1)
    best = 0.0
    for y1 in range(ncol - 1):
        for y2 in range(y1 + 1, ncol):
            u = a[:, y1]
            v = a[:, y2]
            valid = (u > 0.0) | (v > 0.0)
            if valid.sum() < 2:
                continue
            w1 = np.sqrt(v[rows1] * v[rows2])   # weight on y1
            w2 = np.sqrt(u[rows1] * u[rows2])   # weight on y2
            uu = u[valid, None]
            vv = v[valid, None]
            for eps in ladder:
                mu1 = eps + w1
                mu2 = eps + w2
                norms = uu * mu1[None, :] + vv * mu2[None, :]
                dens = uu / norms
                val = float(((dens.max(axis=0) - dens.min(axis=0)) * mu1).max())
                if val > best:
                    best = val
    return best


def convolve(p, q, mu) -> DiscreteKernel:
    """(p*q)(x,z) = sum_y p(x,y) q(y,z) mu(y); p on ExF, q on FxG, mu on F."""
    a = _kernel(p)
    b = _kernel(q)
    w = _measure(mu)
    if a.shape[1] != b.shape[0] or len(w) != a.shape[1]:
        raise KernelError("convolution label mismatch: need cols(p) = rows(q) = support(mu)")
    return DiscreteKernel((a * w[None, :]) @ b)


def row_average(q, mu_family) -> DiscreteKernel:
    """r(x,z) = sum_y q(y,z) mu_x(y) for a family of measures indexed by new
    rows; never increases K or R."""
    b = _kernel(q)
    fam = np.asarray([_measure(m) for m in mu_family], dtype=np.float64)
    if fam.ndim != 2 or fam.shape[1] != b.shape[0]:
        raise KernelError("each averaging measure must live on the rows of q")
    return DiscreteKernel(fam @ b)


def total_variation(mu, nu) -> float:
    """TV distance between two probability vectors (normalized internally)."""
    m = _measure(mu)
    n = _measure(nu)
    if len(m) != len(n):
        raise KernelError("measures must share a label set")
    if m.sum() <= 0 or n.sum() <= 0:
        raise KernelError("measures must have positive mass")
    return 0.5 * float(np.abs(m / m.sum() - n / n.sum()).sum())


def maximal_coupling(mu, nu) -> np.ndarray:
    """Joint matrix with marginals mu, nu (normalized) and diagonal mass
    exactly 1 - TV: diagonal gets min(mu_i, nu_i), residual mass coupled by
    the outer product of the normalized excesses."""
    m = _measure(mu)
    n = _measure(nu)
    if len(m) != len(n):
        raise KernelError("measures must share a label set")
    if m.sum() <= 0 or n.sum() <= 0:
        raise KernelError("measures must have positive mass")
    m = m / m.sum()
    n = n / n.sum()
    diag = np.minimum(m, n)
    rem = 1.0 - diag.sum()
    joint = np.diag(diag)
    if rem > 0.0:
        em = np.maximum(m - n, 0.0)
        en = np.maximum(n - m, 0.0)
        joint += np.outer(em, en) / rem
    return joint


def tricky_bound(a: float, K: float) -> float:
    """(1 - a) / (1 + (K - 1) a) for leakage a in [0,1) and K >= 1."""
    if not 0.0 <= a < 1.0:
        raise KernelError("leakage must satisfy 0 <= a < 1")
    if K < 1.0:
        raise KernelError("switching constant must be >= 1")
    if a == 0.0:
        return 1.0
    if np.isinf(K):
        return 0.0
    return (1.0 - a) / (1.0 + (K - 1.0) * a)


@dataclass
class TrickyReport:
    holds: bool
    leakage: float
    bound: float
    iterations: int
    converged: bool
    margin: float = field(default=np.nan)


def verify_tricky(p, nu_family, s, mu, tol: float = 1e-12, max_iter: int = 10 ** 6) -> TrickyReport:
    """Reconstruct r from its defining self-consistency relation
    r = A r + b with A[x,z] = sum_y p(x,y) nu_y(z) mu(y) and
    b[x] = sum_y p(x,y) s(y) mu(y), then check
    b >= tricky_bound(a, K(p)) * r entrywise.

    The row-sum leakage a = max_x sum_y p(x,y) nu_y(E) mu(y) must be < 1
    (contraction); fixed-point iteration to sup-difference < tol.
    """
    a_mat = _kernel(p)
    w = _measure(mu)
    sv = np.asarray(s, dtype=np.float64)
    if (sv < 0).any() or not np.all(np.isfinite(sv)):
        raise KernelError("s must be nonnegative and finite")
    nE, nF = a_mat.shape
    if len(w) != nF or len(sv) != nF:
        raise KernelError("mu and s must live on the kernel's columns")
    fam = np.asarray([_measure(m) for m in nu_family], dtype=np.float64)
    if fam.shape != (nF, nE):
        raise KernelError("nu family must map each column label to a measure on rows")
    A = (a_mat * w[None, :]) @ fam
    leak = float(A.sum(axis=1).max())
    if leak >= 1.0:
        raise KernelError(f"leakage {leak} >= 1: relation is not a contraction")
    b = (a_mat * w[None, :]) @ sv
    r = b.copy()
    it = 0
    converged = False
    while it < max_iter:
        r_new = A @ r + b
        it += 1
        if np.max(np.abs(r_new - r)) < tol:
            r = r_new
            converged = True
            break
        r = r_new
    bound = tricky_bound(leak, switching_constant(a_mat))
    lhs = b
    rhs = bound * r
    margin = float((lhs - rhs).min())
    return TrickyReport(
        holds=bool(margin >= -TOL),
        leakage=leak,
        bound=bound,
        iterations=it,
        converged=converged,
        margin=margin,
    )


def min_max_slack(f, g, f_hi, g_hi, nu) -> float:
    """Slack of 1 - nu(min(f,g)) <= (1-nu(f)) + (1-nu(g)) + nu(|f_hi-g_hi|)/2
    for f <= f_hi, g <= g_hi with nu(f_hi) = nu(g_hi) = 1 (>= 0 when it holds)."""
    w = _measure(nu)
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    fh = np.asarray(f_hi, dtype=np.float64)
    gh = np.asarray(g_hi, dtype=np.float64)
    lhs = 1.0 - float(np.minimum(f, g) @ w)
    rhs = (1.0 - float(f @ w)) + (1.0 - float(g @ w)) + 0.5 * float(np.abs(fh - gh) @ w)
    return rhs - lhs


def harmonic_ratio_sup(p, f, g) -> float:
    """sup over row pairs of u(x1) v(x2) / (u(x2) v(x1)) for u = p f, v = p g
    with f, g entrywise nonnegative.  Bounded by K(p), with equality when f, g
    are coordinate vectors picking a maximizing 2x2 submatrix."""
    a = _kernel(p)
    u = a @ np.asarray(f, dtype=np.float64)
    v = a @ np.asarray(g, dtype=np.float64)
    num = u[:, None] * v[None, :]
    den = u[None, :] * v[:, None]
    pos = num > 0.0
    if np.any(pos & (den == 0.0)):
        return np.inf
    ratio = np.ones_like(num)
    np.divide(num, den, out=ratio, where=pos)
    return max(1.0, float(ratio.max()))
