"""
Multivariate normal lower-orthant probabilities.

``mvn_cdf(upper, cov)`` returns ``P(Z <= upper)`` for ``Z ~ N(0, cov)``.
Dimensions 1 and 2 are evaluated deterministically; dimension 3 and up use
Genz's separation-of-variables transform with variable prioritisation and a
randomised Kronecker (Richtmyer) lattice.  Singular covariances are handled
exactly through a rank-revealing Cholesky factor: constraints that are linear
combinations of earlier latent variables are folded into the truncation
bounds of the latent variable they last depend on.
"""

import math
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy.special import ndtr as _sp_ndtr
from scipy.special import ndtri as _sp_ndtri

from ._jit import HAVE_NUMBA, njit

MAX_DIM = 16
PSD_TOL = 1e-10
QMC_SEED = 20170714
N_SHIFTS = 12
ERROR_FACTOR = 3.0

_PRIMES = np.array([2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61])
_RICHTMYER = np.sqrt(_PRIMES) % 1.0


class MvnResult(NamedTuple):
    probability: float
    error: float


class NotPositiveSemidefinite(ValueError):
    pass


# ---------------------------------------------------------------------------
# scalar normal helpers usable from numba


@njit
def norm_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@njit
def norm_ppf(p):
    # Wichura (1988) AS241, PPND16; ~1e-16 relative accuracy
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    if r <= 0.0:
        return -math.inf if q < 0.0 else math.inf
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    val = num / den
    if q < 0.0:
        val = -val
    return val


# ---------------------------------------------------------------------------
# QMC kernels.  Both take the prepared factor and return per-shift sums of the
# integrand over points [start, stop) of the Kronecker sequence, antithetic.


@njit
def _sov_sums_loop(L, upper, ptr, rows, gen, shifts, start, stop):
    n_shift = shifts.shape[0]
    r = L.shape[1]
    out = np.zeros(n_shift)
    y = np.zeros(r)
    for m in range(n_shift):
        acc = 0.0
        for i in range(start, stop):
            for anti in range(2):
                f = 1.0
                for j in range(r):
                    lo = -math.inf
                    hi = math.inf
                    for g in range(ptr[j], ptr[j + 1]):
                        row = rows[g]
                        s = 0.0
                        for l in range(j):
                            s += L[row, l] * y[l]
                        c = L[row, j]
                        bound = (upper[row] - s) / c
                        if c > 0.0:
                            if bound < hi:
                                hi = bound
                        else:
                            if bound > lo:
                                lo = bound
                    plo = 0.0 if lo == -math.inf else norm_cdf(lo)
                    phi = 1.0 if hi == math.inf else norm_cdf(hi)
                    d = phi - plo
                    if d <= 0.0:
                        f = 0.0
                        break
                    f *= d
                    if j < r - 1:
                        x = (i + 1) * gen[j] + shifts[m, j]
                        x -= math.floor(x)
                        x = abs(2.0 * x - 1.0)
                        if anti == 1:
                            x = 1.0 - x
                        u = plo + x * d
                        if u <= 0.0:
                            u = 1e-300
                        elif u >= 1.0:
                            u = 1.0 - 1e-16
                        y[j] = norm_ppf(u)
                acc += f
        out[m] = acc
    return out


def _sov_sums_numpy(L, upper, ptr, rows, gen, shifts, start, stop):
    n_shift = shifts.shape[0]
    r = L.shape[1]
    idx = np.arange(start + 1, stop + 1, dtype=np.float64)
    out = np.zeros(n_shift)
    for m in range(n_shift):
        if r > 1:
            x = np.outer(idx, gen[: r - 1]) + shifts[m, : r - 1]
            x -= np.floor(x)
            x = np.abs(2.0 * x - 1.0)
            w = np.concatenate([x, 1.0 - x])
        else:
            w = np.zeros((2 * len(idx), 0))
        npts = w.shape[0]
        f = np.ones(npts)
        y = np.zeros((npts, r))
        for j in range(r):
            lo = np.full(npts, -np.inf)
            hi = np.full(npts, np.inf)
            for row in rows[ptr[j]: ptr[j + 1]]:
                c = L[row, j]
                bound = (upper[row] - y[:, :j] @ L[row, :j]) / c
                if c > 0.0:
                    hi = np.minimum(hi, bound)
                else:
                    lo = np.maximum(lo, bound)
            plo = _sp_ndtr(lo)
            d = np.clip(_sp_ndtr(hi) - plo, 0.0, None)
            f *= d
            if j < r - 1:
                u = np.clip(plo + w[:, j] * d, 1e-300, 1.0 - 1e-16)
                y[:, j] = _sp_ndtri(u)
        out[m] = f.sum()
    return out


_sov_sums = _sov_sums_loop if HAVE_NUMBA else _sov_sums_numpy


# ---------------------------------------------------------------------------
# preprocessing


def _truncated_mean(a, b):
    pa = _sp_ndtr(a)
    pb = _sp_ndtr(b)
    mass = pb - pa
    dens_a = 0.0 if np.isinf(a) else math.exp(-0.5 * a * a)
    dens_b = 0.0 if np.isinf(b) else math.exp(-0.5 * b * b)
    if mass < 1e-300:
        if np.isinf(a):
            return b
        if np.isinf(b):
            return a
        return 0.5 * (a + b)
    return (dens_a - dens_b) / math.sqrt(2 * math.pi) / mass


def prioritized_cholesky(cov, upper, tol=1e-12):
    """Rank-revealing Cholesky with Genz-Bretz variable prioritisation.

    Returns ``(L, upper_perm, ptr, rows, rank)`` where ``L`` is ``k x rank``.
    Row ``i`` of ``L`` is assigned to the last latent column it loads on;
    ``rows[ptr[j]:ptr[j+1]]`` lists the rows bounded when latent ``j`` is
    drawn.  Rows with no loading at all are not listed.
    """
    cov = np.array(cov, dtype=np.float64)
    b = np.array(upper, dtype=np.float64)
    k = len(b)
    order = np.arange(k)
    L = np.zeros((k, k))
    diag = np.diag(cov).copy()
    scale = max(diag.max(initial=0.0), 1e-300)
    y = np.zeros(k)
    rank = 0
    for j in range(k):
        best = -1
        best_mass = np.inf
        for i in range(j, k):
            rem = diag[order[i]] - L[i, :j] @ L[i, :j]
            if rem <= tol * scale:
                continue
            sd = math.sqrt(rem)
            hi = (b[order[i]] - L[i, :j] @ y[:j]) / sd
            mass = _sp_ndtr(hi)
            if mass < best_mass:
                best_mass = mass
                best = i
        if best < 0:
            break
        if best != j:
            order[[j, best]] = order[[best, j]]
            L[[j, best], :] = L[[best, j], :]
        piv = order[j]
        rem = diag[piv] - L[j, :j] @ L[j, :j]
        L[j, j] = math.sqrt(rem)
        for i in range(j + 1, k):
            L[i, j] = (cov[order[i], piv] - L[i, :j] @ L[j, :j]) / L[j, j]
        hi = (b[piv] - L[j, :j] @ y[:j]) / L[j, j]
        y[j] = _truncated_mean(-np.inf, hi)
        rank += 1
    L = L[:, :rank]
    b = b[order]
    col_of = np.full(k, -1)
    for i in range(k):
        nz = np.nonzero(np.abs(L[i]) > 1e-12 * math.sqrt(scale))[0]
        if nz.size:
            col_of[i] = nz[-1]
    keep = np.nonzero(col_of >= 0)[0]
    rows = keep[np.argsort(col_of[keep], kind="stable")]
    ptr = np.searchsorted(col_of[rows], np.arange(rank + 1)).astype(np.int64)
    return L, b, ptr, rows.astype(np.int64), rank, col_of


def _check_cov(cov):
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance has non-finite entries")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise ValueError("covariance must be symmetric")
    cov = 0.5 * (cov + cov.T)
    lam_min = np.linalg.eigvalsh(cov)[0]
    if lam_min < -PSD_TOL:
        raise NotPositiveSemidefinite(
            f"covariance is not positive semidefinite (min eigenvalue {lam_min:.3e})"
        )
    return cov


def _bvn_cdf(h, k, rho):
    """Bivariate standard normal CDF via Plackett's identity."""
    if rho >= 1.0 - 1e-14:
        return float(_sp_ndtr(min(h, k)))
    if rho <= -1.0 + 1e-14:
        return float(max(0.0, _sp_ndtr(h) + _sp_ndtr(k) - 1.0))
    if h == 0.0 and k == 0.0:
        return 0.25 + math.asin(rho) / (2.0 * math.pi)
    if np.isinf(h) or np.isinf(k):
        if h == -np.inf or k == -np.inf:
            return 0.0
        return float(_sp_ndtr(min(h, k)))

    def dens(r):
        s = 1.0 - r * r
        return math.exp(-(h * h - 2 * r * h * k + k * k) / (2 * s)) / (2 * math.pi * math.sqrt(s))

    val, _ = integrate.quad(dens, 0.0, rho, epsabs=1e-15, epsrel=1e-13, limit=200)
    return float(_sp_ndtr(h) * _sp_ndtr(k) + val)


def mvn_cdf(upper, cov, accuracy=1e-6, *, seed=QMC_SEED, max_points=2 ** 22):
    """Lower-orthant probability ``P(Z <= upper)``, ``Z ~ N(0, cov)``.

    Parameters
    ----------
    upper : array_like, shape (k,)
        Upper integration limits; ``+inf`` entries are unconstrained.
    cov : array_like, shape (k, k)
        Symmetric positive semidefinite covariance, ``1 <= k <= 16``.
    accuracy : float
        Target absolute error for the QMC path (``k >= 3``).
    seed : int
        Seed of the random lattice shifts; fixed by default so repeated
        calls are bit-identical.
    max_points : int
        Cap on lattice points per shift.

    Returns
    -------
    MvnResult
        ``(probability, error)``; ``error`` is three standard errors over
        the randomly shifted lattices (zero-ish for the closed-form paths).
    """
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    k = upper.shape[0]
    if k < 1:
        raise ValueError("need at least one dimension")
    if k > MAX_DIM:
        raise ValueError(f"dimension {k} exceeds the supported maximum {MAX_DIM}")
    if np.any(np.isnan(upper)):
        raise ValueError("upper limits contain NaN")
    cov = _check_cov(np.atleast_2d(cov))
    if cov.shape[0] != k:
        raise ValueError("covariance shape does not match upper limits")
    if np.any(upper == -np.inf):
        return MvnResult(0.0, 0.0)

    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    degenerate = sd <= 1e-14 * max(1.0, sd.max())
    # zero-variance coordinates are identically zero
    if np.any(upper[degenerate] < 0.0):
        return MvnResult(0.0, 0.0)
    active = ~degenerate & np.isfinite(upper)
    if not np.any(active):
        return MvnResult(1.0, 0.0)
    s = sd[active]
    corr = cov[np.ix_(active, active)] / np.outer(s, s)
    b = upper[active] / s
    k = b.shape[0]

    if k == 1:
        return MvnResult(float(_sp_ndtr(b[0])), 1e-16)
    if k == 2:
        return MvnResult(_bvn_cdf(b[0], b[1], float(np.clip(corr[0, 1], -1.0, 1.0))), 1e-14)

    L, bp, ptr, rows, rank, col_of = prioritized_cholesky(corr, b)
    # rows with no loading are the constant zero; cannot happen after
    # standardisation but guard anyway
    if np.any((col_of < 0) & (bp < 0.0)):
        return MvnResult(0.0, 0.0)
    if rank == 1:
        # every constraint is a bound on one standard normal: exact
        p = _sov_sums_numpy(L, bp, ptr, rows, _RICHTMYER, np.zeros((1, 1)), 0, 1)[0] / 2.0
        return MvnResult(float(p), 1e-15)

    gen = _RICHTMYER[: rank - 1].copy()
    rng = np.random.default_rng(seed)
    shifts = rng.random((N_SHIFTS, max(rank - 1, 1)))
    sums = np.zeros(N_SHIFTS)
    n = 0
    step = 1024
    while True:
        sums += _sov_sums(L, bp, ptr, rows, gen, shifts, n, n + step)
        n += step
        est = sums / (2.0 * n)
        err = ERROR_FACTOR * est.std(ddof=1) / math.sqrt(N_SHIFTS)
        if err <= accuracy or n >= max_points:
            break
        step = n
    return MvnResult(float(np.clip(est.mean(), 0.0, 1.0)), float(err))


def trivariate_cdf(upper, cov):
    """Deterministic ``P(Z <= upper)`` for ``k = 3`` by conditioning on the
    first coordinate and integrating bivariate probabilities.

    Smooth in ``upper``, which matters when it is itself an integrand of
    adaptive quadrature.  Needs a nondegenerate first coordinate with
    ``|corr| < 1`` against the others.
    """
    upper = np.asarray(upper, dtype=np.float64)
    cov = _check_cov(np.atleast_2d(cov))
    if upper.shape != (3,) or cov.shape != (3, 3):
        raise ValueError("trivariate_cdf needs three dimensions")
    sd = np.sqrt(np.diag(cov))
    b = upper / sd
    r = cov / np.outer(sd, sd)
    r01, r02, r12 = r[0, 1], r[0, 2], r[1, 2]
    s1 = math.sqrt(1.0 - r01 * r01)
    s2 = math.sqrt(1.0 - r02 * r02)
    if s1 < 1e-12 or s2 < 1e-12:
        raise ValueError("first coordinate is perfectly correlated with another")
    rc = float(np.clip((r12 - r01 * r02) / (s1 * s2), -1.0, 1.0))

    def f(t):
        dens = math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
        return dens * _bvn_cdf((b[1] - r01 * t) / s1, (b[2] - r02 * t) / s2, rc)

    val, _ = integrate.quad(f, -np.inf, b[0], epsabs=1e-14, epsrel=1e-12, limit=200)
    return float(val)


def orthant_probability(cov, accuracy=1e-6, **kwargs):
    """``P(Z <= 0)`` for ``Z ~ N(0, cov)``."""
    cov = np.atleast_2d(cov)
    return mvn_cdf(np.zeros(cov.shape[0]), cov, accuracy, **kwargs)
