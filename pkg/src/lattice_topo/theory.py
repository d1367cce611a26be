"""
Moments of the number of local extrema of a stationary isotropic Gaussian
field with unit variance on a ``d x d`` lattice.

A site is a local maximum when every existing neighbour is strictly lower;
sites on the edge of the lattice simply have fewer neighbours.  The
probability is a lower-orthant probability of the neighbour-minus-centre
differences, and the pair probabilities needed for the variance are
orthant probabilities of the stacked differences of two sites.  Sites and
site pairs are grouped into classes that are equivalent under translation
and the eight symmetries of the square, so only a handful of orthant
probabilities are evaluated per lattice.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gammaln, kve

from .homology import Neighborhood
from .mvn import mvn_cdf, trivariate_cdf

DEFAULT_DELTA0 = 3.0
P_ACCURACY = 1e-7
PAIR_ACCURACY = 2e-6


@dataclass(frozen=True)
class CorrelationModel:
    """Isotropic correlation ``rho(d)``.

    ``family`` is ``"exponential"`` (``exp(-d/eta)``) or ``"matern"``::

        rho(d) = 2**(1-nu)/Gamma(nu) * (sqrt(2 nu) d/eta)**nu * K_nu(sqrt(2 nu) d/eta)

    ``nu`` is ignored (and stored as 0.5) for the exponential family.
    """

    family: str = "exponential"
    eta: float = 20.0
    nu: float = 0.5

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in ("exponential", "matern"):
            raise ValueError(f"unknown correlation family {self.family!r}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if fam == "exponential":
            object.__setattr__(self, "nu", 0.5)
        elif not self.nu > 0:
            raise ValueError("nu must be positive")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "nu", float(self.nu))

    @classmethod
    def exponential(cls, eta=20.0):
        return cls("exponential", eta)

    @classmethod
    def matern(cls, nu, eta):
        return cls("matern", eta, nu)

    def __call__(self, d):
        return self.correlation(d)

    def correlation(self, d):
        d = np.abs(np.asarray(d, dtype=np.float64))
        if self.family == "exponential":
            return np.exp(-d / self.eta)
        nu = self.nu
        x = math.sqrt(2.0 * nu) * d / self.eta
        out = np.ones_like(x)
        pos = x > 0
        xp = x[pos]
        # log of 2^(1-nu)/Gamma(nu) x^nu K_nu(x), with K_nu = kve * exp(-x)
        with np.errstate(divide="ignore"):
            logv = (1.0 - nu) * math.log(2.0) - gammaln(nu) + nu * np.log(xp) + np.log(kve(nu, xp)) - xp
        out[pos] = np.exp(logv)
        return out

    def to_dict(self):
        return {"family": self.family, "eta": self.eta, "nu": self.nu}


def zero_correlation_model():
    """Surrogate for the white-noise limit: every off-diagonal entry is 0."""
    return CorrelationModel.exponential(1e-3)


@dataclass(frozen=True)
class ExtremaMoments:
    expected_count: float
    approx_sd: float
    neighborhood: Neighborhood
    lattice_dim: int
    mvn_error_bound: float
    model: CorrelationModel = None
    delta0: float = DEFAULT_DELTA0
    singular_classes: int = 0

    def to_dict(self):
        return {
            "dim": self.lattice_dim,
            "neighborhood": self.neighborhood.value,
            "family": self.model.family if self.model else None,
            "eta": self.model.eta if self.model else None,
            "nu": self.model.nu if self.model else None,
            "expected": self.expected_count,
            "sd": self.approx_sd,
            "delta0": self.delta0,
            "mvn_error": self.mvn_error_bound,
        }


# ---------------------------------------------------------------------------
# geometry


_D4 = [
    lambda a, b: (a, b),
    lambda a, b: (-a, b),
    lambda a, b: (a, -b),
    lambda a, b: (-a, -b),
    lambda a, b: (b, a),
    lambda a, b: (-b, a),
    lambda a, b: (b, -a),
    lambda a, b: (-b, -a),
]


def neighbors(site, dim, nbhd):
    r, c = site
    return [
        (r + dr, c + dc)
        for dr, dc in Neighborhood.parse(nbhd).offsets
        if 0 <= r + dr < dim and 0 <= c + dc < dim
    ]


def _rel(points, origin):
    return tuple(sorted((p[0] - origin[0], p[1] - origin[1]) for p in points))


def _canon_site(offsets):
    return min(tuple(sorted(T(a, b) for a, b in offsets)) for T in _D4)


def _canon_pair(off1, delta, off2):
    best = None
    for first, d, second in ((off1, delta, off2), (off2, (-delta[0], -delta[1]), off1)):
        for T in _D4:
            key = (
                tuple(sorted(T(a, b) for a, b in first)),
                T(*d),
                tuple(sorted(T(a, b) for a, b in second)),
            )
            if best is None or key < best:
                best = key
    return best


def _representatives(dim, margin):
    """Rows (or cols) that must be treated individually, plus one interior
    representative carrying the remaining multiplicity."""
    if dim <= 2 * margin + 1:
        return [(i, 1) for i in range(dim)]
    reps = [(i, 1) for i in range(margin)]
    reps.append((margin, dim - 2 * margin))
    reps += [(dim - margin + i, 1) for i in range(margin)]
    return reps


def _distance_matrix(points):
    P = np.asarray(points, dtype=np.float64)
    diff = P[:, None, :] - P[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


# ---------------------------------------------------------------------------
# single-site probability


def extremum_covariance(offsets, model):
    """``R + 1 1^T - 1 r^T - r 1^T`` for a centre with neighbours at
    ``offsets``."""
    pts = [(0, 0)] + list(offsets)
    C = model.correlation(_distance_matrix(pts))
    r = C[1:, 0]
    R = C[1:, 1:]
    one = np.ones_like(r)
    return R + np.outer(one, one) - np.outer(one, r) - np.outer(r, one)


@lru_cache(maxsize=4096)
def _site_probability(key, model, accuracy):
    if len(key) == 0:
        return 1.0, 0.0
    cov = extremum_covariance(key, model)
    res = mvn_cdf(np.zeros(len(key)), cov, accuracy)
    return res.probability, res.error


def extremum_probability(site, dim, nbhd, model, accuracy=P_ACCURACY, with_error=False):
    """Probability that ``site`` is a local maximum (equivalently minimum)."""
    r, c = site
    if not (0 <= r < dim and 0 <= c < dim):
        raise ValueError(f"site {site} outside the {dim}x{dim} lattice")
    key = _canon_site(_rel(neighbors(site, dim, nbhd), site))
    p, err = _site_probability(key, model, accuracy)
    return (p, err) if with_error else p


def _site_classes(dim, nbhd, margin=1):
    classes = {}
    for r, mr in _representatives(dim, margin):
        for c, mc in _representatives(dim, margin):
            key = _canon_site(_rel(neighbors((r, c), dim, nbhd), (r, c)))
            classes[key] = classes.get(key, 0) + mr * mc
    return classes


def expected_extrema(dim, nbhd, model, accuracy=P_ACCURACY, with_error=False):
    """Expected number of local maxima, summed over boundary classes."""
    if dim < 2:
        raise ValueError("dim must be at least 2")
    nbhd = Neighborhood.parse(nbhd)
    total = 0.0
    err = 0.0
    for key, mult in _site_classes(dim, nbhd).items():
        p, e = _site_probability(key, model, accuracy)
        total += mult * p
        err += mult * e
    return (total, err) if with_error else total


def expected_extrema_naive(dim, nbhd, model, accuracy=P_ACCURACY):
    """Per-site sum without any grouping (reference path for small ``dim``)."""
    total = 0.0
    for r in range(dim):
        for c in range(dim):
            total += extremum_probability((r, c), dim, nbhd, model, accuracy)
    return total


# ---------------------------------------------------------------------------
# pair probability


class SingularCompositeWarning(RuntimeWarning):
    pass


def pair_composite_covariance(off1, delta, off2, model):
    """Composite covariance for two centres with the given neighbours.

    Centres sit at ``(0, 0)`` and ``delta``; ``off1``/``off2`` are neighbour
    offsets relative to their own centre.  Returns
    ``R22 - R12 R11^{-1} R12^T + D R11 D^T`` with ``D = J - R12 R11^{-1}``.
    """
    x11 = (0, 0)
    x12 = tuple(delta)
    n1 = [tuple(o) for o in off1]
    n2 = [(delta[0] + a, delta[1] + b) for a, b in off2]
    centres = [x11, x12]
    nbrs = n1 + n2
    R11 = model.correlation(_distance_matrix(centres))
    R22 = model.correlation(_distance_matrix(nbrs))
    P = np.asarray(nbrs, float)
    Q = np.asarray(centres, float)
    R12 = model.correlation(np.sqrt(((P[:, None, :] - Q[None, :, :]) ** 2).sum(-1)))
    k1, k2 = len(n1), len(n2)
    J = np.zeros((k1 + k2, 2))
    J[:k1, 0] = 1.0
    J[k1:, 1] = 1.0
    A = np.linalg.solve(R11, R12.T).T  # R12 R11^{-1}
    D = J - A
    S = R22 - A @ R12.T + D @ R11 @ D.T
    return 0.5 * (S + S.T)


def _is_singular(S):
    lam = np.linalg.eigvalsh(S)
    return lam[0] < -1e-10 or lam[0] <= lam[-1] * 1e-12


@lru_cache(maxsize=65536)
def _pair_probability(key, model, accuracy):
    off1, delta, off2 = key
    if delta in off1 or (-delta[0], -delta[1]) in off2:
        return 0.0, 0.0, False
    S = pair_composite_covariance(off1, delta, off2, model)
    singular = _is_singular(S)
    res = mvn_cdf(np.zeros(S.shape[0]), S, accuracy)
    return res.probability, res.error, singular


def pair_indicator_expectation(site1, site2, dim, nbhd, model, accuracy=PAIR_ACCURACY, with_error=False):
    """``E[I_1 I_2]`` for the local-maximum indicators of two distinct sites.

    Zero when either site is a neighbour of the other; otherwise the
    orthant probability of the composite covariance (whose singularity,
    when neighbours are shared, is handled by the orthant integrator).
    """
    site1 = tuple(site1)
    site2 = tuple(site2)
    if site1 == site2:
        raise ValueError("sites must differ")
    for s in (site1, site2):
        if not (0 <= s[0] < dim and 0 <= s[1] < dim):
            raise ValueError(f"site {s} outside the {dim}x{dim} lattice")
    key = _canon_pair(
        _rel(neighbors(site1, dim, nbhd), site1),
        (site2[0] - site1[0], site2[1] - site1[1]),
        _rel(neighbors(site2, dim, nbhd), site2),
    )
    p, err, _ = _pair_probability(key, model, accuracy)
    return (p, err) if with_error else p


def _displacements(delta0):
    m = int(math.floor(delta0))
    return [
        (a, b)
        for a in range(-m, m + 1)
        for b in range(-m, m + 1)
        if (a, b) != (0, 0) and a * a + b * b <= delta0 * delta0 + 1e-12
    ]


def extrema_variance(dim, nbhd, model, delta0=DEFAULT_DELTA0, accuracy=PAIR_ACCURACY, with_details=False):
    """Truncated-covariance approximation to ``Var(N)``.

    ``sum_i { p_i (1 - p_i) + sum_{j != i, |x_i - x_j| <= delta0} Cov(I_i, I_j) }``
    """
    if dim < 2:
        raise ValueError("dim must be at least 2")
    if delta0 < 1:
        raise ValueError("delta0 must be at least 1")
    nbhd = Neighborhood.parse(nbhd)
    disp = _displacements(delta0)
    margin = int(math.floor(delta0)) + 1
    var = 0.0
    err = 0.0
    n_singular = 0
    pair_mult = {}
    for r, mr in _representatives(dim, margin):
        for c, mc in _representatives(dim, margin):
            mult = mr * mc
            s = (r, c)
            off_s = _rel(neighbors(s, dim, nbhd), s)
            p_s, e_s = _site_probability(_canon_site(off_s), model, P_ACCURACY)
            var += mult * p_s * (1.0 - p_s)
            err += mult * e_s
            for a, b in disp:
                t = (r + a, c + b)
                if not (0 <= t[0] < dim and 0 <= t[1] < dim):
                    continue
                off_t = _rel(neighbors(t, dim, nbhd), t)
                p_t, e_t = _site_probability(_canon_site(off_t), model, P_ACCURACY)
                key = _canon_pair(off_s, (a, b), off_t)
                pair_mult[key] = pair_mult.get(key, 0) + mult
                var -= mult * p_s * p_t
                err += mult * (e_s + e_t)
    for key, mult in pair_mult.items():
        p, e, singular = _pair_probability(key, model, accuracy)
        var += mult * p
        err += mult * e
        n_singular += bool(singular)
    if with_details:
        return var, err, n_singular
    return var


def extrema_moments(dim, nbhd, model, delta0=DEFAULT_DELTA0):
    nbhd = Neighborhood.parse(nbhd)
    mean, err_m = expected_extrema(dim, nbhd, model, with_error=True)
    var, err_v, n_sing = extrema_variance(dim, nbhd, model, delta0, with_details=True)
    sd = math.sqrt(max(var, 0.0))
    return ExtremaMoments(
        expected_count=mean,
        approx_sd=sd,
        neighborhood=nbhd,
        lattice_dim=dim,
        mvn_error_bound=max(err_m, err_v / (2.0 * sd) if sd > 0 else err_v),
        model=model,
        delta0=delta0,
        singular_classes=n_sing,
    )


# ---------------------------------------------------------------------------
# skew-normal integral identity, as a numerical check


def gaussian_integral_identity_check(D, Sigma, Delta, mu, nu, accuracy=1e-9):
    """``|Phi_q(D mu; nu, Delta + D Sigma D^T) - int Phi_q(D y; nu, Delta) phi_p(y; mu, Sigma) dy|``.

    The left side is a single orthant evaluation; the right side is
    adaptive quadrature over ``y`` (``p <= 2``, ``q <= 3``).
    """
    mu = np.atleast_1d(np.asarray(mu, float))
    nu = np.atleast_1d(np.asarray(nu, float))
    p, q = mu.size, nu.size
    if p > 2 or q > 3:
        raise ValueError("identity check supports p <= 2 and q <= 3")
    D = np.asarray(D, float).reshape(q, p)
    Sigma = np.asarray(Sigma, float).reshape(p, p)
    Delta = np.asarray(Delta, float).reshape(q, q)
    lhs = mvn_cdf(D @ mu - nu, Delta + D @ Sigma @ D.T, accuracy).probability

    L = np.linalg.cholesky(Sigma)
    opts = {"epsabs": 1e-12, "epsrel": 1e-12, "limit": 200}

    def inner(u):
        y = mu + L @ u
        if q == 3:
            # QMC noise would make the integrand jagged for adaptive quadrature
            return trivariate_cdf(D @ y - nu, Delta)
        return mvn_cdf(D @ y - nu, Delta, accuracy).probability

    def dens(x):
        return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)

    if p == 1:
        rhs, abserr = integrate.quad(lambda u: inner(np.array([u])) * dens(u), -np.inf, np.inf, **opts)
    else:
        inner_opts = {"epsabs": 1e-11, "epsrel": 1e-11, "limit": 100}
        rhs, abserr = integrate.nquad(
            lambda u2, u1: inner(np.array([u1, u2])) * dens(u1) * dens(u2),
            [[-9.0, 9.0], [-9.0, 9.0]],
            opts=[inner_opts, inner_opts],
        )
    if not np.isfinite(rhs) or abserr > 1e-6:
        raise ArithmeticError(f"quadrature did not converge (estimated error {abserr:.2e})")
    return abs(lhs - rhs)
