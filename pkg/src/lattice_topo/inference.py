"""
Two-sample comparison of fields and goodness of fit against a Gaussian
random field.

Fields are compared through nine buffered 64x64 subsets each: the component
count and the filamentarity of the hole diagram of every subset feed two
Wilcoxon rank-sum tests, combined by Bonferroni.
"""

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np
from scipy import optimize
from scipy.special import ndtr

from .diagrams import DegenerateHullError, peel_summary
from .grid import as_field, empirical_correlation, split_subsets, subset_offsets
from .homology import Neighborhood, local_extrema_mask, sublevel_components, sublevel_holes
from .theory import DEFAULT_DELTA0, CorrelationModel, extrema_moments

EXACT_LIMIT = 20
MIN_VALID_SUBSETS = 7


def default_threads():
    env = os.environ.get("LATTICE_TOPO_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# Wilcoxon rank-sum


def _doubled_midranks(values):
    # 2 * mid-rank, always an integer
    order = np.argsort(values, kind="stable")
    sv = values[order]
    ranks = np.empty(len(values), dtype=np.int64)
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i: j + 1]] = i + j + 2
        i = j + 1
    return ranks


def rank_sum_null_counts(ranks, n):
    """Number of size-``n`` subsets of ``ranks`` (integers) with each sum.

    Returns ``(min_sum, counts)``; counts are exact Python integers.
    """
    ranks = [int(r) for r in ranks]
    lo = sum(sorted(ranks)[:n])
    hi = sum(sorted(ranks)[-n:]) if n else 0
    width = hi - lo + 1
    # dp[k][s - lo_k]: subsets of size k with sum s, kept as dicts for exactness
    dp = [dict() for _ in range(n + 1)]
    dp[0][0] = 1
    for r in ranks:
        for k in range(min(n, len(ranks)), 0, -1):
            prev = dp[k - 1]
            if not prev:
                continue
            cur = dp[k]
            for s, c in prev.items():
                cur[s + r] = cur.get(s + r, 0) + c
    counts = [0] * width
    for s, c in dp[n].items():
        counts[s - lo] = c
    return lo, counts


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    method: str


def wilcoxon_rank_sum(x, y, exact=None):
    """Two-sided Wilcoxon rank-sum test.

    ``statistic`` is the rank sum of ``x`` (mid-ranks under ties).  The
    p-value is exact, by enumerating the null distribution of the observed
    mid-ranks, when ``len(x) + len(y) <= 20`` (or ``exact=True``);
    otherwise it is the tie-corrected normal approximation with continuity
    correction.  Two-sided p is twice the smaller tail, capped at 1.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) == 0 or len(y) == 0:
        raise ValueError("both samples must be nonempty")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples must be finite")
    n, m = len(x), len(y)
    N = n + m
    r2 = _doubled_midranks(np.concatenate([x, y]))
    w2 = int(r2[:n].sum())
    if exact is None:
        exact = N <= EXACT_LIMIT
    if exact:
        lo, counts = rank_sum_null_counts(r2, n)
        total = math.comb(N, n)
        below = sum(counts[: w2 - lo + 1])
        above = sum(counts[w2 - lo:])
        p = min(1.0, 2 * min(below, above) / total)
        return WilcoxonResult(w2 / 2.0, p, "exact")
    # normal approximation on doubled ranks: mean n(N+1), var 4 * nm/12 * (N+1 - T)
    _, tcounts = np.unique(r2, return_counts=True)
    tie = float((tcounts**3 - tcounts).sum()) / (N * (N - 1))
    var2 = 4.0 * n * m / 12.0 * ((N + 1) - tie)
    dev = abs(w2 - n * (N + 1))
    if var2 <= 0:
        return WilcoxonResult(w2 / 2.0, 1.0, "normal")
    z = max(dev - 1.0, 0.0) / math.sqrt(var2)
    return WilcoxonResult(w2 / 2.0, min(1.0, 2.0 * ndtr(-z)), "normal")


def wilcoxon_enumeration(x, y):
    """Two-sided rank-sum p-value by listing every split of the pooled
    mid-ranks.  Slow; for checking."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n = len(x)
    r2 = _doubled_midranks(np.concatenate([x, y]))
    w2 = int(r2[:n].sum())
    below = above = total = 0
    for idx in combinations(range(len(r2)), n):
        s = int(r2[list(idx)].sum())
        total += 1
        below += s <= w2
        above += s >= w2
    return min(1.0, 2 * min(below, above) / total)


def bonferroni(p, k=2):
    return min(1.0, k * p)


# ---------------------------------------------------------------------------
# subset statistics


def _subset_stats(sub, nbhd, retain_fraction):
    count = len(sublevel_components(sub, nbhd))
    try:
        fil = peel_summary(sublevel_holes(sub, nbhd), retain_fraction).filamentarity
    except DegenerateHullError:
        fil = math.nan
    return count, fil


def subset_statistics(fld, nbhd=Neighborhood.CROSS, retain_fraction=0.9, subset_size=64, buffer=32,
                      threads=None):
    """Component counts and hole-diagram filamentarities of each subset
    (``nan`` where the hull is degenerate)."""
    nbhd = Neighborhood.parse(nbhd)
    subs = split_subsets(fld, subset_size, buffer)
    threads = threads or default_threads()
    if threads > 1 and len(subs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(lambda s: _subset_stats(s, nbhd, retain_fraction), subs))
    else:
        res = [_subset_stats(s, nbhd, retain_fraction) for s in subs]
    counts = np.array([r[0] for r in res], dtype=np.int64)
    fils = np.array([r[1] for r in res], dtype=np.float64)
    return counts, fils


@dataclass(frozen=True)
class ComparisonReport:
    p_filamentarity: float
    p_count: float
    p_adjusted: dict
    decision: str
    alpha: float
    counts_a: tuple
    counts_b: tuple
    filamentarity_a: tuple
    filamentarity_b: tuple
    subset_corners: tuple
    canonical: bool = True
    filamentarity_only: bool = False
    retain_fraction: float = 0.9
    neighborhood: str = "cross"

    @property
    def reject(self):
        return self.decision == "reject"

    def to_dict(self):
        d = asdict(self)
        d["filamentarity_a"] = [None if math.isnan(v) else v for v in self.filamentarity_a]
        d["filamentarity_b"] = [None if math.isnan(v) else v for v in self.filamentarity_b]
        d["subset_corners"] = [list(c) for c in self.subset_corners]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["field", "subset", "row0", "col0", "count", "filamentarity"])
        for label, cs, fs in (("a", self.counts_a, self.filamentarity_a), ("b", self.counts_b, self.filamentarity_b)):
            for k, (c, f) in enumerate(zip(cs, fs)):
                r0, c0 = self.subset_corners[k]
                w.writerow([label, k, r0, c0, c, "" if math.isnan(f) else repr(f)])
        return buf.getvalue()


def compare_fields(f1, f2, nbhd=Neighborhood.CROSS, retain_fraction=0.9, alpha=0.05,
                   filamentarity_only=False, subset_size=64, buffer=32, threads=None):
    """Wilcoxon comparison of two fields on subset component counts and
    hole-diagram filamentarities.

    Both p-values are Bonferroni-adjusted (x2) and the fields differ when the
    smaller adjusted value is below ``alpha``.  With
    ``filamentarity_only=True`` the decision uses the unadjusted
    filamentarity p-value alone.
    """
    f1, f2 = as_field(f1), as_field(f2)
    nbhd = Neighborhood.parse(nbhd)
    corners = subset_offsets(f1.shape, subset_size, buffer)
    if subset_offsets(f2.shape, subset_size, buffer) != corners:
        raise ValueError("fields must split into the same subsets")
    g2 = len(corners)
    if g2 < 4:
        raise ValueError(f"need at least 4 subsets per field, got {g2}")
    canonical = f1.shape == f2.shape == (256, 256) and (subset_size, buffer) == (64, 32)
    ca, fa = subset_statistics(f1, nbhd, retain_fraction, subset_size, buffer, threads)
    if f2 is f1:
        cb, fb = ca, fa
    else:
        cb, fb = subset_statistics(f2, nbhd, retain_fraction, subset_size, buffer, threads)
    need = MIN_VALID_SUBSETS if g2 >= 9 else g2 - 1
    va, vb = fa[~np.isnan(fa)], fb[~np.isnan(fb)]
    if len(va) < need or len(vb) < need:
        raise ValueError(
            f"too few nondegenerate subsets for filamentarity ({len(va)} and {len(vb)}, need {need})"
        )
    p_count = wilcoxon_rank_sum(ca, cb).p_value
    p_fil = wilcoxon_rank_sum(va, vb).p_value
    adjusted = {"count": bonferroni(p_count), "filamentarity": bonferroni(p_fil)}
    if filamentarity_only:
        reject = p_fil < alpha
    else:
        reject = min(adjusted.values()) < alpha
    return ComparisonReport(
        p_filamentarity=p_fil,
        p_count=p_count,
        p_adjusted=adjusted,
        decision="reject" if reject else "retain",
        alpha=alpha,
        counts_a=tuple(int(c) for c in ca),
        counts_b=tuple(int(c) for c in cb),
        filamentarity_a=tuple(float(v) for v in fa),
        filamentarity_b=tuple(float(v) for v in fb),
        subset_corners=tuple(corners),
        canonical=canonical,
        filamentarity_only=filamentarity_only,
        retain_fraction=retain_fraction,
        neighborhood=nbhd.value,
    )


# ---------------------------------------------------------------------------
# goodness of fit


def _mean_correlation_offset(shape, model):
    # E[sample mean^2] for unit variance: average correlation over all site pairs
    R, C = shape
    dy = np.arange(R, dtype=np.float64)
    dx = np.arange(C, dtype=np.float64)
    wy = np.where(dy == 0, R, 2.0 * (R - dy))
    wx = np.where(dx == 0, C, 2.0 * (C - dx))
    rho = model.correlation(np.hypot(dy[:, None], dx[None, :]))
    return float((wy[:, None] * wx[None, :] * rho).sum()) / float(R * C) ** 2


@dataclass(frozen=True)
class CorrelationFit:
    model: CorrelationModel
    lags: np.ndarray
    estimates: np.ndarray
    weights: np.ndarray
    cost: float
    mean_offset: float


def fit_matern(fld, max_lag=50, mean_correction=True, binning="exact"):
    """Weighted least-squares Matern fit to the sample correlation at lags
    ``1..max_lag`` with pair counts as weights.

    The sample correlation is centred at the sample mean, which pulls it
    down by about ``v``, the average correlation over all pairs of sites:
    ``E[r(h)] ~ (rho(h) - v) / (1 - v)``.  With ``mean_correction`` the
    model is fitted in that form.
    """
    fld = as_field(fld)
    max_lag = min(int(max_lag), min(fld.shape) - 1)
    ec = empirical_correlation(fld, max_lag, binning=binning)
    sel = ec.lags >= 1
    lags, est, w = ec.lags[sel], ec.estimates[sel], ec.counts[sel].astype(float)
    sw = np.sqrt(w / w.sum())

    def predict(theta):
        model = CorrelationModel.matern(math.exp(theta[0]), math.exp(theta[1]))
        rho = model.correlation(lags)
        if mean_correction:
            v = _mean_correlation_offset(fld.shape, model)
            rho = (rho - v) / (1.0 - v)
        return rho

    def resid(theta):
        return sw * (predict(theta) - est)

    lo = [math.log(0.05), math.log(0.1)]
    hi = [math.log(5.0), math.log(10.0 * max(fld.shape))]
    best = None
    for nu0, eta0 in ((0.5, 10.0), (1.0, 20.0), (0.5, 50.0)):
        res = optimize.least_squares(resid, [math.log(nu0), math.log(eta0)], bounds=(lo, hi),
                                     x_scale=1.0, xtol=1e-10, ftol=1e-12)
        if res.success and (best is None or res.cost < best.cost):
            best = res
    if best is None or not np.all(np.isfinite(best.x)):
        raise ArithmeticError("correlation fit did not converge")
    model = CorrelationModel.matern(math.exp(best.x[0]), math.exp(best.x[1]))
    v = _mean_correlation_offset(fld.shape, model) if mean_correction else 0.0
    return CorrelationFit(model, lags, est, w, float(best.cost), v)


@dataclass(frozen=True)
class GofReport:
    observed_components: int
    observed_holes: int
    fitted_model: CorrelationModel
    expected: float
    sd: float
    z_components: float
    z_holes: float
    neighborhood: str = "cross"
    dim: int = 0
    marginal_warning: bool = False
    mvn_error: float = 0.0

    @staticmethod
    def z(observed, expected, sd):
        return (observed - expected) / sd

    def to_dict(self):
        d = asdict(self)
        d["fitted_model"] = self.fitted_model.to_dict()
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def gof_grf(fld, nbhd=Neighborhood.CROSS, delta0=DEFAULT_DELTA0, max_lag=50, model=None):
    """Observed component and hole counts against their Gaussian-field
    expectation under a Matern fitted to the field (or ``model``).

    The field should already be detrended and normal-scored;
    ``marginal_warning`` is set when its mean or variance is off by more
    than 0.05.
    """
    fld = as_field(fld)
    nbhd = Neighborhood.parse(nbhd)
    if fld.rows != fld.cols:
        raise ValueError("goodness of fit needs a square field")
    mu, var = float(fld.values.mean()), float(fld.values.var())
    warn = abs(mu) > 0.05 or abs(var - 1.0) > 0.05
    if model is None:
        model = fit_matern(fld, max_lag).model
    comps = sublevel_components(fld, nbhd)
    holes = sublevel_holes(fld, nbhd)
    n0 = len(comps)
    n1 = hole_count(fld, nbhd, holes)
    mom = extrema_moments(fld.rows, nbhd, model, delta0)
    e, sd = mom.expected_count, mom.approx_sd
    return GofReport(
        observed_components=n0,
        observed_holes=n1,
        fitted_model=model,
        expected=e,
        sd=sd,
        z_components=GofReport.z(n0, e, sd),
        z_holes=GofReport.z(n1, e, sd),
        neighborhood=nbhd.value,
        dim=fld.rows,
        marginal_warning=warn,
        mvn_error=mom.mvn_error_bound,
    )


# ---------------------------------------------------------------------------
# summary battery


def hole_count(fld, nbhd, holes=None):
    """Hole pairs ending at a strict local maximum.

    Equal to the number of hole pairs for fields without ties; on plateaus
    the tie-breaking order creates pairs at non-strict maxima, which are
    not counted.
    """
    if holes is None:
        holes = sublevel_holes(fld, nbhd)
    if len(holes) == 0:
        return 0
    mask = local_extrema_mask(fld, nbhd, "maxima")
    return int(mask[holes.death_sites[:, 0], holes.death_sites[:, 1]].sum())


@dataclass(frozen=True)
class SummaryBattery:
    n0: int
    n1: int
    components: object
    holes: object
    errors: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "N0": self.n0,
            "N1": self.n1,
            "components": self.components.to_dict() if self.components else None,
            "holes": self.holes.to_dict() if self.holes else None,
            "errors": dict(self.errors),
        }


def summary_battery(fld, nbhd=Neighborhood.CROSS, retain_fraction=0.9, diagrams=None):
    """``N0``, ``N1`` and the convex-peel summaries of both diagrams.

    A degenerate hull leaves that kind's summary as ``None`` and records
    the message in ``errors``.
    """
    fld = as_field(fld)
    nbhd = Neighborhood.parse(nbhd)
    if diagrams is None:
        diagrams = (sublevel_components(fld, nbhd), sublevel_holes(fld, nbhd))
    comps, holes = diagrams
    out = {}
    errors = {}
    for name, dg in (("components", comps), ("holes", holes)):
        try:
            out[name] = peel_summary(dg, retain_fraction)
        except DegenerateHullError as exc:
            out[name] = None
            errors[name] = str(exc)
    return SummaryBattery(len(comps), hole_count(fld, nbhd, holes), out["components"], out["holes"], errors)
