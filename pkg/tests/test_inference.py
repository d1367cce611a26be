import csv
import io
import json
import math

import numpy as np
import pytest
from scipy import stats

from lattice_topo.homology import count_local_extrema, sublevel_components
from lattice_topo.inference import (
    GofReport,
    bonferroni,
    compare_fields,
    fit_matern,
    gof_grf,
    hole_count,
    summary_battery,
    wilcoxon_enumeration,
    wilcoxon_rank_sum,
)
from lattice_topo.models import simulate_grf, simulate_model
from lattice_topo.theory import CorrelationModel, extrema_moments

EXP20 = CorrelationModel.exponential(20)


def test_wilcoxon_separated_samples():
    res = wilcoxon_rank_sum(np.arange(1, 10), np.arange(10, 19))
    assert res.method == "exact"
    assert res.p_value == pytest.approx(2 / math.comb(18, 9), rel=1e-12)
    assert res.statistic == 45


def test_wilcoxon_identical_and_small():
    assert wilcoxon_rank_sum([3, 1, 2], [2, 3, 1]).p_value == 1.0
    assert wilcoxon_rank_sum([1, 2], [3, 4]).p_value == pytest.approx(1 / 3, abs=1e-15)


def test_wilcoxon_errors():
    with pytest.raises(ValueError):
        wilcoxon_rank_sum([], [1.0])
    with pytest.raises(ValueError):
        wilcoxon_rank_sum([np.nan], [1.0])


def test_wilcoxon_exact_equals_enumeration():
    rng = np.random.default_rng(0)
    for n in range(1, 6):
        for m in range(1, 6):
            for _ in range(6):
                x = rng.integers(0, 6, size=n).astype(float)
                y = rng.integers(0, 6, size=m).astype(float)
                assert wilcoxon_rank_sum(x, y).p_value == wilcoxon_enumeration(x, y)


def test_wilcoxon_normal_close_to_exact():
    rng = np.random.default_rng(1)
    for shift in np.linspace(0, 2.5, 30):
        x = rng.normal(size=9)
        y = rng.normal(size=9) + shift
        e = wilcoxon_rank_sum(x, y, exact=True).p_value
        a = wilcoxon_rank_sum(x, y, exact=False).p_value
        assert abs(e - a) < 0.02


def test_wilcoxon_normal_matches_scipy_large():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=30), rng.normal(size=25) + 0.5
    ours = wilcoxon_rank_sum(x, y)
    ref = stats.mannwhitneyu(x, y, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert ours.method == "normal"
    assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_bonferroni_monotone():
    for p in np.linspace(0, 1, 101):
        assert bonferroni(p) >= p
        assert bonferroni(p) <= 1.0
    assert bonferroni(0.3) == pytest.approx(0.6)


@pytest.fixture(scope="module")
def gauss_pair():
    return simulate_model(256, "gauss", 1), simulate_model(256, "gauss", 2)


def test_compare_same_object(gauss_pair):
    a, _ = gauss_pair
    rep = compare_fields(a, a)
    assert rep.p_count == 1.0 and rep.p_filamentarity == 1.0
    assert rep.decision == "retain" and not rep.reject
    assert rep.canonical


def test_compare_symmetric(gauss_pair):
    a, b = gauss_pair
    r1 = compare_fields(a, b)
    r2 = compare_fields(b, a)
    assert (r1.p_count, r1.p_filamentarity) == (r2.p_count, r2.p_filamentarity)
    assert r1.p_adjusted == {"count": bonferroni(r1.p_count), "filamentarity": bonferroni(r1.p_filamentarity)}
    assert r1.reject == (min(r1.p_adjusted.values()) < r1.alpha)


def test_compare_serialization(gauss_pair):
    a, b = gauss_pair
    rep = compare_fields(a, b, threads=3)
    d = json.loads(rep.to_json())
    assert len(d["counts_a"]) == 9 and len(d["filamentarity_b"]) == 9
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    assert len(rows) == 18
    assert rows[0]["count"] == str(rep.counts_a[0])
    assert compare_fields(a, b, threads=1) == rep


def test_compare_detects_chisq(gauss_pair):
    a, _ = gauss_pair
    rep = compare_fields(a, simulate_model(256, "chisq1", 3))
    assert rep.reject


def test_compare_filamentarity_only(gauss_pair):
    a, b = gauss_pair
    rep = compare_fields(a, b, filamentarity_only=True)
    assert rep.reject == (rep.p_filamentarity < rep.alpha)


def test_compare_noncanonical_and_errors(rng):
    f = simulate_grf(224, EXP20, 5)
    g = simulate_grf(224, EXP20, 6)
    rep = compare_fields(f, g)
    assert not rep.canonical and len(rep.counts_a) == 4
    with pytest.raises(ValueError):
        compare_fields(rng.normal(size=(128, 128)), rng.normal(size=(128, 128)))
    with pytest.raises(ValueError):
        compare_fields(np.zeros((256, 256)), np.zeros((256, 256)))
    with pytest.raises(ValueError):
        compare_fields(rng.normal(size=(256, 256)), rng.normal(size=(224, 224)))


def test_gof_report_z():
    assert GofReport.z(100, 100.0, 7.0) == 0.0
    assert GofReport.z(93, 100.0, 7.0) == -1.0


def test_gof_with_given_model():
    f = simulate_model(64, "gauss", 9)
    rep = gof_grf(f, model=CorrelationModel.exponential(5.0))
    assert rep.observed_components == count_local_extrema(f, which="minima")
    assert rep.z_components == (rep.observed_components - rep.expected) / rep.sd
    assert rep.z_holes == (rep.observed_holes - rep.expected) / rep.sd
    d = json.loads(rep.to_json())
    assert d["fitted_model"]["eta"] == 5.0
    with pytest.raises(ValueError):
        gof_grf(np.zeros((4, 5)))


def test_gof_marginal_warning():
    f = simulate_model(64, "gauss", 9).values * 3 + 1
    assert gof_grf(f, model=CorrelationModel.exponential(5.0)).marginal_warning


def test_fit_matern_tracks_empirical_profile():
    f = simulate_grf(256, EXP20, 21)
    fit = fit_matern(f)
    assert 0.05 <= fit.model.nu <= 5
    pred = (fit.model.correlation(fit.lags) - fit.mean_offset) / (1 - fit.mean_offset)
    assert np.average(np.abs(pred - fit.estimates), weights=fit.weights) < 0.05


def test_battery_constant_field():
    b = summary_battery(np.full((8, 8), 2.0))
    assert (b.n0, b.n1) == (1, 0)
    assert b.components is None and b.holes is None
    assert set(b.errors) == {"components", "holes"}
    assert json.loads(json.dumps(b.to_dict()))["N0"] == 1


def test_battery_negation_swaps_counts():
    rng = np.random.default_rng(4)
    for _ in range(20):
        z = rng.normal(size=(32, 32))
        a, b = summary_battery(z), summary_battery(-z)
        assert (a.n0, a.n1) == (b.n1, b.n0)
        assert a.n1 == hole_count(z, "cross") == count_local_extrema(z, "cross", "maxima")


def test_battery_gauss_count_within_three_sd():
    f = simulate_model(256, "gauss", 31)
    mom = extrema_moments(256, "cross", EXP20)
    b = summary_battery(f)
    assert abs(b.n0 - mom.expected_count) < 3 * mom.approx_sd
    assert b.n0 == len(sublevel_components(f))
    assert 0 <= b.holes.filamentarity <= 1


@pytest.mark.slow
def test_gof_null_calibration():
    inside = 0
    for s in range(100):
        rep = gof_grf(simulate_model(256, "gauss", 50_000 + s))
        inside += abs(rep.z_components) < 3
    assert inside >= 95


@pytest.mark.slow
def test_gof_flags_chisq1():
    flagged = 0
    for s in range(100):
        rep = gof_grf(simulate_model(256, "chisq1", 60_000 + s))
        flagged += rep.z_components < -5
    assert flagged >= 95
