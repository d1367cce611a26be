"""One check per acceptance criterion; each records PASS/FAIL with its numbers."""

import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import flood_fill_betti, record
from lattice_topo.cli import main as cli_main
from lattice_topo.diagrams import bottleneck_distance
from lattice_topo.grid import empirical_correlation
from lattice_topo.homology import betti_curve, count_local_extrema
from lattice_topo.inference import compare_fields, wilcoxon_enumeration, wilcoxon_rank_sum
from lattice_topo.models import ModelSpec, simulate_grf, simulate_model
from lattice_topo.theory import (
    CorrelationModel,
    expected_extrema,
    extrema_variance,
    extremum_probability,
    gaussian_integral_identity_check,
    zero_correlation_model,
)
from oracles import brute_force_bottleneck, random_diagram

EXP20 = CorrelationModel.exponential(20)
ROOT = Path(__file__).resolve().parents[1]


def test_1_expected_extrema_table():
    want = {("cross", 32): 128.4, ("cross", 64): 497.9, ("cross", 256): 7786.5,
            ("square", 32): 68.9, ("square", 64): 258.3, ("square", 256): 3929.5}
    t0 = time.perf_counter()
    rel = {}
    for (nb, d), ref in want.items():
        rel[(nb, d)] = expected_extrema(d, nb, EXP20) / ref - 1.0
    elapsed = time.perf_counter() - t0
    ok = all(abs(r) <= 0.005 for r in rel.values()) and elapsed < 300
    detail = ", ".join(f"{nb[0].upper()}{d}:{100 * r:+.3f}%" for (nb, d), r in rel.items())
    record("1 Table 1 analytic", ok, f"{detail}; {elapsed:.0f}s")
    assert ok


def test_2_simulated_extrema_d64():
    t0 = time.perf_counter()
    counts = np.array([count_local_extrema(simulate_grf(64, EXP20, 700_000 + s), "cross") for s in range(200)])
    elapsed = time.perf_counter() - t0
    mean, se = counts.mean(), counts.std(ddof=1) / math.sqrt(len(counts))
    ok = abs(mean - 497.9) <= 3 * se and elapsed < 600
    record("2 Table 1 simulation", ok, f"mean {mean:.1f} (se {se:.2f}) vs 497.9; {elapsed:.0f}s")
    assert ok


def test_3_extrema_sd_table():
    sd_c64 = math.sqrt(extrema_variance(64, "cross", EXP20))
    sd_s32 = math.sqrt(extrema_variance(32, "square", EXP20))
    r1, r2 = sd_c64 / 17.2 - 1, sd_s32 / 6.6 - 1
    ok = abs(r1) <= 0.05 and abs(r2) <= 0.10
    record("3 Table 2", ok, f"Cross d=64 sd {sd_c64:.2f} ({100 * r1:+.1f}%), Square d=32 sd {sd_s32:.2f} ({100 * r2:+.1f}%)")
    assert ok


def test_4_zero_correlation_limits():
    zero = zero_correlation_model()
    pc, ec = extremum_probability((20, 20), 64, "cross", zero, with_error=True)
    ps, es = extremum_probability((20, 20), 64, "square", zero, with_error=True)
    analytic = abs(pc - 0.2) <= ec and abs(ps - 1 / 9) <= es
    rng = np.random.default_rng(44)
    fields = [rng.normal(size=(128, 128)) for _ in range(50)]
    rc = np.mean([count_local_extrema(z, "cross") for z in fields]) / 128**2
    rs = np.mean([count_local_extrema(z, "square") for z in fields]) / 128**2
    dc, ds = rc * 5 - 1, rs * 9 - 1
    ok = analytic and abs(dc) <= 0.02 and abs(ds) <= 0.02
    record("4 zero-correlation limits", ok,
           f"p_cross-1/5={pc - 0.2:+.1e} (err {ec:.1e}), p_square-1/9={ps - 1 / 9:+.1e} (err {es:.1e}); "
           f"iid ratio cross {100 * dc:+.2f}%, square {100 * ds:+.2f}%")
    assert ok


TABLE3 = {
    "chisq1": ((0.946, 0.012), (0.755, 0.046), (0.565, 0.076), (0.220, 0.106)),
    "chisq3": ((0.952, 0.009), (0.770, 0.040), (0.590, 0.066), (0.264, 0.095)),
    "t3": ((0.950, 0.006), (0.763, 0.028), (0.585, 0.047), (0.260, 0.076)),
    "f33": ((0.948, 0.009), (0.762, 0.037), (0.584, 0.061), (0.272, 0.080)),
}
TABLE3_GAUSS = {1: 0.950, 2: 0.905, 3: 0.861, 5: 0.779, 10: 0.607, 25: 0.287, 50: 0.082}
LAGS = (1, 5, 10, 25)


def test_5_correlation_table():
    worst = {}
    ok = True
    for mid, rows in TABLE3.items():
        spec = ModelSpec.default(mid)
        est = np.array([
            [empirical_correlation(simulate_model(256, spec, 800_000 + r), 25, binning="exact").at(k) for k in LAGS]
            for r in range(20)
        ]).mean(axis=0)
        z = [(est[i] - m) / sd for i, (m, sd) in enumerate(rows)]
        worst[mid] = max(z, key=abs)
        ok &= all(abs(v) <= 2 for v in z)
    exact = all(
        abs(EXP20.correlation(d) - math.exp(-d / 20)) < 1e-15 for d in TABLE3_GAUSS
    )
    rounding = max(abs(EXP20.correlation(d) - v) for d, v in TABLE3_GAUSS.items())
    ok &= exact
    detail = ", ".join(f"{m} {v:+.2f}sd" for m, v in worst.items())
    record("5 Table 3", ok, f"worst deviation per model: {detail}; Gauss analytic, max |table-exp| {rounding:.4f}")
    assert ok


@pytest.mark.slow
def test_6_size_and_power():
    def rate(a, b, base):
        rej = 0
        for i in range(200):
            fa = simulate_model(256, a, base + 2 * i)
            fb = simulate_model(256, b, base + 2 * i + 1)
            rej += compare_fields(fa, fb).reject
        return rej / 200

    gg = rate("gauss", "gauss", 900_000)
    gc = rate("gauss", "chisq1", 910_000)
    cf = rate("chisq3", "f33", 920_000)
    ok = 0.02 <= gg <= 0.10 and gc >= 0.95 and 0.05 <= cf <= 0.30
    record("6 Table 4", ok, f"Gauss-Gauss {gg:.3f}, Gauss-chisq1 {gc:.3f}, chisq3-F33 {cf:.3f}")
    assert ok


def test_7_oracles():
    rng = np.random.default_rng(77)
    betti_ok = True
    for trial in range(500):
        nb = "cross" if trial % 2 == 0 else "square"
        z = rng.normal(size=(12, 12))
        if trial % 5 == 0:
            z = np.round(z, 1)
        levels = np.sort(rng.choice(z.ravel(), 10, replace=False))
        bc = betti_curve(z, nb, levels)
        betti_ok &= all((b0, b1) == flood_fill_betti(z, t, nb) for t, b0, b1 in zip(levels, bc.beta0, bc.beta1))

    bott_ok = all(
        bottleneck_distance(A, B) == brute_force_bottleneck(A, B)
        for A, B in ((random_diagram(rng, 5, integer=k % 2 == 0), random_diagram(rng, 5)) for k in range(200))
    )

    wil_ok = True
    for n in range(1, 6):
        for _ in range(20):
            x = rng.integers(0, 7, size=n).astype(float)
            y = rng.integers(0, 7, size=n).astype(float)
            wil_ok &= wilcoxon_rank_sum(x, y).p_value == wilcoxon_enumeration(x, y)

    dims = [(1, 1), (1, 2), (2, 1), (2, 2), (1, 3)]
    worst = 0.0
    for k in range(50):
        p, q = dims[k % len(dims)]
        D = rng.normal(size=(q, p))
        a = rng.normal(size=(p, p))
        b = rng.normal(size=(q, q))
        r = gaussian_integral_identity_check(
            D, a @ a.T + 0.2 * np.eye(p), b @ b.T + 0.2 * np.eye(q), rng.normal(size=p), rng.normal(size=q),
            accuracy=1e-8 if q < 3 else 1e-7,
        )
        worst = max(worst, r)
    ident_ok = worst < 1e-6
    ok = betti_ok and bott_ok and wil_ok and ident_ok
    record("7 oracles", ok, f"betti {betti_ok}, bottleneck {bott_ok}, wilcoxon {wil_ok}, identity max residual {worst:.1e}")
    assert ok


def _cli(*argv):
    code = cli_main([str(a) for a in argv])
    assert code == 0, argv
    return code


def test_8_pipeline_on_simulated_fields(tmp_path, capsys):
    paths = {}
    for name, mid, seed in (("gauss_a", "gauss", 1), ("gauss_b", "gauss", 2), ("chisq1", "chisq1", 3)):
        paths[name] = tmp_path / f"{name}.ltgf"
        _cli("simulate", "--model", mid, "--dim", 256, "--seed", seed, "-o", paths[name])
    capsys.readouterr()
    counts, gof = {}, {}
    for name, p in paths.items():
        _cli("analyze", p, "-o", tmp_path / f"an_{name}")
        counts[name] = json.loads(capsys.readouterr().out)["N0"]
        _cli("gof", p)
        gof[name] = json.loads(capsys.readouterr().out)["z_components"]
    _cli("compare", paths["gauss_a"], paths["chisq1"])
    gc = json.loads(capsys.readouterr().out)
    _cli("compare", paths["gauss_a"], paths["gauss_b"])
    gg = json.loads(capsys.readouterr().out)
    _cli("bottleneck", "--from-fields", *paths.values(), "--threads", 4)
    matrix = capsys.readouterr().out.strip().splitlines()
    ok = abs(gof["chisq1"]) > 5 and gc["decision"] == "reject" and gg["decision"] == "retain" and len(matrix) == 28
    record("8 pipeline", ok,
           f"N0 {counts}; gof z {', '.join(f'{k} {v:+.1f}' for k, v in gof.items())}; "
           f"G-chisq1 {gc['decision']} (min adj p {min(gc['p_adjusted'].values()):.1e}); "
           f"G-G {gg['decision']} (min adj p {min(gg['p_adjusted'].values()):.2f})")
    assert ok


def test_9_fast_suite():
    env = dict(os.environ)
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-m", "not slow", "-p", "no:cacheprovider",
         "--ignore", str(ROOT / "tests" / "test_acceptance.py"), str(ROOT / "tests")],
        cwd=ROOT, env=env, capture_output=True, text=True,
    )
    elapsed = time.perf_counter() - t0
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    failed = [ln.split(" ")[1] for ln in proc.stdout.splitlines() if ln.startswith("FAILED")]
    ok = proc.returncode == 0 and elapsed < 300
    record("9 property suites", ok, f"{tail}; {elapsed:.0f}s; failing: {failed or 'none'}")
    assert ok
