"""End-to-end acceptance checks at full sample sizes.

Each test records one PASS/FAIL line; the lines are repeated in the
terminal summary.  Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import stats as sps

from acceptance_log import record
from cctest import corr, mc, rng
from cctest.rng import RngStream
from cctest.stats import (
    Method,
    PValueVector,
    cauchy_transform,
    cct_combine,
    cct_pvalue,
    cct_statistic_batch,
    norm_sf2,
)

SIZE_RHO = {
    "ar1": (0.2, 0.4, 0.6, 0.8, 0.99),
    "polydecay": (0.5, 1.0, 1.5, 2.0, 2.5),
    "singular": (0.2, 0.4, 0.6, 0.8, 0.99),
}
POWER_RHO = tuple(round(0.05 * k, 2) for k in range(9))


def joint_se(a, b):
    return math.hypot(a.std_error, b.std_error)


def test_01_analytic_identities():
    lo = np.logspace(-15, math.log10(0.5), 2000)
    grid = np.concatenate([lo, 1.0 - lo[lo >= 1e-10]])
    back = cct_pvalue(cauchy_transform(grid))
    worst_rt = float(np.max(np.abs(back - grid) / grid))
    worst_pd = 0.0
    gen = np.random.default_rng(0)
    for p in np.logspace(-15, math.log10(0.99), 60):
        for d in (1, 2, 7, 50):
            w = gen.dirichlet(np.ones(d))
            w = w / math.fsum(w)
            if abs(math.fsum(w) - 1) > 1e-12:
                continue
            r = cct_combine(PValueVector([p] * d, w))
            worst_pd = max(worst_pd, abs(r.p_value - p) / p)
    ok = worst_rt <= 1e-12 and worst_pd <= 1e-12
    record(1, ok, "analytic identities",
           f"round-trip max rel err {worst_rt:.2e}, perfect dependence max rel err {worst_pd:.2e}")
    assert ok


def test_02_exact_cauchy_null():
    n, d = 100_000, 20
    z = rng.normals(rng.derive_key(20240101, 2), np.arange(n), d)
    t = cct_statistic_batch(norm_sf2(z))
    ks = sps.kstest(t, "cauchy")
    crit = sps.kstwo.ppf(0.99, n)
    ok = ks.statistic < crit
    record(2, ok, "Cauchy null under independence",
           f"KS D={ks.statistic:.5f} < {crit:.5f} (p={ks.pvalue:.3f})")
    assert ok


def test_03_tail_accuracy_ar1_polydecay_singular():
    bad = []
    worst = {1e-2: (0.0, None), 1e-3: (0.0, None)}
    bounds = {1e-2: (0.9, 1.1), 1e-3: (0.8, 1.2)}
    k = 0
    for model, rhos in SIZE_RHO.items():
        for d in (5, 20, 50):
            for rho in rhos:
                cfg = mc.SizeConfig(corr.build_model(model, d, rho), n_samples=1_000_000,
                                    alphas=(1e-2, 1e-3), seed=3, experiment_id=k)
                k += 1
                rep = mc.empirical_size(cfg)
                for a, (lo, hi) in bounds.items():
                    r = rep.cell(a).ratio
                    if abs(r - 1) > worst[a][0]:
                        worst[a] = (abs(r - 1), (model, d, rho, r))
                    if not lo <= r <= hi:
                        bad.append(f"{model} d={d} rho={rho} alpha={a:g} ratio={r:.3f}")
                print(f"  {model:9s} d={d:2d} rho={rho:<4} "
                      f"ratio@1e-2={rep.cell(1e-2).ratio:.3f} ratio@1e-3={rep.cell(1e-3).ratio:.3f}")
    ok = not bad
    detail = f"{45 - len({b.rsplit(' alpha', 1)[0] for b in bad})}/45 cells in bounds"
    if bad:
        detail += "; out of bounds: " + "; ".join(bad)
    record(3, ok, "tail accuracy, ar1/polydecay/singular, n=1e6", detail)
    assert ok, detail


def test_04_accuracy_improves_as_alpha_shrinks():
    cfg = mc.SizeConfig(corr.ar1_correlation(20, 0.6), n_samples=10_000_000,
                        alphas=(1e-1, 1e-2, 1e-3), seed=4)
    rep = mc.empirical_size(cfg)
    hi, lo = rep.cell(1e-1), rep.cell(1e-3)
    slack = 2 * math.hypot(hi.std_error, lo.std_error)
    ok = abs(lo.ratio - 1) <= abs(hi.ratio - 1) + slack
    record(4, ok, "accuracy trend in alpha",
           f"|r(1e-3)-1|={abs(lo.ratio - 1):.4f} <= |r(1e-1)-1|={abs(hi.ratio - 1):.4f} "
           f"+ {slack:.4f} (r(1e-2)={rep.cell(1e-2).ratio:.4f})")
    assert ok


def test_05_conservative_pvalues():
    cfg = mc.SizeConfig(corr.ar1_correlation(10, 0.4), n_samples=1_000_000,
                        alphas=(1e-2, 1e-3), variance_deflation=0.8, seed=5)
    rep = mc.empirical_size(cfg)
    parts, ok = [], True
    for a in (1e-2, 1e-3):
        c = rep.cell(a)
        ok &= c.ratio <= 1 + 3 * c.std_error
        parts.append(f"alpha={a:g}: ratio {c.ratio:.4f} <= {1 + 3 * c.std_error:.4f}")
    record(5, ok, "variance-deflated z-scores stay conservative", "; ".join(parts))
    assert ok


def test_06_oracle_equivalence():
    sigma = corr.ar1_correlation(10, 0.5)
    n = 1_000_000
    null = mc.null_statistics([Method.CCT], sigma, n, RngStream(6, 1))[Method.CCT]
    c, _ = mc.quantile_from_null(Method.CCT, null, 1e-3)
    analytic = cct_pvalue(c)
    est = mc.mc_pvalue_oracle(Method.CCT, sigma, c, n, RngStream(6, 2))
    se = math.sqrt(est.p_value * (1 - est.p_value) / n)
    ok = abs(analytic - est.p_value) <= 3 * se
    record(6, ok, "analytic p-value vs Monte Carlo oracle",
           f"quantile {c:.2f}: analytic {analytic:.6f}, oracle {est.p_value:.6f} "
           f"+/- {se:.6f}")
    assert ok


def _power(fraction, seed):
    cfg = mc.PowerConfig(d=20, signal_fraction=fraction, rho_grid=POWER_RHO, alpha=0.05,
                         n_crit_samples=10_000, n_power_samples=5_000,
                         signal_strength_rule="cube_root", seed=seed)
    return mc.power_grid(cfg)


def test_07_power_orderings():
    p20, p10 = _power(0.2, 71), _power(0.1, 72)

    bj, mp_ = p20.cell("BJ", 0.0), p20.cell("MinP", 0.0)
    ok_a = bj.power - mp_.power >= 2 * joint_se(bj, mp_)

    cct = p10.cell("CCT", 0.4)
    ok_b = all(cct.power >= p10.cell(m, 0.4).power - 2 * joint_se(cct, p10.cell(m, 0.4))
               for m in ("HC", "BJ"))

    cct_range = np.ptp([p20.cell("CCT", r).power for r in POWER_RHO])
    spread = max(abs(p20.cell("MinP", r).power - p20.cell("BJ", r).power) for r in POWER_RHO)
    ok_c = cct_range < spread

    ok = ok_a and ok_b and ok_c
    record(7, ok, "power orderings at d=20",
           f"(a) BJ {bj.power:.3f} vs MinP {mp_.power:.3f} [{ok_a}]; "
           f"(b) CCT {cct.power:.3f} vs HC {p10.cell('HC', 0.4).power:.3f}, "
           f"BJ {p10.cell('BJ', 0.4).power:.3f} [{ok_b}]; "
           f"(c) CCT range {cct_range:.3f} < MinP-BJ spread {spread:.3f} [{ok_c}]")
    assert ok


def test_08_power_trend_with_dimension():
    rep = mc.power_trend_sparse(0.2, 1.2, [100, 500, 2000], bandwidth=3, alpha=0.05,
                                n_samples=10_000, rho=0.5, seed=8)
    cells = rep.cells
    ok = all(b.power >= a.power - 2 * joint_se(a, b) for a, b in zip(cells, cells[1:]))
    ok = ok and cells[-1].power >= 0.9
    record(8, ok, "CCT power grows with d",
           ", ".join(f"d={c.d}: {c.power:.4f}" for c in cells))
    assert ok


def test_09_multivariate_t_noise():
    parts, ok = [], True
    for i, rho in enumerate((0.2, 0.8)):
        cfg = mc.SizeConfig(corr.ar1_correlation(20, rho), n_samples=1_000_000, alphas=(1e-3,),
                            noise="student_t", nu=4, seed=9, experiment_id=i)
        r = mc.empirical_size(cfg).cell(1e-3).ratio
        ok &= 0.6 <= r <= 1.4
        parts.append(f"rho={rho}: ratio {r:.3f}")
    record(9, ok, "t4 noise size at 1e-3 within [0.6, 1.4]", "; ".join(parts))
    assert ok


def test_10_performance_and_determinism(tmp_path):
    cfg = tmp_path / "size.json"
    cfg.write_text('{"model": "ar1", "d": 20, "rho": 0.6, "n_samples": 1000000}')
    outs, times = [], []
    for threads in (1, 4):
        out = tmp_path / f"size_{threads}.csv"
        t0 = time.perf_counter()
        res = subprocess.run([sys.executable, "-m", "cctest", "size-sim", str(cfg), "--seed", "10",
                              "--threads", str(threads), "--out", str(out)],
                             capture_output=True, text=True)
        times.append(time.perf_counter() - t0)
        assert res.returncode == 0, res.stderr
        outs.append(out.read_bytes())
    ok = max(times) < 60 and outs[0] == outs[1]
    record(10, ok, "size-sim speed and thread determinism",
           f"wall {times[0]:.1f}s (1 thread), {times[1]:.1f}s (4 threads); "
           f"identical CSV: {outs[0] == outs[1]}")
    assert ok
