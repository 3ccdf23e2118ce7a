"""Acceptance criteria at their stated replica counts and tolerances.

Each test prints one PASS/FAIL line, repeated in the terminal summary.
Run alone with ``pytest tests/test_acceptance.py -v``; the full module takes
about 18 minutes on one core.
"""

import numpy as np
import pytest

from sirwlab import blp as B
from sirwlab import diffusion as D
from sirwlab import raylab as R
from sirwlab import urn as U
from sirwlab import walk as Wk
from sirwlab import weights as W
from sirwlab.parallel import stream

pytestmark = pytest.mark.acceptance

CONST = W.constant(1.0)
POLY1 = W.polynomial(1.0)


def test_criterion_01_structural_identities(verdict):
    weights = [CONST, POLY1, W.pq(2.0), W.asymptotically_free(1.0, 0.5)]
    bad_walks, worst = 0, 0.0
    for i in range(1000):
        traj = Wk.new_walk(weights[i % 4], stream(101, i)).run_for_steps(10**4)
        if any(Wk.identity_residuals(traj.final).values()):
            bad_walks += 1
        worst = max(worst, float(np.abs(traj.positions - traj.martingale - traj.drift).max()))
    rng = stream(101, 0, tag=1)
    variants = list(U.Variant)
    bad_urns = 0
    for i in range(10**4):
        n = int(rng.integers(1, 200))
        rec = U.run_to_blue_count(U.UrnState(variants[i % 3], weights[i % 4]), n, rng)
        if rec.discrepancy_at_tau != rec.tau - 2 * n or rec.blues != n:
            bad_urns += 1
    ok = bad_walks == 0 and worst <= 1e-9 and bad_urns == 0
    assert verdict(1, ok, f"walks violating identities {bad_walks}/1000, max |X-M-Gamma| {worst:.2e}, "
                          f"urn records violating D=tau-2n {bad_urns}/10000")


def test_criterion_02_urn_oracle(verdict):
    rng = stream(102, 0)
    worst, where = 0.0, None
    for w, name in ((CONST, "const"), (POLY1, "poly1")):
        for variant in U.Variant:
            for n in range(1, 9):
                law = U.exact_law(variant, w, n)
                for sampler in ("direct", "rubin"):
                    tv = U.total_variation(law, U.sample_discrepancy(variant, w, n, 10**6, rng, sampler))
                    if tv > worst:
                        worst, where = tv, (name, variant.value, n, sampler)
    assert verdict(2, worst <= 0.01, f"max TV {worst:.4f} at {where} (tol 0.01, 96 cases)")


@pytest.fixture(scope="module")
def urn_scan():
    return U.moment_scan(U.Variant.PLUS, POLY1, [5000], 2 * 10**5, seed=103)


def test_criterion_03_urn_mean_limit(urn_scan, verdict):
    cv = urn_scan.get("mean_D_cv", 5000)
    plain = urn_scan.get("mean_D", 5000)
    ok = abs(cv.estimate - 1 / 6) <= 0.02
    assert verdict(3, ok, f"E[D] = {cv.estimate:.4f} +- {cv.se:.4f} with control variate "
                          f"(plain {plain.estimate:.4f} +- {plain.se:.4f}); target 1/6, tol 0.02")


def test_criterion_04_urn_variance_limit(urn_scan, verdict):
    row = urn_scan.get("var_ratio", 5000)
    ok = abs(row.estimate - 1 / 3) <= 0.05 / 3
    assert verdict(4, ok, f"Var(D)/(2n) = {row.estimate:.4f} +- {row.se:.4f}; target 1/3, tol 5%")


def test_criterion_05_drift_constant(verdict):
    rep = Wk.drift_experiment(W.pq(2.0), 10**5, 10**4, seed=105)
    right, left = rep.get("mean_delta", 1), rep.get("mean_delta", -1)
    ok = abs(right.estimate - 0.5) <= 0.03 and abs(left.estimate + 0.5) <= 0.03
    assert verdict(5, ok, f"E[delta_1] = {right.estimate:.4f} +- {right.se:.4f}, "
                          f"E[delta_-1] = {left.estimate:.4f} +- {left.se:.4f}; targets +-0.5, tol 0.03")


def test_criterion_06_besq_integral_moments(verdict):
    rng = stream(106, 0)
    a0 = D.besq_integral_samples(D.BesqParams(0.0, 0.0, 1.0, step=1e-4), 10**4, rng)
    a1 = D.besq_integral_samples(D.BesqParams(1.0, 0.0, 1.0, step=1e-4), 10**4, rng)
    m0, v0, v1 = a0.mean(), a0.var(ddof=1), a1.var(ddof=1)
    ok = abs(m0 - 1) <= 0.02 and abs(v0 - 2 / 3) <= 0.05 * 2 / 3 and abs(v1 - 2 / 9) <= 0.07 * 2 / 9
    assert verdict(6, ok, f"alpha=0 mean {m0:.4f} (1, tol 0.02), var {v0:.4f} (2/3, tol 5%); "
                          f"alpha=1 var {v1:.4f} (2/9, tol 7%)")


def test_criterion_07_ray_knight_profile(verdict):
    rep = R.rk_profile(POLY1, 2.0, 300, 10**4, seed=107)
    m, v = rep.get("mean", 1.0), rep.get("var", 1.0)
    ok = abs(m.estimate - 13 / 6) <= 0.05 * 13 / 6 and abs(v.estimate - 25 / 18) <= 0.10 * 25 / 18
    assert verdict(7, ok, f"mean at x=1 {m.estimate:.4f} +- {m.se:.4f} (13/6, tol 5%), "
                          f"var {v.estimate:.4f} +- {v.se:.4f} (25/18, tol 10%)")


def test_criterion_08_increment_variance_discrepancy(verdict):
    walk = R.increment_experiment(POLY1, 20.0, 0.1, 300, 10**4, seed=108).get("candidate")
    bmpe = R.bmpe_increment_experiment(1.0, 20.0, 10**4, seed=1108).get("var", 1.0)
    near = abs(walk.estimate - 1.6) <= 0.15 * 1.6
    far = abs(walk.estimate - 1.6 / 3) >= 5 * walk.se
    cont = abs(bmpe.estimate - 2 / 3) <= 0.15 * 2 / 3
    ok = near and far and cont
    assert verdict(8, ok, f"walk Var at x=1 {walk.estimate:.4f} +- {walk.se:.4f} (1.6, tol 15%; "
                          f"{abs(walk.estimate - 1.6 / 3) / walk.se:.1f} SE from 0.533); "
                          f"BMPE Var {bmpe.estimate:.4f} +- {bmpe.se:.4f} (2/3, tol 15%)")


def test_criterion_09_moment_gap(verdict):
    rep = R.nonconvergence_test(1.0, [300], delta=0.05, M=20.0, c=0.05, K=50.0, replicas=10**4,
                                seed=109, step=1e-5)
    gap = rep.get("gap", 300)
    lo, hi = rep.get("gap_ci_low", 300).estimate, rep.get("gap_ci_high", 300).estimate
    walk, bmpe = rep.get("walk_G2K", 300), rep.get("bmpe_G2K")
    j = rep.get("J_frequency", 300)
    gap_ok = gap.estimate >= 0.15 and lo > 0
    ok = gap_ok and j.estimate >= 0.9
    assert verdict(9, ok, f"walk E[G^2^K] {walk.estimate:.4f} +- {walk.se:.4f} (5/3), "
                          f"BMPE {bmpe.estimate:.4f} +- {bmpe.se:.4f} (11/9), gap {gap.estimate:.4f} "
                          f"CI [{lo:.4f}, {hi:.4f}] ({'pass' if gap_ok else 'fail'}); "
                          f"J_n frequency {j.estimate:.3f} (need 0.9)")


def test_criterion_10_afc_functional_limit(verdict):
    srw = R.afc_limit_test(CONST, 10**4, [1.0], 10**4, seed=110)
    pq = R.afc_limit_test(W.pq(2.0), 10**4, [0.5, 1.0], 10**4, seed=1110)
    ks0 = srw.get("ks", 1.0).estimate
    ks_half, ks_one = pq.get("ks", 0.5).estimate, pq.get("ks", 1.0).estimate
    ok = ks0 <= 0.02 and ks_half <= 0.03 and ks_one <= 0.03
    assert verdict(10, ok, f"Constant(1) KS vs normal {ks0:.4f} (tol 0.02); PqStyle(2) KS vs BMPE "
                           f"t=0.5 {ks_half:.4f}, t=1 {ks_one:.4f} (tol 0.03)")


def test_criterion_11_blp_consistency(verdict):
    rep = B.blp_vs_walk_check(CONST, -3, 1, 10**5, seed=111, i_values=(0, 1, 2))
    counts = {i: rep.get("conditional_samples", i).estimate for i in (0, 1, 2)}
    worst = rep.get("max_ks").estimate
    ok = worst <= 0.05 and min(counts.values()) >= 10**4
    parts = ", ".join(f"i={i}: KS {rep.get('ks', i).estimate:.4f} on {int(counts[i])}" for i in counts)
    assert verdict(11, ok, f"{parts}; max KS {worst:.4f} (tol 0.05), dropped walks {rep.failures}")
