import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from sirwlab import diffusion as D
from sirwlab import raylab as R
from sirwlab import walk as Wk
from sirwlab import weights as W
from sirwlab.stats import ks_distance

CONST = W.constant(1.0)
POLY1 = W.polynomial(1.0)


def test_targets():
    assert R.WALK_TARGET == pytest.approx(5 / 3)
    assert R.bmpe_target(0.0) == pytest.approx(5 / 3)
    assert R.bmpe_target(1.0) == pytest.approx(1 + 2 / 9)


def test_profile_at_zero_is_exact(rng):
    s = R.sample_profile(POLY1, 2.0, 40, rng, grid=5)
    assert s.level == 80
    assert s.profile[0] == pytest.approx(81 / 40)
    assert s.xs.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]


def test_urn_profile_rejects_bad_levels(rng):
    with pytest.raises(ValueError):
        R.urn_profile(POLY1, [3, 2], 4, rng)
    with pytest.raises(ValueError):
        R.urn_profile(POLY1, [-1], 4, rng)


def test_plus_chain_grows_tables(rng):
    # start far above the initial table size to force a replay
    out = R.plus_chain(CONST, [5000], 3, rng)
    assert out.shape == (4, 1)
    assert out[0, 0] == 5000


@given(st.sampled_from([CONST, POLY1, W.pq(2.0)]), st.integers(0, 6), st.integers(0, 5),
       st.integers(0, 2**32))
def test_occupation_identity_matches_visit_counts(w, ell, d, seed):
    walk = Wk.new_walk(w, seed, track_drift=False)
    try:
        snap = walk.run_until_upcrossings(ell, budget=10**6)
    except Wk.StepBudgetExceeded:
        assume(False)
    sites = np.arange(d + 1)
    prof = R.EdgeProfile(np.array([ell]), snap.E(sites)[:, None], np.array([snap.E(-1)]))
    # visit counts include the current position 1, which is not before the stopping time
    before = int(snap.L(sites).sum()) - (1 if d >= 1 else 0)
    assert prof.occupation(d)[0] == before


def test_urn_profile_matches_walk_profile(rng):
    levels, n_sites = [2, 5], 6
    urn = [R.urn_profile(POLY1, levels, n_sites, rng) for _ in range(4000)]
    walk = []
    while len(walk) < 800:
        try:
            walk.append(R.walk_profile(POLY1, levels, n_sites, rng, budget=10**6))
        except Wk.StepBudgetExceeded:
            continue
    crit = 1.95 * math.sqrt(1 / 4000 + 1 / 800)
    for stat in (lambda p: p.E[3, 1], lambda p: p.E[6, 0], lambda p: p.left[1],
                 lambda p: p.occupation(4)[1] - p.occupation(4)[0]):
        a = np.array([stat(p) for p in urn])
        b = np.array([stat(p) for p in walk])
        assert ks_distance(a, b) < crit


def test_walk_occupation_backends_agree(rng):
    kw = dict(N=10, delta=0.3, M=2.0, c=0.1)
    urn = [R.walk_occupation(POLY1, rng=rng, **kw) for _ in range(3000)]
    walk = []
    while len(walk) < 300:
        try:
            walk.append(R.walk_occupation(POLY1, rng=rng, backend="walk", budget=10**6, **kw))
        except Wk.StepBudgetExceeded:
            continue
    crit = 1.95 * math.sqrt(1 / 3000 + 1 / 300)
    for name in ("G", "G_count", "ell1"):
        a = np.array([getattr(r, name) for r in urn])
        b = np.array([getattr(r, name) for r in walk])
        assert ks_distance(a, b) < crit


def test_occupation_functional_constant_path():
    path = D.DiffusionPath(1e-4, np.zeros(100_001))
    rec = R.occupation_functional(path, 0.25, 2.0, 50.0)
    assert not rec.failed
    # clock rate 1/(2 delta) = 2, so T_M = M/2 and the gap is 1/2
    assert rec.T_deltaM == pytest.approx(1.0, abs=2e-4)
    assert rec.T_deltaM1 == pytest.approx(1.5, abs=2e-4)
    assert rec.G == pytest.approx(0.25, abs=2e-4)
    assert rec.capped == pytest.approx(rec.G**2)


def test_occupation_functional_path_that_never_enters():
    path = D.DiffusionPath(1e-4, np.full(10_001, -1.0))
    rec = R.occupation_functional(path, 0.25, 1.0, 50.0)
    assert rec.failed and rec.T_deltaM is None and math.isnan(rec.G)


@pytest.mark.parametrize("delta", [0.0, 0.6])
def test_occupation_functional_rejects_delta(delta):
    with pytest.raises(ValueError, match=r"delta must lie in \(0, 1/2\]"):
        R.occupation_functional(D.DiffusionPath(1e-4, np.zeros(200)), delta, 1.0, 1.0)


@given(st.lists(st.floats(-0.5, 1.5), min_size=200, max_size=400), st.floats(0.05, 0.5),
       st.floats(0.0, 3.0), st.floats(0.1, 5.0))
def test_occupation_functional_invariants(values, delta, M, K):
    rec = R.occupation_functional(D.DiffusionPath(1e-2, np.array(values)), delta, M, K)
    if rec.failed:
        return
    assert rec.T_deltaM <= rec.T_deltaM1
    assert 0 <= rec.G <= 0.5 * (rec.T_deltaM1 - rec.T_deltaM) + 1e-12
    assert 0 <= rec.capped <= K


@pytest.mark.parametrize(
    "est, se, a, b, expected",
    [
        (1.0, 0.1, 1.0, 1.0, "indistinguishable"),
        (1.0, 0.1, 1.0, 0.3, "Z(0,0)"),
        (0.3, 0.1, 1.0, 0.3, "Z(alpha,0)"),
        (0.7, 0.1, 1.0, 0.3, "inconclusive"),
        (1.0, 0.0, 1.0, 0.3, "inconclusive"),
    ],
)
def test_candidate_verdict(est, se, a, b, expected):
    assert R.candidate_verdict(est, se, a, b) == expected


def test_increment_experiment_constant_weight_is_indistinguishable():
    rep = R.increment_experiment(CONST, 3.0, 0.1, 30, 300, seed=2, grid=5)
    assert rep.get("candidate").verdict == "indistinguishable"
    assert {r.verdict for r in rep.select("mean")} <= {"pass", "fail"}
    # the increment at x = 0 is deterministic
    assert rep.get("mean", 0.0).estimate == pytest.approx(rep.get("mean", 0.0).target_a)


def test_increment_experiment_rejects_c():
    with pytest.raises(ValueError, match=r"c must lie in \[0, 1/2\)"):
        R.increment_experiment(CONST, 3.0, 0.5, 30, 10, seed=0)


def test_rk_profile_small_run():
    rep = R.rk_profile(POLY1, 2.0, 40, 400, seed=1, grid=5)
    assert rep.get("profile_at_0").verdict == "pass"
    m = rep.get("mean", 1.0)
    assert m.target_a == pytest.approx(2 + 1 / 6)
    assert m.estimate == pytest.approx(m.target_a, abs=5 * m.se)


def test_rk_profile_is_worker_independent():
    a = R.rk_profile(POLY1, 1.0, 20, 60, seed=5, grid=3, workers=1).to_csv(seed=5)
    b = R.rk_profile(POLY1, 1.0, 20, 60, seed=5, grid=3, workers=2).to_csv(seed=5)
    assert a == b


def test_nonconvergence_small_brownian_case():
    # with constant weights both sides target 5/3, so no gap should be reported
    rep = R.nonconvergence_test(0.0, [30], delta=0.1, M=5.0, c=0.05, K=50.0, replicas=300, seed=3,
                                step=1e-4)
    gap = rep.get("gap", 30)
    assert abs(gap.estimate) <= 3 * gap.se
    assert gap.verdict == "fail"


def test_afc_rejects_polynomial_weights():
    with pytest.raises(ValueError):
        R.afc_limit_test(POLY1, 100, [1.0], 10, seed=0)


def test_afc_small_run_shape():
    rep = R.afc_limit_test(W.pq(2.0), 400, [0.5, 1.0], 200, seed=0, null_check=True)
    assert [r.x_or_t for r in rep.select("ks")] == [0.5, 1.0]
    assert rep.get("max_ks").estimate == max(r.estimate for r in rep.select("ks"))
    assert rep.get("null_ks").estimate >= 0


@pytest.mark.parametrize(
    "a, b, expected",
    [([1, 2], [1, 3], 0.5), ([1, 2, 3], [1, 2, 3], 0.0), ([0, 0, 0], [1, 1, 1], 1.0)],
)
def test_ks_distance_examples(a, b, expected):
    assert ks_distance(a, b) == pytest.approx(expected)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30),
       st.lists(st.floats(-10, 10), min_size=1, max_size=30))
def test_ks_distance_symmetric_and_bounded(a, b):
    d = ks_distance(a, b)
    assert 0 <= d <= 1
    assert d == pytest.approx(ks_distance(b, a))


def test_ks_distance_rejects_empty():
    with pytest.raises(ValueError):
        ks_distance([], [1.0])
