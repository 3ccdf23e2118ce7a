import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sirwlab import blp as B
from sirwlab import urn as U
from sirwlab import weights as W
from sirwlab.blp import BlpKind

CONST = W.constant(1.0)
POLY1 = W.polynomial(1.0)


@given(st.sampled_from([CONST, POLY1]), st.integers(1, 30), st.integers(0, 2**32))
def test_tilde_is_absorbed_at_zero(w, gens, seed):
    path = B.blp_run(BlpKind.ZETA_TILDE, w, 3, gens, np.random.default_rng(seed))
    hit = np.flatnonzero(path.values == 0)
    if hit.size:
        assert np.all(path.values[hit[0]:] == 0)
        assert path.sigma0 == hit[0]
    else:
        assert path.sigma0 is None


def test_tilde_from_zero_stays_at_zero(rng):
    path = B.blp_run(BlpKind.ZETA_TILDE, POLY1, 0, 10, rng)
    assert path.sigma0 == 0
    assert path.values.tolist() == [0] * 11


def test_run_rejects_empty_horizon(rng):
    with pytest.raises(ValueError):
        B.blp_run(BlpKind.ZETA, CONST, 1, 0, rng)


@pytest.mark.parametrize("i", [0, 3, 7])
def test_zeta_step_matches_exact_urn_law(i, rng):
    law = U.exact_law(U.Variant.MINUS, POLY1, i + 1)
    step = B.sample_transitions(BlpKind.ZETA, POLY1, i, 10**6, rng)
    assert U.total_variation(law, step - (i + 1)) <= 0.01


def test_constant_weight_tilde_is_a_martingale(rng):
    # symmetric urn: reds before the i-th blue has mean i
    step = B.sample_transitions(BlpKind.ZETA_TILDE, CONST, 12, 40_000, rng)
    se = step.std() / np.sqrt(step.size)
    assert abs(step.mean() - 12) < 4 * se


def test_constant_weight_zeta_gains_one_per_generation(rng):
    step = B.sample_transitions(BlpKind.ZETA, CONST, 12, 40_000, rng)
    se = step.std() / np.sqrt(step.size)
    assert abs(step.mean() - 13) < 4 * se


def test_tilde_extinction_matches_linear_fractional_formula(rng):
    # geometric(1/2) offspring: extinction by generation k from one ancestor is k/(k+1)
    n = 50
    hits = [B.blp_run(BlpKind.ZETA_TILDE, CONST, n, n, rng).sigma0 is not None for _ in range(2000)]
    exact = (n / (n + 1)) ** n
    assert np.mean(hits) == pytest.approx(exact, abs=4 * np.sqrt(exact * (1 - exact) / 2000))


@pytest.mark.parametrize("kind", list(BlpKind))
def test_one_step_law_is_monotone_in_start(kind, rng):
    lo = B.sample_transitions(kind, POLY1, 4, 100_000, rng)
    hi = B.sample_transitions(kind, POLY1, 5, 100_000, rng)
    grid = np.arange(0, 40)
    f_lo = np.searchsorted(np.sort(lo), grid, side="right") / lo.size
    f_hi = np.searchsorted(np.sort(hi), grid, side="right") / hi.size
    # stochastic order up to sampling noise
    assert np.all(f_hi <= f_lo + 0.01)


def test_return_time_from_zero_recurrent_case(rng):
    surv = B.survival_curve(BlpKind.ZETA, CONST, 0, [10, 100, 1000], 300, rng)
    assert np.all(np.diff(surv) <= 0)
    # slow decay: the ratio over two decades stays above 100 ** -0.2
    assert surv[2] / surv[0] >= 100 ** -0.2


def test_transient_weights_often_never_return(rng):
    # non-decreasing weights: started far up, the chain rarely comes back to 0
    surv = B.survival_curve(BlpKind.ZETA, W.pq(0.5), 20, [200], 100, rng)
    assert surv[0] > 0.5


def test_walk_check_agrees_for_the_zeta_branch():
    rep = B.blp_vs_walk_check(CONST, -3, 1, 6000, seed=4, i_values=(0, 1))
    for i in (0, 1):
        row = rep.get("ks", i)
        n = rep.get("conditional_samples", i).estimate
        # two-sample critical value at the 0.1% level
        assert row.estimate < 1.95 * np.sqrt(1 / n + 1 / 10**4)


def test_walk_check_marks_thin_conditioning_uncovered():
    rep = B.blp_vs_walk_check(CONST, -2, 1, 50, seed=0, i_values=(40,))
    assert rep.get("ks", 40).verdict == "uncovered"
    assert rep.get("max_ks").verdict == "pass"


def test_walk_check_rejects_bad_zeta_target():
    with pytest.raises(ValueError):
        B.blp_vs_walk_check(CONST, -1, 1, 10, seed=0, kind=BlpKind.ZETA)
