import numpy as np
import pytest

from switchbudget import lemmas
from switchbudget.core import FeedbackMode
from switchbudget.learner import estimate_loss


def biased_estimator(mode, observed, obs_set, M, K, distribution, current_action):
    # the rescaling factor K/M replaced by 1
    est = np.zeros(K)
    for k in obs_set:
        est[k] = observed[k]
    if mode is FeedbackMode.BANDIT:
        est[current_action] /= distribution[current_action]
    return est


def test_unbiasedness_passes():
    res = lemmas.check_unbiasedness()
    assert res.passed, res.detail


def test_unbiasedness_catches_biased_estimator():
    res = lemmas.check_unbiasedness(biased_estimator)
    assert not res.passed
    assert res.line().startswith("FAIL unbiasedness")


@pytest.mark.parametrize("M", [1, 2, 3])
def test_flex_enumeration_per_m(M):
    batch = np.array([[0.1, 0.4, 0.9], [0.7, 0.2, 0.3]])
    mean = lemmas.enumerated_mean_estimate(FeedbackMode.FLEX, batch, M)
    assert np.max(np.abs(mean - batch.mean(axis=0))) <= lemmas.EXACT_TOL


def test_bandit_conditioning():
    batch = np.array([[0.1, 0.4, 0.9], [0.7, 0.2, 0.3]])
    mean = lemmas.enumerated_mean_estimate(FeedbackMode.BANDIT, batch, 1, np.array([0.6, 0.3, 0.1]))
    assert np.max(np.abs(mean - batch.mean(axis=0))) <= lemmas.EXACT_TOL


@pytest.mark.parametrize("sd", [True, False])
def test_sd_exact(sd):
    res = lemmas.check_sd_exact(sd)
    assert res.passed, res.detail


def test_always_keep_kernel_breaks_marginal():
    # sanity check on the oracle: a learner that never resamples keeps A_b uniform,
    # while E[w_b] moves away from uniform, so the comparison is not vacuous
    losses = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.3]])
    p_action, mean_w = lemmas.exact_sd_marginals(losses, 1, eta=0.9)
    assert np.max(np.abs(p_action - mean_w)) <= lemmas.EXACT_TOL
    sticky_law = np.full(2, 0.5)
    assert np.max(np.abs(mean_w[1:] - sticky_law)) > 0.1


def test_sd_monte_carlo():
    tv = lemmas.mc_sd_tv(runs=100_000)
    assert tv <= lemmas.TV_TOL


def test_switch_bound():
    res = lemmas.check_switch_bound(reps=300)
    assert res.passed, res.detail


def test_walk_tables():
    res = lemmas.check_walk_tables()
    assert res.passed, res.detail


def test_estimate_loss_is_the_default():
    assert lemmas.check_unbiasedness(estimate_loss).passed
