import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from conftest import random_experiment
from ficlab.averaging import (WeightScheme, averaged_estimate, limit_distribution_sample, threshold_weights,
                              weights)
from ficlab.glmfit import SubmodelFit
from ficlab.limitcore import LimitExperiment, SubmodelMask, all_masks, geometry

STUDY = LimitExperiment(0.1357, [1.0, 1.0, 1.0], np.eye(3))
STUDY_DELTA = [0.3, -0.1, 1.5]


def _fit(code, mu):
    return SubmodelFit(SubmodelMask.from_label(code), np.zeros(1), np.zeros(len(code)), mu, 0.0)


def test_two_model_softmax():
    # q = 1, narrow FIC^m and wide score chosen to be 1 and 2
    exp = LimitExperiment(1.0, [1.0], [[1.0]], D=[0.0])
    w = weights(WeightScheme("exp_fixed_lambda", lam=1.0, score="m"), exp, all_masks(1))
    assert w == pytest.approx(np.array([np.exp(-1), np.exp(-2)]) / (np.exp(-1) + np.exp(-2)), abs=1e-12)
    assert w[0] == pytest.approx(0.731, abs=5e-4)


def test_equal_scores_give_uniform_weights():
    exp = LimitExperiment(0.0, [0.0, 0.0], np.eye(2), D=[1.0, 2.0])
    w = weights(WeightScheme("exp_fixed_lambda"), exp, all_masks(2))
    assert w == pytest.approx(np.full(4, 0.25))


def test_post_selection_indicator(rng):
    exp = random_experiment(rng, q=3)
    w = weights(WeightScheme("post_selection", score="t"), exp, all_masks(3))
    assert sorted(w) == [0.0] * 7 + [1.0]
    big = weights(WeightScheme("exp_fixed_lambda", lam=1e6, score="t"), exp, all_masks(3))
    assert np.argmax(big) == np.argmax(w)


@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    exp = random_experiment(rng, q=2)
    # adding a constant to tau0^2 shifts every score by the same amount
    shifted = LimitExperiment(np.sqrt(exp.tau0**2 + abs(shift)), exp.omega, exp.Q, D=exp.D)
    for score in ("u", "t"):
        a = weights(WeightScheme("exp_fixed_lambda", lam=2.0, score=score), exp, all_masks(2))
        b = weights(WeightScheme("exp_fixed_lambda", lam=2.0, score=score), shifted, all_masks(2))
        assert a == pytest.approx(b, abs=1e-9)
        assert a.sum() == pytest.approx(1.0)


def test_no_underflow():
    exp = LimitExperiment(100.0, [1.0], [[1.0]], D=[30.0])
    w = weights(WeightScheme("exp_fixed_lambda", lam=50.0, score="t"), exp, all_masks(1))
    assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1.0)


def test_averaged_estimate():
    fits = [_fit("0", 0.2), _fit("1", 0.4)]
    assert averaged_estimate([0.5, 0.5], fits) == pytest.approx(0.3)
    assert averaged_estimate([0.0, 1.0], fits) == 0.4
    published = [0.282, 0.368, 0.259, 0.267, 0.342, 0.351, 0.226, 0.303]
    uniform = averaged_estimate(np.full(8, 1 / 8), [_fit(f"{k:03b}", v) for k, v in enumerate(published)])
    assert uniform == pytest.approx(0.2998, abs=5e-4)
    with pytest.raises(ValueError):
        averaged_estimate([1.0], fits)


def test_always_wide_is_normal():
    res = limit_distribution_sample(STUDY, STUDY_DELTA, WeightScheme("always_wide"), 10_000, seed=4)
    sd = np.sqrt(0.1357**2 + 3)
    assert stats.kstest(res.draws / sd, "norm").statistic < 0.02
    big = limit_distribution_sample(STUDY, STUDY_DELTA, WeightScheme("always_wide"), 400_000, seed=5)
    assert abs(big.rmse - sd) < 3 * big.rmse_se


def test_post_selection_delta_hat_is_selected_projection():
    res = limit_distribution_sample(STUDY, STUDY_DELTA, WeightScheme("post_selection", score="t"), 2000, seed=1)
    masks = all_masks(3)
    D_guess = res.delta_hat
    # every delta_hat lies in the range of some G_S; G_S delta_hat = delta_hat for the chosen S
    for dh in D_guess[:200]:
        assert any(np.allclose(geometry(STUDY, m).G @ dh, dh) for m in masks)


def test_conditional_variance_is_tau0_squared():
    res = limit_distribution_sample(STUDY, STUDY_DELTA, WeightScheme("exp_cd_lambda"), 100_000, seed=2)
    resid = res.draws - (STUDY.omega @ STUDY_DELTA - res.delta_hat @ STUDY.omega)
    assert np.allclose(resid, res.lambda0)
    assert resid.var() == pytest.approx(0.1357**2, rel=0.02)


def test_sampling_deterministic_across_workers():
    s = WeightScheme("exp_fixed_lambda", score="m")
    a = limit_distribution_sample(STUDY, STUDY_DELTA, s, 70_000, seed=9, workers=1)
    b = limit_distribution_sample(STUDY, STUDY_DELTA, s, 70_000, seed=9, workers=4)
    assert np.array_equal(a.draws, b.draws)


def test_threshold_screening():
    exp = LimitExperiment(0.1, [1.0, 1.0], np.eye(2), D=[3.0, 0.2])
    masks = all_masks(2)
    w = threshold_weights(exp, masks, threshold_mse=1.0, cutoff=0.5)
    assert sum(w.values()) == pytest.approx(1.0)
    # models missing the first parameter carry a large bias and are screened out
    assert w["00"] == 0.0 and w["01"] == 0.0
    custom = weights(WeightScheme("custom", table=w), exp, masks)
    assert custom == pytest.approx([w[m.code] for m in masks])


def test_aic_limit_narrow_vs_wide_rule(rng):
    exp = LimitExperiment(0.0, [1.0, 1.0], np.eye(2))
    masks = [SubmodelMask.narrow(2), SubmodelMask.wide(2)]
    for D in rng.standard_normal((200, 2)) * 2:
        w = weights(WeightScheme("aic_limit"), exp, masks, D)
        assert (w[0] == 1.0) == (D @ D <= 4.0)


def test_scheme_validation():
    with pytest.raises(ValueError):
        WeightScheme("nope")
    with pytest.raises(ValueError):
        WeightScheme("custom")
    with pytest.raises(ValueError):
        WeightScheme("exp_fixed_lambda", score="z")


def test_limit_draws_outputs(tmp_path):
    res = limit_distribution_sample(STUDY, STUDY_DELTA, WeightScheme("always_wide"), 1000, seed=3)
    res.to_json(tmp_path / "s.json")
    res.to_csv(tmp_path / "d.csv")
    back = np.loadtxt(tmp_path / "d.csv", skiprows=1)
    assert np.array_equal(back, res.draws)
    assert set(res.summary()) >= {"scheme", "n_draws", "mean", "rmse", "quantiles"}
