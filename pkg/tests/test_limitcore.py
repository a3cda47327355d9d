import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_experiment, random_spd
from ficlab.exceptions import NumericalFailure
from ficlab.limitcore import (LimitExperiment, SubmodelMask, all_masks, geometry, limit_estimator,
                              requires, sample_limit, size_order, spd_inverse, true_mse)


def test_mask_labels_round_trip():
    m = SubmodelMask.from_indices([0, 2], 3)
    assert m.label == "1 0 1" and m.code == "101"
    assert SubmodelMask.from_label("1 0 1") == m == SubmodelMask.from_label("101")
    assert m.size == 2 and not m.is_narrow and not m.is_wide
    assert SubmodelMask.narrow(3).is_narrow and SubmodelMask.wide(3).is_wide


def test_size_order_matches_table_layout():
    codes = [m.code for m in size_order(all_masks(3))]
    assert codes == ["000", "100", "010", "001", "110", "101", "011", "111"]


def test_requires_rule_leaves_48_of_64():
    masks = all_masks(6, requires(4, 0))
    assert len(masks) == 48
    assert all(m.contains(0) for m in masks if m.contains(4))


def test_narrow_and_wide_exact():
    exp = LimitExperiment(0.3, [1.0, 2.0], [[2.0, 0.5], [0.5, 1.0]])
    g0 = geometry(exp, SubmodelMask.narrow(2))
    gw = geometry(exp, SubmodelMask.wide(2))
    assert np.array_equal(g0.G, np.zeros((2, 2)))
    assert np.array_equal(gw.G, np.eye(2))
    assert g0.tau2 == pytest.approx(0.09)
    assert g0.sigma2 == pytest.approx(exp.omega @ exp.Q @ exp.omega)
    assert gw.sigma2 == 0.0
    assert gw.tau2 == pytest.approx(0.09 + exp.omega @ exp.Q @ exp.omega)


def test_hand_computed_q2():
    exp = LimitExperiment(0.0, [1.0, 1.0], np.eye(2))
    g = geometry(exp, SubmodelMask.from_indices([0], 2))
    assert np.allclose(g.G, np.diag([1.0, 0.0]))
    assert g.tau2 == pytest.approx(1.0) and g.sigma2 == pytest.approx(1.0)


@given(st.integers(0, 2**32 - 1))
def test_projection_properties(seed):
    rng = np.random.default_rng(seed)
    exp = random_experiment(rng, with_D=False)
    for m in all_masks(exp.q):
        G = geometry(exp, m).G
        assert np.max(np.abs(G @ G - G)) < 1e-8
        assert np.trace(G) == pytest.approx(m.size, abs=1e-8)
        GQ = G @ exp.Q
        assert np.max(np.abs(GQ - GQ.T)) < 1e-8


def _submodel_oracle(J, p, dth, dga, S, delta):
    """Variance and bias of the submodel focus estimator straight from the information matrix."""
    keep = list(range(p)) + [p + j for j in S.indices]
    JS = J[np.ix_(keep, keep)]
    d = np.concatenate([dth, dga[list(S.indices)]])
    var = d @ np.linalg.solve(JS, d)
    shift = np.concatenate([np.zeros(p), delta])
    # least-false limit of the submodel estimator under local misspecification
    lim = np.linalg.solve(JS, J[keep, :] @ shift)
    full = np.zeros(p + len(delta))
    full[keep] = lim
    bias = np.concatenate([dth, dga]) @ (full - shift)
    return var, bias


@given(st.integers(0, 2**32 - 1))
def test_variance_and_bias_match_information_oracle(seed):
    rng = np.random.default_rng(seed)
    p, q = int(rng.integers(1, 3)), int(rng.integers(1, 4))
    J = random_spd(rng, p + q)
    dth, dga = rng.standard_normal(p), rng.standard_normal(q)
    delta = rng.standard_normal(q)
    Jinv = np.linalg.inv(J)
    Q = Jinv[p:, p:]
    J00, J10 = J[:p, :p], J[p:, :p]
    omega = J10 @ np.linalg.solve(J00, dth) - dga
    tau0 = np.sqrt(dth @ np.linalg.solve(J00, dth))
    exp = LimitExperiment(tau0, omega, 0.5 * (Q + Q.T))
    for m in all_masks(q):
        var, bias = _submodel_oracle(J, p, dth, dga, m, delta)
        geo = geometry(exp, m)
        assert geo.tau2 == pytest.approx(var, rel=1e-8, abs=1e-10)
        assert true_mse(exp, m, delta) == pytest.approx(var + bias**2, rel=1e-7, abs=1e-10)


def test_true_mse_examples():
    exp = LimitExperiment(0.0, [1.0, 1.0], np.eye(2))
    assert true_mse(exp, SubmodelMask.narrow(2), [0.3, -0.1]) == pytest.approx(0.04)
    assert true_mse(exp, SubmodelMask.narrow(2), [0.0, 0.0]) == 0.0
    assert true_mse(exp, SubmodelMask.wide(2), [5.0, -3.0]) == pytest.approx(2.0)


def test_mse_nested_at_zero_delta(rng):
    for _ in range(50):
        exp = random_experiment(rng, with_D=False)
        masks = all_masks(exp.q)
        z = np.zeros(exp.q)
        for s in masks:
            for t in masks:
                if s.bits & t.bits == s.bits:
                    assert true_mse(exp, s, z) <= true_mse(exp, t, z) + 1e-10


def test_mc_mse_matches_formula(rng):
    for k in range(4):
        exp = random_experiment(rng, with_D=False)
        delta = rng.standard_normal(exp.q)
        lam0, D = sample_limit(exp, delta, seed=k, size=200_000)
        for m in all_masks(exp.q):
            err = limit_estimator(exp, m, delta, lam0, D)
            sq = err**2
            se = sq.std(ddof=1) / np.sqrt(sq.size)
            assert abs(sq.mean() - true_mse(exp, m, delta)) < 3.5 * se


def test_sample_limit_moments():
    exp = LimitExperiment(0.0, [1.0, 1.0], [[1.0, 0.3], [0.3, 2.0]])
    lam0, D = sample_limit(exp, [1.0, -2.0], seed=1, size=100_000)
    assert np.all(lam0 == 0)
    se = np.sqrt(np.diag(exp.Q) / 100_000)
    assert np.all(np.abs(D.mean(axis=0) - [1.0, -2.0]) < 4 * se)
    a, b = sample_limit(exp, [1.0, -2.0], seed=7)
    c, d = sample_limit(exp, [1.0, -2.0], seed=7)
    assert a == c and np.array_equal(b, d)


def test_validation_errors():
    with pytest.raises(ValueError):
        LimitExperiment(-1.0, [1.0], [[1.0]])
    with pytest.raises(ValueError):
        LimitExperiment(0.0, [1.0, 1.0], [[1.0, 0.2], [0.3, 1.0]])
    with pytest.raises((ValueError, NumericalFailure)):
        LimitExperiment(0.0, [1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(NumericalFailure):
        spd_inverse(np.diag([1.0, 1e-14]))
