import numpy as np
import pytest
from scipy.integrate import quad

from degsde import fields, matcore
from degsde.errors import InvalidInputError
from degsde.oukernel import (
    OUModel,
    det_smalltime_fit,
    lift,
    lp_norm,
    ou_sample_path,
    ou_transition,
    p_default,
    resolvent_apply,
    semigroup_apply,
    semigroup_gradient,
)

from oracles import gauss_expectation

KOLM = OUModel(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[1.0]]))
PAPER = OUModel(np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]), np.array([[2.0]]))


def test_lift_places_block_top_left():
    L = lift(np.array([[2.0]]), 3)
    assert L[0, 0] == 2.0 and np.count_nonzero(L) == 1


def test_model_properties():
    assert KOLM.k == 1 and KOLM.p_default == 3 and KOLM.lambda_min == 1.0
    assert PAPER.k == 2 and PAPER.p_default == 4 and PAPER.lambda_min == 2.0
    assert p_default(0) == 2


def test_model_rejects_non_hypoelliptic_pair():
    with pytest.raises(InvalidInputError):
        OUModel(np.zeros((2, 2)), np.array([[1.0]]))
    with pytest.raises(InvalidInputError):
        OUModel(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[0.0]]))


def test_transition_is_mean_and_gramian():
    z = np.array([0.3, -1.0])
    mean, cov = ou_transition(KOLM, z, 0.5)
    assert np.allclose(mean, [0.3, -1.0 + 0.5 * 0.3])
    assert np.allclose(cov, [[0.5, 0.125], [0.125, 0.5**3 / 3]])


def test_sampler_moments():
    z = np.array([1.0, 1.0, 1.0])
    t = 0.7
    ens = ou_sample_path(PAPER, z, np.array([0.0, t]), 200_000, seed=3)
    X = ens.states[:, -1]
    mean, cov = ou_transition(PAPER, z, t)
    se = np.sqrt(np.diag(cov) / len(X))
    assert np.all(np.abs(X.mean(axis=0) - mean) <= 4 * se)
    emp = np.cov(X.T)
    assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.05


def test_many_steps_match_one_step():
    z = np.array([0.5, -0.5, 0.2])
    one = ou_sample_path(PAPER, z, np.array([0.0, 1.0]), 50_000, seed=4).states[:, -1]
    ten = ou_sample_path(PAPER, z, np.linspace(0.0, 1.0, 11), 50_000, seed=5).states[:, -1]
    se = np.sqrt(one.var(axis=0) / len(one) + ten.var(axis=0) / len(ten))
    assert np.all(np.abs(one.mean(axis=0) - ten.mean(axis=0)) <= 4 * se)


def test_semigroup_matches_closed_form():
    f = fields.gaussian_bump(np.zeros(2), width=1.0)
    z = np.array([0.5, 0.5])
    mean, cov = ou_transition(KOLM, z, 0.8)
    exact = gauss_expectation(mean, cov, np.zeros(2), 1.0)
    est = semigroup_apply(KOLM, f, 0.8, z, 50_000, np.random.default_rng(0))
    assert est.within(exact)


def test_semigroup_gradient_matches_finite_difference_of_closed_form():
    f = fields.gaussian_bump(np.zeros(2), width=1.0)
    z = np.array([0.4, -0.2])
    h = np.array([1.0, 0.0])
    t = 0.6

    def P(zz):
        mean, cov = ou_transition(KOLM, zz, t)
        return gauss_expectation(mean, cov, np.zeros(2), 1.0)

    eps = 1e-5
    fd = (P(z + eps * h) - P(z - eps * h)) / (2 * eps)
    est = semigroup_gradient(KOLM, f, t, z, h, 50_000, np.random.default_rng(1))
    assert est.within(fd)


def test_resolvent_of_constant_is_exact():
    est = resolvent_apply(KOLM, fields.constant(1.0, 2), 4.0, np.zeros(2), 10, np.random.default_rng(0))
    assert est.value == pytest.approx(0.25, abs=1e-15)
    assert est.stderr == pytest.approx(0.0, abs=1e-15)


def test_resolvent_matches_closed_form_laplace_transform():
    f = fields.gaussian_bump(np.zeros(2), width=1.0)
    z = np.array([0.3, 0.1])
    lam = 4.0

    def P(t):
        if t == 0:
            return float(f(z))
        mean, cov = ou_transition(KOLM, z, t)
        return gauss_expectation(mean, cov, np.zeros(2), 1.0)

    exact = quad(lambda t: np.exp(-lam * t) * P(t), 0, np.inf, epsabs=1e-12, limit=200)[0]
    est = resolvent_apply(KOLM, f, lam, z, 20_000, np.random.default_rng(7))
    assert abs(est.value - exact) <= 4 * est.stderr + est.bias_bound + 1e-5


def test_resolvent_requires_lambda_above_floor():
    with pytest.raises(InvalidInputError):
        resolvent_apply(KOLM, fields.constant(1.0, 2), 0.5, np.zeros(2), 10, np.random.default_rng(0))


def test_resolvent_batch_shares_random_numbers():
    f = fields.gaussian_bump(np.zeros(2))
    Z = np.array([[0.0, 0.0], [0.0, 0.0]])
    a, b = resolvent_apply(KOLM, f, 4.0, Z, 200, np.random.default_rng(0))
    assert a == b


def test_det_slope_fits():
    assert det_smalltime_fit(KOLM)[0] == pytest.approx(4.0, abs=0.05)
    assert det_smalltime_fit(PAPER)[0] == pytest.approx(9.0, abs=0.1)
    heat = OUModel(np.zeros((1, 1)), np.ones((1, 1)))
    assert det_smalltime_fit(heat)[0] == pytest.approx(1.0, abs=0.02)


def test_lp_norm_of_gaussian():
    # || exp(-|z|^2/2) ||_3 in 2-d is (2 pi / 3)^(1/3)
    f = fields.gaussian_bump(np.zeros(2))
    est = lp_norm(f, 2, 3.0, 200_000, np.random.default_rng(0))
    assert est.within((2 * np.pi / 3) ** (1 / 3))


def test_eta_and_growth_constants():
    assert PAPER.eta == pytest.approx(0.5)
    assert PAPER.omega > matcore.spectral_abscissa(PAPER.A)
    for t in (0.0, 1.0, 3.0):
        assert matcore.hs_norm(matcore.mat_exp(PAPER.A, t)) <= PAPER.M * np.exp(PAPER.omega * t) * (1 + 1e-12)
