import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heavytails.conjugate import normal_conjugate_posterior
from heavytails.densities import LPTN, Normal, RobustGamma, StudentT, TailClassError
from heavytails.model import (
    ConjugatePrior,
    Dataset,
    GlmSpec,
    ImproperPosteriorError,
    IndependentPrior,
    InvGammaSigma2,
    LogNormalSigma2,
    ModelSpec,
    OutlierPath,
    ParameterPoint,
    SubExponentialBeta,
    apply_outlier_path,
    breakdown_check,
    glm_log_posterior,
    grad_log_posterior,
    load_model_spec,
    log_limiting_posterior,
    log_posterior,
    prior_from_dict,
    save_model_spec,
    simulate_dataset,
    simulate_glm_dataset,
)
from heavytails.special import LOG_SQRT_2PI, log_gamma


def fd_grad(f, x, h=1e-6):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.fixture(scope="module")
def data():
    return simulate_dataset(20, 20250101)


class TestDataset:
    def test_simulation_design(self, data):
        np.testing.assert_array_equal(data.X[:, 1], np.arange(1, 21))
        np.testing.assert_array_equal(data.X[:, 0], np.ones(20))
        assert data.n == 20 and data.p == 2

    def test_simulation_deterministic(self):
        a, b = simulate_dataset(20, 5), simulate_dataset(20, 5)
        np.testing.assert_array_equal(a.y, b.y)
        assert not np.array_equal(a.y, simulate_dataset(20, 6).y)

    @pytest.mark.parametrize("seed", range(10))
    def test_simulation_mean(self, seed):
        assert abs(simulate_dataset(20, seed).y.mean() - 11.5) < 4 / math.sqrt(20)

    def test_validation(self):
        with pytest.raises(ValueError):
            Dataset(np.ones((3, 2)), np.ones(4))
        with pytest.raises(ValueError):
            Dataset(np.ones((2, 1)), [1.0, math.nan])
        with pytest.raises(ValueError):
            simulate_dataset(1, 0)

    def test_immutable(self, data):
        with pytest.raises(ValueError):
            data.y[0] = 3.0

    def test_csv_round_trip(self, data, tmp_path):
        path = tmp_path / "d.csv"
        data.to_csv(path)
        assert path.read_text().splitlines()[0] == "x_1,x_2,y"
        back = Dataset.from_csv(path)
        np.testing.assert_array_equal(back.X, data.X)
        np.testing.assert_array_equal(back.y, data.y)

    def test_csv_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            Dataset.from_csv(path)


class TestOutlierPath:
    def test_arithmetic(self):
        path = OutlierPath([1.0], [2.0], [-1.0])
        assert apply_outlier_path(path, 5.0)[0] == -11.0

    def test_base_configuration_and_constant_inliers(self):
        path = OutlierPath([1.0, 2.0, 3.0], [0.0, 0.0, 1.5])
        np.testing.assert_array_equal(path.apply(0.0), [1.0, 2.0, 3.0])
        for om in (1.0, 1e3, 1e9):
            np.testing.assert_array_equal(path.apply(om)[:2], [1.0, 2.0])
        assert path.outliers == (2,)

    def test_from_dataset(self, data):
        path = OutlierPath.from_dataset(data, [19])
        np.testing.assert_allclose(path.apply(0.0), data.y, rtol=0, atol=0)
        assert path.apply(10.0)[19] == pytest.approx(data.y[19] + 10.0 * np.sign(data.y[19]))

    def test_glm(self):
        path = OutlierPath([2.0, 3.0, 4.0], [1.0, 0.0, 2.0], direction=("large", None, "small"))
        np.testing.assert_allclose(path.apply(10.0), [10.0, 3.0, 1 / 20.0])
        with pytest.raises(ValueError):
            path.apply(0.0)

    @pytest.mark.parametrize("b", [0.5, -1.0])
    def test_b_in_forbidden_range(self, b):
        with pytest.raises(ValueError):
            OutlierPath([1.0], [b])


class TestLinearPosterior:
    @pytest.fixture
    def points(self):
        rng = np.random.default_rng(11)
        return [ParameterPoint(rng.normal([1.0, 1.0], [0.5, 0.1]), rng.normal(0, 1)) for _ in range(50)]

    def test_matches_conjugate_density_differences(self, data, points):
        prior = ConjugatePrior(2.0, 2.0)
        m = ModelSpec(Normal(), prior, data)
        post = normal_conjugate_posterior(data, prior)
        ref = points[0]
        for pt in points[1:]:
            lhs = log_posterior(m, pt) - log_posterior(m, ref)
            rhs = post.log_density(pt.beta, pt.gamma) - post.log_density(ref.beta, ref.gamma)
            assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_compositional(self, data):
        m = ModelSpec(StudentT(4.0), ConjugatePrior(2.0, 3.0), data)
        beta, gamma = np.array([0.7, 1.2]), 0.4
        a, b = 2.0, 3.0
        tau = math.exp(gamma)
        log_ig = a * math.log(b) - log_gamma(a) - (a + 1) * math.log(tau) - b / tau
        log_beta = sum(-LOG_SQRT_2PI - 0.5 * math.log(tau) - bj**2 / (2 * tau) for bj in beta)
        lik = sum(StudentT(4.0).logpdf((yi - xi @ beta) / math.sqrt(tau)) - 0.5 * math.log(tau)
                  for xi, yi in zip(data.X, data.y))
        assert m.log_posterior(beta, gamma) == pytest.approx(log_ig + gamma + log_beta + lik, rel=1e-13)

    def test_empty_data_is_prior(self):
        m = ModelSpec(StudentT(4.0), ConjugatePrior(), Dataset(np.empty((0, 2)), np.empty(0)))
        beta, gamma = np.array([0.3, -0.2]), 0.1
        assert m.log_posterior(beta, gamma) == ConjugatePrior().log_density(beta, gamma)

    def test_batch_matches_pointwise(self, data, points):
        m = ModelSpec(LPTN(0.95), ConjugatePrior(), data)
        B = np.array([p.beta for p in points])
        G = np.array([p.gamma for p in points])
        np.testing.assert_allclose(m.log_posterior(B, G), [m.log_posterior(p.beta, p.gamma) for p in points],
                                   rtol=1e-14)

    @pytest.mark.parametrize("err", [Normal(), StudentT(4.0), StudentT(1.0), LPTN(0.95)],
                             ids=lambda d: d.label)
    @pytest.mark.parametrize("prior", [ConjugatePrior(2.0, 2.0),
                                       IndependentPrior(SubExponentialBeta("laplace", 0.0, 2.0), LogNormalSigma2()),
                                       IndependentPrior(SubExponentialBeta("normal", (0.0, 1.0), (3.0, 1.0)),
                                                        InvGammaSigma2(2.0, 2.0))],
                             ids=["conjugate", "laplace-lognormal", "normal-invgamma"])
    def test_gradient_finite_differences(self, data, points, err, prior):
        m = ModelSpec(err, prior, data, (19,))
        checked = 0
        for pt in points:
            if isinstance(err, LPTN):
                z = np.abs(data.y - data.X @ pt.beta) / pt.sigma
                if np.min(np.abs(z - err.theta)) < 1e-3:
                    continue
            theta = pt.flat()
            g = m.grad_flat(theta)
            fd = fd_grad(m.logp_flat, theta)
            assert np.all(np.abs(g - fd) <= 1e-6 * np.maximum(1.0, np.abs(g))), (g, fd)
            checked += 1
        assert checked >= 40

    def test_normal_beta_gradient_closed_form(self, data):
        m = ModelSpec(Normal(), ConjugatePrior(), data)
        beta, gamma = np.array([0.5, 1.1]), 0.3
        e = math.exp(-gamma)
        expected = -e * beta + e * data.X.T @ (data.y - data.X @ beta)
        np.testing.assert_allclose(m.grad_log_posterior(beta, gamma)[0], expected, rtol=1e-12)

    def test_student_likelihood_gradient_vanishes_at_zero_residuals(self):
        d = Dataset(np.column_stack([np.ones(4), np.arange(4.0)]), np.zeros(4))
        m = ModelSpec(StudentT(4.0), ConjugatePrior(), d)
        g_beta, _ = m.grad_log_posterior(np.zeros(2), 0.2)
        np.testing.assert_array_equal(g_beta, np.zeros(2))

    def test_point_wrappers(self, data):
        m = ModelSpec(StudentT(4.0), ConjugatePrior(), data, (19,))
        pt = ParameterPoint(np.array([1.0, 1.0]), 0.0)
        assert log_posterior(m, pt) == m.log_posterior(pt.beta, pt.gamma)
        gb, gg = grad_log_posterior(m, pt)
        np.testing.assert_array_equal(np.append(gb, gg), m.grad_flat(pt.flat()))
        assert log_limiting_posterior(m, pt) == m.limiting().log_posterior(pt.beta, pt.gamma)

    def test_translation_invariance_of_normal_likelihood(self, data):
        m = ModelSpec(Normal(), ConjugatePrior(), data)
        beta, gamma, delta = np.array([0.8, 1.0]), 0.2, 3.25
        shifted = ModelSpec(Normal(), ConjugatePrior(), data.with_y(data.y + delta))
        assert m.log_likelihood(beta, gamma) == shifted.log_likelihood(beta + [delta, 0.0], gamma)


class TestLimitingPosterior:
    def test_no_outliers_is_identity(self, data):
        m = ModelSpec(StudentT(4.0), ConjugatePrior(), data)
        for beta, gamma in [([1.0, 1.0], 0.0), ([0.2, 0.9], -0.7)]:
            assert m.limiting().log_posterior(np.array(beta), gamma) == m.log_posterior(np.array(beta), gamma)

    def test_student_trace_term(self, data):
        m = ModelSpec(StudentT(4.0), ConjugatePrior(), data, (19,))
        clean = ModelSpec(StudentT(4.0), ConjugatePrior(), data.subset(range(19)))
        for gamma in (-1.0, 0.0, 0.7):
            beta = np.array([1.0, 1.0])
            diff = m.log_limiting_posterior(beta, gamma) - clean.log_posterior(beta, gamma)
            assert diff == pytest.approx(4.0 * gamma / 2, abs=1e-12)

    def test_lptn_leaves_no_trace(self, data):
        m = ModelSpec(LPTN(0.95), ConjugatePrior(), data, (17, 18, 19))
        clean = ModelSpec(LPTN(0.95), ConjugatePrior(), data.subset(range(17)))
        beta, gamma = np.array([1.0, 1.0]), 0.3
        assert m.log_limiting_posterior(beta, gamma) == clean.log_posterior(beta, gamma)

    def test_lptn_limit_ignores_outlier_values(self, data):
        beta, gamma = np.array([1.0, 1.0]), 0.3
        vals = []
        for om in (10.0, 1e6):
            y = OutlierPath.from_dataset(data, [19]).apply(om)
            vals.append(ModelSpec(LPTN(0.95), ConjugatePrior(), data.with_y(y), (19,))
                        .log_limiting_posterior(beta, gamma))
        assert vals[0] == vals[1]

    def test_improper_configurations_rejected(self, data):
        with pytest.raises(ImproperPosteriorError):
            ModelSpec(StudentT(10.0), ConjugatePrior(), data, (18, 19)).limiting()
        with pytest.raises(ImproperPosteriorError):
            ModelSpec(LPTN(0.95), ConjugatePrior(), data, tuple(range(9, 20))).limiting()
        ModelSpec(LPTN(0.95), ConjugatePrior(), data, tuple(range(10, 20))).limiting()

    def test_exponential_tail_rejected(self, data):
        with pytest.raises(TailClassError):
            ModelSpec(Normal(), ConjugatePrior(), data, (19,)).limiting()

    def test_json_round_trip(self, data, tmp_path):
        m = ModelSpec(LPTN(0.9), IndependentPrior(SubExponentialBeta("laplace", 0.0, 2.0), LogNormalSigma2(0.1, 1.5)),
                      data, (3, 19))
        save_model_spec(m, tmp_path / "m.json")
        back = load_model_spec(tmp_path / "m.json", data)
        assert back.to_dict() == m.to_dict()
        assert back.log_posterior(np.array([1.0, 1.0]), 0.2) == m.log_posterior(np.array([1.0, 1.0]), 0.2)

    def test_prior_dict(self):
        assert prior_from_dict({"kind": "conjugate", "a": 3, "b": 1}) == ConjugatePrior(3.0, 1.0)


class TestBreakdown:
    def test_margin_equals_one(self):
        v = breakdown_check(20, 2, StudentT(10.0).tail, 2.0, 1)
        assert v.refined_margin == 1.0
        assert not v.refined_holds_for_moment

    def test_student4_one_outlier(self):
        v = breakdown_check(20, 1, StudentT(4.0).tail, 2.0)
        assert v.assumption3_holds
        assert v.refined_margin == 9.5
        assert v.breakdown_fraction == pytest.approx(0.2)

    def test_three_outliers(self):
        v = breakdown_check(20, 3, StudentT(10.0).tail, 2.0)
        assert v.refined_margin == -4.5
        assert not v.assumption3_holds

    def test_log_regular(self):
        v = breakdown_check(20, 10, LPTN(0.95).tail, 2.0)
        assert v.assumption3_holds and v.breakdown_fraction == 0.5
        assert not breakdown_check(20, 11, LPTN(0.95).tail, 2.0).assumption3_holds

    def test_errors(self):
        with pytest.raises(ValueError):
            breakdown_check(5, 6, StudentT(4.0).tail, 2.0)
        with pytest.raises(TailClassError):
            breakdown_check(5, 1, Normal().tail, 2.0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 200), st.data(), st.floats(0.5, 30), st.floats(0.1, 10))
    def test_margin_formula(self, n, draw, nu, a):
        k = draw.draw(st.integers(0, n))
        v = breakdown_check(n, k, StudentT(nu).tail, a)
        assert v.refined_margin == pytest.approx((n - k - nu * k) / 2 + a)
        assert v.assumption3_holds == (n - k > nu * k)


@pytest.fixture(scope="module")
def glm():
    return GlmSpec(RobustGamma(5.0), SubExponentialBeta("normal", 0.0, 10.0), simulate_glm_dataset(20, 3))


class TestGlm:
    def test_default_c(self):
        assert RobustGamma(5.0).c == 1.6

    def test_beta_zero(self, glm):
        expected = glm.prior.log_density(np.zeros(2)) + np.sum(glm.density.logpdf(glm.data.y))
        assert glm_log_posterior(glm, np.zeros(2)) == pytest.approx(expected, rel=1e-13)

    def test_gradient(self, glm):
        rng = np.random.default_rng(2)
        for _ in range(50):
            b = rng.normal([0.5, 1.0], 1.0)
            g = glm.grad_flat(b)
            fd = fd_grad(glm.logp_flat, b)
            assert np.all(np.abs(g - fd) <= 1e-6 * np.maximum(1.0, np.abs(g)))

    def test_finite_at_extreme_linear_predictor(self, glm):
        for eta in (700.0, -700.0):
            assert np.isfinite(glm.log_posterior(np.array([eta, 0.0])))

    def test_scale_equivariance(self):
        d = RobustGamma(3.0, 1.6)
        X = np.ones((1, 1))
        for k in (0.01, 7.0, 1e5):
            base = GlmSpec(d, SubExponentialBeta(), Dataset(X, [2.5])).log_terms(np.array([0.4]))
            scaled = GlmSpec(d, SubExponentialBeta(), Dataset(X, [2.5 * k])).log_terms(np.array([0.4 + math.log(k)]))
            assert scaled[0] == pytest.approx(base[0] - math.log(k), abs=1e-12)

    def test_terms_bounded(self, glm):
        rng = np.random.default_rng(3)
        bound = glm.density.mode_bound(glm.data.y)
        for _ in range(50):
            terms = glm.log_terms(rng.normal(0, 3, 2))
            assert np.all(terms <= np.log(bound) + 1e-12)

    def test_rejects_nonpositive_y(self):
        with pytest.raises(ValueError):
            GlmSpec(RobustGamma(2.0), SubExponentialBeta(), Dataset(np.ones((2, 1)), [1.0, 0.0]))

    def test_limiting_drops_outlier_terms(self, glm):
        m = GlmSpec(glm.density, glm.prior, glm.data, (0, 19))
        lim = m.limiting()
        assert lim.data.n == 18
        b = np.array([0.3, 0.9])
        assert lim.log_posterior(b) == pytest.approx(
            m.prior.log_density(b) + np.sum(m.log_terms(b)[1:19]), rel=1e-13)


def test_conjugate_prior_grad_at_extreme_gamma():
    g_beta, g_gamma = ConjugatePrior(2.0, 2.0).grad(np.array([1.0, -1.0]), -1000.0)
    assert np.all(np.isinf(g_beta)) and g_gamma == np.inf
