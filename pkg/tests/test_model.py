import json

import numpy as np
import pytest
from scipy import stats

from ordinal_intensity import dists
from ordinal_intensity.data import ALL_SITES, DataError, EventArrays, EventTuple
from ordinal_intensity.dists import stick_breaking
from ordinal_intensity.model import (
    Hyperparams,
    ParamLayout,
    ParamsConstrained,
    class_log_weights,
    constrain,
    event_log_marginal,
    generate,
    initial_point,
    log_joint,
    prior_logdensity,
    responsibilities,
    responsibilities_batch,
    sample_prior,
    unconstrain,
)


def random_theta(c, seed):
    hyper = Hyperparams(n_classes=c)
    rng = np.random.default_rng(seed)
    return constrain(rng.normal(0, 0.6, ParamLayout(hyper).size), hyper), hyper


class TestConstrain:
    def test_all_zero_vector_c3(self):
        hyper = Hyperparams(n_classes=3)
        theta = constrain(np.zeros(ParamLayout(hyper).size), hyper)
        np.testing.assert_allclose(theta.omega, [0.5, 0.7311, 0.8808], atol=5e-5)
        np.testing.assert_allclose(theta.delta, [0.8808, 0.7311, 0.5], atol=5e-5)
        np.testing.assert_allclose(theta.b, theta.delta)
        np.testing.assert_allclose(theta.kappa, [3.0, 3.0, 3.0])
        np.testing.assert_allclose(theta.pi_z, np.full(3, 1 / 3), atol=1e-12)

    def test_roundtrip(self):
        hyper = Hyperparams(n_classes=4)
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.normal(0, 1.0, ParamLayout(hyper).size)
            np.testing.assert_allclose(unconstrain(constrain(x, hyper), hyper), x, atol=1e-9)

    def test_c5_dimensions(self):
        hyper = Hyperparams(n_classes=5)
        layout = ParamLayout(hyper)
        assert layout.size == 54
        theta = constrain(np.zeros(54), hyper)
        assert theta.n_params == 65

    @pytest.mark.parametrize("c", [3, 4, 5, 6, 7])
    def test_parameter_counting(self, c):
        hyper = Hyperparams(n_classes=c)
        assert ParamLayout(hyper).size == 11 * c - 1
        theta = constrain(np.zeros(11 * c - 1), hyper)
        assert theta.n_params == 13 * c
        assert len(theta.param_names()) == 13 * c

    def test_invariants_hold_for_random_inputs(self):
        # moderate scale: far-tail inputs saturate the sigmoid to exactly 1.0
        # in float64, which the sampler rejects via -inf likelihoods anyway
        rng = np.random.default_rng(2)
        hyper = Hyperparams(n_classes=5)
        for _ in range(100):
            theta = constrain(rng.normal(0, 0.8, ParamLayout(hyper).size), hyper)
            theta.validate()

    def test_non_finite_rejected(self):
        hyper = Hyperparams(n_classes=3)
        x = np.zeros(ParamLayout(hyper).size)
        x[0] = np.nan
        with pytest.raises(ValueError):
            constrain(x, hyper)


class TestValidate:
    def test_rejects_unordered_omega(self):
        theta, _ = random_theta(3, 0)
        theta.omega = theta.omega[::-1].copy()
        with pytest.raises(ValueError, match="omega"):
            theta.validate()

    def test_rejects_increasing_delta(self):
        theta, _ = random_theta(3, 0)
        theta.delta = np.sort(theta.delta)
        with pytest.raises(ValueError, match="delta"):
            theta.validate()

    def test_rejects_small_kappa(self):
        theta, _ = random_theta(3, 0)
        theta.kappa = np.array([1.0, 3.0, 4.0])
        with pytest.raises(ValueError, match="kappa"):
            theta.validate()

    def test_rejects_broken_simplex(self):
        theta, _ = random_theta(3, 0)
        theta.pi_z = theta.pi_z * 1.01
        with pytest.raises(ValueError, match="pi_z"):
            theta.validate()


class TestPrior:
    def test_standard_normal_contribution_at_zero(self):
        value = dists.normal_logpdf(np.zeros(3), 0.0, 1.0).sum()
        assert value == pytest.approx(3 * np.log(1.0 / np.sqrt(2 * np.pi)))

    def test_flat_dirichlet_is_constant(self):
        rng = np.random.default_rng(3)
        values = [
            dists.dirichlet_logpdf(stick_breaking(rng.normal(0, 1, 3)), np.ones(4))
            for _ in range(5)
        ]
        np.testing.assert_allclose(values, np.log(6.0), atol=1e-12)

    def test_matches_independent_implementation(self):
        hyper = Hyperparams(n_classes=4, mu=-1.0, sigma=1.3, gamma_shape=1.7, gamma_rate=0.8)
        layout = ParamLayout(hyper)
        rng = np.random.default_rng(4)

        def fd_stick_logdet(y):
            h = 1e-5
            k = y.size
            jac = np.empty((k, k))
            for j in range(k):
                e = np.zeros(k)
                e[j] = h
                jac[:, j] = (stick_breaking(y + e)[:-1] - stick_breaking(y - e)[:-1]) / (2 * h)
            return np.linalg.slogdet(jac)[1]

        for _ in range(5):
            x = rng.normal(0, 0.8, layout.size)
            expected = 0.0
            for sl in (layout.x_omega, layout.x_delta, layout.x_b):
                expected += stats.norm.logpdf(x[sl], hyper.mu, hyper.sigma).sum()
            u = x[layout.u_kappa]
            expected += (
                stats.gamma.logpdf(np.exp(u), a=hyper.gamma_shape, scale=1.0 / hyper.gamma_rate)
                + u
            ).sum()
            y = x[layout.pi_z]
            expected += stats.dirichlet.logpdf(stick_breaking(y), np.ones(4))
            expected += fd_stick_logdet(y)
            for sl, k in ((layout.pi_s, 4), (layout.pi_o, 4)):
                for row in x[sl].reshape(4, k - 1):
                    expected += stats.dirichlet.logpdf(stick_breaking(row), np.ones(k))
                    expected += fd_stick_logdet(row)
            assert prior_logdensity(x, hyper) == pytest.approx(expected, abs=1e-8)


class TestLogJoint:
    def test_single_class_collapse(self):
        hyper = Hyperparams(n_classes=1)
        layout = ParamLayout(hyper)
        rng = np.random.default_rng(5)
        x = rng.normal(0, 0.5, layout.size)
        theta = constrain(x, hyper)
        data, _ = generate(random_theta(2, 6)[0], 30, rng)
        lp, _ = log_joint(x, data, hyper)
        expected = prior_logdensity(x, hyper)
        for i in range(len(data)):
            expected += float(np.log(theta.pi_s[0, data.subject[i]]))
            expected += dists.beta_logpdf(data.predicate[i], theta.omega[0], theta.kappa[0])
            expected += dists.zig_logpmf(data.quantifier[i], theta.delta[0], theta.b[0])
            expected += float(np.log(theta.pi_o[0, data.object[i]]))
        assert lp == pytest.approx(expected, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        hyper = Hyperparams(n_classes=3)
        layout = ParamLayout(hyper)
        rng = np.random.default_rng(7)
        data, _ = generate(random_theta(3, 8)[0], 50, rng)
        h = 1e-5
        for _ in range(3):
            x = rng.normal(0, 0.6, layout.size)
            _, grad = log_joint(x, data, hyper)
            for i in range(layout.size):
                e = np.zeros(layout.size)
                e[i] = h
                fd = (log_joint(x + e, data, hyper)[0] - log_joint(x - e, data, hyper)[0]) / (2 * h)
                assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-6)

    def test_duplicating_data_doubles_likelihood(self):
        hyper = Hyperparams(n_classes=3)
        rng = np.random.default_rng(9)
        data, _ = generate(random_theta(3, 10)[0], 40, rng)
        doubled = EventArrays(
            np.concatenate([data.subject] * 2),
            np.concatenate([data.predicate] * 2),
            np.concatenate([data.quantifier] * 2),
            np.concatenate([data.object] * 2),
        )
        x = rng.normal(0, 0.5, ParamLayout(hyper).size)
        prior = prior_logdensity(x, hyper)
        single = log_joint(x, data, hyper)[0] - prior
        double = log_joint(x, doubled, hyper)[0] - prior
        assert double == pytest.approx(2 * single, rel=1e-12)

    def test_permutation_invariance(self):
        hyper = Hyperparams(n_classes=3)
        rng = np.random.default_rng(11)
        data, _ = generate(random_theta(3, 12)[0], 60, rng)
        perm = rng.permutation(60)
        shuffled = data.subset(perm)
        x = rng.normal(0, 0.5, ParamLayout(hyper).size)
        assert log_joint(x, data, hyper)[0] == pytest.approx(
            log_joint(x, shuffled, hyper)[0], rel=1e-13
        )

    def test_empty_data_reduces_to_prior(self):
        hyper = Hyperparams(n_classes=3)
        rng = np.random.default_rng(13)
        x = rng.normal(0, 0.5, ParamLayout(hyper).size)
        lp, grad = log_joint(x, None, hyper)
        assert lp == pytest.approx(prior_logdensity(x, hyper))

    def test_invalid_tuple_names_index(self):
        hyper = Hyperparams(n_classes=3)
        data = EventArrays([0, 0], [0.5, 0.5], [0, -2], [1, 1])
        x = np.zeros(ParamLayout(hyper).size)
        with pytest.raises(DataError, match="event 1"):
            log_joint(x, data, hyper)


class TestResponsibilities:
    def test_bayes_rule_three_to_one(self):
        theta = ParamsConstrained(
            pi_z=np.array([0.5, 0.5]),
            pi_s=np.array([[0.75, 0.25 / 3, 0.25 / 3, 0.25 / 3],
                           [0.25, 0.75 / 3, 0.75 / 3, 0.75 / 3]]),
            pi_o=np.full((2, 4), 0.25),
            omega=np.array([0.3, 0.7]),
            kappa=np.array([5.0, 5.0]),
            delta=np.array([0.6, 0.4]),
            b=np.array([0.6, 0.4]),
        )
        event = EventTuple(subject=0, predicate=0.5, quantifier=1, object=0)
        mass = responsibilities(theta, event, sites=("subject",))
        np.testing.assert_allclose(mass, [0.75, 0.25], atol=1e-12)

    def test_empty_mask_returns_class_weights(self):
        theta, _ = random_theta(4, 14)
        event = EventTuple(subject=2, predicate=0.4, quantifier=3, object=1)
        np.testing.assert_allclose(
            responsibilities(theta, event, sites=()), theta.pi_z, atol=1e-12
        )

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(15)
        for trial in range(20):
            theta, _ = random_theta(4, 100 + trial)
            event = EventTuple(
                subject=int(rng.integers(0, 4)),
                predicate=float(rng.uniform(0.05, 0.95)),
                quantifier=int(rng.integers(0, 40)),
                object=int(rng.integers(0, 4)),
            )
            weights = np.array(
                [
                    theta.pi_z[c]
                    * theta.pi_s[c, event.subject]
                    * np.exp(dists.beta_logpdf(event.predicate, theta.omega[c], theta.kappa[c]))
                    * np.exp(dists.zig_logpmf(event.quantifier, theta.delta[c], theta.b[c]))
                    * theta.pi_o[c, event.object]
                    for c in range(4)
                ]
            )
            np.testing.assert_allclose(
                responsibilities(theta, event), weights / weights.sum(), atol=1e-12
            )

    def test_consistent_with_log_weights(self):
        theta, hyper = random_theta(3, 16)
        rng = np.random.default_rng(17)
        data, _ = generate(theta, 25, rng)
        lw = class_log_weights(theta, data, ALL_SITES, hyper)
        manual = np.exp(lw - lw.max(axis=1, keepdims=True))
        manual /= manual.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(
            responsibilities_batch(theta, data, ALL_SITES, hyper), manual, atol=1e-13
        )

    def test_marginal_is_logsumexp_of_weights(self):
        theta, hyper = random_theta(3, 18)
        rng = np.random.default_rng(19)
        data, _ = generate(theta, 25, rng)
        from scipy.special import logsumexp

        np.testing.assert_allclose(
            event_log_marginal(theta, data, ALL_SITES, hyper),
            logsumexp(class_log_weights(theta, data, ALL_SITES, hyper), axis=1),
        )


class TestGenerate:
    def test_one_hot_class_weights(self):
        theta, _ = random_theta(3, 20)
        theta.pi_z = np.array([0.0, 1.0, 0.0])
        rng = np.random.default_rng(21)
        _, labels = generate(theta, 500, rng)
        assert np.all(labels == 1)

    def test_class_frequencies(self, separated_params):
        rng = np.random.default_rng(22)
        _, labels = generate(separated_params, 100_000, rng)
        freq = np.bincount(labels, minlength=3) / 100_000
        np.testing.assert_allclose(freq, separated_params.pi_z, atol=0.01)

    def test_quantifier_mean_within_three_se(self, separated_params):
        rng = np.random.default_rng(23)
        data, labels = generate(separated_params, 60_000, rng)
        for c in range(3):
            q = data.quantifier[labels == c]
            expected = dists.zig_mean(separated_params.delta[c], separated_params.b[c])
            se = q.std() / np.sqrt(q.size)
            assert abs(q.mean() - expected) < 3 * se + 1e-6

    def test_predicates_strictly_interior(self, separated_params):
        rng = np.random.default_rng(24)
        data, _ = generate(separated_params, 5000, rng)
        data.validate()

    def test_invalid_theta_rejected(self):
        theta, _ = random_theta(3, 25)
        theta.kappa = np.array([1.0, 3.0, 4.0])
        with pytest.raises(ValueError):
            generate(theta, 10, np.random.default_rng(0))


class TestSerialization:
    def test_json_roundtrip_with_hyper(self):
        theta, hyper = random_theta(4, 26)
        doc = theta.to_json(hyper)
        back, hyper_back = ParamsConstrained.from_json(doc)
        np.testing.assert_allclose(back.flatten(), theta.flatten())
        assert hyper_back == hyper

    def test_version_checked(self):
        theta, _ = random_theta(3, 27)
        doc = json.loads(theta.to_json())
        doc["version"] = 99
        with pytest.raises(ValueError, match="version"):
            ParamsConstrained.from_json(json.dumps(doc))


class TestSamplePriorAndInit:
    def test_prior_draws_satisfy_invariants(self):
        hyper = Hyperparams(n_classes=5)
        rng = np.random.default_rng(28)
        for _ in range(50):
            sample_prior(hyper, rng).validate()

    def test_initial_point_layout(self):
        hyper = Hyperparams(n_classes=3)
        layout = ParamLayout(hyper)
        x = initial_point(hyper, np.random.default_rng(29))
        assert np.all(x[layout.pi_z] == 0.0)
        assert np.all(x[layout.u_kappa] == 0.0)
        theta = constrain(x, hyper)
        np.testing.assert_allclose(theta.kappa, 3.0)
        np.testing.assert_allclose(theta.pi_z, 1 / 3)
