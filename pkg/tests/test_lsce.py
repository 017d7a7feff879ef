import numpy as np
import pytest
from scipy import optimize

from rankforge.core_linalg import nearest_rank_frobenius, vec
from rankforge.exceptions import (
    BootstrapUnstable,
    InvalidInput,
    NonsingularityViolated,
    SingularGamma,
)
from rankforge.lsce import (
    CsBootstrapConfig,
    FixedRankManifold,
    Manifold,
    PointManifold,
    ReplicateDraw,
    Sphere,
    circle,
    constrained_statistic,
    cs_bootstrap,
    linearization_residual,
    order_statistic_index,
    order_statistic_quantile,
)
from rankforge.random_streams import replicate_rng


def normal_sampler(scale=1.0, dim=1):
    def draw(rng):
        return scale * rng.standard_normal(dim)
    return draw


def zero_sampler(rng):
    return np.zeros(1)


class TestProjections:
    def test_circle_statistic(self):
        fit = constrained_statistic(np.array([0.3]), circle(), np.eye(1), np.eye(1), 100)
        np.testing.assert_allclose(fit.theta_c, [1.0])
        assert fit.statistic == pytest.approx(49.0)

    def test_circle_on_manifold(self):
        fit = constrained_statistic(np.array([-1.0]), circle(), n=100)
        np.testing.assert_allclose(fit.theta_c, [-1.0])
        assert fit.statistic == 0.0

    def test_circle_origin_goes_positive(self):
        np.testing.assert_array_equal(circle().project(np.zeros(1)), [1.0])

    def test_point_manifold_score(self):
        fit = constrained_statistic(np.array([0.8]), PointManifold([0.5]), b=np.array([[0.5]]), n=40)
        np.testing.assert_allclose(fit.theta_c, [0.5])
        assert fit.statistic == pytest.approx(40 * 0.09 * 0.5)

    def test_sphere_projection_on_surface(self, rng):
        sphere = Sphere(3)
        theta = rng.standard_normal(3) * 2
        x = sphere.project(theta)
        assert np.linalg.norm(x) == pytest.approx(1.0)
        np.testing.assert_allclose(sphere.project(x), x, atol=1e-12)

    @pytest.mark.parametrize("theta", [(0.3, 0.2), (2.0, -1.0), (0.0, 0.1), (-0.5, 0.0)])
    def test_weighted_sphere_projection_is_optimal(self, theta):
        a = np.diag([1.0, 4.0])
        theta = np.asarray(theta)

        def loss(angle):
            d = theta - np.array([np.cos(angle), np.sin(angle)])
            return float(d @ a @ d)

        grid = np.linspace(-np.pi, np.pi, 200001)
        values = np.array([loss(t) for t in grid])
        k = int(np.argmin(values))
        res = optimize.minimize_scalar(loss, bounds=(grid[k] - 1e-4, grid[k] + 1e-4), method="bounded",
                                       options={"xatol": 1e-12})
        x = Sphere(2).project(theta, a)
        assert np.linalg.norm(x) == pytest.approx(1.0)
        d = theta - x
        assert float(d @ a @ d) == pytest.approx(min(res.fun, values[k]), abs=1e-8)

    def test_weighted_sphere_constraint_satisfied(self, rng, make_gamma):
        a = make_gamma(4, seed=21)
        oracle = Sphere(4).constraint_oracle()
        for _ in range(5):
            x = Sphere(4).project(rng.standard_normal(4) * 3, a)
            assert abs(oracle.g(x)[0]) < 1e-10

    def test_fixed_rank_frobenius(self, rng):
        mat = rng.standard_normal((3, 4))
        manifold = FixedRankManifold(3, 4, 1)
        np.testing.assert_allclose(
            manifold.project(vec(mat)), vec(nearest_rank_frobenius(mat, 1)[0]), atol=1e-12
        )
        assert manifold.codimension == 6

    def test_fixed_rank_zero(self, rng):
        manifold = FixedRankManifold(2, 3, 0)
        np.testing.assert_array_equal(manifold.project(rng.standard_normal(6)), np.zeros(6))

    def test_fixed_rank_weighted(self, rng, make_gamma):
        mat = np.outer([1.0, 2.0, -1.0], [0.5, 1.0, 0.0, 2.0])
        out = FixedRankManifold(3, 4, 1).project(vec(mat), make_gamma(12, seed=22))
        np.testing.assert_allclose(out, vec(mat), atol=1e-8)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInput):
            constrained_statistic(np.zeros(3), circle())

    def test_ill_conditioned_metric(self):
        with pytest.raises(SingularGamma):
            constrained_statistic(np.array([0.5, 0.5]), Sphere(2), a=np.diag([1.0, 1e-14]))


class TestOrderStatistic:
    def test_index(self):
        assert order_statistic_index(1000, 0.05) == 950
        assert order_statistic_index(10, 0.05) == 10
        assert order_statistic_index(1, 0.5) == 1
        assert order_statistic_index(100, 0.99) == 1

    def test_quantile_of_shuffled_sequence(self, rng):
        values = rng.permutation(np.arange(1.0, 1001.0))
        assert order_statistic_quantile(values, 0.05) == 950.0

    def test_monotone_in_alpha(self, rng):
        values = rng.standard_normal(500)
        qs = [order_statistic_quantile(values, a) for a in (0.2, 0.1, 0.05, 0.01)]
        assert qs == sorted(qs)

    def test_empty(self):
        with pytest.raises(InvalidInput):
            order_statistic_quantile(np.array([]), 0.05)


class TestCsBootstrap:
    def test_zero_perturbation(self):
        cfg = CsBootstrapConfig(replicates=50, seed=1, w_star_sampler=zero_sampler)
        out = cs_bootstrap(np.array([0.3]), circle(), None, None, 100, cfg)
        np.testing.assert_array_equal(out.replicate_values, np.zeros(50))
        assert out.quantile == 0.0
        assert out.reject
        assert out.p_value == 0.0

    def test_zero_perturbation_on_manifold(self):
        cfg = CsBootstrapConfig(replicates=20, seed=1, w_star_sampler=zero_sampler)
        out = cs_bootstrap(np.array([1.0]), circle(), None, None, 100, cfg)
        assert not out.reject
        assert out.p_value == 1.0

    def test_deterministic_and_thread_invariant(self):
        base = dict(replicates=200, seed=42, w_star_sampler=normal_sampler(dim=3))
        theta = np.array([0.5, 1.0, -0.3])
        one = cs_bootstrap(theta, Sphere(3), None, None, 50, CsBootstrapConfig(**base))
        again = cs_bootstrap(theta, Sphere(3), None, None, 50, CsBootstrapConfig(**base))
        threaded = cs_bootstrap(theta, Sphere(3), None, None, 50, CsBootstrapConfig(workers=4, **base))
        np.testing.assert_array_equal(one.replicate_values, again.replicate_values)
        np.testing.assert_array_equal(one.replicate_values, threaded.replicate_values)
        assert one.quantile == threaded.quantile

    def test_quantile_is_order_statistic(self):
        cfg = CsBootstrapConfig(replicates=1000, seed=3, w_star_sampler=normal_sampler())
        out = cs_bootstrap(np.array([0.9]), circle(), None, None, 100, cfg)
        assert out.quantile == np.sort(out.replicate_values)[949]
        assert out.reject == (out.statistic > out.quantile)
        assert out.replicates == 1000

    def test_replicates_bounded_by_perturbation(self):
        sampler = normal_sampler(scale=2.0)
        cfg = CsBootstrapConfig(replicates=300, seed=5, w_star_sampler=sampler)
        out = cs_bootstrap(np.array([3.0]), circle(), None, None, 100, cfg)
        w = np.array([sampler(replicate_rng(5, i))[0] for i in range(300)])
        assert np.all(out.replicate_values <= w ** 2 + 1e-9)

    def test_alternative_quantile_stays_bounded(self):
        sigma = 1.0
        quantiles, stats = [], []
        for n in (100, 400):
            rng = np.random.default_rng(n)
            x = rng.normal(3.0, sigma, size=n)
            s = float(np.std(x, ddof=1))
            cfg = CsBootstrapConfig(replicates=2000, alpha=0.01, seed=n, w_star_sampler=normal_sampler(scale=s))
            out = cs_bootstrap(np.array([x.mean()]), circle(), None, None, n, cfg)
            quantiles.append(out.quantile)
            stats.append(out.statistic)
            assert out.quantile < 4 * 6.635 * s ** 2
            assert out.reject
        assert stats[1] / stats[0] == pytest.approx(4.0, rel=0.35)

    def test_metric_rule_and_gamma_star(self):
        seen = []

        def sampler(rng):
            return ReplicateDraw(rng.standard_normal(2), gamma_star=np.eye(2) * 2.0)

        def rule(theta0, draw):
            seen.append(draw.gamma_star[0, 0])
            return None, np.linalg.inv(draw.gamma_star)

        cfg = CsBootstrapConfig(replicates=10, seed=0, w_star_sampler=sampler, metric_rule=rule)
        out = cs_bootstrap(np.array([2.0, 0.0]), Sphere(2), None, None, 25, cfg)
        assert seen == [2.0] * 10
        assert out.statistic == pytest.approx(25.0)

    def test_failures_within_budget_are_excluded(self):
        calls = {"count": 0}

        def flaky(rng):
            calls["count"] += 1
            w = rng.standard_normal(1)
            return np.array([np.nan]) if calls["count"] in (3, 7) else w

        cfg = CsBootstrapConfig(replicates=200, seed=9, w_star_sampler=flaky)
        out = cs_bootstrap(np.array([0.5]), circle(), None, None, 100, cfg)
        assert out.failures == 2
        assert out.replicate_values.size == 198
        assert out.replicates == 200

    def test_too_many_failures(self):
        calls = {"count": 0}

        def flaky(rng):
            calls["count"] += 1
            return np.array([np.nan]) if calls["count"] in (3, 7) else rng.standard_normal(1)

        cfg = CsBootstrapConfig(replicates=100, seed=9, w_star_sampler=flaky)
        with pytest.raises(BootstrapUnstable) as info:
            cs_bootstrap(np.array([0.5]), circle(), None, None, 100, cfg)
        assert info.value.failures == 2

    def test_wrong_draw_length(self):
        cfg = CsBootstrapConfig(replicates=5, seed=0, w_star_sampler=normal_sampler(dim=2))
        with pytest.raises(InvalidInput):
            cs_bootstrap(np.array([0.5]), circle(), None, None, 100, cfg)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(replicates=0), dict(alpha=1.0), dict(alpha=0.0), dict(workers=0)],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(InvalidInput):
            CsBootstrapConfig(w_star_sampler=zero_sampler, **kwargs)

    def test_sampler_required(self):
        with pytest.raises(InvalidInput):
            CsBootstrapConfig()


class TestLinearization:
    @pytest.mark.parametrize("t", [0.5, -0.5, 0.1])
    def test_circle_is_exact(self, t):
        assert linearization_residual(circle(), np.array([1.0]), np.array([t])) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("t", [0.1, 0.05, 0.01])
    def test_sphere_tangent_direction(self, t):
        r = linearization_residual(Sphere(3), np.array([1.0, 0.0, 0.0]), np.array([0.0, t, 0.0]))
        assert r <= 2 * t ** 2

    def test_sphere_normal_direction(self):
        r = linearization_residual(Sphere(3), np.array([1.0, 0.0, 0.0]), np.array([0.2, 0.0, 0.0]))
        assert r == pytest.approx(0.0, abs=1e-15)

    def test_quadratic_remainder(self, rng):
        for _ in range(20):
            theta_c = Sphere(3).project(rng.standard_normal(3))
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            for s in (1e-1, 1e-2, 1e-3):
                assert linearization_residual(Sphere(3), theta_c, s * d) / s ** 2 <= 4.0

    def test_degenerate_jacobian(self):
        with pytest.raises(NonsingularityViolated):
            linearization_residual(Sphere(3), np.zeros(3), np.array([0.1, 0.0, 0.0]))

    def test_manifold_without_constraint(self):
        class Box(Manifold):
            dimension = 1
            codimension = 0

            def project(self, theta, a_weight=None):
                return np.clip(theta, -1, 1)

        with pytest.raises(InvalidInput):
            linearization_residual(Box(), np.array([0.0]), np.array([0.1]))


@pytest.mark.slow
def test_circle_bootstrap_level_and_power():
    def level(mu, n, reps=1000, boot=500):
        rejections = 0
        for rep in range(reps):
            x = np.random.default_rng([rep, n]).normal(mu, 1.0, size=n)
            centred = x - x.mean()

            def sampler(rng, centred=centred):
                return np.array([np.sqrt(n) * rng.choice(centred, size=n).mean()])

            cfg = CsBootstrapConfig(replicates=boot, seed=rep, w_star_sampler=sampler)
            rejections += cs_bootstrap(np.array([x.mean()]), circle(), None, None, n, cfg).reject
        return rejections / reps

    assert level(1.0, 400) == pytest.approx(0.05, abs=0.03)
    assert level(3.0, 400, reps=200, boot=200) == 1.0
