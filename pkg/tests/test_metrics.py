import numpy as np
import pytest

from pkd.core import PkdConfig, run_pkd
from pkd.metrics import (
    coordinate_probe,
    delta_descent,
    delta_remaining,
    lambda_sweep,
    lipschitz_estimate,
    objective_estimate,
    plot_sweep,
    posterior_probe,
    ppr,
    psr,
    sweep_to_csv,
)
from pkd.models import GeneratorModel, MlpSpec, PosteriorModel
from pkd.rng import substream


@pytest.fixture
def pair():
    gen = GeneratorModel.initialized(MlpSpec(3, (4,), 3, output_gain=5.0), seed=7)
    post = PosteriorModel.initialized(MlpSpec(3, (), 1), seed=8)
    return gen, post


def zero_weight_posterior(dim):
    post = PosteriorModel.initialized(MlpSpec(dim, (), 1), seed=0)
    post.params = post.params.replaced(np.zeros(post.params.size))
    return post


def identity_generator(dim):
    gen = GeneratorModel.initialized(MlpSpec(dim, (), dim), seed=0)
    vals = gen.params.copy()
    vals.view("out.w")[...] = np.eye(dim)
    vals.view("out.b")[...] = 0.0
    gen.params = vals
    return gen


class TestProbes:
    def test_coordinate_probe_extracts_coordinate(self):
        x = substream(0, "probe").standard_normal((6, 4))
        np.testing.assert_array_equal(coordinate_probe(2, 4)(x), x[:, 2])

    def test_posterior_probe_matches_prob(self, pair):
        _, post = pair
        x = substream(1, "probe").standard_normal((6, 3))
        np.testing.assert_array_equal(posterior_probe("p", post)(x), post.prob(x))


class TestObjectiveEstimate:
    def test_flat_posterior_gives_log_half_exactly(self, pair):
        gen, _ = pair
        post = zero_weight_posterior(3)
        z = substream(2, "obj").standard_normal((100, 3))
        mean, se = objective_estimate(gen, post, z)
        assert mean == np.log(0.5)
        assert se == 0.0

    def test_duplication_invariance(self, pair):
        gen, post = pair
        z = substream(3, "obj").standard_normal((50, 3))
        m1, _ = objective_estimate(gen, post, z)
        m2, _ = objective_estimate(gen, post, np.repeat(z, 3, axis=0))
        assert m1 == pytest.approx(m2, abs=1e-12)


class TestDeltas:
    def test_same_parameters_give_zero(self, pair):
        gen, post = pair
        z = substream(4, "delta").standard_normal((64, 3))
        probes = [coordinate_probe(0, 3)]
        assert delta_descent(gen, post, gen.params, gen.params, z) == 0.0
        per, worst = delta_remaining(gen, gen.params, gen.params, probes, z)
        assert per["coord_0"] == worst == 0.0

    def test_descent_positive_after_run(self, pair):
        gen, post = pair
        theta, _ = run_pkd(gen, post, PkdConfig(steps=5, lam=0.0, eval_size=500))
        z = gen.prior.sample(substream(0, "eval"), 500, 3)
        assert delta_descent(gen, post, gen.params, theta, z) > 0.0

    def test_constant_probe_never_shifts(self, pair):
        gen, post = pair
        theta, _ = run_pkd(gen, post, PkdConfig(steps=3, lam=0.0, eval_size=200))
        import pkd.autodiff as ad
        from pkd.metrics import Probe

        w = ad.Node(np.zeros((1, 3)), op="const:w")
        b = ad.Node(np.ones(1), op="const:b")
        const = Probe(name="const", build=lambda x: ad.affine(x, w, b))
        z = gen.prior.sample(substream(0, "eval"), 200, 3)
        per, worst = delta_remaining(gen, gen.params, theta, [const], z)
        assert per["const"] == worst == 0.0

    def test_empty_probe_list_gives_zero_max(self, pair):
        gen, _ = pair
        z = substream(5, "delta").standard_normal((8, 3))
        per, worst = delta_remaining(gen, gen.params, gen.params, [], z)
        assert per == {} and worst == 0.0


class TestLipschitz:
    def test_identity_generator_coordinate_probe_closed_form(self):
        # grad of x_0 wrt (out.w row 0, out.b[0]) is (z, 1); everything else 0
        gen = identity_generator(3)
        est = lipschitz_estimate(gen, [coordinate_probe(0, 3)], radius=0.0, n_theta=1)
        rng = substream(0, "lipschitz")
        zs = gen.prior.sample(rng, 16, 3)
        assert est == max(1.0, float(np.abs(zs).max()))

    def test_monotone_in_theta_samples(self, pair):
        gen, _ = pair
        probes = [coordinate_probe(0, 3)]
        ests = [lipschitz_estimate(gen, probes, radius=0.5, n_theta=k) for k in (1, 3, 8)]
        assert ests[0] <= ests[1] <= ests[2]

    def test_rejects_empty_sampling(self, pair):
        gen, _ = pair
        with pytest.raises(ValueError):
            lipschitz_estimate(gen, [coordinate_probe(0, 3)], radius=0.1, n_theta=0)


class TestPprPsr:
    def test_ppr_requires_output_change(self, pair):
        gen, post = pair
        z = substream(6, "ppr").standard_normal((4, 3))
        with pytest.raises(ValueError):
            ppr(gen, post, gen.params, gen.params, z)

    def test_ppr_manual_arithmetic(self, pair):
        gen, post = pair
        theta2 = gen.params.replaced(gen.params.values + 1e-3)
        z = substream(7, "ppr").standard_normal((5, 3))
        got = ppr(gen, post, gen.params, theta2, z)
        xb, xa = gen.generate(z), gen.generate(z, theta2)
        num = np.abs(np.log(post.prob(xa)) - np.log(post.prob(xb)))
        den = np.sum((xa - xb) ** 2, axis=1) / 3
        np.testing.assert_array_equal(got, num / den)

    def test_psr_zero_when_over_threshold(self, pair):
        gen, post = pair
        _, trace = run_pkd(gen, post, PkdConfig(steps=3, lam=1e9, eval_size=100))
        assert psr(trace, gen.params.size) == 0.0

    def test_psr_one_when_gradient_nowhere_zero(self, pair):
        gen, post = pair
        _, trace = run_pkd(gen, post, PkdConfig(steps=3, lam=0.0, eval_size=100))
        assert psr(trace, gen.params.size) == 1.0


class TestSweep:
    def test_single_point_matches_standalone_run(self, pair):
        gen, post = pair
        cfg = PkdConfig(steps=4, epsilon=1e-3, lam=0.05, seed=2, eval_size=500)
        probes = [coordinate_probe(1, 3)]
        rows = lambda_sweep(gen, post, probes, [0.05], cfg)
        assert len(rows) == 1
        theta, trace = run_pkd(gen, post, cfg)
        z_eval = gen.prior.sample(substream(cfg.seed, "eval"), cfg.eval_size, 3)
        assert rows[0].delta == delta_descent(gen, post, gen.params, theta, z_eval)
        assert rows[0].psr == psr(trace, gen.params.size)
        _, rem = delta_remaining(gen, gen.params, theta, probes, z_eval)
        assert rows[0].delta_rem == rem

    def test_empty_grid_rejected(self, pair):
        gen, post = pair
        with pytest.raises(ValueError):
            lambda_sweep(gen, post, [], np.array([]), PkdConfig())

    def test_noop_lambda_reports_nan_ppr(self, pair):
        gen, post = pair
        rows = lambda_sweep(
            gen, post, [], [1e9], PkdConfig(steps=2, eval_size=100)
        )
        assert np.isnan(rows[0].ppr_mean) and np.isnan(rows[0].ppr_std)
        assert rows[0].psr == 0.0

    def test_csv_round_trip(self, pair, tmp_path):
        gen, post = pair
        rows = lambda_sweep(
            [gen, post][0], post, [coordinate_probe(0, 3)], [0.1, 1e9],
            PkdConfig(steps=2, eval_size=100),
        )
        path = tmp_path / "sweep.csv"
        sweep_to_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "lambda,delta,delta_remaining,delta_ratio,psr,ppr_mean,ppr_std"
        assert len(lines) == 3
        first = lines[1].split(",")
        assert float(first[0]) == 0.1
        assert float(first[1]) == rows[0].delta

    def test_plot_smoke(self, pair, tmp_path):
        gen, post = pair
        rows = lambda_sweep(
            gen, post, [coordinate_probe(0, 3)], [0.1, 1.0],
            PkdConfig(steps=2, eval_size=100),
        )
        path = tmp_path / "sweep.svg"
        plot_sweep(rows, path)
        assert path.read_text().lstrip().startswith("<?xml")
