import numpy as np
import pytest
from scipy.optimize import linprog

from pkd.models import (
    GeneratorModel,
    InversionConfig,
    InversionError,
    MlpSpec,
    PosteriorModel,
    PretrainError,
    PriorSpec,
    TrainConfig,
    invert_latent,
    pretrain_generator,
    train_posterior,
)
from pkd.synth import Attribute, AttributeMixtureSpec, MixtureComponent, sample, true_posterior
from pkd.rng import substream


def gaussian_spec(mean, var):
    d = len(mean)
    return AttributeMixtureSpec(
        dimension=d,
        components=[MixtureComponent(1.0, np.asarray(mean, float), np.asarray(var, float))],
        attributes={
            "l": Attribute(np.eye(d)[0], 0.0, 1.0),
            "r": Attribute(np.eye(d)[1], 0.0, 1.0),
        },
        knowledge="l",
    )


class TestGenerator:
    def test_zero_params_zero_output(self):
        gen = GeneratorModel.initialized(MlpSpec(3, (4,), 3), seed=0)
        gen.params = gen.params.replaced(np.zeros(gen.params.size))
        z = substream(0, "zero").standard_normal((5, 3))
        assert np.array_equal(gen.generate(z), np.zeros((5, 3)))

    def test_generate_deterministic(self):
        gen = GeneratorModel.initialized(MlpSpec(3, (4,), 2, output_gain=7.0), seed=1)
        z = substream(1, "det").standard_normal((4, 3))
        assert np.array_equal(gen.generate(z), gen.generate(z))

    def test_output_gradient_matches_finite_differences(self):
        gen = GeneratorModel.initialized(MlpSpec(2, (3,), 2, output_gain=5.0), seed=2)
        z = substream(2, "fd").standard_normal((1, 2))
        graph = gen.graph()
        out = graph.forward({"z": z}, gen.params)
        seed = np.zeros_like(out)
        seed[0, 1] = 1.0  # gradient of output coordinate 1
        got = graph.backward(seed=seed)

        h, theta = 1e-6, gen.params
        fd = np.empty(theta.size)
        for i in range(theta.size):
            bump = np.zeros(theta.size)
            bump[i] = h
            up = gen.generate(z, theta.replaced(theta.values + bump))[0, 1]
            dn = gen.generate(z, theta.replaced(theta.values - bump))[0, 1]
            fd[i] = (up - dn) / (2 * h)
        rel = np.abs(got - fd) / np.maximum(np.abs(fd), 1e-6)
        assert rel.max() < 1e-4

    def test_latent_dim_mismatch_raises(self):
        from pkd.autodiff import ShapeError

        gen = GeneratorModel.initialized(MlpSpec(3, (), 2), seed=0)
        with pytest.raises(ShapeError):
            gen.generate(np.zeros((4, 5)))


class TestPriorSpec:
    def test_gaussian_prior_center_and_scale(self):
        center = np.array([1.0, -2.0, 0.5])
        prior = PriorSpec(kind="gaussian", center=center, xi=0.01)
        zs = prior.sample(substream(0, "prior"), 20_000, 3)
        assert np.abs(zs.mean(axis=0) - center).max() < 0.01
        assert np.abs(zs.var(axis=0) - 0.01).max() < 0.005

    def test_xi_must_be_positive(self):
        with pytest.raises(ValueError):
            PriorSpec(kind="gaussian", center=np.zeros(2), xi=0.0)


class TestPretrain:
    def test_affine_generator_reaches_expressible_gaussian(self):
        # an affine generator can represent any Gaussian pushforward exactly
        spec = gaussian_spec([1.0, -2.0], [0.5, 1.5])
        gen = GeneratorModel.initialized(MlpSpec(2, (), 2), seed=1)
        theta, report = pretrain_generator(
            spec, gen, TrainConfig(epochs=1500, data_size=256, mmd_threshold=1e-3)
        )
        assert report.final_mmd < 1e-3

    def test_warm_start_is_nonincreasing_noop(self):
        spec = gaussian_spec([1.0, -2.0], [0.5, 1.5])
        gen = GeneratorModel.initialized(MlpSpec(2, (), 2), seed=1)
        theta, _ = pretrain_generator(
            spec, gen, TrainConfig(epochs=1500, data_size=256, mmd_threshold=1e-3)
        )
        gen.params = theta
        _, report = pretrain_generator(
            spec, gen, TrainConfig(epochs=100, data_size=256, mmd_threshold=1.0)
        )
        assert np.all(np.diff(report.history) <= 1e-12)

    def test_same_seed_identical_checkpoints(self):
        spec = gaussian_spec([0.0, 0.0], [1.0, 1.0])
        runs = []
        for _ in range(2):
            gen = GeneratorModel.initialized(MlpSpec(2, (3,), 2), seed=4)
            theta, _ = pretrain_generator(
                spec, gen, TrainConfig(epochs=50, data_size=128, mmd_threshold=10.0)
            )
            runs.append(theta)
        assert np.array_equal(runs[0].values, runs[1].values)

    def test_unreachable_threshold_raises_with_final_mmd(self):
        spec = gaussian_spec([10.0, -10.0], [0.1, 0.1])
        gen = GeneratorModel.initialized(MlpSpec(2, (), 2), seed=0)
        with pytest.raises(PretrainError) as info:
            pretrain_generator(spec, gen, TrainConfig(epochs=3, mmd_threshold=1e-9))
        assert np.isfinite(info.value.final_mmd)


class TestPosterior:
    def test_clamp_contract_for_extreme_inputs(self):
        post = PosteriorModel.initialized(MlpSpec(2, (), 1), seed=0)
        big = np.array([[1e6, -1e6], [-1e6, 1e6]])
        p = post.prob(big)
        assert np.all(p >= 1e-12) and np.all(p <= 1 - 1e-12)

    def test_linearly_separable_labels(self):
        rng = substream(0, "separable")
        x = rng.standard_normal((400, 3))
        y = (x @ np.array([2.0, -1.0, 0.5]) > 0.3).astype(float)
        # independent separability certificate: strict LP feasibility
        aug = np.hstack([x, np.ones((400, 1))]) * np.where(y > 0.5, 1.0, -1.0)[:, None]
        lp = linprog(c=np.zeros(4), A_ub=-aug, b_ub=-np.ones(400), bounds=[(None, None)] * 4)
        assert lp.success  # the sample really is linearly separable

        post = PosteriorModel.initialized(MlpSpec(3, (), 1), seed=1)
        _, report = train_posterior(x, y, post, TrainConfig(epochs=3000, learning_rate=0.5))
        assert report.holdout_accuracy >= 0.99

    def test_constant_half_labels_learn_half(self):
        rng = substream(1, "constant")
        x = rng.standard_normal((300, 2))
        y = np.full(300, 0.5)
        post = PosteriorModel.initialized(MlpSpec(2, (), 1), seed=2)
        params, _ = train_posterior(x, y, post, TrainConfig(epochs=2000, learning_rate=0.5))
        probs = PosteriorModel(post.spec, params).prob(rng.standard_normal((200, 2)))
        assert np.all((probs > 0.45) & (probs < 0.55))

    def test_labels_outside_unit_interval_rejected(self):
        post = PosteriorModel.initialized(MlpSpec(2, (), 1), seed=0)
        with pytest.raises(ValueError):
            train_posterior(np.zeros((4, 2)), np.array([0.0, 1.0, 1.5, 0.2]), post, TrainConfig())

    def test_trained_posterior_tracks_true_posterior(self, toy_models):
        cfg, posts = toy_models["cfg"], toy_models["posteriors"]
        holdout = sample(cfg.data, 10_000, seed=1234)
        x = np.stack([s.x for s in holdout])
        for attr in cfg.data.attributes:
            gap = np.abs(posts[attr].prob(x) - true_posterior(cfg.data, attr, x))
            assert gap.mean() < 0.05


class TestInversion:
    def test_in_range_point_reconstructs(self):
        gen = GeneratorModel.initialized(MlpSpec(4, (8,), 4, output_gain=10.0), seed=2)
        z_star = substream(5, "invert-target").standard_normal(4)
        x0 = gen.generate(z_star.reshape(1, -1)).ravel()
        z0 = invert_latent(gen, x0, InversionConfig(tolerance=1e-8, seed=0))
        err = float(np.sum((gen.generate(z0.reshape(1, -1)).ravel() - x0) ** 2))
        assert err <= 1e-8

    def test_identity_generator_returns_x0(self):
        gen = GeneratorModel.initialized(MlpSpec(3, (), 3), seed=0)
        vals = gen.params.copy()
        vals.view("out.w")[:] = np.eye(3)
        vals.view("out.b")[:] = 0.0
        gen.params = vals
        x0 = np.array([0.3, -1.2, 0.7])
        z0 = invert_latent(gen, x0, InversionConfig(tolerance=1e-18, seed=0))
        assert np.abs(z0 - x0).max() < 1e-8

    def test_out_of_range_point_raises_with_best_error(self):
        gen = GeneratorModel.initialized(MlpSpec(3, (), 3), seed=0)
        with pytest.raises(InversionError) as info:
            invert_latent(
                gen,
                np.array([50.0, 50.0, 50.0]),
                InversionConfig(tolerance=1e-10, iterations=50, restarts=2, seed=0),
            )
        assert info.value.best_error > 1e-10
