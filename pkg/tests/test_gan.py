import math

import numpy as np
import pytest

from tgan import gan
from tgan import tensor as T
from tgan.data import ring_of_gaussians
from tgan.evaluation import conditional_accuracy, loss_equilibrium, train_proxy_classifier
from tgan.estimator import TGAN
from tgan.exceptions import NumericalAbort, ShapeError
from tgan.gradcheck import FD_TOLERANCE, gradient_error
from tgan.latent import LatentConfig
from tgan.optim import SGD, Adam
from tgan.tdist import make_rng

LN2 = math.log(2)


def tiny_model(seed=0, kind="t_mixture"):
    cfg = LatentConfig(n_components=2, dim=2, num_classes=2, attention_hidden=4, kind=kind)
    return gan.GanModel(3, cfg, hidden=4, dropout=0.3, seed=seed)


def half(b=4):
    return T.Tensor(np.full((b, 1), 0.5))


def uniform_probs(b, c):
    return np.full((b, c), 1.0 / c)


def digest(params):
    return gan.parameter_digest(params)


class TestLossValues:
    def test_classifier_perfect(self):
        probs = np.eye(3)
        assert gan.loss_classifier(probs, [0, 1, 2], probs, [0, 1, 2]).item() == 0.0

    def test_classifier_uniform(self):
        u = uniform_probs(5, 10)
        loss = gan.loss_classifier(u, [0, 1, 2, 3, 4], u, [9, 8, 7, 6, 5]).item()
        assert loss == pytest.approx(2 * math.log(10), abs=1e-12)
        assert round(loss, 4) == 4.6052

    def test_classifier_half(self):
        probs = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]])
        assert gan.loss_classifier(probs, [0, 1], probs, [1, 2]).item() == pytest.approx(2 * LN2, abs=1e-12)

    def test_d_equilibrium(self):
        assert gan.loss_d(half(), half(), 0.0, alpha=0.0).item() == pytest.approx(2 * LN2, abs=1e-12)

    def test_d_perfect(self):
        real, fake = T.Tensor(np.ones((3, 1))), T.Tensor(np.zeros((3, 1)))
        assert gan.loss_d(real, fake, 0.0, alpha=0.0).item() == 0.0

    def test_d_with_uniform_classifier(self):
        u = uniform_probs(4, 10)
        l_c = gan.loss_classifier(u, [0, 1, 2, 3], u, [4, 5, 6, 7])
        value = gan.loss_d(half(), half(), l_c, alpha=1.0).item()
        assert value == pytest.approx(2 * LN2 + 2 * math.log(10), abs=1e-12)
        assert round(value, 4) == 5.9915

    def test_g_saturating(self):
        assert gan.loss_g(half(), 0.0, alpha=0.0, mode="saturating").item() == pytest.approx(-LN2, abs=1e-12)

    def test_g_nonsaturating(self):
        assert gan.loss_g(half(), 0.0, alpha=0.0).item() == pytest.approx(LN2, abs=1e-12)

    def test_g_fooled_discriminator(self):
        assert gan.loss_g(T.Tensor(np.full((2, 1), 1 - 1e-15)), 0.0, alpha=0.0).item() < 1e-14

    def test_g_unknown_mode(self):
        with pytest.raises(ValueError):
            gan.loss_g(half(), 0.0, mode="wasserstein")

    def test_alpha_decomposition(self, rng):
        sr, sf = rng.uniform(0.05, 0.95, (6, 1)), rng.uniform(0.05, 0.95, (6, 1))
        l_c = rng.uniform(0, 5)
        base = gan.loss_d(sr, sf, l_c, alpha=0.0).item()
        for alpha in (0.3, 1.0, 2.5):
            assert gan.loss_d(sr, sf, l_c, alpha=alpha).item() == pytest.approx(base + alpha * l_c, abs=1e-12)

    def test_zero_probability_is_clamped(self):
        before = gan.clamp_counter["classifier"]
        probs = np.array([[1.0, 0.0]])
        loss = gan.loss_classifier(probs, [1], probs, [0]).item()
        assert loss == pytest.approx(-math.log(gan.LOG_FLOOR))
        assert gan.clamp_counter["classifier"] == before + 1

    def test_non_scalar_l_c_rejected(self):
        with pytest.raises(ShapeError):
            gan.loss_d(half(), half(), np.ones(2))


class TestNetworks:
    def test_generator_range_and_shape(self, rng):
        model = tiny_model()
        x = gan.g_forward(model, rng.integers(0, 2, 50), make_rng(1)).data
        assert x.shape == (50, 3) and np.all(np.abs(x) < 1)

    def test_zero_final_layer(self, rng):
        model = tiny_model()
        model.generator.layers[-1].W.data[...] = 0.0
        model.generator.layers[-1].b.data[...] = 0.0
        assert np.all(gan.g_forward(model, [0, 1, 1], make_rng(1)).data == 0.0)

    def test_gradient_reaches_latent(self, rng):
        model = tiny_model()
        z = T.Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        assert gradient_error(lambda: T.sum(model.generator(z)), [z]) < FD_TOLERANCE
        assert np.any(z.grad != 0)

    def test_zero_discriminator_scores_half(self, rng):
        model = tiny_model()
        for p in model.d_parameters():
            p.data[...] = 0.0
        score, probs = gan.d_forward(model, T.Tensor(rng.normal(size=(5, 3))))
        np.testing.assert_array_equal(score.data, 0.5)
        np.testing.assert_allclose(probs.data, 0.5, rtol=1e-15)

    def test_class_rows_sum_to_one(self, rng):
        _, probs = gan.d_forward(tiny_model(), T.Tensor(rng.normal(size=(20, 3))))
        assert np.all(np.abs(probs.data.sum(axis=1) - 1) <= 1e-12)

    def test_trunk_is_shared(self, rng):
        model = tiny_model()
        x = T.Tensor(rng.normal(size=(4, 3)))
        s0, p0 = gan.d_forward(model, x)
        model.discriminator.trunk[0].W.data[0, 0] += 0.5
        s1, p1 = gan.d_forward(model, x)
        assert np.any(s0.data != s1.data) and np.any(p0.data != p1.data)

    def test_dropout_only_in_training(self, rng):
        model = tiny_model()
        x = T.Tensor(rng.normal(size=(8, 3)))
        _, a = gan.d_forward(model, x)
        _, b = gan.d_forward(model, x, training=False, rng=make_rng(2))
        _, c = gan.d_forward(model, x, training=True, rng=make_rng(2))
        np.testing.assert_array_equal(a.data, b.data)
        assert np.any(a.data != c.data)

    def test_shape_errors(self):
        model = tiny_model()
        with pytest.raises(ShapeError):
            model.generator(T.Tensor(np.zeros((2, 5))))
        with pytest.raises(ShapeError):
            gan.d_forward(model, T.Tensor(np.zeros((2, 4))))


class TestLossGradients:
    def _batch(self, model, rng):
        real = T.Tensor(rng.uniform(-1, 1, (2, 3)))
        return real, np.array([0, 1]), np.array([1, 1])

    def test_discriminator_objective(self, rng):
        model = tiny_model()
        real, real_y, fake_y = self._batch(model, rng)
        fake = gan.g_forward(model, fake_y, make_rng(3)).detach()

        def fn():
            sr, pr = gan.d_forward(model, real)
            sf, pf = gan.d_forward(model, fake)
            return gan.loss_d(sr, sf, gan.loss_classifier(pr, real_y, pf, fake_y))

        assert gradient_error(fn, model.d_parameters()) < FD_TOLERANCE

    @pytest.mark.parametrize("mode", gan.G_MODES)
    def test_generator_objective(self, mode, rng):
        model = tiny_model()
        fake_y = np.array([0, 1])

        def fn():
            fake = gan.g_forward(model, fake_y, make_rng(4))
            sf, pf = gan.d_forward(model, fake)
            return gan.loss_g(sf, -gan.class_log_likelihood(pf, fake_y), mode=mode)

        assert gradient_error(fn, model.g_parameters()) < FD_TOLERANCE


def _step(model, lr, seed=0, step=0, opt=Adam):
    opt_d = opt(model.d_parameters(), lr=lr)
    opt_g = opt(model.g_parameters(), lr=lr)
    x = make_rng(9).uniform(-1, 1, (4, 3))
    return gan.train_step(model, opt_d, opt_g, x, [0, 1, 0, 1], step, seed)


class TestTrainStep:
    def test_zero_lr_changes_nothing(self):
        model = tiny_model()
        before = digest([p for _, p in model.named_parameters()])
        r1 = _step(model, 0.0, opt=SGD)
        r2 = _step(model, 0.0, opt=SGD)
        assert digest([p for _, p in model.named_parameters()]) == before
        assert r1 == r2

    def test_deterministic(self):
        a, b = tiny_model(), tiny_model()
        assert _step(a, 1e-3) == _step(b, 1e-3)
        assert digest([p for _, p in a.named_parameters()]) == digest([p for _, p in b.named_parameters()])

    def test_players_update_only_their_parameters(self):
        model = tiny_model()
        d0, g0 = digest(model.d_parameters()), digest(model.g_parameters())
        opt_d, opt_g = SGD(model.d_parameters(), lr=0.0), SGD(model.g_parameters(), lr=0.1)
        gan.train_step(model, opt_d, opt_g, make_rng(9).uniform(-1, 1, (4, 3)), [0, 1, 0, 1], 0, 0)
        assert digest(model.d_parameters()) == d0 and digest(model.g_parameters()) != g0

        opt_d, opt_g = SGD(model.d_parameters(), lr=0.1), SGD(model.g_parameters(), lr=0.0)
        g1 = digest(model.g_parameters())
        gan.train_step(model, opt_d, opt_g, make_rng(9).uniform(-1, 1, (4, 3)), [0, 1, 0, 1], 1, 0)
        assert digest(model.g_parameters()) == g1 and digest(model.d_parameters()) != d0

    def test_latent_parameters_move_with_generator(self):
        model = tiny_model()
        mu0 = model.latent.components.mu.data.copy()
        _step(model, 1e-2)
        assert np.any(model.latent.components.mu.data != mu0)

    def test_non_finite_aborts_with_diagnostics(self):
        model = tiny_model()
        model.discriminator.trunk[0].W.data[0, 0] = np.nan
        with pytest.raises(NumericalAbort) as info:
            _step(model, 1e-3, step=7)
        assert info.value.diagnostics["step"] == 7
        assert "max_abs_grad" in info.value.diagnostics


class TestSample:
    def test_repeatable(self):
        model = tiny_model()
        a = gan.sample(model, [0, 1, 1], make_rng(5))
        b = gan.sample(model, [0, 1, 1], make_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_empty(self):
        assert gan.sample(tiny_model(), [], make_rng(5)).shape == (0, 3)


@pytest.mark.slow
def test_two_mode_regression():
    ds = ring_of_gaussians(k=2, n=1000, rng=make_rng(0, 1))
    est = TGAN(steps=2000, hidden=64, random_state=0).fit(ds.samples, ds.labels)
    d_losses = [r.d_loss for r in est.loss_history_]
    tail = loss_equilibrium(d_losses, tail_fraction=0.1)
    assert 1.0 <= tail <= 1.7
    clf = train_proxy_classifier(ds, random_state=0)
    labels = np.tile([0, 1], 250)
    X, _ = est.sample(labels, random_state=1)
    assert conditional_accuracy(X, labels, clf) >= 0.8
