"""Conditional generator, two-headed discriminator, losses and the update step.

All objectives are expressed as quantities to minimize:

* classifier loss ``L_C = -E_real[log C(x)_y] - E_fake[log C(G(z, c))_c]``
* discriminator ``-E[log D(x)] - E[log(1 - D(G(z, c)))] + alpha * L_C``
* generator, saturating ``E[log(1 - D(G(z, c)))] + alpha * L_C^fake`` or
  non-saturating ``-E[log D(G(z, c))] + alpha * L_C^fake``

where ``L_C^fake`` is the fake-sample half of ``L_C``. With ``alpha = 0`` and
``D = 1/2`` everywhere the discriminator loss equals ``2 ln 2``.
"""

import collections
import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import NonFiniteError, NumericalAbort, ShapeError
from .latent import LatentSampler, one_hot
from .tdist import make_rng

LOG_FLOOR = 1e-12
G_MODES = ("saturating", "nonsaturating")

# Number of entries clamped at LOG_FLOOR, keyed by loss term.
clamp_counter = collections.Counter()

# rng stream identifiers within one training step
_STREAM_BATCH, _STREAM_D_LABELS, _STREAM_D_LATENT, _STREAM_D_DROPOUT = 0, 1, 2, 3
_STREAM_G_LABELS, _STREAM_G_LATENT, _STREAM_G_DROPOUT = 4, 5, 6


class Generator:
    """``(p + C) -> hidden -> hidden -> data_dim`` with a tanh output."""

    def __init__(self, input_dim, hidden, data_dim, rng):
        self.layers = [
            T.Dense(input_dim, hidden, rng, "leaky_relu", name="gen.0"),
            T.Dense(hidden, hidden, rng, "leaky_relu", name="gen.1"),
            T.Dense(hidden, data_dim, rng, "tanh", name="gen.2"),
        ]
        self.input_dim = input_dim
        self.data_dim = data_dim

    def __call__(self, z):
        if z.ndim != 2 or z.shape[1] != self.input_dim:
            raise ShapeError(f"generator expects (b, {self.input_dim}) input, got {z.shape}")
        for layer in self.layers:
            z = layer(z)
        return z

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


class Discriminator:
    """Three-layer shared trunk feeding an adversarial head and a class head.

    The adversarial head ends in a sigmoid score; the class head applies
    dropout (training mode only) before its softmax.
    """

    def __init__(self, data_dim, hidden, num_classes, rng, dropout=0.3):
        self.trunk = [
            T.Dense(data_dim, hidden, rng, "leaky_relu", name="disc.trunk.0"),
            T.Dense(hidden, hidden, rng, "leaky_relu", name="disc.trunk.1"),
            T.Dense(hidden, hidden, rng, "leaky_relu", name="disc.trunk.2"),
        ]
        self.adv_head = [
            T.Dense(hidden, hidden, rng, "leaky_relu", name="disc.adv.0"),
            T.Dense(hidden, 1, rng, "sigmoid", name="disc.adv.1"),
        ]
        self.cls_hidden = T.Dense(hidden, hidden, rng, "leaky_relu", name="disc.cls.0")
        self.cls_out = T.Dense(hidden, num_classes, rng, "identity", name="disc.cls.1")
        self.data_dim = data_dim
        self.num_classes = num_classes
        self.dropout = dropout

    def features(self, x):
        if x.ndim != 2 or x.shape[1] != self.data_dim:
            raise ShapeError(f"discriminator expects (b, {self.data_dim}) input, got {x.shape}")
        for layer in self.trunk:
            x = layer(x)
        return x

    def __call__(self, x, training=False, rng=None):
        h = self.features(x)
        score = h
        for layer in self.adv_head:
            score = layer(score)
        c = self.cls_hidden(h)
        c = T.dropout(c, self.dropout, rng, training=training and rng is not None)
        return score, T.softmax(self.cls_out(c))

    def parameters(self):
        layers = self.trunk + self.adv_head + [self.cls_hidden, self.cls_out]
        return [p for layer in layers for p in layer.parameters()]


class GanModel:
    """Generator, discriminator and latent sampler built from one seed."""

    def __init__(self, data_dim, latent_config, hidden=128, dropout=0.3, seed=0):
        rng = make_rng(seed, 0xC0FFEE)
        self.latent = LatentSampler(latent_config, rng)
        self.generator = Generator(latent_config.dim + latent_config.num_classes, hidden, data_dim, rng)
        self.discriminator = Discriminator(data_dim, hidden, latent_config.num_classes, rng, dropout)
        self.hidden = hidden

    @property
    def num_classes(self):
        return self.latent.config.num_classes

    @property
    def data_dim(self):
        return self.generator.data_dim

    def g_parameters(self):
        return self.generator.parameters() + self.latent.parameters()

    def d_parameters(self):
        return self.discriminator.parameters()

    def named_parameters(self):
        return [(p.name, p) for p in self.g_parameters() + self.d_parameters()]


def parameter_digest(params):
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def g_forward(model, labels, rng):
    """Fake batch ``G(z', c)`` for the given class labels."""
    return model.generator(model.latent(labels, rng))


def d_forward(model, x, training=False, rng=None):
    return model.discriminator(x, training=training, rng=rng)


# -- losses ----------------------------------------------------------------


def _as_tensor(x):
    return x if isinstance(x, T.Tensor) else T.Tensor(x)


def _safe_log(x, term, counted=None):
    low = x.data < LOG_FLOOR
    clamped = int(np.count_nonzero(low if counted is None else low & counted))
    if clamped:
        clamp_counter[term] += clamped
    return T.log(T.clamp_min(x, LOG_FLOOR))


def class_log_likelihood(class_probs, labels):
    """Mean log-probability assigned to the given class of each row."""
    class_probs = _as_tensor(class_probs)
    b, c = class_probs.shape
    mask = one_hot(labels, c)
    # only entries at the labelled class enter the loss, so only those count as clamped
    logs = _safe_log(class_probs, "classifier", counted=mask.astype(bool))
    return T.sum(T.Tensor(mask) * logs) * (1.0 / b)


def loss_classifier(class_probs_real, real_labels, class_probs_fake, fake_labels):
    """``L_C``: summed cross-entropy of the class head on real and fake rows."""
    return -class_log_likelihood(class_probs_real, real_labels) - class_log_likelihood(class_probs_fake, fake_labels)


def loss_d_adversarial(scores_real, scores_fake):
    scores_real, scores_fake = _as_tensor(scores_real), _as_tensor(scores_fake)
    return -T.mean(_safe_log(scores_real, "d_real")) - T.mean(_safe_log(1.0 - scores_fake, "d_fake"))


def loss_d(scores_real, scores_fake, l_c, alpha=1.0):
    """Discriminator objective; ``l_c`` may be a Tensor or a plain number."""
    return loss_d_adversarial(scores_real, scores_fake) + _scaled(alpha, l_c)


def loss_g(scores_fake, l_c_fake, alpha=1.0, mode="nonsaturating"):
    """Generator objective. ``l_c_fake`` is the (positive) fake half of ``L_C``."""
    scores_fake = _as_tensor(scores_fake)
    if mode == "saturating":
        adv = T.mean(_safe_log(1.0 - scores_fake, "g_saturating"))
    elif mode == "nonsaturating":
        adv = -T.mean(_safe_log(scores_fake, "g_nonsaturating"))
    else:
        raise ValueError(f"g_mode must be one of {G_MODES}, got {mode!r}")
    return adv + _scaled(alpha, l_c_fake)


def _scaled(alpha, value):
    value = _as_tensor(value)
    if value.shape != ():
        raise ShapeError(f"loss term must be scalar, got shape {value.shape}")
    return value * float(alpha)


# -- training --------------------------------------------------------------


@dataclass(frozen=True)
class StepReport:
    """Scalar losses of one update. ``d_loss`` is the adversarial part only."""

    step: int
    d_loss: float
    g_loss: float
    c_loss: float


def _max_abs_grad(params):
    grads = [np.max(np.abs(p.grad)) for p in params if p.grad is not None and p.grad.size]
    return float(max(grads)) if grads else 0.0


def _abort(step, stage, values, params, cause=None):
    diag = {"step": step, "stage": stage, **values, "max_abs_grad": _max_abs_grad(params)}
    raise NumericalAbort(f"non-finite value during {stage} at step {step}", diag) from cause


def train_step(model, opt_d, opt_g, real_x, real_y, step, seed, alpha=1.0, g_mode="nonsaturating", d_steps=1):
    """One round of ``d_steps`` discriminator updates followed by one generator update.

    Randomness (fake labels, latent draws, dropout masks) comes from streams
    keyed by ``(seed, step)``, so a step is reproducible in isolation. The
    latent parameters move only with the generator.
    """
    real = T.Tensor(real_x)
    real_y = np.asarray(real_y)
    b = real.shape[0]
    C = model.num_classes
    values = {}

    for k in range(d_steps):
        try:
            fake_labels = make_rng(seed, step, _STREAM_D_LABELS, k).integers(0, C, size=b)
            fake = g_forward(model, fake_labels, make_rng(seed, step, _STREAM_D_LATENT, k)).detach()
            drop = make_rng(seed, step, _STREAM_D_DROPOUT, k)
            s_real, p_real = d_forward(model, real, training=True, rng=drop)
            s_fake, p_fake = d_forward(model, fake, training=True, rng=drop)
            d_adv = loss_d_adversarial(s_real, s_fake)
            l_c = loss_classifier(p_real, real_y, p_fake, fake_labels)
            total = d_adv + l_c * float(alpha)
            values.update(d_loss=d_adv.item(), c_loss=l_c.item())
            opt_d.zero_grad()
            total.backward()
        except NonFiniteError as exc:
            _abort(step, "discriminator update", values, model.d_parameters(), exc)
        if not np.isfinite(total.item()):
            _abort(step, "discriminator update", values, model.d_parameters())
        opt_d.step()

    try:
        fake_labels = make_rng(seed, step, _STREAM_G_LABELS).integers(0, C, size=b)
        fake = g_forward(model, fake_labels, make_rng(seed, step, _STREAM_G_LATENT))
        s_fake, p_fake = d_forward(model, fake, training=True, rng=make_rng(seed, step, _STREAM_G_DROPOUT))
        g_total = loss_g(s_fake, -class_log_likelihood(p_fake, fake_labels), alpha, g_mode)
        penalty = model.latent.penalty()
        if penalty is not None:
            g_total = g_total + penalty
        values["g_loss"] = g_total.item()
        opt_g.zero_grad()
        g_total.backward()
    except NonFiniteError as exc:
        _abort(step, "generator update", values, model.g_parameters(), exc)
    opt_g.step()
    # the generator pass leaves gradients on D; they must not leak into the next D step
    for p in model.d_parameters():
        p.grad = None

    return StepReport(step, values["d_loss"], values["g_loss"], values["c_loss"])


def sample(model, labels, rng):
    """Conditional samples for ``labels`` as an ``(n, data_dim)`` array; dropout off."""
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size == 0:
        return np.empty((0, model.data_dim))
    return g_forward(model, labels, rng).numpy()
