"""Latent noise: attention-weighted mixture of reparameterized t components.

A draw proceeds in four steps. Each of ``N`` components produces
``t_i = mu_i + sigma_i * eps`` with ``eps`` standard t (or standard normal for
the Gaussian ablation). A two-layer attention network reads all ``N * p``
component values of a batch row and emits softmax weights ``pi``. The noise
is the weighted sum ``z' = sum_i pi_i t_i``, and the class label is appended
as a one-hot suffix before the generator sees it.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import ContractError, DomainError
from .tdist import DEFAULT_NU, sample_standard_t

LATENT_KINDS = ("t_mixture", "gaussian_mixture", "single_gaussian")

SIGMA_FLOOR = 1e-4
# Components start as exact standard t draws. The weighted sum already shrinks
# the noise by sqrt(sum pi_i^2), so a smaller start leaves G a near-constant
# input per class.
SIGMA_INIT = 1.0
SIMPLEX_TOLERANCE = 1e-9


@dataclass
class LatentConfig:
    n_components: int = 10
    dim: int = 10
    nu: float = DEFAULT_NU
    num_classes: int = 10
    attention_hidden: int = None
    kind: str = "t_mixture"
    sigma_penalty: float = 0.0

    def __post_init__(self):
        if self.n_components < 1 or self.dim < 1 or self.num_classes < 1:
            raise DomainError("n_components, dim and num_classes must all be >= 1")
        if self.kind not in LATENT_KINDS:
            raise DomainError(f"latent kind must be one of {LATENT_KINDS}, got {self.kind!r}")
        if not self.nu > 0:
            raise DomainError(f"nu must be positive, got {self.nu}")
        if self.attention_hidden is None:
            self.attention_hidden = max(self.n_components, 32)
        if self.kind != "single_gaussian" and not 5 <= self.n_components <= 50:
            warnings.warn(f"n_components={self.n_components} is outside the usual range [5, 50]", stacklevel=2)
        if not 10 <= self.dim <= 25:
            warnings.warn(f"latent dim={self.dim} is outside the usual range [10, 25]", stacklevel=2)


def _inverse_softplus(y):
    return float(np.log(np.expm1(y)))


class ComponentParams:
    """Learnable per-component location ``mu`` and raw scale (``N x p`` each)."""

    def __init__(self, n_components, dim, rng):
        self.mu = T.Tensor(rng.uniform(-1.0, 1.0, size=(n_components, dim)), requires_grad=True, name="latent.mu")
        raw = _inverse_softplus(SIGMA_INIT - SIGMA_FLOOR)
        self.sigma_raw = T.Tensor(np.full((n_components, dim), raw), requires_grad=True, name="latent.sigma_raw")

    def sigma(self):
        return T.softplus(self.sigma_raw) + SIGMA_FLOOR

    def parameters(self):
        return [self.mu, self.sigma_raw]


class AttentionNet:
    """Two dense layers mapping the flattened ``N * p`` components to ``N`` logits."""

    def __init__(self, n_components, dim, hidden, rng):
        self.first = T.Dense(n_components * dim, hidden, rng, "leaky_relu", name="attention.1")
        self.second = T.Dense(hidden, n_components, rng, "identity", name="attention.2")
        self.n_components = n_components
        self.dim = dim

    def parameters(self):
        return self.first.parameters() + self.second.parameters()


def draw_components(params, batch, rng, nu=DEFAULT_NU, noise="t"):
    """Reparameterized draws ``mu_i + sigma_i * eps``, shape ``(batch, N, p)``.

    ``eps`` is constant with respect to the graph; gradients reach ``mu`` and
    the raw scale.
    """
    n, p = params.mu.shape
    if noise == "t":
        eps = sample_standard_t(p, nu, batch * n, rng).reshape(batch, n, p)
    elif noise == "gaussian":
        eps = rng.standard_normal((batch, n, p))
    else:
        raise DomainError(f"unknown noise family {noise!r}")
    mu = T.broadcast_batch(params.mu, batch)
    sigma = T.broadcast_batch(params.sigma(), batch)
    return mu + sigma * T.Tensor(eps)


def attention_weights(net, components):
    """Softmax mixture weights ``pi`` of shape ``(batch, N)`` computed from the draws."""
    if components.ndim != 3 or components.shape[1:] != (net.n_components, net.dim):
        raise ContractError(
            f"components of shape {components.shape} do not match an attention net "
            f"for N={net.n_components}, p={net.dim}"
        )
    b = components.shape[0]
    flat = T.reshape(components, (b, net.n_components * net.dim))
    return T.softmax(net.second(net.first(flat)))


def compose_noise(components, pi):
    """``z' = sum_i pi_i * t_i`` per batch row."""
    row_sums = pi.data.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > SIMPLEX_TOLERANCE):
        worst = int(np.argmax(np.abs(row_sums - 1.0)))
        raise ContractError(f"mixture weights of row {worst} sum to {row_sums[worst]!r}, not 1")
    return T.mixture_sum(components, pi)


def one_hot(labels, num_classes):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DomainError("labels must be a 1-D sequence of class indices")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DomainError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels.astype(np.intp)] = 1.0
    return out


def concat_condition(z_prime, labels, num_classes):
    """Append one-hot class labels after the noise: ``(b, p) -> (b, p + C)``."""
    onehot = one_hot(labels, num_classes)
    if onehot.shape[0] != z_prime.shape[0]:
        raise ContractError(f"{onehot.shape[0]} labels for a batch of {z_prime.shape[0]}")
    return T.concat([z_prime, T.Tensor(onehot)], axis=1)


class LatentSampler:
    """The full latent pipeline for one of the supported latent kinds.

    ``t_mixture`` is the attention-weighted t mixture, ``gaussian_mixture``
    swaps the component noise for a standard normal, and ``single_gaussian``
    is a plain ``N(0, I_p)`` draw with no learnable parameters.
    """

    def __init__(self, config, rng):
        self.config = config
        if config.kind == "single_gaussian":
            self.components = None
            self.attention = None
        else:
            self.components = ComponentParams(config.n_components, config.dim, rng)
            self.attention = AttentionNet(config.n_components, config.dim, config.attention_hidden, rng)

    @property
    def noise_family(self):
        return "t" if self.config.kind == "t_mixture" else "gaussian"

    def noise(self, batch, rng):
        if self.components is None:
            return T.Tensor(rng.standard_normal((batch, self.config.dim)))
        comps = draw_components(self.components, batch, rng, self.config.nu, self.noise_family)
        return compose_noise(comps, attention_weights(self.attention, comps))

    def __call__(self, labels, rng):
        labels = np.asarray(labels)
        return concat_condition(self.noise(labels.size, rng), labels, self.config.num_classes)

    def penalty(self):
        """Optional scale regularizer ``w * sum((1 - sigma)**2)``; None when disabled."""
        if self.components is None or self.config.sigma_penalty == 0.0:
            return None
        gap = 1.0 - self.components.sigma()
        return self.config.sigma_penalty * T.sum(gap * gap)

    def parameters(self):
        if self.components is None:
            return []
        return self.components.parameters() + self.attention.parameters()
