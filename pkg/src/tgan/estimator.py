"""scikit-learn style front end for conditional t-mixture GAN training."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import gan
from . import tensor as T
from .latent import LatentConfig
from .optim import make_optimizer
from .tdist import DEFAULT_NU, make_rng

_BATCH_STREAM = 0xBA7C4
_SAMPLE_STREAM = 0x5A4D


class TGAN(BaseEstimator):
    """Conditional GAN with an attention-weighted Student's-t mixture latent.

    Parameters
    ----------
    latent_kind : {"t_mixture", "gaussian_mixture", "single_gaussian"}
        Latent noise family. The two mixtures share the attention pipeline and
        differ only in component noise; ``single_gaussian`` is plain N(0, I).
    n_components, latent_dim : int
        Mixture size N and component dimension p.
    nu : float
        Degrees of freedom shared by every t component (fixed, not learned).
    attention_hidden : int, optional
        Hidden width of the attention network; defaults to ``max(N, 32)``.
    hidden : int
        Width of every hidden layer in both networks.
    alpha : float
        Weight of the auxiliary classification loss.
    steps, batch_size : int
        Number of generator updates and minibatch size.
    lr, beta1, beta2, optimizer :
        Optimizer settings (``"adam"`` or ``"sgd"``).
    g_mode : {"nonsaturating", "saturating"}
        Adversarial term of the generator objective.
    d_g_ratio : int
        Discriminator updates per generator update.
    dropout : float
        Dropout rate in the discriminator's class head.
    sigma_penalty : float
        Weight of the optional ``(1 - sigma)**2`` scale regularizer.
    random_state : int
        Seed for initialization, minibatches, latent draws and dropout.

    Attributes
    ----------
    model_ : GanModel
    classes_ : ndarray of the class labels seen in ``fit``
    loss_history_ : list of StepReport
    """

    def __init__(
        self,
        latent_kind="t_mixture",
        n_components=10,
        latent_dim=10,
        nu=DEFAULT_NU,
        attention_hidden=None,
        hidden=128,
        alpha=1.0,
        steps=5000,
        batch_size=64,
        lr=2e-4,
        beta1=0.5,
        beta2=0.999,
        optimizer="adam",
        g_mode="nonsaturating",
        d_g_ratio=1,
        dropout=0.3,
        sigma_penalty=0.0,
        random_state=0,
    ):
        self.latent_kind = latent_kind
        self.n_components = n_components
        self.latent_dim = latent_dim
        self.nu = nu
        self.attention_hidden = attention_hidden
        self.hidden = hidden
        self.alpha = alpha
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.optimizer = optimizer
        self.g_mode = g_mode
        self.d_g_ratio = d_g_ratio
        self.dropout = dropout
        self.sigma_penalty = sigma_penalty
        self.random_state = random_state

    def _latent_config(self, num_classes):
        return LatentConfig(
            n_components=self.n_components,
            dim=self.latent_dim,
            nu=self.nu,
            num_classes=num_classes,
            attention_hidden=self.attention_hidden,
            kind=self.latent_kind,
            sigma_penalty=self.sigma_penalty,
        )

    def _init_model(self, data_dim, classes):
        self.classes_ = np.asarray(classes)
        self.n_features_in_ = data_dim
        self.model_ = gan.GanModel(
            data_dim, self._latent_config(len(classes)), self.hidden, self.dropout, self.random_state
        )
        self.loss_history_ = []
        return self

    def fit(self, X, y, callback=None):
        """Train from scratch for ``steps`` generator updates.

        ``X`` must lie in ``[-1, 1]`` to match the generator's tanh range.
        ``callback(report, estimator)`` runs after every step.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        if X.min() < -1.0 or X.max() > 1.0:
            raise ValueError("training data must lie in [-1, 1]")
        if self.g_mode not in gan.G_MODES:
            raise ValueError(f"g_mode must be one of {gan.G_MODES}, got {self.g_mode!r}")
        classes, y_idx = np.unique(y, return_inverse=True)
        self._init_model(X.shape[1], classes)

        model = self.model_
        opt_d = make_optimizer(self.optimizer, model.d_parameters(), self.lr, self.beta1, self.beta2)
        opt_g = make_optimizer(self.optimizer, model.g_parameters(), self.lr, self.beta1, self.beta2)
        n = X.shape[0]
        batch = min(self.batch_size, n)
        for step in range(self.steps):
            idx = make_rng(self.random_state, _BATCH_STREAM, step).choice(n, size=batch, replace=False)
            report = gan.train_step(
                model, opt_d, opt_g, X[idx], y_idx[idx], step, self.random_state,
                alpha=self.alpha, g_mode=self.g_mode, d_steps=self.d_g_ratio,
            )
            self.loss_history_.append(report)
            if callback is not None:
                callback(report, self)
        return self

    def _encode(self, labels):
        labels = np.asarray(labels)
        idx = np.searchsorted(self.classes_, labels)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if labels.size and np.any(self.classes_[idx] != labels):
            raise ValueError(f"unknown class labels; known classes are {self.classes_.tolist()}")
        return idx

    def sample(self, labels=None, n_samples=None, random_state=None):
        """Generate samples conditioned on ``labels``.

        With ``labels`` omitted, ``n_samples`` labels cycle through the classes.
        Returns ``(X, labels)``. Identical ``random_state`` gives identical output.
        """
        check_is_fitted(self, "model_")
        if labels is None:
            n_samples = 0 if n_samples is None else n_samples
            labels = self.classes_[np.arange(n_samples) % len(self.classes_)]
        labels = np.asarray(labels)
        seed = self.random_state if random_state is None else random_state
        X = gan.sample(self.model_, self._encode(labels), make_rng(seed, _SAMPLE_STREAM))
        return X, labels

    def _discriminate(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return gan.d_forward(self.model_, T.Tensor(X), training=False)

    def decision_function(self, X):
        """Discriminator probability that each row is real."""
        return self._discriminate(X)[0].numpy().ravel()

    def predict_proba(self, X):
        """Class posteriors from the auxiliary classifier head."""
        return self._discriminate(X)[1].numpy()

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def parameter_digest(self):
        check_is_fitted(self, "model_")
        return gan.parameter_digest([p for _, p in self.model_.named_parameters()])
