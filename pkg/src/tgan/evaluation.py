"""Sample-quality metrics: mode coverage, proxy inception score, conditional accuracy."""

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import tensor as T
from .exceptions import ContractError, DomainError
from .gan import parameter_digest
from .optim import Adam
from .tdist import make_rng

DEFAULT_SPLITS = 10
DEFAULT_THRESHOLD_SIGMA = 3.0
DEFAULT_TAIL_FRACTION = 0.1


def mode_coverage(samples, centers, std, threshold_sigma=DEFAULT_THRESHOLD_SIGMA):
    """Count recovered modes and the fraction of high-quality samples.

    A sample is high quality when it lies within ``threshold_sigma * std`` of
    its nearest center. A mode is recovered when at least ``n / (10 k)``
    high-quality samples have it as nearest center.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    k, n = centers.shape[0], samples.shape[0]
    if k < 1:
        raise DomainError("mode_coverage needs at least one center")
    if n == 0:
        return 0, 0.0
    dist = np.linalg.norm(samples[:, None, :] - centers[None, :, :], axis=2)
    nearest = np.argmin(dist, axis=1)
    good = dist[np.arange(n), nearest] <= threshold_sigma * std
    per_mode = np.bincount(nearest[good], minlength=k)
    recovered = int(np.count_nonzero(per_mode >= n / (10.0 * k)))
    return recovered, float(np.mean(good))


def _posteriors(samples, classifier):
    if hasattr(classifier, "predict_proba"):
        check_is_fitted(classifier)
        return np.asarray(classifier.predict_proba(samples), dtype=np.float64)
    return np.asarray(classifier(samples), dtype=np.float64)


def inception_score_from_probs(probs, splits=DEFAULT_SPLITS):
    """``exp(E_x KL(p(y|x) || p(y)))`` per split; returns ``(mean, std)`` over splits."""
    probs = np.asarray(probs, dtype=np.float64)
    if splits < 1:
        raise DomainError(f"splits must be >= 1, got {splits}")
    if probs.shape[0] < splits:
        raise DomainError(f"{probs.shape[0]} samples cannot fill {splits} splits")
    scores = []
    for part in np.array_split(probs, splits):
        marginal = part.mean(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        kl = max(0.0, float(terms.sum(axis=1).mean()))
        scores.append(math.exp(kl))
    return float(np.mean(scores)), float(np.std(scores))


def proxy_inception_score(samples, classifier, splits=DEFAULT_SPLITS):
    """Inception-style score with a locally trained classifier supplying ``p(y|x)``."""
    return inception_score_from_probs(_posteriors(samples, classifier), splits)


def conditional_accuracy(samples, requested_labels, classifier):
    """Fraction of samples the classifier assigns to the label they were generated for."""
    requested = np.asarray(requested_labels)
    if requested.size == 0:
        raise ContractError("conditional accuracy of an empty sample set is undefined")
    predicted = np.argmax(_posteriors(samples, classifier), axis=1)
    classes = getattr(classifier, "classes_", None)
    if classes is not None:
        predicted = np.asarray(classes)[predicted]
    return float(np.mean(predicted == requested))


def loss_equilibrium(d_loss_series, tail_fraction=DEFAULT_TAIL_FRACTION):
    """Mean over the last ``ceil(tail_fraction * len)`` entries of a loss series."""
    series = np.asarray(d_loss_series, dtype=np.float64)
    if series.size < 10:
        raise ContractError(f"loss series of length {series.size} is too short (need >= 10)")
    if not 0.0 < tail_fraction <= 1.0:
        raise DomainError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
    m = max(1, math.ceil(tail_fraction * series.size))
    return float(series[-m:].mean())


class ProxyClassifier(ClassifierMixin, BaseEstimator):
    """Small dense softmax classifier used as the reference for sample scoring."""

    def __init__(self, hidden=64, steps=1500, batch_size=128, lr=1e-3, random_state=0):
        self.hidden = hidden
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        rng = make_rng(self.random_state, 0xC1A55)
        C = len(self.classes_)
        self.layers_ = [
            T.Dense(X.shape[1], self.hidden, rng, "leaky_relu", name="proxy.0"),
            T.Dense(self.hidden, self.hidden, rng, "leaky_relu", name="proxy.1"),
            T.Dense(self.hidden, C, rng, "identity", name="proxy.2"),
        ]
        params = [p for layer in self.layers_ for p in layer.parameters()]
        opt = Adam(params, lr=self.lr, beta1=0.9)
        n = X.shape[0]
        batch = min(self.batch_size, n)
        onehot = np.eye(C)[y_idx]
        for step in range(self.steps):
            idx = make_rng(self.random_state, 0xC1A55, step).choice(n, size=batch, replace=False)
            probs = self._forward(X[idx])
            loss = -T.sum(T.Tensor(onehot[idx]) * T.log(T.clamp_min(probs, 1e-12))) * (1.0 / batch)
            opt.zero_grad()
            loss.backward()
            opt.step()
        self.train_accuracy_ = float(np.mean(self.predict(X) == y))
        self.digest_ = parameter_digest(params)
        return self

    def _forward(self, X):
        h = T.Tensor(X)
        for layer in self.layers_:
            h = layer(h)
        return T.softmax(h)

    def predict_proba(self, X):
        check_is_fitted(self, "layers_")
        X = check_array(X, dtype=np.float64)
        if X.shape[0] == 0:
            return np.empty((0, len(self.classes_)))
        return self._forward(X).numpy()

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


def train_proxy_classifier(dataset, random_state=0, min_accuracy=None):
    """Fit a :class:`ProxyClassifier` on a dataset and enforce a training-accuracy floor.

    The floor defaults to 0.97 for 2-D data and 0.90 for images.
    """
    if min_accuracy is None:
        min_accuracy = 0.97 if dataset.data_dim == 2 else 0.90
    clf = ProxyClassifier(random_state=random_state).fit(dataset.samples, dataset.labels)
    if clf.train_accuracy_ < min_accuracy:
        raise ContractError(f"proxy classifier reached {clf.train_accuracy_:.3f} accuracy, below {min_accuracy}")
    return clf


@dataclass
class EvalReport:
    """One evaluation row. Coverage fields are None for datasets without mode centers."""

    name: str
    modes_recovered: int
    high_quality_fraction: float
    proxy_is_mean: float
    proxy_is_std: float
    conditional_accuracy: float
    d_loss_tail_mean: float
    classifier_digest: str

    @classmethod
    def columns(cls):
        return list(cls.__dataclass_fields__)

    def csv_row(self):
        out = []
        for v in asdict(self).values():
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        return out

    def to_text(self):
        width = max(len(c) for c in self.columns())
        lines = [f"{c.ljust(width)} : {'n/a' if v is None else v}" for c, v in asdict(self).items()]
        return "\n".join(lines) + "\n"


def reports_to_csv(reports, fh=None):
    buf = fh if fh is not None else io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EvalReport.columns())
    for r in reports:
        writer.writerow(r.csv_row())
    return None if fh is not None else buf.getvalue()


def evaluate(name, samples, requested_labels, dataset, classifier, d_loss_series=None, splits=DEFAULT_SPLITS,
             threshold_sigma=DEFAULT_THRESHOLD_SIGMA, tail_fraction=DEFAULT_TAIL_FRACTION):
    """Assemble an :class:`EvalReport` for one set of generated samples."""
    modes = hq = None
    if dataset.centers is not None:
        modes, hq = mode_coverage(samples, dataset.centers, dataset.std, threshold_sigma)
    is_mean, is_std = proxy_inception_score(samples, classifier, splits)
    tail = None
    if d_loss_series is not None and len(d_loss_series) >= 10:
        tail = loss_equilibrium(d_loss_series, tail_fraction)
    return EvalReport(
        name=name,
        modes_recovered=modes,
        high_quality_fraction=hq,
        proxy_is_mean=is_mean,
        proxy_is_std=is_std,
        conditional_accuracy=conditional_accuracy(samples, requested_labels, classifier),
        d_loss_tail_mean=tail,
        classifier_digest=getattr(classifier, "digest_", "")[:16],
    )
