"""Central finite-difference checks for autodiff gradients."""

import numpy as np

FD_STEP = 1e-6
FD_TOLERANCE = 1e-4


def numerical_grad(fn, tensor, step=FD_STEP):
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``tensor.data``.

    ``fn`` must rebuild its graph from the current tensor values on each call.
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = fn().item()
        flat[i] = orig - step
        minus = fn().item()
        flat[i] = orig
        out[i] = (plus - minus) / (2.0 * step)
    return grad


def gradient_error(fn, tensors, step=FD_STEP):
    """Worst ``|autodiff - fd| / max(1, |fd|)`` over every entry of ``tensors``."""
    for t in tensors:
        t.grad = None
    fn().backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = numerical_grad(fn, t, step)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
