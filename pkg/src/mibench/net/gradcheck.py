"""Central-difference gradient verification for layers and whole models.

The numeric side perturbs one scalar at a time and re-evaluates a scalar
objective; stochastic layers stay comparable because every evaluation
re-seeds the forward RNG identically, freezing dropout masks.
Run at float64 with inputs of unit order.

Relative errors are |analytic - numeric| / max(|analytic| + |numeric|, 1e-6);
the floor means gradients below 1e-6 are effectively compared in absolute
terms, where central differences only carry cancellation noise.
"""

from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .model import nll_loss, nll_loss_grad

_FORWARD_SEED = 0x5EED


@dataclass
class GradCheckReport:
    per_tensor: dict
    max_rel_error: float

    def worst(self):
        return max(self.per_tensor, key=self.per_tensor.get)


def _rel_error(analytic, numeric):
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    err = np.abs(analytic - numeric) / denom
    return float(err.max()) if err.size else 0.0


def _numeric_grad(tensor, evaluate, step):
    flat = tensor.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = evaluate()
        flat[i] = orig - step
        lo = evaluate()
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(tensor.shape)


def gradcheck_model(model, x, labels, step=1e-3):
    """Compare analytic and numeric gradients of the NLL objective.

    Checks every trainable parameter and the input tensor; returns a report
    with the max relative error per tensor. The model must be float64.

    Composite models with ELU stages have a discontinuous second derivative,
    so the default step may leave visible truncation error; step 1e-4 keeps
    both truncation and cancellation below 1e-4 for unit-order inputs.
    """
    assert model.dtype == np.float64, "gradient checks require float64 models"
    x = np.array(x, dtype=np.float64)
    model.train_mode()

    def evaluate():
        logprobs = model.forward(x, rng=np.random.default_rng(_FORWARD_SEED))
        return nll_loss(logprobs, labels)

    # single-thread BLAS: thousands of tiny matmuls, thread fan-out only hurts
    with threadpool_limits(limits=1):
        logprobs = model.forward(x, rng=np.random.default_rng(_FORWARD_SEED))
        _, lgrad = nll_loss_grad(logprobs, labels)
        gin = model.backward(lgrad)

        per_tensor = {}
        for name, p in model.parameters():
            analytic = p.grad.copy()
            numeric = _numeric_grad(p.data, evaluate, step)
            per_tensor[name] = _rel_error(analytic, numeric)
        per_tensor["input"] = _rel_error(gin, _numeric_grad(x, evaluate, step))
    return GradCheckReport(per_tensor, max(per_tensor.values()))


def gradcheck_layer(layer, x, step=1e-3, train=True, seed=7):
    """Gradient check of a single layer through a fixed random projection."""
    x = np.array(x, dtype=np.float64)
    y = layer.forward(x, train=train, rng=np.random.default_rng(_FORWARD_SEED))
    proj = np.random.default_rng(seed).standard_normal(y.shape)

    def evaluate():
        out = layer.forward(x, train=train,
                            rng=np.random.default_rng(_FORWARD_SEED))
        return float((out * proj).sum())

    with threadpool_limits(limits=1):
        gin = layer.backward(proj)
        per_tensor = {}
        for p in layer.params():
            analytic = p.grad.copy()
            numeric = _numeric_grad(p.data, evaluate, step)
            per_tensor[p.name] = _rel_error(analytic, numeric)
        per_tensor["input"] = _rel_error(gin, _numeric_grad(x, evaluate, step))
    return GradCheckReport(per_tensor, max(per_tensor.values()))
