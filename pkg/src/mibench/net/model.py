"""Sequential model container, prediction helpers, and the NLL objective."""

import numpy as np

from ..errors import BuildError, NumericError


class Model:
    """An ordered stack of layers with a train/eval mode switch.

    Layer output shapes are chained at build time by the builder; the model
    itself only orchestrates forward/backward passes and parameter access.
    """

    def __init__(self, layers, rng_seed=0, dtype=np.float32):
        self.layers = list(layers)
        self.mode = "train"
        self.rng_seed = int(rng_seed)
        self.dtype = dtype
        self._rng = None

    def train_mode(self):
        self.mode = "train"
        return self

    def eval_mode(self):
        self.mode = "eval"
        return self

    def forward(self, x, rng=None):
        train = self.mode == "train"
        if train and rng is None:
            if self._rng is None:
                self._rng = np.random.default_rng(self.rng_seed)
            rng = self._rng
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
        return x

    def backward(self, gout):
        for layer in reversed(self.layers):
            gout = layer.backward(gout)
        return gout

    def parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            for p in layer.params():
                out.append((f"layer{i:02d}.{p.name}", p))
        return out

    def param_count(self):
        return sum(p.data.size for _, p in self.parameters())

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.parameters()}
        for i, layer in enumerate(self.layers):
            for name, buf in layer.buffers().items():
                state[f"layer{i:02d}.{name}"] = buf.copy()
        return state

    def load_state_dict(self, state):
        seen = set()
        for name, p in self.parameters():
            p.data[...] = state[name]
            seen.add(name)
        for i, layer in enumerate(self.layers):
            for name, buf in layer.buffers().items():
                key = f"layer{i:02d}.{name}"
                buf[...] = state[key]
                seen.add(key)
        extra = set(state) - seen
        if extra:
            raise BuildError(f"state entries do not match model: {sorted(extra)}")


def nll_loss(logprobs, labels):
    """Mean negative log likelihood of integer labels under log-probability rows."""
    loss, _ = nll_loss_grad(logprobs, labels)
    return loss


def nll_loss_grad(logprobs, labels):
    """NLL loss and its gradient w.r.t. the log-probability matrix."""
    n, k = logprobs.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    rows = np.arange(n)
    loss = float(-logprobs[rows, labels].mean())
    grad = np.zeros_like(logprobs)
    grad[rows, labels] = -1.0 / n
    return loss, grad


def predict(model, inputs, batch_size=256):
    """Class labels and log-probabilities for a batch of inputs (eval mode)."""
    model.eval_mode()
    chunks = []
    for start in range(0, inputs.shape[0], batch_size):
        x = np.ascontiguousarray(inputs[start:start + batch_size],
                                 dtype=model.dtype)
        chunks.append(model.forward(x))
    logprobs = np.concatenate(chunks, axis=0)
    if not np.all(np.isfinite(logprobs)):
        raise NumericError("non-finite log-probabilities during prediction")
    return logprobs.argmax(axis=-1), logprobs
