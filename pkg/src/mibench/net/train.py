"""Mini-batch training loop: seeded shuffling, Adam updates, NLL objective."""

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, NumericError
from .model import nll_loss_grad, predict
from .optim import Adam


@dataclass
class TrainReport:
    """Per-epoch training record plus the parameters the run settled on."""

    losses: list = field(default_factory=list)
    val_accuracy: list = None
    best_epoch: int = None
    elapsed_s: float = 0.0
    final_state: dict = None


def train(model, inputs, labels, epochs, batch_size=32, lr=1e-3, seed=0,
          validation=None):
    """Train a built model in place and return a TrainReport.

    inputs: (n, ...) array matching the model's expected input shape.
    labels: (n,) integer class labels.
    validation: optional (val_inputs, val_labels); when given, per-epoch
        validation accuracy is tracked and the parameters from the best
        epoch are restored at the end.

    Deterministic given (seed, single-thread BLAS): the same seed yields a
    bitwise-identical report and final parameters.
    """
    n = int(inputs.shape[0])
    if n == 0:
        raise DataError("training set is empty")
    inputs = np.ascontiguousarray(inputs, dtype=model.dtype)
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    optimizer = Adam(model.parameters(), lr=lr)
    report = TrainReport()
    if validation is not None:
        report.val_accuracy = []
    best_acc = -1.0
    best_state = None

    start = time.perf_counter()
    for epoch in range(epochs):
        model.train_mode()
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            logprobs = model.forward(inputs[idx], rng=rng)
            loss, grad = nll_loss_grad(logprobs, labels[idx])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            epoch_loss += loss * len(idx)
            model.backward(grad)
            optimizer.step()
        report.losses.append(epoch_loss / n)
        if validation is not None:
            vx, vy = validation
            pred, _ = predict(model, vx)
            acc = 100.0 * float(np.mean(pred == np.asarray(vy)))
            report.val_accuracy.append(acc)
            if acc > best_acc:
                best_acc = acc
                report.best_epoch = epoch
                best_state = model.state_dict()

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval_mode()
    report.elapsed_s = time.perf_counter() - start
    report.final_state = model.state_dict()
    return report
