"""Adapters that plug the CNN builder and the FBCSP baseline into the
experiment runner.

Both adapters precompute their per-trial input transforms once per
TrialSet: every preprocessing step here (band-pass, EMA standardization,
resampling) is causal within a single trial, so nothing leaks across
cross-validation folds.

Preprocessing order: band-pass at the native rate, then resampling (CNN
inputs only; the baseline consumes native-rate trials), then EMA
standardization on what the model actually sees.
"""

from dataclasses import dataclass

import numpy as np

from . import dsp, fbcsp
from .builder import build_model, save_model
from .errors import ConfigError
from .net.model import predict
from .net.train import train


@dataclass
class PrepConfig:
    """Optional per-trial preprocessing. None disables a step (raw default)."""

    bandpass: tuple = None      # (lo, hi) Hz
    bandpass_order: int = 3
    ema_decay: float = None
    resample_to: float = None   # CNN input rate; baseline stays native


class NetMethod:
    """Build-train-predict cycle for a declarative CNN spec."""

    def __init__(self, spec, epochs=500, batch_size=32, lr=1e-3, prep=None,
                 label="eegnet"):
        self.spec = spec
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.prep = prep or PrepConfig()
        self.label = label
        self.inputs = None
        self.labels = None
        self._reports = {}

    def prepare(self, tset):
        x = np.asarray(tset.data, dtype=np.float64)
        fs = tset.fs
        if self.prep.bandpass is not None:
            lo, hi = self.prep.bandpass
            filt = dsp.butter_bandpass(self.prep.bandpass_order, lo, hi, fs)
            x = dsp.filtfilt(filt, x, axis=-1)
        if self.prep.resample_to is not None and self.prep.resample_to != fs:
            x = dsp.resample(x, fs, self.prep.resample_to, axis=-1)
            fs = self.prep.resample_to
        if self.prep.ema_decay is not None:
            x = dsp.ema_standardize(x, self.prep.ema_decay, axis=-1)
        n, c, t = x.shape
        if (c, t) != (self.spec.h, self.spec.w):
            raise ConfigError(
                f"prepared trials are {c} channels x {t} samples but the "
                f"spec expects h={self.spec.h}, w={self.spec.w}; adjust "
                f"--resample/--window or the spec")
        self.inputs = x[:, None, :, :].astype(np.float32)
        self.labels = tset.labels.copy()

    def fit(self, train_ids, val_ids, seed):
        init_seed, shuffle_seed = np.random.SeedSequence(seed).generate_state(2)
        model, _ = build_model(self.spec, seed=int(init_seed))
        validation = None
        if val_ids is not None:
            validation = (self.inputs[val_ids], self.labels[val_ids])
        report = train(model, self.inputs[train_ids], self.labels[train_ids],
                       epochs=self.epochs, batch_size=self.batch_size,
                       lr=self.lr, seed=int(shuffle_seed),
                       validation=validation)
        self._reports[id(model)] = report
        return model

    def evaluate(self, fitted, test_ids):
        pred, _ = predict(fitted, self.inputs[test_ids])
        return 100.0 * float(np.mean(pred == self.labels[test_ids]))

    def detail(self, fitted):
        report = self._reports.get(id(fitted))
        if report is None:
            return {}
        out = {"losses": list(report.losses),
               "elapsed_s": report.elapsed_s}
        if report.val_accuracy is not None:
            out["val_accuracy"] = list(report.val_accuracy)
            out["best_epoch"] = report.best_epoch
        return out

    def save(self, fitted, path):
        save_model(fitted, self.spec, path)


class FbcspMethod:
    """Deterministic filter-bank CSP baseline behind the same interface."""

    def __init__(self, config=None, prep=None, label="fbcsp"):
        self.config = config or fbcsp.FbcspConfig()
        self.prep = prep or PrepConfig()
        self.label = label
        self.covs = None
        self.labels = None
        self.fs = None
        self.n_channels = None

    def prepare(self, tset):
        x = np.asarray(tset.data, dtype=np.float64)
        if self.prep.bandpass is not None:
            lo, hi = self.prep.bandpass
            filt = dsp.butter_bandpass(self.prep.bandpass_order, lo, hi,
                                       tset.fs)
            x = dsp.filtfilt(filt, x, axis=-1)
        if self.prep.ema_decay is not None:
            x = dsp.ema_standardize(x, self.prep.ema_decay, axis=-1)
        # one pass over the filter bank; folds reuse these covariances
        self.covs = fbcsp.bank_covariances(x, tset.fs, self.config)
        self.labels = tset.labels.copy()
        self.fs = tset.fs
        self.n_channels = tset.n_channels

    def fit(self, train_ids, val_ids, seed):
        covs = self.covs[train_ids]
        labels = self.labels[train_ids]
        classes = sorted(int(c) for c in np.unique(labels))
        heads = [fbcsp._fit_head(covs, labels, c, self.config)
                 for c in classes]
        return fbcsp.FbcspModel(config=self.config, fs=self.fs,
                                n_channels=self.n_channels,
                                classes=classes, heads=heads)

    def evaluate(self, fitted, test_ids):
        pred = fbcsp.predict_from_covariances(fitted, self.covs[test_ids])
        return 100.0 * float(np.mean(pred == self.labels[test_ids]))

    def detail(self, fitted):
        return {}

    def save(self, fitted, path):
        fbcsp.save_fbcsp(fitted, path)
