"""Trial containers, windowing, CSV import, and synthetic trial generation.

The on-disk container ("EEGT") is a fixed little-endian layout that any
language can parse without a library:

    magic   4 bytes  "EEGT"
    u32     version (1)
    u32     n_trials
    u32     n_channels
    u32     n_samples
    f32     sampling rate Hz
    u8[n_trials]   labels (0..3)
    u8[n_trials]   subject ids
    u8[n_trials]   session flags (0 = train session, 1 = test session)
    f32[...]       samples, trial-major, then channel, then time

Round trips are bit-exact.
"""

import csv
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (BadMagicError, ConfigError, DataError, LabelRangeError,
                     TruncatedError)

MAGIC = b"EEGT"
VERSION = 1
MAX_LABEL = 3

SESSION_TRAIN = 0
SESSION_TEST = 1


@dataclass
class TrialSet:
    """Labeled EEG trials: (n_trials, n_channels, n_samples) plus metadata."""

    data: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    sessions: np.ndarray
    fs: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.subjects = np.asarray(self.subjects, dtype=np.int64)
        self.sessions = np.asarray(self.sessions, dtype=np.int64)
        n = self.data.shape[0]
        if self.data.ndim != 3:
            raise DataError(f"data must be 3-d, got shape {self.data.shape}")
        for name, arr in (("labels", self.labels),
                          ("subjects", self.subjects),
                          ("sessions", self.sessions)):
            if arr.shape != (n,):
                raise DataError(f"{name} must have one entry per trial")
        if n and (self.labels.min() < 0 or self.labels.max() > MAX_LABEL):
            raise LabelRangeError(
                f"labels must lie in [0, {MAX_LABEL}], got "
                f"[{self.labels.min()}, {self.labels.max()}]")
        if not self.fs > 0:
            raise DataError(f"sampling rate must be positive, got {self.fs}")

    @property
    def n_trials(self):
        return self.data.shape[0]

    @property
    def n_channels(self):
        return self.data.shape[1]

    @property
    def n_samples(self):
        return self.data.shape[2]

    def subject_ids(self):
        return sorted(int(s) for s in np.unique(self.subjects))

    def select(self, ids):
        ids = np.asarray(ids)
        return TrialSet(self.data[ids], self.labels[ids],
                        self.subjects[ids], self.sessions[ids], self.fs)


def write_container(tset, path):
    header = struct.pack("<4sIIIIf", MAGIC, VERSION, tset.n_trials,
                         tset.n_channels, tset.n_samples, tset.fs)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(tset.labels.astype("<u1").tobytes())
        fh.write(tset.subjects.astype("<u1").tobytes())
        fh.write(tset.sessions.astype("<u1").tobytes())
        fh.write(np.ascontiguousarray(tset.data, dtype="<f4").tobytes())


def read_container(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    head_size = struct.calcsize("<4sIIIIf")
    if len(blob) < head_size:
        raise TruncatedError(f"{path}: shorter than the fixed header")
    magic, version, n, c, t, fs = struct.unpack("<4sIIIIf", blob[:head_size])
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    expected = head_size + 3 * n + 4 * n * c * t
    if len(blob) < expected:
        raise TruncatedError(
            f"{path}: truncated payload ({len(blob)} bytes, expected "
            f"{expected})")
    if len(blob) > expected:
        raise DataError(f"{path}: {len(blob) - expected} trailing bytes")
    pos = head_size
    labels = np.frombuffer(blob, "<u1", n, pos).astype(np.int64)
    pos += n
    subjects = np.frombuffer(blob, "<u1", n, pos).astype(np.int64)
    pos += n
    sessions = np.frombuffer(blob, "<u1", n, pos).astype(np.int64)
    pos += n
    if n and labels.max() > MAX_LABEL:
        raise LabelRangeError(
            f"{path}: label {labels.max()} exceeds {MAX_LABEL}")
    data = np.frombuffer(blob, "<f4", n * c * t, pos).reshape(n, c, t)
    return TrialSet(data.copy(), labels, subjects, sessions, float(fs))


def extract_window(tset, t_start, t_end):
    """Keep samples in [round(t_start*fs), round(t_end*fs)) of every trial."""
    lo = round(t_start * tset.fs)
    hi = round(t_end * tset.fs)
    if not 0 <= lo < hi <= tset.n_samples:
        raise DataError(
            f"window [{t_start}, {t_end}) s maps to samples [{lo}, {hi}) "
            f"outside trials of {tset.n_samples} samples")
    return replace(tset, data=tset.data[:, :, lo:hi])


def _pink_noise(rng, n_channels, n_samples):
    """1/f-amplitude noise per channel, unit standard deviation."""
    white = rng.standard_normal((n_channels, n_samples))
    spectrum = np.fft.rfft(white, axis=-1)
    freqs = np.fft.rfftfreq(n_samples)
    scale = np.zeros_like(freqs)
    scale[1:] = 1.0 / np.sqrt(freqs[1:])
    shaped = np.fft.irfft(spectrum * scale, n=n_samples, axis=-1)
    std = shaped.std(axis=-1, keepdims=True)
    return shaped / np.maximum(std, 1e-12)


@dataclass
class SynthConfig:
    """Band-power trial generator settings.

    Each class rides a sinusoid drawn from its own frequency band on its
    own channels, on top of pink-noise background common to all channels.
    ``snr`` is the oscillation amplitude relative to the unit noise
    deviation; 0 yields pure noise (chance-level data).
    """

    class_bands: list  # [(lo, hi)] per class, disjoint
    n_channels: int = 4
    fs: float = 128.0
    n_samples: int = 256
    trials_per_class: int = 24  # per subject, split evenly across sessions
    n_subjects: int = 1
    snr: float = 1.5
    seed: int = 0
    class_channels: list = field(default=None)


def synth_mi(cfg):
    """Deterministic synthetic TrialSet shaped like a motor-imagery dataset."""
    n_classes = len(cfg.class_bands)
    if n_classes < 1:
        raise ConfigError("need at least one class band")
    for lo, hi in cfg.class_bands:
        if not 0 < lo < hi < cfg.fs / 2:
            raise ConfigError(f"band ({lo}, {hi}) outside (0, fs/2)")
    ordered = sorted(cfg.class_bands)
    for (_, hi), (lo, _) in zip(ordered, ordered[1:]):
        if lo < hi:
            raise ConfigError("class bands overlap")
    channels = cfg.class_channels
    if channels is None:
        channels = [[k % cfg.n_channels] for k in range(n_classes)]
    rng = np.random.default_rng(cfg.seed)
    t = np.arange(cfg.n_samples) / cfg.fs

    data, labels, subjects, sessions = [], [], [], []
    for subject in range(1, cfg.n_subjects + 1):
        for klass in range(n_classes):
            for trial in range(cfg.trials_per_class):
                x = _pink_noise(rng, cfg.n_channels, cfg.n_samples)
                if cfg.snr > 0:
                    lo, hi = cfg.class_bands[klass]
                    freq = rng.uniform(lo, hi)
                    phase = rng.uniform(0, 2 * np.pi)
                    wave = cfg.snr * np.sin(2 * np.pi * freq * t + phase)
                    for ch in channels[klass]:
                        x[ch] += wave
                data.append(x)
                labels.append(klass)
                subjects.append(subject)
                sessions.append(SESSION_TRAIN if trial % 2 == 0
                                else SESSION_TEST)
    return TrialSet(np.stack(data), np.array(labels), np.array(subjects),
                    np.array(sessions), cfg.fs)


def convert_csv(manifest_path, fs, out_path):
    """Build a container from a CSV manifest referencing per-trial matrices.

    The manifest needs columns file,label,subject,session; each referenced
    file is a channels x samples CSV matrix. Session accepts train/test or
    0/1. Returns the TrialSet that was written.
    """
    import os

    base = os.path.dirname(os.path.abspath(manifest_path))
    rows = []
    with open(manifest_path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"file", "label", "subject", "session"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DataError(
                f"{manifest_path}: manifest needs columns "
                f"{sorted(required)}, got {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{manifest_path}: manifest lists no trials")

    session_codes = {"train": SESSION_TRAIN, "0": SESSION_TRAIN,
                     "test": SESSION_TEST, "1": SESSION_TEST}
    data, labels, subjects, sessions = [], [], [], []
    shape = None
    for row in rows:
        path = row["file"]
        if not os.path.isabs(path):
            path = os.path.join(base, path)
        try:
            trial = np.loadtxt(path, delimiter=",", ndmin=2)
        except OSError as exc:
            raise DataError(f"cannot read trial matrix {path}: {exc}") from exc
        if shape is None:
            shape = trial.shape
        elif trial.shape != shape:
            raise DataError(
                f"{path}: shape {trial.shape} differs from first trial "
                f"{shape}")
        session = session_codes.get(row["session"].strip().lower())
        if session is None:
            raise DataError(f"unknown session flag {row['session']!r}")
        data.append(trial)
        labels.append(int(row["label"]))
        subjects.append(int(row["subject"]))
        sessions.append(session)
    tset = TrialSet(np.stack(data), np.array(labels), np.array(subjects),
                    np.array(sessions), float(fs))
    write_container(tset, out_path)
    return tset
