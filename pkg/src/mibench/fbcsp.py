"""Filter-bank CSP baseline: per-band spatial filters on trial covariances,
log-variance features, mutual-information feature selection, regularized
LDA heads, and a one-vs-rest reduction for the 4-class problem.

Fitting is fully deterministic: no RNG is involved anywhere, so repeated
fits on the same training set produce identical models.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import dsp
from .binio import Reader, Writer
from .errors import DataError

FBCSP_MAGIC = b"FBCM"
FBCSP_VERSION = 1


@dataclass
class FbcspConfig:
    band_edges: list = field(default_factory=dsp.default_band_edges)
    order: int = 3
    m_pairs: int = 2
    k_select: int = 4


@dataclass
class CspModel:
    """Spatial filters for one band and one class pairing.

    ``w`` has 2*m rows (generalized eigenvectors); row j and row 2m-1-j are
    the complementary top/bottom eigenvalue pair.  W (C1+C2) W^T = I.
    """

    w: np.ndarray
    eigenvalues: np.ndarray


@dataclass
class LdaModel:
    means: np.ndarray       # (2, d)
    precision: np.ndarray   # (d, d) inverse pooled covariance
    log_priors: np.ndarray  # (2,)


@dataclass
class BinaryHead:
    positive_class: int
    csp: list                # one CspModel per band
    selected: np.ndarray     # feature indices into the band-major vector
    lda: LdaModel


@dataclass
class FbcspModel:
    config: FbcspConfig
    fs: float
    n_channels: int
    classes: list
    heads: list


def trial_covariance(trial):
    """Trace-normalized channel covariance of one mean-free trial."""
    trial = np.asarray(trial, dtype=np.float64)
    centered = trial - trial.mean(axis=-1, keepdims=True)
    cov = centered @ centered.T
    tr = np.trace(cov)
    if tr <= 0:
        raise DataError("degenerate trial: zero power in every channel")
    return cov / tr


def _trial_covariances(trials):
    """(n, C, C) stack of trace-normalized covariances."""
    trials = np.asarray(trials, dtype=np.float64)
    centered = trials - trials.mean(axis=-1, keepdims=True)
    covs = centered @ centered.transpose(0, 2, 1)
    tr = np.einsum("ncc->n", covs)
    if np.any(tr <= 0):
        raise DataError("degenerate trial: zero power in every channel")
    return covs / tr[:, None, None]


def csp_fit(c1, c2, m=2):
    """Spatial filters from a pair of class covariances.

    Solves c1 w = lambda (c1 + c2) w by whitening the composite covariance
    and diagonalizing the whitened c1; keeps the m largest and m smallest
    eigenvalue directions, ordered so rows j and 2m-1-j are complements.
    """
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    comp = c1 + c2
    n_ch = comp.shape[0]
    if not 1 <= 2 * m <= n_ch:
        raise DataError(f"m={m} needs between 2 and {n_ch} filters")
    evals, evecs = scipy.linalg.eigh(comp)
    tr = np.trace(comp)
    if evals[0] <= 1e-9 * tr:
        warnings.warn("near-singular composite covariance; adding ridge")
        comp = comp + (1e-9 * tr) * np.eye(n_ch)
        evals, evecs = scipy.linalg.eigh(comp)
    whitener = evecs / np.sqrt(evals)  # columns scaled: W^T comp W = I
    s1 = whitener.T @ c1 @ whitener
    s1 = (s1 + s1.T) / 2
    lam, basis = scipy.linalg.eigh(s1)  # ascending in [0, 1]
    order = np.argsort(lam)[::-1]
    keep = np.concatenate([order[:m], order[n_ch - m:]])
    w = (whitener @ basis[:, keep]).T
    return CspModel(w=w, eigenvalues=lam[keep])


def csp_features(trial, csp_models):
    """Band-major log-variance-ratio features of one multi-band trial.

    trial: (n_bands, C, T), already filtered once per bank member.
    Feature j of band b is log(var_j / sum_j var_j) over the projections of
    that band's filter rows.
    """
    trial = np.asarray(trial, dtype=np.float64)
    covs = _trial_covariances(trial)
    return _features_from_covs(covs[None, :, :, :], csp_models)[0]


def _features_from_covs(covs, csp_models):
    """covs: (n, n_bands, C, C) -> features (n, n_bands * 2m)."""
    parts = []
    for b, model in enumerate(csp_models):
        # projected variances: diag(W S W^T) per trial
        v = np.einsum("jc,ncd,jd->nj", model.w, covs[:, b], model.w)
        if np.any(v <= 0):
            warnings.warn("zero projected variance clamped before log")
            v = np.maximum(v, 1e-12)
        parts.append(np.log(v / v.sum(axis=1, keepdims=True)))
    return np.concatenate(parts, axis=1)


def mutual_information(feature, labels):
    """Mutual information (bits) between a scalar feature and class labels.

    Class-conditional densities use Gaussian Parzen windows with Silverman
    bandwidths; the conditional label entropy is averaged over samples.
    Bounded to [0, H(Y)]; a constant feature carries 0 bits.
    """
    feature = np.asarray(feature, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    n = len(feature)
    priors = np.array([(labels == c).mean() for c in classes])
    h_y = -np.sum(priors * np.log2(priors))
    if feature.std() == 0:
        return 0.0
    like = np.zeros((n, len(classes)))
    for ci, c in enumerate(classes):
        vals = feature[labels == c]
        if len(vals) < 2:
            raise DataError(f"class {c} needs at least 2 samples")
        sigma = vals.std()
        bw = max(1.06 * sigma * len(vals) ** (-0.2), 1e-12)
        z = (feature[:, None] - vals[None, :]) / bw
        like[:, ci] = np.exp(-0.5 * z * z).mean(axis=1) / bw
    joint = like * priors
    total = joint.sum(axis=1, keepdims=True)
    post = np.divide(joint, total, out=np.full_like(joint, 1.0 / len(classes)),
                     where=total > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(post > 0, post * np.log2(post), 0.0)
    h_y_given_f = -terms.sum(axis=1).mean()
    return float(np.clip(h_y - h_y_given_f, 0.0, h_y))


def mibif_select(features, labels, k, m_pairs):
    """Indices of the k most label-informative features, closed under
    CSP complements (row j of a band pulls in row 2m-1-j of the same band).

    Ties break deterministically toward the lower index.
    """
    features = np.asarray(features)
    n_feat = features.shape[1]
    if k > n_feat:
        raise DataError(f"cannot select {k} of {n_feat} features")
    scores = np.array([mutual_information(features[:, j], labels)
                       for j in range(n_feat)])
    ranked = sorted(range(n_feat), key=lambda j: (-scores[j], j))
    width = 2 * m_pairs
    chosen = set()
    for j in ranked[:k]:
        band, row = divmod(j, width)
        chosen.add(j)
        chosen.add(band * width + (width - 1 - row))
    return np.array(sorted(chosen), dtype=np.int64)


def lda_fit(features, labels):
    """Two-class LDA with a ridge-regularized pooled covariance."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) != 2:
        raise DataError(f"LDA head is binary, got classes {classes}")
    d = features.shape[1]
    means = np.zeros((2, d))
    pooled = np.zeros((d, d))
    counts = np.zeros(2)
    for ci, c in enumerate(classes):
        rows = features[labels == c]
        if len(rows) < 2:
            raise DataError(f"class {c} needs at least 2 samples")
        means[ci] = rows.mean(axis=0)
        centered = rows - means[ci]
        pooled += centered.T @ centered
        counts[ci] = len(rows)
    pooled /= counts.sum() - 2
    pooled += (1e-6 * np.trace(pooled) / d) * np.eye(d)
    try:
        precision = np.linalg.inv(pooled)
    except np.linalg.LinAlgError as exc:
        raise DataError("singular pooled covariance after ridge") from exc
    return LdaModel(means=means, precision=precision,
                    log_priors=np.log(counts / counts.sum()))


def lda_posterior(lda, features):
    """Class posteriors (n, 2) under the shared-covariance Gaussian model."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    scores = np.zeros((features.shape[0], 2))
    for ci in range(2):
        mu = lda.means[ci]
        scores[:, ci] = features @ (lda.precision @ mu) \
            - 0.5 * mu @ lda.precision @ mu + lda.log_priors[ci]
    scores -= scores.max(axis=1, keepdims=True)
    expd = np.exp(scores)
    return expd / expd.sum(axis=1, keepdims=True)


def bank_covariances(data, fs, config):
    """Per-band trial covariances (n, n_bands, C, C) for raw trials.

    The one pass over the filter bank is the expensive step; everything
    downstream (CSP, features, LDA) works on these matrices.
    """
    bank = dsp.make_filter_bank(config.band_edges, config.order, fs)
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    covs = np.empty((n, len(bank), data.shape[1], data.shape[1]))
    for b, filt in enumerate(bank):
        filtered = dsp.filtfilt(filt, data, axis=-1)
        covs[:, b] = _trial_covariances(filtered)
    return covs


def _fit_head(covs, labels, positive, config):
    """One binary head (positive class vs rest) from precomputed covariances."""
    labels = np.asarray(labels)
    pos = labels == positive
    if pos.sum() < 2 or (~pos).sum() < 2:
        raise DataError(f"class {positive} vs rest needs >= 2 trials per side")
    n_bands = covs.shape[1]
    csp_models = []
    for b in range(n_bands):
        c1 = covs[pos, b].mean(axis=0)
        c2 = covs[~pos, b].mean(axis=0)
        csp_models.append(csp_fit(c1, c2, config.m_pairs))
    feats = _features_from_covs(covs, csp_models)
    binary = pos.astype(np.int64)
    selected = mibif_select(feats, binary, config.k_select, config.m_pairs)
    lda = lda_fit(feats[:, selected], binary)
    return BinaryHead(positive_class=int(positive), csp=csp_models,
                      selected=selected, lda=lda)


def fbcsp_fit(trainset, positive_class, config=None):
    """Fit a single binary head on a TrialSet (positive class vs the rest)."""
    config = config or FbcspConfig()
    covs = bank_covariances(trainset.data, trainset.fs, config)
    return _fit_head(covs, trainset.labels, positive_class, config)


def ovr_fit(trainset, config=None):
    """One-vs-rest FBCSP over every class present in the training set."""
    config = config or FbcspConfig()
    classes = sorted(int(c) for c in np.unique(trainset.labels))
    if len(classes) < 2:
        raise DataError(f"need at least 2 classes, got {classes}")
    covs = bank_covariances(trainset.data, trainset.fs, config)
    heads = [_fit_head(covs, trainset.labels, c, config) for c in classes]
    return FbcspModel(config=config, fs=trainset.fs,
                      n_channels=trainset.n_channels, classes=classes,
                      heads=heads)


def _positive_posteriors(model, covs):
    """(n, n_classes) posterior of each head's positive class."""
    post = np.zeros((covs.shape[0], len(model.heads)))
    for hi, head in enumerate(model.heads):
        feats = _features_from_covs(covs, head.csp)[:, head.selected]
        # positive class is encoded as label 1 inside each binary head
        post[:, hi] = lda_posterior(head.lda, feats)[:, 1]
    return post


def ovr_predict(model, trials, fs=None):
    """Predicted labels for (n, C, T) trials or one (C, T) trial."""
    trials = np.asarray(trials)
    single = trials.ndim == 2
    if single:
        trials = trials[None]
    covs = bank_covariances(trials, fs or model.fs, model.config)
    post = _positive_posteriors(model, covs)
    labels = np.array(model.classes)[post.argmax(axis=1)]
    return int(labels[0]) if single else labels


def predict_from_covariances(model, covs):
    """Labels from precomputed bank covariances (bank must match config)."""
    post = _positive_posteriors(model, covs)
    return np.array(model.classes)[post.argmax(axis=1)]


def save_fbcsp(model, path):
    w = Writer()
    w.magic(FBCSP_MAGIC)
    w.u32(FBCSP_VERSION)
    w.f64(model.fs)
    w.u32(model.n_channels)
    w.u32(model.config.order)
    w.u32(model.config.m_pairs)
    w.u32(model.config.k_select)
    w.u32(len(model.config.band_edges))
    for lo, hi in model.config.band_edges:
        w.f64(lo)
        w.f64(hi)
    w.u32(len(model.classes))
    for c in model.classes:
        w.u32(c)
    for head in model.heads:
        w.u32(head.positive_class)
        for csp in head.csp:
            w.array(csp.w)
            w.array(csp.eigenvalues)
        w.array(head.selected)
        w.array(head.lda.means)
        w.array(head.lda.precision)
        w.array(head.lda.log_priors)
    with open(path, "wb") as fh:
        fh.write(w.payload())


def load_fbcsp(path):
    with open(path, "rb") as fh:
        r = Reader(fh.read(), name=str(path))
    r.magic(FBCSP_MAGIC)
    version = r.u32()
    if version != FBCSP_VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    fs = r.f64()
    n_channels = r.u32()
    order = r.u32()
    m_pairs = r.u32()
    k_select = r.u32()
    n_bands = r.u32()
    edges = [(r.f64(), r.f64()) for _ in range(n_bands)]
    config = FbcspConfig(band_edges=edges, order=order, m_pairs=m_pairs,
                         k_select=k_select)
    classes = [r.u32() for _ in range(r.u32())]
    heads = []
    for _ in classes:
        positive = r.u32()
        csp_models = [CspModel(w=r.array(), eigenvalues=r.array())
                      for _ in range(n_bands)]
        selected = r.array()
        lda = LdaModel(means=r.array(), precision=r.array(),
                       log_priors=r.array())
        heads.append(BinaryHead(positive_class=positive, csp=csp_models,
                                selected=selected, lda=lda))
    r.done()
    return FbcspModel(config=config, fs=fs, n_channels=n_channels,
                      classes=classes, heads=heads)
