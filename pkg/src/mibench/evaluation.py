"""Cross-validation split construction, repeated experiment execution,
statistical comparison, and table-shaped reporting.

Schemes
-------
single   per subject: own train-session trials vs own test-session trials.
mixed    all subjects' train-session trials pooled into one training set;
         each subject's test-session trials form a per-subject test fold.
loso     leave one subject out: the held-out subject's trials are the test
         set, everyone else's (both sessions) the training set.
lawhern  per held-out subject: 5 random subjects train, 3 validate (used
         for best-epoch selection), 1 tests; seeded assignment.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .binio import Reader, Writer
from .errors import ConfigError, DataError
from .dataio import SESSION_TEST, SESSION_TRAIN

SCHEMES = ("single", "mixed", "loso", "lawhern")

RESULTS_MAGIC = b"EEGR"
RESULTS_VERSION = 1


@dataclass
class Fold:
    train_ids: np.ndarray
    val_ids: np.ndarray  # or None
    test_ids: np.ndarray
    subject: int


@dataclass
class SplitPlan:
    scheme: str
    folds: list

    def subjects(self):
        return [f.subject for f in self.folds]


def _ids(mask):
    return np.flatnonzero(mask)


def make_splits(scheme, tset, seed=1, loso_test_session_only=False):
    """Build the fold plan for one scheme over a TrialSet."""
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    subjects = tset.subject_ids()
    subj = tset.subjects
    sess = tset.sessions
    folds = []

    if scheme == "single":
        for s in subjects:
            train = _ids((subj == s) & (sess == SESSION_TRAIN))
            test = _ids((subj == s) & (sess == SESSION_TEST))
            if len(train) == 0 or len(test) == 0:
                raise DataError(f"subject {s} lacks trials in one session")
            folds.append(Fold(train, None, test, s))
    elif scheme == "mixed":
        train = _ids(sess == SESSION_TRAIN)
        if len(train) == 0:
            raise DataError("no train-session trials")
        for s in subjects:
            test = _ids((subj == s) & (sess == SESSION_TEST))
            if len(test) == 0:
                raise DataError(f"subject {s} has no test-session trials")
            folds.append(Fold(train, None, test, s))
    elif scheme == "loso":
        if len(subjects) < 2:
            raise ConfigError("leave-one-subject-out needs >= 2 subjects")
        for s in subjects:
            train = _ids(subj != s)
            test_mask = subj == s
            if loso_test_session_only:
                test_mask &= sess == SESSION_TEST
            folds.append(Fold(train, None, _ids(test_mask), s))
    else:  # lawhern
        if len(subjects) < 9:
            raise ConfigError(
                f"lawhern scheme needs >= 9 subjects, got {len(subjects)}")
        rng = np.random.default_rng(seed)
        for s in subjects:
            others = [o for o in subjects if o != s]
            picked = rng.permutation(others)[:8]
            train_subj = set(int(v) for v in picked[:5])
            val_subj = set(int(v) for v in picked[5:8])
            train = _ids(np.isin(subj, list(train_subj)))
            val = _ids(np.isin(subj, list(val_subj)))
            test = _ids(subj == s)
            folds.append(Fold(train, val, test, s))
    return SplitPlan(scheme=scheme, folds=folds)


def accuracy(predicted, actual):
    """Percentage of matching labels."""
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise DataError(
            f"label shapes differ: {predicted.shape} vs {actual.shape}")
    if predicted.size == 0:
        raise DataError("cannot score an empty label set")
    return 100.0 * float(np.mean(predicted == actual))


def paired_t_test(a, b):
    """Two-sided paired Student t-test.

    Returns (t, p) with p from the t CDF via the regularized incomplete
    beta function.  Zero-variance differences are degenerate: identical
    sequences give (0, 1); a constant nonzero difference gives
    (signed inf, nan) rather than raising.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ConfigError("paired test needs two equal-length vectors (>= 2)")
    d = a - b
    n = len(d)
    sd = d.std(ddof=1)
    mean = d.mean()
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), math.nan
    t = mean / (sd / math.sqrt(n))
    df = n - 1
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return float(t), p


def derive_seed(base, group, rep):
    """Independent 63-bit seed per (training group, repetition).

    Hash-mixed rather than plain XOR so that permuting (group, rep) never
    collides streams.
    """
    mask = (1 << 64) - 1
    x = (base ^ (0x9E3779B97F4A7C15 * (group + 1)) ^
         (0xBF58476D1CE4E5B9 * (rep + 1))) & mask
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & mask
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & mask
    return (x ^ (x >> 31)) & 0x7FFFFFFFFFFFFFFF


@dataclass
class FoldRun:
    """One (fold, repetition) outcome, kept for logs and model dumps."""

    fold_index: int
    subject: int
    rep: int
    seed: int
    accuracy: float
    detail: dict = field(default_factory=dict)


@dataclass
class ResultColumn:
    label: str
    acc: np.ndarray  # (n_subjects, reps)

    def subject_mean(self):
        return self.acc.mean(axis=1)

    def subject_std(self):
        if self.acc.shape[1] < 2:
            return np.zeros(self.acc.shape[0])
        return self.acc.std(axis=1, ddof=1)

    def avg_mean(self):
        return float(self.subject_mean().mean())

    def avg_std(self):
        if self.acc.shape[1] < 2:
            return 0.0
        return float(self.acc.mean(axis=0).std(ddof=1))


@dataclass
class ResultsTable:
    """Per-subject mean and deviation per method, plus significance marks.

    Deviations are computed over repetitions.  ``stars`` holds indices of
    columns whose AVG row is marked significant against a comparison
    partner (p below the threshold given to add_significance).
    """

    subjects: list
    columns: list = field(default_factory=list)
    comparisons: list = field(default_factory=list)  # (i, j, threshold)
    stars: set = field(default_factory=set)
    pvalues: dict = field(default_factory=dict)
    runs: list = field(default_factory=list)  # not persisted

    def add_column(self, label, acc):
        acc = np.asarray(acc, dtype=np.float64)
        if acc.shape[0] != len(self.subjects):
            raise ConfigError(
                f"column has {acc.shape[0]} subject rows, table has "
                f"{len(self.subjects)}")
        self.columns.append(ResultColumn(label=label, acc=acc))
        return len(self.columns) - 1

    def add_significance(self, i, j, threshold=0.005):
        """Paired t-test between per-subject means of two columns; stars
        column i when p < threshold."""
        t, p = paired_t_test(self.columns[i].subject_mean(),
                             self.columns[j].subject_mean())
        self.comparisons.append((i, j, threshold))
        self.pvalues[(i, j)] = p
        if not math.isnan(p) and p < threshold:
            self.stars.add(i)
        return t, p

    def merge(self, other):
        if other.subjects != self.subjects:
            raise ConfigError("cannot merge tables over different subjects")
        for col in other.columns:
            self.add_column(col.label, col.acc)
        return self


def run_experiment(method, plan, tset, reps=10, seed=1, threads=1,
                   on_fold=None):
    """Fit and score a method over every fold, ``reps`` times.

    Folds sharing an identical training assignment (the mixed scheme) are
    fitted once per repetition and evaluated on each of their test sets.
    A failed repetition propagates; nothing is silently dropped.
    Returns a single-column ResultsTable carrying per-(fold, rep) runs.
    """
    if reps < 1:
        raise ConfigError("repetitions must be >= 1")
    method.prepare(tset)

    groups = {}  # train/val identity -> (group_index, [fold indices])
    for fi, fold in enumerate(plan.folds):
        key = (fold.train_ids.tobytes(),
               None if fold.val_ids is None else fold.val_ids.tobytes())
        groups.setdefault(key, (len(groups), []))[1].append(fi)

    n_folds = len(plan.folds)
    acc = np.full((n_folds, reps), np.nan)
    runs = []

    def run_group(group_index, fold_indices, rep):
        fold0 = plan.folds[fold_indices[0]]
        fit_seed = derive_seed(seed, group_index, rep)
        fitted = method.fit(fold0.train_ids, fold0.val_ids, fit_seed)
        out = []
        for fi in fold_indices:
            fold = plan.folds[fi]
            score = method.evaluate(fitted, fold.test_ids)
            run = FoldRun(fold_index=fi, subject=fold.subject, rep=rep,
                          seed=fit_seed, accuracy=score,
                          detail=method.detail(fitted))
            if on_fold is not None:
                on_fold(run, fitted)
            out.append(run)
        return out

    tasks = [(gi, fis, rep)
             for key, (gi, fis) in sorted(groups.items(), key=lambda kv: kv[1][0])
             for rep in range(reps)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_group, *task) for task in tasks]
            results = [f.result() for f in futures]
    else:
        results = [run_group(*task) for task in tasks]

    for group_runs in results:
        for run in group_runs:
            acc[run.fold_index, run.rep] = run.accuracy
            runs.append(run)

    table = ResultsTable(subjects=plan.subjects())
    table.add_column(method.label, acc)
    table.runs = sorted(runs, key=lambda r: (r.fold_index, r.rep))
    return table


def _cell(mean, std, star=False):
    return f"{mean:.2f}±{std:.2f}" + ("*" if star else "")


def emit_table(table, fmt="markdown"):
    """Render per-subject rows plus the AVG row in markdown or CSV.

    Cells are mean±std with two decimals; the AVG cell of a starred column
    carries a trailing ``*`` (paired t-test below its threshold).
    """
    if not table.columns:
        raise ConfigError("results table has no columns")
    if fmt not in ("markdown", "csv"):
        raise ConfigError(f"unknown table format {fmt!r}")
    header = ["subject"] + [c.label for c in table.columns]
    rows = []
    for si, s in enumerate(table.subjects):
        row = [str(s)]
        for col in table.columns:
            row.append(_cell(col.subject_mean()[si], col.subject_std()[si]))
        rows.append(row)
    avg = ["AVG"]
    for ci, col in enumerate(table.columns):
        avg.append(_cell(col.avg_mean(), col.avg_std(), star=ci in table.stars))
    rows.append(avg)

    if fmt == "csv":
        lines = [",".join(header)] + [",".join(r) for r in rows]
        return "\n".join(lines) + "\n"
    widths = [max(len(header[i]), *(len(r[i]) for r in rows))
              for i in range(len(header))]
    def mdrow(cells):
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"
    lines = [mdrow(header),
             "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    lines += [mdrow(r) for r in rows]
    lines.append("")
    lines.append("std over repetitions; * AVG significant by paired t-test")
    return "\n".join(lines) + "\n"


def save_results(table, path):
    w = Writer()
    w.magic(RESULTS_MAGIC)
    w.u32(RESULTS_VERSION)
    w.u32(len(table.subjects))
    for s in table.subjects:
        w.u32(s)
    w.u32(len(table.columns))
    for col in table.columns:
        w.text(col.label)
        w.array(col.acc)
    w.u32(len(table.comparisons))
    for i, j, threshold in table.comparisons:
        w.u32(i)
        w.u32(j)
        w.f64(threshold)
    with open(path, "wb") as fh:
        fh.write(w.payload())


def load_results(path):
    with open(path, "rb") as fh:
        r = Reader(fh.read(), name=str(path))
    r.magic(RESULTS_MAGIC)
    version = r.u32()
    if version != RESULTS_VERSION:
        raise DataError(f"{path}: unsupported results version {version}")
    subjects = [r.u32() for _ in range(r.u32())]
    table = ResultsTable(subjects=subjects)
    for _ in range(r.u32()):
        label = r.text()
        table.add_column(label, r.array())
    comparisons = [(r.u32(), r.u32(), r.f64()) for _ in range(r.u32())]
    r.done()
    for i, j, threshold in comparisons:
        table.add_significance(i, j, threshold)
    return table
