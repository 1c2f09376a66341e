"""Command-line entry point.

Subcommands: validate (check a model spec), build (assemble and inspect),
run (train/evaluate a method under a cross-validation scheme), convert
(CSV trials to a binary container), report (re-render saved results as
tables and figures).

Every option can also come from a flat ``key = value`` config file via
--config; explicit flags win.  A run writes the fully resolved settings to
<out>/manifest.cfg, which is itself a valid --config file, so any run can
be reproduced from its manifest (bitwise at --threads 1).

Exit codes: 0 ok, 2 configuration/spec error, 3 data error, 4 numeric
failure.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__, builder, dataio, evaluation, figures
from .errors import ConfigError, MibenchError
from .fbcsp import FbcspConfig
from .methods import FbcspMethod, NetMethod, PrepConfig

DATA_DIR_ENV = "MIBENCH_DATA_DIR"

_RUN_DEFAULTS = {
    "data": None,
    "method": None,
    "spec": None,
    "scheme": None,
    "epochs": 500,
    "batch_size": 32,
    "lr": 1e-3,
    "reps": 10,
    "seed": 1,
    "threads": 1,
    "out": "results",
    "window": None,
    "bandpass": None,
    "ema_decay": None,
    "resample": None,
    "loso_test_session_only": False,
    "fbcsp_m": 2,
    "fbcsp_k": 4,
}


def parse_config_file(path):
    """Flat ``key = value`` pairs; '#' starts a comment, 'none' means None."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(key, text):
    if text.lower() == "none":
        return None
    if key in ("epochs", "batch_size", "reps", "seed", "threads",
               "fbcsp_m", "fbcsp_k"):
        return int(text)
    if key in ("lr", "ema_decay", "resample"):
        return float(text)
    if key in ("window", "bandpass"):
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"{key} needs two comma-separated numbers")
        return tuple(parts)
    if key == "loso_test_session_only":
        return text.lower() in ("1", "true", "yes")
    return text


def resolve_run_config(args):
    """defaults < config file < explicit flags, with validation."""
    cfg = dict(_RUN_DEFAULTS)
    if args.config:
        file_values = parse_config_file(args.config)
        unknown = set(file_values) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, text in file_values.items():
            cfg[key] = _coerce(key, text)
    for key in cfg:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    if args.loso_test_session_only:
        cfg["loso_test_session_only"] = True

    for key in ("data", "method", "scheme"):
        if cfg[key] is None:
            raise ConfigError(f"missing required setting: {key}")
    if cfg["method"] not in ("eegnet", "fbcsp"):
        raise ConfigError(f"method must be eegnet or fbcsp, got "
                          f"{cfg['method']!r}")
    if cfg["method"] == "eegnet" and cfg["spec"] is None:
        raise ConfigError("method eegnet needs --spec")
    if cfg["scheme"] not in evaluation.SCHEMES:
        raise ConfigError(f"scheme must be one of {evaluation.SCHEMES}")
    for key in ("epochs", "batch_size", "reps", "seed", "threads"):
        if cfg[key] < (0 if key == "epochs" else 1):
            raise ConfigError(f"{key} must be positive, got {cfg[key]}")
    cfg["data"] = _resolve_data_path(cfg["data"])
    if cfg["spec"] is not None:
        if not os.path.exists(cfg["spec"]):
            raise ConfigError(f"spec file not found: {cfg['spec']}")
        cfg["spec"] = os.path.abspath(cfg["spec"])
    return cfg


def _resolve_data_path(path):
    if os.path.exists(path):
        return os.path.abspath(path)
    base = os.environ.get(DATA_DIR_ENV)
    if base:
        candidate = os.path.join(base, path)
        if os.path.exists(candidate):
            return os.path.abspath(candidate)
    raise ConfigError(f"data path not found: {path}")


def format_config(cfg):
    lines = []
    for key in _RUN_DEFAULTS:
        value = cfg[key]
        if value is None:
            text = "none"
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def cmd_validate(args):
    if not os.path.exists(args.spec):
        raise ConfigError(f"spec file not found: {args.spec}")
    spec = builder.load_spec(args.spec)
    violations = builder.validate_spec(spec)
    if violations:
        for v in violations:
            print(f"violation: {v}")
        return 2
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, report = builder.build_model(spec, seed=0)
    print(f"ok, flatten={report.flatten_dim}, params={report.param_count}")
    return 0


def cmd_build(args):
    if not os.path.exists(args.spec):
        raise ConfigError(f"spec file not found: {args.spec}")
    spec = builder.load_spec(args.spec)
    model, report = builder.build_model(spec, seed=args.seed)
    print(f"{'layer':<14}{'input':<20}{'output':<20}")
    for kind, sin, sout in report.layer_shapes:
        print(f"{kind:<14}{str(sin):<20}{str(sout):<20}")
    print(f"flatten dimension: {report.flatten_dim}")
    print(f"trainable parameters: {report.param_count}")
    if args.out:
        builder.save_model(model, spec, args.out)
        print(f"initialized model written to {args.out}")
    return 0


def _build_method(cfg):
    prep = PrepConfig(bandpass=cfg["bandpass"], ema_decay=cfg["ema_decay"],
                      resample_to=cfg["resample"])
    if cfg["method"] == "eegnet":
        spec = builder.load_spec(cfg["spec"])
        violations = builder.validate_spec(spec)
        if violations:
            raise ConfigError("invalid spec: " + "; ".join(violations))
        return NetMethod(spec, epochs=cfg["epochs"],
                         batch_size=cfg["batch_size"], lr=cfg["lr"],
                         prep=prep, label=f"eegnet ({cfg['scheme']})")
    fb = FbcspConfig(m_pairs=cfg["fbcsp_m"], k_select=cfg["fbcsp_k"])
    # the baseline consumes native-rate trials; no resampling
    prep.resample_to = None
    return FbcspMethod(config=fb, prep=prep,
                       label=f"fbcsp ({cfg['scheme']})")


def _write_run_artifacts(out, table, tset, cfg):
    os.makedirs(out, exist_ok=True)
    figdir = os.path.join(out, "figures")
    folddir = os.path.join(out, "folds")
    os.makedirs(figdir, exist_ok=True)
    os.makedirs(folddir, exist_ok=True)

    evaluation.save_results(table, os.path.join(out, "results.bin"))
    for fmt, name in (("csv", "results.csv"), ("markdown", "results.md")):
        with open(os.path.join(out, name), "w", encoding="utf-8") as fh:
            fh.write(evaluation.emit_table(table, fmt))
    chance = 100.0 / max(len(np.unique(tset.labels)), 1)
    figures.accuracy_figure(table, os.path.join(figdir, "accuracy.png"),
                            chance=chance)
    figures.loss_figure(table.runs, os.path.join(figdir, "loss_curves.png"))

    label = cfg["method"]
    for run in table.runs:
        name = f"{label}_s{run.subject:02d}_r{run.rep:02d}.log"
        with open(os.path.join(folddir, name), "w", encoding="utf-8") as fh:
            fh.write(f"subject {run.subject} rep {run.rep} "
                     f"seed {run.seed}\n")
            fh.write(f"accuracy {run.accuracy:.4f}\n")
            for key in ("best_epoch", "elapsed_s"):
                if key in run.detail:
                    fh.write(f"{key} {run.detail[key]}\n")
            if run.detail.get("losses"):
                losses = ",".join(f"{v:.6f}" for v in run.detail["losses"])
                fh.write(f"losses {losses}\n")
            if run.detail.get("val_accuracy"):
                accs = ",".join(f"{v:.2f}" for v in run.detail["val_accuracy"])
                fh.write(f"val_accuracy {accs}\n")

    with open(os.path.join(out, "manifest.cfg"), "w", encoding="utf-8") as fh:
        fh.write(f"# resolved settings, mibench {__version__}\n")
        fh.write(format_config(cfg))


def cmd_run(args):
    cfg = resolve_run_config(args)
    tset = dataio.read_container(cfg["data"])
    if cfg["window"] is not None:
        tset = dataio.extract_window(tset, *cfg["window"])
    method = _build_method(cfg)
    plan = evaluation.make_splits(
        cfg["scheme"], tset, seed=cfg["seed"],
        loso_test_session_only=cfg["loso_test_session_only"])

    out = cfg["out"]
    os.makedirs(os.path.join(out, "models"), exist_ok=True)
    ext = ".eegm" if cfg["method"] == "eegnet" else ".fbcm"

    def on_fold(run, fitted):
        name = f"{cfg['method']}_s{run.subject:02d}_r{run.rep:02d}{ext}"
        method.save(fitted, os.path.join(out, "models", name))

    table = evaluation.run_experiment(method, plan, tset, reps=cfg["reps"],
                                      seed=cfg["seed"],
                                      threads=cfg["threads"],
                                      on_fold=on_fold)
    _write_run_artifacts(out, table, tset, cfg)
    print(evaluation.emit_table(table, "markdown"))
    print(f"artifacts in {os.path.abspath(out)}")
    return 0


def cmd_convert(args):
    if not os.path.exists(args.manifest):
        raise ConfigError(f"manifest not found: {args.manifest}")
    tset = dataio.convert_csv(args.manifest, args.fs, args.out)
    print(f"wrote {tset.n_trials} trials "
          f"({tset.n_channels} ch x {tset.n_samples} samples @ {tset.fs} Hz) "
          f"to {args.out}")
    return 0


def cmd_report(args):
    table = None
    for path in args.results:
        if not os.path.exists(path):
            raise ConfigError(f"results file not found: {path}")
        loaded = evaluation.load_results(path)
        table = loaded if table is None else table.merge(loaded)
    if args.ttest:
        for i, j in args.ttest:
            t, p = table.add_significance(i, j, threshold=args.p_threshold)
            print(f"paired t-test columns {i} vs {j}: t={t:.4f} p={p:.6f}")
    elif len(table.columns) == 2 and not table.comparisons:
        t, p = table.add_significance(0, 1, threshold=args.p_threshold)
        print(f"paired t-test columns 0 vs 1: t={t:.4f} p={p:.6f}")
    os.makedirs(args.out, exist_ok=True)
    wanted = ("csv", "markdown") if args.format == "both" else (args.format,)
    for fmt in wanted:
        name = "results.csv" if fmt == "csv" else "results.md"
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
            fh.write(evaluation.emit_table(table, fmt))
    figures.accuracy_figure(table, os.path.join(args.out, "accuracy.png"))
    print(evaluation.emit_table(table, "markdown"))
    print(f"report in {os.path.abspath(args.out)}")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(
        prog="mibench",
        description="Motor-imagery EEG classification experiments")
    parser.add_argument("--version", action="version",
                        version=f"mibench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model spec file")
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("build", help="assemble a model and print its shapes")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the initialized model blob here")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("run", help="train and evaluate under a CV scheme")
    p.add_argument("--config", help="flat key=value file; flags override")
    p.add_argument("--data")
    p.add_argument("--method", choices=("eegnet", "fbcsp"))
    p.add_argument("--spec")
    p.add_argument("--scheme", choices=evaluation.SCHEMES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.add_argument("--window", nargs=2, type=float, metavar=("T0", "T1"))
    p.add_argument("--bandpass", nargs=2, type=float, metavar=("LO", "HI"))
    p.add_argument("--ema-decay", dest="ema_decay", type=float)
    p.add_argument("--resample", type=float, metavar="HZ")
    p.add_argument("--loso-test-session-only", dest="loso_test_session_only",
                   action="store_true", default=False)
    p.add_argument("--fbcsp-m", dest="fbcsp_m", type=int)
    p.add_argument("--fbcsp-k", dest="fbcsp_k", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("convert", help="CSV manifest + matrices -> container")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fs", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("report", help="re-render saved results")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--format", choices=("csv", "markdown", "both"),
                   default="both")
    p.add_argument("--ttest", nargs=2, type=int, action="append",
                   metavar=("I", "J"))
    p.add_argument("--p-threshold", dest="p_threshold", type=float,
                   default=0.005)
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MibenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
