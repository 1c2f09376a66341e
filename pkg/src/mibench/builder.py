"""Compile a key-value model specification into a trainable network.

A specification describes a convolutional section (per-layer lists for
kernels, filters, strides, padding, pooling, groups and normalization),
an automatically sized flatten stage, and a feed-forward section.  The
build runs in three phases:

1. assemble the convolutional blocks, each the ordered subset of
   convolution -> batchnorm -> activation -> pooling -> dropout that the
   per-layer lists request (-1 entries mean "absent");
2. propagate the declared input height/width through the convolutional
   section to infer the flatten width, so the user never computes it;
3. assemble dense layers from neurons_list, consuming the tail of the
   shared activation/bias/dropout lists.

Specs live in a flat text format, one ``key = value`` pair per line, with
tuples in parentheses and lists in brackets. ``canonical_spec_text``
renders the normative formatting.
"""

import ast
import warnings
from dataclasses import dataclass, field

import numpy as np

from .binio import Reader, Writer
from .errors import SpecError, BuildError, DataError
from .net.layers import (ACTIVATION_CODES, POOL_CODES, Activation,
                         BatchNorm2d, Conv2d, Dense, Dropout, Flatten,
                         Pool2d)
from .net.model import Model

_SPEC_KEYS = [
    ("h", "h"),
    ("w", "w"),
    ("layers_cnn", "layers_cnn"),
    ("kernel_list", "kernel_list"),
    ("filters_list", "filters_list"),
    ("stride_list", "stride_list"),
    ("padding_list", "padding_list"),
    ("pooling_list", "pooling_list"),
    ("groups_list", "groups_list"),
    ("CNN_normalization_list", "cnn_normalization_list"),
    ("layers_ff", "layers_ff"),
    ("neurons_list", "neurons_list"),
    ("activation_list", "activation_list"),
    ("bias_list", "bias_list"),
    ("dropout_list", "dropout_list"),
]
_KEY_TO_ATTR = dict(_SPEC_KEYS)


@dataclass
class ModelSpec:
    """Parsed key-value model description (see module docstring)."""

    h: int
    w: int
    layers_cnn: int
    kernel_list: list
    filters_list: list
    stride_list: list  # None means all strides (1, 1)
    padding_list: list
    pooling_list: list
    groups_list: list
    cnn_normalization_list: list
    layers_ff: int
    neurons_list: list
    activation_list: list
    bias_list: list
    dropout_list: list

    def in_channels(self):
        return self.filters_list[0][0] if self.layers_cnn > 0 else 1

    def strides(self):
        if self.stride_list is None:
            return [(1, 1)] * self.layers_cnn
        return list(self.stride_list)


@dataclass
class BuildReport:
    """Shapes and sizes recorded while assembling a model."""

    layer_shapes: list = field(default_factory=list)  # (kind, in, out)
    flatten_dim: int = 0
    param_count: int = 0


def parse_spec(text):
    """Parse the flat ``key = value`` spec format into a ModelSpec."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEY_TO_ATTR:
            raise SpecError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise SpecError(f"line {lineno}: duplicate key {key!r}")
        if value == "-":
            values[key] = None
            continue
        try:
            values[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError) as exc:
            raise SpecError(f"line {lineno}: cannot parse value {value!r}") from exc
    missing = [k for k, _ in _SPEC_KEYS if k not in values]
    if missing:
        raise SpecError(f"missing keys: {', '.join(missing)}")
    return ModelSpec(**{_KEY_TO_ATTR[k]: v for k, v in values.items()})


def _render(value):
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, tuple):
        return "(" + ", ".join(_render(v) for v in value) + ")"
    if isinstance(value, list):
        return "[" + ", ".join(_render(v) for v in value) + "]"
    return repr(value)


def canonical_spec_text(spec):
    """Render a spec in canonical form (fixed key order, normalized literals)."""
    lines = []
    for key, attr in _SPEC_KEYS:
        value = getattr(spec, attr)
        lines.append(f"{key} = {'-' if value is None else _render(value)}")
    return "\n".join(lines) + "\n"


def load_spec(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_spec(fh.read())


def save_spec(spec, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_spec_text(spec))


def eegnet_spec():
    """The committed 22-channel, 512-sample EEG classification network."""
    return ModelSpec(
        h=22,
        w=512,
        layers_cnn=4,
        kernel_list=[(1, 32), (22, 1), (1, 4), (1, 1)],
        filters_list=[(1, 8), (8, 16), (16, 16), (16, 16)],
        stride_list=None,
        padding_list=[(0, 4), (0, 0), (0, 2), (0, 0)],
        pooling_list=[-1, [1, (1, 4)], -1, [1, (1, 8)]],
        groups_list=[1, 8, 16, 1],
        cnn_normalization_list=[True, True, False, True],
        layers_ff=1,
        neurons_list=[4],
        activation_list=[-1, 3, -1, 3, 9],
        bias_list=[False, False, False, False, True, True],
        dropout_list=[-1, 0.5, -1, 0.5, -1],
    )


def _is_dim_pair(value):
    return (isinstance(value, tuple) and len(value) == 2
            and all(isinstance(v, int) and not isinstance(v, bool) for v in value))


def validate_spec(spec):
    """Check every structural invariant; returns a list of violations.

    An empty list means the spec is valid. Each entry is a human-readable
    message carrying the offending key and, where applicable, layer index.
    """
    v = []
    ncnn = spec.layers_cnn
    nff = spec.layers_ff
    if not isinstance(ncnn, int) or ncnn < 0:
        return [f"layers_cnn must be a non-negative integer, got {ncnn!r}"]
    if not isinstance(nff, int) or nff < 0:
        return [f"layers_ff must be a non-negative integer, got {nff!r}"]
    if ncnn == 0 and nff == 0:
        v.append("model has no layers (layers_cnn == layers_ff == 0)")
    if not (isinstance(spec.h, int) and spec.h > 0):
        v.append(f"h must be a positive integer, got {spec.h!r}")
    if not (isinstance(spec.w, int) and spec.w > 0):
        v.append(f"w must be a positive integer, got {spec.w!r}")

    per_conv = [
        ("kernel_list", spec.kernel_list),
        ("filters_list", spec.filters_list),
        ("padding_list", spec.padding_list),
        ("pooling_list", spec.pooling_list),
        ("groups_list", spec.groups_list),
        ("CNN_normalization_list", spec.cnn_normalization_list),
    ]
    if spec.stride_list is not None:
        per_conv.append(("stride_list", spec.stride_list))
    for key, lst in per_conv:
        if not isinstance(lst, list) or len(lst) != ncnn:
            v.append(f"{key} length must equal layers_cnn ({ncnn}), "
                     f"got {lst!r}")
    ntotal = ncnn + nff
    for key, lst in (("activation_list", spec.activation_list),
                     ("dropout_list", spec.dropout_list)):
        if not isinstance(lst, list) or len(lst) != ntotal:
            v.append(f"{key} length must equal layers_cnn + layers_ff "
                     f"({ntotal}), got {lst!r}")
    if not isinstance(spec.bias_list, list) or len(spec.bias_list) < ntotal:
        v.append(f"bias_list needs at least {ntotal} entries, "
                 f"got {spec.bias_list!r}")
    if not isinstance(spec.neurons_list, list) or len(spec.neurons_list) != nff:
        v.append(f"neurons_list length must equal layers_ff ({nff}), "
                 f"got {spec.neurons_list!r}")
    if v:
        return v  # shapes below assume consistent lengths

    strides = spec.strides()
    for i in range(ncnn):
        if not _is_dim_pair(spec.kernel_list[i]) or min(spec.kernel_list[i]) < 1:
            v.append(f"layer {i + 1}: kernel_list entry must be a positive "
                     f"(h, w) tuple, got {spec.kernel_list[i]!r}")
        if not _is_dim_pair(spec.filters_list[i]) or min(spec.filters_list[i]) < 1:
            v.append(f"layer {i + 1}: filters_list entry must be a positive "
                     f"(in, out) tuple, got {spec.filters_list[i]!r}")
        pad = spec.padding_list[i]
        if not ((_is_dim_pair(pad) or (isinstance(pad, list) and len(pad) == 2))
                and min(pad) >= 0):
            v.append(f"layer {i + 1}: padding_list entry must be a "
                     f"non-negative pair, got {pad!r}")
        if not _is_dim_pair(strides[i]) or min(strides[i]) < 1:
            v.append(f"layer {i + 1}: stride entry must be a positive pair, "
                     f"got {strides[i]!r}")
        g = spec.groups_list[i]
        if not (isinstance(g, int) and g >= 1):
            v.append(f"layer {i + 1}: groups must be a positive integer, "
                     f"got {g!r}")
        elif _is_dim_pair(spec.filters_list[i]):
            cin, cout = spec.filters_list[i]
            if cin % g or cout % g:
                v.append(f"layer {i + 1}: groups {g} must divide in/out "
                         f"channels {cin}/{cout}")
        pool = spec.pooling_list[i]
        if pool != -1:
            ok = (isinstance(pool, (list, tuple)) and len(pool) == 2
                  and pool[0] in POOL_CODES and _is_dim_pair(tuple(pool[1]))
                  and min(pool[1]) >= 1)
            if not ok:
                v.append(f"layer {i + 1}: pooling_list entry must be -1 or "
                         f"[code, (h, w)] with code in {sorted(POOL_CODES)}, "
                         f"got {pool!r}")
        if not isinstance(spec.cnn_normalization_list[i], bool):
            v.append(f"layer {i + 1}: CNN_normalization_list entry must be "
                     f"a boolean, got {spec.cnn_normalization_list[i]!r}")
        if i + 1 < ncnn and _is_dim_pair(spec.filters_list[i]) \
                and _is_dim_pair(spec.filters_list[i + 1]):
            if spec.filters_list[i][1] != spec.filters_list[i + 1][0]:
                v.append(f"layer {i + 1}: channel chain broken, out "
                         f"{spec.filters_list[i][1]} != next in "
                         f"{spec.filters_list[i + 1][0]}")

    for i, code in enumerate(spec.activation_list):
        if code not in ACTIVATION_CODES:
            v.append(f"entry {i + 1}: unknown activation code {code!r}; "
                     f"known codes: {sorted(ACTIVATION_CODES)}")
    for i, p in enumerate(spec.dropout_list):
        if p != -1 and not (isinstance(p, (int, float)) and 0 <= p < 1):
            v.append(f"entry {i + 1}: dropout must be -1 or a probability "
                     f"in [0, 1), got {p!r}")
    for i, b in enumerate(spec.bias_list):
        if not isinstance(b, bool):
            v.append(f"entry {i + 1}: bias_list entry must be a boolean, "
                     f"got {b!r}")
    for i, nrn in enumerate(spec.neurons_list):
        if not (isinstance(nrn, int) and nrn > 0):
            v.append(f"ff layer {i + 1}: neurons must be a positive integer, "
                     f"got {nrn!r}")
    if v:
        return v

    # shape propagation through the convolutional section
    h, w = spec.h, spec.w
    for i in range(ncnn):
        kh, kw = spec.kernel_list[i]
        ph, pw = spec.padding_list[i]
        sh, sw = strides[i]
        if h + 2 * ph < kh or w + 2 * pw < kw:
            v.append(f"layer {i + 1}: kernel ({kh}, {kw}) exceeds padded "
                     f"input ({h + 2 * ph}, {w + 2 * pw})")
            return v
        h = (h + 2 * ph - kh) // sh + 1
        w = (w + 2 * pw - kw) // sw + 1
        pool = spec.pooling_list[i]
        if pool != -1:
            qh, qw = pool[1]
            h, w = h // qh, w // qw
        if h <= 0 or w <= 0:
            v.append(f"layer {i + 1}: feature map collapsed to "
                     f"({h}, {w})")
            return v
    return v


def build_conv_section(spec, dtype=np.float32, rng=None):
    """Phase 1: the ordered convolutional blocks as a flat layer list."""
    rng = rng if rng is not None else np.random.default_rng()
    layers = []
    strides = spec.strides()
    shape = (1, spec.in_channels(), spec.h, spec.w)
    for i in range(spec.layers_cnn):
        cin, cout = spec.filters_list[i]
        conv = Conv2d(cin, cout, spec.kernel_list[i], strides[i],
                      tuple(spec.padding_list[i]), spec.groups_list[i],
                      bias=spec.bias_list[i], dtype=dtype, rng=rng)
        block = [conv]
        if spec.cnn_normalization_list[i]:
            block.append(BatchNorm2d(cout, dtype=dtype))
        if spec.activation_list[i] != -1:
            block.append(Activation(spec.activation_list[i]))
        if spec.pooling_list[i] != -1:
            code, kernel = spec.pooling_list[i]
            block.append(Pool2d(code, tuple(kernel)))
        if spec.dropout_list[i] != -1:
            block.append(Dropout(spec.dropout_list[i]))
        for layer in block:
            try:
                shape = layer.output_shape(shape)
            except BuildError as exc:
                raise BuildError(f"conv layer {i + 1}: {exc}") from exc
            if len(shape) == 4 and (shape[2] <= 0 or shape[3] <= 0):
                raise BuildError(f"conv layer {i + 1}: feature map collapsed "
                                 f"to {shape[2:]}")
        layers.extend(block)
    return layers


def infer_flatten_dim(conv_layers, in_channels, h, w):
    """Phase 2: flattened feature count after the convolutional section."""
    shape = (1, in_channels, h, w)
    for layer in conv_layers:
        shape = layer.output_shape(shape)
        if len(shape) == 4 and (shape[2] <= 0 or shape[3] <= 0):
            raise BuildError(f"feature map collapsed to {shape[2:]}")
    return int(np.prod(shape[1:]))


def build_model(spec, seed=0, dtype=np.float32):
    """All three phases; returns (Model, BuildReport).

    The same spec and seed always produce bitwise-identical initial
    parameters.
    """
    violations = validate_spec(spec)
    if violations:
        raise SpecError("invalid spec: " + "; ".join(violations))
    ntotal = spec.layers_cnn + spec.layers_ff
    if len(spec.bias_list) > ntotal:
        warnings.warn(f"bias_list has {len(spec.bias_list)} entries; the "
                      f"last {len(spec.bias_list) - ntotal} are ignored")
    rng = np.random.default_rng(seed)
    conv_layers = build_conv_section(spec, dtype=dtype, rng=rng)
    flatten_dim = infer_flatten_dim(conv_layers, spec.in_channels(),
                                    spec.h, spec.w)
    layers = list(conv_layers)
    layers.append(Flatten())
    features = flatten_dim
    for j in range(spec.layers_ff):
        neurons = spec.neurons_list[j]
        layers.append(Dense(features, neurons,
                            bias=spec.bias_list[spec.layers_cnn + j],
                            dtype=dtype, rng=rng))
        code = spec.activation_list[spec.layers_cnn + j]
        if code != -1:
            layers.append(Activation(code))
        p = spec.dropout_list[spec.layers_cnn + j]
        if p != -1:
            layers.append(Dropout(p))
        features = neurons

    model = Model(layers, rng_seed=seed, dtype=dtype)
    report = BuildReport(flatten_dim=flatten_dim,
                         param_count=model.param_count())
    shape = (1, spec.in_channels(), spec.h, spec.w) if spec.layers_cnn else \
        (1, flatten_dim)
    for layer in model.layers:
        out = layer.output_shape(shape)
        report.layer_shapes.append((layer.kind, shape, out))
        shape = out
    return model, report


MODEL_MAGIC = b"EEGM"
MODEL_VERSION = 1


def save_model(model, spec, path):
    """Persist a built model: its spec plus every parameter and buffer."""
    w = Writer()
    w.magic(MODEL_MAGIC)
    w.u32(MODEL_VERSION)
    w.text(canonical_spec_text(spec))
    w.u32(0 if model.dtype == np.float32 else 1)
    w.i64(model.rng_seed)
    state = model.state_dict()
    w.u32(len(state))
    for name in sorted(state):
        w.text(name)
        w.array(state[name])
    with open(path, "wb") as fh:
        fh.write(w.payload())


def load_model(path):
    """Rebuild a model from a saved blob; returns (model, spec)."""
    with open(path, "rb") as fh:
        r = Reader(fh.read(), name=str(path))
    r.magic(MODEL_MAGIC)
    version = r.u32()
    if version != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    spec = parse_spec(r.text())
    dtype = np.float32 if r.u32() == 0 else np.float64
    seed = r.i64()
    state = {}
    for _ in range(r.u32()):
        name = r.text()
        state[name] = r.array()
    r.done()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model, _ = build_model(spec, seed=seed, dtype=dtype)
    model.load_state_dict(state)
    model.eval_mode()
    return model, spec
