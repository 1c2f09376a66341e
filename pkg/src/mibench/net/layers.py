"""Layer kernels for sequential CNN stacks: forward and backward passes.

Everything operates on plain numpy arrays in NCHW layout (batch, channels,
height, width).  Each layer caches whatever its backward pass needs during
forward; ``backward`` returns the gradient w.r.t. the layer input and writes
parameter gradients in place (``Param.grad``).

Runtime default is float32; gradient checking rebuilds layers in float64.
"""

import numpy as np

from ..errors import BuildError, SpecError

# Registry of activation codes accepted in model specifications.
ACTIVATION_CODES = {-1: "identity", 3: "elu", 9: "log_softmax"}
# Registry of pooling codes; -1 in a spec means "no pooling layer".
POOL_CODES = {0: "max", 1: "avg"}


class Param:
    """A trainable array and its gradient buffer."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name, data):
        self.name = name
        self.data = data
        self.grad = np.zeros_like(data)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base class; concrete layers override forward/backward/output_shape."""

    kind = "?"

    def params(self):
        return []

    def buffers(self):
        """Non-trainable state that must survive serialization (BN stats)."""
        return {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, gout):
        raise NotImplementedError

    def output_shape(self, shape):
        return tuple(shape)


def _conv_out_dim(size, k, pad, stride):
    return (size + 2 * pad - k) // stride + 1


class Conv2d(Layer):
    """2-D cross-correlation with zero padding and channel groups.

    Weights are (out_channels, in_channels // groups, kh, kw); with
    groups == in_channels this is a depthwise convolution where output
    channel c only sees input channel c // (out_channels // in_channels).
    """

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel, stride=(1, 1),
                 padding=(0, 0), groups=1, bias=True, dtype=np.float32,
                 rng=None):
        if groups < 1:
            raise BuildError(f"conv2d: groups must be >= 1, got {groups}")
        if in_channels % groups != 0 or out_channels % groups != 0:
            raise BuildError(
                f"conv2d: groups {groups} must divide in_channels "
                f"{in_channels} and out_channels {out_channels}")
        kh, kw = kernel
        if kh < 1 or kw < 1:
            raise BuildError(f"conv2d: kernel must be positive, got {kernel}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (int(kh), int(kw))
        self.stride = (int(stride[0]), int(stride[1]))
        self.padding = (int(padding[0]), int(padding[1]))
        self.groups = groups
        rng = rng if rng is not None else np.random.default_rng()
        cg = in_channels // groups
        fan_in = cg * kh * kw
        fan_out = (out_channels // groups) * kh * kw
        self.weight = Param(
            "weight", glorot_uniform(rng, (out_channels, cg, kh, kw),
                                     fan_in, fan_out, dtype))
        self.bias = Param("bias", np.zeros(out_channels, dtype)) if bias else None
        self._cache = None

    def params(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def output_shape(self, shape):
        n, c, h, w = shape
        if c != self.in_channels:
            raise BuildError(
                f"conv2d: expected {self.in_channels} input channels, got {c}")
        kh, kw = self.kernel
        ph, pw = self.padding
        sh, sw = self.stride
        if h + 2 * ph < kh or w + 2 * pw < kw:
            raise BuildError(
                f"conv2d: kernel {self.kernel} exceeds padded input ({h}, {w})")
        return (n, self.out_channels,
                _conv_out_dim(h, kh, ph, sh), _conv_out_dim(w, kw, pw, sw))

    def _im2col(self, xp, n, ho, wo):
        """Column matrix (g, C/g*kh*kw, N*H'*W'); one slice copy per tap."""
        c = self.in_channels
        kh, kw = self.kernel
        sh, sw = self.stride
        cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                tap = xp[:, :, i:i + ho * sh:sh, j:j + wo * sw:sw]
                cols[:, i, j] = np.moveaxis(tap, 1, 0)
        return cols.reshape(self.groups, -1, n * ho * wo)

    def forward(self, x, train=False, rng=None):
        n, _, h, w = x.shape
        _, cout, ho, wo = self.output_shape(x.shape)
        ph, pw = self.padding
        g = self.groups
        og = cout // g
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
        cols = self._im2col(xp, n, ho, wo)
        wmat = self.weight.data.reshape(g, og, -1)
        out = np.matmul(wmat, cols)  # (g, C_out/g, N*H'*W')
        out = out.reshape(g, og, n, ho, wo)
        out = np.ascontiguousarray(np.moveaxis(out.reshape(cout, n, ho, wo), 1, 0))
        if self.bias is not None:
            out += self.bias.data[None, :, None, None]
        self._cache = (cols, x.shape, xp.shape)
        return out

    def backward(self, gout):
        cols, x_shape, xp_shape = self._cache
        n, c, h, w = x_shape
        g = self.groups
        cout = self.out_channels
        og = cout // g
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        ho, wo = gout.shape[2], gout.shape[3]
        # (g, C_out/g, N*H'*W')
        goutm = np.ascontiguousarray(np.moveaxis(gout, 0, 1))
        goutm = goutm.reshape(g, og, n * ho * wo)
        gw = np.matmul(goutm, cols.transpose(0, 2, 1))
        self.weight.grad[...] = gw.reshape(self.weight.data.shape)
        if self.bias is not None:
            self.bias.grad[...] = gout.sum(axis=(0, 2, 3))
        wmat = self.weight.data.reshape(g, og, -1)
        gcols = np.matmul(wmat.transpose(0, 2, 1), goutm)
        # per-tap gradients (C, kh, kw, N, H', W'), scattered back onto the pad
        gtap = gcols.reshape(c, kh, kw, n, ho, wo)
        gxp = np.zeros(xp_shape, dtype=gout.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + ho * sh:sh, j:j + wo * sw:sw] += \
                    np.moveaxis(gtap[:, i, j], 0, 1)
        return gxp[:, :, ph:ph + h, pw:pw + w]


class BatchNorm2d(Layer):
    """Per-channel batch normalization with running statistics."""

    kind = "batchnorm2d"

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param("gamma", np.ones(channels, dtype))
        self.beta = Param("beta", np.zeros(channels, dtype))
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {"running_mean": self.running_mean,
                "running_var": self.running_var}

    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        if c != self.channels:
            raise BuildError(
                f"batchnorm2d: expected {self.channels} channels, got {c}")
        if train:
            count = n * h * w
            if count < 2:
                raise BuildError(
                    "batchnorm2d: train mode needs at least 2 values per channel")
            mean = x.mean(axis=(0, 2, 3))
            xc = x - mean[None, :, None, None]
            var = np.einsum("nchw,nchw->c", xc, xc) / count
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = xc
            xhat *= inv_std[None, :, None, None]
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mean
            self.running_var[...] = (1 - m) * self.running_var + \
                m * var * count / (count - 1)
            self._cache = (xhat, inv_std, True)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[None, :, None, None]) * \
                inv_std[None, :, None, None]
            self._cache = (xhat, inv_std, False)
        return self.gamma.data[None, :, None, None] * xhat + \
            self.beta.data[None, :, None, None]

    def backward(self, gout):
        xhat, inv_std, was_train = self._cache
        self.gamma.grad[...] = (gout * xhat).sum(axis=(0, 2, 3))
        self.beta.grad[...] = gout.sum(axis=(0, 2, 3))
        gxhat = gout * self.gamma.data[None, :, None, None]
        if not was_train:
            return gxhat * inv_std[None, :, None, None]
        n, _, h, w = gout.shape
        count = n * h * w
        s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv_std[None, :, None, None] / count) * \
            (count * gxhat - s1 - xhat * s2)


class Activation(Layer):
    """Elementwise activation selected by integer code.

    -1 identity, 3 ELU(alpha=1), 9 log-softmax over the last dimension.
    """

    kind = "activation"

    def __init__(self, code):
        if code not in ACTIVATION_CODES:
            raise SpecError(f"unknown activation code {code}; "
                            f"known codes: {sorted(ACTIVATION_CODES)}")
        self.code = code
        self._cache = None

    def forward(self, x, train=False, rng=None):
        if self.code == -1:
            self._cache = None
            return x
        if self.code == 3:
            neg = x < 0
            y = np.where(neg, np.expm1(np.minimum(x, 0.0)), x)
            self._cache = (neg, y)
            return y
        # log-softmax, numerically stable per row
        m = x.max(axis=-1, keepdims=True)
        z = x - m
        y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        self._cache = np.exp(y)
        return y

    def backward(self, gout):
        if self.code == -1:
            return gout
        if self.code == 3:
            neg, y = self._cache
            return gout * np.where(neg, y + 1.0, 1.0)
        softmax = self._cache
        return gout - softmax * gout.sum(axis=-1, keepdims=True)


class Pool2d(Layer):
    """Non-overlapping max/average pooling; stride equals the kernel."""

    kind = "pool2d"

    def __init__(self, code, kernel):
        if code not in POOL_CODES:
            raise SpecError(f"unknown pooling code {code}; "
                            f"known codes: {sorted(POOL_CODES)}")
        kh, kw = kernel
        if kh < 1 or kw < 1:
            raise BuildError(f"pool2d: kernel must be positive, got {kernel}")
        self.code = code
        self.kernel = (int(kh), int(kw))
        self._cache = None

    def output_shape(self, shape):
        n, c, h, w = shape
        kh, kw = self.kernel
        if h // kh == 0 or w // kw == 0:
            raise BuildError(
                f"pool2d: kernel {self.kernel} larger than input ({h}, {w})")
        return (n, c, h // kh, w // kw)

    def forward(self, x, train=False, rng=None):
        n, c, ho, wo = self.output_shape(x.shape)
        kh, kw = self.kernel
        blocks = x[:, :, :ho * kh, :wo * kw].reshape(n, c, ho, kh, wo, kw)
        blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, kh * kw)
        if self.code == 1:
            out = blocks.mean(axis=-1)
            self._cache = (x.shape, None)
        else:
            idx = blocks.argmax(axis=-1)
            out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
            self._cache = (x.shape, idx)
        return out

    def backward(self, gout):
        x_shape, idx = self._cache
        n, c, h, w = x_shape
        kh, kw = self.kernel
        ho, wo = gout.shape[2], gout.shape[3]
        gblocks = np.zeros((n, c, ho, wo, kh * kw), dtype=gout.dtype)
        if self.code == 1:
            gblocks[...] = gout[..., None] / (kh * kw)
        else:
            np.put_along_axis(gblocks, idx[..., None], gout[..., None], axis=-1)
        gx = np.zeros(x_shape, dtype=gout.dtype)
        gtrim = gblocks.reshape(n, c, ho, wo, kh, kw).transpose(0, 1, 2, 4, 3, 5)
        gx[:, :, :ho * kh, :wo * kw] = gtrim.reshape(n, c, ho * kh, wo * kw)
        return gx


class Dropout(Layer):
    """Inverted dropout: scales surviving units at train time, identity at eval."""

    kind = "dropout"

    def __init__(self, p):
        if not 0.0 <= p < 1.0:
            raise SpecError(f"dropout probability must be in [0, 1), got {p}")
        self.p = float(p)
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise BuildError("dropout in train mode requires an RNG")
        keep = 1.0 - self.p
        self._mask = (rng.random(x.shape) >= self.p).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, gout):
        if self._mask is None:
            return gout
        return gout * self._mask


class Dense(Layer):
    """Affine map on flattened features: y = x @ W + b."""

    kind = "dense"

    def __init__(self, in_features, out_features, bias=True, dtype=np.float32,
                 rng=None):
        self.in_features = in_features
        self.out_features = out_features
        rng = rng if rng is not None else np.random.default_rng()
        self.weight = Param(
            "weight", glorot_uniform(rng, (in_features, out_features),
                                     in_features, out_features, dtype))
        self.bias = Param("bias", np.zeros(out_features, dtype)) if bias else None
        self._cache = None

    def params(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def output_shape(self, shape):
        n, f = shape
        if f != self.in_features:
            raise BuildError(
                f"dense: expected {self.in_features} input features, got {f}")
        return (n, self.out_features)

    def forward(self, x, train=False, rng=None):
        self.output_shape(x.shape)
        self._cache = x
        y = x @ self.weight.data
        if self.bias is not None:
            y += self.bias.data
        return y

    def backward(self, gout):
        x = self._cache
        self.weight.grad[...] = x.T @ gout
        if self.bias is not None:
            self.bias.grad[...] = gout.sum(axis=0)
        return gout @ self.weight.data.T


class Flatten(Layer):
    """Collapses all non-batch dimensions into one feature axis."""

    kind = "flatten"

    def __init__(self):
        self._shape = None

    def output_shape(self, shape):
        n = shape[0]
        return (n, int(np.prod(shape[1:])))

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gout):
        return gout.reshape(self._shape)
