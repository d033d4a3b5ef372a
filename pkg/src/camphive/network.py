"""Feed-forward network core.

Dense and 2-D convolution layers with ReLU / flatten / 2x2 max-pool,
softmax cross-entropy loss, reverse-mode gradients, and (optionally
masked) SGD steps. Everything is plain numpy in float64; data layout
for images is NHWC.

Parameters live inside the layers; ``flatten_params`` / ``unflatten_params``
expose the canonical flat view (per layer: weights then bias). The
weight-only view (``weight_vector`` etc.) excludes biases and is the
space the pruning and curvature code operates in.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataFormatError, GradientStateError, NumericError, ShapeError

CHECKPOINT_MAGIC = b"CAMPNET1"
CHECKPOINT_FORMAT = 1


class Batch:
    """A batch of inputs with integer class labels in [0, num_classes)."""

    def __init__(self, inputs, labels, num_classes):
        inputs = np.asarray(inputs, dtype=np.float64)
        labels = np.asarray(labels)
        if inputs.ndim < 2 or inputs.shape[0] < 1:
            raise ShapeError(f"batch inputs need a leading batch dim >= 1, got shape {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise ShapeError(f"labels shape {labels.shape} does not match batch size {inputs.shape[0]}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ShapeError(f"labels must be integers, got dtype {labels.dtype}")
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if labels.min() < 0 or labels.max() >= num_classes:
            raise ValueError(f"labels must lie in [0, {num_classes}), got range "
                             f"[{labels.min()}, {labels.max()}]")
        if not np.isfinite(inputs).all():
            raise NumericError("batch inputs contain NaN/Inf")
        self.inputs = inputs
        self.labels = labels.astype(np.int64)
        self.num_classes = int(num_classes)

    def __len__(self):
        return self.inputs.shape[0]


def _glorot(rng, shape, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    if rng is None:
        return np.zeros(shape, dtype=np.float64)
    return rng.uniform(-lim, lim, size=shape).astype(np.float64)


class Dense:
    kind = "dense"
    has_weights = True

    def __init__(self, in_size, out_size, *, rng=None):
        if in_size < 1 or out_size < 1:
            raise ValueError(f"dense sizes must be >= 1, got {in_size}->{out_size}")
        self.in_size = int(in_size)
        self.out_size = int(out_size)
        self.weights = _glorot(rng, (self.in_size, self.out_size), in_size, out_size)
        self.bias = np.zeros(self.out_size, dtype=np.float64)
        self._cache = None

    def spec(self):
        return {"kind": self.kind, "in_size": self.in_size, "out_size": self.out_size}

    def output_shape(self, in_shape):
        if in_shape != (self.in_size,):
            raise ShapeError(f"dense layer expects input shape ({self.in_size},), got {in_shape}")
        return (self.out_size,)

    def forward(self, x):
        self._cache = x
        return x @ self.weights + self.bias

    def backward(self, dy):
        x = self._cache
        if x is None:
            raise GradientStateError("dense backward without forward")
        self.grad_weights = x.T @ dy
        self.grad_bias = dy.sum(axis=0)
        return dy @ self.weights.T


class Conv2D:
    """Direct (im2col) 2-D convolution over NHWC tensors.

    weights: (k_h, k_w, in_channels, out_channels); padding is either an
    explicit (pad_h, pad_w) in pixels or "same" (odd kernels, any stride).
    """

    kind = "conv2d"
    has_weights = True

    def __init__(self, in_channels, out_channels, kernel=(3, 3), stride=1,
                 padding="same", *, rng=None):
        if in_channels < 1 or out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if kh < 1 or kw < 1:
            raise ValueError(f"kernel dims must be >= 1, got {kh}x{kw}")
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        if padding == "same":
            if kh % 2 == 0 or kw % 2 == 0:
                raise ValueError("'same' padding requires odd kernel dims")
            padding = ((kh - 1) // 2, (kw - 1) // 2)
        elif padding == "valid":
            padding = (0, 0)
        elif isinstance(padding, int):
            padding = (padding, padding)
        ph, pw = padding
        if ph < 0 or pw < 0:
            raise ValueError("padding must be >= 0")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = (int(kh), int(kw))
        self.stride = int(stride)
        self.padding = (int(ph), int(pw))
        fan = kh * kw
        self.weights = _glorot(rng, (kh, kw, in_channels, out_channels),
                               fan * in_channels, fan * out_channels)
        self.bias = np.zeros(self.out_channels, dtype=np.float64)
        self._cache = None

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": list(self.kernel),
                "stride": self.stride, "padding": list(self.padding)}

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[2] != self.in_channels:
            raise ShapeError(f"conv2d expects (H, W, {self.in_channels}) input, got {in_shape}")
        h, w = in_shape[0], in_shape[1]
        kh, kw = self.kernel
        ph, pw = self.padding
        oh = (h + 2 * ph - kh) // self.stride + 1
        ow = (w + 2 * pw - kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv2d output collapses to {oh}x{ow} on input {in_shape}")
        return (oh, ow, self.out_channels)

    def _im2col(self, x):
        kh, kw = self.kernel
        ph, pw = self.padding
        s = self.stride
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        # (B, H', W', C, kh, kw) -> strided windows, then stride subsample
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
        win = win[:, ::s, ::s]
        b, oh, ow = win.shape[0], win.shape[1], win.shape[2]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b, oh, ow, kh * kw * self.in_channels)
        return cols, (oh, ow), xp.shape

    def forward(self, x):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(f"conv2d forward expects (B, H, W, {self.in_channels}), got {x.shape}")
        cols, (oh, ow), xp_shape = self._im2col(x)
        self._cache = (x.shape, cols, xp_shape)
        wmat = self.weights.reshape(-1, self.out_channels)
        y = cols @ wmat + self.bias
        return y.reshape(x.shape[0], oh, ow, self.out_channels)

    def backward(self, dy):
        if self._cache is None:
            raise GradientStateError("conv2d backward without forward")
        x_shape, cols, xp_shape = self._cache
        b, oh, ow, _ = dy.shape
        kh, kw = self.kernel
        ph, pw = self.padding
        s = self.stride
        flat_cols = cols.reshape(-1, cols.shape[-1])
        flat_dy = dy.reshape(-1, self.out_channels)
        self.grad_weights = (flat_cols.T @ flat_dy).reshape(self.weights.shape)
        self.grad_bias = flat_dy.sum(axis=0)
        dcols = (flat_dy @ self.weights.reshape(-1, self.out_channels).T)
        dcols = dcols.reshape(b, oh, ow, kh, kw, self.in_channels)
        dxp = np.zeros(xp_shape, dtype=np.float64)
        for a in range(kh):
            for c in range(kw):
                dxp[:, a:a + s * oh:s, c:c + s * ow:s, :] += dcols[:, :, :, a, c, :]
        h, w = x_shape[1], x_shape[2]
        return dxp[:, ph:ph + h, pw:pw + w, :]


class ReLU:
    kind = "relu"
    has_weights = False

    def spec(self):
        return {"kind": self.kind}

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Flatten:
    kind = "flatten"
    has_weights = False

    def spec(self):
        return {"kind": self.kind}

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class MaxPool2x2:
    """Non-overlapping 2x2 max pool; spatial dims must be even."""

    kind = "maxpool2x2"
    has_weights = False

    def spec(self):
        return {"kind": self.kind}

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool2x2 expects (H, W, C) input, got {in_shape}")
        h, w, c = in_shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
        return (h // 2, w // 2, c)

    def forward(self, x):
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
        xw = x.reshape(b, h // 2, 2, w // 2, 2, c)
        flat = xw.transpose(0, 1, 3, 2, 4, 5).reshape(b, h // 2, w // 2, 4, c)
        arg = flat.argmax(axis=3)  # first max wins ties, deterministic
        onehot = arg[:, :, :, None, :] == np.arange(4)[None, None, None, :, None]
        self._cache = (onehot, x.shape)
        return flat.max(axis=3)

    def backward(self, dy):
        onehot, x_shape = self._cache
        b, h, w, c = x_shape
        dflat = dy[:, :, :, None, :] * onehot
        dxw = dflat.reshape(b, h // 2, w // 2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
        return dxw.reshape(x_shape)


_LAYER_KINDS = {"dense": Dense, "conv2d": Conv2D, "relu": ReLU,
                "flatten": Flatten, "maxpool2x2": MaxPool2x2}


def layer_from_spec(spec):
    kind = spec.get("kind")
    if kind == "dense":
        return Dense(spec["in_size"], spec["out_size"])
    if kind == "conv2d":
        return Conv2D(spec["in_channels"], spec["out_channels"],
                      kernel=tuple(spec["kernel"]), stride=spec["stride"],
                      padding=tuple(spec["padding"]))
    if kind in ("relu", "flatten", "maxpool2x2"):
        return _LAYER_KINDS[kind]()
    raise ValueError(f"unknown layer kind {kind!r}")


class Network:
    """Ordered layer stack with a flat parameter view.

    A Network is single-writer: training mutates it in place; read-only
    evaluation on clones is safe concurrently.
    """

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        if not self.layers:
            raise ValueError("network needs at least one layer")
        counts = {}
        self.layer_names = []
        for layer in self.layers:
            i = counts.get(layer.kind, 0)
            counts[layer.kind] = i + 1
            self.layer_names.append(f"{layer.kind}_{i}")
        self._output_shapes = []
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self._output_shapes.append(shape)
        if len(self._output_shapes[-1]) != 1:
            raise ShapeError(f"final layer must emit a class-logit vector, got {self._output_shapes[-1]}")
        self._fwd = None

    # ---- structure ----

    def output_shapes(self):
        return list(self._output_shapes)

    @property
    def num_classes(self):
        return self._output_shapes[-1][0]

    def weighted_layers(self):
        """(layer index, layer) pairs for layers that carry weights."""
        return [(i, l) for i, l in enumerate(self.layers) if l.has_weights]

    def manifest(self):
        return {"format": CHECKPOINT_FORMAT,
                "input_shape": list(self.input_shape),
                "layers": [l.spec() for l in self.layers]}

    def clone(self):
        net = Network([layer_from_spec(s) for s in self.manifest()["layers"]], self.input_shape)
        unflatten_params(net, flatten_params(self))
        return net

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (self.manifest() == other.manifest()
                and np.array_equal(flatten_params(self), flatten_params(other)))

    # ---- flat parameter views ----

    @property
    def num_params(self):
        return sum(l.weights.size + l.bias.size for _, l in self.weighted_layers())

    @property
    def num_weights(self):
        return sum(l.weights.size for _, l in self.weighted_layers())

    def param_index(self):
        """Flat-vector layout: (layer index, attr, slice) per parameter block."""
        out = []
        pos = 0
        for i, l in self.weighted_layers():
            out.append((i, "weights", slice(pos, pos + l.weights.size)))
            pos += l.weights.size
            out.append((i, "bias", slice(pos, pos + l.bias.size)))
            pos += l.bias.size
        return out

    def weight_slices(self):
        """(layer index, slice into the weight-only vector) per weighted layer."""
        out = []
        pos = 0
        for i, l in self.weighted_layers():
            out.append((i, slice(pos, pos + l.weights.size)))
            pos += l.weights.size
        return out

    def param_weight_mask(self):
        """Boolean mask over the full flat vector, True at weight coords."""
        mask = np.zeros(self.num_params, dtype=bool)
        for _, attr, sl in self.param_index():
            if attr == "weights":
                mask[sl] = True
        return mask

    def weight_vector(self):
        return np.concatenate([l.weights.ravel() for _, l in self.weighted_layers()]) \
            if self.num_weights else np.zeros(0)

    def set_weight_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.num_weights,):
            raise ShapeError(f"weight vector length {vec.shape} != ({self.num_weights},)")
        for (i, sl) in self.weight_slices():
            layer = self.layers[i]
            layer.weights = vec[sl].reshape(layer.weights.shape).copy()

    def weight_gradient(self, batch):
        """Loss gradient restricted to the weight-only flat vector."""
        _, grad = loss_and_gradient(self, batch)
        return grad[self.param_weight_mask()]

    # ---- inference ----

    def predict(self, inputs):
        """Logits for raw inputs; no loss, no caching contract."""
        x = np.asarray(inputs, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"inputs shaped {x.shape[1:]} but network expects {self.input_shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x


def flatten_params(net):
    """All parameters as one float64 vector (per layer: weights, then bias)."""
    parts = []
    for _, l in net.weighted_layers():
        parts.append(l.weights.ravel())
        parts.append(l.bias.ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def unflatten_params(net, vec):
    """Write a flat vector back into the layers; inverse of flatten_params."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (net.num_params,):
        raise ShapeError(f"parameter vector length {vec.shape} != ({net.num_params},)")
    for i, attr, sl in net.param_index():
        layer = net.layers[i]
        cur = getattr(layer, attr)
        setattr(layer, attr, vec[sl].reshape(cur.shape).copy())
    return net


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def forward(net, batch):
    """Mean softmax cross-entropy plus every layer's output activations."""
    x = batch.inputs
    if x.shape[1:] != net.input_shape:
        raise ShapeError(f"batch inputs shaped {x.shape[1:]} but network expects {net.input_shape}")
    if batch.num_classes != net.num_classes:
        raise ShapeError(f"batch has {batch.num_classes} classes, network emits {net.num_classes}")
    activations = []
    for layer in net.layers:
        x = layer.forward(x)
        activations.append(x)
    logits = activations[-1]
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits in forward pass")
    logp = _log_softmax(logits)
    loss = -float(np.mean(logp[np.arange(len(batch)), batch.labels]))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss (numeric overflow)")
    net._fwd = (np.exp(logp), batch.labels, len(batch))
    return loss, activations


def backward(net, batch):
    """Flat-vector loss gradient; requires a preceding forward on this net."""
    if net._fwd is None:
        raise GradientStateError("backward() requires a prior forward() on this network")
    probs, labels, n = net._fwd
    if n != len(batch) or not np.array_equal(labels, batch.labels):
        raise GradientStateError("backward() batch does not match the last forward() batch")
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    dy = dlogits
    for layer in reversed(net.layers):
        dy = layer.backward(dy)
    parts = []
    for _, l in net.weighted_layers():
        parts.append(l.grad_weights.ravel())
        parts.append(l.grad_bias.ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def loss_and_gradient(net, batch):
    loss, _ = forward(net, batch)
    return loss, backward(net, batch)


def sgd_step(net, gradient, lr, mask=None):
    """w <- w - lr * (g * mask); mask=None means plain SGD. Mutates net."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != (net.num_params,):
        raise ShapeError(f"gradient length {gradient.shape} != ({net.num_params},)")
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != gradient.shape:
            raise ShapeError(f"mask length {mask.shape} != gradient length {gradient.shape}")
        gradient = gradient * mask
    unflatten_params(net, flatten_params(net) - lr * gradient)
    return net


# ---- reference architectures ----

def mlp(in_size, hidden, num_classes, *, seed):
    rng = np.random.default_rng(seed)
    layers = [Dense(in_size, hidden, rng=rng), ReLU(), Dense(hidden, num_classes, rng=rng)]
    return Network(layers, (in_size,))


def tinyconv(input_hw=(28, 28), in_channels=1, channels=(8, 16), num_classes=10, *, seed):
    h, w = input_hw
    if h % 4 or w % 4:
        raise ShapeError(f"tinyconv needs spatial dims divisible by 4, got {h}x{w}")
    rng = np.random.default_rng(seed)
    c1, c2 = channels
    layers = [
        Conv2D(in_channels, c1, kernel=(3, 3), stride=1, padding="same", rng=rng),
        ReLU(),
        MaxPool2x2(),
        Conv2D(c1, c2, kernel=(3, 3), stride=1, padding="same", rng=rng),
        ReLU(),
        MaxPool2x2(),
        Flatten(),
        Dense((h // 4) * (w // 4) * c2, num_classes, rng=rng),
    ]
    return Network(layers, (h, w, in_channels))


# ---- checkpoint I/O ----
# Layout: 8-byte magic, u32-LE manifest length, UTF-8 JSON manifest,
# parameters as little-endian float32 in flatten_params order.

def save_checkpoint(net, path):
    manifest = json.dumps(net.manifest(), sort_keys=True).encode("utf-8")
    params = flatten_params(net).astype("<f4")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        f.write(params.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (mlen,) = struct.unpack("<I", f.read(4))
        manifest = json.loads(f.read(mlen).decode("utf-8"))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise DataFormatError(f"unsupported checkpoint format {manifest.get('format')}")
        net = Network([layer_from_spec(s) for s in manifest["layers"]], manifest["input_shape"])
        raw = f.read(net.num_params * 4)
        params = np.frombuffer(raw, dtype="<f4")
        if params.size != net.num_params:
            raise DataFormatError(f"checkpoint holds {params.size} params, network needs {net.num_params}")
    unflatten_params(net, params.astype(np.float64))
    return net
