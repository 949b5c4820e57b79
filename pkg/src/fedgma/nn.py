"""Minimal dense/conv network engine with exact backpropagation.

Parameters live in a single flat float64 vector (the unit of aggregation
in the federated protocol). All functions here are pure: they never
mutate their inputs, so client updates can run concurrently.

Heads are coupled to the loss kind:
  * ``mse``            -> linear outputs, squared error
  * ``cross-entropy``  -> sigmoid + binary cross-entropy when
                          ``output_dim == 1``, softmax + cross-entropy
                          otherwise
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSS_KINDS = ("mse", "cross-entropy")
ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")

# Probabilities are clamped to [EPS, 1-EPS] before any log.
EPS = 1e-12


@dataclass(frozen=True)
class ConvFrontend:
    """Single fixed convolution stage: valid 2-d conv, max-pool, ReLU.

    The flat input row is interpreted as a (channels, height, width)
    image. Pooling precedes the ReLU; the two orders give identical
    values (ReLU is monotone) but pooling first keeps the argmax used
    for gradient routing tie-free on continuous conv outputs.
    """

    in_channels: int
    height: int
    width: int
    out_channels: int = 8
    kernel: int = 5
    pool: int = 2

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.kernel > min(self.height, self.width):
            raise ValueError("kernel larger than input")

    @property
    def conv_hw(self) -> tuple[int, int]:
        return self.height - self.kernel + 1, self.width - self.kernel + 1

    @property
    def pooled_hw(self) -> tuple[int, int]:
        ch, cw = self.conv_hw
        return ch // self.pool, cw // self.pool

    @property
    def out_dim(self) -> int:
        ph, pw = self.pooled_hw
        return self.out_channels * ph * pw

    @property
    def kernel_params(self) -> int:
        return self.out_channels * self.in_channels * self.kernel * self.kernel


@dataclass(frozen=True)
class ModelSpec:
    """Architecture + loss selection; fully determines the flat layout.

    ``hidden_layers`` is a sequence of (width, activation) pairs.
    ``bias=False`` drops every bias term, which keeps the toy
    one-parameter regression models at exactly one parameter.
    """

    input_dim: int
    hidden_layers: tuple[tuple[int, str], ...]
    output_dim: int
    loss_kind: str
    bias: bool = True
    conv: ConvFrontend | None = None

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}")
        object.__setattr__(self, "hidden_layers", tuple((int(w), a) for w, a in self.hidden_layers))
        for width, act in self.hidden_layers:
            if width < 1:
                raise ValueError("hidden layer width must be positive")
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if self.conv is not None:
            expected = self.conv.in_channels * self.conv.height * self.conv.width
            if self.input_dim != expected:
                raise ValueError(
                    f"input_dim {self.input_dim} does not match conv frontend ({expected})"
                )

    def dense_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every dense layer, head included."""
        first = self.conv.out_dim if self.conv is not None else self.input_dim
        widths = [first] + [w for w, _ in self.hidden_layers] + [self.output_dim]
        return list(zip(widths[:-1], widths[1:]))

    def param_count(self) -> int:
        n = 0
        if self.conv is not None:
            n += self.conv.kernel_params + (self.conv.out_channels if self.bias else 0)
        for fan_in, fan_out in self.dense_dims():
            n += fan_in * fan_out + (fan_out if self.bias else 0)
        return n


@dataclass(frozen=True)
class Batch:
    """Inputs (batch, input_dim) plus targets.

    Targets are class indices for cross-entropy (binary: {0,1}) and
    real values for mse, shaped (batch,) or (batch, output_dim).
    """

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=np.float64))
        object.__setattr__(self, "targets", np.asarray(self.targets))
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-d, got shape {self.inputs.shape}")
        if self.inputs.shape[0] < 1:
            raise ValueError("batch must contain at least one sample")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ValueError("inputs and targets disagree on batch size")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("non-finite input values")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def _check_params(spec: ModelSpec, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.param_count():
        raise ValueError(
            f"expected {spec.param_count()} parameters, got shape {params.shape}"
        )
    return params


def _unpack(spec: ModelSpec, params: np.ndarray):
    """Split the flat vector into (conv_kernel, conv_bias, [(W, b), ...])."""
    pos = 0
    conv_k = conv_b = None
    if spec.conv is not None:
        c = spec.conv
        conv_k = params[pos:pos + c.kernel_params].reshape(
            c.out_channels, c.in_channels, c.kernel, c.kernel
        )
        pos += c.kernel_params
        if spec.bias:
            conv_b = params[pos:pos + c.out_channels]
            pos += c.out_channels
    layers = []
    for fan_in, fan_out in spec.dense_dims():
        w = params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = None
        if spec.bias:
            b = params[pos:pos + fan_out]
            pos += fan_out
        layers.append((w, b))
    return conv_k, conv_b, layers


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def _conv_cols(conv: ConvFrontend, x: np.ndarray) -> np.ndarray:
    """im2col: (n, out_h*out_w, in_c*k*k) patch matrix."""
    n = x.shape[0]
    img = x.reshape(n, conv.in_channels, conv.height, conv.width)
    win = np.lib.stride_tricks.sliding_window_view(img, (conv.kernel, conv.kernel), axis=(2, 3))
    # (n, c, oh, ow, k, k) -> (n, oh, ow, c, k, k)
    win = win.transpose(0, 2, 3, 1, 4, 5)
    oh, ow = conv.conv_hw
    return win.reshape(n, oh * ow, conv.in_channels * conv.kernel * conv.kernel)


def _conv_forward(conv: ConvFrontend, kernel, bias, x):
    """Returns (features, cache) where features is (n, out_dim)."""
    n = x.shape[0]
    oh, ow = conv.conv_hw
    ph, pw = conv.pooled_hw
    p = conv.pool
    cols = _conv_cols(conv, x)
    kflat = kernel.reshape(conv.out_channels, -1)
    z = cols @ kflat.T  # (n, oh*ow, oc)
    if bias is not None:
        z = z + bias
    zmap = z.reshape(n, oh, ow, conv.out_channels).transpose(0, 3, 1, 2)
    # non-overlapping pool windows; trailing rows/cols beyond ph*p are dropped
    wins = zmap[:, :, :ph * p, :pw * p].reshape(n, conv.out_channels, ph, p, pw, p)
    wins = wins.transpose(0, 1, 2, 4, 3, 5).reshape(n, conv.out_channels, ph, pw, p * p)
    amax = np.argmax(wins, axis=-1)
    pooled = np.take_along_axis(wins, amax[..., None], axis=-1)[..., 0]
    out = np.maximum(pooled, 0.0)
    feats = out.reshape(n, -1)
    return feats, (cols, kflat, pooled, amax)


def _conv_backward(conv: ConvFrontend, cache, dfeats):
    """Gradients (d_kernel_flat, d_bias) given d(features)."""
    cols, kflat, pooled, amax = cache
    n = dfeats.shape[0]
    oh, ow = conv.conv_hw
    ph, pw = conv.pooled_hw
    p = conv.pool
    dout = dfeats.reshape(n, conv.out_channels, ph, pw)
    dpool = dout * (pooled > 0.0)
    dwins = np.zeros((n, conv.out_channels, ph, pw, p * p))
    np.put_along_axis(dwins, amax[..., None], dpool[..., None], axis=-1)
    dzmap = np.zeros((n, conv.out_channels, oh, ow))
    dzmap[:, :, :ph * p, :pw * p] = (
        dwins.reshape(n, conv.out_channels, ph, pw, p, p)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, conv.out_channels, ph * p, pw * p)
    )
    dz = dzmap.transpose(0, 2, 3, 1).reshape(n, oh * ow, conv.out_channels)
    dk = np.einsum("npo,npc->oc", dz, cols)
    db = dz.sum(axis=(0, 1))
    return dk.ravel(), db


def forward(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Predictions of shape (batch, output_dim).

    Cross-entropy heads return probabilities (softmax rows sum to 1);
    mse heads return raw linear outputs.
    """
    params = _check_params(spec, params)
    if batch.inputs.shape[1] != spec.input_dim:
        raise ValueError(
            f"batch has {batch.inputs.shape[1]} features, spec expects {spec.input_dim}"
        )
    conv_k, conv_b, layers = _unpack(spec, params)
    h = batch.inputs
    if spec.conv is not None:
        h, _ = _conv_forward(spec.conv, conv_k, conv_b, h)
    for (w, b), (_, act) in zip(layers[:-1], spec.hidden_layers):
        z = h @ w
        if b is not None:
            z = z + b
        h = _activate(act, z)
    w, b = layers[-1]
    z = h @ w
    if b is not None:
        z = z + b
    if spec.loss_kind == "mse":
        return z
    if spec.output_dim == 1:
        return 1.0 / (1.0 + np.exp(-z))
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _mse_targets(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim == 1:
        t = t.reshape(-1, 1)
    if t.shape != predictions.shape:
        raise ValueError(f"targets shape {t.shape} vs predictions {predictions.shape}")
    return t


def loss(spec: ModelSpec, predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean batch loss (non-negative scalar).

    mse: per-sample squared error summed over outputs, averaged over the
    batch. cross-entropy: negative log-likelihood of the true class,
    probabilities clamped to [1e-12, 1-1e-12] before the log.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    if spec.loss_kind == "mse":
        t = _mse_targets(predictions, targets)
        return float(np.mean(np.sum((predictions - t) ** 2, axis=1)))
    p = np.clip(predictions, EPS, 1.0 - EPS)
    y = np.asarray(targets)
    if spec.output_dim == 1:
        y = y.reshape(-1).astype(np.float64)
        per = -(y * np.log(p[:, 0]) + (1.0 - y) * np.log(1.0 - p[:, 0]))
    else:
        idx = y.reshape(-1).astype(np.int64)
        if idx.min() < 0 or idx.max() >= spec.output_dim:
            raise ValueError("class label out of range")
        per = -np.log(p[np.arange(p.shape[0]), idx])
    return float(np.mean(per))


def backward(spec: ModelSpec, params: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean batch loss and its exact gradient as a flat vector."""
    params = _check_params(spec, params)
    if batch.inputs.shape[1] != spec.input_dim:
        raise ValueError(
            f"batch has {batch.inputs.shape[1]} features, spec expects {spec.input_dim}"
        )
    conv_k, conv_b, layers = _unpack(spec, params)
    n = len(batch)

    h = batch.inputs
    conv_cache = None
    if spec.conv is not None:
        h, conv_cache = _conv_forward(spec.conv, conv_k, conv_b, h)
    acts = [h]  # inputs to each dense layer
    zs = []
    for (w, b), (_, act) in zip(layers[:-1], spec.hidden_layers):
        z = h @ w
        if b is not None:
            z = z + b
        zs.append(z)
        h = _activate(act, z)
        acts.append(h)
    w, b = layers[-1]
    logits = h @ w
    if b is not None:
        logits = logits + b

    if spec.loss_kind == "mse":
        t = _mse_targets(logits, batch.targets)
        loss_val = float(np.mean(np.sum((logits - t) ** 2, axis=1)))
        dlogits = 2.0 * (logits - t) / n
    elif spec.output_dim == 1:
        p = 1.0 / (1.0 + np.exp(-logits))
        y = np.asarray(batch.targets).reshape(-1, 1).astype(np.float64)
        pc = np.clip(p, EPS, 1.0 - EPS)
        loss_val = float(np.mean(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))))
        dlogits = (p - y) / n
    else:
        zc = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(zc)
        p = e / e.sum(axis=1, keepdims=True)
        idx = np.asarray(batch.targets).reshape(-1).astype(np.int64)
        if idx.min() < 0 or idx.max() >= spec.output_dim:
            raise ValueError("class label out of range")
        pc = np.clip(p[np.arange(n), idx], EPS, 1.0 - EPS)
        loss_val = float(np.mean(-np.log(pc)))
        onehot = np.zeros_like(p)
        onehot[np.arange(n), idx] = 1.0
        dlogits = (p - onehot) / n

    dense_grads: list[tuple[np.ndarray, np.ndarray | None]] = []
    delta = dlogits
    dw = acts[-1].T @ delta
    db = delta.sum(axis=0) if spec.bias else None
    dense_grads.append((dw, db))
    for i in range(len(spec.hidden_layers) - 1, -1, -1):
        w_next = layers[i + 1][0]
        _, act = spec.hidden_layers[i]
        delta = (delta @ w_next.T) * _activate_grad(act, zs[i], acts[i + 1])
        dw = acts[i].T @ delta
        db = delta.sum(axis=0) if spec.bias else None
        dense_grads.append((dw, db))
    dense_grads.reverse()

    pieces = []
    if spec.conv is not None:
        # delta is the gradient at the first dense layer's pre-activation
        # (== dlogits when there are no hidden layers)
        dfeats = delta @ layers[0][0].T
        dk, db_conv = _conv_backward(spec.conv, conv_cache, dfeats)
        pieces.append(dk)
        if spec.bias:
            pieces.append(db_conv)
    for dw, db in dense_grads:
        pieces.append(dw.ravel())
        if db is not None:
            pieces.append(db)
    grad = np.concatenate(pieces)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    return loss_val, grad


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """params - lr * grad, elementwise exact."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ValueError(f"shape mismatch: params {params.shape} vs grad {grad.shape}")
    if not lr > 0:
        raise ValueError("lr must be positive")
    return params - lr * grad


def init_params(spec: ModelSpec, seed) -> np.ndarray:
    """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    pieces = []
    if spec.conv is not None:
        c = spec.conv
        bound = 1.0 / np.sqrt(c.in_channels * c.kernel * c.kernel)
        pieces.append(rng.uniform(-bound, bound, size=c.kernel_params))
        if spec.bias:
            pieces.append(np.zeros(c.out_channels))
    for fan_in, fan_out in spec.dense_dims():
        bound = 1.0 / np.sqrt(fan_in)
        pieces.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        if spec.bias:
            pieces.append(np.zeros(fan_out))
    return np.concatenate(pieces)


def mlp_spec(task: str, hidden: int = 128) -> ModelSpec:
    """Default colored-image MLP: 3*28*28 inputs -> hidden ReLU -> head."""
    out = 1 if task == "binary" else 10
    return ModelSpec(
        input_dim=3 * 28 * 28,
        hidden_layers=((hidden, "relu"),),
        output_dim=out,
        loss_kind="cross-entropy",
    )


def cnn_spec(task: str, hidden: int = 32) -> ModelSpec:
    """Optional minimal CNN: 5x5 conv (8 ch), 2x2 max-pool, dense head."""
    out = 1 if task == "binary" else 10
    return ModelSpec(
        input_dim=3 * 28 * 28,
        hidden_layers=((hidden, "relu"),),
        output_dim=out,
        loss_kind="cross-entropy",
        conv=ConvFrontend(in_channels=3, height=28, width=28),
    )
