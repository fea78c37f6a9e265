"""Minimal feed-forward network core: dense and 2-D convolution layers,
ReLU, analytic backpropagation, mean-squared-error loss, and Adam/SGD.

Everything runs in float64 on plain numpy arrays. Networks are described
by immutable specs; weights live in a `Parameters` container (one dict of
arrays per layer). `forward` and `backward` are pure functions of their
inputs, so trained parameters can be shared read-only across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError

GLOROT_GAIN = 6.0  # uniform init limit is sqrt(6 / (fan_in + fan_out))

LAYER_KINDS = ("dense", "conv2d", "relu", "flatten", "reshape", "upsample2d")


# ---------------------------------------------------------------------------
# Layer and network specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """One layer of a feed-forward network.

    Only the fields relevant to `kind` are meaningful; use the factory
    helpers (`dense`, `conv2d`, ...) instead of building this directly.
    """

    kind: str
    in_dim: int | None = None
    out_dim: int | None = None
    bias: bool = True
    in_channels: int | None = None
    out_channels: int | None = None
    kernel_size: int | None = None
    stride: int = 1
    padding: int = 0
    target: tuple | None = None
    factor: int | None = None


def dense(in_dim, out_dim, bias=True):
    if in_dim < 1 or out_dim < 1:
        raise ConfigurationError(f"dense layer dims must be positive, got {in_dim}->{out_dim}")
    return LayerSpec("dense", in_dim=int(in_dim), out_dim=int(out_dim), bias=bool(bias))


def conv2d(in_channels, out_channels, kernel_size, stride=1, padding=0, bias=True):
    if kernel_size < 1:
        raise ConfigurationError(f"conv2d kernel_size must be >= 1, got {kernel_size}")
    if stride < 1:
        raise ConfigurationError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigurationError(f"conv2d padding must be >= 0, got {padding}")
    return LayerSpec(
        "conv2d",
        in_channels=int(in_channels),
        out_channels=int(out_channels),
        kernel_size=int(kernel_size),
        stride=int(stride),
        padding=int(padding),
        bias=bool(bias),
    )


def relu():
    return LayerSpec("relu")


def flatten():
    return LayerSpec("flatten")


def reshape(target):
    return LayerSpec("reshape", target=tuple(int(d) for d in target))


def upsample2d(factor):
    if factor < 1:
        raise ConfigurationError(f"upsample2d factor must be >= 1, got {factor}")
    return LayerSpec("upsample2d", factor=int(factor))


def _layer_output_shape(layer, shape, index):
    """Shape propagation for one layer; raises naming the offending layer."""
    where = f"layer {index} ({layer.kind})"
    if layer.kind == "dense":
        if shape != (layer.in_dim,):
            raise ConfigurationError(f"{where}: expected input shape ({layer.in_dim},), got {shape}")
        return (layer.out_dim,)
    if layer.kind == "relu":
        return shape
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    if layer.kind == "reshape":
        if int(np.prod(shape)) != int(np.prod(layer.target)):
            raise ConfigurationError(f"{where}: cannot reshape {shape} to {layer.target}")
        return layer.target
    if layer.kind == "conv2d":
        if len(shape) != 3 or shape[0] != layer.in_channels:
            raise ConfigurationError(
                f"{where}: expected input (C={layer.in_channels}, H, W), got {shape}")
        k, s, p = layer.kernel_size, layer.stride, layer.padding
        h_out = (shape[1] + 2 * p - k) // s + 1
        w_out = (shape[2] + 2 * p - k) // s + 1
        if h_out < 1 or w_out < 1:
            raise ConfigurationError(f"{where}: kernel {k} does not fit input {shape}")
        return (layer.out_channels, h_out, w_out)
    if layer.kind == "upsample2d":
        if len(shape) != 3:
            raise ConfigurationError(f"{where}: expected input (C, H, W), got {shape}")
        return (shape[0], shape[1] * layer.factor, shape[2] * layer.factor)
    raise ConfigurationError(f"{where}: unknown layer kind {layer.kind!r}")


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layers plus the validated input/output shapes."""

    layers: tuple
    input_shape: tuple
    output_shape: tuple


def network(input_shape, layers):
    """Build a NetworkSpec, propagating shapes through every layer."""
    shape = tuple(int(d) for d in input_shape)
    if any(d < 1 for d in shape):
        raise ConfigurationError(f"input shape must be positive, got {shape}")
    layers = tuple(layers)
    current = shape
    for i, layer in enumerate(layers):
        current = _layer_output_shape(layer, current, i)
    return NetworkSpec(layers=layers, input_shape=shape, output_shape=current)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

class Parameters:
    """Per-layer weight arrays for one NetworkSpec.

    `layers[i]` is a dict with keys among {"w", "b"}; parameter-free layers
    get an empty dict. Leaf order is deterministic (layer order, "w" before
    "b"), which the optimizer relies on.
    """

    __slots__ = ("layers",)

    def __init__(self, layers):
        self.layers = layers

    def leaves(self):
        return [arr for layer in self.layers for arr in layer.values()]

    @property
    def total_count(self):
        return int(sum(arr.size for arr in self.leaves()))

    def copy(self):
        return Parameters([{k: v.copy() for k, v in layer.items()} for layer in self.layers])


def _layer_param_shapes(layer):
    if layer.kind == "dense":
        shapes = {"w": (layer.in_dim, layer.out_dim)}
        if layer.bias:
            shapes["b"] = (layer.out_dim,)
        return shapes
    if layer.kind == "conv2d":
        k = layer.kernel_size
        shapes = {"w": (layer.out_channels, layer.in_channels, k, k)}
        if layer.bias:
            shapes["b"] = (layer.out_channels,)
        return shapes
    return {}


def init_params(spec, rng):
    """Glorot-style uniform weights, zero biases, from the given Generator."""
    layers = []
    for layer in spec.layers:
        arrs = {}
        for name, shape in _layer_param_shapes(layer).items():
            if name == "b":
                arrs[name] = np.zeros(shape)
            else:
                if layer.kind == "dense":
                    fan_in, fan_out = layer.in_dim, layer.out_dim
                else:
                    k2 = layer.kernel_size ** 2
                    fan_in, fan_out = layer.in_channels * k2, layer.out_channels * k2
                limit = np.sqrt(GLOROT_GAIN / (fan_in + fan_out))
                arrs[name] = rng.uniform(-limit, limit, size=shape)
        layers.append(arrs)
    return Parameters(layers)


def zeros_params(spec):
    layers = []
    for layer in spec.layers:
        layers.append({name: np.zeros(shape) for name, shape in _layer_param_shapes(layer).items()})
    return Parameters(layers)


def check_params(spec, params):
    """Raise unless the parameter shapes match the spec."""
    if len(params.layers) != len(spec.layers):
        raise ConfigurationError(
            f"parameter container has {len(params.layers)} layers, spec has {len(spec.layers)}")
    for i, (layer, arrs) in enumerate(zip(spec.layers, params.layers)):
        expected = _layer_param_shapes(layer)
        if set(arrs) != set(expected):
            raise ConfigurationError(f"layer {i} ({layer.kind}): parameter names {set(arrs)} != {set(expected)}")
        for name, shape in expected.items():
            if arrs[name].shape != shape:
                raise ConfigurationError(
                    f"layer {i} ({layer.kind}): parameter {name} has shape {arrs[name].shape}, expected {shape}")


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _im2col(x, k, s, p):
    """(B, C, H, W) -> patches (B, C*k*k, Ho*Wo) plus the output geometry."""
    b, c, h, w = x.shape
    if p > 0:
        xp = np.zeros((b, c, h + 2 * p, w + 2 * p))
        xp[:, :, p:p + h, p:p + w] = x
    else:
        xp = x
    ho = (xp.shape[2] - k) // s + 1
    wo = (xp.shape[3] - k) // s + 1
    cols = np.empty((b, c, k, k, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + s * ho:s, j:j + s * wo:s]
    return cols.reshape(b, c * k * k, ho * wo), (ho, wo)


def _col2im(cols, x_shape, k, s, p, ho, wo):
    """Adjoint of `_im2col`: scatter-add patches back onto the input grid."""
    b, c, h, w = x_shape
    xp = np.zeros((b, c, h + 2 * p, w + 2 * p))
    cols = cols.reshape(b, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + s * ho:s, j:j + s * wo:s] += cols[:, :, i, j]
    if p > 0:
        return xp[:, :, p:p + h, p:p + w]
    return xp


def _forward_layers(spec, params, x, keep_cache):
    """Batched forward pass; x has a leading batch axis. Returns (y, caches)."""
    caches = [] if keep_cache else None
    b = x.shape[0]
    for layer, arrs in zip(spec.layers, params.layers):
        if layer.kind == "dense":
            if keep_cache:
                caches.append(x)
            x = x @ arrs["w"]
            if layer.bias:
                x = x + arrs["b"]
        elif layer.kind == "relu":
            if keep_cache:
                caches.append(x)
            x = np.maximum(x, 0.0)
        elif layer.kind == "flatten":
            if keep_cache:
                caches.append(x.shape)
            x = x.reshape(b, -1)
        elif layer.kind == "reshape":
            if keep_cache:
                caches.append(x.shape)
            x = x.reshape((b,) + layer.target)
        elif layer.kind == "conv2d":
            cols, (ho, wo) = _im2col(x, layer.kernel_size, layer.stride, layer.padding)
            if keep_cache:
                caches.append((x.shape, cols, ho, wo))
            w_mat = arrs["w"].reshape(layer.out_channels, -1)
            out = np.matmul(w_mat, cols)  # (B, C_out, Ho*Wo)
            if layer.bias:
                out = out + arrs["b"][:, None]
            x = out.reshape(b, layer.out_channels, ho, wo)
        elif layer.kind == "upsample2d":
            if keep_cache:
                caches.append(x.shape)
            f = layer.factor
            x = np.repeat(np.repeat(x, f, axis=2), f, axis=3)
        else:  # pragma: no cover - specs are validated at construction
            raise ConfigurationError(f"unknown layer kind {layer.kind!r}")
    return x, caches


def _backward_layers(spec, params, caches, grad, grads_out):
    """Backpropagate `grad` through cached activations.

    Parameter gradients are accumulated (+=) into `grads_out`, so the same
    container can collect contributions from several loss paths. Returns
    the gradient w.r.t. the network input.
    """
    b = grad.shape[0]
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        arrs = params.layers[i]
        garrs = grads_out.layers[i]
        cache = caches[i]
        if layer.kind == "dense":
            garrs["w"] += cache.T @ grad
            if layer.bias:
                garrs["b"] += grad.sum(axis=0)
            grad = grad @ arrs["w"].T
        elif layer.kind == "relu":
            grad = grad * (cache > 0)  # subgradient at exactly 0 is 0
        elif layer.kind in ("flatten", "reshape"):
            grad = grad.reshape(cache)
        elif layer.kind == "conv2d":
            x_shape, cols, ho, wo = cache
            g_flat = grad.reshape(b, layer.out_channels, ho * wo)
            gw = np.matmul(g_flat, cols.transpose(0, 2, 1)).sum(axis=0)
            garrs["w"] += gw.reshape(arrs["w"].shape)
            if layer.bias:
                garrs["b"] += g_flat.sum(axis=(0, 2))
            w_mat = arrs["w"].reshape(layer.out_channels, -1)
            gcols = np.matmul(w_mat.T, g_flat)
            grad = _col2im(gcols, x_shape, layer.kernel_size, layer.stride,
                           layer.padding, ho, wo)
        elif layer.kind == "upsample2d":
            f = layer.factor
            c, h, w = cache[1], cache[2], cache[3]
            grad = grad.reshape(b, c, h, f, w, f).sum(axis=(3, 5))
    return grad


def _canon_input(spec, x, what="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == spec.input_shape:
        return False, x[None]
    if x.shape[1:] == spec.input_shape:
        return True, x
    raise ConfigurationError(
        f"{what} shape {x.shape} does not match network input shape {spec.input_shape}")


def forward(spec, params, x):
    """Evaluate the network on `x` (single input or batch with leading axis).

    Deterministic for fixed parameters; raises NumericError if the output
    contains non-finite values.
    """
    check_params(spec, params)
    batched, xb = _canon_input(spec, x)
    y, _ = _forward_layers(spec, params, xb, keep_cache=False)
    if not np.all(np.isfinite(y)):
        raise NumericError("network forward pass produced non-finite values")
    return y if batched else y[0]


def backward(spec, params, x, upstream_grad):
    """Analytic gradients of `sum(upstream_grad * forward(x))`.

    Returns (param_grads, input_grad); `param_grads` is Parameters-shaped.
    """
    check_params(spec, params)
    batched, xb = _canon_input(spec, x)
    g = np.asarray(upstream_grad, dtype=np.float64)
    gb = g[None] if not batched else g
    if gb.shape[1:] != spec.output_shape or gb.shape[0] != xb.shape[0]:
        raise ConfigurationError(
            f"upstream gradient shape {g.shape} does not match output shape {spec.output_shape}")
    _, caches = _forward_layers(spec, params, xb, keep_cache=True)
    grads = zeros_params(spec)
    gx = _backward_layers(spec, params, caches, gb, grads)
    return grads, (gx if batched else gx[0])


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def mse(prediction, target):
    """Mean over all elements of the squared difference."""
    p = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ConfigurationError(f"mse shape mismatch: {p.shape} vs {t.shape}")
    d = p - t
    return float(np.mean(d * d))


def mse_grad(prediction, target):
    """Gradient of `mse` w.r.t. the prediction."""
    d = prediction - target
    return (2.0 / d.size) * d


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class AdamState:
    """Adam moment accumulators over a fixed list of parameter leaves."""

    __slots__ = ("m", "v", "step", "lr", "beta1", "beta2", "eps")

    def __init__(self, leaves, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.m = [np.zeros_like(a) for a in leaves]
        self.v = [np.zeros_like(a) for a in leaves]
        self.step = 0
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)


def _as_leaves(params):
    if isinstance(params, Parameters):
        return params.leaves()
    if isinstance(params, np.ndarray):
        return [params]
    return list(params)


def adam_step(params, grads, state):
    """One Adam update with bias correction. Mutates `params` and `state`.

    Returns (params, state) for convenience.
    """
    leaves = _as_leaves(params)
    gleaves = _as_leaves(grads)
    if len(leaves) != len(state.m) or len(leaves) != len(gleaves):
        raise ConfigurationError("adam_step: parameter/gradient/state leaf counts differ")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    scale = state.lr / c1
    for a, g, m, v in zip(leaves, gleaves, state.m, state.v):
        if a.shape != g.shape:
            raise ConfigurationError(f"adam_step: gradient shape {g.shape} != parameter shape {a.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        a -= scale * m / (np.sqrt(v / c2) + state.eps)
    return params, state


def sgd_step(params, grads, lr):
    """Plain gradient-descent update. Mutates `params`."""
    for a, g in zip(_as_leaves(params), _as_leaves(grads)):
        a -= lr * g
    return params


# ---------------------------------------------------------------------------
# Spec / parameter (de)serialization helpers
# ---------------------------------------------------------------------------

def spec_to_dict(spec):
    layers = []
    for layer in spec.layers:
        d = {"kind": layer.kind}
        if layer.kind == "dense":
            d.update(in_dim=layer.in_dim, out_dim=layer.out_dim, bias=layer.bias)
        elif layer.kind == "conv2d":
            d.update(in_channels=layer.in_channels, out_channels=layer.out_channels,
                     kernel_size=layer.kernel_size, stride=layer.stride,
                     padding=layer.padding, bias=layer.bias)
        elif layer.kind == "reshape":
            d.update(target=list(layer.target))
        elif layer.kind == "upsample2d":
            d.update(factor=layer.factor)
        layers.append(d)
    return {"input_shape": list(spec.input_shape), "layers": layers}


def spec_from_dict(data):
    built = []
    for d in data["layers"]:
        kind = d["kind"]
        if kind == "dense":
            built.append(dense(d["in_dim"], d["out_dim"], d.get("bias", True)))
        elif kind == "conv2d":
            built.append(conv2d(d["in_channels"], d["out_channels"], d["kernel_size"],
                                d.get("stride", 1), d.get("padding", 0), d.get("bias", True)))
        elif kind == "relu":
            built.append(relu())
        elif kind == "flatten":
            built.append(flatten())
        elif kind == "reshape":
            built.append(reshape(d["target"]))
        elif kind == "upsample2d":
            built.append(upsample2d(d["factor"]))
        else:
            raise ConfigurationError(f"unknown layer kind {kind!r} in stored spec")
    return network(data["input_shape"], built)


def params_to_dict(params):
    """Flat row-major float lists per layer; json round-trips them bit-exactly."""
    return [{name: arr.ravel().tolist() for name, arr in layer.items()}
            for layer in params.layers]


def params_from_dict(spec, data):
    if len(data) != len(spec.layers):
        raise ConfigurationError("stored parameters do not match spec layer count")
    layers = []
    for i, layer in enumerate(spec.layers):
        expected = _layer_param_shapes(layer)
        stored = data[i]
        if set(stored) != set(expected):
            raise ConfigurationError(f"layer {i}: stored parameter names {set(stored)} != {set(expected)}")
        arrs = {}
        for name, shape in expected.items():
            flat = np.asarray(stored[name], dtype=np.float64)
            if flat.size != int(np.prod(shape)):
                raise ConfigurationError(
                    f"layer {i}: parameter {name} has {flat.size} values, expected {int(np.prod(shape))}")
            arrs[name] = flat.reshape(shape)
        layers.append(arrs)
    return Parameters(layers)


def adam_state_to_dict(state):
    return {
        "step": state.step,
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "m": [a.ravel().tolist() for a in state.m],
        "v": [a.ravel().tolist() for a in state.v],
    }


def adam_state_from_dict(data, leaves):
    state = AdamState(leaves, lr=data["lr"], beta1=data["beta1"],
                      beta2=data["beta2"], eps=data["eps"])
    state.step = int(data["step"])
    for i, a in enumerate(leaves):
        state.m[i] = np.asarray(data["m"][i], dtype=np.float64).reshape(a.shape)
        state.v[i] = np.asarray(data["v"][i], dtype=np.float64).reshape(a.shape)
    return state
