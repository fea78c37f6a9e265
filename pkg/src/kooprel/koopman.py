"""Latent linear-dynamics surrogate: encoder, square transition matrix,
decoder, the composite three-part loss, joint training, and multi-step
rollout.

Two variants are supported. `ic_uncertainty` encodes the state alone and
is rolled out from a sampled initial condition. `parameter_uncertainty`
concatenates the (normalized) system parameters to the encoder input and
to every decoder input, so one model covers a family of systems.

All losses are computed in normalized units: states (and parameters) are
shifted/scaled per feature using training-set statistics before they reach
the networks.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dynamics import Trajectory
from .errors import ConfigurationError, TrainingDivergedError

EVAL_CHUNK = 8192  # rows per forward chunk when evaluating epoch losses


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

@dataclass
class NormStats:
    """Per-feature affine transform fitted on training data.

    For vector states the stats have shape (state_dim,); for field states
    (C, n, n) they are per-channel, shape (C, 1, 1). Zero-variance features
    get scale 1 so normalization is a plain shift (passthrough).
    """

    state_mean: np.ndarray
    state_scale: np.ndarray
    param_mean: np.ndarray | None = None
    param_scale: np.ndarray | None = None


def fit_normalization(states, params=None):
    """states: (..., state...) stacked samples; params: (N, k) or None."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim >= 4:  # (..., C, n, n): per-channel stats
        axes = tuple(i for i in range(states.ndim) if i != states.ndim - 3)
        mean = states.mean(axis=axes).reshape(states.shape[-3], 1, 1)
        scale = states.std(axis=axes).reshape(states.shape[-3], 1, 1)
    else:
        flat = states.reshape(-1, states.shape[-1])
        mean = flat.mean(axis=0)
        scale = flat.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    pm = ps = None
    if params is not None:
        params = np.asarray(params, dtype=np.float64)
        pm = params.mean(axis=0)
        ps = params.std(axis=0)
        ps = np.where(ps < 1e-12, 1.0, ps)
    return NormStats(state_mean=mean, state_scale=scale, param_mean=pm, param_scale=ps)


def normalize(model, x):
    """Per-feature affine transform of a state or batch of states."""
    s = model.normalization
    if s is None:
        raise ConfigurationError("model has no normalization stats")
    return (np.asarray(x, dtype=np.float64) - s.state_mean) / s.state_scale


def denormalize(model, x):
    s = model.normalization
    if s is None:
        raise ConfigurationError("model has no normalization stats")
    return np.asarray(x, dtype=np.float64) * s.state_scale + s.state_mean


def _normalize_params(stats, p):
    return (np.asarray(p, dtype=np.float64) - stats.param_mean) / stats.param_scale


# ---------------------------------------------------------------------------
# Model container and architecture builders
# ---------------------------------------------------------------------------

@dataclass
class KoopmanModel:
    variant: str
    encoder_spec: nn.NetworkSpec
    encoder_params: nn.Parameters
    koopman: np.ndarray  # (L, L); latent advances as z_next = z @ koopman.T
    decoder_spec: nn.NetworkSpec
    decoder_params: nn.Parameters
    state_shape: tuple
    latent_dim: int
    param_dim: int
    normalization: NormStats | None = None
    loss_weights: tuple = (1.0, 1.0, 1.0)
    training_config: dict = field(default_factory=dict)

    @property
    def state_dim(self):
        return int(np.prod(self.state_shape))

    @property
    def koopman_matrix(self):
        return self.koopman


@dataclass(frozen=True)
class Architecture:
    """Shape of the encoder/decoder pair.

    Dense variant: `hidden` ReLU layers on both sides of the latent code.
    Conv variant (field states): stride-2 conv stack into a dense tail,
    mirrored by a dense head plus nearest-neighbor-upsampled conv stack.
    """

    state_shape: tuple
    latent_dim: int = 32
    param_dim: int = 0
    hidden: tuple = (64, 64)
    conv: bool = False
    conv_channels: tuple = (8, 16, 32, 64, 64)
    conv_dense: tuple = (128, 128)
    conv_kernel: int = 3

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigurationError("latent_dim must be positive")
        if self.conv and self.param_dim:
            raise ConfigurationError("conv architecture does not take system parameters")
        if self.conv and len(self.state_shape) != 3:
            raise ConfigurationError(f"conv architecture needs (C, n, n) states, got {self.state_shape}")
        if not self.conv and len(self.state_shape) != 1:
            raise ConfigurationError(f"dense architecture needs vector states, got {self.state_shape}")


def _conv_trace(n, k, n_layers):
    """Spatial sizes through the stride-2 conv stack (padding 1)."""
    sizes = [n]
    for _ in range(n_layers):
        sizes.append((sizes[-1] + 2 - k) // 2 + 1)
    return sizes


def build_encoder(arch):
    if not arch.conv:
        in_dim = arch.state_shape[0] + arch.param_dim
        layers = []
        prev = in_dim
        for width in arch.hidden:
            layers += [nn.dense(prev, width), nn.relu()]
            prev = width
        layers.append(nn.dense(prev, arch.latent_dim))
        return nn.network((in_dim,), layers)
    c, n, _ = arch.state_shape
    layers = []
    prev_c = c
    for ch in arch.conv_channels:
        layers += [nn.conv2d(prev_c, ch, arch.conv_kernel, stride=2, padding=1), nn.relu()]
        prev_c = ch
    trace = _conv_trace(n, arch.conv_kernel, len(arch.conv_channels))
    flat = prev_c * trace[-1] * trace[-1]
    layers.append(nn.flatten())
    prev = flat
    for width in arch.conv_dense:
        layers += [nn.dense(prev, width), nn.relu()]
        prev = width
    layers.append(nn.dense(prev, arch.latent_dim))
    return nn.network(arch.state_shape, layers)


def build_decoder(arch):
    in_dim = arch.latent_dim + arch.param_dim
    if not arch.conv:
        layers = []
        prev = in_dim
        for width in reversed(arch.hidden):
            layers += [nn.dense(prev, width), nn.relu()]
            prev = width
        layers.append(nn.dense(prev, arch.state_shape[0]))
        return nn.network((in_dim,), layers)
    trace = _conv_trace(arch.state_shape[1], arch.conv_kernel, len(arch.conv_channels))
    s0 = trace[-1]
    layers = []
    prev = in_dim
    for width in reversed(arch.conv_dense):
        layers += [nn.dense(prev, width), nn.relu()]
        prev = width
    flat = arch.conv_channels[-1] * s0 * s0
    layers += [nn.dense(prev, flat), nn.relu(), nn.reshape((arch.conv_channels[-1], s0, s0))]
    channels = list(reversed((arch.state_shape[0],) + arch.conv_channels))  # e.g. 64,64,32,16,8,2
    factors = [trace[i] // trace[i + 1] for i in range(len(trace) - 1)][::-1]
    for i in range(len(channels) - 1):
        if factors[i] > 1:
            layers.append(nn.upsample2d(factors[i]))
        layers.append(nn.conv2d(channels[i], channels[i + 1], arch.conv_kernel, stride=1, padding=1))
        if i < len(channels) - 2:
            layers.append(nn.relu())
    return nn.network((in_dim,), layers)


def init_model(arch, seed, variant=None):
    """Fresh model with Glorot-uniform weights drawn from the run seed."""
    variant = variant or ("parameter_uncertainty" if arch.param_dim else "ic_uncertainty")
    if variant == "parameter_uncertainty" and arch.param_dim < 1:
        raise ConfigurationError("parameter_uncertainty variant needs param_dim >= 1")
    if variant == "ic_uncertainty" and arch.param_dim:
        raise ConfigurationError("ic_uncertainty variant must have param_dim == 0")
    rng = np.random.default_rng([int(seed), 0x6B6F6F70])
    enc_spec = build_encoder(arch)
    dec_spec = build_decoder(arch)
    limit = np.sqrt(nn.GLOROT_GAIN / (2 * arch.latent_dim))
    koopman = rng.uniform(-limit, limit, size=(arch.latent_dim, arch.latent_dim))
    return KoopmanModel(
        variant=variant,
        encoder_spec=enc_spec,
        encoder_params=nn.init_params(enc_spec, rng),
        koopman=koopman,
        decoder_spec=dec_spec,
        decoder_params=nn.init_params(dec_spec, rng),
        state_shape=tuple(arch.state_shape),
        latent_dim=arch.latent_dim,
        param_dim=arch.param_dim,
    )


# ---------------------------------------------------------------------------
# Encode / advance / decode
# ---------------------------------------------------------------------------

def _check_params_arg(model, params):
    if model.variant == "parameter_uncertainty":
        if params is None:
            raise ConfigurationError("parameter_uncertainty model requires system parameters")
        return True
    if params is not None:
        raise ConfigurationError("ic_uncertainty model does not take system parameters")
    return False


def _encoder_input(model, state_n, params_n):
    if model.param_dim:
        return np.concatenate([state_n, params_n], axis=-1)
    return state_n


def _decoder_input(model, latent, params_n):
    if model.param_dim:
        return np.concatenate([latent, params_n], axis=-1)
    return latent


def encode(model, state, params=None):
    """Lift a state (or batch) to the latent coordinates."""
    wants_params = _check_params_arg(model, params)
    sn = normalize(model, state)
    pn = _normalize_params(model.normalization, params) if wants_params else None
    return nn.forward(model.encoder_spec, model.encoder_params, _encoder_input(model, sn, pn))


def decode(model, latent, params=None):
    """Map latent coordinates back to a state (or batch)."""
    wants_params = _check_params_arg(model, params)
    pn = _normalize_params(model.normalization, params) if wants_params else None
    out = nn.forward(model.decoder_spec, model.decoder_params, _decoder_input(model, latent, pn))
    return denormalize(model, out)


def koopman_advance(model, latent, n):
    """Apply the linear transition n times; n = 0 is the identity."""
    if n < 0:
        raise ConfigurationError(f"step count must be >= 0, got {n}")
    z = np.asarray(latent, dtype=np.float64)
    mt = model.koopman.T
    for _ in range(n):
        z = z @ mt
    return z


# ---------------------------------------------------------------------------
# Composite loss
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0

    def __post_init__(self):
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if any(l < 0 for l in lams) or not any(l > 0 for l in lams):
            raise ConfigurationError("loss weights must be nonnegative with at least one positive")

    def as_tuple(self):
        return (self.lambda1, self.lambda2, self.lambda3)


def _weights_tuple(weights):
    if weights is None:
        return LossWeights().as_tuple()
    if isinstance(weights, LossWeights):
        return weights.as_tuple()
    return tuple(float(v) for v in weights)


def _batch_normalized(model, x_k, x_k1, params):
    wants_params = _check_params_arg(model, params)
    xk = normalize(model, x_k)
    xk1 = normalize(model, x_k1)
    pn = _normalize_params(model.normalization, params) if wants_params else None
    if xk.ndim == len(model.state_shape):
        xk, xk1 = xk[None], xk1[None]
        pn = pn[None] if pn is not None else None
    return xk, xk1, pn


def _loss_forward(model, xk, xk1, pn, weights, keep_cache):
    """Normalized-space forward pass of all three loss paths."""
    enc_s, enc_p = model.encoder_spec, model.encoder_params
    dec_s, dec_p = model.decoder_spec, model.decoder_params
    ek_in = _encoder_input(model, xk, pn)
    ek1_in = _encoder_input(model, xk1, pn)
    zk, c_ek = nn._forward_layers(enc_s, enc_p, ek_in, keep_cache)
    zk1, c_ek1 = nn._forward_layers(enc_s, enc_p, ek1_in, keep_cache)
    kzk = zk @ model.koopman.T
    dk_in = _decoder_input(model, zk, pn)
    dk1_in = _decoder_input(model, zk1, pn)
    dkz_in = _decoder_input(model, kzk, pn)
    rk, c_dk = nn._forward_layers(dec_s, dec_p, dk_in, keep_cache)
    rk1, c_dk1 = nn._forward_layers(dec_s, dec_p, dk1_in, keep_cache)
    pk1, c_dkz = nn._forward_layers(dec_s, dec_p, dkz_in, keep_cache)
    xk_flat = xk.reshape(rk.shape)
    xk1_flat = xk1.reshape(rk1.shape)
    l1 = 0.5 * (nn.mse(rk, xk_flat) + nn.mse(rk1, xk1_flat))
    l2 = nn.mse(zk1, kzk)
    l3 = nn.mse(pk1, xk1_flat)
    l = weights[0] * l1 + weights[1] * l2 + weights[2] * l3
    values = (l, l1, l2, l3)
    tensors = (zk, zk1, kzk, rk, rk1, pk1, xk_flat, xk1_flat)
    caches = (c_ek, c_ek1, c_dk, c_dk1, c_dkz)
    return values, tensors, caches


def _split_decoder_input_grad(model, g):
    if model.param_dim:
        return g[:, :model.latent_dim]
    return g


def _loss_and_grads(model, xk, xk1, pn, weights):
    """Loss values plus gradients w.r.t. encoder, transition matrix, decoder."""
    values, tensors, caches = _loss_forward(model, xk, xk1, pn, weights, keep_cache=True)
    zk, zk1, kzk, rk, rk1, pk1, xk_flat, xk1_flat = tensors
    c_ek, c_ek1, c_dk, c_dk1, c_dkz = caches
    lam1, lam2, lam3 = weights

    g_enc = nn.zeros_params(model.encoder_spec)
    g_dec = nn.zeros_params(model.decoder_spec)

    g_rk = (0.5 * lam1) * nn.mse_grad(rk, xk_flat)
    g_rk1 = (0.5 * lam1) * nn.mse_grad(rk1, xk1_flat)
    g_pk1 = lam3 * nn.mse_grad(pk1, xk1_flat)

    gz_k = _split_decoder_input_grad(
        model, nn._backward_layers(model.decoder_spec, model.decoder_params, c_dk, g_rk, g_dec))
    gz_k1 = _split_decoder_input_grad(
        model, nn._backward_layers(model.decoder_spec, model.decoder_params, c_dk1, g_rk1, g_dec))
    g_kz = _split_decoder_input_grad(
        model, nn._backward_layers(model.decoder_spec, model.decoder_params, c_dkz, g_pk1, g_dec))

    d2 = zk1 - kzk
    scale2 = lam2 * 2.0 / d2.size
    gz_k1 = gz_k1 + scale2 * d2
    g_kz = g_kz - scale2 * d2

    g_m = g_kz.T @ zk  # kzk = zk @ M.T  =>  dL/dM = g_kz^T zk
    gz_k = gz_k + g_kz @ model.koopman

    nn._backward_layers(model.encoder_spec, model.encoder_params, c_ek, gz_k, g_enc)
    nn._backward_layers(model.encoder_spec, model.encoder_params, c_ek1, gz_k1, g_enc)
    return values, (g_enc, g_m, g_dec)


def composite_loss(model, batch, weights=None):
    """(L, L1, L2, L3) on a batch of (X_k, X_{k+1}[, params]) in normalized units.

    L1 is the reconstruction error averaged over both pair members, L2 the
    latent linearity error, L3 the one-step prediction error.
    """
    x_k, x_k1 = batch[0], batch[1]
    params = batch[2] if len(batch) > 2 else None
    w = _weights_tuple(weights)
    xk, xk1, pn = _batch_normalized(model, x_k, x_k1, params)
    values, _, _ = _loss_forward(model, xk, xk1, pn, w, keep_cache=False)
    return values


def composite_loss_grads(model, batch, weights=None):
    """As `composite_loss`, also returning (enc_grads, matrix_grad, dec_grads)."""
    x_k, x_k1 = batch[0], batch[1]
    params = batch[2] if len(batch) > 2 else None
    w = _weights_tuple(weights)
    xk, xk1, pn = _batch_normalized(model, x_k, x_k1, params)
    return _loss_and_grads(model, xk, xk1, pn, w)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainSettings:
    epochs: int
    lr: float = 1e-5
    batch_size: int = 256
    optimizer: str = "adam"
    seed: int = 0
    val_fraction: float = 0.1
    keep_best: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0 or self.batch_size < 1:
            raise ConfigurationError("epochs, lr, and batch_size must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    """Per-epoch loss totals on the training and validation splits."""

    train: dict = field(default_factory=lambda: {"L": [], "L1": [], "L2": [], "L3": []})
    val: dict = field(default_factory=lambda: {"L": [], "L1": [], "L2": [], "L3": []})
    epochs_run: int = 0
    best_epoch: int = -1
    final_val_loss: float = float("nan")
    seed: int = 0
    epoch_offset: int = 0  # nonzero when resuming from a checkpoint


def build_pairs(dataset, stats, param_mode):
    """Pooled, normalized one-step pairs (X_k, X_{k+1}) across all series."""
    states = (dataset.states - stats.state_mean) / stats.state_scale
    n_series, n_rows = states.shape[0], states.shape[1]
    shape = states.shape[2:]
    xk = states[:, :-1].reshape((-1,) + shape)
    xk1 = states[:, 1:].reshape((-1,) + shape)
    pn = None
    if param_mode:
        p = (dataset.inputs - stats.param_mean) / stats.param_scale
        pn = np.repeat(p, n_rows - 1, axis=0)
    return xk, xk1, pn


def _evaluate_pairs(model, xk, xk1, pn, weights, chunk=EVAL_CHUNK):
    """Exact loss totals over a pair set, evaluated in chunks."""
    n = xk.shape[0]
    sums = np.zeros(3)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        p = pn[lo:hi] if pn is not None else None
        _, l1, l2, l3 = _loss_forward(model, xk[lo:hi], xk1[lo:hi], p, weights,
                                      keep_cache=False)[0]
        sums += (hi - lo) * np.array([l1, l2, l3])
    l1, l2, l3 = sums / n
    l = weights[0] * l1 + weights[1] * l2 + weights[2] * l3
    return float(l), float(l1), float(l2), float(l3)


def _leaf_list(model):
    return model.encoder_params.leaves() + [model.koopman] + model.decoder_params.leaves()


def train(dataset, arch=None, weights=None, settings=None, val_dataset=None,
          init_state=None):
    """Fit encoder, transition matrix, and decoder jointly with Adam.

    Pairs are pooled across series and reshuffled every epoch from the run
    seed, so equal seeds give identical reports. If `val_dataset` is None
    the trailing `val_fraction` of the series becomes the validation split.
    The returned model carries the best-validation parameters when
    `keep_best` is set. `init_state` resumes a previous run: a dict with
    "model", "adam", and "epoch_offset" (see store.load_model).
    """
    if settings is None:
        raise ConfigurationError("train() needs TrainSettings")
    weights = weights or LossWeights()
    w = weights.as_tuple()
    param_mode = dataset.mode == "parameter_uncertainty"

    if val_dataset is None:
        n_val = max(1, int(round(dataset.n_series * settings.val_fraction)))
        if n_val >= dataset.n_series:
            raise ConfigurationError("dataset too small to split a validation set")
        val_dataset = dataclasses.replace(dataset, states=dataset.states[-n_val:],
                                          inputs=dataset.inputs[-n_val:])
        dataset = dataclasses.replace(dataset, states=dataset.states[:-n_val],
                                      inputs=dataset.inputs[:-n_val])

    if init_state is not None:
        model = init_state["model"]
        stats = model.normalization
    else:
        stats = fit_normalization(dataset.states,
                                  dataset.inputs if param_mode else None)
        if arch is None:
            raise ConfigurationError("train() needs an Architecture for a fresh model")
        model = init_model(arch, settings.seed)
        model.normalization = stats
    model.loss_weights = w

    xk, xk1, pn = build_pairs(dataset, stats, param_mode)
    vxk, vxk1, vpn = build_pairs(val_dataset, stats, param_mode)
    n_pairs = xk.shape[0]

    leaves = _leaf_list(model)
    if init_state is not None and init_state.get("adam") is not None:
        adam = nn.adam_state_from_dict(init_state["adam"], leaves)
        adam.lr = settings.lr
    else:
        adam = nn.AdamState(leaves, lr=settings.lr)
    epoch_offset = int(init_state.get("epoch_offset", 0)) if init_state else 0

    report = TrainReport(seed=settings.seed, epoch_offset=epoch_offset)
    best_val = np.inf
    best_leaves = None

    for epoch in range(settings.epochs):
        order = np.random.default_rng([settings.seed, 7919, epoch_offset + epoch]).permutation(n_pairs)
        for lo in range(0, n_pairs, settings.batch_size):
            idx = order[lo:lo + settings.batch_size]
            p = pn[idx] if pn is not None else None
            (loss, _, _, _), grads = _loss_and_grads(model, xk[idx], xk1[idx], p, w)
            if not np.isfinite(loss):
                report.epochs_run = epoch
                raise TrainingDivergedError(
                    f"loss became non-finite in epoch {epoch_offset + epoch}", report=report)
            g_leaves = grads[0].leaves() + [grads[1]] + grads[2].leaves()
            if settings.optimizer == "adam":
                nn.adam_step(leaves, g_leaves, adam)
            else:
                nn.sgd_step(leaves, g_leaves, settings.lr)
        tr = _evaluate_pairs(model, xk, xk1, pn, w)
        va = _evaluate_pairs(model, vxk, vxk1, vpn, w)
        for key, t, v in zip(("L", "L1", "L2", "L3"), tr, va):
            report.train[key].append(t)
            report.val[key].append(v)
        if va[0] < best_val:
            best_val = va[0]
            best_leaves = [a.copy() for a in leaves]
            report.best_epoch = epoch_offset + epoch
    report.epochs_run = settings.epochs
    report.final_val_loss = report.val["L"][-1]

    if settings.keep_best and best_leaves is not None:
        for a, b in zip(leaves, best_leaves):
            a[:] = b
    model.training_config = {
        "epochs": settings.epochs, "lr": settings.lr, "batch_size": settings.batch_size,
        "optimizer": settings.optimizer, "seed": settings.seed,
        "epochs_completed": epoch_offset + settings.epochs,
        "adam": nn.adam_state_to_dict(adam) if settings.optimizer == "adam" else None,
    }
    return model, report


def grid_search_lambdas(dataset, arch, settings, grid=(0.1, 1.0, 10.0), val_dataset=None):
    """Small validation-driven sweep over the three loss multipliers.

    Trains one short run per combination and returns (best LossWeights,
    list of (weights, validation L3)). Not needed for the default runs;
    provided for tuning.
    """
    results = []
    best = None
    for l1 in grid:
        for l2 in grid:
            for l3 in grid:
                try:
                    w = LossWeights(l1, l2, l3)
                except ConfigurationError:
                    continue
                _, rep = train(dataset, arch=arch, weights=w, settings=settings,
                               val_dataset=val_dataset)
                score = rep.val["L3"][-1]
                results.append((w, score))
                if best is None or score < best[1]:
                    best = (w, score)
    return best[0], results


# ---------------------------------------------------------------------------
# Rollout
# ---------------------------------------------------------------------------

def rollout_batch(model, initial_states, params=None, n_steps=1, mode="latent"):
    """Multi-step prediction for a batch of initial conditions.

    latent mode decodes K^k z_0 at every step (one encode); re_encode mode
    feeds each decoded state back through the encoder. Returns (states,
    truncated) where states is (B, n_steps+1, state...) with row 0 equal to
    the initial states, and truncated holds the first non-finite step per
    sample (-1 where the rollout stayed finite; later rows repeat the last
    finite state).
    """
    if n_steps < 1:
        raise ConfigurationError(f"rollout needs n_steps >= 1, got {n_steps}")
    if mode not in ("latent", "re_encode"):
        raise ConfigurationError(f"unknown rollout mode {mode!r}")
    wants_params = _check_params_arg(model, params)
    x0 = np.asarray(initial_states, dtype=np.float64)
    single = x0.shape == tuple(model.state_shape)
    if single:
        x0 = x0[None]
        if params is not None:
            params = np.asarray(params, dtype=np.float64)[None]
    b = x0.shape[0]
    pn = _normalize_params(model.normalization, params) if wants_params else None

    out = np.empty((b, n_steps + 1) + tuple(model.state_shape))
    out[:, 0] = x0
    truncated = np.full(b, -1, dtype=int)
    alive = np.ones(b, dtype=bool)

    sn = normalize(model, x0)
    z = nn.forward(model.encoder_spec, model.encoder_params,
                   _encoder_input(model, sn, pn))
    mt = model.koopman.T
    for k in range(1, n_steps + 1):
        z = z @ mt
        flat = nn.forward(model.decoder_spec, model.decoder_params,
                          _decoder_input(model, z, pn)) \
            if np.all(np.isfinite(z)) else np.full((b,) + model.decoder_spec.output_shape, np.nan)
        xn = flat.reshape((b,) + tuple(model.state_shape))
        ok = np.isfinite(xn).reshape(b, -1).all(axis=1)
        newly_dead = alive & ~ok
        truncated[newly_dead] = k
        alive &= ok
        xn = np.where(ok.reshape((b,) + (1,) * len(model.state_shape)), xn,
                      normalize(model, out[:, k - 1]))
        out[:, k] = denormalize(model, xn)
        if mode == "re_encode":
            z = nn.forward(model.encoder_spec, model.encoder_params,
                           _encoder_input(model, xn, pn))
    if single:
        return out[0], int(truncated[0])
    return out, truncated


def rollout(model, initial_state, params=None, n_steps=1, mode="latent", dt=1.0, t0=0.0):
    """Single-trajectory rollout wrapped in a Trajectory."""
    states, truncated = rollout_batch(model, initial_state, params=params,
                                      n_steps=n_steps, mode=mode)
    times = t0 + dt * np.arange(n_steps + 1)
    return Trajectory(times=times, states=states,
                      provenance={"surrogate": model.variant, "mode": mode},
                      truncated_at=None if truncated < 0 else int(truncated))
