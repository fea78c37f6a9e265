"""Ground-truth data generation: Duffing and Lorenz ODEs under classical
RK4, an explicit upwind/central solver for the coupled 2-D viscous
convection system on the unit square, and bounded samplers for the
stochastic inputs (random initial conditions or random parameters).

All state arrays are float64. RHS functions and the grid stepper accept a
leading batch axis so Monte-Carlo ensembles integrate vectorized; every
sample still owns an independent RNG stream for its random draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IntegrationError, StabilityError

STABILITY_LIMIT = 0.9  # explicit-step bound: dt*(|u|+|v|)/h + 4*nu*dt/h^2

DUFFING_PARAM_NAMES = ("delta", "alpha", "beta", "gamma")
DUFFING_STATE_NAMES = ("x0", "v0")
LORENZ_PARAM_NAMES = ("sigma", "rho", "beta")
LORENZ_STATE_NAMES = ("x0", "y0", "z0")
BURGERS_INPUT_NAMES = ("alpha",)


def _all_finite(*values):
    return all(np.all(np.isfinite(np.asarray(v, dtype=np.float64))) for v in values)


# ---------------------------------------------------------------------------
# System parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DuffingParams:
    """Forced Duffing oscillator x'' + delta x' + alpha x + beta_d x^3 = gamma cos(omega t).

    Fields may be scalars or arrays broadcastable against a batch of states.
    """

    delta: float | np.ndarray
    alpha: float | np.ndarray
    beta_d: float | np.ndarray
    gamma: float | np.ndarray
    omega: float | np.ndarray

    def __post_init__(self):
        if not _all_finite(self.delta, self.alpha, self.beta_d, self.gamma, self.omega):
            raise ConfigurationError("Duffing parameters must be finite")
        if np.any(np.asarray(self.delta) < 0):
            raise ConfigurationError("Duffing damping delta must be >= 0")


@dataclass(frozen=True)
class LorenzParams:
    sigma: float | np.ndarray
    rho: float | np.ndarray
    beta_l: float | np.ndarray

    def __post_init__(self):
        for name in ("sigma", "rho", "beta_l"):
            v = np.asarray(getattr(self, name))
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ConfigurationError(f"Lorenz parameter {name} must be finite and positive")


def duffing_rhs(state, t, p):
    """d/dt [x, v] for the forced Duffing oscillator; state shape (..., 2)."""
    x = state[..., 0]
    v = state[..., 1]
    dv = p.gamma * np.cos(p.omega * t) - p.delta * v - p.alpha * x - p.beta_d * x ** 3
    return np.stack([v, np.broadcast_to(dv, x.shape)], axis=-1)


def lorenz_rhs(state, p):
    """d/dt [x, y, z] for the Lorenz system; state shape (..., 3)."""
    x, y, z = state[..., 0], state[..., 1], state[..., 2]
    return np.stack([p.sigma * (y - x), x * (p.rho - z) - y, x * y - p.beta_l * z], axis=-1)


def _lorenz_f(state, t, p):
    return lorenz_rhs(state, p)


# ---------------------------------------------------------------------------
# Trajectories and RK4
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Times (strictly increasing with constant step) plus states per step.

    States have shape (T+1, state_dim) for ODE systems or (T+1, 2, n, n)
    for the grid system. `provenance` records which system, which sampled
    inputs, and which seed produced this sample.
    """

    times: np.ndarray
    states: np.ndarray
    provenance: dict = field(default_factory=dict)
    truncated_at: int | None = None

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0


def rk4_path(rhs, initial_state, dt, n_steps, params, t0=0.0):
    """Classical 4th-order Runge-Kutta over a batch; returns (..., T+1, d).

    `initial_state` may be a single state (d,) or a batch (B, d); the rhs
    is evaluated on the whole batch at once.
    """
    if dt <= 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if n_steps < 0:
        raise ConfigurationError(f"n_steps must be >= 0, got {n_steps}")
    y = np.array(initial_state, dtype=np.float64)
    out = np.empty((n_steps + 1,) + y.shape)
    out[0] = y
    t = t0
    half = 0.5 * dt
    for k in range(1, n_steps + 1):
        k1 = rhs(y, t, params)
        k2 = rhs(y + half * k1, t + half, params)
        k3 = rhs(y + half * k2, t + half, params)
        k4 = rhs(y + dt * k3, t + dt, params)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            bad = None
            if y.ndim > 1:
                bad = int(np.argmax(~np.isfinite(y).all(axis=tuple(range(1, y.ndim)))))
            raise IntegrationError(
                f"integration blew up at step {k}" + (f" (sample {bad})" if bad is not None else ""),
                step=k, sample=bad)
        out[k] = y
        t = t0 + k * dt
    if y.ndim > 1:
        return np.moveaxis(out, 0, 1)  # (B, T+1, d)
    return out


def rk4_integrate(rhs, initial_state, dt, n_steps, params, t0=0.0, provenance=None):
    """Integrate one initial state and wrap the result in a Trajectory."""
    states = rk4_path(rhs, initial_state, dt, n_steps, params, t0=t0)
    times = t0 + dt * np.arange(n_steps + 1)
    return Trajectory(times=times, states=states, provenance=provenance or {})


# ---------------------------------------------------------------------------
# 2-D viscous convection system on the unit square
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BurgersConfig:
    """Grid solver settings; the domain is the unit square.

    `alpha_ic` shears the initial fields u = x + alpha*y, v = x - alpha*y.
    The explicit step is checked against STABILITY_LIMIT at construction
    (using the initial-condition velocity bound) and again every step.
    """

    nu: float
    grid_n: int
    alpha_ic: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.nu <= 0:
            raise ConfigurationError(f"viscosity nu must be positive, got {self.nu}")
        if self.grid_n < 8:
            raise ConfigurationError(f"grid_n must be >= 8, got {self.grid_n}")
        if self.dt <= 0 or self.n_steps < 0:
            raise ConfigurationError("dt must be > 0 and n_steps >= 0")
        u0, v0 = burgers_ic(self.grid_n, self.alpha_ic)
        number = stability_number(u0, v0, self.h, self.dt, self.nu)
        if number > STABILITY_LIMIT:
            raise StabilityError(
                f"explicit step unstable: stability number {number:.3f} > {STABILITY_LIMIT} "
                f"(grid_n={self.grid_n}, dt={self.dt})")

    @property
    def h(self):
        return 1.0 / (self.grid_n - 1)


def grid_coordinates(grid_n):
    """x along axis 0, y along axis 1, both in [0, 1]."""
    pts = np.linspace(0.0, 1.0, grid_n)
    return np.meshgrid(pts, pts, indexing="ij")


def burgers_ic(grid_n, alpha):
    """Initial fields u = x + alpha*y, v = x - alpha*y; alpha may be (B,)."""
    x, y = grid_coordinates(grid_n)
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim == 1:
        x, y, a = x[None], y[None], a[:, None, None]
    return x + a * y, x - a * y


def stability_number(u, v, h, dt, nu):
    umax = float(np.max(np.abs(u)))
    vmax = float(np.max(np.abs(v)))
    return dt * (umax + vmax) / h + 4.0 * nu * dt / h ** 2


def burgers_step(u, v, cfg, convection=True):
    """One explicit step: first-order upwind convection plus central
    second-difference diffusion. Boundary rows/columns are untouched, so
    Dirichlet values frozen at the initial trace persist automatically.

    `convection=False` is a test hook that reduces the step to pure
    diffusion. Fields may carry leading batch axes: shape (..., n, n).
    """
    h = cfg.h
    number = stability_number(u, v, h, cfg.dt, cfg.nu)
    if number > STABILITY_LIMIT:
        raise StabilityError(f"stability number {number:.3f} > {STABILITY_LIMIT} during stepping")

    def interior(f):
        return f[..., 1:-1, 1:-1]

    ui = interior(u)
    vi = interior(v)

    def lap(f):
        fi = interior(f)
        return ((f[..., 2:, 1:-1] - 2 * fi + f[..., :-2, 1:-1])
                + (f[..., 1:-1, 2:] - 2 * fi + f[..., 1:-1, :-2])) / h ** 2

    du = cfg.nu * lap(u)
    dv = cfg.nu * lap(v)

    if convection:
        def upwind_x(f, vel):
            back = (interior(f) - f[..., :-2, 1:-1]) / h
            fwd = (f[..., 2:, 1:-1] - interior(f)) / h
            return np.where(vel > 0, vel * back, vel * fwd)

        def upwind_y(f, vel):
            back = (interior(f) - f[..., 1:-1, :-2]) / h
            fwd = (f[..., 1:-1, 2:] - interior(f)) / h
            return np.where(vel > 0, vel * back, vel * fwd)

        du = du - upwind_x(u, ui) - upwind_y(u, vi)
        dv = dv - upwind_x(v, ui) - upwind_y(v, vi)

    u_new = u.copy()
    v_new = v.copy()
    u_new[..., 1:-1, 1:-1] = ui + cfg.dt * du
    v_new[..., 1:-1, 1:-1] = vi + cfg.dt * dv
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
        raise IntegrationError("grid solver produced non-finite fields")
    return u_new, v_new


def burgers_path(cfg, alpha=None, fields=None, convection=True):
    """Solve for `n_steps`; returns states (..., T+1, 2, n, n).

    Either `alpha` (scalar or (B,)) builds the sheared initial condition,
    or explicit `fields=(u0, v0)` are stepped as given.
    """
    if fields is not None:
        u, v = (np.array(f, dtype=np.float64) for f in fields)
    else:
        a = cfg.alpha_ic if alpha is None else alpha
        u, v = burgers_ic(cfg.grid_n, a)
    lead = u.shape[:-2]
    out = np.empty(lead + (cfg.n_steps + 1, 2, cfg.grid_n, cfg.grid_n))
    out[..., 0, 0, :, :] = u
    out[..., 0, 1, :, :] = v
    for k in range(1, cfg.n_steps + 1):
        try:
            u, v = burgers_step(u, v, cfg, convection=convection)
        except IntegrationError as exc:
            raise IntegrationError(f"grid solver failed at step {k}: {exc}", step=k) from exc
        out[..., k, 0, :, :] = u
        out[..., k, 1, :, :] = v
    return out


def burgers_integrate(cfg, alpha=None, provenance=None):
    states = burgers_path(cfg, alpha=alpha)
    times = cfg.dt * np.arange(cfg.n_steps + 1)
    return Trajectory(times=times, states=states, provenance=provenance or {})


# ---------------------------------------------------------------------------
# Bounded input distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Distribution:
    """Bounded scalar distribution on [a, b].

    kinds: uniform, truncated_gaussian (mean at the midpoint, sd = width/6,
    rejection-sampled), truncated_lognormal (shifted to the lower bound so
    supports containing zero or negatives still work; underlying normal has
    its median at the midpoint with +3 sd at the upper bound). A degenerate
    support a == b is treated as a point mass for any kind.
    """

    kind: str
    support: tuple

    def __post_init__(self):
        if self.kind not in ("uniform", "truncated_gaussian", "truncated_lognormal"):
            raise ConfigurationError(f"unknown distribution kind {self.kind!r}")
        a, b = self.support
        if not _all_finite(a, b) or a > b:
            raise ConfigurationError(f"invalid support [{a}, {b}]")
        object.__setattr__(self, "support", (float(a), float(b)))

    @property
    def is_point_mass(self):
        return self.support[0] == self.support[1]


def _rejection(draw, a, b, n, rng, max_rounds=1000):
    out = np.empty(n)
    got = 0
    for _ in range(max_rounds):
        cand = draw(rng, max(n - got, 64))
        keep = cand[(cand >= a) & (cand <= b)]
        take = min(len(keep), n - got)
        out[got:got + take] = keep[:take]
        got += take
        if got == n:
            return out
    raise ConfigurationError(f"rejection sampling on [{a}, {b}] failed to converge")


def sample(dist, n, seed):
    """n i.i.d. draws; reproducible from the seed (or pass a Generator)."""
    if n < 1:
        raise ConfigurationError(f"sample count must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a, b = dist.support
    if dist.is_point_mass:
        return np.full(n, a)
    if dist.kind == "uniform":
        return rng.uniform(a, b, size=n)
    if dist.kind == "truncated_gaussian":
        mean, sd = 0.5 * (a + b), (b - a) / 6.0
        return _rejection(lambda r, m: r.normal(mean, sd, size=m), a, b, n, rng)
    # truncated_lognormal, shifted so the support may include 0 or negatives
    width = b - a
    mu = np.log(0.5 * width)
    sigma = np.log(2.0) / 3.0  # +3 underlying sd reaches the upper bound
    return _rejection(lambda r, m: a + r.lognormal(mu, sigma, size=m), a, b, n, rng)


def draw_inputs(distributions, n, seed):
    """Per-sample draws: sample i uses its own RNG stream spawned from the
    run seed, one value per distribution in order. Returns (n, k).
    """
    dists = list(distributions)
    out = np.empty((n, len(dists)))
    children = np.random.SeedSequence(seed).spawn(n)
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        for j, dist in enumerate(dists):
            out[i, j] = sample(dist, 1, rng)[0]
    return out


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """A batch of trajectories with full provenance.

    `states` is (n_series, n_steps+1, state...) and `inputs` is
    (n_series, k) holding the per-series stochastic draws (initial
    conditions in IC mode, system parameters in parameter mode, or the
    shear parameter for the grid system).
    """

    system: str
    mode: str
    dt: float
    states: np.ndarray
    inputs: np.ndarray
    input_names: tuple
    distributions: tuple
    fixed: dict
    seed: int

    @property
    def n_series(self):
        return self.states.shape[0]

    @property
    def n_steps(self):
        return self.states.shape[1] - 1

    @property
    def times(self):
        return self.dt * np.arange(self.states.shape[1])

    def trajectory(self, i):
        prov = {"system": self.system, "mode": self.mode, "seed": self.seed, "index": int(i),
                "inputs": dict(zip(self.input_names, self.inputs[i].tolist()))}
        return Trajectory(times=self.times, states=self.states[i], provenance=prov)

    def state_shape(self):
        return self.states.shape[2:]


def _duffing_params_from(fixed, columns=None):
    vals = dict(fixed)
    if columns is not None:
        vals.update(columns)
    return DuffingParams(delta=vals["delta"], alpha=vals["alpha"], beta_d=vals["beta"],
                         gamma=vals["gamma"], omega=vals["omega"])


def _lorenz_params_from(fixed, columns=None):
    vals = dict(fixed)
    if columns is not None:
        vals.update(columns)
    return LorenzParams(sigma=vals["sigma"], rho=vals["rho"], beta_l=vals["beta"])


def system_paths(system, mode, inputs, fixed, dt, n_steps):
    """Trajectories for a batch of sampled inputs; shared by dataset
    generation and by the exact Monte-Carlo provider so paired runs see
    identical dynamics. Returns states (B, T+1, state...).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if system == "duffing":
        if mode == "ic_uncertainty":
            y0 = inputs
            params = _duffing_params_from(fixed)
        else:
            cols = dict(zip(DUFFING_PARAM_NAMES, inputs.T))
            params = _duffing_params_from(fixed, cols)
            y0 = np.tile(np.asarray(fixed["ic"], dtype=np.float64), (len(inputs), 1))
        return rk4_path(duffing_rhs, y0, dt, n_steps, params)
    if system == "lorenz":
        if mode == "ic_uncertainty":
            y0 = inputs
            params = _lorenz_params_from(fixed)
        else:
            cols = dict(zip(LORENZ_PARAM_NAMES, inputs.T))
            params = _lorenz_params_from(fixed, cols)
            y0 = np.tile(np.asarray(fixed["ic"], dtype=np.float64), (len(inputs), 1))
        return rk4_path(_lorenz_f, y0, dt, n_steps, params)
    if system == "burgers":
        if mode != "ic_uncertainty":
            raise ConfigurationError("the grid system supports ic_uncertainty mode only")
        # worst-case alpha drives the construction-time stability check
        cfg = BurgersConfig(nu=fixed["nu"], grid_n=int(fixed["grid_n"]),
                            alpha_ic=float(np.max(inputs)), dt=dt, n_steps=n_steps)
        return burgers_path(cfg, alpha=inputs[:, 0])
    raise ConfigurationError(f"unknown system {system!r}")


def generate_dataset(system, mode, distributions, n_series, n_steps, dt, seed, fixed):
    """Sample inputs per series and integrate the true system.

    Deterministic per seed; integration failures are re-raised with the
    offending sample index attached.
    """
    if n_series < 1:
        raise ConfigurationError(f"n_series must be >= 1, got {n_series}")
    names, dists = zip(*distributions.items())
    inputs = draw_inputs(dists, n_series, seed)
    try:
        states = system_paths(system, mode, inputs, fixed, dt, n_steps)
    except IntegrationError as exc:
        raise IntegrationError(f"dataset generation failed: {exc}",
                               step=exc.step, sample=exc.sample) from exc
    return Dataset(system=system, mode=mode, dt=float(dt), states=states, inputs=inputs,
                   input_names=tuple(names), distributions=tuple(dists),
                   fixed=dict(fixed), seed=int(seed))
