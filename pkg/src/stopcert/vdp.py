"""Van der Pol tracking benchmark: plant, finite-horizon controller, datasets.

A forced Van der Pol oscillator (states x1 = position, x2 = velocity,
control u) is steered toward sinusoidal position references by a
finite-horizon tracking controller solved with projected gradient descent
on the control sequence (single shooting, analytic adjoint gradients,
controls clamped to [-u_max, u_max]). Closed-loop episodes from randomized
initial states and references are sampled into (x1, x2, x_ref) -> u pairs,
normalized onto the unit sphere with targets rescaled by one global factor,
which is the form the certificate pipeline consumes.

Everything is vectorized over a batch of independent episodes; batch
element b of every array belongs to episode b.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .net import Dataset


@dataclass(frozen=True)
class VdpState:
    """Oscillator position and velocity."""

    x1: float
    x2: float


@dataclass(frozen=True)
class MpcConfig:
    """Horizon controller and integration settings."""

    horizon: int = 20
    dt: float = 0.05
    q_track: float = 1.0
    r_ctrl: float = 0.1
    u_max: float = 3.0
    opt_iters: int = 60
    opt_step: float = 0.05

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0.0 or self.u_max <= 0.0:
            raise ValueError("horizon, dt and u_max must be positive")
        if self.q_track < 0.0 or self.r_ctrl < 0.0:
            raise ValueError("cost weights must be nonnegative")
        if self.opt_iters < 1 or self.opt_step <= 0.0:
            raise ValueError("opt_iters and opt_step must be positive")


def _rhs(x1, x2, u):
    """Vector field: dx1 = x2, dx2 = (1 - x1^2) x2 - x1 + u."""
    return x2, (1.0 - x1 * x1) * x2 - x1 + u


def _rk4(x1, x2, u, dt):
    """Classical fourth-order step with u held constant over dt."""
    k1a, k1b = _rhs(x1, x2, u)
    k2a, k2b = _rhs(x1 + 0.5 * dt * k1a, x2 + 0.5 * dt * k1b, u)
    k3a, k3b = _rhs(x1 + 0.5 * dt * k2a, x2 + 0.5 * dt * k2b, u)
    k4a, k4b = _rhs(x1 + dt * k3a, x2 + dt * k3b, u)
    nx1 = x1 + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
    nx2 = x2 + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
    return nx1, nx2


def vdp_step(state: VdpState, u: float, dt: float) -> VdpState:
    """Advance the oscillator by one fixed step of size dt."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x1, x2 = _rk4(np.float64(state.x1), np.float64(state.x2), np.float64(u), dt)
    return VdpState(x1=float(x1), x2=float(x2))


def _jac_vjp(x1, x2, d1, d2):
    """Pull (d1, d2) back through the vector-field Jacobian at (x1, x2)."""
    p = -2.0 * x1 * x2 - 1.0  # d(dx2)/dx1
    q = 1.0 - x1 * x1  # d(dx2)/dx2
    return p * d2, d1 + q * d2


def _rollout(x1, x2, u_seq, dt):
    """Forward pass storing states and RK4 stages for the adjoint sweep."""
    H = u_seq.shape[0]
    traj = [(x1, x2)]
    stages = []
    for k in range(H):
        u = u_seq[k]
        k1a, k1b = _rhs(x1, x2, u)
        p1a, p1b = x1 + 0.5 * dt * k1a, x2 + 0.5 * dt * k1b
        k2a, k2b = _rhs(p1a, p1b, u)
        p2a, p2b = x1 + 0.5 * dt * k2a, x2 + 0.5 * dt * k2b
        k3a, k3b = _rhs(p2a, p2b, u)
        p3a, p3b = x1 + dt * k3a, x2 + dt * k3b
        k4a, k4b = _rhs(p3a, p3b, u)
        stages.append(((x1, x2), (p1a, p1b), (p2a, p2b), (p3a, p3b)))
        x1 = x1 + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        x2 = x2 + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        traj.append((x1, x2))
    return traj, stages


def _step_vjp(stage, lam1, lam2, dt):
    """Pull the adjoint (lam1, lam2) back through one stored RK4 step."""
    (s0a, s0b), (p1a, p1b), (p2a, p2b), (p3a, p3b) = stage
    gx1, gx2 = lam1, lam2
    gu = np.zeros_like(lam1)

    d4a, d4b = dt / 6.0 * lam1, dt / 6.0 * lam2
    g3a, g3b = _jac_vjp(p3a, p3b, d4a, d4b)
    gu += d4b
    gx1, gx2 = gx1 + g3a, gx2 + g3b

    d3a, d3b = dt / 3.0 * lam1 + dt * g3a, dt / 3.0 * lam2 + dt * g3b
    g2a, g2b = _jac_vjp(p2a, p2b, d3a, d3b)
    gu += d3b
    gx1, gx2 = gx1 + g2a, gx2 + g2b

    d2a, d2b = dt / 3.0 * lam1 + 0.5 * dt * g2a, dt / 3.0 * lam2 + 0.5 * dt * g2b
    g1a, g1b = _jac_vjp(p1a, p1b, d2a, d2b)
    gu += d2b
    gx1, gx2 = gx1 + g1a, gx2 + g1b

    d1a, d1b = dt / 6.0 * lam1 + 0.5 * dt * g1a, dt / 6.0 * lam2 + 0.5 * dt * g1b
    g0a, g0b = _jac_vjp(s0a, s0b, d1a, d1b)
    gu += d1b
    gx1, gx2 = gx1 + g0a, gx2 + g0b
    return gx1, gx2, gu


def tracking_cost_and_grad(x1, x2, u_seq, x_ref, cfg: MpcConfig):
    """Cost sum_k q (x1_k - x_ref)^2 + r u_{k-1}^2 and its gradient wrt u_seq.

    `x1`, `x2`, `x_ref` are (B,) arrays, `u_seq` is (H, B); the reference is
    held constant over the horizon. Gradients come from one adjoint sweep.
    """
    dt, q, r = cfg.dt, cfg.q_track, cfg.r_ctrl
    traj, stages = _rollout(x1, x2, u_seq, dt)
    H = u_seq.shape[0]

    cost = r * (u_seq**2).sum(axis=0)
    for k in range(1, H + 1):
        cost = cost + q * (traj[k][0] - x_ref) ** 2

    grad = np.empty_like(u_seq)
    lam1 = 2.0 * q * (traj[H][0] - x_ref)
    lam2 = np.zeros_like(lam1)
    for k in range(H - 1, -1, -1):
        gx1, gx2, gu = _step_vjp(stages[k], lam1, lam2, dt)
        grad[k] = 2.0 * r * u_seq[k] + gu
        lam1, lam2 = gx1, gx2
        if k >= 1:
            lam1 = lam1 + 2.0 * q * (traj[k][0] - x_ref)
    return cost, grad


def mpc_solve(x1, x2, x_ref, cfg: MpcConfig, u_init=None):
    """Projected gradient descent on the control sequence for a batch of plants.

    Returns the optimized (H, B) sequence, clamped to [-u_max, u_max].
    """
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    x_ref = np.atleast_1d(np.asarray(x_ref, dtype=float))
    if u_init is None:
        u_seq = np.zeros((cfg.horizon, x1.shape[0]))
    else:
        u_seq = np.clip(np.asarray(u_init, dtype=float).copy(), -cfg.u_max, cfg.u_max)
    for _ in range(cfg.opt_iters):
        cost, grad = tracking_cost_and_grad(x1, x2, u_seq, x_ref, cfg)
        if not np.all(np.isfinite(cost)):
            raise FloatingPointError("controller rollout diverged to non-finite values")
        u_seq = np.clip(u_seq - cfg.opt_step * grad, -cfg.u_max, cfg.u_max)
    return u_seq


def mpc_control(state: VdpState, x_ref: float, cfg: MpcConfig) -> float:
    """First control of the optimized sequence for a single plant state."""
    u_seq = mpc_solve(np.array([state.x1]), np.array([state.x2]), np.array([x_ref]), cfg)
    return float(u_seq[0, 0])


# ---------------------------------------------------------------------------
# episodes and datasets
# ---------------------------------------------------------------------------

X0_RANGE = 2.0  # initial states drawn uniformly from [-2, 2]^2


@dataclass(frozen=True)
class ReferenceMix:
    """Per-episode reference distribution: held setpoints plus sinusoids.

    A fraction `p_const` of episodes holds a constant setpoint of magnitude
    drawn from `const_amp` (random sign); at a held setpoint the plant
    equilibrium needs u = x_ref exactly, which gives the dataset a dominant,
    cleanly labeled input direction. The remaining episodes track sinusoids
    A sin(w t + phase) with A from `sine_amp` and w from `sine_freq`, which
    spread the inputs and keep the kernel spectrum away from rank one. The
    sinusoid bands are chosen so their control demand stays on the same
    scale as the setpoint controls; harder references would dominate the
    single global target-scaling factor and crush every other target.
    """

    p_const: float = 0.8
    const_amp: tuple[float, float] = (0.5, 0.8)
    sine_amp: tuple[float, float] = (0.4, 0.7)
    sine_freq: tuple[float, float] = (0.5, 1.0)


@dataclass(frozen=True)
class RawPool:
    """Closed-loop samples, episode-major: arrays of shape (episodes, steps)."""

    x1: np.ndarray
    x2: np.ndarray
    x_ref: np.ndarray
    u: np.ndarray

    @property
    def episodes(self) -> int:
        return self.x1.shape[0]

    @property
    def steps(self) -> int:
        return self.x1.shape[1]

    def drop_first(self, k: int) -> "RawPool":
        """Discard the first k samples of every episode (capture transients)."""
        return RawPool(
            x1=self.x1[:, k:], x2=self.x2[:, k:], x_ref=self.x_ref[:, k:], u=self.u[:, k:]
        )


def simulate_episodes(
    n_episodes: int,
    steps: int,
    cfg: MpcConfig,
    seed: int,
    mix: ReferenceMix = ReferenceMix(),
) -> RawPool:
    """Run `n_episodes` independent closed-loop episodes of `steps` samples each.

    Initial states are uniform on [-2, 2]^2 and each episode tracks its own
    reference drawn from `mix`. The controller is warm-started with the
    shifted previous sequence, and each recorded row is (x1, x2, x_ref, u)
    at the sample time before the plant is advanced.
    """
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(-X0_RANGE, X0_RANGE, size=n_episodes)
    x2 = rng.uniform(-X0_RANGE, X0_RANGE, size=n_episodes)
    amp_c = rng.uniform(*mix.const_amp, size=n_episodes)
    amp_s = rng.uniform(*mix.sine_amp, size=n_episodes)
    freq = rng.uniform(*mix.sine_freq, size=n_episodes)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n_episodes)
    is_const = rng.random(n_episodes) < mix.p_const
    sign0 = np.where(rng.random(n_episodes) < 0.5, 1.0, -1.0)

    rec_x1 = np.empty((n_episodes, steps))
    rec_x2 = np.empty((n_episodes, steps))
    rec_ref = np.empty((n_episodes, steps))
    rec_u = np.empty((n_episodes, steps))

    u_warm = np.zeros((cfg.horizon, n_episodes))
    for k in range(steps):
        t = k * cfg.dt
        ref_k = np.where(is_const, amp_c * sign0, amp_s * np.sin(freq * t + phase))
        u_seq = mpc_solve(x1, x2, ref_k, cfg, u_init=u_warm)
        rec_x1[:, k] = x1
        rec_x2[:, k] = x2
        rec_ref[:, k] = ref_k
        rec_u[:, k] = u_seq[0]
        x1, x2 = _rk4(x1, x2, u_seq[0], cfg.dt)
        u_warm = np.vstack([u_seq[1:], u_seq[-1:]])  # receding-horizon warm start
    return RawPool(x1=rec_x1, x2=rec_x2, x_ref=rec_ref, u=rec_u)


def _normalize_rows(pool: RawPool, episode_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flatten selected episodes to unit-norm inputs, dropping zero raw inputs."""
    raw = np.stack(
        [
            pool.x1[episode_idx].ravel(),
            pool.x2[episode_idx].ravel(),
            pool.x_ref[episode_idx].ravel(),
        ],
        axis=1,
    )
    u = pool.u[episode_idx].ravel()
    norms = np.linalg.norm(raw, axis=1)
    keep = norms > 0.0
    return raw[keep] / norms[keep, None], u[keep]


def assemble_dataset(
    pool: RawPool,
    n: int,
    n_test: int,
    net_m: int,
    net_mu: float,
    y_cap_frac: float = 0.62,
) -> tuple[Dataset, Dataset, dict]:
    """Build train/test datasets from disjoint episodes of a raw pool.

    The first episodes supply the training rows and the remaining ones the
    test rows. Targets are the controls scaled by one global factor chosen
    so max|y| = y_cap_frac * (m/mu) over everything emitted; the factor is
    returned in the scaling record for de-normalization.
    """
    if not 0.0 < y_cap_frac <= 1.0:
        raise ValueError("y_cap_frac must be in (0, 1]")
    per_ep = pool.steps
    train_eps = math.ceil(n / per_ep)
    while train_eps * per_ep < n + per_ep // 2:  # headroom for discarded rows
        train_eps += 1
    X_train, u_train = _normalize_rows(pool, np.arange(train_eps))
    X_test, u_test = _normalize_rows(pool, np.arange(train_eps, pool.episodes))
    if len(u_train) < n or len(u_test) < n_test:
        raise ValueError(
            f"pool too small: have {len(u_train)}/{len(u_test)} rows, need {n}/{n_test}"
        )
    X_train, u_train = X_train[:n], u_train[:n]
    X_test, u_test = X_test[:n_test], u_test[:n_test]

    u_peak = float(max(np.abs(u_train).max(), np.abs(u_test).max()))
    u_scale = (y_cap_frac * net_m / net_mu) / u_peak if u_peak > 0.0 else 1.0
    scaling = {
        "u_scale": u_scale,
        "u_peak": u_peak,
        "y_cap_frac": y_cap_frac,
        "net_m": net_m,
        "net_mu": net_mu,
        "train_episodes": int(train_eps),
        "test_episodes": int(pool.episodes - train_eps),
        "episode_steps": int(per_ep),
    }
    return (
        Dataset(X=X_train, y=u_train * u_scale),
        Dataset(X=X_test, y=u_test * u_scale),
        scaling,
    )


def generate_dataset(
    n: int,
    n_test: int,
    seed: int,
    cfg: MpcConfig,
    net_m: int,
    net_mu: float,
    episode_steps: int = 128,
    burn_in: int = 88,
    y_cap_frac: float = 0.62,
    mix: ReferenceMix = ReferenceMix(),
) -> tuple[Dataset, Dataset, dict]:
    """Simulate fresh closed-loop episodes and package them as datasets.

    The first `burn_in` samples of every episode are discarded: they hold
    the large saturated controls of the initial capture transient, which
    would otherwise dominate the single global target-scaling factor.
    """
    if n < 1 or n_test < 1:
        raise ValueError("n and n_test must be >= 1")
    if not 0 <= burn_in < episode_steps:
        raise ValueError("burn_in must be in [0, episode_steps)")
    keep = episode_steps - burn_in
    need = math.ceil(n / keep) + math.ceil(n_test / keep) + 2
    pool = simulate_episodes(need, episode_steps, cfg, seed, mix).drop_first(burn_in)
    train, test, scaling = assemble_dataset(pool, n, n_test, net_m, net_mu, y_cap_frac)
    scaling.update({"seed": seed, "burn_in": burn_in, "mpc": asdict(cfg), "mix": asdict(mix)})
    return train, test, scaling
