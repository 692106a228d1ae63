"""One-step early-stopping certificate for shallow-network gradient descent.

The pipeline inspects the network at an anchor time t0 and certifies that a
single gradient step of a specific size makes a computable upper bound on
the population loss decrease. The key scalar is the dimensionless factor

    gamma1 = 4 sqrt(n) M1 |v0|_1 m / ((1+alpha1)^2 lambda1_lo A1^2 mu^2),

where v0 is the initial residual vector, A1 its component along the leading
kernel eigenvector, lambda1_lo a lower envelope of the leading eigenvalue,
and M1 a uniform bound on |f - y| over the data distribution at the times
involved. When gamma1 < 1 - beta/2 the bound

    Omega1 = omega0 + Delta1,   Delta1 < 0,

certifies a decrease after one step of size eta1 = beta / lambda1_lo; the
step fraction beta = 1 - gamma1 maximizes the certified decrease. On top of
Omega1, a two-sided concentration term gives a probability-(1 - delta)
bound on the population loss itself.

Quantities that depend on the post-step state (the rotation angle theta1 of
the leading eigenvector, hence sigma1 and alpha1) are handled in two
phases: the step size is chosen assuming theta1 = 0, the step is taken, and
every derived scalar is then re-issued from measured values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .errors import CertifyRefused
from .net import (
    Dataset,
    NetworkState,
    check_target_bound,
    gd_step,
    predictions,
    training_error,
    weight_max_norm,
)
from .ntk import NtkSnapshot, SpectralBounds, eigvec_rotation, ntk_matrix, spectral_bounds
from .numlin import project_split

# Relative size below which the aligned component A1 counts as zero.
A1_REL_TOL = 1e-9

CERTIFIED = "CERTIFIED"
UNVERIFIED = "UNVERIFIED"
UNRELIABLE = "UNRELIABLE"


# ---------------------------------------------------------------------------
# scalar building blocks
# ---------------------------------------------------------------------------


def phi(m: int, mu: float, n: int) -> float:
    """Complexity coefficient 2m / (mu sqrt(n)) of the generalization term."""
    if m <= 0 or mu <= 0.0 or n <= 0:
        raise ValueError("m, mu and n must be positive")
    return 2.0 * m / (mu * math.sqrt(n))


def m1_conservative(m: int, mu: float, beta: float, lambda1_lo: float, v0_norm1: float) -> float:
    """Worst-case residual bound (m/mu) (1 + (beta/lambda1_lo) |v0|_1 / mu).

    Valid for any input distribution with |y| <= m/mu, but usually far above
    what a sampled estimate gives.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must be in (0, 1)")
    if m <= 0 or mu <= 0.0 or lambda1_lo <= 0.0 or v0_norm1 < 0.0:
        raise ValueError("m, mu, lambda1_lo must be positive and |v0|_1 nonnegative")
    return (m / mu) * (1.0 + (beta / lambda1_lo) * (v0_norm1 / mu))


def _m1_from_draws(
    s0: NetworkState, s1: NetworkState, X: np.ndarray, y: np.ndarray
) -> tuple[float, float]:
    """Max residual over draws and over both states, inflated by the spread."""
    r0 = np.abs(predictions(s0, X) - y)
    r1 = np.abs(predictions(s1, X) - y)
    per_draw = np.maximum(r0, r1)
    spread = float(np.std(per_draw, ddof=1))
    return float(per_draw.max()) + spread, spread / 10.0


def m1_monte_carlo(
    s0: NetworkState,
    s1: NetworkState,
    sampler: Callable[[int, np.random.Generator], tuple[np.ndarray, np.ndarray]],
    n_trials: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Sampled residual bound M1 and its failure probability estimate eps.

    Draws `n_trials` fresh (x, y) pairs, takes the max of |f - y| over the
    draws and over the pre-/post-step states, and inflates it by one sample
    standard deviation s of the per-draw maxima; eps = s / 10.
    """
    if n_trials < 2:
        raise ValueError("n_trials must be >= 2")
    X, y = sampler(n_trials, rng)
    return _m1_from_draws(s0, s1, X, y)


@dataclass(frozen=True)
class PoolSampler:
    """Draws (x, y) pairs uniformly with replacement from a held-out pool."""

    pool: Dataset

    def __call__(self, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        idx = rng.integers(0, self.pool.n, size=k)
        return self.pool.X[idx], self.pool.y[idx]


def decompose_error(v0: np.ndarray, u1: np.ndarray) -> tuple[float, float]:
    """Norms (A1, B1) of v0 along the leading eigenvector and orthogonal to it."""
    return project_split(v0, u1)


def gamma1(
    M1: float,
    v0_norm1: float,
    lambda1_lo: float,
    A1: float,
    n: int,
    m: int,
    mu: float,
    alpha1: float = 0.0,
) -> float:
    """Decrease factor 4 sqrt(n) M1 |v0|_1 m / ((1+alpha1)^2 lambda1_lo A1^2 mu^2)."""
    if A1 <= 0.0:
        raise CertifyRefused("initial error has no component along the leading eigenvector")
    if lambda1_lo <= 0.0:
        raise ValueError("lambda1_lo must be positive")
    if alpha1 < 0.0:
        raise ValueError("alpha1 must be nonnegative")
    return (
        4.0
        * math.sqrt(n)
        * M1
        * v0_norm1
        * m
        / ((1.0 + alpha1) ** 2 * lambda1_lo * A1**2 * mu**2)
    )


def beta_star(gamma1_value: float) -> float:
    """Step fraction 1 - gamma1 that maximizes the certified decrease |Delta1|."""
    if not 0.0 < gamma1_value < 1.0:
        raise CertifyRefused(
            f"no admissible step fraction: decrease factor gamma1 = {gamma1_value:.6g} >= 1",
            details={"gamma1": gamma1_value},
        )
    return 1.0 - gamma1_value


def stopping_time(beta: float, lambda1_lo: float, t0: float) -> tuple[float, float]:
    """Step size eta1 = beta / lambda1_lo and stopping time t1 = t0 + eta1."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must be in (0, 1)")
    if lambda1_lo <= 0.0:
        raise ValueError("lambda1_lo must be positive")
    eta1 = beta / lambda1_lo
    return eta1, t0 + eta1


def alpha_min(sigma1: float, rho1: float, theta1: float, B1: float, A1: float) -> float:
    """Smallest admissible alpha1 = (sigma1/rho1) (theta1 + B1/A1)."""
    if not 0.0 < rho1 < 1.0:
        raise ValueError("rho1 must be in (0, 1)")
    if A1 <= 0.0:
        raise ValueError("A1 must be positive")
    return (sigma1 / rho1) * (theta1 + B1 / A1)


def contracted_projections(
    A1: float, B1: float, rho1: float, sigma1: float, alpha1: float
) -> tuple[float, float]:
    """Post-step projection bounds A1' = rho1 (1+alpha1) A1, B1' = B1 + sigma1 A1."""
    return rho1 * (1.0 + alpha1) * A1, B1 + sigma1 * A1


def nu_bounds(
    M1: float, Phi: float, mu: float, eta1: float, v0_norm1: float, w_max_t0: float
) -> tuple[float, float]:
    """Generalization-term envelopes before and after the step.

    nu0 = 4 M1 Phi max_r |w_r(t0)|, and nu1 adds the worst-case weight growth
    of one step: nu1 = nu0 + 4 M1 (Phi/mu) eta1 |v0|_1.
    """
    nu0 = 4.0 * M1 * Phi * w_max_t0
    return nu0, nu0 + 4.0 * M1 * (Phi / mu) * eta1 * v0_norm1


def l_g(M1: float, Phi: float, c_k: float) -> float:
    """Generalization bound 4 M1 c_k Phi for weight radius c_k."""
    return 4.0 * M1 * c_k * Phi


def gap(
    A1: float,
    B1: float,
    alpha1: float,
    sigma1: float,
    beta: float,
    gamma1_value: float,
    n: int,
) -> tuple[float, float]:
    """Certified change (Delta1, D1) of the loss envelope over one step.

    Delta1 = -(2 A1^2/n) beta (1 - gamma1 - beta/2) (1+alpha1)^2 + D1/n with
    D1 = A1^2 (2 alpha1 + alpha1^2 + sigma1^2 + 2 sigma1 B1/A1). Requires the
    decrease condition gamma1 < 1 - beta/2; refuses otherwise.
    """
    if not gamma1_value < 1.0 - beta / 2.0:
        raise CertifyRefused(
            f"decrease condition violated: gamma1 = {gamma1_value:.6g} >= 1 - beta/2 = "
            f"{1.0 - beta / 2.0:.6g}",
            details={"gamma1": gamma1_value, "beta": beta},
        )
    D1 = A1**2 * (2.0 * alpha1 + alpha1**2 + sigma1**2 + 2.0 * sigma1 * B1 / A1)
    Delta1 = (
        -(2.0 * A1**2 / n) * beta * (1.0 - gamma1_value - beta / 2.0) * (1.0 + alpha1) ** 2
        + D1 / n
    )
    return Delta1, D1


def omegas(
    v0_norm: float, nu0: float, A1p: float, B1p: float, nu1: float, n: int
) -> tuple[float, float]:
    """Loss envelopes omega0 = |v0|^2/n + nu0 and omega1 = (A1'^2 + B1'^2)/n + nu1."""
    return v0_norm**2 / n + nu0, (A1p**2 + B1p**2) / n + nu1


def omega_bound(omega0: float, Delta1: float) -> float:
    """Certified post-step envelope Omega1 = omega0 + Delta1."""
    return omega0 + Delta1


def population_bound(Omega1: float, M1: float, n: int, delta: float) -> float:
    """Probability-(1 - delta) bound Omega1 + 3 M1^2 sqrt(log(2/delta) / (2n))."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0, 1)")
    return Omega1 + 3.0 * M1**2 * math.sqrt(math.log(2.0 / delta) / (2.0 * n))


# ---------------------------------------------------------------------------
# certificate record and orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainReport:
    """Measured check of the inequality chain L_G(t1) <= nu1 <= omega1 <= Omega1."""

    LG_t1: float
    nu1: float
    omega1: float
    Omega1: float
    ordered: bool


@dataclass(frozen=True)
class StopCertificate:
    """Every scalar issued by the one-step certificate, plus run context."""

    # error decomposition at the anchor time
    A1: float
    B1: float
    # step geometry
    rho1: float
    sigma1: float
    alpha1: float
    theta1: float
    A1p: float
    B1p: float
    # decrease factor and stopping time
    gamma1: float
    beta: float
    eta1: float
    t1: float
    # residual bound
    M1: float
    M1_provenance: str  # "monte-carlo" | "conservative"
    M1_conservative: float
    mc_eps: float
    # loss envelopes
    nu0: float
    nu1: float
    omega0: float
    omega1: float
    D1: float
    Delta1: float
    Omega1: float
    # population bound
    delta: float
    pop_bound: float
    # status
    condition_ok: bool
    reliability: str
    # run context (inputs the scalars were derived from)
    n: int
    m: int
    mu: float
    activation: str
    t0: float
    v0_norm: float
    v0_norm1: float
    w_max_t0: float
    phi: float
    lambda1_lo: float
    lambda1_hi: float
    lambda1_t0: float
    lambda1_t1: float
    warmup_t0: float
    chain: ChainReport

    def to_flat_dict(self) -> dict:
        """Flat field -> value mapping, floats at 6 significant digits."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, ChainReport):
                for g in fields(value):
                    out[f"chain.{g.name}"] = _sig6(getattr(value, g.name))
            else:
                out[f.name] = _sig6(value)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_flat_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_flat_dict().items())


def _sig6(value):
    if isinstance(value, bool) or not isinstance(value, float):
        return value
    return float(f"{value:.6g}")


def chain_check(s1: NetworkState, cert: StopCertificate, Phi: float) -> ChainReport:
    """Re-measure the post-step generalization term and check the chain ordering.

    The measured term uses the realized weight radius c1 = max over both
    states of max_r |w_r|; a false `ordered` flag is a finding about the
    certificate inputs, not an error.
    """
    c1 = max(cert.w_max_t0, weight_max_norm(s1))
    lg = l_g(cert.M1, Phi, c1)
    slack = 1e-12 * max(1.0, abs(cert.Omega1))
    ordered = (
        lg <= cert.nu1 + slack
        and cert.nu1 <= cert.omega1 + slack
        and cert.omega1 <= cert.Omega1 + slack
    )
    return ChainReport(
        LG_t1=lg, nu1=cert.nu1, omega1=cert.omega1, Omega1=cert.Omega1, ordered=ordered
    )


def next_gamma(
    s1: NetworkState,
    data: Dataset,
    M2: float,
    lambda2_lo: float | None = None,
    margin: float = 0.05,
    alpha2: float = 0.0,
    snapshot: NtkSnapshot | None = None,
) -> float:
    """Decrease factor a second step would face, anchored at the post-step state.

    Uses the projection of the post-step residual on the second eigenvector;
    returns +inf when that projection vanishes. `lambda2_lo` defaults to the
    second eigenvalue at the post-step state shrunk by `margin`.
    """
    snap = snapshot if snapshot is not None else ntk_matrix(s1, data)
    v1 = training_error(s1, data)
    A2, _ = project_split(v1, snap.eig.vector(2))
    if lambda2_lo is None:
        lambda2_lo = (1.0 - margin) * snap.eigenvalue(2)
    if A2 <= A1_REL_TOL * max(float(np.linalg.norm(v1)), 1.0):
        return math.inf
    if lambda2_lo <= 0.0:
        return math.inf
    v1_norm1 = float(np.abs(v1).sum())
    return (
        4.0
        * M2
        * math.sqrt(data.n)
        * v1_norm1
        * s1.m
        / ((1.0 + alpha2) ** 2 * lambda2_lo * A2**2 * s1.mu**2)
    )


@dataclass(frozen=True)
class CertifyConfig:
    """Knobs of the certify pipeline (all deterministic given mc_seed)."""

    probe_steps: int = 6
    probe_eta: float | None = None
    margin: float = 0.05
    mc_trials: int = 500
    mc_seed: int = 0
    delta: float = 0.05
    beta: float | None = None  # None -> beta* = 1 - gamma1
    m1_mode: str = "monte-carlo"  # or "conservative" (requires explicit beta)
    t0_mode: str = "auto"  # "zero" | "warmup" | "auto" (warmup iff relu)


def certify(
    s0: NetworkState,
    data: Dataset,
    sampler: Callable[[int, np.random.Generator], tuple[np.ndarray, np.ndarray]],
    config: CertifyConfig = CertifyConfig(),
) -> tuple[StopCertificate, NetworkState]:
    """Issue a one-step stopping certificate and return the stepped state.

    Phase 1 anchors at t0: spectrum, eigenvalue envelopes, the residual
    decomposition, a provisional decrease factor with alpha1 = 0, the step
    fraction (beta* by default) and the step itself. Phase 2 re-derives
    every scalar from the measured post-step spectrum (rotation angle
    theta1, sigma1, minimal admissible alpha1, final M1) and grades the
    result: CERTIFIED, UNVERIFIED when the post-step eigenvalue escaped the
    probed envelope, UNRELIABLE when the leading eigenvalue is degenerate.

    Raises CertifyRefused when no admissible step exists (gamma1 >= 1 with
    beta* selection, decrease condition violated, or A1 ~ 0).
    """
    if config.m1_mode not in ("monte-carlo", "conservative"):
        raise ValueError(f"unknown m1_mode {config.m1_mode!r}")
    if config.m1_mode == "conservative" and config.beta is None:
        raise ValueError("conservative M1 needs an explicit beta (the bound depends on it)")
    check_target_bound(s0, data)

    warmup = config.t0_mode == "warmup" or (
        config.t0_mode == "auto" and s0.act.kind == "relu"
    )
    bounds = spectral_bounds(s0, data, config.probe_steps, config.probe_eta, config.margin)
    if warmup and bounds.warmup_t0 > s0.t:
        # advance to the recommended anchor and re-probe from there
        eta_w = (bounds.times[1] - bounds.times[0]) if len(bounds.times) > 1 else None
        while s0.t < bounds.warmup_t0 - 1e-15:
            s0 = gd_step(s0, data, float(eta_w))
        bounds = spectral_bounds(s0, data, config.probe_steps, config.probe_eta, config.margin)

    t0 = s0.t
    n, m, mu = data.n, s0.m, s0.mu
    v0 = training_error(s0, data)
    v0_norm = float(np.linalg.norm(v0))
    v0_norm1 = float(np.abs(v0).sum())

    snap0 = ntk_matrix(s0, data)
    degenerate = snap0.eig.is_degenerate(1)

    A1, B1 = decompose_error(v0, snap0.eig.vector(1))
    if A1 <= A1_REL_TOL * max(v0_norm, 1.0):
        raise CertifyRefused(
            "initial error is (numerically) orthogonal to the leading eigenvector",
            details={"A1": A1, "v0_norm": v0_norm},
        )

    # Phase 1: provisional decrease factor (alpha1 = 0, pre-step residuals only)
    rng = np.random.default_rng(config.mc_seed)
    mc_X, mc_y = sampler(config.mc_trials, rng)
    if config.m1_mode == "monte-carlo":
        r0 = np.abs(predictions(s0, mc_X) - mc_y)
        M1_phase1 = float(r0.max()) + float(np.std(r0, ddof=1))
    else:
        M1_phase1 = m1_conservative(m, mu, config.beta, bounds.lambda1_lo, v0_norm1)

    gamma1_phase1 = gamma1(M1_phase1, v0_norm1, bounds.lambda1_lo, A1, n, m, mu, alpha1=0.0)
    if config.beta is None:
        beta = beta_star(gamma1_phase1)
    else:
        beta = float(config.beta)
        if not 0.0 < beta < 1.0:
            raise ValueError("beta must be in (0, 1)")
        if not gamma1_phase1 < 1.0 - beta / 2.0:
            raise CertifyRefused(
                f"decrease condition fails for the requested beta: gamma1 = "
                f"{gamma1_phase1:.6g} >= 1 - beta/2 = {1.0 - beta / 2.0:.6g}",
                details={"gamma1": gamma1_phase1, "beta": beta},
            )
    eta1, t1 = stopping_time(beta, bounds.lambda1_lo, t0)

    s1 = gd_step(s0, data, eta1)

    # Phase 2: re-derive everything from the measured post-step spectrum
    snap1 = ntk_matrix(s1, data)
    degenerate = degenerate or snap1.eig.is_degenerate(1)
    theta1 = eigvec_rotation(snap0, snap1, 1)
    rho1 = 1.0 - beta
    sigma1 = eta1 * bounds.lambda1_hi * theta1
    alpha1 = alpha_min(sigma1, rho1, theta1, B1, A1)

    if config.m1_mode == "monte-carlo":
        M1, mc_eps = _m1_from_draws(s0, s1, mc_X, mc_y)
        provenance = "monte-carlo"
    else:
        M1, mc_eps = M1_phase1, 0.0
        provenance = "conservative"
    M1_cons = m1_conservative(m, mu, beta, bounds.lambda1_lo, v0_norm1)

    g1 = gamma1(M1, v0_norm1, bounds.lambda1_lo, A1, n, m, mu, alpha1=alpha1)
    Delta1, D1 = gap(A1, B1, alpha1, sigma1, beta, g1, n)
    A1p, B1p = contracted_projections(A1, B1, rho1, sigma1, alpha1)

    w_max_t0 = weight_max_norm(s0)
    Phi = phi(m, mu, n)
    nu0, nu1 = nu_bounds(M1, Phi, mu, eta1, v0_norm1, w_max_t0)
    omega0, omega1 = omegas(v0_norm, nu0, A1p, B1p, nu1, n)
    Omega1 = omega_bound(omega0, Delta1)
    pop = population_bound(Omega1, M1, n, config.delta)

    if degenerate:
        reliability = UNRELIABLE
    elif not bounds.contains(snap1.lambda1):
        reliability = UNVERIFIED
    else:
        reliability = CERTIFIED

    cert = StopCertificate(
        A1=A1,
        B1=B1,
        rho1=rho1,
        sigma1=sigma1,
        alpha1=alpha1,
        theta1=theta1,
        A1p=A1p,
        B1p=B1p,
        gamma1=g1,
        beta=beta,
        eta1=eta1,
        t1=t1,
        M1=M1,
        M1_provenance=provenance,
        M1_conservative=M1_cons,
        mc_eps=mc_eps,
        nu0=nu0,
        nu1=nu1,
        omega0=omega0,
        omega1=omega1,
        D1=D1,
        Delta1=Delta1,
        Omega1=Omega1,
        delta=config.delta,
        pop_bound=pop,
        condition_ok=g1 < 1.0 - beta / 2.0,
        reliability=reliability,
        n=n,
        m=m,
        mu=mu,
        activation=s0.act.kind,
        t0=t0,
        v0_norm=v0_norm,
        v0_norm1=v0_norm1,
        w_max_t0=w_max_t0,
        phi=Phi,
        lambda1_lo=bounds.lambda1_lo,
        lambda1_hi=bounds.lambda1_hi,
        lambda1_t0=snap0.lambda1,
        lambda1_t1=snap1.lambda1,
        warmup_t0=bounds.warmup_t0,
        chain=ChainReport(0.0, 0.0, 0.0, 0.0, False),  # replaced below
    )
    chain = chain_check(s1, cert, Phi)
    cert = StopCertificate(**{**_asdict_shallow(cert), "chain": chain})
    return cert, s1


def _asdict_shallow(cert: StopCertificate) -> dict:
    return {f.name: getattr(cert, f.name) for f in fields(cert)}
