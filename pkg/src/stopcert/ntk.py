"""Tangent-kernel matrix of the shallow network and its spectrum over training.

The kernel at a given state is the n x n Gram matrix of per-sample weight
gradients, H_ij = <df(x_i)/dW, df(x_j)/dW>. For the shallow model this is
H_ij = (1/mu^2) sum_r zeta'(w_r.x_i) zeta'(w_r.x_j) (x_i.x_j), symmetric
and positive semidefinite with rank at most m*d. The module also estimates
lower/upper envelopes for the leading eigenvalue via a short throwaway
training probe, and measures how much the leading eigenvector rotates
between two snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CertifyRefused
from .net import Dataset, NetworkState, gd_step
from .numlin import EigenPairs, principal_angle, sym_eig


@dataclass(frozen=True)
class NtkSnapshot:
    """Kernel matrix and its ordered spectrum at one training time."""

    t: float
    H: np.ndarray
    eig: EigenPairs

    @property
    def lambda1(self) -> float:
        return float(self.eig.values[0])

    def eigenvalue(self, index: int) -> float:
        return float(self.eig.values[index - 1])


@dataclass(frozen=True)
class SpectralBounds:
    """Envelope for the leading eigenvalue, estimated by a training probe.

    lambda1_lo / lambda1_hi bracket every leading eigenvalue observed along
    the probe, widened by a multiplicative margin. warmup_t0 is the earliest
    probe time after which consecutive observations changed by less than 1%
    (a recommendation for where to anchor the certificate when the early
    spectrum is still in a transient, which matters mostly for relu).
    """

    lambda1_lo: float
    lambda1_hi: float
    warmup_t0: float
    times: np.ndarray
    lambda1s: np.ndarray

    def contains(self, lam: float) -> bool:
        return self.lambda1_lo <= lam <= self.lambda1_hi


def ntk_matrix(state: NetworkState, data: Dataset) -> NtkSnapshot:
    """Kernel matrix at the current state, with full eigendecomposition attached."""
    G = state.act.derivative(data.X @ state.W)  # (n, m)
    H = (G @ G.T) * (data.X @ data.X.T) / (state.mu**2)
    H = (H + H.T) / 2.0  # exact symmetry for the eigensolver
    return NtkSnapshot(t=state.t, H=H, eig=sym_eig(H))


def _lambda1(state: NetworkState, data: Dataset) -> float:
    """Leading kernel eigenvalue only (cheaper than a full snapshot)."""
    G = state.act.derivative(data.X @ state.W)
    H = (G @ G.T) * (data.X @ data.X.T) / (state.mu**2)
    return float(np.linalg.eigvalsh((H + H.T) / 2.0)[-1])


def spectral_bounds(
    state: NetworkState,
    data: Dataset,
    probe_steps: int = 6,
    probe_eta: float | None = None,
    margin: float = 0.05,
) -> SpectralBounds:
    """Bracket the leading eigenvalue by probing a throwaway copy of the state.

    Runs `probe_steps` gradient steps of size `probe_eta` and records lambda1
    after each; the caller's state is never modified. The default step spreads
    the probe over half a 1/lambda1 unit of training time, which covers the
    stopping times the certificate typically selects; validity at the realized
    stopping time is re-checked against the returned envelope afterwards.
    """
    if probe_steps < 1:
        raise ValueError("probe_steps must be >= 1")
    if not 0.0 <= margin < 1.0:
        raise ValueError("margin must be in [0, 1)")

    lam0 = _lambda1(state, data)
    if lam0 <= 0.0:
        raise CertifyRefused("leading kernel eigenvalue is not positive at the anchor time")
    if probe_eta is None:
        probe_eta = 0.5 / (lam0 * probe_steps)

    times = [state.t]
    lams = [lam0]
    probe = state
    for _ in range(probe_steps):
        probe = gd_step(probe, data, probe_eta)
        lam = _lambda1(probe, data)
        if lam <= 0.0:
            raise CertifyRefused("leading kernel eigenvalue hit zero during the probe")
        times.append(probe.t)
        lams.append(lam)

    times_arr = np.asarray(times)
    lams_arr = np.asarray(lams)
    # earliest time after which every consecutive relative change is < 1%
    rel = np.abs(np.diff(lams_arr)) / lams_arr[:-1]
    settled = len(rel)
    for k in range(len(rel) - 1, -1, -1):
        if rel[k] >= 0.01:
            break
        settled = k
    warmup_t0 = float(times_arr[settled]) if settled < len(times_arr) else float(times_arr[-1])

    return SpectralBounds(
        lambda1_lo=float((1.0 - margin) * lams_arr.min()),
        lambda1_hi=float((1.0 + margin) * lams_arr.max()),
        warmup_t0=warmup_t0,
        times=times_arr,
        lambda1s=lams_arr,
    )


def eigvec_rotation(a: NtkSnapshot, b: NtkSnapshot, index: int = 1) -> float:
    """Angle between the index-th eigenvectors of two snapshots (sign-blind).

    Meaningful only when the eigenvalue at `index` is well separated in both
    snapshots; check `snap.eig.is_degenerate(index)` before trusting it.
    """
    if a.H.shape != b.H.shape:
        raise ValueError("snapshots were taken over different datasets")
    return principal_angle(a.eig.vector(index), b.eig.vector(index))


def spectrum_csv(snap: NtkSnapshot) -> str:
    """CSV rendering `index,eigenvalue` of the snapshot spectrum."""
    lines = ["index,eigenvalue"]
    for i, lam in enumerate(snap.eig.values, start=1):
        lines.append(f"{i},{lam:.17g}")
    return "\n".join(lines) + "\n"
