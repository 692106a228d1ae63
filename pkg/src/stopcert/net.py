"""Single-hidden-layer scalar network with analytic gradients and
full-batch gradient descent.

The model is f(x) = (1/mu) * sum_r a_r * zeta(w_r . x): a trainable first
layer W whose columns are the per-neuron weights w_r, frozen random output
signs a_r in {-1, +1}, and a fixed output scale 1/mu. The activation zeta
is 1-Lipschitz with zeta(0) = 0, so |f| is controlled by the weight norms
alone. The training clock t on the state accumulates the learning rates of
the steps taken, which makes "the network at time t" unambiguous for the
spectral bookkeeping built on top.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

UNIT_TOL = 1e-10


@dataclass(frozen=True)
class Activation:
    """Scalar nonlinearity, 1-Lipschitz with value(0) = 0 and |derivative| <= 1."""

    kind: str
    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]


def _elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_prime(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, 1.0, np.exp(np.minimum(z, 0.0)))


ACTIVATIONS = {
    "tanh": Activation("tanh", np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    # derivative at the kink set to 0 (subgradient choice, keeps |zeta'| <= 1)
    "relu": Activation(
        "relu",
        lambda z: np.maximum(z, 0.0),
        lambda z: (np.asarray(z) > 0.0).astype(float),
    ),
    # unit-scale elu: 1-Lipschitz, zeta(0) = 0, derivative in (0, 1]
    "elu": Activation("elu", _elu, _elu_prime),
}


def activation(kind: str) -> Activation:
    try:
        return ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}")


@dataclass(frozen=True)
class NetworkState:
    """Immutable network parameters plus the training clock t."""

    W: np.ndarray  # (d, m), column r is the weight vector of neuron r
    a: np.ndarray  # (m,), entries in {-1.0, +1.0}
    mu: float
    act: Activation
    t: float = 0.0

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError("mu must be positive")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("weights must be finite")
        if not np.all(np.abs(self.a) == 1.0):
            raise ValueError("output signs must be +-1")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Unit-norm inputs (rows of X) with scalar targets."""

    X: np.ndarray  # (n, d)
    y: np.ndarray  # (n,)

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be (n, d) and y (n,)")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset has non-finite entries")
        norms = np.linalg.norm(self.X, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            worst = float(np.abs(norms - 1.0).max())
            raise ValueError(f"inputs must be unit norm (worst deviation {worst:.3e})")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def select(self, idx: np.ndarray) -> "Dataset":
        """Row subset (used to re-train repeatedly on samples of a pool)."""
        return Dataset(X=self.X[idx].copy(), y=self.y[idx].copy())

    def save_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = [f"x{i + 1}" for i in range(self.d)] + ["y"]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row, target in zip(self.X, self.y):
                writer.writerow([f"{v:.17g}" for v in row] + [f"{target:.17g}"])

    @staticmethod
    def load_csv(path: str | Path) -> "Dataset":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
        if not header or header[-1] != "y":
            raise ValueError(f"{path}: expected header x1,...,xd,y")
        data = np.asarray(rows, dtype=float)
        return Dataset(X=data[:, :-1], y=data[:, -1])


def init_weights(d: int, m: int, seed: int, mu: float, act: str | Activation = "tanh") -> NetworkState:
    """Fresh network: w_r i.i.d. N(0, (2/m) I_d), signs a_r uniform on +-1."""
    if d < 1 or m < 1:
        raise ValueError("d and m must be >= 1")
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, np.sqrt(2.0 / m), size=(d, m))
    a = (2.0 * rng.integers(0, 2, size=m) - 1.0).astype(float)
    if isinstance(act, str):
        act = activation(act)
    return NetworkState(W=W, a=a, mu=float(mu), act=act, t=0.0)


def predictions(state: NetworkState, X: np.ndarray) -> np.ndarray:
    """Vectorized forward pass over rows of X."""
    return state.act.value(X @ state.W) @ state.a / state.mu


def forward(state: NetworkState, x: np.ndarray) -> float:
    """Network output (1/mu) sum_r a_r zeta(w_r . x) for a single input."""
    x = np.asarray(x, dtype=float)
    return float(predictions(state, x[None, :])[0])


def grad_weights(state: NetworkState, x: np.ndarray) -> np.ndarray:
    """Gradient of f wrt W at a single input; column r is (a_r/mu) zeta'(w_r.x) x."""
    x = np.asarray(x, dtype=float)
    scale = state.a * state.act.derivative(x @ state.W) / state.mu
    return np.outer(x, scale)


def training_error(state: NetworkState, data: Dataset) -> np.ndarray:
    """Residual vector v with v_i = f(x_i) - y_i."""
    return predictions(state, data.X) - data.y


def gd_step(state: NetworkState, data: Dataset, eta: float) -> NetworkState:
    """One full-batch gradient step on the quadratic loss sum_i |f(x_i)-y_i|^2 / 2.

    Returns a new state with w_r <- w_r - eta * sum_i v_i * df(x_i)/dw_r and
    the clock advanced by eta; signs and mu are untouched.
    """
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    v = training_error(state, data)
    G = state.act.derivative(data.X @ state.W)  # (n, m)
    delta = -(eta / state.mu) * (data.X.T @ (v[:, None] * G)) * state.a[None, :]
    return replace(state, W=state.W + delta, t=state.t + eta)


def empirical_loss(v: np.ndarray, n: int) -> float:
    """Mean squared training error |v|^2 / n."""
    v = np.asarray(v, dtype=float)
    return float(v @ v) / n


def test_loss(state: NetworkState, data: Dataset) -> float:
    """Mean squared residual on a held-out dataset."""
    r = training_error(state, data)
    return float(r @ r) / data.n


def weight_max_norm(state: NetworkState) -> float:
    """max_r |w_r|, the quantity that controls the generalization term."""
    return float(np.linalg.norm(state.W, axis=0).max())


def check_target_bound(state: NetworkState, data: Dataset) -> None:
    """Targets must satisfy |y| <= m/mu before the dataset is trained on."""
    bound = state.m / state.mu
    worst = float(np.abs(data.y).max()) if data.n else 0.0
    if worst > bound + 1e-12:
        raise ValueError(f"targets exceed the admissible bound m/mu: {worst:.6g} > {bound:.6g}")
