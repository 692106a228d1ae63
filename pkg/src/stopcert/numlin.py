"""Symmetric eigendecomposition and eigenvector projections.

Everything here operates on plain float64 numpy arrays: vectors are 1-d
arrays, symmetric matrices are square 2-d arrays. Eigenpairs follow a
fixed convention (descending eigenvalues, orthonormal eigenvectors with a
deterministic sign) so spectra taken at different training times can be
compared entry by entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-10
# Relative spectral gap below which an eigenvector is treated as ill-defined.
DEGENERATE_GAP = 1e-9


@dataclass(frozen=True)
class EigenPairs:
    """Spectrum of a symmetric matrix.

    values: eigenvalues in descending order, shape (n,).
    vectors: orthonormal eigenvectors as columns, vectors[:, i] belongs to
        values[i]; the first nonzero component of each column is positive.
    """

    values: np.ndarray
    vectors: np.ndarray

    def vector(self, index: int) -> np.ndarray:
        """Eigenvector for the 1-based `index` (1 = largest eigenvalue)."""
        return self.vectors[:, index - 1]

    def is_degenerate(self, index: int = 1) -> bool:
        """True if the eigenvalue at 1-based `index` is not well separated."""
        lam = self.values
        top = abs(float(lam[0]))
        if top == 0.0:
            return True
        i = index - 1
        gap_up = float(lam[i - 1] - lam[i]) if i > 0 else np.inf
        gap_down = float(lam[i] - lam[i + 1]) if i + 1 < lam.size else np.inf
        return min(gap_up, gap_down) <= DEGENERATE_GAP * top


def _normalize_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the first non-negligible component is positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        peak = np.abs(col).max()
        if peak == 0.0:
            continue
        lead = int(np.argmax(np.abs(col) > 1e-12 * peak))
        if col[lead] < 0.0:
            out[:, j] = -col
    return out


def sym_eig(mat: np.ndarray) -> EigenPairs:
    """Full eigendecomposition of a symmetric matrix.

    Deterministic for identical input: eigenvalues sorted descending,
    eigenvector signs normalized. Rejects non-finite or non-symmetric
    input.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError("matrix has non-finite entries")
    scale = float(np.abs(mat).max()) if mat.size else 0.0
    if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12 * max(scale, 1.0)):
        raise ValueError("matrix is not symmetric")
    sym = (mat + mat.T) / 2.0
    values, vectors = np.linalg.eigh(sym)
    values = values[::-1].copy()
    vectors = _normalize_signs(vectors[:, ::-1])
    values.flags.writeable = False
    vectors.flags.writeable = False
    return EigenPairs(values=values, vectors=vectors)


def _check_unit(u: np.ndarray, name: str) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    norm = float(np.linalg.norm(u))
    if abs(norm - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must have unit norm, got {norm!r}")
    return u


def project_split(v: np.ndarray, u: np.ndarray) -> tuple[float, float]:
    """Split `v` into norms along a unit vector `u` and its orthogonal complement.

    Returns (par, perp) with par = |v.u| and perp = sqrt(|v|^2 - par^2),
    so par^2 + perp^2 = |v|^2.
    """
    v = np.asarray(v, dtype=float)
    u = _check_unit(u, "u")
    par = abs(float(v @ u))
    perp = float(np.sqrt(max(float(v @ v) - par * par, 0.0)))
    return par, perp


def principal_angle(u_prev: np.ndarray, u_next: np.ndarray) -> float:
    """Angle in [0, pi/2] between two unit vectors, ignoring sign.

    The sign ambiguity of eigenvectors is absorbed by taking |dot|.
    """
    u_prev = _check_unit(u_prev, "u_prev")
    u_next = _check_unit(u_next, "u_next")
    dot = min(1.0, abs(float(u_prev @ u_next)))
    return float(np.arccos(dot))
