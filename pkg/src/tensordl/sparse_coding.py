"""Tubal-sparse coding by tensor orthogonal matching pursuit.

The restricted least-squares refit of every iteration is solved with a
t-Cholesky factor of the selected atoms' Gram tensor that grows by one
tensor row per iteration, so each refit costs two triangular solves per
spectrum slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IndefiniteError, ShapeError
from .tensor_core import as_tensor, forward_spectrum, inverse_spectrum
from .tensor_linalg import append_spectral, from_batch, to_batch

DEFAULT_MAX_ATOMS = 6
DEFAULT_REL_TOL = 1e-6


@dataclass
class SparseCode:
    """Coefficient tensor plus its (sorted) tubal support.

    ``residual_norms[k]`` is the Frobenius norm of the residual after ``k``
    atoms were selected.
    """

    coeffs: np.ndarray
    support: list
    residual_norms: list = field(default_factory=list)

    @property
    def tubal_sparsity(self) -> int:
        return tubal_sparsity(self.coeffs)


@dataclass(frozen=True)
class OmpConfig:
    max_atoms: int = DEFAULT_MAX_ATOMS
    tol: float | None = None  # absolute residual threshold; None -> 1e-6 * ||y||_F

    def __post_init__(self):
        if self.max_atoms < 1:
            raise ConfigError(f"max_atoms must be positive, got {self.max_atoms}")
        if self.tol is not None and self.tol < 0:
            raise ConfigError(f"tol must be nonnegative, got {self.tol}")


def tubal_sparsity(x) -> int:
    """Number of nonzero tubal rows ``x(k, :, ..., :)``."""
    x = np.asarray(x)
    return int(np.count_nonzero(np.any(x.reshape(x.shape[0], -1) != 0, axis=1)))


def _check_conform(d: np.ndarray, y: np.ndarray) -> None:
    if d.ndim != y.ndim or d.shape[0] != y.shape[0] or d.shape[2:] != y.shape[2:]:
        raise ShapeError(f"signal {y.shape} does not conform to dictionary {d.shape}")


def _scores_from_spectrum(d_hat: np.ndarray, r_hat: np.ndarray) -> np.ndarray:
    # Parseval for the unnormalised transform: ||x||^2 = sum |x_hat|^2 / P
    c_hat = np.conj(np.swapaxes(d_hat, 1, 2)) @ r_hat
    p = d_hat.shape[0]
    return np.sqrt(np.sum(np.abs(c_hat) ** 2, axis=(0, 2)) / p)


def correlation_scores(dictionary, r) -> np.ndarray:
    """``||D^T(i, :, ...) * R||_F`` for every atom ``i``."""
    d = as_tensor(dictionary)
    r = as_tensor(r)
    _check_conform(d, r)
    return _scores_from_spectrum(to_batch(forward_spectrum(d)), to_batch(forward_spectrum(r)))


def omp(dictionary, y, cfg: OmpConfig | None = None, *, max_atoms=None, tol=None) -> SparseCode:
    """Greedy tubal-sparse approximation ``y ~ D * X`` with ``||X||_TS <= K``.

    Atoms whose addition would make the restricted Gram tensor singular are
    skipped in favour of the next best correlation.
    """
    if cfg is None:
        cfg = OmpConfig(
            max_atoms=DEFAULT_MAX_ATOMS if max_atoms is None else max_atoms, tol=tol
        )
    d = as_tensor(dictionary)
    y = as_tensor(y)
    _check_conform(d, y)
    n_atoms = d.shape[1]
    trailing = y.shape[2:]

    d_hat = to_batch(forward_spectrum(d))          # P x M1 x d
    y_hat = to_batch(forward_spectrum(y))          # P x M1 x n
    p = d_hat.shape[0]
    dh = np.conj(np.swapaxes(d_hat, 1, 2))
    gram = dh @ d_hat                              # P x d x d
    rhs = dh @ y_hat                               # P x d x n

    def _norm(z_hat):
        return float(np.sqrt(np.sum(np.abs(z_hat) ** 2) / p))

    y_norm = _norm(y_hat)
    eps = DEFAULT_REL_TOL * y_norm if cfg.tol is None else cfg.tol
    k_max = min(cfg.max_atoms, n_atoms)

    support: list[int] = []
    blocked = np.zeros(n_atoms, dtype=bool)
    l_hat = np.zeros((p, 0, 0), dtype=np.complex128)
    u_hat = np.zeros((p, 0, y_hat.shape[2]), dtype=np.complex128)
    r_hat = y_hat
    res = [y_norm]

    while len(support) < k_max and res[-1] > eps:
        scores = _scores_from_spectrum(d_hat, r_hat)
        scores[blocked] = -np.inf
        if not np.isfinite(scores).any():
            break
        i = int(np.argmax(scores))
        try:
            l_hat = append_spectral(l_hat, gram[:, support, i][:, :, None], gram[:, i, i][:, None, None])
        except IndefiniteError:
            blocked[i] = True
            continue
        support.append(i)
        blocked[i] = True
        half = np.linalg.solve(l_hat, rhs[:, support, :])
        u_hat = np.linalg.solve(np.conj(np.swapaxes(l_hat, 1, 2)), half)
        r_hat = y_hat - d_hat[:, :, support] @ u_hat
        res.append(_norm(r_hat))

    coeffs = np.zeros((n_atoms, y.shape[1]) + trailing)
    if support:
        order = np.argsort(support)
        rows = inverse_spectrum(from_batch(u_hat[:, order, :], trailing), check=False)
        canon = sorted(support)
        coeffs[canon] = rows
        support = canon
    return SparseCode(coeffs, support, res)
