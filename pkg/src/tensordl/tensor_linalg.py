"""Factorizations and spectral quantities under the t-product.

Everything here works slice-wise in the spectrum domain: a tensor is
transformed along its tube modes, each frontal slice is handled as a
complex matrix, and the result is transformed back.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, IndefiniteError, ShapeError, SymmetryError
from .tensor_core import (
    as_tensor,
    fnorm,
    forward_spectrum,
    inverse_spectrum,
    ttranspose,
)

PIVOT_TOL = 1e-12
SYMMETRY_TOL = 1e-10


def to_batch(hat: np.ndarray) -> np.ndarray:
    """``I1 x I2 x trailing`` spectrum -> ``P x I1 x I2`` stack (frontal-slice order)."""
    i1, i2 = hat.shape[:2]
    p = int(np.prod(hat.shape[2:]))
    return np.moveaxis(np.reshape(hat, (i1, i2, p), order="F"), 2, 0)


def from_batch(batch: np.ndarray, trailing: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`to_batch`."""
    stacked = np.moveaxis(batch, 0, 2)
    return np.reshape(stacked, stacked.shape[:2] + tuple(trailing), order="F")


def _herm(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


@dataclass(frozen=True)
class TCholesky:
    """Lower t-Cholesky factor, kept in both domains.

    ``lower`` is the real ``k x k x trailing`` tensor; ``spectrum`` holds its
    frontal slices after the forward transform as a ``P x k x k`` stack.
    """

    lower: np.ndarray
    spectrum: np.ndarray

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    @property
    def trailing(self) -> tuple:
        return self.lower.shape[2:]

    @classmethod
    def empty(cls, trailing: Sequence[int]) -> "TCholesky":
        trailing = tuple(trailing)
        p = int(np.prod(trailing)) if trailing else 1
        return cls(np.zeros((0, 0) + trailing), np.zeros((p, 0, 0), dtype=np.complex128))


@dataclass(frozen=True)
class TQR:
    q: np.ndarray
    r: np.ndarray


def tubal_sqrt(b) -> np.ndarray:
    """Frontal-slice-wise square root of a tube with positive entries.

    The root is taken entry by entry in the original domain.  Its t-square
    equals ``b`` only when the tube has a single frontal slice; for longer
    tubes use :func:`tubal_sqrt_spectral`.
    """
    b = as_tensor(b)
    if b.shape[:2] != (1, 1):
        raise ShapeError(f"tubal scalar must be 1 x 1 x ..., got {b.shape}")
    if np.any(b <= 0):
        raise DomainError("tubal_sqrt requires strictly positive entries")
    return np.sqrt(b)


def tubal_sqrt_spectral(b) -> np.ndarray:
    """Principal t-square root: ``r * r == b`` under the t-product."""
    b = as_tensor(b)
    if b.shape[:2] != (1, 1):
        raise ShapeError(f"tubal scalar must be 1 x 1 x ..., got {b.shape}")
    hat = forward_spectrum(b)
    scale = max(float(np.max(np.abs(hat))), 1e-300)
    on_cut = (np.abs(hat.imag) <= 1e-12 * scale) & (hat.real <= 0)
    if np.any(on_cut):
        raise DomainError("tube spectrum touches the non-positive real axis")
    return inverse_spectrum(np.sqrt(hat), check=False)


def _check_square(a: np.ndarray) -> None:
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected square frontal slices, got {a.shape}")


def _cholesky_slices(batch: np.ndarray) -> np.ndarray:
    out = np.empty_like(batch)
    for i, s in enumerate(batch):
        s = 0.5 * (s + _herm(s))
        try:
            low = np.linalg.cholesky(s)
        except np.linalg.LinAlgError as exc:
            raise IndefiniteError(f"spectrum slice {i + 1} is not positive definite") from exc
        piv = np.abs(np.diagonal(low)) ** 2
        if np.any(piv <= PIVOT_TOL * max(np.linalg.norm(s), 1e-300)):
            raise IndefiniteError(f"spectrum slice {i + 1} has a vanishing pivot")
        out[i] = low
    return out


def tcholesky(a) -> TCholesky:
    """Full t-Cholesky factorization ``a = L * L^T`` of a symmetric positive definite tensor."""
    a = as_tensor(a)
    _check_square(a)
    if fnorm(ttranspose(a) - a) > SYMMETRY_TOL * max(1.0, fnorm(a)):
        raise SymmetryError("tensor is not symmetric under the t-transpose")
    trailing = a.shape[2:]
    low_hat = _cholesky_slices(to_batch(forward_spectrum(a)))
    lower = inverse_spectrum(from_batch(low_hat, trailing), check=False)
    return TCholesky(lower, low_hat)


def append_spectral(l_hat: np.ndarray, v_hat: np.ndarray, c_hat: np.ndarray) -> np.ndarray:
    """Border a ``P x k x k`` factor spectrum given ``P x k x 1`` and ``P x 1 x 1`` spectra."""
    k = l_hat.shape[1]
    p = c_hat.shape[0]
    if k:
        w = np.linalg.solve(l_hat, v_hat)
        schur = c_hat - _herm(w) @ w
    else:
        w = np.zeros((p, 0, 1), dtype=np.complex128)
        schur = c_hat.astype(np.complex128)
    d = schur[:, 0, 0].real
    if np.any(d <= PIVOT_TOL * np.maximum(np.abs(c_hat[:, 0, 0]), 1e-300)):
        raise IndefiniteError("bordered tensor is not positive definite (dependent column)")
    out = np.zeros((p, k + 1, k + 1), dtype=np.complex128)
    out[:, :k, :k] = l_hat
    out[:, k, :k] = _herm(w)[:, 0, :]
    out[:, k, k] = np.sqrt(d)
    return out


def tcholesky_append(f: TCholesky, v, c) -> TCholesky:
    """Extend a factor of ``A~`` to one of ``[[A~, v], [v^T, c]]``.

    The new last tensor row is ``[W^T, sqrt(c - W^T * W)]`` where
    ``L~ * W = v``; the root is taken in the spectrum domain.
    """
    v = as_tensor(v)
    c = as_tensor(c)
    if c.shape[:2] != (1, 1) or v.shape[0] != f.size or v.shape[1] != 1:
        raise ShapeError(f"cannot border a {f.size}-factor with v{v.shape}, c{c.shape}")
    if f.size and (v.shape[2:] != f.trailing or c.shape[2:] != f.trailing):
        raise ShapeError("tube modes of v/c differ from the factor")
    trailing = c.shape[2:]
    spec = append_spectral(f.spectrum, to_batch(forward_spectrum(v)), to_batch(forward_spectrum(c)))
    lower = inverse_spectrum(from_batch(spec, trailing), check=False)
    return TCholesky(lower, spec)


def _solve_batch(l_hat: np.ndarray, rhs_hat: np.ndarray, transposed: bool) -> np.ndarray:
    mat = _herm(l_hat) if transposed else l_hat
    return np.linalg.solve(mat, rhs_hat)


def tri_solve(l: TCholesky, rhs, transposed: bool = False) -> np.ndarray:
    """Solve ``L * X = rhs`` (or ``L^T * X = rhs``) slice-wise."""
    rhs = as_tensor(rhs)
    if rhs.shape[0] != l.size or rhs.shape[2:] != l.trailing:
        raise ShapeError(f"rhs {rhs.shape} does not conform to a {l.size}-factor")
    sol = _solve_batch(l.spectrum, to_batch(forward_spectrum(rhs)), transposed)
    return inverse_spectrum(from_batch(sol, rhs.shape[2:]), check=False)


def cholesky_solve(l: TCholesky, rhs) -> np.ndarray:
    """Two-phase solve of ``(L * L^T) * X = rhs``."""
    rhs = as_tensor(rhs)
    if rhs.shape[0] != l.size or rhs.shape[2:] != l.trailing:
        raise ShapeError(f"rhs {rhs.shape} does not conform to a {l.size}-factor")
    half = _solve_batch(l.spectrum, to_batch(forward_spectrum(rhs)), False)
    sol = _solve_batch(l.spectrum, half, True)
    return inverse_spectrum(from_batch(sol, rhs.shape[2:]), check=False)


def tqr(a) -> TQR:
    """Reduced T-QR: per-slice QR of the spectrum, transformed back."""
    a = as_tensor(a)
    if a.shape[0] < a.shape[1]:
        raise ShapeError(f"T-QR needs I1 >= I2, got {a.shape}")
    trailing = a.shape[2:]
    q_hat, r_hat = np.linalg.qr(to_batch(forward_spectrum(a)), mode="reduced")
    q = inverse_spectrum(from_batch(q_hat, trailing), check=False)
    r = inverse_spectrum(from_batch(r_hat, trailing), check=False)
    return TQR(q, r)


def slice_singular_values(d) -> np.ndarray:
    """Largest singular value of every spectrum slice, in frontal-slice order."""
    d = as_tensor(d)
    return np.linalg.norm(to_batch(forward_spectrum(d)), ord=2, axis=(1, 2))


def lipschitz(d, factor: float = 1.0) -> float:
    """``factor * rho(D^T * D)``: the largest squared slice singular value of ``d``."""
    return float(factor * np.max(slice_singular_values(d)) ** 2)


def max_slice_eigenvalue(a) -> float:
    """Largest eigenvalue over the Hermitian spectrum slices of a symmetric tensor."""
    batch = to_batch(forward_spectrum(as_tensor(a)))
    batch = 0.5 * (batch + _herm(batch))
    return float(np.max(np.linalg.eigvalsh(batch)))
