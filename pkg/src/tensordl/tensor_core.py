"""Dense order-N tensors and the t-product algebra.

Tensors are plain ``numpy.ndarray`` objects whose shape is the dimension
list ``(I1, I2, I3, ..., IN)``.  The first two modes are the matrix modes,
modes 3..N are tube modes.  Frontal slices are enumerated with the first
tube mode varying fastest, i.e. a column-major (Fortran) walk over the
trailing modes, so ``x.reshape(I1, I2, P, order="F")[:, :, p - 1]`` is the
p-th frontal slice.

The t-product is evaluated in the spectrum domain: an unnormalised DFT is
applied along every tube mode, which block-diagonalises the recursive
block-circulant structure, and the frontal slices are multiplied as
ordinary complex matrices.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import OrderError, ShapeError, TensorError

# imaginary residue allowed after an inverse transform of a real product,
# relative to max(1, largest real magnitude)
IMAG_TOL = 1e-9


def as_tensor(x, min_order: int = 2) -> np.ndarray:
    """Return ``x`` as a float64 array of order at least ``min_order``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < min_order:
        raise OrderError(f"expected a tensor of order >= {min_order}, got order {arr.ndim}")
    return arr


def tube_size(shape: Sequence[int]) -> int:
    """Number of frontal slices P = I3 * ... * IN."""
    return int(math.prod(shape[2:]))


def slice_index(subscripts: Sequence[int], shape: Sequence[int]) -> int:
    """1-based frontal-slice number p for 1-based tube subscripts (k3, ..., kN).

    p = k3 + sum_{i>=4} (k_i - 1) * prod_{s=3}^{i-1} I_s
    """
    trailing = list(shape[2:])
    if len(subscripts) != len(trailing):
        raise ShapeError("one subscript per tube mode is required")
    p = subscripts[0] if subscripts else 1
    stride = 1
    for i in range(1, len(trailing)):
        stride *= trailing[i - 1]
        p += (subscripts[i] - 1) * stride
    return int(p)


def frontal_slices(x: np.ndarray) -> np.ndarray:
    """View/copy of ``x`` as an ``I1 x I2 x P`` stack in frontal-slice order."""
    return np.reshape(x, x.shape[:2] + (tube_size(x.shape),), order="F")


def from_slices(slices: np.ndarray, trailing: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`frontal_slices`."""
    return np.reshape(slices, slices.shape[:2] + tuple(trailing), order="F")


def unfold(t) -> np.ndarray:
    """Stack the last-mode sub-tensors vertically: ``[A_1; A_2; ...; A_IN]``.

    The result has shape ``(I1 * IN, I2, ..., I_{N-1})``.
    """
    t = np.asarray(t)
    if t.ndim < 3:
        raise OrderError(f"unfold needs order >= 3, got {t.ndim}")
    return np.concatenate([t[..., i] for i in range(t.shape[-1])], axis=0)


def fold(t, last_dim: int) -> np.ndarray:
    """Inverse of :func:`unfold`: split mode 1 into ``last_dim`` blocks."""
    t = np.asarray(t)
    if last_dim < 1 or t.shape[0] % last_dim:
        raise ShapeError(f"first dimension {t.shape[0]} is not divisible by {last_dim}")
    blocks = np.split(t, last_dim, axis=0)
    return np.stack(blocks, axis=-1)


def forward_spectrum(t) -> np.ndarray:
    """Unnormalised DFT along every tube mode (modes 3..N)."""
    t = np.asarray(t)
    axes = tuple(range(2, t.ndim))
    if not axes:
        return t.astype(np.complex128)
    return np.fft.fftn(t, axes=axes)


def inverse_spectrum(s, real: bool = True, check: bool = True) -> np.ndarray:
    """Inverse of :func:`forward_spectrum` (1/I_k normalised per mode).

    With ``real=True`` the imaginary part is dropped; ``check`` first
    verifies it is negligible.  Solves on ill-conditioned slices pass
    ``check=False``: the real part is the projection onto conjugate-symmetric
    spectra, i.e. onto real tensors.
    """
    s = np.asarray(s)
    axes = tuple(range(2, s.ndim))
    out = np.fft.ifftn(s, axes=axes) if axes else np.array(s, dtype=np.complex128)
    if not real:
        return out
    if not check:
        return np.ascontiguousarray(out.real)
    return _drop_imag(out)


def _drop_imag(z: np.ndarray, scale: float = 0.0) -> np.ndarray:
    re = z.real
    if z.size:
        scale = max(1.0, scale, float(np.max(np.abs(re))))
        resid = float(np.max(np.abs(z.imag)))
        if resid > IMAG_TOL * scale:
            raise TensorError(f"imaginary residue {resid:.3e} after inverse transform")
    return np.ascontiguousarray(re)


def facewise(a_hat: np.ndarray, b_hat: np.ndarray) -> np.ndarray:
    """Slice-by-slice matrix product of two spectra (tube modes must agree)."""
    trailing = a_hat.shape[2:]
    a = np.moveaxis(a_hat.reshape(a_hat.shape[:2] + (-1,)), 2, 0)
    b = np.moveaxis(b_hat.reshape(b_hat.shape[:2] + (-1,)), 2, 0)
    c = np.moveaxis(a @ b, 0, 2)
    return c.reshape(c.shape[:2] + trailing)


def _check_conformal(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != b.ndim:
        raise ShapeError(f"order mismatch: {a.shape} vs {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"mode-2 of {a.shape} does not match mode-1 of {b.shape}")
    if a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"tube modes differ: {a.shape[2:]} vs {b.shape[2:]}")


def tprod(a, b) -> np.ndarray:
    """t-product ``a * b`` of ``I1 x I2 x ...`` and ``I2 x l x ...`` tensors."""
    a = as_tensor(a)
    b = as_tensor(b)
    _check_conformal(a, b)
    if a.ndim == 2:
        return a @ b
    if tube_size(a.shape) == 1:
        # every tube has length one: the t-product is the matrix product
        return (a.reshape(a.shape[:2]) @ b.reshape(b.shape[:2])).reshape(
            (a.shape[0], b.shape[1]) + a.shape[2:])
    if a.ndim == 3:
        # conjugate symmetry: only the first n//2 + 1 slices are formed
        n = a.shape[2]
        a_hat = np.fft.rfft(a, axis=2)
        b_hat = np.fft.rfft(b, axis=2)
        return np.fft.irfft(np.einsum("ijp,jkp->ikp", a_hat, b_hat), n=n, axis=2)
    prod = facewise(forward_spectrum(a), forward_spectrum(b))
    axes = tuple(range(2, a.ndim))
    # rounding in the transforms scales with the operand magnitudes
    return _drop_imag(np.fft.ifftn(prod, axes=axes), scale=fnorm(a) * fnorm(b))


def ttranspose(a) -> np.ndarray:
    """t-transpose: transpose every slice, reverse slices 2..I_k in each tube mode."""
    a = np.asarray(a)
    out = np.swapaxes(a, 0, 1)
    for ax in range(2, a.ndim):
        # index k -> (-k) mod n keeps slice 1 and reverses 2..n
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return np.ascontiguousarray(out)


def identity_tensor(n: int, trailing: Sequence[int] = ()) -> np.ndarray:
    """``n x n x trailing`` tensor whose first frontal slice is the identity."""
    out = np.zeros((n, n) + tuple(trailing))
    out[(slice(None), slice(None)) + (0,) * len(trailing)] = np.eye(n)
    return out


def inner(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"inner product of {a.shape} and {b.shape}")
    return float(np.vdot(a, b).real)


def fnorm(a) -> float:
    return float(np.linalg.norm(np.ravel(a)))


def l1norm(a) -> float:
    return float(np.abs(a).sum())


def save_tns(path, t) -> None:
    """Write ``t`` in the TNS1 format (ASCII header, little-endian float64 body)."""
    t = as_tensor(t, min_order=1)
    header = "TNS1 " + " ".join(str(d) for d in (t.ndim,) + t.shape) + "\n"
    body = np.ravel(t, order="F").astype("<f8").tobytes()
    Path(path).write_bytes(header.encode("ascii") + body)


def load_tns(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ShapeError(f"{path}: missing TNS1 header")
    fields = raw[:nl].decode("ascii").split()
    if not fields or fields[0] != "TNS1":
        raise ShapeError(f"{path}: not a TNS1 file")
    order = int(fields[1])
    dims = tuple(int(f) for f in fields[2:])
    if len(dims) != order:
        raise ShapeError(f"{path}: header declares order {order} but lists {len(dims)} dims")
    data = np.frombuffer(raw[nl + 1:], dtype="<f8")
    if data.size != math.prod(dims):
        raise ShapeError(f"{path}: expected {math.prod(dims)} values, found {data.size}")
    return np.reshape(data.astype(np.float64), dims, order="F")
