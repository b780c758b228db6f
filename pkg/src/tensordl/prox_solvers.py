"""Proximal solvers for l1-regularised t-product least squares.

All solvers minimise

    0.5 * ||W . (D * X - Y)||_F^2 + lam * ||X||_1

where ``W`` is an optional binary mask (all ones when absent).  ISTA,
FISTA and an Anderson-accelerated ISTA with tubal mixing coefficients are
provided; they share the fixed-point map :func:`ista_map`.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor_core import as_tensor, facewise, forward_spectrum, inverse_spectrum
from .tensor_linalg import from_batch, lipschitz, to_batch

DEFAULT_WINDOW = 5
DEFAULT_TOL = 1e-8
SOLVERS = ("ista", "fista", "ista_aa")


def shrink(x, alpha: float) -> np.ndarray:
    """Soft threshold ``(|x| - alpha)_+ * sgn(x)``."""
    if alpha < 0:
        raise ConfigError(f"threshold must be nonnegative, got {alpha}")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - alpha, 0.0)


@dataclass
class ProxProblem:
    """Data of one (optionally masked) l1 problem.

    ``step`` defaults to ``1 / (lipschitz_factor * rho(D^T * D))``.
    """

    dictionary: np.ndarray
    y: np.ndarray
    lam: float
    mask: Optional[np.ndarray] = None
    step: Optional[float] = None
    lipschitz_factor: float = 1.0
    d_hat: np.ndarray = field(init=False, repr=False)
    y_obs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.dictionary = as_tensor(self.dictionary)
        self.y = as_tensor(self.y)
        d, y = self.dictionary, self.y
        if d.ndim != y.ndim or d.shape[0] != y.shape[0] or d.shape[2:] != y.shape[2:]:
            raise ShapeError(f"signal {y.shape} does not conform to dictionary {d.shape}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if self.mask is not None:
            self.mask = as_tensor(self.mask)
            if self.mask.shape != y.shape:
                raise ShapeError(f"mask {self.mask.shape} differs from signal {y.shape}")
            if not np.all((self.mask == 0) | (self.mask == 1)):
                raise ConfigError("mask entries must be 0 or 1")
            # masked-out observations are never read again
            self.y_obs = self.mask * y
        else:
            self.y_obs = y
        if self.step is None:
            self.step = 1.0 / lipschitz(d, self.lipschitz_factor)
        elif self.step <= 0:
            raise ConfigError(f"step must be positive, got {self.step}")
        # with unit tubes no transform is needed and arithmetic stays real
        self._axes = tuple(range(2, d.ndim)) if d.size != d.shape[0] * d.shape[1] else ()
        self.d_hat = self._fwd(d)

    # real-input transforms: only the non-redundant half of the spectrum
    def _fwd(self, x):
        return np.fft.rfftn(x, axes=self._axes) if self._axes else x

    def _inv(self, z):
        if not self._axes:
            return z
        return np.fft.irfftn(z, s=self.y.shape[2:], axes=self._axes)

    @property
    def code_shape(self) -> tuple:
        return (self.dictionary.shape[1], self.y.shape[1]) + self.y.shape[2:]

    def apply(self, x) -> np.ndarray:
        """``D * X``."""
        return self._inv(facewise(self.d_hat, self._fwd(np.asarray(x, dtype=np.float64))))

    def apply_adjoint(self, r) -> np.ndarray:
        """``D^T * R``."""
        dh = np.conj(np.swapaxes(self.d_hat, 0, 1))
        return self._inv(facewise(dh, self._fwd(r)))

    def residual(self, x) -> np.ndarray:
        """``W . (D * X - Y)`` (unmasked when no mask is set)."""
        dx = self.apply(x)
        if self.mask is not None:
            dx = self.mask * dx
        return dx - self.y_obs

    def data_term(self, x) -> float:
        r = self.residual(x)
        return 0.5 * float(np.vdot(r, r).real)

    def gradient(self, x) -> np.ndarray:
        """``D^T * (W . (D * X - Y))``."""
        return self.apply_adjoint(self.residual(x))

    def objective(self, x) -> float:
        return self.data_term(x) + self.lam * float(np.abs(x).sum())


def ista_map(p: ProxProblem, x) -> np.ndarray:
    """One proximal-gradient step ``T_{lam t}(X - t * grad)``."""
    x = np.asarray(x, dtype=np.float64)
    return shrink(x - p.step * p.gradient(x), p.lam * p.step)


@dataclass
class SolveTrace:
    """Per-iteration record; ``error`` is filled only when a monitor is given."""

    objective: list = field(default_factory=list)
    rel_change: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    error: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.objective)

    def record(self, obj, change, t0, err=None):
        self.objective.append(float(obj))
        self.rel_change.append(float(change))
        self.seconds.append(time.perf_counter() - t0)
        if err is not None:
            self.error.append(float(err))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["iter", "objective", "rel_change", "seconds"]
            if self.error:
                header.append("error")
            w.writerow(header)
            for k in range(len(self)):
                row = [k + 1, repr(self.objective[k]), repr(self.rel_change[k]),
                       f"{self.seconds[k]:.6f}"]
                if self.error:
                    row.append(repr(self.error[k]))
                w.writerow(row)


def _rel_change(new, old) -> float:
    return float(np.linalg.norm(new - old) / max(1.0, np.linalg.norm(old)))


def _start(p: ProxProblem, x0):
    if x0 is None:
        return np.zeros(p.code_shape)
    x0 = as_tensor(x0)
    if x0.shape != p.code_shape:
        raise ShapeError(f"x0 has shape {x0.shape}, expected {p.code_shape}")
    return np.array(x0, dtype=np.float64)


Monitor = Optional[Callable[[np.ndarray], float]]


def ista(p: ProxProblem, x0=None, max_iter: int = 500, tol: float = DEFAULT_TOL,
         monitor: Monitor = None):
    """Plain iterative shrinkage-thresholding."""
    x = _start(p, x0)
    trace = SolveTrace()
    t0 = time.perf_counter()
    for _ in range(max_iter):
        x_new = ista_map(p, x)
        change = _rel_change(x_new, x)
        x = x_new
        trace.record(p.objective(x), change, t0, monitor(x) if monitor else None)
        if change < tol:
            break
    return x, trace


def fista(p: ProxProblem, x0=None, max_iter: int = 500, tol: float = DEFAULT_TOL,
          monitor: Monitor = None):
    """ISTA with Nesterov momentum, ``t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2``."""
    x = _start(p, x0)
    z = x.copy()
    t = 1.0
    trace = SolveTrace()
    t0 = time.perf_counter()
    for _ in range(max_iter):
        x_new = ista_map(p, z)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        change = _rel_change(x_new, x)
        x, t = x_new, t_new
        trace.record(p.objective(x), change, t0, monitor(x) if monitor else None)
        if change < tol:
            break
    return x, trace


def column_objectives(p: ProxProblem, x) -> np.ndarray:
    """Objective split over the mode-2 columns (the independent signals)."""
    return _per_column(p.residual(x), x, p.lam)


def _tubal_mix(dx_hist, df_hist, f_hat):
    """Least-squares tubal coefficients for ``min ||F_k - dF * U||`` per signal.

    ``dx_hist``/``df_hist`` are ``C x P x n x m`` spectra (C signals, P
    slices), ``f_hat`` is ``C x P x n x 1``.  Returns ``(mix, status)`` where
    ``mix`` is the spectrum of ``(dX + dF) * U`` and ``status`` is 0 for a
    solved signal, 1 for a rank-deficient one and 2 for an all-zero history.
    """
    c, p, n, m = df_hist.shape
    if m > n:
        # more history columns than atoms can never have full column rank
        scale = np.abs(df_hist).reshape(c, -1).max(axis=1)
        return np.zeros((c, p, n, 1), dtype=np.complex128), np.where(scale == 0, 2, 1)
    q, r = np.linalg.qr(df_hist.reshape(c * p, n, m), mode="reduced")
    diag = np.abs(np.diagonal(r, axis1=1, axis2=2)).reshape(c, p, m)
    scale = diag.max(axis=(1, 2))
    # slices whose history vanishes carry no information and get U = 0
    live = diag.max(axis=2) > 1e-14 * scale[:, None]
    rel = diag / np.maximum(diag.max(axis=2, keepdims=True), np.finfo(float).tiny)
    deficient = np.any(live & np.any(rel <= 1e-10, axis=2), axis=1)
    status = np.where(scale == 0, 2, np.where(deficient, 1, 0))
    u = np.zeros((c * p, m, 1), dtype=np.complex128)
    ok = (live & (status == 0)[:, None]).reshape(-1)
    if ok.any():
        qh = np.conj(np.swapaxes(q[ok], 1, 2))
        u[ok] = np.linalg.solve(r[ok], qh @ f_hat.reshape(c * p, n, 1)[ok])
    mix = (dx_hist + df_hist).reshape(c * p, n, m) @ u
    return mix.reshape(c, p, n, 1), status


def _per_column(r, x, lam) -> np.ndarray:
    data = 0.5 * np.sum(np.moveaxis(r, 1, 0).reshape(r.shape[1], -1) ** 2, axis=1)
    l1 = np.sum(np.abs(np.moveaxis(x, 1, 0).reshape(x.shape[1], -1)), axis=1)
    return data + lam * l1


def ista_aa(p: ProxProblem, x0=None, m: int = DEFAULT_WINDOW, max_iter: int = 500,
            tol: float = DEFAULT_TOL, monitor: Monitor = None):
    """Anderson-accelerated ISTA with tubal mixing coefficients.

    Every mode-2 column ``X(:, j, ...)`` is an independent signal with its
    own Anderson history.  With ``F_i = G(X_i) - X_i`` the update is

        X_{k+1} = X_k + F_k - (dX + dF) * U,

    where ``dX``/``dF`` stack the last ``m_k = min(m, k)`` differences along
    mode 2 and ``U`` solves ``min_U ||F_k - dF * U||_F`` slice-wise by QR.
    A rank-deficient history loses its oldest column until the solve
    succeeds.  A candidate whose objective exceeds that of the plain step
    ``G(X_k)`` is rejected for that signal; the plain step is taken and its
    history is cleared.

    The least-squares problems are solved on the non-redundant half of the
    spectrum (real-input transform); the conjugate slices carry conjugate
    solutions, so nothing is lost and the candidate is exactly real.
    """
    if m < 1:
        raise ConfigError(f"history depth m must be >= 1, got {m}")
    x = _start(p, x0)
    shape = x.shape
    n_sig = shape[1]
    trailing = shape[2:]
    axes = tuple(range(2, x.ndim))
    bcast = (1, n_sig) + (1,) * len(trailing)
    trace = SolveTrace()
    t0 = time.perf_counter()

    def spec(z):                                   # P' x d x n
        z = np.fft.rfftn(z, axes=axes) if axes else z.astype(np.complex128)
        return np.moveaxis(z.reshape(z.shape[:2] + (-1,)), 2, 0)

    def unspec(zb, half_shape):
        z = np.moveaxis(zb, 0, 2).reshape(zb.shape[1:] + half_shape)
        return np.fft.irfftn(z, s=trailing, axes=axes) if axes else z.real.copy()

    half_shape = trailing[:-1] + (trailing[-1] // 2 + 1,) if trailing else ()
    r = p.residual(x)
    dxs: list = []  # spectra of X_{i+1} - X_i
    dfs: list = []  # spectra of F_{i+1} - F_i
    prev = None     # (x_hat, f_hat) of the previous iterate
    depth = np.zeros(n_sig, dtype=int)  # usable differences per signal
    for k in range(max_iter):
        g = shrink(x - p.step * p.apply_adjoint(r), p.lam * p.step)
        f = g - x
        if k == 0 and not np.any(f):
            trace.record(p.objective(x), 0.0, t0, monitor(x) if monitor else None)
            break
        x_hat, f_hat = spec(x), spec(f)
        if prev is not None:
            dxs.append(x_hat - prev[0])
            dfs.append(f_hat - prev[1])
            del dxs[:-m], dfs[:-m]
            depth = np.minimum(depth + 1, len(dxs))
        prev = (x_hat, f_hat)

        cand_hat = x_hat + f_hat
        mixed = np.zeros(n_sig, dtype=bool)
        pending = np.flatnonzero(depth > 0)
        if pending.size:
            hx = np.stack(dxs, axis=-1)            # P' x d x n x len
            hf = np.stack(dfs, axis=-1)
        while pending.size:
            retry = []
            for size in np.unique(depth[pending]):
                cols = pending[depth[pending] == size]
                dx = np.moveaxis(hx[:, :, cols, -size:], 2, 0)   # C x P' x d x size
                df = np.moveaxis(hf[:, :, cols, -size:], 2, 0)
                rhs = np.moveaxis(f_hat[:, :, cols], 2, 0)[..., None]
                mix, status = _tubal_mix(dx, df, rhs)
                good = status == 0
                cand_hat[:, :, cols[good]] -= np.moveaxis(mix[good, ..., 0], 0, 2)
                mixed[cols[good]] = True
                # drop the oldest column of a rank-deficient history and retry
                bad = cols[status == 1]
                depth[bad] -= 1
                retry.extend(bad[depth[bad] > 0])
                depth[cols[status == 2]] = 0
            pending = np.asarray(retry, dtype=int)

        r_g = p.residual(g)
        obj = _per_column(r_g, g, p.lam)
        x_new, r_new = g, r_g
        if mixed.any():
            cand = unspec(cand_hat, half_shape)
            r_c = p.residual(cand)
            obj_c = _per_column(r_c, cand, p.lam)
            take = mixed & (obj_c <= obj)
            sel = take.reshape(bcast)
            x_new = np.where(sel, cand, g)
            r_new = np.where(sel, r_c, r_g)
            obj = np.where(take, obj_c, obj)
            depth[mixed & ~take] = 0
        change = _rel_change(x_new, x)
        x, r = x_new, r_new
        trace.record(float(obj.sum()), change, t0, monitor(x) if monitor else None)
        if change < tol:
            break
    return x, trace


def solve(p: ProxProblem, solver: str, x0=None, max_iter: int = 500, tol: float = DEFAULT_TOL,
          m: int = DEFAULT_WINDOW, monitor: Monitor = None):
    """Dispatch to one of :data:`SOLVERS` by name."""
    if solver == "ista":
        return ista(p, x0, max_iter, tol, monitor)
    if solver == "fista":
        return fista(p, x0, max_iter, tol, monitor)
    if solver == "ista_aa":
        return ista_aa(p, x0, m, max_iter, tol, monitor)
    raise ConfigError(f"unknown solver {solver!r}; choose from {', '.join(SOLVERS)}")
