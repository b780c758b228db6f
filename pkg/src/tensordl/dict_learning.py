"""Online dictionary learning under the t-product.

Two update rules share the same sparse-coding stage (tensor OMP):

* projected stochastic gradient descent with step ``a / (b + t)``;
* a second-order rule that accumulates ``A = sum X * X^T`` and
  ``B = sum Y * X^T`` and takes a projected gradient step on the averaged
  surrogate.

Atoms are lateral slices ``D(:, k, :, ...)`` constrained to unit
Frobenius norm.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .sparse_coding import OmpConfig, SparseCode, omp
from .tensor_core import as_tensor, fnorm, tprod, ttranspose
from .tensor_linalg import max_slice_eigenvalue
from .seeding import fork

METHODS = ("opsgd", "second-order")
ZERO_ATOM = 1e-12


def atom_norms(d) -> np.ndarray:
    d = np.asarray(d)
    return np.sqrt(np.sum(np.moveaxis(d, 1, 0).reshape(d.shape[1], -1) ** 2, axis=1))


def project_atoms(d, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Scale every lateral atom to unit Frobenius norm.

    Atoms with norm below 1e-12 are replaced by a random unit atom drawn
    from ``rng`` (a fixed-seed generator when none is given).
    """
    d = np.array(as_tensor(d), dtype=np.float64)
    norms = atom_norms(d)
    dead = np.flatnonzero(norms < ZERO_ATOM)
    if dead.size:
        rng = rng if rng is not None else np.random.default_rng(0)
        for k in dead:
            atom = rng.standard_normal(d[:, k].shape)
            d[:, k] = atom
            norms[k] = fnorm(atom)
    shape = [1] * d.ndim
    shape[1] = d.shape[1]
    return d / norms.reshape(shape)


def loss_gradient(d, x, y) -> np.ndarray:
    """Gradient ``(D * X - Y) * X^T`` of ``0.5 * ||D * X - Y||_F^2`` in ``D``."""
    if isinstance(x, SparseCode):
        x = x.coeffs
    return tprod(tprod(d, x) - np.asarray(y, dtype=np.float64), ttranspose(x))


@dataclass
class LearnerState:
    """State of an online learner after ``t`` processed signals.

    ``last_step`` is the step size used by the latest update and
    ``last_error`` the relative OMP residual of the latest signal, measured
    with the dictionary before the update.
    """

    dictionary: np.ndarray
    t: int = 0
    a: float = 10.0
    b: float = 5.0
    omp_config: OmpConfig = field(default_factory=OmpConfig)
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    last_step: float = 0.0
    last_error: float = 0.0

    def eta(self, t: int) -> float:
        return self.a / (self.b + t)


def _code(state: LearnerState, y) -> tuple:
    y = as_tensor(y)
    d = state.dictionary
    if y.ndim != d.ndim or y.shape[0] != d.shape[0] or y.shape[2:] != d.shape[2:]:
        raise ShapeError(f"signal {y.shape} does not conform to dictionary {d.shape}")
    code = omp(d, y, state.omp_config)
    ny = fnorm(y)
    err = code.residual_norms[-1] / ny if ny > 0 else 0.0
    return y, code, err


def opsgd_step(state: LearnerState, y) -> LearnerState:
    """One projected stochastic gradient step, ``eta_t = a / (b + t)``."""
    y, code, err = _code(state, y)
    t = state.t + 1
    eta = state.eta(t)
    grad = loss_gradient(state.dictionary, code.coeffs, y)
    d = project_atoms(state.dictionary - eta * grad, state.rng)
    return replace(state, dictionary=d, t=t, last_step=eta, last_error=err)


def second_order_step(state: LearnerState, y) -> LearnerState:
    """Aggregated update ``D <- Proj(D - (D * A - B) / (t L))``.

    ``L = lambda_max(A) / t`` is the Lipschitz constant of the averaged
    surrogate ``(1/t) sum_k 0.5 ||D * X_k - Y_k||^2``, so the step on
    ``D * A - B`` is ``1 / lambda_max(A)``.
    """
    y, code, err = _code(state, y)
    x = code.coeffs
    xt = ttranspose(x)
    a_new = tprod(x, xt)
    b_new = tprod(y, xt)
    A = a_new if state.A is None else state.A + a_new
    B = b_new if state.B is None else state.B + b_new
    t = state.t + 1
    lam_max = max_slice_eigenvalue(A)
    if lam_max <= 1e-12:
        return replace(state, A=A, B=B, t=t, last_step=0.0, last_error=err)
    lip = lam_max / t
    step = 1.0 / (t * lip)
    d = state.dictionary
    d = project_atoms(d - step * (tprod(d, A) - B), state.rng)
    return replace(state, dictionary=d, A=A, B=B, t=t, last_step=step, last_error=err)


@dataclass
class LearnTrace:
    step: list = field(default_factory=list)
    eta_or_step: list = field(default_factory=list)
    recon_error: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.step)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "eta_or_step", "recon_error", "seconds"])
            for row in zip(self.step, self.eta_or_step, self.recon_error, self.seconds):
                w.writerow([row[0], repr(row[1]), repr(row[2]), f"{row[3]:.6f}"])


@dataclass(frozen=True)
class TrainConfig:
    method: str = "opsgd"
    n_atoms: int = 24
    max_atoms: int = 6
    omp_tol: Optional[float] = None
    a: float = 10.0
    b: float = 5.0
    epochs: int = 1
    shuffle: bool = True
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.n_atoms < 1:
            raise ConfigError(f"n_atoms must be positive, got {self.n_atoms}")
        if self.max_atoms < 1 or self.max_atoms > self.n_atoms:
            raise ConfigError(f"max_atoms must lie in [1, n_atoms], got {self.max_atoms}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.b < 0 or self.a <= 0:
            raise ConfigError("schedule needs a > 0 and b >= 0")


def init_dictionary(signals: Sequence[np.ndarray], n_atoms: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Atoms drawn as distinct random training signals, then projected.

    When there are fewer signals than atoms the rest are Gaussian.
    """
    first = as_tensor(signals[0])
    n = len(signals)
    pick = rng.permutation(n)[: min(n, n_atoms)]
    atoms = [as_tensor(signals[i]) for i in pick]
    while len(atoms) < n_atoms:
        atoms.append(rng.standard_normal(first.shape))
    return project_atoms(np.concatenate(atoms, axis=1), rng)


def train(signals, config: TrainConfig = TrainConfig(), dictionary=None):
    """Run an online learner over ``signals`` and return ``(dictionary, trace)``.

    ``signals`` is a sequence of ``M1 x 1 x ...`` tensors; each epoch visits
    them in a seeded random order (or in order when ``shuffle`` is off).
    With ``normalize`` every signal is scaled to unit Frobenius norm first,
    which keeps the ``a / (b + t)`` schedule independent of the pixel scale.
    """
    signals = [as_tensor(y) for y in signals]
    if not signals:
        raise ConfigError("training stream is empty")
    if config.normalize:
        signals = [y / n if (n := fnorm(y)) > 0 else y for y in signals]
    if dictionary is None:
        dictionary = init_dictionary(signals, config.n_atoms, fork(config.seed, "dict-init"))
    state = LearnerState(
        dictionary=project_atoms(dictionary),
        a=config.a,
        b=config.b,
        omp_config=OmpConfig(config.max_atoms, config.omp_tol),
        rng=fork(config.seed, "projection"),
    )
    order_rng = fork(config.seed, "stream")
    step_fn = opsgd_step if config.method == "opsgd" else second_order_step
    trace = LearnTrace()
    t0 = time.perf_counter()
    for _ in range(config.epochs):
        order = order_rng.permutation(len(signals)) if config.shuffle else range(len(signals))
        for i in order:
            state = step_fn(state, signals[i])
            trace.step.append(state.t)
            trace.eta_or_step.append(state.last_step)
            trace.recon_error.append(state.last_error)
            trace.seconds.append(time.perf_counter() - t0)
    return state.dictionary, trace
