"""Empirical checks of the null space property for masked t-product operators.

The operator ``P: X -> W . (D * X)`` maps ``d x 1 x trailing`` codes to
observed entries.  It is materialised as an ordinary matrix so its kernel
can be computed exactly; the null space property is then probed on random
kernel elements.  Verdicts are sampled evidence, never a proof.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .prox_solvers import ProxProblem, ista_aa
from .tensor_core import as_tensor, fnorm, tprod, ttranspose

NSP_TOL = 1e-9
RECOVERY_THRESHOLD = 1e-3
EXHAUSTIVE_MAX_D = 12
EXHAUSTIVE_MAX_S = 3


def _vec(x) -> np.ndarray:
    return np.ravel(x, order="F")


@dataclass
class MeasurementOperator:
    dictionary: np.ndarray
    mask: np.ndarray
    matrix: np.ndarray

    @property
    def code_shape(self) -> tuple:
        d = self.dictionary
        return (d.shape[1], 1) + d.shape[2:]

    def apply(self, x) -> np.ndarray:
        """``W . (D * X)`` as a full-size tensor (zeros where unobserved)."""
        return self.mask * tprod(self.dictionary, x)

    def observed(self, y) -> np.ndarray:
        """Observed entries of a signal, in the row order of ``matrix``."""
        return _vec(y)[_vec(self.mask) == 1]


def materialize(dictionary, mask=None) -> MeasurementOperator:
    """Matrix of ``P`` on Fortran-ordered code vectors, observed rows only."""
    d = as_tensor(dictionary, min_order=3)
    sig_shape = (d.shape[0], 1) + d.shape[2:]
    mask = np.ones(sig_shape) if mask is None else as_tensor(mask)
    if mask.shape != sig_shape:
        raise ShapeError(f"mask {mask.shape} does not match signal shape {sig_shape}")
    op = MeasurementOperator(d, mask, np.zeros((0, 0)))
    n = math.prod(op.code_shape)
    rows = _vec(mask) == 1
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cols.append(_vec(op.apply(np.reshape(e, op.code_shape, order="F")))[rows])
    op.matrix = np.stack(cols, axis=1) if cols else np.zeros((int(rows.sum()), 0))
    return op


def null_space_basis(op: MeasurementOperator, tol: float = 1e-10) -> list:
    """Orthonormal kernel basis of ``P`` as code tensors."""
    a = op.matrix
    n = a.shape[1]
    if a.size == 0:
        vh = np.eye(n)
        rank = 0
    else:
        _, s, vh = np.linalg.svd(a, full_matrices=True)
        smax = s[0] if s.size else 0.0
        rank = int(np.sum(s > tol * smax)) if smax > 0 else 0
    return [np.reshape(v, op.code_shape, order="F") for v in vh[rank:]]


def _row_l1(v: np.ndarray) -> np.ndarray:
    return np.abs(v.reshape(v.shape[0], -1)).sum(axis=1)


def nsp_margin(v, support) -> float:
    """``||V_Sbar||_1 - ||V_S||_1`` for tubal-row support ``support``."""
    rows = _row_l1(np.asarray(v))
    inside = rows[list(support)].sum()
    return float(rows.sum() - 2.0 * inside)


@dataclass
class NspReport:
    s: int
    kernel_dim: int
    sample_count: int
    exhaustive: bool
    worst_margin: float | None
    verdict: str
    margins: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        return self.verdict != "violated"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _key(support) -> str:
    return ",".join(str(i) for i in support)


def nsp_check(op: MeasurementOperator, s: int, samples: int = 1000, seed=0,
              basis: list | None = None) -> NspReport:
    """Probe the null space property of order ``s`` on random kernel elements.

    Samples are unit-norm random combinations of the kernel basis plus the
    basis tensors themselves.  For ``d <= 12, s <= 3`` every support is
    enumerated and reported; otherwise only the worst support per sample
    (its ``s`` heaviest tubal rows) is evaluated.
    """
    d = op.code_shape[0]
    if not 1 <= s <= d:
        raise ConfigError(f"support size must lie in [1, {d}], got {s}")
    if samples < 1:
        raise ConfigError(f"samples must be positive, got {samples}")
    basis = null_space_basis(op) if basis is None else basis
    exhaustive = d <= EXHAUSTIVE_MAX_D and s <= EXHAUSTIVE_MAX_S
    if not basis:
        return NspReport(s, 0, 0, exhaustive, None, "vacuous pass")
    rng = np.random.default_rng(seed)
    stack = np.stack([_vec(b) for b in basis], axis=1)
    coef = rng.standard_normal((len(basis), samples))
    vs = (stack @ coef).T
    vs /= np.linalg.norm(vs, axis=1, keepdims=True)
    vs = np.concatenate([vs, stack.T], axis=0)
    rows = np.stack([_row_l1(np.reshape(v, op.code_shape, order="F")) for v in vs])
    total = rows.sum(axis=1)

    margins: dict = {}
    verdicts: dict = {}
    if exhaustive:
        for size in range(1, s + 1):
            for supp in itertools.combinations(range(d), size):
                m = float(np.min(total - 2.0 * rows[:, list(supp)].sum(axis=1)))
                margins[_key(supp)] = m
                verdicts[_key(supp)] = m > NSP_TOL
        worst = min(margins.values())
    else:
        heaviest = -np.sort(-rows, axis=1)[:, :s].sum(axis=1)
        worst = float(np.min(total - 2.0 * heaviest))
    verdict = "satisfied (sampled)" if worst > NSP_TOL else "violated"
    return NspReport(s, len(basis), len(vs), exhaustive, worst, verdict, margins, verdicts)


@dataclass
class RecoveryResult:
    success_rate: float
    errors: list


def sparse_code(shape, support, rng) -> np.ndarray:
    x = np.zeros(shape)
    x[list(support)] = rng.standard_normal((len(support),) + tuple(shape[1:]))
    return x


def recovery_experiment(op: MeasurementOperator, s: int, trials: int = 20, seed=0,
                        support=None, max_iter: int = 5000, m: int = 5) -> RecoveryResult:
    """Fraction of tubal ``s``-sparse codes recovered by small-lambda ISTA-AA.

    ``lam = 1e-4 * max|D^T * Y|``; a trial succeeds when the relative code
    error is below 1e-3.  ``support`` fixes the support instead of drawing it.
    """
    d = op.code_shape[0]
    if not 1 <= s <= d:
        raise ConfigError(f"support size must lie in [1, {d}], got {s}")
    rng = np.random.default_rng(seed)
    dt = ttranspose(op.dictionary)
    errors = []
    for _ in range(trials):
        supp = support if support is not None else rng.choice(d, size=s, replace=False)
        x = sparse_code(op.code_shape, supp, rng)
        y = op.apply(x)
        lam = 1e-4 * float(np.max(np.abs(tprod(dt, y))))
        prob = ProxProblem(op.dictionary, y, lam, mask=op.mask)
        xr, _ = ista_aa(prob, None, m=m, max_iter=max_iter, tol=1e-13)
        errors.append(fnorm(xr - x) / fnorm(x))
    ok = sum(e < RECOVERY_THRESHOLD for e in errors)
    return RecoveryResult(ok / trials if trials else 0.0, errors)


def random_dictionary(m1: int, d: int, trailing, rng, duplicate: bool = False) -> np.ndarray:
    """Gaussian unit-norm atoms; ``duplicate`` copies atom 0 into atom 1."""
    D = rng.standard_normal((m1, d) + tuple(trailing))
    if duplicate and d > 1:
        D[:, 1] = D[:, 0]
    norms = np.sqrt((D ** 2).sum(axis=tuple(i for i in range(D.ndim) if i != 1)))
    shape = [1] * D.ndim
    shape[1] = d
    return D / norms.reshape(shape)


def grid_experiment(d_grid, s_grid, rho_grid, m1: int, trailing, seed=0, samples: int = 200,
                    trials: int = 10, duplicate: bool = False):
    """NSP verdict and recovery rate on every (d, s, rho) combination.

    Returns ``(rows, reports)``; rows follow the CSV schema
    ``d,s,mask_rho,verdict,success_rate``.
    """
    from .completion import random_mask

    rows, reports = [], []
    for i, (d, s, rho) in enumerate(itertools.product(d_grid, s_grid, rho_grid)):
        rng = np.random.default_rng([int(seed), i])
        D = random_dictionary(m1, d, trailing, rng, duplicate)
        mask = random_mask((m1, 1) + tuple(trailing), rho, rng)
        op = materialize(D, mask)
        if s > d:
            rows.append({"d": d, "s": s, "mask_rho": rho, "verdict": "skipped (s > d)",
                         "success_rate": ""})
            continue
        rep = nsp_check(op, s, samples, rng)
        # twins carry the support so a violation is observable in recovery
        supp = list(range(s)) if duplicate else None
        res = recovery_experiment(op, s, trials, rng, support=supp)
        rows.append({"d": d, "s": s, "mask_rho": rho, "verdict": rep.verdict,
                     "success_rate": res.success_rate})
        reports.append({"d": d, "s": s, "mask_rho": rho, **rep.to_dict()})
    return rows, reports


def write_grid_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["d", "s", "mask_rho", "verdict", "success_rate"])
        w.writeheader()
        w.writerows(rows)
