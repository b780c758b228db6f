import json

import numpy as np
import pytest

from oracles import bcirc_matrix
from tensordl.completion import random_mask
from tensordl.errors import ConfigError, ShapeError
from tensordl.recovery import (
    materialize,
    nsp_check,
    nsp_margin,
    null_space_basis,
    random_dictionary,
    recovery_experiment,
    grid_experiment,
    write_grid_csv,
)
from tensordl.tensor_core import fnorm, identity_tensor


def vec(x):
    return np.ravel(x, order="F")


# ---------------------------------------------------------------- operator

def test_identity_dictionary_is_permuted_identity():
    op = materialize(identity_tensor(3, [2]))
    m = op.matrix
    assert m.shape == (6, 6)
    assert np.array_equal(m @ m.T, np.eye(6))
    assert np.all((m == 0) | (m == 1))


def test_zero_mask_gives_empty_rows(rng):
    op = materialize(rng.standard_normal((4, 6, 2)), np.zeros((4, 1, 2)))
    assert op.matrix.shape == (0, 12)


def test_matrix_agrees_with_direct_application(rng):
    d = rng.standard_normal((4, 6, 2))
    mask = random_mask((4, 1, 2), 0.5, rng)
    op = materialize(d, mask)
    for _ in range(20):
        x = rng.standard_normal(op.code_shape)
        assert np.max(np.abs(op.matrix @ vec(x) - op.observed(op.apply(x)))) < 1e-10


def test_full_mask_matrix_is_block_circulant_up_to_ordering(rng):
    d = rng.standard_normal((3, 4, 3))
    op = materialize(d)
    # singular values are invariant to the row/column orderings
    assert np.allclose(np.linalg.svd(op.matrix, compute_uv=False),
                       np.linalg.svd(bcirc_matrix(d), compute_uv=False))


def test_operator_linearity(rng):
    op = materialize(rng.standard_normal((4, 5, 3)), random_mask((4, 1, 3), 0.6, rng))
    x, z = rng.standard_normal(op.code_shape), rng.standard_normal(op.code_shape)
    lhs = op.apply(2.0 * x - 0.5 * z)
    assert fnorm(lhs - (2.0 * op.apply(x) - 0.5 * op.apply(z))) < 1e-12 * max(1.0, fnorm(lhs))


def test_materialize_shape_error(rng):
    with pytest.raises(ShapeError):
        materialize(rng.standard_normal((4, 5, 3)), np.ones((4, 1, 2)))


# ---------------------------------------------------------------- kernel

def test_injective_operator_has_empty_kernel(rng):
    op = materialize(rng.standard_normal((8, 3, 2)))
    assert null_space_basis(op) == []


def test_duplicated_atom_kernel(rng):
    d = random_dictionary(5, 4, (3,), rng, duplicate=True)
    op = materialize(d)
    basis = null_space_basis(op)
    assert len(basis) == 3                                  # one tube of freedom
    for v in basis:
        assert fnorm(op.apply(v)) < 1e-8
        assert np.max(np.abs(v[2:])) < 1e-10              # only the twins are involved
        assert np.allclose(v[0], -v[1], atol=1e-10)
    g = np.stack([vec(v) for v in basis], axis=1)
    assert np.allclose(g.T @ g, np.eye(len(basis)), atol=1e-10)
    twin = np.zeros(op.code_shape)
    twin[0, 0, 0], twin[1, 0, 0] = 1.0, -1.0
    proj = g @ (g.T @ vec(twin))
    assert np.allclose(proj, vec(twin), atol=1e-10)


def test_margin_is_even(rng):
    v = rng.standard_normal((5, 1, 3))
    for supp in ([0], [1, 3], [0, 2, 4]):
        assert nsp_margin(v, supp) == nsp_margin(-v, supp)
    rows = np.abs(v.reshape(5, -1)).sum(axis=1)
    assert nsp_margin(v, [1, 3]) == pytest.approx(rows.sum() - 2 * rows[[1, 3]].sum())


# ---------------------------------------------------------------- NSP check

def test_injective_vacuous_pass(rng):
    op = materialize(rng.standard_normal((8, 3, 2)))
    for s in (1, 2, 3):
        rep = nsp_check(op, s)
        assert rep.verdict == "vacuous pass" and rep.satisfied


def test_duplicate_violates_nsp(rng):
    op = materialize(random_dictionary(5, 4, (3,), rng, duplicate=True))
    rep = nsp_check(op, 1, samples=200, seed=1)
    assert rep.verdict == "violated" and not rep.satisfied
    assert rep.margins["0"] <= 1e-9 and rep.margins["1"] <= 1e-9
    assert rep.exhaustive and rep.sample_count >= 200
    assert json.loads(rep.to_json())["verdict"] == "violated"


def test_well_conditioned_operator_passes_s1(rng):
    d = random_dictionary(4, 6, (2,), np.random.default_rng(12))
    mask = np.ones((4, 1, 2))
    mask[0, 0, 0] = 0.0
    op = materialize(d, mask)
    assert len(null_space_basis(op)) > 0
    rep = nsp_check(op, 1, samples=1000, seed=0)
    assert rep.verdict == "satisfied (sampled)"
    assert all(np.isfinite(list(rep.margins.values())))


def test_exhaustive_enumeration_counts(rng):
    op = materialize(random_dictionary(4, 12, (2,), rng))
    rep = nsp_check(op, 3, samples=20)
    assert rep.exhaustive
    assert len(rep.margins) == 12 + 66 + 220
    big = nsp_check(materialize(random_dictionary(4, 13, (1,), rng)), 2, samples=20)
    assert not big.exhaustive and big.margins == {}


def test_nsp_argument_validation(rng):
    op = materialize(rng.standard_normal((4, 5, 2)))
    with pytest.raises(ConfigError):
        nsp_check(op, 0)
    with pytest.raises(ConfigError):
        nsp_check(op, 6)
    with pytest.raises(ConfigError):
        nsp_check(op, 1, samples=0)


# ---------------------------------------------------------------- recovery trials

def test_identifiable_system_recovers():
    op = materialize(identity_tensor(4, [3]))
    res = recovery_experiment(op, 1, trials=5, seed=0)
    assert res.success_rate == 1.0


def test_duplicate_twin_support_fails_sometimes(rng):
    op = materialize(random_dictionary(5, 4, (3,), rng, duplicate=True))
    res = recovery_experiment(op, 1, trials=6, seed=0, support=[0])
    assert res.success_rate < 1.0


def test_dense_codes_with_undersampling_fail(rng):
    d = random_dictionary(4, 6, (2,), rng)
    op = materialize(d, random_mask((4, 1, 2), 0.5, rng))
    res = recovery_experiment(op, 6, trials=4, seed=0, max_iter=2000)
    assert res.success_rate <= 0.25


def test_grid_csv(tmp_path):
    rows, reports = grid_experiment([4], [1, 5], [1.0], m1=4, trailing=(2,), samples=20,
                                    trials=2)
    assert rows[1]["verdict"].startswith("skipped")
    path = tmp_path / "grid.csv"
    write_grid_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "d,s,mask_rho,verdict,success_rate"
    assert len(lines) == 3 and len(reports) == 1
