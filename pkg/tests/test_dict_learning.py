import csv

import numpy as np
import pytest

from instances import unit_atoms
from oracles import central_difference, normalize_columns, omp_matrix, opsgd_matrix
from tensordl.dict_learning import (
    LearnerState,
    LearnTrace,
    TrainConfig,
    atom_norms,
    init_dictionary,
    loss_gradient,
    opsgd_step,
    project_atoms,
    second_order_step,
    train,
)
from tensordl.errors import ConfigError, ShapeError
from tensordl.sparse_coding import OmpConfig, omp
from tensordl.tensor_core import fnorm, tprod, ttranspose


def stream(rng, shape=(6, 1, 3), n=12):
    return [rng.standard_normal(shape) for _ in range(n)]


# ---------------------------------------------------------------- projection

def test_projection_idempotent_and_scale_invariant(rng):
    d = project_atoms(rng.standard_normal((5, 4, 3)))
    assert np.allclose(atom_norms(d), 1.0, atol=1e-12)
    assert np.max(np.abs(project_atoms(d) - d)) < 1e-12
    scaled = d.copy()
    scaled[:, 2] *= 7.0
    assert np.max(np.abs(project_atoms(scaled) - d)) < 1e-12


def test_projection_replaces_zero_atom(rng):
    d = rng.standard_normal((5, 4, 3))
    d[:, 1] = 0.0
    p = project_atoms(d, np.random.default_rng(3))
    assert abs(atom_norms(p)[1] - 1.0) < 1e-12
    again = project_atoms(d, np.random.default_rng(3))
    assert np.array_equal(p, again)


def test_projection_is_nearest_point_per_atom(rng):
    d = rng.standard_normal((4, 3, 2, 2))
    p = project_atoms(d)
    for k in range(3):
        atom = d[:, k]
        # any other unit atom is at least as far away
        for _ in range(50):
            z = rng.standard_normal(atom.shape)
            z /= fnorm(z)
            assert fnorm(atom - p[:, k]) <= fnorm(atom - z) + 1e-12


# ---------------------------------------------------------------- gradient

def test_gradient_zero_cases(rng):
    d = unit_atoms(rng.standard_normal((5, 4, 3)))
    y = rng.standard_normal((5, 1, 3))
    assert not np.any(loss_gradient(d, np.zeros((4, 1, 3)), y))
    x = rng.standard_normal((4, 1, 3))
    assert fnorm(loss_gradient(d, x, tprod(d, x))) < 1e-12


@pytest.mark.parametrize("shape", [(5, 4, 3), (4, 3, 2, 3), (3, 3, 2, 2, 2)])
def test_gradient_finite_differences(rng, shape):
    d = rng.standard_normal(shape)
    x = rng.standard_normal((shape[1], 2) + shape[2:])
    y = rng.standard_normal((shape[0], 2) + shape[2:])
    g = loss_gradient(d, x, y)

    def loss(dd):
        r = tprod(dd, x) - y
        return 0.5 * float(np.sum(r * r))

    for _ in range(20):
        idx = tuple(int(rng.integers(s)) for s in shape)
        fd = central_difference(loss, d, idx)
        assert abs(fd - g[idx]) <= 1e-5 * max(1.0, abs(g[idx]))


# ---------------------------------------------------------------- OPSGD

def test_schedule_first_step():
    st = LearnerState(dictionary=np.ones((2, 1, 1)), a=10.0, b=5.0)
    assert st.eta(1) == pytest.approx(10.0 / 6.0)


def test_opsgd_exact_signal_leaves_dictionary(rng):
    d = unit_atoms(rng.standard_normal((6, 5, 3)))
    st = LearnerState(dictionary=d)
    new = opsgd_step(st, 2.0 * d[:, 3:4])
    assert new.t == 1 and new.last_step == pytest.approx(10 / 6)
    assert np.max(np.abs(new.dictionary - d)) < 1e-10


def test_opsgd_one_step_matrix_oracle():
    d0 = np.array([[1.0, 0.6], [0.0, 0.8], [0.0, 0.0]])
    y = np.array([[0.5], [1.0], [0.3]])
    st = LearnerState(dictionary=d0[:, :, None], omp_config=OmpConfig(max_atoms=1))
    new = opsgd_step(st, y[:, :, None])
    ref = opsgd_matrix(d0, [y], 10.0, 5.0, 1)[0]
    assert np.max(np.abs(new.dictionary[:, :, 0] - ref)) < 1e-12


def test_opsgd_keeps_unit_atoms(rng):
    st = LearnerState(dictionary=unit_atoms(rng.standard_normal((6, 5, 3))))
    for y in stream(rng):
        st = opsgd_step(st, y)
        assert np.allclose(atom_norms(st.dictionary), 1.0, atol=1e-10)


def test_step_rejects_nonconforming_signal(rng):
    st = LearnerState(dictionary=unit_atoms(rng.standard_normal((6, 5, 3))))
    with pytest.raises(ShapeError):
        opsgd_step(st, np.ones((6, 1, 2)))


# ---------------------------------------------------------------- second order

def test_second_order_exact_signal(rng):
    d = unit_atoms(rng.standard_normal((6, 5, 3)))
    st = second_order_step(LearnerState(dictionary=d), 1.5 * d[:, 0:1])
    assert st.t == 1
    assert fnorm(tprod(d, st.A) - st.B) < 1e-10
    assert np.max(np.abs(st.dictionary - d)) < 1e-10


def test_second_order_aggregates_term_by_term(rng):
    st = LearnerState(dictionary=unit_atoms(rng.standard_normal((6, 5, 2, 2))))
    ys = stream(rng, (6, 1, 2, 2), 8)
    codes = []
    for y in ys:
        codes.append(omp(st.dictionary, y, st.omp_config).coeffs)
        d_before = st.dictionary
        st = second_order_step(st, y)
        assert np.allclose(atom_norms(st.dictionary), 1.0, atol=1e-10)
    a_ref = sum(tprod(x, ttranspose(x)) for x in codes)
    b_ref = sum(tprod(y, ttranspose(x)) for x, y in zip(codes, ys))
    assert fnorm(st.A - a_ref) <= 1e-12 * fnorm(a_ref)
    assert fnorm(st.B - b_ref) <= 1e-12 * fnorm(b_ref)
    assert fnorm(ttranspose(st.A) - st.A) <= 1e-10 * fnorm(st.A)
    # aggregated gradient equals the sum of per-signal gradients at a fixed D
    agg = (tprod(d_before, st.A) - st.B) / st.t
    terms = sum(loss_gradient(d_before, x, y) for x, y in zip(codes, ys)) / st.t
    assert fnorm(agg - terms) <= 1e-10 * fnorm(terms)


def test_second_order_zero_signal_skips_update(rng):
    d = unit_atoms(rng.standard_normal((6, 5, 3)))
    st = second_order_step(LearnerState(dictionary=d), np.zeros((6, 1, 3)))
    assert st.t == 1 and st.last_step == 0.0
    assert np.array_equal(st.dictionary, d)


# ---------------------------------------------------------------- training loop

def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(method="ksvd")
    with pytest.raises(ConfigError):
        TrainConfig(n_atoms=4, max_atoms=5)
    with pytest.raises(ConfigError):
        train([], TrainConfig())


def test_init_uses_training_signals(rng):
    sig = stream(rng, n=5)
    d = init_dictionary(sig, 7, np.random.default_rng(1))
    assert d.shape == (6, 7, 3)
    assert np.allclose(atom_norms(d), 1.0)
    hits = sum(any(np.allclose(d[:, k:k + 1], s / fnorm(s)) for s in sig) for k in range(7))
    assert hits == 5


@pytest.mark.parametrize("method", ["opsgd", "second-order"])
def test_single_signal_error_decreases(rng, method):
    d = unit_atoms(rng.standard_normal((6, 4, 3)))
    y = rng.standard_normal((6, 1, 3))
    _, tr = train([y] * 10, TrainConfig(method=method, n_atoms=4, max_atoms=1), dictionary=d)
    assert all(b <= a + 1e-8 for a, b in zip(tr.recon_error, tr.recon_error[1:]))
    assert tr.recon_error[-1] < tr.recon_error[0]


def test_train_is_reproducible(rng):
    sig = stream(rng, n=20)
    cfg = TrainConfig(n_atoms=5, max_atoms=2, seed=4, epochs=2)
    d1, t1 = train(sig, cfg)
    d2, t2 = train(sig, cfg)
    assert np.array_equal(d1, d2) and t1.recon_error == t2.recon_error
    assert len(t1) == 40 and t1.step == list(range(1, 41))


def test_matrix_case_opsgd_trajectory(rng):
    sig = [rng.standard_normal((8, 1, 1)) for _ in range(15)]
    d0 = normalize_columns(rng.standard_normal((8, 10)))
    cfg = TrainConfig(n_atoms=10, max_atoms=3, shuffle=False, normalize=False)
    d, _ = train(sig, cfg, dictionary=d0[:, :, None])
    ref = opsgd_matrix(d0, [s[:, :, 0] for s in sig], 10.0, 5.0, 3)[-1]
    assert np.max(np.abs(d[:, :, 0] - ref)) < 1e-10


def test_learn_trace_csv(tmp_path, rng):
    _, tr = train(stream(rng, n=4), TrainConfig(n_atoms=3, max_atoms=1))
    path = tmp_path / "learn.csv"
    tr.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["step", "eta_or_step", "recon_error", "seconds"]
    assert len(rows) == 5
    assert float(rows[1][1]) == pytest.approx(10 / 6)
    assert isinstance(tr, LearnTrace)


def test_omp_oracle_consistency_on_matrix_stream(rng):
    # the oracle and the package OMP must pick the same atoms for the trajectory test above
    d = normalize_columns(rng.standard_normal((8, 10)))
    y = rng.standard_normal((8, 1))
    code = omp(d[:, :, None], y[:, :, None], max_atoms=3)
    _, supp = omp_matrix(d, y, 3, 1e-6 * np.linalg.norm(y))
    assert code.support == supp
