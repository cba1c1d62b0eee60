import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bhchain.fock import ModelParams, enumerate_basis
from bhchain.liouville import (
    DensityMatrix,
    SolverError,
    build_operators,
    dissipator_L1,
    dissipator_L2,
    drive,
    extract_deviation,
    master_rhs,
    maximally_mixed,
    propagate_to_steady_state,
    random_density_matrix,
    read_checkpoint,
    solve_deviation_direct,
    steady_state_residual,
    write_checkpoint,
)


def _proj(basis, occ):
    e = np.zeros(basis.dim)
    e[basis.index(occ)] = 1
    return np.outer(e, e).astype(complex)


@pytest.mark.parametrize("L,N", [(3, 1), (3, 2), (4, 3)])
def test_dissipators_on_identity(L, N):
    ops = build_operators(ModelParams(L, N))
    one = np.eye(ops.dim)
    imb = np.diag(ops.imbalance())
    assert np.abs(dissipator_L1(one, ops.V) - 2 * imb).max() <= 1e-14
    assert np.abs(dissipator_L2(one, ops.V) + 2 * imb).max() <= 1e-14
    assert np.abs(dissipator_L1(one, ops.V) + dissipator_L2(one, ops.V)).max() <= 1e-14


def test_dissipators_two_sites():
    ops = build_operators(ModelParams(2, 1))
    b = ops.basis
    R = _proj(b, (0, 1))
    assert np.allclose(dissipator_L1(R, ops.V), 2 * R - 2 * _proj(b, (1, 0)), atol=1e-15)
    R = _proj(b, (1, 0))
    assert np.allclose(dissipator_L2(R, ops.V), 2 * R - 2 * _proj(b, (0, 1)), atol=1e-15)


def test_dissipators_keep_type_and_check_basis():
    ops = build_operators(ModelParams(3, 2))
    R = maximally_mixed(ops.basis)
    assert isinstance(dissipator_L1(R, ops.V), DensityMatrix)
    other = maximally_mixed(enumerate_basis(3, 1))
    with pytest.raises(ValueError):
        dissipator_L1(other, ops.V)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dissipators_traceless_and_hermitian(seed):
    ops = build_operators(ModelParams(4, 2, U=0.5))
    R = random_density_matrix(ops.basis, seed)
    for f in (dissipator_L1, dissipator_L2):
        out = f(R, ops.V).data
        assert abs(np.trace(out)) <= 1e-12
        assert np.abs(out - out.conj().T).max() <= 1e-14
    rhs = master_rhs(R, ModelParams(4, 2, U=0.5), ops).data
    assert abs(np.trace(rhs)) <= 1e-12
    assert np.abs(rhs - rhs.conj().T).max() <= 1e-14


def test_master_rhs_examples():
    p0 = ModelParams(4, 2, U=1.0, dgamma=0.0)
    ops = build_operators(p0)
    R = maximally_mixed(ops.basis)
    assert np.abs(master_rhs(R, p0, ops).data).max() <= 1e-12
    p = ModelParams(4, 2, U=0.0)
    rhs = master_rhs(R, p, ops).data
    assert np.abs(rhs + 2 * p.dgamma * np.diag(ops.imbalance()) / ops.dim).max() <= 1e-15


def test_direct_solve_two_sites_by_hand():
    p = ModelParams(2, 1)
    X = solve_deviation_direct(p).data
    g = p.gamma
    # X = a sigma_z + q sigma_y in the basis (|1,0>, |0,1>)
    q = 1 / (1 + 8 * g**2)
    a = 2 * g * q
    assert np.allclose(X, [[a, -1j * q], [1j * q, -a]], atol=1e-10)
    assert abs(X[0, 1].real) <= 1e-12
    assert abs(np.trace(X)) <= 1e-12


@pytest.mark.parametrize("L,N,U", [(4, 2, 0.0), (5, 2, 1.0), (6, 3, 3.0)])
def test_direct_solve_properties(L, N, U):
    p = ModelParams(L, N, U=U)
    ops = build_operators(p)
    X = solve_deviation_direct(p, ops)
    assert abs(X.trace()) <= 1e-12
    assert X.hermiticity_error() <= 1e-12
    assert X.meta["residual"] <= 1e-10
    assert steady_state_residual(X, p, ops) <= 1e-10 * np.linalg.norm(drive(ops)) * 10


def test_direct_solve_cap():
    with pytest.raises(SolverError):
        solve_deviation_direct(ModelParams(6, 3), cap=50)


def test_residual_of_zero_is_drive_norm():
    p = ModelParams(5, 2)
    ops = build_operators(p)
    zero = np.zeros((ops.dim, ops.dim))
    r = steady_state_residual(zero, p, ops)
    assert r == pytest.approx(np.linalg.norm(2 * ops.imbalance() / ops.dim), rel=1e-14)
    assert r > 0


def test_small_gamma_limit_is_proportional_to_current():
    # at U = 0 the ansatz X = 4 I / (J^2 dim) solves the equation up to the dissipator
    # term, so its residual falls linearly with gamma
    res = []
    for g in (0.04, 0.02, 0.01):
        p = ModelParams(6, 3, gamma=g)
        ops = build_operators(p)
        res.append(steady_state_residual(4 * ops.I.toarray() / ops.dim, p, ops))
    assert res[0] / res[1] == pytest.approx(2, rel=0.02)
    assert res[1] / res[2] == pytest.approx(2, rel=0.02)


def test_extract_deviation():
    b = enumerate_basis(4, 2)
    assert np.abs(extract_deviation(maximally_mixed(b), 0.004).data).max() == 0
    with pytest.raises(ValueError):
        extract_deviation(maximally_mixed(b), 0.0)


def test_propagation_two_sites_matches_direct():
    p = ModelParams(2, 1)
    ops = build_operators(p)
    R, rep = propagate_to_steady_state(maximally_mixed(ops.basis), p, tol=1e-9, ops=ops)
    assert rep.converged and rep.residual < rep.tol
    X = extract_deviation(R, p.dgamma)
    Xd = solve_deviation_direct(p, ops, linear_response=False)
    assert np.abs(X.data - Xd.data).max() <= 1e-8
    assert rep.max_trace_drift <= 1e-9
    assert all(abs(tr - 1) <= 1e-9 for _, tr in rep.trace_samples)


def test_equilibrium_relaxes_to_identity():
    p = ModelParams(4, 2, U=1.0, dgamma=0.0)
    ops = build_operators(p)
    R, rep = propagate_to_steady_state(random_density_matrix(ops.basis, 3), p, tol=1e-9, ops=ops)
    assert rep.converged
    assert np.abs(R.data - np.eye(ops.dim) / ops.dim).max() <= 1e-7


def test_propagation_reports_non_convergence():
    p = ModelParams(4, 2, U=1.0)
    ops = build_operators(p)
    R, rep = propagate_to_steady_state(maximally_mixed(ops.basis), p, tol=1e-9, t_max=30.0, ops=ops)
    assert not rep.converged
    assert rep.t == pytest.approx(30.0)
    assert isinstance(R, DensityMatrix)


def test_extraction_halving_dgamma():
    # finite-dgamma deviation matrices differ by O(dgamma) relative when dgamma halves
    p = ModelParams(6, 3, U=1.0)
    ops = build_operators(p)
    X1 = solve_deviation_direct(p, ops, linear_response=False).data
    X2 = solve_deviation_direct(p.replace(dgamma=p.dgamma / 2), ops, linear_response=False).data
    X0 = solve_deviation_direct(p, ops).data
    d12 = np.linalg.norm(X1 - X2) / np.linalg.norm(X0)
    d10 = np.linalg.norm(X1 - X0) / np.linalg.norm(X0)
    assert d12 < 0.1
    # the difference is linear in dgamma: halving leaves half of the error
    assert d12 == pytest.approx(d10 / 2, rel=0.05)


def test_checkpoint_roundtrip(tmp_path):
    b = enumerate_basis(5, 3)
    R = random_density_matrix(b, 11)
    path = tmp_path / "r.bhrho"
    write_checkpoint(path, R)
    raw = path.read_bytes()
    assert raw.startswith(b"BHRHO v1 5 3 hermitian\n")
    assert len(raw) == len(b"BHRHO v1 5 3 hermitian\n") + 16 * b.dim**2
    back = read_checkpoint(path, b)
    assert np.array_equal(back.data.view(np.uint8), R.data.view(np.uint8))
    X = DensityMatrix(b, R.data + 1j * np.eye(b.dim))
    write_checkpoint(path, X)
    assert path.read_bytes().startswith(b"BHRHO v1 5 3 general\n")
    assert np.array_equal(read_checkpoint(path).data, X.data)


def _dense_deviation(ops, g1, g2):
    """Independent oracle: Kronecker superoperator and a dense LU solve with the trace pinned."""
    d = ops.dim
    H, V = ops.H.toarray(), ops.V.toarray()
    E = np.eye(d)
    left = lambda A: np.kron(E, A)  # column-stacked vec(A X)
    right = lambda B: np.kron(B.T, E)  # vec(X B)
    VdV, VVd = V.conj().T @ V, V @ V.conj().T
    sup = -1j * (left(H) - right(H))
    sup -= g1 * (left(VdV) + right(VdV) - 2 * np.kron(V.conj(), V))
    sup -= g2 * (left(VVd) + right(VVd) - 2 * np.kron(V.T, V.conj().T))
    rhs = drive(ops).flatten(order="F")
    sup[0] = E.flatten(order="F")
    rhs[0] = 0
    return np.linalg.solve(sup, rhs).reshape(d, d, order="F")


@pytest.mark.parametrize("L,N,U", [(3, 2, 0.0), (4, 2, 1.0), (4, 3, 10.0), (5, 2, 2.0)])
def test_direct_solve_matches_dense_superoperator(L, N, U):
    p = ModelParams(L, N, U=U)
    ops = build_operators(p)
    X = solve_deviation_direct(p, ops).data
    assert np.abs(X - _dense_deviation(ops, p.gamma, p.gamma)).max() <= 1e-8
