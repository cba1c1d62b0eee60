"""Structural identity suite behind ``bhchain verify``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fock import ChainOperator, ModelParams, build_current, build_hamiltonian, enumerate_basis
from .liouville import (
    build_operators,
    dissipator_L1,
    dissipator_L2,
    extract_deviation,
    maximally_mixed,
    propagate_to_steady_state,
    random_density_matrix,
    solve_deviation_direct,
)


@dataclass
class Check:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<48s} {self.value:.3e} <= {self.tolerance:.1e}"


def current_identity_error(L: int, N: int, J: float = 1.0, current: ChainOperator | None = None) -> float:
    """max |-i[H, I] - J^2 (n_L - n_1)/2| at U = 0."""
    b = enumerate_basis(L, N)
    H = build_hamiltonian(b, J, 0.0).matrix
    I = (current or build_current(b, J)).matrix
    lhs = (-1j * (H @ I - I @ H)).toarray()
    rhs = np.diag(J**2 * (b.occupation(L) - b.occupation(1)) / 2)
    return float(np.abs(lhs - rhs).max())


def structural_checks(L: int, N: int, mutate_current_sign: bool = False) -> list[Check]:
    p = ModelParams(L, N, U=1.0)
    ops = build_operators(p)
    b = ops.basis
    cur = ops.I
    if mutate_current_sign:
        cur = ChainOperator(b, -ops.I.matrix, True, "current")
    tag = f"(L={L},N={N})"
    one = np.eye(b.dim)
    imb = np.diag(ops.imbalance())
    l1 = dissipator_L1(one, ops.V)
    l2 = dissipator_L2(one, ops.V)
    ntot = sum(np.diag(b.occupation(s)) for s in range(1, L + 1))
    H = ops.H.toarray()
    return [
        Check(f"current identity at U=0 {tag}", current_identity_error(L, N, 1.0, cur), 1e-12),
        Check(f"L1(1) = 2(n_L - n_1) {tag}", float(np.abs(l1 - 2 * imb).max()), 1e-14),
        Check(f"L2(1) = -2(n_L - n_1) {tag}", float(np.abs(l2 + 2 * imb).max()), 1e-14),
        Check(f"L1(1) + L2(1) = 0 {tag}", float(np.abs(l1 + l2).max()), 1e-14),
        Check(f"H hermitian as stored {tag}", float(abs(ops.H.matrix - ops.H.matrix.conj().T).max()), 0.0),
        Check(f"I hermitian as stored {tag}", float(abs(ops.I.matrix - ops.I.matrix.conj().T).max()), 0.0),
        Check(f"tr(I) = 0 {tag}", abs(complex(ops.I.matrix.diagonal().sum())), 1e-12),
        Check(f"[H, N_tot] = 0 {tag}", float(np.abs(H @ ntot - ntot @ H).max()), 0.0),
    ]


def dynamical_checks(L: int, N: int, U: float = 1.0, seed: int = 0) -> list[Check]:
    tag = f"(L={L},N={N},U={U:g})"
    eq = ModelParams(L, N, U=U, dgamma=0.0)
    ops = build_operators(eq)
    R0 = random_density_matrix(ops.basis, seed)
    R, rep = propagate_to_steady_state(R0, eq, tol=1e-9, ops=ops)
    checks = [
        Check(f"dgamma=0 steady state = 1/dim {tag}", float(np.abs(R.data - np.eye(ops.dim) / ops.dim).max()), 1e-7),
        Check(f"trace drift, equilibrium run {tag}", rep.max_trace_drift, 1e-9),
        Check(f"hermiticity drift, equilibrium run {tag}", rep.max_hermiticity_drift, 1e-9),
    ]
    p = ModelParams(L, N, U=U)
    R, rep = propagate_to_steady_state(maximally_mixed(ops.basis), p, tol=1e-8, ops=ops)
    Xp = extract_deviation(R, p.dgamma)
    Xd = solve_deviation_direct(p, ops, linear_response=False)
    checks += [
        Check(f"propagation vs direct solve {tag}", float(np.abs(Xp.data - Xd.data).max()), 1e-6),
        Check(f"trace drift, driven run {tag}", rep.max_trace_drift, 1e-9),
        Check(f"hermiticity drift, driven run {tag}", rep.max_hermiticity_drift, 1e-9),
        Check(f"direct solve relative residual {tag}", Xd.meta["residual"], 1e-9),
    ]
    return checks


def run_suite(sizes=((4, 2), (6, 3)), mutate_current_sign: bool = False, seed: int = 0) -> list[Check]:
    out = []
    for L, N in sizes:
        out += structural_checks(L, N, mutate_current_sign)
        out += dynamical_checks(L, N, seed=seed)
    return out
