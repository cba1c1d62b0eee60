"""Boundary-driven master equation on the fixed-N Fock space.

The density matrix evolves as

    dR/dt = -i[H, R] - gamma1 * L1(R) - gamma2 * L2(R)
    L1(R) = V^+V R + R V^+V - 2 V R V^+
    L2(R) = V V^+ R + R V V^+ - 2 V^+ R V

with V = a_1^+ a_L.  Writing the steady state as 1/dim + dgamma * X, the
deviation X solves a linear equation with the traceless source
2 (n_L - n_1) / dim.  Two independent routes to X live here: explicit
time propagation and a preconditioned Krylov solve.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.integrate import RK45

from .fock import (
    ChainOperator,
    FockBasis,
    ModelParams,
    build_current,
    build_hamiltonian,
    build_jump_operator,
    build_number_operator,
    enumerate_basis,
)

log = logging.getLogger(__name__)

HERMITICITY_TOL = 1e-10
DIRECT_SOLVE_CAP = 2500


class SolverError(RuntimeError):
    pass


@dataclass(eq=False)
class DensityMatrix:
    basis: FockBasis
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        d = self.basis.dim
        if self.data.shape != (d, d):
            raise ValueError(f"density matrix shape {self.data.shape} does not match basis dimension {d}")

    @property
    def dim(self) -> int:
        return self.basis.dim

    def trace(self) -> complex:
        return np.trace(self.data)

    def hermiticity_error(self) -> float:
        return float(np.abs(self.data - self.data.conj().T).max())

    def symmetrized(self) -> "DensityMatrix":
        return DensityMatrix(self.basis, 0.5 * (self.data + self.data.conj().T), dict(self.meta))

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.basis, self.data.copy(), dict(self.meta))


def maximally_mixed(basis: FockBasis) -> DensityMatrix:
    return DensityMatrix(basis, np.eye(basis.dim, dtype=complex) / basis.dim)


def random_density_matrix(basis: FockBasis, rng: np.random.Generator | int | None = None) -> DensityMatrix:
    """Full-rank random state G G^+ / tr with a complex Ginibre G."""
    rng = np.random.default_rng(rng)
    d = basis.dim
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = g @ g.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(basis, rho / np.trace(rho).real)


@dataclass(frozen=True, eq=False)
class ChainOperators:
    """Everything the master equation needs for one parameter point."""

    basis: FockBasis
    H: ChainOperator
    I: ChainOperator
    V: ChainOperator
    n1: ChainOperator
    nL: ChainOperator

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def VdV(self) -> np.ndarray:
        """Diagonal of V^+V = n_L (n_1 + 1)."""
        s = self.basis.states
        return (s[:, -1] * (s[:, 0] + 1)).astype(float)

    @property
    def VVd(self) -> np.ndarray:
        """Diagonal of V V^+ = n_1 (n_L + 1)."""
        s = self.basis.states
        return (s[:, 0] * (s[:, -1] + 1)).astype(float)

    def imbalance(self) -> np.ndarray:
        """Diagonal of n_L - n_1."""
        s = self.basis.states
        return (s[:, -1] - s[:, 0]).astype(float)


def build_operators(params: ModelParams, basis: FockBasis | None = None, memory_cap=None) -> ChainOperators:
    if params.L < 2:
        raise ValueError(f"boundary driving needs L >= 2, got L={params.L}")
    if basis is None:
        kw = {} if memory_cap is None else {"memory_cap": memory_cap}
        basis = enumerate_basis(params.L, params.N, **kw)
    return ChainOperators(
        basis=basis,
        H=build_hamiltonian(basis, params.J, params.U),
        I=build_current(basis, params.J),
        V=build_jump_operator(basis),
        n1=build_number_operator(basis, 1),
        nL=build_number_operator(basis, params.L),
    )


def _raw(R, V: ChainOperator) -> np.ndarray:
    data = R.data if isinstance(R, DensityMatrix) else np.asarray(R)
    if isinstance(R, DensityMatrix) and R.basis is not V.basis:
        if (R.basis.L, R.basis.N) != (V.basis.L, V.basis.N):
            raise ValueError("density matrix and operator live on different bases")
    if data.shape != V.matrix.shape:
        raise ValueError(f"shape mismatch: matrix {data.shape} vs operator {V.matrix.shape}")
    return data


def _wrap(like, data):
    if isinstance(like, DensityMatrix):
        return DensityMatrix(like.basis, data)
    return data


def _sandwich(A, X: np.ndarray) -> np.ndarray:
    """A X A^+ for sparse A and dense X."""
    return A @ (A @ X.conj().T).conj().T


def dissipator_L1(R, V: ChainOperator):
    X = _raw(R, V)
    v = V.matrix
    vdv = (v.conj().T @ v).diagonal()
    out = vdv[:, None] * X + X * vdv[None, :] - 2 * _sandwich(v, X)
    return _wrap(R, out)


def dissipator_L2(R, V: ChainOperator):
    X = _raw(R, V)
    v = V.matrix
    vvd = (v @ v.conj().T).diagonal()
    out = vvd[:, None] * X + X * vvd[None, :] - 2 * _sandwich(v.conj().T.tocsr(), X)
    return _wrap(R, out)


class _Liouvillian:
    """Fast application of -i[H, .] - g1 L1 - g2 L2 for fixed rates."""

    def __init__(self, ops: ChainOperators, g1: float, g2: float):
        self.ops = ops
        self.g1, self.g2 = g1, g2
        self.H = ops.H.matrix
        self.HT = self.H.T.tocsr()
        self.V = ops.V.matrix
        self.Vd = self.V.conj().T.tocsr()
        self.A = g1 * ops.VdV + g2 * ops.VVd

    def __call__(self, X: np.ndarray) -> np.ndarray:
        comm = self.H @ X - (self.HT @ X.T).T
        out = -1j * comm - (self.A[:, None] * X + X * self.A[None, :])
        if self.g1:
            out += 2 * self.g1 * _sandwich(self.V, X)
        if self.g2:
            out += 2 * self.g2 * _sandwich(self.Vd, X)
        return out


def master_rhs(R, params: ModelParams, ops: ChainOperators):
    X = _raw(R, ops.H)
    out = _Liouvillian(ops, params.gamma1, params.gamma2)(X)
    return _wrap(R, out)


def drive(ops: ChainOperators) -> np.ndarray:
    """Source term 2 (n_L - n_1) / dim of the linear-response equation."""
    return np.diag(2 * ops.imbalance() / ops.dim).astype(complex)


def steady_state_residual(Rt, params: ModelParams, ops: ChainOperators | None = None) -> float:
    """Frobenius norm of -i[H,X] - gamma (L1 + L2)(X) - 2 (n_L - n_1)/dim."""
    ops = ops or build_operators(params)
    X = _raw(Rt, ops.H)
    lhs = _Liouvillian(ops, params.gamma, params.gamma)(X)
    return float(np.linalg.norm(lhs - drive(ops)))


def extract_deviation(R_steady, dGamma: float) -> DensityMatrix:
    if dGamma == 0:
        raise ValueError("cannot extract the linear-response deviation at dgamma == 0")
    R = R_steady if isinstance(R_steady, DensityMatrix) else None
    data = R_steady.data if R is not None else np.asarray(R_steady, dtype=complex)
    d = data.shape[0]
    X = (data - np.eye(d) / d) / dGamma
    if R is None:
        return X
    return DensityMatrix(R.basis, X, {"dgamma": dGamma})


@dataclass
class PropagationReport:
    t: float
    steps: int
    residual: float  # window-averaged ||dR/dt||, relative to the drive norm
    converged: bool
    tol: float
    instantaneous_residual: float = np.inf
    max_trace_drift: float = 0.0
    max_hermiticity_drift: float = 0.0
    symmetrizations: int = 0
    trace_samples: list = field(default_factory=list)  # (t, trace) at every check

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("trace_samples")
        return d


def spectral_radius_bound(ops: ChainOperators, g1: float, g2: float) -> float:
    """Gershgorin-type upper bound on the spectral radius of the Liouvillian."""
    H = ops.H.matrix
    centre = H.diagonal().real
    radius = np.asarray(abs(H).sum(axis=1)).ravel() - np.abs(centre)
    spread = (centre + radius).max() - (centre - radius).min()
    A = g1 * ops.VdV + g2 * ops.VVd
    jump = 2 * max(g1 * ops.VdV.max(), g2 * ops.VVd.max())
    return float(spread + 2 * A.max() + jump)


def _drive_scale(ops: ChainOperators, params: ModelParams) -> float:
    # at dgamma == 0 there is no drive; use the drive the same chain would see at dgamma = gamma
    rate = abs(params.dgamma) if params.dgamma else params.gamma
    return rate * float(np.linalg.norm(drive(ops)))


def propagate_to_steady_state(
    R0: DensityMatrix,
    params: ModelParams,
    tol: float = 1e-6,
    t_max: float = 1e5,
    ops: ChainOperators | None = None,
    atol: float = 1e-12,
    rtol: float = 1e-12,
    check_every: float | None = None,
    max_step: float | None = None,
) -> tuple[DensityMatrix, PropagationReport]:
    """Integrate the master equation with adaptive RK45 until it stops moving.

    Every ``check_every`` (default 1/gamma) units of model time the mean
    rate of change ||R(t) - R(t - check_every)||_F / check_every is compared
    with ``tol * ||2 dgamma (n_L - n_1)/dim||_F``; two consecutive passes
    count as converged.  The window average is used instead of the
    instantaneous ||dR/dt|| because near the steady state the step size sits
    at the stability limit and the fast modes carry noise of order ``atol``
    that says nothing about the slow relaxation.

    ``atol`` is per entry (RMS), i.e. ``atol*dim`` in Frobenius norm.
    ``max_step`` defaults to 2/rho with rho a bound on the Liouvillian
    spectral radius, which keeps every mode strictly inside the RK45
    stability region so the controller does not cycle at its edge.
    """
    ops = ops or build_operators(params, R0.basis)
    d = ops.dim
    liou = _Liouvillian(ops, params.gamma1, params.gamma2)
    check_every = check_every or 1.0 / params.gamma
    scale = _drive_scale(ops, params)
    if max_step is None:
        max_step = 2.0 / spectral_radius_bound(ops, params.gamma1, params.gamma2)

    def f(_t, y):
        return liou(y.reshape(d, d)).ravel()

    y = R0.data.astype(complex).ravel().copy()
    tr0 = np.trace(R0.data).real
    t, steps, h = 0.0, 0, None
    y_prev, t_prev, passes = None, None, 0
    report = PropagationReport(t=0.0, steps=0, residual=np.inf, converged=False, tol=tol)

    while True:
        R = y.reshape(d, d)
        herm = float(np.abs(R - R.conj().T).max())
        report.max_hermiticity_drift = max(report.max_hermiticity_drift, herm)
        if herm > HERMITICITY_TOL:
            log.info("t=%.3f: re-symmetrizing, hermiticity drift %.2e", t, herm)
            R = 0.5 * (R + R.conj().T)
            y = R.ravel().copy()
            report.symmetrizations += 1
        tr = np.trace(R)
        report.trace_samples.append((t, complex(tr)))
        report.max_trace_drift = max(report.max_trace_drift, abs(tr - tr0))
        report.instantaneous_residual = float(np.linalg.norm(liou(R))) / scale
        if y_prev is not None:
            report.residual = float(np.linalg.norm(y - y_prev)) / (t - t_prev) / scale
            passes = passes + 1 if report.residual < tol else 0
            if passes >= 2:
                report.converged = True
                break
        if t >= t_max:
            break
        y_prev, t_prev = y.copy(), t
        t_next = min(t + check_every, t_max)
        kw = {"first_step": h} if h else {}
        solver = RK45(f, t, y, t_next, rtol=rtol, atol=atol, max_step=max_step, **kw)
        while solver.status == "running":
            solver.step()
            steps += 1
        if solver.status == "failed":
            raise SolverError(f"RK45 failed at t={solver.t}")
        h = solver.step_size
        t, y = solver.t, solver.y

    report.t, report.steps = t, steps
    if not report.converged:
        log.warning("propagation did not converge by t=%g (residual %.2e, tol %.2e)", t, report.residual, tol)
    out = DensityMatrix(R0.basis, y.reshape(d, d).copy(), {"propagation": report.as_dict()})
    return out, report


# ---------------------------------------------------------------------------
# direct solve


def _encode(X: np.ndarray) -> np.ndarray:
    """Hermitian X -> real matrix Re X + Im X (symmetric + antisymmetric parts)."""
    return (X.real + X.imag).ravel()


def _decode(y: np.ndarray, d: int) -> np.ndarray:
    Y = y.reshape(d, d)
    return 0.5 * (Y + Y.T) + 0.5j * (Y - Y.T)


class LyapunovPreconditioner:
    """Exact inverse of X -> M X + X M^+ with M = -iH - (g1 V^+V + g2 V V^+).

    This is the full Liouvillian minus the jump terms 2 g V X V^+, so it
    keeps the coherent part exact and only misses the slow gain processes,
    which GMRES picks up in a few dozen iterations.
    """

    def __init__(self, ops: ChainOperators, g1: float, g2: float):
        A = g1 * ops.VdV + g2 * ops.VVd
        M = -1j * ops.H.toarray() - np.diag(A)
        lam, W = np.linalg.eig(M)
        self.W = W
        self.Winv = np.linalg.inv(W)
        den = lam[:, None] + lam.conj()[None, :]
        floor = 1e-12 * max(g1, g2, 1.0)
        small = np.abs(den) < floor
        den[small] = floor
        self.den = den

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        Z = (self.Winv @ Y @ self.Winv.conj().T) / self.den
        return self.W @ Z @ self.W.conj().T


def solve_deviation_direct(
    params: ModelParams,
    ops: ChainOperators | None = None,
    linear_response: bool = True,
    rtol: float = 1e-10,
    cap: int = DIRECT_SOLVE_CAP,
    restart: int = 40,
    maxiter: int = 20,
) -> DensityMatrix:
    """Traceless deviation X from a matrix-free GMRES solve.

    With ``linear_response`` the rates are gamma on both ends and dgamma
    drops out (the dgamma -> 0 limit).  Otherwise gamma1, gamma2 are kept
    and X is the exact (R_steady - 1/dim)/dgamma at this finite dgamma.
    """
    ops = ops or build_operators(params)
    d = ops.dim
    if d > cap:
        raise SolverError(f"dimension {d} exceeds the direct-solve cap {cap}")
    if linear_response or params.dgamma == 0:
        g1 = g2 = params.gamma
    else:
        g1, g2 = params.gamma1, params.gamma2
    t0 = time.perf_counter()
    liou = _Liouvillian(ops, g1, g2)
    precond = LyapunovPreconditioner(ops, g1, g2)
    b = drive(ops)
    bnorm = np.linalg.norm(b)
    n_matvec = [0]

    def mv(y):
        n_matvec[0] += 1
        return _encode(liou(precond(_decode(y, d))))

    if bnorm == 0:
        return DensityMatrix(ops.basis, np.zeros((d, d), complex), {"residual": 0.0, "iterations": 0})
    A = spla.LinearOperator((d * d, d * d), matvec=mv, dtype=float)
    y, info = spla.gmres(A, _encode(b), rtol=rtol, atol=0.0, restart=restart, maxiter=maxiter)
    X = precond(_decode(y, d))
    X = 0.5 * (X + X.conj().T)
    tr = np.trace(X).real
    if linear_response or params.dgamma == 0:
        X -= tr / d * np.eye(d)
    else:
        # kernel is the steady state 1/d + dgamma X itself; remove its trace component
        X = (X - tr / d * np.eye(d)) / (1 + tr * params.dgamma)
    residual = float(np.linalg.norm(liou(X) - b) / bnorm)
    elapsed = time.perf_counter() - t0
    log.info("direct solve dim=%d: %d matvecs, rel. residual %.2e, %.1fs", d, n_matvec[0], residual, elapsed)
    if info != 0 and residual > 10 * rtol:
        raise SolverError(f"GMRES did not converge (info={info}, relative residual {residual:.2e})")
    meta = {"residual": residual, "iterations": n_matvec[0], "seconds": elapsed, "linear_response": linear_response}
    return DensityMatrix(ops.basis, X, meta)


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = "BHRHO"


def write_checkpoint(path, R: DensityMatrix) -> None:
    herm = "hermitian" if R.hermiticity_error() == 0 else "general"
    with open(path, "wb") as fh:
        fh.write(f"{_MAGIC} v1 {R.basis.L} {R.basis.N} {herm}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(R.data, dtype="<c16").tobytes())


def read_checkpoint(path, basis: FockBasis | None = None) -> DensityMatrix:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    if len(header) != 5 or header[0] != _MAGIC or header[1] != "v1":
        raise ValueError(f"{path}: not a BHRHO v1 checkpoint")
    L, N = int(header[2]), int(header[3])
    if basis is None:
        basis = enumerate_basis(L, N, memory_cap=None)
    elif (basis.L, basis.N) != (L, N):
        raise ValueError(f"{path}: checkpoint is for (L={L}, N={N})")
    d = basis.dim
    if len(payload) != 16 * d * d:
        raise ValueError(f"{path}: expected {16 * d * d} payload bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype="<c16").reshape(d, d).astype(complex)
    return DensityMatrix(basis, data, {"hermitian": header[4] == "hermitian"})
