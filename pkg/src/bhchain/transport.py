"""Stationary current and the spectral structure of the deviation matrix."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .fock import ChainOperator, FockBasis, ModelParams
from .liouville import DensityMatrix

HERMITIAN_TOL = 1e-10


@dataclass(eq=False)
class EigenDecomposition:
    basis: FockBasis
    values: np.ndarray  # ascending
    vectors: np.ndarray  # columns

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.conj().T


def _dense(A) -> tuple[FockBasis | None, np.ndarray]:
    if isinstance(A, ChainOperator):
        return A.basis, A.toarray()
    if isinstance(A, DensityMatrix):
        return A.basis, A.data
    return None, np.asarray(A)


def decompose_hermitian(A, basis: FockBasis | None = None) -> EigenDecomposition:
    b, M = _dense(A)
    basis = basis or b
    scale = max(float(np.abs(M).max()), 1.0) if M.size else 1.0
    err = float(np.abs(M - M.conj().T).max()) if M.size else 0.0
    if err > HERMITIAN_TOL * scale:
        raise ValueError(f"matrix is not Hermitian (max |A - A^+| = {err:.2e})")
    w, v = np.linalg.eigh(0.5 * (M + M.conj().T))
    return EigenDecomposition(basis, w, v)


def trace_product(op: ChainOperator, X) -> complex:
    """tr(op @ X) without forming the product."""
    X = X.data if isinstance(X, DensityMatrix) else np.asarray(X)
    return complex(op.matrix.multiply(X.T).sum())


def stationary_current(Rtilde, I_op: ChainOperator, dGamma: float) -> float:
    if isinstance(Rtilde, DensityMatrix) and (Rtilde.basis.L, Rtilde.basis.N) != (I_op.basis.L, I_op.basis.N):
        raise ValueError("deviation matrix and current operator live on different bases")
    return dGamma * trace_product(I_op, Rtilde).real


def current_quantiles(dec_R: EigenDecomposition, I_op: ChainOperator) -> np.ndarray:
    """<Psi_j| I |Psi_j> for every eigenvector, in ascending order of lambda_j."""
    Q = dec_R.vectors
    return np.einsum("ij,ij->j", Q.conj(), I_op.matrix @ Q).real


def spectral_current(dec_R: EigenDecomposition, quantiles: np.ndarray, dGamma: float) -> float:
    return dGamma * float(np.dot(dec_R.values, quantiles))


def hardcore_overlap(dec_R: EigenDecomposition) -> np.ndarray:
    """Weight of each eigenvector on Fock states with every occupation <= 1."""
    mask = dec_R.basis.hardcore_mask()
    return (np.abs(dec_R.vectors[mask]) ** 2).sum(axis=0)


def participation_ratio(dec: EigenDecomposition) -> np.ndarray:
    """Inverse participation in the Fock basis; 1 for a single Fock state."""
    return 1.0 / (np.abs(dec.vectors) ** 4).sum(axis=0)


def fock_overlap(dec: EigenDecomposition, occupations, j: int) -> float:
    return float(abs(dec.vectors[dec.basis.index(occupations), j]) ** 2)


# ---------------------------------------------------------------------------
# lambda vs sigma


@dataclass
class LambdaSigmaReport:
    scaled_lambda: np.ndarray  # 4 * dim * lambda_j, ascending
    sigma: np.ndarray  # ascending
    scale: float  # least-squares k in 4*dim*lambda ~ k*sigma
    expected_scale: float  # 16/J^2 from the U=0 commutator identity
    max_deviation: float  # max |4 dim lambda - k sigma|
    max_deviation_unit_scale: float  # max |4 dim lambda - sigma|
    correlation: float

    def summary(self) -> dict:
        return {
            "scale": self.scale,
            "expected_scale": self.expected_scale,
            "max_deviation": self.max_deviation,
            "max_deviation_unit_scale": self.max_deviation_unit_scale,
            "correlation": self.correlation,
        }


def lambda_sigma_relation(dec_R: EigenDecomposition, dec_I: EigenDecomposition, J: float = 1.0) -> LambdaSigmaReport:
    if dec_R.dim != dec_I.dim:
        raise ValueError("decompositions have different dimensions")
    d = dec_R.dim
    lam = np.sort(dec_R.values) * 4 * d
    sig = np.sort(dec_I.values)
    denom = float(np.dot(sig, sig))
    k = float(np.dot(lam, sig) / denom) if denom else 0.0
    corr = float(np.corrcoef(lam, sig)[0, 1]) if d > 1 else 1.0
    return LambdaSigmaReport(
        scaled_lambda=lam,
        sigma=sig,
        scale=k,
        expected_scale=16.0 / J**2,
        max_deviation=float(np.abs(lam - k * sig).max()),
        max_deviation_unit_scale=float(np.abs(lam - sig).max()),
        correlation=corr,
    )


def degenerate_clusters(values: np.ndarray, tol: float) -> list[np.ndarray]:
    """Index groups of a sorted sequence whose neighbours differ by <= tol."""
    if len(values) == 0:
        return []
    breaks = np.nonzero(np.diff(values) > tol)[0] + 1
    return np.split(np.arange(len(values)), breaks)


def eigenvector_alignment(dec_R: EigenDecomposition, dec_I: EigenDecomposition, rel_tol: float = 1e-8) -> np.ndarray:
    """Projection mass of each Psi_k on the current eigenspace at the same rank.

    Eigenvalues of I are grouped into degenerate clusters; Psi_k (sorted by
    lambda, in the direction that correlates with sigma) is projected on the
    cluster containing position k of the sorted sigma sequence.
    """
    sig = dec_I.values
    tol = rel_tol * max(float(np.abs(sig).max()), 1.0)
    order = np.arange(dec_R.dim)
    if np.dot(np.sort(dec_R.values), sig) < 0:
        order = order[::-1]
    overlap = np.abs(dec_I.vectors.conj().T @ dec_R.vectors[:, order]) ** 2
    mass = np.empty(dec_R.dim)
    for cluster in degenerate_clusters(sig, tol):
        mass[cluster] = overlap[np.ix_(cluster, cluster)].sum(axis=0)
    return mass


# ---------------------------------------------------------------------------
# U = 0 semi-analytic current


def quantile_integral(sigma: np.ndarray) -> float:
    """Trapezoid integral over x in [0, 1] of sigma(x)^2.

    sigma(x) interpolates the sorted eigenvalues placed at x_j = (j - 1/2)/n
    and is held constant outside [x_1, x_n].
    """
    s = np.sort(np.asarray(sigma, dtype=float))
    n = len(s)
    x = np.concatenate([[0.0], (np.arange(1, n + 1) - 0.5) / n, [1.0]])
    y = np.concatenate([[s[0]], s, [s[-1]]]) ** 2
    return float(np.trapezoid(y, x))


DERIVED_PREFACTOR_J2 = 4.0  # current = (4 / J^2) * dgamma * int sigma^2, from lambda ~ 4 sigma / (J^2 dim)


def semi_analytic_current(dec_I: EigenDecomposition, params: ModelParams, prefactor: float | None = None) -> float:
    """U = 0 current from the current-operator spectrum alone.

    ``prefactor`` multiplies dgamma * int_0^1 sigma(x)^2 dx with raw current
    eigenvalues; the default 4/J^2 follows from -i[H, I] = J^2 (n_L - n_1)/2.
    """
    if params.U != 0:
        raise ValueError(f"the semi-analytic current is only defined at U = 0, got U={params.U}")
    if prefactor is None:
        prefactor = DERIVED_PREFACTOR_J2 / params.J**2
    return prefactor * params.dgamma * quantile_integral(dec_I.values)


def fit_prefactor(current: float, dec_I: EigenDecomposition, dGamma: float) -> float:
    """Constant c with current = c * dgamma * int sigma^2 at one calibration point."""
    return current / (dGamma * quantile_integral(dec_I.values))


def particle_scaled_prefactor(params: ModelParams) -> float:
    """4 J N^2, the constant multiplying the integral when sigma is in units of J*N."""
    return 4 * params.J * params.N**2


# ---------------------------------------------------------------------------
# report


@dataclass
class TransportReport:
    params: ModelParams
    current: float
    current_spectral: float
    lambdas: np.ndarray
    quantiles: np.ndarray
    hardcore_overlap: np.ndarray
    participation: np.ndarray
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "current": self.current,
            "current_spectral": self.current_spectral,
            "lambda": self.lambdas.tolist(),
            "I_j": self.quantiles.tolist(),
            "hardcore_overlap": self.hardcore_overlap.tolist(),
            "participation": self.participation.tolist(),
            **self.extra,
        }

    def write_json(self, path, header: dict | None = None) -> None:
        d = self.to_dict()
        if header:
            d = {"config": header, **d}
        with open(path, "w") as fh:
            json.dump(d, fh, indent=1)

    def write_quantiles_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["j", "lambda", "I_j", "hardcore_overlap"])
            for j, (lam, q, hc) in enumerate(zip(self.lambdas, self.quantiles, self.hardcore_overlap), start=1):
                w.writerow([j, repr(float(lam)), repr(float(q)), repr(float(hc))])


def transport_report(Rtilde: DensityMatrix, I_op: ChainOperator, params: ModelParams,
                     dec_R: EigenDecomposition | None = None) -> TransportReport:
    dec_R = dec_R or decompose_hermitian(Rtilde)
    q = current_quantiles(dec_R, I_op)
    return TransportReport(
        params=params,
        current=stationary_current(Rtilde, I_op, params.dgamma),
        current_spectral=spectral_current(dec_R, q, params.dgamma),
        lambdas=dec_R.values,
        quantiles=q,
        hardcore_overlap=hardcore_overlap(dec_R),
        participation=participation_ratio(dec_R),
    )
