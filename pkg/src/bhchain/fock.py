"""Fixed-particle-number Fock space of an open Bose-Hubbard chain.

States are ordered lexicographically decreasing, so for ``L=3, N=2`` the
basis starts ``(2,0,0), (1,1,0), (1,0,1), (0,2,0), ...``.  Positions are
recovered by combinatorial ranking rather than a hash table.

Sites are labelled ``1..L`` in the public API, matching the usual chain
notation; internally occupation arrays are 0-indexed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np
import scipy.sparse as sp

DEFAULT_MEMORY_CAP = 4 * 2**30  # bytes for one dense complex N x N matrix


class BasisTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Chain and reservoir parameters.

    ``gamma1 = gamma + dgamma/2`` drives particles from site L to site 1,
    ``gamma2 = gamma - dgamma/2`` drives them back.
    """

    L: int
    N: int
    J: float = 1.0
    U: float = 0.0
    gamma: float = 0.04
    dgamma: float | None = None

    def __post_init__(self):
        if self.dgamma is None:
            object.__setattr__(self, "dgamma", self.gamma / 10)
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if self.N < 0:
            raise ValueError(f"N must be >= 0, got {self.N}")
        if not self.J > 0:
            raise ValueError(f"J must be > 0, got {self.J}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.U < 0:
            raise ValueError(f"U must be >= 0, got {self.U}")
        if not abs(self.dgamma) < 2 * self.gamma:
            raise ValueError(f"|dgamma| must be < 2*gamma, got dgamma={self.dgamma}, gamma={self.gamma}")

    @property
    def gamma1(self) -> float:
        return self.gamma + self.dgamma / 2

    @property
    def gamma2(self) -> float:
        return self.gamma - self.dgamma / 2

    def replace(self, **kw) -> "ModelParams":
        d = dict(L=self.L, N=self.N, J=self.J, U=self.U, gamma=self.gamma, dgamma=self.dgamma)
        d.update(kw)
        return ModelParams(**d)

    def as_dict(self) -> dict:
        return dict(L=self.L, N=self.N, J=self.J, U=self.U, gamma=self.gamma, dgamma=self.dgamma)


def fock_dimension(L: int, N: int) -> int:
    return comb(N + L - 1, N)


@dataclass(frozen=True, eq=False)
class FockBasis:
    L: int
    N: int
    states: np.ndarray = field(repr=False)  # (dim, L) int array, read-only
    _count: np.ndarray = field(repr=False)  # _count[m, k]: fillings of k sites with m particles
    _offset: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    def __len__(self) -> int:
        return self.dim

    def rank(self, occupations) -> np.ndarray | int:
        """Position of one state (1d input) or many states (2d input, one per row)."""
        occ = np.asarray(occupations, dtype=np.int64)
        single = occ.ndim == 1
        occ = np.atleast_2d(occ)
        if occ.shape[1] != self.L:
            raise ValueError(f"expected {self.L} occupations, got {occ.shape[1]}")
        if (occ < 0).any() or (occ.sum(axis=1) != self.N).any():
            raise KeyError("occupation vector not in this basis")
        remaining = np.full(occ.shape[0], self.N, dtype=np.int64)
        idx = np.zeros(occ.shape[0], dtype=np.int64)
        for k in range(self.L - 1):
            # states with a larger occupation at site k come first
            idx += self._offset[remaining - occ[:, k], self.L - k - 1]
            remaining -= occ[:, k]
        return int(idx[0]) if single else idx

    def index(self, occupations) -> int:
        return int(self.rank(np.asarray(occupations)))

    def state(self, i: int) -> tuple[int, ...]:
        return tuple(int(x) for x in self.states[i])

    def occupation(self, site: int) -> np.ndarray:
        """Occupation of ``site`` (1-based) for every basis state."""
        if not 1 <= site <= self.L:
            raise IndexError(f"site must be in 1..{self.L}, got {site}")
        return self.states[:, site - 1]

    def hardcore_mask(self) -> np.ndarray:
        return (self.states <= 1).all(axis=1)


def _count_table(L: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    count = np.zeros((N + 1, L + 1), dtype=np.int64)
    for m in range(N + 1):
        for k in range(1, L + 1):
            count[m, k] = comb(m + k - 1, m)
    # offset[m, k] = sum_{j<m} count[j, k]; number of fillings of k sites with fewer than m particles
    offset = np.zeros((N + 2, L + 1), dtype=np.int64)
    offset[1:] = np.cumsum(count, axis=0)
    return count, offset


def _enumerate(L: int, N: int) -> np.ndarray:
    if L == 1:
        return np.array([[N]], dtype=np.int64)
    blocks = []
    for n in range(N, -1, -1):
        tail = _enumerate(L - 1, N - n)
        head = np.full((tail.shape[0], 1), n, dtype=np.int64)
        blocks.append(np.hstack([head, tail]))
    return np.vstack(blocks)


def enumerate_basis(L: int, N: int, memory_cap: int | None = DEFAULT_MEMORY_CAP) -> FockBasis:
    if L < 1:
        raise ValueError(f"chain needs at least one site, got L={L}")
    if N < 0:
        raise ValueError(f"particle number must be >= 0, got N={N}")
    dim = fock_dimension(L, N)
    if memory_cap is not None and 16 * dim * dim > memory_cap:
        raise BasisTooLarge(
            f"(L={L}, N={N}) has dimension {dim}; a dense density matrix needs "
            f"{16 * dim * dim / 2**30:.1f} GiB > cap {memory_cap / 2**30:.1f} GiB"
        )
    states = _enumerate(L, N)
    states.setflags(write=False)
    count, offset = _count_table(L, N)
    return FockBasis(L=L, N=N, states=states, _count=count, _offset=offset)


@dataclass(frozen=True, eq=False)
class ChainOperator:
    """Sparse operator on a FockBasis, stored as CSR."""

    basis: FockBasis
    matrix: sp.csr_matrix
    hermitian: bool
    kind: str = "op"

    @property
    def dim(self) -> int:
        return self.basis.dim

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        return self.matrix @ other

    def dag(self) -> "ChainOperator":
        return ChainOperator(self.basis, self.matrix.conj().T.tocsr(), self.hermitian, self.kind + "_dag")

    def triplets(self):
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order]


def _csr(basis: FockBasis, rows, cols, vals) -> sp.csr_matrix:
    d = basis.dim
    m = sp.coo_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(d, d)).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def _hop(basis: FockBasis, src: int, dst: int):
    """Triplets of a_dst^dagger a_src (0-based sites)."""
    occ = basis.states
    cols = np.nonzero(occ[:, src] > 0)[0]
    moved = occ[cols].copy()
    amp = np.sqrt(moved[:, src] * (moved[:, dst] + 1.0))
    moved[:, src] -= 1
    moved[:, dst] += 1
    rows = basis.rank(moved)
    return rows, cols, amp


def _forward_hopping(basis: FockBasis) -> sp.csr_matrix:
    """sum_l a_{l+1}^dagger a_l over the open chain."""
    rows, cols, vals = [], [], []
    for l in range(basis.L - 1):
        r, c, v = _hop(basis, l, l + 1)
        rows.append(r)
        cols.append(c)
        vals.append(v)
    if not rows:
        return _csr(basis, [], [], [])
    return _csr(basis, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def _interaction_diagonal(basis: FockBasis) -> np.ndarray:
    n = basis.states
    return 0.5 * (n * (n - 1)).sum(axis=1).astype(float)


def build_hamiltonian(basis: FockBasis, J: float, U: float) -> ChainOperator:
    T = _forward_hopping(basis)
    H = -0.5 * J * (T + T.conj().T) + sp.diags(U * _interaction_diagonal(basis))
    return ChainOperator(basis, H.tocsr(), True, "hamiltonian")


def build_current(basis: FockBasis, J: float) -> ChainOperator:
    """Bond current summed over the chain, positive for flow from site l to l+1.

    With this orientation ``-i[H, I] = J**2 (n_L - n_1) / 2`` at U=0.
    """
    T = _forward_hopping(basis)
    I = 0.5j * J * (T - T.conj().T)
    return ChainOperator(basis, I.tocsr(), True, "current")


def build_number_operator(basis: FockBasis, site: int) -> ChainOperator:
    diag = basis.occupation(site).astype(complex)
    return ChainOperator(basis, sp.diags(diag).tocsr(), True, f"n{site}")


def build_jump_operator(basis: FockBasis) -> ChainOperator:
    """V = a_1^dagger a_L, moves one particle from the last site to the first."""
    if basis.L < 2:
        raise ValueError("jump operator a_1^dagger a_L needs L >= 2")
    r, c, v = _hop(basis, basis.L - 1, 0)
    return ChainOperator(basis, _csr(basis, r, c, v), False, "jump")


def export_operator(op: ChainOperator, path) -> None:
    """Write ``row col re im`` triplets under a ``# L N kind`` header."""
    rows, cols, vals = op.triplets()
    with open(path, "w") as fh:
        fh.write(f"# {op.basis.L} {op.basis.N} {op.kind}\n")
        for r, c, z in zip(rows, cols, vals):
            fh.write(f"{r} {c} {float(z.real)!r} {float(z.imag)!r}\n")


def load_operator(path, basis: FockBasis | None = None, hermitian: bool | None = None) -> ChainOperator:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "#":
            raise ValueError(f"{path}: bad operator header {header!r}")
        L, N, kind = int(header[1]), int(header[2]), header[3]
        data = np.loadtxt(fh, ndmin=2)
    if basis is None:
        basis = enumerate_basis(L, N, memory_cap=None)
    elif (basis.L, basis.N) != (L, N):
        raise ValueError(f"{path}: operator is for (L={L}, N={N}), basis is ({basis.L}, {basis.N})")
    if data.size == 0:
        m = _csr(basis, [], [], [])
    else:
        m = _csr(basis, data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2] + 1j * data[:, 3])
    if hermitian is None:
        hermitian = abs(m - m.conj().T).max() == 0 if m.nnz else True
    return ChainOperator(basis, m, bool(hermitian), kind)
