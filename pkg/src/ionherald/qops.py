"""Small linear-algebra layer for composite Hilbert spaces.

Subsystem order is fixed throughout the package as
``(ion1, ion2, mode_H, mode_V)``; the first factor is the slowest-varying
index of the Kronecker product.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "HilbertSpace",
    "StateVector",
    "Operator",
    "DensityMatrix",
    "tensor",
    "embed",
    "partial_trace",
    "reduced_state",
    "expectation",
    "destroy",
    "projector",
    "transition",
    "identity",
]


@dataclass(frozen=True)
class HilbertSpace:
    factors: tuple[int, ...]

    def __post_init__(self):
        factors = tuple(int(f) for f in self.factors)
        if not factors:
            raise ValueError("a Hilbert space needs at least one factor")
        if any(f < 2 for f in factors):
            raise ValueError(f"factor dimensions must be >= 2, got {factors}")
        object.__setattr__(self, "factors", factors)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.factors))

    def __len__(self) -> int:
        return len(self.factors)

    def concat(self, other: "HilbertSpace") -> "HilbertSpace":
        return HilbertSpace(self.factors + other.factors)

    def subspace(self, keep: Sequence[int]) -> "HilbertSpace":
        return HilbertSpace(tuple(self.factors[k] for k in keep))

    def index(self, labels: Sequence[int]) -> int:
        """Flat basis index of the product state ``|labels[0], labels[1], ...>``."""
        if len(labels) != len(self.factors):
            raise ValueError("one label per factor is required")
        return int(np.ravel_multi_index(tuple(labels), self.factors))

    def labels(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(index, self.factors))


def _as_space(space) -> HilbertSpace:
    if isinstance(space, HilbertSpace):
        return space
    if isinstance(space, (int, np.integer)):
        return HilbertSpace((int(space),))
    return HilbertSpace(tuple(space))


@dataclass(frozen=True)
class StateVector:
    space: HilbertSpace
    amplitudes: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        space = _as_space(self.space)
        if amps.shape[0] != space.total_dim:
            raise ValueError(
                f"state length {amps.shape[0]} does not match dimension {space.total_dim}"
            )
        if self.normalized and abs(np.vdot(amps, amps).real - 1.0) > 1e-10:
            raise ValueError("state flagged normalized has norm != 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "space", space)

    @classmethod
    def basis(cls, space, labels: Sequence[int]) -> "StateVector":
        space = _as_space(space)
        amps = np.zeros(space.total_dim, dtype=complex)
        amps[space.index(labels)] = 1.0
        return cls(space, amps, normalized=True)

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.amplitudes, self.amplitudes).real))

    def unit(self) -> "StateVector":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.space, self.amplitudes / n, normalized=True)

    def dm(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(self.space, np.outer(a, a.conj()))

    def __add__(self, other: "StateVector") -> "StateVector":
        _check_same(self.space, other.space)
        return StateVector(self.space, self.amplitudes + other.amplitudes)

    def __sub__(self, other: "StateVector") -> "StateVector":
        _check_same(self.space, other.space)
        return StateVector(self.space, self.amplitudes - other.amplitudes)

    def __mul__(self, c: complex) -> "StateVector":
        return StateVector(self.space, c * self.amplitudes)

    __rmul__ = __mul__

    def overlap(self, other: "StateVector") -> complex:
        _check_same(self.space, other.space)
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class Operator:
    space: HilbertSpace
    entries: sp.csr_matrix
    hermitian: bool = False

    def __post_init__(self):
        space = _as_space(self.space)
        m = sp.csr_matrix(self.entries, dtype=complex)
        n = space.total_dim
        if m.shape != (n, n):
            raise ValueError(f"operator shape {m.shape} does not match dimension {n}")
        m.sum_duplicates()
        m.eliminate_zeros()
        if self.hermitian:
            diff = m - m.conj().T
            if diff.nnz and np.max(np.abs(diff.data)) >= 1e-12:
                raise ValueError("operator flagged hermitian is not hermitian")
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "space", space)

    @classmethod
    def from_dense(cls, matrix, space=None, hermitian: bool = False) -> "Operator":
        matrix = np.asarray(matrix, dtype=complex)
        if space is None:
            space = HilbertSpace((matrix.shape[0],))
        return cls(space, sp.csr_matrix(matrix), hermitian=hermitian)

    @property
    def dim(self) -> int:
        return self.space.total_dim

    def dense(self) -> np.ndarray:
        return self.entries.toarray()

    def dag(self) -> "Operator":
        return Operator(self.space, self.entries.conj().T.tocsr(), hermitian=self.hermitian)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        diff = self.entries - self.entries.conj().T
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) < tol

    def is_unitary(self, tol: float = 1e-12) -> bool:
        u = self.dense()
        return bool(np.max(np.abs(u.conj().T @ u - np.eye(self.dim))) < tol)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            _check_same(self.space, other.space)
            return Operator(self.space, self.entries @ other.entries)
        if isinstance(other, StateVector):
            _check_same(self.space, other.space)
            return StateVector(self.space, self.entries @ other.amplitudes)
        if isinstance(other, DensityMatrix):
            _check_same(self.space, other.space)
            return DensityMatrix(self.space, self.entries @ other.entries)
        return NotImplemented

    def __add__(self, other: "Operator") -> "Operator":
        _check_same(self.space, other.space)
        return Operator(self.space, self.entries + other.entries)

    def __sub__(self, other: "Operator") -> "Operator":
        _check_same(self.space, other.space)
        return Operator(self.space, self.entries - other.entries)

    def __mul__(self, c: complex) -> "Operator":
        return Operator(self.space, self.entries * c)

    __rmul__ = __mul__

    def __neg__(self) -> "Operator":
        return Operator(self.space, -self.entries)

    def conjugate(self, rho: "DensityMatrix") -> "DensityMatrix":
        """Return ``U rho U^dagger``."""
        _check_same(self.space, rho.space)
        u = self.entries
        return DensityMatrix(self.space, u @ (u @ rho.entries.conj().T).conj().T)


@dataclass(frozen=True)
class DensityMatrix:
    space: HilbertSpace
    entries: np.ndarray

    def __post_init__(self):
        space = _as_space(self.space)
        m = np.array(self.entries, dtype=complex)
        n = space.total_dim
        if m.shape != (n, n):
            raise ValueError(f"density matrix shape {m.shape} does not match dimension {n}")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "space", space)

    @property
    def dim(self) -> int:
        return self.space.total_dim

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def normalized(self) -> "DensityMatrix":
        tr = self.trace().real
        if tr <= 0:
            raise ValueError("cannot normalize a density matrix with non-positive trace")
        return DensityMatrix(self.space, self.entries / tr)

    def hermitian_part(self) -> "DensityMatrix":
        m = self.entries
        return DensityMatrix(self.space, 0.5 * (m + m.conj().T))

    def check(self, normalized: bool = True, herm_tol: float = 1e-10,
              trace_tol: float = 1e-8, eig_floor: float = -1e-8) -> None:
        """Raise ``ValueError`` if this is not a valid density matrix."""
        m = self.entries
        if np.max(np.abs(m - m.conj().T)) > herm_tol:
            raise ValueError("density matrix is not hermitian")
        if normalized and abs(np.trace(m) - 1.0) > trace_tol:
            raise ValueError(f"density matrix trace {np.trace(m).real:.3e} != 1")
        if np.min(np.linalg.eigvalsh(0.5 * (m + m.conj().T))) < eig_floor:
            raise ValueError("density matrix has negative eigenvalues")

    def element(self, row: Sequence[int], col: Sequence[int]) -> complex:
        return complex(self.entries[self.space.index(row), self.space.index(col)])


def _check_same(a: HilbertSpace, b: HilbertSpace) -> None:
    if a.factors != b.factors:
        raise ValueError(f"space mismatch: {a.factors} vs {b.factors}")


def tensor(a, b):
    """Kronecker product; ``a`` carries the slower-varying index."""
    if isinstance(a, Operator) and isinstance(b, Operator):
        return Operator(a.space.concat(b.space), sp.kron(a.entries, b.entries, format="csr"))
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(a.space.concat(b.space), np.kron(a.entries, b.entries))
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(a.space.concat(b.space), np.kron(a.amplitudes, b.amplitudes))
    raise TypeError(f"cannot tensor {type(a).__name__} with {type(b).__name__}")


def tensor_all(items: Iterable):
    return reduce(tensor, items)


def identity(space) -> Operator:
    space = _as_space(space)
    return Operator(space, sp.identity(space.total_dim, dtype=complex, format="csr"),
                    hermitian=True)


def embed(op, which: int, space) -> Operator:
    """Lift a single-factor operator onto ``space``, acting as identity elsewhere."""
    space = _as_space(space)
    if not 0 <= which < len(space):
        raise IndexError(f"subsystem index {which} out of range for {space.factors}")
    m = op.entries if isinstance(op, Operator) else sp.csr_matrix(np.asarray(op, dtype=complex))
    d = space.factors[which]
    if m.shape != (d, d):
        raise ValueError(f"operator dimension {m.shape[0]} != factor dimension {d}")
    left = int(np.prod(space.factors[:which], dtype=int))
    right = int(np.prod(space.factors[which + 1:], dtype=int))
    out = sp.kron(sp.identity(left, format="csr"), m, format="csr")
    out = sp.kron(out, sp.identity(right, format="csr"), format="csr")
    return Operator(space, out)


def _keep_list(space: HilbertSpace, keep) -> list[int]:
    if isinstance(keep, (int, np.integer)):
        keep = [int(keep)]
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    if keep[0] < 0 or keep[-1] >= len(space):
        raise IndexError(f"invalid subsystem indices {keep} for {space.factors}")
    return keep


def partial_trace(rho: DensityMatrix, keep) -> DensityMatrix:
    """Trace out every subsystem not listed in ``keep``."""
    space = rho.space
    keep = _keep_list(space, keep)
    n = len(space)
    drop = [k for k in range(n) if k not in keep]
    t = rho.entries.reshape(space.factors + space.factors)
    # row axes 0..n-1, column axes n..2n-1; contract dropped pairs
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n])
    cols = list(letters[n:2 * n])
    for k in drop:
        cols[k] = rows[k]
    out = "".join(rows[k] for k in keep) + "".join(cols[k] for k in keep)
    reduced = np.einsum("".join(rows) + "".join(cols) + "->" + out, t)
    sub = space.subspace(keep)
    d = sub.total_dim
    return DensityMatrix(sub, reduced.reshape(d, d))


def reduced_state(psi, space, keep) -> DensityMatrix:
    """Reduced density matrix of a pure state without forming the full projector."""
    if isinstance(psi, StateVector):
        space, amps = psi.space, psi.amplitudes
    else:
        space, amps = _as_space(space), np.asarray(psi, dtype=complex)
    keep = _keep_list(space, keep)
    drop = [k for k in range(len(space)) if k not in keep]
    t = amps.reshape(space.factors)
    t = np.transpose(t, keep + drop)
    dk = int(np.prod([space.factors[k] for k in keep]))
    t = t.reshape(dk, -1)
    return DensityMatrix(space.subspace(keep), t @ t.conj().T)


def expectation(op: Operator, state) -> complex:
    """``<psi|A|psi>`` for a state vector or ``Tr(A rho)`` for a density matrix."""
    if isinstance(state, StateVector):
        _check_same(op.space, state.space)
        a = state.amplitudes
        return complex(np.vdot(a, op.entries @ a))
    if isinstance(state, DensityMatrix):
        _check_same(op.space, state.space)
        # Tr(A rho) = sum_ij A_ij rho_ji
        return complex(op.entries.multiply(state.entries.T).sum())
    raise TypeError(f"unsupported state type {type(state).__name__}")


def destroy(n_levels: int) -> Operator:
    """Annihilation operator on a mode truncated to ``n_levels`` Fock states."""
    data = np.sqrt(np.arange(1, n_levels))
    m = sp.diags(data, 1, shape=(n_levels, n_levels), format="csr", dtype=complex)
    return Operator(HilbertSpace((n_levels,)), m)


def transition(dim: int, to: int, frm: int) -> Operator:
    """``|to><frm|`` on a single ``dim``-level factor."""
    m = sp.csr_matrix(([1.0 + 0j], ([to], [frm])), shape=(dim, dim))
    return Operator(HilbertSpace((dim,)), m)


def projector(dim: int, level: int) -> Operator:
    return transition(dim, level, level)
