"""Affine operator family A(theta) = A0 + sum_i theta_i A_i and its Gram caches."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class UnsupportedOperation(RuntimeError):
    pass


@dataclass(frozen=True)
class AffineOperator:
    """Known affine operator family.

    ``basis`` is a (Q, M, N) stack. When ``unstructured`` is set the basis is
    the implicit elementary family e_m e_n^T (Q = M*N, row-major order) and is
    never materialized.
    """

    a0: np.ndarray
    basis: np.ndarray = field(default=None)
    unstructured: bool = False

    def __post_init__(self):
        a0 = np.asarray(self.a0, dtype=float)
        if a0.ndim != 2:
            raise ValueError("a0 must be a 2-D matrix")
        object.__setattr__(self, "a0", a0)
        if self.unstructured:
            object.__setattr__(self, "basis", np.zeros((0,) + a0.shape))
            return
        basis = self.basis
        if basis is None:
            basis = np.zeros((0,) + a0.shape)
        basis = np.asarray(basis, dtype=float)
        if basis.ndim == 2:
            basis = basis[None]
        if basis.ndim != 3 or basis.shape[1:] != a0.shape:
            raise ValueError(
                f"basis matrices must share a0's shape {a0.shape}, got {basis.shape}")
        object.__setattr__(self, "basis", basis)

    @classmethod
    def known(cls, A):
        return cls(a0=np.asarray(A, dtype=float))

    @classmethod
    def free(cls, M, N):
        """Unstructured family: every entry of A is a free parameter."""
        return cls(a0=np.zeros((M, N)), unstructured=True)

    @property
    def M(self) -> int:
        return self.a0.shape[0]

    @property
    def N(self) -> int:
        return self.a0.shape[1]

    @property
    def Q(self) -> int:
        if self.unstructured:
            return self.M * self.N
        return self.basis.shape[0]

    @property
    def dims(self):
        return self.M, self.N, self.Q


@dataclass(frozen=True)
class GramTables:
    """gram[i, j] = A_j^T A_i, ygram[i] = Y^T A_i, a0gram[i] = A0^T A_i."""

    gram: np.ndarray   # (Q, Q, N, N)
    ygram: np.ndarray  # (Q, L, N)
    a0gram: np.ndarray  # (Q, N, N)


@dataclass(frozen=True)
class OperatorEig:
    u: np.ndarray
    s: np.ndarray
    source_theta: Optional[np.ndarray] = None


def evaluate(op: AffineOperator, theta_A) -> np.ndarray:
    theta = np.asarray(theta_A, dtype=float).ravel()
    if theta.size != op.Q:
        raise ValueError(f"theta_A has length {theta.size}, operator expects Q={op.Q}")
    if op.unstructured:
        return op.a0 + theta.reshape(op.M, op.N)
    if op.Q == 0:
        return op.a0.copy()
    return op.a0 + np.tensordot(theta, op.basis, axes=1)


def precompute_grams(op: AffineOperator, Y) -> GramTables:
    if op.unstructured:
        raise UnsupportedOperation("Gram tables are not built for the unstructured operator")
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != op.M:
        raise ValueError(f"Y has {Y.shape[0]} rows, operator has M={op.M}")
    B = op.basis
    gram = np.einsum("jmb,ima->ijba", B, B)
    ygram = np.einsum("ml,ima->ila", Y, B)
    a0gram = np.einsum("mb,ima->iba", op.a0, B)
    return GramTables(gram=gram, ygram=ygram, a0gram=a0gram)


def eig_gram(A, theta=None) -> OperatorEig:
    """Symmetric eigendecomposition of A^T A with ascending, nonnegative eigenvalues."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("operator has non-finite entries")
    G = A.T @ A
    s, u = np.linalg.eigh(0.5 * (G + G.T))
    s = np.maximum(s, 0.0)
    src = None if theta is None else np.array(theta, dtype=float, copy=True)
    return OperatorEig(u=u, s=s, source_theta=src)
