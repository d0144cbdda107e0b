"""Low-rank feature reconstruction: QR, numerical rank, Neumann inverse, projection.

The projection onto the span of a learned basis ``B`` (``n x d``, ``d < n``)
is built as

    Q, R    = qr(B)                      (Householder, diag(R) >= 0)
    r       = numerical_rank(R)
    B_hat   = Q_r R_r                    (full column rank, n x r)
    P_hat   = B_hat (B_hat^T B_hat)^-1 B_hat^T

and applied to features as ``P_hat @ F``.  The Gram inverse is either exact
(through the triangular factor) or a truncated Neumann series.  Everything on
the tensor path is differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg

from .tensor import ShapeError, Tensor, matmul

InverseMode = Literal["exact", "neumann"]

DEFAULT_RANK_TOL = 1e-6
DEFAULT_NEUMANN_TERMS = 6


class RankError(ValueError):
    """Raised when a basis is rank deficient for the requested operation."""


@dataclass
class QRFactorization:
    Q: np.ndarray
    R: np.ndarray


def householder_qr(A: np.ndarray) -> QRFactorization:
    """Thin Householder QR with a nonnegative diagonal on ``R``.

    ``Q`` is ``n x min(n, d)`` with orthonormal columns and ``R`` is
    ``min(n, d) x d`` upper triangular (exactly zero below the diagonal).
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeError("qr", A.shape, detail="expected a non-empty 2-D matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("qr: input contains non-finite entries")
    dtype = A.dtype if np.issubdtype(A.dtype, np.floating) else np.float64
    n, d = A.shape
    m = min(n, d)
    R = np.array(A, dtype=dtype)
    reflectors: list[np.ndarray | None] = []
    for k in range(m):
        x = R[k:, k]
        normx = np.linalg.norm(x)
        if normx == 0.0:
            reflectors.append(None)
            continue
        v = x.copy()
        v[0] += normx if x[0] >= 0 else -normx
        v /= np.linalg.norm(v)
        R[k:, k:] -= 2.0 * np.outer(v, v @ R[k:, k:])
        reflectors.append(v)

    Q = np.eye(n, m, dtype=dtype)
    for k in range(m - 1, -1, -1):
        v = reflectors[k]
        if v is not None:
            Q[k:, :] -= 2.0 * np.outer(v, v @ Q[k:, :])

    R = np.triu(R[:m, :])
    signs = np.where(np.diag(R) < 0, -1.0, 1.0).astype(dtype)
    return QRFactorization(Q=Q * signs[None, :], R=R * signs[:, None])


def qr_decompose(A) -> QRFactorization:
    return householder_qr(A.data if isinstance(A, Tensor) else A)


def qr(A: Tensor) -> tuple[Tensor, Tensor]:
    """Differentiable thin QR of a tall (``n >= d``) full-column-rank matrix.

    Gradients use the standard thin-QR adjoint.  They are unreliable close
    to rank deficiency (``|R_ii|`` within ~1e-6 of ``max |R_jj|`` scale).
    """
    A = A if isinstance(A, Tensor) else Tensor(A)
    if A.ndim != 2:
        raise ShapeError("qr", A.shape, detail="expected a 2-D matrix")
    n, d = A.shape
    fac = householder_qr(A.data)
    Qv, Rv = fac.Q, fac.R
    if not A.requires_grad:
        return Tensor(Qv), Tensor(Rv)
    if n < d:
        raise ShapeError("qr", A.shape, detail="gradient needs n >= d")

    # One graph node produces both factors; the two outputs are slices of it.
    # Layout: rows [0, n) hold Q, rows [n, n + d) hold R.
    packed = np.concatenate([Qv, Rv], axis=0)

    def bw(g):
        dq, dr = g[:n], g[n:]
        qdq = Qv.T @ dq
        rdr = Rv @ dr.T
        low = np.tril(qdq - qdq.T + rdr - rdr.T)
        rhs = Qv @ (dr + _solve_right_upper_t(low, Rv)) + _solve_right_upper_t(dq - Qv @ qdq, Rv)
        return (rhs,)

    both = Tensor.from_op(packed, (A,), bw, "qr")
    return both[:n], both[n:]


def _solve_right_upper_t(X: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Return ``X @ inv(R).T`` for upper-triangular ``R``."""
    return scipy.linalg.solve_triangular(R, X.T, lower=False).T


def triangular_inverse(R: Tensor) -> Tensor:
    """Differentiable inverse of a nonsingular upper-triangular matrix."""
    R = R if isinstance(R, Tensor) else Tensor(R)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ShapeError("triangular_inverse", R.shape, detail="expected a square matrix")
    eye = np.eye(R.shape[0], dtype=R.dtype)
    inv = scipy.linalg.solve_triangular(R.data, eye, lower=False)

    def bw(g):
        return (np.triu(-inv.T @ g @ inv.T),)

    return Tensor.from_op(inv, (R,), bw, "triangular_inverse")


def _pivots(R: np.ndarray, rel_tol: float) -> np.ndarray:
    m = min(R.shape)
    diag = np.abs(np.diag(R[:m, :m]))
    top = diag.max(initial=0.0)
    if top == 0.0:
        return np.zeros(0, dtype=int)
    return np.nonzero(diag > rel_tol * top)[0]


def numerical_rank(R, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    """Count diagonal entries with ``|R_ii| > rel_tol * max_j |R_jj|``."""
    R = R.data if isinstance(R, Tensor) else np.asarray(R)
    return int(len(_pivots(R, rel_tol)))


def neumann_inverse(
    G,
    K: int = DEFAULT_NEUMANN_TERMS,
    scaling: Literal["gershgorin", "trace"] = "gershgorin",
    doubling: bool = True,
) -> Tensor:
    """Approximate ``G^-1`` for SPD ``G`` with a truncated Neumann series.

    With ``T = I - G / a`` the inverse is ``(1/a) sum_k T^k``.  ``a`` is the
    Gershgorin bound ``max_i sum_j |G_ij|`` (>= the largest eigenvalue, so the
    series converges; equal to ``c`` for ``G = c I``) or ``trace(G)``.

    ``doubling=True`` evaluates the first ``2**(K+1)`` terms through
    ``prod_{j=0..K} (I + T^(2^j))`` with ``2K + 1`` matrix products;
    ``doubling=False`` sums the first ``K + 1`` terms directly.
    """
    G = G if isinstance(G, Tensor) else Tensor(G)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ShapeError("neumann_inverse", G.shape, detail="expected a square matrix")
    if int(K) != K or K < 0:
        raise ValueError(f"neumann_inverse: term count must be a nonnegative integer, got {K}")
    r = G.shape[0]
    eye = np.eye(r, dtype=G.dtype)
    if scaling == "gershgorin":
        alpha = G.abs().sum(axis=1).max()
    elif scaling == "trace":
        alpha = (G * eye).sum()
    else:
        raise ValueError(f"neumann_inverse: unknown scaling {scaling!r}")
    T = eye - G / alpha
    if doubling:
        S = T + eye
        power = T
        for _ in range(int(K)):
            power = power @ power
            S = S + S @ power
    else:
        S = Tensor(eye)
        power = Tensor(eye)
        for _ in range(int(K)):
            power = power @ T
            S = S + power
    return S / alpha


def _gram_inverse(B_hat: Tensor, R_r: Tensor, mode: InverseMode, K: int) -> Tensor:
    if mode == "exact":
        R_inv = triangular_inverse(R_r)
        return R_inv @ R_inv.T
    if mode == "neumann":
        return neumann_inverse(B_hat.T @ B_hat, K)
    raise ValueError(f"unknown inverse mode {mode!r}")


def reconstruction_coefficients(
    X,
    B_hat,
    mode: InverseMode = "exact",
    K: int = DEFAULT_NEUMANN_TERMS,
    rel_tol: float = DEFAULT_RANK_TOL,
) -> Tensor:
    """Least-squares coefficients ``(B^T B)^-1 B^T X`` of ``X`` in the basis."""
    X = X if isinstance(X, Tensor) else Tensor(X)
    B_hat = B_hat if isinstance(B_hat, Tensor) else Tensor(B_hat)
    if X.ndim != 2 or B_hat.ndim != 2 or X.shape[0] != B_hat.shape[0]:
        raise ShapeError("reconstruction_coefficients", X.shape, B_hat.shape)
    Q, R = qr(B_hat)
    rank = numerical_rank(R.data, rel_tol)
    if rank < B_hat.shape[1]:
        raise RankError(
            f"basis has numerical rank {rank} < {B_hat.shape[1]} columns; "
            "truncate it with build_projection before solving"
        )
    return _gram_inverse(B_hat, R, mode, K) @ (B_hat.T @ X)


@dataclass
class ProjectionOperator:
    """Low-rank projection ``P_hat = B_hat (B_hat^T B_hat)^-1 B_hat^T``."""

    basis: Tensor  # B_hat, n x r
    rank: int
    projection: Tensor  # n x n
    neumann_terms: int
    inverse_mode: InverseMode
    pivots: np.ndarray  # columns of the input basis kept in B_hat
    q: Tensor  # Q_r, n x r orthonormal
    r: Tensor  # R_r, r x r upper triangular

    @property
    def dim(self) -> int:
        return self.projection.shape[0]


def build_projection(
    B,
    rel_tol: float = DEFAULT_RANK_TOL,
    K: int = DEFAULT_NEUMANN_TERMS,
    mode: InverseMode = "neumann",
) -> ProjectionOperator:
    """Build the projection onto ``span(B)`` through a full-rank QR basis.

    Columns whose QR pivot ``|R_ii|`` falls below ``rel_tol * max |R_jj|`` are
    dropped and the remaining ones refactorized, so ``B_hat = Q_r R_r`` always
    has full column rank ``r`` and its Gram matrix is invertible.
    """
    B = B if isinstance(B, Tensor) else Tensor(B)
    if B.ndim != 2:
        raise ShapeError("build_projection", B.shape, detail="expected a 2-D basis")
    n, d = B.shape
    if d >= n:
        raise ShapeError("build_projection", B.shape, detail="basis must have fewer columns than rows")
    if not np.all(np.isfinite(B.data)):
        raise ValueError("build_projection: basis contains non-finite entries")
    if mode not in ("exact", "neumann"):
        raise ValueError(f"unknown inverse mode {mode!r}")

    kept = np.arange(d)
    Q, R = qr(B)
    piv = _pivots(R.data, rel_tol)
    while len(piv) < len(kept):
        if len(piv) == 0:
            raise RankError("build_projection: basis has numerical rank 0")
        kept = kept[piv]
        Q, R = qr(B[:, kept])
        piv = _pivots(R.data, rel_tol)

    B_hat = Q @ R
    G_inv = _gram_inverse(B_hat, R, mode, K)
    P = B_hat @ G_inv @ B_hat.T
    return ProjectionOperator(
        basis=B_hat,
        rank=len(kept),
        projection=P,
        neumann_terms=int(K),
        inverse_mode=mode,
        pivots=kept,
        q=Q,
        r=R,
    )


def project(op: ProjectionOperator, F) -> Tensor:
    """Apply the projection to features ``F`` (``n x c``)."""
    F = F if isinstance(F, Tensor) else Tensor(F)
    if F.ndim != 2 or F.shape[0] != op.dim:
        raise ShapeError("project", op.projection.shape, F.shape, detail="row count must match operator size")
    return matmul(op.projection, F)
