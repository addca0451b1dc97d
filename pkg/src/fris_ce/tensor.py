"""Dense complex multilinear algebra for the FRIS training tensor.

Matrices and tensors are plain complex128 numpy arrays. Linearizations are
column-major (Fortran order): a tensor of shape ``(d1, d2, d3, d4)`` stores
entry ``[i1, i2, i3, i4]`` at ``i1 + d1*(i2 + d2*(i3 + d3*i4))``. The
training tensor is indexed ``Y[m_r, q, k, j]`` (BS antenna, user, block,
sub-frame).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class TensorError(ValueError):
    """Base class for shape and numerical errors raised by this module."""


class DimensionError(TensorError):
    pass


class DegenerateColumnError(TensorError):
    """Raised when a rank-1 extraction is asked to factor a (near-)zero input."""

    def __init__(self, message: str = "degenerate column", column: int | None = None):
        if column is not None:
            message = f"{message} {column}"
        super().__init__(message)
        self.column = column


class ConvergenceError(TensorError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"dominant singular pair did not converge after {iterations} "
            f"iterations (residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


def _as_complex(x) -> np.ndarray:
    return np.asarray(x, dtype=np.complex128)


def khatri_rao(A, B) -> np.ndarray:
    """Column-wise Kronecker product of an ``I x M`` and a ``K x M`` matrix.

    Row ``i*K + k`` of column ``m`` holds ``A[i, m] * B[k, m]``, i.e. column
    ``m`` equals ``np.kron(A[:, m], B[:, m])``.
    """
    A = _as_complex(A)
    B = _as_complex(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DimensionError(
            f"khatri_rao needs matrices with equal column counts, got {A.shape} and {B.shape}"
        )
    I, M = A.shape
    K = B.shape[0]
    return (A[:, None, :] * B[None, :, :]).reshape(I * K, M)


def kron_vec(a, b) -> np.ndarray:
    a = _as_complex(a).ravel()
    b = _as_complex(b).ravel()
    return (a[:, None] * b[None, :]).ravel()


def hadamard(a, b) -> np.ndarray:
    a = _as_complex(a)
    b = _as_complex(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard needs equal shapes, got {a.shape} and {b.shape}")
    return a * b


def unfold_Y1(Y) -> np.ndarray:
    """``M_r x Q x K x J`` tensor to the ``Q*M_r x J*K`` matrix.

    Rows run ``q*M_r + m_r`` and columns ``j*K + k``, so that the noiseless
    tensor gives ``(G.T ⋄ H) @ (Phi ⋄ T).T``.
    """
    Y = _as_complex(Y)
    if Y.ndim != 4:
        raise DimensionError(f"expected a 4-way tensor, got shape {Y.shape}")
    Mr, Q, K, J = Y.shape
    return Y.reshape(Mr * Q, K * J, order="F")


def fold_Y1(Y1, dims: tuple[int, int, int, int]) -> np.ndarray:
    Mr, Q, K, J = dims
    Y1 = _as_complex(Y1)
    if Y1.shape != (Mr * Q, K * J):
        raise DimensionError(f"cannot fold {Y1.shape} into {dims}")
    return Y1.reshape(dims, order="F")


def unfold_Y2(Y) -> np.ndarray:
    """``M_r x Q x K x J`` tensor to the ``K*Q*M_r x J`` matrix.

    Row ``k*Q*M_r + q*M_r + m_r``; the noiseless tensor gives
    ``(T ⋄ G.T ⋄ H) @ Phi.T``.
    """
    Y = _as_complex(Y)
    if Y.ndim != 4:
        raise DimensionError(f"expected a 4-way tensor, got shape {Y.shape}")
    Mr, Q, K, J = Y.shape
    return Y.reshape(Mr * Q * K, J, order="F")


def fold_Y2(Y2, dims: tuple[int, int, int, int]) -> np.ndarray:
    Mr, Q, K, J = dims
    Y2 = _as_complex(Y2)
    if Y2.shape != (Mr * Q * K, J):
        raise DimensionError(f"cannot fold {Y2.shape} into {dims}")
    return Y2.reshape(dims, order="F")


def fold3(z, Mr: int, Q: int, K: int) -> np.ndarray:
    """Tensorize a column of ``T ⋄ G.T ⋄ H`` into an ``M_r x Q x K`` array.

    For ``z = kron(t, kron(g, h))`` the result is the outer product
    ``h ∘ g ∘ t``.
    """
    z = _as_complex(z).ravel()
    if z.size != Mr * Q * K:
        raise DimensionError(f"vector of length {z.size} cannot fold into {(Mr, Q, K)}")
    return z.reshape((Mr, Q, K), order="F")


def _fix_phase(u: np.ndarray) -> complex:
    """Unit phase that makes the largest-modulus entry of ``u`` real positive."""
    i = int(np.argmax(np.abs(u)))
    return np.conj(u[i]) / abs(u[i])


def _norm(x: np.ndarray) -> float:
    # cheaper than np.linalg.norm for the tiny arrays handled here
    return math.sqrt(np.vdot(x, x).real)


def _dominant_right(X: np.ndarray, tol: float, max_iter: int):
    # X is p x q with p >= q; works on the q x q Gram matrix
    norm = _norm(X)
    Xs = X / norm
    Xh = Xs.conj().T
    B = Xh @ Xs
    it = 0
    # repeated squaring drives B towards the dominant eigenprojector
    while it < max_iter // 2:
        it += 1
        B2 = B @ B
        B2 /= _norm(B2)
        done = _norm(B2 - B) <= tol
        B = B2
        if done:
            break
    v = B[:, int(np.argmax(np.einsum("ij,ij->j", B.conj(), B).real))]
    v = v / _norm(v)
    residual = math.inf
    while it < max_iter:
        it += 1
        u = Xs @ v
        u /= _norm(u)
        w = Xh @ u
        w /= _norm(w)
        residual = _norm(w - v)
        v = w
        if residual <= tol:
            u = Xs @ v
            s = _norm(u)
            return u / s, v, s * norm
    raise ConvergenceError(it, float(residual))


def rank1_svd(X, tol: float = 1e-12, max_iter: int | None = None):
    """Dominant singular triple ``(u, v, sigma)`` with ``X ≈ sigma * u v^H``.

    Power iteration on the Gram matrix of the smaller side, seeded by a few
    normalized squarings. ``u`` and ``v`` have unit norm; the gauge is fixed
    so that the largest-modulus entry of ``u`` is real and positive.

    Raises
    ------
    DegenerateColumnError
        If ``X`` is all zeros (or not finite).
    ConvergenceError
        If the pair residual is still above ``tol`` after ``max_iter``
        iterations (default ``10 * max(X.shape)``).
    """
    X = _as_complex(X)
    if X.ndim != 2:
        raise DimensionError(f"rank1_svd needs a matrix, got shape {X.shape}")
    norm = _norm(X)
    if not math.isfinite(norm) or norm == 0.0:
        raise DegenerateColumnError()
    if max_iter is None:
        max_iter = 10 * max(X.shape)
    p, q = X.shape
    if p >= q:
        u, v, s = _dominant_right(X, tol, max_iter)
    else:
        v, u, s = _dominant_right(X.conj().T, tol, max_iter)
    ph = _fix_phase(u)
    return u * ph, v * ph, float(s)


@dataclass(frozen=True)
class Rank1Triple:
    """Rank-1 HOSVD truncation ``core * (u1 ∘ u2 ∘ u3)`` with unit-norm factors."""

    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    core: complex

    def full(self) -> np.ndarray:
        return self.core * np.einsum("a,b,c->abc", self.u1, self.u2, self.u3)


def mode_unfold(Z: np.ndarray, mode: int) -> np.ndarray:
    return np.moveaxis(Z, mode, 0).reshape(Z.shape[mode], -1, order="F")


def hosvd_rank1(Z, tol: float = 1e-12) -> Rank1Triple:
    """Rank-one truncated HOSVD of a 3-way array.

    Each ``u_n`` is the dominant left singular vector of the mode-``n``
    unfolding; the core is ``Z x1 u1^H x2 u2^H x3 u3^H``.
    """
    Z = _as_complex(Z)
    if Z.ndim != 3:
        raise DimensionError(f"hosvd_rank1 needs a 3-way array, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)) or not np.any(Z):
        raise DegenerateColumnError()
    us = [rank1_svd(mode_unfold(Z, n), tol=tol)[0] for n in range(3)]
    core = np.einsum("abc,a,b,c->", Z, us[0].conj(), us[1].conj(), us[2].conj())
    return Rank1Triple(us[0], us[1], us[2], complex(core))


def parafac4_reconstruct(H, G, T, Phi) -> np.ndarray:
    """Noiseless training tensor ``Y[m_r, q, k, j] = sum_m H G T Phi``.

    Shapes: ``H`` is ``M_r x M``, ``G`` is ``M x Q``, ``T`` is ``K x M`` and
    ``Phi`` is ``J x M``.
    """
    H, G, T, Phi = (_as_complex(a) for a in (H, G, T, Phi))
    M = H.shape[1]
    if G.shape[0] != M or T.shape[1] != M or Phi.shape[1] != M:
        raise DimensionError(
            f"inconsistent shared dimension: H {H.shape}, G {G.shape}, T {T.shape}, Phi {Phi.shape}"
        )
    return np.einsum("am,mb,km,jm->abkj", H, G, T, Phi)
