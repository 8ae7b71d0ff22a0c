"""Dense complex matrix algebra: vec/Kronecker utilities, guarded inverses and
fourth-order moments of augmented complex Gaussian vectors.

All vectorisation is column-major (``vec`` stacks columns), used consistently
across the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidParameter, SingularMatrix

RCOND_MIN = 1e-12
HERMITIAN_RTOL = 1e-10


def as_matrix(a, name="matrix") -> np.ndarray:
    """Return ``a`` as a 2-D complex array, rejecting empty or non-finite input."""
    arr = np.asarray(a, dtype=complex)
    if arr.ndim != 2 or 0 in arr.shape:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameter(f"{name} has non-finite entries")
    return arr


def vec(a) -> np.ndarray:
    """Stack the columns of ``a`` into a single vector."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(v, rows: int, cols: int | None = None) -> np.ndarray:
    cols = rows if cols is None else cols
    return np.asarray(v).reshape((rows, cols), order="F")


def kron(a, b) -> np.ndarray:
    return np.kron(a, b)


def commutation_matrix(m: int, n: int) -> np.ndarray:
    """Permutation ``K`` with ``K @ vec(C) == vec(C.T)`` for every m x n ``C``."""
    if m < 1 or n < 1:
        raise InvalidParameter("commutation matrix dimensions must be >= 1")
    k = np.zeros((m * n, m * n))
    i, j = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    # C[i, j] sits at i + j*m in vec(C) and at j + i*n in vec(C.T)
    k[(j + i * n).ravel(), (i + j * m).ravel()] = 1.0
    return k


def exchange_matrix(m: int) -> np.ndarray:
    """``J' = [[0, I], [I, 0]]`` of size 2m, swapping the halves of an augmented vector."""
    eye = np.eye(m)
    zero = np.zeros((m, m))
    return np.block([[zero, eye], [eye, zero]])


def rcond(a) -> float:
    """Reciprocal 2-norm condition number (0 for singular input)."""
    s = np.linalg.svd(np.asarray(a), compute_uv=False)
    if s[0] == 0:
        return 0.0
    return float(s[-1] / s[0])


def guarded_inv(a, name="matrix", threshold: float = RCOND_MIN) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {a.shape}")
    rc = rcond(a)
    if not rc >= threshold:
        raise SingularMatrix(f"{name} is singular to working precision (rcond={rc:.3e})")
    return np.linalg.inv(a)


def woodbury_inverse(a, b, c, d, threshold: float = RCOND_MIN) -> np.ndarray:
    """Invert ``A + B C D`` through the matrix inversion lemma.

    ``A``, ``C`` and ``C^{-1} + D A^{-1} B`` must all pass the conditioning
    guard, otherwise :class:`SingularMatrix` is raised.
    """
    a, b, c, d = (np.asarray(x) for x in (a, b, c, d))
    if b.shape[0] != a.shape[0] or d.shape[1] != a.shape[1] or c.shape != (b.shape[1], d.shape[0]):
        raise DimensionMismatch("woodbury_inverse: non-conformable operands")
    a_inv = guarded_inv(a, "A", threshold)
    c_inv = guarded_inv(c, "C", threshold)
    inner = guarded_inv(c_inv + d @ a_inv @ b, "C^-1 + D A^-1 B", threshold)
    return a_inv - a_inv @ b @ inner @ d @ a_inv


def psd_sqrt(a) -> np.ndarray:
    """Hermitian square root of a Hermitian positive semidefinite matrix."""
    w, v = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def inv_sqrt_pd(a, name="matrix") -> np.ndarray:
    """Hermitian inverse square root of a Hermitian positive definite matrix."""
    w, v = np.linalg.eigh(a)
    if w[0] <= RCOND_MIN * max(abs(w[-1]), 1e-300):
        raise SingularMatrix(f"{name} is not positive definite (min eigenvalue {w[0]:.3e})")
    return (v / np.sqrt(w)) @ v.conj().T


def _near(x, y, scale) -> bool:
    return float(np.max(np.abs(x - y), initial=0.0)) <= HERMITIAN_RTOL * (1.0 + scale)


@dataclass(frozen=True)
class AugmentedMatrix:
    """2M x 2M matrix ``[[A1, A2], [A2*, A1*]]`` with A1 Hermitian and A2 symmetric."""

    a1: np.ndarray
    a2: np.ndarray

    def __post_init__(self):
        a1 = as_matrix(self.a1, "A1")
        a2 = as_matrix(self.a2, "A2")
        if a1.shape != a2.shape or a1.shape[0] != a1.shape[1]:
            raise DimensionMismatch("A1 and A2 must be square with equal shapes")
        scale = max(np.max(np.abs(a1)), np.max(np.abs(a2)))
        if not _near(a1, a1.conj().T, scale):
            raise InvalidParameter("A1 is not Hermitian")
        if not _near(a2, a2.T, scale):
            raise InvalidParameter("A2 is not symmetric")
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)

    @property
    def m(self) -> int:
        return self.a1.shape[0]

    @property
    def full(self) -> np.ndarray:
        return np.block([[self.a1, self.a2], [self.a2.conj(), self.a1.conj()]])

    @classmethod
    def from_full(cls, a) -> "AugmentedMatrix":
        a = as_matrix(a, "augmented matrix")
        if a.shape[0] != a.shape[1] or a.shape[0] % 2:
            raise DimensionMismatch("augmented matrix must be 2M x 2M")
        m = a.shape[0] // 2
        aug = cls(a[:m, :m], a[:m, m:])
        scale = float(np.max(np.abs(a)))
        if not _near(aug.full, a, scale):
            raise InvalidParameter("matrix lacks the [[A1, A2], [A2*, A1*]] block structure")
        return aug

    @classmethod
    def identity(cls, m: int) -> "AugmentedMatrix":
        return cls(np.eye(m), np.zeros((m, m)))


def gaussian_fourth_moment(m: int) -> np.ndarray:
    """``E(y~* y~^T kron y~ y~^H)`` for ``y~ = (y, y*)`` with ``y ~ CN(0, I_m)``.

    Returns the 4m^2 x 4m^2 matrix ``I kron I + K (J' kron J') + vec(I) vec(I)^T``.
    """
    if m < 1:
        raise InvalidParameter("M must be >= 1")
    n = 2 * m
    eye = np.eye(n)
    jp = exchange_matrix(m)
    vi = vec(eye)[:, None]
    return np.kron(eye, eye) + commutation_matrix(n, n) @ np.kron(jp, jp) + vi @ vi.T


def _augmented_pair(at, bt):
    at = at if isinstance(at, AugmentedMatrix) else AugmentedMatrix.from_full(at)
    bt = bt if isinstance(bt, AugmentedMatrix) else AugmentedMatrix.from_full(bt)
    if at.m != bt.m:
        raise DimensionMismatch(f"augmented matrices differ in M ({at.m} vs {bt.m})")
    return at.full, bt.full


def quadratic_form_expectation(at, bt) -> complex:
    """``E[(y~^H A~ y~)(y~^H B~ y~)] = tr(A~) tr(B~) + 2 tr(A~ B~)``."""
    a, b = _augmented_pair(at, bt)
    return complex(np.trace(a) * np.trace(b) + 2.0 * np.trace(a @ b))


def fourth_moment_contraction(at, bt) -> complex:
    """The same expectation as a trace against :func:`gaussian_fourth_moment`."""
    a, b = _augmented_pair(at, bt)
    m = a.shape[0] // 2
    return complex(np.trace(np.kron(a.T, b) @ gaussian_fourth_moment(m)))
