"""Non-circular CES models: augmented scatter, stochastic-representation
sampling and the second-order modular variate.

A model draws ``z = mu + sqrt(Q) A (D1 u + D2 u*)`` where ``u`` is uniform on
the complex unit sphere, ``Q`` follows the generator's modular-variate law and
``(D1, D2)`` are the real diagonal factors of the noncircularity rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch, InvalidParameter, SingularMatrix
from .generators import DensityGenerator
from .linalg import as_matrix, guarded_inv, rcond, RCOND_MIN


def as_kappa(kappa, m: int | None = None) -> np.ndarray:
    """Validate a vector of noncircularity rates in [0, 1]."""
    k = np.atleast_1d(np.asarray(kappa, dtype=float))
    if k.ndim != 1:
        raise InvalidParameter("kappa must be a vector")
    if m is not None and k.shape[0] != m:
        raise DimensionMismatch(f"kappa has length {k.shape[0]}, expected {m}")
    if np.any(~np.isfinite(k)) or np.any(k < 0) or np.any(k > 1):
        raise InvalidParameter(f"noncircularity rates must lie in [0, 1], got {k}")
    return k


def noncircularity_factors(kappa) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals of ``D1 = (D+ + D-)/2`` and ``D2 = (D+ - D-)/2``, ``D+- = sqrt(1 +- kappa)``.

    They satisfy ``D1^2 + D2^2 = 1`` and ``2 D1 D2 = kappa`` elementwise.
    """
    k = as_kappa(kappa)
    dp = np.sqrt(1.0 + k)
    dm = np.sqrt(1.0 - k)
    return (dp + dm) / 2.0, (dp - dm) / 2.0


@dataclass(frozen=True)
class NcCesModel:
    mu: np.ndarray
    a: np.ndarray
    kappa: np.ndarray
    generator: DensityGenerator

    def __post_init__(self):
        a = as_matrix(self.a, "A")
        m = a.shape[0]
        if a.shape != (m, m):
            raise DimensionMismatch(f"A must be square, got {a.shape}")
        mu = np.asarray(self.mu, dtype=complex).reshape(-1)
        if mu.shape != (m,):
            raise DimensionMismatch(f"mu has length {mu.shape[0]}, expected {m}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "kappa", as_kappa(self.kappa, m))
        if rcond(a) < RCOND_MIN:
            raise SingularMatrix("scatter factor A is singular")

    @classmethod
    def circular(cls, mu, a, generator) -> "NcCesModel":
        return cls(mu, a, np.zeros(np.shape(a)[0]), generator)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        """Scatter matrix ``A A^H``."""
        s = self.a @ self.a.conj().T
        return 0.5 * (s + s.conj().T)

    @property
    def omega(self) -> np.ndarray:
        """Pseudo-scatter matrix ``A diag(kappa) A^T``."""
        w = (self.a * self.kappa) @ self.a.T
        return 0.5 * (w + w.T)

    @property
    def mu_tilde(self) -> np.ndarray:
        return augment(self.mu)


@dataclass(frozen=True)
class AugmentedScatter:
    m: int
    gamma: np.ndarray
    sqrt_gamma: np.ndarray

    def inv(self) -> np.ndarray:
        return guarded_inv(self.gamma, "augmented scatter")


def augment(z) -> np.ndarray:
    """``(z, z*)`` along the last axis."""
    z = np.asarray(z, dtype=complex)
    return np.concatenate([z, z.conj()], axis=-1)


def augmented_scatter(model: NcCesModel) -> AugmentedScatter:
    """``Gamma = [[S, W], [W*, S*]]`` and its factor ``diag(A, A*) [[D1, D2], [D2, D1]]``.

    At ``kappa_m = 1`` Gamma is singular; it is still returned, and consumers
    that need its inverse raise :class:`SingularMatrix`.
    """
    a, m = model.a, model.m
    d1, d2 = noncircularity_factors(model.kappa)
    zero = np.zeros((m, m))
    blk = np.block([[np.diag(d1), np.diag(d2)], [np.diag(d2), np.diag(d1)]])
    sqrt_gamma = np.block([[a, zero], [zero, a.conj()]]) @ blk
    sig, om = model.sigma, model.omega
    gamma = np.block([[sig, om], [om.conj(), sig.conj()]])
    return AugmentedScatter(m=m, gamma=gamma, sqrt_gamma=sqrt_gamma)


def sample_q(gen: DensityGenerator, m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws of the modular variate with density ``q^(M-1) g(q) / delta_M``."""
    return gen.sample_q(m, n, rng)


def sample_sphere(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` x ``m`` array of vectors uniform on the complex unit sphere."""
    y = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    return y / np.linalg.norm(y, axis=1, keepdims=True)


def sample_nc_ces(model: NcCesModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` samples (rows) from the NC-CES model."""
    m = model.m
    q = sample_q(model.generator, m, n, rng)
    u = sample_sphere(m, n, rng)
    d1, d2 = noncircularity_factors(model.kappa)
    v = u * d1 + u.conj() * d2
    return model.mu + np.sqrt(q)[:, None] * (v @ model.a.T)


def mahalanobis_q(z, model: NcCesModel, gamma_inv: np.ndarray | None = None):
    """Half augmented Mahalanobis form ``(z~ - mu~)^H Gamma^-1 (z~ - mu~) / 2``.

    Accepts one vector or an ``n x M`` batch of rows.
    """
    z = np.asarray(z, dtype=complex)
    single = z.ndim == 1
    r = augment(np.atleast_2d(z) - model.mu)
    if gamma_inv is None:
        gamma_inv = augmented_scatter(model).inv()
    q = 0.5 * kernels.hermitian_forms(r, gamma_inv)
    return float(q[0]) if single else q
