"""Score function and Fisher information of parameterised NC-CES models.

The analytic FIM is the extended Slepian-Bangs form

    I[k, l] = xi1 Re(mu_k^H G^-1 mu_l)
              + xi2/2 tr(G^-1 G_k G^-1 G_l)
              + (xi2 - 1)/4 tr(G^-1 G_k) tr(G^-1 G_l)

with ``G`` the augmented scatter and ``mu_k``, ``G_k`` the derivatives of the
augmented mean and scatter. :func:`empirical_fim` is its Monte Carlo oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .ces import NcCesModel, augment, augmented_scatter
from .errors import DimensionMismatch, InvalidParameter
from .generators import XiCoefficients
from .linalg import AugmentedMatrix, guarded_inv, vec

FD_STEP = 1e-6

Derivatives = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class ParamModel:
    """Real parameter vector ``alpha`` with a builder ``alpha -> NcCesModel``.

    ``derivative(alpha)`` returns ``(mu_k, gamma_k)`` stacked as ``L x 2M`` and
    ``L x 2M x 2M`` arrays. When omitted, central finite differences are used.
    """

    alpha: np.ndarray
    build: Callable[[np.ndarray], NcCesModel]
    derivative: Callable[[np.ndarray], Derivatives] | None = None
    names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float).reshape(-1))

    @property
    def size(self) -> int:
        return self.alpha.shape[0]

    def model(self, alpha=None) -> NcCesModel:
        return self.build(self.alpha if alpha is None else np.asarray(alpha, dtype=float))

    def derivatives(self, alpha=None) -> Derivatives:
        alpha = self.alpha if alpha is None else np.asarray(alpha, dtype=float)
        if self.derivative is None:
            return finite_difference_derivatives(self.build, alpha)
        mus, gammas = self.derivative(alpha)
        return np.asarray(mus, dtype=complex), np.asarray(gammas, dtype=complex)


def finite_difference_derivatives(build, alpha, step: float = FD_STEP) -> Derivatives:
    """Central differences of the augmented mean and scatter in each ``alpha_k``."""
    alpha = np.asarray(alpha, dtype=float)
    mus, gammas = [], []
    for k in range(alpha.shape[0]):
        h = step * max(1.0, abs(alpha[k]))
        hi, lo = alpha.copy(), alpha.copy()
        hi[k] += h
        lo[k] -= h
        mh, ml = build(hi), build(lo)
        mus.append((mh.mu_tilde - ml.mu_tilde) / (2 * h))
        gammas.append((augmented_scatter(mh).gamma - augmented_scatter(ml).gamma) / (2 * h))
    return np.array(mus), np.array(gammas)


@dataclass(frozen=True)
class ParamSpec:
    """One real parameter: an entry of ``mu``, ``A`` or ``kappa``, real or imaginary part."""

    target: str
    index: tuple[int, ...]
    part: str = "re"

    def __post_init__(self):
        idx = tuple(int(i) for i in np.atleast_1d(self.index))
        object.__setattr__(self, "index", idx)
        want = {"mu": 1, "a": 2, "kappa": 1}
        if self.target not in want:
            raise InvalidParameter(f"unknown parameter target {self.target!r}")
        if len(idx) != want[self.target]:
            raise InvalidParameter(f"{self.target} parameter needs {want[self.target]} indices")
        if self.part not in ("re", "im") or (self.target == "kappa" and self.part != "re"):
            raise InvalidParameter(f"invalid part {self.part!r} for {self.target}")

    @property
    def name(self) -> str:
        return f"{self.part}({self.target}[{','.join(map(str, self.index))}])"

    def unit(self) -> complex:
        return 1.0 if self.part == "re" else 1j

    def read(self, model: NcCesModel) -> float:
        if self.target == "kappa":
            return float(model.kappa[self.index])
        value = (model.mu if self.target == "mu" else model.a)[self.index]
        return float(value.real if self.part == "re" else value.imag)


def entry_param_model(base: NcCesModel, specs: Sequence[ParamSpec]) -> ParamModel:
    """Parameterise selected entries of ``base`` with analytic derivatives."""
    specs = tuple(specs)
    if not specs:
        raise InvalidParameter("at least one parameter is required")
    m = base.m

    def build(alpha):
        mu, a, kappa = base.mu.copy(), base.a.copy(), base.kappa.copy()
        for spec, val in zip(specs, alpha):
            if spec.target == "kappa":
                kappa[spec.index] = val
                continue
            arr = mu if spec.target == "mu" else a
            cur = arr[spec.index]
            arr[spec.index] = complex(val, cur.imag) if spec.part == "re" else complex(cur.real, val)
        return NcCesModel(mu, a, kappa, base.generator)

    def derivative(alpha):
        model = build(alpha)
        a = model.a
        zero = np.zeros((m, m))
        big_a = np.block([[a, zero], [zero, a.conj()]])
        core = np.block([[np.eye(m), np.diag(model.kappa)], [np.diag(model.kappa), np.eye(m)]])
        mus = np.zeros((len(specs), 2 * m), dtype=complex)
        gammas = np.zeros((len(specs), 2 * m, 2 * m), dtype=complex)
        for k, spec in enumerate(specs):
            if spec.target == "mu":
                e = np.zeros(m, dtype=complex)
                e[spec.index] = spec.unit()
                mus[k] = augment(e)
            elif spec.target == "a":
                e = np.zeros((m, m), dtype=complex)
                e[spec.index] = spec.unit()
                de = np.block([[e, zero], [zero, e.conj()]])
                left = de @ core @ big_a.conj().T
                gammas[k] = left + left.conj().T
            else:
                dc = np.zeros((2 * m, 2 * m))
                i = spec.index[0]
                dc[i, m + i] = dc[m + i, i] = 1.0
                gammas[k] = big_a @ dc @ big_a.conj().T
        return mus, gammas

    alpha0 = np.array([s.read(base) for s in specs])
    return ParamModel(alpha=alpha0, build=build, derivative=derivative, names=tuple(s.name for s in specs))


@dataclass(frozen=True)
class FimMatrix:
    entries: np.ndarray
    xi: XiCoefficients | None = None


@dataclass(frozen=True)
class EmpiricalFim:
    """Sample second moment of the score, with per-entry standard errors."""

    entries: np.ndarray
    stderr: np.ndarray
    score_mean: np.ndarray
    score_stderr: np.ndarray
    n: int


def _check_structure(gammas):
    for k, gk in enumerate(gammas):
        try:
            AugmentedMatrix.from_full(gk)
        except Exception as exc:
            raise DimensionMismatch(f"scatter derivative {k} lacks augmented structure: {exc}") from exc


def fim_terms(gamma, mus, gammas, xi: XiCoefficients) -> dict[str, np.ndarray]:
    """The three expectation terms whose sum is the FIM.

    ``"score_mean"`` is ``-tr(G^-1 G_k) tr(G^-1 G_l) / 4``, ``"location"`` the
    ``E[Q phi^2]`` term and ``"scatter"`` the ``E[Q^2 phi^2]`` term.
    """
    ginv = guarded_inv(gamma, "augmented scatter")
    mus = np.asarray(mus, dtype=complex)
    gammas = np.asarray(gammas, dtype=complex)
    if mus.shape[0] != gammas.shape[0]:
        raise DimensionMismatch("mean and scatter derivatives disagree on L")
    hk = ginv @ gammas
    t = np.real(np.trace(hk, axis1=1, axis2=2))
    cross = np.real(np.einsum("kab,lba->kl", hk, hk))
    location = xi.xi1 * np.real(mus.conj() @ ginv @ mus.T)
    scatter = xi.xi2 / 4.0 * (np.outer(t, t) + 2.0 * cross)
    return {"score_mean": -0.25 * np.outer(t, t), "location": location, "scatter": scatter}


def fim_from_derivatives(gamma, mus, gammas, xi: XiCoefficients) -> np.ndarray:
    terms = fim_terms(gamma, mus, gammas, xi)
    total = terms["score_mean"] + terms["location"] + terms["scatter"]
    return 0.5 * (total + total.T)


def fim_ncces(pm: ParamModel, xi: XiCoefficients) -> FimMatrix:
    """Analytic FIM of ``pm`` at its current ``alpha``."""
    mus, gammas = pm.derivatives()
    _check_structure(gammas)
    gamma = augmented_scatter(pm.model()).gamma
    return FimMatrix(entries=fim_from_derivatives(gamma, mus, gammas, xi), xi=xi)


def score(z, pm: ParamModel) -> np.ndarray:
    """Score ``d log p(z; alpha) / d alpha`` for one sample or an ``n x M`` batch."""
    z = np.asarray(z, dtype=complex)
    single = z.ndim == 1
    model = pm.model()
    mus, gammas = pm.derivatives()
    s = _score_batch(np.atleast_2d(z), model, mus, gammas)
    return s[0] if single else s


def _score_batch(z, model: NcCesModel, mus, gammas) -> np.ndarray:
    ginv = augmented_scatter(model).inv()
    r = augment(z - model.mu)
    eta, lin, quad = kernels.score_pieces(r, ginv, gammas, mus)
    half_tr = 0.5 * np.real(np.trace(ginv @ gammas, axis1=1, axis2=2))
    phi = model.generator.phi(eta, model.m)
    return -half_tr + phi[:, None] * (-lin - 0.5 * quad)


def log_density_kernel(z, model: NcCesModel) -> float:
    """``log p(z)`` up to an additive constant independent of the model parameters."""
    sc = augmented_scatter(model)
    sign, logdet = np.linalg.slogdet(sc.gamma)
    r = augment(np.asarray(z, dtype=complex) - model.mu)
    eta = 0.5 * np.real(r.conj() @ np.linalg.solve(sc.gamma, r))
    return float(-0.5 * logdet + model.generator.log_g(eta, model.m))


@dataclass
class ScoreMoments:
    """Running sums for the score mean and second moment (mergeable in a fixed order)."""

    size: int
    n: int = 0
    s1: np.ndarray = field(default=None)
    s2: np.ndarray = field(default=None)
    p1: np.ndarray = field(default=None)
    p2: np.ndarray = field(default=None)

    def __post_init__(self):
        L = self.size
        for name, shape in (("s1", L), ("s2", L), ("p1", (L, L)), ("p2", (L, L))):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(shape))

    def add(self, scores: np.ndarray) -> "ScoreMoments":
        sq = scores * scores
        self.n += scores.shape[0]
        self.s1 += scores.sum(axis=0)
        self.s2 += sq.sum(axis=0)
        self.p1 += scores.T @ scores
        self.p2 += sq.T @ sq
        return self

    def merge(self, other: "ScoreMoments") -> "ScoreMoments":
        self.n += other.n
        for name in ("s1", "s2", "p1", "p2"):
            getattr(self, name).__iadd__(getattr(other, name))
        return self

    def result(self) -> EmpiricalFim:
        n = self.n
        mean = self.s1 / n
        fim = self.p1 / n
        var_s = np.clip(self.s2 / n - mean**2, 0.0, None) * n / (n - 1)
        var_p = np.clip(self.p2 / n - fim**2, 0.0, None) * n / (n - 1)
        return EmpiricalFim(
            entries=0.5 * (fim + fim.T),
            stderr=np.sqrt(var_p / n),
            score_mean=mean,
            score_stderr=np.sqrt(var_s / n),
            n=n,
        )


def score_moments(samples, pm: ParamModel, batch: int = 100_000) -> ScoreMoments:
    model = pm.model()
    mus, gammas = pm.derivatives()
    acc = ScoreMoments(pm.size)
    samples = np.asarray(samples, dtype=complex)
    for start in range(0, samples.shape[0], batch):
        acc.add(_score_batch(samples[start:start + batch], model, mus, gammas))
    return acc


def empirical_fim(samples, pm: ParamModel, batch: int = 100_000) -> EmpiricalFim:
    """Monte Carlo FIM: sample mean of ``score score^T`` over ``samples`` (rows)."""
    samples = np.asarray(samples)
    if samples.shape[0] < 1000:
        raise InvalidParameter("empirical_fim needs at least 1000 samples")
    return score_moments(samples, pm, batch).result()


def gap_kernel(gamma) -> np.ndarray:
    """``G^-T kron G^-1 + vec(G^-1) vec(G^-1)^H / 2``."""
    ginv = guarded_inv(gamma, "augmented scatter")
    v = vec(ginv)[:, None]
    return np.kron(ginv.T, ginv) + 0.5 * (v @ v.conj().T)


def gaussian_fim_gap(pm: ParamModel, xi: XiCoefficients) -> np.ndarray:
    """FIM of the CES model minus that of the Gaussian model with the same scatter.

    Only the scatter parameters contribute; the location term cancels because
    the two models differ only through ``xi2``.
    """
    _, gammas = pm.derivatives()
    _check_structure(gammas)
    gamma = augmented_scatter(pm.model()).gamma
    d = np.stack([vec(gk) for gk in gammas], axis=1)
    gap = 0.5 * (xi.xi2 - 1.0) * (d.conj().T @ gap_kernel(gamma) @ d)
    gap = np.real(gap)
    return 0.5 * (gap + gap.T)
