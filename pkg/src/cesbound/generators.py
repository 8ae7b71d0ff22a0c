"""Density generators of complex elliptically symmetric distributions.

A generator ``g`` fixes the law of the second-order modular variate ``Q``, whose
density on (0, inf) is ``q**(M-1) g(q) / delta_M``. Every generator here is
scaled so that ``E(Q) = M`` whenever that moment is finite, which is the
normalisation the Fisher information formulas assume.

All one-dimensional integrals are computed on the log scale ``q = exp(x)``,
centred on the mode of the integrand, with adaptive Gauss-Kronrod quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, interpolate, optimize, special, stats

from .errors import DivergentIntegral, InvalidParameter

QUAD_EPSREL = 1e-10
QUAD_EPSABS = 1e-10
_TAIL_LOGW = -60.0
_MAX_LOG_SPAN = 600.0


@dataclass(frozen=True)
class XiCoefficients:
    """Moment coefficients ``xi1 = E[Q phi^2]/M`` and ``xi2 = E[Q^2 phi^2]/(M(M+1))``."""

    xi1: float
    xi2: float
    m: int


class DensityGenerator:
    """Base class; subclasses supply ``log_g`` and ``phi`` for a given dimension M.

    The generic machinery (quadrature moments, numeric CDF, inverse-CDF
    sampling) only needs those two callables, so user-defined generators can
    subclass this directly.
    """

    kind = "generic"
    finite_mean = True

    def log_g(self, t, m: int):
        raise NotImplementedError

    def phi(self, t, m: int):
        """Log-derivative ``g'(t) / g(t)``."""
        raise NotImplementedError

    def g(self, t, m: int):
        return np.exp(self.log_g(t, m))

    @property
    def params(self) -> dict:
        return {}

    def describe(self) -> dict:
        return {"kind": self.kind, **self.params}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"

    # -- log-scale integrand ---------------------------------------------
    def _log_weight(self, x, m: int):
        """Log of ``q**M g(q)`` at ``q = exp(x)``: the density kernel times the Jacobian."""
        return m * x + self.log_g(np.exp(x), m)

    def _mode(self, m: int) -> float:
        res = optimize.minimize_scalar(
            lambda x: -self._log_weight(x, m), bracket=(math.log(m) - 1.0, math.log(m) + 1.0)
        )
        return float(res.x)

    @lru_cache(maxsize=64)
    def _support(self, m: int) -> tuple[float, float, float]:
        """Mode and log-scale bounds outside which the kernel is below e^-60 of its peak."""
        x0 = self._mode(m)
        peak = self._log_weight(x0, m)

        def edge(direction):
            step = 0.5
            x = x0
            while self._log_weight(x + direction * step, m) - peak > _TAIL_LOGW:
                x += direction * step
                step *= 1.5
                if step > 1e3:
                    break
            return x + direction * step

        return x0, edge(-1.0), edge(+1.0)

    def _integrate(self, f, m: int, rel_scale: float = 1.0):
        """``int f(q) q**(M-1) g(q) dq`` divided by ``exp(peak)``; returns (value, peak)."""
        x0, lo, hi = self._support(m)
        peak = self._log_weight(x0, m)

        def integrand(x):
            return f(math.exp(x)) * math.exp(self._log_weight(x, m) - peak)

        lo, hi = self._extend(integrand, x0, lo, -1.0, m), self._extend(integrand, x0, hi, +1.0, m)
        total, err = 0.0, 0.0
        for a, b in ((lo, x0), (x0, hi)):
            val, e, info = integrate.quad(
                integrand, a, b, epsabs=QUAD_EPSABS * rel_scale, epsrel=QUAD_EPSREL,
                limit=400, full_output=True,
            )[:3]
            total += val
            err += e
        if not np.isfinite(total) or err > 1e-8 * max(1.0, abs(total)):
            raise DivergentIntegral(
                f"{self!r}: quadrature failed for M={m} (value {total:.6g}, error {err:.3g})"
            )
        return total, peak

    def _extend(self, integrand, x0, edge, direction, m):
        """Push a support edge outwards until ``f`` times the kernel is negligible there too."""
        step = 1.0
        while abs(integrand(edge)) > math.exp(_TAIL_LOGW):
            edge += direction * step
            step *= 1.5
            if abs(edge - x0) > _MAX_LOG_SPAN:
                raise DivergentIntegral(f"{self!r}: integrand does not decay for M={m}; the moment is infinite")
        return edge

    def delta(self, m: int) -> float:
        """Normalisation ``delta_M = int_0^inf t^(M-1) g(t) dt`` by quadrature."""
        val, peak = self._integrate(lambda q: 1.0, m)
        return val * math.exp(peak)

    def expect(self, f, m: int) -> float:
        """``E[f(Q)]`` under the modular-variate density, by quadrature."""
        num, _ = self._integrate(f, m)
        den, _ = self._integrate(lambda q: 1.0, m)
        return num / den

    # -- distribution of Q -------------------------------------------------
    @lru_cache(maxsize=32)
    def _cdf_table(self, m: int, points: int = 8193):
        """Monotone cubic interpolants of the CDF of ``log Q`` and of its inverse."""
        x0, lo, hi = self._support(m)
        x = np.linspace(lo, hi, points)
        w = np.exp(self._log_weight(x, m) - self._log_weight(x0, m))
        cdf = integrate.cumulative_simpson(w, x=x, initial=0.0)
        cdf = np.maximum.accumulate(np.clip(cdf, 0.0, None))
        cdf /= cdf[-1]
        keep = np.concatenate(([True], np.diff(cdf) > 0))
        forward = interpolate.PchipInterpolator(x, cdf, extrapolate=False)
        inverse = interpolate.PchipInterpolator(cdf[keep], x[keep], extrapolate=False)
        return lo, hi, forward, inverse

    def q_cdf(self, q, m: int):
        """CDF of Q; numeric table here, closed forms in the concrete families."""
        lo, hi, forward, _ = self._cdf_table(m)
        with np.errstate(divide="ignore"):
            x = np.log(np.asarray(q, dtype=float))
        return np.where(x <= lo, 0.0, np.where(x >= hi, 1.0, forward(np.clip(x, lo, hi))))

    def sample_q_inverse_cdf(self, m: int, size, rng: np.random.Generator):
        """Inverse-CDF draws of Q from the numeric table (fallback sampler)."""
        _, _, _, inverse = self._cdf_table(m)
        return np.exp(inverse(rng.random(size)))

    def sample_q(self, m: int, size, rng: np.random.Generator):
        return self.sample_q_inverse_cdf(m, size, rng)


class Gaussian(DensityGenerator):
    kind = "gaussian"

    def log_g(self, t, m):
        return -np.asarray(t, dtype=float)

    def phi(self, t, m):
        return -np.ones_like(np.asarray(t, dtype=float))

    def log_delta(self, m):
        return special.gammaln(m)

    def xi_closed_form(self, m) -> XiCoefficients:
        return XiCoefficients(xi1=1.0, xi2=1.0, m=m)

    def q_cdf(self, q, m):
        return stats.gamma.cdf(q, a=m)

    def sample_q(self, m, size, rng):
        return rng.gamma(m, 1.0, size)


class StudentT(DensityGenerator):
    """Complex t generator ``g(t) = (1 + t/b)**-(M + nu/2)``.

    ``b = (nu - 2)/2`` gives ``E(Q) = M``; for ``nu <= 2`` the mean is infinite
    and ``b = nu/2`` is used instead.
    """

    kind = "student-t"

    def __init__(self, nu: float):
        if not nu > 0:
            raise InvalidParameter(f"student-t needs nu > 0, got {nu}")
        self.nu = float(nu)
        self.finite_mean = self.nu > 2
        self.b = (self.nu - 2.0) / 2.0 if self.finite_mean else self.nu / 2.0

    @property
    def params(self):
        return {"nu": self.nu}

    def _power(self, m):
        return m + self.nu / 2.0

    def log_g(self, t, m):
        return -self._power(m) * np.log1p(np.asarray(t, dtype=float) / self.b)

    def phi(self, t, m):
        return -self._power(m) / (self.b + np.asarray(t, dtype=float))

    def log_delta(self, m):
        return m * math.log(self.b) + special.betaln(m, self.nu / 2.0)

    def q_cdf(self, q, m):
        q = np.asarray(q, dtype=float)
        return stats.beta.cdf(q / (self.b + q), m, self.nu / 2.0)

    def sample_q(self, m, size, rng):
        # Q / b is beta-prime(M, nu/2), i.e. a ratio of independent gammas
        return self.b * rng.gamma(m, 1.0, size) / rng.gamma(self.nu / 2.0, 1.0, size)

    def xi_closed_form(self, m) -> XiCoefficients:
        """Closed forms from the beta representation ``Q/(b+Q) ~ Beta(M, nu/2)``."""
        p = 2.0 * m + self.nu
        xi1 = p * self.nu / (2.0 * self.b * (p + 2.0))
        return XiCoefficients(xi1=xi1, xi2=p / (p + 2.0), m=m)


class GeneralizedGaussian(DensityGenerator):
    """Generator ``g(t) = exp(-t**s / b)`` with ``b`` fixed by ``E(Q) = M``."""

    kind = "generalized-gaussian"

    def __init__(self, s: float):
        if not s > 0:
            raise InvalidParameter(f"generalized-gaussian needs s > 0, got {s}")
        self.s = float(s)

    @property
    def params(self):
        return {"s": self.s}

    def scale(self, m) -> float:
        # delta_{M+1}/delta_M = b**(1/s) Gamma((M+1)/s) / Gamma(M/s) = M
        s = self.s
        return math.exp(s * (math.log(m) + special.gammaln(m / s) - special.gammaln((m + 1) / s)))

    def log_g(self, t, m):
        return -np.asarray(t, dtype=float) ** self.s / self.scale(m)

    def phi(self, t, m):
        t = np.asarray(t, dtype=float)
        return -self.s * t ** (self.s - 1.0) / self.scale(m)

    def log_delta(self, m):
        s = self.s
        return (m / s) * math.log(self.scale(m)) - math.log(s) + special.gammaln(m / s)

    def q_cdf(self, q, m):
        q = np.asarray(q, dtype=float)
        return stats.gamma.cdf(q**self.s / self.scale(m), a=m / self.s)

    def sample_q(self, m, size, rng):
        return (self.scale(m) * rng.gamma(m / self.s, 1.0, size)) ** (1.0 / self.s)

    def xi_closed_form(self, m) -> XiCoefficients:
        """Closed forms via ``Q**s / b ~ Gamma(M/s, 1)``."""
        s, b = self.s, self.scale(m)
        a = m / s
        log_moment = ((2 * s - 1) / s) * math.log(b) + special.gammaln(a + 2 - 1 / s) - special.gammaln(a)
        xi1 = s * s * math.exp(log_moment) / (b * b * m)
        return XiCoefficients(xi1=xi1, xi2=(m + s) / (m + 1), m=m)


_KINDS = {
    "gaussian": (Gaussian, ()),
    "student-t": (StudentT, ("nu",)),
    "generalized-gaussian": (GeneralizedGaussian, ("s",)),
}


def make_generator(kind: str, **params) -> DensityGenerator:
    """Build a generator by name: ``gaussian``, ``student-t`` (nu) or ``generalized-gaussian`` (s)."""
    try:
        cls, names = _KINDS[kind]
    except KeyError:
        raise InvalidParameter(f"unknown generator kind {kind!r}; expected one of {sorted(_KINDS)}")
    missing = [n for n in names if n not in params]
    extra = sorted(set(params) - set(names))
    if missing or extra:
        raise InvalidParameter(f"{kind}: expected parameters {list(names)}, got {sorted(params)}")
    return cls(**{n: float(params[n]) for n in names})


def xi_coefficients(gen: DensityGenerator, m: int) -> XiCoefficients:
    """Quadrature values of the coefficients that scale the CES Fisher information."""
    if m < 1:
        raise InvalidParameter("M must be >= 1")
    xi1 = gen.expect(lambda q: q * float(gen.phi(q, m)) ** 2, m) / m
    xi2 = gen.expect(lambda q: (q * float(gen.phi(q, m))) ** 2, m) / (m * (m + 1))
    return XiCoefficients(xi1=xi1, xi2=xi2, m=m)


def moment_checks(gen: DensityGenerator, m: int) -> dict[str, float]:
    """Quadrature values of the normalisation, ``E(Q)`` and ``E(Q phi(Q))``."""
    out = {"E[Q phi(Q)]": gen.expect(lambda q: q * float(gen.phi(q, m)), m)}
    if gen.finite_mean:
        out["E[Q]"] = gen.expect(lambda q: q, m)
    if hasattr(gen, "log_delta"):
        out["normalization"] = gen.delta(m) * math.exp(-gen.log_delta(m))
    return out
