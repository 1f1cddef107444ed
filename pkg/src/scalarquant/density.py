"""Source densities on the unit interval and their local linear approximation.

Every density is supported on [0, 1]. Truncated families are renormalized by
their mass on the unit interval, so ``pdf`` always integrates to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateIntervalError, DensitySpecError, DomainError

DEGENERACY_FLOOR = 1e-12


class DensityKind(Enum):
    UNIFORM = "uniform"
    BETA = "beta"
    TRUNCATED_NORMAL = "truncated_normal"
    TRUNCATED_EXPONENTIAL = "truncated_exponential"
    PIECEWISE_LINEAR = "piecewise_linear"


# Short names accepted by the CLI grammar ``name[:p1,p2,...]``.
ALIASES = {
    "uniform": DensityKind.UNIFORM,
    "beta": DensityKind.BETA,
    "truncated_normal": DensityKind.TRUNCATED_NORMAL,
    "truncnorm": DensityKind.TRUNCATED_NORMAL,
    "normal": DensityKind.TRUNCATED_NORMAL,
    "truncated_exponential": DensityKind.TRUNCATED_EXPONENTIAL,
    "truncexp": DensityKind.TRUNCATED_EXPONENTIAL,
    "exponential": DensityKind.TRUNCATED_EXPONENTIAL,
    "piecewise_linear": DensityKind.PIECEWISE_LINEAR,
    "piecewise": DensityKind.PIECEWISE_LINEAR,
}


def _as_unit_points(x):
    arr = np.asarray(x, dtype=np.float64)
    bad = ~((arr >= 0.0) & (arr <= 1.0))
    if np.any(bad):
        raise DomainError(f"points must lie in [0, 1], got {arr[bad].flat[0]!r}")
    return arr


def _scalar_or_array(x_in, out):
    if np.ndim(x_in) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Density:
    """A probability density on [0, 1].

    Build instances through the classmethods (``uniform``, ``beta``, ...) or
    :meth:`from_config`. ``slope_bound`` is the declared bound on ``|f'|``;
    it is informational and never consumed by the design algorithms.
    """

    kind: DensityKind
    params: tuple = ()
    slope_bound: float = field(default=0.0, compare=False)
    _norm: float = field(default=1.0, repr=False, compare=False)

    # -- constructors -----------------------------------------------------

    @classmethod
    def uniform(cls) -> "Density":
        return cls(DensityKind.UNIFORM, (), 0.0, 1.0)

    @classmethod
    def beta(cls, alpha: float, beta: float) -> "Density":
        alpha, beta = float(alpha), float(beta)
        if not (alpha >= 1.0 and beta >= 1.0):
            # alpha or beta below one gives an unbounded pdf at the support ends
            raise DensitySpecError(f"beta parameters must be >= 1, got ({alpha}, {beta})")
        log_b = math.lgamma(alpha) + math.lgamma(beta) - math.lgamma(alpha + beta)
        d = cls(DensityKind.BETA, (alpha, beta), 0.0, math.exp(-log_b))
        return d._with_slope_bound(_sampled_slope_bound(d))

    @classmethod
    def truncated_normal(cls, mu: float, sigma: float) -> "Density":
        mu, sigma = float(mu), float(sigma)
        if not sigma > 0.0:
            raise DensitySpecError(f"sigma must be positive, got {sigma}")
        mass = 0.5 * (math.erf((1.0 - mu) / (sigma * math.sqrt(2.0)))
                      - math.erf((0.0 - mu) / (sigma * math.sqrt(2.0))))
        if mass <= 1e-300:
            raise DensitySpecError("normal distribution has no mass on [0, 1]")
        d = cls(DensityKind.TRUNCATED_NORMAL, (mu, sigma), 0.0,
                1.0 / (mass * sigma * math.sqrt(2.0 * math.pi)))
        return d._with_slope_bound(_sampled_slope_bound(d))

    @classmethod
    def truncated_exponential(cls, lam: float) -> "Density":
        lam = float(lam)
        if not lam > 0.0:
            raise DensitySpecError(f"rate must be positive, got {lam}")
        norm = lam / -math.expm1(-lam)
        return cls(DensityKind.TRUNCATED_EXPONENTIAL, (lam,), lam * norm, norm)

    @classmethod
    def piecewise_linear(cls, knots: Sequence[Sequence[float]]) -> "Density":
        """Density interpolating ``knots = [(x_0, f_0), ..., (x_n, f_n)]``.

        Knot abscissae must run strictly upward from 0 to 1. Ordinates are
        rescaled so that the trapezoid area is one.
        """
        try:
            pts = np.asarray(knots, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise DensitySpecError(f"bad knot list: {exc}") from None
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise DensitySpecError("knots must be a list of at least two (x, f) pairs")
        xs, fs = pts[:, 0], pts[:, 1]
        if xs[0] != 0.0 or xs[-1] != 1.0 or np.any(np.diff(xs) <= 0.0):
            raise DensitySpecError("knot abscissae must increase strictly from 0 to 1")
        if np.any(fs < 0.0):
            raise DensitySpecError("knot ordinates must be nonnegative")
        area = float(np.sum(0.5 * (fs[1:] + fs[:-1]) * np.diff(xs)))
        if area <= 0.0:
            raise DensitySpecError("piecewise density has zero area")
        fs = fs / area
        slopes = np.diff(fs) / np.diff(xs)
        return cls(DensityKind.PIECEWISE_LINEAR, (tuple(xs), tuple(fs)),
                   float(np.max(np.abs(slopes))), 1.0)

    @classmethod
    def from_config(cls, cfg: Mapping) -> "Density":
        """Parse ``{"kind": "beta", "alpha": 2, "beta": 4}`` style records."""
        if "kind" not in cfg:
            raise DensitySpecError("density record needs a 'kind' field")
        name = str(cfg["kind"]).lower()
        if name not in ALIASES:
            raise DensitySpecError(f"unknown density {name!r}; known: {sorted(ALIASES)}")
        kind = ALIASES[name]
        try:
            if kind is DensityKind.UNIFORM:
                return cls.uniform()
            if kind is DensityKind.BETA:
                return cls.beta(cfg["alpha"], cfg["beta"])
            if kind is DensityKind.TRUNCATED_NORMAL:
                return cls.truncated_normal(cfg["mu"], cfg["sigma"])
            if kind is DensityKind.TRUNCATED_EXPONENTIAL:
                return cls.truncated_exponential(cfg.get("lam", cfg.get("lambda")))
            return cls.piecewise_linear(cfg["knots"])
        except KeyError as exc:
            raise DensitySpecError(f"density {name!r} is missing parameter {exc}") from None
        except TypeError as exc:
            raise DensitySpecError(f"density {name!r}: {exc}") from None

    @classmethod
    def parse(cls, text: str) -> "Density":
        """Parse the ``name[:p1,p2,...]`` grammar, e.g. ``beta:2,4``.

        Piecewise densities take flattened knots: ``piecewise:0,1,0.5,2,1,1``.
        """
        name, _, rest = text.strip().partition(":")
        name = name.lower()
        if name not in ALIASES:
            raise DensitySpecError(f"unknown density {name!r}; known: {sorted(ALIASES)}")
        try:
            vals = [float(v) for v in rest.split(",")] if rest else []
        except ValueError:
            raise DensitySpecError(f"non-numeric parameter in {text!r}") from None
        kind = ALIASES[name]
        arity = {DensityKind.UNIFORM: 0, DensityKind.BETA: 2,
                 DensityKind.TRUNCATED_NORMAL: 2, DensityKind.TRUNCATED_EXPONENTIAL: 1}
        if kind is DensityKind.PIECEWISE_LINEAR:
            if len(vals) < 4 or len(vals) % 2:
                raise DensitySpecError("piecewise needs an even number (>= 4) of values")
            return cls.piecewise_linear(list(zip(vals[::2], vals[1::2])))
        if len(vals) != arity[kind]:
            raise DensitySpecError(f"{name} takes {arity[kind]} parameter(s), got {len(vals)}")
        return {
            DensityKind.UNIFORM: lambda: cls.uniform(),
            DensityKind.BETA: lambda: cls.beta(*vals),
            DensityKind.TRUNCATED_NORMAL: lambda: cls.truncated_normal(*vals),
            DensityKind.TRUNCATED_EXPONENTIAL: lambda: cls.truncated_exponential(*vals),
        }[kind]()

    def to_config(self) -> dict:
        if self.kind is DensityKind.UNIFORM:
            return {"kind": "uniform"}
        if self.kind is DensityKind.BETA:
            return {"kind": "beta", "alpha": self.params[0], "beta": self.params[1]}
        if self.kind is DensityKind.TRUNCATED_NORMAL:
            return {"kind": "truncated_normal", "mu": self.params[0], "sigma": self.params[1]}
        if self.kind is DensityKind.TRUNCATED_EXPONENTIAL:
            return {"kind": "truncated_exponential", "lam": self.params[0]}
        return {"kind": "piecewise_linear", "knots": [list(p) for p in zip(*self.params)]}

    def _with_slope_bound(self, m: float) -> "Density":
        return Density(self.kind, self.params, m, self._norm)

    @property
    def name(self) -> str:
        if not self.params or self.kind is DensityKind.PIECEWISE_LINEAR:
            return self.kind.value
        return f"{self.kind.value}({','.join(f'{p:g}' for p in self.params)})"

    # -- evaluation -------------------------------------------------------

    def pdf(self, x):
        """Density value at ``x`` (scalar or array); raises DomainError off [0, 1]."""
        arr = _as_unit_points(x)
        return _scalar_or_array(x, self._pdf(arr))

    def dpdf(self, x):
        """Derivative of the density (one-sided at knots and support ends)."""
        arr = _as_unit_points(x)
        return _scalar_or_array(x, self._dpdf(arr))

    def _pdf(self, x: np.ndarray) -> np.ndarray:
        k = self.kind
        if k is DensityKind.UNIFORM:
            return np.ones_like(x)
        if k is DensityKind.BETA:
            a, b = self.params
            return self._norm * x ** (a - 1.0) * (1.0 - x) ** (b - 1.0)
        if k is DensityKind.TRUNCATED_NORMAL:
            mu, s = self.params
            return self._norm * np.exp(-0.5 * ((x - mu) / s) ** 2)
        if k is DensityKind.TRUNCATED_EXPONENTIAL:
            return self._norm * np.exp(-self.params[0] * x)
        xs, fs = self.params
        return np.interp(x, xs, fs)

    def _dpdf(self, x: np.ndarray) -> np.ndarray:
        k = self.kind
        if k is DensityKind.UNIFORM:
            return np.zeros_like(x)
        if k is DensityKind.BETA:
            a, b = self.params
            with np.errstate(divide="ignore", invalid="ignore"):
                left = (a - 1.0) * x ** (a - 2.0) * (1.0 - x) ** (b - 1.0) if a != 1.0 else 0.0
                right = (b - 1.0) * x ** (a - 1.0) * (1.0 - x) ** (b - 2.0) if b != 1.0 else 0.0
            return self._norm * (left - right) + np.zeros_like(x)
        if k is DensityKind.TRUNCATED_NORMAL:
            mu, s = self.params
            return -(x - mu) / s**2 * self._pdf(x)
        if k is DensityKind.TRUNCATED_EXPONENTIAL:
            return -self.params[0] * self._pdf(x)
        xs, fs = (np.asarray(p) for p in self.params)
        slopes = np.diff(fs) / np.diff(xs)
        seg = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(slopes) - 1)
        return slopes[seg]

    def mean(self) -> float:
        from scipy.integrate import quad

        return quad(lambda t: t * self._pdf(np.float64(t)), 0.0, 1.0, epsabs=1e-13, epsrel=1e-12)[0]

    # -- sampling ---------------------------------------------------------

    def sample(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """Draw ``n`` independent samples."""
        rng = np.random.default_rng() if rng is None else rng
        k = self.kind
        if k is DensityKind.UNIFORM:
            return rng.random(n)
        if k is DensityKind.BETA:
            return rng.beta(*self.params, size=n)
        if k is DensityKind.TRUNCATED_EXPONENTIAL:
            lam = self.params[0]
            return -np.log1p(rng.random(n) * np.expm1(-lam)) / lam
        if k is DensityKind.TRUNCATED_NORMAL:
            from scipy.stats import truncnorm

            mu, s = self.params
            return truncnorm.rvs(-mu / s, (1.0 - mu) / s, loc=mu, scale=s, size=n,
                                 random_state=rng)
        # rejection sampling against the knot maximum
        ceiling = max(self.params[1])
        out = np.empty(0)
        while out.size < n:
            x = rng.random(2 * (n - out.size) + 16)
            keep = rng.random(x.size) * ceiling <= self._pdf(x)
            out = np.concatenate([out, x[keep]])
        return out[:n]


def _sampled_slope_bound(d: Density, n: int = 200_001) -> float:
    grid = np.linspace(0.0, 1.0, n)
    slope = np.abs(d._dpdf(grid))
    if not np.all(np.isfinite(slope)):
        return math.inf
    return float(slope.max()) * (1.0 + 1e-9)


def slope_violations(d: Density, h: float = 1e-6, n: int = 10_001) -> np.ndarray:
    """Grid points where a forward difference exceeds the declared slope bound."""
    x = np.linspace(0.0, 1.0 - h, n)
    fd = np.abs(d.pdf(x + h) - d.pdf(x)) / h
    return x[fd > d.slope_bound * (1.0 + 1e-6)]


@dataclass(frozen=True)
class LinearApprox:
    """Chord of the density across ``[lo, hi]``: ``f_app(x) = slope*x + intercept``."""

    slope: float
    intercept: float
    lo: float
    hi: float

    def __call__(self, x):
        return self.slope * np.asarray(x) + self.intercept


def chord_coefficients(f_lo, f_hi, lo, hi):
    """Slope and intercept of the chord through ``(lo, f_lo)`` and ``(hi, f_hi)``.

    Works elementwise on arrays; used by both the scalar and vectorized paths.
    """
    slope = (f_hi - f_lo) / (hi - lo)
    return slope, f_hi - slope * hi


def linear_approx(d: Density, lo: float, hi: float,
                  floor: float = DEGENERACY_FLOOR) -> LinearApprox:
    """First-order approximation of ``d`` matching it at ``lo`` and ``hi``."""
    if not (0.0 <= lo and hi <= 1.0):
        raise DomainError(f"interval [{lo}, {hi}] is not inside [0, 1]")
    if not hi - lo >= floor:
        raise DegenerateIntervalError(f"interval [{lo}, {hi}] is narrower than {floor}")
    f_lo, f_hi = d.pdf(lo), d.pdf(hi)
    if f_lo == f_hi:
        return LinearApprox(0.0, f_hi, lo, hi)
    slope, intercept = chord_coefficients(f_lo, f_hi, lo, hi)
    return LinearApprox(float(slope), float(intercept), float(lo), float(hi))
