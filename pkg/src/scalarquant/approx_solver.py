"""Level-update polynomials from the chord approximation, and their roots.

Replacing the density by its chord over the neighbour interval ``[a, b]``
turns each level's optimality condition into a cubic in the new level ``u``.
For the Lloyd-Max cost (ALM) the cubic is

    r(u) = integral over the cell of u of (u - x) * f_app(x) dx,

whose cell depends on whether the level is the first, an interior or the
last designed level. For the envelope cost (AEQ) it is

    p(u) = integral_a^u 2 (u - x) f_app(x) dx - (b - u)^2 f_app(u).

Both are negative at ``a`` and positive at ``b`` whenever the chord is
positive, so a bracketed search always succeeds.

The coefficient tables are translation covariant, so the solvers evaluate
them with the origin moved to ``a`` (``a -> 0``, ``b -> b - a``, intercept
``f_app(a)``). In absolute coordinates the constant terms cancel
catastrophically when ``b - a`` is small compared with ``a``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .density import DEGENERACY_FLOOR, LinearApprox, chord_coefficients
from .errors import DegenerateIntervalError, RootNotFoundError

DENSITY_FLOOR = 1e-12
ROOT_TOL = 1e-13
_SCAN_POINTS = 257


class Scheme(Enum):
    ALM = "alm"
    AEQ = "aeq"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


class KCase(Enum):
    FIRST = "first"
    INTERIOR = "interior"
    LAST = "last"
    # K = 1: the lone level owns the whole neighbour interval
    SINGLE = "single"


@dataclass(frozen=True)
class CubicPoly:
    """``c0 + c1 t + c2 t^2 + c3 t^3`` in ``t = u - origin``, with its bracket in ``u``."""

    c0: float
    c1: float
    c2: float
    c3: float
    lo: float
    hi: float
    scheme: Scheme
    k_case: KCase | None = None
    origin: float = 0.0

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([self.c0, self.c1, self.c2, self.c3])

    def absolute_coeffs(self) -> np.ndarray:
        """Coefficients in ``u`` itself (Taylor shift by ``-origin``)."""
        c0, c1, c2, c3 = self.coeffs
        o = self.origin
        return np.array([c0 - c1 * o + c2 * o**2 - c3 * o**3,
                         c1 - 2.0 * c2 * o + 3.0 * c3 * o**2,
                         c2 - 3.0 * c3 * o,
                         c3])

    def __call__(self, u):
        return horner(self.coeffs, np.asarray(u) - self.origin)

    def derivative(self, u):
        return horner_derivative(self.coeffs, np.asarray(u) - self.origin)


def horner(c, u):
    return ((c[3] * u + c[2]) * u + c[1]) * u + c[0]


def horner_derivative(c, u):
    return (3.0 * c[3] * u + 2.0 * c[2]) * u + c[1]


# -- coefficient tables -----------------------------------------------------

def alm_coefficients(case, a, b, m, c):
    """ALM cubic coefficients ``(r0, r1, r2, r3)`` for one neighbour case.

    ``a``/``b`` are the fixed neighbours and ``m``/``c`` the chord slope and
    intercept. Arguments may be numpy arrays of equal shape.
    """
    if case is KCase.FIRST:
        return (m / 3.0 * (a**3 - b**3 / 8.0) + c / 2.0 * (a**2 - b**2 / 4.0),
                -m / 2.0 * a**2 + c / 4.0 * b - c * a,
                m * b / 8.0 + 3.0 * c / 8.0,
                m / 12.0)
    if case is KCase.INTERIOR:
        return (-m / 24.0 * (b**3 - a**3) - c / 8.0 * (b**2 - a**2),
                c / 4.0 * (b - a),
                m / 8.0 * (b - a),
                0.0 * m)
    if case is KCase.LAST:
        return (m / 3.0 * (a**3 / 8.0 - b**3) + c / 2.0 * (a**2 / 4.0 - b**2),
                m / 2.0 * b**2 - c / 4.0 * a + c * b,
                -m * a / 8.0 - 3.0 * c / 8.0,
                -m / 12.0)
    return (m / 3.0 * (a**3 - b**3) + c / 2.0 * (a**2 - b**2),
            m / 2.0 * (b**2 - a**2) + c * (b - a),
            0.0 * m,
            0.0 * m)


def aeq_coefficients(a, b, m, c):
    """AEQ cubic coefficients ``(p0, p1, p2, p3)``; one formula for every level."""
    return (2.0 / 3.0 * m * a**3 + c * (a**2 - b**2),
            -2.0 * c * (a - b) - m * (b**2 + a**2),
            2.0 * m * b,
            -2.0 / 3.0 * m)


def alm_case(k: int, K: int) -> KCase:
    if K == 1:
        return KCase.SINGLE
    if k == 1:
        return KCase.FIRST
    if k == K:
        return KCase.LAST
    return KCase.INTERIOR


def floored_chord(f_a, f_b, a, b, floor=DENSITY_FLOOR):
    """Chord through the density values clamped below at ``floor``.

    The clamp keeps the chord strictly positive, which is what the bracket
    sign argument needs when the density vanishes at an endpoint.
    """
    return chord_coefficients(np.maximum(f_a, floor), np.maximum(f_b, floor), a, b)


def update_coefficients(scheme: Scheme, k, K: int, a, b, f_a, f_b,
                        floor: float = DENSITY_FLOOR, shifted: bool = False) -> np.ndarray:
    """Coefficient matrix (4, n) for levels ``k`` with neighbours ``a``, ``b``.

    ``K`` is the number of designed levels and ``f_a``/``f_b`` the density at
    the neighbours. With ``shifted`` the coefficients are in ``u - a``.
    """
    k = np.asarray(k)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    f_a = np.maximum(np.asarray(f_a, dtype=np.float64), floor)
    f_b = np.maximum(np.asarray(f_b, dtype=np.float64), floor)
    if shifted:
        b = b - a
        a = np.zeros_like(a)
        m = (f_b - f_a) / b
        c = f_a + 0.0 * m
    else:
        m, c = chord_coefficients(f_a, f_b, a, b)
    if scheme is Scheme.AEQ:
        return np.array(np.broadcast_arrays(*aeq_coefficients(a, b, m, c)))
    if K == 1:
        return np.array(np.broadcast_arrays(*alm_coefficients(KCase.SINGLE, a, b, m, c)))
    out = np.array(np.broadcast_arrays(*alm_coefficients(KCase.INTERIOR, a, b, m, c)))
    for case, mask in ((KCase.FIRST, k == 1), (KCase.LAST, k == K)):
        if np.any(mask):
            edge = np.array(np.broadcast_arrays(*alm_coefficients(case, a, b, m, c)))
            out[:, mask] = edge[:, mask]
    return out


def _check_interval(q_prev, q_next):
    if not q_next - q_prev >= DEGENERACY_FLOOR:
        raise DegenerateIntervalError(f"neighbour interval [{q_prev}, {q_next}] is degenerate")


def _local_chord(la: LinearApprox, q_prev, q_next, floor):
    """Slope and value at ``q_prev`` of the floored chord."""
    f_a = max(float(la(q_prev)), floor)
    f_b = max(float(la(q_next)), floor)
    return (f_b - f_a) / (q_next - q_prev), f_a


def alm_poly(k: int, K: int, q_prev: float, q_next: float, la: LinearApprox,
             floor: float = DENSITY_FLOOR) -> CubicPoly:
    """ALM update cubic for level ``k`` of ``K`` between fixed neighbours."""
    _check_interval(q_prev, q_next)
    case = alm_case(k, K)
    m, f_a = _local_chord(la, q_prev, q_next, floor)
    r = alm_coefficients(case, 0.0, q_next - q_prev, m, f_a)
    return CubicPoly(*(float(v) for v in r), q_prev, q_next, Scheme.ALM, case, q_prev)


def aeq_poly(k: int, q_prev: float, q_next: float, la: LinearApprox,
             floor: float = DENSITY_FLOOR) -> CubicPoly:
    """AEQ update cubic for level ``k`` between fixed neighbours."""
    _check_interval(q_prev, q_next)
    m, f_a = _local_chord(la, q_prev, q_next, floor)
    p = aeq_coefficients(0.0, q_next - q_prev, m, f_a)
    return CubicPoly(*(float(v) for v in p), q_prev, q_next, Scheme.AEQ, None, q_prev)


# -- root finding -------------------------------------------------------------

def _scan_bracket(c, lo, hi):
    grid = np.linspace(lo, hi, _SCAN_POINTS)
    vals = horner(c, grid)
    hits = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    if hits.size == 0:
        return None
    i = hits[0]
    return grid[i], grid[i + 1]


def solve_brackets(coeffs, lo, hi, tol: float = ROOT_TOL, maxiter: int = 200) -> np.ndarray:
    """Roots of many cubics, each inside its own ``[lo, hi]`` bracket.

    Safeguarded Newton on the sign-change bracket: a Newton step is taken
    when it stays inside the bracket and converges fast enough, otherwise the
    bracket is bisected. Tiny Newton steps are pushed ``tol/4`` past the
    predicted root so the bracket closes to width ``tol``.
    """
    c = np.array(coeffs, dtype=np.float64, copy=True).reshape(4, -1)
    lo = np.array(lo, dtype=np.float64, copy=True).reshape(-1)
    hi = np.array(hi, dtype=np.float64, copy=True).reshape(-1)
    f_lo, f_hi = horner(c, lo), horner(c, hi)

    root = np.full(lo.shape, np.nan)
    done = np.zeros(lo.shape, dtype=bool)
    for end, f_end in ((lo, f_lo), (hi, f_hi)):
        hit = ~done & (f_end == 0.0)
        root[hit] = end[hit]
        done |= hit

    for i in np.nonzero(~done & (np.sign(f_lo) == np.sign(f_hi)))[0]:
        sub = _scan_bracket(c[:, i], lo[i], hi[i])
        if sub is None:
            poly = CubicPoly(*c[:, i], lo[i], hi[i], scheme=None)
            raise RootNotFoundError(
                f"no sign change of {tuple(c[:, i])} on [{lo[i]}, {hi[i]}]",
                poly=poly, bracket=(lo[i], hi[i]))
        lo[i], hi[i] = sub
        f_lo[i], f_hi[i] = horner(c[:, i], lo[i]), horner(c[:, i], hi[i])
        if f_lo[i] == 0.0 or f_hi[i] == 0.0:
            root[i] = lo[i] if f_lo[i] == 0.0 else hi[i]
            done[i] = True

    # neg/pos: the bracket ends where the polynomial is negative/positive
    neg = np.where(f_lo < 0.0, lo, hi)
    pos = np.where(f_lo < 0.0, hi, lo)
    f_neg = np.where(f_lo < 0.0, f_lo, f_hi)
    f_pos = np.where(f_lo < 0.0, f_hi, f_lo)
    x = 0.5 * (neg + pos)
    last_step = np.abs(pos - neg)
    for _ in range(maxiter):
        active = ~done & (np.abs(pos - neg) > tol)
        if not active.any():
            break
        fx = horner(c, x)
        exact = active & (fx == 0.0)
        root[exact] = x[exact]
        done |= exact
        active &= ~exact
        below = active & (fx < 0.0)
        above = active & (fx > 0.0)
        neg = np.where(below, x, neg)
        f_neg = np.where(below, fx, f_neg)
        pos = np.where(above, x, pos)
        f_pos = np.where(above, fx, f_pos)

        with np.errstate(divide="ignore", invalid="ignore"):
            step = fx / horner_derivative(c, x)
        small = np.abs(step) < 0.25 * tol
        cand = np.where(small, x - step - np.sign(step) * 0.25 * tol, x - step)
        left, right = np.minimum(neg, pos), np.maximum(neg, pos)
        newton_ok = (np.isfinite(cand) & (cand > left) & (cand < right)
                     & (np.abs(step) <= 0.5 * last_step))
        last_step = np.where(newton_ok, np.abs(step), 0.5 * np.abs(pos - neg))
        x = np.where(newton_ok, cand, 0.5 * (neg + pos))

    rest = ~done
    closer = np.where(-f_neg <= f_pos, neg, pos)
    root[rest] = closer[rest]
    return root


def root_in_interval(p: CubicPoly, tol: float = ROOT_TOL) -> float:
    """Root of ``p`` inside ``[p.lo, p.hi]`` found by bracketed search."""
    try:
        t = solve_brackets(p.coeffs, p.lo - p.origin, p.hi - p.origin, tol)[0]
    except RootNotFoundError as exc:
        raise RootNotFoundError(f"no sign change of {p} on its bracket",
                                poly=p, bracket=(p.lo, p.hi)) from exc
    return float(min(max(p.origin + t, p.lo), p.hi))


def solve_updates(scheme: Scheme, k, K: int, a, b, f_a, f_b,
                  floor: float = DENSITY_FLOOR, tol: float = ROOT_TOL) -> np.ndarray:
    """New positions of levels ``k`` between neighbours ``a`` and ``b`` (vectorized)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    coeffs = update_coefficients(scheme, k, K, a, b, f_a, f_b, floor, shifted=True)
    t = solve_brackets(coeffs, np.zeros_like(a), b - a, tol)
    return np.clip(a + t, a, b)


def aeq_derivative_at(p: CubicPoly, u: float) -> float:
    """``dp/du`` at ``u``."""
    return float(p.derivative(u))
