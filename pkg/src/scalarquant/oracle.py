"""Quadrature-based reference quantizers and exact cost evaluation.

These never use the chord approximation. Cell integrals are computed with
adaptive Gauss-Kronrod quadrature (QUADPACK through scipy), one cell at a
time so that cell edges never fall inside a panel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .approx_solver import Scheme
from .density import Density
from .errors import DegenerateCellError, QuantizerError
from .quantizer import (Codebook, IterationRecord, RunConfig, RunTrace, abeo_loop, boundary_points,
                        init_levels, k_prime)

MIN_CELL_MASS = 1e-14


@dataclass(frozen=True)
class QuadratureGrid:
    rule: str = "quadpack-qags"
    abs_tol: float = 1e-12
    rel_tol: float = 1e-12
    max_subdiv: int = 1000

    def integrate(self, fn, lo: float, hi: float) -> float:
        if hi <= lo:
            return 0.0
        return quad(fn, lo, hi, epsabs=self.abs_tol, epsrel=self.rel_tol,
                    limit=self.max_subdiv)[0]


DEFAULT_GRID = QuadratureGrid()


def _moments(d: Density, lo: float, hi: float, grid: QuadratureGrid):
    """Mass and first moment of ``d`` over ``[lo, hi]``."""
    f = d._pdf
    return (grid.integrate(lambda x: f(x), lo, hi),
            grid.integrate(lambda x: x * f(x), lo, hi))


def level_cost(levels, scheme: Scheme, d: Density, grid: QuadratureGrid = DEFAULT_GRID) -> float:
    """MSE (ALM) or envelope MSE (AEQ) of a reference-padded level vector."""
    q = np.asarray(levels, dtype=np.float64)
    f = d._pdf
    total = 0.0
    if scheme is Scheme.ALM:
        edges = boundary_points(q, scheme)
        for k, level in enumerate(q[1:-1]):
            total += grid.integrate(lambda x: (level - x) ** 2 * f(x), edges[k], edges[k + 1])
    else:
        for k in range(1, len(q)):
            level = q[k]
            total += grid.integrate(lambda x: (level - x) ** 2 * f(x), q[k - 1], q[k])
    return total


def cost(cb: Codebook, d: Density, grid: QuadratureGrid = DEFAULT_GRID) -> float:
    """Expected distortion of ``cb`` under its scheme's cell rule."""
    return level_cost(cb.levels, cb.scheme, d, grid)


# -- exact per-level updates (ABEO schedule) ----------------------------------

def _bracket_root(fn, a: float, b: float) -> float:
    """Root of ``fn`` on ``[a, b]`` with ``fn(a) <= 0 <= fn(b)``.

    A zero at ``a`` caused by vanishing density is stepped past, since the
    level would otherwise collapse onto its neighbour.
    """
    lo, f_lo = a, fn(a)
    step = 1e-9 * (b - a)
    while f_lo >= 0.0 and step < 0.5 * (b - a):
        lo = a + step
        f_lo = fn(lo)
        step *= 10.0
    f_hi = fn(b)
    if f_lo >= 0.0 or f_hi <= 0.0:
        if f_hi == 0.0:
            return b
        raise QuantizerError(f"exact condition has no sign change on [{a}, {b}]")
    return brentq(fn, lo, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def exact_lm_updater(d: Density, K: int, grid: QuadratureGrid = DEFAULT_GRID):
    """Exact local Lloyd-Max update: the level balancing its own midpoint cell."""
    f = d._pdf

    def condition(u, k, a, b):
        lo = a if k == 1 else 0.5 * (a + u)
        hi = b if k == K else 0.5 * (u + b)
        return grid.integrate(lambda x: (u - x) * f(x), lo, hi)

    def update(q, idx):
        out = np.empty(len(idx))
        for j, k in enumerate(idx):
            a, b = q[k - 1], q[k + 1]
            if grid.integrate(f, a, b) < MIN_CELL_MASS:
                raise DegenerateCellError(f"cell around level {k} has no mass", cell=int(k))
            out[j] = _bracket_root(lambda u: condition(u, k, a, b), a, b)
        return out

    return update


def exact_envelope_updater(d: Density, grid: QuadratureGrid = DEFAULT_GRID):
    """Exact local envelope update from the true density."""
    f = d._pdf

    def condition(u, a, b):
        inner = grid.integrate(lambda x: 2.0 * (u - x) * f(x), a, u)
        return inner - (b - u) ** 2 * f(u)

    def update(q, idx):
        out = np.empty(len(idx))
        for j, k in enumerate(idx):
            a, b = q[k - 1], q[k + 1]
            if grid.integrate(f, a, b) < MIN_CELL_MASS:
                raise DegenerateCellError(f"cell around level {k} has no mass", cell=int(k))
            out[j] = _bracket_root(lambda u: condition(u, a, b), a, b)
        return out

    return update


# -- global Newton on the exact optimality system ------------------------------

def lm_residual(q: np.ndarray, d: Density, grid: QuadratureGrid = DEFAULT_GRID):
    """Lloyd-Max conditions ``q_k - centroid_k`` and their tridiagonal Jacobian.

    The centroid form weighs every level equally; the mass-weighted form
    lets tail levels with negligible mass drift without penalty.
    """
    K = len(q) - 2
    f = d._pdf
    edges = boundary_points(q, Scheme.ALM)
    F = np.empty(K)
    diag, lower, upper = np.ones(K), np.zeros(K), np.zeros(K)
    f_edge = f(edges)
    for i in range(K):
        k = i + 1
        mass, first = _moments(d, edges[i], edges[i + 1], grid)
        if mass < MIN_CELL_MASS:
            raise DegenerateCellError(f"cell {k} has no mass", cell=k)
        centroid = first / mass
        F[i] = q[k] - centroid
        # d centroid / d edge, each edge moving at half the speed of a level
        if k < K:
            t = -0.5 * f_edge[i + 1] * (edges[i + 1] - centroid) / mass
            diag[i] += t
            upper[i] = t
        if k > 1:
            t = -0.5 * f_edge[i] * (centroid - edges[i]) / mass
            diag[i] += t
            lower[i] = t
    return F, (lower, diag, upper)


def envelope_residual(q: np.ndarray, d: Density, grid: QuadratureGrid = DEFAULT_GRID):
    """Envelope conditions for the updatable levels and their tridiagonal Jacobian."""
    n = len(q) - 2
    f, df = d._pdf, d._dpdf
    F = np.empty(n)
    diag, lower, upper = np.empty(n), np.zeros(n), np.zeros(n)
    fq, dfq = f(q), df(q)
    for i in range(n):
        k = i + 1
        mass, first = _moments(d, q[k - 1], q[k], grid)
        gap = q[k + 1] - q[k]
        F[i] = 2.0 * (q[k] * mass - first) - gap**2 * fq[k]
        diag[i] = 2.0 * mass + 2.0 * gap * fq[k] - gap**2 * dfq[k]
        lower[i] = -2.0 * (q[k] - q[k - 1]) * fq[k - 1]
        upper[i] = -2.0 * gap * fq[k]
    return F, (lower, diag, upper)


def newton_solve(q0: np.ndarray, residual, tol: float = 1e-13, max_iter: int = 100):
    """Damped Newton on a tridiagonal system, keeping the levels ordered."""
    q = np.array(q0, dtype=np.float64)
    F, (lower, diag, upper) = residual(q)
    for it in range(max_iter):
        ab = np.zeros((3, len(F)))
        ab[0, 1:] = upper[:-1]
        ab[1] = diag
        ab[2, :-1] = lower[1:]
        step = solve_banded((1, 1), ab, -F)
        alpha = 1.0
        norm = np.linalg.norm(F)
        while alpha > 1e-12:
            trial = q.copy()
            trial[1:-1] += alpha * step
            if np.all(np.diff(trial) > 0.0):
                F_t, jac_t = residual(trial)
                if (np.linalg.norm(F_t) <= (1.0 - 1e-4 * alpha) * norm
                        or alpha * np.max(np.abs(step)) < tol):
                    break
            alpha *= 0.5
        else:
            raise QuantizerError("Newton line search failed to reduce the residual")
        q, F, (lower, diag, upper) = trial, F_t, jac_t
        if alpha * np.max(np.abs(step)) < tol:
            return q, it + 1
    raise QuantizerError(f"Newton did not converge in {max_iter} iterations")


def companding_levels(d: Density, K: int, scheme: Scheme, n: int = 20_001) -> np.ndarray:
    """High-resolution starting point: point density proportional to ``f**(1/3)``.

    Cells carry equal mass of the normalized ``f**(1/3)``; ALM levels sit at
    cell mid-quantiles, AEQ levels at the right cell edges.
    """
    x = np.linspace(0.0, 1.0, n)
    w = np.cbrt(d._pdf(x)) + 1e-9
    G = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(x))])
    G /= G[-1]
    if scheme is Scheme.ALM:
        targets = (np.arange(1, K + 1) - 0.5) / K
    else:
        targets = np.arange(1, K) / K
    inner = np.interp(targets, G, x)
    return np.concatenate([[0.0], inner, [1.0]])


def _newton_with_fallback(q0, residual, update, cfg: RunConfig, cost_fn):
    """Newton from ``q0``; if it stalls, exact sweeps then Newton again.

    Newton can stall where the density has kinks or negligible tail mass.
    """
    try:
        q, steps = newton_solve(q0, residual)
        return q, RunTrace(q0.copy(), [_record(q, float(np.max(np.abs(q - q0))), cost_fn)],
                           True, f"newton:{steps}")
    except DegenerateCellError:
        raise
    except QuantizerError:
        pass
    q, trace = abeo_loop(q0, update, cfg.max_iter, cfg.threshold, cost_fn)
    try:
        q_n, steps = newton_solve(q, residual)
    except QuantizerError:
        return q, trace
    trace.records.append(_record(q_n, float(np.max(np.abs(q_n - q))), cost_fn))
    trace.converged, trace.stop_reason = True, f"abeo+newton:{steps}"
    return q_n, trace


# -- public oracles -----------------------------------------------------------

def _cfg_for(K: int, scheme: Scheme, cfg: RunConfig | None) -> RunConfig:
    if cfg is None:
        return RunConfig(K=K, scheme=scheme, record_cost=False)
    return RunConfig(K=K, scheme=scheme, max_iter=cfg.max_iter, threshold=cfg.threshold,
                     init=cfg.init, record_cost=cfg.record_cost)


def _check_masses(q: np.ndarray, d: Density, grid: QuadratureGrid):
    for k in range(1, len(q) - 1):
        if grid.integrate(d._pdf, q[k - 1], q[k + 1]) < MIN_CELL_MASS:
            raise DegenerateCellError(f"cell around level {k} has no mass", cell=k)


def _classic_lloyd(q: np.ndarray, d: Density, max_iter: int, threshold: float,
                   grid: QuadratureGrid, cost_fn) -> tuple[np.ndarray, RunTrace]:
    trace = RunTrace(q.copy())
    for _ in range(max_iter):
        edges = boundary_points(q, Scheme.ALM)
        new = q.copy()
        for k in range(1, len(q) - 1):
            mass, first = _moments(d, edges[k - 1], edges[k], grid)
            if mass < MIN_CELL_MASS:
                raise DegenerateCellError(f"cell {k} has no mass", cell=k)
            new[k] = first / mass
        change = float(np.max(np.abs(new - q)))
        q = new
        trace.records.append(_record(q, change, cost_fn))
        if change < threshold:
            trace.converged, trace.stop_reason = True, "threshold"
            break
    return q, trace


def _record(q, change, cost_fn):
    c = cost_fn(q) if cost_fn else float("nan")
    return IterationRecord(q.copy(), np.full(len(q) - 2, np.nan), c, change)


def exact_lloyd_max(d: Density, K: int, cfg: RunConfig | None = None, *, method: str = "abeo",
                    grid: QuadratureGrid = DEFAULT_GRID, stop_when=None,
                    return_trace: bool = False):
    """Lloyd-Max quantizer of the true density.

    ``method``:
      * ``"abeo"`` -- same odd/even schedule as ALM, each level solving its
        exact local condition by quadrature and bracketed root finding;
      * ``"classic"`` -- simultaneous midpoint/centroid alternation;
      * ``"newton"`` -- damped Newton on all conditions at once, started
        from ``cfg.init`` (companding levels by default). Reaches the fixed
        point in a handful of steps where the sweeps need thousands at
        large ``K``; falls back to the sweeps if it stalls.
    """
    cfg = _cfg_for(K, Scheme.ALM, cfg)
    q0 = init_levels(cfg).levels
    cost_fn = (lambda q: level_cost(q, Scheme.ALM, d, grid)) if cfg.record_cost else None
    if method == "abeo":
        q, trace = abeo_loop(q0, exact_lm_updater(d, K, grid), cfg.max_iter, cfg.threshold,
                             cost_fn, stop_when)
    elif method == "classic":
        q, trace = _classic_lloyd(q0, d, cfg.max_iter, cfg.threshold, grid, cost_fn)
    elif method == "newton":
        if isinstance(cfg.init, str):
            q0 = companding_levels(d, K, Scheme.ALM)
        _check_masses(q0, d, grid)
        q, trace = _newton_with_fallback(q0, lambda v: lm_residual(v, d, grid),
                                         exact_lm_updater(d, K, grid), cfg, cost_fn)
    else:
        raise ValueError(f"unknown method {method!r}")
    cb = Codebook(Scheme.ALM, q, K)
    return (cb, trace) if return_trace else cb


def exact_envelope(d: Density, K: int, cfg: RunConfig | None = None, *, method: str = "abeo",
                   grid: QuadratureGrid = DEFAULT_GRID, stop_when=None,
                   return_trace: bool = False):
    """Envelope quantizer of the true density (``method`` is ``"abeo"`` or ``"newton"``)."""
    cfg = _cfg_for(K, Scheme.AEQ, cfg)
    q0 = init_levels(cfg).levels
    cost_fn = (lambda q: level_cost(q, Scheme.AEQ, d, grid)) if cfg.record_cost else None
    if method == "abeo":
        q, trace = abeo_loop(q0, exact_envelope_updater(d, grid), cfg.max_iter, cfg.threshold,
                             cost_fn, stop_when)
    elif method == "newton":
        if K < 2:
            q, trace = q0, RunTrace(q0.copy(), [], True, "trivial")
        else:
            if isinstance(cfg.init, str):
                q0 = companding_levels(d, K, Scheme.AEQ)
            _check_masses(q0, d, grid)
            q, trace = _newton_with_fallback(q0, lambda v: envelope_residual(v, d, grid),
                                             exact_envelope_updater(d, grid), cfg, cost_fn)
    else:
        raise ValueError(f"unknown method {method!r}")
    cb = Codebook(Scheme.AEQ, q, K)
    return (cb, trace) if return_trace else cb


@dataclass(frozen=True)
class GapReport:
    linf: float
    per_level: np.ndarray
    bounds: np.ndarray
    sqrt_eps: float

    @property
    def within_bounds(self) -> bool:
        return bool(np.all(self.per_level <= self.bounds))


def near_optimality_gap(approx: Codebook, exact: Codebook) -> GapReport:
    """Level-wise distance between an approximate and an exact codebook.

    ``bounds[k]`` is the exact codebook's neighbour spacing ``q_{k+1} - q_{k-1}``
    and ``sqrt_eps`` its maximum.
    """
    if approx.scheme is not exact.scheme or approx.K != exact.K:
        raise ValueError("codebooks differ in scheme or K")
    per = np.abs(approx.levels[1:-1] - exact.levels[1:-1])
    bounds = exact.levels[2:] - exact.levels[:-2]
    return GapReport(float(per.max(initial=0.0)), per, bounds, float(bounds.max(initial=0.0)))


__all__ = ["QuadratureGrid", "cost", "level_cost", "exact_lloyd_max", "exact_envelope",
           "near_optimality_gap", "GapReport", "k_prime"]
