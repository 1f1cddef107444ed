"""ABEO (alternating between evens and odds) design loop for ALM and AEQ.

Levels are stored with both reference endpoints: ``q[0] = 0`` and
``q[K'] = 1``. ALM designs ``K`` free levels, so ``K' = K + 1``. AEQ has
``K' = K`` and its top level is pinned to the reference 1. In both schemes
the updatable levels are ``q[1] .. q[K'-1]``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .approx_solver import DENSITY_FLOOR, Scheme, solve_updates
from .density import DEGENERACY_FLOOR, Density
from .errors import InvalidInitError

ODD, EVEN = 1, 0


def k_prime(K: int, scheme: Scheme) -> int:
    return K + 1 if scheme is Scheme.ALM else K


@dataclass(frozen=True, eq=False)
class Codebook:
    scheme: Scheme
    levels: np.ndarray
    K: int

    def __post_init__(self):
        levels = np.array(self.levels, dtype=np.float64)
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        if self.K < 1:
            raise InvalidInitError(f"K must be positive, got {self.K}")
        if levels.shape != (k_prime(self.K, self.scheme) + 1,):
            raise InvalidInitError(
                f"{self.scheme.name} with K={self.K} needs {k_prime(self.K, self.scheme) + 1} "
                f"entries including references, got {levels.shape}")
        validate_levels(levels)

    @property
    def k_prime(self) -> int:
        return len(self.levels) - 1

    @property
    def outputs(self) -> np.ndarray:
        """Reproduction values ``q_1 .. q_K`` (references excluded for ALM)."""
        return self.levels[1:-1] if self.scheme is Scheme.ALM else self.levels[1:]

    def to_dict(self) -> dict:
        return {"scheme": self.scheme.value, "K": self.K,
                "levels": self.levels.tolist(), "boundaries": boundaries(self).tolist()}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, rec: dict) -> "Codebook":
        return cls(Scheme.parse(rec["scheme"]), np.asarray(rec["levels"]), int(rec["K"]))

    @classmethod
    def from_json(cls, text: str) -> "Codebook":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return (self.scheme is other.scheme and self.K == other.K
                and np.array_equal(self.levels, other.levels))

    __hash__ = None


def validate_levels(levels) -> None:
    q = np.asarray(levels, dtype=np.float64)
    if q.ndim != 1 or q.size < 2:
        raise InvalidInitError("level vector needs at least the two references")
    if q[0] != 0.0 or q[-1] != 1.0:
        raise InvalidInitError(f"references must be 0 and 1, got {q[0]} and {q[-1]}")
    if np.any(np.diff(q) < 0.0) or np.any(np.isnan(q)):
        raise InvalidInitError("levels must be nondecreasing")


@dataclass
class RunConfig:
    K: int
    scheme: Scheme = Scheme.ALM
    max_iter: int = 500
    threshold: float = 1e-10
    # "equispaced" or an explicit level vector including both references
    init: str | Sequence[float] = "equispaced"
    record_cost: bool = True
    density_floor: float = DENSITY_FLOOR

    def __post_init__(self):
        self.scheme = Scheme.parse(self.scheme)
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.threshold >= 0.0:
            raise ValueError("threshold must be nonnegative")


@dataclass
class IterationRecord:
    levels: np.ndarray
    theta: np.ndarray
    cost: float
    linf_change: float


@dataclass
class RunTrace:
    initial: np.ndarray
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    stop_reason: str = "max_iter"

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records])

    @property
    def changes(self) -> np.ndarray:
        return np.array([r.linf_change for r in self.records])

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    def level_history(self) -> np.ndarray:
        """Levels before the first and after every iteration, shape (n+1, K'+1)."""
        return np.vstack([self.initial] + [r.levels for r in self.records])

    def columns(self) -> list[str]:
        kp = len(self.initial) - 1
        return (["iter"] + [f"level_{i}" for i in range(kp + 1)]
                + [f"theta_{i}" for i in range(1, kp)] + ["cost", "linf_change"])

    def to_csv(self, fh=None) -> str | None:
        """Write the trace as CSV to ``fh`` (or return it as a string)."""
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out)
        w.writerow(self.columns())
        for i, r in enumerate(self.records, start=1):
            w.writerow([i, *map(repr, r.levels.tolist()), *map(repr, r.theta.tolist()),
                        repr(r.cost), repr(r.linf_change)])
        return out.getvalue() if fh is None else None

    @classmethod
    def read_csv(cls, fh, initial=None) -> "RunTrace":
        rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n_levels = sum(h.startswith("level_") for h in header)
        n_theta = sum(h.startswith("theta_") for h in header)
        records = []
        for row in body:
            vals = [float(v) for v in row[1:]]
            records.append(IterationRecord(
                np.array(vals[:n_levels]),
                np.array(vals[n_levels:n_levels + n_theta]),
                vals[n_levels + n_theta], vals[n_levels + n_theta + 1]))
        if initial is None:
            initial = np.full(n_levels, np.nan)
        return cls(np.asarray(initial, dtype=np.float64), records)


def init_levels(cfg: RunConfig) -> Codebook:
    kp = k_prime(cfg.K, cfg.scheme)
    if isinstance(cfg.init, str):
        if cfg.init != "equispaced":
            raise InvalidInitError(f"unknown init {cfg.init!r}")
        levels = np.linspace(0.0, 1.0, kp + 1)
    else:
        levels = np.asarray(cfg.init, dtype=np.float64)
        if levels.shape != (kp + 1,):
            raise InvalidInitError(f"explicit init needs {kp + 1} entries, got {levels.shape}")
    return Codebook(cfg.scheme, levels, cfg.K)


def random_init(K: int, scheme: Scheme, rng: np.random.Generator) -> np.ndarray:
    """Random ordered level vector with the two references in place."""
    kp = k_prime(K, Scheme.parse(scheme))
    return np.concatenate([[0.0], np.sort(rng.random(kp - 1)), [1.0]])


def parity_indices(kp: int, parity: int) -> np.ndarray:
    start = 1 if parity == ODD else 2
    return np.arange(start, kp, 2)


def approx_updater(d: Density, scheme: Scheme, K: int, floor: float = DENSITY_FLOOR):
    """Level-update rule solving the chord-approximated optimality cubic."""

    def update(q: np.ndarray, idx: np.ndarray) -> np.ndarray:
        a, b = q[idx - 1], q[idx + 1]
        new = 0.5 * (a + b)
        ok = b - a >= DEGENERACY_FLOOR
        if np.any(ok):
            a, b, k = a[ok], b[ok], idx[ok]
            new[ok] = solve_updates(scheme, k, K, a, b, d._pdf(a), d._pdf(b), floor)
        return new

    return update


def _apply_half(q: np.ndarray, idx: np.ndarray, update) -> tuple[np.ndarray, np.ndarray]:
    a, b = q[idx - 1], q[idx + 1]
    new = update(q, idx)
    width = b - a
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(width > 0.0, (b - new) / width, 0.5)
    out = q.copy()
    out[idx] = new
    return out, theta


def abeo_half_sweep(cb: Codebook, d: Density, parity: int,
                    floor: float = DENSITY_FLOOR) -> tuple[Codebook, np.ndarray]:
    """Update every level of one parity from its current neighbours.

    Returns the new codebook and a length ``K'-1`` vector of convex
    coefficients with NaN at the levels that were not touched.
    """
    kp = cb.k_prime
    idx = parity_indices(kp, parity)
    q, th = _apply_half(cb.levels, idx, approx_updater(d, cb.scheme, cb.K, floor))
    theta = np.full(kp - 1, np.nan)
    theta[idx - 1] = th
    return Codebook(cb.scheme, q, cb.K), theta


def abeo_loop(levels: np.ndarray, update, max_iter: int, threshold: float,
              cost_fn: Callable[[np.ndarray], float] | None = None,
              stop_when: Callable[[np.ndarray], bool] | None = None,
              ) -> tuple[np.ndarray, RunTrace]:
    """Odd half-sweep then even half-sweep until the level change is small.

    ``update(q, idx)`` returns new values for levels ``idx`` given ``q``.
    ``stop_when(q)`` can end the loop early (e.g. a cost target).
    """
    q = np.array(levels, dtype=np.float64)
    kp = len(q) - 1
    trace = RunTrace(q.copy())
    if kp < 2:
        trace.converged, trace.stop_reason = True, "trivial"
        return q, trace
    odd, even = parity_indices(kp, ODD), parity_indices(kp, EVEN)
    for _ in range(max_iter):
        theta = np.empty(kp - 1)
        half, theta[odd - 1] = _apply_half(q, odd, update)
        new = half
        if even.size:
            new, theta[even - 1] = _apply_half(half, even, update)
        change = float(np.max(np.abs(new - q)))
        q = new
        cost = cost_fn(q) if cost_fn is not None else float("nan")
        trace.records.append(IterationRecord(q.copy(), theta, cost, change))
        if change < threshold:
            trace.converged, trace.stop_reason = True, "threshold"
            break
        if stop_when is not None and stop_when(q):
            trace.converged, trace.stop_reason = True, "target"
            break
    return q, trace


def run(cfg: RunConfig, d: Density,
        stop_when: Callable[[np.ndarray], bool] | None = None) -> tuple[Codebook, RunTrace]:
    """Design a codebook for ``d`` with the chord-approximation updates."""
    cb0 = init_levels(cfg)
    cost_fn = None
    if cfg.record_cost:
        from .oracle import level_cost

        def cost_fn(q):
            return level_cost(q, cfg.scheme, d)

    update = approx_updater(d, cfg.scheme, cfg.K, cfg.density_floor)
    q, trace = abeo_loop(cb0.levels, update, cfg.max_iter, cfg.threshold, cost_fn, stop_when)
    return Codebook(cfg.scheme, q, cfg.K), trace


def boundary_points(levels: np.ndarray, scheme: Scheme) -> np.ndarray:
    q = np.asarray(levels)
    if scheme is Scheme.ALM:
        designed = q[1:-1]
        return np.concatenate([[q[0]], 0.5 * (designed[:-1] + designed[1:]), [q[-1]]])
    return q.copy()


def boundaries(cb: Codebook) -> np.ndarray:
    """Cell edges: midpoints for ALM, the levels themselves for AEQ."""
    return boundary_points(cb.levels, cb.scheme)
