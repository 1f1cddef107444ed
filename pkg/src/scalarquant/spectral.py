"""Linear-update view of the ABEO sweeps and its convergence diagnostics.

Every half-sweep writes each updated level as ``theta * q[k-1] +
(1 - theta) * q[k+1]``, so one sweep is ``q_new = P q`` with a row-stochastic
``P``. The reference rows are identity rows, which makes eigenvalue 1 appear
twice and drives the running product towards a rank-2 limit.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.linalg import null_space, orth

from .approx_solver import Scheme
from .density import Density
from .errors import InvalidThetaError
from .quantizer import EVEN, ODD, RunConfig, RunTrace, k_prime, parity_indices, run

STOCHASTIC_TOL = 1e-12
RANK_TOL = 1e-10


class MatrixKind(Enum):
    ODD_HALF = "odd_half"
    EVEN_HALF = "even_half"
    FULL_SWEEP = "full_sweep"
    PRODUCT_LIMIT = "product_limit"


@dataclass(frozen=True, eq=False)
class UpdateMatrix:
    entries: np.ndarray
    kind: MatrixKind

    def __post_init__(self):
        m = np.array(self.entries, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise ValueError(f"update matrix must be square with dim >= 2, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "kind", MatrixKind(self.kind))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def row_sum_error(self) -> float:
        return float(np.max(np.abs(self.entries.sum(axis=1) - 1.0)))

    def is_row_stochastic(self, tol: float = STOCHASTIC_TOL) -> bool:
        m = self.entries
        return bool(self.row_sum_error() <= tol and m.min() >= -tol and m.max() <= 1.0 + tol)

    def has_reference_rows(self, tol: float = STOCHASTIC_TOL) -> bool:
        eye = np.eye(self.dim)
        return bool(np.max(np.abs(self.entries[[0, -1]] - eye[[0, -1]])) <= tol)

    def apply(self, levels) -> np.ndarray:
        return self.entries @ np.asarray(levels, dtype=np.float64)

    def to_csv(self, fh=None) -> str | None:
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out)
        w.writerow([f"col_{j}" for j in range(self.dim)])
        for row in self.entries:
            w.writerow([repr(v) for v in row.tolist()])
        return out.getvalue() if fh is None else None

    @classmethod
    def read_csv(cls, fh, kind=MatrixKind.FULL_SWEEP) -> "UpdateMatrix":
        rows = list(csv.reader(fh))[1:]
        return cls(np.array([[float(v) for v in r] for r in rows]), kind)


def _parity(parity) -> int:
    if isinstance(parity, str):
        return {"odd": ODD, "even": EVEN}[parity.lower()]
    if parity not in (ODD, EVEN):
        raise ValueError(f"parity must be odd or even, got {parity!r}")
    return int(parity)


def build_half_matrix(thetas, parity, dim: int) -> UpdateMatrix:
    """Half-sweep matrix of size ``dim`` from the coefficients ``theta_1..theta_{dim-2}``.

    Only the entries at the parity's level indices are read; the others
    may hold anything (NaN in recorded traces).
    """
    parity = _parity(parity)
    th = np.asarray(thetas, dtype=np.float64).reshape(-1)
    if th.size != dim - 2:
        raise ValueError(f"need {dim - 2} coefficients for dim {dim}, got {th.size}")
    m = np.eye(dim)
    for k in parity_indices(dim - 1, parity):
        t = th[k - 1]
        if not 0.0 < t < 1.0:
            raise InvalidThetaError(f"theta_{k} = {t} is outside (0, 1)")
        m[k, k] = 0.0
        m[k, k - 1] = t
        m[k, k + 1] = 1.0 - t
    kind = MatrixKind.ODD_HALF if parity == ODD else MatrixKind.EVEN_HALF
    return UpdateMatrix(m, kind)


def full_sweep_matrix(odd: UpdateMatrix, even: UpdateMatrix,
                      order: str = "odd_first") -> UpdateMatrix:
    """One full sweep as a single matrix.

    ``odd_first`` (the quantizer's schedule) gives ``even @ odd``;
    ``even_first`` gives ``odd @ even``.
    """
    if odd.dim != even.dim:
        raise ValueError(f"dimension mismatch: {odd.dim} vs {even.dim}")
    if order == "odd_first":
        m = even.entries @ odd.entries
    elif order == "even_first":
        m = odd.entries @ even.entries
    else:
        raise ValueError(f"unknown order {order!r}")
    return UpdateMatrix(m, MatrixKind.FULL_SWEEP)


def sweep_matrix_from_thetas(thetas, order: str = "odd_first") -> UpdateMatrix:
    th = np.asarray(thetas, dtype=np.float64)
    dim = th.size + 2
    return full_sweep_matrix(build_half_matrix(th, ODD, dim), build_half_matrix(th, EVEN, dim),
                             order)


def sweep_matrices(trace: RunTrace) -> list[UpdateMatrix]:
    """Full-sweep matrices for every recorded iteration of a run."""
    return [sweep_matrix_from_thetas(r.theta) for r in trace.records]


def uniform_sweep_matrix(K: int, scheme=Scheme.ALM) -> UpdateMatrix:
    """Sweep matrix of the uniform density, whose coefficients do not depend on the levels."""
    scheme = Scheme.parse(scheme)
    if k_prime(K, scheme) < 2:
        raise ValueError("need at least one updatable level")
    _, trace = run(RunConfig(K=K, scheme=scheme, max_iter=1, record_cost=False),
                   Density.uniform())
    return sweep_matrix_from_thetas(trace.records[0].theta)


# -- spectral properties ------------------------------------------------------

@dataclass
class PropertyResult:
    property_id: int
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"property_id": self.property_id, "pass": self.passed, "detail": self.detail}


@dataclass
class PropertyReport:
    results: list[PropertyResult]
    eigenvalues: np.ndarray
    second_modulus: float
    notes: list[str] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def passed(self, property_id: int) -> bool:
        return next(r.passed for r in self.results if r.property_id == property_id)

    def to_dict(self) -> dict:
        ev = self.eigenvalues
        return {"properties": [r.to_dict() for r in self.results],
                "eigenvalues_real": ev.real.tolist(), "eigenvalues_imag": ev.imag.tolist(),
                "second_modulus": self.second_modulus, "notes": list(self.notes)}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def eigenvalues_by_modulus(P: UpdateMatrix) -> np.ndarray:
    ev = np.linalg.eigvals(P.entries)
    return ev[np.argsort(-np.abs(ev), kind="stable")]


def second_modulus(P: UpdateMatrix) -> float:
    """Largest eigenvalue modulus after the two unit eigenvalues from the reference rows."""
    ev = eigenvalues_by_modulus(P)
    return float(np.abs(ev[2])) if ev.size > 2 else 0.0


def _eigenspaces(m: np.ndarray, tol: float = 1e-8):
    """Group real eigenpairs into clusters; yield (eigenvalue, orthonormal basis)."""
    ev, vec = np.linalg.eig(m)
    real = np.abs(ev.imag) <= tol
    used = np.zeros(ev.size, dtype=bool)
    for i in np.nonzero(real)[0]:
        if used[i]:
            continue
        group = real & ~used & (np.abs(ev - ev[i]) <= max(tol, 1e-6 * abs(ev[i])))
        used |= group
        yield ev[i].real, orth(vec[:, group].real, rcond=1e-8)
    return int(np.count_nonzero(~real))


def _reversal_check(m: np.ndarray, tol: float):
    """Worst deviation from reversal invariance over the real eigenspaces.

    For a simple eigenvalue this is the sign-normalized distance of ``v`` to
    ``+/- reverse(v)``; for a cluster it is the distance of the reversed
    basis from its own span.
    """
    worst, n_spaces, n_complex = 0.0, 0, 0
    gen = _eigenspaces(m)
    while True:
        try:
            _, basis = next(gen)
        except StopIteration as stop:
            n_complex = stop.value
            break
        n_spaces += 1
        rev = basis[::-1]
        if basis.shape[1] == 1:
            v = basis[:, 0]
            v = v * np.sign(v[np.argmax(np.abs(v))])
            r = v[::-1] * np.sign(v[::-1][np.argmax(np.abs(v[::-1]))])
            dev = min(np.max(np.abs(v - r)), np.max(np.abs(v + r)))
        else:
            dev = np.max(np.abs(rev - basis @ (basis.T @ rev)))
        worst = max(worst, float(dev))
    return worst <= tol, worst, n_spaces, n_complex


def verify_uniform_properties(P: UpdateMatrix, sym_tol: float = 1e-8,
                              eig_tol: float = 1e-10) -> PropertyReport:
    """Check the six structural properties of a full-sweep matrix.

    1 row-stochastic; 2 spectral radius at most one; 3 ``P 1 = 1``;
    4 eigenvectors symmetric or antisymmetric under index reversal;
    5 eigenvalue one has geometric multiplicity two; 6 with ``v`` a unit
    eigenvector, ``1 - v`` is one as well.
    """
    m = P.entries
    n = P.dim
    ones = np.ones(n)
    ev = eigenvalues_by_modulus(P)
    results, notes = [], []

    results.append(PropertyResult(1, P.is_row_stochastic(),
                                  f"max row-sum error {P.row_sum_error():.3e}, "
                                  f"min entry {m.min():.3e}"))
    rho = float(np.max(np.abs(ev)))
    results.append(PropertyResult(2, rho <= 1.0 + eig_tol, f"spectral radius {rho:.15f}"))
    res3 = float(np.max(np.abs(m @ ones - ones)))
    near_one = float(np.min(np.abs(ev - 1.0)))
    results.append(PropertyResult(3, res3 <= eig_tol and near_one <= eig_tol,
                                  f"|P1 - 1| = {res3:.3e}, closest eigenvalue to 1 at {near_one:.3e}"))
    ok4, dev4, n_spaces, n_complex = _reversal_check(m, sym_tol)
    if n_complex:
        notes.append(f"{n_complex} complex eigenvalues excluded from property 4")
    results.append(PropertyResult(4, ok4, f"worst reversal deviation {dev4:.3e} "
                                          f"over {n_spaces} real eigenspaces"))
    rank = int(np.linalg.matrix_rank(m - np.eye(n), tol=RANK_TOL))
    results.append(PropertyResult(5, rank == n - 2, f"rank(P - I) = {rank}, dim = {n}"))
    basis = null_space(m - np.eye(n), rcond=RANK_TOL)
    ok6, detail6 = False, f"unit eigenspace has dimension {basis.shape[1]}"
    if basis.shape[1] >= 2:
        # unit eigenvector vanishing at the first reference, one at the last
        coef = np.linalg.lstsq(basis[[0, -1]], np.array([0.0, 1.0]), rcond=None)[0]
        v1 = basis @ coef
        w = ones - v1
        res6 = float(np.max(np.abs(m @ w - w)))
        ok6 = res6 <= eig_tol
        detail6 = f"|P(1 - v1) - (1 - v1)| = {res6:.3e}"
    results.append(PropertyResult(6, ok6, detail6))
    return PropertyReport(results, ev, second_modulus(P), notes)


# -- running product ----------------------------------------------------------

@dataclass
class ProductLimit:
    limit: UpdateMatrix
    factors: int
    converged: bool
    interior_norms: np.ndarray
    rank: int
    column_sum_residual: float
    reversal_residual: float

    @property
    def monotone(self) -> bool:
        """Interior-column maxima never increase (up to rounding)."""
        n = self.interior_norms
        return bool(np.all(np.diff(n) <= 1e-14 * np.maximum(n[:-1], 1e-300) + 1e-300))

    def fixed_point(self) -> np.ndarray:
        """Last column: the limit applied to any level vector with references 0 and 1."""
        return self.limit.entries[:, -1].copy()

    def to_dict(self) -> dict:
        return {"factors": self.factors, "converged": self.converged,
                "final_interior_norm": float(self.interior_norms[-1]),
                "monotone": self.monotone, "rank": self.rank,
                "column_sum_residual": self.column_sum_residual,
                "reversal_residual": self.reversal_residual,
                "fixed_point": self.fixed_point().tolist()}


def _interior_norm(m: np.ndarray) -> float:
    return float(np.max(np.abs(m[:, 1:-1]))) if m.shape[1] > 2 else 0.0


def product_limit(matrices: Sequence[UpdateMatrix], tol: float = 1e-12,
                  max_factors: int = 100_000) -> ProductLimit:
    """Running product ``P_L ... P_2 P_1``, repeating the last factor once the sequence ends.

    Stops when every interior column is below ``tol`` in absolute value or
    after ``max_factors`` factors; ``converged`` reports which.
    """
    if not matrices:
        raise ValueError("need at least one matrix")
    n = matrices[0].dim
    if any(p.dim != n for p in matrices):
        raise ValueError("matrices do not conform")
    prod = np.eye(n)
    norms = []
    count = 0
    converged = _interior_norm(prod) < tol
    while not converged and count < max_factors:
        p = matrices[min(count, len(matrices) - 1)].entries
        prod = p @ prod
        count += 1
        norms.append(_interior_norm(prod))
        converged = norms[-1] < tol
    c_first, c_last = prod[:, 0], prod[:, -1]
    return ProductLimit(
        UpdateMatrix(prod, MatrixKind.PRODUCT_LIMIT), count, converged,
        np.array(norms if norms else [_interior_norm(prod)]),
        int(np.linalg.matrix_rank(prod, tol=RANK_TOL)),
        float(np.max(np.abs(c_first + c_last - 1.0))),
        float(np.max(np.abs(c_last - c_first[::-1]))))


def empirical_rate(trace: RunTrace, tail: int = 10) -> float:
    """Geometric mean of successive level-change ratios over the last ``tail`` iterations.

    Changes below 1e-13 are dropped since rounding dominates them.
    """
    ch = trace.changes
    ch = ch[ch > 1e-13]
    if ch.size < 2:
        return float("nan")
    ch = ch[-(tail + 1):]
    return float(np.exp(np.mean(np.diff(np.log(ch)))))


def replay(trace: RunTrace) -> float:
    """Largest deviation between ``P^(i) q^(i)`` and the recorded ``q^(i+1)``."""
    hist = trace.level_history()
    worst = 0.0
    for i, P in enumerate(sweep_matrices(trace)):
        worst = max(worst, float(np.max(np.abs(P.apply(hist[i]) - hist[i + 1]))))
    return worst
