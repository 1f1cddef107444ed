"""Command-line experiments: design, MSE curves, convergence, timing, spectra, encoding.

Exit codes: 0 success, 1 invalid input, 2 a design run hit ``--max-iter``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import codec, oracle, spectral
from .approx_solver import Scheme
from .density import Density
from .errors import QuantizerError
from .quantizer import Codebook, RunConfig, k_prime, random_init, run

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 1, 2


class InputError(Exception):
    """Bad command-line input; reported with exit code 1."""


def _k_list(values) -> list[int]:
    out = []
    for v in values:
        for part in str(v).split(","):
            if not part.strip():
                continue
            try:
                k = int(part)
            except ValueError as exc:
                raise InputError(f"K must be an integer, got {part!r}") from exc
            if k < 1:
                raise InputError(f"K must be positive, got {k}")
            out.append(k)
    if not out:
        raise InputError("empty K list")
    return out


def _schemes(choice: str) -> list[Scheme]:
    return [Scheme.ALM, Scheme.AEQ] if choice == "both" else [Scheme.parse(choice)]


def _load_levels(path: str) -> np.ndarray:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        return np.array([float(t) for t in text.replace(",", " ").split()])
    if isinstance(data, dict):
        data = data["levels"]
    return np.asarray(data, dtype=np.float64)


def _init_for(args, K: int, scheme: Scheme, rng: np.random.Generator):
    if args.init == "equispaced":
        return "equispaced"
    if args.init == "random":
        return random_init(K, scheme, rng)
    levels = _load_levels(args.init)
    if levels.size != k_prime(K, scheme) + 1:
        raise InputError(f"init file has {levels.size} entries, {scheme.value} K={K} "
                         f"needs {k_prime(K, scheme) + 1}")
    return levels


def _config(args, K: int, scheme: Scheme, rng, record_cost: bool = True) -> RunConfig:
    return RunConfig(K=K, scheme=scheme, max_iter=args.max_iter, threshold=args.threshold,
                     init=_init_for(args, K, scheme, rng), record_cost=record_cost)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path: Path, header: list[str], rows, footer: list[str] = ()) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        for line in footer:
            fh.write(f"# {line}\n")


def read_table(path) -> list[dict]:
    """Read a CSV written by this tool, skipping ``#`` footer lines."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def _log(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


# -- commands -----------------------------------------------------------------

def cmd_design(args) -> int:
    d = Density.parse(args.density)
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    status = EXIT_OK
    for scheme in _schemes(args.scheme):
        for K in _k_list(args.k):
            cb, trace = run(_config(args, K, scheme, rng), d)
            stem = f"{scheme.value}_K{K}"
            (out / f"codebook_{stem}.json").write_text(cb.to_json(indent=2))
            with (out / f"trace_{stem}.csv").open("w", newline="") as fh:
                trace.to_csv(fh)
            _log(args, f"{stem}: converged={trace.converged} iterations={trace.iterations} "
                       f"levels={np.array2string(cb.levels, precision=6)}")
            if not trace.converged:
                status = EXIT_NOT_CONVERGED
    return status


def cmd_mse_curve(args) -> int:
    d = Density.parse(args.density)
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    status = EXIT_OK
    rows = []
    for K in _k_list(args.k):
        mse = {}
        for scheme in (Scheme.ALM, Scheme.AEQ):
            cb, trace = run(_config(args, K, scheme, rng, record_cost=False), d)
            status = status if trace.converged else EXIT_NOT_CONVERGED
            mse[scheme] = oracle.cost(cb, d)
        exact_lm = oracle.exact_lloyd_max(d, K, method="newton")
        exact_env = oracle.exact_envelope(d, K, method="newton")
        rows.append([K, float(np.log2(K)), mse[Scheme.ALM], mse[Scheme.AEQ],
                     oracle.cost(exact_lm, d), oracle.cost(exact_env, d)])
        _log(args, "K={} mse_alm={:.6e} mse_aeq={:.6e} mse_exact_lm={:.6e} "
                   "mse_exact_env={:.6e}".format(K, *rows[-1][2:]))
    _write_rows(out / "mse_curve.csv",
                ["K", "bits", "mse_alm", "mse_aeq", "mse_exact_lm", "mse_exact_env"], rows)
    return status


def cmd_convergence(args) -> int:
    d = Density.parse(args.density)
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    status = EXIT_OK
    rows, footer = [], []
    for scheme in _schemes(args.scheme):
        for K in _k_list(args.k):
            _, trace = run(_config(args, K, scheme, rng), d)
            for i, rec in enumerate(trace.records, start=1):
                rows.append([scheme.value, K, i, rec.cost, rec.linf_change])
            footer.append(f"scheme={scheme.value} K={K} converged={str(trace.converged).lower()} "
                          f"iterations={trace.iterations} rate={spectral.empirical_rate(trace):.6f}")
            if not trace.converged:
                status = EXIT_NOT_CONVERGED
    _write_rows(out / "convergence.csv", ["scheme", "K", "iter", "cost", "linf_change"],
                rows, footer)
    for line in footer:
        _log(args, line)
    return status


def timed_designs(d: Density, K: int, repeats: int, slack: float = 0.01,
                  reference: str = "own", max_iter: int = 100_000):
    """Median wall times of ALM and exact Lloyd-Max under the 1%-of-optimal protocol.

    Each design stops once its cost is within ``slack`` of an optimum: its
    own fixed-point cost (``reference="own"``) or the exact Lloyd-Max cost
    for both (``"exact"``, which ALM cannot reach when its fixed point is
    worse than that). Iteration counts come from untimed runs with the
    cost check; the timed runs then perform exactly that many sweeps with
    no cost evaluation, so only design work is timed.

    Returns ``(t_alm, t_exact, sweeps_alm, sweeps_exact)``.
    """
    exact_opt = oracle.cost(oracle.exact_lloyd_max(d, K, method="newton"), d)
    if reference == "own":
        fixed = run(RunConfig(K=K, scheme=Scheme.ALM, max_iter=max_iter, threshold=1e-12,
                              record_cost=False), d)[0]
        alm_opt = oracle.cost(fixed, d)
    elif reference == "exact":
        alm_opt = exact_opt
    else:
        raise ValueError(f"unknown reference {reference!r}")

    def stop_at(target):
        return lambda q: oracle.level_cost(q, Scheme.ALM, d) <= target

    cfg = RunConfig(K=K, scheme=Scheme.ALM, max_iter=max_iter, threshold=0.0, record_cost=False)
    n_alm = run(cfg, d, stop_when=stop_at((1.0 + slack) * alm_opt))[1].iterations
    _, tr = oracle.exact_lloyd_max(d, K, cfg, stop_when=stop_at((1.0 + slack) * exact_opt),
                                   return_trace=True)
    n_exact = tr.iterations

    def clock(fn):
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return float(np.median(times))

    cfg_alm = RunConfig(K=K, scheme=Scheme.ALM, max_iter=n_alm, threshold=0.0, record_cost=False)
    cfg_ex = RunConfig(K=K, scheme=Scheme.ALM, max_iter=n_exact, threshold=0.0,
                       record_cost=False)
    return (clock(lambda: run(cfg_alm, d)), clock(lambda: oracle.exact_lloyd_max(d, K, cfg_ex)),
            n_alm, n_exact)


def cmd_compare_time(args) -> int:
    d = Density.parse(args.density)
    out = _out_dir(args)
    if args.repeats < 1:
        raise InputError("--repeats must be positive")
    rows = []
    for K in _k_list(args.k):
        t_alm, t_exact, n_alm, n_exact = timed_designs(d, K, args.repeats)
        rows.append([K, t_alm, t_exact, t_exact / t_alm])
        _log(args, f"K={K} t_alm={t_alm:.4g}s ({n_alm} sweeps) t_exact={t_exact:.4g}s "
                   f"({n_exact} sweeps) speedup={t_exact / t_alm:.2f}")
    _write_rows(out / "compare_time.csv", ["K", "t_alm", "t_exact", "speedup"], rows)
    return EXIT_OK


def spectral_summary(d: Density, K: int, scheme: Scheme, cfg: RunConfig | None = None) -> dict:
    """Property report, second eigenvalue and product-limit diagnostics for one design."""
    if d.kind.value == "uniform" and cfg is None:
        P = spectral.uniform_sweep_matrix(K, scheme)
        matrices, rate, converged = [P], float("nan"), True
    else:
        cfg = cfg or RunConfig(K=K, scheme=scheme, record_cost=False)
        _, trace = run(cfg, d)
        matrices = spectral.sweep_matrices(trace)
        P, rate, converged = matrices[-1], spectral.empirical_rate(trace), trace.converged
    report = spectral.verify_uniform_properties(P)
    limit = spectral.product_limit(matrices)
    return {"density": d.name, "scheme": scheme.value, "K": K, "run_converged": converged,
            "report": report.to_dict(), "second_eigenvalue": report.second_modulus,
            "empirical_rate": rate, "product_limit": limit.to_dict(),
            "_matrices": (P, limit.limit)}


def cmd_spectral(args) -> int:
    d = Density.parse(args.density)
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    status = EXIT_OK
    for scheme in _schemes(args.scheme):
        for K in _k_list(args.k):
            if k_prime(K, scheme) < 2:
                raise InputError(f"{scheme.value} K={K} has no updatable level")
            cfg = None
            if d.kind.value != "uniform" or args.init != "equispaced":
                cfg = _config(args, K, scheme, rng, record_cost=False)
            summary = spectral_summary(d, K, scheme, cfg)
            P, limit = summary.pop("_matrices")
            stem = f"{scheme.value}_K{K}"
            (out / f"spectral_{stem}.json").write_text(json.dumps(summary, indent=2))
            with (out / f"sweep_matrix_{stem}.csv").open("w", newline="") as fh:
                P.to_csv(fh)
            with (out / f"limit_matrix_{stem}.csv").open("w", newline="") as fh:
                limit.to_csv(fh)
            failed = [r["property_id"] for r in summary["report"]["properties"] if not r["pass"]]
            _log(args, f"{stem}: second eigenvalue {summary['second_eigenvalue']:.6f}, "
                       f"failed properties {failed or 'none'}, limit rank "
                       f"{summary['product_limit']['rank']}")
            if not summary["run_converged"]:
                status = EXIT_NOT_CONVERGED
    return status


def cmd_encode(args) -> int:
    if not args.codebook:
        raise InputError("--codebook is required")
    cb = Codebook.from_json(Path(args.codebook).read_text())
    out = _out_dir(args)
    if args.input:
        with (sys.stdin if args.input == "-" else open(args.input)) as fh:
            x = codec.read_samples(fh)
    else:
        x = Density.parse(args.density).sample(args.samples, np.random.default_rng(args.seed))
    with (out / "encoded.csv").open("w", newline="") as fh:
        codec.write_encoded_csv(x, cb, fh)
    mse, se = codec.empirical_mse(x, cb, return_stderr=True)
    _log(args, f"encoded {x.size} samples, empirical mse {mse:.6e} (stderr {se:.2e})")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--density", default="uniform",
                        help="density spec name[:p1,p2,...], e.g. beta:2,4")
    common.add_argument("--scheme", choices=["alm", "aeq", "both"], default="both")
    common.add_argument("--k", nargs="+", default=["4", "8", "16"],
                        help="level counts, space or comma separated")
    common.add_argument("--threshold", type=float, default=1e-10)
    common.add_argument("--max-iter", type=int, default=500)
    common.add_argument("--init", default="equispaced",
                        help="equispaced, random (uses --seed) or a level file")
    common.add_argument("--out", default="out")
    common.add_argument("--repeats", type=int, default=5)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="scalarquant", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
            ("design", cmd_design, "design codebooks, write codebook JSON and trace CSV"),
            ("mse-curve", cmd_mse_curve, "MSE of approximate and exact quantizers against K"),
            ("convergence", cmd_convergence, "per-iteration cost and level change"),
            ("compare-time", cmd_compare_time, "wall time of ALM against exact Lloyd-Max"),
            ("spectral", cmd_spectral, "sweep-matrix properties and product limit"),
            ("encode", cmd_encode, "encode samples with a codebook")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        if name == "encode":
            p.add_argument("--codebook", help="codebook JSON written by design")
            p.add_argument("--input", help="newline-delimited samples ('-' for stdin)")
            p.add_argument("--samples", type=int, default=10_000,
                           help="samples drawn from --density when --input is absent")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.max_iter < 1 or not args.threshold >= 0.0:
        print("error: --max-iter must be positive and --threshold nonnegative", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (InputError, QuantizerError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
