"""Encoding scalars to level indices and back.

Indices are 1-based: index ``k`` decodes to reproduction value ``q_k``.
ALM cells are split at level midpoints, a sample on a midpoint going to the
lower cell. AEQ maps ``x`` to the smallest level ``q_k >= x``, so the decoded
value never lies below the input.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass

import numpy as np

from .approx_solver import Scheme
from .errors import DomainError
from .quantizer import Codebook


def codebook_id(cb: Codebook) -> str:
    """Short content hash identifying a codebook."""
    h = hashlib.sha1(f"{cb.scheme.value}:{cb.K}:".encode() + cb.levels.tobytes())
    return h.hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class EncodedStream:
    indices: np.ndarray
    codebook_id: str

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.size


def _samples(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    bad = ~((arr >= 0.0) & (arr <= 1.0))
    if np.any(bad):
        raise DomainError(f"{np.count_nonzero(bad)} sample(s) outside [0, 1], "
                          f"first {arr[bad].flat[0]!r}")
    return arr


def _search_points(cb: Codebook) -> np.ndarray:
    out = cb.outputs
    if cb.scheme is Scheme.ALM:
        return 0.5 * (out[:-1] + out[1:])
    return out


def encode_batch(x, cb: Codebook) -> np.ndarray:
    """Level indices (1-based) for an array of samples."""
    arr = _samples(x)
    return np.searchsorted(_search_points(cb), arr, side="left") + 1


def encode(x: float, cb: Codebook) -> int:
    return int(encode_batch(np.float64(x), cb))


def decode_batch(indices, cb: Codebook) -> np.ndarray:
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise IndexError("indices must be integers")
    if np.any((idx < 1) | (idx > cb.K)):
        raise IndexError(f"indices must lie in [1, {cb.K}]")
    return cb.outputs[idx - 1]


def decode(idx: int, cb: Codebook) -> float:
    return float(decode_batch(np.int64(idx), cb))


def encode_stream(x, cb: Codebook) -> EncodedStream:
    return EncodedStream(encode_batch(x, cb), codebook_id(cb))


def decode_stream(stream: EncodedStream, cb: Codebook) -> np.ndarray:
    if stream.codebook_id != codebook_id(cb):
        raise ValueError("stream was encoded with a different codebook")
    return decode_batch(stream.indices, cb)


def quantize(x, cb: Codebook) -> np.ndarray:
    return decode_batch(encode_batch(x, cb), cb)


def empirical_mse(samples, cb: Codebook, return_stderr: bool = False):
    """Mean squared reconstruction error over ``samples`` (and its standard error)."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("empirical MSE needs at least one sample")
    sq = (quantize(x, cb) - x) ** 2
    mse = float(sq.mean())
    if not return_stderr:
        return mse
    se = float(sq.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("inf")
    return mse, se


def read_samples(fh) -> np.ndarray:
    """Newline-delimited reals; blank lines are skipped."""
    return np.array([float(line) for line in fh if line.strip()], dtype=np.float64)


def write_encoded_csv(x, cb: Codebook, fh=None) -> str | None:
    arr = _samples(np.asarray(x, dtype=np.float64).reshape(-1))
    idx = encode_batch(arr, cb)
    out = io.StringIO() if fh is None else fh
    w = csv.writer(out)
    w.writerow(["x", "index", "level"])
    for xi, k, level in zip(arr.tolist(), idx.tolist(), cb.outputs[idx - 1].tolist()):
        w.writerow([repr(xi), k, repr(level)])
    return out.getvalue() if fh is None else None


def read_encoded_csv(fh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = list(csv.DictReader(fh))
    return (np.array([float(r["x"]) for r in rows]),
            np.array([int(r["index"]) for r in rows], dtype=np.int64),
            np.array([float(r["level"]) for r in rows]))
