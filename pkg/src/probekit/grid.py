"""Model grids on the unit square, Fourier conventions, metrics and grid files.

Every field in probekit lives on an ``n x n`` grid covering ``[0, 1)^2`` with
spacing ``h = 1/n``. Arrays are indexed ``[iz, ix]``: rows run in depth ``z``,
columns in the horizontal coordinate ``x``. Node ``(iz, ix)`` sits at
``(x, z) = (ix*h, iz*h)``.

DFT convention: unnormalized forward transform, ``1/n^2`` on the inverse
(numpy's default), so that ``sum|f|^2 == sum|F|^2 / n^2``.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError

GRID_MAGIC = b"PKGRID1\n"


@dataclass(frozen=True)
class ModelGrid:
    """An ``n x n`` real field on the unit square."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise ConfigError(f"grid must be square, got shape {data.shape}")
        if data.shape[0] < 16:
            raise ConfigError(f"grid needs n >= 16, got n={data.shape[0]}")
        if not np.all(np.isfinite(data)):
            raise ConfigError("grid contains NaN or Inf")
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    def __eq__(self, other):
        if not isinstance(other, ModelGrid):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    __hash__ = None


def as_array(g) -> np.ndarray:
    """Return the float array behind a ModelGrid or array-like."""
    if isinstance(g, ModelGrid):
        return g.data
    return np.asarray(g)


def coordinates(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Node coordinates ``(x, z)`` broadcastable to ``(n, n)``."""
    s = np.arange(n) / n
    return s[None, :], s[:, None]


def wavenumbers(n: int, length: float = 1.0) -> np.ndarray:
    """Angular wavenumbers (rad per unit length) in DFT order."""
    return 2.0 * np.pi * np.fft.fftfreq(n, d=length / n)


@dataclass(frozen=True)
class SpectralGrid:
    """Wavevector components for an ``n x n`` grid, DFT ordered.

    ``kx`` varies along axis 1 and ``kz`` along axis 0; both are in radians per
    unit length and obey ``max(|kx|, |kz|) <= pi*n``.
    """

    n: int

    @property
    def kx(self) -> np.ndarray:
        return wavenumbers(self.n)[None, :]

    @property
    def kz(self) -> np.ndarray:
        return wavenumbers(self.n)[:, None]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.kx, self.kz)

    def angle(self) -> np.ndarray:
        return np.arctan2(self.kz, self.kx)


def fft2(f: np.ndarray) -> np.ndarray:
    return np.fft.fft2(f)


def ifft2(F: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(F)


def spectral_energy(F: np.ndarray) -> float:
    """``||f||^2`` computed from the unnormalized spectrum ``F``."""
    n1, n2 = F.shape[-2:]
    return float(np.sum(np.abs(F) ** 2) / (n1 * n2))


def mse(reference, candidate) -> float:
    """Relative error ``||reference - candidate|| / ||reference||``."""
    ref = as_array(reference)
    cand = as_array(candidate)
    if ref.shape != cand.shape:
        raise ConfigError(f"shape mismatch {ref.shape} vs {cand.shape}")
    norm = np.linalg.norm(ref)
    if norm == 0:
        raise ConfigError("degenerate reference")
    return float(np.linalg.norm(ref - cand) / norm)


def content_hash(*arrays, extra: str = "") -> str:
    """Short hex digest of array bytes, used as a cache and manifest key."""
    h = hashlib.sha256(extra.encode())
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


def write_grid(path, grid) -> None:
    """Write a grid in PKGRID1 format (magic, ``n=<int>`` line, float64 LE payload)."""
    data = as_array(grid).astype("<f8", copy=False)
    n = data.shape[0]
    if data.shape != (n, n):
        raise ConfigError(f"grid must be square, got shape {data.shape}")
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(f"n={n}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_grid(path) -> ModelGrid:
    """Read a PKGRID1 file written by :func:`write_grid`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_grid(raw)


def parse_grid(raw: bytes) -> ModelGrid:
    if not raw.startswith(GRID_MAGIC):
        raise FormatError("not a PKGRID1 file (bad magic)")
    rest = raw[len(GRID_MAGIC):]
    end = rest.find(b"\n")
    if end < 0:
        raise FormatError("malformed header: missing size line")
    line = rest[:end].decode("ascii", errors="replace")
    if not line.startswith("n="):
        raise FormatError(f"malformed header line {line!r}")
    try:
        n = int(line[2:])
    except ValueError as exc:
        raise FormatError(f"malformed header line {line!r}") from exc
    if n <= 0:
        raise FormatError(f"invalid grid size n={n}")
    payload = rest[end + 1:]
    expected = n * n * 8
    if len(payload) != expected:
        raise FormatError(
            f"payload holds {len(payload) // 8} values, header n={n} needs {n * n}"
        )
    data = np.frombuffer(payload, dtype="<f8").reshape(n, n).astype(np.float64)
    return ModelGrid(data)


def write_pgm(path, field) -> None:
    """Dump a field as an 8-bit binary PGM (P5), min-max normalized."""
    a = np.real(as_array(field)).astype(np.float64)
    lo, hi = float(a.min()), float(a.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.clip(np.rint((a - lo) * scale), 0, 255).astype(np.uint8)
    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, dims, maxval, payload = raw.split(b"\n", 3)
    if magic != b"P5":
        raise FormatError("not a binary PGM")
    cols, rows = (int(v) for v in dims.split())
    if int(maxval) != 255:
        raise FormatError("only 8-bit PGM supported")
    return np.frombuffer(payload[: rows * cols], dtype=np.uint8).reshape(rows, cols)


def cache_dir(default: str | None = None) -> str | None:
    """Cache directory from ``PROBEKIT_CACHE``, falling back to ``default``."""
    path = os.environ.get("PROBEKIT_CACHE", default)
    if path:
        os.makedirs(path, exist_ok=True)
    return path
