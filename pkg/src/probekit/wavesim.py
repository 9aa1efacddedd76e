"""2D constant-density acoustic wave propagation with an absorbing layer.

Solves ``m u_tt + m sigma u_t - Laplacian u = f`` on the physical grid padded by
``ceil(0.15 n)`` nodes per side. The Laplacian is spectral on the (periodic)
padded grid, time stepping is the second-order leapfrog, and ``sigma`` is a
quadratic damping profile that is zero inside the unit square.

The padding is laid out so the periodic padded grid is mirror symmetric about
``x = 1/2`` and ``z = 1/2``: damping is measured as the distance to the closed
square ``[0, 1]^2``, so the node at ``x = 1`` (just right of the last physical
node) is undamped.

One step reads, with ``s = sigma*dt/2``::

    u[k+1] = a*u[k] + b*u[k-1] + c*(L u[k] + f[k])
    a = 2/(1+s),  b = -(1-s)/(1+s),  c = dt^2/(m (1+s))

and :meth:`WaveSolver.propagate_adjoint` runs the exact transpose of that
recursion backward in time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .errors import ConfigError, FormatError, InstabilityError
from .grid import as_array, content_hash

SHOT_MAGIC = b"PKSHOT1\n"
PML_FRACTION = 0.15
INSTABILITY_FACTOR = 1e12


def ricker(t, t0: float, f0: float):
    """Ricker wavelet (second derivative of a gaussian), peak 1 at ``t = t0``."""
    if f0 <= 0:
        raise ConfigError("peak frequency must be positive")
    arg = (np.pi * f0 * (np.asarray(t, dtype=float) - t0)) ** 2
    return (1.0 - 2.0 * arg) * np.exp(-arg)


def pml_width(n: int) -> int:
    return int(math.ceil(PML_FRACTION * n))


@dataclass
class Medium:
    """Background squared slowness ``m0 = 1/c^2`` on the physical grid."""

    m0: np.ndarray

    def __post_init__(self):
        m0 = np.asarray(as_array(self.m0), dtype=np.float64)
        if m0.ndim != 2 or m0.shape[0] != m0.shape[1]:
            raise ConfigError("medium must be a square grid")
        if not np.all(np.isfinite(m0)) or np.any(m0 <= 0):
            raise ConfigError("squared slowness must be finite and strictly positive")
        self.m0 = m0

    @classmethod
    def constant(cls, n: int, c: float = 1.0) -> "Medium":
        return cls(np.full((n, n), 1.0 / c**2))

    @classmethod
    def from_speed(cls, c) -> "Medium":
        c = np.asarray(as_array(c), dtype=np.float64)
        if not np.all(np.isfinite(c)) or np.any(c <= 0):
            raise ConfigError("speed must be finite and strictly positive")
        return cls(1.0 / c**2)

    @property
    def n(self) -> int:
        return self.m0.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def npml(self) -> int:
        return pml_width(self.n)

    @property
    def padded_n(self) -> int:
        return self.n + 2 * self.npml

    @property
    def speed(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.m0)

    @property
    def c_min(self) -> float:
        return float(self.speed.min())

    @property
    def c_max(self) -> float:
        return float(self.speed.max())

    def stable_dt(self) -> float:
        """Largest step allowed by ``dt <= 0.5 h / (pi c_max)``."""
        return 0.5 * self.h / (np.pi * self.c_max)

    def padded_m(self) -> np.ndarray:
        p = self.npml
        return np.pad(self.m0, p, mode="edge")

    def damping(self) -> np.ndarray:
        """Additive ``sigma_x + sigma_z`` profile on the padded grid."""
        n, p, h = self.n, self.npml, self.h
        width = p * h
        sigma_max = 8.0 * self.c_max / width
        x = (np.arange(n + 2 * p) - p) * h
        d = np.maximum(0.0, np.maximum(-x, x - 1.0))
        prof = sigma_max * (d / width) ** 2
        return prof[:, None] + prof[None, :]

    def key(self) -> str:
        return content_hash(self.m0, extra="medium")


def default_wavelet_params(medium: Medium) -> tuple[float, float]:
    """``(t0, f0)`` with peak wavelength ~10h at the slowest speed."""
    f0 = medium.c_min / (10.0 * medium.h)
    return 1.5 / f0, f0


def default_duration(medium: Medium, t0: float) -> float:
    """Record long enough for two domain diagonals at the slowest speed."""
    return t0 + 2.0 * math.sqrt(2.0) / medium.c_min


@dataclass
class Acquisition:
    """Sources and receivers snapped to physical grid nodes.

    Positions are ``(x, z)`` pairs in unit-square coordinates.
    """

    n: int
    sources: np.ndarray
    receivers: np.ndarray
    dt: float
    nt: int
    wavelet: np.ndarray
    t0: float = 0.0
    f0: float = 0.0

    def __post_init__(self):
        self.sources = np.atleast_2d(np.asarray(self.sources, dtype=float))
        self.receivers = np.atleast_2d(np.asarray(self.receivers, dtype=float))
        self.wavelet = np.asarray(self.wavelet, dtype=float)
        if self.wavelet.shape != (self.nt,):
            raise ConfigError("wavelet must have nt samples")
        for name, pos in (("source", self.sources), ("receiver", self.receivers)):
            nodes = self._snap(pos)
            if np.any(nodes < 0) or np.any(nodes > self.n - 1):
                raise ConfigError(f"{name} outside the physical domain")

    def _snap(self, pos: np.ndarray) -> np.ndarray:
        # (iz, ix) node indices
        return np.rint(pos[:, ::-1] * self.n).astype(int)

    @property
    def source_nodes(self) -> np.ndarray:
        return self._snap(self.sources)

    @property
    def receiver_nodes(self) -> np.ndarray:
        return self._snap(self.receivers)

    @property
    def ns(self) -> int:
        return len(self.sources)

    @property
    def nr(self) -> int:
        return len(self.receivers)

    @classmethod
    def surface(
        cls,
        medium: Medium,
        source_x=(0.1, 0.5, 0.9),
        dt: float | None = None,
        nt: int | None = None,
        f0: float | None = None,
        t0: float | None = None,
    ) -> "Acquisition":
        """Default layout: sources at ``source_x`` and a receiver on every node, both at ``z = h``."""
        n, h = medium.n, medium.h
        dt_max = medium.stable_dt()
        if dt is None:
            dt = dt_max
        elif dt > dt_max * (1 + 1e-12):
            raise ConfigError(f"dt={dt} violates the stability bound {dt_max}")
        t0_def, f0_def = default_wavelet_params(medium)
        f0 = f0_def if f0 is None else f0
        t0 = 1.5 / f0 if t0 is None else t0
        if nt is None:
            nt = int(math.ceil(default_duration(medium, t0) / dt)) + 1
        sources = np.array([[x, h] for x in source_x])
        receivers = np.array([[ix * h, h] for ix in range(n)])
        wavelet = ricker(np.arange(nt) * dt, t0, f0)
        return cls(n, sources, receivers, dt, nt, wavelet, t0, f0)

    def key(self) -> str:
        return content_hash(
            self.sources, self.receivers, self.wavelet,
            extra=f"acq:{self.n}:{self.dt!r}:{self.nt}",
        )


@dataclass
class ShotData:
    """Recorded traces, ``values[r, s, t]``."""

    values: np.ndarray
    dt: float

    @property
    def nr(self) -> int:
        return self.values.shape[0]

    @property
    def ns(self) -> int:
        return self.values.shape[1]

    @property
    def nt(self) -> int:
        return self.values.shape[2]

    def dot(self, other: "ShotData") -> float:
        return float(np.vdot(self.values, other.values).real)


def write_shots(path, shots: ShotData) -> None:
    """PKSHOT1: magic, ``"nr ns nt dt"`` line, float64 LE array ordered (s, r, t)."""
    with open(path, "wb") as fh:
        fh.write(SHOT_MAGIC)
        fh.write(f"{shots.nr} {shots.ns} {shots.nt} {shots.dt!r}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(shots.values.transpose(1, 0, 2), dtype="<f8").tobytes())


def read_shots(path) -> ShotData:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(SHOT_MAGIC):
        raise FormatError("not a PKSHOT1 file")
    rest = raw[len(SHOT_MAGIC):]
    end = rest.find(b"\n")
    try:
        nr, ns, nt, dt = rest[:end].decode("ascii").split()
        nr, ns, nt, dt = int(nr), int(ns), int(nt), float(dt)
    except ValueError as exc:
        raise FormatError("malformed PKSHOT1 header") from exc
    payload = rest[end + 1:]
    if len(payload) != nr * ns * nt * 8:
        raise FormatError("PKSHOT1 payload length does not match header")
    vals = np.frombuffer(payload, dtype="<f8").reshape(ns, nr, nt).transpose(1, 0, 2)
    return ShotData(np.array(vals), dt)


class WaveSolver:
    """Leapfrog stepper on the padded grid of ``medium``.

    The solver owns its coefficient arrays; fields passed through
    :meth:`propagate` may carry leading batch dimensions.
    """

    def __init__(self, medium: Medium, dt: float):
        if dt > medium.stable_dt() * (1 + 1e-12):
            raise ConfigError(f"dt={dt} violates the stability bound {medium.stable_dt()}")
        self.medium = medium
        self.dt = dt
        self.np_ = medium.padded_n
        self.p = medium.npml
        n = medium.n
        self.inner = (slice(self.p, self.p + n), slice(self.p, self.p + n))
        m = medium.padded_m()
        s = medium.damping() * dt / 2.0
        self.a = 2.0 / (1.0 + s)
        self.b = -(1.0 - s) / (1.0 + s)
        self.c = dt**2 / (m * (1.0 + s))
        k = 2.0 * np.pi * np.fft.fftfreq(self.np_, d=medium.h)
        kr = 2.0 * np.pi * np.fft.rfftfreq(self.np_, d=medium.h)
        self.lap_mult = -(k[:, None] ** 2 + kr[None, :] ** 2)

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        spec = sfft.rfft2(u)
        spec *= self.lap_mult
        return sfft.irfft2(spec, s=(self.np_, self.np_))

    def pad_index(self, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        nodes = np.asarray(nodes)
        return nodes[:, 0] + self.p, nodes[:, 1] + self.p

    def propagate(self, nt, inject, observe, batch=(), source_scale=None):
        """Run ``nt`` time levels forward from rest.

        Args:
            nt: number of time levels ``u[0] .. u[nt-1]``; ``u[0] = 0``.
            inject: ``inject(k, rhs)`` adds ``f[k]`` into the padded ``rhs`` buffer
                (already holding ``L u[k]``) for ``k = 0 .. nt-2``.
            observe: ``observe(k, u)`` is called with each level ``u[k]``.
            batch: leading batch shape of the fields.
            source_scale: magnitude of the forcing, for the blow-up guard.
        """
        shape = tuple(batch) + (self.np_, self.np_)
        u_prev = np.zeros(shape)
        u = np.zeros(shape)
        observe(0, u)
        guard = self._guard(source_scale)
        for k in range(nt - 1):
            rhs = self.laplacian(u)
            inject(k, rhs)
            rhs *= self.c
            u_next = self.a * u
            u_next += self.b * u_prev
            u_next += rhs
            u_prev, u = u, u_next
            observe(k + 1, u)
            if k % 64 == 63:
                guard(u)
        guard(u)

    def propagate_adjoint(self, nt, inject, observe, batch=(), source_scale=None):
        """Transpose of :meth:`propagate`.

        ``inject(k, lam)`` adds the adjoint source ``g[k]`` (the weight on
        ``u[k]``) for ``k = nt-1 .. 1``; ``observe(k, fbar)`` receives the
        gradient with respect to ``f[k]`` for ``k = nt-2 .. 0``.
        """
        shape = tuple(batch) + (self.np_, self.np_)
        lam1 = np.zeros(shape)
        lam2 = np.zeros(shape)
        guard = self._guard(source_scale)
        for k in range(nt - 1, 0, -1):
            lam = self.laplacian(self.c * lam1)
            lam += self.a * lam1
            lam += self.b * lam2
            inject(k, lam)
            observe(k - 1, self.c * lam)
            lam2, lam1 = lam1, lam
            if k % 64 == 0:
                guard(lam)
        guard(lam1)

    def _guard(self, source_scale):
        limit = None if source_scale is None else INSTABILITY_FACTOR * max(source_scale, 1e-300)

        def check(u):
            umax = float(np.max(np.abs(u))) if u.size else 0.0
            if not np.isfinite(umax) or (limit is not None and umax > limit):
                raise InstabilityError("CFL/PML instability")

        return check


def point_source_injector(solver: WaveSolver, acq: Acquisition, which=None):
    """Injector for ``f_s = delta(x - s) w(t)`` with one batch entry per source."""
    nodes = acq.source_nodes if which is None else acq.source_nodes[list(which)]
    iz, ix = solver.pad_index(nodes)
    batch = np.arange(len(nodes))
    amp = acq.wavelet / solver.medium.h**2

    def inject(k, rhs):
        rhs[batch, iz, ix] += amp[k]

    return inject, float(np.max(np.abs(amp)) * np.max(solver.c))


def solve_second_order(medium: Medium, rhs, nt: int, dt: float) -> np.ndarray:
    """Wavefield movie ``u[k]`` on the physical grid, ``k = 0 .. nt-1``.

    ``rhs`` is either an array ``(nt, n, n)`` or a callable ``k -> (n, n) | None``
    giving the forcing on the physical grid.
    """
    solver = WaveSolver(medium, dt)
    n = medium.n
    if callable(rhs):
        get = rhs
        scale = None
    else:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (nt, n, n):
            raise ConfigError(f"rhs must have shape {(nt, n, n)}")
        get = rhs.__getitem__
        scale = float(np.max(np.abs(rhs)) * np.max(solver.c)) if rhs.size else 0.0
    movie = np.zeros((nt, n, n))
    zi, xi = solver.inner

    def inject(k, buf):
        f = get(k)
        if f is not None:
            buf[zi, xi] += f

    def observe(k, u):
        movie[k] = u[zi, xi]

    solver.propagate(nt, inject, observe, source_scale=scale)
    return movie


def record(movie: np.ndarray, receivers: np.ndarray) -> np.ndarray:
    """Traces ``trace[j, k] = movie[k, iz_j, ix_j]`` for receiver nodes ``(iz, ix)``."""
    movie = np.asarray(movie)
    nodes = np.atleast_2d(np.asarray(receivers, dtype=int))
    n = movie.shape[-1]
    if np.any(nodes < 0) or np.any(nodes > n - 1):
        raise ConfigError("receiver outside the physical domain")
    return movie[:, nodes[:, 0], nodes[:, 1]].T.copy()


def interior_energy(movie: np.ndarray, medium: Medium, dt: float) -> np.ndarray:
    """Discrete energy ``sum(m u_t^2 + |grad u|^2) h^2`` per interior level."""
    ut = (movie[2:] - movie[:-2]) / (2 * dt)
    gz, gx = np.gradient(movie[1:-1], medium.h, axis=(1, 2))
    return np.sum(medium.m0 * ut**2 + gx**2 + gz**2, axis=(1, 2)) * medium.h**2
