"""Tight curvelet frame built by frequency windowing and wrapping.

The spectrum is split by smooth polar windows ``W_w(k) = U_j(|k|) V_{j,l}(theta)``
whose squares sum to one at every DFT bin. Scale ``j = 0`` is an isotropic
lowpass; scales ``1 .. J-1`` carry ``16 * 2**ceil((j-1)/2)`` angular wedges.
Each windowed spectrum is wrapped onto the smallest power-of-two rectangle on
which the wedge support maps injectively and transformed back, so coefficient
``m`` of a wedge samples the wedge-filtered field at ``x = m / R``.

Bins on the Nyquist row/column stand for several frequencies at once; their
window value is the root mean square over those frequencies. This keeps the
partition of unity exact and makes wedge ``l + N/2`` the exact point reflection
of wedge ``l``, so real inputs give conjugate coefficient pairs.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError
from .grid import as_array

CURV_MAGIC = b"PKCURV1\n"
COARSE_ANGLES = 16


def meyer_nu(x):
    """C^3 step from 0 to 1 on ``[0, 1]`` with ``nu(x) + nu(1-x) = 1``."""
    x = np.clip(x, 0.0, 1.0)
    return x**4 * (35.0 - 84.0 * x + 70.0 * x**2 - 20.0 * x**3)


def _cos_window(t):
    """``cos(pi/2 nu(t))`` with exact zeros once ``t >= 1``."""
    t = np.asarray(t, dtype=float)
    return np.where(t >= 1.0, 0.0, np.cos(0.5 * np.pi * meyer_nu(t)))


@dataclass(frozen=True)
class FrameIndex:
    j: int
    l: int
    m: tuple[int, int]  # (m_x, m_z)


@dataclass
class _Wedge:
    j: int
    l: int
    nangles: int
    R1: int  # rows (z)
    R2: int  # columns (x)
    support: np.ndarray  # flat bin indices into the n x n spectrum
    window: np.ndarray  # W at those bins
    wrapped: np.ndarray  # flat indices into the R1 x R2 rectangle
    offset: int
    radial_center: float  # W^2-weighted mean |k|, rad per unit length

    @property
    def size(self) -> int:
        return self.R1 * self.R2

    @property
    def theta(self) -> float:
        return 2.0 * np.pi * self.l / self.nangles if self.j > 0 else 0.0


class CurveletPlan:
    """Immutable frame description for ``n x n`` grids (``n`` a power of two, ``n >= 32``)."""

    def __init__(self, n: int):
        if n < 32 or n & (n - 1):
            raise ConfigError(f"curvelet frame needs n a power of two >= 32, got {n}")
        self.n = n
        self.nscales = int(np.log2(n)) - 3
        self.angles = [1] + [
            COARSE_ANGLES * 2 ** int(np.ceil((j - 1) / 2)) for j in range(1, self.nscales)
        ]
        self.wedges: list[_Wedge] = []
        offset = 0
        for j, nang in enumerate(self.angles):
            for l in range(nang):
                w = self._build_wedge(j, l, nang, offset)
                self.wedges.append(w)
                offset += w.size
        self.size = offset
        self._wedge_lookup = {(w.j, w.l): i for i, w in enumerate(self.wedges)}

    # window construction -------------------------------------------------
    def _beta(self, j):
        return (self.n / 2.0) * 2.0 ** (j - (self.nscales - 1))

    def _lowpass(self, j, rho):
        b = self._beta(j)
        return _cos_window((rho - 2.0 * b / 3.0) / (2.0 * b / 3.0))

    def _radial_sq(self, j, rho):
        last = self.nscales - 1
        if j == 0:
            return self._lowpass(0, rho) ** 2
        hi = np.ones_like(rho) if j == last else self._lowpass(j, rho) ** 2
        return np.clip(hi - self._lowpass(j - 1, rho) ** 2, 0.0, 1.0)

    def _window_sq(self, j, l, nang, kx, kz):
        rho = np.hypot(kx, kz)
        rad = self._radial_sq(j, rho)
        if j == 0:
            return rad
        step = 2.0 * np.pi / nang
        u = (np.arctan2(kz, kx) - l * step) / step
        u = (u + nang / 2.0) % nang - nang / 2.0
        return rad * _cos_window(np.abs(u)) ** 2

    def _build_wedge(self, j, l, nang, offset):
        n = self.n
        c = np.fft.fftfreq(n, 1.0 / n)
        kx, kz = c[None, :], c[:, None]
        w2 = self._window_sq(j, l, nang, kx, kz)
        # Nyquist bins: mean of W^2 over the frequencies they alias
        half = n // 2
        row = 0.5 * (w2[half, :] + self._window_sq(j, l, nang, c, half))
        col = 0.5 * (w2[:, half] + self._window_sq(j, l, nang, half, c))
        corner = np.mean([self._window_sq(j, l, nang, sx * half, sz * half)
                          for sx in (-1, 1) for sz in (-1, 1)])
        w2[half, :] = row
        w2[:, half] = col
        w2[half, half] = corner
        support = np.flatnonzero(w2 > 0.0)
        window = np.sqrt(w2.ravel()[support])
        iz, ix = np.divmod(support, n)
        R1, R2 = _wrap_shape(iz, ix, n)
        wrapped = (iz % R1) * R2 + (ix % R2)
        rho = 2.0 * np.pi * np.hypot(kx, kz).ravel()[support]
        weights = window**2
        radial_center = float(np.sum(weights * rho) / np.sum(weights))
        return _Wedge(j, l, nang, R1, R2, support, window, wrapped, offset, radial_center)

    # bookkeeping ---------------------------------------------------------
    def descriptor(self) -> str:
        return f"curvelet-wrap n={self.n} scales={self.nscales} angles={','.join(map(str, self.angles))}"

    def wedge(self, j: int, l: int) -> _Wedge:
        try:
            return self.wedges[self._wedge_lookup[(j, l)]]
        except KeyError:
            raise ConfigError(f"no wedge (j={j}, l={l})") from None

    def flat_index(self, mu: FrameIndex) -> int:
        w = self.wedge(mu.j, mu.l)
        mx, mz = mu.m
        if not (0 <= mx < w.R2 and 0 <= mz < w.R1):
            raise ConfigError(f"position {mu.m} outside the {w.R2}x{w.R1} lattice")
        return w.offset + mz * w.R2 + mx

    def frame_index(self, flat: int) -> FrameIndex:
        if not 0 <= flat < self.size:
            raise ConfigError(f"atom index {flat} out of range")
        k = int(np.searchsorted(self._offsets, flat, side="right")) - 1
        w = self.wedges[k]
        mz, mx = divmod(flat - w.offset, w.R2)
        return FrameIndex(w.j, w.l, (mx, mz))

    @functools.cached_property
    def _offsets(self):
        return np.array([w.offset for w in self.wedges])

    @functools.cached_property
    def wedge_id(self) -> np.ndarray:
        """Wedge number of every atom."""
        return np.repeat(np.arange(len(self.wedges)), [w.size for w in self.wedges])

    @functools.cached_property
    def scale(self) -> np.ndarray:
        return np.array([self.wedges[i].j for i in self.wedge_id])

    @functools.cached_property
    def antipode(self) -> np.ndarray:
        """Flat index of the conjugate partner atom (same position, wedge rotated by pi)."""
        out = np.arange(self.size)
        for w in self.wedges:
            if w.j == 0:
                continue
            v = self.wedge(w.j, (w.l + w.nangles // 2) % w.nangles)
            out[w.offset:w.offset + w.size] = v.offset + np.arange(w.size)
        return out

    @functools.cached_property
    def atom_norms(self) -> np.ndarray:
        """``||phi_mu||_2`` for every atom; constant within a wedge."""
        return np.repeat([np.sqrt(np.sum(w.window**2) / w.size) for w in self.wedges],
                         [w.size for w in self.wedges])

    @functools.cached_property
    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``x (size, 2)`` and ``k (size, 2)`` of phase-space centers, ``(x, z)`` order."""
        xs, ks = [], []
        for w in self.wedges:
            mz, mx = np.divmod(np.arange(w.size), w.R2)
            xs.append(np.column_stack([mx / w.R2, mz / w.R1]))
            if w.j == 0:
                kvec = np.zeros(2)
            else:
                kvec = w.radial_center * np.array([np.cos(w.theta), np.sin(w.theta)])
            ks.append(np.broadcast_to(kvec, (w.size, 2)))
        return np.vstack(xs), np.vstack(ks)

    def center(self, mu: FrameIndex) -> tuple[np.ndarray, np.ndarray]:
        i = self.flat_index(mu)
        x, k = self.centers
        return x[i].copy(), k[i].copy()

    # transforms ----------------------------------------------------------
    def analyze(self, f) -> "CurveletCoeffs":
        f = as_array(f)
        if f.shape != (self.n, self.n):
            raise ConfigError(f"expected a {self.n}x{self.n} field, got {f.shape}")
        F = np.fft.fft2(f).ravel()
        data = np.empty(self.size, dtype=np.complex128)
        for w in self.wedges:
            buf = np.zeros(w.size, dtype=np.complex128)
            buf[w.wrapped] = w.window * F[w.support]
            c = np.fft.ifft2(buf.reshape(w.R1, w.R2)) * (np.sqrt(w.size) / self.n)
            data[w.offset:w.offset + w.size] = c.ravel()
        return CurveletCoeffs(self, data)

    def synthesize(self, coeffs) -> np.ndarray:
        """Adjoint of :meth:`analyze` (complex field)."""
        data = self._coeff_data(coeffs)
        acc = np.zeros(self.n * self.n, dtype=np.complex128)
        for w in self.wedges:
            c = data[w.offset:w.offset + w.size].reshape(w.R1, w.R2)
            X = np.fft.fft2(c).ravel() * (self.n / np.sqrt(w.size))
            acc[w.support] += w.window * X[w.wrapped]
        return np.fft.ifft2(acc.reshape(self.n, self.n))

    def _coeff_data(self, coeffs):
        if isinstance(coeffs, CurveletCoeffs):
            if coeffs.plan is not self and coeffs.plan.descriptor() != self.descriptor():
                raise ConfigError("coefficients belong to a different frame plan")
            return coeffs.data
        data = np.asarray(coeffs)
        if data.shape != (self.size,):
            raise ConfigError(f"coefficient vector must have length {self.size}")
        return data

    def atom(self, mu) -> np.ndarray:
        i = mu if isinstance(mu, (int, np.integer)) else self.flat_index(mu)
        e = np.zeros(self.size, dtype=np.complex128)
        e[i] = 1.0
        return self.synthesize(e)

    def masked_projection(self, f, mask) -> np.ndarray:
        """Real part of ``synthesize(mask * analyze(f))``."""
        c = self.analyze(f).data * np.asarray(mask, dtype=float)
        return self.synthesize(c).real


@functools.lru_cache(maxsize=8)
def get_plan(n: int) -> CurveletPlan:
    return CurveletPlan(n)


def _wrap_shape(iz, ix, n):
    best = None
    sizes = [1 << e for e in range(int(np.log2(n)) + 1)]
    for R1 in sizes:
        for R2 in sizes:
            if R1 * R2 < iz.size:
                continue
            key = (R1 * R2, abs(np.log2(R1) - np.log2(R2)), R1)
            if best is not None and key >= best[0]:
                continue
            codes = (iz % R1) * R2 + (ix % R2)
            if np.unique(codes).size == codes.size:
                best = (key, R1, R2)
    return best[1], best[2]


@dataclass
class CurveletCoeffs:
    plan: CurveletPlan
    data: np.ndarray

    def wedge(self, j: int, l: int) -> np.ndarray:
        w = self.plan.wedge(j, l)
        return self.data[w.offset:w.offset + w.size].reshape(w.R1, w.R2)

    def energy(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2))


def diag_approx_error(plan: CurveletPlan, symbol, f, k_min: float, chunk: int = 512) -> float:
    """Relative error of the curvelet-diagonal approximation of ``T (-Delta)^(-1/2)``.

    ``symbol(x, z, kx, kz)`` is the (vectorized) symbol ``a`` of ``T``. The
    approximation multiplies coefficient ``mu`` by ``a(x_mu, k_mu) / |k_mu|``;
    the exact operator evaluates ``a(x, k) / |k|`` densely. Coarse atoms, whose
    wavevector center is zero, use the angular mean of ``a / |k|`` on their
    radial center circle.
    """
    from .symbols import K_FLOOR

    if k_min < K_FLOOR:
        raise ConfigError(f"k_min={k_min} below the k-zero floor {K_FLOOR}")
    f = np.asarray(as_array(f), dtype=float)
    n = plan.n
    xs, ks = plan.centers
    kn = np.hypot(ks[:, 0], ks[:, 1])
    diag = np.empty(plan.size, dtype=np.complex128)
    fine = kn > 0
    diag[fine] = symbol(xs[fine, 0], xs[fine, 1], ks[fine, 0], ks[fine, 1]) / kn[fine]
    coarse = np.flatnonzero(~fine)
    if coarse.size:
        rc = plan.wedges[0].radial_center
        th = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
        vals = symbol(xs[coarse, 0][:, None], xs[coarse, 1][:, None],
                      rc * np.cos(th)[None, :], rc * np.sin(th)[None, :])
        diag[coarse] = np.mean(vals, axis=1) / rc
    approx = plan.synthesize(plan.analyze(f).data * diag)
    exact = apply_symbol_dense(symbol, f, order=-1, chunk=chunk)
    return float(np.linalg.norm(approx - exact) / np.linalg.norm(f))


def apply_symbol_dense(symbol, f, order: int = 0, chunk: int = 512) -> np.ndarray:
    """``(1/n^2) sum_k a(x, k) |k|^order F(k) e^{i k.x}`` by direct summation."""
    from .symbols import radial_power

    f = as_array(f)
    n = f.shape[-1]
    F = np.fft.fft2(f).ravel()
    k = 2.0 * np.pi * np.fft.fftfreq(n, 1.0 / n)
    s = np.arange(n) / n
    kx, kz = np.tile(k, n), np.repeat(k, n)
    ikx, ikz = np.tile(np.arange(n), n), np.repeat(np.arange(n), n)
    x, z = np.tile(s, n)[:, None], np.repeat(s, n)[:, None]
    ix, iz = np.tile(np.arange(n), n), np.repeat(np.arange(n), n)
    # e^{i k.x} = E[ix, ikx] E[iz, ikz] with E the 1D Fourier matrix
    E = np.exp(2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    out = np.zeros(n * n, dtype=np.complex128)
    for start in range(0, n * n, chunk):
        sl = slice(start, start + chunk)
        kxs, kzs = kx[None, sl], kz[None, sl]
        mult = symbol(x, z, kxs, kzs) * (radial_power(np.hypot(kxs, kzs), order) * F[sl])
        phase = E[ix[:, None], ikx[None, sl]] * E[iz[:, None], ikz[None, sl]]
        out += np.einsum("ij,ij->i", mult, phase)
    return (out / (n * n)).reshape(n, n)


def write_coeffs(path, coeffs: CurveletCoeffs) -> None:
    with open(path, "wb") as fh:
        fh.write(CURV_MAGIC)
        fh.write((coeffs.plan.descriptor() + f" size={coeffs.plan.size}\n").encode("ascii"))
        fh.write(np.column_stack([coeffs.data.real, coeffs.data.imag]).astype("<f8").tobytes())


def read_coeffs(path) -> CurveletCoeffs:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(CURV_MAGIC):
        raise FormatError("not a PKCURV1 file")
    rest = raw[len(CURV_MAGIC):]
    end = rest.find(b"\n")
    header = rest[:end].decode("ascii", errors="replace")
    try:
        n = int(header.split("n=")[1].split()[0])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"malformed PKCURV1 header {header!r}") from exc
    plan = get_plan(n)
    pairs = np.frombuffer(rest[end + 1:], dtype="<f8")
    if pairs.size != 2 * plan.size:
        raise FormatError("PKCURV1 payload length does not match the plan")
    pairs = pairs.reshape(-1, 2)
    return CurveletCoeffs(plan, pairs[:, 0] + 1j * pairs[:, 1])
