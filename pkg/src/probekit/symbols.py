"""Elementary pseudodifferential operators and fitted symbol expansions.

An elementary operator ``B_i``, ``i = (lam, q1, q2)``, has the separable symbol::

    exp(2 pi i lam.x) * exp(i q1 theta) * T_q2((|k| - L)/(|k| + L)) * |k|^e

with ``theta = atan2(kz, kx)`` and ``T_q`` the Chebyshev polynomial of the first
kind. It is applied as a Fourier multiplier followed by a spatial modulation.

On the discrete grid the multiplier for ``q1 < 0`` is defined from its
conjugate partner, ``m_q(k) = (-1)^q conj(m_{-q}(-k))``. Away from the Nyquist
lines this is exactly ``exp(i q theta)``; on them it keeps every ``B_i``
unimodular while guaranteeing ``B_{i'} f = (-1)^{q1} conj(B_i f)`` for real
``f``, where ``i' = (-lam, -q1, q2)``. Coefficients with
``c_{i'} = (-1)^{q1} conj(c_i)`` therefore give real output exactly.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev

from .errors import ConfigError, FormatError
from .grid import as_array, coordinates, wavenumbers

SYM_MAGIC = b"PKSYM1\n"
K_FLOOR = 2.0 * np.pi
_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class SymbolIndex:
    lam: tuple[int, int]
    q1: int
    q2: int

    def partner(self) -> "SymbolIndex":
        return SymbolIndex((-self.lam[0], -self.lam[1]), -self.q1, self.q2)

    @property
    def self_conjugate(self) -> bool:
        return self.lam == (0, 0) and self.q1 == 0


@dataclass(frozen=True)
class BasisSpec:
    """Truncation of the expansion.

    ``lmax`` bounds both spatial frequencies, ``q1max`` the angular harmonic,
    ``q2max`` the rational Chebyshev degree; ``order`` is the homogeneity ``e``
    and ``L`` the rational map scale in rad per unit length.
    """

    lmax: int
    q1max: int
    q2max: int
    order: int = -1
    L: float = 16 * np.pi

    def __post_init__(self):
        if min(self.lmax, self.q1max, self.q2max) < 0:
            raise ConfigError("truncation parameters must be nonnegative")
        if self.order not in (-1, 0, 1):
            raise ConfigError("order must be -1, 0 or 1")
        if not self.L > 0:
            raise ConfigError("rational Chebyshev scale L must be positive")

    @classmethod
    def for_grid(cls, n: int, lmax: int = 4, q1max: int = 2, q2max: int = 1, order: int = -1):
        """Spec with the quarter-Nyquist map scale ``L = pi n / 4``."""
        return cls(lmax, q1max, q2max, order, np.pi * n / 4.0)

    @property
    def p(self) -> int:
        return (2 * self.lmax + 1) ** 2 * (2 * self.q1max + 1) * (self.q2max + 1)

    @functools.cached_property
    def indices(self) -> tuple[SymbolIndex, ...]:
        """All indices in lexicographic ``(lam1, lam2, q1, q2)`` order."""
        lr = range(-self.lmax, self.lmax + 1)
        qr = range(-self.q1max, self.q1max + 1)
        return tuple(
            SymbolIndex((l1, l2), q1, q2)
            for l1, l2, q1, q2 in itertools.product(lr, lr, qr, range(self.q2max + 1))
        )

    @functools.cached_property
    def position(self) -> dict:
        return {idx: j for j, idx in enumerate(self.indices)}

    @functools.cached_property
    def representatives(self) -> tuple[int, ...]:
        """Positions of self-conjugate indices and the first member of each pair."""
        pos = self.position
        return tuple(j for j, idx in enumerate(self.indices) if j <= pos[idx.partner()])

    @property
    def lambdas(self) -> list[tuple[int, int]]:
        lr = range(-self.lmax, self.lmax + 1)
        return list(itertools.product(lr, lr))

    @property
    def angular_radial(self) -> list[tuple[int, int]]:
        return list(itertools.product(range(-self.q1max, self.q1max + 1), range(self.q2max + 1)))


def rational_chebyshev(q: int, r, L: float):
    """``TL_q(r) = T_q((r - L)/(r + L))`` on ``[0, inf)``."""
    r = np.asarray(r, dtype=float)
    coef = np.zeros(q + 1)
    coef[q] = 1.0
    return chebyshev.chebval((r - L) / (r + L), coef)


def radial_power(r, order: int):
    r = np.asarray(r, dtype=float)
    if order == 1:
        return r
    if order == 0:
        return np.ones_like(r)
    return 1.0 / np.maximum(r, K_FLOOR)


def symbol_eval(i: SymbolIndex, spec: BasisSpec, x, k) -> complex:
    """Continuous symbol of ``B_i`` at position ``x = (x1, x2)`` and wavevector ``k``."""
    x1, x2 = x
    k1, k2 = k
    r = float(np.hypot(k1, k2))
    theta = float(np.arctan2(k2, k1))
    val = np.exp(2j * np.pi * (i.lam[0] * x1 + i.lam[1] * x2))
    val *= np.exp(1j * i.q1 * theta) * rational_chebyshev(i.q2, r, spec.L)
    return complex(val * radial_power(r, spec.order))


def _negate_index(a: np.ndarray) -> np.ndarray:
    """``a[-k mod n]`` over the last two axes."""
    return np.roll(np.flip(a, axis=(-2, -1)), 1, axis=(-2, -1))


@functools.lru_cache(maxsize=64)
def _multiplier_cached(q1: int, q2: int, order: int, L: float, n: int) -> np.ndarray:
    k = wavenumbers(n)
    kx, kz = k[None, :], k[:, None]
    r = np.hypot(kx, kz)
    radial = rational_chebyshev(q2, r, L) * radial_power(r, order)
    if q1 >= 0:
        m = np.exp(1j * q1 * np.arctan2(kz, kx)) * radial
    else:
        partner = np.exp(-1j * q1 * np.arctan2(kz, kx)) * radial
        m = (-1) ** q1 * np.conj(_negate_index(partner))
    m.setflags(write=False)
    return m


def multiplier(q1: int, q2: int, spec: BasisSpec, n: int) -> np.ndarray:
    """Discrete Fourier multiplier ``exp(i q1 theta) TL_q2(|k|) |k|^e`` (DFT order)."""
    return _multiplier_cached(int(q1), int(q2), spec.order, float(spec.L), int(n))


@functools.lru_cache(maxsize=256)
def _modulation(l1: int, l2: int, n: int) -> np.ndarray:
    x, z = coordinates(n)
    out = np.exp(2j * np.pi * (l1 * x + l2 * z))
    out.setflags(write=False)
    return out


def apply_elementary(i: SymbolIndex, spec: BasisSpec, f) -> np.ndarray:
    """``B_i f`` (complex), in ``O(n^2 log n)``."""
    f = as_array(f)
    n = f.shape[-1]
    out = np.fft.ifft2(multiplier(i.q1, i.q2, spec, n) * np.fft.fft2(f))
    return out * _modulation(i.lam[0], i.lam[1], n)


@dataclass
class FittedOperator:
    """``sum_i c_i B_i`` over ``spec.indices``."""

    spec: BasisSpec
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.shape != (self.spec.p,):
            raise ConfigError(
                f"coefficient vector has length {self.coeffs.size}, spec needs {self.spec.p}"
            )

    @classmethod
    def from_real_params(cls, spec: BasisSpec, params) -> "FittedOperator":
        """Expand real parameters (see :func:`real_columns`) into symmetric coefficients.

        The map is an isometry: ``||params|| == ||coeffs||``.
        """
        params = np.asarray(params, dtype=float)
        if params.shape != (spec.p,):
            raise ConfigError(f"expected {spec.p} real parameters, got {params.shape}")
        c = np.zeros(spec.p, dtype=np.complex128)
        j = 0
        for pos in spec.representatives:
            idx = spec.indices[pos]
            if idx.self_conjugate:
                c[pos] = params[j]
                j += 1
            else:
                c[pos] = (params[j] + 1j * params[j + 1]) / _SQRT2
                c[spec.position[idx.partner()]] = (-1) ** idx.q1 * np.conj(c[pos])
                j += 2
        return cls(spec, c)

    def real_params(self) -> np.ndarray:
        out = []
        for pos in self.spec.representatives:
            c = self.coeffs[pos]
            if self.spec.indices[pos].self_conjugate:
                out.append(c.real)
            else:
                out.extend([_SQRT2 * c.real, _SQRT2 * c.imag])
        return np.array(out)

    def symmetry_defect(self) -> float:
        """``max |c_{i'} - (-1)^q1 conj(c_i)|``; zero for real-output coefficients."""
        spec = self.spec
        worst = 0.0
        for pos, idx in enumerate(spec.indices):
            other = self.coeffs[spec.position[idx.partner()]]
            worst = max(worst, abs(other - (-1) ** idx.q1 * np.conj(self.coeffs[pos])))
        return worst

    def coefficient_grid(self) -> np.ndarray:
        """Coefficients shaped ``(n_lambda, n_q)`` matching ``spec.lambdas`` x ``spec.angular_radial``."""
        nq = (2 * self.spec.q1max + 1) * (self.spec.q2max + 1)
        return self.coeffs.reshape(-1, nq)


def apply_fitted(op: FittedOperator, f, return_complex: bool = False) -> np.ndarray:
    """``sum_i c_i B_i f`` with one forward and one inverse FFT.

    Terms sharing ``lam`` are summed in the Fourier domain first; the
    modulation by ``exp(2 pi i lam.x)`` with integer ``lam`` is then an exact
    circular shift of the spectrum, so all groups share a single inverse FFT.
    """
    f = as_array(f)
    n = f.shape[-1]
    spec = op.spec
    F = np.fft.fft2(f)
    mults = np.stack([multiplier(q1, q2, spec, n) for q1, q2 in spec.angular_radial])
    groups = np.tensordot(op.coefficient_grid(), mults * F, axes=(1, 0))
    total = np.zeros((n, n), dtype=np.complex128)
    for g, (l1, l2) in zip(groups, spec.lambdas):
        total += np.roll(g, (l2, l1), axis=(0, 1))
    out = np.fft.ifft2(total)
    return out if return_complex else out.real


def elementary_fields(spec: BasisSpec, x) -> np.ndarray:
    """``B_i x`` for every index, shape ``(p, n, n)`` complex."""
    x = as_array(x)
    n = x.shape[-1]
    X = np.fft.fft2(x)
    base = {qq: np.fft.ifft2(multiplier(*qq, spec, n) * X) for qq in spec.angular_radial}
    out = np.empty((spec.p, n, n), dtype=np.complex128)
    for j, idx in enumerate(spec.indices):
        out[j] = base[(idx.q1, idx.q2)] * _modulation(idx.lam[0], idx.lam[1], n)
    return out


def real_columns(spec: BasisSpec, x) -> np.ndarray:
    """Real design matrix ``(p, n*n)`` of ``x -> Re(sum c_i B_i x)`` in real parameters.

    Self-conjugate indices contribute one column ``B_i x`` (already real); each
    conjugate pair contributes ``sqrt(2) Re(B_i x)`` and ``-sqrt(2) Im(B_i x)``,
    whose parameters are ``sqrt(2)`` times the real and imaginary parts of ``c_i``.
    """
    x = as_array(x)
    n = x.shape[-1]
    X = np.fft.fft2(x)
    base = {}
    rows = []
    for pos in spec.representatives:
        idx = spec.indices[pos]
        key = (idx.q1, idx.q2)
        if key not in base:
            base[key] = np.fft.ifft2(multiplier(*key, spec, n) * X)
        z = base[key] * _modulation(idx.lam[0], idx.lam[1], n)
        if idx.self_conjugate:
            rows.append(z.real.ravel())
        else:
            rows.append(_SQRT2 * z.real.ravel())
            rows.append(-_SQRT2 * z.imag.ravel())
    return np.array(rows)


def write_operator(path, op: FittedOperator) -> None:
    spec = op.spec
    with open(path, "wb") as fh:
        fh.write(SYM_MAGIC)
        fh.write(
            f"{spec.lmax} {spec.q1max} {spec.q2max} {spec.order} {spec.L!r} {spec.p}\n".encode("ascii")
        )
        pairs = np.column_stack([op.coeffs.real, op.coeffs.imag]).astype("<f8")
        fh.write(pairs.tobytes())


def read_operator(path) -> FittedOperator:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(SYM_MAGIC):
        raise FormatError("not a PKSYM1 file")
    rest = raw[len(SYM_MAGIC):]
    end = rest.find(b"\n")
    try:
        lmax, q1max, q2max, order, L, p = rest[:end].decode("ascii").split()
        spec = BasisSpec(int(lmax), int(q1max), int(q2max), int(order), float(L))
        p = int(p)
    except ValueError as exc:
        raise FormatError("malformed PKSYM1 header") from exc
    if spec.p != p:
        raise FormatError(f"header p={p} inconsistent with truncation (p={spec.p})")
    payload = rest[end + 1:]
    if len(payload) != 16 * p:
        raise FormatError("PKSYM1 payload length does not match p")
    pairs = np.frombuffer(payload, dtype="<f8").reshape(p, 2)
    return FittedOperator(spec, pairs[:, 0] + 1j * pairs[:, 1])
