"""Kinematic ray tracing and the curvelet illumination mask.

Rays follow the Hamiltonian ``H(x, p) = c(x) |p|``::

    dx/dt = c p / |p|,     dp/dt = -|p| grad c

integrated with fixed-step RK4 (step ``0.25 h / c_max`` in time). An atom with
center ``(x_mu, k_mu)`` is visible when some pair of take-off directions,
mirror images about ``k_mu`` at half-angle ``alpha``, sends one ray within
``tol`` of a source and the other within ``tol`` of a receiver.

With a :class:`SourceBand` the pair must also be in band: the reflection at
half-angle ``alpha`` probes the temporal frequency ``c |k| / (4 pi cos alpha)``
(cycles), and the Hessian symbol there must reach a fraction of its peak.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .errors import ConfigError, FormatError, NumericalError
from .grid import cache_dir as default_cache_dir
from .grid import content_hash

log = logging.getLogger(__name__)

MASK_MAGIC = b"PKMASK1\n"
N_ALPHA = 180
CHUNK_RAYS = 1 << 18


# ---------------------------------------------------------------------------
# speed models


class ConstantSpeed:
    constant = True

    def __init__(self, c: float):
        if not c > 0:
            raise ConfigError("speed must be positive")
        self.c = float(c)
        self.c_min = self.c_max = self.c

    def evaluate(self, x, z):
        c = np.full(np.shape(x), self.c)
        zero = np.zeros(np.shape(x))
        return c, zero, zero

    def key(self) -> str:
        return f"const:{self.c!r}"


class LinearSpeed:
    """``c(z) = a + b z`` (depth gradient)."""

    constant = False

    def __init__(self, a: float, b: float):
        if not (a > 0 and a + b > 0):
            raise ConfigError("speed must stay positive on [0, 1]")
        self.a, self.b = float(a), float(b)
        self.c_min, self.c_max = min(a, a + b), max(a, a + b)

    def evaluate(self, x, z):
        z = np.asarray(z, dtype=float)
        return self.a + self.b * z, np.zeros(z.shape), np.full(z.shape, self.b)

    def key(self) -> str:
        return f"linear:{self.a!r}:{self.b!r}"


_PAD = 4


class GridSpeed:
    """Cubic B-spline interpolant of nodal speeds, with exact derivatives.

    Nodes sit at ``(ix h, iz h)``; the grid is edge-padded before prefiltering
    so the interpolant is defined on all of ``[0, 1]^2``.
    """

    constant = False

    def __init__(self, speed: np.ndarray):
        speed = np.asarray(speed, dtype=float)
        if speed.ndim != 2 or speed.shape[0] != speed.shape[1] or np.any(speed <= 0):
            raise ConfigError("grid speed must be a positive square array")
        self.n = speed.shape[0]
        self.h = 1.0 / self.n
        self.values = speed
        padded = np.pad(speed, _PAD, mode="edge")
        self.coef = ndimage.spline_filter(padded, order=3, mode="mirror")
        self.c_min, self.c_max = float(speed.min()), float(speed.max())
        self._key = content_hash(speed, extra="gridspeed")

    def evaluate(self, x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        ux = np.clip(x / self.h + _PAD, 1.0, self.coef.shape[1] - 3.0)
        uz = np.clip(z / self.h + _PAD, 1.0, self.coef.shape[0] - 3.0)
        ix, iz = np.floor(ux).astype(int), np.floor(uz).astype(int)
        wx, dwx = _bspline_weights(ux - ix)
        wz, dwz = _bspline_weights(uz - iz)
        c = np.zeros(x.shape)
        cx = np.zeros(x.shape)
        cz = np.zeros(x.shape)
        for a in range(4):
            for b in range(4):
                v = self.coef[iz + (a - 1), ix + (b - 1)]
                c += wz[a] * wx[b] * v
                cx += wz[a] * dwx[b] * v
                cz += dwz[a] * wx[b] * v
        return c, cx / self.h, cz / self.h

    def key(self) -> str:
        return self._key


def _bspline_weights(t):
    t2, t3 = t * t, t * t * t
    s = 1.0 - t
    w = (s**3 / 6.0, (3 * t3 - 6 * t2 + 4) / 6.0, (-3 * t3 + 3 * t2 + 3 * t + 1) / 6.0, t3 / 6.0)
    dw = (-0.5 * s * s, 1.5 * t2 - 2 * t, -1.5 * t2 + t + 0.5, 0.5 * t2)
    return w, dw


def speed_model(medium) -> ConstantSpeed | GridSpeed:
    """Ray-tracing speed for a wavesim Medium (exact constant when uniform)."""
    c = medium.speed
    if np.all(c == c.flat[0]):
        return ConstantSpeed(float(c.flat[0]))
    return GridSpeed(c)


# ---------------------------------------------------------------------------
# ray tracing


@dataclass
class RayPath:
    points: np.ndarray  # (K, 2) positions (x, z)
    slowness: np.ndarray  # (K, 2)
    times: np.ndarray  # (K,)
    exited: bool

    def hamiltonian_drift(self, speed) -> float:
        c, _, _ = speed.evaluate(self.points[:, 0], self.points[:, 1])
        return float(np.max(np.abs(c * np.hypot(self.slowness[:, 0], self.slowness[:, 1]) - 1.0)))


def _rhs(speed, x, p):
    c, cx, cz = speed.evaluate(x[:, 0], x[:, 1])
    pn = np.hypot(p[:, 0], p[:, 1])
    xdot = (c / pn)[:, None] * p
    pdot = -pn[:, None] * np.column_stack([cx, cz])
    return xdot, pdot


def rk4_step(speed, x, p, dt):
    k1x, k1p = _rhs(speed, x, p)
    k2x, k2p = _rhs(speed, x + 0.5 * dt * k1x, p + 0.5 * dt * k1p)
    k3x, k3p = _rhs(speed, x + 0.5 * dt * k2x, p + 0.5 * dt * k2p)
    k4x, k4p = _rhs(speed, x + dt * k3x, p + dt * k3p)
    x_new = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    p_new = p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return x_new, p_new


def ray_step(speed, h: float) -> float:
    return 0.25 * h / speed.c_max


def default_t_max(speed) -> float:
    return 3.0 * math.sqrt(2.0) / speed.c_min


def _inside(x):
    return (x[:, 0] >= 0.0) & (x[:, 0] <= 1.0) & (x[:, 1] >= 0.0) & (x[:, 1] <= 1.0)


def trace_ray(speed, x0, direction, t_max: float | None = None, h: float = 1.0 / 64) -> RayPath:
    """Trace one ray from ``x0`` with unit take-off ``direction``; stops on exit or ``t_max``."""
    x = np.asarray(x0, dtype=float).reshape(1, 2)
    d = np.asarray(direction, dtype=float).reshape(1, 2)
    d = d / np.linalg.norm(d)
    if not _inside(x)[0]:
        raise ConfigError("ray must start inside the unit square")
    c0, _, _ = speed.evaluate(x[:, 0], x[:, 1])
    p = d / c0[:, None]
    dt = ray_step(speed, h)
    if not dt > 1e-14:
        raise NumericalError("ray step underflow")
    t_max = default_t_max(speed) if t_max is None else t_max
    pts, ps, ts = [x[0].copy()], [p[0].copy()], [0.0]
    t, exited = 0.0, False
    while t < t_max - 1e-15:
        step = min(dt, t_max - t)
        x, p = rk4_step(speed, x, p, step)
        t += step
        if not _inside(x)[0]:
            exited = True
            break
        pts.append(x[0].copy())
        ps.append(p[0].copy())
        ts.append(t)
    return RayPath(np.array(pts), np.array(ps), np.array(ts), exited)


# ---------------------------------------------------------------------------
# visibility


@dataclass
class Geometry:
    """Source and receiver positions ``(x, z)`` used by the visibility test."""

    sources: np.ndarray
    receivers: np.ndarray

    def __post_init__(self):
        self.sources = np.atleast_2d(np.asarray(self.sources, dtype=float))
        self.receivers = np.atleast_2d(np.asarray(self.receivers, dtype=float))

    @classmethod
    def of(cls, acq) -> "Geometry":
        if isinstance(acq, Geometry):
            return acq
        return cls(acq.sources, acq.receivers)

    @classmethod
    def full_aperture(cls, n: int) -> "Geometry":
        """Sources and receivers on every boundary node of all four sides."""
        s = np.arange(n + 1) / n
        ring = np.vstack([
            np.column_stack([s, np.zeros_like(s)]),
            np.column_stack([s, np.ones_like(s)]),
            np.column_stack([np.zeros_like(s), s]),
            np.column_stack([np.ones_like(s), s]),
        ])
        return cls(ring, ring)

    def key(self) -> str:
        return content_hash(self.sources, self.receivers, extra="geometry")


class _ProximityMap:
    """Boolean raster of points within ``tol`` of a point set, at spacing ``res``."""

    def __init__(self, points, tol, res):
        self.res = res
        m = int(math.ceil(1.0 / res)) + 1
        g = np.arange(m) * res
        gx, gz = np.meshgrid(g, g)
        near = np.zeros((m, m), dtype=bool)
        for px, pz in points:
            near |= (gx - px) ** 2 + (gz - pz) ** 2 <= tol * tol
        self.near = near
        self.m = m

    def lookup(self, x):
        ix = np.clip(np.floor(x[:, 0] / self.res + 0.5).astype(int), 0, self.m - 1)
        iz = np.clip(np.floor(x[:, 1] / self.res + 0.5).astype(int), 0, self.m - 1)
        return self.near[iz, ix]


@numba.njit(cache=True, inline="always")
def _spline_eval(coef, inv_h, pad, x, z):
    ux = min(max(x * inv_h + pad, 1.0), coef.shape[1] - 3.0)
    uz = min(max(z * inv_h + pad, 1.0), coef.shape[0] - 3.0)
    ix = int(math.floor(ux))
    iz = int(math.floor(uz))
    t = ux - ix
    s = 1.0 - t
    wx0, wx1 = s * s * s / 6.0, (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0
    wx2, wx3 = (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0, t * t * t / 6.0
    dx0, dx1, dx2, dx3 = -0.5 * s * s, 1.5 * t * t - 2.0 * t, -1.5 * t * t + t + 0.5, 0.5 * t * t
    t = uz - iz
    s = 1.0 - t
    wz0, wz1 = s * s * s / 6.0, (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0
    wz2, wz3 = (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0, t * t * t / 6.0
    dz0, dz1, dz2, dz3 = -0.5 * s * s, 1.5 * t * t - 2.0 * t, -1.5 * t * t + t + 0.5, 0.5 * t * t
    c = 0.0
    cx = 0.0
    cz = 0.0
    for a in range(4):
        row = iz + a - 1
        wa = wz0 if a == 0 else wz1 if a == 1 else wz2 if a == 2 else wz3
        da = dz0 if a == 0 else dz1 if a == 1 else dz2 if a == 2 else dz3
        v0 = coef[row, ix - 1]
        v1 = coef[row, ix]
        v2 = coef[row, ix + 1]
        v3 = coef[row, ix + 2]
        sw = wx0 * v0 + wx1 * v1 + wx2 * v2 + wx3 * v3
        sd = dx0 * v0 + dx1 * v1 + dx2 * v2 + dx3 * v3
        c += wa * sw
        cx += wa * sd
        cz += da * sw
    return c, cx * inv_h, cz * inv_h


@numba.njit(cache=True, inline="always")
def _rhs_scalar(coef, inv_h, pad, x, z, px, pz):
    c, cx, cz = _spline_eval(coef, inv_h, pad, x, z)
    pn = math.sqrt(px * px + pz * pz)
    return c * px / pn, c * pz / pn, -pn * cx, -pn * cz


@numba.njit(cache=True, inline="always")
def _lookup(near, inv_res, x, z):
    m = near.shape[0]
    ix = min(max(int(math.floor(x * inv_res + 0.5)), 0), m - 1)
    iz = min(max(int(math.floor(z * inv_res + 0.5)), 0), m - 1)
    return near[iz, ix]


@numba.njit(cache=True)
def _hits_kernel(starts, dirs, coef, inv_h, pad, c_const, dt, nsteps,
                 src_near, rcv_near, inv_res, out_s, out_r):
    for r in range(starts.shape[0]):
        x = starts[r, 0]
        z = starts[r, 1]
        hs = _lookup(src_near, inv_res, x, z)
        hr = _lookup(rcv_near, inv_res, x, z)
        if c_const > 0.0:
            c0 = c_const
        else:
            c0, _, _ = _spline_eval(coef, inv_h, pad, x, z)
        px = dirs[r, 0] / c0
        pz = dirs[r, 1] / c0
        for _ in range(nsteps):
            if hs and hr:
                break
            if c_const > 0.0:
                x += c_const * dt * dirs[r, 0]
                z += c_const * dt * dirs[r, 1]
            else:
                a1, b1, c1, d1 = _rhs_scalar(coef, inv_h, pad, x, z, px, pz)
                a2, b2, c2, d2 = _rhs_scalar(coef, inv_h, pad, x + 0.5 * dt * a1, z + 0.5 * dt * b1,
                                             px + 0.5 * dt * c1, pz + 0.5 * dt * d1)
                a3, b3, c3, d3 = _rhs_scalar(coef, inv_h, pad, x + 0.5 * dt * a2, z + 0.5 * dt * b2,
                                             px + 0.5 * dt * c2, pz + 0.5 * dt * d2)
                a4, b4, c4, d4 = _rhs_scalar(coef, inv_h, pad, x + dt * a3, z + dt * b3,
                                             px + dt * c3, pz + dt * d3)
                x += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
                z += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                px += dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
                pz += dt / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
            if x < 0.0 or x > 1.0 or z < 0.0 or z > 1.0:
                break
            hs = hs or _lookup(src_near, inv_res, x, z)
            hr = hr or _lookup(rcv_near, inv_res, x, z)
        out_s[r] = hs
        out_r[r] = hr


def _trace_hits(speed, starts, dirs, geometry, h, tol, t_max=None):
    """For every (start, direction) ray: did it pass near a source / a receiver?

    Positions are sampled after every RK4 step and tested against rasterized
    proximity maps (spacing ``h/4``). Tracing of a ray stops once it has left
    the unit square or already met both a source and a receiver.
    """
    res = h / 4.0
    src_map = _ProximityMap(geometry.sources, tol, res)
    rcv_map = _ProximityMap(geometry.receivers, tol, res)
    t_max = default_t_max(speed) if t_max is None else t_max
    dt = ray_step(speed, h)
    nsteps = int(math.ceil(t_max / dt))
    starts = np.ascontiguousarray(starts, dtype=float)
    dirs = np.ascontiguousarray(dirs, dtype=float)
    if isinstance(speed, ConstantSpeed):
        coef, inv_h, c_const = np.zeros((1, 1)), 1.0, speed.c
    elif isinstance(speed, GridSpeed):
        coef, inv_h, c_const = speed.coef, 1.0 / speed.h, 0.0
    else:
        return _trace_hits_numpy(speed, starts, dirs, src_map, rcv_map, dt, nsteps)
    out_s = np.zeros(len(starts), dtype=np.bool_)
    out_r = np.zeros(len(starts), dtype=np.bool_)
    _hits_kernel(starts, dirs, coef, inv_h, float(_PAD), c_const, dt, nsteps,
                 src_map.near, rcv_map.near, 1.0 / res, out_s, out_r)
    return out_s, out_r


def _trace_hits_numpy(speed, starts, dirs, src_map, rcv_map, dt, nsteps):
    x = starts.copy()
    c0, _, _ = speed.evaluate(x[:, 0], x[:, 1])
    p = dirs / c0[:, None]
    hit_s = src_map.lookup(x)
    hit_r = rcv_map.lookup(x)
    alive = np.flatnonzero(_inside(x) & ~(hit_s & hit_r))
    for _ in range(nsteps):
        if alive.size == 0:
            break
        xa, pa = rk4_step(speed, x[alive], p[alive], dt)
        ok = _inside(xa)
        alive, xa, pa = alive[ok], xa[ok], pa[ok]
        x[alive], p[alive] = xa, pa
        hit_s[alive] |= src_map.lookup(xa)
        hit_r[alive] |= rcv_map.lookup(xa)
        alive = alive[~(hit_s[alive] & hit_r[alive])]
    return hit_s, hit_r


def alpha_grid(count: int = N_ALPHA) -> np.ndarray:
    """Half-angles ``(k + 1/2) * 90/count`` degrees, in radians."""
    return np.deg2rad((np.arange(count) + 0.5) * 90.0 / count)


@dataclass(frozen=True)
class SourceBand:
    """Frequency support of the Hessian symbol for a Ricker source of peak ``f0``.

    In 2D the Born Hessian scales like ``w^3 |wavelet(w)|^2`` along a
    specular pair (two time derivatives of the incident field, and
    ``w^-1/2`` geometric spreading per leg). Frequencies where this falls
    below ``rel`` times its maximum are treated as unilluminated.
    """

    f0: float
    rel: float = 0.1

    def weight(self, f):
        u = np.asarray(f, dtype=float) / self.f0
        peak = 1.75  # u^2 at the maximum of u^7 exp(-2 u^2)
        return (u * u / peak) ** 3.5 * np.exp(2.0 * (peak - u * u))

    def admits(self, c, knorm, alphas) -> np.ndarray:
        """Boolean ``(len(c), len(alphas))``: pair at half-angle ``alpha`` is in band."""
        c = np.atleast_1d(np.asarray(c, dtype=float))
        knorm = np.atleast_1d(np.asarray(knorm, dtype=float))
        f = (c * knorm)[:, None] / (4.0 * np.pi * np.cos(alphas)[None, :])
        return self.weight(f) >= self.rel

    def key(self) -> str:
        return f"band:{self.f0!r}:{self.rel!r}"

    @classmethod
    def of(cls, acq, rel: float = 0.1) -> "SourceBand":
        return cls(float(acq.f0), rel)


def _pairs_visible(hs, hr, count, admitted=None):
    """Visibility from hit tables over directions ``theta +/- alpha_k``.

    ``hs``/``hr`` have shape ``(..., 2, count)``: index 0 for ``+alpha``, 1 for
    ``-alpha``. ``admitted`` (shape ``(..., count)``) restricts the half-angles.
    """
    plus_s, minus_s = hs[..., 0, :], hs[..., 1, :]
    plus_r, minus_r = hr[..., 0, :], hr[..., 1, :]
    pair = (plus_s & minus_r) | (minus_s & plus_r)
    if admitted is not None:
        pair = pair & admitted
    return np.any(pair, axis=-1)


def visible(plan, mu, speed, acq, tol: float | None = None, n_alpha: int = N_ALPHA,
            band: SourceBand | None = None) -> bool:
    """Specular visibility of one atom.

    Coarse atoms (``k_mu = 0``) are visible without a band and invisible with one.
    """
    i = mu if isinstance(mu, (int, np.integer)) else plan.flat_index(mu)
    xs, ks = plan.centers
    knorm = float(np.hypot(*ks[i]))
    if knorm == 0.0:
        return band is None
    geometry = Geometry.of(acq)
    h = 1.0 / plan.n
    tol = 2.0 * h if tol is None else tol
    theta = math.atan2(ks[i, 1], ks[i, 0])
    alphas = alpha_grid(n_alpha)
    angles = []
    for normal in (theta, theta + math.pi):
        for sign in (1.0, -1.0):
            angles.append(normal + sign * alphas)
    angles = np.concatenate(angles)
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    starts = np.broadcast_to(xs[i], dirs.shape)
    hs, hr = _trace_hits(speed, starts, dirs, geometry, h, tol)
    hs = hs.reshape(2, 2, n_alpha)
    hr = hr.reshape(2, 2, n_alpha)
    admitted = None
    if band is not None:
        c = speed.evaluate(np.array([xs[i, 0]]), np.array([xs[i, 1]]))[0]
        admitted = band.admits(c, [knorm], alphas)[0]
    return bool(np.any(_pairs_visible(hs, hr, n_alpha, admitted)))


@dataclass
class IlluminationMask:
    plan_descriptor: str
    bits: np.ndarray  # bool, one per atom

    @property
    def fraction(self) -> float:
        return float(np.mean(self.bits))

    def hamming(self, other: "IlluminationMask") -> int:
        if other.bits.shape != self.bits.shape:
            raise ConfigError("masks belong to different plans")
        return int(np.sum(self.bits != other.bits))


def _fan_size(plan, n_alpha):
    return math.lcm(8 * n_alpha, *[a for a in plan.angles if a > 1])


def build_mask(plan, speed, acq, tol: float | None = None, n_alpha: int = N_ALPHA,
               cache: str | bool | None = None, band: SourceBand | None = None) -> IlluminationMask:
    """Visibility of every atom.

    Without a band this is pure ray geometry and coarse-scale atoms are always
    included; with a band, pairs must also fall in the source's frequency
    support and coarse atoms (no direction) are excluded.

    Rays are traced once per distinct atom position over a fan of directions
    fine enough to contain every ``theta_l +/- alpha_k`` exactly. With
    ``cache`` (a directory, or ``None`` for ``$PROBEKIT_CACHE``) the mask is
    stored as a PKMASK1 file keyed by plan, medium and acquisition.
    """
    geometry = Geometry.of(acq)
    h = 1.0 / plan.n
    tol = 2.0 * h if tol is None else tol
    directory = default_cache_dir() if cache is None else (cache or None)
    band_key = band.key() if band is not None else "geometric"
    key = content_hash(extra=f"{plan.descriptor()}|{speed.key()}|{geometry.key()}|{tol!r}|{n_alpha}|{band_key}")
    path = os.path.join(directory, f"mask-{key}.pkmask") if directory else None
    if path and os.path.exists(path):
        try:
            mask = read_mask(path)
            if mask.plan_descriptor == plan.descriptor() and mask.bits.size == plan.size:
                return mask
        except (FormatError, OSError):
            pass
        log.warning("mask cache %s unreadable, recomputing", path)

    bits = _compute_mask(plan, speed, geometry, h, tol, n_alpha, band)
    mask = IlluminationMask(plan.descriptor(), bits)
    if path:
        os.makedirs(directory, exist_ok=True)
        tmp = path + ".tmp"
        write_mask(tmp, mask)
        os.replace(tmp, path)
    return mask


def _compute_mask(plan, speed, geometry, h, tol, n_alpha, band=None):
    xs, ks = plan.centers
    bits = np.full(plan.size, band is None)
    directional = np.flatnonzero(plan.scale > 0)
    fan = _fan_size(plan, n_alpha)
    phi = 2.0 * np.pi * np.arange(fan) / fan
    fan_dirs = np.column_stack([np.cos(phi), np.sin(phi)])

    pos_keys = np.round(xs[directional] * (1 << 20)).astype(np.int64)
    uniq, inverse = np.unique(pos_keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    positions = uniq / float(1 << 20)
    # direction offsets in fan units
    alpha_steps = (2 * np.arange(n_alpha) + 1) * fan // (8 * n_alpha)
    per_chunk = max(1, CHUNK_RAYS // fan)
    for start in range(0, len(positions), per_chunk):
        block = positions[start:start + per_chunk]
        starts = np.repeat(block, fan, axis=0)
        dirs = np.tile(fan_dirs, (len(block), 1))
        hs, hr = _trace_hits(speed, starts, dirs, geometry, h, tol)
        hs = hs.reshape(len(block), fan)
        hr = hr.reshape(len(block), fan)
        sel = np.flatnonzero((inverse >= start) & (inverse < start + len(block)))
        atoms = directional[sel]
        local = inverse[sel] - start
        theta_idx = np.rint(np.arctan2(ks[atoms, 1], ks[atoms, 0]) / (2 * np.pi) * fan).astype(int)
        vis = np.zeros(len(atoms), dtype=bool)
        admitted = None
        if band is not None:
            c = speed.evaluate(xs[atoms, 0], xs[atoms, 1])[0]
            admitted = band.admits(c, np.hypot(ks[atoms, 0], ks[atoms, 1]), alpha_grid(n_alpha))
        for flip in (0, fan // 2):
            center = (theta_idx + flip)[:, None]
            plus = (center + alpha_steps[None, :]) % fan
            minus = (center - alpha_steps[None, :]) % fan
            row = local[:, None]
            s = np.stack([hs[row, plus], hs[row, minus]], axis=1)
            r = np.stack([hr[row, plus], hr[row, minus]], axis=1)
            vis |= _pairs_visible(s, r, n_alpha, admitted)
        bits[atoms] = vis
    return bits


def write_mask(path, mask: IlluminationMask) -> None:
    with open(path, "wb") as fh:
        fh.write(MASK_MAGIC)
        fh.write(f"{mask.plan_descriptor} size={mask.bits.size}\n".encode("ascii"))
        fh.write(np.packbits(mask.bits.astype(np.uint8)).tobytes())


def read_mask(path) -> IlluminationMask:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MASK_MAGIC):
        raise FormatError("not a PKMASK1 file")
    rest = raw[len(MASK_MAGIC):]
    end = rest.find(b"\n")
    if end < 0:
        raise FormatError("malformed PKMASK1 header")
    header = rest[:end].decode("ascii", errors="replace")
    descriptor, _, size = header.rpartition(" size=")
    try:
        size = int(size)
    except ValueError as exc:
        raise FormatError(f"malformed PKMASK1 header {header!r}") from exc
    payload = np.frombuffer(rest[end + 1:], dtype=np.uint8)
    if payload.size != (size + 7) // 8:
        raise FormatError("PKMASK1 payload length does not match size")
    bits = np.unpackbits(payload)[:size].astype(bool)
    return IlluminationMask(descriptor, bits)
