"""Bundled model assets: a Marmousi-like velocity surrogate and reflectivities.

The files under ``probekit/data`` are produced by :func:`generate` (run
``python -m probekit.assets``) from a fixed seed, so they can be rebuilt
bit-for-bit. The surrogate mimics the features that matter here: velocity
increasing with depth, a water layer, folded layers cut by dipping faults.
Speeds are normalized to unit mean so that ``gamma = 0`` blends recover the
default constant medium ``c = 1``.
"""
from __future__ import annotations

import os
from importlib import resources

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .grid import ModelGrid, as_array, parse_grid, write_grid

ASSET_N = 128
SEED = 20100607
SMOOTH_NAME = "marmousi_smooth.pkgrid"
REFLECTIVITY_NAME = "marmousi_reflectivity.pkgrid"


def _true_velocity(n: int, rng) -> np.ndarray:
    x = (np.arange(n) + 0.5) / n
    X, Z = np.meshgrid(x, x)
    # folded layer coordinate with two dipping normal faults
    fold = 0.06 * np.sin(2 * np.pi * (0.8 * X + 0.1)) + 0.03 * np.sin(2 * np.pi * 2.3 * X)
    depth = Z - 0.25 * X * Z + fold * Z
    for x_fault, dip, throw in ((0.35, 0.55, 0.05), (0.68, -0.45, -0.04)):
        side = (X - x_fault - dip * (Z - 0.5)) > 0
        depth = depth + throw * side * (Z > 0.12)
    nlayers = 24
    edges = np.sort(rng.uniform(0.1, 1.1, nlayers))
    layer = np.searchsorted(edges, np.clip(depth, 0.0, 1.0))
    jitter = rng.uniform(-0.35, 0.35, nlayers + 1)
    v = 1.5 + 2.6 * np.clip(depth, 0, 1) ** 0.8 + jitter[layer]
    v[Z < 0.08] = 1.5  # water
    return v


def generate(n: int = ASSET_N, seed: int = SEED) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(smooth_speed, reflectivity)`` on an ``n x n`` grid."""
    rng = np.random.default_rng(seed)
    v = _true_velocity(n, rng)
    smooth = ndimage.gaussian_filter(v, sigma=0.04 * n, mode="nearest")
    smooth = smooth / smooth.mean()
    vt = v / v.mean()
    m_true = 1.0 / vt**2
    m_smooth = ndimage.gaussian_filter(m_true, sigma=0.04 * n, mode="nearest")
    refl = ndimage.gaussian_filter(m_true - m_smooth, sigma=0.6, mode="nearest")
    refl = refl / np.sqrt(np.mean(refl**2))
    return smooth, refl


def write_assets(directory: str) -> None:
    smooth, refl = generate()
    os.makedirs(directory, exist_ok=True)
    write_grid(os.path.join(directory, SMOOTH_NAME), smooth)
    write_grid(os.path.join(directory, REFLECTIVITY_NAME), refl)


def _load(name: str) -> np.ndarray:
    raw = resources.files("probekit").joinpath("data", name).read_bytes()
    return parse_grid(raw).data


def resample(field, n: int) -> np.ndarray:
    """Cell-average (downsampling by an integer factor) or cubic zoom otherwise."""
    a = np.asarray(as_array(field), dtype=float)
    m = a.shape[0]
    if n == m:
        return a.copy()
    if m % n == 0:
        f = m // n
        return a.reshape(n, f, n, f).mean(axis=(1, 3))
    return ndimage.zoom(a, n / m, order=3, mode="nearest", grid_mode=True)


def marmousi_smooth(n: int) -> np.ndarray:
    """Smooth background speed ``M`` (unit mean) on an ``n x n`` grid."""
    out = resample(_load(SMOOTH_NAME), n)
    return out / out.mean()


def marmousi_reflectivity(n: int) -> np.ndarray:
    """Band-limited reflectivity (squared-slowness perturbation, unit RMS)."""
    out = resample(_load(REFLECTIVITY_NAME), n)
    return out / np.sqrt(np.mean(out**2))


def layered_reflectivity(n: int, depths=(0.3, 0.5, 0.7), dip: float = 0.1) -> np.ndarray:
    """Fallback reflectivity: a few smooth dipping reflectors, unit RMS."""
    s = np.arange(n) / n
    X, Z = np.meshgrid(s, s)
    out = np.zeros((n, n))
    width = 1.5 / n
    for k, d in enumerate(depths):
        zc = d + dip * (X - 0.5) * (-1) ** k
        out += (-1) ** k * np.exp(-0.5 * ((Z - zc) / width) ** 2) * (1 - 2 * ((Z - zc) / width) ** 2)
    return out / np.sqrt(np.mean(out**2))


def disk_filter(field, radius: float) -> np.ndarray:
    """Keep wavenumbers with ``|k| <= radius`` cycles per unit length.

    The filter acts on the even (mirror) extension of the field, so the
    non-periodic top/bottom contrast does not ring back into the domain. The
    mean is preserved exactly because the DC coefficient is always kept.
    """
    a = np.asarray(as_array(field), dtype=float)
    n = a.shape[0]
    ext = np.block([[a, a[:, ::-1]], [a[::-1, :], a[::-1, ::-1]]])
    c = np.fft.fftfreq(2 * n, 1.0 / (2 * n)) / 2.0  # cycles per unit length
    disk = np.hypot(c[None, :], c[:, None]) <= radius
    return np.fft.ifft2(np.fft.fft2(ext) * disk).real[:n, :n]


def blend_speed(gamma: float, n: int, base=None) -> np.ndarray:
    """``(1 - gamma/0.4) mean(M) + (gamma/0.4) M_gamma`` with ``M_gamma`` disk-filtered at ``gamma n``."""
    if not 0.0 <= gamma <= 0.4:
        raise ConfigError(f"gamma must lie in [0, 0.4], got {gamma}")
    M = marmousi_smooth(n) if base is None else np.asarray(as_array(base), dtype=float)
    w = gamma / 0.4
    mean = float(M.mean())
    if w == 0.0:
        return np.full_like(M, mean)
    return (1.0 - w) * mean + w * disk_filter(M, gamma * n)


def as_model(a) -> ModelGrid:
    return ModelGrid(a)


if __name__ == "__main__":
    write_assets(os.path.join(os.path.dirname(__file__), "data"))
