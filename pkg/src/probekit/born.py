"""Born modeling, reverse-time migration and the Gauss-Newton Hessian.

``F`` maps a perturbation ``dm`` to data by solving the wave equation with
forcing ``-dm * (u0)_tt`` and sampling at the receivers; ``F^T`` is its exact
discrete transpose (time-reversed adjoint recursion, correlated with
``-(u0)_tt``), so ``H = F^T F`` is symmetric positive semidefinite up to
roundoff. Inner products are plain sums over grid nodes and samples.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy.linalg import blas

from .errors import ConfigError
from .wavesim import Acquisition, Medium, ShotData, WaveSolver, point_source_injector

log = logging.getLogger(__name__)

DENSE_MAX_N = 48


@dataclass
class LinearizedProblem:
    """Background medium plus acquisition, with cached incident fields.

    ``cache_dir`` (or ``$PROBEKIT_CACHE``) enables an on-disk cache of the
    second time derivative of the incident field, one ``.npy`` per source.
    """

    medium: Medium
    acq: Acquisition
    cache_dir: str | None = None
    _d2u0: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.acq.n != self.medium.n:
            raise ConfigError("acquisition and medium grid sizes differ")
        if self.cache_dir is None:
            self.cache_dir = os.environ.get("PROBEKIT_CACHE") or None
        self.solver = WaveSolver(self.medium, self.acq.dt)

    @property
    def n(self) -> int:
        return self.medium.n

    @property
    def nt(self) -> int:
        return self.acq.nt

    def key(self) -> str:
        return f"{self.medium.key()}-{self.acq.key()}"

    @property
    def d2u0(self) -> np.ndarray:
        """``(u0)_tt`` on the physical grid, shape ``(nt, ns, n, n)``."""
        if self._d2u0 is None:
            self._d2u0 = self._load_or_compute()
        return self._d2u0

    def _cache_paths(self):
        return [
            os.path.join(self.cache_dir, f"u0tt-{self.key()}-s{i}.npy")
            for i in range(self.acq.ns)
        ]

    def _load_or_compute(self) -> np.ndarray:
        if self.cache_dir:
            paths = self._cache_paths()
            if all(os.path.exists(p) for p in paths):
                try:
                    parts = [np.load(p) for p in paths]
                    if all(p.shape == (self.nt, self.n, self.n) for p in parts):
                        return np.stack(parts, axis=1)
                except (OSError, ValueError):
                    log.warning("incident-field cache unreadable, recomputing")
        d2 = incident_second_derivative(self.solver, self.acq)
        if self.cache_dir:
            os.makedirs(self.cache_dir, exist_ok=True)
            for i, p in enumerate(self._cache_paths()):
                tmp = p + ".tmp.npy"
                np.save(tmp, d2[:, i])
                os.replace(tmp, p)
        return d2


def incident_second_derivative(solver: WaveSolver, acq: Acquisition) -> np.ndarray:
    """``(u0[k+1] - 2 u0[k] + u0[k-1]) / dt^2`` for ``k = 0 .. nt-1``, all sources."""
    nt, ns, n = acq.nt, acq.ns, acq.n
    zi, xi = solver.inner
    out = np.empty((nt, ns, n, n))
    prev = np.zeros((ns, n, n))
    cur = np.zeros((ns, n, n))
    inv_dt2 = 1.0 / acq.dt**2
    inject, scale = point_source_injector(solver, acq)

    def observe(k, u):
        nonlocal prev, cur
        nxt = u[:, zi, xi].copy()
        if k >= 1:
            out[k - 1] = (nxt - 2.0 * cur + prev) * inv_dt2
            prev, cur = cur, nxt
        else:
            cur = nxt

    # one extra level so the stencil is defined at k = nt-1
    solver.propagate(nt + 1, inject, observe, batch=(ns,), source_scale=scale)
    return out


def _batched(v):
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 2
    return (v[None] if single else v), single


def born_forward(prob: LinearizedProblem, dm) -> ShotData:
    """Linearized data ``F dm``; a leading batch axis on ``dm`` gives a list of ShotData."""
    values = born_forward_values(prob, dm)
    if values.ndim == 3:
        return ShotData(values, prob.acq.dt)
    return [ShotData(v, prob.acq.dt) for v in values]


def born_forward_values(prob: LinearizedProblem, dm) -> np.ndarray:
    dm, single = _batched(dm)
    n = prob.n
    if dm.shape[1:] != (n, n):
        raise ConfigError(f"perturbation must be {n}x{n}")
    solver, acq, d2 = prob.solver, prob.acq, prob.d2u0
    nb, ns = dm.shape[0], acq.ns
    zi, xi = solver.inner
    iz, ix = solver.pad_index(acq.receiver_nodes)
    out = np.zeros((nb, acq.nr, ns, acq.nt))
    neg_dm = -dm[:, None]

    def inject(k, rhs):
        rhs[:, :, zi, xi] += neg_dm * d2[k]

    def observe(k, u):
        out[:, :, :, k] = u[:, :, iz, ix].transpose(0, 2, 1)

    scale = float(np.max(np.abs(dm)) * np.max(np.abs(d2)) * np.max(solver.c)) if dm.any() else None
    solver.propagate(acq.nt, inject, observe, batch=(nb, ns), source_scale=scale)
    return out[0] if single else out


def migrate(prob: LinearizedProblem, d) -> np.ndarray:
    """Reverse-time migration ``F^T d``; exact transpose of :func:`born_forward`."""
    values = d.values if isinstance(d, ShotData) else np.asarray(d, dtype=np.float64)
    acq = prob.acq
    single = values.ndim == 3
    if single:
        values = values[None]
    if values.shape[1:] != (acq.nr, acq.ns, acq.nt):
        raise ConfigError(
            f"data shape {values.shape[1:]} does not match acquisition "
            f"{(acq.nr, acq.ns, acq.nt)}"
        )
    solver, d2 = prob.solver, prob.d2u0
    nb, ns, n = values.shape[0], acq.ns, prob.n
    zi, xi = solver.inner
    iz, ix = solver.pad_index(acq.receiver_nodes)
    image = np.zeros((nb, n, n))
    traces = values.transpose(0, 2, 1, 3)  # (b, s, r, t)

    def inject(k, lam):
        lam[:, :, iz, ix] += traces[:, :, :, k]

    def observe(k, fbar):
        image[:] -= np.einsum("bsij,sij->bij", fbar[:, :, zi, xi], d2[k], optimize=True)

    scale = float(np.max(np.abs(values)) * np.max(solver.c)) if values.any() else None
    solver.propagate_adjoint(acq.nt, inject, observe, batch=(nb, ns), source_scale=scale)
    return image[0] if single else image


def hessian_apply(prob: LinearizedProblem, v) -> np.ndarray:
    """``H v = F^T F v``; accepts a leading batch axis."""
    return migrate(prob, born_forward_values(prob, v))


def dense_hessian(prob: LinearizedProblem, method: str = "auto", override: bool = False,
                  chunk: int = 256) -> np.ndarray:
    """Dense ``n^2 x n^2`` Hessian, unknowns ordered row-major ``(iz, ix)``.

    ``method="columns"`` stacks ``hessian_apply`` on unit vectors;
    ``method="green"`` assembles ``sum_{r,s} F_rs^T F_rs`` from one impulse
    response per receiver (source-receiver reciprocity of the scheme) and is
    much faster for ``n >= 32``.
    """
    n = prob.n
    if n > DENSE_MAX_N and not override:
        raise ConfigError(f"dense Hessian limited to n <= {DENSE_MAX_N} (got {n}); pass override")
    if method == "auto":
        method = "columns" if n <= 24 else "green"
    if method == "columns":
        return _dense_by_columns(prob, chunk)
    if method == "green":
        return _dense_by_green(prob)
    raise ConfigError(f"unknown dense Hessian method {method!r}")


def _dense_by_columns(prob, chunk):
    n2 = prob.n**2
    H = np.empty((n2, n2))
    for start in range(0, n2, chunk):
        idx = np.arange(start, min(start + chunk, n2))
        e = np.zeros((len(idx), n2))
        e[np.arange(len(idx)), idx] = 1.0
        H[:, idx] = hessian_apply(prob, e.reshape(-1, prob.n, prob.n)).reshape(len(idx), n2).T
    return H


def _dense_by_green(prob):
    solver, acq, d2 = prob.solver, prob.acq, prob.d2u0
    n, nt, ns = prob.n, acq.nt, acq.ns
    n2 = n * n
    zi, xi = solver.inner
    nfft = sfft.next_fast_len(2 * nt - 1, real=True)
    d2_hat = sfft.rfft(d2.reshape(nt, ns, n2), n=nfft, axis=0)
    H = np.zeros((n2, n2), order="F")
    iz, ix = solver.pad_index(acq.receiver_nodes)
    for r in range(acq.nr):
        psi = np.empty((nt, n2))

        def inject(k, rhs, r=r):
            if k == 0:
                rhs[iz[r], ix[r]] += 1.0

        def observe(k, u, psi=psi):
            psi[k] = u[zi, xi].ravel()

        solver.propagate(nt, inject, observe)
        psi_hat = sfft.rfft(psi, n=nfft, axis=0)
        rows = sfft.irfft(psi_hat[:, None, :] * d2_hat, n=nfft, axis=0)[:nt]
        Fr = -rows.transpose(1, 0, 2).reshape(ns * nt, n2)
        H = blas.dsyrk(1.0, Fr, beta=1.0, c=H, trans=1, lower=0, overwrite_c=1)
    H = np.triu(H) + np.triu(H, 1).T
    return np.ascontiguousarray(H)


def eps_rank(H: np.ndarray, eps_list) -> list[tuple[float, int]]:
    """Count singular values with ``sigma_i / sigma_1 > eps`` (strict)."""
    s = np.abs(np.linalg.eigvalsh(0.5 * (H + H.T)))
    s = np.sort(s)[::-1]
    top = s[0]
    return [(float(eps), int(np.sum(s > eps * top))) for eps in eps_list]
