"""Randomized probing of the Hessian and the symbol-coefficient fit.

A probe pair is a trial ``y`` together with ``x = H y``. Fitting looks for
coefficients with ``y ~ sum_i c_i B_i x``, so the fitted operator acts as an
approximate inverse of ``H`` on the range probed by the trials.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import svds

from .born import LinearizedProblem, eps_rank, hessian_apply, migrate
from .errors import ConfigError, NumericalError
from .grid import as_array
from .symbols import (
    BasisSpec,
    FittedOperator,
    _modulation,
    elementary_fields,
    multiplier,
    real_columns,
)

log = logging.getLogger(__name__)

TRIAL_KINDS = (
    "curvelet_masked",
    "white_model",
    "migrated_white_data",
    "hessian_colored",
    "hessian_colored_flattened",
)
TAU_FACTOR = 1e-8
FLATTEN_THRESHOLD = 1e-3
MAX_COND = 1e14


@dataclass
class ProbePair:
    y: np.ndarray
    x: np.ndarray
    seed: int | None = None
    trial_kind: str = "curvelet_masked"


def _mask_bits(plan, mask) -> np.ndarray:
    bits = getattr(mask, "bits", mask)
    bits = np.asarray(bits, dtype=bool)
    if bits.shape != (plan.size,):
        raise ConfigError(f"mask has {bits.size} entries, frame has {plan.size} atoms")
    return bits


def draw_trial(plan, mask, sigma: float = 1.0, seed=None) -> np.ndarray:
    """Random curvelet series restricted to the illuminated set.

    Each coefficient is complex circular Gaussian with ``E|z|^2 = sigma^2
    ||phi_mu||^2``; the real part of the synthesis is returned, which is the
    same as conjugate-symmetrizing the coefficients. An all-zero mask gives
    a zero trial.
    """
    bits = _mask_bits(plan, mask)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(plan.size) + 1j * rng.standard_normal(plan.size)
    z *= sigma * plan.atom_norms / np.sqrt(2.0)
    if not bits.any():
        return np.zeros((plan.n, plan.n))
    return plan.synthesize(np.where(bits, z, 0)).real


def flatten_coefficients(plan, f, threshold: float = FLATTEN_THRESHOLD) -> np.ndarray:
    """Set curvelet magnitudes to one (zero below ``threshold * max``), keeping phases."""
    c = plan.analyze(f).data
    mag = np.abs(c)
    top = mag.max()
    if top == 0:
        return np.zeros((plan.n, plan.n))
    keep = mag > threshold * top
    unit = np.zeros_like(c)
    unit[keep] = c[keep] / mag[keep]
    return plan.synthesize(unit).real


def trial_seeds(seed, count: int) -> list[int]:
    """Independent per-trial seeds derived from one master seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count, dtype=np.uint32)]


def make_trials(prob: LinearizedProblem, kind: str, count: int, seed=0, plan=None, mask=None,
                sigma: float = 1.0) -> tuple[np.ndarray, list[int]]:
    """``count`` trials of the given kind, shape ``(count, n, n)``, plus their seeds."""
    if kind not in TRIAL_KINDS:
        raise ConfigError(f"unknown trial kind {kind!r}; choose from {TRIAL_KINDS}")
    if count < 1:
        raise ConfigError("need at least one trial")
    n = prob.n
    seeds = trial_seeds(seed, count)
    if kind == "curvelet_masked":
        if plan is None or mask is None:
            raise ConfigError("curvelet_masked trials need a frame plan and a mask")
        return np.stack([draw_trial(plan, mask, sigma, s) for s in seeds]), seeds
    if kind == "migrated_white_data":
        acq = prob.acq
        data = np.stack([
            sigma * np.random.default_rng(s).standard_normal((acq.nr, acq.ns, acq.nt)) for s in seeds
        ])
        return migrate(prob, data), seeds
    white = np.stack([sigma * np.random.default_rng(s).standard_normal((n, n)) for s in seeds])
    if kind == "white_model":
        return white, seeds
    colored = hessian_apply(prob, white)
    if kind == "hessian_colored":
        return colored, seeds
    if plan is None:
        raise ConfigError("flattened trials need a frame plan")
    return np.stack([flatten_coefficients(plan, c) for c in colored]), seeds


def probe(prob: LinearizedProblem, kind: str, count: int, seed=0, plan=None, mask=None,
          sigma: float = 1.0) -> list[ProbePair]:
    """Draw trials and apply the Hessian to all of them in one batch."""
    ys, seeds = make_trials(prob, kind, count, seed, plan, mask, sigma)
    xs = hessian_apply(prob, ys)
    return [ProbePair(y, x, s, kind) for y, x, s in zip(ys, xs, seeds)]


def krylov_trials(prob: LinearizedProblem, d, count: int) -> list[ProbePair]:
    """Pairs ``(H^k F^T d, H^(k+1) F^T d)`` for ``k = 0 .. count-1``."""
    if count < 1:
        raise ConfigError("count must be at least 1")
    y = migrate(prob, d)
    pairs = []
    for _ in range(count):
        x = hessian_apply(prob, y)
        pairs.append(ProbePair(y, x, None, "krylov"))
        y = x
    return pairs


@dataclass
class FitReport:
    coeffs: FittedOperator
    M_cond: float
    residual: float
    p: int
    r_est: int | None = None
    kappa_est: float | None = None
    eta_est: float | None = None
    cond_unregularized: float = float("nan")
    tau: float = 0.0
    trials: int = 0
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        s = self.coeffs.spec
        lines = [
            f"p: {self.p}",
            f"lmax: {s.lmax}",
            f"q1max: {s.q1max}",
            f"q2max: {s.q2max}",
            f"order: {s.order}",
            f"L: {s.L!r}",
            f"trials: {self.trials}",
            f"tau: {self.tau!r}",
            f"M_cond: {self.M_cond!r}",
            f"cond_unregularized: {self.cond_unregularized!r}",
            f"residual: {self.residual!r}",
            f"r_est: {self.r_est}",
            f"kappa_est: {self.kappa_est!r}",
            f"eta_est: {self.eta_est!r}",
        ]
        lines += [f"{k}: {v}" for k, v in self.extra.items()]
        return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    """Key/value view of :meth:`FitReport.to_text` output."""
    out = {}
    for line in text.splitlines():
        if ":" in line:
            k, v = line.split(":", 1)
            out[k.strip()] = v.strip()
    return out


def normal_equations(pairs, spec: BasisSpec, normalize: bool = True):
    """Stacked ``(M, b, ||y||^2, rows)`` of the real least-squares fit.

    With ``normalize`` each pair is scaled by ``1 / ||x_t||`` so that trials of
    very different magnitude (Krylov vectors) carry equal weight.
    """
    p = spec.p
    M = np.zeros((p, p))
    b = np.zeros(p)
    yy = 0.0
    rows = 0
    for pair in pairs:
        x, y = as_array(pair.x), as_array(pair.y)
        w = 1.0
        if normalize:
            nx = np.linalg.norm(x)
            if nx == 0:
                continue
            w = 1.0 / nx
        A = real_columns(spec, x) * w
        yv = y.ravel() * w
        M += A @ A.T
        b += A @ yv
        yy += float(yv @ yv)
        rows += yv.size
    return M, b, yy, rows


def fit(pairs, spec: BasisSpec, tau="auto", normalize: bool = True) -> FitReport:
    """Least-squares symbol coefficients from probe pairs.

    Solves ``(M + tau I) theta = b`` in the real parametrization of
    :func:`real_columns`; ``tau="auto"`` uses ``1e-8 trace(M) / p``.
    """
    pairs = list(pairs)
    M, b, yy, rows = normal_equations(pairs, spec, normalize)
    p = spec.p
    if rows < p:
        raise ConfigError(f"{p} parameters exceed the {rows} stacked equations")
    if yy == 0:
        raise ConfigError("all trials are zero")
    if tau == "auto":
        tau = TAU_FACTOR * np.trace(M) / p
    tau = float(tau)
    w, V = np.linalg.eigh(M)
    w_reg = w + tau
    cond_unreg = float(w[-1] / w[0]) if w[0] > 0 else float("inf")
    if not np.all(np.isfinite(w)) or w_reg[0] <= 0 or w_reg[-1] / w_reg[0] > MAX_COND:
        raise NumericalError(f"fit matrix is numerically singular (eigenvalues {w_reg[0]:.3e} .. {w_reg[-1]:.3e})")
    theta = V @ ((V.T @ b) / w_reg)
    res2 = yy - 2.0 * theta @ b + theta @ M @ theta
    residual = float(np.clip(np.sqrt(max(res2, 0.0) / yy), 0.0, 1.0))
    op = FittedOperator.from_real_params(spec, theta)
    return FitReport(op, float(w_reg[-1] / w_reg[0]), residual, p,
                     cond_unregularized=cond_unreg, tau=tau, trials=len(pairs))


# diagnostics -----------------------------------------------------------------

def _spectral_norm(G: np.ndarray) -> float:
    if min(G.shape) <= 64:
        return float(np.linalg.norm(G, 2))
    return float(svds(G, k=1, return_singular_vectors=False, random_state=0)[0])


def expected_gram(spec: BasisSpec, H: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact ``EM_ij = Tr(H B_i^* B_j H)`` for white trials, plus norms of ``B_i H``.

    Modulations are unitary and diagonal, so ``||B_i H||`` depends on the
    angular/radial part only and ``EM`` reduces to Fourier sums of row inner
    products of ``B_q H``. Returns ``(EM, spectral, frobenius)`` with the norms
    indexed like ``spec.angular_radial``.
    """
    N = H.shape[0]
    n = int(round(np.sqrt(N)))
    if n * n != N:
        raise ConfigError("dense Hessian must be n^2 x n^2")
    cols = H.T.reshape(N, n, n)
    F = np.fft.fft2(cols)
    Gs = [np.fft.ifft2(multiplier(q1, q2, spec, n) * F).reshape(N, N) for q1, q2 in spec.angular_radial]
    spectral = np.array([_spectral_norm(G) for G in Gs])
    frob = np.array([np.linalg.norm(G) for G in Gs])
    E = np.stack([_modulation(l1, l2, n).ravel() for l1, l2 in spec.lambdas])
    nq, nl = len(Gs), len(E)
    EM = np.zeros((nl, nq, nl, nq), dtype=np.complex128)
    for a in range(nq):
        for c in range(a, nq):
            P = np.einsum("kA,kA->A", Gs[a].conj(), Gs[c])
            block = (E.conj() * P) @ E.T
            EM[:, a, :, c] = block
            if c != a:
                EM[:, c, :, a] = block.conj().T
    return EM.reshape(nl * nq, nl * nq), spectral, frob


def _kappa(EM: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(0.5 * (EM + EM.conj().T))
    if ev[-1] <= 0 or ev[0] <= ev[-1] * 1e-15:
        return float("inf")
    return float(ev[-1] / ev[0])


def diagnostics(pairs, spec: BasisSpec, H_dense=None, eps: float = 1e-3) -> tuple[float, float]:
    """Condition number ``kappa`` of ``E M`` and weak condition number ``eta``.

    With a dense Hessian both are exact for white trials (``r`` is the
    ``eps``-rank of ``H``). Otherwise ``E M`` is the Monte-Carlo mean of the
    complex Gram matrices of the given pairs and ``eta`` is ``nan``. A
    singular ``E M`` yields ``kappa = inf``.
    """
    if H_dense is not None:
        H = np.asarray(H_dense, dtype=float)
        EM, spectral, frob = expected_gram(spec, H)
        r = eps_rank(H, [eps])[0][1]
        with np.errstate(divide="ignore", invalid="ignore"):
            eta = float(np.max(np.sqrt(r) * spectral / frob))
        return _kappa(EM), eta
    pairs = list(pairs)
    if not pairs:
        raise ConfigError("diagnostics need pairs or a dense Hessian")
    EM = np.zeros((spec.p, spec.p), dtype=np.complex128)
    for pair in pairs:
        A = elementary_fields(spec, pair.x).reshape(spec.p, -1)
        EM += A.conj() @ A.T
    return _kappa(EM / len(pairs)), float("nan")
