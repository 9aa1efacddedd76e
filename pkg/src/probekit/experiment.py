"""Experiment driver: data synthesis, reference image, probing fits and metrics.

Every output of :func:`run_experiment` is a pure function of the config, so
rerunning with the same seeds reproduces the CSV files byte for byte.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import assets
from .born import (
    LinearizedProblem,
    born_forward,
    born_forward_values,
    dense_hessian,
    eps_rank,
    hessian_apply,
    migrate,
)
from .curvelets import get_plan
from .errors import ConfigError, DivergenceError, ProbekitError
from .grid import cache_dir, content_hash, mse, write_grid, write_pgm
from .illumination import SourceBand, build_mask, speed_model
from .probing import ProbePair, draw_trial, fit, krylov_trials, probe
from .symbols import BasisSpec, apply_fitted, write_operator
from .wavesim import Acquisition, Medium, ShotData

log = logging.getLogger(__name__)

EPS_LIST = (1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
MSE_COLUMNS = ("preconditioner", "p", "lmax", "q1max", "q2max", "mse_masked", "mse_full",
               "residual", "M_cond")
GEN_COLUMNS = ("seed", "preconditioner", "p", "error")


def gradient_descent_reference(prob: LinearizedProblem, d, steps: int = 200, power_iters: int = 20,
                               seed: int = 0, alpha: float | None = None):
    """Fixed-step gradient descent on ``0.5 ||d - F dm||^2`` from ``dm = 0``.

    The step is ``0.9 / rho`` with ``rho`` a power-iteration estimate of
    ``||H||``. Returns ``(image, misfit_history)``; the history holds the
    misfit before each update and after the last one.
    """
    if steps < 1:
        raise ConfigError("steps must be at least 1")
    values = d.values if isinstance(d, ShotData) else np.asarray(d, dtype=float)
    n = prob.n
    dm = np.zeros((n, n))
    if not values.any():
        return dm, np.zeros(steps + 1)
    if alpha is None:
        alpha = 0.9 / hessian_norm(prob, power_iters, seed)
    history = []
    rising = 0
    pred = np.zeros_like(values)
    for _ in range(steps):
        resid = values - pred
        J = 0.5 * float(np.sum(resid**2))
        if history and J > history[-1]:
            rising += 1
            if rising >= 3:
                raise DivergenceError(f"gradient descent diverges with step alpha={alpha:.6g}")
        else:
            rising = 0
        history.append(J)
        dm = dm + alpha * migrate(prob, resid)
        pred = born_forward_values(prob, dm)
    history.append(0.5 * float(np.sum((values - pred) ** 2)))
    return dm, np.array(history)


def hessian_norm(prob: LinearizedProblem, iters: int = 20, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue of ``H``."""
    v = np.random.default_rng(seed).standard_normal((prob.n, prob.n))
    v /= np.linalg.norm(v)
    rho = 0.0
    for _ in range(iters):
        w = hessian_apply(prob, v)
        rho = float(np.vdot(v, w))
        v = w / np.linalg.norm(w)
    return rho


def blend_medium(gamma: float, n: int = 64) -> Medium:
    """Background medium blending the mean and a low-passed Marmousi-like speed."""
    return Medium.from_speed(assets.blend_speed(gamma, n))


def eps_rank_table(n_small: int = 48, eps_list=EPS_LIST, medium: Medium | None = None,
                   override: bool = False) -> list[tuple[float, int]]:
    medium = medium or Medium.constant(n_small)
    prob = LinearizedProblem(medium, Acquisition.surface(medium))
    H = dense_hessian(prob, override=override)
    return eps_rank(H, eps_list)


def write_eps_rank(path, rows, n: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("eps", "rank", "n2"))
        for eps, rank in rows:
            w.writerow((f"{eps:g}", rank, n * n))


# config ----------------------------------------------------------------------

def _ints(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(t) for t in text)
    return tuple(int(t) for t in str(text).replace(",", " ").split())


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(t) for t in text)
    return tuple(float(t) for t in str(text).replace(",", " ").split())


@dataclass
class ExperimentConfig:
    n: int = 64
    medium: str = "constant"  # constant | marmousi
    gamma: float = 0.0
    reflectivity: str = "marmousi"  # marmousi | layered
    source_x: tuple = (0.1, 0.5, 0.9)
    lmax_values: tuple = (1, 2, 3, 4)
    q1max: int = 2
    q2max: int = 1
    order: int = -1
    band_rel: float = 0.1
    trial_kind: str = "curvelet_masked"
    r_counts: tuple = (1, 4, 7)
    k_counts: tuple = (1, 4)
    gd_steps: int = 200
    seed: int = 1
    generalization_seeds: tuple = (101,)
    true_model_fit: bool = True
    figures: bool = True
    output: str = "report"

    SECTIONS = {
        "grid": ("n",),
        "medium": ("medium", "gamma", "reflectivity"),
        "acquisition": ("source_x",),
        "mask": ("band_rel",),
        "basis": ("lmax_values", "q1max", "q2max", "order"),
        "trials": ("trial_kind", "r_counts", "k_counts", "gd_steps", "seed",
                   "generalization_seeds", "true_model_fit"),
        "output": ("output", "figures"),
    }

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n < 32 or self.n & (self.n - 1):
            raise ConfigError("experiments need n a power of two >= 32")
        if self.medium not in ("constant", "marmousi"):
            raise ConfigError(f"unknown medium {self.medium!r}")
        if not 0.0 <= self.gamma <= 0.4:
            raise ConfigError(f"gamma must lie in [0, 0.4], got {self.gamma}")
        if self.reflectivity not in ("marmousi", "layered"):
            raise ConfigError(f"unknown reflectivity {self.reflectivity!r}")
        if not self.lmax_values or min(self.lmax_values) < 0:
            raise ConfigError("lmax_values must be non-negative")
        if not 0.0 <= self.band_rel < 1.0:
            raise ConfigError("band_rel must lie in [0, 1)")
        if self.gd_steps < 1:
            raise ConfigError("gd_steps must be positive")
        if any(c < 1 for c in self.r_counts + self.k_counts):
            raise ConfigError("trial counts must be positive")

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        out = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            default = getattr(cls, key, None)
            if key in ("source_x",):
                out[key] = _floats(raw)
            elif isinstance(default, tuple):
                out[key] = _ints(raw)
            elif isinstance(default, bool):
                out[key] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                out[key] = int(raw)
            elif isinstance(default, float):
                out[key] = float(raw)
            else:
                out[key] = str(raw)
        return cls(**out)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise ConfigError(f"cannot read config file {path}")
        values = {}
        for section in parser.sections():
            if section not in cls.SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in cls.SECTIONS[section]:
                    raise ConfigError(f"key {key!r} does not belong in [{section}]")
                values[key] = raw
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)

    def to_text(self) -> str:
        parser = configparser.ConfigParser()
        for section, keys in self.SECTIONS.items():
            parser[section] = {}
            for key in keys:
                v = getattr(self, key)
                parser[section][key] = " ".join(str(t) for t in v) if isinstance(v, tuple) else str(v)
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in parser[section].items()]
            lines.append("")
        return "\n".join(lines)

    def key(self) -> str:
        return content_hash(extra=self.to_text())

    def specs(self) -> list[BasisSpec]:
        return [BasisSpec.for_grid(self.n, l, self.q1max, self.q2max, self.order) for l in self.lmax_values]


# pipeline --------------------------------------------------------------------

@dataclass
class Setup:
    config: ExperimentConfig
    prob: LinearizedProblem
    reflectivity: np.ndarray
    data: ShotData
    migrated: np.ndarray
    plan: object
    mask: object


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            t = time.perf_counter()
            try:
                out = fn(*args, **kwargs)
            except ProbekitError as exc:
                exc.args = (f"[{name}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
                raise
            log.info("stage %s done in %.1fs", name, time.perf_counter() - t)
            return out
        return inner
    return wrap


def build_medium(cfg: ExperimentConfig) -> Medium:
    if cfg.medium == "constant":
        return Medium.constant(cfg.n)
    return blend_medium(cfg.gamma, cfg.n)


def build_reflectivity(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.reflectivity == "marmousi":
        return assets.marmousi_reflectivity(cfg.n)
    return assets.layered_reflectivity(cfg.n)


@_stage("setup")
def prepare(cfg: ExperimentConfig) -> Setup:
    medium = build_medium(cfg)
    acq = Acquisition.surface(medium, source_x=cfg.source_x)
    prob = LinearizedProblem(medium, acq)
    refl = build_reflectivity(cfg)
    data = born_forward(prob, refl)
    mig = migrate(prob, data)
    plan = get_plan(cfg.n)
    band = SourceBand.of(acq, cfg.band_rel) if cfg.band_rel > 0 else None
    mask = build_mask(plan, speed_model(medium), acq, band=band)
    return Setup(cfg, prob, refl, data, mig, plan, mask)


@_stage("reference")
def reference_image(setup: Setup) -> tuple[np.ndarray, np.ndarray]:
    cfg = setup.config
    directory = cache_dir()
    key = content_hash(setup.data.values, extra=f"gd|{setup.prob.key()}|{cfg.gd_steps}")
    path = os.path.join(directory, f"gd-{key}.npz") if directory else None
    if path and os.path.exists(path):
        with np.load(path) as z:
            return z["image"], z["history"]
    image, history = gradient_descent_reference(setup.prob, setup.data, cfg.gd_steps)
    if path:
        np.savez(path + ".tmp.npz", image=image, history=history)
        os.replace(path + ".tmp.npz", path)
    return image, history


def preconditioner_pairs(setup: Setup, seed: int) -> dict[str, list[ProbePair]]:
    """Trial pairs for every Rn and Kn of the config (nested prefixes share trials)."""
    cfg = setup.config
    out = {}
    if cfg.r_counts:
        pairs = probe(setup.prob, cfg.trial_kind, max(cfg.r_counts), seed, setup.plan, setup.mask)
        out.update({f"R{c}": pairs[:c] for c in cfg.r_counts})
    if cfg.k_counts:
        kp = krylov_trials(setup.prob, setup.data, max(cfg.k_counts))
        out.update({f"K{c}": kp[:c] for c in cfg.k_counts})
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    generalization: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    images: dict = field(default_factory=dict)
    history: np.ndarray | None = None

    def mse(self, name: str, p: int | None = None, masked: bool = True) -> float:
        col = 5 if masked else 6
        rows = [r for r in self.rows if r[0] == name and (p is None or r[1] == p)]
        if not rows:
            raise KeyError(name)
        return rows[-1][col]

    def generalization_error(self, name: str, seed: int | None = None) -> float:
        rows = [r for r in self.generalization if r[1] == name and (seed is None or r[0] == seed)]
        return rows[-1][3]


def evaluate(setup: Setup, reference: np.ndarray, pairs: dict, specs, result: ExperimentResult):
    """Fit every preconditioner at every basis size and score it against ``reference``."""
    plan, bits = setup.plan, setup.mask.bits
    ref_masked = plan.masked_projection(reference, bits)
    for name, group in pairs.items():
        for spec in specs:
            rep = fit(group, spec)
            image = apply_fitted(rep.coeffs, setup.migrated)
            row = (name, spec.p, spec.lmax, spec.q1max, spec.q2max,
                   mse(ref_masked, plan.masked_projection(image, bits)), mse(reference, image),
                   rep.residual, rep.M_cond)
            result.rows.append(row)
            result.reports[(name, spec.p)] = rep
            result.images[(name, spec.p)] = image
    return result


def generalization(setup: Setup, pairs: dict, spec: BasisSpec, seed: int) -> list[tuple]:
    """Error of each preconditioner at recovering a fresh masked trial from ``H y``."""
    y = draw_trial(setup.plan, setup.mask, 1.0, seed)
    x = hessian_apply(setup.prob, y)
    rows = []
    for name, group in pairs.items():
        rep = fit(group, spec)
        rows.append((seed, name, spec.p, mse(y, apply_fitted(rep.coeffs, x))))
    return rows


def run_experiment(cfg: ExperimentConfig, output: str | None = None) -> ExperimentResult:
    """Run the full pipeline and write the report directory."""
    out_dir = output or cfg.output
    os.makedirs(out_dir, exist_ok=True)
    status = os.path.join(out_dir, "PARTIAL")
    with open(status, "w") as fh:
        fh.write("incomplete run\n")
    setup = prepare(cfg)
    reference, history = reference_image(setup)
    result = ExperimentResult(cfg, history=history)
    specs = cfg.specs()
    pairs = _stage("probing")(preconditioner_pairs)(setup, cfg.seed)
    if cfg.true_model_fit:
        # inversion crime: the migrated image is exactly H applied to the reflectivity
        pairs["true"] = [ProbePair(setup.reflectivity, setup.migrated, None, "true_model")]
    _stage("fit")(evaluate)(setup, reference, pairs, specs, result)
    gen_pairs = {k: v for k, v in pairs.items() if k != "true"}
    for s in cfg.generalization_seeds:
        result.generalization += _stage("generalization")(generalization)(setup, gen_pairs, specs[-1], s)
    result.images["reference"] = reference
    result.images["migrated"] = setup.migrated
    result.images["reflectivity"] = setup.reflectivity
    write_report(out_dir, setup, result)
    os.remove(status)
    return result


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


def write_report(out_dir: str, setup: Setup, result: ExperimentResult) -> None:
    cfg = result.config
    cfg_hash = cfg.key()
    files = {}
    _write_csv(os.path.join(out_dir, "mse.csv"), MSE_COLUMNS, result.rows)
    _write_csv(os.path.join(out_dir, "generalization.csv"), GEN_COLUMNS, result.generalization)
    _write_csv(os.path.join(out_dir, "misfit.csv"), ("step", "misfit"),
               [(i, float(v)) for i, v in enumerate(result.history)])
    top = max(s.p for s in cfg.specs())
    named = {
        "reflectivity": result.images["reflectivity"],
        "migrated": result.images["migrated"],
        "reference": result.images["reference"],
    }
    for key, img in result.images.items():
        if isinstance(key, tuple) and key[1] == top:
            named[f"preconditioned_{key[0]}"] = img
    for name, img in named.items():
        write_pgm(os.path.join(out_dir, f"{name}.pgm"), img)
        write_grid(os.path.join(out_dir, f"{name}.pkgrid"), img)
    for (name, p), rep in result.reports.items():
        if p != top:
            continue
        rep.extra.update({"config_hash": cfg_hash, "preconditioner": name, "seed": cfg.seed,
                          "trial_kind": cfg.trial_kind if name.startswith("R") else name})
        with open(os.path.join(out_dir, f"fit-{name}-p{p}.txt"), "w") as fh:
            fh.write(rep.to_text())
        write_operator(os.path.join(out_dir, f"fit-{name}-p{p}.pksym"), rep.coeffs)
    if cfg.figures:
        from . import plotting

        plotting.render_report(out_dir, result)
    for fname in sorted(os.listdir(out_dir)):
        if fname in ("manifest.txt", "PARTIAL"):
            continue
        with open(os.path.join(out_dir, fname), "rb") as fh:
            files[fname] = content_hash(np.frombuffer(fh.read(), dtype=np.uint8))
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write(f"config_hash: {cfg_hash}\n")
        fh.write(f"mask_fraction: {setup.mask.fraction:.6f}\n")
        fh.write(f"problem: {setup.prob.key()}\n")
        for fname, digest in files.items():
            fh.write(f"file: {fname} {digest} config={cfg_hash}\n")
        fh.write("\n" + cfg.to_text())
