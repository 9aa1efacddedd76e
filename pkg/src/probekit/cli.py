"""Command line interface: ``probekit <subcommand> [--flags]``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import ConfigError, NumericalError

log = logging.getLogger("probekit")


def _config(args):
    from .experiment import ExperimentConfig

    overrides = {
        "n": args.n,
        "medium": args.medium,
        "gamma": args.gamma,
        "reflectivity": getattr(args, "reflectivity", None),
        "seed": getattr(args, "seed", None),
    }
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})


def _problem(cfg):
    from .born import LinearizedProblem
    from .experiment import build_medium
    from .wavesim import Acquisition

    medium = build_medium(cfg)
    return LinearizedProblem(medium, Acquisition.surface(medium, source_x=cfg.source_x))


def _write_image(path, image):
    from .grid import write_grid, write_pgm

    write_grid(path, image)
    root, _ = os.path.splitext(path)
    write_pgm(root + ".pgm", image)


def cmd_simulate(args):
    from .born import born_forward
    from .experiment import build_reflectivity
    from .grid import read_grid
    from .wavesim import write_shots

    cfg = _config(args)
    prob = _problem(cfg)
    refl = read_grid(args.model).data if args.model else build_reflectivity(cfg)
    if refl.shape != (cfg.n, cfg.n):
        raise ConfigError(f"model is {refl.shape}, grid is {cfg.n}")
    write_shots(args.out, born_forward(prob, refl))
    print(f"wrote {args.out}")


def cmd_migrate(args):
    from .born import migrate
    from .wavesim import read_shots

    cfg = _config(args)
    prob = _problem(cfg)
    image = migrate(prob, read_shots(args.shots))
    _write_image(args.out, image)
    print(f"wrote {args.out}")


def cmd_mask(args):
    from .curvelets import get_plan
    from .illumination import build_mask, speed_model, write_mask

    cfg = _config(args)
    prob = _problem(cfg)
    mask = build_mask(get_plan(cfg.n), speed_model(prob.medium), prob.acq)
    write_mask(args.out, mask)
    print(f"wrote {args.out} ({mask.bits.sum()} of {mask.bits.size} atoms visible)")


def cmd_fit(args):
    from .curvelets import get_plan
    from .illumination import build_mask, speed_model
    from .probing import diagnostics, fit, krylov_trials, probe
    from .symbols import BasisSpec, write_operator
    from .wavesim import read_shots

    cfg = _config(args)
    prob = _problem(cfg)
    spec = BasisSpec.for_grid(cfg.n, args.lmax, args.q1max, args.q2max, args.order)
    if args.kind == "krylov":
        if not args.shots:
            raise ConfigError("krylov trials need --shots")
        pairs = krylov_trials(prob, read_shots(args.shots), args.count)
    else:
        plan = get_plan(cfg.n)
        mask = build_mask(plan, speed_model(prob.medium), prob.acq) if args.kind == "curvelet_masked" else None
        pairs = probe(prob, args.kind, args.count, cfg.seed, plan, mask)
    report = fit(pairs, spec)
    report.kappa_est, report.eta_est = diagnostics(pairs, spec)
    report.extra.update({"trial_kind": args.kind, "count": args.count, "seed": cfg.seed, "n": cfg.n,
                         "medium": cfg.medium, "gamma": cfg.gamma})
    write_operator(args.out + ".pksym", report.coeffs)
    with open(args.out + ".txt", "w") as fh:
        fh.write(report.to_text())
    print(report.to_text(), end="")


def cmd_apply(args):
    from .grid import read_grid
    from .symbols import apply_fitted, read_operator

    op = read_operator(args.operator)
    image = read_grid(args.image).data
    _write_image(args.out, apply_fitted(op, image))
    print(f"wrote {args.out}")


def cmd_eps_rank(args):
    from .experiment import eps_rank_table, write_eps_rank
    from .wavesim import Medium

    eps = [float(e) for e in args.eps.replace(",", " ").split()]
    rows = eps_rank_table(args.n, eps, Medium.constant(args.n))
    write_eps_rank(args.out, rows, args.n)
    for e, r in rows:
        print(f"{e:g}\t{r}")


def cmd_theory(args):
    from . import plotting
    from .theory import concentration_sweep, write_sweep_csv

    ranks = [int(r) for r in args.ranks.replace(",", " ").split()]
    results = concentration_sweep(args.p, ranks, trials=args.trials, seed=args.seed)
    write_sweep_csv(args.out, results)
    if args.figure:
        plotting.sweep_plot(args.figure, results)
    for res in results:
        print(f"r={res.r}\tmedian={res.median:.4g}\tmax={res.deviations.max():.4g}\tmargin_ok={res.margins_hold}")


def cmd_experiment(args):
    from .experiment import ExperimentConfig, run_experiment

    overrides = {
        "n": args.n, "medium": args.medium, "gamma": args.gamma, "reflectivity": args.reflectivity,
        "seed": args.seed, "gd_steps": args.gd_steps, "output": args.output,
        "trial_kind": args.trial_kind, "lmax_values": args.lmax_values,
    }
    if args.no_figures:
        overrides["figures"] = False
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, overrides)
    else:
        cfg = ExperimentConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})
    result = run_experiment(cfg)
    for row in result.rows:
        print(f"{row[0]}\tp={row[1]}\tmse_masked={row[5]:.4f}\tmse_full={row[6]:.4f}")
    print(f"report written to {cfg.output}")


def _common(p):
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--n", type=int)
    p.add_argument("--medium", choices=("constant", "marmousi"))
    p.add_argument("--gamma", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probekit", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Born data of a reflectivity model")
    _common(p)
    p.add_argument("--reflectivity", choices=("marmousi", "layered"))
    p.add_argument("--model", help="PKGRID1 perturbation to use instead of a bundled one")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("migrate", help="reverse-time migration of shot data")
    _common(p)
    p.add_argument("--shots", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_migrate)

    p = sub.add_parser("mask", help="curvelet illumination mask")
    _common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("fit", help="probe the Hessian and fit symbol coefficients")
    _common(p)
    p.add_argument("--kind", default="curvelet_masked",
                   choices=("curvelet_masked", "white_model", "migrated_white_data", "hessian_colored",
                            "hessian_colored_flattened", "krylov"))
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--seed", type=int)
    p.add_argument("--shots", help="shot data for krylov trials")
    p.add_argument("--lmax", type=int, default=4)
    p.add_argument("--q1max", type=int, default=2)
    p.add_argument("--q2max", type=int, default=1)
    p.add_argument("--order", type=int, default=-1)
    p.add_argument("--out", required=True, help="output prefix (.pksym and .txt are appended)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("apply", help="apply a fitted operator to an image")
    p.add_argument("--operator", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("eps-rank", help="eps-rank table of the dense Hessian")
    p.add_argument("--n", type=int, default=48)
    p.add_argument("--eps", default="1 1e-1 1e-2 1e-3 1e-4 1e-5 1e-6")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eps_rank)

    p = sub.add_parser("theory", help="concentration sweep of the probing Gram matrix")
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--ranks", default="50 200 800 3200")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--figure")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("experiment", help="full Rn/Kn preconditioner study")
    _common(p)
    p.add_argument("--reflectivity", choices=("marmousi", "layered"))
    p.add_argument("--seed", type=int)
    p.add_argument("--gd-steps", type=int)
    p.add_argument("--trial-kind")
    p.add_argument("--lmax-values")
    p.add_argument("--output")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
