"""Command-line entry point ``gpm``.

Every subcommand reads a JSON config (``--config``), applies ``--set key=value``
overrides and dedicated flags (flags win), writes CSV output with a JSON
sidecar, and prints ``key=value`` summary lines.

Exit codes: 0 success, 2 configuration error, 3 solver divergence,
4 tolerance failure under ``--check``.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import empirical_limit, shift_table
from .config import ConfigError, RunConfig, load_config
from .fields import FieldGrid, GridSpec, write_rows
from .marchenko import ContractionError, HalfLineGrid, choose_halfline, perturbed_grid_eval
from .nsoliton import gram_min_eigenvalue, grid_eval, u_N
from .validate import (ZSState, cn_evolve, compare_fields, gp_residual, lax_residual,
                       observed_order, zs_eigenfunction)

log = logging.getLogger("gpmarchenko")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK = 0, 2, 3, 4
COMMANDS = ("validate-params", "nsoliton-eval", "perturbed-eval", "residual", "lax-check",
            "asymptotics", "shift-table", "evolve-cn")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, complex):
        return f"{v.real!r}{v.imag:+}j"
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def emit(out, **pairs) -> None:
    for k, v in pairs.items():
        print(f"{k}={_fmt(v)}", file=out)


def _need_grid(cfg: RunConfig) -> GridSpec:
    if cfg.grid is None:
        raise ConfigError("this command needs a grid block {t_min, t_max, tau, x_min, x_max, h}")
    return cfg.grid


def _output(cfg: RunConfig, default: str) -> Path:
    return cfg.output if cfg.output is not None else Path(default)


def _halfline_step(cfg: RunConfig) -> tuple[float | None, float]:
    hl = cfg.halfline
    P = float(hl["P"]) if hl.get("P") is not None else None
    if P is not None and hl.get("M") is not None:
        return P, P / int(hl["M"])
    return P, float(hl.get("dp") or 0.05)


def _field(cfg: RunConfig, spec: GridSpec, source: str) -> tuple[FieldGrid, list[dict]]:
    if source == "nsoliton":
        return grid_eval(cfg.data, spec), []
    if source == "perturbed":
        P, dp = _halfline_step(cfg)
        return perturbed_grid_eval(cfg.data, cfg.refl, spec, dp=dp, P=P, tol=cfg.solver["tol"],
                                   max_iter=cfg.solver["max_iter"])
    raise ConfigError(f"unknown field source {source!r}")


# ------------------------------------------------------------ commands -----

def cmd_validate_params(cfg: RunConfig, args, out) -> int:
    d = cfg.data
    emit(out, status="ok", N=d.N, lambdas=d.lam, mus0=d.mu0, nu=d.nu, speeds=d.speeds, thetas=d.thetas,
         nu_distinct=d.nus_distinct(), reflection=cfg.refl.family)
    if d.N:
        xs = np.linspace(-10.0, 10.0, 41)
        emit(out, gram_min_eigenvalue_x_pm10=min(gram_min_eigenvalue(d, 0.0, x) for x in xs))
    if not cfg.refl.is_zero:
        n = cfg.refl.decay_index
        emit(out, sup_lambda_n_c=cfg.refl.sup_weighted(n), sup_lambda_n2_c=cfg.refl.sup_weighted(n + 2))
    return EXIT_OK


def cmd_nsoliton_eval(cfg: RunConfig, args, out) -> int:
    spec = _need_grid(cfg)
    field = grid_eval(cfg.data, spec)
    path = field.to_csv(_output(cfg, "nsoliton.csv"))
    emit(out, output=path, nt=field.t.size, nx=field.x.size, max_abs_u=float(np.abs(field.u).max()),
         min_abs_u=float(np.abs(field.u).min()))
    return EXIT_OK


def cmd_perturbed_eval(cfg: RunConfig, args, out) -> int:
    spec = _need_grid(cfg)
    field, diags = _field(cfg, spec, "perturbed")
    path = field.to_csv(_output(cfg, "perturbed.csv"), extra_meta={"diagnostics": diags})
    gap = float(np.max(np.abs(field.u - u_N(cfg.data, field.t[:, None], field.x[None, :]))))
    emit(out, output=path, nt=field.t.size, nx=field.x.size, max_gap_to_nsoliton=gap,
         max_contraction_ratio=field.meta["max_ratio"], max_residual=field.meta["max_residual"],
         max_error_budget=field.meta["max_error_budget"])
    return EXIT_OK


def _residual_pair(cfg, spec, source):
    fields = [_field(cfg, s, source)[0] for s in (spec, spec.halved())]
    return fields, [gp_residual(f) for f in fields]


def cmd_residual(cfg: RunConfig, args, out) -> int:
    opts = cfg.section("residual")
    if opts.get("input"):
        field = FieldGrid.from_csv(opts["input"])
        reports = [gp_residual(field)]
        fields = [field]
    else:
        spec = _need_grid(cfg)
        fields, reports = _residual_pair(cfg, spec, opts["source"])
    rep = reports[0]
    order = observed_order(reports[0].linf, reports[1].linf) if len(reports) > 1 else math.nan
    rep.order = order
    f0 = fields[0]
    res_field = FieldGrid(f0.t[1:-1], f0.x[1:-1], rep.residual, provenance="residual",
                          meta={"source": opts.get("source"), "linf": rep.linf, "l2": rep.l2, "order": order})
    path = res_field.to_csv(_output(cfg, "residual.csv"))
    emit(out, output=path, h=rep.h, tau=rep.tau, linf=rep.linf, l2=rep.l2, order=order)
    if args.check:
        ok = True
        if len(reports) > 1:
            ok &= opts["order_min"] <= order <= opts["order_max"] or rep.linf == 0.0
        if opts.get("max_linf") is not None:
            ok &= rep.linf <= float(opts["max_linf"])
        emit(out, check="pass" if ok else "fail")
        return EXIT_OK if ok else EXIT_CHECK
    return EXIT_OK


def cmd_lax_check(cfg: RunConfig, args, out) -> int:
    spec = _need_grid(cfg)
    opts = cfg.section("lax")
    t = float(opts["t"]) if opts.get("t") is not None else spec.t_min
    xi = complex(float(opts["xi_re"]), float(opts["xi_im"]))
    residuals = []
    grid = None
    P, dp = _halfline_step(cfg)
    rows = []
    for h in (spec.h, spec.h / 2.0):
        sub = GridSpec(t, t, 1.0, spec.x_min, spec.x_max, h)
        x = sub.x_axis()
        if not cfg.refl.is_zero:
            grid = HalfLineGrid.from_step(P, dp) if P else choose_halfline(cfg.data, cfg.refl, t, x[0], x[-1], dp)
            u = perturbed_grid_eval(cfg.data, cfg.refl, sub, dp=grid.dp, P=grid.P, tol=cfg.solver["tol"])[0].u[0]
        else:
            u = u_N(cfg.data, t, x)
        state = zs_eigenfunction(cfg.data, cfg.refl, t, x, xi, grid=grid, tol=cfg.solver["tol"])
        r = lax_residual(state, u)
        residuals.append(r)
        rows.append([h, r])
    rng = np.random.default_rng(cfg.seed)
    ctrl_psi = rng.normal(size=state.psi.shape) + 1j * rng.normal(size=state.psi.shape)
    ctrl_psi *= np.max(np.abs(state.psi)) / np.max(np.abs(ctrl_psi))
    control = lax_residual(ZSState(xi, state.lam, t, state.x, ctrl_psi), u)
    order = observed_order(residuals[0], residuals[1])
    path = write_rows(_output(cfg, "lax.csv"), ["h", "residual"], rows,
                      {"t": t, "xi": [xi.real, xi.imag], "lambda": [state.lam.real, state.lam.imag],
                       "control_residual": control, "order": order, "seed": cfg.seed})
    emit(out, output=path, t=t, residual=residuals[1], residual_coarse=residuals[0], order=order,
         control_residual=control, control_factor=control / residuals[1] if residuals[1] else math.inf)
    if args.check:
        ok = (opts["order_min"] <= order <= opts["order_max"]) and control >= opts["control_factor"] * residuals[1]
        emit(out, check="pass" if ok else "fail")
        return EXIT_OK if ok else EXIT_CHECK
    return EXIT_OK


def cmd_asymptotics(cfg: RunConfig, args, out) -> int:
    opts = cfg.section("asymptotics")
    T_values = [float(v) for v in opts["T_values"]]
    eta = np.linspace(float(opts["eta_min"]), float(opts["eta_max"]), int(opts["n_eta"]))
    rows = []
    worst = 0.0
    monotone = True
    for k in range(1, cfg.data.N + 1):
        for sign in ("-", "+"):
            dev = empirical_limit(cfg.data, k, sign, T_values, eta)
            worst = max(worst, float(dev[-1]))
            monotone &= bool(np.all(np.diff(dev) <= float(opts["floor"])))
            rows.extend([k, sign, T, float(v)] for T, v in zip(T_values, dev))
    path = write_rows(_output(cfg, "asymptotics.csv"), ["k", "sign", "T", "deviation"], rows,
                      {"scattering": cfg.data.to_dict(), "eta_range": [eta[0], eta[-1], eta.size]})
    emit(out, output=path, max_deviation_at_T_max=worst, monotone=monotone)
    if args.check:
        ok = worst <= float(opts["tolerance"]) and monotone
        emit(out, check="pass" if ok else "fail")
        return EXIT_OK if ok else EXIT_CHECK
    return EXIT_OK


def cmd_shift_table(cfg: RunConfig, args, out) -> int:
    reports = shift_table(cfg.data)
    path = write_rows(_output(cfg, "shifts.csv"), ["k", "sign", "eta", "re_A", "im_A", "theta_k"],
                      [r.row() for r in reports])
    emit(out, output=path, rows=len(reports))
    for r in reports:
        print(f"k={r.k} sign={r.sign} eta={r.eta!r} re_A={r.phase.real!r} im_A={r.phase.imag!r}", file=out)
    return EXIT_OK


def cmd_evolve_cn(cfg: RunConfig, args, out) -> int:
    spec = _need_grid(cfg)
    opts = cfg.section("cn")
    x, t = spec.x_axis(), spec.t_axis()
    d = cfg.data

    def boundary(s):
        return complex(u_N(d, s, x[0])), complex(u_N(d, s, x[-1]))

    field = cn_evolve(u_N(d, t[0], x), boundary, x, t, inner_tol=float(opts["inner_tol"]),
                      store_every=int(opts["store_every"]))
    exact = FieldGrid(field.t, x, u_N(d, field.t[:, None], x[None, :]), provenance="nsoliton")
    linf, rms = compare_fields(field, exact)
    path = field.to_csv(_output(cfg, "cn.csv"), extra_meta={"linf_vs_exact": linf, "rms_vs_exact": rms})
    emit(out, output=path, nt_stored=field.t.size, nx=x.size, linf=linf, rms=rms)
    if args.check:
        ok = linf <= float(opts["tolerance"])
        emit(out, check="pass" if ok else "fail")
        return EXIT_OK if ok else EXIT_CHECK
    return EXIT_OK


HANDLERS = {
    "validate-params": cmd_validate_params,
    "nsoliton-eval": cmd_nsoliton_eval,
    "perturbed-eval": cmd_perturbed_eval,
    "residual": cmd_residual,
    "lax-check": cmd_lax_check,
    "asymptotics": cmd_asymptotics,
    "shift-table": cmd_shift_table,
    "evolve-cn": cmd_evolve_cn,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (dotted key, JSON value); repeatable")
        p.add_argument("--output", "-o", help="output CSV path")
        p.add_argument("--lambdas", type=float, nargs="*", help="spectral points")
        p.add_argument("--mus0", type=float, nargs="*", help="initial norming constants")
        p.add_argument("--tol", type=float, help="fixed-point tolerance")
        p.add_argument("--seed", type=int, help="seed for randomized controls")
        p.add_argument("--check", action="store_true", help="exit 4 when the command's tolerance check fails")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {"lambdas": args.lambdas, "mus0": args.mus0, "output": args.output,
             "solver.tol": args.tol, "seed": args.seed}
    try:
        cfg = load_config(args.config, args.overrides, flags)
        return HANDLERS[args.command](cfg, args, out)
    except ContractionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        emit(out, status="diverged", ratio=exc.ratio)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())
