"""``ficlab`` command line: FIC tables, CD curves, model averaging and simulations."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import datasets, svgplot
from .averaging import KINDS, WeightScheme, averaged_estimate, limit_distribution_sample, weights
from .cdfic import RmseCD
from .exceptions import ConfigError, FitError, NumericalFailure
from .ficscores import fic_table
from .glmfit import FOCUS_KINDS, FocusSpec, fit_all, fit_wide
from .limitcore import LimitExperiment, SubmodelMask, all_masks, geometry, requires, size_order
from .outputs import fmt6, write_cd_curve, write_json
from .risklab import (DEFAULT_DELTA_AXIS, DEFAULT_ETA_GRID, DEFAULT_PHI_GRID, HarnessConfig,
                      finite_sample_harness, narrow_wide_risk, phi_risk, q2_riskmap, read_config)

EXIT_OK, EXIT_CONFIG, EXIT_FIT, EXIT_IO = 0, 2, 3, 4

PRESETS = ("cape-clear", "mrs-jones")


# -- parsing helpers --------------------------------------------------------

def floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"expected a list of numbers, got {text!r}") from None


def names(text: str | None) -> tuple[str, ...]:
    return tuple(v.strip() for v in str(text).split(",") if v.strip()) if text else ()


def grid(text: str) -> np.ndarray:
    """``lo:hi:n`` for an evenly spaced grid, otherwise a list of values."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid must be lo:hi:n, got {text!r}")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise ConfigError("grid needs at least one point")
        return np.linspace(lo, hi, n)
    g = np.array(floats(text))
    if g.size == 0:
        raise ConfigError("empty grid")
    if g.size > 1 and np.any(np.diff(g) <= 0):
        raise ConfigError("grid must be strictly increasing")
    return g


def seed_arg(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace, path) -> None:
    """Override parsed flags with ``key = value`` entries from ``path``."""
    cfg = read_config(path)
    actions = {a.dest: a for a in _all_actions(parser, args)}
    for key, val in cfg.items():
        if key not in actions:
            raise ConfigError(f"{path}: unknown key {key!r}")
        act = actions[key]
        if isinstance(act, argparse._StoreTrueAction):
            setattr(args, key, val.lower() in ("1", "true", "yes", "on"))
        elif isinstance(act, argparse._AppendAction):
            setattr(args, key, [v.strip() for v in val.split(";") if v.strip()])
        else:
            try:
                setattr(args, key, act.type(val) if act.type else val)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"{path}: bad value for {key}: {exc}") from None
            if act.choices is not None and getattr(args, key) not in act.choices:
                raise ConfigError(f"{path}: {key} must be one of {list(act.choices)}")


def _all_actions(parser, args):
    out = list(parser._actions)
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            for name, sub in a.choices.items():
                if name in (getattr(args, "command", None), getattr(args, "sub", None)):
                    out += _all_actions(sub, args)
    return out


# -- analysis commands ------------------------------------------------------

def _add_analysis_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--preset", choices=PRESETS, help="bundled example (data, focus, admissibility)")
    g.add_argument("--data", help="CSV file with a header row")
    g.add_argument("--response")
    g.add_argument("--protected", help="comma-separated protected columns (intercept added unless --no-intercept)")
    g.add_argument("--open", dest="open_", help="comma-separated open columns")
    g.add_argument("--interact", action="append", default=[], help="a:b adds column a_x_b (repeatable)")
    g.add_argument("--no-intercept", dest="no_intercept", action="store_true")
    g.add_argument("--family", choices=("linear", "logistic", "poisson"))
    g.add_argument("--gamma0", help="null values for the open parameters (default zeros)")
    f = p.add_argument_group("focus")
    f.add_argument("--focus-kind", dest="focus_kind", choices=[k for k in FOCUS_KINDS if k != "custom"])
    f.add_argument("--x0", help="protected covariate point, intercept entry included")
    f.add_argument("--z0", help="open covariate point")
    f.add_argument("--threshold", type=float)
    f.add_argument("--habitats", type=float, default=15.0, help="habitat count for the cape-clear preset")
    m = p.add_argument_group("models and scores")
    m.add_argument("--require", action="append", default=[],
                   help="dep:parent, open column dep only allowed with parent (names or 1-based indices)")
    m.add_argument("--models", help="comma-separated 0/1 codes restricting the candidate list")
    m.add_argument("--rank-by", dest="rank_by", choices=("u", "t", "m", "q"), default="t")
    m.add_argument("--quantile", type=float, default=0.5, help="level for quantile-FIC (rank-by q)")
    m.add_argument("--ci-level", dest="ci_level", type=float, default=0.8)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="ficlab_out", help="output directory")
    p.add_argument("--config", help="key = value file overriding flags")


def _resolve_index(token: str, open_names) -> int:
    if token.isdigit():
        j = int(token) - 1
        if not 0 <= j < len(open_names):
            raise ConfigError(f"open index {token} out of range")
        return j
    if token not in open_names:
        raise ConfigError(f"{token!r} is not an open column")
    return open_names.index(token)


def build_problem(args):
    """Data, focus and candidate masks from parsed arguments."""
    admissible = []
    if args.preset == "mrs-jones":
        data = datasets.birthwt_dataset()
        focus = datasets.mrs_jones_focus()
    elif args.preset == "cape-clear":
        data = datasets.bird_dataset(args.data)
        focus = datasets.cape_clear_focus(args.habitats)
        admissible.append(datasets.bird_admissible())
    else:
        if not (args.data and args.response and args.family and args.open_):
            raise ConfigError("--data, --response, --family and --open are required without --preset")
        table = datasets.read_csv(args.data)
        for spec in args.interact:
            a, _, b = spec.partition(":")
            table = table.with_interaction(a.strip(), b.strip())
        gamma0 = floats(args.gamma0) if args.gamma0 else None
        data = table.design(args.response, names(args.protected), names(args.open_), args.family,
                            not args.no_intercept, gamma0)
        if not (args.focus_kind and args.x0 is not None and args.z0 is not None):
            raise ConfigError("--focus-kind, --x0 and --z0 are required without --preset")
        focus = FocusSpec(args.focus_kind, floats(args.x0), floats(args.z0), args.threshold)
    for spec in args.require:
        dep, _, parent = spec.partition(":")
        admissible.append(requires(_resolve_index(dep.strip(), data.z_names),
                                   _resolve_index(parent.strip(), data.z_names)))
    focus.check(data)
    rule = (lambda m: all(r(m) for r in admissible)) if admissible else None
    masks = size_order(all_masks(data.q, rule))
    if args.models:
        wanted = [SubmodelMask.from_label(c) for c in names(args.models)]
        for w in wanted:
            if w.q != data.q:
                raise ConfigError(f"model code {w.code} has the wrong length")
        keep = {w.bits for w in wanted}
        masks = [m for m in masks if m.bits in keep]
        if not masks:
            raise ConfigError("no admissible model among --models")
    return data, focus, masks


def _check_levels(args):
    if not 0 < args.quantile < 1:
        raise ConfigError("--quantile must be in (0, 1)")
    if not 0 < args.ci_level < 1:
        raise ConfigError("--ci-level must be in (0, 1)")


def _run_fits(args):
    _check_levels(args)
    data, focus, masks = build_problem(args)
    bg = fit_wide(data, focus)
    fits, errors = fit_all(data, masks, focus, args.workers)
    for m, exc in errors.items():
        print(f"warning: model {m.code} failed: {exc}", file=sys.stderr)
    if not fits:
        raise FitError("every candidate model failed to fit")
    ok = {f.S.bits for f in fits}
    masks = [m for m in masks if m.bits in ok]
    rank_by = "q" if args.rank_by in ("m", "q") else args.rank_by
    level = 0.5 if args.rank_by == "m" else args.quantile
    table = fic_table(bg, fits, masks, rank_by=rank_by, quantile=level, ci_level=args.ci_level,
                      open_names=data.z_names, focus=focus.description or focus.kind)
    return data, bg, fits, masks, table


def cmd_fic(args) -> int:
    data, bg, fits, masks, table = _run_fits(args)
    out = Path(args.out)
    (out / "cd").mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "fic_table.csv")
    table.to_json(out / "fic_table.json")
    exp = bg.limit_experiment()
    for m in masks:
        write_cd_curve(out / "cd" / f"{m.code}.csv", RmseCD.from_geometry(geometry(exp, m), exp.D, bg.n), m.code)
    recs = table.records
    x = np.array([table.ranking_score(r) for r in recs])
    root_x = np.sqrt(np.maximum(x, 0.0) / bg.n)
    colors = ["#d62728" if r.S.is_wide else "#1f77b4" if r.S.is_narrow else
              "#2ca02c" if r.rank == 1 else "#000000" for r in recs]
    svgplot.write(out / "fic_plot.svg", svgplot.fic_plot(
        root_x, [r.mu_hat for r in recs], [r.ci_lo for r in recs], [r.ci_hi for r in recs],
        [r.mu_lo for r in recs], [r.mu_hi for r in recs], [r.S.code for r in recs], colors,
        xlabel="root-FIC", ylabel="focus estimate", title=table.focus))
    print(f"focus: {table.focus}   n = {bg.n}   wide estimate = {fmt6(bg.mu_hat)}")
    print(table.format())
    w = table.winner
    print(f"winner: {w.S.label}  estimate {fmt6(w.mu_hat)}")
    return EXIT_OK


def cmd_cd(args) -> int:
    data, bg, fits, masks, table = _run_fits(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = bg.limit_experiment()
    print(f"{'model':<{max(6, 2 * data.q)}}  {'pointmass':>10}  {'median':>10}  {'ci_lo':>10}  {'ci_hi':>10}")
    curves = {}
    for m in masks:
        cd = RmseCD.from_geometry(geometry(exp, m), exp.D, bg.n)
        write_cd_curve(out / f"cd_{m.code}.csv", cd, m.code)
        lo, hi = cd.interval(args.ci_level)
        print(f"{m.label:<{max(6, 2 * data.q)}}  {fmt6(cd.pointmass):>10}  {fmt6(cd.quantile_rmse(0.5)):>10}  "
              f"{fmt6(lo):>10}  {fmt6(hi):>10}")
        curves[m.code] = cd
    hi = max(cd.quantile_rmse(0.999) for cd in curves.values())
    lo = min(cd.min_rmse for cd in curves.values())
    rho = np.linspace(lo, hi, 400)
    svgplot.write(out / "cd_curves.svg", svgplot.line_plot(
        rho, {k: cd.cdf_rmse(rho) for k, cd in curves.items()}, "rmse", "confidence", table.focus, step=False))
    return EXIT_OK


def cmd_average(args) -> int:
    data, bg, fits, masks, table = _run_fits(args)
    kind = args.scheme.replace("-", "_")
    score = "m" if args.score == "median" else args.score
    table_w = None
    if kind == "custom":
        if not args.weights:
            raise ConfigError("custom scheme needs --weights code=w,...")
        table_w = {}
        for item in names(args.weights):
            code, _, w = item.partition("=")
            table_w[code.strip().replace(" ", "")] = float(w)
    screen = (args.screen_threshold**2 * bg.n, args.screen_cutoff) if args.screen_threshold is not None else None
    scheme = WeightScheme(kind, lam=args.lam, score=score, level=args.quantile, table=table_w, screen=screen)
    exp = bg.limit_experiment()
    w = weights(scheme, exp, masks)
    est = averaged_estimate(w, fits_in_order(fits, masks))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "scheme": scheme.label, "lambda": args.lam, "score": score, "estimate": est, "n": bg.n,
        "focus": table.focus, "weights": {m.code: float(x) for m, x in zip(masks, w)},
        "estimates": {f.S.code: f.mu_hat for f in fits_in_order(fits, masks)},
    }
    write_json(out / "average.json", report)
    for m, x, f in zip(masks, w, fits_in_order(fits, masks)):
        print(f"{m.label}  weight {fmt6(float(x)):>10}  estimate {fmt6(f.mu_hat):>10}")
    print(f"averaged estimate ({scheme.label}): {fmt6(est)}")
    return EXIT_OK


def fits_in_order(fits, masks):
    by = {f.S.bits: f for f in fits}
    return [by[m.bits] for m in masks]


# -- simulate -----------------------------------------------------------------

def _sim_common(p):
    p.add_argument("--seed", type=seed_arg, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--draws", type=int)
    p.add_argument("--out", default="ficlab_out")
    p.add_argument("--config", help="key = value file overriding flags")


def sim_phi_risk(args) -> int:
    schemes = list(names(args.scheme))
    g = grid(args.phi_grid) if args.phi_grid else DEFAULT_PHI_GRID
    curve = phi_risk(schemes, g, args.draws or 100_000, args.seed, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out / "phi_risk.csv")
    series = {s: curve.values[s] for s in schemes}
    series["2+4phi"] = 2 + 4 * curve.grid
    svgplot.write(out / "phi_risk.svg", svgplot.line_plot(curve.grid, series, "phi", "risk"))
    for s in schemes:
        for x, v, e in zip(curve.grid, curve.values[s], curve.se[s]):
            print(f"{s}  phi={fmt6(float(x))}  risk={fmt6(float(v))}  se={fmt6(float(e))}")
    return EXIT_OK


def sim_narrow_wide(args) -> int:
    schemes = list(names(args.scheme))
    g = grid(args.eta_grid) if args.eta_grid else DEFAULT_ETA_GRID
    curve = narrow_wide_risk(schemes, g, args.draws or 100_000, args.seed, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out / "narrow_wide.csv")
    write_json(out / "narrow_wide_meta.json", curve.meta)
    svgplot.write(out / "narrow_wide.svg", svgplot.line_plot(
        curve.grid, {s: np.sqrt(curve.values[s]) for s in schemes}, "eta", "root risk"))
    for s in schemes:
        print(f"{s}  cutoff={fmt6(curve.meta['cutoffs'][s])}")
    return EXIT_OK


def sim_q2_map(args) -> int:
    schemes = list(names(args.scheme))
    d1 = grid(args.delta_grid) if args.delta_grid else DEFAULT_DELTA_AXIS
    omega, kappa = floats(args.omega), floats(args.kappa)
    if len(omega) != 2 or len(kappa) != 2:
        raise ConfigError("--omega and --kappa need two values")
    rmap = q2_riskmap(omega, kappa, d1, None, schemes, args.draws or 2000, args.seed, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rmap.to_csv(out / "q2_map.csv")
    svgplot.write(out / "q2_winner.svg", svgplot.heatmap(rmap.d1, rmap.d2, rmap.winner, schemes, title="winner"))
    win = np.bincount(rmap.winner.ravel(), minlength=len(schemes)) / rmap.winner.size
    for s, f in zip(schemes, win):
        print(f"{s}  winning share={fmt6(float(f))}")
    return EXIT_OK


def sim_harness(args) -> int:
    keys = ("n", "beta", "gamma", "sigma", "corr", "x0", "z0", "ci_level", "variant", "quantile")
    cfg = HarnessConfig.from_mapping({k: getattr(args, k) for k in keys if getattr(args, k) is not None})
    res = finite_sample_harness(cfg, args.rounds, args.seed, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "harness.csv")
    res.to_json(out / "harness.json")
    print(f"rounds used {res.n_rounds}, discarded {res.n_discarded}")
    print(f"{'model':<6} {'in_out':<{2 * cfg.q}} {'true_rmse':>10} {'root_fic':>10} {'coverage':>9} {'winning':>8}")
    for r in res.summary_rows():
        cov = "--" if np.isnan(r["coverage"]) else fmt6(r["coverage"])
        print(f"{r['model']:<6} {r['in_out']:<{2 * cfg.q}} {fmt6(r['true_rmse']):>10} {fmt6(r['avg_root_fic']):>10} "
              f"{cov:>9} {fmt6(r['winning']):>8}")
    return EXIT_OK


def sim_limit_density(args) -> int:
    omega = np.array(floats(args.omega))
    delta = np.array(floats(args.delta))
    q = omega.size
    Qflat = floats(args.Q) if args.Q else np.eye(q).ravel()
    Q = np.diag(Qflat) if len(Qflat) == q else np.reshape(Qflat, (q, q)) if len(Qflat) == q * q else None
    if Q is None or delta.size != q:
        raise ConfigError("omega, delta and Q dimensions disagree")
    exp = LimitExperiment(args.tau0, omega, Q)
    kind = args.scheme.replace("-", "_")
    score = "m" if args.score == "median" else args.score
    scheme = WeightScheme(kind, lam=args.lam, score=score, level=args.quantile)
    res = limit_distribution_sample(exp, delta, scheme, args.draws or 100_000, args.seed, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"tau0": args.tau0, "omega": omega.tolist(), "delta": delta.tolist(), "Q": Q.tolist(), "seed": args.seed}
    res.to_json(out / "limit_density.json", extra)
    if args.save_draws:
        res.to_csv(out / "limit_draws.csv")
    print(f"{scheme.label}  rmse={fmt6(res.rmse)}  se={fmt6(res.rmse_se)}  mean={fmt6(res.mean)}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ficlab", description="Focused information criteria with confidence distributions.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fic", help="FIC table, CD curves and FIC plot")
    _add_analysis_args(f)
    f.set_defaults(func=cmd_fic)

    c = sub.add_parser("cd", help="confidence distributions for the candidate rmses")
    _add_analysis_args(c)
    c.set_defaults(func=cmd_cd)

    a = sub.add_parser("average", help="FIC-weighted model average")
    _add_analysis_args(a)
    a.add_argument("--scheme", default="exp_fixed_lambda", choices=list(KINDS) + [k.replace("_", "-") for k in KINDS])
    a.add_argument("--lam", type=float, default=1.0)
    a.add_argument("--score", default="m", choices=("u", "t", "m", "median", "q"))
    a.add_argument("--weights", help="custom weights, code=w,...")
    a.add_argument("--screen-threshold", dest="screen_threshold", type=float,
                   help="keep models whose CD at this root-mse is at least --screen-cutoff")
    a.add_argument("--screen-cutoff", dest="screen_cutoff", type=float, default=0.5)
    a.set_defaults(func=cmd_average)

    s = sub.add_parser("simulate", help="risk studies and limit distributions")
    ssub = s.add_subparsers(dest="sub", required=True)

    pr = ssub.add_parser("phi-risk")
    _sim_common(pr)
    pr.add_argument("--scheme", default="u,t,m")
    pr.add_argument("--phi-grid", dest="phi_grid")
    pr.set_defaults(func=sim_phi_risk)

    nw = ssub.add_parser("narrow-wide")
    _sim_common(nw)
    nw.add_argument("--scheme", default="u,median,q0.25,wide")
    nw.add_argument("--eta-grid", dest="eta_grid")
    nw.set_defaults(func=sim_narrow_wide)

    qm = ssub.add_parser("q2-map")
    _sim_common(qm)
    qm.add_argument("--scheme", default="u,t,m")
    qm.add_argument("--omega", default="1,1")
    qm.add_argument("--kappa", default="1,1")
    qm.add_argument("--delta-grid", dest="delta_grid")
    qm.set_defaults(func=sim_q2_map)

    hs = ssub.add_parser("harness")
    _sim_common(hs)
    hs.add_argument("--rounds", type=int, default=1000)
    for k in ("n", "beta", "gamma", "sigma", "corr", "x0", "z0", "variant"):
        hs.add_argument(f"--{k}")
    hs.add_argument("--ci-level", dest="ci_level")
    hs.add_argument("--quantile")
    hs.set_defaults(func=sim_harness)

    ld = ssub.add_parser("limit-density")
    _sim_common(ld)
    ld.add_argument("--scheme", default="always_wide", choices=list(KINDS) + [k.replace("_", "-") for k in KINDS])
    ld.add_argument("--lam", type=float, default=1.0)
    ld.add_argument("--score", default="m", choices=("u", "t", "m", "median", "q"))
    ld.add_argument("--quantile", type=float, default=0.5)
    ld.add_argument("--tau0", type=float, default=0.1357)
    ld.add_argument("--omega", default="1,1,1")
    ld.add_argument("--delta", default="0.3,-0.1,1.5")
    ld.add_argument("--Q", help="q diagonal entries or q*q matrix entries (default identity)")
    ld.add_argument("--save-draws", dest="save_draws", action="store_true")
    ld.set_defaults(func=sim_limit_density)
    return p


VECTOR_FLAGS = ("--phi-grid", "--eta-grid", "--delta-grid", "--omega", "--kappa", "--delta", "--beta",
                "--gamma", "--corr", "--x0", "--z0", "--gamma0", "--Q")


def _glue_negative(argv: list[str]) -> list[str]:
    """Join ``--flag -1,2`` into ``--flag=-1,2`` so argparse does not read the value as an option."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in VECTOR_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-") and not argv[i + 1].startswith("--"):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(_glue_negative(list(sys.argv[1:] if argv is None else argv)))
    try:
        if getattr(args, "config", None):
            apply_config(parser, args, args.config)
        if getattr(args, "workers", 1) < 1:
            raise ConfigError("--workers must be at least 1")
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, NumericalFailure) as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
