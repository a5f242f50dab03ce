"""Command-line front end: ``contagion-im <command> ...``.

Exit codes: 0 success, 2 input error, 3 infeasible or empty result,
4 internal invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .influence import ThresholdModel, reduce_to_influence
from .infmax import ALGORITHMS, InstanceTooLargeError, PlanKind, brute_force_optimum, empty_plan
from .ingest import (FormatOptions, IOTableError, build_network, bundled_fixture_path,
                     fixture_table, load_io_table)
from .metrics import budget_sweep, write_report
from .network import EconomicNetwork, Mode, SingularSystemError, apply_intervention, solve_equilibrium
from .scenarios import ShockSpec, apply_shock, find_max_shock, sample_shocks

EXIT_OK, EXIT_INPUT, EXIT_EMPTY, EXIT_INTERNAL = 0, 2, 3, 4
THREADS_ENV = "CONTAGION_IM_THREADS"


class InputError(Exception):
    pass


def _dump(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _load_net(path: str) -> EconomicNetwork:
    try:
        return EconomicNetwork.load(path)
    except FileNotFoundError:
        raise InputError(f"network file not found: {path}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"cannot read network {path}: {exc}") from None


def read_shocks(path: str) -> np.ndarray:
    """Gross asset returns, one scenario per row.

    Columns named ``gross_<k>`` are used when present; otherwise every
    column except ``scenario`` is read. Lines starting with ``#`` are skipped.
    """
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    except FileNotFoundError:
        raise InputError(f"shock file not found: {path}") from None
    if len(rows) < 2:
        raise InputError(f"shock file {path} has no scenarios")
    head = rows[0]
    cols = [j for j, h in enumerate(head) if h.startswith("gross_")]
    if not cols:
        cols = [j for j, h in enumerate(head) if h != "scenario"]
    try:
        out = np.array([[float(r[j]) for j in cols] for r in rows[1:]])
    except (ValueError, IndexError):
        raise InputError(f"malformed shock file {path}") from None
    if np.any(~np.isfinite(out)) or np.any(out < 0):
        raise InputError("gross returns must be finite and nonnegative")
    return out


def write_shocks(gross: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario"] + [f"gross_{k}" for k in range(gross.shape[1])])
        for i, g in enumerate(gross):
            w.writerow([i] + [repr(float(x)) for x in g])


def _shocked(net: EconomicNetwork, shock: str | None, row: int) -> EconomicNetwork:
    if not shock:
        return net
    gross = read_shocks(shock)
    if not 0 <= row < len(gross):
        raise InputError(f"shock row {row} out of range (file has {len(gross)})")
    if gross.shape[1] != net.m:
        raise InputError(f"shock file has {gross.shape[1]} assets, network has {net.m}")
    return apply_shock(net, gross[row])


def _threshold_model(band: float) -> ThresholdModel:
    return ThresholdModel.uniform_band(band) if band > 0 else ThresholdModel.fixed()


def _budget(net: EconomicNetwork, value: float, absolute: bool) -> float:
    if value < 0:
        raise InputError("budget must be nonnegative")
    return value if absolute else value * float(net.p.sum())


# -- commands --------------------------------------------------------------------


def cmd_build(args) -> int:
    opts = FormatOptions(delimiter=args.delimiter, header_rows=args.header_rows,
                         label_cols=args.label_cols, va_label=args.va_label,
                         go_label=args.go_label, year=args.year)
    if args.fixture == "small":
        table = fixture_table()
    else:
        path = bundled_fixture_path() if args.fixture else args.input
        try:
            table = load_io_table(path, opts)
        except FileNotFoundError:
            raise InputError(f"input file not found: {path}") from None
    net = build_network(table, beta_factor=args.beta_factor, va_cutoff=args.va_cutoff)
    net.save(args.out)
    eq = solve_equilibrium(net)
    summary = {"nodes": net.n, "assets": net.m, "dropped": len(table.labels) - net.n,
               "ignored_rows": table.ignored_rows, "unshocked_defaults": eq.n_failed,
               "valid": True, "out": str(args.out)}
    _dump(summary, None)
    return EXIT_OK


def cmd_solve(args) -> int:
    net = _shocked(_load_net(args.net), args.shock, args.row)
    eq = solve_equilibrium(net, Mode(args.mode))
    out = {"mode": eq.mode.value, "defaults": eq.n_failed,
           "default_fraction": eq.n_failed / net.n, "failed": sorted(eq.failed),
           "total_market_value": float(eq.v.sum()), "iterations": eq.iterations}
    if args.per_firm:
        out["firms"] = [{"index": i, "label": net.labels[i], "book_value": float(eq.V[i]),
                         "market_value": float(eq.v[i]), "threshold": float(net.theta[i]),
                         "failed": i in eq.failed} for i in range(net.n)]
    _dump(out, args.out)
    return EXIT_OK


def cmd_intervene(args) -> int:
    net = _shocked(_load_net(args.net), args.shock, args.row)
    budget = _budget(net, args.budget, args.absolute)
    model = _threshold_model(args.band)
    eq0 = solve_equilibrium(net)
    if eq0.n_failed == 0:
        _dump({"algorithm": args.algo, "budget": budget, "defaults_before": 0,
               "defaults_after": 0, "plan": None}, args.out)
        print("no firm fails without intervention; nothing to do", file=sys.stderr)
        return EXIT_EMPTY
    inst = reduce_to_influence(net, eq0)
    if budget == 0:
        plan = empty_plan(inst, 0.0, algorithm=args.algo)
    elif args.algo == "brute":
        if model.is_random:
            raise InputError("--algo brute needs fixed thresholds (--band 0)")
        try:
            plan = brute_force_optimum(inst, model, budget,
                                       PlanKind.INTEGRAL if args.integral else PlanKind.FRACTIONAL)
        except InstanceTooLargeError as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_EMPTY
    else:
        plan = ALGORITHMS[args.algo](inst, model, budget, replicates=args.replicates,
                                     seed=args.seed)
    gamma = plan.gamma(inst, net.n)
    if gamma.sum() > budget + 1e-9 * max(1.0, budget):
        raise AssertionError("plan exceeds its budget")
    eq1 = apply_intervention(net, gamma)
    if eq1.n_failed > eq0.n_failed:
        raise AssertionError("intervention increased defaults")
    out = {"algorithm": args.algo, "budget": budget, "seed": args.seed,
           "band": args.band, "replicates": args.replicates,
           "defaults_before": eq0.n_failed, "defaults_after": eq1.n_failed,
           "saved": sorted(eq0.failed - eq1.failed), "failed_after": sorted(eq1.failed),
           "plan": plan.to_dict(inst)}
    _dump(out, args.out)
    return EXIT_OK


def _threads(value: int | None) -> int:
    if value is not None:
        return value
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer") from None


def cmd_stress(args) -> int:
    net = _load_net(args.net)
    try:
        budgets = [float(b) for b in args.budgets.split(",") if b.strip()]
    except ValueError:
        raise InputError(f"bad --budgets {args.budgets!r}") from None
    if not budgets or any(b < 0 for b in budgets):
        raise InputError("--budgets must be nonnegative fractions")
    if args.algo == "brute" and args.band > 0:
        raise InputError("--algo brute needs fixed thresholds (--band 0)")
    spec = ShockSpec(rho=args.rho, sigma=args.sigma, drift=args.drift, floor=args.floor,
                     count=args.scenarios, seed=args.seed)
    shocks = sample_shocks(spec, net.m)
    meta = {"rho": spec.rho, "sigma": spec.sigma, "drift": spec.drift, "floor": spec.floor,
            "net": Path(args.net).name}
    report = budget_sweep(net, shocks, budgets, args.algo, _threshold_model(args.band),
                          seed=args.seed, replicates=args.replicates,
                          workers=_threads(args.threads), meta=meta)
    fr = report.default_fractions
    if np.any(np.diff(fr[:, np.argsort(report.budgets, kind="stable")], axis=1) > 0):
        raise AssertionError("defaults increased with budget")
    out = Path(args.out_dir)
    write_report(report, out, bin_width=args.bin_width)
    if args.save_shocks:
        write_shocks(shocks, out / "shocks.csv")
    if report.n_scenarios and 0.0 in report.budgets:
        for (q, b), t in sorted(report.tvar_table().items()):
            print(f"TVaR q={q:g} budget={b:g}: {t:.4f}")
    return EXIT_OK


def cmd_maxshock(args) -> int:
    net = _load_net(args.net)
    budget = _budget(net, args.budget, args.absolute)
    try:
        res = find_max_shock(net, budget, exact=args.exact, max_exact_assets=args.max_exact_assets)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = {"budget": budget, "exact": res.exact, "assets": list(res.assets), "cost": res.cost,
           "defaults": res.defaults, "failed": sorted(res.equilibrium.failed)}
    _dump(out, args.out)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="contagion-im", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build a network JSON from an input-output table")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="input-output table CSV")
    src.add_argument("--fixture", nargs="?", const="small", choices=["small", "synthetic-200"],
                     help="bundled table: 3 sectors (default) or the 200-sector synthetic one")
    b.add_argument("--out", required=True)
    b.add_argument("--beta-factor", type=float, default=0.1)
    b.add_argument("--va-cutoff", type=float, default=1e-6)
    b.add_argument("--delimiter", default=",")
    b.add_argument("--header-rows", type=int, default=1)
    b.add_argument("--label-cols", type=int, default=1)
    b.add_argument("--va-label", default="VA")
    b.add_argument("--go-label", default="TOT_GO")
    b.add_argument("--year")
    b.set_defaults(func=cmd_build)

    s = sub.add_parser("solve", help="equilibrium failed set of a network")
    s.add_argument("--net", required=True)
    s.add_argument("--mode", choices=[m.value for m in Mode], default="best")
    s.add_argument("--shock", help="CSV of gross asset returns")
    s.add_argument("--row", type=int, default=0, help="scenario row of --shock")
    s.add_argument("--per-firm", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    i = sub.add_parser("intervene", help="choose bailout payments within a budget")
    i.add_argument("--net", required=True)
    i.add_argument("--shock")
    i.add_argument("--row", type=int, default=0)
    i.add_argument("--budget", type=float, required=True,
                   help="fraction of total initial asset value")
    i.add_argument("--absolute", action="store_true", help="read --budget as a currency amount")
    i.add_argument("--algo", choices=sorted(ALGORITHMS) + ["brute"], default="discount-frac-cost")
    i.add_argument("--integral", action="store_true", help="integral plan for --algo brute")
    i.add_argument("--band", type=float, default=0.0, help="threshold band half-width h")
    i.add_argument("--replicates", type=int, default=1000)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out")
    i.set_defaults(func=cmd_intervene)

    st = sub.add_parser("stress", help="Monte Carlo shocks swept over intervention budgets")
    st.add_argument("--net", required=True)
    st.add_argument("--scenarios", type=int, default=1000)
    st.add_argument("--budgets", default="0,0.001,0.005,0.01")
    st.add_argument("--rho", type=float, default=0.6)
    st.add_argument("--sigma", type=float, default=0.15)
    st.add_argument("--drift", type=float, default=-0.3)
    st.add_argument("--floor", type=float, default=0.0)
    st.add_argument("--algo", choices=sorted(ALGORITHMS) + ["brute"], default="discount-frac-cost")
    st.add_argument("--band", type=float, default=0.0)
    st.add_argument("--replicates", type=int, default=200)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    st.add_argument("--bin-width", type=float, default=0.01)
    st.add_argument("--out-dir", required=True)
    st.add_argument("--save-shocks", action="store_true", help="also write shocks.csv")
    st.set_defaults(func=cmd_stress)

    mx = sub.add_parser("maxshock", help="asset set whose wipe-out causes the most defaults")
    mx.add_argument("--net", required=True)
    mx.add_argument("--budget", type=float, required=True,
                    help="fraction of total initial asset value")
    mx.add_argument("--absolute", action="store_true")
    mx.add_argument("--exact", action="store_true")
    mx.add_argument("--max-exact-assets", type=int, default=20)
    mx.add_argument("--out")
    mx.set_defaults(func=cmd_maxshock)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, IOTableError, SingularSystemError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (AssertionError, RuntimeError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
