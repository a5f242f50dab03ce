"""Default-fraction metrics, budget sweeps and report files."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .influence import EmptyFailedSetError, ThresholdModel, reduce_to_influence
from .infmax import ALGORITHMS, InterventionPlan, brute_force_optimum
from .network import EconomicNetwork, apply_intervention, solve_equilibrium
from .scenarios import THRESHOLD_STREAM, apply_shock, substream_seed

DEFAULT_QUANTILES = (0.1, 0.2, 0.4, 0.6, 1.0)
# percentage TVaR reductions published for the WIOD 2014 network at a 1% budget
REFERENCE_REDUCTION_PCT = {0.1: 23.0, 0.2: 29.0, 0.4: 36.0, 0.6: 40.0, 1.0: 42.0}


class EmptyTailError(ValueError):
    pass


@dataclass
class StressReport:
    budgets: np.ndarray
    default_counts: np.ndarray  # (scenarios, budgets)
    n_firms: int
    meta: dict = field(default_factory=dict)

    @property
    def default_fractions(self) -> np.ndarray:
        return self.default_counts / self.n_firms

    @property
    def n_scenarios(self) -> int:
        return self.default_counts.shape[0]

    def baseline(self) -> np.ndarray:
        zero = np.flatnonzero(self.budgets == 0)
        if zero.size == 0:
            raise ValueError("report has no zero-budget column")
        return self.default_fractions[:, zero[0]]

    def tvar_table(self, quantiles=DEFAULT_QUANTILES) -> dict[tuple[float, float], float]:
        base = self.baseline()
        return {(q, float(b)): tvar(self.default_fractions[:, j], base, q)
                for q in quantiles for j, b in enumerate(self.budgets)}


def value_at_risk(samples, q: float) -> float:
    """Level exceeded by the worst q-fraction of samples.

    The ceil(q N)-th largest sample, so q = 1 returns the minimum.
    """
    s = np.sort(np.asarray(samples, float))[::-1]
    if s.size == 0:
        raise EmptyTailError("no samples")
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    j = max(1, math.ceil(q * s.size - 1e-9))
    return float(s[j - 1])


def tvar(samples, baseline, q: float) -> float:
    """Mean of ``samples`` over the scenarios in the q-tail of ``baseline``."""
    samples = np.asarray(samples, float)
    baseline = np.asarray(baseline, float)
    if samples.shape != baseline.shape:
        raise ValueError("samples and baseline must be paired")
    if samples.size == 0:
        raise EmptyTailError("empty conditioning set")
    tail = baseline >= value_at_risk(baseline, q)
    return float(samples[tail].mean())


def _optimizer(name: str) -> Callable[..., InterventionPlan]:
    if name == "brute":
        return lambda inst, model, budget, replicates, seed: brute_force_optimum(inst, model, budget)
    try:
        return ALGORITHMS[name]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}") from None


def scenario_defaults(net: EconomicNetwork, gross: np.ndarray, budgets_abs: np.ndarray,
                      optimizer: str, model: ThresholdModel, replicates: int,
                      seed: int) -> np.ndarray:
    """Post-intervention default counts of one shocked network, one per budget.

    Budgets are taken in increasing order and a plan found for a smaller
    budget is kept whenever it beats the plan found for a larger one, so the
    counts never increase with the budget.
    """
    snet = apply_shock(net, gross)
    eq0 = solve_equilibrium(snet)
    out = np.full(len(budgets_abs), eq0.n_failed, dtype=int)
    if eq0.n_failed == 0:
        return out
    inst = reduce_to_influence(snet, eq0)
    run = _optimizer(optimizer)
    best = eq0.n_failed
    for j in np.argsort(budgets_abs, kind="stable"):
        b = float(budgets_abs[j])
        if b > 0:
            plan = run(inst, model, b, replicates, seed)
            best = min(best, apply_intervention(snet, plan.gamma(inst, snet.n)).n_failed)
        out[j] = best
    return out


def budget_sweep(net: EconomicNetwork, shocks: np.ndarray, budgets, optimizer: str = "discount-frac-cost",
                 model: ThresholdModel | None = None, seed: int = 0, replicates: int = 1000,
                 workers: int = 1, meta: dict | None = None) -> StressReport:
    """Default counts for every shock scenario under each intervention budget.

    Budgets are fractions of the total initial asset value of ``net``.
    """
    model = ThresholdModel.fixed() if model is None else model
    budgets = np.asarray(budgets, float)
    if np.any(budgets < 0):
        raise ValueError("budgets must be nonnegative")
    total_assets = float(net.p.sum())
    budgets_abs = budgets * total_assets
    net.solve(np.zeros(net.n))  # factorize once before sharing across threads

    def one(i):
        return scenario_defaults(net, shocks[i], budgets_abs, optimizer, model, replicates,
                                 substream_seed(seed, THRESHOLD_STREAM, i))

    idx = range(len(shocks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, idx))
    else:
        rows = [one(i) for i in idx]
    counts = np.array(rows, dtype=int).reshape(len(shocks), len(budgets))
    info = {"optimizer": optimizer, "threshold_model": model.kind.value,
            "band_halfwidth": model.band_halfwidth, "seed": seed, "replicates": replicates,
            "scenarios": len(shocks), "n_firms": net.n, "total_initial_assets": total_assets,
            "budgets": budgets.tolist()}
    info.update(meta or {})
    return StressReport(budgets, counts, net.n, info)


# -- files -----------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, meta: dict, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _budget_label(b: float) -> str:
    return f"b{b:g}"


def bin_edges(bin_width: float) -> np.ndarray:
    nbins = int(round(1.0 / bin_width))
    if nbins < 1 or abs(nbins * bin_width - 1.0) > 1e-9:
        raise ValueError("bin width must divide 1")
    return np.linspace(0.0, 1.0, nbins + 1)


def export_histograms(report: StressReport, out_dir: str | Path,
                      bin_width: float = 0.01) -> dict[str, Path]:
    """Write 1-D, 2-D and defaults-averted histogram tables as CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    edges = bin_edges(bin_width)
    fr = report.default_fractions
    N = report.n_scenarios
    meta = dict(report.meta, bin_width=bin_width)

    counts = [np.histogram(fr[:, j], edges)[0] for j in range(len(report.budgets))]
    header = ["bin_lo", "bin_hi"]
    for b in report.budgets:
        header += [f"count_{_budget_label(b)}", f"density_{_budget_label(b)}"]
    rows = []
    for i in range(len(edges) - 1):
        row = [_fmt(edges[i]), _fmt(edges[i + 1])]
        for c in counts:
            row += [int(c[i]), _fmt(c[i] / (N * bin_width)) if N else "0.0"]
        rows.append(row)
    paths = {"hist_1d": _write_csv(out / "hist_1d.csv", meta, header, rows)}

    rows = [[_fmt(b), _fmt(edges[i]), _fmt(edges[i + 1]), int(c[i])]
            for b, c in zip(report.budgets, counts) for i in range(len(edges) - 1)]
    paths["hist_2d"] = _write_csv(out / "hist_2d.csv", meta,
                                  ["budget", "bin_lo", "bin_hi", "count"], rows)

    rows = []
    if np.any(report.budgets == 0):
        base = report.baseline()
        for j, b in enumerate(report.budgets):
            if b == 0:
                continue
            averted = np.clip(base - fr[:, j], 0.0, 1.0)
            c = np.histogram(averted, edges)[0]
            rows += [[_fmt(b), _fmt(edges[i]), _fmt(edges[i + 1]), int(c[i]),
                      _fmt(c[i] / (N * bin_width)) if N else "0.0"]
                     for i in range(len(edges) - 1)]
    paths["averted"] = _write_csv(out / "averted.csv", meta,
                                  ["budget", "bin_lo", "bin_hi", "count", "density"], rows)
    return paths


def write_report(report: StressReport, out_dir: str | Path, quantiles=DEFAULT_QUANTILES,
                 bin_width: float = 0.01) -> dict[str, Path]:
    """Per-scenario table, TVaR table, histograms and a JSON summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = [_budget_label(b) for b in report.budgets]
    header = (["scenario"] + [f"defaults_{l}" for l in labels]
              + [f"fraction_{l}" for l in labels])
    rows = [[i] + [int(c) for c in report.default_counts[i]]
            + [_fmt(f) for f in report.default_fractions[i]] for i in range(report.n_scenarios)]
    paths = {"scenarios": _write_csv(out / "scenarios.csv", report.meta, header, rows)}

    table = report.tvar_table(quantiles) if report.n_scenarios else {}
    rows = []
    for (q, b), t in table.items():
        t0 = table[(q, 0.0)] if (q, 0.0) in table else float("nan")
        red = 100.0 * (t0 - t) / t0 if t0 > 0 else 0.0
        ref = REFERENCE_REDUCTION_PCT.get(q) if math.isclose(b, 0.01) else None
        rows.append([_fmt(q), _fmt(b), _fmt(t), _fmt(red), "" if ref is None else _fmt(ref)])
    paths["tvar"] = _write_csv(out / "tvar.csv", report.meta,
                               ["q", "budget", "tvar", "reduction_pct", "reference_reduction_pct"],
                               rows)
    paths.update(export_histograms(report, out, bin_width))
    summary = {"meta": report.meta,
               "mean_default_fraction": {l: float(report.default_fractions[:, j].mean())
                                         for j, l in enumerate(labels)} if report.n_scenarios else {},
               "files": sorted(p.name for p in paths.values())}
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["report"] = out / "report.json"
    return paths
