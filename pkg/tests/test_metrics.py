import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_network
from contagion_im.influence import ThresholdModel
from contagion_im.metrics import (EmptyTailError, StressReport, bin_edges, budget_sweep,
                                  export_histograms, scenario_defaults, tvar, value_at_risk,
                                  write_report)
from contagion_im.network import solve_equilibrium
from contagion_im.scenarios import ShockSpec, apply_shock, sample_shocks

TEN = np.arange(1, 11) / 10


def _read(path):
    with open(path) as fh:
        first = fh.readline()
        assert first.startswith("# ")
        meta = json.loads(first[2:])
        rows = list(csv.reader(fh))
    return meta, rows[0], rows[1:]


def test_value_at_risk_hand_values():
    assert value_at_risk(TEN, 0.2) == 0.9
    assert value_at_risk(TEN, 0.1) == 1.0
    assert value_at_risk(TEN, 0.25) == 0.8
    assert value_at_risk(TEN, 1.0) == 0.1
    with pytest.raises(ValueError):
        value_at_risk(TEN, 0.0)
    with pytest.raises(EmptyTailError):
        value_at_risk([], 0.5)


def test_tvar_hand_values():
    assert tvar(TEN, TEN, 0.2) == pytest.approx(0.95)
    assert tvar(TEN, TEN, 0.4) == pytest.approx(0.85)
    assert tvar(TEN, TEN, 1.0) == pytest.approx(TEN.mean())
    # the tail is chosen by the baseline, the average is over the paired samples
    after = TEN / 2
    assert tvar(after, TEN, 0.2) == pytest.approx(0.475)
    # ties at the cut-off are all kept
    assert tvar([3, 2, 1, 0], [0.5, 0.5, 0.5, 0.1], 0.25) == pytest.approx(2.0)
    with pytest.raises(EmptyTailError):
        tvar([], [], 0.5)
    with pytest.raises(ValueError):
        tvar([1, 2], [1], 0.5)


@settings(max_examples=50, deadline=None)
@given(x=st.lists(st.floats(0, 1), min_size=1, max_size=40), q=st.floats(0.01, 1))
def test_tvar_self_conditioned_dominates_mean(x, q):
    x = np.array(x)
    t = tvar(x, x, q)
    assert x.mean() - 1e-12 <= t <= x.max() + 1e-12
    assert tvar(x, x, 1.0) == pytest.approx(x.mean())


def _toy():
    net = random_network(np.random.default_rng(11), 5, m=5, theta_range=(0.6, 0.9))
    shocks = sample_shocks(ShockSpec(count=100, seed=2, sigma=0.25), 5)
    return net, shocks


def test_zero_budget_is_baseline():
    net, shocks = _toy()
    rep = budget_sweep(net, shocks, [0.0])
    base = [solve_equilibrium(apply_shock(net, g)).n_failed for g in shocks]
    np.testing.assert_array_equal(rep.default_counts[:, 0], base)
    np.testing.assert_array_equal(rep.baseline(), np.array(base) / 5)
    assert rep.default_counts.sum() > 0


@pytest.mark.parametrize("algo", ["greedy-frac", "discount-frac", "discount-frac-cost", "brute"])
def test_large_budget_saves_everyone(algo):
    net, shocks = _toy()
    rep = budget_sweep(net, shocks[:20], [0.0, 100.0], optimizer=algo, replicates=1)
    assert rep.default_counts[:, 0].sum() > 0
    assert np.all(rep.default_counts[:, 1] == 0)


def test_sweep_monotone_and_thread_invariant():
    net, shocks = _toy()
    budgets = [0.0, 0.01, 0.05, 0.2]
    model = ThresholdModel.uniform_band(0.3)
    rep = budget_sweep(net, shocks, budgets, "greedy-frac", model, seed=4, replicates=20)
    assert np.all(np.diff(rep.default_counts, axis=1) <= 0)
    assert rep.default_counts[:, -1].sum() < rep.default_counts[:, 0].sum()
    again = budget_sweep(net, shocks, budgets, "greedy-frac", model, seed=4, replicates=20,
                         workers=3)
    np.testing.assert_array_equal(rep.default_counts, again.default_counts)
    assert rep.meta["threshold_model"] == again.meta["threshold_model"]
    assert rep.meta["scenarios"] == 100 and rep.meta["budgets"] == budgets


def test_scenario_defaults_unordered_budgets():
    net, shocks = _toy()
    g = next(s for s in shocks if solve_equilibrium(apply_shock(net, s)).n_failed >= 2)
    total = net.p.sum()
    a = scenario_defaults(net, g, np.array([0.2, 0.0, 0.05]) * total, "greedy-frac",
                          ThresholdModel.fixed(), 1, 0)
    b = scenario_defaults(net, g, np.array([0.0, 0.05, 0.2]) * total, "greedy-frac",
                          ThresholdModel.fixed(), 1, 0)
    np.testing.assert_array_equal(a, b[[2, 0, 1]])


def test_sweep_validation():
    net, shocks = _toy()
    with pytest.raises(ValueError):
        budget_sweep(net, shocks, [-0.1])
    with pytest.raises(ValueError):
        budget_sweep(net, shocks[:3], [0.0, 0.1], optimizer="nope")
    with pytest.raises(ValueError):
        StressReport(np.array([0.1]), np.zeros((2, 1), int), 5).baseline()


def test_bin_edges():
    e = bin_edges(0.01)
    assert len(e) == 101 and e[0] == 0.0 and e[-1] == 1.0
    with pytest.raises(ValueError):
        bin_edges(0.3)


def _report(counts, budgets=(0.0, 0.01), n=10):
    return StressReport(np.array(budgets), np.array(counts, int), n, {"seed": 0})


def test_histogram_single_scenario(tmp_path):
    rep = _report([[4, 2]])
    export_histograms(rep, tmp_path, bin_width=0.1)
    _, head, rows = _read(tmp_path / "hist_1d.csv")
    assert head == ["bin_lo", "bin_hi", "count_b0", "density_b0", "count_b0.01", "density_b0.01"]
    assert len(rows) == 10
    c0 = [int(r[2]) for r in rows]
    c1 = [int(r[4]) for r in rows]
    assert c0.index(1) == 4 and sum(c0) == 1
    assert c1.index(1) == 2 and sum(c1) == 1
    assert float(rows[4][3]) == pytest.approx(10.0)
    _, head, rows = _read(tmp_path / "averted.csv")
    assert [int(r[3]) for r in rows].index(1) == 2


def test_histogram_mass_and_coverage(tmp_path):
    rng = np.random.default_rng(0)
    base = rng.integers(0, 11, 57)
    after = np.minimum(base, rng.integers(0, 11, 57))
    rep = _report(np.c_[base, after])
    rep.default_counts[0] = [10, 10]  # a fraction of exactly 1 lands in the last bin
    meta, _, rows = _read(export_histograms(rep, tmp_path, 0.05)["hist_1d"])
    assert meta["bin_width"] == 0.05
    assert float(rows[0][0]) == 0.0 and float(rows[-1][1]) == 1.0
    for col in (2, 4):
        assert sum(int(r[col]) for r in rows) == 57
        assert sum(float(r[col + 1]) for r in rows) * 0.05 == pytest.approx(1.0)
    assert int(rows[-1][2]) >= 1
    _, _, rows2 = _read(tmp_path / "hist_2d.csv")
    assert len(rows2) == 2 * 20 and sum(int(r[3]) for r in rows2) == 2 * 57
    _, _, rows3 = _read(tmp_path / "averted.csv")
    assert sum(int(r[3]) for r in rows3) == 57


def test_write_report_files(tmp_path):
    rep = _report([[6, 3], [2, 2], [0, 0], [9, 4]])
    paths = write_report(rep, tmp_path)
    assert {p.name for p in paths.values()} == {"scenarios.csv", "tvar.csv", "hist_1d.csv",
                                                 "hist_2d.csv", "averted.csv", "report.json"}
    meta, head, rows = _read(paths["scenarios"])
    assert meta == {"seed": 0}
    assert head == ["scenario", "defaults_b0", "defaults_b0.01", "fraction_b0", "fraction_b0.01"]
    assert rows[3] == ["3", "9", "4", "0.9", "0.4"]
    _, head, rows = _read(paths["tvar"])
    assert head == ["q", "budget", "tvar", "reduction_pct", "reference_reduction_pct"]
    table = {(float(r[0]), float(r[1])): r for r in rows}
    assert len(table) == 10
    # worst 20% of 4 scenarios is the single worst one: 0.9 -> 0.4
    assert float(table[(0.2, 0.0)][2]) == pytest.approx(0.9)
    assert float(table[(0.2, 0.01)][2]) == pytest.approx(0.4)
    assert float(table[(0.2, 0.01)][3]) == pytest.approx(100 * 5 / 9)
    assert float(table[(0.2, 0.0)][3]) == 0.0
    assert table[(0.2, 0.01)][4] == "29.0" and table[(0.2, 0.0)][4] == ""
    summary = json.loads(paths["report"].read_text())
    assert summary["mean_default_fraction"]["b0"] == pytest.approx(0.425)
