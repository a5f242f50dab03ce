import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contagion_im.ingest import (FIXTURE_3, FormatOptions, IOTable, IOTableError,
                                 build_network, bundled_fixture_path, fixture_table,
                                 load_io_table, parse_io_table, synthetic_io_table,
                                 write_io_table)
from contagion_im.network import market_values, solve_equilibrium, validate_network

TWO_SECTOR = """\
,A,B
A,0,10
B,20,0
VA,70,90
TOT_GO,90,100
"""


def test_fixture_read_back():
    t = fixture_table()
    assert t.labels == ["S1", "S2", "S3", "HH"]
    np.testing.assert_array_equal(t.flows[:3, :3], [[0, 10, 5], [20, 0, 10], [5, 15, 0]])
    np.testing.assert_array_equal(t.flows[3], 0)
    np.testing.assert_array_equal(t.value_added, [70, 90, 40, 0])
    np.testing.assert_array_equal(t.gross_output, [95, 115, 55, 0])
    assert t.ignored_rows == []


@pytest.mark.parametrize("text,msg", [
    (",A\nA,0\nVA,1\n", "missing TOT_GO"),
    (",A\nA,0\nTOT_GO,1\n", "missing VA"),
    ("", "empty"),
    (",A,B\nA,0,1\nB,1\nVA,1,1\nTOT_GO,1,1\n", "ragged row 3"),
    (",A\nA,x\nVA,1\nTOT_GO,1\n", "non-numeric cell 'x' at row 2"),
    (",A\nA,nan\nVA,1\nTOT_GO,1\n", "non-finite"),
    (",A,A\nA,0,0\nVA,1,1\nTOT_GO,1,1\n", "duplicate column"),
    (",A\nA,0\nVA,1\nTOT_GO,-1\n", "negative gross output"),
])
def test_parse_errors(text, msg):
    with pytest.raises(IOTableError, match=msg):
        parse_io_table(text)


def test_ignored_rows_and_options():
    text = ";;A;B\n;;x;y\nr;A;0;1\nr;B;2;0\ntax;;5;5\nVA;;7;8\nGO;;9;9\n"
    t = parse_io_table(text, FormatOptions(delimiter=";", header_rows=2, label_cols=2,
                                           go_label="GO", year="2014"))
    assert t.labels == ["A_x", "B_y"] and t.year == "2014"
    assert t.ignored_rows == ["r_A", "r_B", "tax"]
    np.testing.assert_array_equal(t.flows, 0)


def test_two_sector_network():
    net = build_network(parse_io_table(TWO_SECTOR), beta_factor=0.1)
    np.testing.assert_allclose(net.C, [[0, 0.1], [20 / 90, 0]], atol=1e-15)
    np.testing.assert_array_equal(net.D, np.eye(2))
    np.testing.assert_array_equal(net.p, [90, 100])
    np.testing.assert_allclose(net.beta, [7, 9])
    np.testing.assert_allclose(market_values(net, []) - net.theta, [70, 90], atol=1e-10)
    assert net.labels == ("A", "B")


def test_negative_flow_moves_to_transpose():
    text = ",A,B\nA,0,-10\nB,0,0\nVA,70,90\nTOT_GO,80,90\n"
    net = build_network(parse_io_table(text))
    # -10 from A to B is read as 10 from B to A
    np.testing.assert_allclose(net.C, [[0, 0], [10 / 80, 0]])


def test_zero_beta_factor():
    net = build_network(fixture_table(), beta_factor=0.0)
    np.testing.assert_array_equal(net.beta, 0)


def test_final_demand_column_dropped():
    net = build_network(fixture_table())
    assert net.labels == ("S1", "S2", "S3")
    np.testing.assert_allclose(net.C.sum(axis=0), [25 / 95, 25 / 115, 15 / 55])


def test_squeezed_column_without_value_added():
    text = ",A,B\nA,0,10\nB,20,0\nVA,70,-5\nTOT_GO,90,10\n"
    t = parse_io_table(text)
    # keep B by dropping the cutoff, then its column is scaled just below one
    net = build_network(t, va_cutoff=-np.inf)
    assert net.C[0, 1] == pytest.approx(1 - 1e-6)
    assert net.beta[1] == 0.0
    assert validate_network(net) == []


@st.composite
def _tables(draw):
    n = draw(st.integers(1, 7))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    flows = rng.random((n, n)) * (rng.random((n, n)) < 0.6) * 50
    flows[rng.random((n, n)) < 0.1] *= -1
    va = rng.uniform(1, 100, n)
    go = np.abs(flows).sum(axis=0) + va
    return IOTable([f"S{i}" for i in range(n)], flows, va, go)


@settings(max_examples=40, deadline=None)
@given(table=_tables(), beta_factor=st.floats(0, 1))
def test_built_networks_are_sound(table, beta_factor):
    net = build_network(table, beta_factor)
    assert validate_network(net) == []
    assert np.all(np.diag(net.C) == 0)
    eq = solve_equilibrium(net)
    assert eq.n_failed == 0
    np.testing.assert_allclose(eq.v - net.theta, table.value_added, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(net.beta, beta_factor * table.value_added)
    again = build_network(table, beta_factor)
    for name in ("C", "p", "theta", "beta"):
        np.testing.assert_array_equal(getattr(again, name), getattr(net, name))


def test_write_read_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    write_io_table(fixture_table(), path)
    back = load_io_table(path)
    t = fixture_table()
    assert back.labels == t.labels
    np.testing.assert_array_equal(back.flows, t.flows)
    np.testing.assert_array_equal(back.gross_output, t.gross_output)


def test_fixture_text_is_the_documented_layout():
    assert FIXTURE_3.splitlines()[0] == ",S1,S2,S3,HH"


def test_bundled_table_matches_generator():
    shipped = build_network(load_io_table(bundled_fixture_path()))
    fresh = build_network(synthetic_io_table())
    assert shipped.n == fresh.n == 200
    assert shipped.labels == fresh.labels
    for name in ("C", "p", "theta", "beta"):
        np.testing.assert_array_equal(getattr(shipped, name), getattr(fresh, name))
    assert solve_equilibrium(shipped).n_failed == 0
