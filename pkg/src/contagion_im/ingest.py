"""Input-output tables (WIOD-style CSV) and network construction from them.

Expected layout, with the defaults of :class:`FormatOptions`::

    ,S1,S2,S3,FD1          <- header: one label per column (node)
    S1,0,10,5,30           <- flows from S1 to each column
    S2,...
    VA,70,90,40,0          <- value added row
    TOT_GO,100,120,60,0    <- gross output row

Columns without a matching row (final demand) get zero rows. Any other
labelled row (taxes, margins) is ignored and listed in ``IOTable.ignored_rows``.
Multi-row headers and multi-column row labels are joined with ``_``.
"""

from __future__ import annotations

import csv
import io
from importlib import resources
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import EconomicNetwork, dependency_matrix, validate_network


class IOTableError(ValueError):
    pass


@dataclass(frozen=True)
class FormatOptions:
    delimiter: str = ","
    header_rows: int = 1
    label_cols: int = 1
    va_label: str = "VA"
    go_label: str = "TOT_GO"
    year: str | None = None


@dataclass
class IOTable:
    labels: list[str]
    flows: np.ndarray
    value_added: np.ndarray
    gross_output: np.ndarray
    year: str | None = None
    ignored_rows: list[str] = field(default_factory=list)


def _number(cell: str, where: str) -> float:
    try:
        val = float(cell)
    except ValueError:
        raise IOTableError(f"non-numeric cell {cell!r} at {where}") from None
    if not np.isfinite(val):
        raise IOTableError(f"non-finite cell {cell!r} at {where}")
    return val


def parse_io_table(text: str, opts: FormatOptions = FormatOptions()) -> IOTable:
    rows = [r for r in csv.reader(io.StringIO(text), delimiter=opts.delimiter)
            if any(c.strip() for c in r)]
    if len(rows) <= opts.header_rows:
        raise IOTableError("empty table")
    width = len(rows[0])
    for lineno, r in enumerate(rows, 1):
        if len(r) != width:
            raise IOTableError(f"ragged row {lineno}: {len(r)} cells, expected {width}")
    lc = opts.label_cols
    header = rows[:opts.header_rows]
    labels = ["_".join(h[j].strip() for h in header if h[j].strip()) for j in range(lc, width)]
    if len(set(labels)) != len(labels):
        raise IOTableError("duplicate column labels")
    col = {lab: j for j, lab in enumerate(labels)}
    n = len(labels)
    flows = np.zeros((n, n))
    va = go = None
    ignored = []
    seen = set()
    for lineno, r in enumerate(rows[opts.header_rows:], opts.header_rows + 1):
        label = "_".join(c.strip() for c in r[:lc] if c.strip())
        if label == opts.va_label:
            va = np.array([_number(c, f"row {lineno}") for c in r[lc:]])
        elif label == opts.go_label:
            go = np.array([_number(c, f"row {lineno}") for c in r[lc:]])
        elif label in col:
            if label in seen:
                raise IOTableError(f"duplicate row {label!r}")
            seen.add(label)
            flows[col[label]] = [_number(c, f"row {lineno}") for c in r[lc:]]
        else:
            ignored.append(label)
    if go is None:
        raise IOTableError(f"missing {opts.go_label} row")
    if va is None:
        raise IOTableError(f"missing {opts.va_label} row")
    if np.any(go < 0):
        raise IOTableError("negative gross output")
    return IOTable(labels, flows, va, go, opts.year, ignored)


def load_io_table(path: str | Path, opts: FormatOptions = FormatOptions()) -> IOTable:
    return parse_io_table(Path(path).read_text(), opts)


def build_network(table: IOTable, beta_factor: float = 0.1,
                  va_cutoff: float = 1e-6) -> EconomicNetwork:
    """Turn an input-output table into a cross-holding network.

    Negative flows are moved to the transposed position, columns are scaled
    to sum to one together with value added, diagonals are zeroed, and nodes
    with value added below ``va_cutoff`` times the median are dropped. Each
    node holds one asset worth its gross output, its threshold is its
    unshocked market value minus value added, and its failure cost is
    ``beta_factor`` times value added.
    """
    F = np.asarray(table.flows, float)
    F = np.maximum(F, 0.0) + np.maximum(-F, 0.0).T
    va = np.asarray(table.value_added, float)
    inputs = F.sum(axis=0)
    total = inputs + np.maximum(va, 0.0)
    scale = np.zeros_like(total)
    has_va = (va > 0) & (total > 0)
    scale[has_va] = 1.0 / total[has_va]
    # no value added to absorb the slack: keep the column strictly below one
    squeeze = (va <= 0) & (inputs > 0)
    scale[squeeze] = (1.0 - 1e-6) / inputs[squeeze]
    C = F * scale[None, :]
    np.fill_diagonal(C, 0.0)

    positive = va[va > 0]
    floor = va_cutoff * np.median(positive) if positive.size else np.inf
    keep = np.flatnonzero(va >= floor)
    if keep.size == 0:
        raise IOTableError("no nodes left after the value-added cutoff")
    C = C[np.ix_(keep, keep)]
    va = va[keep]
    go = np.asarray(table.gross_output, float)[keep]
    labels = tuple(table.labels[i] for i in keep)

    n = len(keep)
    net = EconomicNetwork(C, np.eye(n), go, np.zeros(n), beta_factor * np.maximum(va, 0.0), labels)
    theta = dependency_matrix(net) @ go - va
    net = net.replace(theta=theta)
    problems = validate_network(net)
    if problems:
        raise IOTableError("constructed network is invalid: " + "; ".join(problems[:10]))
    return net


# -- synthetic tables ------------------------------------------------------------

FIXTURE_3 = """\
,S1,S2,S3,HH
S1,0,10,5,30
S2,20,0,10,40
S3,5,15,0,20
VA,70,90,40,0
TOT_GO,95,115,55,0
"""


def bundled_fixture_path() -> Path:
    """The 200-sector synthetic table shipped with the package."""
    return Path(str(resources.files("contagion_im") / "data" / "synthetic_io_200.csv"))


def fixture_table() -> IOTable:
    """Three sectors plus a household column; used for smoke tests."""
    return parse_io_table(FIXTURE_3)


def synthetic_io_table(n_regions: int = 5, n_industries: int = 40, seed: int = 2014,
                       n_final: int = 2) -> IOTable:
    """Balanced multi-region table with clustered supply chains.

    Input coefficients are mostly intra-region; gross output solves the
    Leontief system for random final demand, so every column satisfies
    inputs + value added = gross output.
    """
    rng = np.random.default_rng(seed)
    n = n_regions * n_industries
    region = np.repeat(np.arange(n_regions), n_industries)
    # value-added shares vary widely so that some sectors are fragile
    va_share = rng.beta(2.0, 3.5, n) * 0.8 + 0.08
    A = np.zeros((n, n))
    for j in range(n):
        same = np.flatnonzero((region == region[j]) & (np.arange(n) != j))
        other = np.flatnonzero(region != region[j])
        k_same = rng.integers(3, 9)
        k_other = rng.integers(1, 4)
        sup = np.r_[rng.choice(same, k_same, replace=False),
                    rng.choice(other, k_other, replace=False)]
        w = rng.dirichlet(np.r_[np.full(k_same, 2.0), np.full(k_other, 0.5)])
        A[sup, j] = w * (1.0 - va_share[j])
    final = rng.lognormal(mean=3.0, sigma=1.0, size=n)
    go = np.linalg.solve(np.eye(n) - A, final)
    flows = A * go[None, :]
    va = va_share * go
    labels = [f"R{region[i]:02d}_I{i % n_industries:02d}" for i in range(n)]
    fd_labels = [f"R{r:02d}_FD{f}" for r in range(n_regions) for f in range(n_final)]
    N = n + len(fd_labels)
    full = np.zeros((N, N))
    full[:n, :n] = flows
    for i in range(n):
        split = rng.dirichlet(np.ones(n_final))
        base = n + region[i] * n_final
        full[i, base:base + n_final] = final[i] * split
    return IOTable(labels + fd_labels, full, np.r_[va, np.zeros(len(fd_labels))],
                   np.r_[go, np.zeros(len(fd_labels))], "synthetic")


def write_io_table(table: IOTable, path: str | Path, opts: FormatOptions = FormatOptions()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=opts.delimiter)
        w.writerow([""] + table.labels)
        for lab, row in zip(table.labels, table.flows):
            if np.any(row != 0):
                w.writerow([lab] + [repr(float(x)) for x in row])
        w.writerow([opts.va_label] + [repr(float(x)) for x in table.value_added])
        w.writerow([opts.go_label] + [repr(float(x)) for x in table.gross_output])
