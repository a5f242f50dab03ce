"""Shock scenarios, worst-case shock search and independent-set gadgets."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import EconomicNetwork, EquilibriumState, Mode, solve_equilibrium

# stream ids for SeedSequence so shocks, thresholds and tie-breaks never collide
SHOCK_STREAM = 1
THRESHOLD_STREAM = 2
ADVERSARIAL_STREAM = 3

# failure cost used in the intervention gadget; any value > 1 gives strict
# activation margins (influence 2/|U| against thresholds 1/|U|)
GADGET_BETA = 2.0


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def substream_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, key)]).generate_state(1)[0])


@dataclass(frozen=True)
class ShockSpec:
    rho: float = 0.6
    sigma: float = 0.15
    drift: float = -0.3
    floor: float = 0.0
    count: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.floor < 0:
            raise ValueError("floor must be nonnegative")
        if self.count < 0:
            raise ValueError("count must be nonnegative")


def sample_returns(spec: ShockSpec, m: int, mean_shift: np.ndarray | None = None,
                   rng: np.random.Generator | None = None, count: int | None = None) -> np.ndarray:
    """One-factor Gaussian returns, shape (count, m), before any flooring."""
    rng = substream(spec.seed, SHOCK_STREAM) if rng is None else rng
    count = spec.count if count is None else count
    common = rng.standard_normal((count, 1))
    idio = rng.standard_normal((count, m))
    r = spec.drift + spec.sigma * (np.sqrt(spec.rho) * common + np.sqrt(1 - spec.rho) * idio)
    if mean_shift is not None:
        r = r + mean_shift
    return r


def gross_from_returns(r: np.ndarray, floor: float = 0.0) -> np.ndarray:
    return np.maximum(1.0 + r, floor)


def sample_shocks(spec: ShockSpec, m: int) -> np.ndarray:
    """Gross returns max(1 + r, floor), shape (count, m); deterministic in spec.seed."""
    return gross_from_returns(sample_returns(spec, m), spec.floor)


def apply_shock(net: EconomicNetwork, gross) -> EconomicNetwork:
    gross = np.asarray(gross, float)
    if gross.shape != (net.m,):
        raise ValueError(f"gross returns must have shape ({net.m},), got {gross.shape}")
    return net.with_prices(net.p * gross)


# -- worst-case shocks ---------------------------------------------------------


@dataclass
class MaxShockResult:
    assets: tuple[int, ...]
    cost: float
    equilibrium: EquilibriumState
    exact: bool

    @property
    def defaults(self) -> int:
        return self.equilibrium.n_failed

    def gross(self, m: int) -> np.ndarray:
        g = np.ones(m)
        g[list(self.assets)] = 0.0
        return g


def _zeroed(net: EconomicNetwork, assets) -> EquilibriumState:
    p = net.p.copy()
    p[list(assets)] = 0.0
    return solve_equilibrium(net.with_prices(p), Mode.BEST)


def _buffer(net: EconomicNetwork, eq: EquilibriumState) -> float:
    return float(np.maximum(eq.v - net.theta, 0.0).sum())


def find_max_shock(net: EconomicNetwork, budget: float, exact: bool = False,
                   max_exact_assets: int = 20) -> MaxShockResult:
    """Choose assets to wipe out (price to 0) within a total price-loss budget.

    The greedy mode repeatedly zeroes the affordable asset producing the most
    defaults, breaking ties by the smallest remaining solvency buffer and then
    by index. ``exact`` enumerates every affordable asset set.
    """
    if budget < 0:
        raise ValueError("shock budget must be nonnegative")
    slack = 1e-9 * max(1.0, budget)
    priced = [k for k in range(net.m) if net.p[k] > 0]
    if exact:
        if net.m > max_exact_assets:
            raise ValueError(f"exact search limited to {max_exact_assets} assets, got {net.m}")
        best = None
        for r in range(len(priced) + 1):
            for combo in itertools.combinations(priced, r):
                cost = float(net.p[list(combo)].sum())
                if cost > budget + slack:
                    continue
                eq = _zeroed(net, combo)
                key = (-eq.n_failed, cost, combo)
                if best is None or key < best[0]:
                    best = (key, eq)
        (_, cost, combo), eq = best
        return MaxShockResult(tuple(combo), cost, eq, True)

    chosen: list[int] = []
    spent = 0.0
    eq = _zeroed(net, chosen)
    while True:
        cand = [k for k in priced if k not in chosen and spent + net.p[k] <= budget + slack]
        if not cand:
            break
        best = None
        for k in cand:
            e = _zeroed(net, chosen + [k])
            key = (-e.n_failed, _buffer(net, e), k)
            if best is None or key < best[0]:
                best = (key, k, e)
        _, k, eq = best
        chosen.append(k)
        spent += float(net.p[k])
    return MaxShockResult(tuple(chosen), spent, eq, False)


# -- independent-set gadgets ---------------------------------------------------


@dataclass(frozen=True)
class GadgetSpec:
    n_vertices: int
    edges: tuple[tuple[int, int], ...]
    k: int

    def __post_init__(self):
        norm = []
        for i, j in self.edges:
            if i == j:
                raise ValueError("self-loops are not allowed")
            if not (0 <= i < self.n_vertices and 0 <= j < self.n_vertices):
                raise ValueError(f"edge ({i}, {j}) out of range")
            norm.append((min(i, j), max(i, j)))
        if len(set(norm)) != len(norm):
            raise ValueError("duplicate edges")
        object.__setattr__(self, "edges", tuple(sorted(norm)))


@dataclass
class InterventionGadget:
    network: EconomicNetwork
    layer1: list[int]
    layer2: list[int]
    budget: float
    target_saved: int


@dataclass
class MaxShockGadget:
    network: EconomicNetwork
    budget: float
    target_defaults: int


def _layer2_parents(spec: GadgetSpec) -> list[tuple[int, ...]]:
    edges = set(spec.edges)
    parents = []
    for i, j in itertools.combinations(range(spec.n_vertices), 2):
        if (i, j) in edges:
            parents.append((i, j))
        else:
            parents.extend([(i,), (j,)])
    return parents


def build_is_gadget(spec: GadgetSpec) -> InterventionGadget:
    """Two-layer cross-holding network in which rescuing an independent set pays off most.

    Every firm fails before intervention, each has influence threshold 1/|U|,
    and rescuing a vertex firm rescues all of its |U| - 1 second-layer holders.
    """
    N = spec.n_vertices
    parents = _layer2_parents(spec)
    n = N + len(parents)
    C = np.zeros((n, n))
    for w, ps in enumerate(parents):
        for i in ps:
            C[N + w, i] = 1.0 / N
    beta = np.full(n, GADGET_BETA)
    c_hat = 1.0 - C.sum(axis=0)
    # book values vanish once everything has failed: (I + C)(Dp - beta) = 0
    p = beta.copy()
    theta = c_hat * (beta + 1.0 / N)
    labels = [f"u{i}" for i in range(N)] + [
        "e" + "-".join(map(str, ps)) + ("" if len(ps) == 2 else f"#{w}")
        for w, ps in enumerate(parents)]
    net = EconomicNetwork(C, np.eye(n), p, theta, beta, tuple(labels))
    v_pre = c_hat * net.solve(p)  # no failures at all
    margin = theta - v_pre
    if N and margin[:N].min() <= 0:
        raise RuntimeError("gadget construction failed: first layer would not fail")
    return InterventionGadget(net, list(range(N)), list(range(N, n)), spec.k / N if N else 0.0,
                              spec.k * N)


def build_max_shock_gadget(spec: GadgetSpec) -> MaxShockGadget:
    """Assets are graph vertices; zeroing an independent set of k assets defaults k*|U| firms."""
    N = spec.n_vertices
    holdings = [(i,) for i in range(N)] + _layer2_parents(spec)
    n = len(holdings)
    D = np.zeros((n, N))
    theta = np.zeros(n)
    for f, assets in enumerate(holdings):
        D[f, list(assets)] = 1.0 / N
        # fails as soon as any one of its assets is worthless
        theta[f] = (len(assets) - 0.5) / N
    net = EconomicNetwork(np.zeros((n, n)), D, np.ones(N), theta, np.zeros(n),
                          tuple(f"f{f}" for f in range(n)))
    return MaxShockGadget(net, float(spec.k), spec.k * N)


def max_independent_set_size(n_vertices: int, edges) -> int:
    """Largest independent set, by exhaustive enumeration."""
    adj = [0] * n_vertices
    for i, j in edges:
        adj[i] |= 1 << j
        adj[j] |= 1 << i
    best = 0
    for mask in range(1 << n_vertices):
        size = bin(mask).count("1")
        if size <= best:
            continue
        if all(not (adj[i] & mask) for i in range(n_vertices) if mask >> i & 1):
            best = size
    return best


# -- importance-weighted scenario batches -------------------------------------


@dataclass
class ScenarioBatch:
    gross: np.ndarray
    weights: np.ndarray
    adversarial: np.ndarray
    default_counts: np.ndarray
    n_firms: int
    meta: dict = field(default_factory=dict)

    @property
    def default_fractions(self) -> np.ndarray:
        return self.default_counts / self.n_firms

    def weighted_mean(self, values: np.ndarray | None = None) -> tuple[float, float]:
        """Importance-weighted mean and its standard error."""
        vals = self.default_fractions if values is None else values
        z = self.weights * vals
        se = z.std(ddof=1) / np.sqrt(len(z)) if len(z) > 1 else 0.0
        return float(z.mean()), float(se)

    def to_csv(self, path: str | Path, include_returns: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["scenario"]
            if include_returns:
                head += [f"gross_{k}" for k in range(self.gross.shape[1])]
            head += ["default_count", "default_fraction", "weight", "adversarial"]
            w.writerow(head)
            for i in range(len(self.weights)):
                row = [i]
                if include_returns:
                    row += [repr(float(g)) for g in self.gross[i]]
                row += [int(self.default_counts[i]), repr(float(self.default_fractions[i])),
                        repr(float(self.weights[i])), int(self.adversarial[i])]
                w.writerow(row)


def _one_factor_precision_dot(spec: ShockSpec, m: int, a: np.ndarray, b: np.ndarray):
    # a^T Sigma^{-1} b for Sigma = sigma^2 ((1 - rho) I + rho 11^T), via Sherman-Morrison
    s2 = spec.sigma ** 2 * (1 - spec.rho)
    c = spec.rho / ((1 - spec.rho) + m * spec.rho)
    return ((a * b).sum(axis=-1) - c * a.sum(axis=-1) * b.sum(axis=-1)) / s2


def importance_weighted_batch(net: EconomicNetwork, spec: ShockSpec, adversarial_fraction: float,
                              shift: float = 2.0, shock_budget: float | None = None,
                              shock_assets=None) -> ScenarioBatch:
    """Mix plain Monte Carlo shocks with shocks aimed at a worst-case asset set.

    The adversarial component is the same Gaussian with its mean moved down by
    ``shift`` standard deviations on the assets picked by :func:`find_max_shock`
    (budget defaults to 10% of total asset value). Each scenario is weighted by
    the likelihood ratio of the nominal density to the mixture, so weighted
    averages estimate expectations under the nominal shock model.
    """
    if not 0.0 <= adversarial_fraction <= 1.0:
        raise ValueError("adversarial_fraction must lie in [0, 1]")
    m = net.m
    n_adv = int(round(adversarial_fraction * spec.count))
    n_mc = spec.count - n_adv
    alpha = n_adv / spec.count if spec.count else 0.0
    delta = np.zeros(m)
    if n_adv:
        if spec.sigma == 0:
            raise ValueError("importance sampling needs sigma > 0")
        if shock_assets is None:
            b = 0.1 * net.p.sum() if shock_budget is None else shock_budget
            shock_assets = find_max_shock(net, b).assets
        delta[list(shock_assets)] = -shift * spec.sigma
    r_mc = sample_returns(spec, m, rng=substream(spec.seed, SHOCK_STREAM), count=n_mc)
    r_adv = sample_returns(spec, m, delta, rng=substream(spec.seed, ADVERSARIAL_STREAM),
                           count=n_adv)
    r = np.vstack([r_mc, r_adv])
    if alpha > 0:
        centred = r - spec.drift
        log_ratio = (_one_factor_precision_dot(spec, m, centred, delta[None, :])
                     - 0.5 * _one_factor_precision_dot(spec, m, delta, delta))
        weights = 1.0 / ((1 - alpha) + alpha * np.exp(log_ratio))
    else:
        weights = np.ones(len(r))
    gross = gross_from_returns(r, spec.floor)
    counts = np.array([solve_equilibrium(apply_shock(net, g)).n_failed for g in gross], dtype=int)
    adversarial = np.r_[np.zeros(n_mc, bool), np.ones(n_adv, bool)]
    meta = {"adversarial_fraction": alpha, "shift": shift,
            "shock_assets": [int(a) for a in np.flatnonzero(delta)], "seed": spec.seed}
    return ScenarioBatch(gross, weights, adversarial, counts, net.n, meta)
