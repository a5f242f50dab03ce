"""Cascade evaluation, Monte Carlo objective estimates and seeding algorithms.

All algorithms work on an :class:`~contagion_im.influence.InfluenceInstance`.
Budgets are in the instance's book-value units: an integral seed ``u`` costs
``theta_tilde[u]`` and a fractional plan spends ``sum(x)``.
"""

from __future__ import annotations

import enum
import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np

from .influence import InfluenceInstance, ThresholdModel

# A node activates if influence + payment >= threshold - ACT_TOL.
ACT_TOL = 1e-12
DEFAULT_REPLICATES = 10_000
BRUTE_FORCE_LIMIT = 2 ** 21


def budget_slack(budget: float) -> float:
    """Round-off allowance when comparing spend against a budget."""
    return 1e-9 * max(1.0, abs(budget))


class InstanceTooLargeError(ValueError):
    pass


class PlanKind(str, enum.Enum):
    INTEGRAL = "integral"
    FRACTIONAL = "fractional"


@dataclass
class CascadeResult:
    activated: frozenset[int]
    weight: float
    rounds: int


@dataclass
class InterventionPlan:
    kind: PlanKind
    budget: float
    payments: np.ndarray
    seeds: tuple[int, ...] = ()
    sigma: float | None = None
    stderr: float | None = None
    algorithm: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def spent(self) -> float:
        return float(self.payments.sum())

    @property
    def paid_nodes(self) -> list[int]:
        return np.flatnonzero(self.payments > 0).tolist()

    def gamma(self, inst: InfluenceInstance, n: int) -> np.ndarray:
        """Intervention vector over all n firms of the source network."""
        return inst.lift(self.payments, n)

    def to_dict(self, inst: InfluenceInstance) -> dict:
        out = {"kind": self.kind.value, "algorithm": self.algorithm}
        if self.kind is PlanKind.INTEGRAL:
            out["nodes"] = [int(inst.node_map[u]) for u in self.seeds]
        else:
            out["payments"] = {str(int(inst.node_map[u])): float(self.payments[u])
                               for u in np.flatnonzero(self.payments > 0)}
        out.update(spent=self.spent, budget=float(self.budget),
                   sigma_estimate=self.sigma, stderr=self.stderr)
        return out


def empty_plan(inst: InfluenceInstance, budget: float, kind=PlanKind.FRACTIONAL,
               algorithm: str = "") -> InterventionPlan:
    return InterventionPlan(PlanKind(kind), budget, np.zeros(inst.k), algorithm=algorithm)


# -- cascades -----------------------------------------------------------------


def _as_mask(k: int, S) -> np.ndarray:
    mask = np.zeros(k, dtype=bool)
    idx = list(S)
    if idx and (min(idx) < 0 or max(idx) >= k):
        raise IndexError("node index out of range")
    mask[idx] = True
    return mask


def calc_int_cascade(inst: InfluenceInstance, S, theta=None) -> CascadeResult:
    """Closure of seed set S: repeatedly add nodes whose influence reaches threshold."""
    theta = inst.theta_tilde if theta is None else np.asarray(theta, float)
    act = _as_mask(inst.k, S)
    rounds = 0
    while True:
        rounds += 1
        new = act | (inst.A @ act >= theta - ACT_TOL)
        if np.array_equal(new, act):
            break
        act = new
    nodes = frozenset(np.flatnonzero(act).tolist())
    return CascadeResult(nodes, float(inst.weights[act].sum()), rounds)


def calc_frac_cascade(inst: InfluenceInstance, x, theta=None) -> CascadeResult:
    """Cascade from payment vector x.

    Membership is recomputed from scratch every round; because influence is
    monotone the active set can only grow, which is checked.
    """
    theta = inst.theta_tilde if theta is None else np.asarray(theta, float)
    x = np.asarray(x, float)
    if np.any(x < 0):
        raise ValueError("payments must be nonnegative")
    act = x >= theta - ACT_TOL
    rounds = 1
    while True:
        new = inst.A @ act + x >= theta - ACT_TOL
        if np.array_equal(new, act):
            break
        if np.any(act & ~new):
            raise AssertionError("fractional cascade shrank; influence is not monotone")
        act = new
        rounds += 1
    nodes = frozenset(np.flatnonzero(act).tolist())
    return CascadeResult(nodes, float(inst.weights[act].sum()), rounds)


def _batch_cascade(A: np.ndarray, thetas: np.ndarray, x: np.ndarray,
                   seeds: np.ndarray | None) -> np.ndarray:
    """Vectorized cascade over rows of ``thetas`` (and optionally rows of ``seeds``).

    With ``seeds`` given this is the integral cascade, otherwise the fractional
    one driven by ``x``. Returns the boolean activation matrix.
    """
    At = A.T
    if seeds is not None:
        act = seeds.copy()
        while True:
            new = act | (act @ At >= thetas - ACT_TOL)
            if np.array_equal(new, act):
                return act
            act = new
    act = x >= thetas - ACT_TOL
    while True:
        new = act @ At + x >= thetas - ACT_TOL
        if np.array_equal(new, act):
            return act
        act = new


def _draws(inst: InfluenceInstance, model: ThresholdModel, replicates: int, seed) -> np.ndarray:
    if not model.is_random:
        return inst.theta_tilde[None, :].copy()
    rng = np.random.default_rng(seed)
    return model.draw(inst.theta_tilde, rng, replicates)


def _weights_of(inst, act: np.ndarray) -> np.ndarray:
    return act.astype(float) @ inst.weights


def estimate_sigma(inst: InfluenceInstance, plan: InterventionPlan, model: ThresholdModel,
                   replicates: int = DEFAULT_REPLICATES, seed: int = 0,
                   return_stderr: bool = False):
    """Monte Carlo estimate of the expected weight of the reversed set.

    With a fixed threshold model this is the exact cascade weight.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    thetas = _draws(inst, model, replicates, seed)
    vals = _plan_values(inst, plan, thetas)
    mean = float(vals.mean())
    if not return_stderr:
        return mean
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return mean, se


def _plan_values(inst, plan: InterventionPlan, thetas: np.ndarray) -> np.ndarray:
    if plan.kind is PlanKind.INTEGRAL:
        seeds = np.broadcast_to(_as_mask(inst.k, plan.seeds), thetas.shape)
        act = _batch_cascade(inst.A, thetas, np.zeros(inst.k), seeds)
    else:
        act = _batch_cascade(inst.A, thetas, plan.payments, None)
    return _weights_of(inst, act)


def _finish(inst, plan: InterventionPlan, model, replicates, seed) -> InterventionPlan:
    plan.sigma, plan.stderr = estimate_sigma(inst, plan, model, replicates, seed,
                                             return_stderr=True)
    return plan


# -- greedy hill climbing ------------------------------------------------------


def greedy_int(inst: InfluenceInstance, model: ThresholdModel, budget: float,
               replicates: int = DEFAULT_REPLICATES, seed: int = 0) -> InterventionPlan:
    """Hill climbing on seed sets; a seed costs its nominal threshold.

    Every candidate in a step is scored on the same threshold draws.
    Unaffordable candidates are skipped rather than ending the search.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    thetas = _draws(inst, model, replicates, seed)
    cost = inst.theta_tilde
    slack = budget_slack(budget)
    chosen = np.zeros(inst.k, dtype=bool)
    order: list[int] = []
    spent = 0.0
    act = _batch_cascade(inst.A, thetas, np.zeros(inst.k), np.broadcast_to(chosen, thetas.shape))
    while True:
        always_on = act.all(axis=0)
        cand = np.flatnonzero(~chosen & ~always_on & (spent + cost <= budget + slack))
        if cand.size == 0:
            break
        best_u, best_val, best_act = -1, -np.inf, None
        for u in cand:
            trial = chosen.copy()
            trial[u] = True
            a = _batch_cascade(inst.A, thetas, np.zeros(inst.k),
                               np.broadcast_to(trial, thetas.shape))
            val = _weights_of(inst, a).mean()
            if val > best_val:
                best_u, best_val, best_act = int(u), val, a
        chosen[best_u] = True
        order.append(best_u)
        spent += cost[best_u]
        act = best_act
    payments = np.where(chosen, cost, 0.0)
    plan = InterventionPlan(PlanKind.INTEGRAL, budget, payments, tuple(order),
                            algorithm="greedy-int")
    return _finish(inst, plan, model, replicates, seed)


def gamma_plus(inst: InfluenceInstance, v: int, S) -> float:
    """Influence the set S exerts on node v."""
    idx = list(S)
    return float(inst.A[v, idx].sum())


def gamma_minus(inst: InfluenceInstance, v: int, S) -> float:
    """Influence node v exerts on the set S."""
    idx = list(S)
    return float(inst.A[idx, v].sum())


def _absorb_free(inst, chosen, theta_max) -> None:
    # nodes already pushed past their largest possible threshold join for free
    while True:
        top = theta_max - inst.A @ chosen
        free = ~chosen & (top <= ACT_TOL)
        if not free.any():
            return
        chosen |= free


def greedy_frac(inst: InfluenceInstance, model: ThresholdModel, budget: float,
                replicates: int = DEFAULT_REPLICATES, seed: int = 0) -> InterventionPlan:
    """Hill climbing on payment vectors.

    Each step tops a node up to its largest possible threshold minus the
    influence already exerted on it by previously paid nodes, and keeps the
    top-up with the best estimated objective.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    thetas = _draws(inst, model, replicates, seed)
    theta_max = model.theta_max(inst.theta_tilde)
    slack = budget_slack(budget)
    x = np.zeros(inst.k)
    chosen = np.zeros(inst.k, dtype=bool)
    order: list[int] = []
    act = _batch_cascade(inst.A, thetas, x, None)
    while True:
        _absorb_free(inst, chosen, theta_max)
        top = theta_max - inst.A @ chosen
        always_on = act.all(axis=0)
        cand = np.flatnonzero(~chosen & ~always_on & (x.sum() + top <= budget + slack))
        if cand.size == 0:
            break
        best_u, best_val, best_act = -1, -np.inf, None
        for u in cand:
            xu = x.copy()
            xu[u] += top[u]
            a = _batch_cascade(inst.A, thetas, xu, None)
            val = _weights_of(inst, a).mean()
            if val > best_val:
                best_u, best_val, best_act = int(u), val, a
        x[best_u] += top[best_u]
        chosen[best_u] = True
        order.append(best_u)
        act = best_act
    plan = InterventionPlan(PlanKind.FRACTIONAL, budget, x, tuple(order), algorithm="greedy-frac")
    return _finish(inst, plan, model, replicates, seed)


# -- DiscountFrac heuristics ---------------------------------------------------


def discount_frac(inst: InfluenceInstance, model: ThresholdModel, budget: float,
                  replicates: int = DEFAULT_REPLICATES, seed: int = 0) -> InterventionPlan:
    """Pay the node with the most out-influence onto nodes not yet paid."""
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    theta_max = model.theta_max(inst.theta_tilde)
    slack = budget_slack(budget)
    x = np.zeros(inst.k)
    chosen = np.zeros(inst.k, dtype=bool)
    order: list[int] = []
    out_influence = inst.A  # column u: influence of u on every node
    while True:
        _absorb_free(inst, chosen, theta_max)
        top = theta_max - inst.A @ chosen
        cand = np.flatnonzero(~chosen & (x.sum() + top <= budget + slack))
        if cand.size == 0:
            break
        remaining = ~chosen
        score = remaining.astype(float) @ out_influence[:, cand]
        u = int(cand[np.argmax(score)])
        x[u] += top[u]
        chosen[u] = True
        order.append(u)
    plan = InterventionPlan(PlanKind.FRACTIONAL, budget, x, tuple(order), algorithm="discount-frac")
    return _finish(inst, plan, model, replicates, seed)


def discount_frac_cost_adjusted(inst: InfluenceInstance, model: ThresholdModel, budget: float,
                                replicates: int = DEFAULT_REPLICATES, seed: int = 0) -> InterventionPlan:
    """DiscountFrac scored by out-influence per unit of remaining activation cost.

    The influenced set is the cascade closure of the current payments under the
    largest possible thresholds, so every node in it is active for any draw.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    theta_max = model.theta_max(inst.theta_tilde)
    slack = budget_slack(budget)
    x = np.zeros(inst.k)
    order: list[int] = []
    while True:
        S = _batch_cascade(inst.A, theta_max[None, :], x, None)[0]
        remaining = ~S
        cost = theta_max - inst.A @ S
        cand = np.flatnonzero(remaining & (x.sum() + np.maximum(cost, 0) <= budget + slack))
        if cand.size == 0:
            break
        numer = remaining.astype(float) @ inst.A[:, cand]
        denom = cost[cand]
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(denom > ACT_TOL, numer / denom, np.inf)
        u = int(cand[np.argmax(score)])
        x[u] += max(cost[u], 0.0)
        order.append(u)
        if cost[u] <= ACT_TOL:  # pragma: no cover - closure already includes such nodes
            break
    plan = InterventionPlan(PlanKind.FRACTIONAL, budget, x, tuple(order),
                            algorithm="discount-frac-cost")
    return _finish(inst, plan, model, replicates, seed)


# -- exact optimum for small instances ----------------------------------------


def brute_force_optimum(inst: InfluenceInstance, model: ThresholdModel | None, budget: float,
                        kind: PlanKind | str = PlanKind.FRACTIONAL) -> InterventionPlan:
    """Exact optimum under fixed thresholds by exhaustive search.

    Integral: every affordable seed set is cascaded. Fractional: a search over
    cascade-closed active sets where each step tops one inactive node up to its
    threshold given the influence of the closed set; this reaches the optimum
    over all real payment vectors. Raises :class:`InstanceTooLargeError` when
    the enumerated family would exceed ``BRUTE_FORCE_LIMIT`` members.
    """
    if model is not None and model.is_random:
        raise ValueError("brute force optimum needs fixed thresholds")
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    kind = PlanKind(kind)
    if inst.k == 0:
        return InterventionPlan(kind, budget, np.zeros(0), sigma=0.0, stderr=0.0,
                                algorithm="brute")
    if kind is PlanKind.INTEGRAL:
        return _brute_integral(inst, budget)
    return _brute_fractional(inst, budget)


def _brute_integral(inst, budget) -> InterventionPlan:
    k = inst.k
    cost = inst.theta_tilde
    slack = budget_slack(budget)
    # zero-cost nodes activate by themselves; only paid seeds are enumerated
    paid = [u for u in range(k) if cost[u] > 0 and cost[u] <= budget + slack]
    sorted_costs = np.sort(cost[paid])
    max_size = int(np.searchsorted(np.cumsum(sorted_costs), budget + slack, side="right"))
    total = sum(_comb(len(paid), j) for j in range(max_size + 1))
    if total > BRUTE_FORCE_LIMIT:
        raise InstanceTooLargeError(f"{total} seed sets to enumerate")
    theta = inst.theta_tilde[None, :]
    best = (np.inf, np.inf, ())  # (-weight, spend, seeds); smallest wins
    for j in range(max_size + 1):
        combos = [c for c in itertools.combinations(paid, j)
                  if cost[list(c)].sum() <= budget + slack]
        for start in range(0, len(combos), 4096):
            chunk = combos[start:start + 4096]
            seeds = np.zeros((len(chunk), k), dtype=bool)
            for r, c in enumerate(chunk):
                seeds[r, list(c)] = True
            act = _batch_cascade(inst.A, np.broadcast_to(theta, seeds.shape), np.zeros(k), seeds)
            vals = _weights_of(inst, act)
            spends = seeds.astype(float) @ cost
            r = min(range(len(chunk)), key=lambda r: (-vals[r], spends[r]))
            cand = (-float(vals[r]), float(spends[r]), chunk[r])
            if cand[:2] < best[:2]:
                best = cand
    value, _, seeds = best
    value = -value
    payments = np.zeros(k)
    payments[list(seeds)] = cost[list(seeds)]
    return InterventionPlan(PlanKind.INTEGRAL, budget, payments, tuple(seeds), sigma=value,
                            stderr=0.0, algorithm="brute")


def _comb(n, r):
    from math import comb
    return comb(n, r)


def _brute_fractional(inst, budget) -> InterventionPlan:
    k = inst.k
    theta = inst.theta_tilde
    slack = budget_slack(budget)
    def closure(mask_arr):
        act = mask_arr.copy()
        while True:
            new = act | (inst.A @ act >= theta - ACT_TOL)
            if np.array_equal(new, act):
                return act
            act = new

    def key(arr):
        return np.packbits(arr).tobytes()

    start = closure(np.zeros(k, dtype=bool))
    start_key = key(start)
    best_cost = {start_key: 0.0}
    parent: dict[bytes, tuple[bytes, int, float]] = {}
    arrays = {start_key: start}
    heap = [(0.0, start_key)]
    done = set()
    while heap:
        c, s = heapq.heappop(heap)
        if s in done or c > best_cost[s]:
            continue
        done.add(s)
        if len(done) > BRUTE_FORCE_LIMIT:
            raise InstanceTooLargeError("too many closed sets to enumerate")
        act = arrays[s]
        infl = inst.A @ act
        for u in np.flatnonzero(~act):
            top = max(theta[u] - infl[u], 0.0)
            nc = c + top
            if nc > budget + slack:
                continue
            nxt = act.copy()
            nxt[u] = True
            nxt = closure(nxt)
            nk = key(nxt)
            if nk not in best_cost or nc < best_cost[nk] - 1e-15:
                best_cost[nk] = nc
                parent[nk] = (s, int(u), top)
                arrays[nk] = nxt
                heapq.heappush(heap, (nc, nk))
    # most weight, then least spend, then smallest packed mask
    best_key = min(done, key=lambda s: (-float(inst.weights[arrays[s]].sum()), best_cost[s], s))
    payments = np.zeros(k)
    order = []
    s = best_key
    while s in parent:
        prev, u, top = parent[s]
        payments[u] += top
        order.append(u)
        s = prev
    value = float(inst.weights[arrays[best_key]].sum())
    return InterventionPlan(PlanKind.FRACTIONAL, budget, payments, tuple(reversed(order)),
                            sigma=value, stderr=0.0, algorithm="brute")


ALGORITHMS = {
    "greedy-int": greedy_int,
    "greedy-frac": greedy_frac,
    "discount-frac": discount_frac,
    "discount-frac-cost": discount_frac_cost_adjusted,
}
