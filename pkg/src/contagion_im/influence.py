"""Reduction of a post-shock network to an influence-maximization instance."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .network import EconomicNetwork, EquilibriumState, Mode, solve_equilibrium


class EmptyFailedSetError(ValueError):
    """Nothing failed, so there is nothing to intervene on."""


@dataclass(frozen=True, eq=False)
class InfluenceInstance:
    """Influence-maximization view of the firms that fail without intervention.

    ``A[v, u]`` is the book value firm ``node_map[v]`` regains when the default
    of ``node_map[u]`` is reversed. Self-influence is moved into the thresholds,
    so the diagonal of ``A`` is zero and ``influence(S) = A @ 1_S``.
    """

    A: np.ndarray
    theta_tilde: np.ndarray
    weights: np.ndarray
    node_map: np.ndarray
    # slack before taking the positive part; kept for inspection
    raw_theta_tilde: np.ndarray | None = None

    def __post_init__(self):
        for name in ("A", "theta_tilde", "weights", "node_map", "raw_theta_tilde"):
            a = getattr(self, name)
            if a is None:
                continue
            a = np.array(a, dtype=int if name == "node_map" else float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def k(self) -> int:
        return len(self.theta_tilde)

    @property
    def free_seeds(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.theta_tilde == 0).tolist())

    def lift(self, x: np.ndarray, n: int) -> np.ndarray:
        """Map a reduced payment vector to an intervention on all n firms."""
        gamma = np.zeros(n)
        gamma[self.node_map] = x
        return gamma

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "A": self.A.tolist(),
            "theta_tilde": self.theta_tilde.tolist(),
            "weights": self.weights.tolist(),
            "node_map": self.node_map.tolist(),
            "free_seeds": sorted(self.free_seeds),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "InfluenceInstance":
        return cls(np.asarray(d["A"], float).reshape(d["k"], d["k"]), d["theta_tilde"],
                   d["weights"], d["node_map"])


class ThresholdKind(str, enum.Enum):
    FIXED = "fixed"
    UNIFORM_BAND = "uniform-band"


@dataclass(frozen=True)
class ThresholdModel:
    """Independent per-node thresholds, uniform on theta*(1-h) .. theta*(1+h)."""

    kind: ThresholdKind = ThresholdKind.FIXED
    band_halfwidth: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ThresholdKind(self.kind))
        if not 0.0 <= self.band_halfwidth <= 1.0:
            raise ValueError("band_halfwidth must lie in [0, 1]")
        if self.kind is ThresholdKind.FIXED:
            object.__setattr__(self, "band_halfwidth", 0.0)

    @classmethod
    def fixed(cls) -> "ThresholdModel":
        return cls(ThresholdKind.FIXED, 0.0)

    @classmethod
    def uniform_band(cls, h: float) -> "ThresholdModel":
        return cls(ThresholdKind.UNIFORM_BAND, h)

    @property
    def is_random(self) -> bool:
        return self.kind is ThresholdKind.UNIFORM_BAND and self.band_halfwidth > 0

    def bounds(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = self.band_halfwidth
        return np.maximum(0.0, theta * (1.0 - h)), theta * (1.0 + h)

    def theta_max(self, theta: np.ndarray) -> np.ndarray:
        return self.bounds(theta)[1]

    def draw(self, theta: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` independent threshold vectors, shape (size, k)."""
        if not self.is_random:
            return np.broadcast_to(theta, (size, len(theta))).copy()
        lo, hi = self.bounds(theta)
        return lo + (hi - lo) * rng.random((size, len(theta)))


def reduce_to_influence(net: EconomicNetwork, eq: EquilibriumState | None = None,
                        weights=None) -> InfluenceInstance:
    """Build the influence instance on the firms in ``eq.failed``.

    ``eq`` should be the best-case equilibrium without intervention; it is
    computed if omitted.
    """
    if eq is None:
        eq = solve_equilibrium(net, Mode.BEST)
    T = np.array(sorted(eq.failed), dtype=int)
    if len(T) == 0:
        raise EmptyFailedSetError("no failed firms to intervene on")
    n = net.n
    # columns u in T of (I - C)^{-1} beta
    rhs = np.zeros((n, len(T)))
    rhs[T, np.arange(len(T))] = net.beta[T]
    B = net.solve(rhs)
    A_full = B[T, :]
    self_influence = np.diag(A_full).copy()
    V_T = net.solve(net.asset_values - net.beta * np.isin(np.arange(n), T))
    # slack in book value once u's own failure cost is reversed
    raw = net.theta[T] / net.c_hat[T] - V_T[T] - self_influence
    A = A_full.copy()
    np.fill_diagonal(A, 0.0)
    A = np.maximum(A, 0.0)
    w = np.ones(len(T)) if weights is None else np.asarray(weights, float)
    if w.shape != (len(T),):
        raise ValueError(f"weights must have shape ({len(T)},)")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    return InfluenceInstance(A, np.maximum(raw, 0.0), w, T, raw)


def influence(inst: InfluenceInstance, S) -> np.ndarray:
    """Influence exerted on every reduced node by reversing the defaults in S."""
    idx = np.fromiter(S, dtype=int) if not isinstance(S, np.ndarray) else S.astype(int)
    if idx.size and (idx.min() < 0 or idx.max() >= inst.k):
        raise IndexError(f"node index out of range for instance of size {inst.k}")
    return inst.A[:, idx].sum(axis=1)


def sample_thresholds(inst: InfluenceInstance, model: ThresholdModel, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return model.draw(inst.theta_tilde, rng, 1)[0]
