"""Cross-holding network model: book/market values and failure equilibria."""

from __future__ import annotations

import enum
import json
import threading
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg

# A firm fails only if its market value is below threshold by more than this.
FAIL_TOL = 1e-12

# scipy's LAPACK wrappers are not safe to call from several threads at once
# with some OpenBLAS builds (heap corruption), so factor and solve under a lock
_LAPACK_LOCK = threading.Lock()


class SingularSystemError(ValueError):
    """(I - C) could not be factorized."""


class Mode(str, enum.Enum):
    BEST = "best"
    WORST = "worst"


@dataclass(frozen=True, eq=False)
class EconomicNetwork:
    C: np.ndarray
    D: np.ndarray
    p: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    labels: tuple[str, ...] = field(default=())
    # relaxes the column-sum rule on D (networks built from input-output data)
    allow_partial_assets: bool = False

    def __post_init__(self):
        arrays = {}
        for name in ("C", "D", "p", "theta", "beta"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            arrays[name] = a
        for name, a in arrays.items():
            object.__setattr__(self, name, a)
        n = arrays["C"].shape[0] if arrays["C"].ndim == 2 else len(arrays["theta"])
        if arrays["D"].ndim == 1:
            object.__setattr__(self, "D", arrays["D"].reshape(n, -1))
        labels = tuple(self.labels) if len(self.labels) else tuple(f"firm{i}" for i in range(n))
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @property
    def m(self) -> int:
        return self.D.shape[1]

    @cached_property
    def c_hat(self) -> np.ndarray:
        """Diagonal of C-hat: the share of each firm held by outside investors."""
        return 1.0 - self.C.sum(axis=0)

    @cached_property
    def _lu(self):
        I_minus_C = np.eye(self.n) - self.C
        try:
            with _LAPACK_LOCK:
                lu = linalg.lu_factor(I_minus_C, check_finite=True)
        except (ValueError, linalg.LinAlgError) as exc:  # pragma: no cover - defensive
            raise SingularSystemError(str(exc)) from exc
        diag = np.abs(np.diag(lu[0]))
        if self.n and diag.min() <= 1e-14 * max(1.0, diag.max()):
            raise SingularSystemError("I - C is numerically singular")
        return lu

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Return (I - C)^{-1} rhs using the cached factorization."""
        if self.n == 0:
            return np.zeros_like(rhs, dtype=float)
        lu = self._lu
        with _LAPACK_LOCK:
            return linalg.lu_solve(lu, rhs)

    @cached_property
    def asset_values(self) -> np.ndarray:
        """Underlying asset value held by each firm, Dp."""
        return self.D @ self.p

    def with_prices(self, p: np.ndarray) -> "EconomicNetwork":
        """Copy of the network with new asset prices, sharing the factorization."""
        new = EconomicNetwork(self.C, self.D, p, self.theta, self.beta, self.labels,
                              self.allow_partial_assets)
        if "_lu" in self.__dict__:
            new.__dict__["_lu"] = self.__dict__["_lu"]
        return new

    def replace(self, **changes) -> "EconomicNetwork":
        kw = dict(C=self.C, D=self.D, p=self.p, theta=self.theta, beta=self.beta,
                  labels=self.labels, allow_partial_assets=self.allow_partial_assets)
        kw.update(changes)
        new = EconomicNetwork(**kw)
        if "C" not in changes and "_lu" in self.__dict__:
            new.__dict__["_lu"] = self.__dict__["_lu"]
        return new

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "p": self.p.tolist(),
            "theta": self.theta.tolist(),
            "beta": self.beta.tolist(),
            "labels": list(self.labels),
            "allow_partial_assets": self.allow_partial_assets,
        }

    @classmethod
    def from_dict(cls, d: dict, allow_partial_assets: bool | None = None) -> "EconomicNetwork":
        n, m = int(d["n"]), int(d["m"])
        C = np.asarray(d["C"], dtype=float).reshape(n, n)
        D = np.asarray(d["D"], dtype=float).reshape(n, m)
        if allow_partial_assets is None:
            allow_partial_assets = bool(d.get("allow_partial_assets", True))
        return cls(C, D, np.asarray(d["p"], float), np.asarray(d["theta"], float),
                   np.asarray(d["beta"], float), tuple(d.get("labels", ())),
                   allow_partial_assets)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "EconomicNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class EquilibriumState:
    V: np.ndarray
    v: np.ndarray
    failed: frozenset[int]
    mode: Mode
    iterations: int

    @property
    def n_failed(self) -> int:
        return len(self.failed)


def validate_network(net: EconomicNetwork, tol: float = 1e-12) -> list[str]:
    """List every invariant the network breaks; empty if it is valid."""
    out = []
    C, D = net.C, net.D
    n = C.shape[0] if C.ndim == 2 else -1
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        return [f"C must be square, got shape {C.shape}"]
    if D.shape[0] != n:
        out.append(f"D has {D.shape[0]} rows, expected {n}")
    for name, vec, size in (("p", net.p, D.shape[1]), ("theta", net.theta, n),
                            ("beta", net.beta, n)):
        if vec.shape != (size,):
            out.append(f"{name} has shape {vec.shape}, expected ({size},)")
    if len(net.labels) != n:
        out.append(f"labels has {len(net.labels)} entries, expected {n}")
    if out:
        return out
    for name, arr in (("C", C), ("D", D), ("p", net.p), ("theta", net.theta), ("beta", net.beta)):
        if not np.all(np.isfinite(arr)):
            out.append(f"{name} has non-finite entries")
    for i in np.flatnonzero(np.diag(C) != 0):
        out.append(f"nonzero diagonal at {i}")
    for i, j in zip(*np.nonzero(C < 0)):
        out.append(f"C[{i},{j}] = {C[i, j]} < 0")
    for j, s in enumerate(C.sum(axis=0)):
        if not s < 1.0:
            out.append(f"column {j} sum not < 1 (sum={s})")
    for i, k in zip(*np.nonzero(D < 0)):
        out.append(f"D[{i},{k}] = {D[i, k]} < 0")
    if not net.allow_partial_assets:
        for k, s in enumerate(D.sum(axis=0)):
            if abs(s - 1.0) > 1e-9:
                out.append(f"D column {k} sums to {s}, expected 1")
    for k in np.flatnonzero(net.p < 0):
        out.append(f"p[{k}] = {net.p[k]} < 0")
    for i in np.flatnonzero(net.beta < 0):
        out.append(f"beta[{i}] = {net.beta[i]} < 0")
    return out


def dependency_matrix(net: EconomicNetwork) -> np.ndarray:
    """C-hat (I - C)^{-1}, a column-stochastic matrix."""
    return net.c_hat[:, None] * net.solve(np.eye(net.n))


def _indicator(n: int, nodes) -> np.ndarray:
    out = np.zeros(n)
    out[list(nodes)] = 1.0
    return out


def book_values(net: EconomicNetwork, failed) -> np.ndarray:
    return net.solve(net.asset_values - net.beta * _indicator(net.n, failed))


def market_values(net: EconomicNetwork, failed) -> np.ndarray:
    """Market values given a (not necessarily self-consistent) failed set."""
    return net.c_hat * book_values(net, failed)


def _iterate(net: EconomicNetwork, start: frozenset[int], gamma: np.ndarray | None,
             mode: Mode) -> EquilibriumState:
    # Synchronous sweeps of T -> {i : v_i(T) < theta_i}. The map is monotone in T,
    # so starting from the empty set climbs to the least fixed point and
    # starting from all firms descends to the greatest one.
    failed = start
    sweeps = 0
    while True:
        sweeps += 1
        V = book_values(net, failed)
        Vg = V if gamma is None else V + gamma
        new = frozenset(np.flatnonzero(net.c_hat * Vg < net.theta - FAIL_TOL).tolist())
        if new == failed:
            return EquilibriumState(V, net.c_hat * V, failed, mode, sweeps)
        if sweeps > net.n + 1:  # pragma: no cover - monotone map cannot cycle
            raise RuntimeError("equilibrium iteration did not converge")
        failed = new


def solve_equilibrium(net: EconomicNetwork, mode: Mode | str = Mode.BEST) -> EquilibriumState:
    """Best case (fewest failures) or worst case equilibrium of the network."""
    mode = Mode(mode)
    start = frozenset() if mode is Mode.BEST else frozenset(range(net.n))
    return _iterate(net, start, None, mode)


def apply_intervention(net: EconomicNetwork, gamma) -> EquilibriumState:
    """Best-case equilibrium when firm i only fails if V_i + gamma_i < theta_i / c_hat_i."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (net.n,):
        raise ValueError(f"gamma must have shape ({net.n},), got {gamma.shape}")
    if np.any(gamma < 0) or np.any(np.isnan(gamma)):
        raise ValueError("intervention payments must be nonnegative")
    return _iterate(net, frozenset(), gamma, Mode.BEST)


def reverse_cascade(net: EconomicNetwork, gamma, failed=None) -> EquilibriumState:
    """Undo defaults one rescue at a time, starting from ``failed``.

    A failed firm is rescued once its book value, computed as if its own
    failure cost were reversed, plus its payment clears its threshold.
    Rescues only raise other firms' values, so the process is monotone. This
    is the economic counterpart of the influence cascade on the reduced
    instance, and it can stop short of the best-case equilibrium of
    :func:`apply_intervention` when groups of firms can only be saved together.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (net.n,):
        raise ValueError(f"gamma must have shape ({net.n},), got {gamma.shape}")
    if np.any(gamma < 0) or np.any(np.isnan(gamma)):
        raise ValueError("intervention payments must be nonnegative")
    failed = solve_equilibrium(net, Mode.BEST).failed if failed is None else frozenset(failed)
    sweeps = 0
    while True:
        sweeps += 1
        V = book_values(net, failed)
        idx = np.array(sorted(failed), dtype=int)
        if idx.size == 0:
            break
        # reversing i's own failure cost adds beta_i times column i of (I - C)^{-1}
        e = np.zeros((net.n, idx.size))
        e[idx, np.arange(idx.size)] = net.beta[idx]
        own = net.solve(e)[idx, np.arange(idx.size)]
        ok = net.c_hat[idx] * (V[idx] + own + gamma[idx]) >= net.theta[idx] - FAIL_TOL
        if not ok.any():
            break
        failed = failed - frozenset(idx[ok].tolist())
    V = book_values(net, failed)
    return EquilibriumState(V, net.c_hat * V, failed, Mode.BEST, sweeps)
