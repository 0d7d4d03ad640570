"""Market friction models.

Proportional transaction costs give per-node solvency cones; convex
(illiquidity) costs give solvency regions described by a dual map K+.
Both expose the trade set added to the node problem by the market
extension, optionally intersected with a trading constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class SolvencyCone:
    """Cone of solvent positions; generators normalized to unit max-norm."""

    generators: np.ndarray      # (k, d)

    @property
    def dim(self) -> int:
        return self.generators.shape[1]


@dataclass(frozen=True)
class ConvexSolvencyRegion:
    theta: np.ndarray           # (theta_0, theta_1)
    bid: float
    ask: float

    def __post_init__(self):
        if np.any(self.theta <= 0):
            raise ModelError("theta must be strictly positive")


@dataclass(frozen=True)
class TradingConstraint:
    """Closed convex set {k : A k >= b} intersected with the trade set."""

    A: np.ndarray
    b: np.ndarray


def proportional_cone(prices: np.ndarray, bond: float, gamma: np.ndarray) -> SolvencyCone:
    """Solvency cone under proportional costs; cash is the intermediary, so
    only cash<->asset trade directions appear besides the free-disposal basis."""
    prices = np.atleast_1d(np.asarray(prices, dtype=float))
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), prices.shape)
    if np.any(prices <= 0) or bond <= 0:
        raise ModelError("prices and bond must be positive")
    if np.any(gamma < 0) or np.any(gamma >= 1):
        raise ModelError("gamma must lie in [0, 1)")
    nrisky = prices.shape[0]
    d = nrisky + 1
    cols = []
    for i in range(nrisky):
        sell = np.zeros(d)          # sell one unit of asset i for cash
        sell[0] = prices[i] * (1.0 + gamma[i]) / bond
        sell[i + 1] = -1.0
        buy = np.zeros(d)           # buy one unit of asset i with cash
        buy[0] = -prices[i] * (1.0 - gamma[i]) / bond
        buy[i + 1] = 1.0
        cols.extend([sell, buy])
    cols.extend(np.eye(d))
    gens = np.array(cols)
    gens = gens / np.max(np.abs(gens), axis=1)[:, None]
    return SolvencyCone(gens)


def convex_region_eval(k: np.ndarray, region: ConvexSolvencyRegion) -> np.ndarray:
    """The dual map K+(k); k belongs to the region iff both components >= 0."""
    k = np.asarray(k, dtype=float)
    t0, t1 = region.theta
    e0 = np.exp(np.clip(-region.bid * k[1] / t0, -700.0, 700.0))
    e1 = np.exp(np.clip(-k[0] / (region.ask * t1), -700.0, 700.0))
    return np.array([k[0] + t0 * (1.0 - e0), t1 * (1.0 - e1) + k[1]])


def region_contains(k: np.ndarray, region: ConvexSolvencyRegion, tol: float = 1e-12) -> bool:
    return bool(np.all(convex_region_eval(k, region) >= -tol))


@dataclass(frozen=True)
class MarketBundle:
    """Per-node trade set handed to the node problem builder."""

    kind: str                               # "cone" or "convex_region"
    cone: SolvencyCone | None = None
    region: ConvexSolvencyRegion | None = None
    constraint: TradingConstraint | None = None

    @property
    def dim(self) -> int:
        if self.kind == "cone":
            return self.cone.dim
        return 2


@dataclass
class MarketModel:
    """Run-level market selection; evaluated per node."""

    kind: str                               # "cone" or "convex_region"
    theta: np.ndarray | None = None
    constraint: TradingConstraint | None = None

    def at_node(self, node, gamma) -> MarketBundle:
        return market_set(node, self.kind, gamma, theta=self.theta,
                          constraint=self.constraint)


def market_set(node, model: str, gamma, theta=None,
               constraint: TradingConstraint | None = None) -> MarketBundle:
    """Trade-set bundle for one node."""
    if model == "cone":
        cone = proportional_cone(node.mid, node.bond, gamma)
        if constraint is not None:
            _check_nonempty_intersection(cone, constraint)
        return MarketBundle("cone", cone=cone, constraint=constraint)
    if model == "convex_region":
        if node.mid.shape[0] != 1:
            raise ModelError("convex region market needs exactly one risky asset")
        if theta is None:
            raise ModelError("convex region market needs theta")
        region = ConvexSolvencyRegion(theta=np.asarray(theta, dtype=float),
                                      bid=float(node.bid[0]), ask=float(node.ask[0]))
        if constraint is not None and not _region_constraint_feasible(region, constraint):
            raise ModelError("empty intersection of trade set and trading constraint")
        return MarketBundle("convex_region", region=region, constraint=constraint)
    raise ModelError(f"unknown market model {model!r}")


def _check_nonempty_intersection(cone: SolvencyCone, constraint: TradingConstraint):
    from . import lp
    d = cone.dim
    k = constraint.A.shape[0]
    ngen = cone.generators.shape[0]
    # k = G eta, eta >= 0, A k >= b
    rows = np.hstack([constraint.A @ cone.generators.T])
    res = lp.solve(lp.LinearProgram(np.zeros(ngen), rows, [lp.GE] * k, constraint.b,
                                    bounds=[(0, None)] * ngen))
    if not res.optimal:
        raise ModelError("empty intersection of solvency cone and trading constraint")


def _region_constraint_feasible(region, constraint, tol=1e-9) -> bool:
    # 0 is in every region; a constraint set containing 0 is enough in practice
    return bool(np.all(constraint.A @ np.zeros(2) >= constraint.b - tol))
