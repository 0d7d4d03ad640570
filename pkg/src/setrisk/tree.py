"""Recombining scenario lattice for correlated geometric Brownian motions.

Each risky asset moves on an n-point increment grid clipped at +/- nu
standard deviations; conditional branch probabilities are multivariate
normal masses of the boxes around the grid points and are identical at
every node.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.stats import norm


class TreeError(Exception):
    pass


class UnsupportedError(TreeError):
    """More than two correlated risky assets."""


@dataclass
class TreeParams:
    d: int                      # asset count including the risk-free one
    t_steps: int
    horizon_years: float
    n: int                      # grid points per risky asset
    nu: float
    mu: np.ndarray              # (d-1,)
    sigma: np.ndarray           # (d-1,)
    rho: np.ndarray             # (d-1, d-1) correlation
    s0: np.ndarray              # (d-1,)
    r: float
    gamma: np.ndarray           # (d-1,) proportional costs
    bond_compounding: str = "continuous"   # or "simple"

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        self.s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self.rho = np.atleast_2d(np.asarray(self.rho, dtype=float))
        if self.n < 2:
            raise TreeError("need at least two grid points per asset")
        if self.nu <= 0:
            raise TreeError("nu must be positive")
        if np.any(self.sigma <= 0):
            raise TreeError("volatilities must be positive")
        if np.any(self.gamma < 0) or np.any(self.gamma >= 1):
            raise TreeError("proportional costs must lie in [0, 1)")
        if not np.allclose(self.rho, self.rho.T) or not np.allclose(np.diag(self.rho), 1.0):
            raise TreeError("rho must be a correlation matrix")
        if np.any(np.linalg.eigvalsh(self.rho) < -1e-10):
            raise TreeError("rho must be positive semidefinite")
        if self.bond_compounding not in ("continuous", "simple"):
            raise TreeError("bond_compounding must be 'continuous' or 'simple'")

    @property
    def dt(self) -> float:
        return self.horizon_years / self.t_steps

    def bond(self, t: int) -> float:
        if self.bond_compounding == "continuous":
            return float(np.exp(self.r * t * self.dt))
        return float((1.0 + self.r * self.dt) ** t)


@dataclass
class Node:
    t: int
    state: tuple                # cumulative increment index per risky asset
    mid: np.ndarray             # (d-1,)
    bid: np.ndarray
    ask: np.ndarray
    bond: float
    successors: list = field(default_factory=list)  # (child key, probability)

    @property
    def key(self):
        return (self.t, self.state)

    @property
    def id(self) -> str:
        return f"{self.t}:" + "-".join(str(c) for c in self.state)


@dataclass
class ScenarioTree:
    params: TreeParams
    nodes: dict                 # key -> Node
    levels: list                # levels[t] = sorted list of keys
    branch_probs: np.ndarray    # probability per scenario index
    scenarios: list             # scenario index -> increment index tuple

    def node(self, key) -> Node:
        return self.nodes[key]

    @property
    def root(self) -> Node:
        return self.nodes[self.levels[0][0]]

    def terminal_keys(self):
        return self.levels[-1]


def scenario_grid(n: int, nu: float) -> np.ndarray:
    return np.linspace(-nu, nu, n)


def scenario_set(n: int, nu: float, d: int) -> list:
    """The grid of up-down moves, one coordinate per risky asset."""
    grid = scenario_grid(n, nu)
    return [np.array(e) for e in itertools.product(grid, repeat=d - 1)]


def _breakpoints(n: int, nu: float) -> np.ndarray:
    grid = scenario_grid(n, nu)
    inner = (grid[:-1] + grid[1:]) / 2.0
    return np.concatenate([[-np.inf], inner, [np.inf]])


def bvn_rectangle(a: np.ndarray, b: np.ndarray, rho: float,
                  eps: float = 1e-12) -> float:
    """Standard bivariate normal mass of [a0,b0] x [a1,b1], by conditioning
    on the first coordinate and adaptive quadrature."""
    if abs(rho) < 1e-14:
        return float((norm.cdf(b[0]) - norm.cdf(a[0])) * (norm.cdf(b[1]) - norm.cdf(a[1])))
    s = np.sqrt(1.0 - rho * rho)

    def integrand(x):
        return norm.pdf(x) * (norm.cdf((b[1] - rho * x) / s) - norm.cdf((a[1] - rho * x) / s))

    val, _ = integrate.quad(integrand, a[0], b[0], epsabs=eps, epsrel=1e-10, limit=200)
    return float(val)


def box_probabilities(n: int, nu: float, rho: np.ndarray) -> np.ndarray:
    """One probability per element of the scenario set, in product order."""
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    nrisky = rho.shape[0]
    bp = _breakpoints(n, nu)
    if nrisky == 1:
        cdf = norm.cdf(bp)
        probs = np.diff(cdf)
    elif nrisky == 2:
        r = float(rho[0, 1])
        probs = np.array([
            bvn_rectangle(np.array([bp[i], bp[j]]), np.array([bp[i + 1], bp[j + 1]]), r)
            for i in range(n) for j in range(n)
        ])
    else:
        raise UnsupportedError("box probabilities support at most two risky assets")
    if np.any(probs <= 0):
        raise TreeError("degenerate branch probability")
    return probs / probs.sum()


def build_tree(params: TreeParams) -> ScenarioTree:
    """Build the full recombining lattice with prices and branch probabilities."""
    nrisky = params.d - 1
    grid = scenario_grid(params.n, params.nu)
    scen_idx = list(itertools.product(range(params.n), repeat=nrisky))
    probs = box_probabilities(params.n, params.nu, params.rho)
    dt = params.dt
    drift = (params.mu - params.sigma ** 2 / 2.0) * dt
    volstep = params.sigma * np.sqrt(dt)

    max_exp = np.max(np.abs(drift)) * params.t_steps + np.max(volstep) * params.nu * params.t_steps
    if max_exp > 700:
        raise TreeError("price factor overflow; rescale parameters")

    nodes = {}
    levels = []
    for t in range(params.t_steps + 1):
        level = []
        bond = params.bond(t)
        for state in itertools.product(range(t * (params.n - 1) + 1), repeat=nrisky):
            cum = -params.nu * t + (2.0 * params.nu / (params.n - 1)) * np.array(state)
            mid = params.s0 * np.exp(drift * t + volstep * cum)
            node = Node(t=t, state=state, mid=mid,
                        bid=mid * (1.0 - params.gamma),
                        ask=mid * (1.0 + params.gamma), bond=bond)
            nodes[node.key] = node
            level.append(node.key)
        levels.append(sorted(level))

    for t in range(params.t_steps):
        for key in levels[t]:
            node = nodes[key]
            for si, inc in enumerate(scen_idx):
                child_state = tuple(node.state[i] + inc[i] for i in range(nrisky))
                node.successors.append(((t + 1, child_state), float(probs[si])))

    return ScenarioTree(params=params, nodes=nodes, levels=levels,
                        branch_probs=probs, scenarios=scen_idx)


def tree_to_json(tree: ScenarioTree) -> str:
    out = []
    for t, level in enumerate(tree.levels):
        for key in level:
            node = tree.nodes[key]
            out.append({
                "id": node.id, "t": node.t, "state": list(node.state),
                "mid": list(map(float, node.mid)),
                "bid": list(map(float, node.bid)),
                "ask": list(map(float, node.ask)),
                "bond": node.bond,
                "successors": [[tree.nodes[k].id, p] for k, p in node.successors],
            })
    return json.dumps(out, indent=1)
