"""Backward induction of risk sets over a scenario tree.

Terminal nodes get the horizon risk set of the claim; interior nodes compose
the conditional measure with the successor sets, one vector problem per node.
Nodes of one time slice are independent and may be solved in parallel.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry, lp, riskmeasures, vop
from .geometry import Polyhedron
from .market import MarketModel
from .riskmeasures import RiskSpec


class InductionError(Exception):
    pass


class NodeInfeasibleError(InductionError):
    """The risk measure is not finite at some node."""

    def __init__(self, node_id, t):
        super().__init__(f"risk set empty at node {node_id} (time {t}); "
                         "the measure is not finite there")
        self.node_id = node_id
        self.t = t


@dataclass
class RunMode:
    convex: bool = False
    epsilon_step: float = 0.0
    jobs: int = 1
    vmax: int | None = None         # optional per-node frontier simplification
    solver: str = "CLARABEL"

    def __post_init__(self):
        if self.convex and self.epsilon_step <= 0:
            raise InductionError("convex mode needs a positive step error")
        if self.jobs < 1:
            raise InductionError("jobs must be at least 1")
        if self.vmax is not None and self.vmax < 2:
            raise InductionError("vertex cap must be at least 2")


@dataclass
class NodeRiskSet:
    key: tuple
    t: int
    set: Polyhedron                 # outer description (exact in linear mode)
    inner: Polyhedron
    solution: list                  # records with Y, Z per successor, k, image
    epsilon_total: float


def backward_induct(tree, spec: RiskSpec, claims: dict, mode: RunMode,
                    market: MarketModel | None = None) -> dict:
    """Solve every node, horizon first. `claims` maps terminal node keys to
    claim values in physical units (the amount the claim pays the holder is
    its negative risk contribution; pass the position's value X directly)."""
    results = {}
    gamma = tree.params.gamma
    for t in range(tree.params.t_steps, -1, -1):
        payloads = []
        for key in tree.levels[t]:
            node = tree.nodes[key]
            bundle = market.at_node(node, gamma) if market is not None else None
            if t == tree.params.t_steps:
                payloads.append((key, spec, mode, bundle, claims[key], None, None, 0.0))
            else:
                children = [results[ck].set for ck, _ in node.successors]
                probs = np.array([p for _, p in node.successors])
                child_eps = max(results[ck].epsilon_total for ck, _ in node.successors)
                payloads.append((key, spec, mode, bundle, None, children, probs,
                                 child_eps))
        if mode.jobs > 1 and len(payloads) > 1:
            with ProcessPoolExecutor(max_workers=mode.jobs) as pool:
                solved = list(pool.map(_solve_node, payloads, chunksize=4))
        else:
            solved = [_solve_node(p) for p in payloads]
        for key, res in zip(tree.levels[t], solved):
            if isinstance(res, NodeInfeasibleError):
                raise res
            results[key] = res
    return results


def backward_induct_market(tree, spec: RiskSpec, claims: dict,
                           market: MarketModel, mode: RunMode) -> dict:
    return backward_induct(tree, spec, claims, mode, market=market)


def _solve_node(payload):
    key, spec, mode, bundle, claim, children, probs, child_eps = payload
    t = key[0]
    if children is None:
        np_prob = riskmeasures.terminal_problem(spec, claim, market=bundle)
    else:
        np_prob = riskmeasures.onestep_problem(spec, children, probs, market=bundle)
    try:
        if mode.convex:
            sol = vop.solve_convex(np_prob.problem, mode.epsilon_step,
                                   solver=mode.solver)
        else:
            sol = vop.solve_linear(np_prob.problem)
    except vop.InfeasibleVOPError:
        node_id = f"{t}:" + "-".join(str(c) for c in key[1])
        return NodeInfeasibleError(node_id, t)

    records = []
    for x, image in sol.points:
        y, zs, k = np_prob.split(x)
        records.append({"Y": y, "Z": zs, "k": k, "image": image})
    outer = sol.upper_image
    eps_total = child_eps + sol.epsilon
    if mode.vmax is not None and outer.vertices.shape[0] > mode.vmax:
        outer, eta = simplify(outer, mode.vmax)
        eps_total += eta
    return NodeRiskSet(key=key, t=t, set=outer, inner=sol.inner_image,
                       solution=records, epsilon_total=eps_total)


def simplify(p: Polyhedron, vmax: int):
    """Drop facets greedily until at most `vmax` vertices remain; returns the
    enlarged outer set and a certified bound eta with
    coarse + eta*m >= original along the cone's interior direction."""
    a, b = p.A.copy(), p.b.copy()
    m = p.cone.interior_direction()
    while True:
        try:
            verts, _, _ = geometry.vertex_enum(a, b, p.cone)
        except geometry.GeometryError:
            break
        if verts.shape[0] <= vmax or a.shape[0] <= p.dim:
            break
        best = None
        for i in range(a.shape[0]):
            mask = np.ones(a.shape[0], dtype=bool)
            mask[i] = False
            try:
                vs, _, _ = geometry.vertex_enum(a[mask], b[mask], p.cone)
            except geometry.GeometryError:
                continue
            eta_i = max((_entry_distance(v, p, m) for v in vs), default=0.0)
            if best is None or eta_i < best[1]:
                best = (i, eta_i)
        if best is None:
            break
        mask = np.ones(a.shape[0], dtype=bool)
        mask[best[0]] = False
        a, b = a[mask], b[mask]
    coarse = geometry.from_halfspaces(a, b, p.cone)
    eta = max((_entry_distance(v, p, m) for v in coarse.vertices), default=0.0)
    return coarse, eta


def _entry_distance(v, p: Polyhedron, m) -> float:
    """Smallest t with v + t*m inside p (0 if already inside)."""
    c = np.array([1.0])
    rows = (p.A @ m)[:, None]
    res = lp.solve(lp.LinearProgram(c, rows, [lp.GE] * p.A.shape[0],
                                    p.b - p.A @ v))
    if not res.optimal:
        return np.inf
    return max(0.0, float(res.value))


def _node_id(key) -> str:
    return f"{key[0]}:" + "-".join(str(c) for c in key[1])


def run_to_json(results: dict) -> str:
    out = {}
    for key in sorted(results):
        r = results[key]
        out[_node_id(key)] = {
            "t": r.t,
            "epsilon_total": r.epsilon_total,
            "set": geometry.to_dict(r.set),
            "inner": geometry.to_dict(r.inner),
            "solution": [{
                "Y": [float(v) for v in rec["Y"]],
                "Z": [[float(v) for v in z] for z in rec["Z"]],
                "k": None if rec["k"] is None else [float(v) for v in rec["k"]],
                "image": [float(v) for v in rec["image"]],
            } for rec in r.solution],
        }
    return json.dumps(out, indent=1, sort_keys=True)
