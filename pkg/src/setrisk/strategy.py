"""Forward extraction of risk compensating strategies.

Given the per-node solutions of a backward run, walks a realized path,
picking convex weights over the node's solution images by a scalar LP, and
reconstructs holdings Z_t, injections u_t and trades k_t. The verification
helpers re-check the optimality inclusions and terminal solvency.
"""

from __future__ import annotations

import io

import numpy as np

from . import geometry, lp
from .riskmeasures import RiskSpec


class StrategyError(Exception):
    pass


class StrategyTrace:
    """Everything the forward pass produced along one path.

    All vectors live in coordinates of the eligible space. `succ_z[t]` maps
    every successor of path[t] to the holding the strategy would carry there,
    not just the realized one.
    """

    def __init__(self, path, z, u, k, lambdas, succ_z, seed=None):
        self.path = path
        self.z = z
        self.u = u
        self.k = k
        self.lambdas = lambdas
        self.succ_z = succ_z
        self.seed = seed


def choose_weights(z_in: np.ndarray, images: list, cost: np.ndarray,
                   directions: np.ndarray | None = None,
                   slack: float | None = None):
    """Convex weights over solution images: min cost'(V lambda) subject to
    V lambda + D eta <= z_in, sum lambda = 1, lambda >= 0, eta >= 0, where
    the columns of D are the recession directions of the node set (for a
    market run these are solvent trades and the eta part is booked as one).

    Returns (lambda, D eta). A small slack absorbs the vector solver's vertex
    tolerance; by default it scales with the magnitudes involved."""
    v = np.column_stack([np.asarray(im, float) for im in images])
    q, n = v.shape
    z_in = np.asarray(z_in, float)
    cost = np.asarray(cost, float)
    if directions is None or directions.size == 0:
        dmat = np.zeros((q, 0))
    else:
        dmat = np.asarray(directions, float).T
    nd = dmat.shape[1]
    if slack is None:
        slack = 1e-7 * (1.0 + max(np.max(np.abs(v)), np.max(np.abs(z_in))))
    rows = np.vstack([np.hstack([-v, -dmat]),
                      np.concatenate([np.ones(n), np.zeros(nd)])[None, :]])
    rhs = np.concatenate([-(z_in + slack), [1.0]])
    rels = [lp.GE] * q + [lp.EQ]
    obj = np.concatenate([cost @ v, np.zeros(nd)])
    res = lp.solve(lp.LinearProgram(obj, rows, rels, rhs,
                                    bounds=[(0.0, None)] * (n + nd)))
    if not res.optimal:
        raise StrategyError(
            "starting capital lies outside the node's risk set "
            f"(weight problem status: {res.status})")
    lam = np.maximum(res.x[:n], 0.0)
    extra = dmat @ res.x[n:]
    return lam / lam.sum(), extra


def sample_path(tree, seed: int):
    rng = np.random.default_rng(seed)
    key = tree.root.key
    path = [key]
    for _ in range(tree.params.t_steps):
        node = tree.nodes[key]
        probs = np.array([p for _, p in node.successors])
        j = rng.choice(len(probs), p=probs / probs.sum())
        key = node.successors[j][0]
        path.append(key)
    return path


def forward_pass(results: dict, tree, path: list, z0: np.ndarray,
                 cost: np.ndarray, seed=None) -> StrategyTrace:
    """Walk `path` from its first node, carrying z0 into the first step."""
    z0 = np.asarray(z0, float)
    z_seq = [z0]
    u_seq = [z0.copy()]
    k_seq = []
    lam_seq = []
    succ_z = []
    for step, key in enumerate(path):
        rset = results[key]
        sols = rset.solution
        if not sols:
            raise StrategyError(f"node {key} has no stored solutions")
        lam, extra = choose_weights(z_seq[step], [r["image"] for r in sols],
                                    cost, directions=rset.set.directions)
        lam_seq.append(lam)
        if sols[0]["k"] is not None:
            # the recession part of the decomposition is itself a solvent trade
            k_seq.append(sum(l * r["k"] for l, r in zip(lam, sols)) + extra)
        else:
            k_seq.append(np.zeros_like(z0))
        if step == len(path) - 1:
            succ_z.append({})
            break
        node = tree.nodes[key]
        zmap = {}
        for j, (ck, _) in enumerate(node.successors):
            zmap[ck] = sum(l * r["Z"][j] for l, r in zip(lam, sols))
        succ_z.append(zmap)
        nxt = path[step + 1]
        if nxt not in zmap:
            raise StrategyError(f"{nxt} is not a successor of {key}")
        z_next = zmap[nxt]
        z_seq.append(z_next)
        u_seq.append(z_next - z_seq[step] + k_seq[step])
    return StrategyTrace(path=list(path), z=z_seq, u=u_seq, k=k_seq,
                         lambdas=lam_seq, succ_z=succ_z, seed=seed)


def acceptability_margin(spec: RiskSpec, cap: np.ndarray, z_vals: list,
                         probs: np.ndarray) -> float:
    """Worst constraint slack of `cap` against the one-step measure applied
    to the claim paying -z_vals[j] in scenario j; nonnegative means cap is an
    acceptable compensation."""
    emb = spec.embedding()
    cap = np.asarray(cap, float)
    z_vals = [np.asarray(z, float) for z in z_vals]
    probs = np.asarray(probs, float)
    if spec.kind == "worst_case":
        return float(min(np.min(cap - z) for z in z_vals))
    if spec.kind == "relaxed_worst_case":
        eps = float(spec.params.get("epsilon", 0.0))
        wmat = spec.acceptance_duals()
        margins = []
        for z in z_vals:
            diff = emb @ (cap - z)
            margins.append(np.min(diff + eps))
            margins.append(np.min(wmat @ diff))
        return float(min(margins))
    if spec.kind == "avar":
        lam = np.asarray(spec.params["lam"], float)
        margins = []
        for i in range(spec.qdim):
            zi = np.array([z[i] for z in z_vals])
            # scalar minimization over the breakpoints of the piecewise form
            best = np.inf
            for zc in np.concatenate([-zi, [-np.max(zi) - 1.0]]):
                best = min(best, -zc + probs @ np.maximum(zi + zc, 0.0) / lam[i])
            margins.append(cap[i] - best)
        return float(min(margins))
    lam = np.asarray(spec.params["lam"], float)
    margins = []
    for w in spec.acceptance_duals():
        total = 0.0
        for pj, z in zip(probs, z_vals):
            arg = emb @ (cap - z)
            total += pj * float(w @ ((1.0 - np.exp(-lam * arg)) / lam))
        margins.append(total)
    return float(min(margins))


def terminal_solvent(z_val: np.ndarray, claim: np.ndarray, spec: RiskSpec,
                     bundle=None, tol: float = 1e-7) -> bool:
    """Can the terminal position be compensated (and, with a market, traded)
    into acceptability?"""
    emb = spec.embedding()
    pos = emb @ np.asarray(z_val, float) + np.asarray(claim, float)
    if bundle is None:
        return acceptability_margin(spec, emb.T @ pos, [np.zeros(spec.qdim)],
                                    np.array([1.0])) >= -tol
    if bundle.kind == "convex_region":
        from .market import convex_region_eval
        return bool(np.all(convex_region_eval(pos, bundle.region) >= -tol))
    gens = bundle.cone.generators
    n = gens.shape[0]
    res = lp.solve(lp.LinearProgram(np.zeros(n), -gens.T, [lp.GE] * pos.shape[0],
                                    -(pos + tol), bounds=[(0.0, None)] * n))
    return res.optimal


def verify_trace(trace: StrategyTrace, results: dict, tree, spec: RiskSpec,
                 claims: dict, market=None, slack: float = 1e-6) -> dict:
    """Re-check the trace: membership of each holding in its node set (I1),
    one-step acceptability of holdings (I2) and injections (I3), terminal
    solvency over the final fan, and the truncation property."""
    report = {"checks": 0, "violations": []}

    def fail(msg):
        report["violations"].append(msg)

    m_dir = geometry.orthant(spec.qdim).interior_direction()
    gamma = tree.params.gamma
    scale = 1.0 + max(float(np.max(np.abs(z))) for z in trace.z)
    eff = slack * scale
    for step, key in enumerate(trace.path):
        rset = results[key]
        report["checks"] += 1
        zt = trace.z[step] + (rset.epsilon_total + eff) * m_dir
        if not geometry.contains(rset.set, zt, tol=eff):
            fail(f"I1: holding at {key} outside the node risk set")
        if step == len(trace.path) - 1:
            continue
        node = tree.nodes[key]
        probs = np.array([p for _, p in node.successors])
        zs = [trace.succ_z[step][ck] for ck, _ in node.successors]
        budget = rset.epsilon_total + eff
        cap = trace.z[step] - trace.k[step]
        report["checks"] += 1
        if acceptability_margin(spec, cap + budget * m_dir, zs, probs) < -eff:
            fail(f"I2: holding at {key} not acceptable against successors")
        us = [z - trace.z[step] + trace.k[step] for z in zs]
        report["checks"] += 1
        if acceptability_margin(spec, budget * m_dir, us, probs) < -eff:
            fail(f"I3: injection after {key} not acceptable")

    # terminal solvency over the whole final fan
    last_interior = trace.path[-2] if len(trace.path) > 1 else None
    if last_interior is not None:
        node = tree.nodes[last_interior]
        budget = results[trace.path[0]].epsilon_total + eff
        for ck, _ in node.successors:
            report["checks"] += 1
            bundle = (market.at_node(tree.nodes[ck], gamma)
                      if market is not None else None)
            zt = trace.succ_z[-2][ck] + budget * m_dir
            if not terminal_solvent(zt, claims[ck], spec, bundle, tol=eff):
                fail(f"terminal position at {ck} not solvent")

    # truncation: restarting anywhere on the path must stay feasible
    cost = np.zeros(spec.qdim)
    cost[0] = 1.0
    for step in range(1, len(trace.path) - 1):
        report["checks"] += 1
        try:
            forward_pass(results, tree, trace.path[step:], trace.z[step], cost)
        except StrategyError as exc:
            fail(f"truncation: restart at step {step} failed ({exc})")
    return report


def trace_to_csv(trace: StrategyTrace, tree, spec: RiskSpec) -> str:
    emb = spec.embedding()
    d = spec.d
    buf = io.StringIO()
    cols = (["time", "node"] + [f"z{i}" for i in range(d)]
            + [f"u{i}" for i in range(d)] + [f"k{i}" for i in range(d)]
            + ["lambda_count"])
    buf.write(",".join(cols) + "\n")
    for step, key in enumerate(trace.path):
        node = tree.nodes[key]
        z = emb @ trace.z[step]
        u = emb @ trace.u[step]
        k = emb @ trace.k[step] if spec.qdim == d else np.zeros(d)
        nlam = int(np.sum(trace.lambdas[step] > 1e-12))
        vals = [str(step), node.id]
        vals += [f"{x:.12g}" for x in z] + [f"{x:.12g}" for x in u]
        vals += [f"{x:.12g}" for x in k] + [str(nlam)]
        buf.write(",".join(vals) + "\n")
    return buf.getvalue()
