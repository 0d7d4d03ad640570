"""Node problem builders for the supported risk measures.

Each builder returns a vector optimization problem whose upper image is the
risk set at one node, expressed in coordinates of the eligible subspace M.
`terminal_problem` covers the horizon; `onestep_problem` composes the
conditional measure with the successor risk sets during backward induction.
An optional market bundle appends a trade variable to both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry, lp
from .geometry import OrderingCone, Polyhedron
from .market import MarketBundle
from .vop import ConvexVOP, EntropicTerm, LinearVOP, RegionTerm

KINDS = ("worst_case", "relaxed_worst_case", "avar", "entropic")


class SpecError(Exception):
    pass


@dataclass
class RiskSpec:
    """One conditional risk measure, applied at every step of a run.

    `eligible` lists the axes spanning the eligible space M; only
    axis-aligned eligible spaces are supported.
    """

    kind: str
    d: int
    eligible: list
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown risk measure kind {self.kind!r}")
        self.eligible = sorted(int(i) for i in self.eligible)
        if not self.eligible:
            raise SpecError("eligible space must contain at least one axis")
        if len(set(self.eligible)) != len(self.eligible):
            raise SpecError("duplicate eligible axis")
        if self.eligible[0] < 0 or self.eligible[-1] >= self.d:
            raise SpecError("eligible axis out of range")
        if self.kind == "relaxed_worst_case":
            eps = float(self.params.get("epsilon", 0.0))
            if eps < 0:
                raise SpecError("relaxation epsilon must be nonnegative")
            gens = np.atleast_2d(np.asarray(self.params["cone_generators"], float))
            if gens.shape[1] != self.d:
                raise SpecError("acceptance cone generators have wrong dimension")
        if self.kind == "avar":
            lam = np.atleast_1d(np.asarray(self.params["lam"], float))
            if lam.shape[0] != len(self.eligible) or np.any(lam <= 0) or np.any(lam > 1):
                raise SpecError("avar needs one level in (0, 1] per eligible axis")
        if self.kind == "entropic":
            lam = np.atleast_1d(np.asarray(self.params["lam"], float))
            if lam.shape[0] != self.d or np.any(lam <= 0):
                raise SpecError("entropic needs a positive aversion per axis")
            wmat = np.atleast_2d(np.asarray(self.params["c_dual"], float))
            if wmat.shape[1] != self.d:
                raise SpecError("acceptance cone dual rows have wrong dimension")
            if np.any(wmat < 0):
                raise SpecError("entropic acceptance cone must contain the orthant "
                                "(dual rows must be nonnegative)")
            if np.any(np.all(wmat == 0, axis=1)):
                raise SpecError("zero dual row")

    @property
    def qdim(self) -> int:
        return len(self.eligible)

    @property
    def convex(self) -> bool:
        return self.kind == "entropic"

    def embedding(self) -> np.ndarray:
        e = np.zeros((self.d, self.qdim))
        for col, axis in enumerate(self.eligible):
            e[axis, col] = 1.0
        return e

    def acceptance_duals(self) -> np.ndarray:
        if self.kind == "relaxed_worst_case":
            gens = np.atleast_2d(np.asarray(self.params["cone_generators"], float))
            return geometry.cone_from_generators(gens).dual_generators
        if self.kind == "entropic":
            return np.atleast_2d(np.asarray(self.params["c_dual"], float))
        return np.eye(self.d)


@dataclass
class NodeProblem:
    """A node's vector problem plus the variable layout needed to read
    solutions back (compensation Y, successor selections Z_j, trade k)."""

    problem: LinearVOP
    blocks: dict
    nb: int                             # successor count, 0 at the horizon
    qdim: int
    market_kind: str | None = None
    market_gens: np.ndarray | None = None   # cone generators, eta -> k map

    def split(self, x: np.ndarray):
        off, size = self.blocks["Y"]
        y = x[off:off + size]
        zs = []
        for j in range(self.nb):
            off, size = self.blocks[f"Z{j}"]
            zs.append(x[off:off + size])
        k = None
        if self.market_kind == "cone":
            off, size = self.blocks["eta"]
            k = self.market_gens.T @ x[off:off + size]
        elif self.market_kind == "convex_region":
            off, size = self.blocks["k"]
            k = x[off:off + size]
        return y, zs, k


class _Assembler:
    """Accumulates sparse-ish rows over named variable blocks."""

    def __init__(self):
        self.blocks = {}            # name -> (offset, size)
        self.nvar = 0
        self.bounds = []
        self.rows = []
        self.rels = []
        self.rhs = []

    def add_block(self, name: str, size: int, lo=None, hi=None) -> int:
        off = self.nvar
        self.blocks[name] = (off, size)
        self.nvar += size
        self.bounds.extend([(lo, hi)] * size)
        return off

    def sel(self, name: str) -> np.ndarray:
        off, size = self.blocks[name]
        m = np.zeros((size, self.nvar))
        m[:, off:off + size] = np.eye(size)
        return m

    def add_rows(self, mat: np.ndarray, rel: str, rhs: np.ndarray):
        mat = np.atleast_2d(mat)
        rhs = np.atleast_1d(rhs)
        for row, b in zip(mat, rhs):
            self.rows.append(np.asarray(row, float))
            self.rels.append(rel)
            self.rhs.append(float(b))

    def matrix(self):
        if not self.rows:
            return np.zeros((0, self.nvar)), np.zeros(0)
        rows = np.zeros((len(self.rows), self.nvar))
        for i, r in enumerate(self.rows):
            rows[i, : r.shape[0]] = r
        return rows, np.array(self.rhs)


def _finish(asm: _Assembler, objective: np.ndarray, cone: OrderingCone,
            entropic: list, regions: list, seed_dirs: list | None = None):
    rows, rhs = asm.matrix()
    c_mat = np.zeros((objective.shape[0], asm.nvar))
    c_mat[:, : objective.shape[1]] = objective
    if entropic or regions:
        for term in entropic:
            term.arg_mats = [_pad(m, asm.nvar) for m in term.arg_mats]
        for term in regions:
            term.s0 = _pad_vec(term.s0, asm.nvar)
            term.s1 = _pad_vec(term.s1, asm.nvar)
        lifts = []
        for name, (off, size) in asm.blocks.items():
            if name.startswith("Z") and name[1:].isdigit():
                u = np.zeros(asm.nvar)
                u[off:off + size] = 1.0
                lifts.append(u)
        off, size = asm.blocks["Y"]
        u = np.zeros(asm.nvar)
        u[off:off + size] = 1.0
        lifts.append(u)
        return ConvexVOP(C=c_mat, c0=np.zeros(objective.shape[0]), rows=rows,
                         rels=asm.rels, rhs=rhs, cone=cone, bounds=asm.bounds,
                         entropic=entropic, regions=regions, lifts=lifts,
                         seed_dirs=seed_dirs or [])
    return LinearVOP(C=c_mat, c0=np.zeros(objective.shape[0]), rows=rows,
                     rels=asm.rels, rhs=rhs, cone=cone, bounds=asm.bounds)


def _pad(mat: np.ndarray, nvar: int) -> np.ndarray:
    out = np.zeros((mat.shape[0], nvar))
    out[:, : mat.shape[1]] = mat
    return out


def _pad_vec(vec: np.ndarray, nvar: int) -> np.ndarray:
    out = np.zeros(nvar)
    out[: vec.shape[0]] = vec
    return out


def _market_parts(spec: RiskSpec, asm: _Assembler, market: MarketBundle):
    """Append the trade block; returns (image columns for the trade,
    ordering cone, region terms)."""
    if market is None:
        return None, geometry.orthant(spec.qdim), []
    if spec.qdim != spec.d:
        raise SpecError("market extension needs the full space to be eligible")
    d = spec.d
    if market.kind == "cone":
        gens = market.cone.generators
        off = asm.add_block("eta", gens.shape[0], lo=0.0)
        k_cols = np.zeros((d, asm.nvar))
        k_cols[:, off:off + gens.shape[0]] = gens.T
        if market.constraint is not None:
            rows = market.constraint.A @ k_cols
            asm.add_rows(rows, lp.GE, market.constraint.b)
        cone = geometry.cone_from_generators(np.vstack([np.eye(d), gens]))
        return k_cols, cone, []
    if d != 2:
        raise SpecError("convex solvency region needs d = 2")
    off = asm.add_block("k", 2)
    k_cols = asm.sel("k")
    if market.constraint is not None:
        asm.add_rows(market.constraint.A @ k_cols, lp.GE, market.constraint.b)
    s0 = np.zeros(asm.nvar)
    s0[off] = 1.0
    s1 = np.zeros(asm.nvar)
    s1[off + 1] = 1.0
    term = RegionTerm(s0=s0, s1=s1, theta=market.region.theta,
                      bid=market.region.bid, ask=market.region.ask)
    return k_cols, geometry.orthant(d), [term]


def terminal_problem(spec: RiskSpec, x: np.ndarray,
                     market: MarketBundle | None = None):
    """Risk set of the horizon payout at one terminal node.

    `x` is the claim value in physical units at that node (d components).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.d,):
        raise SpecError("payout has wrong dimension")
    asm = _Assembler()
    asm.add_block("Y", spec.qdim)
    emb = spec.embedding()
    sel_y = asm.sel("Y")
    entropic = []

    if spec.kind in ("worst_case", "avar"):
        # a single deterministic state collapses avar to the worst case
        asm.add_rows(emb @ sel_y, lp.GE, -x)
    elif spec.kind == "relaxed_worst_case":
        eps = float(spec.params.get("epsilon", 0.0))
        asm.add_rows(emb @ sel_y, lp.GE, -x - eps)
        wmat = spec.acceptance_duals()
        asm.add_rows(wmat @ emb @ sel_y, lp.GE, -(wmat @ x))
    else:
        lam = np.asarray(spec.params["lam"], float)
        for w in spec.acceptance_duals():
            entropic.append(EntropicTerm(w=w, lam=lam, probs=np.array([1.0]),
                                         arg_mats=[emb @ sel_y], arg_consts=[x.copy()]))

    k_cols, cone, regions = _market_parts(spec, asm, market)
    objective = _pad(asm.sel("Y"), asm.nvar)
    if k_cols is not None:
        objective = objective + _pad(k_cols, asm.nvar)
    prob = _finish(asm, objective, cone, entropic, regions)
    return NodeProblem(problem=prob, blocks=dict(asm.blocks), nb=0, qdim=spec.qdim,
                       market_kind=market.kind if market else None,
                       market_gens=(market.cone.generators
                                    if market and market.kind == "cone" else None))


def onestep_problem(spec: RiskSpec, children: list, probs: np.ndarray,
                    market: MarketBundle | None = None):
    """Composition step: choose one point in each successor risk set and a
    compensating eligible payment acceptable under the conditional measure."""
    q = spec.qdim
    nb = len(children)
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (nb,) or nb == 0:
        raise SpecError("need one probability per successor")
    asm = _Assembler()
    asm.add_block("Y", q)
    # Worst case forces Y >= Z_j with Z_j in an upper set, which holds iff Y
    # itself lies in that set; fold the successor rows onto Y and drop the Z
    # blocks (the selection Z_j = Y is always admissible).
    eliminate = spec.kind == "worst_case"
    if not eliminate:
        for j in range(nb):
            asm.add_block(f"Z{j}", q)
    for j, child in enumerate(children):
        if child.A.shape[1] != q:
            raise SpecError("successor set has wrong dimension")
        target = asm.sel("Y") if eliminate else asm.sel(f"Z{j}")
        asm.add_rows(child.A @ target, lp.GE, child.b)

    emb = spec.embedding()
    sel_y = asm.sel("Y")
    entropic = []

    if spec.kind == "worst_case":
        pass
    elif spec.kind == "relaxed_worst_case":
        eps = float(spec.params.get("epsilon", 0.0))
        wmat = spec.acceptance_duals()
        for j in range(nb):
            diff = emb @ (sel_y - asm.sel(f"Z{j}"))
            asm.add_rows(diff, lp.GE, np.full(spec.d, -eps))
            asm.add_rows(wmat @ diff, lp.GE, np.zeros(wmat.shape[0]))
    elif spec.kind == "avar":
        lam = np.asarray(spec.params["lam"], float)
        asm.add_block("z", q)
        for j in range(nb):
            asm.add_block(f"Zp{j}", q, lo=0.0)
        sel_z = asm.sel("z")
        for j in range(nb):
            asm.add_rows(asm.sel(f"Zp{j}") - _pad(asm.sel(f"Z{j}"), asm.nvar) - sel_z,
                         lp.GE, np.zeros(q))
        avg = np.zeros((q, asm.nvar))
        for j, pj in enumerate(probs):
            avg += pj * asm.sel(f"Zp{j}")
        asm.add_rows(_pad(asm.sel("Y"), asm.nvar) - avg / lam[:, None] + sel_z,
                     lp.EQ, np.zeros(q))
    else:
        lam = np.asarray(spec.params["lam"], float)
        # Per-axis saturation box for Y - Z_j: above `hi` the utility is flat
        # to within 1e-9 (and the successor being an upper set means Z_j can
        # always be raised to meet the cap), below `lo` the term is certainly
        # violated.  Bounding the exp arguments this way keeps the conic
        # subproblems well conditioned on far-out parts of the frontier.
        hi = np.log(1e9) / lam
        lo = -np.log(1e12) / lam
        for j in range(nb):
            diff = emb @ (sel_y - asm.sel(f"Z{j}"))
            asm.add_rows(diff, lp.LE, hi)
            asm.add_rows(diff, lp.GE, lo)
        for w in spec.acceptance_duals():
            mats = [emb @ (sel_y - asm.sel(f"Z{j}")) for j in range(nb)]
            entropic.append(EntropicTerm(w=w, lam=lam, probs=probs.copy(),
                                         arg_mats=mats,
                                         arg_consts=[np.zeros(spec.d)] * nb))

    k_cols, cone, regions = _market_parts(spec, asm, market)
    objective = _pad(asm.sel("Y"), asm.nvar)
    if k_cols is not None:
        objective = objective + _pad(k_cols, asm.nvar)
    # successor facet normals are close to the cut normals of the composed
    # problem; seeding them saves most of the sandwich discovery sweeps
    seeds = [row for child in children for row in child.A]
    prob = _finish(asm, objective, cone, entropic, regions, seed_dirs=seeds)
    blocks = dict(asm.blocks)
    if eliminate:
        for j in range(nb):
            blocks[f"Z{j}"] = blocks["Y"]
    return NodeProblem(problem=prob, blocks=blocks, nb=nb, qdim=spec.qdim,
                       market_kind=market.kind if market else None,
                       market_gens=(market.cone.generators
                                    if market and market.kind == "cone" else None))
