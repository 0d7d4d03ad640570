"""Vector optimization solvers.

Linear problems are solved exactly by a primal Benson outer-approximation
loop; convex problems by the same cutting scheme with scalar subproblems
handed to a conic solver, yielding an inner/outer polyhedral sandwich with
certified error level epsilon.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from . import geometry, lp
from .geometry import OrderingCone, Polyhedron

BENSON_TOL = 1e-8
CUT_MARGIN = 1e-9
# relative safety margin subtracted from support-cut offsets; must cover the
# inaccuracy of whichever solver produced the value so that no cut can slice
# into the true image.  Set per solve by _solve_robust (clean CLARABEL is two
# orders tighter than clean SCS); the fallback matches the loosest case.
CONVEX_CUT_MARGIN = 1e-5
MAX_CUTS = 2000


class VOPError(Exception):
    pass


class InfeasibleVOPError(VOPError):
    """Feasible region is empty (risk measure not finite at the node)."""


class DegenerateVOPError(VOPError):
    """Upper image recedes outside the declared cone or is the whole space."""


class VOPNumericError(VOPError):
    def __init__(self, msg, direction=None):
        super().__init__(msg)
        self.direction = direction


@dataclass
class EntropicTerm:
    """Constraint sum_j p_j sum_i w_i * u_i((A_j x + c_j)_i) >= 0 with
    u_i(t) = (1 - exp(-lam_i t)) / lam_i."""

    w: np.ndarray
    lam: np.ndarray
    probs: np.ndarray
    arg_mats: list          # per branch j: (d, nvar)
    arg_consts: list        # per branch j: (d,)

    def value(self, x: np.ndarray) -> float:
        total = 0.0
        for pj, aj, cj in zip(self.probs, self.arg_mats, self.arg_consts):
            t = aj @ x + cj
            e = np.exp(np.clip(-self.lam * t, -700, 700))
            total += pj * float(self.w @ ((1.0 - e) / self.lam))
        return total

    def cvxpy_constraint(self, x):
        lhs_terms = []
        rhs = 0.0
        # beyond the saturation scale the utility is flat to within 1e-9, and
        # the vanishing exp gradient there makes solvers wander; capping the
        # argument swaps that region for a benign linear one
        caps = np.log(1e9) / self.lam
        for pj, aj, cj in zip(self.probs, self.arg_mats, self.arg_consts):
            for i in range(self.w.shape[0]):
                if self.w[i] <= 0:
                    continue
                coef = pj * self.w[i] / self.lam[i]
                rhs += coef
                arg = cp.minimum(aj[i] @ x + cj[i], caps[i])
                lhs_terms.append(coef * cp.exp(-self.lam[i] * arg))
        return cp.sum(cp.hstack(lhs_terms)) <= rhs


@dataclass
class RegionTerm:
    """Trade (k0, k1) constrained to a convex solvency region given by the
    dual map K+(k) >= 0; k0 = s0.x, k1 = s1.x."""

    s0: np.ndarray
    s1: np.ndarray
    theta: np.ndarray
    bid: float
    ask: float

    def kplus(self, k0: float, k1: float) -> np.ndarray:
        t0, t1 = self.theta
        e0 = np.exp(np.clip(-self.bid * k1 / t0, -700, 700))
        e1 = np.exp(np.clip(-k0 / (self.ask * t1), -700, 700))
        return np.array([k0 + t0 * (1.0 - e0), t1 * (1.0 - e1) + k1])

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.kplus(float(self.s0 @ x), float(self.s1 @ x))

    def cvxpy_constraints(self, x):
        t0, t1 = self.theta
        k0 = self.s0 @ x
        k1 = self.s1 @ x
        # beyond the saturation scale of the exponentials a larger trade
        # improves the liquidation value by less than the cut margin, so a
        # hard cap there leaves the image unchanged up to 1e-8 while keeping
        # the conic subproblems well scaled
        cap0 = self.ask * t1 * np.log(t1 / 1e-8)
        cap1 = (t0 / self.bid) * np.log(t0 / 1e-8)
        return [
            t0 * cp.exp(-self.bid * k1 / t0) <= k0 + t0,
            t1 * cp.exp(-k0 / (self.ask * t1)) <= t1 + k1,
            k0 <= cap0,
            k1 <= cap1,
        ]


@dataclass
class LinearVOP:
    """min C x + c0 over {x : rows <rel> rhs}, ordered by `cone`."""

    C: np.ndarray
    c0: np.ndarray
    rows: np.ndarray
    rels: list
    rhs: np.ndarray
    cone: OrderingCone
    bounds: list | None = None

    @property
    def nvar(self) -> int:
        return self.C.shape[1]

    @property
    def qdim(self) -> int:
        return self.C.shape[0]


@dataclass
class ConvexVOP(LinearVOP):
    """LinearVOP plus exponential-type convex constraints.

    `lifts` are ordered x-space directions along which every linear GE row
    and every convex term is eventually non-decreasing (selection blocks
    first, the compensation block last); they let a near-feasible argmin be
    pushed to a certified feasible point.

    `seed_dirs` are optional scalarization directions known to be close to
    the final cut normals (e.g. facet normals of successor sets); seeding
    them skips most of the cut-discovery sweeps."""

    entropic: list = field(default_factory=list)
    regions: list = field(default_factory=list)
    lifts: list = field(default_factory=list)
    seed_dirs: list = field(default_factory=list)


@dataclass
class VOPSolution:
    points: list                 # (x_i, y_i) with y_i = C x_i + c0 feasible images
    directions: np.ndarray       # extreme recession directions of the upper image
    upper_image: Polyhedron      # outer polyhedron (exact in the linear case)
    inner_image: Polyhedron      # conv(images) + recession (== upper for linear)
    epsilon: float               # certified error level (0 for exact solves)
    converged: bool = True


def _vkey(v):
    return tuple(np.round(v, 9))


def _filter_seeds(seeds, cone_gens, m_dir, cap=800):
    """Normalize seed directions to the w @ m = 1 slice, keep only valid cut
    normals (nonnegative on the ordering cone) and dedupe."""
    out, seen = [], set()
    for w in seeds:
        w = np.asarray(w, float)
        s = float(w @ m_dir)
        if s <= 1e-12 or min(float(w @ g) for g in cone_gens) < -1e-12:
            continue
        w = w / s
        key = tuple(np.round(w, 8))
        if key in seen:
            continue
        seen.add(key)
        out.append(w)
    if len(out) > cap:
        out = out[:: len(out) // cap + 1]
    return out


def _outer_polyhedron(cuts_w, cuts_b, cone):
    return geometry.from_halfspaces(np.array(cuts_w), np.array(cuts_b), cone)


def solve_linear(prob: LinearVOP, tol: float = BENSON_TOL) -> VOPSolution:
    """Primal Benson: exact dual description of the upper image plus a
    finite solution set covering all its vertices."""
    duals = prob.cone.dual_generators
    m_dir = prob.cone.interior_direction()
    nvar = prob.nvar

    feas = lp.solve(lp.LinearProgram(np.zeros(nvar), prob.rows, prob.rels,
                                     prob.rhs, prob.bounds))
    if feas.status == lp.INFEASIBLE:
        raise InfeasibleVOPError("feasible region is empty")
    if not feas.optimal:
        raise VOPNumericError(f"feasibility probe: {feas.status}")

    cuts_w, cuts_b = [], []
    for w in duals:
        res = lp.solve(lp.LinearProgram(w @ prob.C, prob.rows, prob.rels,
                                        prob.rhs, prob.bounds))
        if res.status == lp.UNBOUNDED:
            raise DegenerateVOPError("upper image recedes outside the ordering cone")
        if not res.optimal:
            raise VOPNumericError(f"scalarization failed: {res.status}", direction=w)
        val = res.value + float(w @ prob.c0)
        cuts_w.append(w)
        cuts_b.append(val - CUT_MARGIN)

    # P2(v): min z  s.t.  feasible x,  C x + c0 <= v + z m   (cone inequalities)
    p2_rows = np.zeros((prob.rows.shape[0] + duals.shape[0], nvar + 1))
    p2_rows[: prob.rows.shape[0], :nvar] = prob.rows
    p2_rows[prob.rows.shape[0]:, :nvar] = duals @ prob.C
    p2_rows[prob.rows.shape[0]:, nvar] = -(duals @ m_dir)
    p2_rels = list(prob.rels) + [lp.LE] * duals.shape[0]
    p2_c = np.zeros(nvar + 1)
    p2_c[nvar] = 1.0
    p2_bounds = (list(prob.bounds) if prob.bounds else [(None, None)] * nvar) + [(None, None)]

    done = {}
    for _ in range(MAX_CUTS):
        verts, rays, lines = geometry.vertex_enum(np.array(cuts_w), np.array(cuts_b),
                                                  prob.cone)
        new_cut = False
        for v in verts:
            key = _vkey(v)
            if key in done:
                continue
            rhs = np.concatenate([prob.rhs, duals @ (v - prob.c0)])
            res = lp.solve(lp.LinearProgram(p2_c, p2_rows, p2_rels, rhs, p2_bounds))
            if not res.optimal:
                raise VOPNumericError(f"vertex subproblem: {res.status}")
            zstar = res.value
            scale = 1.0 + np.max(np.abs(v))
            if zstar <= tol * scale:
                x = res.x[:nvar]
                done[key] = (x, prob.C @ x + prob.c0)
                continue
            u = np.maximum(-res.duals[prob.rows.shape[0]:], 0.0)
            w_cut = u @ duals
            s = float(w_cut @ m_dir)
            if s <= 1e-12:
                raise VOPNumericError("degenerate cut normal")
            w_cut = w_cut / s
            off = float(w_cut @ v) + zstar
            cuts_w.append(w_cut)
            cuts_b.append(off - CUT_MARGIN)
            new_cut = True
        if not new_cut:
            break
    else:
        raise VOPNumericError("cut budget exhausted in linear solve")

    upper = _outer_polyhedron(cuts_w, cuts_b, prob.cone)
    points = [done[k] for k in sorted(done)]
    return VOPSolution(points=points, directions=upper.directions,
                       upper_image=upper, inner_image=upper, epsilon=0.0)


def solve_convex(prob: ConvexVOP, epsilon: float,
                 solver: str = "CLARABEL") -> VOPSolution:
    """Polyhedral sandwich for a convex problem: outer + epsilon*m is
    contained in the true upper image, which is contained in outer."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not prob.entropic and not prob.regions:
        return solve_linear(prob)
    duals = prob.cone.dual_generators
    m_dir = prob.cone.interior_direction()
    nvar = prob.nvar

    x = cp.Variable(nvar)
    base = _base_constraints(prob, x)
    y_expr = prob.C @ x + prob.c0

    # one parametrized scalarization problem so cvxpy canonicalizes only once
    w_par = cp.Parameter(prob.qdim)
    p1 = cp.Problem(cp.Minimize(w_par @ y_expr), base)

    def support(w):
        w_par.value = np.asarray(w, float)
        return _scalar_solve(p1, solver, w)

    cuts_w, cuts_b = [], []
    for w in duals:
        val = support(w)
        cuts_w.append(w)
        cuts_b.append(val - _cut_margin(val))
    for w in _filter_seeds(prob.seed_dirs, prob.cone.generators, m_dir):
        try:
            val = support(w)
        except VOPError:
            continue
        cuts_w.append(w)
        cuts_b.append(val - _cut_margin(val))

    z = cp.Variable()
    v_par = cp.Parameter(prob.qdim)
    cone_cons = [duals[l] @ y_expr - z * float(duals[l] @ m_dir) <= duals[l] @ v_par
                 for l in range(duals.shape[0])]
    p2 = cp.Problem(cp.Minimize(z), base + cone_cons)

    done = {}
    achieved = 0.0
    converged = False
    debug = bool(os.environ.get("SETRISK_VOP_DEBUG"))
    for sweep in range(MAX_CUTS):
        verts, rays, lines = geometry.vertex_enum(np.array(cuts_w), np.array(cuts_b),
                                                  prob.cone)
        if debug:
            print(f"  sweep {sweep}: {len(cuts_w)} cuts, {len(verts)} verts, "
                  f"{len(done)} done", flush=True)
        new_cut = False
        sweep_max = 0.0
        for v in verts:
            key = _vkey(v)
            if key in done:
                continue
            v_par.value = v
            _solve_robust(p2, solver, context="vertex subproblem")
            if p2.status not in ("optimal", "optimal_inaccurate"):
                raise VOPNumericError(f"vertex subproblem status {p2.status}")
            xv = np.asarray(x.value)
            # the solver's optimum is never trusted as a distance bound; it is
            # recomputed from the argmin's image, and only when that argmin
            # passes the full feasibility check (solvers sometimes report
            # near-optimal status with solutions the exp terms reject)
            certified = _check_feasible(prob, xv)
            repaired_img = None
            if certified:
                yv = prob.C @ xv + prob.c0
                zstar = max(float(np.max((duals @ (yv - v))
                                         / (duals @ m_dir))), 0.0)
                sweep_max = max(sweep_max, zstar)
                if zstar <= epsilon:
                    done[key] = (zstar, xv, yv)
                    continue
            else:
                zstar = float("inf")
                # the claimed distance is worthless, but the argmin may be
                # repairable into a feasible point that bounds it honestly
                xr = _repair(prob, xv)
                if xr is not None:
                    repaired_img = prob.C @ xr + prob.c0
                    bound = max(float(np.max((repaired_img - v) / m_dir)), 0.0)
                    if bound <= epsilon:
                        done[key] = (bound, xr, repaired_img)
                        sweep_max = max(sweep_max, bound)
                        continue
            u = np.array([max(float(c.dual_value), 0.0) for c in cone_cons])
            w_cut = u @ duals
            s = float(w_cut @ m_dir)
            if s <= 1e-12:
                raise VOPNumericError("degenerate cut normal", direction=v)
            w_cut = w_cut / s
            # the dual only fixes the cut direction; the offset comes from the
            # primal support value so an inaccurate dual cannot produce a cut
            # that slices into the true image
            try:
                off = support(w_cut)
            except VOPNumericError:
                off = None
            needed = 0.5 * (min(zstar, epsilon) if certified else epsilon)
            if off is None or off - float(w_cut @ v) <= needed:
                # dual direction too noisy to separate this vertex (flat,
                # far-out faces are extremely sensitive to it): refine it
                seeds = [d[2] for d in done.values() if d[2] is not None]
                sup_x = np.asarray(x.value)
                if not _check_feasible(prob, sup_x):
                    sup_x = _repair(prob, sup_x)
                if sup_x is not None:
                    seeds.append(prob.C @ sup_x + prob.c0)
                if repaired_img is not None:
                    seeds.append(repaired_img)
                refined = _refine_direction(v, duals, m_dir, support,
                                            x, prob, needed, seeds)
                if refined is not None and refined[0] == "bound":
                    # v is provably within refined[1] of the convex hull of
                    # the known feasible images: accept it at that distance
                    bound = min(refined[1], zstar) if certified else refined[1]
                    done[key] = (bound, xv if certified else None,
                                 prob.C @ xv + prob.c0 if certified else None)
                    sweep_max = max(sweep_max, bound)
                    continue
                if refined is None:
                    if debug:
                        gap = (off - float(w_cut @ v)
                               if off is not None else float("nan"))
                        print(f"  stall at v={v} zstar={zstar:.6g} "
                              f"certified={certified} w_cut={w_cut} "
                              f"gap={gap:.3g} needed={needed:.3g}", flush=True)
                    # no usable separating direction: accept the vertex at a
                    # certified distance rather than loop forever
                    if certified:
                        bound = max(min(zstar, _point_distance(v, seeds, m_dir))
                                    if seeds else zstar, 0.0)
                        done[key] = (bound, xv, prob.C @ xv + prob.c0)
                        STATS["stall_certified"] += 1
                    else:
                        bound = max(_point_distance(v, seeds, m_dir), 0.0)
                        done[key] = (bound, None, None)
                        STATS["stall_uncertified"] += 1
                    sweep_max = max(sweep_max, bound)
                    STATS["stall_bounds"].append(bound)
                    continue
                _, w_cut, off = refined
                STATS["refined"] += 1
            cuts_w.append(w_cut)
            cuts_b.append(off - _cut_margin(off))
            new_cut = True
        if not new_cut:
            achieved = max((d[0] for d in done.values()), default=sweep_max)
            converged = True
            break
    else:
        achieved = epsilon

    outer = _outer_polyhedron(cuts_w, cuts_b, prob.cone)
    points = [(xv, yv) for (_, xv, yv) in (done[k] for k in sorted(done))
              if xv is not None]
    inner = geometry.from_vrep([yv for _, yv in points], outer.directions, prob.cone)
    return VOPSolution(points=points, directions=outer.directions,
                       upper_image=outer, inner_image=inner,
                       epsilon=max(achieved, epsilon),
                       converged=converged)


MAX_REFINE = 40
FEAS_CHECK_TOL = 1e-6

# diagnostic counters for numerical-quality monitoring (not part of the API)
STATS = {"stall_certified": 0, "stall_uncertified": 0, "refined": 0,
          "inaccurate_restore": 0, "repaired": 0, "stall_bounds": []}


def _point_distance(v, images, m_dir):
    """Certified distance bound for v along m: the best feasible image that
    is known must dominate v + t*m for some finite t."""
    if not images:
        raise VOPNumericError("no feasible image point to bound a vertex",
                              direction=v)
    return min(float(np.max((np.asarray(y) - v) / m_dir)) for y in images)


def _check_feasible(prob: ConvexVOP, xv: np.ndarray, tol: float = FEAS_CHECK_TOL) -> bool:
    """True if xv satisfies every constraint of the problem up to tol.

    Solvers occasionally report near-optimal status with solutions that are
    badly infeasible (the exp terms amplify small residuals enormously), so
    nothing downstream may trust an argmin without this check."""
    if not np.all(np.isfinite(xv)):
        return False
    for i in range(prob.rows.shape[0]):
        r = float(prob.rows[i] @ xv) - float(prob.rhs[i])
        if prob.rels[i] == lp.GE and r < -tol:
            return False
        if prob.rels[i] == lp.LE and r > tol:
            return False
        if prob.rels[i] == lp.EQ and abs(r) > tol:
            return False
    if prob.bounds:
        for i, bnd in enumerate(prob.bounds):
            if bnd is None:
                continue
            lo, hi = bnd
            if lo is not None and xv[i] < lo - tol:
                return False
            if hi is not None and xv[i] > hi + tol:
                return False
    for term in getattr(prob, "entropic", []):
        if term.value(xv) < -tol:
            return False
    for term in getattr(prob, "regions", []):
        if np.min(term.value(xv)) < -tol:
            return False
    return True


def _repair(prob: ConvexVOP, xv: np.ndarray):
    """Push a near-feasible argmin to a certified feasible point, or None.

    Trades are pulled back into their solvency regions, then the point is
    lifted along the problem's repair directions until every remaining
    constraint clears.  Lifting only moves the image up in the ordering, so
    the result is a valid (if slightly pessimistic) support point."""
    if xv is None or not prob.lifts or not np.all(np.isfinite(xv)):
        return None
    if any(rel == lp.EQ for rel in prob.rels):
        return None
    x = np.asarray(xv, float).copy()
    if prob.bounds:
        for i, bnd in enumerate(prob.bounds):
            if bnd is None:
                continue
            lo, hi = bnd
            if lo is not None:
                x[i] = max(x[i], lo)
            if hi is not None:
                x[i] = min(x[i], hi)
    for term in prob.regions:
        i0 = int(np.argmax(term.s0))
        i1 = int(np.argmax(term.s1))
        t0, t1 = term.theta
        x[i0] = min(x[i0], term.ask * t1 * np.log(t1 / 1e-8))
        x[i1] = min(x[i1], (t0 / term.bid) * np.log(t0 / 1e-8))
        if np.min(term.value(x)) < 0.0:
            k0, k1 = x[i0], x[i1]
            for shrink in (0.99, 0.9, 0.5, 0.2, 0.05, 0.0):
                x[i0], x[i1] = shrink * k0, shrink * k1
                if np.min(term.value(x)) >= 0.0:
                    break
    ge = [i for i, r in enumerate(prob.rels) if r == lp.GE]
    for u in prob.lifts:
        beta = 0.0
        for i in ge:
            s = float(prob.rows[i] @ u)
            if s > 1e-9:
                viol = float(prob.rhs[i]) - float(prob.rows[i] @ x)
                if viol > 0.0:
                    beta = max(beta, viol / s)
        if beta > 0.0:
            x = x + (beta + 1e-12) * u
    if prob.entropic:
        u = prob.lifts[-1]

        def worst(b):
            return min(term.value(x + b * u) for term in prob.entropic)

        if worst(0.0) < 0.0:
            hi = 1.0
            for _ in range(60):
                if worst(hi) >= 0.0:
                    break
                hi *= 2.0
            else:
                return None
            lo = 0.0
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if worst(mid) >= 1e-9:
                    hi = mid
                else:
                    lo = mid
            x = x + hi * u
    le = [i for i, r in enumerate(prob.rels) if r == lp.LE]
    for i in le:
        viol = float(prob.rows[i] @ x) - float(prob.rhs[i])
        if viol <= 0.0:
            continue
        # Bump only the coordinates this row touches, along the first lift
        # direction that decreases it: single-coordinate increases stay
        # feasible for the successor rows and the saturated utilities.
        for u in prob.lifts[:-1]:
            du = np.where(np.abs(prob.rows[i]) > 1e-12, u, 0.0)
            s = float(prob.rows[i] @ du)
            if s < -1e-9:
                x = x + (viol / -s + 1e-12) * du
                break
    if _check_feasible(prob, x):
        STATS["repaired"] += 1
        return x
    return None


def _refine_direction(v, duals, m_dir, support, x, prob, needed, images):
    """Search for a direction w in the dual cone slice {w @ m = 1} whose
    support cut separates the outer vertex v by at least `needed`.

    max_w min_y w @ (y - v) is concave in w; solve it by cutting planes on
    the inner min, one support scalarization per iteration.  Returns
    ("cut", w, support value) on success.  Each iteration's LP value is, by
    duality, the distance from v along m to the convex hull of the sampled
    feasible images plus the cone — a standalone certificate that v is within
    that distance of the image — so on any failure or exhaustion the best
    bound seen so far is returned as ("bound", value).  None means no
    certificate of any kind was obtained."""
    nd = duals.shape[0]
    debug = bool(os.environ.get("SETRISK_VOP_DEBUG"))
    best = float("inf")

    def bail():
        return ("bound", max(float(best), 0.0)) if np.isfinite(best) else None

    pts = [np.asarray(y) for y in images]
    if not pts:
        w0 = m_dir / float(m_dir @ m_dir)
        try:
            support(w0)
        except VOPError:
            return None
        x0 = np.asarray(x.value)
        if not _check_feasible(prob, x0):
            x0 = _repair(prob, x0)
            if x0 is None:
                return None
        pts.append(prob.C @ x0 + prob.c0)
    for _ in range(MAX_REFINE):
        rows = [np.append(duals @ (y - v), -1.0) for y in pts]
        rels = [lp.GE] * len(pts)
        rhs = [0.0] * len(pts)
        rows.append(np.append(duals @ m_dir, 0.0))
        rels.append(lp.EQ)
        rhs.append(1.0)
        c = np.zeros(nd + 1)
        c[-1] = -1.0
        res = lp.solve(lp.LinearProgram(c, np.array(rows), rels, np.array(rhs),
                                        [(0.0, None)] * nd + [(None, None)]))
        if not res.optimal:
            if debug:
                print(f"    refine: LP {res.status}", flush=True)
            return bail()
        bound = res.x[-1]
        best = min(best, float(bound))
        if bound <= needed:
            return ("bound", max(float(bound), 0.0))
        w = np.maximum(res.x[:nd] @ duals, 0.0)
        s = float(w @ m_dir)
        if s <= 1e-12:
            return bail()
        w = w / s
        try:
            val = support(w)
        except VOPError as exc:
            if debug:
                print(f"    refine: scalar fail at w={w}: {exc}", flush=True)
            return bail()
        if val - float(w @ v) >= needed:
            return ("cut", w, val)
        xk = np.asarray(x.value)
        if not _check_feasible(prob, xk):
            # an infeasible argmin gives a fake-low support value; its raw
            # image would poison the search, so only a repaired version of
            # it may enter the sample
            xk = _repair(prob, xk)
            if xk is None:
                if debug:
                    print(f"    refine: unrepairable argmin at w={w}", flush=True)
                return bail()
        pts.append(prob.C @ xk + prob.c0)
        if debug:
            print(f"    refine: iter bound={bound:.4g} w={w} val-wv="
                  f"{val - float(w @ v):.4g}", flush=True)
    return bail()


def _base_constraints(prob: ConvexVOP, x):
    cons = []
    ge = [i for i, r in enumerate(prob.rels) if r == lp.GE]
    le = [i for i, r in enumerate(prob.rels) if r == lp.LE]
    eq = [i for i, r in enumerate(prob.rels) if r == lp.EQ]
    if ge:
        cons.append(prob.rows[ge] @ x >= prob.rhs[ge])
    if le:
        cons.append(prob.rows[le] @ x <= prob.rhs[le])
    if eq:
        cons.append(prob.rows[eq] @ x == prob.rhs[eq])
    if prob.bounds:
        for i, bnd in enumerate(prob.bounds):
            if bnd is None:
                continue
            lo, hi = bnd
            if lo is not None:
                cons.append(x[i] >= lo)
            if hi is not None:
                cons.append(x[i] <= hi)
    for term in prob.entropic:
        cons.append(term.cvxpy_constraint(x))
    for term in prob.regions:
        cons.extend(term.cvxpy_constraints(x))
    return cons


_INSTALLED = None
_LAST_MARGIN = CONVEX_CUT_MARGIN


def _cut_margin(val: float) -> float:
    """Relative safety margin for a support-cut offset, sized to the accuracy
    of the solver that produced the most recent scalar solve."""
    return _LAST_MARGIN * (1.0 + abs(val))


def _solve_robust(problem, solver, context, allow_inaccurate=True):
    """Solve with the requested conic solver, falling back to the others on
    failure (the node problems vary over several orders of magnitude and no
    single solver handles all of them).

    With `allow_inaccurate` an *_inaccurate status is accepted as-is — safe
    only for consumers that gate the result themselves (distance certificates
    are recomputed from feasibility-checked argmins).  Support values that
    become cut offsets must NOT allow it: an overshooting near-solution
    produces a cut that slices into the true image."""
    global _INSTALLED
    if _INSTALLED is None:
        _INSTALLED = set(cp.installed_solvers())
    chain = [] if solver == "CLARABEL" else [(solver, {})]
    chain += [("CLARABEL", {"tol_gap_abs": 1e-7, "tol_gap_rel": 1e-7}),
              # degenerate directions make the default line search give up
              # (InsufficientProgress at step 0); allowing short steps lets it
              # crawl to the same tolerances instead
              ("CLARABEL", {"tol_gap_abs": 1e-7, "tol_gap_rel": 1e-7,
                            "min_switch_step_length": 1e-2,
                            "min_terminate_step_length": 1e-5}),
              ("SCS", {"eps": 1e-7, "max_iters": 50000})]
    if not allow_inaccurate:
        # escalated second pass for the must-be-clean case
        chain.append(("SCS", {"eps": 1e-6, "max_iters": 100000}))
    chain.append(("CVXOPT", {}))
    last_exc = None
    global _LAST_MARGIN
    for name, kwargs in chain:
        if name not in _INSTALLED:
            continue
        try:
            problem.solve(solver=name, **kwargs)
        except cp.error.SolverError as exc:
            last_exc = exc
            continue
        if problem.status in ("optimal", "infeasible", "unbounded"):
            if name == "CLARABEL":
                _LAST_MARGIN = 1e-7
            elif name == "SCS":
                _LAST_MARGIN = 10.0 * kwargs.get("eps", 1e-4)
            else:
                _LAST_MARGIN = CONVEX_CUT_MARGIN
            return
        if (allow_inaccurate and problem.status
                and problem.status != "solver_error"):
            STATS["inaccurate_restore"] += 1
            _LAST_MARGIN = CONVEX_CUT_MARGIN
            return
    raise VOPNumericError(f"{context} failed: {last_exc or problem.status}")


def _scalar_solve(problem, solver, direction):
    try:
        _solve_robust(problem, solver, context="scalar subproblem",
                      allow_inaccurate=False)
    except VOPNumericError as exc:
        exc.direction = direction
        raise
    if problem.status in ("unbounded", "unbounded_inaccurate"):
        raise DegenerateVOPError("scalarization unbounded; image recedes outside cone")
    if problem.status in ("infeasible", "infeasible_inaccurate"):
        raise InfeasibleVOPError("feasible region is empty")
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise VOPNumericError(f"scalar subproblem status {problem.status}",
                              direction=direction)
    return float(problem.value)
