"""Polyhedral kernel.

Closed convex upper sets in R^d carried in both representations:
halfspaces {x : A x >= b} and conv(vertices) + cone(directions). Sets whose
recession cone contains lines (frictionless exchange directions) are handled
by enumerating in the quotient along the lineality space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import lp

FEAS_TOL = 1e-9   # point feasibility / membership
SET_TOL = 1e-7    # set equality / inclusion


class GeometryError(Exception):
    pass


class EmptyPolyhedronError(GeometryError):
    """H-representation has no feasible point."""


class MalformedUpperSetError(GeometryError):
    """Set recedes in a direction outside its ordering cone."""


def _normalize_rows(a, b=None):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    norms = np.linalg.norm(a, axis=1)
    norms[norms == 0] = 1.0
    if b is None:
        return a / norms[:, None]
    return a / norms[:, None], np.asarray(b, dtype=float) / norms


def _nullspace(a, tol=1e-10):
    a = np.atleast_2d(a)
    if a.size == 0:
        return np.eye(a.shape[1])
    _, s, vt = np.linalg.svd(a)
    rank = int(np.sum(s > tol * max(a.shape) * (s[0] if s.size else 1.0)))
    return vt[rank:].T


def _rowspace(a, tol=1e-10):
    a = np.atleast_2d(a)
    _, s, vt = np.linalg.svd(a)
    rank = int(np.sum(s > tol * max(a.shape) * (s[0] if s.size else 1.0)))
    return vt[:rank].T


def _dedupe(points, tol):
    out = []
    for p in points:
        if not any(np.max(np.abs(p - q)) <= tol * (1.0 + np.max(np.abs(q))) for q in out):
            out.append(p)
    return out


def _pointed_cone_rays(a, tol=FEAS_TOL):
    """Extreme rays of the pointed cone {y : a y >= 0}; a has full column rank."""
    a = np.atleast_2d(a)
    m, q = a.shape
    if q == 1:
        rays = []
        for y in (np.array([1.0]), np.array([-1.0])):
            if np.all(a @ y >= -tol):
                rays.append(y)
        return rays
    rays = []
    for idx in combinations(range(m), q - 1):
        sub = a[list(idx)]
        ns = _nullspace(sub, tol=1e-9)
        if ns.shape[1] != 1:
            continue
        r = ns[:, 0]
        r = r / np.linalg.norm(r)
        if np.all(a @ r >= -tol):
            cand = r
        elif np.all(a @ r <= tol):
            cand = -r
        else:
            continue
        rays.append(cand)
    return _dedupe(rays, 1e-7)


def cone_rays_and_lines(a):
    """Extreme rays and a lineality basis of {x : a x >= 0}."""
    a = _normalize_rows(a)
    d = a.shape[1]
    lines = _nullspace(a)
    if lines.shape[1] == d:
        return [], [lines[:, j] for j in range(d)]
    q_basis = _nullspace(lines.T) if lines.shape[1] else np.eye(d)
    rays_q = _pointed_cone_rays(a @ q_basis)
    rays = [q_basis @ r for r in rays_q]
    return rays, [lines[:, j] for j in range(lines.shape[1])]


@dataclass(frozen=True)
class OrderingCone:
    """Closed convex cone given by generators and generators of its dual."""

    generators: np.ndarray        # (k, d)
    dual_generators: np.ndarray   # (k_dual, d)

    @property
    def dim(self) -> int:
        return self.generators.shape[1]

    def interior_direction(self) -> np.ndarray:
        m = self.dual_generators.sum(axis=0)
        n = np.linalg.norm(m)
        if n == 0:
            raise GeometryError("cone has trivial dual; no interior direction")
        return m / n

    def contains(self, x, tol=FEAS_TOL) -> bool:
        return bool(np.all(self.dual_generators @ x >= -tol * (1.0 + np.max(np.abs(x)))))


def cone_from_generators(gens: np.ndarray) -> OrderingCone:
    """Build an OrderingCone, computing dual generators by ray enumeration."""
    gens = np.atleast_2d(np.asarray(gens, dtype=float))
    norms = np.max(np.abs(gens), axis=1)
    gens = gens / norms[:, None]
    rays, lines = cone_rays_and_lines(gens)  # rays of {w : gens w >= 0}
    dual = rays + [l for l in lines] + [-l for l in lines]
    if not dual:
        raise GeometryError("cone is the whole space; dual cone is trivial")
    return OrderingCone(gens, np.array(_dedupe(dual, 1e-9)))


def orthant(d: int) -> OrderingCone:
    return OrderingCone(np.eye(d), np.eye(d))


@dataclass(frozen=True)
class Polyhedron:
    """Upper set {x : A x >= b} = conv(vertices) + cone(directions).

    `directions` always contain the generators of `cone`; lineality is stored
    as +/- paired directions.
    """

    A: np.ndarray
    b: np.ndarray
    vertices: np.ndarray
    directions: np.ndarray
    cone: OrderingCone

    @property
    def dim(self) -> int:
        return self.A.shape[1]


def contains(p: Polyhedron, x, tol: float = FEAS_TOL) -> bool:
    """Membership test against the H-representation."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    x = np.asarray(x, dtype=float)
    if x.shape[0] != p.dim:
        raise ValueError("dimension mismatch")
    return bool(np.all(p.A @ x >= p.b - tol))


def includes(p: Polyhedron, q: Polyhedron, tol: float = SET_TOL) -> bool:
    """Set inclusion q subseteq p."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    scale = 1.0 + max(np.max(np.abs(q.vertices)) if q.vertices.size else 0.0, 1.0)
    for v in q.vertices:
        if not contains(p, v, tol * scale):
            return False
    for r in q.directions:
        rn = r / max(np.linalg.norm(r), 1e-300)
        if not np.all(p.A @ rn >= -tol):
            return False
    return True


def set_equal(p: Polyhedron, q: Polyhedron, tol: float = SET_TOL) -> bool:
    return includes(p, q, tol) and includes(q, p, tol)


def vertex_enum(halfspaces_a, halfspaces_b, cone: OrderingCone):
    """Dual description of {x : A x >= b}.

    Returns (vertices, rays, lines). Lines are accepted only when the
    ordering cone contains them; otherwise the set is a malformed upper set.
    Raises EmptyPolyhedronError when infeasible.
    """
    a, b = _normalize_rows(halfspaces_a, halfspaces_b)
    d = a.shape[1]

    res = lp.solve(lp.LinearProgram(np.zeros(d), a, [lp.GE] * a.shape[0], b))
    if res.status == lp.INFEASIBLE:
        raise EmptyPolyhedronError("halfspace system is infeasible")
    if not res.optimal:
        raise GeometryError(f"feasibility probe failed: {res.status}")

    lines = _nullspace(a)
    for j in range(lines.shape[1]):
        l = lines[:, j]
        if np.max(np.abs(cone.dual_generators @ l)) > 1e-7:
            raise MalformedUpperSetError("lineality direction outside the ordering cone")
    # receding against the cone interior would make the set the whole of M
    m_int = cone.interior_direction()
    if np.all(a @ (-m_int) >= -FEAS_TOL):
        raise MalformedUpperSetError("set recedes against the ordering cone")

    q_basis = _nullspace(lines.T) if lines.shape[1] else np.eye(d)
    aq = a @ q_basis
    qdim = aq.shape[1]

    vertices_q = _enum_vertices_pointed(aq, b)
    if not vertices_q:
        raise GeometryError("no vertex found in pointed quotient of a feasible set")
    rays_q = _pointed_cone_rays(aq)

    vertices = [q_basis @ v for v in vertices_q]
    rays = [q_basis @ r for r in rays_q]
    line_list = [lines[:, j] for j in range(lines.shape[1])]
    return vertices, rays, line_list


def _enum_vertices_2d(a, b):
    """Vertices of a pointed planar region {y : a y >= b} by an angular sweep.

    Sorting the cuts by normal angle makes the frontier a single walk, so
    near-parallel cuts cannot multiply into sliver vertices the way the
    generic pairwise enumeration allows."""
    norms = np.linalg.norm(a, axis=1)
    a = a / norms[:, None]
    b = b / norms
    scale = 1.0 + (np.max(np.abs(b)) if b.size else 0.0)
    # pointedness bounds the normal fan by a half turn; measure angles
    # relative to the mean normal so the atan2 branch cut is never inside it
    mean = a.sum(axis=0)
    if np.linalg.norm(mean) < 1e-12:
        raise GeometryError("normal fan spans a half turn; region not pointed")
    mean /= np.linalg.norm(mean)
    rel = np.arctan2(a @ np.array([-mean[1], mean[0]]), a @ mean)
    order = np.argsort(rel, kind="stable")

    def isect(i, j):
        mat = np.array([a[i], a[j]])
        det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
        if abs(det) < 1e-12:
            return None
        return np.linalg.solve(mat, np.array([b[i], b[j]]))

    keep = []
    for i in order:
        if keep and rel[i] - rel[keep[-1]] < 1e-12:
            if b[i] > b[keep[-1]]:
                keep[-1] = i
            continue
        keep.append(i)
    stack = []
    for i in keep:
        while len(stack) >= 2:
            p = isect(stack[-2], i)
            # pop only when the middle cut is (numerically) truly redundant:
            # a tolerant pop cascades — every pop moves the corner outward,
            # making the next cut look redundant too.  Sliver vertices from
            # kept near-parallel cuts are merged by the dedupe below instead.
            if p is None or a[stack[-1]] @ p >= b[stack[-1]] - 1e-12 * scale:
                stack.pop()
            else:
                break
        stack.append(i)
    cand = [isect(stack[i], stack[i + 1]) for i in range(len(stack) - 1)]
    cand = [p for p in cand if p is not None]
    if not cand:
        return []
    pts = np.array(cand)
    feas = np.all(pts @ a.T >= b[None, :] - FEAS_TOL * scale * 10, axis=1)
    return _dedupe(list(pts[feas]), 1e-9 * scale)


def _enum_vertices_pointed(a, b, tol=FEAS_TOL):
    """All vertices of {y : a y >= b} with a of full column rank."""
    m, q = a.shape
    if q == 2 and m >= 2:
        return _enum_vertices_2d(a, b)
    if q == 1:
        vals = b / a[:, 0]
        lo = vals[a[:, 0] > 0]
        hi = vals[a[:, 0] < 0]
        verts = []
        if lo.size:
            verts.append(np.array([np.max(lo)]))
        if hi.size:
            v = np.array([np.min(hi)])
            if not verts or abs(v[0] - verts[0][0]) > tol:
                verts.append(v)
        return _dedupe(verts, 1e-9)
    if m < q:
        return []
    idx = np.array(list(combinations(range(m), q)))
    mats = a[idx]                              # (ncomb, q, q)
    dets = np.abs(np.linalg.det(mats))
    ok = dets > 1e-10
    if not np.any(ok):
        return []
    sols = np.linalg.solve(mats[ok], b[idx[ok]][..., None])[..., 0]
    scale = 1.0 + np.max(np.abs(b)) if b.size else 1.0
    feas = np.all(sols @ a.T >= b[None, :] - tol * scale * 10, axis=1)
    return _dedupe(list(sols[feas]), 1e-9)


def from_halfspaces(a, b, cone: OrderingCone) -> Polyhedron:
    a_n, b_n = _normalize_rows(a, b)
    vertices, rays, lines = vertex_enum(a_n, b_n, cone)
    dirs = rays + lines + [-l for l in lines]
    dirs = _dedupe([d / np.max(np.abs(d)) for d in dirs], 1e-9)
    return Polyhedron(a_n, b_n, np.array(vertices), np.array(dirs), cone)


def _prune_points(points, directions, tol=1e-9):
    """Drop points lying in the convex-conic hull of the remaining points."""
    pts = list(points)
    keep = list(range(len(pts)))
    changed = True
    while changed and len(keep) > 1:
        changed = False
        for pos, i in enumerate(keep):
            others = [pts[j] for j in keep if j != i]
            if _in_hull(pts[i], others, directions, tol):
                keep.pop(pos)
                changed = True
                break
    return [pts[i] for i in keep]


def _in_hull(p, points, directions, tol):
    if not points:
        return False
    d = p.shape[0]
    npts, ndirs = len(points), len(directions)
    # columns: lambda (convex weights), mu (conic weights)
    rows = np.zeros((d + 1, npts + ndirs))
    rows[:d, :npts] = np.array(points).T
    if ndirs:
        rows[:d, npts:] = np.array(directions).T
    rows[d, :npts] = 1.0
    rhs = np.concatenate([p, [1.0]])
    res = lp.solve(lp.LinearProgram(
        np.zeros(npts + ndirs), rows, [lp.EQ] * (d + 1), rhs,
        bounds=[(0, None)] * (npts + ndirs)))
    return res.optimal


def _prune_directions(directions, tol=1e-9):
    dirs = [np.asarray(r, dtype=float) / np.max(np.abs(r)) for r in directions]
    dirs = _dedupe(dirs, 1e-9)
    keep = list(range(len(dirs)))
    changed = True
    while changed and len(keep) > 1:
        changed = False
        for pos, i in enumerate(keep):
            others = [dirs[j] for j in keep if j != i]
            if _in_cone(dirs[i], others):
                keep.pop(pos)
                changed = True
                break
    return [dirs[i] for i in keep]


def _in_cone(r, directions):
    if not directions:
        return False
    d = r.shape[0]
    cols = np.array(directions).T
    res = lp.solve(lp.LinearProgram(
        np.zeros(len(directions)), cols, [lp.EQ] * d, r,
        bounds=[(0, None)] * len(directions)))
    return res.optimal


def _hull2d(pts):
    """Counter-clockwise strict convex hull of planar points (monotone chain)."""
    uniq = sorted({(float(p[0]), float(p[1])) for p in pts})
    if len(uniq) == 1:
        return [np.array(uniq[0])]

    def chain(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and ((out[-1][0] - out[-2][0]) * (p[1] - out[-1][1])
                                     - (out[-1][1] - out[-2][1]) * (p[0] - out[-1][0])) <= 0.0:
                out.pop()
            out.append(p)
        return out

    lo = chain(uniq)
    hi = chain(reversed(uniq))
    return [np.array(p) for p in lo[:-1] + hi[:-1]]


def _from_vrep_2d(points, dirs, cone: OrderingCone):
    """Planar fast path: hull walk instead of double description.  Only for
    a pointed two-ray recession cone; returns None when not applicable."""
    if len(dirs) != 2:
        return None
    r1, r2 = dirs
    if abs(float(np.cross(r1, r2))) <= 1e-12:
        return None
    hull = _hull2d(points)
    n = len(hull)
    facets = []
    for i in range(n if n > 1 else 0):
        p, q = hull[i], hull[(i + 1) % n]
        e = q - p
        nrm = float(np.hypot(e[0], e[1]))
        if nrm <= 0.0:
            continue
        a = np.array([-e[1], e[0]]) / nrm  # inward normal of a ccw edge
        # an edge supports the upper set only if the recession rays point in
        if float(a @ r1) >= -1e-12 and float(a @ r2) >= -1e-12:
            facets.append((a, float(a @ p)))
    for r, other in ((r1, r2), (r2, r1)):
        a = np.array([-r[1], r[0]])
        if float(a @ other) < 0.0:
            a = -a
        a = a / float(np.hypot(a[0], a[1]))
        facets.append((a, min(float(a @ p) for p in hull)))
    a = np.array([f[0] for f in facets])
    b = np.array([f[1] for f in facets])
    # frontier vertices sit on two facets; interior hull points sit on none
    verts = [p for p in hull
             if int(np.sum(a @ p <= b + 1e-9 * (1.0 + np.max(np.abs(p))))) >= 2]
    if not verts:
        verts = [hull[0]]
    a, b = _normalize_rows(a, b)
    return Polyhedron(a, b, np.array(verts), np.array(dirs), cone)


def from_vrep(points, directions, cone: OrderingCone) -> Polyhedron:
    """Polyhedron from generators; prunes redundancy and rebuilds the H-rep."""
    points = [np.asarray(p, dtype=float) for p in points]
    if not points:
        raise EmptyPolyhedronError("no generating points")
    d = points[0].shape[0]
    dirs = [np.asarray(r, dtype=float) for r in directions]
    dirs += [g for g in cone.generators]
    dirs = _prune_directions(dirs)
    if d == 2:
        fast = _from_vrep_2d(_dedupe(points, 1e-9), dirs, cone)
        if fast is not None:
            return fast
    points = _prune_points(_dedupe(points, 1e-9), dirs)

    # facet normals are the extreme rays of {(a, c) : a.p + c >= 0, a.r >= 0}
    hom = [np.concatenate([p, [1.0]]) for p in points]
    hom += [np.concatenate([r, [0.0]]) for r in dirs]
    rays, lines = cone_rays_and_lines(np.array(hom))
    facets = []
    for w in rays:
        if np.max(np.abs(w[:d])) > 1e-9:
            facets.append(w)
    for l in lines:
        if np.max(np.abs(l[:d])) > 1e-9:
            facets.extend([l, -l])
    if not facets:
        raise MalformedUpperSetError("generator set spans the whole space")
    a = np.array([f[:d] for f in facets])
    b = np.array([-f[d] for f in facets])
    a, b = _normalize_rows(a, b)
    return Polyhedron(a, b, np.array(points), np.array(dirs), cone)


def minkowski_sum(p: Polyhedron, q: Polyhedron) -> Polyhedron:
    """Minkowski sum via pairwise vertex sums and direction union."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    sums = [u + v for u in p.vertices for v in q.vertices]
    dirs = list(p.directions) + list(q.directions)
    return from_vrep(sums, dirs, p.cone)


def shift(p: Polyhedron, v) -> Polyhedron:
    """Translate the set by vector v."""
    v = np.asarray(v, dtype=float)
    return Polyhedron(p.A, p.b + p.A @ v, p.vertices + v[None, :],
                      p.directions, p.cone)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _ser(obj) -> str:
    if isinstance(obj, float):
        return _fmt(obj)
    if isinstance(obj, (int, bool)):
        return json.dumps(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(k) + ":" + _ser(v) for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_ser(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj)}")


def to_dict(p: Polyhedron) -> dict:
    return {
        "halfspaces": [list(map(float, row)) + [float(off)] for row, off in zip(p.A, p.b)],
        "vertices": [list(map(float, v)) for v in p.vertices],
        "directions": [list(map(float, r)) for r in p.directions],
    }


def dumps(p: Polyhedron) -> str:
    """Serialize with 17 significant digits (exact round-trip)."""
    return _ser(to_dict(p))


def loads(text: str, cone: OrderingCone) -> Polyhedron:
    data = json.loads(text)
    hs = np.atleast_2d(np.array(data["halfspaces"], dtype=float))
    return Polyhedron(hs[:, :-1], hs[:, -1],
                      np.array(data["vertices"], dtype=float),
                      np.array(data["directions"], dtype=float), cone)
