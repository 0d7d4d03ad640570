"""Scalar linear programming layer.

Thin deterministic wrapper around scipy's HiGHS solver. Every scalarization
inside the vector solvers, every membership test and every forward-pass
weight problem goes through :func:`solve`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

GE = ">="
LE = "<="
EQ = "="

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERIC_FAILURE = "numeric_failure"

FEAS_TOL = 1e-9


@dataclass
class LinearProgram:
    """min c^T x subject to rows of (A, rel, rhs); variables free by default."""

    c: np.ndarray
    rows: np.ndarray            # (m, n)
    rels: list                  # one of GE / LE / EQ per row
    rhs: np.ndarray
    bounds: list | None = None  # per-variable (lo, hi), None entries mean free

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        self.rhs = np.asarray(self.rhs, dtype=float)
        if self.rows.size and self.rows.shape[0] != len(self.rels):
            raise ValueError("relation count does not match row count")


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None = None
    value: float | None = None
    # one multiplier per constraint row, in input order
    duals: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def solve(lp: LinearProgram) -> LPResult:
    """Solve an LP; never raises on solver trouble, reports a status instead."""
    n = lp.c.shape[0]
    m = lp.rows.shape[0] if lp.rows.size else 0

    a_ub, b_ub, ub_idx, ub_sign = [], [], [], []
    a_eq, b_eq, eq_idx = [], [], []
    for i in range(m):
        row, rel, r = lp.rows[i], lp.rels[i], lp.rhs[i]
        if rel == EQ:
            a_eq.append(row)
            b_eq.append(r)
            eq_idx.append(i)
        elif rel == LE:
            a_ub.append(row)
            b_ub.append(r)
            ub_idx.append(i)
            ub_sign.append(1.0)
        elif rel == GE:
            a_ub.append(-row)
            b_ub.append(-r)
            ub_idx.append(i)
            ub_sign.append(-1.0)
        else:
            raise ValueError(f"unknown relation {rel!r}")

    bounds = lp.bounds if lp.bounds is not None else [(None, None)] * n
    try:
        res = linprog(
            lp.c,
            A_ub=np.asarray(a_ub) if a_ub else None,
            b_ub=np.asarray(b_ub) if b_ub else None,
            A_eq=np.asarray(a_eq) if a_eq else None,
            b_eq=np.asarray(b_eq) if b_eq else None,
            bounds=bounds,
            method="highs",
        )
    except ValueError:
        return LPResult(NUMERIC_FAILURE)

    if res.status == 2:
        return LPResult(INFEASIBLE)
    if res.status == 3:
        return LPResult(UNBOUNDED)
    if res.status != 0:
        return LPResult(NUMERIC_FAILURE)

    duals = np.zeros(m)
    if ub_idx:
        # HiGHS marginals are for the <=-form rows; flip sign back for >= rows.
        marg = np.asarray(res.ineqlin.marginals)
        for j, (i, s) in enumerate(zip(ub_idx, ub_sign)):
            duals[i] = s * marg[j]
    if eq_idx:
        marg = np.asarray(res.eqlin.marginals)
        for j, i in enumerate(eq_idx):
            duals[i] = marg[j]
    return LPResult(OPTIMAL, x=np.asarray(res.x), value=float(res.fun), duals=duals)
