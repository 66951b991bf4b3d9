"""Dense linear programming over equality constraints and box bounds.

Solves   min/max  c'x   s.t.  A x = rhs,  lower <= x <= upper

with a bounded-variable primal simplex.  Pricing is Dantzig's rule while
iterations make primal progress; a run of degenerate pivots switches to
Bland's anti-cycling rule, which guarantees termination.  Bounds may be
infinite on either side.  The solver reports, depending on outcome:

  optimal     x, objective, equality duals and reduced costs.  Duals follow
              the value-function convention: V(rhs + d) ~ V(rhs) + duals . d
              for the problem as posed (min or max).
  infeasible  a Farkas certificate ``f`` over the rows:
              f'rhs > sum_j [max((A'f)_j,0) u_j + min((A'f)_j,0) l_j],
              which no x inside the bounds can satisfy.
  unbounded   a ray: a direction of unlimited objective improvement that
              preserves A x = rhs and respects the bounds.

Everything is dense numpy; the intended problem scale is a few hundred rows.
A caller that already knows a feasible basis (the estimation layer always
does) can pass it in and skip phase 1 entirely.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import InvalidParameterError, NumericError

FEAS_TOL = 1e-8      # bound/constraint violation accepted as zero
DUAL_GAP_TOL = 1e-7  # certified primal-dual agreement at optimal
PIVOT_TOL = 1e-10    # candidate pivots smaller than this are rejected

# Pricing: Dantzig while pivots make progress; after this many consecutive
# degenerate steps switch to Bland's smallest-index rule, whose finite
# termination guarantee breaks any cycle.
_BLAND_TRIGGER = 40

_AT_LOWER, _AT_UPPER, _BASIC, _FREE_NB = 0, 1, 2, 3


@dataclass
class LpProblem:
    c: np.ndarray
    A: np.ndarray
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sense: str = "min"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        m, n = self.A.shape if self.A.size else (len(self.rhs), len(self.c))
        if self.A.size == 0:
            self.A = self.A.reshape(m, n)
        if self.c.shape != (n,) or self.rhs.shape != (m,):
            raise InvalidParameterError("inconsistent LP dimensions")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise InvalidParameterError("bounds must match the number of columns")
        if np.any(self.lower > self.upper + FEAS_TOL):
            raise InvalidParameterError("crossed bounds: lower > upper")
        if self.sense not in ("min", "max"):
            raise InvalidParameterError(f"sense must be 'min' or 'max', got {self.sense!r}")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A))
                and np.all(np.isfinite(self.rhs))):
            raise InvalidParameterError("c, A and rhs must be finite")


@dataclass
class LpSolution:
    status: str                      # "optimal" | "infeasible" | "unbounded"
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    farkas: Optional[np.ndarray] = None
    ray: Optional[np.ndarray] = None
    iterations: int = 0
    basis: Optional[np.ndarray] = None
    var_status: Optional[np.ndarray] = None


class _Simplex:
    """Internal minimization engine on one (A, rhs, bounds) instance."""

    def __init__(self, A, rhs, lower, upper, feas_tol, pivot_tol, max_iter):
        self.A = A
        self.rhs = rhs
        self.lower = lower
        self.upper = upper
        self.feas_tol = feas_tol
        self.pivot_tol = pivot_tol
        self.max_iter = max_iter
        self.m, self.n = A.shape
        self.iterations = 0

    def set_start(self, basis, status, values):
        self.basis = np.asarray(basis, dtype=int)
        self.status = np.asarray(status, dtype=np.int8)
        self.values = np.asarray(values, dtype=float)
        self._refactor()
        self._recompute_basics()

    def _refactor(self):
        B = self.A[:, self.basis]
        try:
            self.b_inv = np.linalg.inv(B) if self.m else np.zeros((0, 0))
        except np.linalg.LinAlgError:
            raise NumericError("basis matrix is singular")

    def _recompute_basics(self):
        if self.m == 0:
            return
        nb_mask = self.status != _BASIC
        resid = self.rhs - (self.A[:, nb_mask] @ self.values[nb_mask]
                            if nb_mask.any() else 0.0)
        self.values[self.basis] = self.b_inv @ resid

    def primal_feasible(self, tol=None):
        tol = self.feas_tol if tol is None else tol
        v = self.values[self.basis]
        return (np.all(v >= self.lower[self.basis] - tol)
                and np.all(v <= self.upper[self.basis] + tol))

    def run(self, c):
        """Minimize c'x from the current basis.  Returns 'optimal' or a dict
        describing an unbounded ray.  Refactors periodically for hygiene."""
        m, n = self.m, self.n
        ptol = self.pivot_tol
        self._stalled = 0
        for it in range(self.max_iter):
            self.iterations += 1
            if it and it % 128 == 0:
                self._refactor()
                self._recompute_basics()
            y = self.b_inv.T @ c[self.basis] if m else np.zeros(0)
            d = c - self.A.T @ y
            st = self.status
            gain = np.zeros(n)
            mask = (st == _AT_LOWER) & (d < -ptol)
            gain[mask] = -d[mask]
            mask = (st == _AT_UPPER) & (d > ptol)
            gain[mask] = d[mask]
            mask = (st == _FREE_NB) & (np.abs(d) > ptol)
            gain[mask] = np.abs(d[mask])
            if not gain.any():
                self.duals = y
                self.reduced = d
                return "optimal"
            if self._stalled >= _BLAND_TRIGGER:
                # Bland's anti-cycling rule: smallest improving index.
                enter = int(np.argmax(gain > 0))
            else:
                # Dantzig pricing while the iteration makes progress.
                enter = int(np.argmax(gain))
            direction = -1.0 if (st[enter] == _AT_UPPER
                                 or (st[enter] == _FREE_NB and d[enter] > 0)) else 1.0

            w = self.b_inv @ self.A[:, enter] if m else np.zeros(0)
            rate = -direction * w  # change of basic values per unit step
            bl = self.lower[self.basis] if m else np.zeros(0)
            bu = self.upper[self.basis] if m else np.zeros(0)
            bv = self.values[self.basis] if m else np.zeros(0)
            t_row = np.full(m, np.inf)
            dn = (rate < -ptol) & np.isfinite(bl)
            if dn.any():
                t_row[dn] = (bv[dn] - bl[dn]) / -rate[dn]
            up = (rate > ptol) & np.isfinite(bu)
            if up.any():
                t_row[up] = (bu[up] - bv[up]) / rate[up]
            np.maximum(t_row, 0.0, out=t_row)
            theta_rows = t_row.min() if m else np.inf
            span = self.upper[enter] - self.lower[enter]
            if theta_rows > span + 1e-12:
                # entering variable reaches its opposite bound first
                if not np.isfinite(span):
                    ray = np.zeros(n)
                    ray[enter] = direction
                    if m:
                        ray[self.basis] = rate
                    return {"ray": ray}
                theta, leave_row = span, -1
            else:
                theta = theta_rows
                if not np.isfinite(theta):
                    ray = np.zeros(n)
                    ray[enter] = direction
                    if m:
                        ray[self.basis] = rate
                    return {"ray": ray}
                ties = np.flatnonzero(t_row <= theta + 1e-12)
                leave_row = int(ties[np.argmin(self.basis[ties])])
                leave_to = _AT_LOWER if rate[leave_row] < 0 else _AT_UPPER
            self._stalled = 0 if theta > 1e-12 else self._stalled + 1
            self.values[enter] += direction * theta
            if m:
                self.values[self.basis] += rate * theta
            if leave_row < 0:
                # bound flip: entering variable traverses to its other bound
                self.status[enter] = _AT_UPPER if direction > 0 else _AT_LOWER
                self.values[enter] = (self.upper[enter] if direction > 0
                                      else self.lower[enter])
                continue
            if abs(w[leave_row]) <= self.pivot_tol:
                self._refactor()
                self._recompute_basics()
                w = self.b_inv @ self.A[:, enter]
                if abs(w[leave_row]) <= self.pivot_tol:
                    raise NumericError("degenerate pivot below tolerance")
            out = self.basis[leave_row]
            self.status[out] = leave_to
            self.values[out] = (self.lower[out] if leave_to == _AT_LOWER
                                else self.upper[out])
            self.basis[leave_row] = enter
            self.status[enter] = _BASIC
            # product-form update of the basis inverse
            col = w.copy()
            piv = col[leave_row]
            self.b_inv[leave_row] /= piv
            other = col != 0.0
            other[leave_row] = False
            if other.any():
                self.b_inv[other] -= np.outer(col[other], self.b_inv[leave_row])
        raise NumericError(f"simplex iteration cap {self.max_iter} exceeded")


def _default_nonbasic(lower, upper):
    """Nonbasic start: finite lower bound if any, else finite upper, else 0."""
    n = len(lower)
    status = np.empty(n, dtype=np.int8)
    values = np.empty(n)
    for j in range(n):
        if np.isfinite(lower[j]):
            status[j], values[j] = _AT_LOWER, lower[j]
        elif np.isfinite(upper[j]):
            status[j], values[j] = _AT_UPPER, upper[j]
        else:
            status[j], values[j] = _FREE_NB, 0.0
    return status, values


def solve(problem: LpProblem,
          feas_tol: float = FEAS_TOL,
          pivot_tol: float = PIVOT_TOL,
          max_iter: int = 50000,
          start_basis: Optional[np.ndarray] = None,
          start_status: Optional[np.ndarray] = None) -> LpSolution:
    """Solve the LP.  ``start_basis``/``start_status`` (from a previous
    solution of a same-shaped problem, or built by a caller that knows a
    feasible vertex) skip phase 1 when they are still primal feasible."""
    sign = 1.0 if problem.sense == "min" else -1.0
    c = sign * problem.c
    A, rhs = problem.A, problem.rhs
    lower, upper = problem.lower, problem.upper
    m, n = A.shape

    eng = _Simplex(A, rhs, lower, upper, feas_tol, pivot_tol, max_iter)

    warm_ok = False
    if start_basis is not None and start_status is not None and len(start_basis) == m:
        basis0 = np.asarray(start_basis, dtype=int).copy()
        status = np.asarray(start_status, dtype=np.int8).copy()
        consistent = (len(status) == n
                      and int((status == _BASIC).sum()) == m
                      and np.all(status[basis0] == _BASIC))
        if consistent:
            values = np.where(status == _AT_UPPER, upper,
                              np.where(status == _AT_LOWER, lower, 0.0))
            values = np.where(np.isfinite(values), values, 0.0)
            try:
                eng.set_start(basis0, status, values)
                warm_ok = eng.primal_feasible()
            except NumericError:
                warm_ok = False

    if not warm_ok:
        # Phase 1: artificial column per row, signed to make the start feasible.
        status, values = _default_nonbasic(lower, upper)
        resid = rhs - A @ values
        signs = np.where(resid >= 0, 1.0, -1.0)
        A1 = np.hstack([A, np.diag(signs)]) if m else A.reshape(0, n)
        lower1 = np.concatenate([lower, np.zeros(m)])
        upper1 = np.concatenate([upper, np.full(m, np.inf)])
        eng1 = _Simplex(A1, rhs, lower1, upper1, feas_tol, pivot_tol, max_iter)
        st1 = np.concatenate([status, np.full(m, _BASIC, dtype=np.int8)])
        vals1 = np.concatenate([values, np.abs(resid)])
        eng1.set_start(np.arange(n, n + m), st1, vals1)
        c1 = np.concatenate([np.zeros(n), np.ones(m)])
        out = eng1.run(c1)
        if isinstance(out, dict):  # phase-1 objective is bounded below; cannot happen
            raise NumericError("phase 1 reported unbounded")
        art = eng1.values[n:]
        if art.sum() > feas_tol * max(1.0, np.abs(rhs).sum()):
            # Phase-1 duals certify: duals'rhs - (largest reachable duals'Ax)
            # equals the positive leftover infeasibility.
            return LpSolution(status="infeasible", farkas=eng1.duals.copy(),
                              iterations=eng1.iterations)
        # Pin leftover artificials (basic at zero) to [0,0] and reuse the basis.
        lower2 = np.concatenate([lower, np.zeros(m)])
        upper2 = np.concatenate([upper, np.zeros(m)])
        eng = _Simplex(A1, rhs, lower2, upper2, feas_tol, pivot_tol, max_iter)
        st = eng1.status.copy()
        nb_art = (np.arange(n + m) >= n) & (st != _BASIC)
        st[nb_art] = _AT_LOWER
        vals = eng1.values.copy()
        vals[n:][eng1.status[n:] != _BASIC] = 0.0
        eng.set_start(eng1.basis, st, vals)
        c = np.concatenate([c, np.zeros(m)])

    out = eng.run(c)
    eng._refactor()
    eng._recompute_basics()
    if isinstance(out, dict):
        ray = out["ray"][:n]
        return LpSolution(status="unbounded", ray=ray, iterations=eng.iterations)

    x = eng.values[:n].copy()
    np.clip(x, lower, upper, out=x)
    obj = float(problem.c @ x)
    duals = sign * eng.duals
    reduced = sign * eng.reduced[:n]
    keep = eng.basis < n
    sol = LpSolution(status="optimal", x=x, objective=obj, duals=duals,
                     reduced_costs=reduced, iterations=eng.iterations,
                     basis=eng.basis.copy() if np.all(keep) else None,
                     var_status=eng.status[:n].copy() if np.all(keep) else None)
    if _audit_sink is not None:
        _audit_sink.append(duality_gap(problem, sol))
    return sol


_audit_sink: Optional[List[float]] = None


@contextmanager
def gap_audit(sink=None):
    """Collect the duality gap of every optimal solve inside the block.

    Yields the sink the gaps are appended to — a fresh list by default,
    or any object with an ``append`` method (e.g. a running-max
    accumulator when the block spans millions of solves).  Used to audit
    that fits remain certified-exact across a whole run without changing
    call sites.
    """
    global _audit_sink
    prev = _audit_sink
    _audit_sink = [] if sink is None else sink
    try:
        yield _audit_sink
    finally:
        _audit_sink = prev


def duality_gap(problem: LpProblem, sol: LpSolution) -> float:
    """|primal - dual| objective agreement for an optimal solution.

    The dual objective pairs the equality duals with rhs and the reduced
    costs with whichever bound each one presses against.  Reduced costs that
    press against an infinite bound are optimal only at zero, so they are
    dropped (they are below tolerance at a certified optimum).
    """
    if sol.status != "optimal":
        raise InvalidParameterError("duality gap is defined for optimal solutions")
    sign = 1.0 if problem.sense == "min" else -1.0
    d = sign * sol.reduced_costs
    y = sign * sol.duals
    bound_term = 0.0
    for j in range(len(d)):
        if d[j] > 0 and np.isfinite(problem.lower[j]):
            bound_term += d[j] * problem.lower[j]
        elif d[j] < 0 and np.isfinite(problem.upper[j]):
            bound_term += d[j] * problem.upper[j]
    dual_obj = sign * (float(y @ problem.rhs) + bound_term)
    return abs(dual_obj - sol.objective)


def farkas_cap(problem: LpProblem, farkas: np.ndarray,
               tol: float = FEAS_TOL) -> float:
    """Largest value f'(Ax) can reach inside the bounds (+inf when some
    weighted column is unbounded in the paying direction)."""
    f = np.asarray(farkas, dtype=float)
    g = problem.A.T @ f
    cap = 0.0
    for j in range(len(g)):
        if g[j] > tol:
            if not np.isfinite(problem.upper[j]):
                return float("inf")
            cap += g[j] * problem.upper[j]
        elif g[j] < -tol:
            if not np.isfinite(problem.lower[j]):
                return float("inf")
            cap += g[j] * problem.lower[j]
    return cap


def check_farkas(problem: LpProblem, farkas: np.ndarray,
                 tol: float = FEAS_TOL) -> bool:
    """Verify an infeasibility certificate: f'rhs must exceed the largest
    value f'(Ax) can reach inside the bounds."""
    f = np.asarray(farkas, dtype=float)
    cap = farkas_cap(problem, f, tol)
    if not np.isfinite(cap):
        return False
    return float(f @ problem.rhs) > cap + tol


def warm_start(n_columns: int, basis: np.ndarray):
    """Build a (start_basis, start_status) pair with the given columns basic
    and every other column resting at its lower bound."""
    basis = np.asarray(basis, dtype=int)
    status = np.full(n_columns, _AT_LOWER, dtype=np.int8)
    status[basis] = _BASIC
    return basis.copy(), status
