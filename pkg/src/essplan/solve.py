"""Uniform solve layer: LP/SOCP with duals via Clarabel, plus exact handling of
the small binary siting decision by enumeration or branch-and-bound.

Dual convention (fixed once, backend-independent): for a row written
``a.x <= rhs`` the exported dual lam >= 0 satisfies L = f + lam*(a.x - rhs);
for ``a.x == rhs`` the exported dual is the free multiplier of (a.x - rhs).
Under this convention the sensitivity of the optimal value to a right-hand
side is ``dV/drhs = -dual``.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

from .conic import ConicProgram, ProgramError

__all__ = ["SolveResult", "BinaryAtlas", "SolverError", "solve_continuous", "solve_with_binaries"]


class SolverError(RuntimeError):
    pass


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | numerical-failure
    x: np.ndarray | None = None
    objective: float | None = None
    duals: dict[str, float] = field(default_factory=dict)
    rel_gap: float = math.nan
    max_eq_residual: float = math.nan
    max_ineq_residual: float = math.nan
    max_cone_residual: float = math.nan
    comp_slack: float = math.nan
    iterations: int = 0
    solve_time: float = 0.0
    binary_values: dict[int, int] | None = None
    almost: bool = False

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _default_settings(overrides: dict | None = None) -> clarabel.DefaultSettings:
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.tol_feas = 1e-10
    st.tol_gap_abs = 1e-10
    st.tol_gap_rel = 1e-10
    st.reduced_tol_feas = 5e-9
    st.reduced_tol_gap_abs = 5e-9
    st.reduced_tol_gap_rel = 5e-9
    st.max_iter = 200
    if overrides:
        for key, val in overrides.items():
            setattr(st, key, val)
    return st


def _compile(prog: ConicProgram, binary_values: dict[int, int] | None,
             relax_binaries: bool):
    """Assemble Clarabel data: min q'x s.t. Ax + s = b, s in (Zero, Nonneg, SOC...)."""
    binary_values = binary_values or {}
    free = [i for i in prog.binaries if i not in binary_values]
    if free and not relax_binaries:
        raise ProgramError(f"{len(free)} binary variables left free; fix them or relax")

    rows_i: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    b: list[float] = []
    nrow = 0

    def push(idx, coef, rhs, negate=False) -> None:
        nonlocal nrow
        sign = -1.0 if negate else 1.0
        rows_i.extend([nrow] * len(idx))
        cols.extend(idx)
        vals.extend(sign * c for c in coef)
        b.append(rhs)
        nrow += 1

    # equality block
    for (idx, coef, _), rhs in zip(prog._eq_rows, prog.eq_rhs):
        push(idx, coef, rhs)
    for i, val in sorted(binary_values.items()):
        push([i], [1.0], float(val))
    n_eq = nrow

    # inequality block: le rows, then variable bounds, then relaxed-binary boxes
    for (idx, coef, _), rhs in zip(prog._le_rows, prog.le_rhs):
        push(idx, coef, rhs)
    bound_start = nrow
    for i, (lo, hi) in enumerate(zip(prog.lb, prog.ub)):
        if lo is not None:
            push([i], [-1.0], -lo)
        if hi is not None:
            push([i], [1.0], hi)
    for i in free:
        push([i], [-1.0], 0.0)
        push([i], [1.0], 1.0)
    n_ineq = nrow - n_eq

    # cone blocks: s = b - Ax = [w+t, 2u..., w-t] for each rotated cone,
    # so each row pushes the expression's coefficients negated and its constant as b
    soc_dims: list[int] = []
    for u_list, w_expr, t_expr in prog.cones:
        wi, wc, w0 = w_expr
        ti, tc, t0 = t_expr
        push(list(wi) + list(ti), list(wc) + list(tc), w0 + t0, negate=True)
        for (ui, uc, u0) in u_list:
            push(ui, [2.0 * c for c in uc], 2.0 * u0, negate=True)
        push(list(wi) + list(ti), list(wc) + [-c for c in tc], w0 - t0, negate=True)
        soc_dims.append(len(u_list) + 2)

    A = sparse.csc_matrix(
        (np.asarray(vals), (np.asarray(rows_i, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(nrow, prog.n_vars),
    )
    b_arr = np.asarray(b)
    cones = []
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))
    if n_ineq:
        cones.append(clarabel.NonnegativeConeT(n_ineq))
    cones.extend(clarabel.SecondOrderConeT(d) for d in soc_dims)
    return A, b_arr, cones, n_eq, n_ineq, soc_dims


def _residuals(prog: ConicProgram, x: np.ndarray, z: np.ndarray, A, b,
               n_eq: int, n_ineq: int, soc_dims: list[int]):
    r = A @ x - b  # s = -r must lie in the cone
    max_eq = float(np.max(np.abs(r[:n_eq]))) if n_eq else 0.0
    ineq = r[n_eq:n_eq + n_ineq]
    max_ineq = max(0.0, float(np.max(ineq))) if n_ineq else 0.0
    comp = float(np.max(np.abs(ineq * z[n_eq:n_eq + n_ineq]))) if n_ineq else 0.0
    max_cone = 0.0
    off = n_eq + n_ineq
    for d in soc_dims:
        s = -r[off:off + d]
        max_cone = max(max_cone, float(np.linalg.norm(s[1:]) - s[0]))
        off += d
    max_cone = max(0.0, max_cone)
    return max_eq, max_ineq, max_cone, comp


def solve_continuous(prog: ConicProgram, binary_values: dict[int, int] | None = None,
                     settings: dict | None = None, _relax_binaries: bool = False) -> SolveResult:
    """Solve the continuous program (binaries fixed via ``binary_values``).

    Returns duals for named rows under the documented convention. Statuses
    other than optimal never carry silently wrong answers: x is None unless
    the solver proved optimality (or near-optimality within the residual
    contract, flagged ``almost``).
    """
    t0 = time.perf_counter()
    A, b, cones, n_eq, n_ineq, soc_dims = _compile(prog, binary_values, _relax_binaries)
    P = sparse.csc_matrix((prog.n_vars, prog.n_vars))
    q = prog.objective_vector()
    solver = clarabel.DefaultSolver(P, q, A, b, cones, _default_settings(settings))
    sol = solver.solve()
    status = str(sol.status)
    elapsed = time.perf_counter() - t0

    if status in ("Solved", "AlmostSolved"):
        x = np.asarray(sol.x)
        z = np.asarray(sol.z)
        primal = float(q @ x) + prog.obj_const
        dual = float(-b @ z) + prog.obj_const
        rel_gap = abs(primal - dual) / max(1.0, abs(primal), abs(dual))
        max_eq, max_ineq, max_cone, comp = _residuals(prog, x, z, A, b, n_eq, n_ineq, soc_dims)
        duals = {}
        for name, (kind, pos) in prog.row_names.items():
            row = pos if kind == "eq" else n_eq + pos
            duals[name] = float(z[row])
        return SolveResult(
            status="optimal",
            x=x,
            objective=primal,
            duals=duals,
            rel_gap=rel_gap,
            max_eq_residual=max_eq,
            max_ineq_residual=max_ineq,
            max_cone_residual=max_cone,
            comp_slack=comp,
            iterations=int(sol.iterations),
            solve_time=elapsed,
            binary_values=dict(binary_values) if binary_values else None,
            almost=(status == "AlmostSolved"),
        )
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SolveResult(status="infeasible", solve_time=elapsed, iterations=int(sol.iterations))
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        return SolveResult(status="unbounded", solve_time=elapsed, iterations=int(sol.iterations))
    return SolveResult(status="numerical-failure", solve_time=elapsed, iterations=int(sol.iterations))


@dataclass(frozen=True)
class BinaryAtlas:
    """The binary siting handles and the candidate buses they stand for."""

    handles: tuple[int, ...]
    buses: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.handles)


_TIE_EPS = 1e-9


def _better(obj: float, pattern: tuple, best_obj: float | None, best_pattern: tuple | None) -> bool:
    if best_obj is None:
        return True
    if obj < best_obj - _TIE_EPS * (1.0 + abs(best_obj)):
        return True
    if obj <= best_obj + _TIE_EPS * (1.0 + abs(best_obj)) and best_pattern is not None:
        return pattern < best_pattern  # deterministic lexicographic tie-break
    return False


def solve_with_binaries(prog: ConicProgram, atlas: BinaryAtlas, mode: str = "enumerate",
                        settings: dict | None = None) -> SolveResult:
    """Exact optimum over binary patterns.

    enumerate: solves all 2^|atlas| continuous restrictions (|atlas| <= 24).
    branch_bound: depth-first search on the [0,1] relaxation, 0-branch first,
    which preserves the lexicographic tie-break of enumeration.
    """
    if not atlas.handles:
        return solve_continuous(prog, settings=settings)
    if mode == "enumerate":
        if len(atlas) > 24:
            raise SolverError("enumerate mode capped at 24 binaries; use branch_bound")
        best: SolveResult | None = None
        best_pattern: tuple | None = None
        for pattern in itertools.product((0, 1), repeat=len(atlas)):
            fixed = dict(zip(atlas.handles, pattern))
            res = solve_continuous(prog, binary_values=fixed, settings=settings)
            if res.status == "optimal" and _better(res.objective, pattern,
                                                   best.objective if best else None, best_pattern):
                best, best_pattern = res, pattern
        if best is None:
            return SolveResult(status="infeasible")
        return best
    if mode == "branch_bound":
        return _branch_and_bound(prog, atlas, settings)
    raise SolverError(f"unknown mode {mode!r}")


def _branch_and_bound(prog: ConicProgram, atlas: BinaryAtlas, settings: dict | None) -> SolveResult:
    best: SolveResult | None = None
    best_pattern: tuple | None = None
    # stack of partial assignments over atlas.handles (prefix order)
    stack: list[dict[int, int]] = [{}]
    while stack:
        fixed = stack.pop()
        res = solve_continuous(prog, binary_values=fixed, settings=settings,
                               _relax_binaries=True)
        if res.status == "infeasible":
            continue
        if res.status == "unbounded":
            raise SolverError("relaxation unbounded; binary objective is not bounded below")
        if res.status != "optimal":
            raise SolverError("relaxation solve failed during branch and bound")
        if best is not None and res.objective >= best.objective - _TIE_EPS * (1.0 + abs(best.objective)):
            # cannot strictly improve; equal-value leaves keep the earlier (smaller) pattern
            continue
        unfixed = [h for h in atlas.handles if h not in fixed]
        if not unfixed:
            pattern = tuple(fixed[h] for h in atlas.handles)
            if _better(res.objective, pattern, best.objective if best else None, best_pattern):
                best, best_pattern = res, pattern
            continue
        h = unfixed[0]
        stack.append({**fixed, h: 1})
        stack.append({**fixed, h: 0})  # popped first: 0-branch explored first
    if best is None:
        return SolveResult(status="infeasible")
    return best
