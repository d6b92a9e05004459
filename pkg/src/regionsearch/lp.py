"""Dense two-phase simplex solver for inequality-form LPs.

Solves ``min c.T t  s.t.  A t <= b`` where each variable is either free or
nonnegative.  Free variables are split internally (t = t+ - t-), which keeps
the kernel in standard nonnegative form without touching the reported duals.
Pricing is Dantzig's rule with a Bland fallback after a run of degenerate
pivots, so the solver is deterministic and cannot cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import MalformedProblem

FREE = "free"
NONNEG = "nonneg"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

# default tolerances (see package docs for the knobs they control)
FEAS_TOL = 1e-7
COMP_TOL = 1e-7
DUAL_TOL = 1e-7
DUALITY_TOL = 1e-7
ACT_TOL = 1e-6

_RC_TOL = 1e-9          # reduced-cost threshold for entering candidates
_PIV_TOL = 1e-9         # minimum acceptable pivot magnitude
_RATIO_TIE = 1e-12      # ratio-test tie band
_DEGEN_LIMIT = 60       # consecutive degenerate pivots before Bland kicks in


def as_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise MalformedProblem(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise MalformedProblem(f"{name} contains non-finite entries")
    return arr


def as_matrix(m, name: str) -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2:
        raise MalformedProblem(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise MalformedProblem(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class LpProblem:
    """min c.T t subject to A t <= b with per-variable kind free/nonneg."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    kinds: tuple[str, ...]

    def __post_init__(self):
        c = as_vector(self.c, "c")
        A = as_matrix(self.A, "A")
        b = as_vector(self.b, "b")
        if A.shape != (b.size, c.size):
            raise MalformedProblem(
                f"A has shape {A.shape}, expected ({b.size}, {c.size})")
        kinds = tuple(self.kinds)
        if len(kinds) != c.size:
            raise MalformedProblem(
                f"{len(kinds)} variable kinds for {c.size} variables")
        for k in kinds:
            if k not in (FREE, NONNEG):
                raise MalformedProblem(f"unknown variable kind {k!r}")
        for arr in (c, A, b):
            arr.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "kinds", kinds)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size


@dataclass(frozen=True)
class LpSolution:
    """Primal/dual solution of an inequality-form LP.

    ``duals`` follows the KKT sign convention c + A.T lam = 0 with lam >= 0,
    so the dual objective is -b.T lam.  ``basis_rows`` are the rows whose
    slack left the final simplex basis (the solver's own active rows);
    ``active_set`` are all rows active by value within ``act_tol``.
    """

    status: str
    t: np.ndarray | None = None
    objective: float | None = None
    duals: np.ndarray | None = None
    basis: frozenset[int] = frozenset()
    basis_rows: tuple[int, ...] = ()
    active_set: tuple[int, ...] = ()
    iterations: int = 0


class ActiveRows(NamedTuple):
    rows: tuple[int, ...]
    strict: bool


def _pivot(T: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    T[row] = T[row] / T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])
    T[:, col] = 0.0
    T[row, col] = 1.0
    basis[row] = col


def _run_phase(T: np.ndarray, basis: np.ndarray, cost: np.ndarray,
               allowed: np.ndarray, max_iter: int) -> tuple[str, int]:
    """Pivot until optimal/unbounded for the given cost vector."""
    degen = 0
    for it in range(max_iter):
        red = cost - cost[basis] @ T[:, :-1]
        cand = np.flatnonzero((red < -_RC_TOL) & allowed)
        if cand.size == 0:
            return OPTIMAL, it
        if degen < _DEGEN_LIMIT:
            col = int(cand[np.argmin(red[cand])])
        else:
            col = int(cand[0])  # Bland: lowest eligible index
        colv = T[:, col]
        pos = np.flatnonzero(colv > _PIV_TOL)
        if pos.size == 0:
            return UNBOUNDED, it
        ratios = T[pos, -1] / colv[pos]
        rmin = ratios.min()
        ties = pos[ratios <= rmin + _RATIO_TIE * (1.0 + abs(rmin))]
        if degen < _DEGEN_LIMIT:
            row = int(ties[0])
        else:
            row = int(ties[np.argmin(basis[ties])])  # Bland leaving rule
        degen = degen + 1 if rmin <= _RATIO_TIE else 0
        _pivot(T, basis, row, col)
    raise ArithmeticError("simplex failed to terminate within iteration cap")


def solve_lp(problem: LpProblem, act_tol: float = ACT_TOL) -> LpSolution:
    """Solve an LP, returning primal, duals, basis and active set.

    Deterministic: identical input always yields the identical solution
    (fixed pivot rule, fixed tie-breaking).
    """
    c, A, b = problem.c, problem.A, problem.b
    m, n = A.shape

    if n == 0:
        if m == 0 or np.all(b >= -FEAS_TOL):
            return LpSolution(OPTIMAL, np.zeros(0), 0.0, np.zeros(m),
                              frozenset(), (), _active_by_value(b, np.zeros(0), A, act_tol))
        return LpSolution(INFEASIBLE)

    # split free variables: columns (+1, -1); nonneg variables: single column
    col_var: list[int] = []
    col_sign: list[float] = []
    for j, kind in enumerate(problem.kinds):
        col_var.append(j)
        col_sign.append(1.0)
        if kind == FREE:
            col_var.append(j)
            col_sign.append(-1.0)
    col_var_arr = np.array(col_var)
    col_sign_arr = np.array(col_sign)
    n_struct = len(col_var)
    A_struct = A[:, col_var_arr] * col_sign_arr
    c_struct = c[col_var_arr] * col_sign_arr

    if m == 0:
        if np.any(c_struct < -_RC_TOL):
            return LpSolution(UNBOUNDED)
        return LpSolution(OPTIMAL, np.zeros(n), 0.0, np.zeros(0),
                          frozenset(), (), ())

    sign = np.where(b < 0.0, -1.0, 1.0)
    need_art = sign < 0.0
    art_rows = np.flatnonzero(need_art)
    n_art = art_rows.size
    n_total = n_struct + m + n_art

    T = np.zeros((m, n_total + 1))
    T[:, :n_struct] = A_struct * sign[:, None]
    T[:, n_struct:n_struct + m] = np.diag(sign)
    for k, r in enumerate(art_rows):
        T[r, n_struct + m + k] = 1.0
    T[:, -1] = b * sign

    basis = np.empty(m, dtype=int)
    basis[:] = n_struct + np.arange(m)
    for k, r in enumerate(art_rows):
        basis[r] = n_struct + m + k

    allowed = np.ones(n_total, dtype=bool)
    max_iter = 20000 + 200 * (m + n_total)
    iterations = 0

    if n_art:
        cost1 = np.zeros(n_total)
        cost1[n_struct + m:] = 1.0
        status, it = _run_phase(T, basis, cost1, allowed, max_iter)
        iterations += it
        obj1 = float(cost1[basis] @ T[:, -1])
        if obj1 > 1e-8 * (1.0 + float(np.max(np.abs(b)))):
            return LpSolution(INFEASIBLE, iterations=iterations)
        # pivot basic artificials out where a real pivot exists
        for r in range(m):
            if basis[r] >= n_struct + m:
                entries = np.abs(T[r, :n_struct + m])
                cand = np.flatnonzero(entries > 1e-7)
                if cand.size:
                    _pivot(T, basis, r, int(cand[0]))
        allowed[n_struct + m:] = False

    cost2 = np.zeros(n_total)
    cost2[:n_struct] = c_struct
    status, it = _run_phase(T, basis, cost2, allowed, max_iter)
    iterations += it
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, iterations=iterations)

    # reconstruct exactly from the final basis against the unscaled data
    def std_column(idx: int) -> np.ndarray:
        if idx < n_struct:
            return A_struct[:, idx]
        if idx < n_struct + m:
            col = np.zeros(m)
            col[idx - n_struct] = 1.0
            return col
        col = np.zeros(m)
        r = art_rows[idx - n_struct - m]
        col[r] = sign[r]
        return col

    B = np.column_stack([std_column(int(j)) for j in basis])
    try:
        xB = np.linalg.solve(B, b)
        c_basis = cost2[basis]
        y = np.linalg.solve(B.T, c_basis)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise ArithmeticError("singular final basis") from exc

    t = np.zeros(n)
    for pos_in_basis, col_idx in enumerate(basis):
        if col_idx < n_struct:
            t[col_var_arr[col_idx]] += col_sign_arr[col_idx] * xB[pos_in_basis]
    duals = -y
    duals[np.abs(duals) < 1e-12] = 0.0
    objective = float(c @ t)

    basic_cols = set(int(j) for j in basis)
    basis_vars = frozenset(int(col_var_arr[j]) for j in basic_cols if j < n_struct)
    basis_rows = tuple(
        i for i in range(m)
        if (n_struct + i) not in basic_cols
        and not (need_art[i] and _art_col_index(i, art_rows, n_struct, m) in basic_cols)
    )
    active = _active_by_value(b, t, A, act_tol)

    sol = LpSolution(OPTIMAL, t, objective, duals, basis_vars, basis_rows,
                     active, iterations)
    _sanity_check(problem, sol)
    return sol


def _art_col_index(row: int, art_rows: np.ndarray, n_struct: int, m: int) -> int:
    k = int(np.searchsorted(art_rows, row))
    return n_struct + m + k


def _active_by_value(b, t, A, act_tol) -> tuple[int, ...]:
    if b.size == 0:
        return ()
    slack = b - A @ t
    return tuple(int(i) for i in np.flatnonzero(np.abs(slack) <= act_tol))


def _sanity_check(problem: LpProblem, sol: LpSolution) -> None:
    res = kkt_residuals(problem, sol)
    worst = max(res.values())
    if worst > 1e-4:  # pragma: no cover - defensive guard
        raise ArithmeticError(f"KKT residuals too large after solve: {res}")


def kkt_residuals(problem: LpProblem, sol: LpSolution) -> dict[str, float]:
    """Max violations of primal/dual feasibility, complementarity and duality."""
    t, lam = sol.t, sol.duals
    slack = problem.b - problem.A @ t
    stat = problem.c + problem.A.T @ lam
    stat_res = 0.0
    for j, kind in enumerate(problem.kinds):
        if kind == FREE:
            stat_res = max(stat_res, abs(stat[j]))
        else:
            stat_res = max(stat_res, max(0.0, -stat[j]))
            stat_res = max(stat_res, abs(t[j] * stat[j]))
    return {
        "primal": float(max(0.0, -slack.min())) if slack.size else 0.0,
        "dual": float(max(0.0, -lam.min())) if lam.size else 0.0,
        "complementarity": float(np.max(np.abs(lam * slack))) if slack.size else 0.0,
        "stationarity": float(stat_res),
        "duality_gap": abs(float(problem.c @ t) + float(problem.b @ lam)),
    }


def extract_active_set(solution: LpSolution, b_eff: Sequence[float],
                       A, act_tol: float = ACT_TOL) -> ActiveRows:
    """Rows of ``A t <= b_eff`` active at the solution, with strictness flag.

    The flag is set when every value-active row also carries a multiplier
    above ``act_tol`` (strict complementarity).
    """
    if solution.status != OPTIMAL:
        raise ValueError("active set is only defined for optimal solutions")
    b_eff = np.asarray(b_eff, dtype=float)
    A = np.asarray(A, dtype=float)
    slack = b_eff - A @ solution.t
    rows = tuple(int(i) for i in np.flatnonzero(np.abs(slack) <= act_tol))
    strict = all(solution.duals[i] > act_tol for i in rows)
    return ActiveRows(rows, strict)
