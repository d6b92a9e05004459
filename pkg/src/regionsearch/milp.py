"""Branch-and-bound for LPs with designated binary variables.

Search order is deterministic: best-first on the node bound with ties broken
by creation order, branching on the most fractional binary (lowest index on
ties), and the 0-branch created first.  No cuts, presolve or heuristics; the
instances this package targets do not need them.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import BudgetExceeded, MalformedProblem, UnboundedProblem
from .lp import INFEASIBLE, NONNEG, OPTIMAL, UNBOUNDED, LpProblem, solve_lp

INT_TOL = 1e-6
DEFAULT_REL_GAP = 1e-4


@dataclass(frozen=True)
class MilpProblem:
    base: LpProblem
    binary_indices: frozenset[int]

    def __post_init__(self):
        binaries = frozenset(int(i) for i in self.binary_indices)
        for i in binaries:
            if not 0 <= i < self.base.n_vars:
                raise MalformedProblem(f"binary index {i} out of range")
            if self.base.kinds[i] != NONNEG:
                raise MalformedProblem(
                    f"binary variable {i} must be marked nonnegative")
        object.__setattr__(self, "binary_indices", binaries)


@dataclass
class MilpSolution:
    status: str
    primal: np.ndarray | None = None
    objective: float | None = None
    node_count: int = 0
    budget_exhausted: bool = False


def _bounded_lp(problem: MilpProblem, lower: np.ndarray,
                upper: np.ndarray) -> LpProblem:
    """Base LP plus explicit bound rows for the binaries."""
    base = problem.base
    bins = sorted(problem.binary_indices)
    k = len(bins)
    if k == 0:
        return base
    rows = np.zeros((2 * k, base.n_vars))
    rhs = np.empty(2 * k)
    for pos, j in enumerate(bins):
        rows[pos, j] = 1.0
        rhs[pos] = upper[pos]
        rows[k + pos, j] = -1.0
        rhs[k + pos] = -lower[pos]
    return LpProblem(
        c=base.c,
        A=np.vstack([base.A, rows]),
        b=np.concatenate([base.b, rhs]),
        kinds=base.kinds,
    )


def solve_milp(problem: MilpProblem, rel_gap: float = DEFAULT_REL_GAP,
               node_cap: int | None = None,
               trace_hook: Callable[[dict], None] | None = None) -> MilpSolution:
    """Best-first branch and bound on the binary variables.

    Raises UnboundedProblem when a node relaxation is unbounded, and
    BudgetExceeded when ``node_cap`` is hit before any incumbent exists;
    hitting the cap with an incumbent returns it with ``budget_exhausted``.
    """
    bins = sorted(problem.binary_indices)
    k = len(bins)

    node_count = 0
    incumbent: np.ndarray | None = None
    incumbent_obj = np.inf

    def cutoff() -> float:
        if incumbent is None:
            return np.inf
        return incumbent_obj - rel_gap * max(1.0, abs(incumbent_obj))

    def solve_node(lower, upper):
        nonlocal node_count
        node_count += 1
        sol = solve_lp(_bounded_lp(problem, lower, upper))
        if sol.status == UNBOUNDED:
            raise UnboundedProblem("node relaxation is unbounded below")
        return sol

    root_sol = solve_node(np.zeros(k), np.ones(k))
    if root_sol.status == INFEASIBLE:
        return MilpSolution(INFEASIBLE, node_count=node_count)

    heap: list[tuple[float, int, np.ndarray, np.ndarray, object]] = []
    counter = 0
    heapq.heappush(heap, (root_sol.objective, counter,
                          np.zeros(k), np.ones(k), root_sol))

    while heap:
        bound, _, lower, upper, sol = heapq.heappop(heap)
        if trace_hook is not None:
            trace_hook({"bound": bound, "incumbent": incumbent_obj,
                        "nodes": node_count})
        if bound >= cutoff():
            break

        values = sol.t[bins] if k else np.zeros(0)
        frac_dist = np.minimum(np.abs(values), np.abs(values - 1.0))
        fractional = np.flatnonzero(frac_dist > INT_TOL)

        if fractional.size == 0:
            snapped = np.round(values)
            all_fixed = k == 0 or bool(np.all(upper - lower < 0.5))
            fixed = sol if all_fixed else solve_node(snapped, snapped)
            if fixed.status == OPTIMAL:
                primal = fixed.t.copy()
                for pos, j in enumerate(bins):
                    primal[j] = snapped[pos]
                cand_obj = float(problem.base.c @ primal)
                if cand_obj < incumbent_obj:
                    incumbent = primal
                    incumbent_obj = cand_obj
                continue
            # fixing at the rounded values lost tolerance-thin feasibility;
            # branch on the first unfixed binary instead
            unfixed = np.flatnonzero(upper - lower > 0.5)
            if unfixed.size == 0:
                continue
            branch_pos = int(unfixed[0])
        else:
            # most fractional; argmax returns the lowest index on ties
            branch_pos = int(fractional[np.argmax(frac_dist[fractional])])

        for value in (0.0, 1.0):
            child_lower = lower.copy()
            child_upper = upper.copy()
            child_lower[branch_pos] = value
            child_upper[branch_pos] = value
            if child_lower[branch_pos] < lower[branch_pos] - 1e-12 or \
               child_upper[branch_pos] > upper[branch_pos] + 1e-12:
                continue
            child_sol = solve_node(child_lower, child_upper)
            if child_sol.status != OPTIMAL:
                continue
            if child_sol.objective >= cutoff():
                continue
            counter += 1
            heapq.heappush(heap, (child_sol.objective, counter,
                                  child_lower, child_upper, child_sol))

        if node_cap is not None and node_count >= node_cap:
            if incumbent is None:
                raise BudgetExceeded(
                    f"node cap {node_cap} hit without an incumbent")
            return MilpSolution(OPTIMAL, incumbent, incumbent_obj,
                                node_count, budget_exhausted=True)

    if incumbent is None:
        return MilpSolution(INFEASIBLE, node_count=node_count)
    return MilpSolution(OPTIMAL, incumbent, incumbent_obj, node_count)
