"""High-point relaxation initialization.

Relaxes follower optimality, solves the joint single-level MILP for a
starting leader decision, and optionally re-solves the follower at that
decision to obtain a bilevel-feasible starting pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleInstance, LowerLevelInfeasible
from .lp import FREE, INFEASIBLE, NONNEG, LpProblem
from .milp import MilpProblem, solve_milp
from .model import BilevelInstance, lower_level_milp


@dataclass(frozen=True)
class HprResult:
    x_hat: np.ndarray
    y_hat: np.ndarray
    y_star: np.ndarray | None
    obj_hpr: float
    obj_hprr: float | None
    upper_violation: float = 0.0


def hpr_milp(instance: BilevelInstance) -> MilpProblem:
    """Joint relaxation: min c1.x + d1.y over all upper and lower rows."""
    n_x, n_y = instance.n_x, instance.n_y
    kinds = [FREE] * (n_x + n_y)
    binaries = set()
    for j in instance.x_integer_indices:
        kinds[j] = NONNEG
        binaries.add(j)
    for j in instance.y_integer_indices:
        kinds[n_x + j] = NONNEG
        binaries.add(n_x + j)
    A = np.block([[instance.A1, instance.B1], [instance.A2, instance.B2]])
    base = LpProblem(
        c=np.concatenate([instance.c1, instance.d1]),
        A=A,
        b=np.concatenate([instance.b1, instance.b2]),
        kinds=tuple(kinds),
    )
    return MilpProblem(base, frozenset(binaries))


def hpr_relax(instance: BilevelInstance,
              rel_gap: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Step 1: drop follower optimality and solve the joint MILP.

    Infeasibility here proves the bilevel instance infeasible.  When the
    relaxation has multiple optima the deterministic branch-and-bound
    tie-breaking fixes which one is returned.
    """
    sol = solve_milp(hpr_milp(instance), rel_gap=rel_gap)
    if sol.status == INFEASIBLE:
        raise InfeasibleInstance("high-point relaxation is infeasible")
    n_x = instance.n_x
    return sol.primal[:n_x].copy(), sol.primal[n_x:].copy()


def hpr_response(instance: BilevelInstance, x_hat,
                 rel_gap: float = 1e-6) -> np.ndarray:
    """Step 2: true follower response at the fixed leader decision."""
    problem, _ = lower_level_milp(instance, x_hat)
    sol = solve_milp(problem, rel_gap=rel_gap)
    if sol.status == INFEASIBLE:
        raise LowerLevelInfeasible("lower level infeasible at x_hat")
    return sol.primal.copy()


def run_hpr(instance: BilevelInstance, rel_gap: float = 1e-6,
            with_response: bool = True) -> HprResult:
    """Run both steps; a response violating the upper constraints is
    reported through ``upper_violation``, not raised."""
    x_hat, y_hat = hpr_relax(instance, rel_gap=rel_gap)
    obj_hpr = instance.upper_objective(x_hat, y_hat)
    if not with_response:
        return HprResult(x_hat, y_hat, None, obj_hpr, None)
    y_star = hpr_response(instance, x_hat, rel_gap=rel_gap)
    obj_hprr = instance.upper_objective(x_hat, y_star)
    violation = instance.upper_violation(x_hat, y_star)
    return HprResult(x_hat, y_hat, y_star, obj_hpr, obj_hprr, violation)
