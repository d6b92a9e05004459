"""Parametric region search: the iterative primal heuristic.

Each pass solves the follower at the current leader decision, updates the
lexicographic incumbent, stops if the decision re-enters an already explored
region, otherwise builds the critical region around it and moves to the best
leader decision inside that region.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .cregion import (CriticalRegion, affine_response, build_critical_region,
                      identify_active_set)
from .errors import (EmptyRegion, LowerLevelInfeasibleAtPoint,
                     RegionInfeasible, SingularBasis, UnboundedLowerLevel,
                     UnboundedProblem)
from .lp import FREE, INFEASIBLE, NONNEG, OPTIMAL, UNBOUNDED, LpProblem, solve_lp
from .milp import MilpProblem, solve_milp
from .model import BilevelInstance, BilevelPoint, lower_level_milp

REVISITED_REGION = "revisited_region"
MAX_ITERATIONS = "max_iterations"
TIME_LIMIT = "time_limit"
REGION_FAILURE = "region_failure"

_ZERO_ROW_TOL = 1e-10
_TIE_SLACK = 1e-8


@dataclass(frozen=True)
class PrsConfig:
    k_max: int = 100
    memb_tol: float = 1e-6
    act_tol: float = 1e-6
    feas_tol: float = 1e-6
    rel_gap: float = 1e-6
    time_limit: float | None = None
    lex_eps: float = 1e-9

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        for name in ("memb_tol", "act_tol", "feas_tol", "rel_gap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class PrsIterate:
    x: np.ndarray
    y: np.ndarray
    obj_upper: float
    obj_lower: float
    region_id: int | None


@dataclass
class PrsResult:
    best: BilevelPoint | None
    iterations: int
    trace: list[PrsIterate]
    visited_regions: list[CriticalRegion]
    termination: str
    note: str = ""


def lexicographic_better(obj_upper_curr: float, obj_lower_curr: float,
                         obj_upper_best: float, obj_lower_best: float,
                         eps: float = 1e-9) -> bool:
    """Strictly better upper objective, or a tie with a strictly better
    lower objective (both with an absolute eps band)."""
    if obj_upper_curr < obj_upper_best - eps:
        return True
    if abs(obj_upper_curr - obj_upper_best) <= eps:
        return obj_lower_curr < obj_lower_best - eps
    return False


def _substituted_rows(instance: BilevelInstance, region: CriticalRegion):
    """All upper and lower rows with y replaced by the region's response map.

    Near-zero rows (the active rows collapse to 0 <= 0) are dropped after
    checking their constants.
    """
    cont = list(instance.y_cont_idx)
    ints = list(instance.y_integer_indices)
    y_fixed = np.asarray(region.fixed_binaries, dtype=float)

    B1C, B1I = instance.B1[:, cont], instance.B1[:, ints]
    upper_n = instance.A1 + B1C @ region.coef
    upper_f = instance.b1 - B1I @ y_fixed - B1C @ region.intercept

    B2C, B2I = instance.B2[:, cont], instance.B2[:, ints]
    lower_n = instance.A2 + B2C @ region.coef
    lower_f = instance.b2 - B2I @ y_fixed - B2C @ region.intercept

    normals = np.vstack([upper_n, lower_n, region.normals])
    offsets = np.concatenate([upper_f, lower_f, region.offsets])
    keep = np.linalg.norm(normals, axis=1) >= _ZERO_ROW_TOL
    for i in np.flatnonzero(~keep):
        if offsets[i] < -1e-9:
            raise RegionInfeasible("vanishing row with negative constant")
    return normals[keep], offsets[keep]


def regional_upper_opt(instance: BilevelInstance, region: CriticalRegion,
                       rel_gap: float = 1e-6) -> np.ndarray:
    """Best leader decision within a region under the substituted response.

    Ties in the regional objective are broken by lexicographic minimization
    of x (coordinate by coordinate), which makes the iterate deterministic
    even when some leader coordinates do not enter the objective.
    """
    cont = list(instance.y_cont_idx)
    c_eff = instance.c1 + region.coef.T @ instance.d1[cont]
    normals, offsets = _substituted_rows(instance, region)

    kinds = [FREE] * instance.n_x
    for j in instance.x_integer_indices:
        kinds[j] = NONNEG
    kinds = tuple(kinds)

    if instance.x_integer_indices:
        problem = MilpProblem(LpProblem(c_eff, normals, offsets, kinds),
                              frozenset(instance.x_integer_indices))
        sol = solve_milp(problem, rel_gap=rel_gap)
        if sol.status == INFEASIBLE:
            raise RegionInfeasible("regional problem is infeasible")
        x_star = sol.primal
        # pin the binaries, then lexicographically refine the continuous part
        pins_n, pins_f = [], []
        for j in instance.x_integer_indices:
            e = np.zeros(instance.n_x)
            e[j] = 1.0
            v = round(float(x_star[j]))
            pins_n.extend([e, -e])
            pins_f.extend([v, -v])
        normals = np.vstack([normals] + [np.array(pins_n)])
        offsets = np.concatenate([offsets, np.array(pins_f)])
        best_obj = float(c_eff @ x_star)
        lex_coords = [j for j in range(instance.n_x)
                      if j not in instance.x_integer_indices]
    else:
        sol = solve_lp(LpProblem(c_eff, normals, offsets, kinds))
        if sol.status == INFEASIBLE:
            raise RegionInfeasible("regional problem is infeasible")
        if sol.status == UNBOUNDED:
            raise UnboundedProblem("regional problem is unbounded")
        x_star = sol.t
        best_obj = sol.objective
        lex_coords = list(range(instance.n_x))

    # lexicographic tie-break: pin the objective, then minimize coordinates
    normals = np.vstack([normals, c_eff[None, :]])
    offsets = np.concatenate([offsets,
                              [best_obj + _TIE_SLACK * (1.0 + abs(best_obj))]])
    x_out = np.asarray(x_star, dtype=float).copy()
    for j in lex_coords:
        e = np.zeros(instance.n_x)
        e[j] = 1.0
        sol = solve_lp(LpProblem(e, normals, offsets, kinds))
        if sol.status != OPTIMAL:
            break  # unbounded coordinate: keep the current value
        x_out = sol.t
        normals = np.vstack([normals, e[None, :]])
        offsets = np.concatenate([offsets, [sol.objective + 1e-9]])
    return x_out


def prs_solve(instance: BilevelInstance, x0,
              config: PrsConfig | None = None) -> PrsResult:
    """Run the region-search loop from a leader decision x0."""
    cfg = config or PrsConfig()
    started = time.perf_counter()
    x_k = np.asarray(x0, dtype=float).copy()
    if x_k.size != instance.n_x:
        raise ValueError(f"x0 has size {x_k.size}, expected {instance.n_x}")

    ints = list(instance.y_integer_indices)
    best: BilevelPoint | None = None
    obj_upper_best = np.inf
    obj_lower_best = np.inf
    trace: list[PrsIterate] = []
    visited: list[CriticalRegion] = []
    seen_pairs: set[tuple[tuple[int, ...], tuple[int, ...]]] = set()
    termination = MAX_ITERATIONS
    note = ""
    k = 0

    def out_of_time() -> bool:
        return (cfg.time_limit is not None
                and time.perf_counter() - started >= cfg.time_limit)

    while k < cfg.k_max:
        # step 1.1: follower response at x_k
        problem, _ = lower_level_milp(instance, x_k)
        response = solve_milp(problem, rel_gap=cfg.rel_gap)
        if response.status == INFEASIBLE:
            if k == 0:
                raise LowerLevelInfeasibleAtPoint(
                    "x0 admits no follower response")
            termination = REGION_FAILURE
            note = "lower level infeasible at a regional iterate"
            break
        y_k = response.primal
        y_bin = tuple(int(round(y_k[j])) for j in ints)
        point = instance.point(x_k, y_k)
        k += 1

        # step 1.2: lexicographic incumbent update, gated on upper feasibility
        if instance.upper_violation(x_k, y_k) <= cfg.feas_tol and \
                lexicographic_better(point.obj_upper, point.obj_lower,
                                     obj_upper_best, obj_lower_best,
                                     cfg.lex_eps):
            best = point
            obj_upper_best = point.obj_upper
            obj_lower_best = point.obj_lower

        # step 1.3: stop when re-entering an explored region
        revisit = next((r for r in visited
                        if r.contains(x_k, y_bin, cfg.memb_tol)), None)
        if revisit is not None:
            trace.append(PrsIterate(x_k.copy(), y_k.copy(), point.obj_upper,
                                    point.obj_lower, revisit.region_id))
            termination = REVISITED_REGION
            break

        if out_of_time():
            trace.append(PrsIterate(x_k.copy(), y_k.copy(), point.obj_upper,
                                    point.obj_lower, None))
            termination = TIME_LIMIT
            break

        # step 2: build the critical region at (x_k, y_bin)
        try:
            info = identify_active_set(instance, y_bin, x_k,
                                       act_tol=cfg.act_tol)
            if (info.fixed_binaries, info.active_rows) in seen_pairs:
                trace.append(PrsIterate(x_k.copy(), y_k.copy(),
                                        point.obj_upper, point.obj_lower,
                                        None))
                termination = REVISITED_REGION
                note = "active-set pair already explored"
                break
            coef, intercept = affine_response(instance, info)
            region = build_critical_region(instance, info, coef, intercept,
                                           x_k, memb_tol=cfg.memb_tol,
                                           region_id=len(visited))
        except (SingularBasis, EmptyRegion, UnboundedLowerLevel) as exc:
            trace.append(PrsIterate(x_k.copy(), y_k.copy(), point.obj_upper,
                                    point.obj_lower, None))
            termination = REGION_FAILURE
            note = f"{type(exc).__name__}: {exc}"
            break
        visited.append(region)
        seen_pairs.add((region.fixed_binaries, region.active_rows))
        trace.append(PrsIterate(x_k.copy(), y_k.copy(), point.obj_upper,
                                point.obj_lower, region.region_id))

        # step 3: regional upper-level optimization
        try:
            x_k = regional_upper_opt(instance, region, rel_gap=cfg.rel_gap)
        except (RegionInfeasible, UnboundedProblem) as exc:
            termination = REGION_FAILURE
            note = f"{type(exc).__name__}: {exc}"
            break

        if out_of_time():
            termination = TIME_LIMIT
            break

    return PrsResult(best, k, trace, visited, termination, note)


def result_to_dict(result: PrsResult) -> dict:
    """JSON-ready view of a result, including every region's geometry."""
    def arr(a):
        return np.asarray(a).tolist()

    return {
        "best": None if result.best is None else {
            "x": arr(result.best.x),
            "y": arr(result.best.y),
            "obj_upper": result.best.obj_upper,
            "obj_lower": result.best.obj_lower,
        },
        "iterations": result.iterations,
        "termination": result.termination,
        "note": result.note,
        "trace": [
            {"x": arr(it.x), "y": arr(it.y), "obj_upper": it.obj_upper,
             "obj_lower": it.obj_lower, "region_id": it.region_id}
            for it in result.trace
        ],
        "visited_regions": [
            {"region_id": r.region_id,
             "fixed_binaries": list(r.fixed_binaries),
             "active_rows": list(r.active_rows),
             "coef": arr(r.coef),
             "intercept": arr(r.intercept),
             "normals": arr(r.normals),
             "offsets": arr(r.offsets),
             "generator_x": arr(r.generator_x),
             "strict": r.strict}
            for r in result.visited_regions
        ],
    }
