"""Independent verification machinery.

The grid oracle scans leader space on a regular grid, solving the follower
exactly at every point (optimistic tie-breaking) and keeping the best
bilevel-feasible point.  It shares the LP kernel with the rest of the stack
but none of the region machinery, so it is the independent cross-check for
the heuristic.  Region enumeration rediscovers critical regions by sampling,
as a test tool.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .cregion import CriticalRegion, make_region
from .errors import (DimensionTooLarge, EmptyRegion,
                     LowerLevelInfeasibleAtPoint, SingularBasis,
                     UnboundedLowerLevel)
from .lp import FREE, INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem, solve_lp
from .model import BilevelInstance, BilevelPoint
from .prs import PrsResult

_FEAS_TOL = 1e-7
_TIE_TOL = 1e-9
_MAX_BINARIES = 16
_CHUNK = 2048


@dataclass(frozen=True)
class GridOracleResult:
    best: BilevelPoint | None
    resolution: int
    evaluated: int
    box: tuple[tuple[float, float], ...]
    feasible_count: int


@dataclass
class RegionAtlas:
    fixed_binaries: tuple[int, ...]
    regions: list[CriticalRegion]
    coverage_samples: int
    uncovered: list[np.ndarray]
    infeasible_samples: int


@dataclass(frozen=True)
class CrossCheckReport:
    prs_feasible: bool
    delta_f: float
    slack: float
    within_slack: bool
    prs_improved: bool


def _axis_points(lo: float, hi: float, resolution: int) -> np.ndarray:
    if resolution == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, resolution)


def _normalize_box(instance: BilevelInstance, box) -> tuple[tuple[float, float], ...]:
    box = list(box)
    if len(box) == 2 and np.isscalar(box[0]):
        box = [tuple(box)] * instance.n_x
    if len(box) != instance.n_x:
        raise ValueError(f"box needs {instance.n_x} (lo, hi) pairs")
    out = tuple((float(lo), float(hi)) for lo, hi in box)
    for lo, hi in out:
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ValueError("box bounds must be finite with lo <= hi")
    return out


def _binary_combos(n: int):
    return [np.array(bits, dtype=float) for bits in product((0.0, 1.0), repeat=n)]


class _ComboGeometry:
    """Per-binary-combo data for the vectorized grid sweep."""

    def __init__(self, instance: BilevelInstance, y_fixed: np.ndarray):
        cont = list(instance.y_cont_idx)
        ints = list(instance.y_integer_indices)
        self.y_fixed = y_fixed
        self.d2C = instance.d2[cont]
        self.B2C = instance.B2[:, cont]
        self.obj_const = float(instance.d2[ints] @ y_fixed)
        self.rhs_const = instance.b2 - instance.B2[:, ints] @ y_fixed
        self.A2 = instance.A2
        self.unbounded = self._has_negative_ray()
        self.maps: list[tuple[np.ndarray, np.ndarray]] = []
        if not self.unbounded:
            self._build_vertex_maps()

    def _has_negative_ray(self) -> bool:
        """Recession direction with negative follower cost (rhs-independent)."""
        n_c = self.B2C.shape[1]
        if n_c == 0:
            return False
        rows = np.vstack([self.B2C, np.eye(n_c), -np.eye(n_c)])
        rhs = np.concatenate([np.zeros(self.B2C.shape[0]), np.ones(2 * n_c)])
        sol = solve_lp(LpProblem(self.d2C, rows, rhs, tuple([FREE] * n_c)))
        return sol.status == OPTIMAL and sol.objective < -1e-9

    def _build_vertex_maps(self) -> None:
        """Affine maps x -> candidate basic solution for every invertible
        row subset of the continuous block."""
        m, n_c = self.B2C.shape
        if n_c == 0:
            return
        for subset in combinations(range(m), n_c):
            sub = self.B2C[list(subset)]
            if np.linalg.matrix_rank(sub, tol=1e-9) < n_c:
                continue
            inv = np.linalg.inv(sub)
            const = inv @ self.rhs_const[list(subset)]
            slope = -inv @ self.A2[list(subset)]
            self.maps.append((const, slope))

    def pointed(self) -> bool:
        return self.B2C.shape[1] == 0 or \
            np.linalg.matrix_rank(self.B2C, tol=1e-9) == self.B2C.shape[1]


def _grid_points(box, resolution: int) -> np.ndarray:
    axes = [_axis_points(lo, hi, resolution) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def grid_oracle(instance: BilevelInstance, box, resolution: int,
                rel_gap: float = 1e-6,
                force_pointwise: bool = False) -> GridOracleResult:
    """Exhaustive grid scan of leader space.

    At each point the follower is solved exactly (all binary combinations),
    ties are broken optimistically, the response is screened against the
    upper constraints, and the lexicographic best feasible point is kept.
    The best value is an upper bound on the optimistic optimum and converges
    to it as the resolution grows.
    """
    if instance.n_x > 3:
        raise DimensionTooLarge("grid oracle is limited to n_x <= 3")
    n_bin = len(instance.y_integer_indices)
    if n_bin > _MAX_BINARIES:
        raise DimensionTooLarge(
            f"grid oracle enumerates binaries, got {n_bin} > {_MAX_BINARIES}")
    box = _normalize_box(instance, box)
    X = _grid_points(box, resolution)

    combos = _binary_combos(n_bin)
    geos = [_ComboGeometry(instance, y) for y in combos]
    vectorizable = (not force_pointwise
                    and np.all(instance.B1[:, list(instance.y_cont_idx)] == 0.0)
                    and not any(g.unbounded for g in geos)
                    and all(g.pointed() for g in geos))

    if vectorizable:
        best, feas = _sweep_vectorized(instance, geos, X)
    else:
        best, feas = _sweep_pointwise(instance, combos, X)
    return GridOracleResult(best, resolution, X.shape[0], box, feas)


def _assemble_y(instance: BilevelInstance, y_fixed: np.ndarray,
                y_cont: np.ndarray) -> np.ndarray:
    y = np.zeros(instance.n_y)
    for pos, j in enumerate(instance.y_integer_indices):
        y[j] = y_fixed[pos]
    for pos, j in enumerate(instance.y_cont_idx):
        y[j] = y_cont[pos]
    return y


def _lex_min(best, cand):
    if best is None:
        return cand
    if cand is None:
        return best
    return cand if cand.lex_key() < best.lex_key() else best


def _sweep_vectorized(instance: BilevelInstance, geos, X: np.ndarray):
    n_pts = X.shape[0]
    best: BilevelPoint | None = None
    feas_count = 0
    cont = list(instance.y_cont_idx)
    ints = list(instance.y_integer_indices)
    d1C = instance.d1[cont]

    for start in range(0, n_pts, _CHUNK):
        Xc = X[start:start + _CHUNK]
        nc = Xc.shape[0]
        f_val = np.full((len(geos), nc), np.inf)
        F_val = np.full((len(geos), nc), np.inf)
        for gi, geo in enumerate(geos):
            R = geo.rhs_const - Xc @ geo.A2.T         # (nc, m2)
            if len(cont) == 0:
                combo_feasible = np.all(R >= -_FEAS_TOL, axis=1)
                Y_best = np.zeros((nc, 0))
                f_combo = np.where(combo_feasible, geo.obj_const, np.inf)
                F_combo = np.full(nc, np.inf)
                ok = combo_feasible
                if instance.m1:
                    up = Xc @ instance.A1.T + (instance.B1[:, ints] @ geo.y_fixed)
                    ok = ok & np.all(up <= instance.b1 + _FEAS_TOL, axis=1)
                F_combo[ok] = Xc[ok] @ instance.c1 + instance.d1[ints] @ geo.y_fixed
                f_val[gi] = f_combo
                F_val[gi] = np.where(ok, F_combo, np.inf)
                continue
            f_best_g = np.full(nc, np.inf)
            F_best_g = np.full(nc, np.inf)
            for const, slope in geo.maps:
                Y = const + Xc @ slope.T               # (nc, n_yC)
                lhs = Y @ geo.B2C.T                    # (nc, m2)
                ok = np.all(lhs <= R + _FEAS_TOL, axis=1)
                if not ok.any():
                    continue
                f = Y @ geo.d2C + geo.obj_const
                F_x = Xc @ instance.c1 + (instance.d1[ints] @ geo.y_fixed)
                F = F_x + Y @ d1C
                if instance.m1:
                    up = (Xc @ instance.A1.T
                          + (instance.B1[:, ints] @ geo.y_fixed))
                    ok_up = np.all(up <= instance.b1 + _FEAS_TOL, axis=1)
                else:
                    ok_up = np.ones(nc, dtype=bool)
                valid = ok & ok_up
                strictly = valid & (f < f_best_g - _TIE_TOL)
                tied = valid & (np.abs(f - f_best_g) <= _TIE_TOL) & (F < F_best_g)
                upd = strictly | tied
                f_best_g[upd] = f[upd]
                F_best_g[upd] = F[upd]
            f_val[gi] = f_best_g
            F_val[gi] = F_best_g

        f_opt = f_val.min(axis=0)
        for p in range(nc):
            if not np.isfinite(f_opt[p]):
                continue
            tie = np.abs(f_val[:, p] - f_opt[p]) <= _TIE_TOL
            F_cands = F_val[tie, p]
            if not np.isfinite(F_cands).any():
                continue  # follower optimum exists, none upper-feasible
            feas_count += 1
            F_here = float(F_cands.min())
            # recover the witness y for the new incumbent only
            cand = BilevelPoint(Xc[p].copy(), np.zeros(instance.n_y),
                                F_here, float(f_opt[p]))
            if best is None or cand.lex_key() < best.lex_key():
                exact = _evaluate_point(instance,
                                        [g.y_fixed for g in geos], Xc[p])
                best = _lex_min(best, exact)
    return best, feas_count


def _evaluate_point(instance: BilevelInstance, combos,
                    x: np.ndarray) -> BilevelPoint | None:
    """Exact optimistic evaluation of one leader point.

    Enumerates binary combinations; per combination finds the follower
    optimum, then the upper-objective-minimal response on the follower's
    optimal face subject to the upper constraints.
    """
    cont = list(instance.y_cont_idx)
    ints = list(instance.y_integer_indices)
    f_opt = np.inf
    candidates: list[tuple[float, np.ndarray]] = []
    for y_fixed in combos:
        rhs = (instance.b2 - instance.A2 @ x
               - instance.B2[:, ints] @ y_fixed)
        obj_const = float(instance.d2[ints] @ y_fixed)
        if not cont:
            if rhs.size and rhs.min() < -_FEAS_TOL:
                continue
            candidates.append((obj_const, y_fixed.copy()))
            f_opt = min(f_opt, obj_const)
            continue
        lp = LpProblem(instance.d2[cont], instance.B2[:, cont], rhs,
                       tuple([FREE] * len(cont)))
        sol = solve_lp(lp)
        if sol.status == UNBOUNDED:
            return None
        if sol.status != OPTIMAL:
            continue
        f_combo = sol.objective + obj_const
        candidates.append((f_combo, y_fixed.copy()))
        f_opt = min(f_opt, f_combo)
    if not candidates or not np.isfinite(f_opt):
        return None

    best: BilevelPoint | None = None
    for f_combo, y_fixed in candidates:
        if f_combo > f_opt + _TIE_TOL:
            continue
        rhs = (instance.b2 - instance.A2 @ x
               - instance.B2[:, ints] @ y_fixed)
        obj_const = float(instance.d2[ints] @ y_fixed)
        if not cont:
            y = _assemble_y(instance, y_fixed, np.zeros(0))
            if instance.upper_violation(x, y) > _FEAS_TOL:
                continue
            cand = instance.point(x, y)
            best = _lex_min(best, cand)
            continue
        # optimistic refinement: min upper objective on the optimal face
        # intersected with the upper constraints
        face_rows = np.vstack([instance.B2[:, cont],
                               instance.d2[cont][None, :]])
        face_rhs = np.concatenate([rhs, [f_opt - obj_const + _TIE_TOL]])
        if instance.m1:
            up_rows = instance.B1[:, cont]
            up_rhs = (instance.b1 - instance.A1 @ x
                      - instance.B1[:, ints] @ y_fixed)
            face_rows = np.vstack([face_rows, up_rows])
            face_rhs = np.concatenate([face_rhs, up_rhs])
        lp = LpProblem(instance.d1[cont], face_rows, face_rhs,
                       tuple([FREE] * len(cont)))
        sol = solve_lp(lp)
        if sol.status != OPTIMAL:
            continue  # no upper-feasible follower-optimal completion
        y = _assemble_y(instance, y_fixed, sol.t)
        best = _lex_min(best, instance.point(x, y))
    return best


def _sweep_pointwise(instance: BilevelInstance, combos, X: np.ndarray):
    best: BilevelPoint | None = None
    feas = 0
    for x in X:
        cand = _evaluate_point(instance, combos, x)
        if cand is None:
            continue
        feas += 1
        best = _lex_min(best, cand)
    return best, feas


def enumerate_regions(instance: BilevelInstance, y_fixed, box,
                      sample_budget: int = 2000,
                      seed: int = 0) -> RegionAtlas:
    """Rediscover the critical regions of one binary fixing by sampling.

    Draws uniform points in the box, skips points already covered, and
    builds a region at each uncovered feasible point; regions are
    deduplicated by their active set.
    """
    y_fixed = np.asarray(y_fixed, dtype=float)
    box = _normalize_box(instance, box)
    rng = np.random.default_rng(seed)
    lows = np.array([lo for lo, _ in box])
    highs = np.array([hi for _, hi in box])
    regions: list[CriticalRegion] = []
    seen: set[tuple[int, ...]] = set()
    uncovered: list[np.ndarray] = []
    infeasible = 0
    y_bin = tuple(int(round(v)) for v in y_fixed)

    for _ in range(sample_budget):
        x = lows + rng.random(instance.n_x) * (highs - lows)
        if any(r.contains(x, y_bin) for r in regions):
            continue
        try:
            region = make_region(instance, y_fixed, x,
                                 region_id=len(regions))
        except LowerLevelInfeasibleAtPoint:
            infeasible += 1
            continue
        except (SingularBasis, EmptyRegion, UnboundedLowerLevel):
            uncovered.append(x)
            continue
        if region.active_rows in seen:
            uncovered.append(x)
            continue
        seen.add(region.active_rows)
        regions.append(region)

    return RegionAtlas(y_bin, regions, sample_budget, uncovered, infeasible)


def cross_check_prs(instance: BilevelInstance, prs_result: PrsResult,
                    grid_result: GridOracleResult,
                    slack: float | None = None) -> CrossCheckReport:
    """Compare a heuristic run against the grid scan.

    Reports the objective difference and whether it is within the grid
    spacing-induced slack; never asserts optimality of either side.
    """
    from .model import check_bilevel_feasible

    prs_feasible = False
    delta_f = np.inf
    if prs_result.best is not None:
        prs_feasible = check_bilevel_feasible(
            instance, prs_result.best.x, prs_result.best.y).feasible
        if grid_result.best is not None:
            delta_f = prs_result.best.obj_upper - grid_result.best.obj_upper
    if slack is None:
        spacing = max((hi - lo) / max(grid_result.resolution - 1, 1)
                      for lo, hi in grid_result.box)
        gain = max((float(np.abs(r.coef).max()) if r.coef.size else 0.0)
                   for r in prs_result.visited_regions) if \
            prs_result.visited_regions else 1.0
        slack = spacing * (float(np.linalg.norm(instance.c1, 1))
                           + float(np.linalg.norm(instance.d1, 1)) * max(gain, 1.0))
    improved = False
    if prs_result.best is not None and prs_result.trace:
        improved = prs_result.best.obj_upper < \
            prs_result.trace[0].obj_upper - 1e-9
    return CrossCheckReport(prs_feasible, float(delta_f), float(slack),
                            bool(delta_f <= slack), improved)
