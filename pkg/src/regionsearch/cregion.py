"""Critical-region machinery for the parameterized lower level.

With the follower binaries fixed, the lower level is an LP whose right-hand
side is affine in the leader decision x.  At a nondegenerate optimum the
active rows pin the continuous response, which is therefore affine in x with
constant multipliers; substituting it into every remaining constraint gives
the polytope of leader decisions over which that basis stays optimal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (EmptyRegion, LowerLevelInfeasibleAtPoint, SingularBasis,
                     UnboundedLowerLevel)
from .lp import (ACT_TOL, FREE, INFEASIBLE, NONNEG, OPTIMAL, UNBOUNDED,
                 LpProblem, solve_lp)
from .model import BilevelInstance

MEMB_TOL = 1e-6
COND_MAX = 1e10
_ZERO_ROW_TOL = 1e-10
_REDUNDANCY_TOL = 1e-9


@dataclass(frozen=True)
class ActiveSetInfo:
    """Basis information of the fixed-binary lower LP at a generator point."""
    fixed_binaries: tuple[int, ...]
    active_rows: tuple[int, ...]
    basis_matrix: np.ndarray
    duals: np.ndarray
    response: np.ndarray          # continuous part of the optimum, y_cont order
    generator_x: np.ndarray
    strict: bool


@dataclass(frozen=True)
class CriticalRegion:
    """Polytope of leader decisions with an invariant follower basis.

    Inside ``normals @ x <= offsets`` the follower's continuous response is
    ``coef @ x + intercept`` (rows in ascending y-continuous index order) and
    its binaries equal ``fixed_binaries``.  Rows of ``normals`` carry unit
    Euclidean norm.
    """
    region_id: int
    fixed_binaries: tuple[int, ...]
    active_rows: tuple[int, ...]
    coef: np.ndarray
    intercept: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    generator_x: np.ndarray
    strict: bool = True

    def contains(self, x, y_binaries, memb_tol: float = MEMB_TOL) -> bool:
        return contains(self, x, y_binaries, memb_tol)

    def response(self, x) -> np.ndarray:
        return self.coef @ np.asarray(x, dtype=float) + self.intercept


def contains(region: CriticalRegion, x, y_binaries,
             memb_tol: float = MEMB_TOL) -> bool:
    """Polytope membership gated on a matching binary fixing.

    Boundary points count as inside (tolerance memb_tol outward).
    """
    y_bin = tuple(int(round(v)) for v in np.asarray(y_binaries, float))
    if y_bin != region.fixed_binaries:
        return False
    x = np.asarray(x, dtype=float)
    if region.normals.shape[0] == 0:
        return True
    return bool(np.all(region.normals @ x <= region.offsets + memb_tol))


def _lower_rhs(instance: BilevelInstance, y_fixed: np.ndarray,
               x: np.ndarray) -> np.ndarray:
    """Effective rhs of the continuous lower rows: b2 - A2 x - B2I y_I."""
    B2I = instance.B2[:, list(instance.y_integer_indices)]
    return instance.b2 - instance.A2 @ x - B2I @ y_fixed


def fixed_binary_lower_lp(instance: BilevelInstance, y_fixed,
                          x) -> LpProblem:
    """Lower-level LP over the continuous follower variables only."""
    y_fixed = np.asarray(y_fixed, dtype=float)
    x = np.asarray(x, dtype=float)
    cont = list(instance.y_cont_idx)
    return LpProblem(
        c=instance.d2[cont],
        A=instance.B2[:, cont],
        b=_lower_rhs(instance, y_fixed, x),
        kinds=tuple([FREE] * len(cont)),
    )


def identify_active_set(instance: BilevelInstance, y_fixed, x0,
                        act_tol: float = ACT_TOL,
                        cond_max: float = COND_MAX) -> ActiveSetInfo:
    """Solve the fixed-binary lower LP at x0 and extract a square basis.

    The active rows are those whose slacks are nonbasic in the final simplex
    basis; under primal degeneracy this selects exactly one invertible subset
    of the value-active rows.  Raises SingularBasis when fewer than n_yC rows
    pin the optimum (flat optimal face) or the basis is numerically singular.
    """
    y_fixed = np.asarray(y_fixed, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    cont = list(instance.y_cont_idx)
    n_c = len(cont)

    if n_c == 0:
        rhs = _lower_rhs(instance, y_fixed, x0)
        if rhs.size and rhs.min() < -ACT_TOL:
            raise LowerLevelInfeasibleAtPoint(
                "lower level infeasible at generator point")
        return ActiveSetInfo(tuple(int(round(v)) for v in y_fixed), (),
                             np.zeros((0, 0)), np.zeros(instance.m2),
                             np.zeros(0), x0, True)

    lp = fixed_binary_lower_lp(instance, y_fixed, x0)
    sol = solve_lp(lp, act_tol=act_tol)
    if sol.status == INFEASIBLE:
        raise LowerLevelInfeasibleAtPoint(
            "lower level infeasible at generator point")
    if sol.status == UNBOUNDED:
        raise UnboundedLowerLevel("lower level unbounded at generator point")

    rows = tuple(sorted(sol.basis_rows))
    if len(rows) != n_c:
        raise SingularBasis(
            f"optimum pinned by {len(rows)} rows, need {n_c} "
            "(flat optimal face)")
    basis = instance.B2[np.ix_(list(rows), cont)]
    if np.linalg.cond(basis) >= cond_max:
        raise SingularBasis("active-row basis is numerically singular")
    strict = all(sol.duals[i] > act_tol for i in rows)
    return ActiveSetInfo(tuple(int(round(v)) for v in y_fixed), rows, basis,
                         sol.duals.copy(), sol.t.copy(), x0, strict)


def affine_response(instance: BilevelInstance,
                    info: ActiveSetInfo) -> tuple[np.ndarray, np.ndarray]:
    """Affine map x -> continuous response implied by the active rows."""
    rows = list(info.active_rows)
    n_c = len(instance.y_cont_idx)
    if n_c == 0:
        return np.zeros((0, instance.n_x)), np.zeros(0)
    y_fixed = np.asarray(info.fixed_binaries, dtype=float)
    B2I = instance.B2[np.ix_(rows, list(instance.y_integer_indices))]
    try:
        coef = np.linalg.solve(info.basis_matrix, -instance.A2[rows])
        intercept = np.linalg.solve(info.basis_matrix,
                                    instance.b2[rows] - B2I @ y_fixed)
    except np.linalg.LinAlgError as exc:
        raise SingularBasis("active-row basis is singular") from exc
    return coef, intercept


def _normalize_rows(normals: np.ndarray, offsets: np.ndarray,
                    generator_x: np.ndarray):
    """Scale rows to unit norm; drop vacuous near-zero rows.

    A near-zero row with a negative constant means the generator's active
    set is inconsistent, which is reported as EmptyRegion.
    """
    keep_n, keep_f = [], []
    for row, off in zip(normals, offsets):
        norm = float(np.linalg.norm(row))
        if norm < _ZERO_ROW_TOL:
            if off < -1e-9:
                raise EmptyRegion(
                    "vanishing constraint row with negative constant")
            continue
        keep_n.append(row / norm)
        keep_f.append(off / norm)
    if not keep_n:
        return np.zeros((0, generator_x.size)), np.zeros(0)
    return np.array(keep_n), np.array(keep_f)


def remove_redundant_rows(normals: np.ndarray,
                          offsets: np.ndarray) -> np.ndarray:
    """Mask of rows kept after pairwise-exact redundancy elimination.

    Row i is dropped when max normals[i].x over the remaining rows stays
    below offsets[i]; rows are scanned in order, so one copy of a duplicated
    row survives.
    """
    m, n = normals.shape
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        others = keep.copy()
        others[i] = False
        if not others.any():
            continue
        lp = LpProblem(c=-normals[i], A=normals[others], b=offsets[others],
                       kinds=tuple([FREE] * n))
        sol = solve_lp(lp)
        if sol.status != OPTIMAL:
            continue  # unbounded in this direction: certainly not redundant
        if -sol.objective <= offsets[i] + _REDUNDANCY_TOL:
            keep[i] = False
    return keep


def build_critical_region(instance: BilevelInstance, info: ActiveSetInfo,
                          coef: np.ndarray, intercept: np.ndarray, x0,
                          memb_tol: float = MEMB_TOL,
                          eliminate_redundancy: bool = True,
                          region_id: int = 0) -> CriticalRegion:
    """Substitute the affine response into every inactive lower row and every
    upper row, normalize, and optionally strip provably redundant rows."""
    x0 = np.asarray(x0, dtype=float)
    cont = list(instance.y_cont_idx)
    ints = list(instance.y_integer_indices)
    y_fixed = np.asarray(info.fixed_binaries, dtype=float)
    active = set(info.active_rows)
    inactive = [i for i in range(instance.m2) if i not in active]

    A2_in = instance.A2[inactive]
    B2C_in = instance.B2[np.ix_(inactive, cont)]
    B2I_in = instance.B2[np.ix_(inactive, ints)]
    lower_n = A2_in + B2C_in @ coef
    lower_f = instance.b2[inactive] - B2I_in @ y_fixed - B2C_in @ intercept

    B1C = instance.B1[:, cont]
    B1I = instance.B1[:, ints]
    upper_n = instance.A1 + B1C @ coef
    upper_f = instance.b1 - B1I @ y_fixed - B1C @ intercept

    normals = np.vstack([lower_n, upper_n])
    offsets = np.concatenate([lower_f, upper_f])
    normals, offsets = _normalize_rows(normals, offsets, x0)

    if normals.shape[0] and np.max(normals @ x0 - offsets) > memb_tol:
        raise EmptyRegion("generator point violates a constructed row")

    if eliminate_redundancy and normals.shape[0] > 1:
        keep = remove_redundant_rows(normals, offsets)
        normals, offsets = normals[keep], offsets[keep]

    normals.setflags(write=False)
    offsets.setflags(write=False)
    return CriticalRegion(region_id, info.fixed_binaries, info.active_rows,
                          coef, intercept, normals, offsets, x0, info.strict)


def make_region(instance: BilevelInstance, y_fixed, x0,
                act_tol: float = ACT_TOL, memb_tol: float = MEMB_TOL,
                region_id: int = 0) -> CriticalRegion:
    """Identify, map, and build in one call."""
    info = identify_active_set(instance, y_fixed, x0, act_tol=act_tol)
    coef, intercept = affine_response(instance, info)
    return build_critical_region(instance, info, coef, intercept, x0,
                                 memb_tol=memb_tol, region_id=region_id)


# -- interior sampling and resample verification ----------------------------

def chebyshev_center(normals: np.ndarray,
                     offsets: np.ndarray) -> tuple[np.ndarray, float]:
    """Center and radius of the largest inscribed ball (rows unit-norm)."""
    m, n = normals.shape
    if m == 0:
        return np.zeros(n), np.inf
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A = np.hstack([normals, np.ones((m, 1))])
    kinds = tuple([FREE] * n + [NONNEG])
    sol = solve_lp(LpProblem(c=c, A=A, b=offsets, kinds=kinds))
    if sol.status == UNBOUNDED:
        # unbounded region: fall back to a large-radius feasible point
        box = np.vstack([np.eye(n + 1), -np.eye(n + 1)])
        bb = np.full(2 * (n + 1), 1e6)
        sol = solve_lp(LpProblem(c=c, A=np.vstack([A, box]),
                                 b=np.concatenate([offsets, bb]), kinds=kinds))
    if sol.status != OPTIMAL:
        raise EmptyRegion("region has no interior point")
    return sol.t[:n].copy(), float(sol.t[n])


def sample_interior(region: CriticalRegion, n_samples: int,
                    rng: np.random.Generator,
                    margin: float = 1e-6) -> np.ndarray:
    """Points with normals@x <= offsets - margin, via random rays from the
    Chebyshev center.  Returns an (k, n_x) array with k <= n_samples (empty
    when the region has no interior at the requested margin)."""
    normals, offsets = region.normals, region.offsets
    n = region.generator_x.size
    if normals.shape[0] == 0:
        return np.tile(region.generator_x, (n_samples, 1))
    center, radius = chebyshev_center(normals, offsets)
    if radius <= margin:
        return np.zeros((0, n))
    shrunk = offsets - margin
    out = []
    for _ in range(n_samples):
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        # largest step keeping center + t d inside the shrunk polytope
        num = shrunk - normals @ center
        den = normals @ d
        with np.errstate(divide="ignore"):
            steps = np.where(den > 1e-12, num / np.maximum(den, 1e-300), np.inf)
        t_max = float(np.min(steps))
        if not np.isfinite(t_max):
            t_max = 1e3
        out.append(center + rng.uniform(0.0, max(t_max, 0.0)) * d)
    return np.array(out)


@dataclass
class ConsistencyReport:
    ok: bool
    samples: int
    active_set_mismatches: int
    response_mismatches: int
    dual_mismatches: int
    max_response_err: float
    max_dual_err: float


def verify_region_consistency(instance: BilevelInstance,
                              region: CriticalRegion,
                              n_samples: int = 100,
                              seed: int = 0,
                              tol: float = 1e-6,
                              margin: float = 1e-6) -> ConsistencyReport:
    """Resample check: at interior points the lower LP must reproduce the
    region's active set, its affine response, and (under strict
    complementarity, where they are unique) its multipliers."""
    rng = np.random.default_rng(seed)
    pts = sample_interior(region, n_samples, rng, margin=margin)
    y_fixed = np.asarray(region.fixed_binaries, dtype=float)
    cont = list(instance.y_cont_idx)
    ref_duals = None
    as_bad = resp_bad = dual_bad = 0
    max_resp = max_dual = 0.0
    gen_sol = None
    if cont:
        gen_sol = solve_lp(fixed_binary_lower_lp(instance, y_fixed,
                                                 region.generator_x))
        ref_duals = gen_sol.duals
    for x in pts:
        predicted = region.response(x)
        if not cont:
            continue
        lp = fixed_binary_lower_lp(instance, y_fixed, x)
        sol = solve_lp(lp)
        if sol.status != OPTIMAL:
            as_bad += 1
            continue
        if region.strict:
            if tuple(sorted(sol.basis_rows)) != region.active_rows:
                as_bad += 1
            err = float(np.max(np.abs(sol.t - predicted)))
            max_resp = max(max_resp, err)
            if err > tol:
                resp_bad += 1
            derr = float(np.max(np.abs(sol.duals - ref_duals)))
            max_dual = max(max_dual, derr)
            if derr > tol:
                dual_bad += 1
        else:
            # ties possible: verify the predicted response is optimal
            feas = float(np.max(lp.A @ predicted - lp.b))
            obj_gap = float(lp.c @ predicted) - sol.objective
            if feas > tol or obj_gap > tol:
                resp_bad += 1
                max_resp = max(max_resp, max(feas, obj_gap))
    ok = as_bad == 0 and resp_bad == 0 and dual_bad == 0
    return ConsistencyReport(ok, len(pts), as_bad, resp_bad, dual_bad,
                             max_resp, max_dual)
