"""Bilevel instance data model, validation, serialization and derived solves.

An instance is

    min  c1.x + d1.y   s.t.  A1 x + B1 y <= b1,
                             y solves  min c2.x + d2.z  s.t.  A2 x + B2 z <= b2

with continuous/binary partitions of x and y carried as explicit index sets
(declaration order is preserved; nothing assumes binaries come first or last).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (LowerLevelInfeasible, MalformedProblem, UnboundedInteger,
                     UnboundedProblem)
from .lp import FREE, INFEASIBLE, NONNEG, OPTIMAL, LpProblem
from .milp import MilpProblem, MilpSolution, solve_milp

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BilevelInstance:
    c1: np.ndarray
    d1: np.ndarray
    A1: np.ndarray
    B1: np.ndarray
    b1: np.ndarray
    c2: np.ndarray
    d2: np.ndarray
    A2: np.ndarray
    B2: np.ndarray
    b2: np.ndarray
    x_integer_indices: tuple[int, ...] = ()
    y_integer_indices: tuple[int, ...] = ()

    def __post_init__(self):
        for name in ("c1", "d1", "b1", "c2", "d2", "b2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("A1", "B1", "A2", "B2"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "x_integer_indices",
                           tuple(int(i) for i in self.x_integer_indices))
        object.__setattr__(self, "y_integer_indices",
                           tuple(int(i) for i in self.y_integer_indices))

    # -- dimensions ---------------------------------------------------------
    @property
    def n_x(self) -> int:
        return self.c1.size

    @property
    def n_y(self) -> int:
        return self.d1.size

    @property
    def m1(self) -> int:
        return self.b1.size

    @property
    def m2(self) -> int:
        return self.b2.size

    @property
    def x_cont_idx(self) -> tuple[int, ...]:
        ints = set(self.x_integer_indices)
        return tuple(j for j in range(self.n_x) if j not in ints)

    @property
    def y_cont_idx(self) -> tuple[int, ...]:
        ints = set(self.y_integer_indices)
        return tuple(j for j in range(self.n_y) if j not in ints)

    @property
    def n_yC(self) -> int:
        return self.n_y - len(self.y_integer_indices)

    # -- objectives ---------------------------------------------------------
    def upper_objective(self, x, y) -> float:
        return float(self.c1 @ np.asarray(x, float) + self.d1 @ np.asarray(y, float))

    def lower_objective(self, x, y) -> float:
        return float(self.c2 @ np.asarray(x, float) + self.d2 @ np.asarray(y, float))

    def point(self, x, y) -> "BilevelPoint":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return BilevelPoint(x, y, self.upper_objective(x, y),
                            self.lower_objective(x, y))

    def upper_violation(self, x, y) -> float:
        """Largest violation of A1 x + B1 y <= b1 (0 when satisfied)."""
        if self.m1 == 0:
            return 0.0
        res = self.A1 @ np.asarray(x, float) + self.B1 @ np.asarray(y, float) - self.b1
        return float(max(0.0, res.max()))

    def lower_violation(self, x, y) -> float:
        if self.m2 == 0:
            return 0.0
        res = self.A2 @ np.asarray(x, float) + self.B2 @ np.asarray(y, float) - self.b2
        return float(max(0.0, res.max()))


@dataclass(frozen=True)
class BilevelPoint:
    x: np.ndarray
    y: np.ndarray
    obj_upper: float
    obj_lower: float

    def lex_key(self) -> tuple[float, float]:
        return (self.obj_upper, self.obj_lower)


def validate(instance: BilevelInstance) -> list[str]:
    """Return every dimension/finiteness violation; empty list means ok."""
    out: list[str] = []
    n_x, n_y = instance.n_x, instance.n_y
    checks = [
        ("d1", instance.d1.shape, (n_y,)),
        ("A1", instance.A1.shape, (instance.m1, n_x)),
        ("B1", instance.B1.shape, (instance.m1, n_y)),
        ("c2", instance.c2.shape, (n_x,)),
        ("d2", instance.d2.shape, (n_y,)),
        ("A2", instance.A2.shape, (instance.m2, n_x)),
        ("B2", instance.B2.shape, (instance.m2, n_y)),
    ]
    for name, got, want in checks:
        if got != want:
            out.append(f"{name} has shape {got}, expected {want}")
    for name in ("c1", "d1", "b1", "c2", "d2", "b2", "A1", "B1", "A2", "B2"):
        arr = getattr(instance, name)
        if not np.all(np.isfinite(arr)):
            out.append(f"{name} contains non-finite entries")
    for label, idx, n in (("x", instance.x_integer_indices, n_x),
                          ("y", instance.y_integer_indices, n_y)):
        if len(set(idx)) != len(idx):
            out.append(f"{label}_integer_indices contains duplicates")
        for i in idx:
            if not 0 <= i < n:
                out.append(f"{label}_integer_indices entry {i} out of range")
    return out


def require_valid(instance: BilevelInstance) -> None:
    problems = validate(instance)
    if problems:
        raise MalformedProblem("; ".join(problems))


# -- serialization ----------------------------------------------------------

def to_dict(instance: BilevelInstance) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "dims": {
            "n_xC": instance.n_x - len(instance.x_integer_indices),
            "n_xI": len(instance.x_integer_indices),
            "n_yC": instance.n_yC,
            "n_yI": len(instance.y_integer_indices),
        },
        "upper": {
            "c1": instance.c1.tolist(),
            "d1": instance.d1.tolist(),
            "A1": instance.A1.tolist(),
            "B1": instance.B1.tolist(),
            "b1": instance.b1.tolist(),
        },
        "lower": {
            "c2": instance.c2.tolist(),
            "d2": instance.d2.tolist(),
            "A2": instance.A2.tolist(),
            "B2": instance.B2.tolist(),
            "b2": instance.b2.tolist(),
        },
        "x_integer_indices": list(instance.x_integer_indices),
        "y_integer_indices": list(instance.y_integer_indices),
    }


def from_dict(data: dict) -> BilevelInstance:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise MalformedProblem(
            f"schema_version must be {SCHEMA_VERSION}, got {data.get('schema_version')!r}")
    up, low = data["upper"], data["lower"]
    instance = BilevelInstance(
        c1=up["c1"], d1=up["d1"], A1=up["A1"], B1=up["B1"], b1=up["b1"],
        c2=low["c2"], d2=low["d2"], A2=low["A2"], B2=low["B2"], b2=low["b2"],
        x_integer_indices=tuple(data.get("x_integer_indices", ())),
        y_integer_indices=tuple(data.get("y_integer_indices", ())),
    )
    require_valid(instance)
    dims = data.get("dims", {})
    if dims:
        want = (dims.get("n_xC", 0) + dims.get("n_xI", 0),
                dims.get("n_yC", 0) + dims.get("n_yI", 0))
        if want != (instance.n_x, instance.n_y):
            raise MalformedProblem(
                f"declared dims {want} do not match arrays "
                f"({instance.n_x}, {instance.n_y})")
    return instance


def save(instance: BilevelInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(instance)) + "\n")


def load(path: str | Path) -> BilevelInstance:
    return from_dict(json.loads(Path(path).read_text()))


# -- derived subproblems ----------------------------------------------------

def lower_level_milp(instance: BilevelInstance,
                     x_hat) -> tuple[MilpProblem, float]:
    """Follower problem at a fixed leader decision.

    Returns the MILP over z (in the instance's y ordering) and the constant
    objective offset c2.x_hat that the follower ignores.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    if x_hat.size != instance.n_x:
        raise MalformedProblem(
            f"x_hat has size {x_hat.size}, expected {instance.n_x}")
    kinds = [FREE] * instance.n_y
    for j in instance.y_integer_indices:
        kinds[j] = NONNEG
    base = LpProblem(
        c=instance.d2,
        A=instance.B2,
        b=instance.b2 - instance.A2 @ x_hat,
        kinds=tuple(kinds),
    )
    problem = MilpProblem(base, frozenset(instance.y_integer_indices))
    return problem, float(instance.c2 @ x_hat)


def solve_lower_level(instance: BilevelInstance, x_hat,
                      rel_gap: float = 1e-6) -> MilpSolution:
    problem, _ = lower_level_milp(instance, x_hat)
    return solve_milp(problem, rel_gap=rel_gap)


@dataclass(frozen=True)
class FeasibilityCheck:
    feasible: bool
    follower_gap: float
    max_upper_violation: float = 0.0
    max_lower_violation: float = 0.0


def check_bilevel_feasible(instance: BilevelInstance, x, y,
                           tol: float = 1e-6,
                           rel_gap: float = 1e-6) -> FeasibilityCheck:
    """Constraint satisfaction plus follower optimality of y at x.

    follower_gap is d2.y minus the optimal follower objective at x; the pair
    is feasible when all constraints hold within tol and the gap is <= tol.
    Raises LowerLevelInfeasible when no follower response exists at x.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    up_viol = instance.upper_violation(x, y)
    low_viol = instance.lower_violation(x, y)
    int_viol = 0.0
    for j in instance.y_integer_indices:
        int_viol = max(int_viol, abs(y[j] - round(y[j])))
    response = solve_lower_level(instance, x, rel_gap=rel_gap)
    if response.status == INFEASIBLE:
        raise LowerLevelInfeasible(
            "lower level has no response at the given x")
    gap = float(instance.d2 @ y) - response.objective
    feasible = (up_viol <= tol and low_viol <= tol and int_viol <= tol
                and gap <= tol)
    return FeasibilityCheck(feasible, gap, up_viol, low_viol)


# -- binary expansion of general integers -----------------------------------

@dataclass(frozen=True)
class BinaryExpansion:
    """Expanded instance plus the constant objective offsets introduced by
    nonzero lower bounds (upper objective gains upper_offset, lower gains
    lower_offset)."""
    instance: BilevelInstance
    upper_offset: float
    lower_offset: float


def _expansion_plan(n: int, int_idx: set[int],
                    bounds: dict[int, tuple[float, float]]):
    """Per-variable binary weights (1, 2, 4, ...) and lower-bound offsets."""
    weights: dict[int, list[float]] = {}
    offsets: dict[int, float] = {}
    for j, (lo, hi) in sorted(bounds.items()):
        if j not in int_idx:
            raise MalformedProblem(f"variable {j} is not integer")
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
            raise UnboundedInteger(f"variable {j} needs finite bounds")
        lo, hi = int(round(lo)), int(round(hi))
        if (lo, hi) == (0, 1):
            continue
        span = hi - lo
        n_bits = max(1, int(np.ceil(np.log2(span + 1))))
        weights[j] = [float(2 ** i) for i in range(n_bits)]
        offsets[j] = float(lo)
    return weights, offsets


def _column_map(n: int, weights: dict[int, list[float]]):
    """Old column -> [(new column, weight)]; extra binaries appended at the
    end in ascending original-variable order."""
    mapping: list[list[tuple[int, float]]] = []
    next_col = n
    for j in range(n):
        if j in weights:
            cols = [(j, weights[j][0])]
            for w in weights[j][1:]:
                cols.append((next_col, w))
                next_col += 1
            mapping.append(cols)
        else:
            mapping.append([(j, 1.0)])
    return mapping, next_col


def _apply_map_vec(v: np.ndarray, mapping, n_new: int) -> np.ndarray:
    out = np.zeros(n_new)
    for j, cols in enumerate(mapping):
        for col, w in cols:
            out[col] = v[j] * w
    return out


def _apply_map_mat(m: np.ndarray, mapping, n_new: int) -> np.ndarray:
    out = np.zeros((m.shape[0], n_new))
    for j, cols in enumerate(mapping):
        for col, w in cols:
            out[:, col] = m[:, j] * w
    return out


def expand_integers_to_binary(instance: BilevelInstance,
                              x_bounds: dict[int, tuple[float, float]] | None = None,
                              y_bounds: dict[int, tuple[float, float]] | None = None,
                              ) -> BinaryExpansion:
    """Replace general-integer variables by weighted sums of binaries.

    A variable with bounds [lo, hi] becomes ceil(log2(hi-lo+1)) binaries with
    weights 1, 2, 4, ...; the first binary reuses the original slot, the rest
    are appended.  A range row sum(w_i b_i) <= hi-lo is added to the owning
    level's constraint block unless the range is exactly 2^k - 1.  Variables
    already in [0, 1] are left untouched.  Objective values are preserved up
    to the returned constant offsets (nonzero only for lo != 0).
    """
    x_weights, x_offsets = _expansion_plan(
        instance.n_x, set(instance.x_integer_indices), dict(x_bounds or {}))
    y_weights, y_offsets = _expansion_plan(
        instance.n_y, set(instance.y_integer_indices), dict(y_bounds or {}))

    x_map, n_x_new = _column_map(instance.n_x, x_weights)
    y_map, n_y_new = _column_map(instance.n_y, y_weights)

    c1n = _apply_map_vec(instance.c1, x_map, n_x_new)
    c2n = _apply_map_vec(instance.c2, x_map, n_x_new)
    d1n = _apply_map_vec(instance.d1, y_map, n_y_new)
    d2n = _apply_map_vec(instance.d2, y_map, n_y_new)
    A1n = _apply_map_mat(instance.A1, x_map, n_x_new)
    A2n = _apply_map_mat(instance.A2, x_map, n_x_new)
    B1n = _apply_map_mat(instance.B1, y_map, n_y_new)
    B2n = _apply_map_mat(instance.B2, y_map, n_y_new)

    b1n = instance.b1.astype(float).copy()
    b2n = instance.b2.astype(float).copy()
    upper_offset = 0.0
    lower_offset = 0.0
    for j, lo in x_offsets.items():
        b1n -= instance.A1[:, j] * lo
        b2n -= instance.A2[:, j] * lo
        upper_offset += instance.c1[j] * lo
        lower_offset += instance.c2[j] * lo
    for j, lo in y_offsets.items():
        b1n -= instance.B1[:, j] * lo
        b2n -= instance.B2[:, j] * lo
        upper_offset += instance.d1[j] * lo
        lower_offset += instance.d2[j] * lo

    def range_rows(weights, bounds, mapping, n_new):
        rows, rhs = [], []
        for j in sorted(weights):
            lo, hi = bounds[j]
            span = int(round(hi)) - int(round(lo))
            if sum(weights[j]) == span:
                continue
            row = np.zeros(n_new)
            for col, w in mapping[j]:
                row[col] = w
            rows.append(row)
            rhs.append(float(span))
        return rows, rhs

    x_rows, x_rhs = range_rows(x_weights, dict(x_bounds or {}), x_map, n_x_new)
    y_rows, y_rhs = range_rows(y_weights, dict(y_bounds or {}), y_map, n_y_new)
    if x_rows:
        A1n = np.vstack([A1n, np.array(x_rows)])
        B1n = np.vstack([B1n, np.zeros((len(x_rows), n_y_new))])
        b1n = np.concatenate([b1n, np.array(x_rhs)])
    if y_rows:
        A2n = np.vstack([A2n, np.zeros((len(y_rows), n_x_new))])
        B2n = np.vstack([B2n, np.array(y_rows)])
        b2n = np.concatenate([b2n, np.array(y_rhs)])

    def new_int_idx(n, int_idx, weights, mapping):
        out = []
        for j in range(n):
            if j in weights:
                out.extend(col for col, _ in mapping[j])
            elif j in int_idx:
                out.append(j)
        return tuple(sorted(out))

    expanded = BilevelInstance(
        c1=c1n, d1=d1n, A1=A1n, B1=B1n, b1=b1n,
        c2=c2n, d2=d2n, A2=A2n, B2=B2n, b2=b2n,
        x_integer_indices=new_int_idx(instance.n_x, set(instance.x_integer_indices),
                                      x_weights, x_map),
        y_integer_indices=new_int_idx(instance.n_y, set(instance.y_integer_indices),
                                      y_weights, y_map))
    return BinaryExpansion(expanded, float(upper_offset), float(lower_offset))
