"""Exception types shared across the solver stack."""


class MalformedProblem(ValueError):
    """Problem data has inconsistent dimensions or non-finite entries."""


class BudgetExceeded(RuntimeError):
    """A node/evaluation budget ran out before any incumbent was found."""


class UnboundedProblem(RuntimeError):
    """A relaxation is unbounded below; no finite optimum exists."""


class UnboundedInteger(ValueError):
    """A general-integer variable lacks finite bounds for binary expansion."""


class LowerLevelInfeasible(RuntimeError):
    """The lower level admits no response at the given leader decision."""


class InfeasibleInstance(RuntimeError):
    """The joint constraint set is empty; the bilevel problem is infeasible."""


class LowerLevelInfeasibleAtPoint(LowerLevelInfeasible):
    """Lower level infeasible at a specific leader point."""


class UnboundedLowerLevel(RuntimeError):
    """Lower-level LP is unbounded below at the given point."""


class SingularBasis(RuntimeError):
    """No invertible square basis could be extracted from the active rows."""


class EmptyRegion(RuntimeError):
    """A constructed region excludes its own generator point."""


class RegionInfeasible(RuntimeError):
    """The regional upper-level problem has an empty feasible set."""


class DimensionTooLarge(ValueError):
    """Input exceeds the size guard of a brute-force routine."""


class GenerationExhausted(RuntimeError):
    """Instance generator hit its retry cap without an accepted draw."""
