"""Exception hierarchy shared by every module."""


class CohDeferError(Exception):
    """Base class for all library errors."""


class TaxonomyError(CohDeferError, ValueError):
    pass


class CycleDetected(TaxonomyError):
    pass


class DuplicateNode(TaxonomyError):
    pass


class UnknownParent(TaxonomyError):
    pass


class EmptyTaxonomy(TaxonomyError):
    pass


class UnknownNode(TaxonomyError, KeyError):
    pass


class DagUnsupported(CohDeferError):
    """Raised by tree decoders when handed a taxonomy with multi-parent nodes."""


class InvalidAction(CohDeferError, ValueError):
    pass


class InvalidExpertIndex(InvalidAction):
    pass


class ActionTaxonomyMismatch(CohDeferError, ValueError):
    pass


class InstanceTooLarge(CohDeferError):
    pass


class UnsatisfiableInput(CohDeferError, ValueError):
    pass


class ExpertVectorNotClosed(CohDeferError, ValueError):
    pass


class InvalidPrimitives(CohDeferError, ValueError):
    pass


class InvalidRisks(CohDeferError, ValueError):
    pass


class InfeasibleBudgetMask(CohDeferError):
    pass


class EmptyFeasibleSet(CohDeferError):
    pass


class ShapeMismatch(CohDeferError, ValueError):
    pass


class NonFiniteValue(CohDeferError, ArithmeticError):
    pass


class DivergenceDetected(CohDeferError, ArithmeticError):
    pass
