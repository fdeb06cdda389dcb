"""Exception hierarchy. Every error raised by the library derives from HiqcError."""


class HiqcError(ValueError):
    pass


# taxonomy
class DuplicateLabel(HiqcError):
    pass


class OrphanChild(HiqcError):
    pass


class EmptyTaxonomy(HiqcError):
    pass


class EmptyParent(HiqcError):
    pass


class UnknownLabel(HiqcError, KeyError):
    def __str__(self):
        return ValueError.__str__(self)


class NotAChild(HiqcError):
    pass


# corpus
class MalformedRow(HiqcError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class EmptyText(HiqcError):
    pass


class EmptyInput(HiqcError):
    pass


# encoder
class WidthMismatch(HiqcError):
    pass


class MalformedHeader(HiqcError):
    pass


class DuplicateId(HiqcError):
    pass


class MissingEmbedding(HiqcError, KeyError):
    def __str__(self):
        return ValueError.__str__(self)


# model / trainer
class DimensionMismatch(HiqcError):
    pass


class TaxonomyMismatch(HiqcError):
    pass


class EmptyTrainSet(HiqcError):
    pass


class NonFiniteLoss(HiqcError, ArithmeticError):
    pass


class ShapeMismatch(HiqcError):
    pass


# selftrain
class EmptyIndex(HiqcError):
    pass


class KeyMismatch(HiqcError):
    pass


class KindMismatch(HiqcError):
    pass


class LengthMismatch(HiqcError):
    pass


class EmptyNeighborhood(HiqcError):
    pass


class BudgetExceedsPool(HiqcError):
    pass


# configuration
class ConfigError(HiqcError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line
