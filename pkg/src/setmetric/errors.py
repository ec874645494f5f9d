"""Exception hierarchy shared by all setmetric modules.

Two broad categories matter to callers (and to the CLI exit codes):
:class:`ValidationError` for rejected inputs and :class:`NumericalError`
for failures arising inside otherwise valid computations.
"""


class Error(Exception):
    """Base class for all setmetric errors."""


class ValidationError(Error):
    """Invalid input: wrong shape, bad value, malformed file, bad config."""


class NumericalError(Error):
    """Computation failed on valid-looking input (singularity, overflow)."""


# -- validation ------------------------------------------------------------


class DimensionMismatch(ValidationError):
    pass


class NotSymmetric(ValidationError):
    pass


class NotPositiveDefinite(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class InvalidLabel(ValidationError):
    pass


class ShapeNotFactorable(ValidationError):
    pass


class EmptySet(ValidationError):
    pass


class EmptyGallery(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class InsufficientClasses(ValidationError):
    pass


class InsufficientSets(ValidationError):
    pass


class DegenerateLabels(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class DuplicateSetId(ValidationError):
    pass


# -- numerical -------------------------------------------------------------


class SingularKKT(NumericalError):
    pass


class NumericalFailure(NumericalError):
    pass


class NonFinite(NumericalError):
    pass
