"""Exception hierarchy.

Every validation failure derives from :class:`ValidationError` and carries a
short machine-readable ``code`` that the HTTP service and the CLI reuse.
"""


class CrowdscoreError(Exception):
    code = "error"


class ValidationError(CrowdscoreError, ValueError):
    code = "validation_error"


# core
class InvalidMergeError(ValidationError):
    code = "invalid_merge"


class DomainError(ValidationError):
    code = "domain_error"


# qc
class ConfigurationError(ValidationError):
    code = "configuration_error"


class AlreadyRegisteredError(ValidationError):
    code = "already_registered"


class StaleTaskError(ValidationError):
    code = "stale_task"


class MalformedSubmissionError(ValidationError):
    code = "malformed_submission"


class NotEligibleError(ValidationError):
    code = "not_eligible"


class NoWorkError(ValidationError):
    code = "no_work"


class NotFoundError(ValidationError):
    code = "not_found"


# aggregate
class EmptyInputError(ValidationError):
    code = "empty_input"


class EmptyTallyError(EmptyInputError):
    code = "empty_tally"


class EmptyAnnotationsError(EmptyInputError):
    code = "empty_annotations"


class DuplicateVoteError(ValidationError):
    code = "duplicate_vote"


class DegenerateTrustError(ValidationError):
    code = "degenerate_trust"


class NoNucleiError(ValidationError):
    """Raised by ``pindex`` when an image has no nuclei at all.

    Pipelines catch it, assign class A and flag the image.
    """

    code = "no_nuclei"


class SchemeMismatchError(ValidationError):
    code = "scheme_mismatch"


# metrics
class ShapeError(ValidationError):
    code = "shape_error"


class DegenerateError(ValidationError):
    code = "degenerate"


class IncompleteMatrixError(ValidationError):
    code = "incomplete_matrix"


class UndefinedCorrelationError(DegenerateError):
    code = "undefined_correlation"


# sim
class IncompleteTruthError(ValidationError):
    code = "incomplete_truth"


# app
class SchemaError(ValidationError):
    code = "schema_error"


class ParseError(ValidationError):
    code = "parse_error"


class ConsistencyError(ValidationError):
    code = "consistency_error"


class ReconciliationError(ValidationError):
    code = "reconciliation_error"
