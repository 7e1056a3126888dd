"""Exception types shared across the package.

Every error that a caller can act on gets its own class; generic ValueError
is reserved for plain programming mistakes (wrong types, malformed arrays).
"""


class IfslabError(Exception):
    """Base class for all package-specific errors."""


class InvalidMeasure(IfslabError):
    """Measure violates a structural invariant (empty, negative weight, zero mass)."""


class NotCanonical(IfslabError):
    """Operation requires a canonical measure but received a raw one."""


class UnsupportedExponent(IfslabError):
    """Exponent outside the range the requested algorithm is valid for."""


class InstanceTooLarge(IfslabError):
    """Exact flow solve refused: combined atom count exceeds the cap."""


class InconsistentTestFunction(IfslabError):
    """Kantorovich test function violates its declared Lipschitz bound."""


class UnsupportedMapKind(IfslabError):
    """Map distance requested for a map kind with no closed form and no tag."""


class InvalidModel(IfslabError):
    """IFS model violates a structural invariant (probabilities, map data)."""


class NotContractingAtThisExponent(IfslabError):
    """Certification failed: contraction factor at the requested exponent is >= 1.

    Carries the offending factor in ``rho``.
    """

    def __init__(self, message, rho):
        super().__init__(message)
        self.rho = rho


class InvalidExponent(IfslabError):
    """Exponent reduction called with a non-reducing target exponent."""


class TargetUnreachable(IfslabError):
    """Solver stalled: quantization floor exceeds the target error.

    Carries the best report achieved in ``report``.
    """

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class HypothesisFailed(IfslabError):
    """A checked hypothesis fails at explicit witness points.

    Carries the witnesses in ``witnesses``.
    """

    def __init__(self, message, witnesses):
        super().__init__(message)
        self.witnesses = witnesses


class DivergentMoment(IfslabError):
    """Requested exponential moment lies at or beyond the divergence threshold."""


class InvalidParameter(IfslabError):
    """Scalar parameter outside its admissible range."""


class ReferenceTooCoarse(IfslabError):
    """Reference measure's error ledger is too large for the comparison to mean anything."""


class NotFiberContracting(IfslabError):
    """Skew product certification failed: fiber contraction factor >= 1."""


class EmptyConditional(IfslabError):
    """A base bin holds mass in one ensemble but none in the other."""


class InvalidSpec(IfslabError):
    """Experiment or model config fails validation.

    Carries a list of (pointer, message) diagnostics in ``diagnostics``.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class IoError(IfslabError):
    """Config file missing or unreadable."""
