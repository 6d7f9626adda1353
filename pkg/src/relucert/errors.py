"""Exception types shared across the package."""


class ParseError(ValueError):
    """Malformed network or instance file.

    The message names the offending path inside the document, e.g.
    ``layers[0].weights[2]``.
    """

    def __init__(self, path: str, detail: str):
        self.path = path
        self.detail = detail
        super().__init__(f"{path}: {detail}")


class InfeasibleTargetError(ValueError):
    """The requested target set is provably empty (e.g. a cap with z_hat < -rho).

    Raised instead of returning an infinite distance so callers must handle
    certification vacuity explicitly. The CLI maps this to exit code 2.
    """


class ExtractionError(RuntimeError):
    """Candidate extraction from a solved Gram block is degenerate."""


class OracleFailure(RuntimeError):
    """A numeric ground-truth engine failed to converge.

    Purely a test-infrastructure signal: it means the oracle, not the code
    under test, needs attention.
    """
