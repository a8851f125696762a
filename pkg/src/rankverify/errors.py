"""Exception hierarchy shared by every layer of the verifier."""


class VerifierError(Exception):
    """Base class; the CLI maps uncaught instances to exit code 3."""


class RuleError(VerifierError):
    """A rule is ill-formed."""


class UndeclaredIdentifier(RuleError):
    pass


class DuplicateDeclaration(RuleError):
    pass


class DomainMismatch(RuleError):
    pass


class ParseError(RuleError):
    def __init__(self, message, path=None, pointer=None):
        self.path = path
        self.pointer = pointer
        where = ""
        if path:
            where += str(path)
        if pointer:
            where += f" at {pointer}"
        super().__init__(f"{where}: {message}" if where else message)


class AxesMismatch(VerifierError):
    """Structural axis-set mismatch detected by the evaluator."""


class NonSingletonAxis(VerifierError):
    pass


class KindMismatch(VerifierError):
    pass


class UnsupportedOp(VerifierError):
    pass


class RankZero(VerifierError):
    pass


class RClassMismatch(VerifierError):
    pass


class ValidityViolation(VerifierError):
    """Raised by the concrete interpreter; ``atom`` names the failed side condition."""

    def __init__(self, atom):
        self.atom = atom
        super().__init__(f"validity violated: {atom}")


class SamplingExhausted(VerifierError):
    pass


class EvaluationTooLarge(VerifierError):
    """A concrete evaluation would materialize more than the interpreter's work limit."""


class ResidualReduction(VerifierError):
    pass


class UnsupportedTheory(VerifierError):
    pass


class SolverSpawnError(VerifierError):
    pass


class ModelParseError(VerifierError):
    pass


class HintReferencesUnknownIndex(RuleError):
    pass
