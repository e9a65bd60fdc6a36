"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and the process exit
status the command-line front end should use for it (2 for validation
problems, 3 for numerical failures).
"""


class ConebifError(Exception):
    code = "error"
    exit_code = 3

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def record(self):
        return {"error": self.code, "message": str(self), "details": _jsonable(self.details)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    try:
        return float(obj)
    except (TypeError, ValueError):
        return repr(obj)


class ValidationError(ConebifError):
    code = "validation-error"
    exit_code = 2


class InvalidRadius(ValidationError):
    code = "invalid-radius"


class InvalidGeometry(ValidationError):
    code = "invalid-geometry"


class SliceWidthViolation(ValidationError):
    code = "slice-width-violation"


class DomainEscape(ValidationError):
    code = "domain-escape"


class NotApplicable(ValidationError):
    code = "not-applicable"


class GridError(ValidationError):
    code = "grid-error"


class SolverError(ConebifError):
    code = "solver-failure"
    exit_code = 3


class MeshingFailure(SolverError):
    code = "meshing-failure"


class AssemblyFailure(SolverError):
    code = "assembly-failure"


class SolverFailure(SolverError):
    code = "solver-failure"


class OracleFailure(SolverError):
    code = "oracle-failure"


class BracketFailure(SolverError):
    code = "bracket-failure"


class IntegrationFailure(SolverError):
    code = "integration-failure"


class StencilFailure(SolverError):
    code = "stencil-failure"


class NonSimpleEigenvalue(SolverError):
    code = "non-simple-eigenvalue"


class NoCrossing(SolverError):
    code = "no-crossing"


class TuningFailure(SolverError):
    code = "tuning-failure"


class NewtonFailure(SolverError):
    code = "newton-failure"


class SingularJacobian(SolverError):
    code = "singular-jacobian"


class NoBifurcation(SolverError):
    code = "no-bifurcation"


class SimplicityViolation(SolverError):
    code = "simplicity-violation"


class BranchEntryFailure(SolverError):
    code = "branch-entry-failure"
