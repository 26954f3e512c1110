from typing import Optional

# Exit codes surfaced by the CLI
EXIT_UNEXPECTED = 1
EXIT_VALIDATION = 2
EXIT_CAPACITY = 3
EXIT_INFEASIBLE = 4
EXIT_INVARIANT = 5


class PolarKeyError(Exception):
    """Base error carrying an exit code and a detail message"""
    exit_code = EXIT_UNEXPECTED

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "detail": self.detail, "exit_code": self.exit_code}


class StructuralError(PolarKeyError):
    """Length mismatch, bad index, or a block length that is not a power of two"""
    exit_code = EXIT_VALIDATION


class SpecValidationError(PolarKeyError):
    """Malformed source specification or configuration"""
    exit_code = EXIT_VALIDATION


class CapacityError(PolarKeyError):
    """Exact enumeration budget exceeded"""
    exit_code = EXIT_CAPACITY


class InfeasibleConfiguration(PolarKeyError):
    """Index sets violate an existence condition of the scheme"""
    exit_code = EXIT_INFEASIBLE

    def __init__(self, detail: str, needed: int = 0, available: int = 0):
        super().__init__(detail)
        self.needed = needed
        self.available = available

    def to_dict(self) -> dict:
        data = super().to_dict()
        data.update({"needed": self.needed, "available": self.available})
        return data


class InvariantFailure(PolarKeyError):
    """An oracle invariant did not hold"""
    exit_code = EXIT_INVARIANT


class InfiniteDivergence(ValueError):
    """D(p||q) is infinite: q vanishes where p does not"""
