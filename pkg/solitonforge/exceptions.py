from typing import Optional


class SolitonError(Exception):
    pass


class DomainError(SolitonError, ValueError):
    pass


class ConvergenceError(SolitonError):
    pass


class KahlerConeError(SolitonError):
    def __init__(self, message: str, node: Optional[int] = None, t: Optional[float] = None):
        super().__init__(message)
        self.node = node
        self.t = t


class EpsilonTooLargeError(SolitonError):
    def __init__(self, message: str, node: Optional[int] = None, t: Optional[float] = None):
        super().__init__(message)
        self.node = node
        self.t = t


class SolverError(SolitonError):
    def __init__(self, message: str, condition: Optional[float] = None):
        super().__init__(message)
        self.condition = condition


class OutputError(SolitonError):
    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path
