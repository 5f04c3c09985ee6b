# utils/errors.py
from typing import List, Optional


class SolverError(RuntimeError):
    """Numerical failure inside a solver (singular system, non-convergence, ...)."""

    def __init__(self, message: str, trace: Optional[List[float]] = None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class ScenarioError(ValueError):
    """
    Invalid scenario file.

    Args:
        message (str): What is wrong
        path (str, optional): Scenario file
        section (str, optional): INI section of the offending key
        key (str, optional): Offending key
        line (int, optional): 1-based line of the key in the file
    """

    def __init__(self, message: str, path: Optional[str] = None, section: Optional[str] = None,
                 key: Optional[str] = None, line: Optional[int] = None):
        self.message = message
        self.path = path
        self.section = section
        self.key = key
        self.line = line
        super().__init__(self.render())

    def render(self) -> str:
        location = ""
        if self.path:
            location = f"{self.path}:{self.line}: " if self.line else f"{self.path}: "
        where = ""
        if self.key:
            where = f"[{self.section}] {self.key}: " if self.section else f"{self.key}: "
        return f"{location}{where}{self.message}"
