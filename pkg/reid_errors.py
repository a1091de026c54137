#!/usr/bin/env python3
"""
Error types for the re-identification ranking toolkit
Every error carries the exit code the command line reports for it
"""

from typing import Optional


class ReidError(Exception):
    exit_code = 2


class ContractError(ReidError, ValueError):
    """Input violates a documented contract (exit 2)"""
    exit_code = 2


class IoFailure(ReidError, OSError):
    """Filesystem or system failure (exit 1)"""
    exit_code = 1


class MissingFile(IoFailure):
    def __init__(self, path: str):
        super().__init__(f"File not found: {path}")
        self.path = path


class BadMagic(ContractError):
    pass


class ShapeMismatch(ContractError):
    pass


class NonFiniteValue(ContractError):
    def __init__(self, row: int, col: int, source: str = "matrix"):
        super().__init__(f"Non-finite value in {source} at row {row}, col {col}")
        self.row = row
        self.col = col


class ParseError(ContractError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"Line {line_number}: {message}")
        self.line_number = line_number


class DuplicateId(ContractError):
    pass


class TrackSplitConflict(ContractError):
    pass


class DimensionMismatch(ContractError):
    pass


class EmptyList(ContractError):
    pass


class MissingWeight(ContractError):
    pass


class InvalidParameter(ContractError):
    pass


class KTooLarge(ContractError):
    pass


class NoValidTriplet(ContractError):
    pass


class SingletonClass(ContractError):
    pass


class SingleClass(ContractError):
    pass


class ClassOutOfRange(ContractError):
    pass


class NonFiniteLogit(ContractError):
    pass


class NoRelevant(ContractError):
    pass


class MissingLabels(ContractError):
    pass


class LengthMismatch(ContractError):
    pass


class ConfigInvalid(ContractError):
    pass


class OutputExists(ContractError):
    def __init__(self, path: str):
        super().__init__(f"output exists: {path} (use --force to overwrite)")
        self.path = path


def exit_code_for(error: BaseException) -> Optional[int]:
    """Exit code for a known error, None for anything unexpected"""
    if isinstance(error, ReidError):
        return error.exit_code
    if isinstance(error, OSError):
        return 1
    return None
