from typing import Optional


class SoftcacheError(Exception):
    pass


class IngestError(SoftcacheError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(SoftcacheError, ValueError):
    pass


class ContractError(SoftcacheError, ValueError):
    pass


class CapacityError(ContractError):
    pass


class ModeError(SoftcacheError, TypeError):
    pass


class RefusalError(SoftcacheError, RuntimeError):
    def __init__(self, message: str, count: Optional[int] = None):
        self.count = count
        super().__init__(message)


class ConfigError(SoftcacheError, ValueError):
    pass
