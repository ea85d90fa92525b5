"""Exception types raised across the package."""


class QrlobError(Exception):
    """Base class for all package errors."""


class MalformedLine(QrlobError):
    def __init__(self, line_no, detail=""):
        self.line_no = line_no
        self.detail = detail
        super().__init__(f"malformed line {line_no}: {detail}")


class NonMonotoneTimestamp(QrlobError):
    def __init__(self, line_no):
        self.line_no = line_no
        super().__init__(f"timestamp decreases at line {line_no}")


class CrossedBook(QrlobError):
    def __init__(self, line_no):
        self.line_no = line_no
        super().__init__(f"crossed or invalid book at line {line_no}")


class OutOfRange(QrlobError):
    pass


class IllegalEvent(QrlobError):
    pass


class EmptyDataset(QrlobError):
    pass


class NoData(QrlobError):
    def __init__(self, level):
        self.level = level
        super().__init__(f"no event sizes observed at level {level}")


class InsufficientData(QrlobError):
    pass


class SchemaVersionMismatch(QrlobError):
    pass


class Corrupt(QrlobError):
    pass


class DimensionMismatch(QrlobError):
    pass


class TimeRegression(QrlobError):
    pass


class NonBracketed(QrlobError):
    def __init__(self, message, mse_curve=None):
        self.mse_curve = mse_curve
        super().__init__(message)


class CooldownViolation(QrlobError):
    pass


class EmptyLog(QrlobError):
    pass


class InsufficientBins(QrlobError):
    pass


class InsufficientTrades(QrlobError):
    pass
