"""Exception hierarchy for the FIST workbench."""


class FistError(Exception):
    """Base exception for forwarding-table errors."""

    def __init__(self, message: str, **context: object):
        super().__init__(message)
        self.context = context


class UsageError(FistError):
    """Raised when an operation is called outside its preconditions."""


class PrefixParseError(FistError):
    """Raised when a prefix or address string cannot be parsed."""

    def __init__(self, message: str, text: str | None = None, line_number: int | None = None):
        super().__init__(message, text=text, line_number=line_number)
        self.text = text
        self.line_number = line_number


class RuleParseError(FistError):
    """Raised for malformed lines in rules, trace or flow files."""

    def __init__(self, message: str, line_number: int | None = None, line: str | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message, line_number=line_number, line=line)
        self.line_number = line_number
        self.line = line


class RuleConflictError(FistError):
    """Raised when a (dest, src) pair is defined twice."""

    def __init__(self, message: str, dest: object = None, src: object = None):
        super().__init__(message, dest=dest, src=src)
        self.dest = dest
        self.src = src


class RuleNotFoundError(FistError):
    """Raised when a delete targets a rule that does not exist."""

    def __init__(self, message: str, dest: object = None, src: object = None):
        super().__init__(message, dest=dest, src=src)
        self.dest = dest
        self.src = src


class TraceError(FistError):
    """Raised when a trace operation is inconsistent with table state."""

    def __init__(self, message: str, op_index: int, cause: Exception | None = None):
        super().__init__(f"op {op_index}: {message}", op_index=op_index)
        self.op_index = op_index
        self.cause = cause


class CorruptionError(FistError):
    """Raised when the forwarding state is internally inconsistent."""


class CapacityError(FistError):
    """Raised when the TCAM layout has no free slot left."""

    def __init__(self, message: str = "TCAM layout capacity exhausted", capacity: int | None = None):
        super().__init__(message, capacity=capacity)
        self.capacity = capacity


class EquivalenceError(FistError):
    """Raised when a transformed table stops answering like the original."""

    def __init__(self, message: str, witnesses: list | None = None):
        super().__init__(message, witnesses=witnesses or [])
        self.witnesses = witnesses or []
