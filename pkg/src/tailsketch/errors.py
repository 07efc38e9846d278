"""Exception types raised across the package."""


class TailSketchError(Exception):
    pass


class TraceRejected(TailSketchError):
    """A trace could not be assembled; counted and skipped, never fatal."""

    def __init__(self, trace_id: str, message: str):
        super().__init__(f"trace {trace_id}: {message}")
        self.trace_id = trace_id


class CyclicParentage(TraceRejected):
    pass


class DuplicateSpanId(TraceRejected):
    pass


class IllegalSpanType(TailSketchError, ValueError):
    pass


class LengthMismatch(TailSketchError, ValueError):
    pass


class TimeReversal(TailSketchError, ValueError):
    pass


class NoPMC(TailSketchError):
    pass


class InvalidAlpha(TailSketchError, ValueError):
    pass


class ParseError(TailSketchError, ValueError):
    def __init__(self, message: str, path=None, line_no: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line_no is not None:
            where += f":{line_no}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line_no = line_no


class StateVersionMismatch(TailSketchError):
    pass


class InvalidSpec(TailSketchError, ValueError):
    pass
