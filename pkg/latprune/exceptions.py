class PlannerError(Exception):
    pass


class SpecError(PlannerError):
    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class ConfigError(PlannerError):
    pass


class TableError(PlannerError):
    pass


class TraceError(PlannerError):
    pass


class SolverError(PlannerError):
    pass


class InfeasibleError(PlannerError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class PlannerIOError(PlannerError):
    pass


class UsageError(PlannerError):
    pass
