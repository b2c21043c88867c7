from .generate import GenerateMixin
from .oracle import OracleMixin
from .planning import PlanningMixin
from .reporting import ReportMixin

__all__ = ["GenerateMixin", "OracleMixin", "PlanningMixin", "ReportMixin"]
