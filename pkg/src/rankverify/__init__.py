"""Unbounded verification of rank-polymorphic tensor rewrite rules."""

__version__ = "0.1.0"

from .analysis import BoundReport, bound_reports, infer_bound, task_set  # noqa: E402
from .concrete import differential_test, eval_concrete  # noqa: E402
from .rulefile import load_path  # noqa: E402
from .verifier import VerifyConfig, Verdict, verify  # noqa: E402

__all__ = [
    "BoundReport",
    "VerifyConfig",
    "Verdict",
    "bound_reports",
    "differential_test",
    "eval_concrete",
    "infer_bound",
    "load_path",
    "task_set",
    "verify",
]
