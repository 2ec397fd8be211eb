"""
Exception hierarchy shared by every module.

Each error carries the process exit code the CLI maps it to and a detail
message naming the offending value.
"""

from typing import Optional, Sequence


class MMDPError(Exception):
    """Base class for all solver, validation and configuration failures."""

    exit_code = 3

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(MMDPError):
    exit_code = 2

    def __init__(self, detail: str, field_path: Optional[str] = None):
        if field_path:
            detail = f"{field_path}: {detail}"
        super().__init__(detail)
        self.field_path = field_path


# Validation failures on model inputs

class ModelValidationError(MMDPError):
    pass


class NonStochasticRow(ModelValidationError):
    def __init__(self, state: int, action: Optional[int], row_sum: float):
        where = f"state {state}" if action is None else f"(state {state}, action {action})"
        super().__init__(f"row {where} sums to {row_sum!r}, expected 1")
        self.state = state
        self.action = action
        self.row_sum = row_sum


class NegativeProbability(ModelValidationError):
    def __init__(self, state: int, action: Optional[int], next_state: int, value: float):
        super().__init__(
            f"probability of {state} -> {next_state} under action {action} is {value!r}"
        )
        self.state = state
        self.action = action
        self.next_state = next_state
        self.value = value


class NonFiniteReward(ModelValidationError):
    def __init__(self, state: int, action: int):
        super().__init__(f"reward at (state {state}, action {action}) is not finite")
        self.state = state
        self.action = action


class ShapeMismatch(ModelValidationError):
    pass


class LengthMismatch(ModelValidationError):
    def __init__(self, left: int, right: int):
        super().__init__(f"vectors have lengths {left} and {right}")


class NotADistribution(ModelValidationError):
    pass


class NotSquare(ModelValidationError):
    def __init__(self, shape: Sequence[int]):
        super().__init__(f"matrix of shape {tuple(shape)} is not square")


class ComponentOutOfRange(ModelValidationError):
    def __init__(self, position: int, value: int, size: int):
        super().__init__(f"component {position} = {value} outside [0, {size})")
        self.position = position
        self.value = value
        self.size = size


# Numerical and algorithmic failures

class SolverError(MMDPError):
    pass


class NoConvergence(SolverError):
    def __init__(self, max_iter: int, span: float):
        super().__init__(f"no convergence after {max_iter} sweeps (residual span {span:.3e})")
        self.max_iter = max_iter
        self.span = span


class NotErgodic(SolverError):
    pass


class SingularSystem(SolverError):
    pass


class IdentityCheckFailed(SolverError):
    def __init__(self, max_residual: float):
        super().__init__(f"group-inverse identities violated, max residual {max_residual:.3e}")
        self.max_residual = max_residual


class ZeroProbabilityConditioning(SolverError):
    pass


class BudgetExceeded(SolverError):
    def __init__(self, required: int, budget: int):
        super().__init__(
            f"exhaustive enumeration needs {required} conditional contexts, budget is {budget}"
        )
        self.required = required
        self.budget = budget


class AllSampledPoliciesNonErgodic(SolverError):
    def __init__(self, n_samples: int):
        super().__init__(f"all {n_samples} sampled policies induce non-ergodic chains")
        self.n_samples = n_samples


class CapExceeded(SolverError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} local policy tuples exceed the enumeration cap {cap}")
        self.count = count
        self.cap = cap
