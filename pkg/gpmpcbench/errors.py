"""Exceptions raised by gpmpcbench"""

class GpmpcError(Exception):
    """Base class for all library failures"""

class ConfigError(GpmpcError):
    """Invalid user input, reported with the offending field"""
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field

class GramFactorizationError(GpmpcError):
    """Gram matrix not positive definite even after jitter"""

class TrainingError(GpmpcError):
    """Every training restart failed"""

class PropagationError(GpmpcError):
    """Propagated covariance lost positive semi-definiteness"""

class LinearizationError(GpmpcError):
    """Local model could not be built at the operating point"""

class QpInfeasibleError(GpmpcError):
    """No point satisfies the QP constraints, or the start is infeasible"""

class QpIterationLimitError(GpmpcError):
    """Active set iteration cap exceeded"""

class KktSolveError(GpmpcError):
    """Saddle point system could not be solved"""

class InfeasibleConstraintsError(GpmpcError):
    """Tightened state bounds cross"""
    def __init__(self, dimension, step, lower, upper):
        super().__init__(
            f"Tightened bounds cross for state {dimension} at horizon step {step}: {lower:.6g} > {upper:.6g}"
        )
        self.dimension = dimension
        self.step = step

class SqpError(GpmpcError):
    """FP-SQP could not proceed"""

class ControllerError(GpmpcError):
    """Closed loop aborted, partial log kept"""
    def __init__(self, step, cause, log):
        super().__init__(f"Controller failed at step {step}: {cause}")
        self.step = step
        self.log = log
