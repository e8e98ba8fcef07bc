"""Numerical kernels: adaptive ODE integration, gamma function, root finding."""
from .gamma import gamma_real
from .ode import (
    Events,
    EventHit,
    IntegrationError,
    MaxStepsExceededError,
    NonFiniteStateError,
    StepControl,
    StepUnderflowError,
    Trail,
    dopri_step,
    integrate_adaptive,
    jit_event,
    jit_jvp,
    jit_rhs,
    jit_stop,
)
from .roots import (
    ComplexRoot,
    InvalidBracketError,
    RootBracket,
    RootNotConvergedError,
    find_root_bracketed,
    find_root_complex,
)

__all__ = [
    "gamma_real",
    "Events",
    "EventHit",
    "IntegrationError",
    "MaxStepsExceededError",
    "NonFiniteStateError",
    "StepControl",
    "StepUnderflowError",
    "Trail",
    "dopri_step",
    "integrate_adaptive",
    "jit_event",
    "jit_jvp",
    "jit_rhs",
    "jit_stop",
    "ComplexRoot",
    "InvalidBracketError",
    "RootBracket",
    "RootNotConvergedError",
    "find_root_bracketed",
    "find_root_complex",
]
