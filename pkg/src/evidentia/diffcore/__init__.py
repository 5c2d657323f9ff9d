"""Reverse-mode differentiation and special functions."""
from evidentia.diffcore.gradcheck import check_gradients, relative_error
from evidentia.diffcore.special import (
    betainc,
    digamma,
    log_gamma,
    student_t_cdf,
    student_t_sf,
    trigamma,
)
from evidentia.diffcore.tape import PRIMITIVES, Tape, Tensor, as_tensor, backward

__all__ = [
    "PRIMITIVES",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "betainc",
    "check_gradients",
    "digamma",
    "log_gamma",
    "relative_error",
    "student_t_cdf",
    "student_t_sf",
    "trigamma",
]
