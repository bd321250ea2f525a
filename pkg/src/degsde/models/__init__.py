"""Model registry, coefficient expressions and hypothesis checks."""

from ..sdesim import SDEModel
from .expr import CoeffExpr, ExprSyntaxError, UnknownIdentifierError, parse_coeff_expr, to_source
from .registry import (
    BUILTINS,
    HypothesisReport,
    UnknownModelError,
    builtin,
    chain_matrix,
    empirical_lyapunov_constant,
    expr_field,
    load_model,
    model_from_json,
    paper_ex1_spec,
    sample_ball,
    validate,
)

ModelSpec = SDEModel

__all__ = [
    "BUILTINS",
    "CoeffExpr",
    "ExprSyntaxError",
    "HypothesisReport",
    "ModelSpec",
    "UnknownIdentifierError",
    "UnknownModelError",
    "builtin",
    "chain_matrix",
    "empirical_lyapunov_constant",
    "expr_field",
    "load_model",
    "model_from_json",
    "paper_ex1_spec",
    "parse_coeff_expr",
    "sample_ball",
    "to_source",
    "validate",
]
