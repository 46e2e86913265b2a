from .branch_bound import MIPOptions, NodeBudgetExceeded, solve, solve_mip
from .encodings import encode_categorical, encode_sigmoid, piecewise_sigmoid, sigmoid
from .model import INF, Model, ModelError, Solution, Variable
from .simplex import LPError, Tolerances, solve_lp

__all__ = [
    "INF", "LPError", "MIPOptions", "Model", "ModelError", "NodeBudgetExceeded", "Solution",
    "Tolerances", "Variable", "encode_categorical", "encode_sigmoid", "piecewise_sigmoid",
    "sigmoid", "solve", "solve_lp", "solve_mip",
]
