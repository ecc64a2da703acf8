import numpy as np

# Sigmoid outputs are kept strictly inside (0, 1).
EPS_PROB = 1e-7
# Floor for the exclusive cumprod(1 - p) denominators of the parallel MA form.
# Only true float64 underflow is floored; a coarser floor (e.g. 1e-10) breaks
# agreement with the recursive form for n <= 64, p in [0.01, 0.99].
EPS_DENOM = 1e-300
# Forward attention falls back to the softmax row below this total mass.
FA_MASS_FLOOR = 1e-30

EDGE_POLICIES = ("clamp", "leak")


class RejectedInput(ValueError):
    """Raised when a kernel receives inputs that violate its preconditions."""


def check_edge_policy(edge_policy: str) -> None:
    if edge_policy not in EDGE_POLICIES:
        raise RejectedInput(f"edge_policy must be one of {EDGE_POLICIES}, got {edge_policy!r}")


def check_same_length(a: np.ndarray, b: np.ndarray, what: str) -> None:
    na, nb = np.shape(a)[-1], np.shape(b)[-1]
    if na != nb:
        raise RejectedInput(f"{what}: length mismatch {na} != {nb}")


def one_hot(n: int, index: int = 0) -> np.ndarray:
    row = np.zeros(n)
    row[index] = 1.0
    return row
