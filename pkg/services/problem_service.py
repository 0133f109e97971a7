"""
Problem Service - model problems for eps^2 Delta^2 u - Delta u + a u = g

Exact solutions are written once as sympy expressions in x, y, eps and
q = exp(-1/eps); every derivative in the bundle and the manufactured source
come from symbolic differentiation and are lambdified to numpy.
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import sympy as sym

from services.errors import ProblemError

logger = logging.getLogger(__name__)

x, y, eps, q = sym.symbols("x y eps q", real=True)

# exp(-1/eps) below this is treated as zero
UNDERFLOW_GUARD = 1e-300

BOUNDARY_MODES = ("homogeneous", "from_exact")


@dataclass(frozen=True, eq=False)
class ExactBundle:
    """Closed-form solution and the derivatives the norms and sources need."""
    u: Callable
    grad: Callable            # (x, y) -> (ux, uy)
    laplacian: Callable
    grad_laplacian: Callable  # (x, y) -> (d/dx Delta u, d/dy Delta u)
    bilaplacian: Callable


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    name: str
    epsilon: float
    a: Callable
    g: Callable
    exact: Optional[ExactBundle] = None
    boundary_mode: str = "homogeneous"
    description: str = ""

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ProblemError("epsilon must be positive", {"epsilon": self.epsilon})
        if self.boundary_mode not in BOUNDARY_MODES:
            raise ProblemError(f"Unknown boundary mode '{self.boundary_mode}'", {"modes": list(BOUNDARY_MODES)})
        if self.boundary_mode == "from_exact" and self.exact is None:
            raise ProblemError("Boundary data from the exact solution needs an exact solution")


def layer_factor(epsilon: float) -> float:
    """exp(-1/eps), flushed to zero instead of underflowing."""
    value = math.exp(-1.0 / epsilon) if epsilon > 1.0 / 700.0 else 0.0
    return value if value >= UNDERFLOW_GUARD else 0.0


def _example1_expression() -> sym.Expr:
    d1 = 1 - q
    d2 = 1 + q
    x_factor = sym.sin(sym.pi * x) + sym.pi * eps / d1 * (sym.exp(-x / eps) + sym.exp((x - 1) / eps) - 1 - q)
    y_factor = 2 * y * (1 - y ** 2) + eps * (
        d1 * d2 * (1 - 2 * y)
        - 3 * d2 / d1
        + (3 / d1 - d2) * sym.exp(-y / eps)
        + (3 / d1 + d2) * sym.exp((y - 1) / eps)
    )
    return x_factor * y_factor


def _example2_expression() -> sym.Expr:
    low = eps * (sym.exp(-x / eps) + sym.exp(-y / eps)) - x ** 2 * y
    high = eps * (sym.exp(-(1 - x) / eps) + sym.exp(-(1 - y) / eps)) - x ** 2 * y
    return 250 * low * high * x * y * (1 - x) * (1 - y)


PATCH_POLYNOMIALS = {
    2: x ** 2 + x * y,
    3: x ** 3,
}

SOLUTIONS = {
    "example1": (_example1_expression, "0"),
    "example2": (_example2_expression, "x"),
}


def _lambdify(expr: sym.Expr) -> Callable:
    return sym.lambdify((x, y, eps, q), expr, modules="numpy")


@lru_cache(maxsize=None)
def _compiled(name: str, coefficient: str) -> Dict[str, Callable]:
    """Lambdified derivative bundle and source for one named solution and coefficient a(x, y)."""
    if name in SOLUTIONS:
        u = SOLUTIONS[name][0]()
    else:
        u = PATCH_POLYNOMIALS[int(name.rsplit("k", 1)[1])]
    a = sym.sympify(coefficient, locals={"x": x, "y": y})

    ux, uy = sym.diff(u, x), sym.diff(u, y)
    lap = sym.diff(u, x, 2) + sym.diff(u, y, 2)
    lap_x, lap_y = sym.diff(lap, x), sym.diff(lap, y)
    bilap = sym.diff(lap, x, 2) + sym.diff(lap, y, 2)
    g = eps ** 2 * bilap - lap + a * u

    logger.debug(f"Compiled exact bundle for {name} with a = {coefficient}")
    return {
        "u": _lambdify(u),
        "ux": _lambdify(ux),
        "uy": _lambdify(uy),
        "lap": _lambdify(lap),
        "lap_x": _lambdify(lap_x),
        "lap_y": _lambdify(lap_y),
        "bilap": _lambdify(bilap),
        "g": _lambdify(g),
        "a": _lambdify(a),
    }


def _bind(f: Callable, epsilon: float, q_value: float) -> Callable:
    def evaluate(px, py):
        px = np.asarray(px, dtype=float)
        py = np.asarray(py, dtype=float)
        return np.asarray(f(px, py, epsilon, q_value), dtype=float) * np.ones(np.broadcast(px, py).shape)
    return evaluate


def _bind_pair(fx: Callable, fy: Callable, epsilon: float, q_value: float) -> Callable:
    bx, by = _bind(fx, epsilon, q_value), _bind(fy, epsilon, q_value)

    def evaluate(px, py) -> Tuple[np.ndarray, np.ndarray]:
        return bx(px, py), by(px, py)
    return evaluate


def _build(name: str, epsilon: float, coefficient: str, boundary_mode: str, description: str) -> ProblemSpec:
    compiled = _compiled(name, coefficient)
    q_value = layer_factor(epsilon)
    exact = ExactBundle(
        u=_bind(compiled["u"], epsilon, q_value),
        grad=_bind_pair(compiled["ux"], compiled["uy"], epsilon, q_value),
        laplacian=_bind(compiled["lap"], epsilon, q_value),
        grad_laplacian=_bind_pair(compiled["lap_x"], compiled["lap_y"], epsilon, q_value),
        bilaplacian=_bind(compiled["bilap"], epsilon, q_value),
    )
    return ProblemSpec(
        name=name,
        epsilon=epsilon,
        a=_bind(compiled["a"], epsilon, q_value),
        g=_bind(compiled["g"], epsilon, q_value),
        exact=exact,
        boundary_mode=boundary_mode,
        description=description,
    )


class ProblemService:

    @staticmethod
    def example1(epsilon: float) -> ProblemSpec:
        """a = 0, sine profile in x and cubic profile in y with exponential layers on all sides."""
        return _build("example1", epsilon, SOLUTIONS["example1"][1], "from_exact",
                      "a = 0; sine/exponential-layer product solution")

    @staticmethod
    def example2(epsilon: float) -> ProblemSpec:
        """a = x, solution vanishing on the boundary through the factor xy(1-x)(1-y)."""
        return _build("example2", epsilon, SOLUTIONS["example2"][1], "from_exact",
                      "a = x; layer product times xy(1-x)(1-y)")

    @staticmethod
    def patch_problem(k: int, epsilon: float, a: float = 1.0) -> ProblemSpec:
        """Polynomial of total degree k with boundary data taken from it; Delta^2 u = 0."""
        if k not in PATCH_POLYNOMIALS:
            raise ProblemError(f"No patch polynomial for k={k}", {"supported": sorted(PATCH_POLYNOMIALS)})
        return _build(f"patch-k{k}", epsilon, repr(float(a)), "from_exact",
                      f"u = {PATCH_POLYNOMIALS[k]}, a = {a}")

    @staticmethod
    def names() -> Tuple[str, ...]:
        return tuple(PROBLEMS)

    @staticmethod
    def get(name: str, epsilon: float) -> ProblemSpec:
        factory = PROBLEMS.get(name)
        if factory is None:
            raise ProblemError(f"Unknown problem '{name}'", {"available": list(PROBLEMS)})
        return factory(epsilon)

    @staticmethod
    def residual(problem: ProblemSpec, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        """eps^2 Delta^2 u - Delta u + a u - g at the given points."""
        if problem.exact is None:
            raise ProblemError(f"Problem '{problem.name}' has no exact solution")
        e = problem.exact
        return (problem.epsilon ** 2 * e.bilaplacian(px, py) - e.laplacian(px, py)
                + problem.a(px, py) * e.u(px, py) - problem.g(px, py))


PROBLEMS: Dict[str, Callable[[float], ProblemSpec]] = {
    "example1": ProblemService.example1,
    "example2": ProblemService.example2,
    "patch-k2": lambda epsilon: ProblemService.patch_problem(2, epsilon),
    "patch-k3": lambda epsilon: ProblemService.patch_problem(3, epsilon),
}

PROBLEM_INFO: Dict[str, Dict[str, str]] = {
    "example1": {"a": "0", "boundary_mode": "from_exact",
                 "solution": "sine/exponential-layer product, layers on all four sides"},
    "example2": {"a": "x", "boundary_mode": "from_exact",
                 "solution": "250 [eps(e^{-x/eps} + e^{-y/eps}) - x^2 y][...] xy(1-x)(1-y)"},
    "patch-k2": {"a": "1", "boundary_mode": "from_exact", "solution": "x^2 + xy"},
    "patch-k3": {"a": "1", "boundary_mode": "from_exact", "solution": "x^3"},
}
