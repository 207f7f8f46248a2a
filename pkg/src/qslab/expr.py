"""Smooth functions on R^3 (and time) given by small symbolic expressions.

Fields on the sphere are restrictions of these ambient functions; the
ambient gradient projected to the tangent plane is the spherical gradient.
"""
from __future__ import annotations

import re

import numpy as np
import sympy as sp

X, Y, Z, T = sp.symbols("x y z t", real=True)
S = sp.Symbol("s", real=True)

_ALLOWED_NAMES = {
    "x": X, "y": Y, "z": Z, "t": T,
    "pi": sp.pi, "E": sp.E,
    "sin": sp.sin, "cos": sp.cos, "tan": sp.tan, "exp": sp.exp, "log": sp.log,
    "sqrt": sp.sqrt, "tanh": sp.tanh, "atan": sp.atan, "abs": sp.Abs,
}
_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+)|([A-Za-z_]\w*)|(\*\*|[-+*/^(),]))")


def _check_tokens(text: str) -> None:
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ValueError(f"unexpected character in expression at {pos}: {text[pos:pos + 8]!r}")
        name = m.group(2)
        if name is not None and name not in _ALLOWED_NAMES:
            raise ValueError(f"unknown name {name!r} in expression")
        pos = m.end()


def parse(text: str) -> sp.Expr:
    """Parse the expression language: numbers, x y z t, + - * / ^ and a few functions."""
    _check_tokens(text)
    expr = sp.sympify(text.replace("^", "**"), locals=dict(_ALLOWED_NAMES))
    extra = expr.free_symbols - {X, Y, Z, T}
    if extra:
        raise ValueError(f"free symbols not allowed: {sorted(map(str, extra))}")
    return expr


class Expression:
    """A smooth function f(x, y, z, t) with exact ambient gradient."""

    def __init__(self, expr: sp.Expr | str | float):
        if isinstance(expr, str):
            expr = parse(expr)
        self.expr = sp.sympify(expr)
        args = (X, Y, Z, T)
        self._f = sp.lambdify(args, self.expr, "numpy")
        self._g = [sp.lambdify(args, sp.diff(self.expr, s), "numpy") for s in (X, Y, Z)]
        self._ft = sp.lambdify(args, sp.diff(self.expr, T), "numpy")

    def __repr__(self) -> str:
        return f"Expression({self.expr})"

    @property
    def time_dependent(self) -> bool:
        return T in self.expr.free_symbols

    @staticmethod
    def _bcast(val, n: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(val, dtype=float), (n,)).copy()

    def __call__(self, points: np.ndarray, t: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return self._bcast(self._f(p[:, 0], p[:, 1], p[:, 2], t), len(p))

    def grad(self, points: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Ambient gradient, shape (N, 3)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.stack([self._bcast(g(p[:, 0], p[:, 1], p[:, 2], t), len(p)) for g in self._g], axis=1)

    def sphere_grad(self, points: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Gradient along the unit sphere at unit-norm points."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        g = self.grad(p, t)
        return g - np.sum(g * p, axis=1, keepdims=True) * p

    def time_derivative(self, points: np.ndarray, t: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return self._bcast(self._ft(p[:, 0], p[:, 1], p[:, 2], t), len(p))

    # arithmetic keeps things symbolic so gradients stay exact
    def _other(self, other) -> sp.Expr:
        return other.expr if isinstance(other, Expression) else sp.sympify(other)

    def __add__(self, other) -> Expression:
        return Expression(self.expr + self._other(other))

    __radd__ = __add__

    def __sub__(self, other) -> Expression:
        return Expression(self.expr - self._other(other))

    def __rsub__(self, other) -> Expression:
        return Expression(self._other(other) - self.expr)

    def __mul__(self, other) -> Expression:
        return Expression(self.expr * self._other(other))

    __rmul__ = __mul__

    def __neg__(self) -> Expression:
        return Expression(-self.expr)

    def compose(self, outer: sp.Expr | str) -> Expression:
        """Return g∘f where ``outer`` is an expression in the single variable ``s``."""
        g = sp.sympify(outer, locals={"s": S}) if isinstance(outer, str) else outer
        return Expression(g.subs(S, self.expr))

    def at_time(self, t: float) -> Expression:
        return Expression(self.expr.subs(T, t))


def random_polynomial(rng: np.random.Generator, degree: int = 3, scale: float = 1.0) -> Expression:
    """Random polynomial in x, y, z with N(0, scale^2) coefficients (constant term dropped)."""
    terms = []
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            for k in range(degree + 1 - i - j):
                if i + j + k == 0:
                    continue
                terms.append(X**i * Y**j * Z**k)
    coeffs = rng.normal(0.0, scale, size=len(terms))
    expr = sum(sp.Float(round(float(c), 12)) * m for c, m in zip(coeffs, terms))
    return Expression(expr)


def fibonacci_sphere(n: int) -> np.ndarray:
    """n nearly uniform unit vectors on a golden-angle spiral."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    lon = np.pi * (1.0 + 5**0.5) * k
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(lon), s * np.sin(lon), z], axis=1)


def random_hamiltonian(rng: np.random.Generator, degree: int = 3, max_grad: float = 1.0) -> Expression:
    """Random polynomial rescaled so its largest tangent gradient (sampled) is ``max_grad``.

    With max_grad = 1 the Hamiltonian speed is at most that of the height function z.
    """
    p = random_polynomial(rng, degree)
    g = float(np.max(np.linalg.norm(p.sphere_grad(fibonacci_sphere(4000)), axis=1)))
    return p * sp.Float(round(max_grad / g, 12))


def random_profile(rng: np.random.Generator, degree: int = 3) -> sp.Expr:
    """Random smooth function of one variable ``s`` (polynomial plus a sine)."""
    c = rng.normal(size=degree + 2)
    poly = sum(sp.Float(round(float(c[i]), 12)) * S**(i + 1) for i in range(degree))
    return poly + sp.Float(round(float(c[-2]), 12)) * sp.sin(sp.Float(round(1.0 + abs(float(c[-1])), 12)) * S)
