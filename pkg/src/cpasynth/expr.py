"""Small arithmetic expression language for plant definitions in config files.

Grammar: numbers, names, ``+ - * / **`` (``^`` is accepted as power), unary
signs, parentheses and calls to a fixed function table. Expressions are
parsed with :mod:`ast` and only whitelisted node types are accepted.
"""
from __future__ import annotations

import ast
import math
from typing import Callable, Iterable

import numpy as np

from .system import sup_abs, sup_abs_cos, sup_abs_sin


class ExpressionError(ValueError):
    pass


FUNCTIONS = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "sqrt": math.sqrt,
    "abs": abs,
    "max": max,
    "min": min,
    # interval helpers for bound oracles: largest |.| over [lo, hi]
    "supabs": sup_abs,
    "supabs_sin": sup_abs_sin,
    "supabs_cos": sup_abs_cos,
}
CONSTANTS = {"pi": math.pi, "e": math.e}

_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a ** b,
}
_UNOPS = {ast.UAdd: lambda a: a, ast.USub: lambda a: -a}


def _build(node, names: dict) -> Callable:
    if isinstance(node, ast.Expression):
        return _build(node.body, names)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        value = float(node.value)
        return lambda env: value
    if isinstance(node, ast.Name):
        if node.id in names:
            k = names[node.id]
            return lambda env: env[k]
        if node.id in CONSTANTS:
            value = CONSTANTS[node.id]
            return lambda env: value
        raise ExpressionError(f"unknown name {node.id!r}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        left, right = _build(node.left, names), _build(node.right, names)
        return lambda env: op(left(env), right(env))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        op = _UNOPS[type(node.op)]
        inner = _build(node.operand, names)
        return lambda env: op(inner(env))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        fn = FUNCTIONS.get(node.func.id)
        if fn is None:
            raise ExpressionError(f"unknown function {node.func.id!r}")
        args = [_build(a, names) for a in node.args]
        return lambda env: fn(*(a(env) for a in args))
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def compile_expr(text, variables: Iterable[str]) -> Callable:
    """Compile ``text`` into ``f(values) -> float`` with ``values`` ordered as ``variables``."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        value = float(text)
        return lambda values: value
    if not isinstance(text, str):
        raise ExpressionError(f"expression must be a string or number, got {type(text).__name__}")
    names = {v: k for k, v in enumerate(variables)}
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from exc
    fn = _build(tree, names)

    def evaluate(values):
        try:
            return float(fn(values))
        except (ArithmeticError, ValueError) as exc:
            raise ExpressionError(f"evaluating {text!r}: {exc}") from exc

    return evaluate


def state_names(n: int) -> list:
    """``x1 .. xn`` (one-based, matching the usual component notation)."""
    return [f"x{k + 1}" for k in range(n)]


def box_names(n: int) -> list:
    return [f"lo{k + 1}" for k in range(n)] + [f"hi{k + 1}" for k in range(n)]


def compile_vector(texts, n: int) -> Callable:
    fns = [compile_expr(t, state_names(n)) for t in texts]
    return lambda x: np.array([f(x) for f in fns])


def compile_matrix(rows, n: int) -> Callable:
    fns = [[compile_expr(t, state_names(n)) for t in row] for row in rows]
    return lambda x: np.array([[f(x) for f in row] for row in fns])


def compile_box_oracle(text, n: int) -> Callable:
    fn = compile_expr(text, box_names(n))
    return lambda lo, hi: fn(list(lo) + list(hi))
