"""Tiny arithmetic expression language over the symbols ``t`` and ``x``.

Grammar: numeric literals, ``t``, ``x``, the binary operators ``+ - * / ^``
(``**`` is accepted as a synonym of ``^``), unary minus, parentheses, and the
functions ``exp``, ``log``, ``sqrt``, ``min``, ``max``.  Parsing is delegated to
the stdlib :mod:`ast` module after ``^`` is rewritten to ``**``; the resulting
Python tree is then whitelisted node by node and converted into :class:`Node`
objects that evaluate on numpy arrays and differentiate symbolically.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable

import numpy as np

SYMBOLS = ("t", "x")
SMOOTH_FUNCS = ("exp", "log", "sqrt")
KINK_FUNCS = ("min", "max")


class ExpressionSyntaxError(ValueError):
    """Raised for malformed expressions; carries the 1-based column."""

    def __init__(self, message: str, source: str, column: int):
        self.source = source
        self.column = column
        pointer = " " * max(column - 1, 0) + "^"
        super().__init__(f"{message} at column {column}\n  {source}\n  {pointer}")


class NonFiniteError(ArithmeticError):
    def __init__(self, subexpr: str, t, x):
        self.subexpr = subexpr
        super().__init__(f"non-finite value in sub-expression '{subexpr}' (t={t}, x={x})")


@dataclass(frozen=True)
class Node:
    op: str  # 'num', 'sym', 'neg', '+', '-', '*', '/', '^', or a function name
    args: tuple = ()
    value: float = 0.0
    name: str = ""

    # -- rendering -------------------------------------------------------
    def __str__(self) -> str:
        if self.op == "num":
            return repr(self.value) if self.value >= 0 else f"({self.value!r})"
        if self.op == "sym":
            return self.name
        if self.op == "neg":
            return f"(-{self.args[0]})"
        if self.op in "+-*/^":
            return f"({self.args[0]} {self.op} {self.args[1]})"
        return f"{self.op}({', '.join(str(a) for a in self.args)})"

    # -- structure -------------------------------------------------------
    def depends_on(self, sym: str) -> bool:
        if self.op == "sym":
            return self.name == sym
        return any(a.depends_on(sym) for a in self.args)

    def is_smooth(self) -> bool:
        if self.op in KINK_FUNCS:
            return False
        return all(a.is_smooth() for a in self.args)

    # -- evaluation ------------------------------------------------------
    def evaluate(self, t, x):
        op = self.op
        if op == "num":
            return self.value
        if op == "sym":
            return t if self.name == "t" else x
        vals = [a.evaluate(t, x) for a in self.args]
        with np.errstate(all="ignore"):
            if op == "neg":
                return -vals[0]
            if op == "+":
                return vals[0] + vals[1]
            if op == "-":
                return vals[0] - vals[1]
            if op == "*":
                return vals[0] * vals[1]
            if op == "/":
                return np.divide(vals[0], vals[1])
            if op == "^":
                return np.power(vals[0], vals[1])
            if op == "exp":
                return np.exp(vals[0])
            if op == "log":
                return np.log(vals[0])
            if op == "sqrt":
                return np.sqrt(vals[0])
            if op == "min":
                return np.minimum(vals[0], vals[1])
            if op == "max":
                return np.maximum(vals[0], vals[1])
        raise AssertionError(op)

    def first_nonfinite(self, t, x) -> "Node | None":
        """Innermost sub-expression producing a non-finite value, if any."""
        for a in self.args:
            bad = a.first_nonfinite(t, x)
            if bad is not None:
                return bad
        if not np.all(np.isfinite(self.evaluate(t, x))):
            return self
        return None


def num(v: float) -> Node:
    return Node("num", value=float(v))


ZERO, ONE, TWO = num(0.0), num(1.0), num(2.0)


def _is_num(n: Node, v: float | None = None) -> bool:
    return n.op == "num" and (v is None or n.value == v)


def add(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return num(a.value + b.value)
    return Node("+", (a, b))


def sub(a: Node, b: Node) -> Node:
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return num(a.value - b.value)
    if _is_num(a, 0.0):
        return neg(b)
    return Node("-", (a, b))


def mul(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b):
        return num(a.value * b.value)
    return Node("*", (a, b))


def div(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return ZERO
    if _is_num(b, 1.0):
        return a
    return Node("/", (a, b))


def neg(a: Node) -> Node:
    if _is_num(a):
        return num(-a.value)
    return Node("neg", (a,))


def power(a: Node, b: Node) -> Node:
    if _is_num(b, 1.0):
        return a
    if _is_num(b, 0.0):
        return ONE
    return Node("^", (a, b))


def func(name: str, *args: Node) -> Node:
    return Node(name, tuple(args))


def diff(n: Node, sym: str) -> Node:
    """Symbolic derivative.  ``min``/``max`` are rejected (not differentiable)."""
    op = n.op
    if op == "num":
        return ZERO
    if op == "sym":
        return ONE if n.name == sym else ZERO
    if not n.depends_on(sym):
        return ZERO
    if op == "neg":
        return neg(diff(n.args[0], sym))
    if op in KINK_FUNCS:
        raise ValueError(f"'{op}' has no symbolic derivative")
    a = n.args[0]
    da = diff(a, sym)
    if op == "exp":
        return mul(n, da)
    if op == "log":
        return div(da, a)
    if op == "sqrt":
        return div(da, mul(TWO, n))
    b = n.args[1]
    db = diff(b, sym)
    if op == "+":
        return add(da, db)
    if op == "-":
        return sub(da, db)
    if op == "*":
        return add(mul(da, b), mul(a, db))
    if op == "/":
        return div(sub(mul(da, b), mul(a, db)), mul(b, b))
    if op == "^":
        if not b.depends_on(sym):
            return mul(mul(b, power(a, sub(b, ONE))), da)
        # d(a^b) = a^b * (b' log a + b a'/a)
        return mul(n, add(mul(db, func("log", a)), div(mul(b, da), a)))
    raise AssertionError(op)


# -- parsing -----------------------------------------------------------------

def _rewrite_caret(source: str) -> tuple[str, list[int]]:
    """Replace ``^`` with ``**``; return text and a map to original columns."""
    out, colmap = [], []
    for i, ch in enumerate(source):
        if ch == "^":
            out.append("**")
            colmap.extend([i, i])
        else:
            out.append(ch)
            colmap.append(i)
    colmap.append(len(source))
    return "".join(out), colmap


_BINOPS = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/", ast.Pow: "^"}
_FUNC_ARITY = {"exp": 1, "log": 1, "sqrt": 1, "min": 2, "max": 2}


def parse(source: str) -> Node:
    if not isinstance(source, str) or not source.strip():
        raise ExpressionSyntaxError("empty expression", str(source), 1)
    text, colmap = _rewrite_caret(source)

    def col(node_or_offset) -> int:
        off = getattr(node_or_offset, "col_offset", node_or_offset)
        off = min(max(off, 0), len(colmap) - 1)
        return colmap[off] + 1

    lead = len(text) - len(text.lstrip())
    colmap = colmap[lead:]
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionSyntaxError(exc.msg, source, col((exc.offset or 1) - 1)) from None

    def conv(node) -> Node:
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionSyntaxError("only numeric literals are allowed", source, col(node))
            return num(node.value)
        if isinstance(node, ast.Name):
            if node.id not in SYMBOLS:
                raise ExpressionSyntaxError(f"unknown symbol '{node.id}'", source, col(node))
            return Node("sym", name=node.id)
        if isinstance(node, ast.UnaryOp):
            if isinstance(node.op, ast.USub):
                inner = conv(node.operand)
                return num(-inner.value) if inner.op == "num" else Node("neg", (inner,))
            if isinstance(node.op, ast.UAdd):
                return conv(node.operand)
            raise ExpressionSyntaxError("unsupported unary operator", source, col(node))
        if isinstance(node, ast.BinOp):
            op = _BINOPS.get(type(node.op))
            if op is None:
                raise ExpressionSyntaxError("unsupported operator", source, col(node))
            return Node(op, (conv(node.left), conv(node.right)))
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNC_ARITY:
                raise ExpressionSyntaxError("unknown function", source, col(node))
            if node.keywords or len(node.args) != _FUNC_ARITY[node.func.id]:
                raise ExpressionSyntaxError(
                    f"{node.func.id} takes {_FUNC_ARITY[node.func.id]} argument(s)", source, col(node))
            return Node(node.func.id, tuple(conv(a) for a in node.args))
        raise ExpressionSyntaxError("unsupported syntax", source, col(node))

    return conv(tree.body)


class Expression:
    """Parsed expression with cached symbolic partials."""

    def __init__(self, source: str):
        self.source = source
        self.tree = parse(source)
        self._partials: dict[str, Node] = {}

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"

    def __call__(self, t, x):
        val = self.tree.evaluate(t, x)
        if not np.all(np.isfinite(val)):
            bad = self.tree.first_nonfinite(t, x)
            raise NonFiniteError(str(bad if bad is not None else self.tree), t, x)
        return val

    @property
    def smooth(self) -> bool:
        return self.tree.is_smooth()

    def depends_on(self, sym: str) -> bool:
        return self.tree.depends_on(sym)

    def partial_source(self, path: str) -> str:
        """Source text of the symbolic partial along ``path``."""
        self.partial(path)
        return str(self._partials[path])

    def partial(self, path: str) -> Callable:
        """Symbolic partial along ``path`` (e.g. ``'t'``, ``'x'``, ``'xx'``)."""
        if path not in self._partials:
            node = self.tree
            for sym in path:
                node = diff(node, sym)
            self._partials[path] = node
        node = self._partials[path]
        return node.evaluate
