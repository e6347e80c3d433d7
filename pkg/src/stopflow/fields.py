"""Coefficient fields: constants, expressions in (t, x), or bilinear tables."""
from __future__ import annotations

import numbers
from typing import Any

import numpy as np

from .expr import Expression


class DomainError(ValueError):
    pass


class KinkError(ValueError):
    pass


def _fd_step(coord, rel: float = 1e-6):
    return np.maximum(rel, rel * np.abs(coord))


class CoefficientField:
    """A real function of (t, x).

    Build with :meth:`constant`, :meth:`expression`, :meth:`tabulated`, or
    :meth:`coerce` (accepts floats, expression strings, and config objects).
    Instances are immutable after construction.
    """

    __slots__ = ("kind", "value", "expr", "t_nodes", "x_nodes", "table", "_dtables")

    def __init__(self, kind: str, value: float = 0.0, expr: Expression | None = None,
                 t_nodes=None, x_nodes=None, table=None):
        self.kind = kind
        self.value = float(value)
        self.expr = expr
        self.t_nodes = t_nodes
        self.x_nodes = x_nodes
        self.table = table
        self._dtables: dict[str, np.ndarray] = {}

    # -- constructors ----------------------------------------------------
    @classmethod
    def constant(cls, value: float) -> "CoefficientField":
        value = float(value)
        if not np.isfinite(value):
            raise ValueError(f"constant field must be finite, got {value}")
        return cls("constant", value=value)

    @classmethod
    def expression(cls, source: str) -> "CoefficientField":
        ex = Expression(source)
        if not ex.depends_on("t") and not ex.depends_on("x"):
            # keep the source text so printing round-trips exactly
            return cls("expression", expr=ex)
        return cls("expression", expr=ex)

    @classmethod
    def tabulated(cls, t_nodes, x_nodes, values) -> "CoefficientField":
        t_nodes = np.atleast_1d(np.asarray(t_nodes, dtype=float))
        x_nodes = np.atleast_1d(np.asarray(x_nodes, dtype=float))
        values = np.asarray(values, dtype=float).reshape(len(t_nodes), len(x_nodes))
        for name, nodes in (("t", t_nodes), ("x", x_nodes)):
            if len(nodes) > 1 and np.any(np.diff(nodes) <= 0):
                raise ValueError(f"table {name}-nodes must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("table contains non-finite samples")
        for a in (t_nodes, x_nodes, values):
            a.setflags(write=False)
        return cls("tabulated", t_nodes=t_nodes, x_nodes=x_nodes, table=values)

    @classmethod
    def coerce(cls, obj: Any) -> "CoefficientField":
        if isinstance(obj, CoefficientField):
            return obj
        if isinstance(obj, numbers.Real) and not isinstance(obj, bool):
            return cls.constant(obj)
        if isinstance(obj, str):
            return cls.expression(obj)
        if isinstance(obj, dict):
            if "table" in obj:
                tab = obj["table"]
                return cls.tabulated(tab["t"], tab["x"], tab["values"])
            if "const" in obj:
                return cls.constant(obj["const"])
            if "expr" in obj:
                return cls.expression(obj["expr"])
        raise TypeError(f"cannot build a coefficient field from {obj!r}")

    def to_config(self):
        if self.kind == "constant":
            return self.value
        if self.kind == "expression":
            return self.expr.source
        return {"table": {"t": self.t_nodes.tolist(), "x": self.x_nodes.tolist(),
                          "values": self.table.tolist()}}

    def __repr__(self) -> str:
        if self.kind == "constant":
            return f"CoefficientField({self.value!r})"
        if self.kind == "expression":
            return f"CoefficientField({self.expr.source!r})"
        return f"CoefficientField(<table {self.table.shape}>)"

    # -- structure -------------------------------------------------------
    def depends_on(self, sym: str) -> bool:
        if self.kind == "constant":
            return False
        if self.kind == "expression":
            return self.expr.depends_on(sym)
        nodes = self.t_nodes if sym == "t" else self.x_nodes
        if len(nodes) < 2:
            return False
        axis = 0 if sym == "t" else 1
        return bool(np.any(np.diff(self.table, axis=axis) != 0))

    @property
    def time_invariant(self) -> bool:
        return not self.depends_on("t")

    # -- evaluation ------------------------------------------------------
    def __call__(self, t, x):
        if self.kind == "constant":
            return self.value + 0.0 * np.asarray(t, dtype=float) * np.asarray(x, dtype=float) \
                if (np.ndim(t) or np.ndim(x)) else self.value
        if self.kind == "expression":
            val = self.expr(t, x)
            if np.ndim(t) or np.ndim(x):
                return np.broadcast_to(val, np.broadcast(np.asarray(t), np.asarray(x)).shape).astype(float)
            return float(val)
        return self._interp(self.table, t, x)

    def _interp(self, table, t, x):
        t_arr = np.asarray(t, dtype=float)
        x_arr = np.asarray(x, dtype=float)
        tt, xx = np.broadcast_arrays(t_arr, x_arr)
        wt, it = _weights(self.t_nodes, tt)
        wx, ix = _weights(self.x_nodes, xx)
        nt, nx = table.shape
        it1 = np.minimum(it + 1, nt - 1)
        ix1 = np.minimum(ix + 1, nx - 1)
        v00 = table[it, ix]
        v01 = table[it, ix1]
        v10 = table[it1, ix]
        v11 = table[it1, ix1]
        # exact node reproduction when weights are 0
        out = (1 - wt) * ((1 - wx) * v00 + wx * v01) + wt * ((1 - wx) * v10 + wx * v11)
        return float(out) if out.ndim == 0 else out

    def _dtable(self, path: str) -> np.ndarray:
        if path not in self._dtables:
            tab = self.table
            for sym in path:
                axis = 0 if sym == "t" else 1
                nodes = self.t_nodes if sym == "t" else self.x_nodes
                if len(nodes) < 2:
                    tab = np.zeros_like(tab)
                else:
                    tab = np.gradient(tab, nodes, axis=axis, edge_order=2 if len(nodes) > 2 else 1)
            self._dtables[path] = tab
        return self._dtables[path]

    def partial(self, path: str, t, x):
        """Partial derivative along ``path`` ('t', 'x', or 'xx')."""
        if self.kind == "constant":
            return 0.0 * np.asarray(t, dtype=float) * np.asarray(x, dtype=float) \
                if (np.ndim(t) or np.ndim(x)) else 0.0
        if self.kind == "tabulated":
            return self._interp(self._dtable(path), t, x)
        if self.expr.smooth:
            val = self.expr.partial(path)(t, x)
            if np.ndim(t) or np.ndim(x):
                return np.broadcast_to(val, np.broadcast(np.asarray(t), np.asarray(x)).shape).astype(float)
            return float(val)
        return _central(self, path, t, x)

    def partials(self, t, x):
        return self.partial("t", t, x), self.partial("x", t, x), self.partial("xx", t, x)

    def source(self) -> str:
        """Expression text of the field (constants and expressions only)."""
        if self.kind == "constant":
            return repr(float(self.value))
        if self.kind == "expression":
            return self.expr.source
        raise ValueError("tabulated fields have no expression text")

    def derivative_source(self, path: str) -> str:
        """Expression text of a partial; needs a constant or smooth expression."""
        if self.kind == "constant":
            return "0.0"
        if self.kind == "expression" and self.expr.smooth:
            return self.expr.partial_source(path)
        raise KinkError(f"no symbolic {path}-derivative for {self!r}")


def _weights(nodes: np.ndarray, q: np.ndarray):
    if len(nodes) == 1:
        return np.zeros(q.shape), np.zeros(q.shape, dtype=int)
    qc = np.clip(q, nodes[0], nodes[-1])
    idx = np.clip(np.searchsorted(nodes, qc, side="right") - 1, 0, len(nodes) - 2)
    w = (qc - nodes[idx]) / (nodes[idx + 1] - nodes[idx])
    return w, idx


def _central(field: CoefficientField, path: str, t, x):
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if path == "t":
        h = _fd_step(t)
        return (field(t + h, x) - field(t - h, x)) / (2 * h)
    if path == "x":
        h = _fd_step(x)
        return (field(t, x + h) - field(t, x - h)) / (2 * h)
    if path == "xx":
        h = _fd_step(x, 1e-4)
        return (field(t, x + h) - 2 * field(t, x) + field(t, x - h)) / (h * h)
    raise ValueError(path)


def eval_field(field: CoefficientField, t, x, domain: tuple[float, float] | None = None,
               horizon: float | None = None):
    """Evaluate ``field`` after checking (t, x) lies in the domain closure."""
    if domain is not None:
        lo, hi = domain
        xa = np.asarray(x, dtype=float)
        if np.any(xa < lo) or np.any(xa > hi):
            raise DomainError(f"x={x} outside domain [{lo}, {hi}]")
    ta = np.asarray(t, dtype=float)
    if np.any(ta < 0) or (horizon is not None and np.any(ta > horizon)):
        raise DomainError(f"t={t} outside [0, {horizon}]")
    return field(t, x)


def field_partials(field: CoefficientField, t, x, kinks=()):
    """(d/dt, d/dx, d2/dx2) of ``field``; refuses to differentiate at a kink."""
    for k in kinks:
        if np.any(np.asarray(x, dtype=float) == k):
            raise KinkError(f"derivative requested at declared kink x={k}")
    return field.partials(t, x)
