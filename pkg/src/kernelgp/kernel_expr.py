"""Kernel expression trees over symmetric terminals.

A :class:`KernelExpr` is stored as a tuple of :class:`Primitive` in prefix
order, so subtrees are contiguous slices. Evaluation is vectorized: a
:class:`PairBatch` holds the left and right operands of many (x, x') pairs
and caches terminal values, letting a whole population share them.

Every node output is saturated to ``[-SATURATION, SATURATION]`` so that
evaluation stays finite for any tree and any finite input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DIV_GUARD = 0.001
EXP_CLAMP = 80.0
SATURATION = 1e100


class KernelExprError(ValueError):
    """Malformed kernel expression, or inputs of the wrong shape."""


class ParseError(KernelExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


FUNCTION_ARITY = {
    "ADD2": 2, "ADD3": 3, "ADD4": 4, "SUB": 2,
    "MUL2": 2, "MUL3": 3, "MUL4": 4, "DIV": 2,
    "MAX": 2, "MIN": 2, "EXP": 1, "POW2": 1,
}
INDEXED_TERMINALS = ("A", "M", "S", "I")
PLAIN_TERMINALS = ("DOT", "EUC")
TERMINAL_KINDS = INDEXED_TERMINALS + ("C",) + PLAIN_TERMINALS + ("E",)


@dataclass(frozen=True)
class Primitive:
    """One node label. Indices are 1-based, as written in kernel text."""

    kind: str
    i: int = 0
    j: int = 0
    value: float = 0.0

    @property
    def arity(self) -> int:
        return FUNCTION_ARITY.get(self.kind, 0)

    @property
    def is_terminal(self) -> bool:
        return self.kind not in FUNCTION_ARITY

    def max_index(self) -> int:
        return max(self.i, self.j)

    def __str__(self) -> str:
        if self.kind in INDEXED_TERMINALS:
            return f"{self.kind} {self.i}"
        if self.kind == "C":
            return f"C {self.i} {self.j}"
        if self.kind == "E":
            return f"E {self.value!r}"
        return self.kind


def function(kind: str) -> Primitive:
    if kind not in FUNCTION_ARITY:
        raise KernelExprError(f"unknown function {kind!r}")
    return Primitive(kind)


def terminal(kind: str, *args) -> Primitive:
    """Build a terminal, checking its index/constant constraints."""
    if kind in PLAIN_TERMINALS:
        if args:
            raise KernelExprError(f"{kind} takes no arguments")
        return Primitive(kind)
    if kind in INDEXED_TERMINALS:
        (i,) = args
        if i < 1:
            raise KernelExprError(f"{kind} index must be >= 1, got {i}")
        return Primitive(kind, i=int(i))
    if kind == "C":
        i, j = args
        if not 1 <= j <= i:
            raise KernelExprError(f"C requires 1 <= j <= i, got ({i}, {j})")
        return Primitive(kind, i=int(i), j=int(j))
    if kind == "E":
        (value,) = args
        value = float(value)
        if not -1.0 <= value <= 1.0:
            raise KernelExprError(f"E constant must lie in [-1, 1], got {value}")
        return Primitive(kind, value=value)
    raise KernelExprError(f"unknown terminal {kind!r}")


DOT = Primitive("DOT")
EUC = Primitive("EUC")


class KernelExpr:
    """Immutable kernel tree in prefix order."""

    __slots__ = ("nodes", "_depth", "_hash")

    def __init__(self, nodes: Iterable[Primitive]):
        nodes = tuple(nodes)
        if not nodes:
            raise KernelExprError("empty expression")
        need = 1
        for pos, node in enumerate(nodes):
            if need == 0:
                raise KernelExprError(f"trailing nodes after position {pos}")
            need += node.arity - 1
        if need != 0:
            raise KernelExprError("expression is missing children")
        self.nodes = nodes
        self._depth = None
        self._hash = None

    @classmethod
    def build(cls, root: Primitive, *children: "KernelExpr") -> "KernelExpr":
        if len(children) != root.arity:
            raise KernelExprError(
                f"{root.kind} needs {root.arity} children, got {len(children)}")
        nodes = [root]
        for child in children:
            nodes.extend(child.nodes)
        return cls(nodes)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def depth(self) -> int:
        if self._depth is None:
            self._depth = max(node_depths(self.nodes)) + 1
        return self._depth

    def max_index(self) -> int:
        return max(node.max_index() for node in self.nodes)

    def subtree_end(self, start: int) -> int:
        """Exclusive end of the subtree rooted at ``start``."""
        need = 1
        pos = start
        while need:
            need += self.nodes[pos].arity - 1
            pos += 1
        return pos

    def subtree(self, start: int) -> "KernelExpr":
        return KernelExpr(self.nodes[start:self.subtree_end(start)])

    def replace(self, start: int, branch: "KernelExpr") -> "KernelExpr":
        end = self.subtree_end(start)
        return KernelExpr(self.nodes[:start] + branch.nodes + self.nodes[end:])

    def __eq__(self, other) -> bool:
        return isinstance(other, KernelExpr) and self.nodes == other.nodes

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self.nodes)
        return self._hash

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return f"KernelExpr({format_expr(self)!r})"

    def __str__(self) -> str:
        return format_expr(self)


def node_depths(nodes: Sequence[Primitive]) -> list[int]:
    """Edge distance from the root for every node of a prefix sequence."""
    depths = []
    pending: list[int] = []  # remaining child slots per open ancestor
    for node in nodes:
        depths.append(len(pending))
        if pending:
            pending[-1] -= 1
        if node.arity:
            pending.append(node.arity)
        while pending and pending[-1] == 0:
            pending.pop()
    return depths


def size(expr: KernelExpr) -> int:
    return expr.size


def depth(expr: KernelExpr) -> int:
    return expr.depth


# ---------------------------------------------------------------------------
# Text format

def format_expr(expr: KernelExpr) -> str:
    """Prefix s-expression text, e.g. ``(ADD2 (DOT) (E 0.25))``."""
    parts: list[str] = []
    stack: list[int] = []
    for node in expr.nodes:
        if stack:
            parts.append(" ")
        parts.append(f"({node}")
        if node.arity:
            stack.append(node.arity)
            continue
        parts.append(")")
        while stack:
            stack[-1] -= 1
            if stack[-1]:
                break
            stack.pop()
            parts.append(")")
    return "".join(parts)


_TOKEN = re.compile(r"\s*(?:(\()|(\))|([^\s()]+))")


def _tokens(text: str):
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            if text[pos:].strip():
                raise ParseError("unexpected character", pos)
            return
        if match.group(1):
            yield "(", match.start(1)
        elif match.group(2):
            yield ")", match.start(2)
        else:
            yield match.group(3), match.start(3)
        pos = match.end()


def parse(text: str, dim: int | None = None) -> KernelExpr:
    """Parse :func:`format_expr` output.

    When ``dim`` is given, terminal indices above it are rejected.
    """
    tokens = list(_tokens(text))
    nodes: list[Primitive] = []
    pos = 0

    def expect(tok):
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError(f"expected {tok!r}, reached end of input", len(text))
        got, at = tokens[pos]
        if got != tok:
            raise ParseError(f"expected {tok!r}, got {got!r}", at)
        pos += 1

    def node():
        nonlocal pos
        expect("(")
        if pos >= len(tokens):
            raise ParseError("missing primitive name", len(text))
        name, at = tokens[pos]
        pos += 1
        if name in FUNCTION_ARITY:
            nodes.append(Primitive(name))
            count = 0
            while pos < len(tokens) and tokens[pos][0] == "(":
                node()
                count += 1
            if count != FUNCTION_ARITY[name]:
                raise ParseError(
                    f"{name} takes {FUNCTION_ARITY[name]} arguments, got {count}", at)
            expect(")")
            return
        args = []
        while pos < len(tokens) and tokens[pos][0] not in "()":
            args.append(tokens[pos])
            pos += 1
        try:
            if name == "E":
                values = [float(a) for a, _ in args]
            else:
                values = [int(a) for a, _ in args]
            prim = terminal(name, *values)
        except (ValueError, TypeError) as exc:
            raise ParseError(f"bad terminal {name!r}: {exc}", at) from None
        if dim is not None and prim.max_index() > dim:
            raise ParseError(f"index out of range [1, {dim}] in {name}", at)
        nodes.append(prim)
        expect(")")

    node()
    if pos != len(tokens):
        raise ParseError("trailing input", tokens[pos][1])
    return KernelExpr(nodes)


# ---------------------------------------------------------------------------
# Evaluation

def _sat(values: np.ndarray) -> np.ndarray:
    # arguments are already within +-SATURATION, so no NaN can appear here
    np.minimum(values, SATURATION, out=values)
    return np.maximum(values, -SATURATION, out=values)


def _sat_terminal(values: np.ndarray) -> np.ndarray:
    # huge raw features can overflow (inf - inf), hence the NaN guard
    np.nan_to_num(values, copy=False, nan=0.0, posinf=SATURATION, neginf=-SATURATION)
    return _sat(values)


def _mul(args):
    out = args[0] * args[1]
    for arg in args[2:]:
        _sat(out)
        out *= arg
    return out


def _div(num, den):
    safe = np.abs(den) >= DIV_GUARD
    out = np.ones_like(num)
    np.divide(num, den, out=out, where=safe)
    return out


def _apply(kind: str, args):
    if kind in ("ADD2", "ADD3", "ADD4"):
        out = args[0] + args[1]
        for arg in args[2:]:
            out += arg
        return out
    if kind == "SUB":
        return args[0] - args[1]
    if kind in ("MUL2", "MUL3", "MUL4"):
        return _mul(args)
    if kind == "DIV":
        return _div(args[0], args[1])
    if kind == "MAX":
        return np.maximum(args[0], args[1])
    if kind == "MIN":
        return np.minimum(args[0], args[1])
    if kind == "EXP":
        return np.exp(np.clip(args[0], -EXP_CLAMP, EXP_CLAMP))
    if kind == "POW2":
        return args[0] * args[0]
    raise KernelExprError(f"unknown function {kind!r}")


class PairBatch:
    """Left/right operands for ``n`` kernel evaluations.

    Terminal arrays are computed once per batch and reused by every tree
    evaluated on it. ``evaluations`` counts evaluated pairs (``n`` per tree).
    """

    def __init__(self, left: np.ndarray, right: np.ndarray):
        left = np.asarray(left, dtype=float)
        right = np.asarray(right, dtype=float)
        if left.ndim != 2 or left.shape != right.shape:
            raise KernelExprError(
                f"pair operands must be matching 2-d arrays, got {left.shape} and {right.shape}")
        self.left = left
        self.right = right
        self.n, self.dim = left.shape
        self.evaluations = 0
        self._cache: dict[Primitive, np.ndarray] = {}

    @classmethod
    def cross(cls, rows: np.ndarray, cols: np.ndarray) -> "PairBatch":
        """All pairs (rows[a], cols[b]), row-major in ``a``."""
        rows = np.asarray(rows, dtype=float)
        cols = np.asarray(cols, dtype=float)
        left = np.repeat(rows, len(cols), axis=0)
        right = np.tile(cols, (len(rows), 1))
        return cls(left, right)

    @classmethod
    def diagonal(cls, points: np.ndarray) -> "PairBatch":
        points = np.asarray(points, dtype=float)
        return cls(points, points)

    def terminal(self, prim: Primitive) -> np.ndarray:
        cached = self._cache.get(prim)
        if cached is not None:
            return cached
        kind = prim.kind
        if kind == "E":
            return np.full(self.n, prim.value)
        if prim.max_index() > self.dim:
            raise KernelExprError(
                f"terminal {prim} indexes feature {prim.max_index()} but inputs have d={self.dim}")
        x, y = self.left, self.right
        with np.errstate(over="ignore", invalid="ignore"):
            if kind == "A":
                out = x[:, prim.i - 1] + y[:, prim.i - 1]
            elif kind == "M":
                out = x[:, prim.i - 1] * y[:, prim.i - 1]
            elif kind == "S":
                out = np.maximum(x[:, prim.i - 1], y[:, prim.i - 1])
            elif kind == "I":
                out = np.minimum(x[:, prim.i - 1], y[:, prim.i - 1])
            elif kind == "C":
                i, j = prim.i - 1, prim.j - 1
                out = x[:, i] * y[:, j] + x[:, j] * y[:, i]
            elif kind == "DOT":
                # fixed summation order keeps results independent of batch layout
                out = x[:, 0] * y[:, 0]
                for f in range(1, self.dim):
                    out = out + x[:, f] * y[:, f]
            elif kind == "EUC":
                diff = x[:, 0] - y[:, 0]
                out = diff * diff
                for f in range(1, self.dim):
                    diff = x[:, f] - y[:, f]
                    out = out + diff * diff
                out = np.sqrt(out)
            else:
                raise KernelExprError(f"unknown terminal {kind!r}")
            out = _sat_terminal(np.array(out, dtype=float))
        out.setflags(write=False)
        self._cache[prim] = out
        return out

    def evaluate(self, expr: KernelExpr) -> np.ndarray:
        """Kernel values for every pair in the batch."""
        self.evaluations += self.n
        stack: list[np.ndarray] = []
        for node in reversed(expr.nodes):
            arity = node.arity
            if not arity:
                stack.append(self.terminal(node))
                continue
            args = stack[-1:-arity - 1:-1]
            del stack[-arity:]
            stack.append(_sat(_apply(node.kind, args)))
        return stack[0]


def evaluate(expr: KernelExpr, x, x2) -> float:
    """K(x, x2) for a single pair of feature vectors."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.ndim != 1 or x.shape != x2.shape:
        raise KernelExprError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    return float(PairBatch(x[None, :], x2[None, :]).evaluate(expr)[0])
