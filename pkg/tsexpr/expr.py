"""Expression grammar, token paths and expression trees.

Expressions are built as pre-order token paths. Every symbol has an arity and the
path keeps a stack of unfilled argument positions: appending a symbol fills the top
position and opens `arity` new ones. A path without open positions is complete and
can be turned into an :class:`ExpressionTree`, which can be evaluated and rendered.

Constant placeholders (``C``) become tunable coefficients, numbered left to right.
The exponent of ``pow`` is restricted to a constant placeholder, so the grammar only
produces ``pow(x, C)``.

Evaluation never raises on domain violations: log of non-positive values, division by
zero, overflow and non-finite powers produce ``nan``, which is propagated to the result.
"""
import enum
import logging
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Tuple, Union

import attr
import numpy as np

from .exceptions import (
    ArityError,
    GrammarError,
    IncompleteExpressionError,
    LibraryError,
)
from .utils import format_number

_LOGGER = logging.getLogger(__name__)

VARIABLE_ID = "t"
CONSTANT_ID = "C"


class SymbolKind(enum.Enum):
    Binary = "binary-op"
    Unary = "unary-op"
    Variable = "variable"
    Constant = "constant-placeholder"
    Augmented = "augmented"


_KIND_ARITY = {
    SymbolKind.Binary: 2,
    SymbolKind.Unary: 1,
    SymbolKind.Variable: 0,
    SymbolKind.Constant: 0,
    SymbolKind.Augmented: 0,
}


@attr.s(frozen=True, slots=True)
class Symbol:
    """A grammar token.

    `const_operands` lists operand positions which only accept a constant
    placeholder. Augmented symbols carry the complete base-symbol `pattern` they
    stand for.
    """

    id = attr.ib(type=str)
    arity = attr.ib(type=int)
    kind = attr.ib(type=SymbolKind)
    const_operands = attr.ib(type=tuple, default=(), converter=tuple)
    pattern = attr.ib(default=None, repr=False)  # type: Optional[ExpressionPath]

    def __attrs_post_init__(self):
        if not self.id or any(c.isspace() for c in self.id):
            raise LibraryError("Invalid symbol id %r" % self.id)
        if _KIND_ARITY[self.kind] != self.arity:
            raise LibraryError(
                "Symbol %s of kind %s cannot have arity %s"
                % (self.id, self.kind.value, self.arity)
            )
        if any(not 0 <= pos < self.arity for pos in self.const_operands):
            raise LibraryError("Invalid constant operands for %s" % self.id)
        if self.kind is SymbolKind.Augmented:
            if self.pattern is None or not self.pattern.is_complete:
                raise LibraryError(
                    "Augmented symbol %s needs a complete pattern" % self.id
                )
        elif self.pattern is not None:
            raise LibraryError("Only augmented symbols carry a pattern")

    @property
    def size(self) -> int:
        """Number of tree nodes this symbol contributes."""
        if self.pattern is not None:
            return self.pattern.length
        return 1

    @property
    def is_terminal(self) -> bool:
        return self.arity == 0


ADD = Symbol("add", 2, SymbolKind.Binary)
SUB = Symbol("sub", 2, SymbolKind.Binary)
MUL = Symbol("mul", 2, SymbolKind.Binary)
DIV = Symbol("div", 2, SymbolKind.Binary)
POW = Symbol("pow", 2, SymbolKind.Binary, const_operands=(1,))
SIN = Symbol("sin", 1, SymbolKind.Unary)
COS = Symbol("cos", 1, SymbolKind.Unary)
LOG = Symbol("log", 1, SymbolKind.Unary)
EXP = Symbol("exp", 1, SymbolKind.Unary)
SQRT = Symbol("sqrt", 1, SymbolKind.Unary)
VAR = Symbol(VARIABLE_ID, 0, SymbolKind.Variable)
CONST = Symbol(CONSTANT_ID, 0, SymbolKind.Constant)

BASE_SYMBOLS = (ADD, SUB, MUL, DIV, SIN, COS, LOG, EXP, SQRT, POW, VAR, CONST)
BASE_SYMBOL_MAP = {sym.id: sym for sym in BASE_SYMBOLS}


def _power(base, exponent):
    # nan ** 0 is 1 in numpy, keep the sentinel
    return np.where(np.isnan(base), np.nan, np.power(base, exponent))


FUNCTIONS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "pow": _power,
    "sin": np.sin,
    "cos": np.cos,
    "log": np.log,
    "exp": np.exp,
    "sqrt": np.sqrt,
}  # type: Dict[str, Callable]

INFIX_OPERATORS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


@attr.s(frozen=True, slots=True)
class ExpressionPath:
    """Pre-order token path.

    `pending` is the stack of open argument positions with the next position to
    fill last; ``True`` marks a position restricted to constants. `length` is the
    number of tree nodes after inlining augmented symbols.
    """

    tokens = attr.ib(type=tuple, default=(), converter=tuple)
    pending = attr.ib(type=tuple, default=(False,), converter=tuple, repr=False)
    length = attr.ib(type=int, default=0)

    @property
    def open_slots(self) -> int:
        return len(self.pending)

    @property
    def is_complete(self) -> bool:
        return not self.pending and bool(self.tokens)

    @property
    def next_slot_constant(self) -> bool:
        """True if the next token must be a constant placeholder."""
        return bool(self.pending) and self.pending[-1]

    @property
    def ids(self) -> Tuple[str, ...]:
        return tuple(sym.id for sym in self.tokens)

    def expanded(self) -> Tuple[Symbol, ...]:
        """Tokens with augmented symbols replaced by their patterns."""
        nodes = []  # type: List[Symbol]
        for sym in self.tokens:
            if sym.pattern is not None:
                nodes.extend(sym.pattern.expanded())
            else:
                nodes.append(sym)
        return tuple(nodes)

    def expanded_ids(self) -> Tuple[str, ...]:
        return tuple(sym.id for sym in self.expanded())

    def __len__(self):
        return len(self.tokens)


def push_token(path: ExpressionPath, sym: Symbol) -> ExpressionPath:
    """Return a new path with `sym` appended."""
    if path.is_complete:
        raise GrammarError("Cannot append %s to a complete path" % sym.id)
    if path.next_slot_constant and sym.kind is not SymbolKind.Constant:
        raise GrammarError(
            "Position after %s only accepts %s" % (path.ids, CONSTANT_ID)
        )

    opened = tuple(pos in sym.const_operands for pos in reversed(range(sym.arity)))
    return ExpressionPath(
        tokens=path.tokens + (sym,),
        pending=path.pending[:-1] + opened,
        length=path.length + sym.size,
    )


def build_path(symbols: Iterable[Symbol]) -> ExpressionPath:
    """Push all given symbols to an empty path."""
    path = ExpressionPath()
    for sym in symbols:
        path = push_token(path, sym)
    return path


def is_complete(path: ExpressionPath) -> bool:
    return path.is_complete


def autocomplete(path: ExpressionPath) -> ExpressionPath:
    """Fill every open position with ``t``, or ``C`` where only a constant fits."""
    while not path.is_complete:
        path = push_token(path, CONST if path.next_slot_constant else VAR)
    return path


def eligible_symbols(
    path: ExpressionPath, candidates: Iterable[Symbol], max_length: int
) -> List[Symbol]:
    """Return the candidates which can be appended without breaking the budget.

    A symbol is eligible if the path stays completable within `max_length` nodes,
    counting one node for every position left open. The result is sorted by id.
    """
    if path.is_complete:
        return []

    constant_only = path.next_slot_constant
    eligible = []
    for sym in candidates:
        if constant_only and sym.kind is not SymbolKind.Constant:
            continue
        open_after = path.open_slots - 1 + sym.arity
        if path.length + sym.size + open_after <= max_length:
            eligible.append(sym)

    return sorted(eligible, key=lambda sym: sym.id)


def _compile(nodes: Tuple[Symbol, ...]) -> Callable:
    position = 0
    slot = 0

    def guard(func):
        def apply(*args):
            out = func(*args)
            return np.where(np.isfinite(out), out, np.nan)

        return apply

    def build():
        nonlocal position, slot
        sym = nodes[position]
        position += 1

        if sym.kind is SymbolKind.Variable:
            return lambda c, t: t
        if sym.kind is SymbolKind.Constant:
            index = slot
            slot += 1
            return lambda c, t: c[index]

        func = guard(FUNCTIONS[sym.id])
        if sym.arity == 1:
            arg = build()
            return lambda c, t: func(arg(c, t))

        left = build()
        right = build()
        return lambda c, t: func(left(c, t), right(c, t))

    program = build()
    if position != len(nodes):
        raise IncompleteExpressionError("Trailing tokens after a complete expression")
    return program


@attr.s(frozen=True, slots=True)
class ExpressionTree:
    """Parsed expression in pre-order with numbered coefficient slots."""

    nodes = attr.ib(type=tuple, converter=tuple)
    coefficient_slots = attr.ib(type=tuple, converter=tuple)
    _program = attr.ib(init=False, eq=False, repr=False)

    def __attrs_post_init__(self):
        if not self.nodes:
            raise IncompleteExpressionError("Empty expression")
        if any(sym.kind is SymbolKind.Augmented for sym in self.nodes):
            raise GrammarError(
                "Augmented symbols must be inlined before building a tree"
            )
        object.__setattr__(self, "_program", _compile(self.nodes))

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def n_coefficients(self) -> int:
        return len(self.coefficient_slots)

    @property
    def ids(self) -> Tuple[str, ...]:
        return tuple(sym.id for sym in self.nodes)


def to_tree(path: ExpressionPath) -> ExpressionTree:
    """Convert a complete path to a tree, inlining augmented symbols."""
    if not path.is_complete:
        raise IncompleteExpressionError(
            "Path %s has %s open slots" % (" ".join(path.ids), path.open_slots)
        )
    nodes = path.expanded()
    slots = tuple(i for i, sym in enumerate(nodes) if sym.kind is SymbolKind.Constant)
    return ExpressionTree(nodes, slots)


def _check_coefficients(tree: ExpressionTree, coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float).ravel()
    if coeffs.size != tree.n_coefficients:
        raise ArityError(
            "Expression has %s coefficient slots, got %s values"
            % (tree.n_coefficients, coeffs.size)
        )
    return coeffs


def evaluate(
    tree: ExpressionTree, coeffs, t: Union[float, np.ndarray]
) -> Union[float, np.ndarray]:
    """Evaluate the expression at `t` (scalar or array).

    Domain violations yield ``nan`` instead of raising.
    """
    coeffs = _check_coefficients(tree, coeffs)
    t = np.asarray(t, dtype=float)
    with np.errstate(all="ignore"):
        out = np.asarray(tree._program(coeffs, t), dtype=float)
        out = np.broadcast_to(out, t.shape)
        out = np.where(np.isfinite(out), out, np.nan)

    if out.ndim == 0:
        return float(out)
    return out


def to_infix(tree: ExpressionTree, coeffs) -> str:
    """Render a fully parenthesized infix string, e.g. ``(2 * sin(t))``."""
    coeffs = _check_coefficients(tree, coeffs)
    position = 0
    slot = 0

    def render() -> str:
        nonlocal position, slot
        sym = tree.nodes[position]
        position += 1

        if sym.kind is SymbolKind.Variable:
            return sym.id
        if sym.kind is SymbolKind.Constant:
            slot += 1
            return format_number(coeffs[slot - 1])
        if sym.arity == 1:
            return "%s(%s)" % (sym.id, render())

        left = render()
        right = render()
        return "(%s %s %s)" % (left, INFIX_OPERATORS[sym.id], right)

    return render()


def to_prefix(path: Union[ExpressionPath, ExpressionTree]) -> str:
    """Space separated symbol ids with augmented symbols expanded."""
    if isinstance(path, ExpressionTree):
        return " ".join(path.ids)
    return " ".join(path.expanded_ids())


def parse_prefix(
    text: str, symbols: Optional[Mapping[str, Symbol]] = None
) -> ExpressionPath:
    """Parse a prefix token list produced by :func:`to_prefix`."""
    if symbols is None:
        symbols = BASE_SYMBOL_MAP

    path = ExpressionPath()
    for token in text.split():
        try:
            sym = symbols[token]
        except KeyError:
            raise GrammarError("Unknown symbol %r" % token) from None
        path = push_token(path, sym)

    return path
