"""Symbolic scalar expressions.

Expressions form an immutable, hash-consed DAG: structurally identical
nodes are the same Python object, so shared subexpressions produced by
repeated differentiation are stored (and evaluated) once.

Supported node kinds
--------------------
``const``                      real constant
``sym``                        named symbol with a class (state, input,
                               parameter or reference)
``neg sin cos tan exp ln sqrt`` unary operations
``add sub mul div``            binary operations
``pow``                        power with a constant exponent

Examples
--------
>>> e = parse("0.5*rho*V^2", symbols={"rho": "parameter", "V": "state"})
>>> to_string(diff(e, symbol("V")))
'rho*V'
"""

from __future__ import annotations

import math
import re
import threading
import weakref
from functools import lru_cache
import numpy as np

__all__ = [
    "SYMBOL_CLASSES", "FUNCTIONS", "Expr", "ExprError", "ExprSyntaxError",
    "UnboundSymbolError", "ExprDomainError", "const", "symbol", "add", "sub",
    "mul", "div", "neg", "power", "apply", "parse", "to_string", "evaluate",
    "diff", "gradient", "simplify", "substitute", "free_symbols",
    "count_nodes", "is_zero", "compile_exprs", "CompiledExprs",
]

SYMBOL_CLASSES = ("state", "input", "parameter", "reference")
FUNCTIONS = ("sin", "cos", "tan", "exp", "ln", "sqrt")
_UNARY = ("neg",) + FUNCTIONS
_BINARY = ("add", "sub", "mul", "div", "pow")


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message, line, column):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class UnboundSymbolError(ExprError, KeyError):
    def __str__(self):
        return self.args[0]


class ExprDomainError(ExprError, ArithmeticError):
    def __init__(self, message, subexpr):
        super().__init__(f"{message} in '{to_string(subexpr)}'")
        self.subexpr = subexpr


# ---------------------------------------------------------------------------
# Node construction
# ---------------------------------------------------------------------------

_intern = weakref.WeakValueDictionary()
_intern_lock = threading.Lock()


class Expr:
    """Immutable expression node. Build with the module constructors."""

    __slots__ = ("op", "args", "value", "name", "kind", "__weakref__")

    def __init__(self, op, args=(), value=None, name=None, kind=None):
        self.op = op
        self.args = args
        self.value = value
        self.name = name
        self.kind = kind

    def __setattr__(self, key, val):
        if hasattr(self, "kind"):
            raise AttributeError("Expr is immutable")
        object.__setattr__(self, key, val)

    # Equality is identity: nodes are interned, so identity is structural.
    def __repr__(self):
        return f"Expr({to_string(self)!r})"

    def __str__(self):
        return to_string(self)

    @property
    def is_const(self):
        return self.op == "const"

    @property
    def is_symbol(self):
        return self.op == "sym"

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        if isinstance(exponent, Expr):
            if not exponent.is_const:
                return apply("exp", mul(exponent, apply("ln", self)))
            exponent = exponent.value
        return power(self, exponent)


def _coerce(value):
    if isinstance(value, Expr):
        return value
    return const(value)


def _node(op, args=(), value=None, name=None, kind=None):
    if op == "const":
        key = ("const", value)
    elif op == "sym":
        key = ("sym", name, kind)
    else:
        key = (op,) + tuple(args)
    with _intern_lock:
        node = _intern.get(key)
        if node is None:
            node = Expr(op, tuple(args), value, name, kind)
            _intern[key] = node
    return node


def const(value):
    value = float(value)
    if not math.isfinite(value):
        raise ExprError(f"non-finite constant {value!r}")
    return _node("const", value=value + 0.0)


def symbol(name, kind="state"):
    """Return the symbol ``name`` of class ``kind``."""
    if kind not in SYMBOL_CLASSES:
        raise ExprError(f"unknown symbol class {kind!r} for '{name}'")
    return _node("sym", name=name, kind=kind)


def raw(op, *args):
    """Build a node without any folding (used by the parser)."""
    if op in _UNARY:
        if len(args) != 1:
            raise ExprError(f"{op} takes one argument")
    elif op in _BINARY:
        if len(args) != 2:
            raise ExprError(f"{op} takes two arguments")
        if op == "pow" and not args[1].is_const:
            raise ExprError("pow exponent must be a constant")
    else:
        raise ExprError(f"unknown operation {op!r}")
    return _node(op, args)


ZERO = const(0.0)
ONE = const(1.0)


def _cval(e):
    return e.value if e.op == "const" else None


def add(a, b):
    ca, cb = _cval(a), _cval(b)
    if ca is not None and cb is not None:
        return const(ca + cb)
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    if b.op == "neg":
        return sub(a, b.args[0])
    if a.op == "neg":
        return sub(b, a.args[0])
    if a is b:
        return mul(const(2.0), a)
    if cb is not None:  # constants first keeps folding local
        a, b = b, a
        ca, cb = cb, ca
    if ca is not None and b.op == "add" and b.args[0].is_const:
        return add(const(ca + b.args[0].value), b.args[1])
    return _node("add", (a, b))


def sub(a, b):
    ca, cb = _cval(a), _cval(b)
    if ca is not None and cb is not None:
        return const(ca - cb)
    if cb == 0.0:
        return a
    if ca == 0.0:
        return neg(b)
    if a is b:
        return ZERO
    if b.op == "neg":
        return add(a, b.args[0])
    if b.op == "mul" and b.args[0].is_const and b.args[0].value < 0:
        return add(a, mul(const(-b.args[0].value), b.args[1]))
    if cb is not None:
        return add(const(-cb), a)
    return _node("sub", (a, b))


def neg(a):
    ca = _cval(a)
    if ca is not None:
        return const(-ca)
    if a.op == "neg":
        return a.args[0]
    if a.op == "sub":
        return sub(a.args[1], a.args[0])
    if a.op == "mul" and a.args[0].is_const:
        return mul(const(-a.args[0].value), a.args[1])
    return _node("neg", (a,))


def mul(a, b):
    ca, cb = _cval(a), _cval(b)
    if ca is not None and cb is not None:
        return const(ca * cb)
    if cb is not None:
        a, b = b, a
        ca, cb = cb, ca
    if ca is not None:
        if ca == 0.0:
            return ZERO
        if ca == 1.0:
            return b
        if ca == -1.0:
            return neg(b)
        if b.op == "mul" and b.args[0].is_const:
            return mul(const(ca * b.args[0].value), b.args[1])
        if b.op == "neg":
            return mul(const(-ca), b.args[0])
        return _node("mul", (a, b))
    if a.op == "neg":
        return neg(mul(a.args[0], b))
    if b.op == "neg":
        return neg(mul(a, b.args[0]))
    if b.op == "mul" and b.args[0].is_const:
        return mul(b.args[0], mul(a, b.args[1]))
    if a.op == "mul" and a.args[0].is_const:
        return mul(a.args[0], mul(a.args[1], b))
    if a is b:
        return power(a, 2.0)
    return _node("mul", (a, b))


def div(a, b):
    ca, cb = _cval(a), _cval(b)
    if cb is not None:
        if cb == 0.0:
            return _node("div", (a, b))  # kept so evaluation reports it
        if ca is not None:
            return const(ca / cb)
        if cb == 1.0:
            return a
        return mul(const(1.0 / cb), a)
    if ca == 0.0:
        return ZERO
    if a is b:
        return ONE
    if a.op == "neg":
        return neg(div(a.args[0], b))
    return _node("div", (a, b))


def power(a, exponent):
    exponent = float(exponent)
    if exponent == 0.0:
        return ONE
    if exponent == 1.0:
        return a
    ca = _cval(a)
    if ca is not None:
        try:
            folded = ca ** exponent
        except ZeroDivisionError:
            folded = None
        if isinstance(folded, float) and math.isfinite(folded):
            return const(folded)
    if a.op == "pow" and exponent.is_integer() and a.args[1].value.is_integer():
        return power(a.args[0], a.args[1].value * exponent)
    return _node("pow", (a, const(exponent)))


_SCALAR_FUNCS = {
    "sin": math.sin, "cos": math.cos, "tan": math.tan,
    "exp": math.exp, "ln": math.log, "sqrt": math.sqrt,
}


def apply(fname, a):
    """Apply the elementary function ``fname`` to ``a``."""
    if fname not in FUNCTIONS:
        raise ExprError(f"unknown function {fname!r}")
    ca = _cval(a)
    if ca is not None:
        try:
            return const(_SCALAR_FUNCS[fname](ca))
        except (ValueError, OverflowError, ExprError):
            pass
    if fname == "ln" and a.op == "exp":
        return a.args[0]
    return _node(fname, (a,))


def sin(a):
    return apply("sin", _coerce(a))


def cos(a):
    return apply("cos", _coerce(a))


def tan(a):
    return apply("tan", _coerce(a))


def exp(a):
    return apply("exp", _coerce(a))


def ln(a):
    return apply("ln", _coerce(a))


def sqrt(a):
    return apply("sqrt", _coerce(a))


_SMART = {"add": add, "sub": sub, "mul": mul, "div": div, "neg": neg}


def _rebuild(op, args):
    if op in _SMART:
        return _SMART[op](*args)
    if op == "pow":
        return power(args[0], args[1].value)
    return apply(op, args[0])


# ---------------------------------------------------------------------------
# Traversal helpers
# ---------------------------------------------------------------------------

def _postorder(roots):
    """Unique nodes reachable from ``roots``, children before parents."""
    order = []
    seen = set()
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for child in reversed(node.args):
                if id(child) not in seen:
                    stack.append((child, False))
    return order


def count_nodes(*exprs):
    """Number of distinct nodes in the DAG spanned by ``exprs``."""
    return len(_postorder(exprs))


def free_symbols(*exprs, kind=None):
    """Symbols appearing in ``exprs``, sorted by (class, name)."""
    syms = {n for n in _postorder(exprs) if n.op == "sym"}
    if kind is not None:
        syms = {s for s in syms if s.kind == kind}
    return sorted(syms, key=lambda s: (SYMBOL_CLASSES.index(s.kind), s.name))


def is_zero(e):
    return e.op == "const" and e.value == 0.0


def substitute(e, mapping):
    """Replace symbols according to ``mapping`` (symbol -> Expr or number)."""
    mapping = {k: _coerce(v) for k, v in mapping.items()}
    done = {}
    for node in _postorder([e]):
        if node.op == "sym":
            done[node] = mapping.get(node, node)
        elif node.op == "const":
            done[node] = node
        else:
            done[node] = _rebuild(node.op, [done[c] for c in node.args])
    return done[e]


def simplify(e):
    """Value-preserving rewrite: constant folding and neutral-element removal."""
    done = {}
    for node in _postorder([e]):
        if node.op in ("sym", "const"):
            done[node] = node
        else:
            done[node] = _rebuild(node.op, [done[c] for c in node.args])
    return done[e]


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------

@lru_cache(maxsize=1 << 20)
def _diff_cached(node, s):
    return _diff_node(node, s)


def _diff_node(node, s):
    op = node.op
    if op == "const":
        return ZERO
    if op == "sym":
        return ONE if node is s else ZERO
    args = node.args
    # Children come from the cache; diff() warms it bottom-up so this
    # recursion stays shallow.
    d = [_diff_cached(a, s) for a in (args[:1] if op == "pow" else args)]
    if op == "add":
        return add(d[0], d[1])
    if op == "sub":
        return sub(d[0], d[1])
    if op == "neg":
        return neg(d[0])
    if op == "mul":
        a, b = args
        return add(mul(d[0], b), mul(a, d[1]))
    if op == "div":
        a, b = args
        return sub(div(d[0], b), div(mul(a, d[1]), power(b, 2.0)))
    if op == "pow":
        a, c = args
        if is_zero(d[0]):
            return ZERO
        return mul(mul(const(c.value), power(a, c.value - 1.0)), d[0])
    (a,) = args
    da = d[0]
    if is_zero(da):
        return ZERO
    if op == "sin":
        return mul(apply("cos", a), da)
    if op == "cos":
        return neg(mul(apply("sin", a), da))
    if op == "tan":
        return div(da, power(apply("cos", a), 2.0))
    if op == "exp":
        return mul(node, da)
    if op == "ln":
        return div(da, a)
    if op == "sqrt":
        return div(da, mul(const(2.0), node))
    raise ExprError(f"cannot differentiate {op!r}")


def diff(e, s):
    """Exact partial derivative of ``e`` with respect to symbol ``s``."""
    if s.op != "sym":
        raise ExprError("can only differentiate with respect to a symbol")
    # Bottom-up warm-up keeps the cached recursion shallow on deep DAGs.
    for node in _postorder([e]):
        _diff_cached(node, s)
    return _diff_cached(e, s)


def gradient(e, symbols):
    return [diff(e, s) for s in symbols]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _lookup(binding, node):
    if node in binding:
        return binding[node]
    if node.name in binding:
        return binding[node.name]
    raise UnboundSymbolError(f"unbound symbol '{node.name}' ({node.kind})")


def evaluate(e, binding):
    """Evaluate ``e`` in IEEE double precision.

    ``binding`` maps symbols (or bare symbol names) to reals. Domain
    violations raise :class:`ExprDomainError` naming the offending node.
    """
    binding = dict(binding)
    val = {}
    for node in _postorder([e]):
        op = node.op
        if op == "const":
            val[node] = node.value
            continue
        if op == "sym":
            val[node] = float(_lookup(binding, node))
            continue
        a = [val[c] for c in node.args]
        try:
            if op == "add":
                r = a[0] + a[1]
            elif op == "sub":
                r = a[0] - a[1]
            elif op == "mul":
                r = a[0] * a[1]
            elif op == "div":
                if a[1] == 0.0:
                    raise ExprDomainError("division by zero", node)
                r = a[0] / a[1]
            elif op == "neg":
                r = -a[0]
            elif op == "pow":
                if a[0] == 0.0 and a[1] < 0:
                    raise ExprDomainError("zero raised to a negative power", node)
                if a[0] < 0.0 and not a[1].is_integer():
                    raise ExprDomainError("negative base with fractional exponent", node)
                r = a[0] ** a[1]
            elif op == "ln":
                if a[0] <= 0.0:
                    raise ExprDomainError("logarithm of a non-positive value", node)
                r = math.log(a[0])
            elif op == "sqrt":
                if a[0] < 0.0:
                    raise ExprDomainError("square root of a negative value", node)
                r = math.sqrt(a[0])
            else:
                r = _SCALAR_FUNCS[op](a[0])
        except OverflowError:
            raise ExprDomainError("overflow", node) from None
        val[node] = float(r)
    return val[e]


# ---------------------------------------------------------------------------
# Compilation to Python callables
# ---------------------------------------------------------------------------

_PY_OPS = {"add": "+", "sub": "-", "mul": "*", "div": "/"}
_PY_FUNCS = {"sin": "sin", "cos": "cos", "tan": "tan", "exp": "exp",
             "ln": "log", "sqrt": "sqrt"}


class CompiledExprs:
    """A batch of expressions compiled into straight-line Python code.

    Call :meth:`scalar` with floats (uses :mod:`math`, raising on domain
    errors) or :meth:`vector` with equal-length arrays (uses numpy and
    broadcasts constant outputs).
    """

    def __init__(self, exprs, symbols):
        self.exprs = tuple(exprs)
        self.symbols = tuple(symbols)
        known = set(self.symbols)
        for s in free_symbols(*self.exprs):
            if s not in known:
                raise UnboundSymbolError(f"unbound symbol '{s.name}' ({s.kind})")
        source = self._source()
        code = compile(source, "<robustfl.expr>", "exec")
        ns_math = {"sin": math.sin, "cos": math.cos, "tan": math.tan,
                   "exp": math.exp, "log": math.log, "sqrt": math.sqrt}
        ns_np = {"sin": np.sin, "cos": np.cos, "tan": np.tan,
                 "exp": np.exp, "log": np.log, "sqrt": np.sqrt}
        exec(code, ns_math)
        exec(code, ns_np)
        self._scalar = ns_math["_f"]
        self._vector = ns_np["_f"]

    def _source(self):
        names = {}
        lines = ["def _f(X):"]
        for i, s in enumerate(self.symbols):
            names[s] = f"X[{i}]"
        k = 0
        for node in _postorder(self.exprs):
            if node in names:
                continue
            if node.op == "const":
                names[node] = repr(node.value)
                continue
            if node.op == "sym":
                continue
            a = [names[c] for c in node.args]
            if node.op in _PY_OPS:
                rhs = f"{a[0]} {_PY_OPS[node.op]} {a[1]}"
            elif node.op == "neg":
                rhs = f"-{a[0]}"
            elif node.op == "pow":
                c = node.args[1].value
                rhs = f"{a[0]} ** {int(c) if c.is_integer() else c!r}"
            else:
                rhs = f"{_PY_FUNCS[node.op]}({a[0]})"
            name = f"t{k}"
            k += 1
            lines.append(f"    {name} = {rhs}")
            names[node] = name
        outs = ", ".join(names[e] for e in self.exprs)
        lines.append(f"    return ({outs}{',' if len(self.exprs) == 1 else ''})")
        return "\n".join(lines) + "\n"

    def scalar(self, values):
        """Evaluate at one point; ``values`` is ordered like ``symbols``."""
        return self._scalar(values)

    def vector(self, columns):
        """Evaluate at many points.

        ``columns`` is a sequence of 1-D arrays (one per symbol) or a 2-D
        array of shape (n_symbols, N). Returns an array (n_exprs, N).
        """
        columns = [np.asarray(c, dtype=float) for c in columns]
        npts = columns[0].shape[0] if columns else 1
        if npts == 1:
            # numpy overhead dominates for a single point; fall back to the
            # array path only where math raises (domain errors give nan there)
            try:
                vals = [float(v) for v in self._scalar([float(c[0]) for c in columns])]
                return np.array(vals, dtype=float).reshape(len(self.exprs), 1)
            except (ArithmeticError, ValueError, TypeError):
                pass
        with np.errstate(all="ignore"):
            out = self._vector(columns)
        res = np.empty((len(self.exprs), npts))
        for i, o in enumerate(out):
            res[i] = o
        return res


def compile_exprs(exprs, symbols):
    return CompiledExprs(exprs, symbols)


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _fmt_number(v):
    if v.is_integer() and abs(v) < 1e15:
        return f"{v:.1f}"
    return repr(v)


def _prec(node):
    if node.op == "const":
        return 3 if node.value < 0 else 5
    return _PREC.get(node.op, 5)


def to_string(e):
    """Render ``e`` in the model-file expression grammar."""
    out = {}
    for node in _postorder([e]):
        op = node.op
        if op == "const":
            out[node] = _fmt_number(node.value)
        elif op == "sym":
            out[node] = node.name
        elif op in FUNCTIONS:
            out[node] = f"{op}({out[node.args[0]]})"
        elif op == "neg":
            (a,) = node.args
            s = out[a]
            out[node] = "-" + (f"({s})" if _prec(a) < 3 else s)
        elif op == "pow":
            a, c = node.args
            s = out[a]
            if _prec(a) < 5:
                s = f"({s})"
            cv = c.value
            ex = str(int(cv)) if cv.is_integer() else repr(cv)
            out[node] = f"{s}^{ex}"
        else:
            a, b = node.args
            p = _PREC[op]
            sa, sb = out[a], out[b]
            if _prec(a) < p:
                sa = f"({sa})"
            if _prec(b) < p or (_prec(b) == p and op in ("sub", "div")) or (
                op == "mul" and b.op == "div"
            ):
                sb = f"({sb})"
            sym = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[op]
            out[node] = sa + sym + sb
    return out[e]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r\n]+)"
    r"|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
)


class _Parser:
    def __init__(self, text, resolve):
        self.text = text
        self.resolve = resolve
        self.tokens = self._tokenize(text)
        self.pos = 0

    def _tokenize(self, text):
        tokens = []
        i, line, col = 0, 1, 1
        while i < len(text):
            m = _TOKEN.match(text, i)
            if not m:
                raise ExprSyntaxError(f"unexpected character {text[i]!r}", line, col)
            kind = m.lastgroup
            tok = m.group()
            if kind != "ws":
                tokens.append((kind, tok, line, col))
            for ch in tok:
                if ch == "\n":
                    line, col = line + 1, 1
                else:
                    col += 1
            i = m.end()
        tokens.append(("eof", "", line, col))
        return tokens

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        if tok[0] == "eof":
            message = f"{message}: unexpected end of input"
        else:
            message = f"{message}: unexpected {tok[1]!r}"
        raise ExprSyntaxError(message, tok[2], tok[3])

    def expect(self, text):
        tok = self.peek()
        if tok[1] != text or tok[0] == "num":
            self.error(f"expected {text!r}")
        return self.take()

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "eof":
            self.error("syntax error")
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = raw("add" if op == "+" else "sub", e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = raw("mul" if op == "*" else "div", e, self.unary())
        return e

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return raw("neg", self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.base()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            exponent = simplify(self.unary())
            if exponent.is_const:
                return raw("pow", base, exponent)
            # general powers are rewritten as exp(b*ln(a))
            return raw("exp", raw("mul", exponent, raw("ln", base)))
        return base

    def base(self):
        tok = self.take()
        kind, text = tok[0], tok[1]
        if kind == "num":
            return const(float(text))
        if kind == "id":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if text not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function '{text}'", tok[2], tok[3])
                self.take()
                arg = self.expr()
                self.expect(")")
                return raw(text, arg)
            if text in FUNCTIONS:
                raise ExprSyntaxError(f"function '{text}' used without arguments",
                                      tok[2], tok[3])
            return self.resolve(text, tok)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        self.pos -= 1
        self.error("syntax error")


def parse(text, symbols=None, default_class="state"):
    """Parse a scalar expression.

    Parameters
    ----------
    text : str
        Expression in the model-file grammar.
    symbols : mapping, optional
        Declared identifiers, ``name -> class`` (or ``name -> Expr``).
        When given, undeclared identifiers are a syntax error.
    default_class : str
        Symbol class for identifiers when ``symbols`` is None.
    """
    def resolve(name, tok):
        if symbols is None:
            return symbol(name, default_class)
        if name not in symbols:
            raise ExprSyntaxError(f"unknown symbol '{name}'", tok[2], tok[3])
        decl = symbols[name]
        if isinstance(decl, Expr):
            return decl
        if decl not in SYMBOL_CLASSES:
            raise ExprSyntaxError(f"unknown symbol class {decl!r} for '{name}'",
                                  tok[2], tok[3])
        return symbol(name, decl)

    return _Parser(text, resolve).parse()
