"""Expression DSL: parsing, evaluation and exact differentiation of vector fields.

The smooth right-hand sides of a perturbed system are carried as small
expression trees over state variables, a time symbol and named parameters.
Keeping them symbolic lets every derivative tensor (up to order 5) be exact up
to roundoff, which matters because the high-order recurrences multiply fifth
derivatives together and would amplify finite-difference noise.

Grammar (EBNF, informal)::

    expr     = term { ("+" | "-") term }
    term     = unary { ("*" | "/") unary }
    unary    = "-" unary | power
    power    = atom [ "^" exponent ]
    exponent = ["-"] (INT | DECIMAL | "(" ["-"] INT "/" INT ")")
    atom     = NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"

``^`` binds tightest and requires a constant integer or rational exponent so
that expressions stay globally smooth and closed under differentiation.
Recognised functions: sin, cos, tan, exp, log, sqrt.  ``pi`` is a constant.
Identifiers are ASCII letters/digits/underscore, not starting with a digit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt")

__all__ = [
    "Expression", "Num", "Var", "Neg", "Add", "Sub", "Mul", "Div", "Pow",
    "Call", "Pi", "Declarations", "VectorFieldSeries",
    "ParseError", "UndeclaredIdentifier", "ExponentError", "EvalDomainError",
    "parse", "evaluate", "to_str", "diff", "derivative_tensor", "compile_expr",
]


# ---------------------------------------------------------------------------
# errors

class ParseError(ValueError):
    """Syntax error; ``offset`` is the byte offset into the source text."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UndeclaredIdentifier(ParseError):
    def __init__(self, name, offset):
        ParseError.__init__(self, f"undeclared identifier '{name}'", offset)
        self.name = name


class ExponentError(ParseError):
    def __init__(self, offset):
        ParseError.__init__(
            self, "exponent must be a constant integer or rational", offset)


class EvalDomainError(ArithmeticError):
    """Evaluation hit a singularity; carries the offending subexpression."""

    def __init__(self, message, node):
        super().__init__(f"{message} in subexpression '{to_str(node)}'")
        self.node = node


# ---------------------------------------------------------------------------
# AST nodes

class Expression:
    __slots__ = ()

    def __repr__(self):
        return f"{type(self).__name__}({to_str(self)!r})"


class Num(Expression):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)


class Pi(Expression):
    __slots__ = ()


class Var(Expression):
    """Reference to a state variable (kind='state'), time or a parameter."""

    __slots__ = ("name", "kind", "index")

    def __init__(self, name, kind, index=-1):
        self.name = name
        self.kind = kind      # 'state' | 'time' | 'param'
        self.index = index    # state slot or parameter slot


class Neg(Expression):
    __slots__ = ("a",)

    def __init__(self, a):
        self.a = a


class _Bin(Expression):
    __slots__ = ("a", "b")

    def __init__(self, a, b):
        self.a = a
        self.b = b


class Add(_Bin):
    __slots__ = ()


class Sub(_Bin):
    __slots__ = ()


class Mul(_Bin):
    __slots__ = ()


class Div(_Bin):
    __slots__ = ()


class Pow(Expression):
    __slots__ = ("base", "exponent")

    def __init__(self, base, exponent):
        self.base = base
        self.exponent = Fraction(exponent)


class Call(Expression):
    __slots__ = ("fn", "arg")

    def __init__(self, fn, arg):
        self.fn = fn
        self.arg = arg


# ---------------------------------------------------------------------------
# declarations

@dataclass(frozen=True)
class Declarations:
    """Names an expression may reference: state variables, time, parameters."""

    state: tuple[str, ...]
    params: tuple[str, ...] = ()
    time: str = "t"

    def __post_init__(self):
        names = list(self.state) + list(self.params) + [self.time]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate declaration among {names}")

    def resolve(self, name, offset):
        if name == self.time:
            return Var(name, "time")
        if name in self.state:
            return Var(name, "state", self.state.index(name))
        if name in self.params:
            return Var(name, "param", self.params.index(name))
        raise UndeclaredIdentifier(name, offset)


# ---------------------------------------------------------------------------
# tokenizer / parser

_OPS = set("+-*/^()")


def _tokenize(text):
    toks = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPS:
            toks.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    while k < n and text[k].isdigit():
                        k += 1
                    j = k
            lit = text[i:j]
            try:
                float(lit)
            except ValueError:
                raise ParseError(f"bad numeric literal '{lit}'", i)
            toks.append(("num", lit, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(("ident", text[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    toks.append(("end", "", n))
    return toks


class _Parser:
    def __init__(self, toks, decls):
        self.toks = toks
        self.pos = 0
        self.decls = decls

    def peek(self):
        return self.toks[self.pos]

    def next(self):
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.next()
        if tok[0] != kind:
            raise ParseError(f"expected '{kind}', found '{tok[1] or 'end of input'}'", tok[2])
        return tok

    def parse_expr(self):
        node = self.parse_term()
        while self.peek()[0] in ("+", "-"):
            op = self.next()[0]
            rhs = self.parse_term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def parse_term(self):
        node = self.parse_unary()
        while self.peek()[0] in ("*", "/"):
            op = self.next()[0]
            rhs = self.parse_unary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def parse_unary(self):
        if self.peek()[0] == "-":
            self.next()
            return Neg(self.parse_unary())
        return self.parse_power()

    def parse_power(self):
        base = self.parse_atom()
        if self.peek()[0] == "^":
            self.next()
            exponent = self.parse_exponent()
            return Pow(base, exponent)
        return base

    def parse_exponent(self):
        sign = 1
        if self.peek()[0] == "-":
            self.next()
            sign = -1
        tok = self.peek()
        if tok[0] == "num":
            self.next()
            return sign * _literal_fraction(tok)
        if tok[0] == "(":
            self.next()
            if self.peek()[0] == "-":
                self.next()
                sign = -sign
            p = self.expect("num")
            num = _literal_fraction(p)
            if self.peek()[0] == "/":
                self.next()
                q = self.expect("num")
                den = _literal_fraction(q)
                if den == 0:
                    raise ExponentError(q[2])
                num = num / den
            self.expect(")")
            return sign * num
        raise ExponentError(tok[2])

    def parse_atom(self):
        tok = self.next()
        kind, text, off = tok
        if kind == "num":
            return Num(float(text))
        if kind == "(":
            node = self.parse_expr()
            self.expect(")")
            return node
        if kind == "ident":
            if self.peek()[0] == "(":
                if text == "abs":
                    raise ParseError("'abs' is not supported (non-smooth)", off)
                if text not in FUNCTIONS:
                    raise ParseError(f"unknown function '{text}'", off)
                self.next()
                arg = self.parse_expr()
                self.expect(")")
                return Call(text, arg)
            if text == "pi":
                return Pi()
            return self.decls.resolve(text, off)
        raise ParseError(f"unexpected token '{text or 'end of input'}'", off)


def _literal_fraction(tok):
    try:
        return Fraction(tok[1])
    except ValueError:
        raise ExponentError(tok[2])


def parse(text, decls):
    """Parse ``text`` against ``decls`` and return the expression tree."""
    if not text or not text.strip():
        raise ParseError("empty expression", 0)
    parser = _Parser(_tokenize(text), decls)
    node = parser.parse_expr()
    end = parser.next()
    if end[0] != "end":
        raise ParseError(f"unexpected token '{end[1]}'", end[2])
    return node


# ---------------------------------------------------------------------------
# printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def _prec(node):
    return _PREC.get(type(node), 5)


def to_str(node):
    """Render a tree back to parseable text (round-trip safe)."""
    if isinstance(node, Num):
        v = node.value
        if v == int(v) and abs(v) < 1e16:
            return repr(int(v))
        return repr(v)
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = to_str(node.a)
        if _prec(node.a) <= _PREC[Neg]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, (Add, Sub, Mul, Div)):
        op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(node)]
        p = _PREC[type(node)]
        left = to_str(node.a)
        if _prec(node.a) < p:
            left = f"({left})"
        right = to_str(node.b)
        # -, / are left associative: parenthesise an equal-precedence rhs
        if _prec(node.b) < p or (op in "-/" and _prec(node.b) == p):
            right = f"({right})"
        return f"{left} {op} {right}"
    if isinstance(node, Pow):
        base = to_str(node.base)
        if _prec(node.base) <= _PREC[Pow]:
            base = f"({base})"
        e = node.exponent
        if e.denominator == 1:
            suffix = str(e.numerator) if e >= 0 else f"(-{-e.numerator})"
        else:
            suffix = f"({e.numerator}/{e.denominator})"
        return f"{base}^{suffix}"
    if isinstance(node, Call):
        return f"{node.fn}({to_str(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# interpreted evaluation (careful path, precise domain errors)

def evaluate(node, t, x, params):
    """Evaluate at time ``t``, state vector ``x``, parameter mapping ``params``.

    Raises :class:`EvalDomainError` naming the subexpression when the value
    leaves the smooth domain (log of a non-positive number, division by zero,
    fractional power of a negative base).
    """
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Pi):
        return math.pi
    if isinstance(node, Var):
        if node.kind == "time":
            return float(t)
        if node.kind == "state":
            return float(x[node.index])
        return float(params[node.name])
    if isinstance(node, Neg):
        return -evaluate(node.a, t, x, params)
    if isinstance(node, Add):
        return evaluate(node.a, t, x, params) + evaluate(node.b, t, x, params)
    if isinstance(node, Sub):
        return evaluate(node.a, t, x, params) - evaluate(node.b, t, x, params)
    if isinstance(node, Mul):
        return evaluate(node.a, t, x, params) * evaluate(node.b, t, x, params)
    if isinstance(node, Div):
        den = evaluate(node.b, t, x, params)
        if den == 0.0:
            raise EvalDomainError("division by zero", node)
        return evaluate(node.a, t, x, params) / den
    if isinstance(node, Pow):
        base = evaluate(node.base, t, x, params)
        e = node.exponent
        if e.denominator == 1:
            if base == 0.0 and e < 0:
                raise EvalDomainError("zero raised to a negative power", node)
            return base ** int(e)
        if base < 0.0:
            raise EvalDomainError("fractional power of a negative base", node)
        if base == 0.0 and e < 0:
            raise EvalDomainError("zero raised to a negative power", node)
        return base ** float(e)
    if isinstance(node, Call):
        arg = evaluate(node.arg, t, x, params)
        if node.fn == "log":
            if arg <= 0.0:
                raise EvalDomainError("log of a non-positive number", node)
            return math.log(arg)
        if node.fn == "sqrt":
            if arg < 0.0:
                raise EvalDomainError("sqrt of a negative number", node)
            return math.sqrt(arg)
        try:
            return getattr(math, node.fn)(arg)
        except (ValueError, OverflowError) as exc:
            raise EvalDomainError(str(exc), node)
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# simplifying constructors (used by the differentiator)

def _num(v):
    return Num(v)


def _is_num(node, value=None):
    return isinstance(node, Num) and (value is None or node.value == value)


def mk_neg(a):
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def mk_add(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return Add(a, b)


def mk_sub(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return mk_neg(b)
    return Sub(a, b)


def mk_mul(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a, -1.0):
        return mk_neg(b)
    if _is_num(b, -1.0):
        return mk_neg(a)
    return Mul(a, b)


def mk_div(a, b):
    if _is_num(a, 0.0):
        return Num(0.0)
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b) and b.value != 0.0:
        return Num(a.value / b.value)
    return Div(a, b)


def mk_pow(base, exponent):
    e = Fraction(exponent)
    if e == 0:
        return Num(1.0)
    if e == 1:
        return base
    if _is_num(base):
        if base.value >= 0 or e.denominator == 1:
            return Num(base.value ** float(e) if e.denominator > 1
                       else base.value ** int(e))
    return Pow(base, e)


# ---------------------------------------------------------------------------
# differentiation

def diff(node, var_index, _cache=None):
    """Exact derivative with respect to state variable ``var_index``.

    Subtree results are memoised by object identity, so derivative trees share
    structure with their parents; the compiler exploits that sharing.
    """
    if _cache is None:
        _cache = {}
    key = (id(node), var_index)
    hit = _cache.get(key)
    if hit is not None:
        return hit
    out = _diff(node, var_index, _cache)
    _cache[key] = out
    return out


def _diff(node, i, cache):
    if isinstance(node, (Num, Pi)):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0) if (node.kind == "state" and node.index == i) else Num(0.0)
    if isinstance(node, Neg):
        return mk_neg(diff(node.a, i, cache))
    if isinstance(node, Add):
        return mk_add(diff(node.a, i, cache), diff(node.b, i, cache))
    if isinstance(node, Sub):
        return mk_sub(diff(node.a, i, cache), diff(node.b, i, cache))
    if isinstance(node, Mul):
        return mk_add(mk_mul(diff(node.a, i, cache), node.b),
                      mk_mul(node.a, diff(node.b, i, cache)))
    if isinstance(node, Div):
        da = diff(node.a, i, cache)
        db = diff(node.b, i, cache)
        if _is_num(db, 0.0):
            return mk_div(da, node.b)
        return mk_div(mk_sub(mk_mul(da, node.b), mk_mul(node.a, db)),
                      mk_pow(node.b, 2))
    if isinstance(node, Pow):
        db = diff(node.base, i, cache)
        if _is_num(db, 0.0):
            return Num(0.0)
        e = node.exponent
        return mk_mul(mk_mul(Num(float(e)), mk_pow(node.base, e - 1)), db)
    if isinstance(node, Call):
        da = diff(node.arg, i, cache)
        if _is_num(da, 0.0):
            return Num(0.0)
        a = node.arg
        outer = {
            "sin": lambda: Call("cos", a),
            "cos": lambda: mk_neg(Call("sin", a)),
            "tan": lambda: mk_add(Num(1.0), mk_pow(Call("tan", a), 2)),
            "exp": lambda: node,
            "log": lambda: mk_div(Num(1.0), a),
            "sqrt": lambda: mk_div(Num(0.5), node),
        }[node.fn]()
        return mk_mul(outer, da)
    raise TypeError(f"not an expression node: {node!r}")


def is_zero_expr(node):
    return _is_num(node, 0.0)


def tree_stats(node):
    """(depth, node count) of an expression tree; both are always finite."""
    if isinstance(node, (Num, Pi, Var)):
        return 1, 1
    if isinstance(node, Neg):
        d, c = tree_stats(node.a)
        return d + 1, c + 1
    if isinstance(node, (Add, Sub, Mul, Div)):
        da, ca = tree_stats(node.a)
        db, cb = tree_stats(node.b)
        return max(da, db) + 1, ca + cb + 1
    if isinstance(node, Pow):
        d, c = tree_stats(node.base)
        return d + 1, c + 1
    if isinstance(node, Call):
        d, c = tree_stats(node.arg)
        return d + 1, c + 1
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# compilation to plain Python (fast path used by the integrators)

_SAFE_GLOBALS = {
    "sin": math.sin, "cos": math.cos, "tan": math.tan,
    "exp": math.exp, "log": math.log, "sqrt": math.sqrt,
    "powf": math.pow, "PI": math.pi,
}


def _emit(node, lines, names, counter):
    """Emit assignments in post-order; shared subtrees are emitted once."""
    key = id(node)
    if key in names:
        return names[key]
    if isinstance(node, Num):
        ref = repr(node.value)
    elif isinstance(node, Pi):
        ref = "PI"
    elif isinstance(node, Var):
        if node.kind == "time":
            ref = "t"
        elif node.kind == "state":
            ref = f"x[{node.index}]"
        else:
            ref = f"p[{node.index}]"
    else:
        if isinstance(node, Neg):
            rhs = f"-{_emit(node.a, lines, names, counter)}"
        elif isinstance(node, (Add, Sub, Mul, Div)):
            op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(node)]
            ra = _emit(node.a, lines, names, counter)
            rb = _emit(node.b, lines, names, counter)
            rhs = f"{ra} {op} {rb}"
        elif isinstance(node, Pow):
            rb = _emit(node.base, lines, names, counter)
            e = node.exponent
            if e.denominator == 1:
                rhs = f"{rb} ** {int(e)}"
            else:
                rhs = f"powf({rb}, {float(e)!r})"
        elif isinstance(node, Call):
            ra = _emit(node.arg, lines, names, counter)
            rhs = f"{node.fn}({ra})"
        else:
            raise TypeError(f"not an expression node: {node!r}")
        counter[0] += 1
        ref = f"v{counter[0]}"
        lines.append(f"    {ref} = {rhs}")
    names[key] = ref
    return ref


def compile_expr(node, decls, param_order=None):
    """Compile one expression to a callable ``f(t, x, p) -> float``.

    ``p`` is a tuple of parameter values following ``param_order`` (defaults
    to the declaration order).
    """
    fn = compile_stack([node], decls, param_order)
    return lambda t, x, p: fn(t, x, p)[0]


def compile_stack(nodes, decls, param_order=None):
    """Compile many expressions into one function returning a list of floats.

    Subtrees shared between the expressions (differentiation reuses children)
    are evaluated once per call.
    """
    del decls, param_order  # indices are already baked into Var nodes
    lines = []
    names = {}
    counter = [0]
    refs = [_emit(nd, lines, names, counter) for nd in nodes]
    src = "def _fn(t, x, p):\n"
    src += "\n".join(lines)
    src += f"\n    return [{', '.join(refs)}]\n"
    scope = dict(_SAFE_GLOBALS)
    exec(src, scope)
    return scope["_fn"]


# ---------------------------------------------------------------------------
# vector field series

@dataclass
class VectorFieldSeries:
    """The fields F_0..F_k of a T-periodic standard-form system.

    ``fields[i]`` holds the n component expressions of the order-i field; the
    full right-hand side at a given eps is ``sum_i eps^i * F_i(t, x)``.  All
    components share one declaration set and one parameter binding.
    """

    decls: Declarations
    period: float
    order: int
    fields: list
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.dim
        if n < 1:
            raise ValueError("dimension must be >= 1")
        if self.order < 1:
            raise ValueError("order k must be >= 1")
        if not self.period > 0:
            raise ValueError("period must be positive")
        if len(self.fields) != self.order + 1:
            raise ValueError(
                f"need {self.order + 1} fields F_0..F_{self.order}, got {len(self.fields)}")
        for i, comps in enumerate(self.fields):
            if len(comps) != n:
                raise ValueError(f"field F_{i} has {len(comps)} components, expected {n}")
        for name in self.decls.params:
            if name not in self.params:
                raise ValueError(f"parameter '{name}' has no bound value")
        self._stacks = {}
        self.tree_depth, self.node_count = 0, 0
        for comps in self.fields:
            for comp in comps:
                d, c = tree_stats(comp)
                self.tree_depth = max(self.tree_depth, d)
                self.node_count += c

    @property
    def dim(self):
        return len(self.decls.state)

    @property
    def param_tuple(self):
        return tuple(float(self.params[name]) for name in self.decls.params)

    @classmethod
    def from_strings(cls, state, field_strings, period, params=None, time="t"):
        """Build a series from component strings: ``field_strings[i]`` lists
        the n components of F_i."""
        params = dict(params or {})
        decls = Declarations(state=tuple(state), params=tuple(sorted(params)), time=time)
        fields = [[parse(s, decls) for s in comps] for comps in field_strings]
        return cls(decls=decls, period=float(period),
                   order=len(field_strings) - 1, fields=fields, params=params)

    def with_params(self, **overrides):
        params = dict(self.params)
        params.update(overrides)
        return VectorFieldSeries(decls=self.decls, period=self.period,
                                 order=self.order, fields=self.fields, params=params)

    def eval_field(self, i, t, x):
        """Value of F_i(t, x) via the careful interpreted path."""
        return np.array([evaluate(c, t, x, self.params) for c in self.fields[i]])

    def rhs_full(self, t, x, eps):
        out = self.eval_field(0, t, x)
        for i in range(1, self.order + 1):
            out = out + eps ** i * self.eval_field(i, t, x)
        return out

    def tensor_stack(self, i, max_order, wrt=None):
        """Compiled evaluator for the derivative tensors of F_i up to
        ``max_order``; cached per (i, max_order, wrt)."""
        wrt = tuple(range(self.dim)) if wrt is None else tuple(wrt)
        key = (i, max_order, wrt)
        stack = self._stacks.get(key)
        if stack is None:
            stack = _TensorStack(self.fields[i], self.dim, max_order, wrt)
            self._stacks[key] = stack
        return stack


# ---------------------------------------------------------------------------
# derivative tensors

def _packed_indices(p, L):
    """Non-decreasing multi-indices of length L over range(p), lex order."""
    if L == 0:
        return [()]
    out = []

    def rec(prefix, start):
        if len(prefix) == L:
            out.append(tuple(prefix))
            return
        for j in range(start, p):
            rec(prefix + [j], j)

    rec([], 0)
    return out


class _TensorStack:
    """All packed derivative entries of one vector field up to a max order.

    Derivatives are taken with respect to the state variables listed in
    ``wrt`` (the packed index runs over positions in that list).  Identically
    zero orders are flagged so callers can skip whole tensors.
    """

    def __init__(self, components, dim, max_order, wrt):
        self.q = len(components)
        self.p = len(wrt)
        self.max_order = max_order
        self.wrt = wrt
        cache = {}
        # per_order[L][e] is a list of q expressions for packed multi-index e
        per_order = {0: [list(components)]}
        for L in range(1, max_order + 1):
            idxs = _packed_indices(self.p, L)
            prev_idxs = _packed_indices(self.p, L - 1)
            pos = {m: k for k, m in enumerate(prev_idxs)}
            rows = []
            for m in idxs:
                parent = pos[m[1:]]
                first = wrt[m[0]]
                rows.append([diff(e, first, cache) for e in per_order[L - 1][parent]])
            per_order[L] = rows
        self.order_is_zero = {}
        flat = []
        self._layout = {}
        for L in range(0, max_order + 1):
            rows = per_order[L]
            self.order_is_zero[L] = all(is_zero_expr(e) for row in rows for e in row)
            start = len(flat)
            for row in rows:
                flat.extend(row)
            self._layout[L] = (start, len(rows))
        self._fn = compile_stack(flat, None)
        self._n_entries = len(flat)

    def eval_all(self, t, x, p):
        """Return raw flat list of all entries at (t, x)."""
        return self._fn(t, x, p)

    def tensor(self, L, flat_values):
        """Slice order-L entries out of ``flat_values`` into a SymTensor."""
        from .tensor import SymTensor
        start, rows = self._layout[L]
        raw = flat_values[start:start + rows * self.q]
        entries = np.array(raw, dtype=float).reshape(rows, self.q).T
        return SymTensor(order=L, domain_dim=self.p, codomain_dim=self.q,
                         entries=entries)


def derivative_tensor(field_components, t, x, order, params, decls=None, wrt=None):
    """Order-``order`` symmetric derivative tensor of a field at (t, x).

    ``field_components`` is a list of Expression; derivatives are taken with
    respect to the state variables (all of them, or the subset ``wrt``).
    Order 0 returns the plain field value wrapped as a rank-0 tensor.
    """
    if order < 0 or order > 5:
        raise ValueError("derivative order must be in 0..5")
    x = np.asarray(x, dtype=float)
    dim = len(x)
    wrt = tuple(range(dim)) if wrt is None else tuple(wrt)
    stack = _TensorStack(list(field_components), dim, order, wrt)
    if isinstance(params, dict):
        if decls is not None:
            p = tuple(float(params[name]) for name in decls.params)
        else:
            p = tuple(params[k] for k in sorted(params))
    else:
        p = tuple(params)
    try:
        flat = stack.eval_all(float(t), x, p)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        # re-run interpreted for a precise report; if the field itself is
        # fine, the singularity sits in a derivative expression
        for comp in field_components:
            evaluate(comp, t, x, params if isinstance(params, dict) else {})
        raise EvalDomainError(
            f"derivative expression hit a singularity ({exc})",
            field_components[0])
    return stack.tensor(order, flat)
