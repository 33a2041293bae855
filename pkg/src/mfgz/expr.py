"""Tiny arithmetic expression language for game data.

Drift, running cost and terminal cost of a game are plain infix expressions
over a fixed variable set (t, x1..xn, u1.., v1.., z1..zn) plus the measure
features feature(mean), feature(second_moment) and feature(mean_sin).
An expression is parsed once into an AST and compiled into a flat postfix
program; the same program is executed by the vectorized numpy evaluator here
and by the scalar bytecode interpreter inside the numba kernels.
"""

from __future__ import annotations

import re

import numpy as np

# postfix opcodes, shared with kernels.py
OP_CONST = 0
OP_VAR = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_NEG = 6
OP_SIN = 7
OP_COS = 8
OP_EXP = 9
OP_SQRT = 10

_UNARY_FUNCS = {"sin": OP_SIN, "cos": OP_COS, "exp": OP_EXP, "sqrt": OP_SQRT}

FEATURE_NAMES = ("mean", "second_moment", "mean_sin")


class ExpressionError(ValueError):
    """Raised on parse failures and on non-finite evaluation results."""

    def __init__(self, message, position=None, source=None):
        if position is not None and source is not None:
            message = "%s (column %d in %r)" % (message, position + 1, source)
        super().__init__(message)
        self.position = position


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/(),]))"
)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            at = len(source) - len(stripped)
            raise ExpressionError("unexpected character %r" % stripped[0], at, source)
        if m.group("num") is not None:
            tokens.append(("num", m.group(0).strip(), m.start("num")))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class Node:
    """AST node: kind in {const, var, neg, add, sub, mul, div, call}."""

    __slots__ = ("kind", "value", "children")

    def __init__(self, kind, value=None, children=()):
        self.kind = kind
        self.value = value
        self.children = tuple(children)

    def __repr__(self):
        return "Node(%s, %r, %r)" % (self.kind, self.value, self.children)


class _Parser:
    def __init__(self, source):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, symbol):
        kind, text, pos = self.advance()
        if kind != "op" or text != symbol:
            raise ExpressionError("expected %r" % symbol, pos, self.source)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExpressionError("trailing input %r" % text, pos, self.source)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                rhs = self.term()
                node = Node("add" if text == "+" else "sub", children=(node, rhs))
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                rhs = self.unary()
                node = Node("mul" if text == "*" else "div", children=(node, rhs))
            else:
                return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Node("neg", children=(self.unary(),))
        if kind == "op" and text == "+":
            self.advance()
            return self.unary()
        return self.atom()

    def atom(self):
        kind, text, pos = self.advance()
        if kind == "num":
            return Node("const", float(text))
        if kind == "name":
            nk, nt, _ = self.peek()
            if nk == "op" and nt == "(":
                return self.call(text, pos)
            return Node("var", text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionError("unexpected token %r" % (text or "<end>"), pos, self.source)

    def call(self, name, pos):
        self.expect_op("(")
        if name == "feature":
            kind, text, fpos = self.advance()
            if kind != "name" or text not in FEATURE_NAMES:
                raise ExpressionError(
                    "feature() takes one of %s" % (FEATURE_NAMES,), fpos, self.source
                )
            self.expect_op(")")
            return Node("var", "feature:" + text)
        if name not in _UNARY_FUNCS:
            raise ExpressionError("unknown function %r" % name, pos, self.source)
        args = [self.expr()]
        while True:
            kind, text, apos = self.peek()
            if kind == "op" and text == ",":
                self.advance()
                args.append(self.expr())
            else:
                break
        self.expect_op(")")
        if len(args) != 1:
            raise ExpressionError(
                "%s() takes 1 argument, got %d" % (name, len(args)), pos, self.source
            )
        return Node("call", name, children=args)


class Program:
    """Flat postfix form of an expression, executable on arrays or scalars."""

    __slots__ = ("ops", "args", "consts", "var_names", "max_stack")

    def __init__(self, ops, args, consts, var_names, max_stack):
        self.ops = np.asarray(ops, dtype=np.int64)
        self.args = np.asarray(args, dtype=np.int64)
        self.consts = np.asarray(consts, dtype=np.float64)
        self.var_names = tuple(var_names)
        self.max_stack = max_stack


def _compile_node(node, ops, args, consts, var_index):
    if node.kind == "const":
        ops.append(OP_CONST)
        args.append(len(consts))
        consts.append(float(node.value))
        return 1
    if node.kind == "var":
        name = node.value
        if name not in var_index:
            var_index[name] = len(var_index)
        ops.append(OP_VAR)
        args.append(var_index[name])
        return 1
    if node.kind == "neg":
        depth = _compile_node(node.children[0], ops, args, consts, var_index)
        ops.append(OP_NEG)
        args.append(0)
        return depth
    if node.kind == "call":
        depth = _compile_node(node.children[0], ops, args, consts, var_index)
        ops.append(_UNARY_FUNCS[node.value])
        args.append(0)
        return depth
    # binary
    opcode = {"add": OP_ADD, "sub": OP_SUB, "mul": OP_MUL, "div": OP_DIV}[node.kind]
    d1 = _compile_node(node.children[0], ops, args, consts, var_index)
    d2 = _compile_node(node.children[1], ops, args, consts, var_index)
    ops.append(opcode)
    args.append(0)
    return max(d1, 1 + d2)


class Expression:
    """Parsed expression with cached postfix program.

    ``variables`` is the set of names the expression reads; feature terms
    appear as ``feature:<name>``.
    """

    def __init__(self, source, ast=None):
        self.source = source
        self.ast = ast if ast is not None else _Parser(source).parse()
        ops, args, consts = [], [], []
        var_index = {}
        depth = _compile_node(self.ast, ops, args, consts, var_index)
        names = [None] * len(var_index)
        for name, idx in var_index.items():
            names[idx] = name
        self.program = Program(ops, args, consts, names, depth)
        self.variables = frozenset(var_index)

    def __repr__(self):
        return "Expression(%r)" % self.source

    def __call__(self, **env):
        return eval_program(self.program, env)

    def derivative(self, var):
        """Symbolic partial derivative with respect to ``var``."""
        dnode = _differentiate(self.ast, var)
        return Expression("d(%s)/d(%s)" % (self.source, var), ast=dnode)


def parse_expression(source: str) -> Expression:
    """Parse ``source`` into an :class:`Expression`; raises ExpressionError."""
    return Expression(source)


def eval_program(prog: Program, env):
    """Evaluate a postfix program with numpy broadcasting.

    ``env`` maps variable names to scalars or arrays.  Missing variables
    raise ExpressionError; non-finite output checks are left to callers that
    need them (see :func:`check_finite`).
    """
    stack = []
    ops, args, consts, names = prog.ops, prog.args, prog.consts, prog.var_names
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for k in range(len(ops)):
            op = ops[k]
            if op == OP_CONST:
                stack.append(consts[args[k]])
            elif op == OP_VAR:
                name = names[args[k]]
                try:
                    stack.append(env[name])
                except KeyError:
                    raise ExpressionError("unbound variable %r" % name) from None
            elif op == OP_ADD:
                b = stack.pop()
                stack[-1] = stack[-1] + b
            elif op == OP_SUB:
                b = stack.pop()
                stack[-1] = stack[-1] - b
            elif op == OP_MUL:
                b = stack.pop()
                stack[-1] = stack[-1] * b
            elif op == OP_DIV:
                b = stack.pop()
                stack[-1] = stack[-1] / b
            elif op == OP_NEG:
                stack[-1] = -stack[-1]
            elif op == OP_SIN:
                stack[-1] = np.sin(stack[-1])
            elif op == OP_COS:
                stack[-1] = np.cos(stack[-1])
            elif op == OP_EXP:
                stack[-1] = np.exp(stack[-1])
            elif op == OP_SQRT:
                stack[-1] = np.sqrt(stack[-1])
    return stack[0]


def check_finite(value, context=""):
    """Raise ExpressionError if ``value`` contains non-finite entries."""
    if not np.all(np.isfinite(value)):
        raise ExpressionError("non-finite value%s" % (" in " + context if context else ""))
    return value


def _const(c):
    return Node("const", float(c))


def _is_const(node, c=None):
    return node.kind == "const" and (c is None or node.value == c)


def _add(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return _const(a.value + b.value)
    return Node("add", children=(a, b))


def _sub(a, b):
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return Node("neg", children=(b,))
    if _is_const(a) and _is_const(b):
        return _const(a.value - b.value)
    return Node("sub", children=(a, b))


def _mul(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return _const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return _const(a.value * b.value)
    return Node("mul", children=(a, b))


def _div(a, b):
    if _is_const(a, 0.0):
        return _const(0.0)
    if _is_const(b, 1.0):
        return a
    return Node("div", children=(a, b))


def _flatten_terms(node, sign, out):
    if node.kind == "add":
        _flatten_terms(node.children[0], sign, out)
        _flatten_terms(node.children[1], sign, out)
    elif node.kind == "sub":
        _flatten_terms(node.children[0], sign, out)
        _flatten_terms(node.children[1], -sign, out)
    elif node.kind == "neg":
        _flatten_terms(node.children[0], -sign, out)
    else:
        out.append((sign, node))


def _node_vars(node, out):
    if node.kind == "var":
        out.add(node.value)
    for child in node.children:
        _node_vars(child, out)


def _rebuild_sum(terms):
    if not terms:
        return _const(0.0)
    sign, node = terms[0]
    acc = Node("neg", children=(node,)) if sign < 0 else node
    for sign, node in terms[1:]:
        acc = Node("add" if sign > 0 else "sub", children=(acc, node))
    return acc


def split_control_separable(expr):
    """Split into base(x,t,features) + cu(u) + cv(v) when exactly additive.

    Returns (base, cu, cv) Expressions, or None when any additive term mixes
    a control with the state or the two controls with each other.  Only a
    syntactic sum decomposition is attempted; products like u1*v1 or x1*u1
    make the expression non-separable here.
    """
    terms = []
    _flatten_terms(expr.ast, 1, terms)
    buckets = {"base": [], "u": [], "v": []}
    for sign, node in terms:
        names = set()
        _node_vars(node, names)
        has_u = any(n[0] == "u" and not n.startswith("feature") for n in names)
        has_v = any(n[0] == "v" for n in names)
        has_state = any(not (n[0] in "uv") or n.startswith("feature") for n in names)
        if (has_u and has_v) or (has_u and has_state) or (has_v and has_state):
            return None
        key = "u" if has_u else ("v" if has_v else "base")
        buckets[key].append((sign, node))
    return tuple(
        Expression("%s[%s]" % (expr.source, key), ast=_rebuild_sum(buckets[key]))
        for key in ("base", "u", "v")
    )


def _differentiate(node, var):
    if node.kind == "const":
        return _const(0.0)
    if node.kind == "var":
        return _const(1.0 if node.value == var else 0.0)
    if node.kind == "neg":
        return Node("neg", children=(_differentiate(node.children[0], var),))
    if node.kind == "add":
        return _add(*(_differentiate(c, var) for c in node.children))
    if node.kind == "sub":
        return _sub(*(_differentiate(c, var) for c in node.children))
    if node.kind == "mul":
        u, v = node.children
        du, dv = _differentiate(u, var), _differentiate(v, var)
        return _add(_mul(du, v), _mul(u, dv))
    if node.kind == "div":
        u, v = node.children
        du, dv = _differentiate(u, var), _differentiate(v, var)
        return _div(_sub(_mul(du, v), _mul(u, dv)), _mul(v, v))
    if node.kind == "call":
        (u,) = node.children
        du = _differentiate(u, var)
        if node.value == "sin":
            return _mul(Node("call", "cos", children=(u,)), du)
        if node.value == "cos":
            return Node("neg", children=(_mul(Node("call", "sin", children=(u,)), du),))
        if node.value == "exp":
            return _mul(Node("call", "exp", children=(u,)), du)
        if node.value == "sqrt":
            return _div(du, _mul(_const(2.0), Node("call", "sqrt", children=(u,))))
    raise ExpressionError("cannot differentiate node kind %r" % node.kind)
