"""A small expression language for user-declared scalar fields.

Grammar (ASCII input):

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ['^' unary]          (right-associative)
    primary := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Functions: sin, cos, exp, log, sqrt, abs (one argument) and pow(e, k).
Variables are whatever names the caller declares, in declared order; that
order fixes the argument slots of the compiled field.

Errors carry the byte offset of the offending token. A binary operator
whose right-hand side does not start a valid operand reports the operator's
own offset, so `u1 +* u2` points at offset 3.

Compiled fields are `ScalarField`s that evaluate on floats or jets and
expose exact symbolic slot-partials (used by implicit solvers), and every
AST serializes back to text that reparses to the same tree.
"""

from __future__ import annotations

from dataclasses import dataclass

from .jets import Jet, JetDomainError, ScalarField
from . import jets as _j

__all__ = [
    "ParseError",
    "ExpressionDomainError",
    "parse",
    "serialize",
    "compile_field",
    "ast_partial",
]

_FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs", "pow")


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"parse error at offset {offset}: {message}")
        self.offset = offset


class ExpressionDomainError(JetDomainError):
    """A compiled expression left its domain; carries the subexpression."""

    def __init__(self, message: str, offset: int, subexpr: str):
        super().__init__(f"{message} in `{subexpr}` (offset {offset})")
        self.offset = offset
        self.subexpr = subexpr


# -- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float
    offset: int = -1


@dataclass(frozen=True)
class Var:
    name: str
    slot: int
    offset: int = -1


@dataclass(frozen=True)
class Neg:
    arg: object
    offset: int = -1


@dataclass(frozen=True)
class Bin:
    op: str  # + - * / ^
    left: object
    right: object
    offset: int = -1


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple
    offset: int = -1


# -- tokenizer ---------------------------------------------------------------

_TOK_NUM = "num"
_TOK_NAME = "name"
_TOK_OP = "op"
_TOK_LP = "("
_TOK_RP = ")"
_TOK_COMMA = ","
_TOK_END = "end"


def _tokenize(text: str):
    if not text.isascii():
        bad = next(i for i, ch in enumerate(text) if not ch.isascii())
        raise ParseError("non-ASCII character", bad)
    toks = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_dot = seen_exp = False
            while j < n:
                c = text[j]
                if c.isdigit():
                    j += 1
                elif c == "." and not seen_dot and not seen_exp:
                    seen_dot = True
                    j += 1
                elif c in "eE" and not seen_exp and j > i:
                    # exponent must be followed by digits (optionally signed)
                    k = j + 1
                    if k < n and text[k] in "+-":
                        k += 1
                    if k < n and text[k].isdigit():
                        seen_exp = True
                        j = k + 1
                        while j < n and text[j].isdigit():
                            j += 1
                    else:
                        break
                else:
                    break
            toks.append((_TOK_NUM, text[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append((_TOK_NAME, text[i:j], i))
            i = j
            continue
        if ch in "+-*/^":
            toks.append((_TOK_OP, ch, i))
            i += 1
            continue
        if ch == "(":
            toks.append((_TOK_LP, ch, i))
            i += 1
            continue
        if ch == ")":
            toks.append((_TOK_RP, ch, i))
            i += 1
            continue
        if ch == ",":
            toks.append((_TOK_COMMA, ch, i))
            i += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    toks.append((_TOK_END, "", n))
    return toks


# -- parser ------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str, variables):
        self.text = text
        self.toks = _tokenize(text)
        self.pos = 0
        self.slots = {name: k for k, name in enumerate(variables)}
        if len(self.slots) != len(tuple(variables)):
            raise ValueError("duplicate variable names")

    def peek(self):
        return self.toks[self.pos]

    def next(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def _starts_operand(self) -> bool:
        kind, val, _ = self.peek()
        if kind in (_TOK_NUM, _TOK_NAME, _TOK_LP):
            return True
        return kind == _TOK_OP and val == "-"

    def parse(self):
        node = self.expr()
        kind, val, off = self.peek()
        if kind != _TOK_END:
            raise ParseError(f"unexpected {val!r}", off)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, off = self.peek()
            if kind == _TOK_OP and val in "+-":
                self.next()
                if not self._starts_operand():
                    raise ParseError(f"operator {val!r} missing right operand", off)
                node = Bin(val, node, self.term(), off)
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, val, off = self.peek()
            if kind == _TOK_OP and val in "*/":
                self.next()
                if not self._starts_operand():
                    raise ParseError(f"operator {val!r} missing right operand", off)
                node = Bin(val, node, self.unary(), off)
            else:
                return node

    def unary(self):
        kind, val, off = self.peek()
        if kind == _TOK_OP and val == "-":
            self.next()
            if not self._starts_operand():
                raise ParseError("operator '-' missing operand", off)
            return Neg(self.unary(), off)
        if kind == _TOK_OP:
            raise ParseError(f"unexpected operator {val!r}", off)
        return self.power()

    def power(self):
        base = self.primary()
        kind, val, off = self.peek()
        if kind == _TOK_OP and val == "^":
            self.next()
            if not self._starts_operand():
                raise ParseError("operator '^' missing right operand", off)
            return Bin("^", base, self.unary(), off)
        return base

    def primary(self):
        kind, val, off = self.next()
        if kind == _TOK_NUM:
            return Num(float(val), off)
        if kind == _TOK_LP:
            node = self.expr()
            k2, v2, o2 = self.next()
            if k2 != _TOK_RP:
                raise ParseError("missing closing parenthesis", o2)
            return node
        if kind == _TOK_NAME:
            nk, _, _ = self.peek()
            if nk == _TOK_LP:
                if val not in _FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", off)
                self.next()
                args = [self.expr()]
                while True:
                    k2, v2, o2 = self.peek()
                    if k2 == _TOK_COMMA:
                        self.next()
                        args.append(self.expr())
                    elif k2 == _TOK_RP:
                        self.next()
                        break
                    else:
                        raise ParseError("missing closing parenthesis", o2)
                want = 2 if val == "pow" else 1
                if len(args) != want:
                    raise ParseError(
                        f"function {val!r} takes {want} argument(s), got {len(args)}",
                        off,
                    )
                if val == "pow" and not isinstance(args[1], (Num, Neg)):
                    raise ParseError("pow exponent must be a numeric literal", off)
                if val == "pow":
                    expo = args[1]
                    if isinstance(expo, Neg) and not isinstance(expo.arg, Num):
                        raise ParseError("pow exponent must be a numeric literal", off)
                return Call(val, tuple(args), off)
            if val in _FUNCTIONS:
                raise ParseError(f"function {val!r} used without arguments", off)
            slot = self.slots.get(val)
            if slot is None:
                raise ParseError(f"unknown variable {val!r}", off)
            return Var(val, slot, off)
        raise ParseError(f"unexpected {val!r}" if val else "unexpected end of input", off)


def parse(text: str, variables):
    """Parse `text` over the declared variable names (ordered)."""
    return _Parser(text, tuple(variables)).parse()


# -- serialization -----------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node) -> int:
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def serialize(node) -> str:
    """Render an AST to text that reparses to the same tree."""
    if isinstance(node, Num):
        if node.value < 0:
            return f"(-{_fmt_num(-node.value)})"
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = serialize(node.arg)
        if _prec(node.arg) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Call):
        return f"{node.fn}({', '.join(serialize(a) for a in node.args)})"
    if isinstance(node, Bin):
        lp, rp = _prec(node.left), _prec(node.right)
        myp = _PREC[node.op]
        ls = serialize(node.left)
        rs = serialize(node.right)
        # left-assoc chains keep the left child unparenthesized at equal
        # precedence; '-'/'/' need parens around equal-precedence right
        # children; '^' is right-assoc so the mirror rule applies
        if node.op in "+-*/":
            if lp < myp:
                ls = f"({ls})"
            if rp < myp or (rp == myp and node.op in "-/"):
                rs = f"({rs})"
        else:  # ^
            if lp <= myp:
                ls = f"({ls})"
            if rp < myp:
                rs = f"({rs})"
        return f"{ls} {node.op} {rs}" if node.op in "+-" else f"{ls}{node.op}{rs}"
    raise TypeError(f"not an AST node: {node!r}")


# -- symbolic slot-partials --------------------------------------------------


def ast_partial(node, slot: int):
    """Exact d(node)/d(variable at slot), as another AST."""
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0) if node.slot == slot else Num(0.0)
    if isinstance(node, Neg):
        return Neg(ast_partial(node.arg, slot))
    if isinstance(node, Bin):
        dl = ast_partial(node.left, slot)
        dr = ast_partial(node.right, slot)
        if node.op == "+":
            return Bin("+", dl, dr)
        if node.op == "-":
            return Bin("-", dl, dr)
        if node.op == "*":
            return Bin("+", Bin("*", dl, node.right), Bin("*", node.left, dr))
        if node.op == "/":
            # (l/r)' = l'/r - l r'/r^2
            return Bin(
                "-",
                Bin("/", dl, node.right),
                Bin("/", Bin("*", node.left, dr), Bin("^", node.right, Num(2.0))),
            )
        if node.op == "^":
            # general f^g: f^g * (g' log f + g f'/f); numeric exponent is the
            # common case and simplifies to k f^(k-1) f'
            if isinstance(node.right, Num):
                k = node.right.value
                return Bin(
                    "*",
                    Bin("*", Num(k), Bin("^", node.left, Num(k - 1.0))),
                    dl,
                )
            return Bin(
                "*",
                node,
                Bin(
                    "+",
                    Bin("*", dr, Call("log", (node.left,))),
                    Bin("*", node.right, Bin("/", dl, node.left)),
                ),
            )
    if isinstance(node, Call):
        a = node.args[0]
        da = ast_partial(a, slot)
        if node.fn == "sin":
            return Bin("*", Call("cos", (a,)), da)
        if node.fn == "cos":
            return Neg(Bin("*", Call("sin", (a,)), da))
        if node.fn == "exp":
            return Bin("*", node, da)
        if node.fn == "log":
            return Bin("/", da, a)
        if node.fn == "sqrt":
            return Bin("/", da, Bin("*", Num(2.0), node))
        if node.fn == "abs":
            # d|a| = sign(a) da; realized as (abs(a)/a) * da, valid away
            # from a = 0 which abs itself already excludes
            return Bin("*", Bin("/", node, a), da)
        if node.fn == "pow":
            k = node.args[1]
            kv = -k.arg.value if isinstance(k, Neg) else k.value
            return Bin(
                "*",
                Bin("*", Num(kv), Call("pow", (a, Num(kv - 1.0)))),
                da,
            )
    raise TypeError(f"not an AST node: {node!r}")


def _simplify(node):
    """Constant folding and trivial-identity pruning, for readable and
    cheap derivative trees."""
    if isinstance(node, (Num, Var)):
        return node
    if isinstance(node, Neg):
        a = _simplify(node.arg)
        if isinstance(a, Num):
            return Num(-a.value)
        if isinstance(a, Neg):
            return a.arg
        return Neg(a, node.offset)
    if isinstance(node, Call):
        args = tuple(_simplify(a) for a in node.args)
        return Call(node.fn, args, node.offset)
    if isinstance(node, Bin):
        l = _simplify(node.left)
        r = _simplify(node.right)
        ln = isinstance(l, Num)
        rn = isinstance(r, Num)
        if node.op == "+":
            if ln and l.value == 0:
                return r
            if rn and r.value == 0:
                return l
            if ln and rn:
                return Num(l.value + r.value)
        elif node.op == "-":
            if rn and r.value == 0:
                return l
            if ln and rn:
                return Num(l.value - r.value)
            if ln and l.value == 0:
                return Neg(r)
        elif node.op == "*":
            if (ln and l.value == 0) or (rn and r.value == 0):
                return Num(0.0)
            if ln and l.value == 1:
                return r
            if rn and r.value == 1:
                return l
            if ln and rn:
                return Num(l.value * r.value)
        elif node.op == "/":
            if ln and l.value == 0 and not (rn and r.value == 0):
                return Num(0.0)
            if rn and r.value == 1:
                return l
        elif node.op == "^":
            if rn and r.value == 1:
                return l
            if rn and r.value == 0:
                return Num(1.0)
        return Bin(node.op, l, r, node.offset)
    raise TypeError(f"not an AST node: {node!r}")


# -- evaluation / compilation -------------------------------------------------


def _eval(node, args, text):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return args[node.slot]
    if isinstance(node, Neg):
        return -_eval(node.arg, args, text)
    if isinstance(node, Bin):
        l = _eval(node.left, args, text)
        r = _eval(node.right, args, text)
        try:
            if node.op == "+":
                return l + r
            if node.op == "-":
                return l - r
            if node.op == "*":
                return l * r
            if node.op == "/":
                if not isinstance(r, Jet) and r == 0.0:
                    raise JetDomainError("division by zero")
                return l / r
            if node.op == "^":
                if isinstance(node.right, Num):
                    return l ** node.right.value
                if isinstance(r, Jet):
                    raise JetDomainError("jet-valued exponent requires log form")
                return l**r
        except (JetDomainError, ZeroDivisionError) as err:
            raise ExpressionDomainError(
                str(err), node.offset, serialize(node)
            ) from None
    if isinstance(node, Call):
        vals = [_eval(a, args, text) for a in node.args]
        try:
            if node.fn == "sin":
                return _j.sin(vals[0])
            if node.fn == "cos":
                return _j.cos(vals[0])
            if node.fn == "exp":
                return _j.exp(vals[0])
            if node.fn == "log":
                return _j.log(vals[0])
            if node.fn == "sqrt":
                return _j.sqrt(vals[0])
            if node.fn == "abs":
                return abs(vals[0])
            if node.fn == "pow":
                k = node.args[1]
                kv = -k.arg.value if isinstance(k, Neg) else k.value
                return vals[0] ** kv
        except JetDomainError as err:
            raise ExpressionDomainError(
                str(err), node.offset, serialize(node)
            ) from None
    raise TypeError(f"not an AST node: {node!r}")


def compile_field(text: str, variables, name: str | None = None) -> ScalarField:
    """Compile expression text over ordered variable names to a ScalarField
    with exact symbolic slot-partials."""
    variables = tuple(variables)
    ast = parse(text, variables)
    return _compile_ast(ast, variables, name if name is not None else text)


def _compile_ast(ast, variables, name) -> ScalarField:
    arity = len(variables)
    const = ast.value if isinstance(ast, Num) else None
    if isinstance(ast, Neg) and isinstance(ast.arg, Num):
        const = -ast.arg.value

    def fn(*args):
        return _eval(ast, args, name)

    def partial_fn(slot):
        d = _simplify(ast_partial(ast, slot))
        return _compile_ast(d, variables, f"d{variables[slot]}({name})")

    f = ScalarField(arity, fn, name=name, const_value=const, partial_fn=partial_fn)
    f.ast = ast  # noqa: attached for serialization round-trips
    return f
