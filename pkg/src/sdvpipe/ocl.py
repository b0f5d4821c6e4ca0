"""Constraint language: parser and three-valued evaluator over model instances.

Supported constraint files are sequences of ``context C inv Name: <expr>``
declarations with ``--`` line comments.  Expression grammar, lowest to highest
precedence: implies, or, and, not, comparisons, additive, multiplicative,
unary minus, postfix navigation (``.prop``) and collection calls
(``->size()``, ``->forAll(v | e)``, ...).

Evaluation semantics: navigation of an unset single-valued feature yields the
undefined value, which propagates through arithmetic, comparisons, navigation
and collection bodies.  Exceptions (Kleene logic): ``and`` with a false
operand is false, ``or`` with a true operand is true, ``implies`` with a false
antecedent is true.  ``forAll``/``exists`` over empty collections yield
true/false; a missing multi-valued link is the empty collection; division by
zero is undefined.  Every evaluation produces a verdict - type errors become
Invalid verdicts with a diagnostic, never a crash.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import SdvpipeError
from .instance import ModelInstance
from .metamodel import MetaModel

PASS = "pass"
FAIL = "fail"
INVALID = "invalid"

COLLECTION_OPS = (
    "size",
    "isEmpty",
    "notEmpty",
    "includes",
    "sum",
    "forAll",
    "exists",
    "select",
    "collect",
)

_KEYWORDS = ("context", "inv", "self", "and", "or", "not", "implies", "true", "false")


class OclError(SdvpipeError):
    pass


class OclSyntaxError(OclError):
    def __init__(self, position: int, message: str, expected: tuple[str, ...] = ()):
        detail = f" (expected one of: {', '.join(expected)})" if expected else ""
        super().__init__(f"at offset {position}: {message}{detail}")
        self.position = position
        self.expected = expected


class DuplicateConstraintName(OclError):
    pass


class UnknownContextClass(OclError):
    pass


class _EvalTypeError(Exception):
    """Internal: surfaces as an Invalid verdict with a diagnostic."""


class _Undefined:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Undefined"


UNDEFINED = _Undefined()


@dataclass(frozen=True)
class ObjectRef:
    id: str


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Lit:
    value: object


@dataclass(frozen=True)
class SelfRef:
    pass


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Nav:
    source: object
    prop: str


@dataclass(frozen=True)
class Unary:
    op: str  # "not" | "neg"
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * / = <> < <= > >= and or implies
    left: object
    right: object


@dataclass(frozen=True)
class CollCall:
    source: object
    op: str
    var: str | None = None
    body: object | None = None
    arg: object | None = None


@dataclass(frozen=True)
class Constraint:
    context_class: str
    name: str | None
    body: object


# ---------------------------------------------------------------------------
# Lexer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>--[^\n]*)
  | (?P<real>\d+\.\d+)
  | (?P<int>\d+)
  | (?P<string>'[^']*')
  | (?P<ident>[A-Za-z_]\w*)
  | (?P<op><>|<=|>=|->|[=<>+\-*/().|,:])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    value: str
    pos: int


def _lex(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise OclSyntaxError(pos, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.cur
        self.i += 1
        return tok

    def accept(self, value: str) -> bool:
        if self.cur.value == value and self.cur.kind in ("op", "ident"):
            self.advance()
            return True
        return False

    def expect(self, value: str) -> _Token:
        if self.cur.value != value:
            raise OclSyntaxError(self.cur.pos, f"got {self.cur.value!r}", expected=(value,))
        return self.advance()

    def expect_ident(self) -> str:
        if self.cur.kind != "ident" or self.cur.value in _KEYWORDS:
            raise OclSyntaxError(self.cur.pos, f"got {self.cur.value!r}", expected=("identifier",))
        return self.advance().value

    # Declarations -----------------------------------------------------

    def parse_constraints(self) -> list[Constraint]:
        constraints = []
        names: set[str] = set()
        while self.cur.kind != "eof":
            self.expect("context")
            context = self.expect_ident()
            self.expect("inv")
            name = None
            if self.cur.kind == "ident" and self.cur.value not in _KEYWORDS:
                name = self.advance().value
                if name in names:
                    raise DuplicateConstraintName(f"constraint {name} declared twice")
                names.add(name)
            self.expect(":")
            constraints.append(Constraint(context, name, self.parse_expr()))
        return constraints

    # Expressions ------------------------------------------------------

    def parse_expr(self):
        return self.parse_implies()

    def parse_implies(self):
        node = self.parse_or()
        while self.accept("implies"):
            node = BinOp("implies", node, self.parse_or())
        return node

    def parse_or(self):
        node = self.parse_and()
        while self.accept("or"):
            node = BinOp("or", node, self.parse_and())
        return node

    def parse_and(self):
        node = self.parse_not()
        while self.accept("and"):
            node = BinOp("and", node, self.parse_not())
        return node

    def parse_not(self):
        if self.accept("not"):
            return Unary("not", self.parse_not())
        return self.parse_comparison()

    def parse_comparison(self):
        node = self.parse_additive()
        if self.cur.value in ("=", "<>", "<", "<=", ">", ">=") and self.cur.kind == "op":
            op = self.advance().value
            node = BinOp(op, node, self.parse_additive())
        return node

    def parse_additive(self):
        node = self.parse_multiplicative()
        while self.cur.kind == "op" and self.cur.value in ("+", "-"):
            op = self.advance().value
            node = BinOp(op, node, self.parse_multiplicative())
        return node

    def parse_multiplicative(self):
        node = self.parse_unary()
        while self.cur.kind == "op" and self.cur.value in ("*", "/"):
            op = self.advance().value
            node = BinOp(op, node, self.parse_unary())
        return node

    def parse_unary(self):
        if self.cur.kind == "op" and self.cur.value == "-":
            self.advance()
            return Unary("neg", self.parse_unary())
        return self.parse_postfix()

    def parse_postfix(self):
        node = self.parse_primary()
        while True:
            if self.accept("."):
                node = Nav(node, self.expect_ident())
            elif self.accept("->"):
                node = self.parse_collection_call(node)
            else:
                return node

    def parse_collection_call(self, source):
        op_tok = self.cur
        op = self.expect_ident()
        if op not in COLLECTION_OPS:
            raise OclSyntaxError(op_tok.pos, f"unknown collection operation {op!r}", expected=COLLECTION_OPS)
        self.expect("(")
        if op in ("size", "isEmpty", "notEmpty", "sum"):
            self.expect(")")
            return CollCall(source, op)
        if op == "includes":
            arg = self.parse_expr()
            self.expect(")")
            return CollCall(source, op, arg=arg)
        var = self.expect_ident()
        self.expect("|")
        body = self.parse_expr()
        self.expect(")")
        return CollCall(source, op, var=var, body=body)

    def parse_primary(self):
        tok = self.cur
        if tok.kind == "int":
            self.advance()
            return Lit(int(tok.value))
        if tok.kind == "real":
            self.advance()
            return Lit(float(tok.value))
        if tok.kind == "string":
            self.advance()
            return Lit(tok.value[1:-1])
        if tok.kind == "ident":
            if tok.value == "self":
                self.advance()
                return SelfRef()
            if tok.value == "true":
                self.advance()
                return Lit(True)
            if tok.value == "false":
                self.advance()
                return Lit(False)
            if tok.value in _KEYWORDS:
                raise OclSyntaxError(tok.pos, f"got keyword {tok.value!r}", expected=("primary expression",))
            self.advance()
            return Var(tok.value)
        if tok.kind == "op" and tok.value == "(":
            self.advance()
            node = self.parse_expr()
            self.expect(")")
            return node
        raise OclSyntaxError(tok.pos, f"got {tok.value!r}", expected=("primary expression",))


def parse_ocl(text: str) -> list[Constraint]:
    """Parse a constraint file into a list of constraints."""
    return _Parser(_lex(text)).parse_constraints()


def parse_expression(text: str):
    """Parse a single bare expression (testing / tooling convenience)."""
    parser = _Parser(_lex(text))
    node = parser.parse_expr()
    if parser.cur.kind != "eof":
        raise OclSyntaxError(parser.cur.pos, f"trailing input {parser.cur.value!r}")
    return node


def render_expr(node) -> str:
    """Deterministic fully-parenthesized rendering; parses back to the same AST."""
    if isinstance(node, Lit):
        if isinstance(node.value, bool):
            return "true" if node.value else "false"
        if isinstance(node.value, str):
            return f"'{node.value}'"
        return repr(node.value)
    if isinstance(node, SelfRef):
        return "self"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Nav):
        return f"{render_expr(node.source)}.{node.prop}"
    if isinstance(node, Unary):
        if node.op == "not":
            return f"(not {render_expr(node.operand)})"
        return f"(-{render_expr(node.operand)})"
    if isinstance(node, BinOp):
        return f"({render_expr(node.left)} {node.op} {render_expr(node.right)})"
    if isinstance(node, CollCall):
        src = render_expr(node.source)
        if node.op in ("size", "isEmpty", "notEmpty", "sum"):
            return f"{src}->{node.op}()"
        if node.op == "includes":
            return f"{src}->includes({render_expr(node.arg)})"
        return f"{src}->{node.op}({node.var} | {render_expr(node.body)})"
    raise TypeError(f"not an expression node: {node!r}")


def render_constraints(constraints: list[Constraint]) -> str:
    lines = []
    for c in constraints:
        name = f" {c.name}" if c.name else ""
        lines.append(f"context {c.context_class} inv{name}: {render_expr(c.body)}")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class Verdict:
    constraint_name: str | None
    context_class: str
    object_id: str
    outcome: str  # PASS | FAIL | INVALID
    diagnostic: str | None = None


@dataclass
class CheckReport:
    verdicts: list[Verdict]
    summary: dict[str, int] = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(v.outcome == PASS for v in self.verdicts)

    def format(self) -> str:
        lines = []
        for v in self.verdicts:
            name = v.constraint_name or "<anonymous>"
            line = f"{name} @ {v.object_id}: {v.outcome}"
            if v.diagnostic:
                line += f" ({v.diagnostic})"
            lines.append(line)
        counts = ", ".join(f"{k}={self.summary.get(k, 0)}" for k in (PASS, FAIL, INVALID))
        lines.append(f"summary: {counts}")
        return "\n".join(lines) + "\n"


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class _Evaluator:
    def __init__(self, inst: ModelInstance, mm: MetaModel):
        self.inst = inst
        self.mm = mm

    def eval(self, node, env: dict):
        if isinstance(node, Lit):
            return node.value
        if isinstance(node, SelfRef):
            return env["self"]
        if isinstance(node, Var):
            if node.name not in env:
                raise _EvalTypeError(f"unbound variable {node.name}")
            return env[node.name]
        if isinstance(node, Nav):
            return self._navigate(self.eval(node.source, env), node.prop)
        if isinstance(node, Unary):
            return self._unary(node, env)
        if isinstance(node, BinOp):
            return self._binop(node, env)
        if isinstance(node, CollCall):
            return self._collection(node, env)
        raise _EvalTypeError(f"not an expression node: {node!r}")

    def _navigate(self, value, prop: str):
        if value is UNDEFINED:
            return UNDEFINED
        if not isinstance(value, ObjectRef):
            raise _EvalTypeError(f"navigation .{prop} on non-object value {value!r}")
        obj = self.inst.objects.get(value.id)
        if obj is None:
            return UNDEFINED
        if obj.class_name in self.mm.classes:
            attrs = self.mm.all_attributes(obj.class_name)
            refs = self.mm.all_references(obj.class_name)
        else:
            attrs, refs = {}, {}
        if prop in attrs:
            raw = obj.attrs.get(prop)
            if raw is None:
                return UNDEFINED
            expected = {"Int": int, "Real": float, "Bool": bool, "String": str}[attrs[prop].type]
            if expected is bool:
                return raw if isinstance(raw, bool) else UNDEFINED
            if isinstance(raw, expected) and not isinstance(raw, bool):
                return raw
            return UNDEFINED  # uncoerced raw value
        if prop in refs:
            ref = refs[prop]
            targets = obj.links.get(prop, [])
            if ref.upper == 1:
                if not targets:
                    return UNDEFINED
                return ObjectRef(targets[0])
            return [ObjectRef(t) for t in targets]
        return UNDEFINED

    def _unary(self, node: Unary, env: dict):
        value = self.eval(node.operand, env)
        if value is UNDEFINED:
            return UNDEFINED
        if node.op == "not":
            if isinstance(value, bool):
                return not value
            raise _EvalTypeError(f"'not' on non-Boolean {value!r}")
        if _is_number(value):
            return -value
        raise _EvalTypeError(f"unary '-' on non-number {value!r}")

    def _binop(self, node: BinOp, env: dict):
        op = node.op
        if op in ("and", "or", "implies"):
            return self._logic(op, node.left, node.right, env)
        left = self.eval(node.left, env)
        right = self.eval(node.right, env)
        if left is UNDEFINED or right is UNDEFINED:
            return UNDEFINED
        if op in ("=", "<>"):
            eq = self._equal(left, right)
            return eq if op == "=" else not eq
        if op in ("<", "<=", ">", ">="):
            if not (_is_number(left) and _is_number(right)):
                raise _EvalTypeError(f"ordering {op!r} on non-numbers {left!r}, {right!r}")
            return {"<": left < right, "<=": left <= right, ">": left > right, ">=": left >= right}[op]
        if not (_is_number(left) and _is_number(right)):
            raise _EvalTypeError(f"arithmetic {op!r} on non-numbers {left!r}, {right!r}")
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        if right == 0:
            return UNDEFINED
        return left / right

    def _logic(self, op: str, left_node, right_node, env: dict):
        left = self.eval(left_node, env)
        if not isinstance(left, bool) and left is not UNDEFINED:
            raise _EvalTypeError(f"{op!r} on non-Boolean {left!r}")
        right = self.eval(right_node, env)
        if not isinstance(right, bool) and right is not UNDEFINED:
            raise _EvalTypeError(f"{op!r} on non-Boolean {right!r}")
        return kleene(op, left, right)

    def _equal(self, left, right) -> bool:
        if _is_number(left) and _is_number(right):
            return float(left) == float(right)
        if isinstance(left, bool) and isinstance(right, bool):
            return left == right
        if isinstance(left, str) and isinstance(right, str):
            return left == right
        if isinstance(left, ObjectRef) and isinstance(right, ObjectRef):
            return left.id == right.id
        if isinstance(left, list) and isinstance(right, list):
            return len(left) == len(right) and all(
                self._equal(a, b) for a, b in zip(left, right)
            )
        return False  # mismatched kinds are unequal, not an error

    def _collection(self, node: CollCall, env: dict):
        source = self.eval(node.source, env)
        if source is UNDEFINED:
            return UNDEFINED
        if not isinstance(source, list):
            raise _EvalTypeError(f"->{node.op}() on non-collection {source!r}")
        if node.op == "size":
            return len(source)
        if node.op == "isEmpty":
            return not source
        if node.op == "notEmpty":
            return bool(source)
        if node.op == "sum":
            total: int | float = 0
            for item in source:
                if item is UNDEFINED:
                    return UNDEFINED
                if not _is_number(item):
                    raise _EvalTypeError(f"sum() over non-number {item!r}")
                total += item
            return total
        if node.op == "includes":
            arg = self.eval(node.arg, env)
            if arg is UNDEFINED:
                return UNDEFINED
            return any(self._equal(item, arg) for item in source)

        results = []
        for item in source:
            results.append(self.eval(node.body, {**env, node.var: item}))
        if node.op == "forAll":
            if any(r is False for r in results):
                return False
            if any(r is UNDEFINED for r in results):
                return UNDEFINED
            if any(not isinstance(r, bool) for r in results):
                raise _EvalTypeError("forAll body yielded a non-Boolean")
            return True
        if node.op == "exists":
            if any(r is True for r in results):
                return True
            if any(r is UNDEFINED for r in results):
                return UNDEFINED
            if any(not isinstance(r, bool) for r in results):
                raise _EvalTypeError("exists body yielded a non-Boolean")
            return False
        if node.op == "select":
            if any(r is UNDEFINED for r in results):
                return UNDEFINED
            if any(not isinstance(r, bool) for r in results):
                raise _EvalTypeError("select body yielded a non-Boolean")
            return [item for item, keep in zip(source, results) if keep]
        # collect
        if any(r is UNDEFINED for r in results):
            return UNDEFINED
        return results


def kleene(op: str, left, right):
    """Three-valued logic tables shared by evaluator and tests."""
    if op == "and":
        if left is False or right is False:
            return False
        if left is UNDEFINED or right is UNDEFINED:
            return UNDEFINED
        return True
    if op == "or":
        if left is True or right is True:
            return True
        if left is UNDEFINED or right is UNDEFINED:
            return UNDEFINED
        return False
    if op == "implies":
        if left is False:
            return True
        if left is True:
            return right
        return True if right is True else UNDEFINED
    raise ValueError(op)


def evaluate(constraint: Constraint, object_id: str, inst: ModelInstance, mm: MetaModel) -> Verdict:
    """Evaluate one constraint on one object; always returns a verdict."""
    try:
        value = _Evaluator(inst, mm).eval(constraint.body, {"self": ObjectRef(object_id)})
    except _EvalTypeError as exc:
        return Verdict(constraint.name, constraint.context_class, object_id, INVALID, str(exc))
    if value is True:
        return Verdict(constraint.name, constraint.context_class, object_id, PASS)
    if value is False:
        return Verdict(constraint.name, constraint.context_class, object_id, FAIL)
    if value is UNDEFINED:
        return Verdict(constraint.name, constraint.context_class, object_id, INVALID)
    return Verdict(
        constraint.name,
        constraint.context_class,
        object_id,
        INVALID,
        f"constraint body yielded non-Boolean {value!r}",
    )


def check_all(constraints: list[Constraint], inst: ModelInstance, mm: MetaModel) -> CheckReport:
    """Evaluate every constraint on every instance object of its context class.

    Report order: constraint order, then object id.
    """
    verdicts = []
    for constraint in constraints:
        if constraint.context_class not in mm.classes:
            raise UnknownContextClass(
                f"constraint context {constraint.context_class} not in metamodel"
            )
        for oid in sorted(inst.objects):
            if mm.conforms(inst.objects[oid].class_name, constraint.context_class):
                verdicts.append(evaluate(constraint, oid, inst, mm))
    summary: dict[str, int] = {}
    for v in verdicts:
        summary[v.outcome] = summary.get(v.outcome, 0) + 1
    return CheckReport(verdicts, summary)
