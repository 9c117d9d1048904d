"""Tokenizer and statement-level parser for a Java-like subset.

The subset covers one method per input: declarations (with optional
initializer), assignments (plain, compound, increment/decrement), if/else,
while, classic 3-part for, switch/case, try/catch/finally, invocation
statements, return, throw, break/continue. Expressions allow identifiers,
literals, parenthesized binary/unary/relational/bitwise operators, call
expressions (including ``new T(...)``), and field access as an opaque
dotted identifier. Lambdas, ternaries, arrays, and generics are rejected.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import (
    ParseError,
    UnsupportedConstruct,
    UnterminatedComment,
    UnterminatedStringLiteral,
)


class TokenKind(enum.Enum):
    IDENTIFIER = "identifier"
    KEYWORD = "keyword"
    LITERAL = "literal"
    OPERATOR = "operator"
    PUNCTUATION = "punctuation"


@dataclass(frozen=True)
class Token:
    text: str
    kind: TokenKind
    line: int = 0
    col: int = 0


KEYWORDS = {
    "if", "else", "while", "for", "switch", "case", "default",
    "try", "catch", "finally", "return", "break", "continue", "throw", "new",
    "int", "long", "short", "byte", "char", "float", "double", "boolean", "void",
    "public", "private", "protected", "static", "final",
}

TYPE_KEYWORDS = {"int", "long", "short", "byte", "char", "float", "double", "boolean", "void"}

WORD_LITERALS = {"true", "false", "null"}

# longest match first
OPERATORS = [
    ">>>=", "<<=", ">>=", ">>>", "==", "!=", "<=", ">=", "&&", "||",
    "++", "--", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>",
    "->", "+", "-", "*", "/", "%", "=", "<", ">", "!", "&", "|", "^", "~", "?", ":",
]

PUNCTUATION = "(){}[];,."

ASSIGN_OPS = {"=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>="}

RELATIONAL_OPS = {"==", "!=", "<", ">", "<=", ">="}
BITWISE_OPS = {"&", "|", "^", "~", "<<", ">>", ">>>"}
ARITH_OPS = {"+", "-", "*", "/", "%"}
LOGICAL_OPS = {"&&", "||"}


class OperatorClass(enum.Enum):
    BINARY = "binary"
    UNARY = "unary"
    RELATIONAL = "relational"
    BITWISE = "bitwise"


def classify_operator(op: str, unary: bool = False) -> OperatorClass | None:
    if unary:
        return OperatorClass.BITWISE if op == "~" else OperatorClass.UNARY
    if op in RELATIONAL_OPS:
        return OperatorClass.RELATIONAL
    if op in BITWISE_OPS:
        return OperatorClass.BITWISE
    if op in ARITH_OPS or op in LOGICAL_OPS:
        return OperatorClass.BINARY
    return None


def _is_ident_start(c: str) -> bool:
    return c.isalpha() or c in "_$"


def _is_ident_char(c: str) -> bool:
    return c.isalnum() or c in "_$"


def tokenize(source: str) -> list[Token]:
    """Lex source into tokens, dropping whitespace and comments.

    Dotted chains like ``a.b.c`` are merged into a single opaque
    identifier token, so field access behaves as one variable name
    downstream.
    """
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)

    def advance(k: int):
        nonlocal i, line, col
        for _ in range(k):
            if source[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = source[i]
        if c.isspace():
            advance(1)
            continue
        if source.startswith("//", i):
            while i < n and source[i] != "\n":
                advance(1)
            continue
        if source.startswith("/*", i):
            start_line, start_col = line, col
            advance(2)
            while i < n and not source.startswith("*/", i):
                advance(1)
            if i >= n:
                raise UnterminatedComment(f"block comment opened at line {start_line} never closes")
            advance(2)
            continue
        if c in "\"'":
            quote = c
            start_line, start_col = line, col
            j = i + 1
            while j < n and source[j] != quote:
                if source[j] == "\\":
                    j += 1
                if source[j] == "\n":
                    break
                j += 1
            if j >= n or source[j] != quote:
                raise UnterminatedStringLiteral(
                    f"string literal opened at line {start_line} never closes"
                )
            text = source[i : j + 1]
            tokens.append(Token(text, TokenKind.LITERAL, start_line, start_col))
            advance(len(text))
            continue
        if c.isdigit():
            j = i
            while j < n and (source[j].isdigit() or source[j] == "_"):
                j += 1
            if j < n and source[j] == "." and j + 1 < n and source[j + 1].isdigit():
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            if j < n and source[j] in "fFdDlL":
                j += 1
            text = source[i:j]
            tokens.append(Token(text, TokenKind.LITERAL, line, col))
            advance(len(text))
            continue
        if _is_ident_start(c):
            j = i
            while j < n and _is_ident_char(source[j]):
                j += 1
            text = source[i:j]
            if text in KEYWORDS:
                kind = TokenKind.KEYWORD
            elif text in WORD_LITERALS:
                kind = TokenKind.LITERAL
            else:
                kind = TokenKind.IDENTIFIER
            tokens.append(Token(text, kind, line, col))
            advance(len(text))
            continue
        matched = None
        for op in OPERATORS:
            if source.startswith(op, i):
                matched = op
                break
        if matched is not None:
            tokens.append(Token(matched, TokenKind.OPERATOR, line, col))
            advance(len(matched))
            continue
        if c in PUNCTUATION:
            tokens.append(Token(c, TokenKind.PUNCTUATION, line, col))
            advance(1)
            continue
        raise ParseError(f"unexpected character {c!r}", line, col)

    return _merge_dotted(tokens)


def _merge_dotted(tokens: list[Token]) -> list[Token]:
    out: list[Token] = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok.kind is TokenKind.IDENTIFIER:
            text = tok.text
            j = i + 1
            while (
                j + 1 < len(tokens)
                and tokens[j].text == "."
                and tokens[j + 1].kind is TokenKind.IDENTIFIER
            ):
                text += "." + tokens[j + 1].text
                j += 2
            out.append(Token(text, TokenKind.IDENTIFIER, tok.line, tok.col))
            i = j
        else:
            out.append(tok)
            i += 1
    return out


# --- expression AST (internal; drives defs/uses, operator lists, roles) ---


@dataclass
class Name:
    ident: str


@dataclass
class Lit:
    text: str


@dataclass
class Call:
    callee: str  # dotted method name, or "new T"
    args: list


@dataclass
class Unary:
    op: str
    operand: object


@dataclass
class Binary:
    op: str
    left: object
    right: object


def expr_vars(e, out: list[str] | None = None) -> list[str]:
    """Variable names in first-occurrence (depth-first) order."""
    if out is None:
        out = []
    if isinstance(e, Name):
        if e.ident not in out:
            out.append(e.ident)
    elif isinstance(e, Unary):
        expr_vars(e.operand, out)
    elif isinstance(e, Binary):
        expr_vars(e.left, out)
        expr_vars(e.right, out)
    elif isinstance(e, Call):
        for a in e.args:
            expr_vars(a, out)
    return out


def expr_operators(e, out: list[OperatorClass] | None = None) -> list[OperatorClass]:
    if out is None:
        out = []
    if isinstance(e, Unary):
        cls = classify_operator(e.op, unary=True)
        if cls:
            out.append(cls)
        expr_operators(e.operand, out)
    elif isinstance(e, Binary):
        cls = classify_operator(e.op)
        if cls:
            out.append(cls)
        expr_operators(e.left, out)
        expr_operators(e.right, out)
    elif isinstance(e, Call):
        for a in e.args:
            expr_operators(a, out)
    return out


class StatementKind(enum.Enum):
    ENTRY = "entry"
    ASSIGNMENT = "assignment"
    DECLARATION = "declaration"
    IF = "if"
    WHILE = "while"
    FOR = "for"
    SWITCH = "switch"
    TRY_CATCH = "try_catch"
    INVOCATION = "invocation"
    RETURN = "return"
    OTHER = "other"


CONTROL_KINDS = {
    StatementKind.IF,
    StatementKind.WHILE,
    StatementKind.FOR,
    StatementKind.SWITCH,
    StatementKind.TRY_CATCH,
}

# kinds whose predicate chooses among alternatives (paper-style control nodes)
PREDICATE_KINDS = {
    StatementKind.IF,
    StatementKind.WHILE,
    StatementKind.FOR,
    StatementKind.SWITCH,
}


class Origin(enum.Enum):
    BUGGY = "buggy"
    PATCHED = "patched"
    CONTEXT = "context"


@dataclass
class Statement:
    index: int
    kind: StatementKind
    text: str
    tokens: list[Token]
    defs: set[str]
    uses: set[str]
    operators: list[OperatorClass]
    nesting_parent: int | None = None
    origin: Origin = Origin.CONTEXT
    line: int = 0
    nesting_arm: int = 0
    exprs: list = field(default_factory=list)
    lhs: str | None = None
    has_initializer: bool = False
    subkind: str = ""  # "decltype:T", "catchtype:T", "break", "continue", "throw"
    catch_of: int | None = None  # for catch clauses, index of the owning try


@dataclass
class MethodAst:
    name: str
    parameters: list[tuple[str, str]]  # (name, declared type)
    statements: list[Statement]

    def children_of(self, idx: int) -> list[Statement]:
        return [s for s in self.statements if s.nesting_parent == idx]

    def declared_types(self) -> dict[str, str]:
        """Variable name -> declared type, from parameters and declarations."""
        types = {name: ty for name, ty in self.parameters}
        for s in self.statements:
            if s.kind in (StatementKind.DECLARATION, StatementKind.FOR) and s.lhs:
                if s.subkind.startswith("decltype:"):
                    types.setdefault(s.lhs, s.subkind.split(":", 1)[1])
            if s.subkind.startswith("catchtype:") and s.lhs:
                types.setdefault(s.lhs, s.subkind.split(":", 1)[1])
        return types


class _Parser:
    def __init__(self, tokens: list[Token], source: str):
        self.toks = tokens
        self.pos = 0
        self.statements: list[Statement] = []

    def peek(self, off: int = 0) -> Token | None:
        i = self.pos + off
        return self.toks[i] if i < len(self.toks) else None

    def at(self, text: str, off: int = 0) -> bool:
        t = self.peek(off)
        return t is not None and t.text == text

    def next(self) -> Token:
        t = self.peek()
        if t is None:
            last = self.toks[-1] if self.toks else None
            raise ParseError("unexpected end of input", last.line if last else 1, 0)
        self.pos += 1
        return t

    def expect(self, text: str) -> Token:
        t = self.peek()
        if t is None or t.text != text:
            got = t.text if t else "end of input"
            raise ParseError(
                f"expected {text!r}, got {got!r}",
                t.line if t else 0, t.col if t else 0,
            )
        return self.next()

    # --- method level ---

    def parse_method(self) -> MethodAst:
        while self.peek() and self.peek().text in ("public", "private", "protected", "static", "final"):
            self.next()
        sig_start = self.pos
        self._parse_type("return type")
        name_tok = self.next()
        if name_tok.kind is not TokenKind.IDENTIFIER:
            raise ParseError(f"expected method name, got {name_tok.text!r}",
                             name_tok.line, name_tok.col)
        self.expect("(")
        params: list[tuple[str, str]] = []
        if not self.at(")"):
            while True:
                ty = self._parse_type("parameter type")
                p = self.next()
                if p.kind is not TokenKind.IDENTIFIER:
                    raise ParseError(f"expected parameter name, got {p.text!r}", p.line, p.col)
                params.append((p.text, ty))
                if self.at(","):
                    self.next()
                    continue
                break
        close = self.expect(")")

        if params:
            header_toks = self.toks[sig_start : self.pos]
            entry = Statement(
                index=0,
                kind=StatementKind.ENTRY,
                text=_render(header_toks),
                tokens=header_toks,
                defs={p for p, _ in params},
                uses=set(),
                operators=[],
                line=header_toks[0].line if header_toks else 1,
            )
            self.statements.append(entry)

        self.expect("{")
        self._parse_block(parent=None, arm=0)
        self.expect("}")
        if self.peek() is not None:
            t = self.peek()
            raise ParseError(f"trailing tokens after method body: {t.text!r}", t.line, t.col)
        return MethodAst(name=name_tok.text, parameters=params, statements=self.statements)

    def _parse_type(self, what: str) -> str:
        t = self.next()
        if t.kind is TokenKind.KEYWORD and t.text in TYPE_KEYWORDS:
            base = t.text
        elif t.kind is TokenKind.IDENTIFIER:
            base = t.text
        else:
            raise ParseError(f"expected {what}, got {t.text!r}", t.line, t.col)
        while self.at("["):
            self.next()
            self.expect("]")
            base += "[]"
        return base

    # --- statements ---

    def _parse_block(self, parent: int | None, arm: int):
        while self.peek() is not None and not self.at("}"):
            if self.at("case") or self.at("default"):
                break
            self._parse_statement(parent, arm)

    def _parse_body(self, parent: int, arm: int):
        if self.at("{"):
            self.next()
            self._parse_block(parent, arm)
            self.expect("}")
        else:
            self._parse_statement(parent, arm)

    def _add(self, stmt: Statement) -> int:
        stmt.index = len(self.statements)
        self.statements.append(stmt)
        return stmt.index

    def _span_text(self, start: int) -> tuple[str, list[Token]]:
        toks = self.toks[start : self.pos]
        return _render(toks), toks

    def _parse_statement(self, parent: int | None, arm: int):
        t = self.peek()
        if t is None:
            raise ParseError("unexpected end of input in statement position", 0, 0)
        if t.text == "{":
            self.next()
            self._parse_block(parent, arm)
            self.expect("}")
            return
        if t.text == ";":
            self.next()
            return
        if t.text == "if":
            self._parse_if(parent, arm)
            return
        if t.text == "while":
            self._parse_while(parent, arm)
            return
        if t.text == "for":
            self._parse_for(parent, arm)
            return
        if t.text == "switch":
            self._parse_switch(parent, arm)
            return
        if t.text == "try":
            self._parse_try(parent, arm)
            return
        if t.text == "return":
            self._parse_return(parent, arm)
            return
        if t.text == "throw":
            self._parse_throw(parent, arm)
            return
        if t.text in ("break", "continue"):
            start = self.pos
            self.next()
            self.expect(";")
            text, toks = self._span_text(start)
            self._add(Statement(0, StatementKind.OTHER, text, toks, set(), set(), [],
                                parent, Origin.CONTEXT, t.line, arm, subkind=t.text))
            return
        if t.text in ("do", "lambda"):
            raise UnsupportedConstruct(f"{t.text!r} statements are outside the subset")
        if t.kind is TokenKind.KEYWORD and t.text in TYPE_KEYWORDS:
            self._parse_declaration(parent, arm)
            return
        if t.kind is TokenKind.IDENTIFIER:
            nxt = self.peek(1)
            if nxt is not None and (nxt.kind is TokenKind.IDENTIFIER or nxt.text == "["):
                self._parse_declaration(parent, arm)
                return
            self._parse_assign_or_call(parent, arm)
            return
        if t.text in ("++", "--"):
            self._parse_assign_or_call(parent, arm)
            return
        raise ParseError(f"cannot start a statement with {t.text!r}", t.line, t.col)

    def _parse_declaration(self, parent, arm, consume_semi=True) -> Statement:
        start = self.pos
        t0 = self.peek()
        ty = self._parse_type("declared type")
        name = self.next()
        if name.kind is not TokenKind.IDENTIFIER:
            raise ParseError(f"expected variable name, got {name.text!r}", name.line, name.col)
        exprs = []
        has_init = False
        if self.at("="):
            self.next()
            exprs.append(self._parse_expr())
            has_init = True
        if consume_semi:
            self.expect(";")
        text, toks = self._span_text(start)
        uses = set()
        ops: list[OperatorClass] = []
        for e in exprs:
            uses.update(expr_vars(e))
            ops.extend(expr_operators(e))
        stmt = Statement(0, StatementKind.DECLARATION, text, toks, {name.text}, uses, ops,
                         parent, Origin.CONTEXT, t0.line, arm, exprs=exprs, lhs=name.text,
                         has_initializer=has_init, subkind=f"decltype:{ty}")
        self._add(stmt)
        return stmt

    def _parse_assign_or_call(self, parent, arm, consume_semi=True) -> Statement:
        start = self.pos
        t0 = self.peek()
        if t0.text in ("++", "--"):
            op = self.next().text
            target = self.next()
            if target.kind is not TokenKind.IDENTIFIER:
                raise ParseError(f"expected variable after {op!r}", target.line, target.col)
            if consume_semi:
                self.expect(";")
            text, toks = self._span_text(start)
            stmt = Statement(0, StatementKind.ASSIGNMENT, text, toks, {target.text},
                             {target.text}, [OperatorClass.UNARY], parent, Origin.CONTEXT,
                             t0.line, arm, exprs=[Name(target.text)], lhs=target.text)
            self._add(stmt)
            return stmt

        name = self.next()
        nxt = self.peek()
        if nxt is not None and nxt.text == "(":
            call = self._parse_call_tail(name.text)
            if consume_semi:
                self.expect(";")
            text, toks = self._span_text(start)
            uses = set(expr_vars(call))
            ops = expr_operators(call)
            stmt = Statement(0, StatementKind.INVOCATION, text, toks, set(), uses, ops,
                             parent, Origin.CONTEXT, t0.line, arm, exprs=[call])
            self._add(stmt)
            return stmt
        if nxt is not None and nxt.text in ("++", "--"):
            self.next()
            if consume_semi:
                self.expect(";")
            text, toks = self._span_text(start)
            stmt = Statement(0, StatementKind.ASSIGNMENT, text, toks, {name.text},
                             {name.text}, [OperatorClass.UNARY], parent, Origin.CONTEXT,
                             t0.line, arm, exprs=[Name(name.text)], lhs=name.text)
            self._add(stmt)
            return stmt
        if nxt is not None and nxt.text in ASSIGN_OPS:
            op = self.next().text
            rhs = self._parse_expr()
            if consume_semi:
                self.expect(";")
            text, toks = self._span_text(start)
            uses = set(expr_vars(rhs))
            ops = expr_operators(rhs)
            if op != "=":
                # compound assignment reads the target too
                uses.add(name.text)
                base = op[:-1]
                cls = classify_operator(base)
                if cls:
                    ops = [cls] + ops
            stmt = Statement(0, StatementKind.ASSIGNMENT, text, toks, {name.text}, uses, ops,
                             parent, Origin.CONTEXT, t0.line, arm, exprs=[rhs], lhs=name.text)
            self._add(stmt)
            return stmt
        where = nxt if nxt is not None else name
        raise ParseError(
            f"expected assignment or call after {name.text!r}", where.line, where.col
        )

    def _parse_if(self, parent, arm):
        start = self.pos
        t0 = self.expect("if")
        self.expect("(")
        cond = self._parse_expr()
        self.expect(")")
        text, toks = self._span_text(start)
        stmt = Statement(0, StatementKind.IF, text, toks, set(), set(expr_vars(cond)),
                         expr_operators(cond), parent, Origin.CONTEXT, t0.line, arm,
                         exprs=[cond])
        idx = self._add(stmt)
        self._parse_body(idx, arm=0)
        if self.at("else"):
            self.next()
            if self.at("if"):
                self._parse_if(idx, arm=1)
            else:
                self._parse_body(idx, arm=1)

    def _parse_while(self, parent, arm):
        start = self.pos
        t0 = self.expect("while")
        self.expect("(")
        cond = self._parse_expr()
        self.expect(")")
        text, toks = self._span_text(start)
        stmt = Statement(0, StatementKind.WHILE, text, toks, set(), set(expr_vars(cond)),
                         expr_operators(cond), parent, Origin.CONTEXT, t0.line, arm,
                         exprs=[cond])
        idx = self._add(stmt)
        self._parse_body(idx, arm=0)

    def _parse_for(self, parent, arm):
        start = self.pos
        t0 = self.expect("for")
        self.expect("(")
        defs: set[str] = set()
        uses: set[str] = set()
        ops: list[OperatorClass] = []
        exprs = []
        lhs = None
        subkind = ""
        if not self.at(";"):
            t = self.peek()
            if (t.kind is TokenKind.KEYWORD and t.text in TYPE_KEYWORDS) or (
                t.kind is TokenKind.IDENTIFIER
                and self.peek(1) is not None
                and self.peek(1).kind is TokenKind.IDENTIFIER
            ):
                ini = self._parse_declaration(parent=None, arm=0, consume_semi=False)
                self.statements.pop()  # folded into the header, not a separate node
                defs |= ini.defs
                uses |= ini.uses
                ops.extend(ini.operators)
                exprs.extend(ini.exprs)
                lhs = ini.lhs
                subkind = ini.subkind
            else:
                ini = self._parse_assign_or_call(parent=None, arm=0, consume_semi=False)
                self.statements.pop()
                defs |= ini.defs
                uses |= ini.uses
                ops.extend(ini.operators)
                exprs.extend(ini.exprs)
                lhs = ini.lhs
        self.expect(";")
        if not self.at(";"):
            cond = self._parse_expr()
            uses |= set(expr_vars(cond))
            ops.extend(expr_operators(cond))
            exprs.append(cond)
        self.expect(";")
        if not self.at(")"):
            upd = self._parse_assign_or_call(parent=None, arm=0, consume_semi=False)
            self.statements.pop()
            defs |= upd.defs
            uses |= upd.uses
            ops.extend(upd.operators)
            exprs.extend(upd.exprs)
        self.expect(")")
        text, toks = self._span_text(start)
        stmt = Statement(0, StatementKind.FOR, text, toks, defs, uses, ops, parent,
                         Origin.CONTEXT, t0.line, arm, exprs=exprs, lhs=lhs, subkind=subkind)
        idx = self._add(stmt)
        self._parse_body(idx, arm=0)

    def _parse_switch(self, parent, arm):
        start = self.pos
        t0 = self.expect("switch")
        self.expect("(")
        subject = self._parse_expr()
        self.expect(")")
        text, toks = self._span_text(start)
        stmt = Statement(0, StatementKind.SWITCH, text, toks, set(), set(expr_vars(subject)),
                         expr_operators(subject), parent, Origin.CONTEXT, t0.line, arm,
                         exprs=[subject])
        idx = self._add(stmt)
        self.expect("{")
        arm_no = 0
        while not self.at("}"):
            if self.at("case"):
                self.next()
                lab = self.next()
                if lab.kind is not TokenKind.LITERAL:
                    raise ParseError(f"case label must be a literal, got {lab.text!r}",
                                     lab.line, lab.col)
                self.expect(":")
            elif self.at("default"):
                self.next()
                self.expect(":")
            else:
                t = self.peek()
                raise ParseError(f"expected 'case' or 'default', got {t.text!r}", t.line, t.col)
            self._parse_block(idx, arm_no)
            arm_no += 1
        self.expect("}")

    def _parse_try(self, parent, arm):
        start = self.pos
        t0 = self.expect("try")
        text, toks = self._span_text(start)
        stmt = Statement(0, StatementKind.TRY_CATCH, text, toks, set(), set(), [],
                         parent, Origin.CONTEXT, t0.line, arm)
        idx = self._add(stmt)
        self.expect("{")
        self._parse_block(idx, arm=0)
        self.expect("}")
        saw_catch = False
        while self.at("catch"):
            saw_catch = True
            cstart = self.pos
            c0 = self.next()
            self.expect("(")
            ty = self._parse_type("exception type")
            var = self.next()
            if var.kind is not TokenKind.IDENTIFIER:
                raise ParseError(f"expected exception variable, got {var.text!r}",
                                 var.line, var.col)
            self.expect(")")
            ctext, ctoks = self._span_text(cstart)
            catch_stmt = Statement(0, StatementKind.TRY_CATCH, ctext, ctoks, {var.text},
                                   set(), [], parent, Origin.CONTEXT, c0.line, arm,
                                   lhs=var.text, subkind=f"catchtype:{ty}", catch_of=idx)
            cidx = self._add(catch_stmt)
            self.expect("{")
            self._parse_block(cidx, arm=0)
            self.expect("}")
        if self.at("finally"):
            self.next()
            self.expect("{")
            self._parse_block(idx, arm=1)
            self.expect("}")
        elif not saw_catch:
            t = self.peek()
            raise ParseError("try without catch or finally",
                             t.line if t else t0.line, t.col if t else 0)

    def _parse_return(self, parent, arm):
        start = self.pos
        t0 = self.expect("return")
        exprs = []
        uses: set[str] = set()
        ops: list[OperatorClass] = []
        if not self.at(";"):
            e = self._parse_expr()
            exprs.append(e)
            uses = set(expr_vars(e))
            ops = expr_operators(e)
        self.expect(";")
        text, toks = self._span_text(start)
        self._add(Statement(0, StatementKind.RETURN, text, toks, set(), uses, ops,
                            parent, Origin.CONTEXT, t0.line, arm, exprs=exprs))

    def _parse_throw(self, parent, arm):
        start = self.pos
        t0 = self.expect("throw")
        e = self._parse_expr()
        self.expect(";")
        text, toks = self._span_text(start)
        self._add(Statement(0, StatementKind.OTHER, text, toks, set(), set(expr_vars(e)),
                            expr_operators(e), parent, Origin.CONTEXT, t0.line, arm,
                            exprs=[e], subkind="throw"))

    # --- expressions (precedence climbing) ---

    _LEVELS = [
        {"||"}, {"&&"}, {"|"}, {"^"}, {"&"},
        {"==", "!="}, {"<", ">", "<=", ">="},
        {"<<", ">>", ">>>"}, {"+", "-"}, {"*", "/", "%"},
    ]

    def _parse_expr(self, level: int = 0):
        if level == len(self._LEVELS):
            return self._parse_unary()
        left = self._parse_expr(level + 1)
        while True:
            t = self.peek()
            if t is None or t.text not in self._LEVELS[level]:
                return left
            op = self.next().text
            right = self._parse_expr(level + 1)
            left = Binary(op, left, right)

    def _parse_unary(self):
        t = self.peek()
        if t is not None and t.text in ("!", "~", "-", "+"):
            self.next()
            return Unary(t.text, self._parse_unary())
        if t is not None and t.text in ("++", "--"):
            raise UnsupportedConstruct("increment/decrement inside expressions is outside the subset")
        return self._parse_primary()

    def _parse_primary(self):
        t = self.peek()
        if t is None:
            raise ParseError("unexpected end of input in expression", 0, 0)
        if t.text == "(":
            self.next()
            inner = self._parse_expr()
            self.expect(")")
            self._reject_postfix()
            return inner
        if t.text == "new":
            self.next()
            ty = self._parse_type("constructed type")
            self.expect("(")
            args = self._parse_args()
            return Call(f"new {ty}", args)
        if t.kind is TokenKind.LITERAL:
            self.next()
            return Lit(t.text)
        if t.kind is TokenKind.IDENTIFIER:
            self.next()
            if self.at("("):
                call = self._parse_call_tail(t.text)
                self._reject_postfix()
                return call
            self._reject_postfix()
            return Name(t.text)
        if t.text == "?":
            raise UnsupportedConstruct("ternary expressions are outside the subset")
        if t.text == "[":
            raise UnsupportedConstruct("array indexing is outside the subset")
        if t.text == "->":
            raise UnsupportedConstruct("lambda expressions are outside the subset")
        raise ParseError(f"unexpected token {t.text!r} in expression", t.line, t.col)

    def _parse_call_tail(self, callee: str) -> Call:
        self.expect("(")
        return Call(callee, self._parse_args())

    def _parse_args(self) -> list:
        args = []
        if not self.at(")"):
            while True:
                args.append(self._parse_expr())
                if self.at(","):
                    self.next()
                    continue
                break
        self.expect(")")
        return args

    def _reject_postfix(self):
        t = self.peek()
        if t is None:
            return
        if t.text == "[":
            raise UnsupportedConstruct("array indexing is outside the subset")
        if t.text == "->":
            raise UnsupportedConstruct("lambda expressions are outside the subset")
        if t.text == "?":
            raise UnsupportedConstruct("ternary expressions are outside the subset")
        if t.text == ".":
            raise UnsupportedConstruct("field access on a call or parenthesized result is outside the subset")


def _render(tokens: list[Token]) -> str:
    return " ".join(t.text for t in tokens)


def parse_method(source: str) -> MethodAst:
    """Parse one method in the subset grammar into a statement list."""
    tokens = tokenize(source)
    if not tokens:
        raise ParseError("empty input", 1, 1)
    parser = _Parser(tokens, source)
    ast = parser.parse_method()
    for i, s in enumerate(ast.statements):
        assert s.index == i
    return ast
