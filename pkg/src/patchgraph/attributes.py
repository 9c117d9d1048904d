"""Node attribute extraction and fixed-width encoding.

Every node row uses the same 47-slot layout (schema version 1); slots
outside a node's category stay zero.

= ======================= =============================================
slot  segment               content
= ======================= =============================================
0     patch                 edit distance (token-frequency L1, scalar)
1     patch                 entropy score (max line surprisal, bits)
2-4   patch                 repair action one-hot (add, delete, replace)
5-8   patch                 anti-pattern bits (see AntiPattern)
9-18  context               distance-to-patch one-hot 0..8 + unreachable
19-22 context               statement type one-hot (assign, try, call, return)
23-26 context               operator multi-hot (binary, unary, rel, bitwise)
27-30 control               control type one-hot (if, switch, while, for)
31    control               nested-control bit
32-37 variable              declared type one-hot (int, float, double,
                            bool, string, other)
38-46 variable              role one-hot (math l/r, relational l/r,
                            assign target, call arg, return value,
                            condition operand, plain)
= ======================= =============================================
"""

from __future__ import annotations

import enum
import math
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BothEmpty,
    EmptyLine,
    NoPatchNode,
    VariableNotInStatement,
)
from .graph import Apsg, NodeCategory, VarSide
from .parser import (
    ARITH_OPS,
    BITWISE_OPS,
    LOGICAL_OPS,
    RELATIONAL_OPS,
    Binary,
    Call,
    Name,
    OperatorClass,
    Statement,
    StatementKind,
    TokenKind,
    Unary,
    tokenize,
)

SCHEMA_VERSION = 1
ATTR_WIDTH = 47
DIST_MAX = 8

_SLOT_EDIT = 0
_SLOT_ENTROPY = 1
_SLOT_REPAIR = 2  # +3
_SLOT_ANTI = 5  # +4
_SLOT_DIST = 9  # +10 (0..8, unreachable)
_SLOT_STMT_TYPE = 19  # +4
_SLOT_OPS = 23  # +4
_SLOT_CONTROL = 27  # +4
_SLOT_NESTED = 31
_SLOT_VARTYPE = 32  # +6
_SLOT_ROLE = 38  # +9


class RepairAction(enum.Enum):
    ADDITION = 0
    DELETION = 1
    REPLACEMENT = 2


class AntiPattern(enum.IntFlag):
    REMOVES_CONTROL_STATEMENT = 1
    REMOVES_WHOLE_STATEMENT_ONLY = 2
    MUTATES_RETURN_TO_CONSTANT = 4
    INSERTS_TRIVIAL_GUARD_RETURN = 8


class VariableRole(enum.Enum):
    MATH_OPERATOR_LEFT = 0
    MATH_OPERATOR_RIGHT = 1
    RELATIONAL_LEFT = 2
    RELATIONAL_RIGHT = 3
    ASSIGN_TARGET = 4
    CALL_ARGUMENT = 5
    RETURN_VALUE = 6
    CONDITION_OPERAND = 7
    PLAIN = 8


_VARTYPE_SLOTS = {"int": 0, "float": 1, "double": 2, "boolean": 3, "bool": 3,
                  "String": 4, "string": 4}

_CONTROL_SLOTS = {StatementKind.IF: 0, StatementKind.SWITCH: 1,
                  StatementKind.WHILE: 2, StatementKind.FOR: 3}

_OPCLASS_SLOTS = {OperatorClass.BINARY: 0, OperatorClass.UNARY: 1,
                  OperatorClass.RELATIONAL: 2, OperatorClass.BITWISE: 3}


def _lex_lines(lines) -> list[list[str]]:
    return [[t.text for t in tokenize(line)] for line in lines]


def _flat_tokens(lines) -> list[str]:
    return [t for line in _lex_lines(lines) for t in line]


# --- per-patch attributes ---


def edit_distance(buggy_lines, patched_lines) -> float:
    """L1 distance between the token-frequency vectors of both sides."""
    cb = Counter(_flat_tokens(buggy_lines))
    cp = Counter(_flat_tokens(patched_lines))
    keys = set(cb) | set(cp)
    return float(sum(abs(cb[k] - cp[k]) for k in keys))


@dataclass
class EntropyModel:
    """Laplace-smoothed unigram token model fit on method-context text.

    Probabilities cover the observed vocabulary plus an UNK bucket;
    surprisal is measured in bits.
    """

    counts: Counter = field(default_factory=Counter)
    total: int = 0
    smoothing: float = 1.0
    fit_record_ids: frozenset = frozenset()

    @classmethod
    def fit(cls, records, smoothing: float = 1.0) -> "EntropyModel":
        counts: Counter = Counter()
        total = 0
        for rec in records:
            for tok in tokenize(rec.method_source()):
                counts[tok.text] += 1
                total += 1
        return cls(counts=counts, total=total, smoothing=smoothing,
                   fit_record_ids=frozenset(r.id for r in records))

    def probability(self, token: str) -> float:
        vocab = len(self.counts)
        denom = self.total + self.smoothing * (vocab + 1)
        return (self.counts.get(token, 0) + self.smoothing) / denom

    def surprisal(self, token: str) -> float:
        return -math.log2(self.probability(token))


def entropy_score(lines_tokens: list[list[str]], model: EntropyModel) -> float:
    """Max over lines of the mean per-token surprisal (bits)."""
    scored = [line for line in lines_tokens if line]
    if not scored:
        raise EmptyLine("no tokens on any patch line")
    return max(sum(model.surprisal(t) for t in line) / len(line) for line in scored)


def repair_action(buggy_lines, patched_lines) -> RepairAction:
    buggy = any(ln.strip() for ln in buggy_lines)
    patched = any(ln.strip() for ln in patched_lines)
    if not buggy and not patched:
        raise BothEmpty("both sides of the patch are empty")
    if not buggy:
        return RepairAction.ADDITION
    if not patched:
        return RepairAction.DELETION
    return RepairAction.REPLACEMENT


_CONTROL_KEYWORDS = ("if", "while", "for", "switch")


def _control_counts(tokens: list[str]) -> Counter:
    return Counter(t for t in tokens if t in _CONTROL_KEYWORDS)


def _has_guard_return(tokens: list[str]) -> bool:
    """Token-level scan for `if ( ... ) return ... ;` possibly braced."""
    i = 0
    while i < len(tokens):
        if tokens[i] != "if":
            i += 1
            continue
        j = i + 1
        if j >= len(tokens) or tokens[j] != "(":
            i += 1
            continue
        depth = 0
        while j < len(tokens):
            if tokens[j] == "(":
                depth += 1
            elif tokens[j] == ")":
                depth -= 1
                if depth == 0:
                    break
            j += 1
        j += 1
        braced = j < len(tokens) and tokens[j] == "{"
        if braced:
            j += 1
        if j < len(tokens) and tokens[j] == "return":
            while j < len(tokens) and tokens[j] != ";":
                j += 1
            j += 1
            if not braced or (j < len(tokens) and tokens[j] == "}"):
                return True
        i += 1
    return False


def _returns_only_literal(lines) -> bool:
    """True when a `return ...;` exists whose expression has no identifiers."""
    toks = tokenize(" ".join(lines))
    i = 0
    found = False
    while i < len(toks):
        if toks[i].text == "return":
            j = i + 1
            has_ident = False
            has_any = False
            while j < len(toks) and toks[j].text != ";":
                has_any = True
                if toks[j].kind is TokenKind.IDENTIFIER:
                    has_ident = True
                j += 1
            if has_any and not has_ident:
                found = True
            i = j
        i += 1
    return found


def _returns_identifier(lines) -> bool:
    toks = tokenize(" ".join(lines))
    i = 0
    while i < len(toks):
        if toks[i].text == "return":
            j = i + 1
            while j < len(toks) and toks[j].text != ";":
                if toks[j].kind is TokenKind.IDENTIFIER:
                    return True
                j += 1
            i = j
        i += 1
    return False


def anti_pattern_flags(buggy_lines, patched_lines, apsg: Apsg | None = None) -> AntiPattern:
    """Forbidden-transformation checks over the two patch sides."""
    buggy_toks = _flat_tokens(buggy_lines)
    patched_toks = _flat_tokens(patched_lines)
    flags = AntiPattern(0)

    cb = _control_counts(buggy_toks)
    cp = _control_counts(patched_toks)
    if any(cb[k] > cp[k] for k in _CONTROL_KEYWORDS):
        flags |= AntiPattern.REMOVES_CONTROL_STATEMENT

    if buggy_toks and not patched_toks and not cb:
        flags |= AntiPattern.REMOVES_WHOLE_STATEMENT_ONLY

    if _returns_only_literal(patched_lines) and _returns_identifier(buggy_lines):
        flags |= AntiPattern.MUTATES_RETURN_TO_CONSTANT

    if _has_guard_return(patched_toks) and not _has_guard_return(buggy_toks):
        flags |= AntiPattern.INSERTS_TRIVIAL_GUARD_RETURN

    return flags


# --- per-node attributes ---


def distance_to_patch(apsg: Apsg) -> dict[int, int]:
    """Shortest undirected hop count to the nearest patch node; -1 when
    unreachable."""
    sources = [n.node_id for n in apsg.nodes if n.category is NodeCategory.PATCH]
    if not sources:
        raise NoPatchNode("graph has no patch nodes")
    adj: dict[int, set[int]] = {n.node_id: set() for n in apsg.nodes}
    for e in apsg.edges:
        adj[e.src].add(e.dst)
        adj[e.dst].add(e.src)
    dist = {n.node_id: -1 for n in apsg.nodes}
    queue = deque()
    for s in sources:
        dist[s] = 0
        queue.append(s)
    while queue:
        cur = queue.popleft()
        for nxt in adj[cur]:
            if dist[nxt] == -1:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    return dist


_ROLE_PRIORITY = [
    VariableRole.MATH_OPERATOR_LEFT,
    VariableRole.MATH_OPERATOR_RIGHT,
    VariableRole.RELATIONAL_LEFT,
    VariableRole.RELATIONAL_RIGHT,
    VariableRole.CALL_ARGUMENT,
    VariableRole.RETURN_VALUE,
    VariableRole.CONDITION_OPERAND,
    VariableRole.PLAIN,
]


def _collect_roles(expr, var: str, roles: set, in_call: bool = False):
    if isinstance(expr, Name):
        if expr.ident == var:
            roles.add(VariableRole.CALL_ARGUMENT if in_call else None)
    elif isinstance(expr, Unary):
        _collect_roles(expr.operand, var, roles, in_call)
    elif isinstance(expr, Binary):
        mathlike = expr.op in ARITH_OPS or expr.op in BITWISE_OPS
        relational = expr.op in RELATIONAL_OPS
        for side, child in (("l", expr.left), ("r", expr.right)):
            if isinstance(child, Name) and child.ident == var:
                if mathlike:
                    roles.add(VariableRole.MATH_OPERATOR_LEFT if side == "l"
                              else VariableRole.MATH_OPERATOR_RIGHT)
                elif relational:
                    roles.add(VariableRole.RELATIONAL_LEFT if side == "l"
                              else VariableRole.RELATIONAL_RIGHT)
                elif expr.op in LOGICAL_OPS:
                    roles.add(VariableRole.CONDITION_OPERAND)
            _collect_roles(child, var, roles, in_call)
    elif isinstance(expr, Call):
        for a in expr.args:
            _collect_roles(a, var, roles, in_call=True)


def variable_role(stmt: Statement, var: str, side: VarSide) -> VariableRole:
    """Role of one variable occurrence, by its position in the statement's
    expression tree; the most specific role wins when several apply."""
    if side is VarSide.LEFT:
        if stmt.lhs != var:
            raise VariableNotInStatement(f"{var!r} is not the target of {stmt.text!r}")
        return VariableRole.ASSIGN_TARGET
    roles: set = set()
    for e in stmt.exprs:
        _collect_roles(e, var, roles)
    roles.discard(None)
    if var not in stmt.uses:
        raise VariableNotInStatement(f"{var!r} does not occur in {stmt.text!r}")
    if not roles:
        if stmt.kind is StatementKind.RETURN:
            roles.add(VariableRole.RETURN_VALUE)
        elif stmt.kind in (StatementKind.IF, StatementKind.WHILE):
            roles.add(VariableRole.CONDITION_OPERAND)
    for role in _ROLE_PRIORITY:
        if role in roles:
            return role
    return VariableRole.PLAIN


# --- the A matrix ---


def encode(apsg: Apsg, entropy_model: EntropyModel, buggy_lines, patched_lines) -> np.ndarray:
    """Fill the per-node attribute matrix and attach rows to the nodes."""
    n = len(apsg.nodes)
    A = np.zeros((n, ATTR_WIDTH))

    edit = edit_distance(buggy_lines, patched_lines)
    patched_line_tokens = [line for line in _lex_lines(patched_lines) if line]
    entropy = (entropy_score(patched_line_tokens, entropy_model)
               if patched_line_tokens else 0.0)
    action = repair_action(buggy_lines, patched_lines)
    anti = anti_pattern_flags(buggy_lines, patched_lines, apsg)
    dist = distance_to_patch(apsg)
    types = apsg.method.declared_types()

    for node in apsg.nodes:
        row = A[node.node_id]
        stmt = (apsg.method.statements[node.statement_index]
                if node.statement_index is not None else None)
        if node.category is NodeCategory.PATCH:
            row[_SLOT_EDIT] = edit
            row[_SLOT_ENTROPY] = entropy
            row[_SLOT_REPAIR + action.value] = 1.0
            for bit in range(4):
                if anti & (1 << bit):
                    row[_SLOT_ANTI + bit] = 1.0
        elif node.category is NodeCategory.CONTEXT:
            d = dist[node.node_id]
            if d < 0:
                row[_SLOT_DIST + DIST_MAX + 1] = 1.0
            else:
                row[_SLOT_DIST + min(d, DIST_MAX)] = 1.0
            slot = _special_statement_slot(stmt)
            if slot is not None:
                row[_SLOT_STMT_TYPE + slot] = 1.0
            for cls in set(stmt.operators):
                row[_SLOT_OPS + _OPCLASS_SLOTS[cls]] = 1.0
        elif node.category is NodeCategory.CONTROL:
            slot = _CONTROL_SLOTS.get(stmt.kind)
            if slot is not None:
                row[_SLOT_CONTROL + slot] = 1.0
            if stmt.nesting_parent is not None:
                row[_SLOT_NESTED] = 1.0
        else:  # variable node
            name, side = node.variable
            ty = types.get(name, "")
            row[_SLOT_VARTYPE + _VARTYPE_SLOTS.get(ty, 5)] = 1.0
            role = variable_role(stmt, name, side)
            row[_SLOT_ROLE + role.value] = 1.0

    apsg.A = A
    for node in apsg.nodes:
        node.attributes = A[node.node_id]
    return A


def _special_statement_slot(stmt: Statement) -> int | None:
    if stmt.kind is StatementKind.ASSIGNMENT:
        return 0
    if stmt.kind is StatementKind.DECLARATION and stmt.has_initializer:
        return 0
    if stmt.kind is StatementKind.TRY_CATCH:
        return 1
    if stmt.kind is StatementKind.INVOCATION:
        return 2
    if stmt.kind is StatementKind.RETURN:
        return 3
    return None
